use serde::{Deserialize, Serialize};

use super::{
    check_dim, parse_parameters, Classifier, ClassifierSpec, Model, ModelDocument, Params,
    RankedPrediction, TrainingSet,
};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
}

impl Default for Knn {
    fn default() -> Self {
        Knn { k: DEFAULT_K }
    }
}

impl Knn {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<Self> {
        let p = Params::new(spec, &["k"])?;
        let k = p.get("k", DEFAULT_K)?;
        if k == 0 {
            return Err(Error::Config("knn: k must be >= 1".into()));
        }
        Ok(Knn { k })
    }

    pub fn train(&self, ts: &TrainingSet) -> Result<KnnModel> {
        if self.k == 0 || self.k > ts.len() {
            return Err(Error::Contract(format!(
                "knn needs 1 <= K <= n, got K = {} with n = {}",
                self.k,
                ts.len()
            )));
        }
        Ok(KnnModel {
            dim: ts.dim(),
            class_index: ts.class_index().to_vec(),
            k: self.k,
            rows: ts.rows().to_vec(),
            targets: ts.targets().to_vec(),
        })
    }
}

impl Classifier for Knn {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(&self, ts: &TrainingSet) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.train(ts)?))
    }
}

/// Stored training data; prediction is an exhaustive Euclidean scan.
///
/// Classes are ranked by vote count among the K nearest rows, then by the
/// distance of their nearest row (for voted and unvoted classes alike), then
/// by label. Distance ties at the K-th neighbour go to the earlier row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    #[serde(skip)]
    pub dim: usize,
    #[serde(skip)]
    pub class_index: Vec<String>,
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut m: KnnModel = parse_parameters(doc, "knn")?;
        m.dim = doc.dim;
        m.class_index = doc.class_index.clone();
        let c = m.class_index.len();
        if m.rows.len() != m.targets.len()
            || m.k == 0
            || m.k > m.rows.len()
            || m.rows.iter().any(|r| r.len() != m.dim)
            || m.targets.iter().any(|&t| t >= c)
        {
            return Err(Error::Contract("knn parameters do not match header".into()));
        }
        Ok(m)
    }
}

impl Model for KnnModel {
    fn kind(&self) -> &'static str {
        "knn"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn class_index(&self) -> &[String] {
        &self.class_index
    }

    fn predict_ranked(&self, x: &[f64]) -> Result<RankedPrediction> {
        check_dim(self.dim, x)?;
        let c = self.class_index.len();
        let dist: Vec<f64> = self.rows.iter().map(|r| squared_distance(r, x)).collect();

        let mut order: Vec<usize> = (0..dist.len()).collect();
        let by_distance = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
        if self.k < order.len() {
            order.select_nth_unstable_by(self.k - 1, by_distance);
        }
        let mut votes = vec![0usize; c];
        for &i in &order[..self.k] {
            votes[self.targets[i]] += 1;
        }

        let mut nearest = vec![f64::INFINITY; c];
        for (d, &t) in dist.iter().zip(&self.targets) {
            if *d < nearest[t] {
                nearest[t] = *d;
            }
        }

        let mut classes: Vec<usize> = (0..c).collect();
        classes.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(nearest[a].total_cmp(&nearest[b]))
                .then_with(|| self.class_index[a].cmp(&self.class_index[b]))
        });
        let k = self.k as f64;
        Ok(RankedPrediction {
            entries: classes
                .into_iter()
                .map(|i| (self.class_index[i].clone(), votes[i] as f64 / k))
                .collect(),
        })
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}
