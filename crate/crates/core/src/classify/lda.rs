use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    check_dim, parse_parameters, rank_by_key, softmax_in_place, Classifier, ClassifierSpec, Model,
    ModelDocument, Params, RankedPrediction, TrainingSet,
};
use crate::error::{Error, Result};

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

/// Relative floor for the identity target when the pooled scatter vanishes.
const DEGENERATE_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priors {
    #[default]
    Empirical,
    Uniform,
}

impl std::str::FromStr for Priors {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "empirical" => Ok(Priors::Empirical),
            "uniform" => Ok(Priors::Uniform),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub shrinkage: f64,
    pub priors: Priors,
}

impl Default for Lda {
    fn default() -> Self {
        Lda {
            shrinkage: DEFAULT_SHRINKAGE,
            priors: Priors::Empirical,
        }
    }
}

impl Lda {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<Self> {
        let p = Params::new(spec, &["shrinkage", "priors"])?;
        let lda = Lda {
            shrinkage: p.get("shrinkage", DEFAULT_SHRINKAGE)?,
            priors: p.get("priors", Priors::Empirical)?,
        };
        if !(0.0..=1.0).contains(&lda.shrinkage) {
            return Err(Error::Config("lda: shrinkage must be in [0, 1]".into()));
        }
        Ok(lda)
    }

    pub fn train(&self, ts: &TrainingSet) -> Result<LdaModel> {
        let (n, c, d) = (ts.len(), ts.n_classes(), ts.dim());
        if n < c + 1 {
            return Err(Error::Contract(format!(
                "lda needs at least C + 1 = {} samples, got {n}",
                c + 1
            )));
        }
        let mut sums = vec![DVector::<f64>::zeros(d); c];
        let mut counts = vec![0usize; c];
        for (x, &y) in ts.rows().iter().zip(ts.targets()) {
            sums[y] += DVector::from_column_slice(x);
            counts[y] += 1;
        }
        let means: Vec<DVector<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &k)| s / k as f64)
            .collect();

        let mut scatter = DMatrix::<f64>::zeros(d, d);
        for (x, &y) in ts.rows().iter().zip(ts.targets()) {
            let r = DVector::from_column_slice(x) - &means[y];
            scatter.ger(1.0, &r, &r, 1.0);
        }
        let pooled = scatter / (n - c) as f64;

        let mut target = pooled.trace() / d as f64;
        if target <= 0.0 && self.shrinkage > 0.0 {
            let mean_sq = ts.rows().iter().flatten().map(|v| v * v).sum::<f64>() / (n * d) as f64;
            target = DEGENERATE_SCALE * (1.0 + mean_sq);
        }
        let lambda = self.shrinkage;
        let cov = pooled * (1.0 - lambda) + DMatrix::identity(d, d) * (lambda * target);

        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::Numeric(format!(
                "pooled covariance is singular with shrinkage {lambda}; use shrinkage > 0"
            ))
        })?;

        let priors: Vec<f64> = match self.priors {
            Priors::Empirical => counts.iter().map(|&k| k as f64 / n as f64).collect(),
            Priors::Uniform => vec![1.0 / c as f64; c],
        };
        let mut weights = Vec::with_capacity(c);
        let mut biases = Vec::with_capacity(c);
        for (mu, pi) in means.iter().zip(&priors) {
            let w = chol.solve(mu);
            biases.push(-0.5 * mu.dot(&w) + pi.ln());
            weights.push(w.as_slice().to_vec());
        }
        if weights
            .iter()
            .flatten()
            .chain(&biases)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric(
                "lda produced non-finite discriminants".into(),
            ));
        }

        Ok(LdaModel {
            dim: d,
            class_index: ts.class_index().to_vec(),
            means: means.iter().map(|m| m.as_slice().to_vec()).collect(),
            covariance: (0..d)
                .map(|i| cov.row(i).iter().copied().collect())
                .collect(),
            priors,
            shrinkage: lambda,
            weights,
            biases,
        })
    }
}

impl Classifier for Lda {
    fn name(&self) -> &'static str {
        "lda"
    }

    fn fit(&self, ts: &TrainingSet) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.train(ts)?))
    }
}

/// Discriminants `f_k(x) = w_k·x + w_k0` with `w_k = Σ⁻¹μ_k` and
/// `w_k0 = -½ μ_kᵀΣ⁻¹μ_k + ln π_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    #[serde(skip)]
    pub dim: usize,
    #[serde(skip)]
    pub class_index: Vec<String>,
    pub means: Vec<Vec<f64>>,
    /// Shrunk pooled covariance, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    pub shrinkage: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LdaModel {
    pub fn discriminants(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect())
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut m: LdaModel = parse_parameters(doc, "lda")?;
        m.dim = doc.dim;
        m.class_index = doc.class_index.clone();
        let c = m.class_index.len();
        if m.weights.len() != c || m.biases.len() != c || m.weights.iter().any(|w| w.len() != m.dim)
        {
            return Err(Error::Contract("lda parameters do not match header".into()));
        }
        Ok(m)
    }
}

impl Model for LdaModel {
    fn kind(&self) -> &'static str {
        "lda"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn class_index(&self) -> &[String] {
        &self.class_index
    }

    fn predict_ranked(&self, x: &[f64]) -> Result<RankedPrediction> {
        let f = self.discriminants(x)?;
        let mut p = f.clone();
        softmax_in_place(&mut p);
        Ok(rank_by_key(&self.class_index, &f, &p))
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(rows: &[(f64, &str)]) -> TrainingSet {
        TrainingSet::new(
            rows.iter().map(|r| vec![r.0]).collect(),
            rows.iter().map(|r| r.1.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn symmetric_classes_split_at_zero() {
        let t = ts(&[(-1.5, "a"), (-0.5, "a"), (0.5, "b"), (1.5, "b")]);
        let m = Lda::default().train(&t).unwrap();
        assert_eq!(m.predict_ranked(&[-0.01]).unwrap().top(), "a");
        assert_eq!(m.predict_ranked(&[0.01]).unwrap().top(), "b");
        let f = m.discriminants(&[0.0]).unwrap();
        assert!((f[0] - f[1]).abs() < 1e-12);
    }

    #[test]
    fn duplicated_training_set_predicts_the_same() {
        let rows = [
            (-2.0, "a"),
            (-1.1, "a"),
            (0.2, "b"),
            (1.4, "b"),
            (3.0, "c"),
            (2.2, "c"),
        ];
        let m1 = Lda::default().train(&ts(&rows)).unwrap();
        let doubled: Vec<_> = rows.iter().chain(rows.iter()).copied().collect();
        let m2 = Lda::default().train(&ts(&doubled)).unwrap();
        for i in -40..=40 {
            let x = [i as f64 * 0.1];
            assert_eq!(
                m1.predict_ranked(&x).unwrap().top(),
                m2.predict_ranked(&x).unwrap().top()
            );
        }
    }

    #[test]
    fn singular_without_shrinkage_is_a_numeric_error() {
        // second feature is constant, so the scatter is rank one
        let t = TrainingSet::new(
            vec![
                vec![0.0, 1.0],
                vec![1.0, 1.0],
                vec![2.0, 1.0],
                vec![3.0, 1.0],
            ],
            vec!["a".into(), "a".into(), "b".into(), "b".into()],
        )
        .unwrap();
        let lda = Lda {
            shrinkage: 0.0,
            ..Lda::default()
        };
        let err = lda.train(&t).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("shrinkage > 0"));
        Lda::default().train(&t).unwrap();
    }

    #[test]
    fn zero_within_class_scatter_still_fits() {
        let t = ts(&[(0.0, "a"), (0.0, "a"), (1.0, "b"), (1.0, "b")]);
        let m = Lda::default().train(&t).unwrap();
        assert_eq!(m.predict_ranked(&[0.1]).unwrap().top(), "a");
    }

    #[test]
    fn needs_more_samples_than_classes() {
        let t = ts(&[(0.0, "a"), (1.0, "b")]);
        assert!(matches!(Lda::default().train(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn priors_sum_to_one_and_uniform_switch() {
        let t = ts(&[(0.0, "a"), (0.1, "a"), (0.2, "a"), (1.0, "b"), (1.2, "b")]);
        let m = Lda::default().train(&t).unwrap();
        assert!((m.priors.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(m.priors, vec![0.6, 0.4]);
        let u = Lda::from_spec(&"lda:priors=uniform".parse().unwrap()).unwrap();
        assert_eq!(u.train(&t).unwrap().priors, vec![0.5, 0.5]);
    }
}
