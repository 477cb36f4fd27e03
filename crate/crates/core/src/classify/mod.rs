//! Classifiers that rank every known PIN label for a query vector.
//!
//! Each algorithm implements [`Classifier`] (fitting) and produces a boxed
//! [`Model`] (ranking, persistence). Algorithms are registered by name in a
//! [`Registry`]; [`Registry::builtin`] knows `softmax`, `lda` and `knn`.

mod knn;
mod lda;
mod softmax;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use knn::{Knn, KnnModel, DEFAULT_K};
pub use lda::{Lda, LdaModel, Priors, DEFAULT_SHRINKAGE};
pub use softmax::{Softmax, SoftmaxModel, SoftmaxObjective, TrainingDiagnostics};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Feature rows with their labels. Classes are the sorted distinct labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
    class_index: Vec<String>,
    targets: Vec<usize>,
}

impl TrainingSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::Contract("feature vectors are empty".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Contract(format!(
                    "row {i} has {} features, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("row {i} has non-finite features")));
            }
        }
        let mut class_index = labels.clone();
        class_index.sort();
        class_index.dedup();
        let targets = labels
            .iter()
            .map(|l| class_index.binary_search(l).expect("label is in index"))
            .collect();
        Ok(TrainingSet {
            rows,
            labels,
            class_index,
            targets,
        })
    }

    pub fn from_features(features: &[FeatureVector]) -> Result<Self> {
        Self::new(
            features.iter().map(|f| f.values.clone()).collect(),
            features.iter().map(|f| f.label.to_string()).collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_index(&self) -> &[String] {
        &self.class_index
    }

    /// Class id of every row.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }
}

/// Every class label with its score, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub entries: Vec<(String, f64)>,
}

impl RankedPrediction {
    /// 1-based rank of `label`, if the model knows it.
    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(l, _)| l == label)
            .map(|p| p + 1)
    }

    pub fn top(&self) -> &str {
        &self.entries[0].0
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }
}

/// Orders classes by `key` (descending, exact) and attaches `scores`.
/// Equal keys fall back to label order.
pub(crate) fn rank_by_key(class_index: &[String], key: &[f64], scores: &[f64]) -> RankedPrediction {
    let mut order: Vec<usize> = (0..class_index.len()).collect();
    order.sort_by(|&a, &b| {
        key[b]
            .total_cmp(&key[a])
            .then_with(|| class_index[a].cmp(&class_index[b]))
    });
    RankedPrediction {
        entries: order
            .into_iter()
            .map(|k| (class_index[k].clone(), scores[k]))
            .collect(),
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Contract(format!(
            "query has {} features, model was trained on {expected}",
            x.len()
        )));
    }
    Ok(())
}

/// A fitted classifier.
pub trait Model: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn class_index(&self) -> &[String];

    /// All classes ranked for `x`, best first.
    fn predict_ranked(&self, x: &[f64]) -> Result<RankedPrediction>;

    /// Model-specific parameters for persistence.
    fn parameters(&self) -> serde_json::Value;
}

/// A configured training algorithm.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(&self, ts: &TrainingSet) -> Result<Box<dyn Model>>;
}

/// Self-describing saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: String,
    pub dim: usize,
    pub class_index: Vec<String>,
    pub parameters: serde_json::Value,
}

impl ModelDocument {
    pub fn of(model: &dyn Model) -> Self {
        ModelDocument {
            kind: model.kind().to_string(),
            dim: model.dim(),
            class_index: model.class_index().to_vec(),
            parameters: model.parameters(),
        }
    }
}

/// Name plus string parameters, written `name` or `name:key=value,key=value`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl ClassifierSpec {
    pub fn named(name: &str) -> Self {
        ClassifierSpec {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

impl FromStr for ClassifierSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = ClassifierSpec::named(name.trim());
        for kv in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{kv}'")))?;
            spec.params
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        if spec.name.is_empty() {
            return Err(Error::Config("empty classifier name".into()));
        }
        Ok(spec)
    }
}

/// Typed access to spec parameters; unknown keys are rejected.
pub struct Params<'a> {
    spec: &'a ClassifierSpec,
}

impl<'a> Params<'a> {
    pub fn new(spec: &'a ClassifierSpec, allowed: &[&str]) -> Result<Self> {
        if let Some(k) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "{}: unknown parameter '{k}' (allowed: {})",
                spec.name,
                allowed.join(", ")
            )));
        }
        Ok(Params { spec })
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.spec.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("{}: cannot parse {key}='{v}'", self.spec.name))
            }),
        }
    }
}

type BuildFn = fn(&ClassifierSpec) -> Result<Box<dyn Classifier>>;
type LoadFn = fn(&ModelDocument) -> Result<Box<dyn Model>>;

pub struct ClassifierEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub build: BuildFn,
    pub load: LoadFn,
}

/// Name → algorithm table.
pub struct Registry {
    entries: Vec<ClassifierEntry>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            entries: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.register(ClassifierEntry {
            name: "softmax",
            summary: "multinomial logistic regression, L2-penalised, full-batch gradient ascent",
            build: |s| Ok(Box::new(Softmax::from_spec(s)?)),
            load: |d| Ok(Box::new(SoftmaxModel::from_document(d)?)),
        });
        r.register(ClassifierEntry {
            name: "lda",
            summary: "linear discriminant analysis with shrunk pooled covariance",
            build: |s| Ok(Box::new(Lda::from_spec(s)?)),
            load: |d| Ok(Box::new(LdaModel::from_document(d)?)),
        });
        r.register(ClassifierEntry {
            name: "knn",
            summary: "k-nearest neighbours, Euclidean, exhaustive search",
            build: |s| Ok(Box::new(Knn::from_spec(s)?)),
            load: |d| Ok(Box::new(KnnModel::from_document(d)?)),
        });
        r
    }

    /// Adds an entry, replacing any entry with the same name.
    pub fn register(&mut self, entry: ClassifierEntry) {
        self.entries.retain(|e| e.name != entry.name);
        self.entries.push(entry);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn entries(&self) -> &[ClassifierEntry] {
        &self.entries
    }

    fn entry(&self, name: &str) -> Result<&ClassifierEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Unknown {
                kind: "classifier",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn build(&self, spec: &ClassifierSpec) -> Result<Box<dyn Classifier>> {
        (self.entry(&spec.name)?.build)(spec)
    }

    pub fn load(&self, doc: &ModelDocument) -> Result<Box<dyn Model>> {
        let model = (self.entry(&doc.kind)?.load)(doc)?;
        if model.dim() != doc.dim || model.class_index() != doc.class_index.as_slice() {
            return Err(Error::Contract(format!(
                "{} document header disagrees with its parameters",
                doc.kind
            )));
        }
        Ok(model)
    }

    pub fn load_json(&self, text: &str) -> Result<Box<dyn Model>> {
        self.load(&serde_json::from_str(text)?)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

pub fn save_json(model: &dyn Model) -> String {
    serde_json::to_string_pretty(&ModelDocument::of(model)).expect("model documents serialize")
}

pub(crate) fn parse_parameters<T: serde::de::DeserializeOwned>(
    doc: &ModelDocument,
    kind: &str,
) -> Result<T> {
    if doc.kind != kind {
        return Err(Error::Contract(format!(
            "expected a {kind} model, got {}",
            doc.kind
        )));
    }
    Ok(serde_json::from_value(doc.parameters.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing_round_trips() {
        let s: ClassifierSpec = "knn:k=3".parse().unwrap();
        assert_eq!(s.name, "knn");
        assert_eq!(s.params["k"], "3");
        assert_eq!(s.to_string(), "knn:k=3");
        let s: ClassifierSpec = "lda".parse().unwrap();
        assert!(s.params.is_empty());
        assert!("lda:shrinkage".parse::<ClassifierSpec>().is_err());
    }

    #[test]
    fn registry_resolves_builtin_names() {
        let r = Registry::builtin();
        assert_eq!(r.names(), vec!["softmax", "lda", "knn"]);
        for n in r.names() {
            assert_eq!(r.build(&ClassifierSpec::named(n)).unwrap().name(), n);
        }
        assert!(matches!(
            r.build(&ClassifierSpec::named("svm")),
            Err(Error::Unknown { .. })
        ));
        assert!(r.build(&"knn:kk=3".parse().unwrap()).is_err());
        assert!(r.build(&"knn:k=zero".parse().unwrap()).is_err());
    }

    #[test]
    fn training_set_validates_shape() {
        assert!(TrainingSet::new(vec![], vec![]).is_err());
        assert!(TrainingSet::new(
            vec![vec![1.0], vec![1.0, 2.0]],
            vec!["a".into(), "b".into()]
        )
        .is_err());
        assert!(TrainingSet::new(vec![vec![f64::NAN]], vec!["a".into()]).is_err());
        let ts = TrainingSet::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["b".into(), "a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(ts.class_index(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ts.targets(), &[1, 0, 1]);
    }

    #[test]
    fn ranking_ties_fall_back_to_label_order() {
        let idx = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        let r = rank_by_key(&idx, &[1.0, 1.0, 2.0], &[0.25, 0.25, 0.5]);
        let labels: Vec<&str> = r.labels().collect();
        assert_eq!(labels, vec!["c", "a", "b"]);
        assert_eq!(r.rank_of("b"), Some(3));
        assert_eq!(r.rank_of("z"), None);
    }
}
