//! Stratified k-fold cross-validation and top-N guess curves.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierSpec, Registry, TrainingSet};
use crate::error::{Error, Result};
use crate::features::{featurize_all, FeatureVector, Normalization, Scheme};
use crate::synth::decimate;
use crate::trace::{extract_windows, Nanos, Session};

pub const DEFAULT_FOLDS: usize = 10;

/// Fold id per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each label's samples with `seed`, then deals them round-robin
/// into `k` folds. The dealing position carries over from one label to the
/// next (labels in sorted order), so fold sizes differ by at most one.
pub fn make_folds<S: AsRef<str>>(labels: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!(
            "{k} folds requested for {} samples",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_ref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignment,
        seed,
    })
}

/// Fraction of test samples whose true label is within the top N guesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessCurve {
    /// Entry `N - 1` is the top-N accuracy.
    pub accuracy_at_n: Vec<f64>,
    pub baseline_at_n: Vec<f64>,
}

/// Random-guessing success probability with `n` guesses among `classes`.
pub fn baseline(n: usize, classes: usize) -> f64 {
    (n as f64 / classes as f64).min(1.0)
}

impl GuessCurve {
    /// Builds the curve from 1-based ranks of the true label.
    pub fn from_ranks(ranks: &[usize], classes: usize) -> Self {
        let mut hits = vec![0usize; classes + 1];
        for &r in ranks {
            hits[r.clamp(1, classes)] += 1;
        }
        let total = ranks.len() as f64;
        let mut cum = 0;
        let mut accuracy_at_n = Vec::with_capacity(classes);
        for h in &hits[1..] {
            cum += h;
            accuracy_at_n.push(cum as f64 / total);
        }
        GuessCurve {
            accuracy_at_n,
            baseline_at_n: (1..=classes).map(|n| baseline(n, classes)).collect(),
        }
    }

    pub fn top(&self, n: usize) -> f64 {
        self.accuracy_at_n[n.clamp(1, self.accuracy_at_n.len()) - 1]
    }

    pub fn classes(&self) -> usize {
        self.accuracy_at_n.len()
    }
}

/// What was evaluated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportConfig {
    pub classifier: String,
    pub scheme: String,
    pub normalization: String,
    pub rate_hz: Option<f64>,
    pub input_method: Option<String>,
    pub device: Option<String>,
    pub environment: Option<String>,
    pub samples: usize,
    pub classes: usize,
    pub folds: usize,
    pub fold_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub curve: GuessCurve,
    /// 1-based rank of the true label per sample, in input order.
    pub ranks: Vec<usize>,
    /// Test samples whose label was absent from the fold's training data;
    /// each is scored at rank C.
    pub uncovered: Vec<usize>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl PartialEq for EvalReport {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.fold_accuracies == other.fold_accuracies
            && self.mean_accuracy == other.mean_accuracy
            && self.curve == other.curve
            && self.ranks == other.ranks
            && self.uncovered == other.uncovered
    }
}

impl EvalReport {
    pub fn top(&self, n: usize) -> f64 {
        self.curve.top(n)
    }
}

/// Feature vectors plus the recording context they came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub rate_hz: Option<f64>,
    pub input_method: Option<String>,
    pub device: Option<String>,
    pub environment: Option<String>,
    /// PIN entries dropped because their window held no samples.
    pub skipped_windows: usize,
}

impl Dataset {
    pub fn from_features(features: Vec<FeatureVector>) -> Self {
        Dataset {
            features,
            ..Default::default()
        }
    }

    pub fn from_session(
        session: &Session,
        scheme: Scheme,
        normalization: Normalization,
        margin: Nanos,
    ) -> Result<Self> {
        let set = extract_windows(session, margin)?;
        let m = session.meta();
        Ok(Dataset {
            features: featurize_all(&set.windows, scheme, normalization)?,
            rate_hz: Some(m.rate_hz),
            input_method: Some(m.input_method.clone()),
            device: Some(m.device.clone()),
            environment: Some(m.environment.clone()),
            skipped_windows: set.skipped.len(),
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.features.iter().map(|f| f.label.to_string()).collect()
    }
}

fn check_consistent(features: &[FeatureVector]) -> Result<()> {
    let first = features
        .first()
        .ok_or_else(|| Error::Contract("no feature vectors to evaluate".into()))?;
    for (i, f) in features.iter().enumerate() {
        if f.scheme != first.scheme
            || f.normalization != first.normalization
            || f.values.len() != first.values.len()
        {
            return Err(Error::Contract(format!(
                "feature {i} ({} / {} / {} values) differs from feature 0 ({} / {} / {})",
                f.scheme,
                f.normalization,
                f.values.len(),
                first.scheme,
                first.normalization,
                first.values.len()
            )));
        }
    }
    Ok(())
}

/// Trains on k-1 folds and ranks the held-out fold, for every fold.
pub fn cross_validate(
    dataset: &Dataset,
    spec: &ClassifierSpec,
    registry: &Registry,
    plan: &FoldPlan,
) -> Result<EvalReport> {
    let started = Instant::now();
    let features = &dataset.features;
    check_consistent(features)?;
    if plan.assignment.len() != features.len() {
        return Err(Error::Contract(format!(
            "fold plan covers {} samples, dataset has {}",
            plan.assignment.len(),
            features.len()
        )));
    }
    let classifier = registry.build(spec)?;
    let mut all_labels: Vec<&str> = features.iter().map(|f| f.label.as_str()).collect();
    all_labels.sort_unstable();
    all_labels.dedup();
    let classes = all_labels.len();

    let per_fold: Vec<Result<Vec<(usize, usize, bool)>>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..features.len()).partition(|&i| plan.assignment[i] == fold);
            let train_fv: Vec<FeatureVector> = train.iter().map(|&i| features[i].clone()).collect();
            let ts = TrainingSet::from_features(&train_fv)?;
            let model = classifier.fit(&ts)?;
            test.into_iter()
                .map(|i| {
                    let f = &features[i];
                    let ranked = model.predict_ranked(&f.values)?;
                    Ok(match ranked.rank_of(f.label.as_str()) {
                        Some(r) => (i, r, false),
                        None => (i, classes, true),
                    })
                })
                .collect()
        })
        .collect();

    let mut ranks = vec![0; features.len()];
    let mut uncovered = Vec::new();
    let mut fold_accuracies = Vec::with_capacity(plan.k);
    for fold in per_fold {
        let fold = fold?;
        let hits = fold.iter().filter(|(_, r, _)| *r == 1).count();
        fold_accuracies.push(hits as f64 / fold.len() as f64);
        for (i, r, missing) in fold {
            ranks[i] = r;
            if missing {
                uncovered.push(i);
            }
        }
    }
    uncovered.sort_unstable();
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    let first = &features[0];
    Ok(EvalReport {
        config: ReportConfig {
            classifier: spec.to_string(),
            scheme: first.scheme.to_string(),
            normalization: first.normalization.to_string(),
            rate_hz: dataset.rate_hz,
            input_method: dataset.input_method.clone(),
            device: dataset.device.clone(),
            environment: dataset.environment.clone(),
            samples: features.len(),
            classes,
            folds: plan.k,
            fold_seed: plan.seed,
        },
        fold_accuracies,
        mean_accuracy,
        curve: GuessCurve::from_ranks(&ranks, classes),
        ranks,
        uncovered,
        runtime: started.elapsed(),
    })
}

/// Builds the stratified plan for a dataset and cross-validates it.
pub fn evaluate(
    dataset: &Dataset,
    spec: &ClassifierSpec,
    registry: &Registry,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    let plan = make_folds(&dataset.labels(), k, seed)?;
    cross_validate(dataset, spec, registry, &plan)
}

pub struct GridCell<'a> {
    pub classifier: ClassifierSpec,
    pub dataset: &'a Dataset,
}

/// One report per cell, all cells sharing the fold seed. A failing cell
/// yields its error without stopping the others.
pub fn compare(
    grid: &[GridCell<'_>],
    registry: &Registry,
    k: usize,
    seed: u64,
) -> Vec<Result<EvalReport>> {
    grid.par_iter()
        .map(|cell| evaluate(cell.dataset, &cell.classifier, registry, k, seed))
        .collect()
}

/// Decimates the session to each rate, re-extracts features and evaluates
/// with a shared fold seed.
#[allow(clippy::too_many_arguments)]
pub fn sampling_sweep(
    session: &Session,
    rates: &[f64],
    spec: &ClassifierSpec,
    scheme: Scheme,
    normalization: Normalization,
    margin: Nanos,
    registry: &Registry,
    k: usize,
    seed: u64,
) -> Vec<Result<EvalReport>> {
    rates
        .par_iter()
        .map(|&rate| {
            let s = decimate(session, rate)?;
            let ds = Dataset::from_session(&s, scheme, normalization, margin)?;
            evaluate(&ds, spec, registry, k, seed)
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str =
    "classifier,scheme,normalization,rate_hz,input_method,n_guesses,accuracy,baseline";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per (report, N) for N = 1..=min(max_guesses, C).
pub fn write_report_csv<W: Write>(
    reports: &[&EvalReport],
    max_guesses: usize,
    mut out: W,
) -> Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        let c = &r.config;
        let rate = c.rate_hz.map(|v| v.to_string()).unwrap_or_default();
        let im = c.input_method.clone().unwrap_or_default();
        for (i, (acc, base)) in r
            .curve
            .accuracy_at_n
            .iter()
            .zip(&r.curve.baseline_at_n)
            .take(max_guesses)
            .enumerate()
        {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&c.classifier),
                c.scheme,
                c.normalization,
                rate,
                csv_field(&im),
                i + 1,
                acc,
                base
            )?;
        }
    }
    Ok(())
}

/// Compact per-report summary: mean accuracy and the top-N table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config: ReportConfig,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub top_n: Vec<TopN>,
    pub uncovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopN {
    pub n: usize,
    pub accuracy: f64,
    pub baseline: f64,
}

impl ReportSummary {
    pub fn of(report: &EvalReport, guesses: usize) -> Self {
        let shown = guesses.clamp(1, report.curve.classes());
        ReportSummary {
            config: report.config.clone(),
            fold_accuracies: report.fold_accuracies.clone(),
            mean_accuracy: report.mean_accuracy,
            top_n: (1..=shown)
                .map(|n| TopN {
                    n,
                    accuracy: report.curve.accuracy_at_n[n - 1],
                    baseline: report.curve.baseline_at_n[n - 1],
                })
                .collect(),
            uncovered: report.uncovered.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Pin;

    fn labels(classes: usize, reps: usize) -> Vec<String> {
        (0..reps)
            .flat_map(|_| (0..classes).map(|c| format!("{c:04}")))
            .collect()
    }

    #[test]
    fn fifteen_by_ten_gives_one_of_each_per_fold() {
        let l = labels(15, 10);
        let plan = make_folds(&l, 10, 4).unwrap();
        for fold in 0..10 {
            let mut in_fold: Vec<&String> = (0..l.len())
                .filter(|&i| plan.assignment[i] == fold)
                .map(|i| &l[i])
                .collect();
            in_fold.sort();
            in_fold.dedup();
            assert_eq!(in_fold.len(), 15);
        }
        assert_eq!(plan.fold_sizes(), vec![15; 10]);
    }

    #[test]
    fn fifty_by_three_keeps_every_label_in_training() {
        let l = labels(50, 3);
        let plan = make_folds(&l, 10, 11).unwrap();
        assert_eq!(plan.fold_sizes(), vec![15; 10]);
        for fold in 0..10 {
            let mut train: Vec<&String> = (0..l.len())
                .filter(|&i| plan.assignment[i] != fold)
                .map(|i| &l[i])
                .collect();
            train.sort();
            train.dedup();
            assert_eq!(train.len(), 50, "fold {fold}");
        }
        // somewhere a fold lacks some label
        let fold0: std::collections::BTreeSet<&String> = (0..l.len())
            .filter(|&i| plan.assignment[i] == 0)
            .map(|i| &l[i])
            .collect();
        assert!(fold0.len() < 50);
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let l: Vec<String> = (0..97).map(|i| format!("{:04}", (i * 7) % 13)).collect();
        let a = make_folds(&l, 10, 5).unwrap();
        let b = make_folds(&l, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_folds(&l, 10, 6).unwrap());
        let sizes = a.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut per_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, lab) in l.iter().enumerate() {
            per_label.entry(lab).or_insert_with(|| vec![0; 10])[a.assignment[i]] += 1;
        }
        for counts in per_label.values() {
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn fold_count_errors() {
        let l = labels(2, 2);
        assert!(matches!(make_folds(&l, 5, 0), Err(Error::Config(_))));
        assert!(matches!(make_folds(&l, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_is_n_over_c() {
        assert_eq!(baseline(10, 50), 0.2);
        assert_eq!(baseline(1, 15), 1.0 / 15.0);
        assert_eq!(baseline(80, 50), 1.0);
    }

    #[test]
    fn curve_accounting() {
        let ranks = [1, 3, 3, 5, 2, 1, 5];
        let c = GuessCurve::from_ranks(&ranks, 5);
        assert_eq!(c.accuracy_at_n.len(), 5);
        assert_eq!(c.top(1), 2.0 / 7.0);
        assert_eq!(c.top(5), 1.0);
        assert!(c.accuracy_at_n.windows(2).all(|w| w[0] <= w[1]));
        let mut newly = 0.0;
        let mut prev = 0.0;
        for a in &c.accuracy_at_n {
            newly += (a - prev) * 7.0;
            prev = *a;
        }
        assert!((newly - 7.0f64).abs() < 1e-12);
    }

    fn fv(label: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            label: Pin::new(label).unwrap(),
            scheme: Scheme::L,
            normalization: Normalization::None,
        }
    }

    #[test]
    fn cross_validation_of_separated_clusters_is_perfect() {
        let mut feats = Vec::new();
        for c in 0..6 {
            for r in 0..5 {
                let a = c as f64 * std::f64::consts::TAU / 6.0;
                let j = r as f64 * 0.05;
                feats.push(fv(
                    &format!("{c:04}"),
                    vec![5.0 * a.cos() + j, 5.0 * a.sin() - j, j * j, 1.0 - j],
                ));
            }
        }
        let ds = Dataset::from_features(feats);
        let reg = Registry::builtin();
        for name in ["lda", "knn:k=3", "softmax"] {
            let rep = evaluate(&ds, &name.parse().unwrap(), &reg, 5, 1).unwrap();
            assert_eq!(rep.mean_accuracy, 1.0, "{name}");
            let mean = rep.fold_accuracies.iter().sum::<f64>() / rep.fold_accuracies.len() as f64;
            assert!((rep.mean_accuracy - mean).abs() <= 1e-12);
            assert_eq!(rep.curve.top(6), 1.0);
            assert!(rep.uncovered.is_empty());
        }
    }

    #[test]
    fn label_missing_from_training_counts_as_rank_c() {
        let mut feats: Vec<FeatureVector> = (0..9)
            .map(|i| {
                fv(
                    &format!("{:04}", i % 3),
                    vec![(i % 3) as f64 + 0.01 * i as f64],
                )
            })
            .collect();
        feats.push(fv("9999", vec![50.0]));
        let ds = Dataset::from_features(feats);
        let rep = evaluate(&ds, &"knn:k=1".parse().unwrap(), &Registry::builtin(), 3, 0).unwrap();
        assert_eq!(rep.uncovered, vec![9]);
        assert_eq!(rep.ranks[9], 4);
        assert_eq!(rep.config.classes, 4);
        let total: usize = (1..=4)
            .map(|n| rep.ranks.iter().filter(|&&r| r == n).count())
            .sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn mixed_schemes_are_rejected() {
        let mut b = fv("0001", vec![1.0, 2.0, 3.0, 4.0]);
        b.scheme = Scheme::Poly3;
        let ds = Dataset::from_features(vec![fv("0001", vec![1.0; 4]), b]);
        let plan = FoldPlan {
            k: 2,
            assignment: vec![0, 1],
            seed: 0,
        };
        assert!(matches!(
            cross_validate(
                &ds,
                &ClassifierSpec::named("lda"),
                &Registry::builtin(),
                &plan
            ),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn report_csv_rows() {
        let ranks = vec![1, 2, 1];
        let rep = EvalReport {
            config: ReportConfig {
                classifier: "lda".into(),
                scheme: "lrgbw".into(),
                normalization: "minmax".into(),
                rate_hz: Some(750.0),
                input_method: Some("thumb-same".into()),
                classes: 2,
                ..Default::default()
            },
            fold_accuracies: vec![1.0],
            mean_accuracy: 1.0,
            curve: GuessCurve::from_ranks(&ranks, 2),
            ranks,
            uncovered: vec![],
            runtime: Duration::ZERO,
        };
        let mut buf = Vec::new();
        write_report_csv(&[&rep], usize::MAX, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert_eq!(
            lines[1],
            "lda,lrgbw,minmax,750,thumb-same,1,0.6666666666666666,0.5"
        );
        assert_eq!(lines[2], "lda,lrgbw,minmax,750,thumb-same,2,1,1");
        let s = ReportSummary::of(&rep, 10);
        assert_eq!(s.top_n.len(), 2);
    }
}
