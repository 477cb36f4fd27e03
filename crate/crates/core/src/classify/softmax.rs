use serde::{Deserialize, Serialize};

use super::{
    check_dim, parse_parameters, rank_by_key, softmax_in_place, Classifier, ClassifierSpec, Model,
    ModelDocument, Params, RankedPrediction, TrainingSet,
};
use crate::error::{Error, Result};

pub const DEFAULT_L2: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-6;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Penalized mean log-likelihood of a softmax model over a training set.
///
/// Weights are stored class-major, `d + 1` per class with the bias last:
/// `w[k * (d + 1) + j]`. The L2 penalty skips the bias.
pub struct SoftmaxObjective<'a> {
    ts: &'a TrainingSet,
    l2: f64,
}

impl<'a> SoftmaxObjective<'a> {
    pub fn new(ts: &'a TrainingSet, l2: f64) -> Self {
        SoftmaxObjective { ts, l2 }
    }

    pub fn n_weights(&self) -> usize {
        self.ts.n_classes() * (self.ts.dim() + 1)
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = x.len() + 1;
        for (k, o) in out.iter_mut().enumerate() {
            let wk = &w[k * stride..(k + 1) * stride];
            *o = wk[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wk[x.len()];
        }
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        let stride = self.ts.dim() + 1;
        0.5 * self.l2
            * w.chunks(stride)
                .map(|wk| wk[..stride - 1].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let c = self.ts.n_classes();
        let mut z = vec![0.0; c];
        let mut ll = 0.0;
        for (x, &y) in self.ts.rows().iter().zip(self.ts.targets()) {
            self.logits(w, x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ll += z[y] - lse;
        }
        ll / self.ts.len() as f64 - self.penalty(w)
    }

    /// Objective and its gradient with respect to `w`.
    pub fn value_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let (c, d) = (self.ts.n_classes(), self.ts.dim());
        let stride = d + 1;
        let n = self.ts.len() as f64;
        let mut grad = vec![0.0; w.len()];
        let mut z = vec![0.0; c];
        let mut ll = 0.0;
        for (x, &y) in self.ts.rows().iter().zip(self.ts.targets()) {
            self.logits(w, x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ll += z[y] - lse;
            for k in 0..c {
                let resid = f64::from(u8::from(k == y)) - (z[k] - lse).exp();
                let g = &mut grad[k * stride..(k + 1) * stride];
                for j in 0..d {
                    g[j] += resid * x[j];
                }
                g[d] += resid;
            }
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g /= n;
            if i % stride != d {
                *g -= self.l2 * w[i];
            }
        }
        (ll / n - self.penalty(w), grad)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.value_and_gradient(w).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    /// Largest absolute gradient entry at the returned weights.
    pub final_gradient: f64,
    pub converged: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Softmax {
    fn default() -> Self {
        Softmax {
            l2: DEFAULT_L2,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

impl Softmax {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<Self> {
        let p = Params::new(spec, &["l2", "max_iter", "tol"])?;
        let s = Softmax {
            l2: p.get("l2", DEFAULT_L2)?,
            max_iter: p.get("max_iter", DEFAULT_MAX_ITER)?,
            tol: p.get("tol", DEFAULT_TOL)?,
        };
        if !(s.l2 >= 0.0 && s.tol > 0.0) {
            return Err(Error::Config(
                "softmax: l2 >= 0 and tol > 0 required".into(),
            ));
        }
        Ok(s)
    }

    /// Full-batch gradient ascent from zero with Armijo backtracking.
    pub fn train(&self, ts: &TrainingSet) -> Result<SoftmaxModel> {
        let obj = SoftmaxObjective::new(ts, self.l2);
        let mut w = vec![0.0; obj.n_weights()];
        let (mut f, mut g) = obj.value_and_gradient(&w);
        let mut step = 1.0;
        let mut iterations = 0;
        let max_abs = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        while iterations < self.max_iter && max_abs(&g) > self.tol {
            iterations += 1;
            let g2: f64 = g.iter().map(|v| v * v).sum();
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                let ft = obj.value(&trial);
                if ft.is_finite() && ft >= f + ARMIJO_C * step * g2 {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, _)) = accepted else {
                // no ascent direction left at machine precision
                break;
            };
            w = next;
            (f, g) = obj.value_and_gradient(&w);
            if !f.is_finite() {
                return Err(Error::Numeric(format!(
                    "softmax objective became non-finite at iteration {iterations}"
                )));
            }
            step *= 2.0;
        }

        let final_gradient = max_abs(&g);
        Ok(SoftmaxModel {
            dim: ts.dim(),
            class_index: ts.class_index().to_vec(),
            weights: w.chunks(ts.dim() + 1).map(<[f64]>::to_vec).collect(),
            l2: self.l2,
            diagnostics: TrainingDiagnostics {
                iterations,
                final_gradient,
                converged: final_gradient <= self.tol,
                objective: f,
            },
        })
    }
}

impl Classifier for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn fit(&self, ts: &TrainingSet) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.train(ts)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    #[serde(skip)]
    pub dim: usize,
    #[serde(skip)]
    pub class_index: Vec<String>,
    /// One `d + 1` vector per class, bias last.
    pub weights: Vec<Vec<f64>>,
    pub l2: f64,
    pub diagnostics: TrainingDiagnostics,
}

impl SoftmaxModel {
    /// A model with every weight zero.
    pub fn zeros(dim: usize, class_index: Vec<String>) -> Self {
        SoftmaxModel {
            dim,
            weights: vec![vec![0.0; dim + 1]; class_index.len()],
            class_index,
            l2: 0.0,
            diagnostics: TrainingDiagnostics {
                iterations: 0,
                final_gradient: 0.0,
                converged: false,
                objective: 0.0,
            },
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        Ok(self
            .weights
            .iter()
            .map(|w| w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[self.dim])
            .collect())
    }

    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut m: SoftmaxModel = parse_parameters(doc, "softmax")?;
        m.dim = doc.dim;
        m.class_index = doc.class_index.clone();
        if m.weights.len() != m.class_index.len() || m.weights.iter().any(|w| w.len() != m.dim + 1)
        {
            return Err(Error::Contract(
                "softmax weights do not match header".into(),
            ));
        }
        Ok(m)
    }
}

impl Model for SoftmaxModel {
    fn kind(&self) -> &'static str {
        "softmax"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn class_index(&self) -> &[String] {
        &self.class_index
    }

    fn predict_ranked(&self, x: &[f64]) -> Result<RankedPrediction> {
        let z = self.logits(x)?;
        let mut p = z.clone();
        softmax_in_place(&mut p);
        Ok(rank_by_key(&self.class_index, &z, &p))
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = SoftmaxModel::zeros(3, labels(&["a", "b", "c", "d"]));
        for p in m.posteriors(&[0.3, -2.0, 9.0]).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    /// Symmetric two-point problem reduces to one scalar w with
    /// objective log σ(2w) - λ w²; maximize it by golden-section search.
    fn scalar_oracle(l2: f64) -> f64 {
        let f = |w: f64| -(1.0 + (-2.0 * w).exp()).ln() - l2 * w * w;
        let (mut a, mut b) = (0.0, 50.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let w = 0.5 * (a + b);
        1.0 / (1.0 + (-2.0 * w).exp())
    }

    #[test]
    fn two_points_match_scalar_logistic_oracle() {
        let ts = TrainingSet::new(vec![vec![-1.0], vec![1.0]], labels(&["neg", "pos"])).unwrap();
        let m = Softmax::default().train(&ts).unwrap();
        let p_pos = m.posteriors(&[1.0]).unwrap()[1];
        let p_neg = m.posteriors(&[-1.0]).unwrap()[0];
        assert!(p_pos > 0.9 && p_neg > 0.9);
        let oracle = scalar_oracle(DEFAULT_L2);
        assert!((p_pos - oracle).abs() < 1e-4, "{p_pos} vs {oracle}");
        assert!(m.diagnostics.converged, "{:?}", m.diagnostics);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..10 {
            let d = rng.random_range(1..=8);
            let c = rng.random_range(2..=5);
            let n = rng.random_range(c..c + 12);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let labs: Vec<String> = (0..n).map(|i| format!("c{}", i % c)).collect();
            let ts = TrainingSet::new(rows, labs).unwrap();
            let obj = SoftmaxObjective::new(&ts, 0.05);
            let w: Vec<f64> = (0..obj.n_weights())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let g = obj.gradient(&w);
            let h = 1e-5;
            let fd: Vec<f64> = (0..w.len())
                .map(|i| {
                    let mut a = w.clone();
                    let mut b = w.clone();
                    a[i] += h;
                    b[i] -= h;
                    (obj.value(&a) - obj.value(&b)) / (2.0 * h)
                })
                .collect();
            let diff = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(
                diff / scale <= 1e-5,
                "round {round}: rel err {}",
                diff / scale
            );
        }
    }

    #[test]
    fn shifting_every_weight_vector_keeps_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = SoftmaxModel::zeros(4, labels(&["a", "b", "c"]));
        for w in &mut m.weights {
            w.iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
        }
        let shift: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut shifted = m.clone();
        for w in &mut shifted.weights {
            w.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = m.posteriors(&x).unwrap();
            let b = shifted.posteriors(&x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_sum_to_one_and_rank_descending() {
        let ts = TrainingSet::new(
            vec![
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 1.0],
            ],
            labels(&["w", "x", "y", "z"]),
        )
        .unwrap();
        let m = Softmax::default().train(&ts).unwrap();
        let r = m.predict_ranked(&[0.9, 0.1]).unwrap();
        assert_eq!(r.top(), "x");
        let sum: f64 = r.entries.iter().map(|e| e.1).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(r.entries.windows(2).all(|p| p[0].1 >= p[1].1));
        assert!(matches!(m.predict_ranked(&[1.0]), Err(Error::Contract(_))));
    }
}
