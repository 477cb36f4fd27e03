//! Per-window normalization and feature extraction.
//!
//! Three feature families are available by name through [`extractor`]:
//! `l` (lux at each tap), `lrgbw` (lux and RGBW at each tap, tap-major) and
//! `poly3` (cubic least-squares coefficients per channel over the window).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{sample_at, Pin, PinWindow, Rgbw, SensorSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    L,
    Lrgbw,
    Poly3,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::L, Scheme::Lrgbw, Scheme::Poly3];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::L => "l",
            Scheme::Lrgbw => "lrgbw",
            Scheme::Poly3 => "poly3",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unknown {
                kind: "feature scheme",
                name: s.to_string(),
                available: "l, lrgbw, poly3".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `(v - min) / (max - min)` per channel.
    #[default]
    MinMax,
    /// Divide each channel column by its Euclidean norm.
    ColNorm,
    None,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::MinMax => "minmax",
            Normalization::ColNorm => "colnorm",
            Normalization::None => "none",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Normalization::MinMax,
            Normalization::ColNorm,
            Normalization::None,
        ]
        .into_iter()
        .find(|x| x.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Unknown {
            kind: "normalization",
            name: s.to_string(),
            available: "minmax, colnorm, none".into(),
        })
    }
}

fn normalize_column(col: &mut [f64], mode: Normalization) {
    match mode {
        Normalization::MinMax => {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });
            let span = hi - lo;
            for v in col.iter_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
        Normalization::ColNorm => {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in col.iter_mut() {
                *v = if norm > 0.0 { *v / norm } else { 0.0 };
            }
        }
        Normalization::None => {}
    }
}

/// Normalizes every channel of the window independently.
pub fn normalize(window: &PinWindow, mode: Normalization) -> PinWindow {
    if mode == Normalization::None {
        return window.clone();
    }
    let channels = window.channel_count();
    let mut cols: Vec<Vec<f64>> = (0..channels).map(|c| window.column(c)).collect();
    for col in &mut cols {
        normalize_column(col, mode);
    }
    let rows = window
        .rows
        .iter()
        .enumerate()
        .map(|(i, s)| SensorSample {
            t: s.t,
            lux: cols[0][i],
            rgbw: s
                .rgbw
                .map(|_| Rgbw::from_array([cols[1][i], cols[2][i], cols[3][i], cols[4][i]])),
        })
        .collect();
    PinWindow {
        rows,
        ..window.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Pin,
    pub scheme: Scheme,
    pub normalization: Normalization,
}

/// One feature family. Implementations receive an already-normalized window.
pub trait FeatureExtractor: Send + Sync {
    fn scheme(&self) -> Scheme;

    /// Feature length for a window with `channels` channels, if defined.
    fn len_for(&self, channels: usize) -> usize;

    fn extract(&self, window: &PinWindow) -> Result<Vec<f64>>;
}

pub struct LuxAtTaps;

impl FeatureExtractor for LuxAtTaps {
    fn scheme(&self) -> Scheme {
        Scheme::L
    }

    fn len_for(&self, _channels: usize) -> usize {
        4
    }

    fn extract(&self, window: &PinWindow) -> Result<Vec<f64>> {
        Ok(window
            .tap_times
            .iter()
            .map(|t| sample_at(window, *t).lux)
            .collect())
    }
}

pub struct LrgbwAtTaps;

impl FeatureExtractor for LrgbwAtTaps {
    fn scheme(&self) -> Scheme {
        Scheme::Lrgbw
    }

    fn len_for(&self, _channels: usize) -> usize {
        20
    }

    fn extract(&self, window: &PinWindow) -> Result<Vec<f64>> {
        if !window.has_rgbw() {
            return Err(Error::FeatureUnavailable {
                scheme: "lrgbw",
                device: window.device.clone(),
            });
        }
        let mut out = Vec::with_capacity(20);
        for t in window.tap_times {
            let s = sample_at(window, t);
            let c = s.rgbw.expect("checked above");
            out.extend_from_slice(&[s.lux, c.r, c.g, c.b, c.w]);
        }
        Ok(out)
    }
}

pub struct CubicFit;

impl FeatureExtractor for CubicFit {
    fn scheme(&self) -> Scheme {
        Scheme::Poly3
    }

    fn len_for(&self, channels: usize) -> usize {
        4 * channels
    }

    fn extract(&self, window: &PinWindow) -> Result<Vec<f64>> {
        let n = window.rows.len();
        if n < 4 {
            return Err(Error::InsufficientData(format!(
                "cubic fit needs at least 4 samples, window for {} has {n}",
                window.label
            )));
        }
        let t0 = window.rows[0].t;
        let span = (window.rows[n - 1].t - t0) as f64;
        let x: Vec<f64> = window
            .rows
            .iter()
            .map(|s| (s.t - t0) as f64 / span)
            .collect();
        let mut out = Vec::with_capacity(4 * window.channel_count());
        for c in 0..window.channel_count() {
            out.extend(fit_cubic(&x, &window.column(c))?);
        }
        Ok(out)
    }
}

/// Least-squares cubic `a x^3 + b x^2 + c x + d` via QR; returns `[a, b, c, d]`.
pub fn fit_cubic(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    assert_eq!(x.len(), y.len());
    let design = DMatrix::from_fn(x.len(), 4, |i, j| x[i].powi(3 - j as i32));
    let qr = design.qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let coef = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("cubic fit design matrix is rank deficient".into()))?;
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "cubic fit produced non-finite coefficients".into(),
        ));
    }
    Ok([coef[0], coef[1], coef[2], coef[3]])
}

/// Looks up the extractor for a scheme.
pub fn extractor(scheme: Scheme) -> &'static dyn FeatureExtractor {
    match scheme {
        Scheme::L => &LuxAtTaps,
        Scheme::Lrgbw => &LrgbwAtTaps,
        Scheme::Poly3 => &CubicFit,
    }
}

/// Normalize then extract one window.
pub fn featurize(
    window: &PinWindow,
    scheme: Scheme,
    normalization: Normalization,
) -> Result<FeatureVector> {
    let ex = extractor(scheme);
    let normed = normalize(window, normalization);
    let values = ex.extract(&normed)?;
    let expected = ex.len_for(window.channel_count());
    if values.len() != expected {
        return Err(Error::Contract(format!(
            "{scheme} produced {} values, expected {expected}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite feature for {}",
            window.label
        )));
    }
    Ok(FeatureVector {
        values,
        label: window.label.clone(),
        scheme,
        normalization,
    })
}

/// Featurizes every window; the first failure aborts.
pub fn featurize_all(
    windows: &[PinWindow],
    scheme: Scheme,
    normalization: Normalization,
) -> Result<Vec<FeatureVector>> {
    windows
        .iter()
        .map(|w| featurize(w, scheme, normalization))
        .collect()
}

/// CSV dump: `label,scheme,normalization,x0,x1,...`.
pub fn write_features_csv<W: Write>(features: &[FeatureVector], mut out: W) -> Result<()> {
    let width = features.first().map_or(0, |f| f.values.len());
    let mut header = String::from("label,scheme,normalization");
    for i in 0..width {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(out, "{header}")?;
    for f in features {
        if f.values.len() != width {
            return Err(Error::Contract("feature rows differ in length".into()));
        }
        let mut line = format!("{},{},{}", f.label, f.scheme, f.normalization);
        for v in &f.values {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(rows: Vec<(i64, f64, Option<[f64; 4]>)>, taps: [i64; 4]) -> PinWindow {
        PinWindow {
            label: Pin::new("1590").unwrap(),
            rows: rows
                .into_iter()
                .map(|(t, lux, c)| SensorSample {
                    t,
                    lux,
                    rgbw: c.map(Rgbw::from_array),
                })
                .collect(),
            tap_times: taps,
            device: "nexus-one".into(),
        }
    }

    #[test]
    fn minmax_formula() {
        let w = window(
            vec![(0, 100.0, None), (1, 150.0, None), (2, 200.0, None)],
            [0, 1, 2, 2],
        );
        assert_eq!(
            normalize(&w, Normalization::MinMax).column(0),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn colnorm_divides_by_euclidean_norm() {
        let w = window(vec![(0, 3.0, None), (1, 4.0, None)], [0, 0, 1, 1]);
        let c = normalize(&w, Normalization::ColNorm).column(0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_columns_become_zero() {
        let w = window(
            vec![
                (0, 7.0, Some([0.0; 4])),
                (1, 7.0, Some([0.0; 4])),
                (2, 7.0, Some([0.0; 4])),
            ],
            [0, 1, 2, 2],
        );
        let m = normalize(&w, Normalization::MinMax);
        assert_eq!(m.column(0), vec![0.0; 3]);
        let c = normalize(&w, Normalization::ColNorm);
        assert_eq!(c.column(2), vec![0.0; 3]);
    }

    #[test]
    fn lux_feature_reads_nearest_samples() {
        let w = window(
            vec![
                (0, 0.2, None),
                (10, 0.4, None),
                (20, 0.9, None),
                (30, 0.1, None),
            ],
            [1, 9, 21, 29],
        );
        let f = featurize(&w, Scheme::L, Normalization::None).unwrap();
        assert_eq!(f.values, vec![0.2, 0.4, 0.9, 0.1]);
        assert_eq!(f.label, w.label);
    }

    #[test]
    fn lrgbw_ordering_is_tap_major() {
        let w = window(
            (0..4)
                .map(|t| (t, 1.0, Some([2.0, 3.0, 4.0, 5.0])))
                .collect(),
            [0, 1, 2, 3],
        );
        let f = featurize(&w, Scheme::Lrgbw, Normalization::None).unwrap();
        let one = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(f.values, [one, one, one, one].concat());
    }

    #[test]
    fn lrgbw_on_lux_only_names_device() {
        let w = window(vec![(0, 1.0, None)], [0, 0, 0, 0]);
        let err = featurize(&w, Scheme::Lrgbw, Normalization::MinMax).unwrap_err();
        assert!(matches!(err, Error::FeatureUnavailable { .. }));
        assert!(err.to_string().contains("nexus-one"));
    }

    #[test]
    fn cubic_fit_recovers_exact_polynomials() {
        let rows = (0..=50).map(|i| {
            let x = i as f64 / 50.0;
            (i * 1_000_000, x * x * x, Some([5.0, 2.0 - x, 0.0, x * x]))
        });
        let w = window(rows.collect(), [0, 10, 20, 50_000_000]);
        let f = featurize(&w, Scheme::Poly3, Normalization::None).unwrap();
        let want = [
            1.0, 0.0, 0.0, 0.0, // lux
            0.0, 0.0, 0.0, 5.0, // r
            0.0, 0.0, -1.0, 2.0, // g
            0.0, 0.0, 0.0, 0.0, // b
            0.0, 1.0, 0.0, 0.0, // w
        ];
        assert_eq!(f.values.len(), 20);
        for (got, want) in f.values.iter().zip(want) {
            assert!((got - want).abs() < 1e-8, "{:?}", f.values);
        }
    }

    #[test]
    fn cubic_fit_needs_four_samples() {
        let w = window(
            vec![(0, 1.0, None), (1, 2.0, None), (2, 3.0, None)],
            [0, 1, 2, 2],
        );
        assert!(matches!(
            featurize(&w, Scheme::Poly3, Normalization::None),
            Err(Error::InsufficientData(_))
        ));
        let w = window((0..4).map(|t| (t, t as f64, None)).collect(), [0, 1, 2, 3]);
        assert_eq!(
            featurize(&w, Scheme::Poly3, Normalization::None)
                .unwrap()
                .values
                .len(),
            4
        );
    }

    #[test]
    fn scheme_and_normalization_names_parse() {
        assert_eq!("LRGBW".parse::<Scheme>().unwrap(), Scheme::Lrgbw);
        assert_eq!(
            "colnorm".parse::<Normalization>().unwrap(),
            Normalization::ColNorm
        );
        assert!("fft".parse::<Scheme>().is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let w = window(
            vec![
                (0, 0.2, None),
                (10, 0.4, None),
                (20, 0.9, None),
                (30, 0.1, None),
            ],
            [0, 10, 20, 30],
        );
        let f = featurize(&w, Scheme::L, Normalization::None).unwrap();
        let mut buf = Vec::new();
        write_features_csv(&[f.clone(), f], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,scheme,normalization,x0,x1,x2,x3");
        assert_eq!(lines[1], "1590,l,none,0.2,0.4,0.9,0.1");
        assert_eq!(lines.len(), 3);
    }
}
