//! Simulating slower or coarser sensors on an existing session.

use crate::error::{Error, Result};
use crate::trace::{Nanos, Rgbw, SensorSample, Session};

/// Keeps the sample nearest each instant of a `target_hz` grid anchored at the
/// first sample. Nothing is averaged; taps and PINs are unchanged.
pub fn decimate(session: &Session, target_hz: f64) -> Result<Session> {
    let rate = session.meta().rate_hz;
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::Config(format!(
            "target rate must be > 0, got {target_hz}"
        )));
    }
    if target_hz > rate {
        return Err(Error::Config(format!(
            "target rate {target_hz} Hz exceeds the session rate {rate} Hz"
        )));
    }
    if target_hz == rate {
        return Ok(session.clone());
    }
    let samples = session.samples();
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Error::Config(
            "cannot decimate a session without samples".into(),
        ));
    };
    let period = 1e9 / target_hz;
    let mut kept: Vec<SensorSample> = Vec::new();
    let mut cursor = 0;
    for j in 0u64.. {
        let g = first.t + (j as f64 * period).round() as Nanos;
        if g > last.t {
            break;
        }
        while cursor + 1 < samples.len() && samples[cursor + 1].t <= g {
            cursor += 1;
        }
        let mut pick = cursor;
        if let Some(next) = samples.get(cursor + 1) {
            if next.t - g < g - samples[cursor].t {
                pick = cursor + 1;
            }
        }
        if kept.last().map(|s| s.t) != Some(samples[pick].t) {
            kept.push(samples[pick]);
        }
    }
    let mut meta = session.meta().clone();
    meta.rate_hz = target_hz;
    session.with_samples(meta, kept)
}

fn round_to(v: f64, q: f64) -> f64 {
    q * (v / q).round()
}

/// Rounds lux and channel values to multiples of `q` (ties away from zero).
pub fn quantize(session: &Session, q: f64) -> Result<Session> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::Config(format!("resolution must be > 0, got {q}")));
    }
    let samples = session
        .samples()
        .iter()
        .map(|s| SensorSample {
            t: s.t,
            lux: round_to(s.lux, q),
            rgbw: s
                .rgbw
                .map(|c| Rgbw::from_array(c.as_array().map(|v| round_to(v, q)))),
        })
        .collect();
    let mut meta = session.meta().clone();
    meta.resolution_lux = Some(q);
    session.with_samples(meta, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_session, SynthConfig};
    use crate::trace::{Key, Pin, SessionMeta, TapEvent};

    fn grid_session(rate: f64, seconds: f64) -> Session {
        let period = 1e9 / rate;
        let n = (seconds * rate) as u64;
        let samples = (0..=n)
            .map(|j| SensorSample {
                t: (j as f64 * period).round() as Nanos,
                lux: (j % 97) as f64,
                rgbw: None,
            })
            .collect();
        let taps = (0..4)
            .map(|i| TapEvent {
                t: 1_000_000_000 + i * 300_000_000,
                key: Key::Digit(i as u8 + 1),
            })
            .collect();
        let meta = SessionMeta {
            device: "grid".into(),
            environment: "lab".into(),
            input_method: "thumb-same".into(),
            rate_hz: rate,
            resolution_lux: None,
            subject: "s".into(),
            seed: None,
            sensor: None,
            extra: Default::default(),
        };
        Session::new(meta, samples, taps, vec![Pin::new("1234").unwrap()]).unwrap()
    }

    #[test]
    fn fastest_to_normal_keeps_one_in_150() {
        let s = grid_session(750.0, 30.0);
        let d = decimate(&s, 5.0).unwrap();
        let ratio = s.samples().len() as f64 / d.samples().len() as f64;
        assert!((ratio - 150.0).abs() < 1.0, "{ratio}");
        assert_eq!(d.meta().rate_hz, 5.0);
        assert_eq!(d.taps(), s.taps());
        assert_eq!(d.pins(), s.pins());
        // every kept sample is an original one
        assert!(d.samples().iter().all(|x| s.samples().contains(x)));
    }

    #[test]
    fn own_rate_is_identity() {
        let s = grid_session(49.0, 5.0);
        assert_eq!(decimate(&s, 49.0).unwrap(), s);
    }

    #[test]
    fn rejects_bad_targets() {
        let s = grid_session(15.0, 5.0);
        assert!(matches!(decimate(&s, 0.0), Err(Error::Config(_))));
        assert!(matches!(decimate(&s, -3.0), Err(Error::Config(_))));
        assert!(matches!(decimate(&s, 49.0), Err(Error::Config(_))));
    }

    #[test]
    fn two_stage_equals_one_stage_on_commensurate_grids() {
        let s = grid_session(750.0, 20.0);
        for (mid, end) in [(150.0, 5.0), (375.0, 15.0), (250.0, 50.0)] {
            let two = decimate(&decimate(&s, mid).unwrap(), end).unwrap();
            let one = decimate(&s, end).unwrap();
            assert_eq!(two.samples(), one.samples(), "750 -> {mid} -> {end}");
        }
    }

    #[test]
    fn two_stage_via_49hz_stays_within_one_intermediate_period() {
        // 200 ms is not a multiple of 1/49 s, so the intermediate grid shifts
        // picks by up to half of its period.
        let s = grid_session(750.0, 20.0);
        let two = decimate(&decimate(&s, 49.0).unwrap(), 5.0).unwrap();
        let one = decimate(&s, 5.0).unwrap();
        assert_eq!(two.samples().len(), one.samples().len());
        let half_mid = (1e9 / 49.0 / 2.0) as i64 + 1_333_334;
        for (a, b) in two.samples().iter().zip(one.samples()) {
            assert!((a.t - b.t).abs() <= half_mid, "{} vs {}", a.t, b.t);
        }
    }

    #[test]
    fn quantize_rounds_to_nearest_step() {
        let mut s = grid_session(5.0, 3.0);
        let meta = s.meta().clone();
        let samples = vec![123.4, 123.5, 7.0, 0.2, 1049.0, 155.0]
            .into_iter()
            .enumerate()
            .map(|(i, lux)| SensorSample {
                t: i as i64 * 600_000_000,
                lux,
                rgbw: None,
            })
            .collect();
        s = s.with_samples(meta, samples).unwrap();

        let q1 = quantize(&s, 1.0).unwrap();
        let lux: Vec<f64> = q1.samples().iter().map(|x| x.lux).collect();
        assert_eq!(lux, vec![123.0, 124.0, 7.0, 0.0, 1049.0, 155.0]);
        assert_eq!(q1.meta().resolution_lux, Some(1.0));

        let q10 = quantize(&s, 10.0).unwrap();
        let lux: Vec<f64> = q10.samples().iter().map(|x| x.lux).collect();
        assert_eq!(lux, vec![120.0, 120.0, 10.0, 0.0, 1050.0, 160.0]);
        assert!(quantize(&s, 0.0).is_err());
    }

    #[test]
    fn coarse_resolution_collapses_indoor_levels() {
        let cfg = SynthConfig {
            pin_set_size: 15,
            reps: 3,
            seed: 21,
            ..SynthConfig::default()
        };
        let s = generate_session(&cfg).unwrap();
        let levels = |s: &Session| {
            let mut v: Vec<i64> = s.samples().iter().map(|x| x.lux as i64).collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        let fine = levels(&s);
        let coarse = levels(&quantize(&s, 640.0).unwrap());
        assert!(fine > 20, "{fine}");
        assert!(coarse <= 2, "{coarse}");
        let mut counts = std::collections::BTreeMap::new();
        for x in quantize(&s, 640.0).unwrap().samples() {
            *counts.entry(x.lux as i64).or_insert(0usize) += 1;
        }
        let top = counts.values().max().unwrap();
        assert!(*top as f64 / s.samples().len() as f64 > 0.95, "{counts:?}");
    }
}
