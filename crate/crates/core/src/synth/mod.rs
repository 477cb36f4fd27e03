//! Seeded synthetic sessions.
//!
//! The device rests at a per-user pitch offset relative to the dominant light.
//! Each key press ramps the orientation (raised cosine) to that key's target
//! deflection, holds it around the touch instant, then relaxes halfway back.
//! Received illuminance follows the cosine of the incidence angle; every
//! channel carries its own AR(1) multiplicative noise and is rounded to the
//! device's resolution (lux) or to integer counts (RGBW).

mod config;
mod presets;
mod resample;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::SynthConfigFile;
pub use presets::{
    device_preset, environment_preset, input_method_preset, pad_position, DevicePreset,
    EnvironmentPreset, InputMethodPreset, Tilt, DEVICES, ENVIRONMENTS, INPUT_METHODS, MAX_TILT_DEG,
};
pub use resample::{decimate, quantize};

use crate::error::{Error, Result};
use crate::trace::{Key, Nanos, Pin, Rgbw, SensorSample, Session, SessionMeta, TapEvent};

pub const ALLOWED_PIN_SET_SIZES: [usize; 3] = [15, 30, 50];
pub const REPS_RANGE: std::ops::RangeInclusive<usize> = 3..=10;

const LEAD_IN_MS: f64 = 1000.0;
const TRAIL_MS: f64 = 1500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub environment: EnvironmentPreset,
    pub device: DevicePreset,
    pub input_method: InputMethodPreset,
    pub pin_set_size: usize,
    pub reps: usize,
    /// Std-dev of the per-user rest pitch offset (degrees).
    pub user_bias_sigma: f64,
    pub inter_digit_ms: (f64, f64),
    /// Pause between the OK press of one entry and the first digit of the next.
    pub inter_pin_ms: (f64, f64),
    pub subject: String,
    pub seed: u64,
    /// Permits PIN-set sizes and repetition counts outside the studied ranges.
    pub unsafe_cardinality: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            environment: environment_preset("office-tube").unwrap(),
            device: device_preset("galaxy-s3").unwrap(),
            input_method: input_method_preset("thumb-same").unwrap(),
            pin_set_size: 50,
            reps: 5,
            user_bias_sigma: 5.0,
            inter_digit_ms: (250.0, 600.0),
            inter_pin_ms: (1000.0, 2000.0),
            subject: "synthetic".into(),
            seed: 0,
            unsafe_cardinality: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        self.device.validate()?;
        self.input_method.validate()?;
        let cfg = |m: String| Err(Error::Config(m));
        if !self.unsafe_cardinality {
            if !ALLOWED_PIN_SET_SIZES.contains(&self.pin_set_size) {
                return cfg(format!(
                    "PIN set size must be one of 15, 30, 50 (got {}); pass unsafe_cardinality to override",
                    self.pin_set_size
                ));
            }
            if !REPS_RANGE.contains(&self.reps) {
                return cfg(format!(
                    "reps must be within 3..=10 (got {}); pass unsafe_cardinality to override",
                    self.reps
                ));
            }
        }
        if self.pin_set_size == 0 || self.pin_set_size > 10_000 {
            return cfg(format!(
                "cannot draw {} distinct 4-digit PINs",
                self.pin_set_size
            ));
        }
        if self.reps == 0 {
            return cfg("reps must be >= 1".into());
        }
        if !(self.user_bias_sigma.is_finite() && self.user_bias_sigma >= 0.0) {
            return cfg("user_bias_sigma must be >= 0".into());
        }
        let (lo, hi) = self.inter_digit_ms;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return cfg(format!("inter-digit range ({lo}, {hi}) is not ordered"));
        }
        if lo < self.input_method.hold_ms {
            return cfg(format!(
                "inter-digit minimum {lo} ms is shorter than the hold time {} ms",
                self.input_method.hold_ms
            ));
        }
        let (plo, phi) = self.inter_pin_ms;
        if !(plo.is_finite() && phi.is_finite() && plo <= phi && plo >= self.input_method.hold_ms) {
            return cfg(format!("inter-PIN range ({plo}, {phi}) invalid"));
        }
        Ok(())
    }
}

/// Orientation deflection (pitch, roll in degrees) as a chain of keyframes
/// joined by raised-cosine segments.
#[derive(Debug, Clone)]
struct Trajectory {
    frames: Vec<(f64, [f64; 2])>,
    hold_end: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory {
            frames: Vec::new(),
            hold_end: f64::MIN,
        }
    }
}

fn raised_cosine(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * 0.5 * (1.0 - (std::f64::consts::PI * s).cos())
}

impl Trajectory {
    fn at(&self, t: f64) -> [f64; 2] {
        let f = &self.frames;
        let i = f.partition_point(|(ft, _)| *ft <= t);
        if i == 0 {
            return f.first().map_or([0.0; 2], |x| x.1);
        }
        if i == f.len() {
            return f[i - 1].1;
        }
        let ((t0, v0), (t1, v1)) = (f[i - 1], f[i]);
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        [
            raised_cosine(v0[0], v1[0], s),
            raised_cosine(v0[1], v1[1], s),
        ]
    }

    /// Starts a new motion at `t`, discarding any planned frames after it.
    fn cut_at(&mut self, t: f64) {
        let v = self.at(t);
        self.frames.retain(|(ft, _)| *ft < t);
        self.frames.push((t, v));
    }

    fn push(&mut self, t: f64, v: [f64; 2]) {
        self.frames.push((t, v));
    }

    /// Press centred on `tap`: ramp in, hold across the touch, relax halfway.
    fn press(&mut self, tap: f64, target: [f64; 2], move_ms: f64, hold_ms: f64) {
        let hold_start = tap - hold_ms / 2.0;
        let hold_end = tap + hold_ms / 2.0;
        let ramp_start = (hold_start - move_ms).max(self.hold_end).min(hold_start);
        self.cut_at(ramp_start);
        self.push(hold_start, target);
        self.push(hold_end, target);
        self.push(hold_end + move_ms, [target[0] / 2.0, target[1] / 2.0]);
        self.hold_end = hold_end;
    }

    fn settle(&mut self, from: f64, move_ms: f64) {
        self.cut_at(from);
        self.push(from + move_ms, [0.0, 0.0]);
    }
}

/// One channel's multiplicative AR(1) noise with stationary std-dev `sigma`.
struct Ar1 {
    rho: f64,
    innovation: f64,
    state: f64,
}

impl Ar1 {
    fn new(sigma: f64, rho: f64, rng: &mut ChaCha8Rng) -> Self {
        let z: f64 = StandardNormal.sample(rng);
        Ar1 {
            rho,
            innovation: sigma * (1.0 - rho * rho).sqrt(),
            state: sigma * z,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let out = self.state;
        let z: f64 = StandardNormal.sample(rng);
        self.state = self.rho * self.state + self.innovation * z;
        out
    }
}

fn ms_to_ns(ms: f64) -> Nanos {
    (ms * 1e6).round() as Nanos
}

/// Generates a session. Output depends only on `cfg`.
pub fn generate_session(cfg: &SynthConfig) -> Result<Session> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let im = &cfg.input_method;
    let env = &cfg.environment;

    let pin_set: Vec<Pin> = index::sample(&mut rng, 10_000, cfg.pin_set_size)
        .into_iter()
        .map(|v| Pin::new(format!("{v:04}")).expect("0..10000 formats to 4 digits"))
        .collect();
    let mut entries = Vec::with_capacity(cfg.pin_set_size * cfg.reps);
    for _ in 0..cfg.reps {
        let mut round = pin_set.clone();
        round.shuffle(&mut rng);
        entries.extend(round);
    }

    let rest_pitch = if cfg.user_bias_sigma > 0.0 {
        Normal::new(0.0, cfg.user_bias_sigma)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng)
    } else {
        0.0
    };
    let jitter = |rng: &mut ChaCha8Rng| -> f64 {
        if im.press_jitter_deg > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            z * im.press_jitter_deg
        } else {
            0.0
        }
    };
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };

    // Timeline in milliseconds.
    let mut traj = Trajectory::default();
    traj.push(0.0, [0.0, 0.0]);
    let mut taps = Vec::with_capacity(entries.len() * 5);
    let mut now = LEAD_IN_MS;
    for pin in &entries {
        for (i, d) in pin.digits().into_iter().enumerate() {
            if i > 0 {
                now += uniform(&mut rng, cfg.inter_digit_ms);
            }
            let t = im.digit_tilt[d as usize];
            let target = [t.pitch + jitter(&mut rng), t.roll + jitter(&mut rng)];
            traj.press(now, target, im.move_ms, im.hold_ms);
            taps.push(TapEvent {
                t: ms_to_ns(now),
                key: Key::Digit(d),
            });
        }
        now += uniform(&mut rng, cfg.inter_digit_ms);
        let ok = [
            im.ok_tilt.pitch + jitter(&mut rng),
            im.ok_tilt.roll + jitter(&mut rng),
        ];
        traj.press(now, ok, im.move_ms, im.hold_ms);
        traj.settle(now + im.hold_ms / 2.0 + im.move_ms, im.move_ms);
        taps.push(TapEvent {
            t: ms_to_ns(now),
            key: Key::Ok,
        });
        now += uniform(&mut rng, cfg.inter_pin_ms);
    }
    let end_ns = ms_to_ns(now + TRAIL_MS);

    let q = cfg.device.resolution_lux;
    let sigma = env.ambient_noise_sigma;
    let rho = env.drift_coefficient;
    let mut lux_noise = Ar1::new(sigma, rho, &mut rng);
    let mut chan_noise: Vec<Ar1> = (0..4).map(|_| Ar1::new(sigma, rho, &mut rng)).collect();
    let incidence = env.incidence_deg.to_radians();
    let rest = (env.incidence_deg + rest_pitch).to_radians();
    let period_ns = 1e9 / cfg.device.rate_hz;

    let mut samples = Vec::new();
    for j in 0u64.. {
        let t = (j as f64 * period_ns).round() as Nanos;
        if t > end_ns {
            break;
        }
        let [pitch, roll] = traj.at(t as f64 / 1e6);
        let pitch = (env.tilt_gain * pitch).to_radians();
        let roll = (env.tilt_gain * roll).to_radians();
        let factor = ((rest + pitch).cos() * roll.cos()).max(0.0) / incidence.cos();
        let e = env.base_illuminance * factor;
        let lux = (q * (e * (1.0 + lux_noise.next(&mut rng)) / q).round()).max(0.0);
        let rgbw = if cfg.device.has_rgbw {
            let mut c = [0.0; 4];
            for (k, slot) in c.iter_mut().enumerate() {
                let n = chan_noise[k].next(&mut rng);
                *slot = (env.channel_gains[k] * e * (1.0 + n)).round().max(0.0);
            }
            Some(Rgbw::from_array(c))
        } else {
            None
        };
        samples.push(SensorSample { t, lux, rgbw });
    }

    let meta = SessionMeta {
        device: cfg.device.name.clone(),
        environment: env.name.clone(),
        input_method: im.name.clone(),
        rate_hz: cfg.device.rate_hz,
        resolution_lux: Some(q),
        subject: cfg.subject.clone(),
        seed: Some(cfg.seed),
        sensor: None,
        extra: Default::default(),
    };
    Session::new(meta, samples, taps, entries)
}
