use serde::{Deserialize, Serialize};

use super::presets::{device_preset, environment_preset, input_method_preset};
use super::SynthConfig;
use crate::error::{Error, Result};

/// Flat key/value form of [`SynthConfig`], as read from TOML or assembled
/// from command-line flags. Preset names are resolved first, then any
/// explicit field overrides the preset value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfigFile {
    #[serde(alias = "env")]
    pub environment: Option<String>,
    pub device: Option<String>,
    #[serde(alias = "input")]
    pub input_method: Option<String>,
    #[serde(alias = "pins")]
    pub pin_set_size: Option<usize>,
    pub reps: Option<usize>,
    pub user_bias_sigma: Option<f64>,
    pub inter_digit_min_ms: Option<f64>,
    pub inter_digit_max_ms: Option<f64>,
    pub inter_pin_min_ms: Option<f64>,
    pub inter_pin_max_ms: Option<f64>,
    pub subject: Option<String>,
    pub seed: Option<u64>,
    pub unsafe_cardinality: Option<bool>,

    pub base_illuminance: Option<f64>,
    pub gain_r: Option<f64>,
    pub gain_g: Option<f64>,
    pub gain_b: Option<f64>,
    pub gain_w: Option<f64>,
    pub ambient_noise_sigma: Option<f64>,
    pub drift_coefficient: Option<f64>,
    pub tilt_gain: Option<f64>,
    pub incidence_deg: Option<f64>,

    pub rate_hz: Option<f64>,
    pub resolution_lux: Option<f64>,
    pub has_rgbw: Option<bool>,

    /// Multiplies every key deflection and the press jitter; 0 gives a
    /// flat, leakage-free input method.
    pub tilt_scale: Option<f64>,
    pub press_jitter_deg: Option<f64>,
    pub move_ms: Option<f64>,
    pub hold_ms: Option<f64>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl SynthConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fields set in `other` win over fields set in `self`.
    pub fn merged(&self, other: &SynthConfigFile) -> SynthConfigFile {
        let a = serde_json::to_value(self).expect("plain struct");
        let b = serde_json::to_value(other).expect("plain struct");
        let (serde_json::Value::Object(mut a), serde_json::Value::Object(b)) = (a, b) else {
            unreachable!()
        };
        for (k, v) in b {
            if !v.is_null() {
                a.insert(k, v);
            }
        }
        serde_json::from_value(serde_json::Value::Object(a)).expect("same schema")
    }

    pub fn resolve(&self) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::default();
        if let Some(n) = &self.environment {
            cfg.environment = environment_preset(n)?;
        }
        if let Some(n) = &self.device {
            cfg.device = device_preset(n)?;
        }
        if let Some(n) = &self.input_method {
            cfg.input_method = input_method_preset(n)?;
        }
        set!(cfg.pin_set_size, self.pin_set_size);
        set!(cfg.reps, self.reps);
        set!(cfg.user_bias_sigma, self.user_bias_sigma);
        set!(cfg.inter_digit_ms.0, self.inter_digit_min_ms);
        set!(cfg.inter_digit_ms.1, self.inter_digit_max_ms);
        set!(cfg.inter_pin_ms.0, self.inter_pin_min_ms);
        set!(cfg.inter_pin_ms.1, self.inter_pin_max_ms);
        set!(cfg.subject, self.subject);
        set!(cfg.seed, self.seed);
        set!(cfg.unsafe_cardinality, self.unsafe_cardinality);

        let env = &mut cfg.environment;
        set!(env.base_illuminance, self.base_illuminance);
        set!(env.channel_gains[0], self.gain_r);
        set!(env.channel_gains[1], self.gain_g);
        set!(env.channel_gains[2], self.gain_b);
        set!(env.channel_gains[3], self.gain_w);
        set!(env.ambient_noise_sigma, self.ambient_noise_sigma);
        set!(env.drift_coefficient, self.drift_coefficient);
        set!(env.tilt_gain, self.tilt_gain);
        set!(env.incidence_deg, self.incidence_deg);

        let dev = &mut cfg.device;
        set!(dev.rate_hz, self.rate_hz);
        set!(dev.resolution_lux, self.resolution_lux);
        set!(dev.has_rgbw, self.has_rgbw);

        if let Some(s) = self.tilt_scale {
            let name = cfg.input_method.name.clone();
            cfg.input_method = cfg.input_method.scaled(s);
            cfg.input_method.name = name;
        }
        let im = &mut cfg.input_method;
        set!(im.press_jitter_deg, self.press_jitter_deg);
        set!(im.move_ms, self.move_ms);
        set!(im.hold_ms, self.hold_ms);

        cfg.validate()?;
        Ok(cfg)
    }
}
