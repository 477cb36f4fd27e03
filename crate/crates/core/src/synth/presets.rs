//! Built-in environment, device and input-method presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lighting conditions of the room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPreset {
    pub name: String,
    /// Illuminance at the untilted rest orientation (lux).
    pub base_illuminance: f64,
    /// Counts per lux for the R, G, B, W channels.
    pub channel_gains: [f64; 4],
    /// Stationary std-dev of the relative AR(1) noise on every channel.
    pub ambient_noise_sigma: f64,
    /// AR(1) persistence per sample, in [0, 1).
    pub drift_coefficient: f64,
    /// Effective angle sensitivity. 1 for a point source; diffuse lighting
    /// washes out part of each tilt.
    pub tilt_gain: f64,
    /// Angle between the dominant light direction and the sensor normal at
    /// rest (degrees). Zero puts the device at the flat top of the cosine.
    pub incidence_deg: f64,
}

impl EnvironmentPreset {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_illuminance.is_finite()
            && self.base_illuminance > 0.0
            && self
                .channel_gains
                .iter()
                .all(|g| g.is_finite() && *g >= 0.0)
            && self.ambient_noise_sigma.is_finite()
            && self.ambient_noise_sigma >= 0.0
            && (0.0..1.0).contains(&self.drift_coefficient)
            && self.tilt_gain.is_finite()
            && self.tilt_gain >= 0.0
            && self.incidence_deg.abs() < 90.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "environment '{}' out of range: {self:?}",
                self.name
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePreset {
    pub name: String,
    pub rate_hz: f64,
    pub resolution_lux: f64,
    pub has_rgbw: bool,
}

impl DevicePreset {
    pub fn validate(&self) -> Result<()> {
        if self.rate_hz.is_finite()
            && self.rate_hz > 0.0
            && self.resolution_lux.is_finite()
            && self.resolution_lux > 0.0
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "device '{}' out of range: {self:?}",
                self.name
            )))
        }
    }
}

/// Target deflection (degrees) for one key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub pitch: f64,
    pub roll: f64,
}

impl Tilt {
    pub const ZERO: Tilt = Tilt {
        pitch: 0.0,
        roll: 0.0,
    };

    fn scaled(self, s: f64) -> Tilt {
        Tilt {
            pitch: self.pitch * s,
            roll: self.roll * s,
        }
    }
}

/// How the device is held and operated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMethodPreset {
    pub name: String,
    /// Deflection per digit key, indexed by digit.
    pub digit_tilt: [Tilt; 10],
    pub ok_tilt: Tilt,
    pub move_ms: f64,
    pub hold_ms: f64,
    /// Std-dev of the per-press deviation from the key's target (degrees).
    pub press_jitter_deg: f64,
}

pub const MAX_TILT_DEG: f64 = 30.0;

impl InputMethodPreset {
    pub fn validate(&self) -> Result<()> {
        let bounded = self
            .digit_tilt
            .iter()
            .chain(std::iter::once(&self.ok_tilt))
            .all(|t| t.pitch.abs() <= MAX_TILT_DEG && t.roll.abs() <= MAX_TILT_DEG);
        if !bounded {
            return Err(Error::Config(format!(
                "input method '{}': deflections must stay within ±{MAX_TILT_DEG}°",
                self.name
            )));
        }
        if !(self.move_ms > 0.0 && self.hold_ms >= 0.0 && self.press_jitter_deg >= 0.0) {
            return Err(Error::Config(format!(
                "input method '{}': move_ms > 0, hold_ms >= 0, press_jitter_deg >= 0 required",
                self.name
            )));
        }
        Ok(())
    }

    /// Multiplies every deflection and the press jitter by `s`.
    pub fn scaled(&self, s: f64) -> InputMethodPreset {
        let mut out = self.clone();
        for t in &mut out.digit_tilt {
            *t = t.scaled(s);
        }
        out.ok_tilt = out.ok_tilt.scaled(s);
        out.press_jitter_deg *= s;
        out
    }
}

/// Pad position (row, column) of a digit on the 3x4 layout.
pub fn pad_position(digit: u8) -> (usize, usize) {
    match digit {
        0 => (3, 1),
        d @ 1..=9 => (((d - 1) / 3) as usize, ((d - 1) % 3) as usize),
        _ => panic!("not a digit: {digit}"),
    }
}

const OK_POSITION: (usize, usize) = (3, 2);

/// Row-graded pitch plus column-dependent pitch offset and roll.
fn pad_tilts(row_pitch: [f64; 4], col_pitch: [f64; 3], col_roll: [f64; 3]) -> ([Tilt; 10], Tilt) {
    let at = |(r, c): (usize, usize)| Tilt {
        pitch: row_pitch[r] + col_pitch[c],
        roll: col_roll[c],
    };
    let mut digits = [Tilt::ZERO; 10];
    for (d, slot) in digits.iter_mut().enumerate() {
        *slot = at(pad_position(d as u8));
    }
    (digits, at(OK_POSITION))
}

pub const ENVIRONMENTS: &[&str] = &[
    "office-tube",
    "living-room-lamp",
    "window-day",
    "window-dusk",
];

pub fn environment_preset(name: &str) -> Result<EnvironmentPreset> {
    let env = |base, gains, sigma, gain, incidence| EnvironmentPreset {
        name: name.to_string(),
        base_illuminance: base,
        channel_gains: gains,
        ambient_noise_sigma: sigma,
        drift_coefficient: 0.9,
        tilt_gain: gain,
        incidence_deg: incidence,
    };
    Ok(match name {
        // Diffuse tube lighting: large E0, reduced effective angle sensitivity.
        "office-tube" => env(420.0, [1.6, 2.1, 1.2, 4.8], 0.012, 0.7, 35.0),
        "living-room-lamp" => env(160.0, [2.4, 1.9, 0.9, 4.6], 0.012, 1.0, 40.0),
        "window-day" => env(900.0, [1.1, 1.4, 1.7, 3.9], 0.018, 0.8, 50.0),
        "window-dusk" => env(45.0, [1.3, 1.4, 1.5, 4.0], 0.024, 0.8, 50.0),
        _ => return Err(unknown("environment", name, ENVIRONMENTS)),
    })
}

pub const DEVICES: &[&str] = &[
    "galaxy-s3",
    "galaxy-s2",
    "galaxy-s4-mini",
    "galaxy-note2",
    "nexus-s",
    "nexus-s-cm",
    "nexus-one",
    "optimus-g",
    "optimus-g-pro",
];

/// Sampling rates and resolutions observed on Android handsets. Devices that
/// only report a few coarse levels get the smallest reported step as `q`.
pub fn device_preset(name: &str) -> Result<DevicePreset> {
    let dev = |rate, q, rgbw| DevicePreset {
        name: name.to_string(),
        rate_hz: rate,
        resolution_lux: q,
        has_rgbw: rgbw,
    };
    Ok(match name {
        "galaxy-s3" => dev(750.0, 1.0, true),
        "galaxy-s2" => dev(10.0, 10.0, false),
        "galaxy-s4-mini" => dev(100.0, 1.0, false),
        "galaxy-note2" => dev(100.0, 1.0, false),
        "nexus-s" => dev(20.0, 10.0, false),
        "nexus-s-cm" => dev(140.0, 1.0, false),
        "nexus-one" => dev(1.0, 1.0, false),
        "optimus-g" => dev(7.0, 1.0, false),
        "optimus-g-pro" => dev(7.0, 1.0, false),
        _ => return Err(unknown("device", name, DEVICES)),
    })
}

pub const INPUT_METHODS: &[&str] = &["thumb-same", "thumb-other", "index-finger"];

pub fn input_method_preset(name: &str) -> Result<InputMethodPreset> {
    // Right hand, right thumb: leans right on the left and middle columns.
    let (thumb_same, thumb_same_ok) =
        pad_tilts([-9.0, -4.0, 4.0, 9.0], [-1.5, 0.0, 1.5], [8.0, 5.0, -4.0]);
    let method = |tilts: ([Tilt; 10], Tilt), jitter| InputMethodPreset {
        name: name.to_string(),
        digit_tilt: tilts.0,
        ok_tilt: tilts.1,
        move_ms: 120.0,
        hold_ms: 200.0,
        press_jitter_deg: jitter,
    };
    Ok(match name {
        "thumb-same" => method((thumb_same, thumb_same_ok), 1.2),
        // Left hand holds, right thumb presses: leans left on the right side.
        "thumb-other" => method(
            pad_tilts([-7.0, -3.5, 3.5, 7.0], [1.2, 0.0, -1.2], [3.0, -4.0, -6.0]),
            1.0,
        ),
        // The holding hand stays still; only small deflections remain.
        "index-finger" => {
            let mut m = method((thumb_same, thumb_same_ok), 1.2).scaled(0.25);
            m.name = name.to_string();
            m
        }
        _ => return Err(unknown("input method", name, INPUT_METHODS)),
    })
}

fn unknown(kind: &'static str, name: &str, list: &[&str]) -> Error {
    Error::Unknown {
        kind,
        name: name.to_string(),
        available: list.join(", "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_resolve_and_validate() {
        for n in ENVIRONMENTS {
            environment_preset(n).unwrap().validate().unwrap();
        }
        for n in DEVICES {
            device_preset(n).unwrap().validate().unwrap();
        }
        for n in INPUT_METHODS {
            input_method_preset(n).unwrap().validate().unwrap();
        }
        assert!(matches!(device_preset("pixel"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn reference_device_matches_observed_rate_and_resolution() {
        let d = device_preset("galaxy-s3").unwrap();
        assert_eq!(
            (d.rate_hz, d.resolution_lux, d.has_rgbw),
            (750.0, 1.0, true)
        );
    }

    #[test]
    fn index_finger_deflects_less_than_both_thumbs() {
        let idx = input_method_preset("index-finger").unwrap();
        for thumb in ["thumb-same", "thumb-other"] {
            let t = input_method_preset(thumb).unwrap();
            for d in 0..10 {
                let (a, b) = (idx.digit_tilt[d], t.digit_tilt[d]);
                assert!(a.pitch.abs() < b.pitch.abs(), "{thumb} digit {d} pitch");
                assert!(a.roll.abs() < b.roll.abs(), "{thumb} digit {d} roll");
            }
        }
    }

    #[test]
    fn right_thumb_leans_right_on_left_and_middle_columns() {
        let t = input_method_preset("thumb-same").unwrap();
        for d in [1, 2, 4, 5, 7, 8] {
            assert!(t.digit_tilt[d].roll > 0.0);
        }
        for d in [3, 6, 9] {
            assert!(t.digit_tilt[d].roll < 0.0);
        }
    }

    #[test]
    fn digit_targets_are_distinct() {
        for n in INPUT_METHODS {
            let m = input_method_preset(n).unwrap();
            for a in 0..10 {
                for b in (a + 1)..10 {
                    assert_ne!(m.digit_tilt[a], m.digit_tilt[b], "{n}: {a} vs {b}");
                }
            }
        }
    }
}
