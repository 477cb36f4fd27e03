//! Trace data model, the session JSONL format, and PIN window extraction.
//!
//! A session file is JSON Lines: a `session` header, then `sample` and `tap`
//! records in time order, then a single `pins` record. Timestamps are integer
//! nanoseconds on one monotonic clock.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nanosecond timestamp.
pub type Nanos = i64;

pub const NANOS_PER_SEC: f64 = 1e9;

/// Default margin around the first and last digit of a PIN (100 ms).
pub const DEFAULT_MARGIN_NS: Nanos = 100_000_000;

/// Red, green, blue and white intensities in sensor counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgbw {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub w: f64,
}

impl Rgbw {
    pub fn as_array(&self) -> [f64; 4] {
        [self.r, self.g, self.b, self.w]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Rgbw {
            r: v[0],
            g: v[1],
            b: v[2],
            w: v[3],
        }
    }
}

/// One timestamped reading of the ambient-light sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t: Nanos,
    pub lux: f64,
    pub rgbw: Option<Rgbw>,
}

impl SensorSample {
    /// Channel values in row order: lux, then R, G, B, W when present.
    pub fn channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(5);
        out.push(self.lux);
        if let Some(c) = &self.rgbw {
            out.extend_from_slice(&c.as_array());
        }
        out
    }
}

/// A key on the 3x4 PIN pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Digit(u8),
    Ok,
    Del,
}

impl Key {
    pub fn digit(self) -> Option<u8> {
        match self {
            Key::Digit(d) => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Digit(d) => write!(f, "{d}"),
            Key::Ok => f.write_str("OK"),
            Key::Del => f.write_str("DEL"),
        }
    }
}

impl FromStr for Key {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "OK" => Ok(Key::Ok),
            "DEL" => Ok(Key::Del),
            _ => match s.as_bytes() {
                [b @ b'0'..=b'9'] => Ok(Key::Digit(b - b'0')),
                _ => Err(format!("unknown key '{s}'")),
            },
        }
    }
}

impl Serialize for Key {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapEvent {
    pub t: Nanos,
    pub key: Key,
}

/// A 4-digit PIN label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pin(String);

impl Pin {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        if s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Pin(s))
        } else {
            Err(Error::Validation(format!("'{s}' is not a 4-digit PIN")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn digits(&self) -> [u8; 4] {
        let b = self.0.as_bytes();
        [b[0] - b'0', b[1] - b'0', b[2] - b'0', b[3] - b'0']
    }
}

impl TryFrom<String> for Pin {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Pin::new(s)
    }
}

impl From<Pin> for String {
    fn from(p: Pin) -> String {
        p.0
    }
}

impl fmt::Display for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Session header. Unknown header keys are kept in `extra` and written back
/// verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub device: String,
    pub environment: String,
    pub input_method: String,
    pub rate_hz: f64,
    #[serde(default)]
    pub resolution_lux: Option<f64>,
    pub subject: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// `"none"` marks a taps-only capture with no light readings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SessionMeta {
    pub fn taps_only(&self) -> bool {
        self.sensor.as_deref() == Some("none")
    }
}

/// A validated recording: samples, taps and PIN labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    meta: SessionMeta,
    samples: Vec<SensorSample>,
    taps: Vec<TapEvent>,
    pins: Vec<Pin>,
}

impl Session {
    /// Builds a session, checking every invariant.
    pub fn new(
        meta: SessionMeta,
        samples: Vec<SensorSample>,
        taps: Vec<TapEvent>,
        pins: Vec<Pin>,
    ) -> Result<Self> {
        validate(&meta, &samples, &taps, &pins)?;
        Ok(Session {
            meta,
            samples,
            taps,
            pins,
        })
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn samples(&self) -> &[SensorSample] {
        &self.samples
    }

    pub fn taps(&self) -> &[TapEvent] {
        &self.taps
    }

    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    pub fn has_rgbw(&self) -> bool {
        self.samples.first().is_some_and(|s| s.rgbw.is_some())
    }

    /// Replaces the samples and header, re-validating the result.
    pub fn with_samples(&self, meta: SessionMeta, samples: Vec<SensorSample>) -> Result<Self> {
        Session::new(meta, samples, self.taps.clone(), self.pins.clone())
    }

    /// Digit taps grouped per PIN entry, in order.
    pub fn digit_groups(&self) -> Vec<[Nanos; 4]> {
        let digits: Vec<Nanos> = self
            .taps
            .iter()
            .filter(|t| t.key.digit().is_some())
            .map(|t| t.t)
            .collect();
        digits
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect()
    }
}

fn validate(
    meta: &SessionMeta,
    samples: &[SensorSample],
    taps: &[TapEvent],
    pins: &[Pin],
) -> Result<()> {
    let bad = |m: String| Err(Error::Validation(m));

    if !(meta.rate_hz.is_finite() && meta.rate_hz > 0.0) {
        return bad(format!("rate_hz must be positive, got {}", meta.rate_hz));
    }
    if let Some(q) = meta.resolution_lux {
        if !(q.is_finite() && q > 0.0) {
            return bad(format!("resolution_lux must be positive, got {q}"));
        }
    }
    if samples.is_empty() && !meta.taps_only() {
        return bad("session has no samples".into());
    }
    if meta.taps_only() && !samples.is_empty() {
        return bad("taps-only session (sensor \"none\") must not carry samples".into());
    }

    let with_rgbw = samples.first().is_some_and(|s| s.rgbw.is_some());
    for (i, s) in samples.iter().enumerate() {
        if i > 0 && s.t <= samples[i - 1].t {
            return bad(format!(
                "sample {i}: timestamp {} not after previous {}",
                s.t,
                samples[i - 1].t
            ));
        }
        if !(s.lux.is_finite() && s.lux >= 0.0) {
            return bad(format!("sample {i}: lux {} must be finite and >= 0", s.lux));
        }
        match (&s.rgbw, with_rgbw) {
            (Some(c), true) => {
                if c.as_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad(format!("sample {i}: RGBW values must be finite and >= 0"));
                }
            }
            (None, false) => {}
            _ => {
                return bad(format!(
                    "sample {i}: RGBW present on some samples but not others"
                ))
            }
        }
        if let Some(q) = meta.resolution_lux {
            let steps = s.lux / q;
            if (steps - steps.round()).abs() > 1e-6 {
                return bad(format!(
                    "sample {i}: lux {} is not a multiple of resolution {q}",
                    s.lux
                ));
            }
        }
    }

    for (i, tap) in taps.iter().enumerate() {
        if i > 0 && tap.t <= taps[i - 1].t {
            return bad(format!("tap {i}: timestamp {} not after previous", tap.t));
        }
    }

    let digits: Vec<u8> = taps.iter().filter_map(|t| t.key.digit()).collect();
    if digits.len() != 4 * pins.len() {
        return bad(format!(
            "{} digit taps but {} PINs (expected {})",
            digits.len(),
            pins.len(),
            4 * pins.len()
        ));
    }
    for (p, (group, pin)) in digits.chunks_exact(4).zip(pins).enumerate() {
        if group != pin.digits() {
            let typed: String = group.iter().map(|d| char::from(b'0' + d)).collect();
            return bad(format!("PIN {p}: taps spell {typed} but label is {pin}"));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Session(SessionMeta),
    Sample {
        t: Nanos,
        lux: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<f64>,
    },
    Tap {
        t: Nanos,
        key: Key,
    },
    Pins {
        labels: Vec<Pin>,
    },
}

/// Parses a session JSONL stream and validates it.
pub fn parse_session<R: BufRead>(reader: R) -> Result<Session> {
    let mut meta = None;
    let mut samples = Vec::new();
    let mut taps = Vec::new();
    let mut pins: Option<Vec<Pin>> = None;
    let mut last_t: Option<Nanos> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line_no == 1 && line.starts_with('\u{feff}') {
            return Err(Error::Parse {
                line: 1,
                message: "byte-order mark not allowed".into(),
            });
        }
        let text = line.as_str();
        if text.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if pins.is_some() {
            return Err(perr("record after the final pins record".into()));
        }
        match rec {
            Record::Session(m) => {
                if meta.is_some() || line_no != 1 {
                    return Err(perr("session header must be the first line".into()));
                }
                meta = Some(m);
            }
            _ if meta.is_none() => {
                return Err(perr("missing session header on line 1".into()));
            }
            Record::Sample { t, lux, r, g, b, w } => {
                let rgbw = match (r, g, b, w) {
                    (Some(r), Some(g), Some(b), Some(w)) => Some(Rgbw { r, g, b, w }),
                    (None, None, None, None) => None,
                    _ => return Err(perr("r/g/b/w must be given together or not at all".into())),
                };
                check_order(&mut last_t, t).map_err(perr)?;
                samples.push(SensorSample { t, lux, rgbw });
            }
            Record::Tap { t, key } => {
                check_order(&mut last_t, t).map_err(perr)?;
                taps.push(TapEvent { t, key });
            }
            Record::Pins { labels } => pins = Some(labels),
        }
    }

    let meta = meta.ok_or(Error::Parse {
        line: 1,
        message: "empty stream".into(),
    })?;
    let pins = pins.ok_or_else(|| Error::Validation("missing final pins record".into()))?;
    Session::new(meta, samples, taps, pins)
}

fn check_order(last: &mut Option<Nanos>, t: Nanos) -> std::result::Result<(), String> {
    if let Some(prev) = *last {
        if t < prev {
            return Err(format!("timestamp {t} precedes previous record at {prev}"));
        }
    }
    *last = Some(t);
    Ok(())
}

/// Writes a session as JSONL. Samples and taps are merged by time; on equal
/// timestamps the sample comes first.
pub fn write_session<W: Write>(session: &Session, mut out: W) -> Result<()> {
    let line = |rec: &Record, out: &mut W| -> Result<()> {
        serde_json::to_writer(&mut *out, rec)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&Record::Session(session.meta.clone()), &mut out)?;

    let (mut si, mut ti) = (0, 0);
    let (samples, taps) = (&session.samples, &session.taps);
    while si < samples.len() || ti < taps.len() {
        let take_sample = match (samples.get(si), taps.get(ti)) {
            (Some(s), Some(t)) => s.t <= t.t,
            (Some(_), None) => true,
            _ => false,
        };
        if take_sample {
            let s = &samples[si];
            let c = s.rgbw;
            line(
                &Record::Sample {
                    t: s.t,
                    lux: s.lux,
                    r: c.map(|c| c.r),
                    g: c.map(|c| c.g),
                    b: c.map(|c| c.b),
                    w: c.map(|c| c.w),
                },
                &mut out,
            )?;
            si += 1;
        } else {
            let t = &taps[ti];
            line(&Record::Tap { t: t.t, key: t.key }, &mut out)?;
            ti += 1;
        }
    }
    line(
        &Record::Pins {
            labels: session.pins.clone(),
        },
        &mut out,
    )?;
    Ok(())
}

/// Serializes a session to bytes.
pub fn session_to_bytes(session: &Session) -> Vec<u8> {
    let mut buf = Vec::new();
    write_session(session, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// The samples spanning one PIN entry, with its label and digit timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PinWindow {
    pub label: Pin,
    pub rows: Vec<SensorSample>,
    pub tap_times: [Nanos; 4],
    /// Device name of the originating session, for error messages.
    pub device: String,
}

impl PinWindow {
    pub fn has_rgbw(&self) -> bool {
        self.rows.first().is_some_and(|s| s.rgbw.is_some())
    }

    /// Number of channels per row (1 for lux-only, 5 with RGBW).
    pub fn channel_count(&self) -> usize {
        if self.has_rgbw() {
            5
        } else {
            1
        }
    }

    /// Column `c` of the window (0 = lux, 1..=4 = R, G, B, W).
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|s| match (c, &s.rgbw) {
                (0, _) => s.lux,
                (1..=4, Some(x)) => x.as_array()[c - 1],
                _ => panic!("channel {c} not present in window"),
            })
            .collect()
    }
}

/// A PIN whose window could not be built.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedWindow {
    pub index: usize,
    pub label: Pin,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<PinWindow>,
    pub skipped: Vec<SkippedWindow>,
}

/// Cuts one window per PIN, spanning `[first tap - margin, last tap + margin]`.
/// Samples are copied as-is.
pub fn extract_windows(session: &Session, margin: Nanos) -> Result<WindowSet> {
    if margin < 0 {
        return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
    }
    let samples = session.samples();
    let mut set = WindowSet::default();
    for (index, (taps, label)) in session
        .digit_groups()
        .into_iter()
        .zip(session.pins())
        .enumerate()
    {
        let lo = taps[0].saturating_sub(margin);
        let hi = taps[3].saturating_add(margin);
        let start = samples.partition_point(|s| s.t < lo);
        let end = samples.partition_point(|s| s.t <= hi);
        if start >= end {
            set.skipped.push(SkippedWindow {
                index,
                label: label.clone(),
                reason: format!("no samples in [{lo}, {hi}]"),
            });
            continue;
        }
        set.windows.push(PinWindow {
            label: label.clone(),
            rows: samples[start..end].to_vec(),
            tap_times: taps,
            device: session.meta().device.clone(),
        });
    }
    Ok(set)
}

/// Nearest sample to `t`; an exact tie goes to the earlier sample.
pub fn sample_at(window: &PinWindow, t: Nanos) -> &SensorSample {
    let rows = &window.rows;
    let i = rows.partition_point(|s| s.t < t);
    if i == 0 {
        return &rows[0];
    }
    if i == rows.len() {
        return &rows[rows.len() - 1];
    }
    let (before, after) = (&rows[i - 1], &rows[i]);
    if (after.t - t) < (t - before.t) {
        after
    } else {
        before
    }
}
