//! Experiment specifications: a flat JSON object of scalar keys, with at most
//! one array-valued key naming the sweep axis.
//!
//! ```json
//! { "experiment": "rate-vs-snr", "snr_db": [0, 5, 10, 15, 20, 25, 30], "trials": 50 }
//! ```
//!
//! Keys not given take the per-experiment defaults from [`ExperimentSpec::defaults`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{ConfigParams, SystemConfig};
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_TRIALS: usize = 200;
pub const FULL_SCALE_TRIALS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EstNmse,
    RateVsSnr,
    RateVsBw,
    RateVsN,
    RateVsAntennas,
    RateVsVelocity,
    NmseVsG,
    NmseVsAoa,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::EstNmse,
        Experiment::RateVsSnr,
        Experiment::RateVsBw,
        Experiment::RateVsN,
        Experiment::RateVsAntennas,
        Experiment::RateVsVelocity,
        Experiment::NmseVsG,
        Experiment::NmseVsAoa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::EstNmse => "est-nmse",
            Experiment::RateVsSnr => "rate-vs-snr",
            Experiment::RateVsBw => "rate-vs-bw",
            Experiment::RateVsN => "rate-vs-n",
            Experiment::RateVsAntennas => "rate-vs-antennas",
            Experiment::RateVsVelocity => "rate-vs-velocity",
            Experiment::NmseVsG => "nmse-vs-g",
            Experiment::NmseVsAoa => "nmse-vs-aoa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }

    /// Achievable-rate experiment (as opposed to estimation NMSE).
    pub fn is_rate(&self) -> bool {
        !matches!(self, Experiment::EstNmse | Experiment::NmseVsG | Experiment::NmseVsAoa)
    }

    /// Sweep axes accepted by this experiment; the first is the default.
    pub fn axes(&self) -> &'static [Axis] {
        match self {
            Experiment::EstNmse => &[Axis::SnrDb, Axis::NT],
            Experiment::RateVsSnr => &[Axis::SnrDb],
            Experiment::RateVsBw => &[Axis::BandwidthMhz],
            Experiment::RateVsN => &[Axis::N],
            Experiment::RateVsAntennas => &[Axis::NA],
            Experiment::RateVsVelocity => &[Axis::SpeedKmh],
            Experiment::NmseVsG => &[Axis::Gap],
            Experiment::NmseVsAoa => &[Axis::AoaDeg, Axis::NT],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    SnrDb,
    AoaDeg,
    Gap,
    BandwidthMhz,
    N,
    NA,
    NT,
    SpeedKmh,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::SnrDb,
        Axis::AoaDeg,
        Axis::Gap,
        Axis::BandwidthMhz,
        Axis::N,
        Axis::NA,
        Axis::NT,
        Axis::SpeedKmh,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::AoaDeg => "aoa_deg",
            Axis::Gap => "gap",
            Axis::BandwidthMhz => "bandwidth_mhz",
            Axis::N => "n",
            Axis::NA => "n_a",
            Axis::NT => "n_t",
            Axis::SpeedKmh => "speed_kmh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.key() == s)
    }

    fn integral(&self) -> bool {
        matches!(self, Axis::Gap | Axis::N | Axis::NA | Axis::NT)
    }
}

/// Channel state used to build the downlink precoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Csi {
    Perfect,
    Estimated,
}

/// Everything about a trial that is not system dimensioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub paths: usize,
    pub speed_kmh: f64,
    pub snr_db: f64,
    /// Path delays are uniform in `[delay_min, delay_max]` samples.
    pub delay_min: f64,
    pub delay_max: f64,
    /// Fixed direction of arrival in degrees for every path; `None` draws it.
    pub aoa_deg: Option<f64>,
    /// Idle slots between the up-chirp sweep and the down-chirp.
    pub gap: usize,
    /// Detection threshold; `None` uses [`default_eta`] for the point's `M`.
    pub eta: Option<f64>,
    pub csi: Csi,
}

/// Threshold on `max|R|²/Σ|R|²` for a 1e-3 false-alarm rate on white noise:
/// `P(max > x) ≈ M e^{-Mx}`.
pub fn default_eta(m: usize) -> f64 {
    let m = m as f64;
    (m / 1e-3).ln() / m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub config: ConfigParams,
    pub scenario: Scenario,
    pub sweep: Sweep,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<String>,
}

const CONFIG_KEYS: [&str; 10] = ["f_c", "delta_f", "m", "n", "n_a", "n_r", "n_t", "n_cp", "n_cpp", "v_max"];
const SCENARIO_KEYS: [&str; 9] = [
    "paths",
    "speed_kmh",
    "snr_db",
    "delay_min",
    "delay_max",
    "aoa_deg",
    "gap",
    "eta",
    "csi",
];
const RUN_KEYS: [&str; 4] = ["experiment", "trials", "seed", "output"];

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k = ((hi - lo) / step).round() as usize;
    (0..=k).map(|i| lo + step * i as f64).collect()
}

impl ExperimentSpec {
    /// Defaults for one experiment, at desk scale or at the full reference scale.
    pub fn defaults(experiment: Experiment, full_scale: bool) -> Self {
        let mut c = if full_scale {
            ConfigParams::reference()
        } else {
            ConfigParams::desk()
        };
        // desk B/f_c is too small for beam squint to show; several sweeps
        // run at the reference B/f_c with a desk-size M
        let wide = !full_scale;
        let mut s = Scenario {
            paths: 2,
            speed_kmh: 250.0,
            snr_db: 20.0,
            delay_min: 0.0,
            delay_max: (c.n_cp - 2) as f64,
            aoa_deg: None,
            gap: 0,
            eta: None,
            csi: Csi::Perfect,
        };
        let snr_axis = steps(0.0, 30.0, 5.0);
        let (axis, values) = match experiment {
            Experiment::EstNmse => (Axis::SnrDb, snr_axis),
            Experiment::NmseVsAoa => {
                if wide {
                    c.delta_f = 4e6;
                }
                s.paths = 1;
                s.snr_db = 15.0;
                (Axis::AoaDeg, steps(0.0, 60.0, 15.0))
            }
            Experiment::NmseVsG => {
                // squint removed: one antenna per TTD line
                c.n_t = c.n_a;
                s.paths = 1;
                s.snr_db = 15.0;
                s.delay_min = 4.0;
                s.delay_max = (c.n_cpp - 4) as f64;
                (Axis::Gap, vec![4000.0, 8000.0, 16000.0, 32000.0])
            }
            Experiment::RateVsSnr => {
                if wide {
                    c.delta_f = 4e6;
                    c.n = 256;
                }
                (Axis::SnrDb, snr_axis)
            }
            Experiment::RateVsBw => {
                let values = if full_scale {
                    vec![128.0, 256.0, 512.0, 1024.0]
                } else {
                    vec![64.0, 128.0, 256.0, 512.0, 1024.0]
                };
                (Axis::BandwidthMhz, values)
            }
            Experiment::RateVsN => {
                if wide {
                    c.delta_f = 4e6;
                }
                let values = if full_scale {
                    vec![16.0, 32.0, 64.0, 128.0]
                } else {
                    vec![16.0, 32.0, 64.0, 128.0, 256.0]
                };
                (Axis::N, values)
            }
            Experiment::RateVsAntennas => {
                if wide {
                    c.delta_f = 4e6;
                }
                (Axis::NA, vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0])
            }
            Experiment::RateVsVelocity => {
                if wide {
                    c.delta_f = 4e6;
                    c.n = 64;
                }
                (Axis::SpeedKmh, steps(0.0, 250.0, 50.0))
            }
        };
        let mut spec = Self {
            experiment,
            config: c,
            scenario: s,
            sweep: Sweep { axis, values },
            trials: if full_scale { FULL_SCALE_TRIALS } else { DEFAULT_TRIALS },
            seed: DEFAULT_SEED,
            output: None,
        };
        spec.pin_axis();
        spec
    }

    /// The swept field holds the first sweep value, so the flat form (where
    /// the axis key carries the list) loses nothing.
    fn pin_axis(&mut self) {
        let Some(&v) = self.sweep.values.first() else { return };
        let (c, s) = (&mut self.config, &mut self.scenario);
        match self.sweep.axis {
            Axis::SnrDb => s.snr_db = v,
            Axis::AoaDeg => s.aoa_deg = Some(v),
            Axis::Gap => s.gap = v as usize,
            Axis::BandwidthMhz => c.m = (v * 1e6 / c.delta_f).round() as usize,
            Axis::N => c.n = v as usize,
            Axis::NA => c.n_a = v as usize,
            Axis::NT => c.n_t = v as usize,
            Axis::SpeedKmh => s.speed_kmh = v,
        }
    }

    pub fn from_file(path: impl AsRef<Path>, full_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text, full_scale)
    }

    /// Parse a spec (or a run manifest, whose `spec` member is used).
    pub fn parse(text: &str, full_scale: bool) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        let Value::Object(mut obj) = root else {
            return Err(Error::Parse("line 1: top level must be an object".into()));
        };
        if let Some(Value::Object(inner)) = obj.remove("spec") {
            obj = inner;
        }
        let line_of = |key: &str| {
            let pat = format!("\"{key}\"");
            text.lines().position(|l| l.contains(&pat)).map(|i| i + 1).unwrap_or(1)
        };
        let bad = |key: &str, what: &str| Error::Parse(format!("line {} field `{key}`: {what}", line_of(key)));

        let name = obj
            .get("experiment")
            .ok_or_else(|| Error::Parse("missing field `experiment`".into()))?
            .as_str()
            .ok_or_else(|| bad("experiment", "expected a string"))?;
        let experiment = Experiment::parse(name)?;
        let mut spec = Self::defaults(experiment, full_scale);

        let mut sweep: Option<(String, Vec<f64>)> = None;
        for (key, v) in &obj {
            let known = CONFIG_KEYS.contains(&key.as_str())
                || SCENARIO_KEYS.contains(&key.as_str())
                || RUN_KEYS.contains(&key.as_str())
                || Axis::parse(key).is_some();
            if !known {
                return Err(bad(key, "unknown key"));
            }
            if let Value::Array(items) = v {
                if sweep.is_some() {
                    return Err(bad(key, "only one sweep axis is allowed"));
                }
                let vals = items
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| bad(key, "sweep values must be numbers")))
                    .collect::<Result<Vec<f64>>>()?;
                sweep = Some((key.clone(), vals));
            }
        }
        if let Some((key, values)) = sweep {
            let axis = Axis::parse(&key)
                .filter(|a| experiment.axes().contains(a))
                .ok_or_else(|| Error::UnknownAxis(format!("{key} for {experiment}")))?;
            if axis.integral() && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(bad(&key, "sweep values must be non-negative integers"));
            }
            spec.sweep = Sweep { axis, values };
        }

        let f64_of = |key: &str, v: &Value| v.as_f64().ok_or_else(|| bad(key, "expected a number"));
        let usize_of = |key: &str, v: &Value| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| bad(key, "expected a non-negative integer"))
        };
        for (key, v) in &obj {
            if v.is_array() {
                continue;
            }
            let c = &mut spec.config;
            let s = &mut spec.scenario;
            match key.as_str() {
                "experiment" => {}
                "f_c" => c.f_c = f64_of(key, v)?,
                "delta_f" => c.delta_f = f64_of(key, v)?,
                "m" => c.m = usize_of(key, v)?,
                "n" => c.n = usize_of(key, v)?,
                "n_a" => c.n_a = usize_of(key, v)?,
                "n_r" => c.n_r = usize_of(key, v)?,
                "n_t" => c.n_t = usize_of(key, v)?,
                "n_cp" => c.n_cp = usize_of(key, v)?,
                "n_cpp" => c.n_cpp = usize_of(key, v)?,
                "v_max" => c.v_max = f64_of(key, v)?,
                "paths" => s.paths = usize_of(key, v)?,
                "speed_kmh" => s.speed_kmh = f64_of(key, v)?,
                "snr_db" => s.snr_db = f64_of(key, v)?,
                "delay_min" => s.delay_min = f64_of(key, v)?,
                "delay_max" => s.delay_max = f64_of(key, v)?,
                "aoa_deg" => s.aoa_deg = if v.is_null() { None } else { Some(f64_of(key, v)?) },
                "gap" => s.gap = usize_of(key, v)?,
                "eta" => s.eta = if v.is_null() { None } else { Some(f64_of(key, v)?) },
                "csi" => {
                    s.csi = match v.as_str() {
                        Some("perfect") => Csi::Perfect,
                        Some("estimated") => Csi::Estimated,
                        _ => return Err(bad(key, "expected \"perfect\" or \"estimated\"")),
                    }
                }
                "trials" => spec.trials = usize_of(key, v)?,
                "seed" => spec.seed = v.as_u64().ok_or_else(|| bad(key, "expected a non-negative integer"))?,
                "bandwidth_mhz" => return Err(bad(key, "only valid as a sweep axis")),
                "output" => spec.output = Some(v.as_str().ok_or_else(|| bad(key, "expected a string"))?.to_string()),
                _ => unreachable!("key checked above"),
            }
        }
        // delay range follows a changed prefix length unless given explicitly
        if !obj.contains_key("delay_max") && (obj.contains_key("n_cp") || obj.contains_key("n_cpp")) {
            let d = Self::defaults(experiment, full_scale);
            let shrink = d.config.n_cp as f64 - d.scenario.delay_max;
            spec.scenario.delay_max = (spec.config.n_cp.min(spec.config.n_cpp) as f64 - shrink).max(0.0);
        }
        spec.pin_axis();
        spec.check()?;
        Ok(spec)
    }

    /// Validates every sweep point's configuration.
    pub fn check(&self) -> Result<()> {
        for &v in &self.sweep.values {
            self.point(v)?;
        }
        Ok(())
    }

    /// Configuration and scenario at one sweep value.
    pub fn point(&self, value: f64) -> Result<(SystemConfig, Scenario)> {
        let mut c = self.config.clone();
        let mut s = self.scenario.clone();
        match self.sweep.axis {
            Axis::SnrDb => s.snr_db = value,
            Axis::AoaDeg => s.aoa_deg = Some(value),
            Axis::Gap => s.gap = value as usize,
            Axis::BandwidthMhz => {
                let m = (value * 1e6 / c.delta_f).round();
                if m < 2.0 || ((m * c.delta_f) - value * 1e6).abs() > 1e-6 * value * 1e6 {
                    return Err(Error::Range(format!(
                        "bandwidth {value} MHz is not a whole number of {} Hz subcarriers",
                        c.delta_f
                    )));
                }
                c.m = m as usize;
            }
            Axis::N => c.n = value as usize,
            Axis::NA => c.n_a = value as usize,
            Axis::NT => c.n_t = value as usize,
            Axis::SpeedKmh => s.speed_kmh = value,
        }
        c.noise_var = 10f64.powf(-s.snr_db / 10.0);
        if s.paths == 0 {
            return Err(Error::Range("paths must be >= 1".into()));
        }
        if !(0.0 <= s.delay_min && s.delay_min <= s.delay_max && s.delay_max <= c.n_cp.min(c.n_cpp) as f64) {
            return Err(Error::Range(format!(
                "delay range [{}, {}] outside [0, min(n_cp, n_cpp)]",
                s.delay_min, s.delay_max
            )));
        }
        if s.speed_kmh < 0.0 || s.speed_kmh / 3.6 > c.v_max * (1.0 + 1e-12) {
            return Err(Error::Range(format!("speed {} km/h outside [0, v_max]", s.speed_kmh)));
        }
        Ok((SystemConfig::validate(c)?, s))
    }

    /// Fully resolved flat form. Parsing it back gives the same spec.
    pub fn to_json(&self) -> Value {
        let c = &self.config;
        let s = &self.scenario;
        let mut m = Map::new();
        m.insert("experiment".into(), json!(self.experiment.name()));
        m.insert("f_c".into(), json!(c.f_c));
        m.insert("delta_f".into(), json!(c.delta_f));
        m.insert("m".into(), json!(c.m));
        m.insert("n".into(), json!(c.n));
        m.insert("n_a".into(), json!(c.n_a));
        m.insert("n_r".into(), json!(c.n_r));
        m.insert("n_t".into(), json!(c.n_t));
        m.insert("n_cp".into(), json!(c.n_cp));
        m.insert("n_cpp".into(), json!(c.n_cpp));
        m.insert("v_max".into(), json!(c.v_max));
        m.insert("paths".into(), json!(s.paths));
        m.insert("speed_kmh".into(), json!(s.speed_kmh));
        m.insert("snr_db".into(), json!(s.snr_db));
        m.insert("delay_min".into(), json!(s.delay_min));
        m.insert("delay_max".into(), json!(s.delay_max));
        m.insert("aoa_deg".into(), json!(s.aoa_deg));
        m.insert("gap".into(), json!(s.gap));
        m.insert("eta".into(), json!(s.eta));
        m.insert("csi".into(), json!(s.csi));
        m.insert("trials".into(), json!(self.trials));
        m.insert("seed".into(), json!(self.seed));
        if let Some(o) = &self.output {
            m.insert("output".into(), json!(o));
        }
        let values: Vec<Value> = self
            .sweep
            .values
            .iter()
            .map(|&v| if self.sweep.axis.integral() { json!(v as u64) } else { json!(v) })
            .collect();
        m.insert(self.sweep.axis.key().into(), Value::Array(values));
        Value::Object(m)
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON (sorted keys),
    /// output path excluded.
    pub fn config_hash(&self) -> String {
        let mut v = self.to_json();
        if let Value::Object(m) = &mut v {
            m.remove("output");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
