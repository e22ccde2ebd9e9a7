//! TTD + phase-shifter network.
//!
//! Chain `c` feeds `N_T` true-time-delay lines; line `d` feeds `N_P` phase
//! shifters, one per antenna `a = (d−1)N_P + s`. Delays are in seconds, phases
//! in cycles.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::fft::{Direction, Planner};
use crate::modem::TimeSignal;
use crate::{cis, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogConfig {
    /// `t_{c,d}`, shape `N_R × N_T`, seconds.
    pub ttd: Array2<f64>,
    /// `Ψ_{c,d,s}`, shape `N_R × N_T × N_P`, cycles.
    pub ps: Array3<f64>,
}

/// Settings of a single chain: `N_T` delays and `N_T × N_P` phases.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSetting {
    pub ttd: Vec<f64>,
    pub ps: Array2<f64>,
}

impl ChainSetting {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self {
            ttd: vec![0.0; cfg.n_t],
            ps: Array2::zeros((cfg.n_t, cfg.n_p)),
        }
    }
}

/// Common TTD offset `t̃ = (N_T−1) N_P / (2 f_c)` that keeps every steering delay non-negative.
pub fn ttd_offset(cfg: &SystemConfig) -> f64 {
    (cfg.n_t as f64 - 1.0) * cfg.n_p as f64 / (2.0 * cfg.f_c)
}

fn sweep(cfg: &SystemConfig, psi_bar: f64, sign: f64) -> ChainSetting {
    let t0 = ttd_offset(cfg);
    let np = cfg.n_p as f64;
    let corr = 1.0 + sign * cfg.kappa() * (cfg.m as f64 - 1.0) / cfg.fc_ts();
    ChainSetting {
        ttd: (0..cfg.n_t).map(|d| t0 + d as f64 * np * psi_bar / cfg.f_c).collect(),
        ps: Array2::from_shape_fn((cfg.n_t, cfg.n_p), |(_, s)| wrap(-(s as f64) * corr * psi_bar)),
    }
}

/// Receive steering for the up-chirp sweep toward paths at `ψ = −ψ̄`.
pub fn sweep_up(cfg: &SystemConfig, psi_bar: f64) -> ChainSetting {
    sweep(cfg, psi_bar, 1.0)
}

/// Receive steering for the down-chirp slot.
pub fn sweep_down(cfg: &SystemConfig, psi_bar: f64) -> ChainSetting {
    sweep(cfg, psi_bar, -1.0)
}

/// Transmit steering toward `ψ̂` with TTD-based squint compensation:
/// `t_d = t̃ − (d−1) N_P ψ̂ / f_c`, `Ψ_{d,s} = (s−1) ψ̂`.
pub fn precode(cfg: &SystemConfig, psi_hat: f64) -> ChainSetting {
    let t0 = ttd_offset(cfg);
    let np = cfg.n_p as f64;
    ChainSetting {
        ttd: (0..cfg.n_t).map(|d| t0 - d as f64 * np * psi_hat / cfg.f_c).collect(),
        ps: Array2::from_shape_fn((cfg.n_t, cfg.n_p), |(_, s)| wrap(s as f64 * psi_hat)),
    }
}

/// Phase-only steering toward `ψ̂`: no delays, `Ψ_{d,s} = (a−1) ψ̂`.
pub fn ps_only(cfg: &SystemConfig, psi_hat: f64) -> ChainSetting {
    ChainSetting {
        ttd: vec![0.0; cfg.n_t],
        ps: Array2::from_shape_fn((cfg.n_t, cfg.n_p), |(d, s)| wrap((d * cfg.n_p + s) as f64 * psi_hat)),
    }
}

fn wrap(x: f64) -> f64 {
    x.rem_euclid(1.0)
}

/// Every chain steered to the same up-chirp sweep angle.
pub fn sweep_config_up(psi_bar: f64, cfg: &SystemConfig) -> AnalogConfig {
    AnalogConfig::uniform(cfg, &sweep_up(cfg, psi_bar))
}

pub fn sweep_config_down(psi_bar: f64, cfg: &SystemConfig) -> AnalogConfig {
    AnalogConfig::uniform(cfg, &sweep_down(cfg, psi_bar))
}

pub fn precode_config(psi_hat: f64, cfg: &SystemConfig) -> AnalogConfig {
    AnalogConfig::uniform(cfg, &precode(cfg, psi_hat))
}

impl AnalogConfig {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self {
            ttd: Array2::zeros((cfg.n_r, cfg.n_t)),
            ps: Array3::zeros((cfg.n_r, cfg.n_t, cfg.n_p)),
        }
    }

    pub fn uniform(cfg: &SystemConfig, s: &ChainSetting) -> Self {
        Self::from_chains(cfg, &vec![s.clone(); cfg.n_r])
    }

    pub fn from_chains(cfg: &SystemConfig, chains: &[ChainSetting]) -> Self {
        let mut out = Self::zeros(cfg);
        for (c, s) in chains.iter().enumerate().take(cfg.n_r) {
            out.set_chain(c, s);
        }
        out
    }

    pub fn set_chain(&mut self, c: usize, s: &ChainSetting) {
        for (d, t) in s.ttd.iter().enumerate() {
            self.ttd[[c, d]] = *t;
        }
        for ((d, k), v) in s.ps.indexed_iter() {
            self.ps[[c, d, k]] = *v;
        }
    }

    pub fn chain(&self, c: usize) -> ChainSetting {
        ChainSetting {
            ttd: self.ttd.row(c).to_vec(),
            ps: self.ps.index_axis(ndarray::Axis(0), c).to_owned(),
        }
    }

    pub fn n_r(&self) -> usize {
        self.ttd.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.ttd.ncols()
    }

    pub fn n_p(&self) -> usize {
        self.ps.dim().2
    }

    /// Negated delays and phases; [`apply_rx`] with this config is the adjoint of [`apply_tx`].
    pub fn adjoint(&self) -> Self {
        Self {
            ttd: self.ttd.mapv(|t| -t),
            ps: self.ps.mapv(|p| -p),
        }
    }

    /// Round every delay to a multiple of `step` seconds.
    pub fn quantize_ttd(&self, step: f64) -> Self {
        let mut out = self.clone();
        out.ttd.mapv_inplace(|t| (t / step).round() * step);
        out
    }
}

/// Array factor of one chain toward `ψ` on subcarrier `m`:
/// `Σ_{d,s} e^{j2πΨ_{d,s}} e^{-j2π(f_c + mΔf)(t_d + (a−1)ψ/f_c)}`.
pub fn array_gain(cfg: &SystemConfig, s: &ChainSetting, psi: f64, m: usize) -> C64 {
    let f = cfg.f_c + m as f64 * cfg.delta_f;
    let mut acc = C64::new(0.0, 0.0);
    for d in 0..s.ttd.len() {
        for k in 0..s.ps.ncols() {
            let a = (d * s.ps.ncols() + k) as f64;
            let delay_cycles = f * s.ttd[d] + (1.0 + m as f64 * cfg.delta_f / cfg.f_c) * a * psi;
            acc += cis(s.ps[[d, k]] - delay_cycles);
        }
    }
    acc
}

/// Cyclic passband delay of a sampled stream: multiply bin `k` of its DFT by
/// `e^{-j2π(f_c + k B/L) t}` (band `[0, B)`).
pub struct PassbandDelay {
    planner: Planner<f64>,
}

impl Default for PassbandDelay {
    fn default() -> Self {
        Self::new()
    }
}

impl PassbandDelay {
    pub fn new() -> Self {
        Self {
            planner: Planner::new(),
        }
    }

    pub fn spectrum(&mut self, x: &[C64]) -> Vec<C64> {
        let mut buf = x.to_vec();
        self.planner.run(&mut buf, Direction::Forward);
        buf
    }

    /// Delay given the forward spectrum of the stream.
    pub fn delay_spectrum(&mut self, spec: &[C64], cfg: &SystemConfig, t: f64) -> Vec<C64> {
        let l = spec.len();
        let mut buf: Vec<C64> = spec
            .iter()
            .enumerate()
            .map(|(k, v)| v * cis(-(cfg.f_c + k as f64 * cfg.bandwidth / l as f64) * t))
            .collect();
        self.planner.run(&mut buf, Direction::Inverse);
        let s = 1.0 / l as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        buf
    }
}

fn check_lengths(sigs: &[TimeSignal<f64>], want: usize, what: &str) -> Result<usize> {
    if sigs.len() != want {
        return Err(Error::DimMismatch(format!("{} {what} streams, expected {want}", sigs.len())));
    }
    let len = sigs.first().map(|s| s.samples.len()).unwrap_or(0);
    if sigs.iter().any(|s| s.samples.len() != len) {
        return Err(Error::DimMismatch(format!("{what} streams differ in length")));
    }
    Ok(len)
}

/// `x_a(t) = Σ_c s_c(t − t_{c,d}) e^{j2πΨ_{c,d,s}}` with cyclic passband delays.
pub fn apply_tx(rf: &[TimeSignal<f64>], cfg: &SystemConfig, ac: &AnalogConfig) -> Result<Vec<TimeSignal<f64>>> {
    let len = check_lengths(rf, ac.n_r(), "RF")?;
    let (nt, np) = (ac.n_t(), ac.n_p());
    let mut pd = PassbandDelay::new();
    let mut out = vec![vec![C64::new(0.0, 0.0); len]; nt * np];
    for (c, s) in rf.iter().enumerate() {
        let spec = pd.spectrum(&s.samples);
        for d in 0..nt {
            let delayed = pd.delay_spectrum(&spec, cfg, ac.ttd[[c, d]]);
            for k in 0..np {
                let w = cis(ac.ps[[c, d, k]]);
                for (o, v) in out[d * np + k].iter_mut().zip(&delayed) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|samples| TimeSignal {
            samples,
            start_offset: rf[0].start_offset,
            framing: rf[0].framing,
        })
        .collect())
}

/// `r_c(t) = Σ_{d,s} x_a(t − t_{c,d}) e^{j2πΨ_{c,d,s}}` with cyclic passband delays.
pub fn apply_rx(ant: &[TimeSignal<f64>], cfg: &SystemConfig, ac: &AnalogConfig) -> Result<Vec<TimeSignal<f64>>> {
    let (nt, np) = (ac.n_t(), ac.n_p());
    let len = check_lengths(ant, nt * np, "antenna")?;
    let mut pd = PassbandDelay::new();
    let mut out = Vec::with_capacity(ac.n_r());
    for c in 0..ac.n_r() {
        let mut acc = vec![C64::new(0.0, 0.0); len];
        for d in 0..nt {
            let mut group = vec![C64::new(0.0, 0.0); len];
            for k in 0..np {
                let w = cis(ac.ps[[c, d, k]]);
                for (g, v) in group.iter_mut().zip(&ant[d * np + k].samples) {
                    *g += w * v;
                }
            }
            let spec = pd.spectrum(&group);
            for (a, v) in acc.iter_mut().zip(pd.delay_spectrum(&spec, cfg, ac.ttd[[c, d]])) {
                *a += v;
            }
        }
        out.push(TimeSignal {
            samples: acc,
            start_offset: ant[0].start_offset,
            framing: ant[0].framing,
        });
    }
    Ok(out)
}
