//! Hybrid downlink precoder: per-path analog steering, DD-domain compensation
//! `D`, TF-domain compensation `B`, ICI/ISI index sets, power allocation and
//! three baselines.
//!
//! Every `B` built here has the form `B[n,m] = c(n) e^{j2πm A(n)/M}` with a
//! block phase `c(n)` and a delay advance `A(n) = A₀ − nMβ̂` (in samples). The
//! transmitter therefore emits, in block `n`, the delay column `ℓ'` at
//! in-block position `ℓ' − A(n)` (mod `M`). [`ChainPrecoding`] keeps that
//! parametric form next to the dense matrices.
//!
//! The receiver samples `ℓ̄` early, which cancels the `ℓ̄` advance in `B`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analog::{self, AnalogConfig, ChainSetting};
use crate::channel::PathParams;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::{cis, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    /// TTD+PS analog, full `D` and `B`.
    Proposed,
    /// TTD+PS analog, `B` without the Doppler-squint term.
    DelayPhase,
    /// PS-only analog, full `D` and `B`.
    DopplerOnly,
    /// PS-only analog, `B` without the Doppler-squint term.
    Traditional,
}

impl PrecoderKind {
    pub const ALL: [PrecoderKind; 4] = [
        PrecoderKind::Proposed,
        PrecoderKind::DelayPhase,
        PrecoderKind::DopplerOnly,
        PrecoderKind::Traditional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrecoderKind::Proposed => "proposed",
            PrecoderKind::DelayPhase => "delay_phase",
            PrecoderKind::DopplerOnly => "doppler_only",
            PrecoderKind::Traditional => "traditional",
        }
    }

    pub fn uses_ttd(self) -> bool {
        matches!(self, PrecoderKind::Proposed | PrecoderKind::DelayPhase)
    }

    pub fn doppler_squint(self) -> bool {
        matches!(self, PrecoderKind::Proposed | PrecoderKind::DopplerOnly)
    }
}

/// Which ICI/ISI split drives the `e^{j2πk'/N}` factor of `D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexRule {
    /// `ISI = {1 ≤ ℓ' < ℓ̂+ℓ̄−1}`, `ICI = {ℓ̂+ℓ̄−1 ≤ ℓ' ≤ M−1}`.
    Printed,
    /// `ISI = {ℓ' < A₀}`: the columns the advance wraps into the previous block.
    #[default]
    Physical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub ici: Vec<usize>,
    pub isi: Vec<usize>,
}

impl IndexSets {
    pub fn printed(ell_hat: f64, ell_bar: f64, m: usize) -> Self {
        let edge = ell_hat + ell_bar - 1.0;
        let ici = (0..m).filter(|&l| l as f64 >= edge).collect();
        let isi = (1..m).filter(|&l| (l as f64) < edge).collect();
        Self { ici, isi }
    }

    pub fn physical(advance: f64, m: usize) -> Self {
        let (isi, ici) = (0..m).partition(|&l| (l as f64) < advance);
        Self { ici, isi }
    }

    pub fn is_isi(&self, l: usize) -> bool {
        self.isi.binary_search(&l).is_ok()
    }

    /// First ICI column (or `M` if none); for [`IndexRule::Physical`] the sets are `[0, b)` and `[b, M)`.
    pub fn boundary(&self, m: usize) -> usize {
        self.ici.first().copied().unwrap_or(m)
    }
}

/// Parametric form of one chain's digital precoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPrecoding {
    /// Path served by this chain (index into the estimate list).
    pub path: usize,
    /// `A₀`, samples.
    pub advance: f64,
    /// `β̂` applied in `B` (zero when the Doppler-squint term is omitted).
    pub drift: f64,
    pub k_hat: f64,
    pub nu_hat: f64,
    /// `c(0)`.
    pub phase: C64,
    pub sets: IndexSets,
    /// `√ρ`.
    pub amplitude: f64,
}

impl ChainPrecoding {
    /// `A(n)` in samples; `n = −1` is the frame prefix.
    pub fn advance_at(&self, n: i64, cfg: &SystemConfig) -> f64 {
        self.advance - n as f64 * cfg.m as f64 * self.drift
    }

    pub fn phase_at(&self, n: i64, cfg: &SystemConfig) -> C64 {
        self.phase * cis(-(n as f64) * self.k_hat / cfg.n as f64)
    }

    pub fn tf(&self, n: i64, m: usize, cfg: &SystemConfig) -> C64 {
        self.phase_at(n, cfg) * cis(m as f64 * self.advance_at(n, cfg) / cfg.m as f64)
    }

    /// `D̄[k',ℓ']` without the power factor.
    pub fn dd(&self, k: usize, l: usize, cfg: &SystemConfig) -> C64 {
        let base = cis(-self.nu_hat * l as f64 * cfg.t_s);
        if self.sets.is_isi(l) {
            base * cis((k as f64 - self.k_hat) / cfg.n as f64)
        } else {
            base
        }
    }

    /// TF row of the frame prefix ("block −1").
    pub fn prefix_row(&self, cfg: &SystemConfig) -> Vec<C64> {
        (0..cfg.m).map(|m| self.tf(-1, m, cfg)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecoderConfig {
    pub kind: PrecoderKind,
    /// Per chain, `N × M`, power excluded.
    pub dd_matrix: Vec<Array2<C64>>,
    /// Per chain, `N × M`.
    pub tf_matrix: Vec<Array2<C64>>,
    pub analog: AnalogConfig,
    /// Per chain `√ρ`; zero for unmapped chains.
    pub power: Vec<f64>,
    /// Per path, the chain serving it.
    pub mapping: Vec<Option<usize>>,
    pub ell_bar: f64,
    pub chains: Vec<Option<ChainPrecoding>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecoderOptions {
    pub rule: IndexRule,
    /// Transmit energy per frame.
    pub e_u: f64,
}

impl PrecoderOptions {
    /// Unit energy per DD symbol, `E_u = MN`.
    pub fn unit_symbol(cfg: &SystemConfig) -> Self {
        Self {
            rule: IndexRule::Physical,
            e_u: (cfg.m * cfg.n) as f64,
        }
    }
}

/// Chain assignment by descending `|α̂|`; paths beyond `N_R` stay unmapped.
pub fn default_mapping(paths: &[PathParams], cfg: &SystemConfig) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| paths[b].gain.norm().total_cmp(&paths[a].gain.norm()).then(a.cmp(&b)));
    let mut out = vec![None; paths.len()];
    for (c, &p) in order.iter().take(cfg.n_r).enumerate() {
        out[p] = Some(c);
    }
    out
}

fn check_mapping(mapping: &[Option<usize>], n_paths: usize, cfg: &SystemConfig) -> Result<()> {
    if mapping.len() != n_paths {
        return Err(Error::Mapping(format!("{} entries for {n_paths} paths", mapping.len())));
    }
    let mut used = vec![false; cfg.n_r];
    for (p, c) in mapping.iter().enumerate() {
        if let Some(c) = *c {
            if c >= cfg.n_r {
                return Err(Error::Mapping(format!("path {p} mapped to chain {c} >= n_r = {}", cfg.n_r)));
            }
            if used[c] {
                return Err(Error::Mapping(format!("chain {c} serves more than one path")));
            }
            used[c] = true;
        }
    }
    Ok(())
}

fn chain_to_path(mapping: &[Option<usize>], n_r: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n_r];
    for (p, c) in mapping.iter().enumerate() {
        if let Some(c) = *c {
            out[c] = Some(p);
        }
    }
    out
}

/// Analog steering of one chain for a precoder kind.
pub fn chain_steering(kind: PrecoderKind, psi_hat: f64, cfg: &SystemConfig) -> ChainSetting {
    if kind.uses_ttd() {
        analog::precode(cfg, psi_hat)
    } else {
        analog::ps_only(cfg, psi_hat)
    }
}

/// Common carrier phase (cycles) of a steered chain toward `ψ̂`, and the
/// baseband delay (samples) that `B` advances for it.
///
/// TTD kinds advance by the mean propagation delay of the steered beam,
/// `t̃/T_s + (N_P−1)ψ̂/(2 f_c T_s)`; PS-only kinds have no delay to undo.
fn steering_offsets(kind: PrecoderKind, s: &ChainSetting, psi_hat: f64, cfg: &SystemConfig) -> (f64, f64) {
    let np = s.ps.ncols();
    let mut acc = C64::new(0.0, 0.0);
    let mut delay = 0.0;
    for (d, &t) in s.ttd.iter().enumerate() {
        for k in 0..np {
            let a = (d * np + k) as f64;
            acc += cis(s.ps[[d, k]] - cfg.f_c * t - a * psi_hat);
            delay += t / cfg.t_s + a * psi_hat / cfg.fc_ts();
        }
    }
    let theta = acc.arg() / std::f64::consts::TAU;
    let g = if kind.uses_ttd() {
        delay / (s.ttd.len() * np) as f64
    } else {
        0.0
    };
    (theta, g)
}

fn plan_chain(
    kind: PrecoderKind,
    path: usize,
    est: &PathParams,
    ell_bar: f64,
    rule: IndexRule,
    cfg: &SystemConfig,
) -> Result<ChainPrecoding> {
    let alpha = est.equivalent_gain(cfg);
    if alpha.norm() == 0.0 {
        return Err(Error::ZeroGain(format!("path {path} has zero gain")));
    }
    let s = chain_steering(kind, est.angle, cfg);
    let (theta, g) = steering_offsets(kind, &s, est.angle, cfg);
    let ell = est.ell(cfg);
    let advance = ell + ell_bar + g;
    let nu = est.doppler;
    let phase = alpha.conj() / alpha.norm() * cis(nu * ell_bar * cfg.t_s) * cis(-theta);
    let sets = match rule {
        IndexRule::Printed => IndexSets::printed(ell, ell_bar, cfg.m),
        IndexRule::Physical => IndexSets::physical(advance, cfg.m),
    };
    Ok(ChainPrecoding {
        path,
        advance,
        drift: if kind.doppler_squint() { nu / cfg.f_c } else { 0.0 },
        k_hat: nu * cfg.n as f64 * cfg.t_sym,
        nu_hat: nu,
        phase,
        sets,
        amplitude: 0.0,
    })
}

fn plans(
    kind: PrecoderKind,
    paths: &[PathParams],
    mapping: &[Option<usize>],
    ell_bar: f64,
    rule: IndexRule,
    cfg: &SystemConfig,
) -> Result<Vec<Option<ChainPrecoding>>> {
    check_mapping(mapping, paths.len(), cfg)?;
    chain_to_path(mapping, cfg.n_r)
        .into_iter()
        .map(|p| p.map(|p| plan_chain(kind, p, &paths[p], ell_bar, rule, cfg)).transpose())
        .collect()
}

/// `D` per chain (power excluded) and the index sets of mapped chains.
pub fn build_dd_precoding(
    paths: &[PathParams],
    mapping: &[Option<usize>],
    ell_bar: f64,
    rule: IndexRule,
    cfg: &SystemConfig,
) -> Result<(Vec<Array2<C64>>, Vec<Option<IndexSets>>)> {
    let ps = plans(PrecoderKind::Proposed, paths, mapping, ell_bar, rule, cfg)?;
    Ok((
        ps.iter().map(|p| dd_matrix(p.as_ref(), cfg)).collect(),
        ps.into_iter().map(|p| p.map(|p| p.sets)).collect(),
    ))
}

/// `B` per chain for the full (proposed) precoder.
pub fn build_tf_precoding(
    paths: &[PathParams],
    mapping: &[Option<usize>],
    ell_bar: f64,
    cfg: &SystemConfig,
) -> Result<Vec<Array2<C64>>> {
    let ps = plans(PrecoderKind::Proposed, paths, mapping, ell_bar, IndexRule::Physical, cfg)?;
    Ok(ps.iter().map(|p| tf_matrix(p.as_ref(), cfg)).collect())
}

fn dd_matrix(p: Option<&ChainPrecoding>, cfg: &SystemConfig) -> Array2<C64> {
    match p {
        Some(p) => Array2::from_shape_fn((cfg.n, cfg.m), |(k, l)| p.dd(k, l, cfg)),
        None => Array2::zeros((cfg.n, cfg.m)),
    }
}

fn tf_matrix(p: Option<&ChainPrecoding>, cfg: &SystemConfig) -> Array2<C64> {
    match p {
        Some(p) => Array2::from_shape_fn((cfg.n, cfg.m), |(n, m)| p.tf(n as i64, m, cfg)),
        None => Array2::from_elem((cfg.n, cfg.m), C64::new(1.0, 0.0)),
    }
}

/// Midpoint of the `ℓ̄` interval allowed by `0 < ℓ̄ − (s−1)ψ̂/(f_c T_s) + Mβ̂ < 1`
/// for every sub-array position `s` and `0 < ℓ̄ − M n' β̂ < 1` for every block
/// `n'`, intersected over the mapped paths.
pub fn choose_ell_bar(paths: &[PathParams], mapping: &[Option<usize>], cfg: &SystemConfig) -> Result<f64> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut lo_why, mut hi_why) = (String::new(), String::new());
    let m = cfg.m as f64;
    for (p, est) in paths.iter().enumerate() {
        if mapping.get(p).copied().flatten().is_none() {
            continue;
        }
        let beta = est.beta(cfg);
        let limit = cfg.nu_max / cfg.f_c;
        if beta.abs() > limit * (1.0 + 1e-12) {
            return Err(Error::Infeasible(format!(
                "path {p}: |nu/f_c| = {:e} exceeds nu_max/f_c = {limit:e}",
                beta.abs()
            )));
        }
        for s in 0..cfg.n_p {
            let l = s as f64 * est.angle / cfg.fc_ts() - m * beta;
            if l > lo {
                lo = l;
                lo_why = format!("path {p}, sub-array position {}", s + 1);
            }
            if l + 1.0 < hi {
                hi = l + 1.0;
                hi_why = format!("path {p}, sub-array position {}", s + 1);
            }
        }
        for n in 0..cfg.n {
            let l = m * n as f64 * beta;
            if l > lo {
                lo = l;
                lo_why = format!("path {p}, block {n}");
            }
            if l + 1.0 < hi {
                hi = l + 1.0;
                hi_why = format!("path {p}, block {n}");
            }
        }
    }
    if lo == f64::NEG_INFINITY {
        return Ok(0.5);
    }
    if lo >= hi {
        return Err(Error::Infeasible(format!(
            "empty interval ({lo}, {hi}): lower bound from {lo_why}, upper bound from {hi_why}"
        )));
    }
    Ok(0.5 * (lo + hi))
}

/// `√ρ_p = √(E_u/(MN N_A)) |α̂_p| / √(Σ|α̂|²)`.
pub fn allocate_power(gains: &[C64], e_u: f64, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let total: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
    if total == 0.0 {
        return Err(Error::ZeroGain("all path gains are zero".into()));
    }
    let base = (e_u / ((cfg.m * cfg.n * cfg.n_a) as f64)).sqrt();
    Ok(gains.iter().map(|g| base * g.norm() / total.sqrt()).collect())
}

/// Full precoder of the given kind for path estimates referenced to the frame start.
pub fn build_precoder(
    kind: PrecoderKind,
    paths: &[PathParams],
    opts: &PrecoderOptions,
    cfg: &SystemConfig,
) -> Result<PrecoderConfig> {
    build_precoder_with(kind, paths, &default_mapping(paths, cfg), opts, cfg)
}

pub fn build_precoder_with(
    kind: PrecoderKind,
    paths: &[PathParams],
    mapping: &[Option<usize>],
    opts: &PrecoderOptions,
    cfg: &SystemConfig,
) -> Result<PrecoderConfig> {
    check_mapping(mapping, paths.len(), cfg)?;
    let ell_bar = choose_ell_bar(paths, mapping, cfg)?;
    let mut chains = plans(kind, paths, mapping, ell_bar, opts.rule, cfg)?;
    let served: Vec<C64> = chains
        .iter()
        .flatten()
        .map(|c| paths[c.path].equivalent_gain(cfg))
        .collect();
    let amps = allocate_power(&served, opts.e_u, cfg)?;
    for (c, a) in chains.iter_mut().flatten().zip(amps) {
        c.amplitude = a;
    }
    let mut settings = vec![ChainSetting::zeros(cfg); cfg.n_r];
    for (c, plan) in chains.iter().enumerate() {
        if let Some(p) = plan {
            settings[c] = chain_steering(kind, paths[p.path].angle, cfg);
        }
    }
    Ok(PrecoderConfig {
        kind,
        dd_matrix: chains.iter().map(|p| dd_matrix(p.as_ref(), cfg)).collect(),
        tf_matrix: chains.iter().map(|p| tf_matrix(p.as_ref(), cfg)).collect(),
        analog: AnalogConfig::from_chains(cfg, &settings),
        power: chains.iter().map(|p| p.as_ref().map_or(0.0, |p| p.amplitude)).collect(),
        mapping: mapping.to_vec(),
        ell_bar,
        chains,
    })
}

/// One of the three comparison precoders.
pub fn build_baseline(
    kind: PrecoderKind,
    paths: &[PathParams],
    opts: &PrecoderOptions,
    cfg: &SystemConfig,
) -> Result<PrecoderConfig> {
    build_precoder(kind, paths, opts, cfg)
}

/// Undo (`sign = −1`) or apply (`sign = +1`) a receive-side delay shift of
/// `ℓ̄` samples on a TF grid.
pub fn shift_ell_bar(y: &Array2<C64>, ell_bar: f64, sign: f64) -> Array2<C64> {
    let m = y.ncols() as f64;
    let mut out = y.clone();
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v *= cis(sign * k as f64 * ell_bar / m);
        }
    }
    out
}
