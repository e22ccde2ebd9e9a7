//! Downlink: simulated waveform chain, closed-form DD input-output model and a
//! fast per-grid SINR evaluator.
//!
//! Geometry shared by all three. The frame prefix starts at `u = 0`, block `b`
//! has its body at `N_cp + bM`, and path delays are referenced to `t_ref = N_cp`.
//! Chain `c` reaches the user through antenna `a` of path `p` as an echo with
//! delay `E = ℓ_p + (a−1)ψ_p/(f_c T_s) + t_{c,d}/T_s` that drifts as
//! `E − β_p (t − t_ref)`. The receiver samples block `n` at
//! `N_cp + nM − ℓ̄ + i`.
//!
//! With `B[n,m] = c(n) e^{j2πmA(n)/M}`, column `ℓ'` of block `b` leaves the
//! transmitter at in-block position `q = (ℓ' − A(b)) mod M` and lands at
//! `L = q + E_b + ℓ̄` in receive block `b`, or in block `b+1` once `L` passes
//! `M − ½`. That landing rule is the ICI/ISI split; the closed form treats each
//! landing as an impulse, which is exact for integer landings.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{awgn, render, ChannelRealization, Echo};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::fft::{Direction, Planner};
use crate::metrics::{rate, sinr};
use crate::modem::Modem;
use crate::precoder::{ChainPrecoding, PrecoderConfig};
use crate::waveform::{FramedWaveform, Waveform};
use crate::{cis, C64};

/// Largest frame the sample-level chain and the closed form accept.
pub const ORACLE_MAX_M: usize = 64;
pub const ORACLE_MAX_N: usize = 8;

fn check_budget(cfg: &SystemConfig) -> Result<()> {
    if cfg.m > ORACLE_MAX_M || cfg.n > ORACLE_MAX_N {
        return Err(Error::Scale(format!(
            "{}x{} frame exceeds the {ORACLE_MAX_M}x{ORACLE_MAX_N} budget",
            cfg.m, cfg.n
        )));
    }
    Ok(())
}

fn check_grid(cfg: &SystemConfig, x: &Array2<C64>) -> Result<()> {
    if x.dim() != (cfg.n, cfg.m) {
        return Err(Error::DimMismatch(format!("grid {:?}, expected ({}, {})", x.dim(), cfg.n, cfg.m)));
    }
    Ok(())
}

/// One antenna-level echo of one chain.
#[derive(Clone, Copy, Debug)]
struct EchoTerm {
    p: usize,
    c: usize,
    /// Delay at `t_ref`, samples.
    e: f64,
    beta: f64,
    /// `α̃ e^{j2πΨ}`.
    gain: C64,
}

fn echo_terms(cfg: &SystemConfig, real: &ChannelRealization, pre: &PrecoderConfig) -> Vec<EchoTerm> {
    let mut out = Vec::new();
    for (c, ch) in pre.chains.iter().enumerate() {
        if ch.is_none() || pre.power[c] == 0.0 {
            continue;
        }
        for (p, path) in real.paths.iter().enumerate() {
            let beta = path.beta(cfg);
            for a in 0..cfg.n_a {
                let (d, s) = (a / cfg.n_p, a % cfg.n_p);
                out.push(EchoTerm {
                    p,
                    c,
                    e: path.antenna_delay_samples(cfg, a + 1) + pre.analog.ttd[[c, d]] / cfg.t_s,
                    beta,
                    gain: path.gain * cis(pre.analog.ps[[c, d, s]]),
                });
            }
        }
    }
    out
}

/// Transmit the DD grid `x` through the precoder, the analog network and the
/// channel, sample, and demodulate. Noise of variance `noise_var` per sample
/// is added when `noise` carries a seed.
pub fn simulate_downlink(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    pre: &PrecoderConfig,
    x: &Array2<C64>,
    noise: Option<(u64, f64)>,
) -> Result<Array2<C64>> {
    check_budget(cfg)?;
    check_grid(cfg, x)?;
    let mut modem = Modem::<f64>::new();
    let mut waves: Vec<Option<FramedWaveform>> = Vec::with_capacity(cfg.n_r);
    for (c, ch) in pre.chains.iter().enumerate() {
        let Some(ch) = ch else {
            waves.push(None);
            continue;
        };
        let xd = x * &pre.dd_matrix[c] * C64::new(pre.power[c], 0.0);
        let xt = modem.isfft(&xd);
        let rows = &xt * &pre.tf_matrix[c];
        let prefix: Vec<C64> = ch
            .prefix_row(cfg)
            .iter()
            .zip(xt.row(cfg.n - 1))
            .map(|(b, v)| b * v)
            .collect();
        waves.push(Some(FramedWaveform::with_prefix_row(rows, cfg.n_cp, prefix)));
    }
    let t_ref = cfg.n_cp as f64;
    let terms = echo_terms(cfg, real, pre);
    let echoes: Vec<(Echo, &dyn Waveform)> = terms
        .iter()
        .filter_map(|t| {
            waves[t.c].as_ref().map(|w| {
                (
                    Echo {
                        delay: t.e + t.beta * t_ref,
                        beta: t.beta,
                        gain: t.gain,
                    },
                    w as &dyn Waveform,
                )
            })
        })
        .collect();
    let len = cfg.n * cfg.m;
    let mut rx = render(&echoes, cfg.fc_ts(), t_ref - pre.ell_bar, len);
    if let Some((seed, var)) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (r, w) in rx.iter_mut().zip(awgn(&mut rng, len, var)) {
            *r += w;
        }
    }
    let mut y = Array2::from_shape_vec((cfg.n, cfg.m), rx).expect("frame length");
    modem
        .planner()
        .along(&mut y, 1, Direction::Forward, 1.0 / (cfg.m as f64).sqrt());
    Ok(modem.sfft(&y))
}

/// Per-chain `P_c[b,ℓ'] = N^{-1/2} Σ_{k'} √ρ D[k',ℓ'] x[k',ℓ'] e^{j2πbk'/N}`.
fn delay_columns(cfg: &SystemConfig, pre: &PrecoderConfig, c: usize, x: &Array2<C64>, planner: &mut Planner<f64>) -> Array2<C64> {
    let mut p = x * &pre.dd_matrix[c] * C64::new(pre.power[c], 0.0);
    planner.along(&mut p, 0, Direction::Inverse, 1.0 / (cfg.n as f64).sqrt());
    p
}

/// Where column `ℓ'` of source block `b` lands: `(receive block, position)`.
fn landing(cfg: &SystemConfig, ch: &ChainPrecoding, ell_bar: f64, t: &EchoTerm, b: i64, l: usize) -> Option<(i64, f64)> {
    let m = cfg.m as f64;
    let q = (l as f64 - ch.advance_at(b, cfg)).rem_euclid(m);
    if b == -1 && q < m - cfg.n_cp as f64 {
        return None;
    }
    let eb = t.e - t.beta * (b as f64 * m - ell_bar);
    let big_l = q + eb + ell_bar;
    let w = ((big_l + 0.5) / m).floor();
    let n = b + w as i64;
    (0..cfg.n as i64).contains(&n).then_some((n, big_l - w * m))
}

/// Closed-form DD input-output relation: each echo maps column `ℓ'` of block
/// `b` to a single landing position, following the ICI/ISI split above.
pub fn dd_io_oracle(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    pre: &PrecoderConfig,
    x: &Array2<C64>,
) -> Result<Array2<C64>> {
    check_budget(cfg)?;
    check_grid(cfg, x)?;
    let (n, m) = (cfg.n, cfg.m);
    let mut planner = Planner::new();
    let cols: Vec<Option<Array2<C64>>> = (0..cfg.n_r)
        .map(|c| pre.chains[c].as_ref().map(|_| delay_columns(cfg, pre, c, x, &mut planner)))
        .collect();
    let fc_ts = cfg.fc_ts();
    let t_ref = cfg.n_cp as f64;
    let mut y = Array2::<C64>::zeros((n, m));
    let sm = 1.0 / (m as f64).sqrt();
    for t in echo_terms(cfg, real, pre) {
        let ch = pre.chains[t.c].as_ref().expect("mapped chain");
        let pc = cols[t.c].as_ref().expect("mapped chain");
        let g0 = t.gain * cis(-fc_ts * t.e);
        for b in -1..n as i64 {
            let row = b.rem_euclid(n as i64) as usize;
            let cb = ch.phase_at(b, cfg);
            for l in 0..m {
                let v = pc[[row, l]];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let Some((nn, pos)) = landing(cfg, ch, pre.ell_bar, &t, b, l) else {
                    continue;
                };
                let t_land = t_ref + nn as f64 * m as f64 - pre.ell_bar + pos;
                let amp = g0 * cis(fc_ts * t.beta * (t_land - t_ref)) * cb * v * sm;
                let step = cis(-pos / m as f64);
                let mut ph = C64::new(1.0, 0.0);
                let mut out = y.row_mut(nn as usize);
                for o in out.iter_mut() {
                    *o += amp * ph;
                    ph *= step;
                }
            }
        }
    }
    Ok(Modem::<f64>::new().sfft(&y))
}

/// Transmitted columns that share one landing pattern for one echo group.
#[derive(Clone, Debug)]
struct Group {
    /// Columns `ℓ' ∈ [lo, hi)`.
    lo: usize,
    hi: usize,
    /// `e^{j2πsk'/N}` factor: `s = (ISI flag of D) − (receive block shift)`.
    s: i64,
    /// Residual Doppler per delay column, `(ν − ν̂) T_s`.
    omega: f64,
    /// `K[Δk, Δℓ]`, periodic in both.
    kernel: Array2<C64>,
}

/// Precoded effective DD channel in kernel form:
/// `h[k,ℓ ← k',ℓ'] = Σ_j 1_j(ℓ') e^{j2π s_j k'/N} e^{j2π ω_j ℓ'} K_j[k−k', ℓ−ℓ']`.
#[derive(Clone, Debug)]
pub struct EffectiveChannel {
    n: usize,
    m: usize,
    groups: Vec<Group>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Flags {
    r: i64,
    w: i64,
    isi: bool,
    prefix: bool,
}

impl EffectiveChannel {
    pub fn build(cfg: &SystemConfig, real: &ChannelRealization, pre: &PrecoderConfig) -> Result<Self> {
        let (n, m) = (cfg.n, cfg.m);
        let mf = m as f64;
        let fc_ts = cfg.fc_ts();
        let lb = pre.ell_bar;
        let norm = 1.0 / ((n * m) as f64);
        let terms = echo_terms(cfg, real, pre);
        let mut planner = Planner::new();
        let mut groups = Vec::new();
        for (c, ch) in pre.chains.iter().enumerate() {
            let Some(ch) = ch else { continue };
            if pre.power[c] == 0.0 {
                continue;
            }
            for (p, path) in real.paths.iter().enumerate() {
                let ts: Vec<&EchoTerm> = terms.iter().filter(|t| t.c == c && t.p == p).collect();
                let beta = path.beta(cfg);
                let nu_ts = path.doppler * cfg.t_s;
                let drift = mf * (beta - ch.drift);
                // λ_a: landing offset of column 0 relative to its own index, block 0
                let lam: Vec<f64> = ts.iter().map(|t| t.e + lb * (1.0 + beta) - ch.advance).collect();
                let flags_at = |l: usize, la: f64| -> Flags {
                    let r = -((l as f64 - ch.advance) / mf).floor() as i64;
                    let q = l as f64 - ch.advance + mf * r as f64;
                    let big_l = l as f64 + mf * r as f64 + la;
                    let w = ((big_l + 0.5) / mf).floor() as i64;
                    Flags {
                        r,
                        w,
                        isi: ch.sets.is_isi(l),
                        prefix: q >= mf - cfg.n_cp as f64,
                    }
                };
                // split ℓ' into runs with identical per-antenna flags
                let mut runs: Vec<(usize, usize, Vec<Flags>)> = Vec::new();
                for l in 0..m {
                    let f: Vec<Flags> = lam.iter().map(|&la| flags_at(l, la)).collect();
                    match runs.last_mut() {
                        Some(last) if last.2 == f => last.1 = l + 1,
                        _ => runs.push((l, l + 1, f)),
                    }
                }
                for (lo, hi, flags) in runs {
                    let mut keys: Vec<Flags> = flags.clone();
                    keys.sort();
                    keys.dedup();
                    for key in keys {
                        // U(m) = Σ_a g_a e^{-j2π f_c T_s E_a} e^{j2π ν T_s λ_a} e^{-j2π m λ_a / M}
                        let mut u = vec![C64::new(0.0, 0.0); m];
                        for (i, t) in ts.iter().enumerate() {
                            if flags[i] != key {
                                continue;
                            }
                            let g = t.gain * cis(-fc_ts * t.e) * cis(nu_ts * lam[i]);
                            let step = cis(-lam[i] / mf);
                            let mut ph = g;
                            for v in u.iter_mut() {
                                *v += ph;
                                ph *= step;
                            }
                        }
                        let mut gconst = pre.power[c] * norm * cis(nu_ts * mf * (key.r - key.w) as f64);
                        if key.isi {
                            gconst *= cis(-ch.k_hat / n as f64);
                        }
                        let mut t_nm = Array2::<C64>::zeros((n, m));
                        for nn in 0..n as i64 {
                            let b = nn - key.w;
                            if b < -1 || b >= n as i64 || (b == -1 && !key.prefix) {
                                continue;
                            }
                            let bf = b as f64;
                            let f0 = cis(nu_ts * (nn as f64 * mf - lb - bf * drift)) * ch.phase_at(b, cfg) * gconst;
                            let step = cis(bf * drift / mf);
                            let mut ph = f0;
                            for (o, uv) in t_nm.row_mut(nn as usize).iter_mut().zip(&u) {
                                *o = ph * uv;
                                ph *= step;
                            }
                        }
                        planner.along(&mut t_nm, 0, Direction::Forward, 1.0);
                        planner.along(&mut t_nm, 1, Direction::Inverse, 1.0);
                        groups.push(Group {
                            lo,
                            hi,
                            s: key.isi as i64 - key.w,
                            omega: (path.doppler - ch.nu_hat) * cfg.t_s,
                            kernel: t_nm,
                        });
                    }
                }
            }
        }
        Ok(Self { n, m, groups })
    }

    /// Number of kernel groups.
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Response to a unit impulse at `(k', ℓ')`.
    pub fn column(&self, k0: usize, l0: usize) -> Array2<C64> {
        let (n, m) = (self.n, self.m);
        let mut out = Array2::<C64>::zeros((n, m));
        for g in self.groups.iter().filter(|g| (g.lo..g.hi).contains(&l0)) {
            let r = cis(g.s as f64 * k0 as f64 / n as f64 + g.omega * l0 as f64);
            for ((k, l), o) in out.indexed_iter_mut() {
                *o += r * g.kernel[[(k + n - k0) % n, (l + m - l0) % m]];
            }
        }
        out
    }

    /// `y = H x`.
    pub fn apply(&self, x: &Array2<C64>) -> Array2<C64> {
        let (n, m) = (self.n, self.m);
        let mut planner = Planner::new();
        let mut acc = Array2::<C64>::zeros((n, m));
        for g in &self.groups {
            let mut z = Array2::<C64>::zeros((n, m));
            for k in 0..n {
                for l in g.lo..g.hi {
                    z[[k, l]] = x[[k, l]] * cis(g.s as f64 * k as f64 / n as f64 + g.omega * l as f64);
                }
            }
            // circular 2-D convolution with the kernel
            let mut kf = g.kernel.clone();
            planner.along(&mut kf, 0, Direction::Forward, 1.0);
            planner.along(&mut kf, 1, Direction::Forward, 1.0);
            planner.along(&mut z, 0, Direction::Forward, 1.0);
            planner.along(&mut z, 1, Direction::Forward, 1.0);
            z *= &kf;
            planner.along(&mut z, 0, Direction::Inverse, 1.0 / n as f64);
            planner.along(&mut z, 1, Direction::Inverse, 1.0 / m as f64);
            acc += &z;
        }
        acc
    }

    /// Desired power `|h[k,ℓ←k,ℓ]|²` and total row energy `Σ_{k',ℓ'} |h[k,ℓ←k',ℓ']|²` per grid.
    pub fn sinr_stats(&self) -> SinrStats {
        let (n, m) = (self.n, self.m);
        let nf = n as f64;
        let mut desired_amp = Array2::<C64>::zeros((n, m));
        for g in &self.groups {
            let k00 = g.kernel[[0, 0]];
            for k in 0..n {
                for l in g.lo..g.hi {
                    desired_amp[[k, l]] += k00 * cis(g.s as f64 * k as f64 / nf + g.omega * l as f64);
                }
            }
        }
        // K''_j[Δk, Δℓ] = e^{-j2π s Δk/N} e^{-j2π ω Δℓ} K_j[Δk mod N, Δℓ mod M], Δℓ ∈ (−M, M),
        // stored per Δℓ as a (group, Δk) matrix
        let width = 2 * m - 1;
        let ng = self.groups.len();
        let mut twisted = Array3::<C64>::zeros((width, ng, n));
        for (j, g) in self.groups.iter().enumerate() {
            let sk: Vec<C64> = (0..n).map(|dk| cis(-(g.s as f64) * dk as f64 / nf)).collect();
            for i in 0..width {
                let dl = i as i64 - (m as i64 - 1);
                let col = dl.rem_euclid(m as i64) as usize;
                let wl = cis(-g.omega * dl as f64);
                for (dk, f) in sk.iter().enumerate() {
                    twisted[[i, j, dk]] = g.kernel[[dk, col]] * wl * f;
                }
            }
        }
        // G_ij[Δℓ] = Σ_Δk K''_i conj(K''_j), cumulative over Δℓ
        let mut cum = Array3::<C64>::zeros((width + 1, ng, ng));
        for i in 0..width {
            let a = twisted.index_axis(Axis(0), i);
            let gram = a.dot(&a.t().mapv(|v| v.conj()));
            let prev = cum.index_axis(Axis(0), i).to_owned();
            cum.index_axis_mut(Axis(0), i + 1).assign(&(prev + gram));
        }
        // Q_Δs(ℓ) = Σ_{pairs with s_i − s_j = Δs} e^{j2π(ω_i−ω_j)ℓ} Σ_{ℓ' ∈ both ranges} G_ij[ℓ − ℓ']
        let s_min = self.groups.iter().map(|g| g.s).min().unwrap_or(0);
        let s_max = self.groups.iter().map(|g| g.s).max().unwrap_or(0);
        let span = (s_max - s_min) as usize;
        let mut q = Array2::<C64>::zeros((2 * span + 1, m));
        for (i, gi) in self.groups.iter().enumerate() {
            for (j, gj) in self.groups.iter().enumerate() {
                let lo = gi.lo.max(gj.lo);
                let hi = gi.hi.min(gj.hi);
                if lo >= hi {
                    continue;
                }
                let ds = (gi.s - gj.s + span as i64) as usize;
                let dw = gi.omega - gj.omega;
                for l in 0..m {
                    // ℓ' ∈ [lo, hi) ⇒ Δℓ = ℓ − ℓ' ∈ (ℓ − hi, ℓ − lo]
                    let top = l as i64 - lo as i64 + (m as i64 - 1);
                    let bot = l as i64 - hi as i64 + (m as i64 - 1);
                    let s = cum[[(top + 1) as usize, i, j]] - cum[[(bot + 1) as usize, i, j]];
                    q[[ds, l]] += cis(dw * l as f64) * s;
                }
            }
        }
        let mut row = Array2::<f64>::zeros((n, m));
        for ((k, l), r) in row.indexed_iter_mut() {
            let mut acc = C64::new(0.0, 0.0);
            for (d, qs) in q.axis_iter(Axis(0)).enumerate() {
                let ds = d as f64 - span as f64;
                acc += cis(ds * k as f64 / nf) * qs[l];
            }
            *r = acc.re;
        }
        SinrStats {
            desired: desired_amp.mapv(|v| v.norm_sqr()),
            row,
        }
    }
}

/// Per-grid quantities that do not depend on the noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct SinrStats {
    pub desired: Array2<f64>,
    pub row: Array2<f64>,
}

impl SinrStats {
    pub fn sinr(&self, noise_var: f64) -> Array2<f64> {
        ndarray::Zip::from(&self.desired)
            .and(&self.row)
            .map_collect(|&d, &r| sinr(d, r, noise_var))
    }

    /// Mean over the grid of `log2(1 + SINR)`, bits per DD symbol.
    pub fn mean_rate(&self, noise_var: f64) -> f64 {
        let mut s = crate::metrics::NeumaierSum::default();
        for (&d, &r) in self.desired.iter().zip(&self.row) {
            s.add(rate(sinr(d, r, noise_var)));
        }
        s.value() / self.desired.len() as f64
    }
}

/// Effective channel matrix by probing `f` with every DD impulse (column `k'M + ℓ'`).
pub fn probe_matrix(
    cfg: &SystemConfig,
    mut f: impl FnMut(&Array2<C64>) -> Result<Array2<C64>>,
) -> Result<Array2<C64>> {
    check_budget(cfg)?;
    let nm = cfg.n * cfg.m;
    let mut h = Array2::<C64>::zeros((nm, nm));
    let mut x = Array2::<C64>::zeros((cfg.n, cfg.m));
    for k in 0..cfg.n {
        for l in 0..cfg.m {
            x[[k, l]] = C64::new(1.0, 0.0);
            let y = f(&x)?;
            x[[k, l]] = C64::new(0.0, 0.0);
            for (i, v) in y.iter().enumerate() {
                h[[i, k * cfg.m + l]] = *v;
            }
        }
    }
    Ok(h)
}

/// Per-grid desired power and row energy from an explicit channel matrix.
pub fn stats_from_matrix(cfg: &SystemConfig, h: &Array2<C64>) -> SinrStats {
    let desired = Array2::from_shape_fn((cfg.n, cfg.m), |(k, l)| h[[k * cfg.m + l, k * cfg.m + l]].norm_sqr());
    let row = Array2::from_shape_fn((cfg.n, cfg.m), |(k, l)| h.row(k * cfg.m + l).iter().map(|v| v.norm_sqr()).sum());
    SinrStats { desired, row }
}
