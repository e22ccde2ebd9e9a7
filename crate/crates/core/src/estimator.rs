//! Chirp-pilot channel estimation.
//!
//! Uplink protocol: `G` slots of up-chirps received with every RF chain steered
//! to a different grid angle, then one down-chirp slot with chains steered to
//! the detected paths. Each received pilot is de-chirped and transformed
//! ("DFT-angle sequence"); peak positions of the up and down sequences give
//! Doppler and delay in closed form, and the aligned down-chirp peak gives the
//! gain.
//!
//! Slot `g` (1-based) starts its body at `u_g = (g−1)(M + N_cpp)` samples; path
//! delays in [`PathParams`] are referenced to `u_1 = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analog::{sweep_down, sweep_up, ttd_offset, ChainSetting};
use crate::channel::{awgn, ChannelRealization, PathParams};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::fft::{Direction, Planner};
use crate::waveform::{ChirpDir, ChirpWaveform, Waveform};
use crate::{cis, C64};

/// One chirp pilot with its chirp-periodic prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct ChirpPilot {
    /// `N_cpp + M` samples; index `i` holds `C[i − N_cpp]`.
    pub samples: Vec<C64>,
    pub dir: ChirpDir,
    pub kappa: f64,
    pub n_cpp: usize,
}

impl ChirpPilot {
    /// `C[i]` for `i ∈ [−N_cpp, M)`.
    pub fn at(&self, i: i64) -> C64 {
        self.samples[(i + self.n_cpp as i64) as usize]
    }
}

pub fn gen_pilot(dir: ChirpDir, cfg: &SystemConfig) -> ChirpPilot {
    let w = ChirpWaveform::new(cfg.m, cfg.n_cpp, dir);
    let samples = (-(cfg.n_cpp as i64)..cfg.m as i64).map(|i| w.eval(i as f64)).collect();
    ChirpPilot {
        samples,
        dir,
        kappa: cfg.kappa(),
        n_cpp: cfg.n_cpp,
    }
}

/// De-chirped spectrum `R'[m] = M^{-1} Σ_i r̄[i] e^{-j2πmi/M}`, `m ∈ [−M/2, M/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DftAngleSequence {
    /// `values[m + M/2]`.
    pub values: Vec<C64>,
    /// De-chirped time samples `r̄[i]`.
    pub dechirped: Vec<C64>,
    pub sweep_angle: f64,
    pub slot: usize,
    pub chain: usize,
}

impl DftAngleSequence {
    pub fn m(&self) -> usize {
        self.values.len()
    }

    /// `R'[m]`, cyclic in `m`.
    pub fn get(&self, m: i64) -> C64 {
        let len = self.m() as i64;
        self.values[(m + len / 2).rem_euclid(len) as usize]
    }

    /// `ζ = Σ_m |R'[m]|²`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Integer argmax of `|R'[m]|`; ties go to the lowest `m`.
    pub fn peak(&self) -> (i64, f64) {
        let mut best = (0usize, -1.0);
        for (i, v) in self.values.iter().enumerate() {
            let a = v.norm();
            if a > best.1 {
                best = (i, a);
            }
        }
        (best.0 as i64 - self.m() as i64 / 2, best.1)
    }

    /// Detection statistic `max_m |R'[m]|² / ζ`.
    pub fn statistic(&self) -> f64 {
        let z = self.energy();
        if z == 0.0 {
            return 0.0;
        }
        let (_, p) = self.peak();
        p * p / z
    }

    /// Jacobsen-refined peak index.
    pub fn refined_peak(&self) -> f64 {
        let (k, _) = self.peak();
        k as f64 + jacobsen(self.get(k - 1), self.get(k), self.get(k + 1))
    }

    /// `R'` at a fractional index (direct transform of the de-chirped samples).
    pub fn eval_at(&self, m: f64) -> C64 {
        let len = self.dechirped.len() as f64;
        let s: C64 = self
            .dechirped
            .iter()
            .enumerate()
            .map(|(i, v)| v * cis(-m * i as f64 / len))
            .sum();
        s / len
    }
}

fn dechirp_with(planner: &mut Planner<f64>, rx: &[C64], dir: ChirpDir, m: usize) -> Result<(Vec<C64>, Vec<C64>)> {
    if rx.len() != m {
        return Err(Error::Length(format!("pilot body has {} samples, expected {m}", rx.len())));
    }
    let sign = -dir.sign();
    let dechirped: Vec<C64> = rx
        .iter()
        .enumerate()
        .map(|(i, v)| v * cis(sign * (i * i) as f64 / (2.0 * m as f64)))
        .collect();
    let mut buf = dechirped.clone();
    planner.run(&mut buf, Direction::Forward);
    let s = 1.0 / m as f64;
    let half = m / 2;
    let values = (0..m).map(|j| buf[(j + m - half) % m] * s).collect();
    Ok((dechirped, values))
}

/// De-chirp a received pilot body (prefix already removed) and transform it.
pub fn dechirp_dft(rx: &[C64], dir: ChirpDir, m: usize) -> Result<DftAngleSequence> {
    let (dechirped, values) = dechirp_with(&mut Planner::new(), rx, dir, m)?;
    Ok(DftAngleSequence {
        values,
        dechirped,
        sweep_angle: 0.0,
        slot: 0,
        chain: 0,
    })
}

/// Three-point fractional peak offset `Re{(R₋ − R₊)/(2R₀ − R₋ − R₊)}`, clamped to
/// `[−1/2, 1/2]`. Zero when the denominator vanishes.
pub fn jacobsen(r_minus: C64, r0: C64, r_plus: C64) -> f64 {
    let den = r0 * 2.0 - r_minus - r_plus;
    if den.norm() < 1e-12 {
        return 0.0;
    }
    ((r_minus - r_plus) / den).re.clamp(-0.5, 0.5)
}

/// Grid angles whose statistic exceeds `eta`.
pub fn detect_paths(seqs: &[DftAngleSequence], eta: f64) -> Vec<usize> {
    (0..seqs.len()).filter(|&i| seqs[i].statistic() > eta).collect()
}

/// Keep detections that are local maxima along the angle grid and reach
/// `floor` times the largest peak. Neighbors are compared around the same
/// delay-Doppler bin, so a weak path next to a strong one survives. The grid
/// ends only have one neighbor each.
pub fn suppress_sidelobes(seqs: &[DftAngleSequence], detected: &[usize], floor: f64) -> Vec<usize> {
    let n = seqs.len();
    let pk: Vec<(i64, f64)> = seqs.iter().map(|s| s.peak()).collect();
    let top = detected.iter().map(|&i| pk[i].1).fold(0.0, f64::max);
    let near = |j: usize, m: i64| (m - 1..=m + 1).map(|k| seqs[j].get(k).norm()).fold(0.0, f64::max);
    detected
        .iter()
        .copied()
        .filter(|&i| {
            let (m, p) = pk[i];
            let l = if i > 0 { near(i - 1, m) } else { 0.0 };
            let r = if i + 1 < n { near(i + 1, m) } else { 0.0 };
            p > l && p >= r && p >= floor * top
        })
        .collect()
}

/// Two-point fractional offset toward the neighbor `r1` one bin above:
/// `Re{ρ/(ρ−1)}` with `ρ = r1/r0`, clamped to `[−1, 1]`.
pub fn two_point(r0: C64, r1: C64) -> f64 {
    if r0.norm() < 1e-300 {
        return 0.0;
    }
    let rho = r1 / r0;
    let den = rho - 1.0;
    if den.norm() < 1e-12 {
        return 0.0;
    }
    (rho / den).re.clamp(-1.0, 1.0)
}

/// Refined angle from the detected grid index and its angle neighbors at the
/// integer peak index of the center sequence.
///
/// The two ends of the grid are not neighbors: the phase shifters wrap but the
/// TTD lines do not, so a sequence across the wrap sees a squinted beam. The
/// end points use the inner neighbor only.
pub fn refine_angle(seqs: &[DftAngleSequence], idx: usize, m_peak: i64) -> f64 {
    let n = seqs.len();
    let r0 = seqs[idx].get(m_peak);
    let delta = if n < 3 {
        0.0
    } else if idx == 0 {
        two_point(r0, seqs[1].get(m_peak))
    } else if idx == n - 1 {
        -two_point(r0, seqs[n - 2].get(m_peak))
    } else {
        jacobsen(seqs[idx - 1].get(m_peak), r0, seqs[idx + 1].get(m_peak))
    };
    (-(seqs[idx].sweep_angle + delta / n as f64)).clamp(-0.5, 0.5 - 1e-12)
}

/// Sweep grid `ψ̄_φ = −1/2 + (φ + 1/2)/N_S`, symmetric about boresight so that
/// both endfire directions are within half a bin of a grid angle.
pub fn sweep_grid(cfg: &SystemConfig) -> Vec<f64> {
    (0..cfg.n_s).map(|f| -0.5 + (f as f64 + 0.5) / cfg.n_s as f64).collect()
}

/// Doppler (Hz) and delay at the down-chirp slot (samples) from the refined peaks.
///
/// `n_g` is the number of slots between detection and the down-chirp. The
/// known TTD offset `t̃` is removed from the delay.
pub fn estimate_params(m_up: f64, m_down: f64, psi_hat: f64, psi_bar: f64, n_g: usize, cfg: &SystemConfig) -> (f64, f64) {
    let (m, k, ts) = (cfg.m as f64, cfg.kappa(), cfg.t_s);
    let (nt, np) = (cfg.n_t as f64, cfg.n_p as f64);
    let fcts = cfg.fc_ts();
    let span = (cfg.m + cfg.n_cpp) as f64 * n_g as f64;
    let nu = (m_down + m_up + (nt - 1.0) / fcts * (psi_bar + psi_hat) * np * m * k)
        / (2.0 * m * ts - 2.0 * k * m * span / cfg.f_c);
    let ell = -psi_hat * (np - 1.0) / (2.0 * fcts) - (nt - 1.0) * (psi_bar + psi_hat) * np / (4.0 * fcts)
        + (m_down - m_up) / (4.0 * m * k)
        - span * nu / (2.0 * cfg.f_c)
        - ttd_offset(cfg) / ts;
    (nu, ell)
}

/// Gain from the aligned down-chirp sequence evaluated at the refined peak.
///
/// The de-rotation uses the pilot delay seen by the chain, i.e. `ℓ̂` plus the
/// TTD offset and the sub-array center.
pub fn estimate_gain(down: &DftAngleSequence, m_down: f64, nu_hat: f64, ell_hat: f64, psi_hat: f64, cfg: &SystemConfig) -> C64 {
    let m = cfg.m as f64;
    let t0 = ttd_offset(cfg);
    let d = ell_hat + t0 / cfg.t_s + (cfg.n_p as f64 - 1.0) * psi_hat / (2.0 * cfg.fc_ts());
    let r = down.eval_at(m_down);
    r / cfg.n_a as f64
        * cis(cfg.kappa() * d * d)
        * cis((m - 1.0) / (2.0 * m) * (m_down - m * nu_hat * cfg.t_s - 2.0 * m * cfg.kappa() * d))
        * cis(cfg.f_c * t0 + nu_hat * t0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathEstimate {
    pub psi_hat: f64,
    pub m_up: f64,
    pub m_down: f64,
    pub nu_hat: f64,
    /// Delay at the down-chirp slot, samples.
    pub ell_hat: f64,
    /// Gain at the down-chirp slot.
    pub alpha_hat: C64,
    /// Detection slot (1-based) and chain.
    pub slot: usize,
    pub chain: usize,
    pub sweep_angle: f64,
    /// Slots between detection and the down-chirp.
    pub n_g: usize,
    /// Set when `ν̂` or `ℓ̂` had to be clamped to the physical range.
    pub clamped: bool,
}

impl PathEstimate {
    /// As a path referenced to the down-chirp body start.
    pub fn to_path(&self, cfg: &SystemConfig) -> PathParams {
        let mut p = PathParams::from_samples(cfg, C64::new(0.0, 0.0), self.ell_hat, self.nu_hat, self.psi_hat);
        p.gain = self.alpha_hat * cis(cfg.f_c * p.delay);
        p
    }
}

/// Slot timing of one estimation round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub g: usize,
    /// Idle slots between the last up-chirp and the down-chirp.
    pub gap: usize,
    pub m: usize,
    pub n_cpp: usize,
}

impl Schedule {
    pub fn new(cfg: &SystemConfig, gap: usize) -> Self {
        Self {
            g: cfg.g,
            gap,
            m: cfg.m,
            n_cpp: cfg.n_cpp,
        }
    }

    /// Body start of slot `g` (1-based), samples.
    pub fn body_start(&self, g: usize) -> f64 {
        ((g - 1) * (self.m + self.n_cpp)) as f64
    }

    pub fn down_slot(&self) -> usize {
        self.g + 1 + self.gap
    }

    /// Pilot cost in samples, `(G+1)(M+N_cpp)`.
    pub fn pilot_cost(&self) -> usize {
        (self.g + 1) * (self.m + self.n_cpp)
    }
}

/// Ground truth of a path at the down-chirp slot: `(ℓ, α)`.
pub fn truth_at_down(cfg: &SystemConfig, p: &PathParams, sched: &Schedule) -> (f64, C64) {
    let u = sched.body_start(sched.down_slot());
    let ell = p.ell(cfg) - p.beta(cfg) * u;
    (ell, p.gain * cis(-cfg.fc_ts() * ell))
}

/// Adds `w Σ` of one chirp echo over a slot body: delay `E(t) = e0 − β t`,
/// observed at `t = u + i`, `i ∈ [0, len)`.
///
/// The phase is quadratic in `i` and is advanced by a second-order recurrence.
#[allow(clippy::too_many_arguments)]
fn add_chirp_echo(acc: &mut [C64], w: C64, e0: f64, beta: f64, u: f64, chirp: &ChirpWaveform, fc_ts: f64) {
    let mf = chirp.m as f64;
    let sgn = chirp.dir.sign();
    let x0 = beta * u - e0;
    let g = 1.0 + beta;
    let a0 = (-fc_ts * e0).rem_euclid(1.0) + (fc_ts * beta * u).rem_euclid(1.0) + sgn * x0 * x0 / (2.0 * mf);
    let a1 = fc_ts * beta + sgn * x0 * g / mf;
    let a2 = sgn * g * g / (2.0 * mf);
    let mut z = w * cis(a0);
    let mut step = cis(a1 + a2);
    let rot = cis(2.0 * a2);
    for (i, o) in acc.iter_mut().enumerate() {
        if chirp.in_support(x0 + g * i as f64) {
            *o += z;
        }
        z *= step;
        step *= rot;
    }
}

/// Noiseless chain output for one slot, chain steered by `set`.
fn render_slot(cfg: &SystemConfig, real: &ChannelRealization, set: &ChainSetting, u: f64, dir: ChirpDir) -> Vec<C64> {
    let chirp = ChirpWaveform::new(cfg.m, cfg.n_cpp, dir);
    let fc_ts = cfg.fc_ts();
    let mut acc = vec![C64::new(0.0, 0.0); cfg.m];
    for p in &real.paths {
        let beta = p.beta(cfg);
        for d in 0..cfg.n_t {
            let delta = set.ttd[d] / cfg.t_s;
            for s in 0..cfg.n_p {
                let a = d * cfg.n_p + s + 1;
                let e0 = p.antenna_delay_samples(cfg, a) + delta * (1.0 + beta);
                add_chirp_echo(&mut acc, p.gain * cis(set.ps[[d, s]]), e0, beta, u, &chirp, fc_ts);
            }
        }
    }
    acc
}

/// Noiseless up-chirp sweep: one body per grid angle (slot-major, chain-minor).
pub fn render_sweep(cfg: &SystemConfig, real: &ChannelRealization, sched: &Schedule) -> Vec<Vec<C64>> {
    sweep_grid(cfg)
        .iter()
        .enumerate()
        .map(|(phi, &psi_bar)| {
            let g = phi / cfg.n_r + 1;
            render_slot(cfg, real, &sweep_up(cfg, psi_bar), sched.body_start(g), ChirpDir::Up)
        })
        .collect()
}

/// Noiseless down-chirp body on a chain steered to `ψ̄`.
pub fn render_down(cfg: &SystemConfig, real: &ChannelRealization, sched: &Schedule, psi_bar: f64) -> Vec<C64> {
    let u = sched.body_start(sched.down_slot());
    render_slot(cfg, real, &sweep_down(cfg, psi_bar), u, ChirpDir::Down)
}

/// Unit-variance noise for every pilot body of one estimation round; scaled per
/// SNR so that a trial sees the same realization at every noise level.
#[derive(Clone, Debug)]
pub struct UnitNoise {
    pub sweep: Vec<Vec<C64>>,
    pub down: Vec<Vec<C64>>,
}

impl UnitNoise {
    pub fn draw(cfg: &SystemConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sweep = (0..cfg.n_s).map(|_| awgn(&mut rng, cfg.m, 1.0)).collect();
        let down = (0..cfg.n_r).map(|_| awgn(&mut rng, cfg.m, 1.0)).collect();
        Self { sweep, down }
    }
}

/// Estimation knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorOptions {
    /// Detection threshold on `max|R'|²/ζ`.
    pub eta: f64,
    /// Relative floor on the peak magnitude of a detection.
    pub floor: f64,
    pub gap: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            eta: 0.05,
            floor: 0.03,
            gap: 0,
        }
    }
}

/// Full estimation pipeline from pre-rendered sweep bodies.
///
/// Each chain's noise is the combined noise of `N_A` antennas, variance
/// `N_A σ²` per sample.
pub fn estimate_from_sweep(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    sweep: &[Vec<C64>],
    noise: Option<(&UnitNoise, f64)>,
    opts: &EstimatorOptions,
) -> Result<Vec<PathEstimate>> {
    let sched = Schedule::new(cfg, opts.gap);
    let mut planner = Planner::new();
    let scale = noise.map(|(_, v)| (cfg.n_a as f64 * v).sqrt()).unwrap_or(0.0);
    let grid = sweep_grid(cfg);
    let mut seqs = Vec::with_capacity(sweep.len());
    for (phi, body) in sweep.iter().enumerate() {
        let rx: Vec<C64> = match noise {
            Some((w, _)) => body.iter().zip(&w.sweep[phi]).map(|(s, n)| s + n * scale).collect(),
            None => body.clone(),
        };
        let (dechirped, values) = dechirp_with(&mut planner, &rx, ChirpDir::Up, cfg.m)?;
        seqs.push(DftAngleSequence {
            values,
            dechirped,
            sweep_angle: grid[phi],
            slot: phi / cfg.n_r + 1,
            chain: phi % cfg.n_r,
        });
    }
    let detected = suppress_sidelobes(&seqs, &detect_paths(&seqs, opts.eta), opts.floor);
    if detected.is_empty() {
        return Err(Error::NoPathDetected);
    }
    let mut order = detected;
    order.sort_by(|&a, &b| seqs[b].peak().1.total_cmp(&seqs[a].peak().1).then(a.cmp(&b)));
    order.truncate(cfg.n_r);

    let mut out = Vec::with_capacity(order.len());
    for (k, &idx) in order.iter().enumerate() {
        let seq = &seqs[idx];
        let (m0, _) = seq.peak();
        let m_up = seq.refined_peak();
        let psi_hat = refine_angle(&seqs, idx, m0);
        let body = render_down(cfg, real, &sched, -psi_hat);
        let rx: Vec<C64> = match noise {
            Some((w, _)) => body.iter().zip(&w.down[k]).map(|(s, n)| s + n * scale).collect(),
            None => body,
        };
        let (dechirped, values) = dechirp_with(&mut planner, &rx, ChirpDir::Down, cfg.m)?;
        let down = DftAngleSequence {
            values,
            dechirped,
            sweep_angle: -psi_hat,
            slot: sched.down_slot(),
            chain: k,
        };
        let m_down = down.refined_peak();
        let n_g = sched.down_slot() - seq.slot;
        let (nu, ell) = estimate_params(m_up, m_down, psi_hat, seq.sweep_angle, n_g, cfg);
        let nu_c = nu.clamp(-cfg.nu_max, cfg.nu_max);
        let ell_c = ell.clamp(0.0, cfg.n_cpp as f64 - 1e-9);
        let alpha = estimate_gain(&down, m_down, nu_c, ell_c, psi_hat, cfg);
        out.push(PathEstimate {
            psi_hat,
            m_up,
            m_down,
            nu_hat: nu_c,
            ell_hat: ell_c,
            alpha_hat: alpha,
            slot: seq.slot,
            chain: seq.chain,
            sweep_angle: seq.sweep_angle,
            n_g,
            clamped: nu_c != nu || ell_c != ell,
        });
    }
    Ok(drop_wrap_ghosts(out, cfg))
}

/// A path near endfire shows up at both grid ends. Only the end whose delay
/// lines match the true direction steers the down-chirp onto it, so of two
/// estimates less than 1.5 bins apart across the wrap the weaker gain goes.
fn drop_wrap_ghosts(est: Vec<PathEstimate>, cfg: &SystemConfig) -> Vec<PathEstimate> {
    let gate = 1.5 / cfg.n_s as f64;
    let keep: Vec<bool> = (0..est.len())
        .map(|i| {
            !est.iter().enumerate().any(|(j, o)| {
                let d = (est[i].psi_hat - o.psi_hat).abs();
                j != i
                    && d > 0.5
                    && 1.0 - d < gate
                    && (o.alpha_hat.norm() > est[i].alpha_hat.norm()
                        || (o.alpha_hat.norm() == est[i].alpha_hat.norm() && j < i))
            })
        })
        .collect();
    est.into_iter().zip(keep).filter_map(|(e, k)| k.then_some(e)).collect()
}

/// Sweep, detect, refine and solve for every detected path. Noise of variance
/// `cfg.noise_var` per antenna is drawn from `seed`; zero variance is noiseless.
pub fn run_estimation(real: &ChannelRealization, cfg: &SystemConfig, eta: f64, seed: u64) -> Result<Vec<PathEstimate>> {
    let opts = EstimatorOptions {
        eta,
        ..Default::default()
    };
    let sched = Schedule::new(cfg, opts.gap);
    let sweep = render_sweep(cfg, real, &sched);
    let noise = UnitNoise::draw(cfg, seed);
    let n = (cfg.noise_var > 0.0).then_some((&noise, cfg.noise_var));
    estimate_from_sweep(cfg, real, &sweep, n, &opts)
}

/// Threshold on `max|R'|²/ζ` for white-noise input at false-alarm rate `pfa`,
/// from `trials` Monte Carlo draws.
pub fn calibrate_eta(m: usize, pfa: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = Planner::new();
    let mut stats: Vec<f64> = (0..trials)
        .map(|_| {
            let mut buf = awgn(&mut rng, m, 1.0);
            planner.run(&mut buf, Direction::Forward);
            let e: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
            let p = buf.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
            p / e
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = ((1.0 - pfa) * trials as f64).ceil() as usize;
    stats[q.min(trials - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Echo;
    use crate::config::ConfigParams;

    fn cfg() -> SystemConfig {
        ConfigParams::desk().validate().unwrap()
    }

    #[test]
    fn pilot_values() {
        let c = cfg();
        let up = gen_pilot(ChirpDir::Up, &c);
        assert_eq!(up.samples.len(), c.m + c.n_cpp);
        assert!((up.at(0) - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((up.at(1) - cis(0.5 / c.m as f64)).norm() < 1e-15);
        let mf = c.m as f64;
        let k = c.kappa();
        let r = up.at(-1) * (up.at(c.m as i64 - 1) * cis(k * (mf * mf - 2.0 * mf))).conj();
        assert!((r - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(up.samples.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let down = gen_pilot(ChirpDir::Down, &c);
        for i in -(c.n_cpp as i64)..0 {
            let want = down.at(c.m as i64 + i) * cis(-k * (mf * mf + 2.0 * mf * i as f64));
            assert!((down.at(i) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn dechirp_of_local_chirp_is_dc() {
        let c = cfg();
        let up = gen_pilot(ChirpDir::Up, &c);
        let s = dechirp_dft(&up.samples[c.n_cpp..], ChirpDir::Up, c.m).unwrap();
        let (k, v) = s.peak();
        assert_eq!(k, 0);
        assert!((v - 1.0).abs() < 1e-12);
        assert!(matches!(dechirp_dft(&up.samples, ChirpDir::Up, c.m), Err(Error::Length(_))));
    }

    #[test]
    fn dechirp_peak_moves_with_delay_and_doppler() {
        let c = cfg();
        let up = gen_pilot(ChirpDir::Up, &c);
        for ell in [0i64, 3, 7, 15] {
            let rx: Vec<C64> = (0..c.m as i64).map(|i| up.at(i - ell)).collect();
            assert_eq!(dechirp_dft(&rx, ChirpDir::Up, c.m).unwrap().peak().0, -ell);
        }
        let nu_ts = 5.0 / c.m as f64;
        let rx: Vec<C64> = (0..c.m as i64).map(|i| up.at(i) * cis(nu_ts * i as f64)).collect();
        assert_eq!(dechirp_dft(&rx, ChirpDir::Up, c.m).unwrap().peak().0, 5);
    }

    #[test]
    fn dechirp_conserves_energy() {
        let c = cfg();
        let rx: Vec<C64> = (0..c.m).map(|i| C64::new((i % 7) as f64, (i % 3) as f64 - 1.0)).collect();
        let s = dechirp_dft(&rx, ChirpDir::Down, c.m).unwrap();
        let e: f64 = s.dechirped.iter().map(|v| v.norm_sqr()).sum::<f64>() / c.m as f64;
        assert!((s.energy() - e).abs() < 1e-9 * e);
    }

    #[test]
    fn jacobsen_cases() {
        assert_eq!(jacobsen(C64::new(0.5, 0.0), C64::new(1.0, 0.0), C64::new(0.5, 0.0)), 0.0);
        assert_eq!(jacobsen(C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0)), 0.0);
        // tone 0.3 bins above bin 10 of a 64-point DFT
        let n = 64;
        let x: Vec<C64> = (0..n).map(|i| cis(10.3 * i as f64 / n as f64)).collect();
        let dft = |k: f64| -> C64 { x.iter().enumerate().map(|(i, v)| v * cis(-k * i as f64 / n as f64)).sum() };
        let d = jacobsen(dft(9.0), dft(10.0), dft(11.0));
        // dense zero-padded search
        let dense = (0..4000)
            .map(|j| 9.5 + j as f64 / 4000.0)
            .max_by(|a, b| dft(*a).norm().total_cmp(&dft(*b).norm()))
            .unwrap();
        assert!((10.0 + d - dense).abs() < 0.02, "{d} {dense}");
    }

    #[test]
    fn peak_tie_takes_lowest_index() {
        let mut values = vec![C64::new(0.0, 0.0); 8];
        values[2] = C64::new(1.0, 0.0);
        values[6] = C64::new(0.0, 1.0);
        let s = DftAngleSequence {
            values,
            dechirped: vec![],
            sweep_angle: 0.0,
            slot: 1,
            chain: 0,
        };
        assert_eq!(s.peak().0, -2);
    }

    #[test]
    fn params_closed_form_example() {
        let c = ConfigParams {
            n_t: 1,
            ..ConfigParams::desk()
        }
        .validate()
        .unwrap();
        let (nu, ell) = estimate_params(-5.0, 5.0, 0.0, 0.0, 0, &c);
        assert!(nu.abs() < 1e-9);
        assert!((ell - 5.0).abs() < 1e-12);
        let x = 0.01;
        let (nu, ell) = estimate_params(x, x, 0.0, 0.0, 0, &c);
        assert!((nu - x / (c.m as f64 * c.t_s)).abs() < 1e-6);
        assert!(ell.abs() < 1e-12);
    }

    #[test]
    fn fast_renderer_matches_echo_model() {
        let c = cfg();
        let chirp = ChirpWaveform::new(c.m, c.n_cpp, ChirpDir::Down);
        let (e0, beta, u) = (7.3, 2.3e-7, 5.0e5);
        let w = C64::new(0.3, -0.8);
        let mut acc = vec![C64::new(0.0, 0.0); c.m];
        add_chirp_echo(&mut acc, w, e0, beta, u, &chirp, c.fc_ts());
        let shifted = |t: f64| chirp.eval(t - u);
        struct F<'a>(&'a (dyn Fn(f64) -> C64 + Sync));
        impl Waveform for F<'_> {
            fn eval(&self, t: f64) -> C64 {
                (self.0)(t)
            }
        }
        // Echo's delay is referenced to t = 0
        let echo = Echo {
            delay: e0,
            beta,
            gain: w,
        };
        let src = F(&shifted);
        for (i, v) in acc.iter().enumerate() {
            let want = echo.eval(&src, c.fc_ts(), u + i as f64);
            assert!((v - want).norm() < 1e-9, "{i} {v} {want}");
        }
    }

    #[test]
    fn noiseless_single_path_recovery() {
        let c = cfg();
        let p = PathParams::from_samples(&c, cis(0.2), 6.4, 0.6 * c.nu_max, 0.0);
        let real = ChannelRealization::new(vec![p.clone()]);
        let est = run_estimation(&real, &ConfigParams { noise_var: 0.0, ..c.params.clone() }.validate().unwrap(), 0.05, 1).unwrap();
        assert_eq!(est.len(), 1);
        let e = &est[0];
        let (ell, alpha) = truth_at_down(&c, &p, &Schedule::new(&c, 0));
        assert!(e.psi_hat.abs() < 1e-3, "{}", e.psi_hat);
        assert!((e.ell_hat - ell).abs() < 0.05, "{} {ell}", e.ell_hat);
        assert!((e.nu_hat - p.doppler).abs() < 5e-3 * c.nu_max, "{} {}", e.nu_hat, p.doppler);
        assert!((e.alpha_hat - alpha).norm() < 1e-2, "{} {alpha}", e.alpha_hat);
    }

    #[test]
    fn no_path_is_reported() {
        let c = ConfigParams {
            noise_var: 0.0,
            ..ConfigParams::desk()
        }
        .validate()
        .unwrap();
        let p = PathParams::from_samples(&c, C64::new(0.0, 0.0), 3.0, 0.0, 0.1);
        let real = ChannelRealization::new(vec![p]);
        assert!(matches!(run_estimation(&real, &c, 0.05, 0), Err(Error::NoPathDetected)));
    }

    #[test]
    fn eta_calibration_controls_false_alarms() {
        let m = 64;
        let eta = calibrate_eta(m, 1e-2, 4000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let hits = (0..2000)
            .filter(|_| {
                let x = awgn(&mut rng, m, 2.5);
                dechirp_dft(&x, ChirpDir::Up, m).unwrap().statistic() > eta
            })
            .count();
        assert!(hits <= 40, "{hits}");
    }
}
