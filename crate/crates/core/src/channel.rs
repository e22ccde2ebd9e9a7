//! Sparse wideband multipath channel with beam squint and Doppler squint.
//!
//! Each path has a complex gain `α̃`, delay `τ`, Doppler `ν` and spatial angle
//! `ψ`. The delay seen at antenna `a` is `τ + (a−1)ψ/f_c` and drifts in time as
//! `τ_a(t) = τ_a − (ν/f_c) t`, which is how the Doppler squint enters.
//!
//! Time-domain application goes through [`Echo`]: a delayed, phase-rotated,
//! time-compressed copy of a [`Waveform`].

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{spatial_angle, SystemConfig};
use crate::error::{Error, Result};
use crate::modem::{Modem, TimeSignal};
use crate::waveform::Waveform;
use crate::{cis, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// `α̃`, before the carrier rotation `e^{-j2π f_c τ}`.
    pub gain: C64,
    /// Seconds.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
    /// Spatial angle `ψ ∈ [-1/2, 1/2)`.
    pub angle: f64,
    /// Radial speed, m/s.
    pub velocity: f64,
}

impl PathParams {
    /// Path with delay given in samples and Doppler in Hz.
    pub fn from_samples(cfg: &SystemConfig, gain: C64, ell: f64, doppler: f64, angle: f64) -> Self {
        Self {
            gain,
            delay: ell * cfg.t_s,
            doppler,
            angle,
            velocity: doppler * crate::config::SPEED_OF_LIGHT / cfg.f_c,
        }
    }

    /// `ℓ = τ / T_s`.
    pub fn ell(&self, cfg: &SystemConfig) -> f64 {
        self.delay / cfg.t_s
    }

    /// `ν / f_c`, the delay drift per unit time (the inverse of `μ`).
    pub fn beta(&self, cfg: &SystemConfig) -> f64 {
        self.doppler / cfg.f_c
    }

    /// Equivalent gain `α = α̃ e^{-j2π f_c τ}`.
    pub fn equivalent_gain(&self, cfg: &SystemConfig) -> C64 {
        self.gain * cis(-cfg.f_c * self.delay)
    }

    /// Delay at antenna `a` in samples, `ℓ + (a−1)ψ/(f_c T_s)`.
    pub fn antenna_delay_samples(&self, cfg: &SystemConfig, a: usize) -> f64 {
        self.ell(cfg) + (a as f64 - 1.0) * self.angle / cfg.fc_ts()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub paths: Vec<PathParams>,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn new(paths: Vec<PathParams>) -> Self {
        Self { paths, seed: 0 }
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

/// Smallest cyclic distance between two spatial angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Draw `p` paths: complex Gaussian gains renormalized to unit power, delays
/// uniform in `[0, delay_range]` samples, directions uniform in `[-90°, 90°]`
/// with pairwise spatial-angle separation of at least `2/N_S`, speed `v` with
/// a random sign.
pub fn sample_channel(
    cfg: &SystemConfig,
    p: usize,
    v: f64,
    delay_range: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    if p == 0 {
        return Err(Error::Range("path count must be >= 1".into()));
    }
    if !(0.0..=cfg.n_cp as f64).contains(&delay_range) {
        return Err(Error::Range(format!(
            "delay range {delay_range} samples outside [0, n_cp = {}]",
            cfg.n_cp
        )));
    }
    let min_sep = 2.0 / cfg.n_s as f64;
    if p as f64 * min_sep > 1.0 {
        return Err(Error::Range(format!("{p} paths cannot be separated by {min_sep}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angles: Vec<f64> = Vec::with_capacity(p);
    let mut tries = 0;
    while angles.len() < p {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::Range("could not place separated path angles".into()));
        }
        let psi = spatial_angle(rng.gen_range(-90.0..90.0));
        if angles.iter().all(|&a| angle_distance(a, psi) >= min_sep) {
            angles.push(psi);
        }
    }
    let mut paths = Vec::with_capacity(p);
    for psi in angles {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let ell = rng.gen_range(0.0..=delay_range);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        paths.push(PathParams {
            gain: C64::new(re, im) / 2f64.sqrt(),
            delay: ell * cfg.t_s,
            doppler: cfg.doppler(sign * v),
            angle: psi,
            velocity: sign * v,
        });
    }
    let norm = paths.iter().map(|q| q.gain.norm_sqr()).sum::<f64>().sqrt();
    for q in &mut paths {
        q.gain /= norm;
    }
    Ok(ChannelRealization { paths, seed })
}

/// `τ_{p,a} = τ_p + (a−1)ψ_p/f_c`, seconds. Antennas are numbered from 1.
pub fn per_antenna_delay(cfg: &SystemConfig, path: &PathParams, a: usize) -> Result<f64> {
    if a == 0 || a > cfg.n_a {
        return Err(Error::Range(format!("antenna {a} outside 1..={}", cfg.n_a)));
    }
    Ok(path.delay + (a as f64 - 1.0) * path.angle / cfg.f_c)
}

/// `H_a(t, f) = Σ_p α̃_p e^{-j2π(f_c+f)(τ_{p,a} − ν_p t/f_c)}`.
pub fn tf_response(cfg: &SystemConfig, paths: &[PathParams], t: f64, f: f64, a: usize) -> C64 {
    paths
        .iter()
        .map(|p| {
            let tau = p.delay + (a as f64 - 1.0) * p.angle / cfg.f_c - p.beta(cfg) * t;
            p.gain * cis(-cfg.f_c * tau) * cis(-f * tau)
        })
        .sum()
}

/// Continuous DD response of one path at antenna `a` on a `τ × ν` grid.
///
/// For `ν_p ≠ 0` the value is `α e^{-j2π(a−1)ψ} |μ| e^{j2π μ (τ − τ_a)(ν − ν_p)}`
/// with `μ = f_c/ν_p`. For a static path a single cell (the one nearest
/// `(τ_a, 0)`) carries `α e^{-j2π(a−1)ψ}`.
pub fn dd_response(
    cfg: &SystemConfig,
    path: &PathParams,
    taus: &[f64],
    nus: &[f64],
    a: usize,
) -> Array2<C64> {
    let alpha = path.equivalent_gain(cfg) * cis(-(a as f64 - 1.0) * path.angle);
    let tau_a = path.delay + (a as f64 - 1.0) * path.angle / cfg.f_c;
    let mut out = Array2::zeros((taus.len(), nus.len()));
    if path.doppler != 0.0 {
        let mu = cfg.f_c / path.doppler;
        for (i, &t) in taus.iter().enumerate() {
            for (j, &v) in nus.iter().enumerate() {
                out[[i, j]] = alpha * mu.abs() * cis(mu * (t - tau_a) * (v - path.doppler));
            }
        }
    } else {
        let nearest = |xs: &[f64], x: f64| {
            xs.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(i, _)| i)
        };
        if let (Some(i), Some(j)) = (nearest(taus, tau_a), nearest(nus, 0.0)) {
            out[[i, j]] = alpha;
        }
    }
    out
}

/// Sampled TF response `H_a[n, m]` at `t = nT`, `f = mΔf`.
///
/// With `couplings == false` the frequency dependence of the array phase and
/// of the Doppler is dropped (the narrowband model).
pub fn tf_grid_response(cfg: &SystemConfig, paths: &[PathParams], a: usize, couplings: bool) -> Array2<C64> {
    Array2::from_shape_fn((cfg.n, cfg.m), |(n, m)| {
        let t = n as f64 * cfg.t_sym;
        let f = m as f64 * cfg.delta_f;
        if couplings {
            tf_response(cfg, paths, t, f, a)
        } else {
            paths
                .iter()
                .map(|p| {
                    p.equivalent_gain(cfg)
                        * cis(-(a as f64 - 1.0) * p.angle)
                        * cis(-f * p.delay)
                        * cis(p.doppler * t)
                })
                .sum()
        }
    })
}

/// Delay-Doppler-angle cube: unitary DFT over antennas of per-antenna DD grids,
/// `h[ψ] = N_A^{-1/2} Σ_a h_a e^{j2π a ψ / N_A}`. Input index `[a][k][ℓ]`,
/// output `[ψ][k][ℓ]`.
pub fn dda_transform(per_antenna: &Array3<C64>) -> Array3<C64> {
    let (na, n, m) = per_antenna.dim();
    let s = 1.0 / (na as f64).sqrt();
    Array3::from_shape_fn((na, n, m), |(q, k, l)| {
        (0..na)
            .map(|a| per_antenna[[a, k, l]] * cis((a * q) as f64 / na as f64))
            .sum::<C64>()
            * s
    })
}

/// Per-antenna DD grids (SFFT of the sampled TF response) stacked as `[a][k][ℓ]`.
pub fn dd_grid_responses(cfg: &SystemConfig, paths: &[PathParams], couplings: bool) -> Array3<C64> {
    let mut modem = Modem::<f64>::new();
    let mut out = Array3::zeros((cfg.n_a, cfg.n, cfg.m));
    for a in 0..cfg.n_a {
        let dd = modem.sfft(&tf_grid_response(cfg, paths, a + 1, couplings));
        out.index_axis_mut(ndarray::Axis(0), a).assign(&dd);
    }
    out
}

/// A delayed copy of a waveform: `g e^{-j2π f_c T_s E(t)} x(t − E(t))` with
/// `E(t) = delay − beta t` (all in samples).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Echo {
    pub delay: f64,
    pub beta: f64,
    pub gain: C64,
}

impl Echo {
    #[inline]
    pub fn eval<W: Waveform + ?Sized>(&self, src: &W, fc_ts: f64, t: f64) -> C64 {
        let e = self.delay - self.beta * t;
        let v = src.eval(t - e);
        if v == C64::new(0.0, 0.0) {
            return v;
        }
        self.gain * cis(-fc_ts * self.delay) * cis(fc_ts * self.beta * t) * v
    }
}

/// Sum of echoes sampled at `t = t0 + i`, `i = 0..len`.
pub fn render<W: Waveform + ?Sized>(echoes: &[(Echo, &W)], fc_ts: f64, t0: f64, len: usize) -> Vec<C64> {
    (0..len)
        .map(|i| {
            let t = t0 + i as f64;
            echoes.iter().map(|(e, w)| e.eval(*w, fc_ts, t)).sum()
        })
        .collect()
}

/// Complex white Gaussian samples of variance `var`.
pub fn awgn<R: Rng>(rng: &mut R, len: usize, var: f64) -> Vec<C64> {
    let s = (var / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * s, im * s)
        })
        .collect()
}

/// Signal at a single-antenna user from per-antenna transmit waveforms.
///
/// Antenna `a` (index `a−1` in `tx`) reaches the user over every path with
/// delay `τ_{p,a}(t)`. The output holds `len` samples starting at time `t0`
/// (samples, same origin as the waveforms; the drift `E(t)` is referenced to
/// `t_ref`). AWGN of variance `noise_var` is added when `noise` is `Some(seed)`.
pub fn apply_channel_waveforms(
    cfg: &SystemConfig,
    tx: &[&dyn Waveform],
    real: &ChannelRealization,
    t0: f64,
    t_ref: f64,
    len: usize,
    noise: Option<u64>,
) -> Result<Vec<C64>> {
    if tx.len() != cfg.n_a {
        return Err(Error::DimMismatch(format!("{} antenna streams, expected {}", tx.len(), cfg.n_a)));
    }
    let mut echoes = Vec::new();
    for p in &real.paths {
        let beta = p.beta(cfg);
        for (a, w) in tx.iter().enumerate() {
            // delay referenced to t_ref: E(t) = e0 − β(t − t_ref) = (e0 + β t_ref) − β t
            let e0 = p.antenna_delay_samples(cfg, a + 1) + beta * t_ref;
            echoes.push((Echo { delay: e0, beta, gain: p.gain }, *w));
        }
    }
    let mut out = render(&echoes, cfg.fc_ts(), t0, len);
    if let Some(seed) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (o, w) in out.iter_mut().zip(awgn(&mut rng, len, cfg.noise_var)) {
            *o += w;
        }
    }
    Ok(out)
}

/// Sampled-signal front end for [`apply_channel_waveforms`]: each antenna
/// stream is lifted to its trigonometric-polynomial form block by block
/// (the frame prefix is taken as the tail of the window that ends at the first
/// body sample), passed through the channel, and resampled on the same frame
/// grid.
pub fn apply_channel(
    cfg: &SystemConfig,
    tx: &[TimeSignal<f64>],
    real: &ChannelRealization,
    noise: Option<u64>,
) -> Result<TimeSignal<f64>> {
    if tx.len() != cfg.n_a {
        return Err(Error::DimMismatch(format!("{} antenna streams, expected {}", tx.len(), cfg.n_a)));
    }
    let framing = tx[0].framing;
    let mut modem = Modem::<f64>::new();
    let mut lifted = Vec::with_capacity(tx.len());
    for s in tx {
        if s.framing != framing {
            return Err(Error::DimMismatch("antenna streams use different framings".into()));
        }
        if s.samples.len() < s.start_offset + framing.len() {
            return Err(Error::Length(format!(
                "stream has {} samples, frame needs {}",
                s.samples.len().saturating_sub(s.start_offset),
                framing.len()
            )));
        }
        lifted.push(lift(&mut modem, s)?);
    }
    let refs: Vec<&dyn Waveform> = lifted.iter().map(|w| w as &dyn Waveform).collect();
    let samples = apply_channel_waveforms(cfg, &refs, real, 0.0, 0.0, framing.len(), noise)?;
    Ok(TimeSignal {
        samples,
        start_offset: 0,
        framing,
    })
}

fn lift(modem: &mut Modem<f64>, s: &TimeSignal<f64>) -> Result<crate::waveform::FramedWaveform> {
    use crate::modem::CpMode;
    use crate::waveform::FramedWaveform;
    let f = s.framing;
    let rows = modem.wigner(s)?;
    match f.mode {
        CpMode::PerSymbol => Ok(FramedWaveform::new(rows, f.prefix, f.mode)),
        CpMode::PerFrame => {
            let first = s.start_offset + f.prefix;
            let mut win: Vec<C64> = Vec::with_capacity(f.m);
            // window [−(M − prefix) .. prefix) relative to the frame, the part
            // before the frame is borrowed from block N−1 (standard prefix)
            let last = s.block(f.n - 1);
            win.extend_from_slice(&last[..f.m - f.prefix]);
            win.extend_from_slice(&s.samples[s.start_offset..first]);
            let mut buf: Vec<Complex<f64>> = win;
            modem.planner().run(&mut buf, crate::fft::Direction::Forward);
            let sc = 1.0 / (f.m as f64).sqrt();
            let row = buf.into_iter().map(|v| v * sc).collect();
            Ok(FramedWaveform::with_prefix_row(rows, f.prefix, row))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigParams;
    use crate::modem::CpMode;

    fn cfg() -> SystemConfig {
        ConfigParams::desk().validate().unwrap()
    }

    #[test]
    fn single_path_is_unit_power() {
        let c = cfg();
        for seed in 0..5 {
            let r = sample_channel(&c, 1, 30.0, 10.0, seed).unwrap();
            assert!((r.total_power() - 1.0).abs() < 1e-12);
        }
        let r = sample_channel(&c, 4, 30.0, 10.0, 7).unwrap();
        assert!((r.total_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_separated() {
        let c = cfg();
        let a = sample_channel(&c, 4, 69.0, 10.0, 11).unwrap();
        let b = sample_channel(&c, 4, 69.0, 10.0, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            for j in 0..i {
                assert!(angle_distance(a.paths[i].angle, a.paths[j].angle) >= 2.0 / c.n_s as f64);
            }
            let p = &a.paths[i];
            assert!(p.ell(&c) >= 0.0 && p.ell(&c) <= 10.0 + 1e-9);
            assert!((p.doppler.abs() - c.doppler(69.0)).abs() < 1e-9);
            assert!((-0.5..0.5).contains(&p.angle));
        }
    }

    #[test]
    fn delay_range_beyond_prefix_is_rejected() {
        let c = cfg();
        assert!(matches!(sample_channel(&c, 2, 0.0, 17.0, 0), Err(Error::Range(_))));
        assert!(matches!(sample_channel(&c, 0, 0.0, 1.0, 0), Err(Error::Range(_))));
    }

    #[test]
    fn antenna_delays() {
        let c = ConfigParams::reference().validate().unwrap();
        let mut p = PathParams::from_samples(&c, C64::new(1.0, 0.0), 3.0, 0.0, 0.25);
        let tau = p.delay;
        assert_eq!(per_antenna_delay(&c, &p, 1).unwrap(), tau);
        let d2 = per_antenna_delay(&c, &p, 2).unwrap() - tau;
        assert!((d2 - 8.333_333e-12).abs() < 1e-17);
        p.angle = -0.25;
        let d3 = per_antenna_delay(&c, &p, 3).unwrap() - tau;
        assert!((d3 + 16.666_667e-12).abs() < 1e-17);
        assert!(per_antenna_delay(&c, &p, 0).is_err());
        assert!(per_antenna_delay(&c, &p, c.n_a + 1).is_err());
    }

    #[test]
    fn tf_response_cases() {
        let c = cfg();
        let p = PathParams::from_samples(&c, C64::new(0.6, 0.8), 2.5, 0.0, 0.1);
        let h = tf_response(&c, std::slice::from_ref(&p), 0.0, 0.0, 1);
        assert!((h - p.equivalent_gain(&c)).norm() < 1e-12);
        let h1 = tf_response(&c, std::slice::from_ref(&p), 1e-5, 3e6, 1);
        let h0 = tf_response(&c, std::slice::from_ref(&p), 0.0, 3e6, 1);
        assert!((h1 - h0).norm() < 1e-12);
        let ha = tf_response(&c, std::slice::from_ref(&p), 0.0, 0.0, 4);
        let hb = tf_response(&c, std::slice::from_ref(&p), 0.0, 0.0, 5);
        assert!((hb - ha * cis(-p.angle)).norm() < 1e-9);
    }

    #[test]
    fn dd_response_branches() {
        let c = cfg();
        let taus: Vec<f64> = (0..16).map(|i| i as f64 * c.t_s).collect();
        let nus: Vec<f64> = (-4..4).map(|i| i as f64 * 1e3).collect();
        let p = PathParams::from_samples(&c, C64::new(1.0, 0.0), 3.0, 0.0, 0.0);
        let h = dd_response(&c, &p, &taus, &nus, 1);
        assert_eq!(h.iter().filter(|v| v.norm() > 0.0).count(), 1);
        assert!((h[[3, 4]].norm() - 1.0).abs() < 1e-12);

        let p = PathParams::from_samples(&c, C64::new(1.0, 0.0), 3.0, 2000.0, 0.2);
        let h1 = dd_response(&c, &p, &taus, &nus, 1);
        let mu = c.f_c / 2000.0;
        assert!(h1.iter().all(|v| (v.norm() - mu).abs() < 1e-6 * mu));
        // antenna 2 samples antenna 1's surface shifted by ψ/f_c, times e^{-j2πψ}
        let shifted: Vec<f64> = taus.iter().map(|t| t + p.angle / c.f_c).collect();
        let h2 = dd_response(&c, &p, &shifted, &nus, 2);
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert!((b - a * cis(-p.angle)).norm() < 1e-6 * mu);
        }
    }

    #[test]
    fn static_echo_is_integer_shift() {
        let c = cfg();
        let rows = Array2::from_shape_fn((2, c.m), |(n, m)| cis(((n * 3 + m * m) % 11) as f64 / 11.0));
        let w = crate::waveform::FramedWaveform::new(rows, 4, CpMode::PerFrame);
        let p = PathParams::from_samples(&c, C64::new(0.0, 1.0), 3.0, 0.0, 0.0);
        let real = ChannelRealization::new(vec![p.clone()]);
        let mut c1 = c.clone();
        c1.n_a = 1;
        let out = apply_channel_waveforms(&c1, &[&w], &real, 0.0, 0.0, 2 * c.m + 4, None).unwrap();
        let alpha = p.equivalent_gain(&c);
        for i in 3..out.len() {
            assert!((out[i] - alpha * w.eval(i as f64 - 3.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn single_tone_probe_matches_tf_response() {
        let mut c = cfg();
        c.n_a = 3;
        let m0 = 37;
        let mut rows = Array2::zeros((2, c.m));
        rows[[1, m0]] = C64::new(1.0, 0.0);
        let idle = crate::waveform::FramedWaveform::new(Array2::zeros((2, c.m)), 16, CpMode::PerSymbol);
        let tone = crate::waveform::FramedWaveform::new(rows, 16, CpMode::PerSymbol);
        let p = PathParams::from_samples(&c, C64::new(0.3, -0.7), 4.37, 0.0, -0.31);
        let real = ChannelRealization::new(vec![p.clone()]);
        let tx: [&dyn Waveform; 3] = [&idle, &idle, &tone];
        let len = 2 * (c.m + 16);
        let samples = apply_channel_waveforms(&c, &tx, &real, 0.0, 0.0, len, None).unwrap();
        let sig = TimeSignal {
            samples,
            start_offset: 0,
            framing: tone.framing,
        };
        let y = Modem::<f64>::new().wigner(&sig).unwrap();
        let h = tf_response(&c, &real.paths, 0.0, m0 as f64 * c.delta_f, 3);
        assert!((y[[1, m0]] - h).norm() < 1e-6 * h.norm(), "{} vs {}", y[[1, m0]], h);
    }

    #[test]
    fn zero_input_gives_noise_of_configured_variance() {
        let mut c = cfg();
        c.n_a = 1;
        c.noise_var = 0.5;
        let z = crate::waveform::FramedWaveform::new(Array2::zeros((4, c.m)), 8, CpMode::PerFrame);
        let real = sample_channel(&c, 2, 69.0, 8.0, 1).unwrap();
        let out = apply_channel_waveforms(&c, &[&z], &real, 0.0, 0.0, 20_000, Some(3)).unwrap();
        let var = out.iter().map(|v| v.norm_sqr()).sum::<f64>() / out.len() as f64;
        assert!((var - 0.5).abs() < 0.03, "{var}");
        let again = apply_channel_waveforms(&c, &[&z], &real, 0.0, 0.0, 20_000, Some(3)).unwrap();
        assert_eq!(out, again);
    }
}
