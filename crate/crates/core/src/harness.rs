//! Monte Carlo experiment runner.
//!
//! Trial `t` draws its channel and noise from `trial_seed(master, t)`, the
//! first words of ChaCha8 keyed by the master seed on stream `t`. Every sweep
//! point of a trial reuses that seed, so curves are paired across the axis.
//! Trials run in parallel; results are collected by index and reduced in
//! trial order with compensated sums, so tables do not depend on the thread
//! count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{angle_distance, sample_channel, ChannelRealization, PathParams};
use crate::config::{spatial_angle, wrap_angle, SystemConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate_from_sweep, render_sweep, truth_at_down, EstimatorOptions, PathEstimate, Schedule, UnitNoise};
use crate::link::{EffectiveChannel, SinrStats};
use crate::metrics::{match_paths, nmse, nmse_complex, rate_bound, Summary};
use crate::precoder::{build_precoder, PrecoderKind, PrecoderOptions};
use crate::spec::{default_eta, Axis, Csi, ExperimentSpec, Scenario};
use crate::{cis, C64};

pub const CSV_HEADER: &str = "sweep_value,metric,mean,stderr,trials,config_hash";

pub const RATE_METRICS: [&str; 8] = [
    "rate_proposed",
    "rate_delay_phase",
    "rate_doppler_only",
    "rate_traditional",
    "rate_bound",
    "gain_proposed_over_delay_phase",
    "gain_delay_phase_over_baselines",
    "error_rate",
];

pub const NMSE_METRICS: [&str; 5] = ["nmse_alpha", "nmse_tau", "nmse_nu", "miss_rate", "error_rate"];

/// Per-trial seed: first word of ChaCha8(master) on stream `trial`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// Channel and noise seeds derived from a trial seed.
fn sub_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

/// One trial at one sweep point.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub point: usize,
    pub sweep_value: f64,
    /// Metric values in the experiment's metric order (without `error_rate`),
    /// or the error that excluded the trial.
    pub outcome: std::result::Result<Vec<f64>, Error>,
    /// Ground truth at the estimation epoch (estimation experiments).
    pub truth: Vec<PathParams>,
    pub estimates: Vec<PathEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub sweep_value: f64,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub config_hash: String,
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn get(&self, sweep_value: f64, metric: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.sweep_value == sweep_value && r.metric == metric)
    }

    /// Rows of one metric in sweep order.
    pub fn series(&self, metric: &str) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.metric == metric).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:e},{:e},{},{}\n",
                r.sweep_value, r.metric, r.mean, r.stderr, r.trials, self.config_hash
            ));
        }
        s
    }
}

/// Draw the trial's paths: delays in `[delay_min, delay_max]`; with a fixed
/// AoA the whole set is rotated so the first path arrives from it.
pub fn draw_channel(cfg: &SystemConfig, sc: &Scenario, seed: u64) -> Result<ChannelRealization> {
    let mut real = sample_channel(cfg, sc.paths, sc.speed_kmh / 3.6, sc.delay_max - sc.delay_min, seed)?;
    let shift = sc.aoa_deg.map(|a| spatial_angle(a) - real.paths[0].angle);
    for p in &mut real.paths {
        p.delay += sc.delay_min * cfg.t_s;
        if let Some(d) = shift {
            p.angle = wrap_angle(p.angle + d);
        }
    }
    Ok(real)
}

fn estimator_options(cfg: &SystemConfig, sc: &Scenario) -> EstimatorOptions {
    EstimatorOptions {
        eta: sc.eta.unwrap_or_else(|| default_eta(cfg.m)),
        gap: sc.gap,
        ..Default::default()
    }
}

/// Estimation with `NoPathDetected` mapped to an empty list.
fn estimate(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    sweep: &[Vec<C64>],
    noise: &UnitNoise,
    opts: &EstimatorOptions,
) -> Result<Vec<PathEstimate>> {
    let n = (cfg.noise_var > 0.0).then_some((noise, cfg.noise_var));
    match estimate_from_sweep(cfg, real, sweep, n, opts) {
        Err(Error::NoPathDetected) => Ok(Vec::new()),
        r => r,
    }
}

/// NMSE of gain, delay and Doppler against the truth at the down-chirp slot,
/// plus the fraction of truth paths left unmatched.
pub fn nmse_metrics(cfg: &SystemConfig, real: &ChannelRealization, est: &[PathEstimate], gap: usize) -> Result<Vec<f64>> {
    let sched = Schedule::new(cfg, gap);
    let truth: Vec<(f64, C64)> = real.paths.iter().map(|p| truth_at_down(cfg, p, &sched)).collect();
    let angles: Vec<f64> = real.paths.iter().map(|p| p.angle).collect();
    let est_angles: Vec<f64> = est.iter().map(|e| e.psi_hat).collect();
    let pairs = match_paths(&angles, &est_angles, 2.0 / cfg.n_s as f64);
    let zero = C64::new(0.0, 0.0);
    let a: Vec<C64> = truth.iter().map(|t| t.1).collect();
    let a_hat: Vec<C64> = pairs.iter().map(|j| j.map_or(zero, |j| est[j].alpha_hat)).collect();
    let l: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let l_hat: Vec<f64> = pairs.iter().map(|j| j.map_or(0.0, |j| est[j].ell_hat)).collect();
    let v: Vec<f64> = real.paths.iter().map(|p| p.doppler).collect();
    let v_hat: Vec<f64> = pairs.iter().map(|j| j.map_or(0.0, |j| est[j].nu_hat)).collect();
    let misses = pairs.iter().filter(|j| j.is_none()).count() as f64 / pairs.len() as f64;
    Ok(vec![nmse_complex(&a, &a_hat)?, nmse(&l, &l_hat)?, nmse(&v, &v_hat)?, misses])
}

/// An estimate moved from the down-chirp slot back to the frame epoch of the
/// realization (delay drift and carrier rotation undone).
pub fn estimate_to_frame(cfg: &SystemConfig, e: &PathEstimate, sched: &Schedule) -> PathParams {
    let u = sched.body_start(sched.down_slot());
    let ell0 = e.ell_hat + e.nu_hat / cfg.f_c * u;
    PathParams::from_samples(cfg, e.alpha_hat * cis(cfg.fc_ts() * e.ell_hat), ell0, e.nu_hat, e.psi_hat)
}

/// Noise-free SINR statistics of the four precoders on one channel.
pub fn precoder_stats(cfg: &SystemConfig, real: &ChannelRealization, csi: &[PathParams]) -> Result<Vec<SinrStats>> {
    let opts = PrecoderOptions::unit_symbol(cfg);
    PrecoderKind::ALL
        .iter()
        .map(|&kind| {
            let pre = build_precoder(kind, csi, &opts, cfg)?;
            Ok(EffectiveChannel::build(cfg, real, &pre)?.sinr_stats())
        })
        .collect()
}

fn rate_metrics(cfg: &SystemConfig, real: &ChannelRealization, stats: &[SinrStats]) -> Vec<f64> {
    let var = cfg.noise_var;
    let r: Vec<f64> = stats.iter().map(|s| s.mean_rate(var)).collect();
    let gains: Vec<C64> = real.paths.iter().map(|p| p.equivalent_gain(cfg)).collect();
    let bound = rate_bound(cfg.n_a, 1.0 / var, &gains);
    vec![r[0], r[1], r[2], r[3], bound, r[0] - r[1], r[1] - r[2].max(r[3])]
}

fn rate_point(cfg: &SystemConfig, sc: &Scenario, seed: u64) -> Result<Vec<f64>> {
    let (ch, ns) = sub_seeds(seed);
    let real = draw_channel(cfg, sc, ch)?;
    let csi = match sc.csi {
        Csi::Perfect => real.paths.clone(),
        Csi::Estimated => {
            let opts = estimator_options(cfg, sc);
            let sched = Schedule::new(cfg, opts.gap);
            let sweep = render_sweep(cfg, &real, &sched);
            let est = estimate(cfg, &real, &sweep, &UnitNoise::draw(cfg, ns), &opts)?;
            if est.is_empty() {
                return Err(Error::NoPathDetected);
            }
            est.iter().map(|e| estimate_to_frame(cfg, e, &sched)).collect()
        }
    };
    Ok(rate_metrics(cfg, &real, &precoder_stats(cfg, &real, &csi)?))
}

fn nmse_point(cfg: &SystemConfig, sc: &Scenario, seed: u64) -> (Result<Vec<f64>>, Vec<PathParams>, Vec<PathEstimate>) {
    let (ch, ns) = sub_seeds(seed);
    let real = match draw_channel(cfg, sc, ch) {
        Ok(r) => r,
        Err(e) => return (Err(e), Vec::new(), Vec::new()),
    };
    let opts = estimator_options(cfg, sc);
    let sweep = render_sweep(cfg, &real, &Schedule::new(cfg, opts.gap));
    let noise = UnitNoise::draw(cfg, ns);
    match estimate(cfg, &real, &sweep, &noise, &opts) {
        Ok(est) => (nmse_metrics(cfg, &real, &est, opts.gap), real.paths, est),
        Err(e) => (Err(e), real.paths, Vec::new()),
    }
}

/// All sweep points of one trial. Points that differ only in SNR share the
/// channel, the pilot rendering and the precoded effective channels.
pub fn run_trial(spec: &ExperimentSpec, points: &[(SystemConfig, Scenario)], trial: usize) -> Vec<TrialResult> {
    let seed = trial_seed(spec.seed, trial);
    let result = |point: usize, outcome, truth, estimates| TrialResult {
        trial,
        seed,
        point,
        sweep_value: spec.sweep.values[point],
        outcome,
        truth,
        estimates,
    };
    let snr_only = spec.sweep.axis == Axis::SnrDb && !points.is_empty();
    if spec.experiment.is_rate() {
        if snr_only && spec.scenario.csi == Csi::Perfect {
            let (cfg, sc) = &points[0];
            let (ch, _) = sub_seeds(seed);
            let shared = draw_channel(cfg, sc, ch).and_then(|real| {
                let stats = precoder_stats(cfg, &real, &real.paths)?;
                Ok((real, stats))
            });
            return points
                .iter()
                .enumerate()
                .map(|(i, (cfg, _))| {
                    let out = match &shared {
                        Ok((real, stats)) => Ok(rate_metrics(cfg, real, stats)),
                        Err(e) => Err(e.clone()),
                    };
                    result(i, out, Vec::new(), Vec::new())
                })
                .collect();
        }
        return points
            .iter()
            .enumerate()
            .map(|(i, (cfg, sc))| result(i, rate_point(cfg, sc, seed), Vec::new(), Vec::new()))
            .collect();
    }
    if snr_only {
        let (cfg0, sc0) = &points[0];
        let (ch, ns) = sub_seeds(seed);
        let real = match draw_channel(cfg0, sc0, ch) {
            Ok(r) => r,
            Err(e) => {
                return (0..points.len())
                    .map(|i| result(i, Err(e.clone()), Vec::new(), Vec::new()))
                    .collect()
            }
        };
        let sweep = render_sweep(cfg0, &real, &Schedule::new(cfg0, sc0.gap));
        let noise = UnitNoise::draw(cfg0, ns);
        return points
            .iter()
            .enumerate()
            .map(|(i, (cfg, sc))| {
                let opts = estimator_options(cfg, sc);
                match estimate(cfg, &real, &sweep, &noise, &opts) {
                    Ok(est) => result(i, nmse_metrics(cfg, &real, &est, opts.gap), real.paths.clone(), est),
                    Err(e) => result(i, Err(e), real.paths.clone(), Vec::new()),
                }
            })
            .collect();
    }
    points
        .iter()
        .enumerate()
        .map(|(i, (cfg, sc))| {
            let (out, truth, est) = nmse_point(cfg, sc, seed);
            result(i, out, truth, est)
        })
        .collect()
}

/// Run every trial of a spec. `threads = 0` uses the rayon default.
pub fn run_trials(spec: &ExperimentSpec, threads: usize) -> Result<Vec<Vec<TrialResult>>> {
    let points = spec
        .sweep
        .values
        .iter()
        .map(|&v| spec.point(v))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, &points, t))
            .collect()
    }))
}

pub fn metric_names(spec: &ExperimentSpec) -> &'static [&'static str] {
    if spec.experiment.is_rate() {
        &RATE_METRICS
    } else {
        &NMSE_METRICS
    }
}

/// Per-point means and standard errors. Failed trials are excluded from
/// every metric and counted in `error_rate`.
pub fn aggregate(spec: &ExperimentSpec, trials: &[Vec<TrialResult>]) -> ResultTable {
    let names = metric_names(spec);
    let mut rows = Vec::new();
    if !trials.is_empty() {
        for (i, &value) in spec.sweep.values.iter().enumerate() {
            let ok: Vec<&Vec<f64>> = trials.iter().filter_map(|t| t[i].outcome.as_ref().ok()).collect();
            for (k, &name) in names.iter().enumerate() {
                let s = if name == "error_rate" {
                    let flags: Vec<f64> = trials.iter().map(|t| t[i].outcome.is_err() as u8 as f64).collect();
                    Summary::of(&flags)
                } else {
                    Summary::of(&ok.iter().map(|v| v[k]).collect::<Vec<f64>>())
                };
                rows.push(Row {
                    sweep_value: value,
                    metric: name.to_string(),
                    mean: s.mean,
                    stderr: s.stderr,
                    trials: s.count,
                });
            }
        }
    }
    ResultTable {
        config_hash: spec.config_hash(),
        rows,
    }
}

pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ResultTable> {
    let trials = run_trials(spec, threads)?;
    Ok(aggregate(spec, &trials))
}

/// Closest truth path for each estimate, for per-trial record dumps.
pub fn nearest_truth(truth: &[PathParams], e: &PathEstimate) -> Option<usize> {
    truth
        .iter()
        .enumerate()
        .min_by(|a, b| angle_distance(a.1.angle, e.psi_hat).total_cmp(&angle_distance(b.1.angle, e.psi_hat)))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Experiment;

    fn tiny(e: Experiment) -> ExperimentSpec {
        let mut s = ExperimentSpec::defaults(e, false);
        s.config.m = 64;
        s.config.n = 4;
        s.config.n_a = 16;
        s.config.n_t = if e == Experiment::NmseVsG { 16 } else { 4 };
        s.config.delta_f = 4e6;
        s.scenario.delay_max = s.scenario.delay_max.min(10.0);
        s.trials = 3;
        if e == Experiment::RateVsAntennas {
            s.sweep.values = vec![8.0, 16.0];
        }
        if e == Experiment::RateVsBw {
            s.config.delta_f = 2e6;
            s.sweep.values = vec![128.0, 256.0];
        }
        if e == Experiment::RateVsN {
            s.sweep.values = vec![4.0, 8.0];
        }
        s
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|t| trial_seed(7, t)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(trial_seed(7, 3), a[3]);
        assert_ne!(trial_seed(8, 3), a[3]);
    }

    #[test]
    fn zero_trials_give_empty_table() {
        let mut s = tiny(Experiment::RateVsSnr);
        s.trials = 0;
        let t = run_experiment(&s, 1).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn every_experiment_runs() {
        for e in Experiment::ALL {
            let s = tiny(e);
            let t = run_experiment(&s, 1).unwrap();
            assert_eq!(t.rows.len(), s.sweep.values.len() * metric_names(&s).len(), "{e}");
            for r in &t.rows {
                if r.metric == "error_rate" {
                    assert_eq!(r.trials, 3);
                } else {
                    assert!(r.mean.is_finite() || r.trials == 0, "{e} {r:?}");
                }
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_table() {
        let s = tiny(Experiment::RateVsN);
        let a = run_experiment(&s, 1).unwrap().to_csv();
        let b = run_experiment(&s, 3).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn snr_sharing_matches_point_evaluation() {
        // the shared-channel shortcut must agree with evaluating each point alone
        let s = tiny(Experiment::RateVsSnr);
        let points: Vec<_> = s.sweep.values.iter().map(|&v| s.point(v).unwrap()).collect();
        let shared = run_trial(&s, &points, 1);
        for (i, (cfg, sc)) in points.iter().enumerate() {
            let alone = rate_point(cfg, sc, shared[i].seed).unwrap();
            assert_eq!(shared[i].outcome.as_ref().unwrap(), &alone);
        }
        let s = tiny(Experiment::EstNmse);
        let points: Vec<_> = s.sweep.values.iter().map(|&v| s.point(v).unwrap()).collect();
        let shared = run_trial(&s, &points, 2);
        for (i, (cfg, sc)) in points.iter().enumerate() {
            let (alone, _, _) = nmse_point(cfg, sc, shared[i].seed);
            assert_eq!(shared[i].outcome.as_ref().unwrap(), &alone.unwrap());
        }
    }

    #[test]
    fn estimated_csi_close_to_perfect_at_high_snr() {
        let mut s = tiny(Experiment::RateVsSnr);
        s.sweep.values = vec![30.0];
        let perfect = run_experiment(&s, 1).unwrap();
        s.scenario.csi = Csi::Estimated;
        let est = run_experiment(&s, 1).unwrap();
        let p = perfect.get(30.0, "rate_proposed").unwrap().mean;
        let e = est.get(30.0, "rate_proposed").unwrap().mean;
        assert!(e <= p + 1e-9 && e > p - 1.0, "{e} vs {p}");
    }

    #[test]
    fn nmse_of_exact_estimates_is_zero() {
        let s = tiny(Experiment::EstNmse);
        let (cfg, sc) = s.point(20.0).unwrap();
        let real = draw_channel(&cfg, &sc, 5).unwrap();
        let sched = Schedule::new(&cfg, 0);
        let est: Vec<PathEstimate> = real
            .paths
            .iter()
            .map(|p| {
                let (l, a) = truth_at_down(&cfg, p, &sched);
                PathEstimate {
                    psi_hat: p.angle,
                    m_up: 0.0,
                    m_down: 0.0,
                    nu_hat: p.doppler,
                    ell_hat: l,
                    alpha_hat: a,
                    slot: 1,
                    chain: 0,
                    sweep_angle: 0.0,
                    n_g: 0,
                    clamped: false,
                }
            })
            .collect();
        assert_eq!(nmse_metrics(&cfg, &real, &est, 0).unwrap(), vec![0.0; 4]);
        // nothing detected: every family at full-power error
        assert_eq!(nmse_metrics(&cfg, &real, &[], 0).unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
        // round trip to the frame epoch
        let back = estimate_to_frame(&cfg, &est[0], &sched);
        assert!((back.delay - real.paths[0].delay).abs() < 1e-18);
        assert!((back.gain - real.paths[0].gain).norm() < 1e-9);
    }
}
