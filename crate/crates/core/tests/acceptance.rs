//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`) so
//! every check prints exactly one PASS/FAIL line.

use std::time::{Duration, Instant};

use ndarray::Array2;
use otfs_squint::analog::ttd_offset;
use otfs_squint::channel::{sample_channel, ChannelRealization, PathParams};
use otfs_squint::config::wrap_angle;
use otfs_squint::estimator::{
    dechirp_dft, render_down, render_sweep, run_estimation, sweep_grid, truth_at_down, DftAngleSequence, Schedule,
};
use otfs_squint::harness::{run_experiment, run_trials, TrialResult};
use otfs_squint::link::{dd_io_oracle, simulate_downlink, EffectiveChannel};
use otfs_squint::metrics::{rate_bound, Summary};
use otfs_squint::modem::{CpMode, Modem};
use otfs_squint::precoder::{allocate_power, build_precoder, PrecoderKind, PrecoderOptions};
use otfs_squint::spec::{Axis, Experiment, ExperimentSpec, Sweep};
use otfs_squint::waveform::ChirpDir;
use otfs_squint::{cis, ConfigParams, SystemConfig, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (bool, String);

fn random_grid(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    Array2::from_shape_fn((n, m), |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

fn max_abs(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Path with equivalent gain `alpha`.
fn path(cfg: &SystemConfig, alpha: C64, ell: f64, nu: f64, psi: f64) -> PathParams {
    let mut p = PathParams::from_samples(cfg, C64::new(1.0, 0.0), ell, nu, psi);
    p.gain = alpha * cis(cfg.f_c * p.delay);
    p
}

fn desk() -> SystemConfig {
    ConfigParams { noise_var: 0.0, ..ConfigParams::desk() }.validate().unwrap()
}

fn transforms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut modem = Modem::<f64>::new();
    let (mut e_sfft, mut e_heis) = (0.0f64, 0.0f64);
    for _ in 0..4 {
        let x = random_grid(16, 256, &mut rng);
        let tf = modem.isfft(&x);
        e_sfft = e_sfft.max(max_abs(&modem.sfft(&tf), &x));
        for mode in [CpMode::PerFrame, CpMode::PerSymbol] {
            let sig = modem.heisenberg(&x, 16, mode);
            e_heis = e_heis.max(max_abs(&modem.wigner(&sig).unwrap(), &x));
        }
    }
    (
        e_sfft < 1e-12 && e_heis < 1e-10,
        format!("ISFFT/SFFT {e_sfft:.1e}, Heisenberg/Wigner {e_heis:.1e}"),
    )
}

fn oracle_equivalence() -> Check {
    let c = ConfigParams {
        delta_f: 4e6,
        m: 32,
        n: 8,
        n_a: 8,
        n_r: 2,
        n_t: 8,
        n_cp: 8,
        n_cpp: 8,
        noise_var: 0.0,
        ..ConfigParams::desk()
    }
    .validate()
    .unwrap();
    let opts = PrecoderOptions::unit_symbol(&c);
    let err = |paths: &[PathParams], kind: PrecoderKind, seed: u64| {
        let real = ChannelRealization::new(paths.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_grid(c.n, c.m, &mut rng);
        let pre = build_precoder(kind, paths, &opts, &c).unwrap();
        let ys = simulate_downlink(&c, &real, &pre, &x, None).unwrap();
        rel(&dd_io_oracle(&c, &real, &pre, &x).unwrap(), &ys)
    };
    // sample-spaced landings: integer delays, one arrival angle per channel
    // (boresight for the phase-only analog kinds)
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut cases) = (0.0f64, 0);
    for seed in 0..8u64 {
        for kind in PrecoderKind::ALL {
            let psi = if kind.uses_ttd() { rng.gen_range(-0.45..0.45) } else { 0.0 };
            let p = 1 + seed as usize % 2;
            let paths: Vec<PathParams> = (0..p)
                .map(|_| {
                    let alpha = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let nu = rng.gen_range(-1.0..1.0) * c.nu_max;
                    path(&c, alpha, rng.gen_range(0..c.n_cp - 1) as f64, nu, psi)
                })
                .collect();
            worst = worst.max(err(&paths, kind, 100 + seed));
            cases += 1;
        }
    }
    // general channels: fractional delays, distinct angles
    let mut general = 0.0f64;
    for seed in 0..6u64 {
        let real = sample_channel(&c, 1 + seed as usize % 2, 250.0 / 3.6, 6.0, seed).unwrap();
        for kind in PrecoderKind::ALL {
            general = general.max(err(&real.paths, kind, 200 + seed));
        }
    }
    (
        worst < 1e-3,
        format!("{cases} sample-spaced cases, worst relative error {worst:.1e} (fractional delays, informational: {general:.1e})"),
    )
}

/// Predicted up/down peak positions of one path.
fn predicted_peaks(c: &SystemConfig, p: &PathParams, sched: &Schedule, slot: usize, psi_bar: f64) -> (f64, f64) {
    let fcts = c.fc_ts();
    let (nt, np) = (c.n_t as f64, c.n_p as f64);
    let two_km = 2.0 * c.kappa() * c.m as f64;
    let shift = ttd_offset(c) / c.t_s + (np - 1.0) * p.angle / (2.0 * fcts);
    let ell_at = |g: usize| p.ell(c) - p.beta(c) * sched.body_start(g);
    let tone = c.m as f64 * p.doppler * c.t_s;
    let up = -two_km * (ell_at(slot) + shift) + tone
        - (nt - 1.0) * wrap_angle(psi_bar + p.angle) * np * c.kappa() * c.m as f64 / fcts;
    let down = two_km * (ell_at(sched.down_slot()) + shift) + tone;
    (up, down)
}

fn cyclic_diff(a: f64, b: f64, m: usize) -> f64 {
    let mf = m as f64;
    (a - b + mf / 2.0).rem_euclid(mf) - mf / 2.0
}

fn peak_law() -> Check {
    let c = desk();
    let sched = Schedule::new(&c, 0);
    let grid = sweep_grid(&c);
    let (mut cases, mut int_ok, mut frac_ok) = (0, 0, 0);
    let mut worst_frac = 0.0f64;
    for (i, &ell) in [0.4, 3.3, 7.75, 11.1, 13.6].iter().enumerate() {
        for &fr in &[-0.95, -0.35, 0.2, 0.8] {
            for j in 0..10 {
                let psi = -0.45 + 0.1 * j as f64 + 0.013 * i as f64;
                let p = path(&c, cis(0.1 * j as f64), ell, fr * c.nu_max, psi);
                let real = ChannelRealization::new(vec![p.clone()]);
                let sweep = render_sweep(&c, &real, &sched);
                let seqs: Vec<DftAngleSequence> = sweep
                    .iter()
                    .map(|b| dechirp_dft(b, ChirpDir::Up, c.m).unwrap())
                    .collect();
                let best = (0..seqs.len())
                    .max_by(|&a, &b| seqs[a].peak().1.total_cmp(&seqs[b].peak().1))
                    .unwrap();
                let slot = best / c.n_r + 1;
                let down = dechirp_dft(&render_down(&c, &real, &sched, -psi), ChirpDir::Down, c.m).unwrap();
                let (pu, pd) = predicted_peaks(&c, &p, &sched, slot, grid[best]);
                for (seq, pred) in [(&seqs[best], pu), (&down, pd)] {
                    cases += 1;
                    if cyclic_diff(seq.peak().0 as f64, pred.round(), c.m).abs() <= 1.0 {
                        int_ok += 1;
                    }
                    let e = cyclic_diff(seq.refined_peak(), pred, c.m).abs();
                    worst_frac = worst_frac.max(e);
                    if e < 0.05 {
                        frac_ok += 1;
                    }
                }
            }
        }
    }
    let frac = frac_ok as f64 / cases as f64;
    (
        int_ok == cases && frac >= 0.95,
        format!(
            "{cases} peaks: integer within ±1 {int_ok}/{cases}, refined within 0.05 {:.1}% (worst {worst_frac:.3})",
            100.0 * frac
        ),
    )
}

fn noiseless_recovery() -> Check {
    let c = ConfigParams { n_t: 64, noise_var: 0.0, ..ConfigParams::desk() }.validate().unwrap();
    let sched = Schedule::new(&c, 0);
    let (mut e_nu, mut e_ell, mut e_alpha) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for (i, &ell) in [0.7, 4.25, 9.5, 13.3].iter().enumerate() {
        for &fr in &[-0.9, -0.2, 0.5] {
            let p = path(&c, cis(0.37 * i as f64 + fr) * 0.8, ell, fr * c.nu_max, 0.0);
            let real = ChannelRealization::new(vec![p.clone()]);
            match run_estimation(&real, &c, 0.05, 1) {
                Ok(est) if est.len() == 1 => {
                    let (ell_t, alpha_t) = truth_at_down(&c, &p, &sched);
                    e_nu = e_nu.max((est[0].nu_hat - p.doppler).abs() / c.nu_max);
                    e_ell = e_ell.max((est[0].ell_hat - ell_t).abs());
                    e_alpha = e_alpha.max((est[0].alpha_hat - alpha_t).norm() / alpha_t.norm());
                }
                _ => failures += 1,
            }
        }
    }
    (
        failures == 0 && e_nu < 5e-3 && e_ell < 0.05 && e_alpha < 1e-2,
        format!("12 paths, {failures} failures, worst |Δν|/ν_max {e_nu:.1e}, |Δℓ| {e_ell:.1e}, |Δα|/|α| {e_alpha:.1e}"),
    )
}

/// Per-trial `a − b` of metric `k` between points `i` and `j`, over trials where both succeeded.
fn paired(trials: &[Vec<TrialResult>], k: usize, i: usize, j: usize) -> Summary {
    let d: Vec<f64> = trials
        .iter()
        .filter_map(|t| match (&t[i].outcome, &t[j].outcome) {
            (Ok(a), Ok(b)) => Some(a[k] - b[k]),
            _ => None,
        })
        .collect();
    Summary::of(&d)
}

fn point(trials: &[Vec<TrialResult>], k: usize, i: usize) -> Summary {
    let v: Vec<f64> = trials.iter().filter_map(|t| t[i].outcome.as_ref().ok().map(|o| o[k])).collect();
    Summary::of(&v)
}

/// Significantly positive.
fn pos(s: &Summary) -> bool {
    s.lower() > 0.0
}

/// No step is a significant increase and the whole span is a significant decrease.
fn decreasing(trials: &[Vec<TrialResult>], k: usize) -> bool {
    let n = trials[0].len();
    (1..n).all(|i| paired(trials, k, i, i - 1).lower() <= 0.0) && pos(&paired(trials, k, 0, n - 1))
}

/// Every point's interval contains the mean over points.
fn flat(trials: &[Vec<TrialResult>], k: usize) -> bool {
    let pts: Vec<Summary> = (0..trials[0].len()).map(|i| point(trials, k, i)).collect();
    let mean = pts.iter().map(|s| s.mean).sum::<f64>() / pts.len() as f64;
    pts.iter().all(|s| s.lower() <= mean && mean <= s.upper())
}

fn means(trials: &[Vec<TrialResult>], k: usize) -> String {
    let v: Vec<String> = (0..trials[0].len()).map(|i| format!("{:.3e}", point(trials, k, i).mean)).collect();
    v.join(" ")
}

const ALPHA: usize = 0;
const TAU: usize = 1;
const NU: usize = 2;

fn estimator_trends() -> Check {
    let mut ok = true;
    let mut msg = Vec::new();

    let snr = ExperimentSpec::defaults(Experiment::EstNmse, false);
    let t = run_trials(&snr, 0).unwrap();
    for (k, name) in [(ALPHA, "α"), (TAU, "τ"), (NU, "ν")] {
        let d = decreasing(&t, k);
        ok &= d;
        msg.push(format!("SNR {name} {} [{}]", if d { "decreasing" } else { "NOT decreasing" }, means(&t, k)));
    }

    let mut nt = snr.clone();
    nt.sweep = Sweep { axis: Axis::NT, values: vec![4.0, 8.0] };
    nt.config.n_t = 4;
    nt.config.delta_f = 4e6;
    nt.scenario.snr_db = 20.0;
    let t = run_trials(&nt, 0).unwrap();
    let d = paired(&t, ALPHA, 0, 1);
    ok &= pos(&d);
    msg.push(format!("α(N_T=4)−α(N_T=8) {:.2e}±{:.1e}", d.mean, d.ci95()));

    let g = ExperimentSpec::defaults(Experiment::NmseVsG, false);
    let t = run_trials(&g, 0).unwrap();
    let (dn, ft) = (decreasing(&t, NU), flat(&t, TAU));
    ok &= dn && ft;
    msg.push(format!(
        "gap ν {} [{}], τ {} [{}]",
        if dn { "decreasing" } else { "NOT decreasing" },
        means(&t, NU),
        if ft { "flat" } else { "NOT flat" },
        means(&t, TAU)
    ));

    let aoa = ExperimentSpec::defaults(Experiment::NmseVsAoa, false);
    let t = run_trials(&aoa, 0).unwrap();
    let last = t[0].len() - 1;
    let d = paired(&t, ALPHA, last, 0);
    ok &= pos(&d);
    msg.push(format!("α(60°)−α(0°) {:.2e}±{:.1e}", d.mean, d.ci95()));

    (ok, msg.join("; "))
}

fn precoding_compensation() -> Check {
    let c = desk();
    let opts = PrecoderOptions::unit_symbol(&c);
    let eff = |paths: &[PathParams]| {
        let pre = build_precoder(PrecoderKind::Proposed, paths, &opts, &c).unwrap();
        EffectiveChannel::build(&c, &ChannelRealization::new(paths.to_vec()), &pre).unwrap()
    };
    let a = eff(&[path(&c, C64::new(0.6, 0.8), 3.3, 3000.0, 0.1)]);
    let b = eff(&[path(&c, C64::new(-0.8, 0.6), 7.8, -5000.0, -0.3)]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_grid(c.n, c.m, &mut rng);
    let indep = rel(&b.apply(&x), &a.apply(&x));

    let snr = 100.0;
    let mut gap1 = 0.0f64;
    let mut gap2 = Vec::new();
    for seed in 0..8 {
        for (p, out) in [(1usize, &mut None), (2, &mut Some(&mut gap2))] {
            let real = sample_channel(&c, p, 250.0 / 3.6, (c.n_cp - 2) as f64, seed).unwrap();
            let pre = build_precoder(PrecoderKind::Proposed, &real.paths, &opts, &c).unwrap();
            let r = EffectiveChannel::build(&c, &real, &pre).unwrap().sinr_stats().mean_rate(1.0 / snr);
            let gains: Vec<C64> = real.paths.iter().map(|q| q.equivalent_gain(&c)).collect();
            let gap = rate_bound(c.n_a, snr, &gains) - r;
            match out {
                Some(v) => v.push(gap),
                None => gap1 = gap1.max(gap.abs()),
            }
        }
    }
    let g2 = Summary::of(&gap2);
    (
        indep < 1e-3 && gap1 < 0.2,
        format!(
            "path independence {indep:.1e}, single-path bound gap ≤ {gap1:.3} bit (two paths: {:.3} bit, informational)",
            g2.mean
        ),
    )
}

const PROP: usize = 0;
const DP: usize = 1;
const DO: usize = 2;
const TRAD: usize = 3;

fn precoder_ordering() -> Check {
    let mut ok = true;
    let mut msg = Vec::new();

    let snr = ExperimentSpec::defaults(Experiment::RateVsSnr, false);
    let t = run_trials(&snr, 0).unwrap();
    let i = snr.sweep.values.iter().position(|&v| v == 20.0).unwrap();
    let s: Vec<Summary> = [PROP, DP, DO, TRAD].iter().map(|&k| point(&t, k, i)).collect();
    let sep = s[0].lower() > s[1].upper() && s[1].lower() > s[2].upper().max(s[3].upper());
    ok &= sep;
    msg.push(format!(
        "20 dB {:.3}/{:.3}/{:.3}/{:.3} {}",
        s[0].mean,
        s[1].mean,
        s[2].mean,
        s[3].mean,
        if sep { "separated" } else { "NOT separated" }
    ));

    let bw = ExperimentSpec::defaults(Experiment::RateVsBw, false);
    let t = run_trials(&bw, 0).unwrap();
    let pm: Vec<f64> = (0..t[0].len()).map(|i| point(&t, PROP, i).mean).collect();
    let spread = (pm.iter().cloned().fold(f64::MIN, f64::max) - pm.iter().cloned().fold(f64::MAX, f64::min))
        / (pm.iter().sum::<f64>() / pm.len() as f64);
    let drop = paired(&t, TRAD, 0, t[0].len() - 1);
    ok &= spread < 0.05 && pos(&drop);
    msg.push(format!(
        "bandwidth proposed spread {:.1}%, traditional drop {:.3}±{:.3}",
        100.0 * spread,
        drop.mean,
        drop.ci95()
    ));

    let n = ExperimentSpec::defaults(Experiment::RateVsN, false);
    let t = run_trials(&n, 0).unwrap();
    let drop = paired(&t, DP, 0, t[0].len() - 1);
    let fp = flat(&t, PROP);
    ok &= pos(&drop) && fp;
    msg.push(format!(
        "N delay-phase drop {:.3}±{:.3}, proposed {} [{}]",
        drop.mean,
        drop.ci95(),
        if fp { "flat" } else { "NOT flat" },
        means(&t, PROP)
    ));

    let na = ExperimentSpec::defaults(Experiment::RateVsAntennas, false);
    let t = run_trials(&na, 0).unwrap();
    let last = t[0].len() - 1;
    let top = (0..=last)
        .max_by(|&a, &b| point(&t, PROP, a).mean.total_cmp(&point(&t, PROP, b).mean))
        .unwrap();
    let rf = top > 0 && top < last && pos(&paired(&t, PROP, top, 0)) && pos(&paired(&t, PROP, top, last));
    ok &= rf;
    msg.push(format!(
        "antennas proposed peak at N_A={} {} [{}]",
        na.sweep.values[top],
        if rf { "rise-then-fall" } else { "NOT rise-then-fall" },
        means(&t, PROP)
    ));

    (ok, msg.join("; "))
}

fn power_identity() -> Check {
    let c = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let p = rng.gen_range(1..=c.n_r);
        let gains: Vec<C64> = (0..p)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 10f64.powf(rng.gen_range(-3.0..1.0)))
            .collect();
        let e_u = 10f64.powf(rng.gen_range(-2.0..6.0));
        let amps = allocate_power(&gains, e_u, &c).unwrap();
        let want = e_u / ((c.m * c.n * c.n_a) as f64);
        let got: f64 = amps.iter().map(|a| a * a).sum();
        worst = worst.max((got - want).abs() / want);
    }
    (worst < 1e-12, format!("500 profiles, worst relative error {worst:.1e}"))
}

fn determinism() -> Check {
    let mut diffs = Vec::new();
    for exp in Experiment::ALL {
        let mut spec = ExperimentSpec::defaults(exp, false);
        spec.trials = 3;
        spec.seed = 42;
        let a = run_experiment(&spec, 1).unwrap().to_csv();
        let b = run_experiment(&spec, 4).unwrap().to_csv();
        if a != b {
            diffs.push(exp.name());
        }
    }
    (
        diffs.is_empty(),
        format!("8 experiments, 1 vs 4 threads, differing: {diffs:?}"),
    )
}

fn main() {
    let checks: [(&str, fn() -> Check, Option<Duration>); 9] = [
        ("transform unitarity", transforms, Some(Duration::from_secs(1))),
        ("DD input-output oracle", oracle_equivalence, Some(Duration::from_secs(30))),
        ("peak-index law", peak_law, None),
        ("noiseless recovery", noiseless_recovery, None),
        ("estimator trends", estimator_trends, Some(Duration::from_secs(600))),
        ("precoding compensation", precoding_compensation, None),
        ("precoder ordering", precoder_ordering, Some(Duration::from_secs(900))),
        ("power identity", power_identity, None),
        ("determinism", determinism, None),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f, limit)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.contains(&(i + 1)) {
            continue;
        }
        let t0 = Instant::now();
        let (mut ok, detail) = f();
        let dt = t0.elapsed();
        if let Some(l) = limit {
            ok &= dt < *l;
        }
        println!(
            "criterion {} {name}: {} ({:.1} s) {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64()
        );
        failed += !ok as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
