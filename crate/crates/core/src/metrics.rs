//! Error metrics, path pairing, SINR/rate and summary statistics.

use pathfinding::prelude::{kuhn_munkres_min, Matrix};

use crate::channel::angle_distance;
use crate::error::{Error, Result};
use crate::C64;

/// `‖x̂ − x‖² / ‖x‖²` for real vectors.
pub fn nmse(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimMismatch(format!("{} truth vs {} estimates", truth.len(), est.len())));
    }
    let den: f64 = truth.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = truth.iter().zip(est).map(|(x, y)| (y - x) * (y - x)).sum();
    Ok(num / den)
}

/// Complex version of [`nmse`].
pub fn nmse_complex(truth: &[C64], est: &[C64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimMismatch(format!("{} truth vs {} estimates", truth.len(), est.len())));
    }
    let den: f64 = truth.iter().map(|x| x.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = truth.iter().zip(est).map(|(x, y)| (y - x).norm_sqr()).sum();
    Ok(num / den)
}

/// Minimum-cost assignment of estimates to truth paths by cyclic angle distance.
///
/// Returns, per truth path, the index of its estimate, or `None` when no
/// estimate lies within `gate`. Each estimate is used at most once.
pub fn match_paths(truth: &[f64], est: &[f64], gate: f64) -> Vec<Option<usize>> {
    let (t, e) = (truth.len(), est.len());
    if t == 0 {
        return Vec::new();
    }
    // integer costs; one dummy column per truth path stands for "unmatched"
    const SCALE: f64 = 1e9;
    let miss = (gate * SCALE).round() as i64 + 1;
    let cols = e + t;
    let mut rows = Vec::with_capacity(t);
    for &x in truth {
        let mut r = Vec::with_capacity(cols);
        for &y in est {
            let d = angle_distance(x, y);
            r.push(if d <= gate { (d * SCALE).round() as i64 } else { 4 * miss });
        }
        r.extend(std::iter::repeat(miss).take(t));
        rows.push(r);
    }
    let m = Matrix::from_rows(rows).expect("rectangular cost matrix");
    let (_, assign) = kuhn_munkres_min(&m);
    assign
        .into_iter()
        .enumerate()
        .map(|(i, j)| (j < e && angle_distance(truth[i], est[j]) <= gate).then_some(j))
        .collect()
}

/// Per-grid SINR from desired power, total row energy (desired included) and noise.
pub fn sinr(desired: f64, row_energy: f64, noise_var: f64) -> f64 {
    let interference = (row_energy - desired).max(0.0);
    let den = interference + noise_var;
    if den == 0.0 {
        return if desired > 0.0 { f64::INFINITY } else { 0.0 };
    }
    desired / den
}

pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Interference-free rate `log2(1 + N_A · SNR · Σ|α|²)`.
pub fn rate_bound(n_a: usize, snr: f64, gains: &[C64]) -> f64 {
    let g: f64 = gains.iter().map(|a| a.norm_sqr()).sum();
    (1.0 + n_a as f64 * snr * g).log2()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    c: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count: 0,
            };
        }
        let mut s = NeumaierSum::default();
        xs.iter().for_each(|&x| s.add(x));
        let mean = s.value() / n as f64;
        let stderr = if n > 1 {
            let mut v = NeumaierSum::default();
            xs.iter().for_each(|&x| v.add((x - mean) * (x - mean)));
            (v.value() / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, count: n }
    }

    /// Half-width of the normal 95% interval.
    pub fn ci95(&self) -> f64 {
        1.96 * self.stderr
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95()
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_examples() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((nmse(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        // e = (0.1, 0, -0.2): ‖e‖² = 0.05, ‖x‖² = 14
        let z = [1.1, -2.0, 2.8];
        assert!((nmse(&x, &z).unwrap() - 0.05 / 14.0).abs() < 1e-15);
        assert_eq!(nmse(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm));
        assert!(matches!(nmse(&[1.0], &[1.0, 2.0]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn complex_nmse() {
        let x = [C64::new(1.0, 1.0), C64::new(0.0, -1.0)];
        let y = [C64::new(1.0, 0.0), C64::new(0.0, -1.0)];
        assert!((nmse_complex(&x, &y).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matching_prefers_global_optimum() {
        // greedy on truth[0] would take est[0] and leave truth[1] far away
        let truth = [0.10, 0.13];
        let est = [0.12, 0.16];
        assert_eq!(match_paths(&truth, &est, 0.05), vec![Some(0), Some(1)]);
        let truth = [0.10, 0.30];
        let est = [0.31];
        assert_eq!(match_paths(&truth, &est, 0.05), vec![None, Some(0)]);
        // wraps around ±1/2
        assert_eq!(match_paths(&[0.49], &[-0.49], 0.05), vec![Some(0)]);
        assert!(match_paths(&[], &[0.1], 0.05).is_empty());
    }

    #[test]
    fn rate_examples() {
        assert!((rate(sinr(1.0, 1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(rate(sinr(0.0, 0.5, 1.0)), 0.0);
        assert!((rate_bound(4, 10.0, &[C64::new(0.5, 0.5)]) - 21f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum() {
        let mut s = NeumaierSum::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
        let m = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
