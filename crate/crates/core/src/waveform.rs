//! Continuous-time views of transmitted signals.
//!
//! The channel applies fractional, time-varying delays. Rather than
//! interpolating sampled streams, every transmitted signal is kept in a form
//! that can be evaluated at any real time `u` (in samples): chirps are
//! analytic, and rectangular-pulse OTFS blocks are trigonometric polynomials.

use ndarray::Array2;

use crate::modem::{CpMode, Framing};
use crate::{cis, C64};

/// A baseband signal that can be evaluated at arbitrary (fractional) sample time.
pub trait Waveform: Sync {
    fn eval(&self, u: f64) -> C64;
}

impl<W: Waveform + ?Sized> Waveform for &W {
    fn eval(&self, u: f64) -> C64 {
        (**self).eval(u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChirpDir {
    Up,
    Down,
}

impl ChirpDir {
    pub fn sign(self) -> f64 {
        match self {
            ChirpDir::Up => 1.0,
            ChirpDir::Down => -1.0,
        }
    }
}

/// `e^{±jπ u²/M}` on `[-n_cpp, M)`, zero elsewhere. Time zero is the first body sample.
///
/// With `κ = 1/(2M)` and even `M` the chirp-periodic prefix coincides with the
/// analytic continuation of the body to negative indices, so a single formula
/// covers prefix and body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChirpWaveform {
    pub m: usize,
    pub n_cpp: usize,
    pub dir: ChirpDir,
}

impl ChirpWaveform {
    pub fn new(m: usize, n_cpp: usize, dir: ChirpDir) -> Self {
        Self { m, n_cpp, dir }
    }

    /// Phase in cycles at time `u` (no support check).
    #[inline]
    pub fn phase(&self, u: f64) -> f64 {
        self.dir.sign() * u * u / (2.0 * self.m as f64)
    }

    #[inline]
    pub fn in_support(&self, u: f64) -> bool {
        u >= -(self.n_cpp as f64) && u < self.m as f64
    }
}

impl Waveform for ChirpWaveform {
    #[inline]
    fn eval(&self, u: f64) -> C64 {
        if self.in_support(u) {
            cis(self.phase(u))
        } else {
            C64::new(0.0, 0.0)
        }
    }
}

/// Rectangular-pulse multicarrier frame as a piecewise trigonometric polynomial.
///
/// Block `b` occupies `[body_start(b) - cp, body_start(b) + M)` and equals
/// `M^{-1/2} Σ_m X[b,m] e^{j2πm(u - body_start(b))/M}` there. In frame mode the
/// prefix is the tail of an extra "block −1" whose coefficients are stored in
/// `prefix_row`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramedWaveform {
    pub framing: Framing,
    pub rows: Array2<C64>,
    pub prefix_row: Vec<C64>,
}

impl FramedWaveform {
    /// Standard framing: the frame prefix repeats the tail of block `N−1`.
    pub fn new(rows: Array2<C64>, prefix: usize, mode: CpMode) -> Self {
        let (n, m) = rows.dim();
        let prefix_row = rows.row(n - 1).to_vec();
        Self {
            framing: Framing::new(m, n, prefix, mode),
            rows,
            prefix_row,
        }
    }

    pub fn with_prefix_row(rows: Array2<C64>, prefix: usize, prefix_row: Vec<C64>) -> Self {
        let (n, m) = rows.dim();
        assert_eq!(prefix_row.len(), m);
        Self {
            framing: Framing::new(m, n, prefix, CpMode::PerFrame),
            rows,
            prefix_row,
        }
    }

    fn poly(coeffs: impl DoubleEndedIterator<Item = C64>, x: f64, m: usize) -> C64 {
        let z = cis(x / m as f64);
        let acc = coeffs.rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c);
        acc / (m as f64).sqrt()
    }

    /// Block index and in-block position for time `u`, if `u` is inside the frame.
    pub fn locate(&self, u: f64) -> Option<(i64, f64)> {
        let f = self.framing;
        let (m, p) = (f.m as f64, f.prefix as f64);
        if u < 0.0 {
            return None;
        }
        match f.mode {
            CpMode::PerFrame => {
                let b = ((u - p) / m).floor() as i64;
                if b >= f.n as i64 {
                    return None;
                }
                Some((b, u - f.body_start(b) as f64))
            }
            CpMode::PerSymbol => {
                let b = (u / (m + p)).floor() as i64;
                if b >= f.n as i64 {
                    return None;
                }
                Some((b, u - f.body_start(b) as f64))
            }
        }
    }
}

impl Waveform for FramedWaveform {
    fn eval(&self, u: f64) -> C64 {
        let m = self.framing.m;
        match self.locate(u) {
            None => C64::new(0.0, 0.0),
            Some((-1, x)) => Self::poly(self.prefix_row.iter().copied(), x, m),
            Some((b, x)) => Self::poly(self.rows.row(b as usize).iter().copied(), x, m),
        }
    }
}

/// Sum of delayed, weighted copies of other waveforms, as seen after a bank
/// of passband true-time delays: `Σ_i w_i e^{-j2π f_c T_s d_i} x_i(u - d_i)`.
pub struct DelayedSum<'a> {
    pub fc_ts: f64,
    pub taps: Vec<(C64, f64, &'a dyn Waveform)>,
}

impl Waveform for DelayedSum<'_> {
    fn eval(&self, u: f64) -> C64 {
        self.taps
            .iter()
            .map(|(w, d, x)| w * cis(-self.fc_ts * d) * x.eval(u - d))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::Modem;

    #[test]
    fn chirp_prefix_follows_recursion() {
        // C[i] = C[M+i] e^{j2πκ(M² + 2Mi)} for i < 0
        let m = 64;
        let w = ChirpWaveform::new(m, 8, ChirpDir::Up);
        let kappa = 1.0 / (2.0 * m as f64);
        for i in -8i64..0 {
            let lhs = w.eval(i as f64);
            let mf = m as f64;
            let rhs = w.eval(mf + i as f64) * cis(kappa * (mf * mf + 2.0 * mf * i as f64));
            assert!((lhs - rhs).norm() < 1e-12, "{i}");
        }
        assert_eq!(w.eval(-9.0), C64::new(0.0, 0.0));
        assert_eq!(w.eval(64.0), C64::new(0.0, 0.0));
    }

    #[test]
    fn framed_matches_heisenberg_samples() {
        let (n, m, cp) = (3, 8, 2);
        let x = Array2::from_shape_fn((n, m), |(a, b)| C64::new(a as f64 - 0.5 * b as f64, (a * b) as f64 * 0.3));
        for mode in [CpMode::PerFrame, CpMode::PerSymbol] {
            let sig = Modem::<f64>::new().heisenberg(&x, cp, mode);
            let w = FramedWaveform::new(x.clone(), cp, mode);
            for (i, s) in sig.samples.iter().enumerate() {
                assert!((w.eval(i as f64) - s).norm() < 1e-12, "{mode:?} {i}");
            }
            assert_eq!(w.eval(-0.5), C64::new(0.0, 0.0));
            assert_eq!(w.eval(sig.samples.len() as f64), C64::new(0.0, 0.0));
        }
    }
}
