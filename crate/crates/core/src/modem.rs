//! OTFS transforms with rectangular pulses.
//!
//! Conventions (all unitary, so AWGN of variance `σ²` per time sample stays
//! `σ²` per TF or DD cell):
//!
//! * ISFFT: `X[n,m] = (NM)^{-1/2} Σ_{k,ℓ} x[k,ℓ] e^{j2π(nk/N − mℓ/M)}`
//! * SFFT: its inverse.
//! * Heisenberg: block `n` body sample `i` is `M^{-1/2} Σ_m X[n,m] e^{j2πmi/M}`.
//! * Wigner: `Y[n,m] = M^{-1/2} Σ_i r_n[i] e^{-j2πmi/M}` after prefix removal.
//!
//! Two prefix layouts are supported. [`CpMode::PerSymbol`] prepends `N_cp`
//! samples to every block, so delays up to `N_cp` never leave the block.
//! [`CpMode::PerFrame`] prepends one prefix to the whole frame (reduced-CP
//! OTFS); a delayed block then spills into the next one, which is where the
//! inter-symbol branch of the DD input-output relation comes from.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{Direction, Planner};
use crate::Scalar;

/// `N × M` delay-Doppler grid: row `k` (Doppler), column `ℓ` (delay).
pub type DdGrid<T> = Array2<Complex<T>>;
/// `N × M` time-frequency grid: row `n` (symbol), column `m` (subcarrier).
pub type TfGrid<T> = Array2<Complex<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CpMode {
    PerSymbol,
    #[default]
    PerFrame,
}

/// Sample layout of a framed OTFS signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Framing {
    pub m: usize,
    pub n: usize,
    pub prefix: usize,
    pub mode: CpMode,
}

impl Framing {
    pub fn new(m: usize, n: usize, prefix: usize, mode: CpMode) -> Self {
        Self { m, n, prefix, mode }
    }

    /// Total number of samples in the frame.
    pub fn len(&self) -> usize {
        match self.mode {
            CpMode::PerSymbol => self.n * (self.m + self.prefix),
            CpMode::PerFrame => self.n * self.m + self.prefix,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first body sample of block `b` (may be called with `b = -1`
    /// in frame mode, where it points before the frame start).
    pub fn body_start(&self, b: i64) -> i64 {
        match self.mode {
            CpMode::PerSymbol => b * (self.m + self.prefix) as i64 + self.prefix as i64,
            CpMode::PerFrame => b * self.m as i64 + self.prefix as i64,
        }
    }
}

/// Complex baseband samples of one framed transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal<T: Scalar> {
    pub samples: Vec<Complex<T>>,
    /// Index in `samples` where the frame (including its prefix) starts.
    pub start_offset: usize,
    pub framing: Framing,
}

impl<T: Scalar> TimeSignal<T> {
    pub fn zeros(framing: Framing) -> Self {
        Self {
            samples: vec![Complex::new(T::zero(), T::zero()); framing.len()],
            start_offset: 0,
            framing,
        }
    }

    pub fn prefix_len(&self) -> usize {
        self.framing.prefix
    }

    pub fn energy(&self) -> T {
        self.samples.iter().fold(T::zero(), |acc, s| acc + s.norm_sqr())
    }

    /// Body of block `b` (prefix removed).
    pub fn block(&self, b: usize) -> &[Complex<T>] {
        let s = self.start_offset + self.framing.body_start(b as i64) as usize;
        &self.samples[s..s + self.framing.m]
    }
}

fn scale<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("scale factor representable")
}

fn check_nonempty<T: Scalar>(x: &Array2<Complex<T>>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::DimMismatch(format!("empty grid {:?}", x.dim())));
    }
    Ok(())
}

/// Transform engine holding cached FFT plans. Keep one per worker thread.
pub struct Modem<T: Scalar> {
    planner: Planner<T>,
}

impl<T: Scalar> Default for Modem<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Modem<T> {
    pub fn new() -> Self {
        Self {
            planner: Planner::new(),
        }
    }

    pub fn planner(&mut self) -> &mut Planner<T> {
        &mut self.planner
    }

    pub fn isfft(&mut self, x: &DdGrid<T>) -> TfGrid<T> {
        let (n, m) = x.dim();
        let mut out = x.clone();
        self.planner.along(&mut out, 0, Direction::Inverse, T::one());
        self.planner
            .along(&mut out, 1, Direction::Forward, scale(1.0 / ((n * m) as f64).sqrt()));
        out
    }

    pub fn sfft(&mut self, y: &TfGrid<T>) -> DdGrid<T> {
        let (n, m) = y.dim();
        let mut out = y.clone();
        self.planner.along(&mut out, 0, Direction::Forward, T::one());
        self.planner
            .along(&mut out, 1, Direction::Inverse, scale(1.0 / ((n * m) as f64).sqrt()));
        out
    }

    /// ISFFT that checks the grid against expected dimensions.
    pub fn isfft_checked(&mut self, x: &DdGrid<T>, n: usize, m: usize) -> Result<TfGrid<T>> {
        check_nonempty(x)?;
        if x.dim() != (n, m) {
            return Err(Error::DimMismatch(format!("grid {:?}, expected ({n}, {m})", x.dim())));
        }
        Ok(self.isfft(x))
    }

    pub fn sfft_checked(&mut self, y: &TfGrid<T>, n: usize, m: usize) -> Result<DdGrid<T>> {
        check_nonempty(y)?;
        if y.dim() != (n, m) {
            return Err(Error::DimMismatch(format!("grid {:?}, expected ({n}, {m})", y.dim())));
        }
        Ok(self.sfft(y))
    }

    /// Per-block unitary inverse DFT of one TF row.
    pub fn block_samples(&mut self, row: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = row.to_vec();
        self.planner.run(&mut buf, Direction::Inverse);
        let s: T = scale(1.0 / (row.len() as f64).sqrt());
        buf.iter_mut().for_each(|v| *v = *v * s);
        buf
    }

    /// Heisenberg transform with the standard prefix (copy of the block tail,
    /// or of the last block's tail in frame mode).
    pub fn heisenberg(&mut self, x: &TfGrid<T>, prefix: usize, mode: CpMode) -> TimeSignal<T> {
        self.heisenberg_with_prefix_row(x, prefix, mode, None)
    }

    /// Heisenberg transform where, in frame mode, the prefix is the tail of an
    /// explicitly supplied "block −1" TF row instead of a copy of block `N−1`.
    pub fn heisenberg_with_prefix_row(
        &mut self,
        x: &TfGrid<T>,
        prefix: usize,
        mode: CpMode,
        prefix_row: Option<&[Complex<T>]>,
    ) -> TimeSignal<T> {
        let (n, m) = x.dim();
        assert!(prefix <= m, "prefix longer than a block");
        let framing = Framing::new(m, n, prefix, mode);
        let mut sig = TimeSignal::zeros(framing);
        let mut last = Vec::new();
        for b in 0..n {
            let row: Vec<Complex<T>> = x.row(b).to_vec();
            let body = self.block_samples(&row);
            let s = framing.body_start(b as i64) as usize;
            sig.samples[s..s + m].copy_from_slice(&body);
            if mode == CpMode::PerSymbol {
                sig.samples[s - prefix..s].copy_from_slice(&body[m - prefix..]);
            }
            if b + 1 == n {
                last = body;
            }
        }
        if mode == CpMode::PerFrame && prefix > 0 {
            let tail = match prefix_row {
                Some(r) => self.block_samples(r),
                None => last,
            };
            sig.samples[..prefix].copy_from_slice(&tail[m - prefix..]);
        }
        sig
    }

    /// Wigner transform: drop prefixes and DFT each block.
    pub fn wigner(&mut self, sig: &TimeSignal<T>) -> Result<TfGrid<T>> {
        let f = sig.framing;
        if sig.samples.len() < sig.start_offset + f.len() {
            return Err(Error::Length(format!(
                "signal has {} samples, frame needs {}",
                sig.samples.len().saturating_sub(sig.start_offset),
                f.len()
            )));
        }
        let mut out = Array2::from_elem((f.n, f.m), Complex::new(T::zero(), T::zero()));
        let s: T = scale(1.0 / (f.m as f64).sqrt());
        for b in 0..f.n {
            let mut buf = sig.block(b).to_vec();
            self.planner.run(&mut buf, Direction::Forward);
            for (o, v) in out.row_mut(b).iter_mut().zip(buf) {
                *o = v * s;
            }
        }
        Ok(out)
    }
}

/// One-shot ISFFT (allocates a planner).
pub fn isfft<T: Scalar>(x: &DdGrid<T>) -> TfGrid<T> {
    Modem::new().isfft(x)
}

/// One-shot SFFT (allocates a planner).
pub fn sfft<T: Scalar>(y: &TfGrid<T>) -> DdGrid<T> {
    Modem::new().sfft(y)
}

pub fn heisenberg<T: Scalar>(x: &TfGrid<T>, prefix: usize, mode: CpMode) -> TimeSignal<T> {
    Modem::new().heisenberg(x, prefix, mode)
}

pub fn wigner<T: Scalar>(sig: &TimeSignal<T>) -> Result<TfGrid<T>> {
    Modem::new().wigner(sig)
}

/// Largest absolute entry-wise difference between two grids.
pub fn max_abs_diff<T: Scalar>(a: &Array2<Complex<T>>, b: &Array2<Complex<T>>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).norm()))
}

/// Frobenius norm.
pub fn frobenius<T: Scalar>(a: &Array2<Complex<T>>) -> T {
    a.iter().fold(T::zero(), |acc, x| acc + x.norm_sqr()).sqrt()
}
