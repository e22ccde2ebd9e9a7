//! Thin wrappers over `rustfft` for 2-D grids.
//!
//! Plans are cached inside [`Planner`]; a planner is meant to live in a single
//! worker and is cheap to clone (the plans are reference counted).

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `Σ x e^{-j2π k n / L}`
    Forward,
    /// `Σ x e^{+j2π k n / L}` (unnormalized)
    Inverse,
}

pub struct Planner<T: Scalar> {
    inner: FftPlanner<T>,
    cache: HashMap<(usize, Direction), Arc<dyn Fft<T>>>,
}

impl<T: Scalar> Default for Planner<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Planner<T> {
    pub fn new() -> Self {
        Self {
            inner: FftPlanner::new(),
            cache: HashMap::new(),
        }
    }

    pub fn plan(&mut self, len: usize, dir: Direction) -> Arc<dyn Fft<T>> {
        let inner = &mut self.inner;
        self.cache
            .entry((len, dir))
            .or_insert_with(|| match dir {
                Direction::Forward => inner.plan_fft_forward(len),
                Direction::Inverse => inner.plan_fft_inverse(len),
            })
            .clone()
    }

    /// In-place transform of a contiguous buffer, unnormalized.
    pub fn run(&mut self, buf: &mut [Complex<T>], dir: Direction) {
        let plan = self.plan(buf.len(), dir);
        plan.process(buf);
    }

    /// Transform every lane of `a` along `axis`, then multiply by `scale`.
    pub fn along(&mut self, a: &mut Array2<Complex<T>>, axis: usize, dir: Direction, scale: T) {
        let len = a.len_of(Axis(axis));
        let plan = self.plan(len, dir);
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); len];
        for mut lane in a.lanes_mut(Axis(axis)) {
            for (s, v) in scratch.iter_mut().zip(lane.iter()) {
                *s = *v;
            }
            plan.process(&mut scratch);
            for (v, s) in lane.iter_mut().zip(scratch.iter()) {
                *v = *s * scale;
            }
        }
    }
}
