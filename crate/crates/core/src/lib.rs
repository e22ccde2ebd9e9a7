//! Link-level simulator for wideband massive MIMO-OTFS under beam squint and
//! Doppler squint.
//!
//! The crate is organised bottom-up:
//!
//! * [`config`] validates system dimensioning and derives `B`, `T_s`, `κ`, `G`, `N_S`.
//! * [`modem`] holds the OTFS transforms and the framed time-signal type.
//! * [`channel`] samples multipath realizations and renders the time-varying
//!   wideband channel on per-antenna signals.
//! * [`analog`] models the TTD/PS network.
//! * [`estimator`] is the chirp-pilot sweep / de-chirp / Jacobsen estimator.
//! * [`precoder`] builds the hybrid DD/TF digital precoder and the baselines.
//! * [`link`] runs the simulated downlink chain and the closed-form DD model.
//! * [`harness`] runs Monte Carlo experiments and writes CSV tables.
//!
//! Transform kernels are generic over [`Scalar`] (`f32` or `f64`). Everything
//! that touches carrier phases (picosecond delays at tens of GHz) is `f64`.

pub mod analog;
pub mod channel;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fft;
pub mod harness;
pub mod link;
pub mod metrics;
pub mod modem;
pub mod precoder;
pub mod spec;
pub mod waveform;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive};

pub use config::{ConfigParams, SystemConfig};
pub use error::{Error, Result};

/// Real scalar accepted by the generic transform kernels.
pub trait Scalar: Float + FromPrimitive + rustfft::FftNum {}

impl<T> Scalar for T where T: Float + FromPrimitive + rustfft::FftNum {}

/// Double-precision complex sample.
pub type C64 = Complex<f64>;
/// Single-precision complex sample.
pub type C32 = Complex<f32>;

/// Delay-Doppler grid in double precision (`N` rows of Doppler, `M` columns of delay).
pub type DdGrid64 = modem::DdGrid<f64>;
/// Time-frequency grid in double precision (`N` symbols by `M` subcarriers).
pub type TfGrid64 = modem::TfGrid<f64>;
/// Delay-Doppler grid in single precision.
pub type DdGrid32 = modem::DdGrid<f32>;
/// Time-frequency grid in single precision.
pub type TfGrid32 = modem::TfGrid<f32>;
/// Framed time signal in double precision.
pub type TimeSignal64 = modem::TimeSignal<f64>;

/// `e^{j 2π x}` for a phase given in cycles.
#[inline]
pub fn cis(cycles: f64) -> C64 {
    let (s, c) = (std::f64::consts::TAU * cycles).sin_cos();
    C64::new(c, s)
}
