//! System dimensioning and derived physical quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 250 km/h in m/s.
pub const V_250_KMH: f64 = 250.0 / 3.6;

/// Raw, unvalidated parameters as they come from a file or from code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigParams {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Subcarrier spacing, Hz.
    pub delta_f: f64,
    /// Subcarriers per OTFS symbol (delay bins).
    pub m: usize,
    /// OTFS symbols per frame (Doppler bins).
    pub n: usize,
    /// Base-station antennas.
    pub n_a: usize,
    /// RF chains.
    pub n_r: usize,
    /// TTD lines per RF chain.
    pub n_t: usize,
    /// Cyclic-prefix length, samples.
    pub n_cp: usize,
    /// Chirp-periodic-prefix length, samples.
    pub n_cpp: usize,
    /// AWGN variance per complex sample.
    pub noise_var: f64,
    /// Largest radial speed considered, m/s. Sets `ν_max`.
    pub v_max: f64,
}

impl ConfigParams {
    /// The full-size settings of the reference scenario (2048 x 128 frame at 30 GHz).
    pub fn reference() -> Self {
        Self {
            f_c: 30e9,
            delta_f: 500e3,
            m: 2048,
            n: 128,
            n_a: 128,
            n_r: 4,
            n_t: 8,
            n_cp: 32,
            n_cpp: 32,
            noise_var: 1.0,
            v_max: V_250_KMH,
        }
    }

    /// Desk-scale defaults used by the experiment runner.
    pub fn desk() -> Self {
        Self {
            f_c: 30e9,
            delta_f: 500e3,
            m: 256,
            n: 16,
            n_a: 64,
            n_r: 4,
            n_t: 8,
            n_cp: 16,
            n_cpp: 16,
            noise_var: 1.0,
            v_max: V_250_KMH,
        }
    }

    pub fn validate(self) -> Result<SystemConfig> {
        SystemConfig::validate(self)
    }
}

impl Default for ConfigParams {
    fn default() -> Self {
        Self::desk()
    }
}

/// Validated configuration with derived quantities frozen.
///
/// Build one with [`SystemConfig::validate`]; the raw parameters are kept in
/// [`SystemConfig::params`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemConfig {
    pub params: ConfigParams,
    pub f_c: f64,
    pub delta_f: f64,
    pub m: usize,
    pub n: usize,
    pub n_a: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub n_cp: usize,
    pub n_cpp: usize,
    pub noise_var: f64,
    /// Antennas per TTD line, `N_A / N_T`.
    pub n_p: usize,
    /// `B = M Δf`.
    pub bandwidth: f64,
    /// `T_s = 1 / B`.
    pub t_s: f64,
    /// `T = 1 / Δf = M T_s`.
    pub t_sym: f64,
    /// Denominator of the chirp rate; `κ = 1 / kappa_den` with `kappa_den = 2M`.
    pub kappa_den: usize,
    /// Up-chirp sweep slots, `ceil(N_A / N_R)`.
    pub g: usize,
    /// Sweep grid size `G N_R`.
    pub n_s: usize,
    /// `f_c v_max / c`.
    pub nu_max: f64,
}

impl SystemConfig {
    pub fn validate(p: ConfigParams) -> Result<Self> {
        let counts = [
            ("m", p.m),
            ("n", p.n),
            ("n_a", p.n_a),
            ("n_r", p.n_r),
            ("n_t", p.n_t),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Range(format!("{name} must be >= 1")));
            }
        }
        if p.m % 2 != 0 {
            return Err(Error::Range(format!("m = {} must be even", p.m)));
        }
        if !(p.f_c.is_finite() && p.f_c > 0.0) {
            return Err(Error::Range(format!("f_c = {} must be positive", p.f_c)));
        }
        if !(p.delta_f.is_finite() && p.delta_f > 0.0) {
            return Err(Error::Range(format!("delta_f = {} must be positive", p.delta_f)));
        }
        if !(p.noise_var.is_finite() && p.noise_var >= 0.0) {
            return Err(Error::Range(format!("noise_var = {} must be >= 0", p.noise_var)));
        }
        if !(p.v_max.is_finite() && p.v_max >= 0.0) {
            return Err(Error::Range(format!("v_max = {} must be >= 0", p.v_max)));
        }
        if p.n_cp >= p.m {
            return Err(Error::Range(format!("n_cp = {} must be below m = {}", p.n_cp, p.m)));
        }
        if p.n_cpp >= p.m {
            return Err(Error::Range(format!("n_cpp = {} must be below m = {}", p.n_cpp, p.m)));
        }
        if p.n_a % p.n_t != 0 {
            return Err(Error::Divisibility(format!(
                "n_a = {} is not a multiple of n_t = {}",
                p.n_a, p.n_t
            )));
        }
        let bandwidth = p.m as f64 * p.delta_f;
        if p.f_c <= bandwidth / 2.0 {
            return Err(Error::Range(format!(
                "f_c = {} must exceed B/2 = {}",
                p.f_c,
                bandwidth / 2.0
            )));
        }
        let g = p.n_a.div_ceil(p.n_r);
        Ok(Self {
            f_c: p.f_c,
            delta_f: p.delta_f,
            m: p.m,
            n: p.n,
            n_a: p.n_a,
            n_r: p.n_r,
            n_t: p.n_t,
            n_cp: p.n_cp,
            n_cpp: p.n_cpp,
            noise_var: p.noise_var,
            n_p: p.n_a / p.n_t,
            bandwidth,
            t_s: 1.0 / bandwidth,
            t_sym: 1.0 / p.delta_f,
            kappa_den: 2 * p.m,
            g,
            n_s: g * p.n_r,
            nu_max: p.f_c * p.v_max / SPEED_OF_LIGHT,
            params: p,
        })
    }

    /// Chirp rate `κ = 1/(2M)` as a float.
    pub fn kappa(&self) -> f64 {
        1.0 / self.kappa_den as f64
    }

    /// `f_c T_s`, the carrier cycles per sample. Converts spatial angle to samples of delay.
    pub fn fc_ts(&self) -> f64 {
        self.f_c * self.t_s
    }

    /// Doppler shift for a radial speed.
    pub fn doppler(&self, v: f64) -> f64 {
        v * self.f_c / SPEED_OF_LIGHT
    }

    /// Copy with a modified parameter set, re-validated.
    pub fn with(&self, f: impl FnOnce(&mut ConfigParams)) -> Result<Self> {
        let mut p = self.params.clone();
        f(&mut p);
        Self::validate(p)
    }
}

/// Spatial angle `ψ = sin(θ)/2` for half-wavelength spacing, `θ` in degrees.
pub fn spatial_angle(theta_deg: f64) -> f64 {
    theta_deg.to_radians().sin() / 2.0
}

/// Wrap a spatial angle into `[-1/2, 1/2)`.
pub fn wrap_angle(psi: f64) -> f64 {
    psi - (psi + 0.5).floor()
}
