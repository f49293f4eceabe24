//! Ideal (detector-unlimited) second-order correlation functions.
//!
//! The delayed Mach-Zehnder geometry splits the stream at a first coupler
//! (R1, T1), delays one arm by `delta_tau2`, and recombines at a second
//! coupler (R2, T2) in front of two detectors. Correlations are written in
//! the weak-pump limit, where the source itself obeys
//! `g²(τ) = 1 − (1 − g²(0))·e^{−|τ|/τr}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emitter description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Radiative lifetime, ps.
    pub tau_r: f64,
    /// Coherence time, ps.
    pub tau_c: f64,
    /// Residual g²(0).
    #[serde(default)]
    pub g2_zero: f64,
}

impl SourceSpec {
    pub fn new(tau_r: f64, tau_c: f64, g2_zero: f64) -> Result<Self> {
        let s = SourceSpec { tau_r, tau_c, g2_zero };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_r.is_finite() && self.tau_r > 0.0) {
            return Err(Error::domain(format!("tau_r must be > 0, got {}", self.tau_r)));
        }
        if !(self.tau_c.is_finite() && self.tau_c > 0.0) {
            return Err(Error::domain(format!("tau_c must be > 0, got {}", self.tau_c)));
        }
        if !(0.0..1.0).contains(&self.g2_zero) {
            return Err(Error::domain(format!(
                "g2_zero must lie in [0, 1), got {}",
                self.g2_zero
            )));
        }
        Ok(())
    }
}

impl Default for SourceSpec {
    /// 800 ps lifetime, 325 ps coherence time, perfect antibunching.
    fn default() -> Self {
        SourceSpec { tau_r: 800.0, tau_c: 325.0, g2_zero: 0.0 }
    }
}

/// Two lossless couplers, an arm delay and a wavefunction overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerSpec {
    pub r1: f64,
    pub t1: f64,
    pub r2: f64,
    pub t2: f64,
    /// Extra delay of the long arm, ps.
    pub delta_tau2: f64,
    /// Overlap V of the two single-photon wavefunctions.
    pub overlap_v: f64,
}

impl Default for InterferometerSpec {
    /// Balanced couplers, 10 ns delay, full overlap.
    fn default() -> Self {
        InterferometerSpec::balanced(10_000.0, 1.0)
    }
}

const COUPLER_SUM_TOLERANCE: f64 = 1e-9;

impl InterferometerSpec {
    pub fn balanced(delta_tau2: f64, overlap_v: f64) -> Self {
        InterferometerSpec { r1: 0.5, t1: 0.5, r2: 0.5, t2: 0.5, delta_tau2, overlap_v }
    }

    /// Builds from the two reflectivities; transmissions follow from R + T = 1.
    pub fn new(r1: f64, r2: f64, delta_tau2: f64, overlap_v: f64) -> Result<Self> {
        let s = InterferometerSpec { r1, t1: 1.0 - r1, r2, t2: 1.0 - r2, delta_tau2, overlap_v };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r1", self.r1), ("t1", self.t1), ("r2", self.r2), ("t2", self.t2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if (self.r1 + self.t1 - 1.0).abs() > COUPLER_SUM_TOLERANCE
            || (self.r2 + self.t2 - 1.0).abs() > COUPLER_SUM_TOLERANCE
        {
            return Err(Error::domain("coupler coefficients must satisfy R + T = 1"));
        }
        if !(self.delta_tau2.is_finite() && self.delta_tau2 >= 0.0) {
            return Err(Error::domain(format!(
                "delta_tau2 must be finite and >= 0, got {}",
                self.delta_tau2
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_v) {
            return Err(Error::domain(format!(
                "overlap_v must lie in [0, 1], got {}",
                self.overlap_v
            )));
        }
        Ok(())
    }

    /// True when the arm delay is too short to separate the delayed-path
    /// features from the zero-delay interference window (Δτ2 < 10·τc).
    pub fn separation_warning(&self, source: &SourceSpec) -> bool {
        self.delta_tau2 < 10.0 * source.tau_c
    }

    /// Weight of the same-arm (central) term, 4(T1² + R1²)R2T2.
    fn central_weight(&self) -> f64 {
        4.0 * (self.t1 * self.t1 + self.r1 * self.r1) * self.r2 * self.t2
    }

    /// Weight of the opposite-arm terms, 4R1T1.
    fn delayed_weight(&self) -> f64 {
        4.0 * self.r1 * self.t1
    }
}

/// Source autocorrelation g²(τ).
pub fn g2_source(tau: f64, source: &SourceSpec) -> f64 {
    1.0 - (1.0 - source.g2_zero) * (-tau.abs() / source.tau_r).exp()
}

fn delayed_bracket(tau: f64, source: &SourceSpec, interf: &InterferometerSpec) -> f64 {
    let d = interf.delta_tau2;
    interf.delayed_weight()
        * (interf.t2 * interf.t2 * g2_source(tau - d, source)
            + interf.r2 * interf.r2 * g2_source(tau + d, source))
}

/// Cross-detector correlation for orthogonally polarised (distinguishable)
/// arms.
pub fn g2_perp(tau: f64, source: &SourceSpec, interf: &InterferometerSpec) -> f64 {
    interf.central_weight() * g2_source(tau, source) + delayed_bracket(tau, source, interf)
}

/// Cross-detector correlation for parallel polarisations. Only the
/// opposite-arm bracket carries the two-photon interference factor.
pub fn g2_parallel(tau: f64, source: &SourceSpec, interf: &InterferometerSpec) -> f64 {
    let interference = 1.0 - interf.overlap_v * (-2.0 * tau.abs() / source.tau_c).exp();
    interf.central_weight() * g2_source(tau, source)
        + delayed_bracket(tau, source, interf) * interference
}

/// Post-selected HOM visibility (g⊥ − g∥)/g⊥ from the ideal curves.
pub fn v_hom_ideal(tau: f64, source: &SourceSpec, interf: &InterferometerSpec) -> Result<f64> {
    let perp = g2_perp(tau, source, interf);
    if perp == 0.0 {
        return Err(Error::Undefined(format!("g2_perp vanishes at tau = {tau} ps")));
    }
    Ok((perp - g2_parallel(tau, source, interf)) / perp)
}
