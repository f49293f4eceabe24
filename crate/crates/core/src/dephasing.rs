//! Spectral diffusion of an emitter driven by a fluctuating charge
//! environment.
//!
//! Traps near the dot are filled by phonon-assisted capture and emptied by
//! phonon absorption and current-dependent Auger scattering. The resulting
//! telegraph-like Stark shift is fast compared with ħ/Σ, so the line is
//! motionally narrowed and the coherence time follows `ħ²/(Σ²·τf)`.

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR_UEV_PS, KB_MEV_PER_K};
use crate::error::{Error, Result};

/// Parameters of the charge-trap environment.
///
/// Times in ps, phonon energies in meV, `i0` in µA, `sigma_s` in µeV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapModelParams {
    /// Acoustic-phonon escape timescale.
    pub tau1: f64,
    /// Optical-phonon capture timescale.
    pub tau2: f64,
    /// Auger escape timescale.
    pub tau3: f64,
    pub e1: f64,
    pub e2: f64,
    /// Exponent of the Auger saturation law.
    pub beta: f64,
    /// Current at which the Auger channel is half saturated.
    pub i0: f64,
    /// Saturation value of the modulation amplitude.
    pub sigma_s: f64,
    pub temperature: f64,
}

impl TrapModelParams {
    const SHARED_TAU1: f64 = 200.0;
    const SHARED_TAU2: f64 = 5.0;
    const SHARED_E1: f64 = 1.0;
    const SHARED_E2: f64 = 30.0;
    const SHARED_BETA: f64 = 2.0;
    pub const DEFAULT_TEMPERATURE: f64 = 4.0;

    /// Fit values for the 946.3 nm line.
    pub fn line_a() -> Self {
        Self::with_fit(750.0, 300.0, 188.0)
    }

    /// Fit values for the 946.8 nm line.
    pub fn line_b() -> Self {
        Self::with_fit(550.0, 200.0, 285.0)
    }

    /// Shared phonon constants with the three fitted parameters supplied.
    pub fn with_fit(tau3: f64, i0: f64, sigma_s: f64) -> Self {
        TrapModelParams {
            tau1: Self::SHARED_TAU1,
            tau2: Self::SHARED_TAU2,
            tau3,
            e1: Self::SHARED_E1,
            e2: Self::SHARED_E2,
            beta: Self::SHARED_BETA,
            i0,
            sigma_s,
            temperature: Self::DEFAULT_TEMPERATURE,
        }
    }

    /// Looks up a named preset (`line-A` or `line-B`, case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "line-a" | "a" => Some(Self::line_a()),
            "line-b" | "b" => Some(Self::line_b()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
            ("e1", self.e1),
            ("e2", self.e2),
            ("beta", self.beta),
            ("i0", self.i0),
            ("sigma_s", self.sigma_s),
            ("temperature", self.temperature),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::domain(format!(
                    "trap parameter {name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Reads a parameter by its field name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "tau1" => self.tau1,
            "tau2" => self.tau2,
            "tau3" => self.tau3,
            "e1" => self.e1,
            "e2" => self.e2,
            "beta" => self.beta,
            "i0" => self.i0,
            "sigma_s" => self.sigma_s,
            "temperature" => self.temperature,
            _ => return None,
        })
    }

    /// Writes a parameter by its field name. Returns `false` for unknown names.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "tau1" => &mut self.tau1,
            "tau2" => &mut self.tau2,
            "tau3" => &mut self.tau3,
            "e1" => &mut self.e1,
            "e2" => &mut self.e2,
            "beta" => &mut self.beta,
            "i0" => &mut self.i0,
            "sigma_s" => &mut self.sigma_s,
            "temperature" => &mut self.temperature,
            _ => return false,
        };
        *slot = value;
        true
    }

    pub const PARAMETER_NAMES: [&'static str; 9] = [
        "tau1",
        "tau2",
        "tau3",
        "e1",
        "e2",
        "beta",
        "i0",
        "sigma_s",
        "temperature",
    ];
}

impl Default for TrapModelParams {
    fn default() -> Self {
        Self::line_a()
    }
}

/// Every intermediate quantity of the dephasing model at one current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherencePoint {
    /// Injection current, µA.
    pub current: f64,
    /// Capture time τ↓, ps.
    pub tau_down: f64,
    /// Escape time τ↑, ps.
    pub tau_up: f64,
    /// Fluctuation timescale, ps.
    pub tau_f: f64,
    /// Modulation amplitude, µeV.
    pub sigma: f64,
    /// Coherence time, ps.
    pub tau_c: f64,
    /// Σ·τf/ħ; well below one in the motional-narrowing regime.
    pub narrowing_ratio: f64,
}

/// Bose-Einstein occupation `1/(exp(e/kB·T) − 1)` for a phonon of energy
/// `e` (meV) at temperature `temperature` (K).
pub fn bose_occupation(e: f64, temperature: f64) -> Result<f64> {
    if !(e > 0.0 && temperature > 0.0) {
        return Err(Error::domain(format!(
            "bose occupation needs e > 0 and T > 0 (e = {e}, T = {temperature})"
        )));
    }
    Ok(1.0 / (e / (KB_MEV_PER_K * temperature)).exp_m1())
}

/// Trap capture rate 1/τ↓ in ps⁻¹ (optical-phonon emission).
pub fn capture_rate(params: &TrapModelParams) -> Result<f64> {
    params.validate()?;
    let n2 = bose_occupation(params.e2, params.temperature)?;
    Ok((1.0 + n2) / params.tau2)
}

/// Trap escape rate 1/τ↑ in ps⁻¹: acoustic-phonon absorption plus an Auger
/// channel that saturates with current.
pub fn escape_rate(params: &TrapModelParams, current: f64) -> Result<f64> {
    params.validate()?;
    if !(current >= 0.0) || !current.is_finite() {
        return Err(Error::domain(format!(
            "current must be finite and >= 0, got {current}"
        )));
    }
    let n1 = bose_occupation(params.e1, params.temperature)?;
    Ok(n1 / params.tau1 + auger_fraction(params, current) / params.tau3)
}

/// I^β/(I^β + I0^β), written as 1/(1 + (I0/I)^β) so that large currents do
/// not overflow.
fn auger_fraction(params: &TrapModelParams, current: f64) -> f64 {
    if current == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (params.i0 / current).powf(params.beta))
}

/// Harmonic combination 1/τf = 1/τ↑ + 1/τ↓. An infinite `tau_up` is allowed.
pub fn fluctuation_time(tau_up: f64, tau_down: f64) -> Result<f64> {
    if !(tau_up > 0.0 && tau_down > 0.0) {
        return Err(Error::domain(format!(
            "fluctuation time needs positive times (tau_up = {tau_up}, tau_down = {tau_down})"
        )));
    }
    Ok(1.0 / (1.0 / tau_up + 1.0 / tau_down))
}

/// Σ = 2Σs/(√(τ↑/τ↓) + √(τ↓/τ↑)).
pub fn modulation_amplitude(sigma_s: f64, tau_up: f64, tau_down: f64) -> Result<f64> {
    if !(sigma_s > 0.0 && tau_up > 0.0 && tau_down > 0.0) {
        return Err(Error::domain(format!(
            "modulation amplitude needs positive inputs \
             (sigma_s = {sigma_s}, tau_up = {tau_up}, tau_down = {tau_down})"
        )));
    }
    let r = (tau_up / tau_down).sqrt();
    Ok(2.0 * sigma_s / (r + 1.0 / r))
}

/// Σ·τf/ħ.
pub fn narrowing_ratio(sigma: f64, tau_f: f64) -> f64 {
    sigma * tau_f / HBAR_UEV_PS
}

/// Evaluates the full dephasing chain at one injection current.
pub fn coherence_time(params: &TrapModelParams, current: f64) -> Result<CoherencePoint> {
    let capture = capture_rate(params)?;
    let escape = escape_rate(params, current)?;
    let tau_down = 1.0 / capture;
    let tau_up = 1.0 / escape;
    let tau_f = fluctuation_time(tau_up, tau_down)?;
    let sigma = modulation_amplitude(params.sigma_s, tau_up, tau_down)?;
    let tau_c = HBAR_UEV_PS * HBAR_UEV_PS / (sigma * sigma * tau_f);
    Ok(CoherencePoint {
        current,
        tau_down,
        tau_up,
        tau_f,
        sigma,
        tau_c,
        narrowing_ratio: narrowing_ratio(sigma, tau_f),
    })
}

/// [`coherence_time`] over a list of currents, in input order.
pub fn coherence_sweep(params: &TrapModelParams, currents: &[f64]) -> Result<Vec<CoherencePoint>> {
    if currents.is_empty() {
        return Err(Error::usage("coherence sweep needs at least one current"));
    }
    currents.iter().map(|&i| coherence_time(params, i)).collect()
}

/// Lorentzian FWHM 2ħ/τc in µeV.
pub fn linewidth_from_coherence(tau_c: f64) -> Result<f64> {
    if !(tau_c > 0.0) {
        return Err(Error::domain(format!("tau_c must be > 0, got {tau_c}")));
    }
    Ok(2.0 * HBAR_UEV_PS / tau_c)
}

/// First-order interference visibility at arm delay `delay`.
pub fn michelson_visibility(delay: f64, tau_c: f64) -> f64 {
    (-delay.abs() / tau_c).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Values below were computed with a separate scalar script evaluating
    // the rate equations term by term.
    const N1_1MEV_4K: f64 = 0.058_157_437_910_239_38;
    const TAU_C_LINE_A_100UA: f64 = 290.861_726_357_827_9;
    const TAU_C_LINE_A_30UA: f64 = 405.076_948_072_695_8;

    #[test]
    fn bose_at_ln2_is_one() {
        let t = 7.0;
        let e = KB_MEV_PER_K * t * std::f64::consts::LN_2;
        assert_relative_eq!(bose_occupation(e, t).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn bose_reference_values() {
        assert!((bose_occupation(1.0, 4.0).unwrap() - 0.05816).abs() < 1e-4);
        assert_relative_eq!(bose_occupation(1.0, 4.0).unwrap(), N1_1MEV_4K, max_relative = 1e-12);
        assert!(bose_occupation(30.0, 4.0).unwrap() < 1e-30);
    }

    #[test]
    fn bose_rejects_non_positive() {
        assert!(matches!(bose_occupation(0.0, 4.0), Err(Error::Domain(_))));
        assert!(matches!(bose_occupation(1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn capture_rate_is_optical_phonon_limited_at_4k() {
        let r = capture_rate(&TrapModelParams::line_a()).unwrap();
        assert!((r - 0.2).abs() < 1e-6);
        let mut cold = TrapModelParams::line_a();
        cold.temperature = 1e-3;
        assert_eq!(capture_rate(&cold).unwrap(), 1.0 / cold.tau2);
    }

    #[test]
    fn capture_rate_doubles_when_n2_is_one() {
        let mut p = TrapModelParams::line_a();
        p.e2 = KB_MEV_PER_K * p.temperature * std::f64::consts::LN_2;
        assert_relative_eq!(capture_rate(&p).unwrap(), 2.0 / p.tau2, max_relative = 1e-12);
    }

    #[test]
    fn escape_rate_limits() {
        let p = TrapModelParams::line_a();
        let base = N1_1MEV_4K / p.tau1;
        assert!((escape_rate(&p, 0.0).unwrap() - 2.908e-4).abs() < 1e-7);
        assert_relative_eq!(
            escape_rate(&p, p.i0).unwrap(),
            base + 0.5 / p.tau3,
            max_relative = 1e-12
        );
        let mut q = p;
        q.beta = 3.7;
        assert_relative_eq!(
            escape_rate(&q, q.i0).unwrap(),
            base + 0.5 / q.tau3,
            max_relative = 1e-12
        );
        assert_relative_eq!(escape_rate(&p, 1e12).unwrap(), base + 1.0 / p.tau3, max_relative = 1e-12);
        assert!(matches!(escape_rate(&p, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fluctuation_time_cases() {
        assert_eq!(fluctuation_time(10.0, 10.0).unwrap(), 5.0);
        assert!((fluctuation_time(3439.0, 5.0).unwrap() - 4.9927).abs() < 1e-3);
        assert_eq!(fluctuation_time(f64::INFINITY, 5.0).unwrap(), 5.0);
        assert!(fluctuation_time(0.0, 5.0).is_err());
    }

    #[test]
    fn modulation_amplitude_cases() {
        assert_eq!(modulation_amplitude(188.0, 42.0, 42.0).unwrap(), 188.0);
        let s = modulation_amplitude(188.0, 2357.82, 5.0).unwrap();
        assert!((s - 17.3).abs() < 0.05, "{s}");
        let (up, down) = (1e9, 5.0);
        assert_relative_eq!(
            modulation_amplitude(188.0, up, down).unwrap(),
            2.0 * 188.0 * (down / up).sqrt(),
            max_relative = 1e-6
        );
        assert!(modulation_amplitude(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn coherence_time_line_a() {
        let p = TrapModelParams::line_a();
        let at30 = coherence_time(&p, 30.0).unwrap();
        assert!((at30.tau_c - 400.0).abs() <= 0.05 * 400.0);
        assert_relative_eq!(at30.tau_c, TAU_C_LINE_A_30UA, max_relative = 1e-9);
        let at100 = coherence_time(&p, 100.0).unwrap();
        assert!((at100.tau_c - 291.0).abs() <= 0.03 * 291.0);
        assert_relative_eq!(at100.tau_c, TAU_C_LINE_A_100UA, max_relative = 1e-9);
    }

    #[test]
    fn coherence_time_is_quadratic_in_sigma() {
        let p = TrapModelParams::line_a();
        let mut q = p;
        q.sigma_s *= 2.0;
        let a = coherence_time(&p, 80.0).unwrap();
        let b = coherence_time(&q, 80.0).unwrap();
        assert_eq!(a.tau_f, b.tau_f);
        assert_relative_eq!(a.tau_c / b.tau_c, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn narrowing_ratio_values() {
        assert_relative_eq!(narrowing_ratio(HBAR_UEV_PS / 7.0, 7.0), 1.0, max_relative = 1e-15);
        assert_eq!(narrowing_ratio(0.0, 5.0), 0.0);
        let r = coherence_time(&TrapModelParams::line_a(), 200.0).unwrap().narrowing_ratio;
        assert!((r - 0.17).abs() < 0.01, "{r}");
    }

    #[test]
    fn sweep_behaviour() {
        let p = TrapModelParams::line_a();
        assert!(matches!(coherence_sweep(&p, &[]), Err(Error::Usage(_))));
        let single = coherence_sweep(&p, &[42.0]).unwrap();
        assert_eq!(single[0], coherence_time(&p, 42.0).unwrap());
        let a = coherence_time(&p, 200.0).unwrap().tau_c;
        let b = coherence_time(&TrapModelParams::line_b(), 200.0).unwrap().tau_c;
        assert!(b < a);
    }

    #[test]
    fn linewidth_and_michelson() {
        assert!((linewidth_from_coherence(325.0).unwrap() - 4.05).abs() < 0.02);
        assert!((linewidth_from_coherence(400.0).unwrap() - 3.29).abs() < 0.02);
        assert_eq!(linewidth_from_coherence(f64::INFINITY).unwrap(), 0.0);
        assert!(linewidth_from_coherence(0.0).is_err());
        assert_eq!(michelson_visibility(0.0, 123.0), 1.0);
        assert_relative_eq!(michelson_visibility(325.0, 325.0), (-1.0f64).exp());
        assert!((michelson_visibility(200.0, 325.0) - 0.5404).abs() < 1e-3);
    }

    #[test]
    fn tau_c_non_increasing_on_fine_grid() {
        for p in [TrapModelParams::line_a(), TrapModelParams::line_b()] {
            let currents: Vec<f64> = (0..1000).map(|k| k as f64 * 0.5).collect();
            let sweep = coherence_sweep(&p, &currents).unwrap();
            for w in sweep.windows(2) {
                assert!(w[1].tau_c <= w[0].tau_c);
                assert!(w[1].tau_up <= w[0].tau_up);
            }
            assert!(sweep.iter().all(|c| c.narrowing_ratio < 1.0));
        }
    }

    fn params_strategy() -> impl Strategy<Value = TrapModelParams> {
        (
            10.0..2000.0f64,
            0.5..50.0f64,
            50.0..5000.0f64,
            0.1..5.0f64,
            5.0..60.0f64,
            0.5..4.0f64,
            10.0..2000.0f64,
            10.0..2000.0f64,
            1.0..60.0f64,
        )
            .prop_map(|(tau1, tau2, tau3, e1, e2, beta, i0, sigma_s, temperature)| {
                TrapModelParams { tau1, tau2, tau3, e1, e2, beta, i0, sigma_s, temperature }
            })
    }

    proptest! {
        #[test]
        fn point_invariants(p in params_strategy(), i in 0.0..2000.0f64) {
            let c = coherence_time(&p, i).unwrap();
            let lhs = 1.0 / c.tau_f;
            let rhs = 1.0 / c.tau_up + 1.0 / c.tau_down;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            prop_assert!(c.sigma <= p.sigma_s * (1.0 + 1e-15));
            prop_assert!(c.tau_c > 0.0);
            let product = HBAR_UEV_PS.powi(2) / (c.sigma.powi(2) * c.tau_f);
            prop_assert!((c.tau_c - product).abs() <= 1e-12 * product);
        }

        #[test]
        fn escape_monotone_in_current(p in params_strategy(), a in 0.0..3000.0f64, b in 0.0..3000.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(escape_rate(&p, lo).unwrap() <= escape_rate(&p, hi).unwrap());
            // Σ²·τf ∝ τ↑²τ↓²/(τ↑ + τ↓)³ only grows with escape rate while τ↑ ≥ 2τ↓.
            prop_assume!(2.0 * escape_rate(&p, hi).unwrap() <= capture_rate(&p).unwrap());
            prop_assert!(coherence_time(&p, lo).unwrap().tau_c >= coherence_time(&p, hi).unwrap().tau_c * (1.0 - 1e-12));
        }

        #[test]
        fn sigma_equals_saturation_only_when_balanced(s in 1.0..500.0f64, up in 1.0..1e4f64, down in 1.0..1e4f64) {
            let sigma = modulation_amplitude(s, up, down).unwrap();
            prop_assert!(sigma <= s * (1.0 + 1e-15));
            if (up / down - 1.0).abs() > 1e-3 {
                prop_assert!(sigma < s);
            }
        }

        #[test]
        fn michelson_is_multiplicative(d1 in 0.0..5000.0f64, d2 in 0.0..5000.0f64, tc in 10.0..2000.0f64) {
            let lhs = michelson_visibility(d1 + d2, tc);
            let rhs = michelson_visibility(d1, tc) * michelson_visibility(d2, tc);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }
    }
}
