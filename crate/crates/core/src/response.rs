//! Detection-system response: kernels, convolution of correlation traces
//! and the resolution-limited HOM visibility.

use rayon::prelude::*;

use crate::constants::FWHM_PER_SIGMA;
use crate::correlations::{g2_parallel, g2_perp, InterferometerSpec, SourceSpec};
use crate::error::{Error, Result};

/// Working grid step, ps.
pub const DEFAULT_STEP: f64 = 5.0;
/// Half-width of the working grid, ps.
pub const DEFAULT_RANGE: f64 = 25_000.0;
/// Gaussian kernels are cut at this many standard deviations.
pub const DEFAULT_TRUNCATION_SIGMAS: f64 = 6.0;

const STEP_MATCH_TOLERANCE: f64 = 1e-9;

/// Standard deviation of a Gaussian with the given FWHM.
pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

/// Per-detector timing jitter σ for a pair response of the given FWHM.
///
/// The pair response is the cross-correlation of the two detector
/// responses, so independent Gaussian jitters add in quadrature.
pub fn per_detector_jitter(pair_fwhm: f64) -> f64 {
    sigma_from_fwhm(pair_fwhm) / std::f64::consts::SQRT_2
}

/// Normalised detector response sampled on a uniform grid.
///
/// Sample `k` sits at `t_start + k·grid_step`; `t_start` is always an
/// integer multiple of the step so kernels line up with curves sharing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseKernel {
    pub grid_step: f64,
    pub t_start: f64,
    pub weights: Vec<f64>,
    /// FWHM of the analytic Gaussian this kernel was built from, if any.
    pub fwhm: Option<f64>,
}

impl ResponseKernel {
    /// Single unit weight at zero delay.
    pub fn identity(step: f64) -> Self {
        ResponseKernel { grid_step: step, t_start: 0.0, weights: vec![1.0], fwhm: Some(0.0) }
    }

    fn first_index(&self) -> i64 {
        (self.t_start / self.grid_step).round() as i64
    }

    /// Iterator over `(time, weight)` pairs.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let first = self.first_index();
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| ((first + k as i64) as f64 * self.grid_step, w))
    }

    /// First moment of the kernel, ps.
    pub fn mean(&self) -> f64 {
        self.samples().map(|(t, w)| t * w).sum()
    }

    /// Largest |t| carrying weight, ps.
    pub fn half_support(&self) -> f64 {
        let first = self.first_index();
        let last = first + self.weights.len() as i64 - 1;
        first.abs().max(last.abs()) as f64 * self.grid_step
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Uniformly sampled correlation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub t_start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl SampledCurve {
    pub fn new(t_start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::usage(format!("curve step must be > 0, got {step}")));
        }
        if values.len() < 2 {
            return Err(Error::usage("a sampled curve needs at least two samples"));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("curve sample {bad} is not finite")));
        }
        Ok(SampledCurve { t_start, step, values })
    }

    /// Samples `f` on the symmetric grid `−range..=range` with spacing `step`.
    pub fn from_fn(range: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(step > 0.0 && range > 0.0) {
            return Err(Error::usage("curve range and step must be > 0"));
        }
        let half = (range / step).round() as i64;
        let values = (-half..=half).map(|k| f(k as f64 * step)).collect();
        Self::new(-half as f64 * step, step, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t_start + index as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.time(i))
    }

    /// Index of the sample nearest to `t`, if `t` lies within half a step of
    /// the grid.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.step;
        let k = x.round();
        if k < 0.0 || k >= self.values.len() as f64 || (x - k).abs() > 0.5 + 1e-9 {
            return None;
        }
        Some(k as usize)
    }

    /// Value at the nearest grid point.
    pub fn value_near(&self, t: f64) -> Option<f64> {
        self.nearest_index(t).map(|i| self.values[i])
    }
}

/// Zero-mean Gaussian kernel truncated at `truncation_sigmas`·σ and
/// renormalised to unit mass.
pub fn gaussian_kernel(fwhm: f64, step: f64, truncation_sigmas: f64) -> Result<ResponseKernel> {
    if !(fwhm.is_finite() && fwhm > 0.0 && step.is_finite() && step > 0.0) {
        return Err(Error::domain(format!(
            "gaussian kernel needs fwhm > 0 and step > 0 (fwhm = {fwhm}, step = {step})"
        )));
    }
    if !(truncation_sigmas >= 4.0) {
        return Err(Error::domain(format!(
            "truncation must be at least 4 sigma, got {truncation_sigmas}"
        )));
    }
    let sigma = sigma_from_fwhm(fwhm);
    if step > sigma {
        return Err(Error::Resolution(format!(
            "grid step {step} ps exceeds kernel sigma {sigma:.3} ps"
        )));
    }
    let half = (truncation_sigmas * sigma / step).floor() as i64;
    let mut weights: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 * step;
            (-0.5 * (t / sigma).powi(2)).exp()
        })
        .collect();
    normalize(&mut weights);
    Ok(ResponseKernel { grid_step: step, t_start: -half as f64 * step, weights, fwhm: Some(fwhm) })
}

fn normalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
}

/// Resamples a tabulated (time, weight) response onto the grid with
/// spacing `step` by linear interpolation and renormalises it.
pub fn load_tabulated_response(samples: &[(f64, f64)], step: f64) -> Result<ResponseKernel> {
    if samples.len() < 8 {
        return Err(Error::usage(format!(
            "tabulated response needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::usage(format!("response grid step must be > 0, got {step}")));
    }
    let mut sorted = samples.to_vec();
    if sorted.iter().any(|&(t, w)| !t.is_finite() || !w.is_finite() || w < 0.0) {
        return Err(Error::usage("tabulated response weights must be finite and non-negative"));
    }
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::usage("tabulated response has duplicate time stamps"));
    }
    let (t_min, t_max) = (sorted[0].0, sorted[sorted.len() - 1].0);
    let first = (t_min / step).ceil() as i64;
    let last = (t_max / step).floor() as i64;
    if last < first {
        return Err(Error::Resolution(format!(
            "tabulated response span {t_min}..{t_max} ps holds no grid point of step {step} ps"
        )));
    }
    let mut weights = Vec::with_capacity((last - first + 1) as usize);
    let mut seg = 0;
    for k in first..=last {
        let t = k as f64 * step;
        while seg + 2 < sorted.len() && sorted[seg + 1].0 < t {
            seg += 1;
        }
        let (t0, w0) = sorted[seg];
        let (t1, w1) = sorted[seg + 1];
        let frac = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        weights.push(w0 + frac * (w1 - w0));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::usage("tabulated response has no positive weight on the working grid"));
    }
    normalize(&mut weights);
    Ok(ResponseKernel { grid_step: step, t_start: first as f64 * step, weights, fwhm: None })
}

/// Discrete convolution `(curve ⊗ kernel)(τ) = Σ_k w_k·curve(τ − t_k)`.
///
/// Samples outside the curve take its first or last value.
pub fn convolve(curve: &SampledCurve, kernel: &ResponseKernel) -> Result<SampledCurve> {
    if (curve.step - kernel.grid_step).abs() > STEP_MATCH_TOLERANCE * curve.step {
        return Err(Error::usage(format!(
            "curve step {} ps does not match kernel step {} ps",
            curve.step, kernel.grid_step
        )));
    }
    let n = curve.values.len() as i64;
    let first = kernel.first_index();
    let values = (0..n)
        .map(|i| {
            kernel
                .weights
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let j = (i - first - k as i64).clamp(0, n - 1);
                    w * curve.values[j as usize]
                })
                .sum()
        })
        .collect();
    Ok(SampledCurve { t_start: curve.t_start, step: curve.step, values })
}

/// Convolution of an analytic trace with `kernel`, evaluated at `tau`.
pub fn convolve_fn_at(f: impl Fn(f64) -> f64, kernel: &ResponseKernel, tau: f64) -> f64 {
    kernel.samples().map(|(t, w)| w * f(tau - t)).sum()
}

/// Post-selected visibility at zero delay after both correlation traces
/// pass through the detector response.
pub fn v_hom_measured(
    source: &SourceSpec,
    interf: &InterferometerSpec,
    kernel: &ResponseKernel,
) -> Result<f64> {
    source.validate()?;
    interf.validate()?;
    let perp = convolve_fn_at(|t| g2_perp(t, source, interf), kernel, 0.0);
    let parallel = convolve_fn_at(|t| g2_parallel(t, source, interf), kernel, 0.0);
    if perp < 1e-9 {
        return Err(Error::Undefined(format!(
            "convolved g2_perp at zero delay is {perp:e}"
        )));
    }
    Ok((perp - parallel) / perp)
}

/// Grid step used by [`visibility_map`] for a given resolution: the
/// default step, refined when the kernel would otherwise be undersampled.
pub fn map_step(fwhm: f64) -> f64 {
    DEFAULT_STEP.min(sigma_from_fwhm(fwhm) / 2.0)
}

/// V_HOM over a (resolution, coherence time) grid. Row `i` corresponds to
/// `fwhm_range[i]`, column `j` to `tau_c_range[j]`. The lifetime and
/// residual g²(0) are taken from `source_template`.
pub fn visibility_map(
    fwhm_range: &[f64],
    tau_c_range: &[f64],
    source_template: &SourceSpec,
    interf: &InterferometerSpec,
) -> Result<Vec<Vec<f64>>> {
    if fwhm_range.is_empty() || tau_c_range.is_empty() {
        return Err(Error::usage("visibility map needs non-empty ranges"));
    }
    if let Some(bad) = fwhm_range.iter().chain(tau_c_range).find(|v| !(**v > 0.0)) {
        return Err(Error::domain(format!("visibility map values must be > 0, got {bad}")));
    }
    let kernels = fwhm_range
        .iter()
        .map(|&fwhm| gaussian_kernel(fwhm, map_step(fwhm), DEFAULT_TRUNCATION_SIGMAS))
        .collect::<Result<Vec<_>>>()?;
    kernels
        .par_iter()
        .map(|kernel| {
            tau_c_range
                .iter()
                .map(|&tau_c| {
                    let source = SourceSpec { tau_c, ..*source_template };
                    v_hom_measured(&source, interf, kernel)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}
