//! Least-squares estimation of model parameters from measured series.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dephasing::{coherence_time, TrapModelParams};
use crate::error::{Error, Result};
use crate::montecarlo::CoincidenceHistogram;
use crate::optimize::{self, SimplexOptions};
use crate::response::{ResponseKernel, SampledCurve};

/// Abscissa/ordinate pairs with optional standard errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasuredSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl MeasuredSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        let s = MeasuredSeries { x, y, sigma };
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::usage(format!(
                "series has {} abscissae but {} ordinates",
                self.x.len(),
                self.y.len()
            )));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.x.len() {
                return Err(Error::usage("sigma column length differs from data length"));
            }
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::usage("sigma values must be > 0"));
            }
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::usage("series contains non-finite values"));
        }
        Ok(())
    }

    /// Shape checks plus the requirement of at least `free + 1` points.
    pub fn validate(&self, free: usize) -> Result<()> {
        self.check_shape()?;
        if self.len() < free + 1 {
            return Err(Error::usage(format!(
                "{} data points cannot constrain {free} free parameters",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.sigma.as_ref().map_or(1.0, |s| s[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

impl FreeParameter {
    pub fn new(name: &str, lower: f64, upper: f64, initial: f64) -> Self {
        FreeParameter { name: name.to_string(), lower, upper, initial }
    }
}

/// Which parameters vary (with bounds and starting values) and which are
/// held at given values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub free: Vec<FreeParameter>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
}

impl FitSpec {
    /// τ3, I0 and Σs free; phonon constants and temperature fixed at the
    /// shared preset values.
    pub fn coherence_default() -> Self {
        let base = TrapModelParams::line_a();
        let fixed = ["tau1", "tau2", "e1", "e2", "beta", "temperature"]
            .iter()
            .map(|n| (n.to_string(), base.get(n).expect("known parameter")))
            .collect();
        FitSpec {
            free: vec![
                FreeParameter::new("tau3", 50.0, 5000.0, 500.0),
                FreeParameter::new("i0", 10.0, 2000.0, 250.0),
                FreeParameter::new("sigma_s", 10.0, 2000.0, 200.0),
            ],
            fixed,
        }
    }

    /// Lifetime and residual g²(0) both free.
    pub fn hbt_default() -> Self {
        FitSpec {
            free: vec![
                FreeParameter::new("tau_r", 50.0, 20_000.0, 1000.0),
                FreeParameter::new("g2_zero", 0.0, 0.99, 0.1),
            ],
            fixed: BTreeMap::new(),
        }
    }

    pub fn validate(&self, known: &[&str]) -> Result<()> {
        for p in &self.free {
            if !known.contains(&p.name.as_str()) {
                return Err(Error::usage(format!("unknown fit parameter {:?}", p.name)));
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::usage(format!("bounds of {} are not ordered", p.name)));
            }
            if !(p.lower..=p.upper).contains(&p.initial) {
                return Err(Error::usage(format!("initial guess of {} lies outside its bounds", p.name)));
            }
            if self.fixed.contains_key(&p.name) {
                return Err(Error::usage(format!("{} is both free and fixed", p.name)));
            }
        }
        for name in self.fixed.keys() {
            if !known.contains(&name.as_str()) {
                return Err(Error::usage(format!("unknown fixed parameter {name:?}")));
            }
        }
        for (i, p) in self.free.iter().enumerate() {
            if self.free[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::usage(format!("{} listed twice", p.name)));
            }
        }
        Ok(())
    }

    fn lower(&self) -> Vec<f64> {
        self.free.iter().map(|p| p.lower).collect()
    }

    fn upper(&self) -> Vec<f64> {
        self.free.iter().map(|p| p.upper).collect()
    }

    fn initial(&self) -> Vec<f64> {
        self.free.iter().map(|p| p.initial).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub values: BTreeMap<String, f64>,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub n_evaluations: usize,
    /// Approximate standard errors from the curvature of χ² at the optimum.
    pub stderr: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> f64 {
        self.values[name]
    }

    /// Plain-text report, one `key = value` per line.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (name, v) in &self.values {
            match self.stderr.get(name) {
                Some(e) => out.push_str(&format!("{name} = {v:.10e} +/- {e:.3e}\n")),
                None => out.push_str(&format!("{name} = {v:.10e}\n")),
            }
        }
        out.push_str(&format!("chi2 = {:.6e}\n", self.chi2));
        out.push_str(&format!("dof = {}\n", self.dof));
        out.push_str(&format!("converged = {}\n", self.converged));
        out.push_str(&format!("n_evaluations = {}\n", self.n_evaluations));
        for w in &self.warnings {
            out.push_str(&format!("warning = {w}\n"));
        }
        out
    }
}

/// Standard errors from cov = 2·H⁻¹ of χ², scaled by χ²/dof when the data
/// carried no uncertainties.
fn curvature_stderr<F: Fn(&[f64]) -> f64>(
    objective: &F,
    x: &[f64],
    spec: &FitSpec,
    chi2: f64,
    dof: usize,
    weighted: bool,
) -> BTreeMap<String, f64> {
    let steps: Vec<f64> = x
        .iter()
        .zip(&spec.free)
        .map(|(v, p)| 1e-4 * v.abs().max(1e-3 * (p.upper - p.lower)))
        .collect();
    let h = optimize::hessian(objective, x, &steps);
    let n = x.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let scale = if weighted || dof == 0 { 1.0 } else { chi2 / dof as f64 };
    let cov = matrix.try_inverse().map(|inv| inv * 2.0 * scale);
    spec.free
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let var = cov.as_ref().map_or(f64::NAN, |c| c[(i, i)]);
            (p.name.clone(), if var >= 0.0 { var.sqrt() } else { f64::NAN })
        })
        .collect()
}

fn assemble(
    spec: &FitSpec,
    min: &optimize::Minimum,
    dof: usize,
    stderr: BTreeMap<String, f64>,
    warnings: Vec<String>,
) -> FitResult {
    let mut values: BTreeMap<String, f64> =
        spec.free.iter().zip(&min.x).map(|(p, &v)| (p.name.clone(), v)).collect();
    for (k, v) in &spec.fixed {
        values.insert(k.clone(), *v);
    }
    FitResult {
        values,
        chi2: min.value,
        dof,
        converged: min.converged,
        n_evaluations: min.evaluations,
        stderr,
        warnings,
    }
}

fn trap_from(spec: &FitSpec, x: &[f64]) -> TrapModelParams {
    let mut p = TrapModelParams::line_a();
    for (k, v) in &spec.fixed {
        p.set(k, *v);
    }
    for (fp, v) in spec.free.iter().zip(x) {
        p.set(&fp.name, *v);
    }
    p
}

/// Fits the trap model to coherence time versus current, `data.x` in µA and
/// `data.y` in ps. Parameters not named in `spec` keep their line-A values.
pub fn fit_coherence_curve(data: &MeasuredSeries, spec: &FitSpec) -> Result<FitResult> {
    fit_coherence_curve_with(data, spec, &SimplexOptions::default())
}

pub fn fit_coherence_curve_with(
    data: &MeasuredSeries,
    spec: &FitSpec,
    options: &SimplexOptions,
) -> Result<FitResult> {
    spec.validate(&TrapModelParams::PARAMETER_NAMES)?;
    if data.len() < 3 {
        return Err(Error::usage(format!("coherence fit needs at least 3 points, got {}", data.len())));
    }
    data.validate(spec.free.len())?;
    if data.x.iter().any(|&i| i < 0.0) || data.y.iter().any(|&t| t <= 0.0) {
        return Err(Error::usage("coherence data needs currents >= 0 and coherence times > 0"));
    }
    trap_from(spec, &spec.initial()).validate()?;
    let objective = |x: &[f64]| -> f64 {
        let params = trap_from(spec, x);
        data.x
            .iter()
            .zip(&data.y)
            .enumerate()
            .map(|(i, (&current, &tau_c))| match coherence_time(&params, current) {
                Ok(point) => ((tau_c - point.tau_c) / data.weight(i)).powi(2),
                Err(_) => f64::INFINITY,
            })
            .sum()
    };
    let min = optimize::minimize(objective, &spec.initial(), &spec.lower(), &spec.upper(), options);
    let dof = data.len() - spec.free.len();
    let stderr = curvature_stderr(&objective, &min.x, spec, min.value, dof, data.sigma.is_some());
    let mut warnings = Vec::new();
    if !min.converged {
        warnings.push("simplex search exhausted its evaluation budget".to_string());
    }
    Ok(assemble(spec, &min, dof, stderr, warnings))
}

/// Fits `exp(−|Δτ|/τc)` to first-order visibilities by bounded 1-D search.
/// Points with non-positive visibility are dropped with a warning.
pub fn fit_visibility_decay(data: &MeasuredSeries) -> Result<FitResult> {
    data.check_shape()?;
    let mut warnings = Vec::new();
    let keep: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] > 0.0).collect();
    let rejected = data.len() - keep.len();
    if rejected > 0 {
        warnings.push(format!("{rejected} point(s) with non-positive visibility rejected"));
    }
    if keep.is_empty() {
        return Err(Error::usage("every visibility point was rejected"));
    }
    if keep.len() < 2 {
        return Err(Error::usage("visibility decay fit needs at least two usable points"));
    }
    let max_delay = keep.iter().map(|&i| data.x[i].abs()).fold(0.0, f64::max);
    if max_delay == 0.0 {
        return Err(Error::usage("visibility decay fit needs at least one non-zero delay"));
    }
    let objective = |tau_c: f64| -> f64 {
        keep.iter()
            .map(|&i| ((data.y[i] - (-data.x[i].abs() / tau_c).exp()) / data.weight(i)).powi(2))
            .sum()
    };

    // coarse geometric scan, then golden-section refinement between the
    // neighbours of the best scan point
    const DECADES: i32 = 3;
    const PER_DECADE: i32 = 20;
    let lo = max_delay * 10f64.powi(-DECADES);
    let factor = 10f64.powf(1.0 / PER_DECADE as f64);
    let grid: Vec<f64> = (0..=2 * DECADES * PER_DECADE).map(|k| lo * factor.powi(k)).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let best = (0..grid.len()).fold(0, |b, k| if values[k] < values[b] { k } else { b });
    let mut evaluations = grid.len();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    evaluations += 2;
    while (b - a) > 1e-12 * (a + b) && evaluations < 20_000 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = objective(d);
        }
        evaluations += 1;
    }
    let tau_c = 0.5 * (a + b);
    let chi2 = objective(tau_c);
    let on_edge = best == 0 || best == grid.len() - 1;
    if on_edge {
        warnings.push("best coherence time sits at the edge of the search range".to_string());
    }
    let dof = keep.len() - 1;
    let h = 1e-4 * tau_c;
    let curvature = (objective(tau_c + h) - 2.0 * chi2 + objective(tau_c - h)) / (h * h);
    let scale = if data.sigma.is_some() || dof == 0 { 1.0 } else { chi2 / dof as f64 };
    let var = 2.0 * scale / curvature;
    let mut values = BTreeMap::new();
    values.insert("tau_c".to_string(), tau_c);
    let mut stderr = BTreeMap::new();
    stderr.insert("tau_c".to_string(), if var >= 0.0 { var.sqrt() } else { f64::NAN });
    Ok(FitResult {
        values,
        chi2,
        dof,
        converged: !on_edge && (b - a) <= 1e-8 * tau_c,
        n_evaluations: evaluations + 3,
        stderr,
        warnings,
    })
}

/// Sub-samples per bin used to average models over histogram bins.
pub const BIN_SUBSAMPLES: usize = 10;

/// Antibunching dip `1 − (1 − g0)·e^{−|τ|/τr}` convolved with a kernel and
/// averaged over histogram bins.
///
/// Outside the kernel support every shifted sample lies on one side of
/// zero, so the convolution collapses to `e^{−|τ|/τr}` times a kernel
/// moment and is evaluated in closed form.
pub struct HbtModel<'a> {
    kernel: &'a ResponseKernel,
    support: f64,
}

/// Kernel moments Σw·e^{±t/τr} for one lifetime.
#[derive(Clone, Copy)]
struct TailMoments {
    tau_r: f64,
    positive: f64,
    negative: f64,
}

impl<'a> HbtModel<'a> {
    pub fn new(kernel: &'a ResponseKernel) -> Self {
        HbtModel { kernel, support: kernel.half_support() }
    }

    fn moments(&self, tau_r: f64) -> TailMoments {
        let (positive, negative) = self
            .kernel
            .samples()
            .fold((0.0, 0.0), |(p, n), (t, w)| (p + w * (t / tau_r).exp(), n + w * (-t / tau_r).exp()));
        TailMoments { tau_r, positive, negative }
    }

    fn value_with(&self, tau: f64, m: &TailMoments, g2_zero: f64) -> f64 {
        let depth = 1.0 - g2_zero;
        if tau.abs() >= self.support {
            let moment = if tau > 0.0 { m.positive } else { m.negative };
            return 1.0 - depth * (-tau.abs() / m.tau_r).exp() * moment;
        }
        self.kernel
            .samples()
            .map(|(t, w)| w * (1.0 - depth * (-(tau - t).abs() / m.tau_r).exp()))
            .sum()
    }

    fn bin_average_with(&self, center: f64, width: f64, m: &TailMoments, g2_zero: f64) -> f64 {
        (0..BIN_SUBSAMPLES)
            .map(|s| {
                let t = center + ((s as f64 + 0.5) / BIN_SUBSAMPLES as f64 - 0.5) * width;
                self.value_with(t, m, g2_zero)
            })
            .sum::<f64>()
            / BIN_SUBSAMPLES as f64
    }

    /// Convolved model at a single delay.
    pub fn value(&self, tau: f64, tau_r: f64, g2_zero: f64) -> f64 {
        self.value_with(tau, &self.moments(tau_r), g2_zero)
    }

    /// Model averaged over a bin of width `width` centred on `center`.
    pub fn bin_average(&self, center: f64, width: f64, tau_r: f64, g2_zero: f64) -> f64 {
        self.bin_average_with(center, width, &self.moments(tau_r), g2_zero)
    }

    /// Bin averages for many bins of a common width.
    pub fn bin_averages(&self, centers: &[f64], width: f64, tau_r: f64, g2_zero: f64) -> Vec<f64> {
        let m = self.moments(tau_r);
        centers.iter().map(|&c| self.bin_average_with(c, width, &m, g2_zero)).collect()
    }
}

/// Fits lifetime and residual g²(0) to a normalised HBT histogram through
/// the detector response `kernel`. Bins are weighted with Poisson errors.
pub fn fit_hbt_lifetime(
    histogram: &CoincidenceHistogram,
    kernel: &ResponseKernel,
    spec: &FitSpec,
) -> Result<FitResult> {
    fit_hbt_lifetime_with(histogram, kernel, spec, &SimplexOptions::default())
}

pub fn fit_hbt_lifetime_with(
    histogram: &CoincidenceHistogram,
    kernel: &ResponseKernel,
    spec: &FitSpec,
    options: &SimplexOptions,
) -> Result<FitResult> {
    const NAMES: [&str; 2] = ["tau_r", "g2_zero"];
    spec.validate(&NAMES)?;
    if !(histogram.normalization > 0.0) {
        return Err(Error::usage("histogram normalisation must be > 0"));
    }
    if histogram.counts.len() < spec.free.len() + 1 || histogram.counts.len() < 3 {
        return Err(Error::usage("histogram has too few bins for the fit"));
    }
    let ratio = histogram.bin_width / kernel.grid_step;
    if ratio < 1.0 - 1e-9 {
        return Err(Error::usage(format!(
            "kernel step {} ps is coarser than the histogram bins ({} ps)",
            kernel.grid_step, histogram.bin_width
        )));
    }
    let model = HbtModel::new(kernel);
    let centers: Vec<f64> = histogram.bin_centers().collect();
    let observed = histogram.normalized();
    let sigma: Vec<f64> = histogram
        .counts
        .iter()
        .map(|&c| (c.max(1) as f64).sqrt() / histogram.normalization)
        .collect();
    let lookup = |x: &[f64], name: &str, default: f64| -> f64 {
        spec.free
            .iter()
            .position(|p| p.name == name)
            .map(|i| x[i])
            .or_else(|| spec.fixed.get(name).copied())
            .unwrap_or(default)
    };
    let objective = |x: &[f64]| -> f64 {
        let tau_r = lookup(x, "tau_r", 800.0);
        let g2_zero = lookup(x, "g2_zero", 0.0);
        model
            .bin_averages(&centers, histogram.bin_width, tau_r, g2_zero)
            .iter()
            .zip(&observed)
            .zip(&sigma)
            .map(|((&m, &y), &s)| ((y - m) / s).powi(2))
            .sum()
    };
    let min = optimize::minimize(objective, &spec.initial(), &spec.lower(), &spec.upper(), options);
    let dof = centers.len() - spec.free.len();
    let stderr = curvature_stderr(&objective, &min.x, spec, min.value, dof, true);
    let mut warnings = Vec::new();
    if !min.converged {
        warnings.push("simplex search exhausted its evaluation budget".to_string());
    }
    Ok(assemble(spec, &min, dof, stderr, warnings))
}

/// Σ((y − m)/σ)² with the model read at the nearest grid point; every data
/// abscissa must lie within half a step of the model grid.
pub fn chi_square(model_curve: &SampledCurve, data: &MeasuredSeries) -> Result<f64> {
    data.check_shape()?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let m = model_curve.value_near(data.x[i]).ok_or_else(|| {
            Error::usage(format!("data abscissa {} is off the model grid", data.x[i]))
        })?;
        total += ((data.y[i] - m) / data.weight(i)).powi(2);
    }
    Ok(total)
}
