//! Monte Carlo photon-stream engine.
//!
//! Emissions come from a two-stage renewal process (exponential
//! re-excitation followed by exponential decay). Photons are routed through
//! the delayed Mach-Zehnder (or a plain HBT splitter), opposite-arm pairs
//! that meet at the final coupler are given HOM-thinned joint outcomes, and
//! each detection is smeared by Gaussian timing jitter. Coincidences
//! between D1 and D2 are histogrammed and normalised by the accidental
//! level.
//!
//! Randomness is drawn from ChaCha streams keyed by `(seed, stage)` and, for
//! emission, by segment index, so results are bit-identical for a given
//! seed whatever the rayon pool size.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{g2_parallel, g2_perp, g2_source, InterferometerSpec, SourceSpec};
use crate::error::{Error, Result};
use crate::response::{self, ResponseKernel, SampledCurve};

/// Upper bound on pump_rate·tau_r for the weak-pump limit.
pub const SATURATION_GUARD: f64 = 0.2;
/// Default re-excitation rate, ps⁻¹ (one per 20 ns).
pub const DEFAULT_PUMP_RATE: f64 = 1.0 / 20_000.0;
/// Length of an independently seeded emission segment, ps.
pub const SEGMENT_LENGTH: f64 = 1.0e9;
/// Opposite-arm photons closer than this many coherence times may interfere.
pub const INTERFERENCE_CUTOFF_TAU_C: f64 = 10.0;

const STREAM_ROUTING: u64 = 1;
const STREAM_DETECTION: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_EMISSION_BASE: u64 = 1 << 32;

fn stage_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamParams {
    /// Re-excitation rate, ps⁻¹.
    pub pump_rate: f64,
    /// Radiative lifetime, ps.
    pub tau_r: f64,
    /// Coherence time, ps.
    pub tau_c: f64,
    /// Length of the emission window, ps.
    pub duration: f64,
    pub seed: u64,
}

impl StreamParams {
    /// Mean spacing between emissions, 1/p + τr.
    pub fn mean_interval(&self) -> f64 {
        1.0 / self.pump_rate + self.tau_r
    }

    /// Duration expected to hold `photons` emissions.
    pub fn with_photon_count(mut self, photons: f64) -> Self {
        self.duration = photons * self.mean_interval();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pump_rate", self.pump_rate),
            ("tau_r", self.tau_r),
            ("tau_c", self.tau_c),
            ("duration", self.duration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::usage(format!("stream {name} must be finite and > 0, got {v}")));
            }
        }
        let load = self.pump_rate * self.tau_r;
        if load >= SATURATION_GUARD {
            return Err(Error::usage(format!(
                "pump_rate·tau_r = {load:.3} violates the weak-pump guard (< {SATURATION_GUARD})"
            )));
        }
        Ok(())
    }
}

impl Default for StreamParams {
    /// Weak pumping, 800 ps lifetime, 325 ps coherence, 10⁶ photons.
    fn default() -> Self {
        StreamParams {
            pump_rate: DEFAULT_PUMP_RATE,
            tau_r: 800.0,
            tau_c: 325.0,
            duration: 0.0,
            seed: 0,
        }
        .with_photon_count(1.0e6)
    }
}

/// Renewal-process emission times, strictly increasing.
///
/// The window is cut into [`SEGMENT_LENGTH`] segments simulated in
/// parallel; each restarts the excitation cycle at its left edge, so gaps
/// across a boundary are never shorter than an ordinary interval.
pub fn simulate_emission_stream(params: &StreamParams) -> Result<Vec<f64>> {
    params.validate()?;
    let pump = Exp::new(params.pump_rate).map_err(|e| Error::usage(e.to_string()))?;
    let decay = Exp::new(1.0 / params.tau_r).map_err(|e| Error::usage(e.to_string()))?;
    let segments = (params.duration / SEGMENT_LENGTH).ceil().max(1.0) as u64;
    let chunks: Vec<Vec<f64>> = (0..segments)
        .into_par_iter()
        .map(|index| {
            let start = index as f64 * SEGMENT_LENGTH;
            let end = (start + SEGMENT_LENGTH).min(params.duration);
            let mut rng = stage_rng(params.seed, STREAM_EMISSION_BASE + index);
            let mut t = start;
            let mut out = Vec::with_capacity(((end - start) / params.mean_interval() * 1.1) as usize);
            loop {
                t += pump.sample(&mut rng) + decay.sample(&mut rng);
                if t >= end {
                    break;
                }
                out.push(t);
            }
            out
        })
        .collect();
    Ok(chunks.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteMode {
    /// Single 50/50 splitter in front of the detectors.
    Hbt,
    /// Delayed Mach-Zehnder interferometer.
    Mzi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    Parallel,
    Orthogonal,
}

/// Interferometer arm a photon travelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Short,
    Long,
}

/// A photon arriving at the final coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonRecord {
    pub arm: Arm,
    /// Arrival time at the final coupler, ps.
    pub time: f64,
}

/// Sends each photon down the long arm with probability R1, adding the arm
/// delay. In HBT mode every photon stays on the short arm. Output is sorted
/// by arrival time.
pub fn route_photons<R: Rng>(
    emissions: &[f64],
    interf: &InterferometerSpec,
    mode: RouteMode,
    rng: &mut R,
) -> Vec<PhotonRecord> {
    match mode {
        RouteMode::Hbt => emissions.iter().map(|&time| PhotonRecord { arm: Arm::Short, time }).collect(),
        RouteMode::Mzi => {
            let mut short = Vec::with_capacity(emissions.len());
            let mut long = Vec::with_capacity((emissions.len() as f64 * interf.r1 * 1.1) as usize);
            for &t in emissions {
                if rng.random::<f64>() < interf.r1 {
                    long.push(PhotonRecord { arm: Arm::Long, time: t + interf.delta_tau2 });
                } else {
                    short.push(PhotonRecord { arm: Arm::Short, time: t });
                }
            }
            merge_by_time(short, long)
        }
    }
}

fn merge_by_time(a: Vec<PhotonRecord>, b: Vec<PhotonRecord>) -> Vec<PhotonRecord> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        // ties go to the short arm to keep the order deterministic
        if a[i].time <= b[j].time {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub detector: Detector,
    /// Detection time including jitter, ps.
    pub time: f64,
}

/// Pairs opposite-arm photons for interference: each candidate links a
/// photon to the next opposite-arm photon within `cutoff`; candidates are
/// accepted greedily in order of increasing separation so that every
/// photon joins at most one pair, with its nearest available partner.
pub fn pair_opposite_arms(records: &[PhotonRecord], cutoff: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records.iter().enumerate().skip(i + 1) {
            if b.time - a.time >= cutoff {
                break;
            }
            if b.arm != a.arm {
                candidates.push((b.time - a.time, i, j));
                break;
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut taken = vec![false; records.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !taken[i] && !taken[j] {
            taken[i] = true;
            taken[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Probability that an interfering pair separated by `delta` at the final
/// coupler leaves by different ports.
pub fn cross_port_probability(delta: f64, tau_c: f64, interf: &InterferometerSpec) -> f64 {
    2.0 * interf.r2 * interf.t2 * (1.0 - interf.overlap_v * (-2.0 * delta.abs() / tau_c).exp())
}

/// Assigns output detectors and applies timing jitter.
///
/// Every photon leaves towards D1 with probability T2. In parallel mode,
/// paired opposite-arm photons instead draw a joint outcome whose
/// cross-port probability is [`cross_port_probability`]; the same-port
/// remainder is split so that each photon keeps its (T2, R2) marginal.
/// The returned events are sorted by time.
pub fn interfere_and_detect<R: Rng>(
    records: &[PhotonRecord],
    interf: &InterferometerSpec,
    tau_c: f64,
    per_detector_jitter: f64,
    polarization: Polarization,
    outcome_rng: &mut R,
    jitter_rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    if records.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::usage("photon records must be time-ordered"));
    }
    if !(per_detector_jitter >= 0.0) {
        return Err(Error::usage(format!("jitter must be >= 0, got {per_detector_jitter}")));
    }
    let (t2, r2) = (interf.t2, interf.r2);
    let mut partner: Vec<Option<usize>> = vec![None; records.len()];
    if polarization == Polarization::Parallel && interf.overlap_v > 0.0 {
        for (i, j) in pair_opposite_arms(records, INTERFERENCE_CUTOFF_TAU_C * tau_c) {
            partner[i] = Some(j);
        }
    }
    let mut detectors: Vec<Option<Detector>> = vec![None; records.len()];
    for i in 0..records.len() {
        if detectors[i].is_some() {
            continue;
        }
        let u: f64 = outcome_rng.random();
        match partner[i] {
            Some(j) => {
                let x = interf.overlap_v
                    * (-2.0 * (records[j].time - records[i].time).abs() / tau_c).exp();
                let split = r2 * t2 * (1.0 - x);
                let both_d1 = t2 * t2 + r2 * t2 * x;
                let (a, b) = if u < split {
                    (Detector::D1, Detector::D2)
                } else if u < 2.0 * split {
                    (Detector::D2, Detector::D1)
                } else if u < 2.0 * split + both_d1 {
                    (Detector::D1, Detector::D1)
                } else {
                    (Detector::D2, Detector::D2)
                };
                detectors[i] = Some(a);
                detectors[j] = Some(b);
            }
            None => {
                detectors[i] = Some(if u < t2 { Detector::D1 } else { Detector::D2 });
            }
        }
    }
    let normal = if per_detector_jitter > 0.0 {
        Some(Normal::new(0.0, per_detector_jitter).map_err(|e| Error::usage(e.to_string()))?)
    } else {
        None
    };
    let mut events: Vec<DetectionEvent> = records
        .iter()
        .zip(detectors)
        .map(|(r, d)| {
            let jitter = normal.as_ref().map_or(0.0, |n| n.sample(jitter_rng));
            DetectionEvent { detector: d.expect("every photon assigned"), time: r.time + jitter }
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.detector.cmp(&b.detector)));
    Ok(events)
}

/// D1→D2 coincidence histogram, bins centred on multiples of `bin_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width: f64,
    /// Centre of the outermost bin, ps.
    pub range: f64,
    pub counts: Vec<u64>,
    /// Expected accidental counts per bin, rate(D1)·rate(D2)·bin_width·duration.
    pub normalization: f64,
}

impl CoincidenceHistogram {
    pub fn half_bins(&self) -> i64 {
        (self.counts.len() as i64 - 1) / 2
    }

    pub fn bin_center(&self, index: usize) -> f64 {
        (index as i64 - self.half_bins()) as f64 * self.bin_width
    }

    pub fn bin_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(move |i| self.bin_center(i))
    }

    /// Counts divided by the accidental level, an estimator of g²(τ).
    pub fn normalized(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.normalization).collect()
    }
}

/// Histograms delays `t(D2) − t(D1)` over all ordered pairs with bin
/// centres in `−range..=range`.
pub fn histogram_coincidences(
    events: &[DetectionEvent],
    bin_width: f64,
    range: f64,
    duration: f64,
) -> Result<CoincidenceHistogram> {
    if events.is_empty() {
        return Err(Error::usage("no detection events to histogram"));
    }
    if !(bin_width > 0.0 && range > 0.0 && duration > 0.0) {
        return Err(Error::usage("bin width, range and duration must be > 0"));
    }
    let half = (range / bin_width).round() as i64;
    let nbins = (2 * half + 1) as usize;
    let edge = (half as f64 + 0.5) * bin_width;
    let mut d1: Vec<f64> = Vec::new();
    let mut d2: Vec<f64> = Vec::new();
    for e in events {
        match e.detector {
            Detector::D1 => d1.push(e.time),
            Detector::D2 => d2.push(e.time),
        }
    }
    d1.sort_by(f64::total_cmp);
    d2.sort_by(f64::total_cmp);
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::usage("both detectors need at least one event"));
    }
    const CHUNK: usize = 1 << 14;
    let counts = d1
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = vec![0u64; nbins];
            let mut lo = d2.partition_point(|&t| t < chunk[0] - edge);
            for &start in chunk {
                while lo < d2.len() && d2[lo] < start - edge {
                    lo += 1;
                }
                for &stop in &d2[lo..] {
                    let delta = stop - start;
                    if delta >= edge {
                        break;
                    }
                    let bin = (delta / bin_width).round() as i64 + half;
                    if (0..nbins as i64).contains(&bin) {
                        local[bin as usize] += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; nbins],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let normalization = d1.len() as f64 * d2.len() as f64 * bin_width / duration;
    Ok(CoincidenceHistogram { bin_width, range: half as f64 * bin_width, counts, normalization })
}

/// Per-bin agreement between a histogram and an analytic g² curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub max_abs_z: f64,
    pub mean_z2: f64,
    /// `(bin centre, expected normalised g², z)` per bin.
    pub residuals: Vec<(f64, f64, f64)>,
}

impl ComparisonReport {
    pub fn summary(&self) -> String {
        format!(
            "bins = {}\nmax_abs_z = {:.4}\nmean_z2 = {:.4}\n",
            self.residuals.len(),
            self.max_abs_z,
            self.mean_z2
        )
    }
}

/// Compares the histogram with `analytic`, averaged over each bin. The
/// analytic step must divide the bin width and the curve must span all bins.
pub fn mc_vs_analytic(hist: &CoincidenceHistogram, analytic: &SampledCurve) -> Result<ComparisonReport> {
    let ratio = hist.bin_width / analytic.step;
    let sub = ratio.round();
    if sub < 1.0 || (ratio - sub).abs() > 1e-9 * ratio {
        return Err(Error::usage(format!(
            "analytic step {} ps does not divide bin width {} ps",
            analytic.step, hist.bin_width
        )));
    }
    let sub = sub as usize;
    let mut residuals = Vec::with_capacity(hist.counts.len());
    for (i, &count) in hist.counts.iter().enumerate() {
        let center = hist.bin_center(i);
        let mut acc = 0.0;
        for s in 0..sub {
            let t = center + (s as f64 + 0.5 - sub as f64 / 2.0) * analytic.step;
            acc += interpolate(analytic, t).ok_or_else(|| {
                Error::usage(format!("analytic curve does not cover bin centred at {center} ps"))
            })?;
        }
        let g = acc / sub as f64;
        let expected = g * hist.normalization;
        let z = if expected > 0.0 {
            (count as f64 - expected) / expected.sqrt()
        } else if count == 0 {
            0.0
        } else {
            f64::INFINITY
        };
        residuals.push((center, g, z));
    }
    let max_abs_z = residuals.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let mean_z2 = residuals.iter().map(|r| r.2 * r.2).sum::<f64>() / residuals.len() as f64;
    Ok(ComparisonReport { max_abs_z, mean_z2, residuals })
}

fn interpolate(curve: &SampledCurve, t: f64) -> Option<f64> {
    let x = (t - curve.t_start) / curve.step;
    let last = (curve.values.len() - 1) as f64;
    if !(-1e-9..=last + 1e-9).contains(&x) {
        return None;
    }
    let x = x.clamp(0.0, last);
    let k = (x.floor() as usize).min(curve.values.len() - 2);
    let f = x - k as f64;
    Some(curve.values[k] * (1.0 - f) + curve.values[k + 1] * f)
}

/// Geometry and polarisation of a simulated measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMode {
    Hbt,
    MziParallel,
    MziOrthogonal,
}

impl SimulationMode {
    pub fn route(self) -> RouteMode {
        match self {
            SimulationMode::Hbt => RouteMode::Hbt,
            _ => RouteMode::Mzi,
        }
    }

    pub fn polarization(self) -> Polarization {
        match self {
            SimulationMode::MziParallel => Polarization::Parallel,
            _ => Polarization::Orthogonal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimulationMode::Hbt => "hbt",
            SimulationMode::MziParallel => "mzi-parallel",
            SimulationMode::MziOrthogonal => "mzi-orthogonal",
        }
    }
}

impl std::str::FromStr for SimulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hbt" => Ok(SimulationMode::Hbt),
            "mzi-parallel" => Ok(SimulationMode::MziParallel),
            "mzi-orthogonal" => Ok(SimulationMode::MziOrthogonal),
            other => Err(Error::usage(format!("unknown simulation mode {other:?}"))),
        }
    }
}

/// Full description of one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulation {
    pub stream: StreamParams,
    pub mode: SimulationMode,
    pub interferometer: InterferometerSpec,
    /// FWHM of the pair (cross-correlation) response; 0 disables jitter.
    pub pair_fwhm: f64,
    pub bin_width: f64,
    pub range: f64,
}

impl Simulation {
    /// Interferometer actually seen by the photons: HBT mode uses a single
    /// balanced splitter.
    pub fn effective_interferometer(&self) -> InterferometerSpec {
        match self.mode {
            SimulationMode::Hbt => InterferometerSpec {
                r1: 0.0,
                t1: 1.0,
                r2: 0.5,
                t2: 0.5,
                ..self.interferometer
            },
            _ => self.interferometer,
        }
    }

    pub fn source(&self) -> SourceSpec {
        SourceSpec { tau_r: self.stream.tau_r, tau_c: self.stream.tau_c, g2_zero: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.interferometer.validate()?;
        if !(self.pair_fwhm >= 0.0 && self.pair_fwhm.is_finite()) {
            return Err(Error::usage(format!("pair_fwhm must be >= 0, got {}", self.pair_fwhm)));
        }
        if !(self.bin_width > 0.0 && self.range >= self.bin_width) {
            return Err(Error::usage("histogram needs bin_width > 0 and range >= bin_width"));
        }
        if self.mode != SimulationMode::Hbt && self.stream.duration < 100.0 * self.interferometer.delta_tau2 {
            return Err(Error::usage("stream duration must exceed 100 arm delays"));
        }
        Ok(())
    }

    /// Emits, routes, interferes, detects and histograms.
    pub fn run(&self) -> Result<SimulationOutput> {
        self.validate()?;
        let interf = self.effective_interferometer();
        let emissions = simulate_emission_stream(&self.stream)?;
        let mut routing = stage_rng(self.stream.seed, STREAM_ROUTING);
        let records = route_photons(&emissions, &interf, self.mode.route(), &mut routing);
        let mut outcome = stage_rng(self.stream.seed, STREAM_DETECTION);
        let mut jitter = stage_rng(self.stream.seed, STREAM_JITTER);
        let events = interfere_and_detect(
            &records,
            &interf,
            self.stream.tau_c,
            response::per_detector_jitter(self.pair_fwhm),
            self.mode.polarization(),
            &mut outcome,
            &mut jitter,
        )?;
        let histogram = histogram_coincidences(&events, self.bin_width, self.range, self.stream.duration)?;
        Ok(SimulationOutput { emitted: emissions.len(), events, histogram })
    }

    /// Analytic g² for this mode convolved with the pair response, on the
    /// working grid, spanning the histogram plus the kernel support.
    pub fn analytic_curve(&self, step: f64) -> Result<SampledCurve> {
        let kernel = self.pair_kernel(step)?;
        let source = self.source();
        let interf = self.effective_interferometer();
        let span = self.range + self.bin_width + kernel.half_support() + step;
        let ideal = match self.mode {
            SimulationMode::Hbt => SampledCurve::from_fn(span, step, |t| g2_source(t, &source))?,
            SimulationMode::MziOrthogonal => SampledCurve::from_fn(span, step, |t| g2_perp(t, &source, &interf))?,
            SimulationMode::MziParallel => {
                SampledCurve::from_fn(span, step, |t| g2_parallel(t, &source, &interf))?
            }
        };
        response::convolve(&ideal, &kernel)
    }

    pub fn pair_kernel(&self, step: f64) -> Result<ResponseKernel> {
        if self.pair_fwhm == 0.0 {
            Ok(ResponseKernel::identity(step))
        } else {
            response::gaussian_kernel(self.pair_fwhm, step, response::DEFAULT_TRUNCATION_SIGMAS)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub emitted: usize,
    pub events: Vec<DetectionEvent>,
    pub histogram: CoincidenceHistogram,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(photons: f64, seed: u64) -> StreamParams {
        StreamParams { seed, ..StreamParams::default() }.with_photon_count(photons)
    }

    #[test]
    fn saturation_guard() {
        let p = StreamParams { pump_rate: 1.0 / 3000.0, ..stream(1e3, 1) };
        assert!(matches!(simulate_emission_stream(&p), Err(Error::Usage(_))));
    }

    #[test]
    fn emission_intervals_follow_renewal_mean() {
        let p = stream(2e5, 7);
        let times = simulate_emission_stream(&p).unwrap();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let sd = (1.0 / p.pump_rate.powi(2) + p.tau_r.powi(2)).sqrt();
        assert!((mean - p.mean_interval()).abs() < 3.0 * sd / n.sqrt(), "{mean}");
    }

    #[test]
    fn emission_is_reproducible_and_seed_dependent() {
        let a = simulate_emission_stream(&stream(5e4, 3)).unwrap();
        let b = simulate_emission_stream(&stream(5e4, 3)).unwrap();
        let c = simulate_emission_stream(&stream(5e4, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn routing_fractions_and_delay() {
        let emissions: Vec<f64> = (0..200_000).map(|k| k as f64 * 1e5).collect();
        let interf = InterferometerSpec::new(0.3, 0.5, 1e4, 1.0).unwrap();
        let mut rng = stage_rng(5, 9);
        let records = route_photons(&emissions, &interf, RouteMode::Mzi, &mut rng);
        let long = records.iter().filter(|r| r.arm == Arm::Long).count() as f64;
        let n = emissions.len() as f64;
        assert!((long / n - 0.3).abs() < 3.0 * (0.3 * 0.7 / n).sqrt());
        for r in records.iter().filter(|r| r.arm == Arm::Long) {
            let offset = (r.time - 1e4) % 1e5;
            assert_eq!(offset, 0.0);
        }
        assert!(records.windows(2).all(|w| w[0].time <= w[1].time));
        let none = InterferometerSpec::new(0.0, 0.5, 1e4, 1.0).unwrap();
        let records = route_photons(&emissions, &none, RouteMode::Mzi, &mut rng);
        assert!(records.iter().all(|r| r.arm == Arm::Short));
    }

    #[test]
    fn pairing_prefers_nearest_partner() {
        let rec = |arm, time| PhotonRecord { arm, time };
        let records = [
            rec(Arm::Short, 0.0),
            rec(Arm::Short, 1.0),
            rec(Arm::Long, 2.5),
            rec(Arm::Short, 2.6),
            rec(Arm::Long, 50.0),
        ];
        let pairs = pair_opposite_arms(&records, 10.0);
        assert_eq!(pairs, vec![(2, 3)]);
        let pairs = pair_opposite_arms(&records[..3], 10.0);
        assert_eq!(pairs, vec![(1, 2)]);
    }

    fn pair_statistics(delta: f64, polarization: Polarization, trials: usize) -> (f64, f64) {
        let interf = InterferometerSpec::default();
        let mut records = Vec::with_capacity(2 * trials);
        for k in 0..trials {
            let t = k as f64 * 1e6;
            records.push(PhotonRecord { arm: Arm::Short, time: t });
            records.push(PhotonRecord { arm: Arm::Long, time: t + delta });
        }
        let mut a = stage_rng(11, 1);
        let mut b = stage_rng(11, 2);
        let events = interfere_and_detect(&records, &interf, 325.0, 0.0, polarization, &mut a, &mut b).unwrap();
        let cross = events
            .chunks(2)
            .filter(|c| c[0].detector != c[1].detector)
            .count() as f64;
        let d1 = events.iter().filter(|e| e.detector == Detector::D1).count() as f64;
        (cross / trials as f64, d1 / events.len() as f64)
    }

    #[test]
    fn coalescence_probabilities() {
        let n = 100_000;
        let (cross, _) = pair_statistics(0.0, Polarization::Parallel, n);
        assert_eq!(cross, 0.0);
        let (cross, d1) = pair_statistics(0.0, Polarization::Orthogonal, n);
        assert!((cross - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        assert!((d1 - 0.5).abs() < 3.0 * (0.25 / (2 * n) as f64).sqrt());
        let expected = 0.5 * (1.0 - (-1.0f64).exp());
        assert!((expected - 0.316).abs() < 1e-3);
        let (cross, d1) = pair_statistics(325.0 / 2.0, Polarization::Parallel, n);
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((cross - expected).abs() < 3.0 * se, "{cross}");
        assert!((d1 - 0.5).abs() < 3.0 * (0.25 / (2 * n) as f64).sqrt());
    }

    #[test]
    fn unbalanced_second_coupler_keeps_singles() {
        let interf = InterferometerSpec::new(0.5, 0.3, 1e4, 1.0).unwrap();
        let n = 100_000;
        let mut records = Vec::new();
        for k in 0..n {
            let t = k as f64 * 1e6;
            records.push(PhotonRecord { arm: Arm::Short, time: t });
            records.push(PhotonRecord { arm: Arm::Long, time: t + 20.0 });
        }
        let mut a = stage_rng(2, 1);
        let mut b = stage_rng(2, 2);
        let ev = interfere_and_detect(&records, &interf, 325.0, 0.0, Polarization::Parallel, &mut a, &mut b).unwrap();
        let d1 = ev.iter().filter(|e| e.detector == Detector::D1).count() as f64 / ev.len() as f64;
        assert!((d1 - 0.7).abs() < 3.0 * (0.21 / ev.len() as f64).sqrt(), "{d1}");
    }

    #[test]
    fn unordered_records_rejected() {
        let records = [
            PhotonRecord { arm: Arm::Short, time: 5.0 },
            PhotonRecord { arm: Arm::Short, time: 1.0 },
        ];
        let mut a = stage_rng(1, 1);
        let mut b = stage_rng(1, 2);
        let r = interfere_and_detect(&records, &InterferometerSpec::default(), 325.0, 0.0, Polarization::Parallel, &mut a, &mut b);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn empty_events_rejected() {
        assert!(matches!(histogram_coincidences(&[], 100.0, 1000.0, 1e6), Err(Error::Usage(_))));
    }

    #[test]
    fn poissonian_stream_is_flat() {
        let mut rng = stage_rng(21, 0);
        let exp = Exp::new(1.0 / 20_000.0).unwrap();
        let mut t = 0.0;
        let mut events = Vec::new();
        let duration = 2e10;
        loop {
            t += exp.sample(&mut rng);
            if t >= duration {
                break;
            }
            let detector = if rng.random::<bool>() { Detector::D1 } else { Detector::D2 };
            events.push(DetectionEvent { detector, time: t });
        }
        let h = histogram_coincidences(&events, 200.0, 20_000.0, duration).unwrap();
        let flat = SampledCurve::from_fn(25_000.0, 5.0, |_| 1.0).unwrap();
        let report = mc_vs_analytic(&h, &flat).unwrap();
        assert!(report.max_abs_z < 4.0, "{}", report.max_abs_z);
        assert!((report.mean_z2 - 1.0).abs() < 0.3, "{}", report.mean_z2);
    }

    fn hbt(photons: f64, seed: u64, fwhm: f64) -> Simulation {
        Simulation {
            stream: stream(photons, seed),
            mode: SimulationMode::Hbt,
            interferometer: InterferometerSpec::default(),
            pair_fwhm: fwhm,
            bin_width: 100.0,
            range: 25_000.0,
        }
    }

    #[test]
    fn hbt_antibunching_and_plateau() {
        let out = hbt(4e5, 5, 0.0).run().unwrap();
        let g = out.histogram.normalized();
        let mid = g.len() / 2;
        assert!(g[mid] < 0.1, "{}", g[mid]);
        let far: Vec<f64> = g[..50].iter().chain(&g[g.len() - 50..]).copied().collect();
        let mean = far.iter().sum::<f64>() / far.len() as f64;
        let per_bin = 1.0 / out.histogram.normalization.sqrt();
        assert!((mean - 1.0).abs() < 3.0 * per_bin / (far.len() as f64).sqrt(), "{mean}");
    }

    #[test]
    fn spread_shrinks_with_duration() {
        let spread = |photons: f64| {
            let out = hbt(photons, 17, 428.0).run().unwrap();
            let g = out.histogram.normalized();
            let far: Vec<f64> = g[..100].iter().chain(&g[g.len() - 100..]).copied().collect();
            let m = far.iter().sum::<f64>() / far.len() as f64;
            (far.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (far.len() - 1) as f64).sqrt()
        };
        let ratio = spread(2e5) / spread(4e5);
        assert!((ratio - 2f64.sqrt()).abs() < 0.25, "{ratio}");
    }

    #[test]
    fn run_is_deterministic_across_pool_sizes() {
        let sim = Simulation { mode: SimulationMode::MziParallel, ..hbt(1.2e5, 99, 428.0) };
        let a = sim.run().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sim.run().unwrap());
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn jitter_free_parallel_run_suppresses_zero_delay() {
        let sim = Simulation { mode: SimulationMode::MziParallel, bin_width: 20.0, range: 2000.0, ..hbt(1e6, 8, 0.0) };
        let out = sim.run().unwrap();
        let g = out.histogram.normalized();
        assert!(g[g.len() / 2] < 0.05, "{}", g[g.len() / 2]);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let h = CoincidenceHistogram { bin_width: 100.0, range: 100.0, counts: vec![1, 2, 3], normalization: 2.0 };
        let c = SampledCurve::from_fn(1000.0, 30.0, |_| 1.0).unwrap();
        assert!(matches!(mc_vs_analytic(&h, &c), Err(Error::Usage(_))));
    }
}
