//! Command-line surface: JSON run configuration, CSV ingestion and the
//! five subcommands.
//!
//! Every command first builds all of its output files in memory and only
//! then touches the output directory, so a rejected configuration never
//! leaves partial files behind. Numbers are written with Rust's shortest
//! round-trip formatting, which makes output byte-deterministic.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::correlations::{g2_parallel, g2_perp, g2_source, v_hom_ideal, InterferometerSpec, SourceSpec};
use crate::dephasing::{coherence_sweep, coherence_time, TrapModelParams};
use crate::error::{Error, Result};
use crate::estimation::{self, FitResult, FitSpec, FreeParameter, HbtModel, MeasuredSeries};
use crate::montecarlo::{self, CoincidenceHistogram, Detector, Simulation, SimulationMode, StreamParams};
use crate::optimize::SimplexOptions;
use crate::response::{self, ResponseKernel, SampledCurve};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

// ---------------------------------------------------------------- config

/// Explicit value list, `{start, stop, step}` or `{start, stop, count}`.
/// Both range forms include `stop` when it falls on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueList {
    List(Vec<f64>),
    Stepped(SteppedRange),
    Counted(CountedRange),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppedRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountedRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl ValueList {
    pub fn stepped(start: f64, stop: f64, step: f64) -> Self {
        ValueList::Stepped(SteppedRange { start, stop, step })
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            ValueList::List(v) => Ok(v.clone()),
            ValueList::Stepped(r) => {
                if !(r.step > 0.0) || r.stop < r.start {
                    return Err(Error::usage(format!(
                        "range needs step > 0 and stop >= start, got {r:?}"
                    )));
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize + 1;
                Ok((0..n).map(|k| r.start + k as f64 * r.step).collect())
            }
            ValueList::Counted(r) => match r.count {
                0 => Ok(Vec::new()),
                1 => Ok(vec![r.start]),
                n => Ok((0..n)
                    .map(|k| r.start + (r.stop - r.start) * k as f64 / (n - 1) as f64)
                    .collect()),
            },
        }
    }
}

/// Trap-model block: an optional preset overlaid with explicit fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapBlock {
    pub preset: Option<String>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub tau3: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub beta: Option<f64>,
    pub i0: Option<f64>,
    pub sigma_s: Option<f64>,
    pub temperature: Option<f64>,
}

impl TrapBlock {
    pub fn params(&self) -> Result<TrapModelParams> {
        let mut p = match &self.preset {
            None => TrapModelParams::line_a(),
            Some(name) => TrapModelParams::preset(name)
                .ok_or_else(|| Error::usage(format!("unknown trap preset {name:?}")))?,
        };
        let fields = [
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
        for (name, v) in fields {
            if let Some(v) = v {
                p.set(name, v);
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceBlock {
    pub tau_r: f64,
    pub tau_c: f64,
    pub g2_zero: f64,
}

impl Default for SourceBlock {
    fn default() -> Self {
        let s = SourceSpec::default();
        SourceBlock { tau_r: s.tau_r, tau_c: s.tau_c, g2_zero: s.g2_zero }
    }
}

impl SourceBlock {
    pub fn spec(&self) -> Result<SourceSpec> {
        SourceSpec::new(self.tau_r, self.tau_c, self.g2_zero)
    }
}

/// Coupler transmissions default to `1 − R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferometerBlock {
    pub r1: f64,
    pub t1: Option<f64>,
    pub r2: f64,
    pub t2: Option<f64>,
    pub delta_tau2: f64,
    pub overlap_v: f64,
}

impl Default for InterferometerBlock {
    fn default() -> Self {
        let s = InterferometerSpec::default();
        InterferometerBlock { r1: s.r1, t1: None, r2: s.r2, t2: None, delta_tau2: s.delta_tau2, overlap_v: s.overlap_v }
    }
}

impl InterferometerBlock {
    pub fn spec(&self) -> Result<InterferometerSpec> {
        let s = InterferometerSpec {
            r1: self.r1,
            t1: self.t1.unwrap_or(1.0 - self.r1),
            r2: self.r2,
            t2: self.t2.unwrap_or(1.0 - self.r2),
            delta_tau2: self.delta_tau2,
            overlap_v: self.overlap_v,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Pair response: a Gaussian of FWHM `fwhm` (0 = ideal detectors), or a
/// tabulated `t_ps,weight` CSV when `response_csv` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorBlock {
    pub fwhm: f64,
    pub step: f64,
    pub truncation_sigmas: f64,
    pub response_csv: Option<PathBuf>,
}

impl Default for DetectorBlock {
    fn default() -> Self {
        DetectorBlock {
            fwhm: 428.0,
            step: response::DEFAULT_STEP,
            truncation_sigmas: response::DEFAULT_TRUNCATION_SIGMAS,
            response_csv: None,
        }
    }
}

impl DetectorBlock {
    pub fn kernel(&self) -> Result<ResponseKernel> {
        if !(self.step > 0.0) {
            return Err(Error::usage(format!("detector step must be > 0, got {}", self.step)));
        }
        if let Some(path) = &self.response_csv {
            let samples = read_response_csv(path)?;
            return response::load_tabulated_response(&samples, self.step);
        }
        if self.fwhm == 0.0 {
            return Ok(ResponseKernel::identity(self.step));
        }
        response::gaussian_kernel(self.fwhm, self.step, self.truncation_sigmas)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamBlock {
    pub mode: SimulationMode,
    pub pump_rate: f64,
    /// Expected number of emitted photons; ignored when `duration` is set.
    pub photons: f64,
    pub duration: Option<f64>,
    pub bin_width: f64,
    pub range: f64,
    /// Also write every detection as `events.csv`.
    pub dump_events: bool,
}

impl Default for StreamBlock {
    fn default() -> Self {
        StreamBlock {
            mode: SimulationMode::MziOrthogonal,
            pump_rate: montecarlo::DEFAULT_PUMP_RATE,
            photons: 1.0e6,
            duration: None,
            bin_width: 100.0,
            range: response::DEFAULT_RANGE,
            dump_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Coherence,
    VisibilityDecay,
    HbtLifetime,
}

impl FitKind {
    pub fn name(self) -> &'static str {
        match self {
            FitKind::Coherence => "coherence",
            FitKind::VisibilityDecay => "visibility-decay",
            FitKind::HbtLifetime => "hbt-lifetime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitBlock {
    pub kind: Option<FitKind>,
    /// Overrides the default free-parameter list of the chosen kind.
    pub free: Option<Vec<FreeParameter>>,
    pub fixed: BTreeMap<String, f64>,
    pub max_evaluations: usize,
    pub restarts: usize,
}

impl Default for FitBlock {
    fn default() -> Self {
        let o = SimplexOptions::default();
        FitBlock {
            kind: None,
            free: None,
            fixed: BTreeMap::new(),
            max_evaluations: o.max_evaluations,
            restarts: o.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    /// Injection currents, µA.
    pub currents: ValueList,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock { currents: ValueList::stepped(10.0, 500.0, 10.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateBlock {
    /// Half-width of the emitted trace, ps.
    pub range: f64,
}

impl Default for CorrelateBlock {
    fn default() -> Self {
        CorrelateBlock { range: response::DEFAULT_RANGE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapBlock {
    /// Pair-response FWHM values (rows), ps.
    pub delta_t: ValueList,
    /// Coherence times (columns), ps.
    pub tau_c: ValueList,
}

impl Default for MapBlock {
    fn default() -> Self {
        MapBlock { delta_t: ValueList::stepped(50.0, 1000.0, 50.0), tau_c: ValueList::stepped(50.0, 1000.0, 50.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("out") }
    }
}

/// The complete run configuration. Every block is optional; missing blocks
/// and fields take the `fig3-defaults` / `line-A` values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Named base document the rest of the configuration is layered on.
    pub preset: Option<String>,
    pub seed: u64,
    pub trap: TrapBlock,
    pub source: SourceBlock,
    pub interferometer: InterferometerBlock,
    pub detector: DetectorBlock,
    pub stream: StreamBlock,
    pub fit: FitBlock,
    pub sweep: SweepBlock,
    pub correlate: CorrelateBlock,
    pub map: MapBlock,
    pub output: OutputBlock,
}

pub const PRESET_NAMES: [&str; 3] = ["line-A", "line-B", "fig3-defaults"];

/// Base document behind a preset name.
pub fn preset_document(name: &str) -> Result<Value> {
    match name.to_ascii_lowercase().as_str() {
        "line-a" => Ok(json!({ "trap": { "preset": "line-A" } })),
        "line-b" => Ok(json!({ "trap": { "preset": "line-B" } })),
        "fig3-defaults" => Ok(json!({
            "source": { "tau_r": 800.0, "tau_c": 325.0, "g2_zero": 0.0 },
            "interferometer": { "r1": 0.5, "r2": 0.5, "delta_tau2": 10000.0, "overlap_v": 1.0 },
            "detector": { "fwhm": 428.0 }
        })),
        _ => Err(Error::usage(format!(
            "unknown preset {name:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `dotted.key=value` override. The value is read as JSON when
/// it parses, otherwise as a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::usage(format!("--set expects key=value, got {assignment:?}")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::usage(format!("malformed key {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::usage(format!("cannot descend into non-object at {key:?}")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::usage(format!("cannot set {path:?} inside a non-object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds a configuration from a JSON document plus overrides. The
    /// preset (if any) is resolved after overrides so `--set preset=…`
    /// works.
    pub fn from_document(mut doc: Value, overrides: &[String]) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::usage("configuration must be a JSON object"));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(name) = doc.get("preset").and_then(Value::as_str) {
            let mut base = preset_document(name)?;
            merge(&mut base, doc);
            doc = base;
        }
        let config: RunConfig = serde_json::from_value(doc).map_err(|e| Error::usage(format!("configuration: {e}")))?;
        Ok(config)
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line() as u64, message: format!("configuration: {e}") })?;
        Self::from_document(doc, overrides)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => Self::from_json_str(&fs::read_to_string(p)?, overrides),
            None => Self::from_document(Value::Object(Map::new()), overrides),
        }
    }

    fn simplex(&self) -> SimplexOptions {
        SimplexOptions {
            max_evaluations: self.fit.max_evaluations,
            restarts: self.fit.restarts.max(1),
            seed: self.seed,
            ..SimplexOptions::default()
        }
    }

    /// The Monte Carlo run described by the stream, source, interferometer
    /// and detector blocks.
    pub fn simulation(&self) -> Result<Simulation> {
        let source = self.source.spec()?;
        let s = &self.stream;
        let mut stream = StreamParams {
            pump_rate: s.pump_rate,
            tau_r: source.tau_r,
            tau_c: source.tau_c,
            duration: 0.0,
            seed: self.seed,
        };
        stream = match s.duration {
            Some(d) => StreamParams { duration: d, ..stream },
            None => stream.with_photon_count(s.photons),
        };
        let sim = Simulation {
            stream,
            mode: s.mode,
            interferometer: self.interferometer.spec()?,
            pair_fwhm: self.detector.fwhm,
            bin_width: s.bin_width,
            range: s.range,
        };
        sim.validate()?;
        if source.g2_zero != 0.0 {
            return Err(Error::usage("the simulator models a perfect single-photon source; set source.g2_zero = 0"));
        }
        Ok(sim)
    }
}

// ------------------------------------------------------------------ csv

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// A parsed numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// 1-based file line of each row.
    pub lines: Vec<u64>,
}

impl NumericTable {
    pub fn column_index(&self, names: &[&str]) -> Option<usize> {
        self.headers.iter().position(|h| names.contains(&h.as_str()))
    }

    pub fn column(&self, names: &[&str]) -> Result<Vec<f64>> {
        let i = self.column_index(names).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {:?}; header is {:?}", names[0], self.headers),
        })?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn optional_column(&self, names: &[&str]) -> Option<Vec<f64>> {
        self.column_index(names).map(|i| self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a headed CSV of numbers. Blank lines and lines starting with `#`
/// are skipped; any malformed field is reported with its 1-based line.
pub fn read_numeric_csv<R: Read>(mut reader: R) -> Result<NumericTable> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // record positions point at the start of any blank or comment lines
    // preceding the record, so step over those to find the real line
    let line_at = |byte: u64| {
        let start = (byte as usize).min(text.len());
        let mut line = text.as_bytes()[..start].iter().filter(|&&b| b == b'\n').count() as u64 + 1;
        for l in text[start..].lines() {
            let l = l.trim();
            if !(l.is_empty() || l.starts_with('#')) {
                break;
            }
            line += 1;
        }
        line
    };
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| line_at(p.byte()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: line_of(&e).max(1), message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Parse { line: 1, message: "missing header row".into() });
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse { line: line_of(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| line_at(p.byte()));
        let row = record
            .iter()
            .enumerate()
            .map(|(i, field)| {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {:?}: {field:?} is not a finite number", headers[i]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        lines.push(line);
    }
    Ok(NumericTable { headers, rows, lines })
}

pub fn read_numeric_csv_file(path: &Path) -> Result<NumericTable> {
    read_numeric_csv(fs::File::open(path)?)
}

/// Tabulated detector response with columns `t_ps,weight`.
pub fn read_response_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let table = read_numeric_csv_file(path)?;
    let t = table.column(&["t_ps", "tau_ps"])?;
    let w = table.column(&["weight"])?;
    Ok(t.into_iter().zip(w).collect())
}

/// Rebuilds a histogram from `tau_ps,counts,normalized_g2` rows, as written
/// by the `simulate` command.
pub fn histogram_from_table(table: &NumericTable) -> Result<CoincidenceHistogram> {
    let tau = table.column(&["tau_ps"])?;
    let counts = table.column(&["counts"])?;
    let normalized = table.column(&["normalized_g2", "normalized"])?;
    if tau.len() < 3 || tau.len() % 2 == 0 {
        return Err(Error::usage(format!(
            "histogram needs an odd number (>= 3) of bins centred on zero, got {}",
            tau.len()
        )));
    }
    let width = tau[1] - tau[0];
    let half = (tau.len() / 2) as f64;
    for (k, &t) in tau.iter().enumerate() {
        if !(width > 0.0) || (t - (k as f64 - half) * width).abs() > 1e-6 * width {
            return Err(Error::Parse { line: table.lines[k], message: "bins must be uniform and centred on zero".into() });
        }
    }
    let mut int_counts = Vec::with_capacity(counts.len());
    for (k, &c) in counts.iter().enumerate() {
        if c < 0.0 || c.fract() != 0.0 {
            return Err(Error::Parse { line: table.lines[k], message: format!("counts must be non-negative integers, got {c}") });
        }
        int_counts.push(c as u64);
    }
    let total_norm: f64 = normalized.iter().sum();
    let total: f64 = counts.iter().sum();
    if !(total_norm > 0.0 && total > 0.0) {
        return Err(Error::usage("histogram is empty"));
    }
    Ok(CoincidenceHistogram {
        bin_width: width,
        range: half * width,
        counts: int_counts,
        normalization: total / total_norm,
    })
}

// ------------------------------------------------------------- commands

/// Files produced by a command, plus its exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable summary for standard output.
    pub message: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(files: Vec<(String, Vec<u8>)>, message: String) -> Self {
        Outcome { files, message, exit_code: EXIT_OK }
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn cmd_coherence_sweep(config: &RunConfig) -> Result<Outcome> {
    let params = config.trap.params()?;
    let currents = config.sweep.currents.values()?;
    let points = coherence_sweep(&params, &currents)?;
    let rows = points.iter().map(|p| {
        vec![
            fmt(p.current),
            fmt(p.tau_up),
            fmt(p.tau_down),
            fmt(p.tau_f),
            fmt(p.sigma),
            fmt(p.tau_c),
            fmt(p.narrowing_ratio),
        ]
    });
    let csv = csv_bytes(
        &["current_uA", "tau_up_ps", "tau_down_ps", "tau_f_ps", "sigma_ueV", "tau_c_ps", "narrowing_ratio"],
        rows,
    )?;
    Ok(Outcome::ok(
        vec![("coherence_sweep.csv".into(), csv)],
        format!("{} currents, tau_c {:.1}..{:.1} ps", points.len(), points[0].tau_c, points[points.len() - 1].tau_c),
    ))
}

#[derive(Debug, Serialize)]
struct CorrelateReport {
    v_hom_ideal: Option<f64>,
    v_hom_measured: f64,
    kernel_fwhm_ps: Option<f64>,
    grid_step_ps: f64,
    separation_warning: bool,
}

pub fn cmd_correlate(config: &RunConfig) -> Result<Outcome> {
    let source = config.source.spec()?;
    let interf = config.interferometer.spec()?;
    let kernel = config.detector.kernel()?;
    let range = config.correlate.range;
    if !(range > 0.0) {
        return Err(Error::usage(format!("correlate.range must be > 0, got {range}")));
    }
    let step = kernel.grid_step;
    let source_curve = SampledCurve::from_fn(range, step, |t| g2_source(t, &source))?;
    let perp = SampledCurve::from_fn(range, step, |t| g2_perp(t, &source, &interf))?;
    let parallel = SampledCurve::from_fn(range, step, |t| g2_parallel(t, &source, &interf))?;
    let perp_conv = response::convolve(&perp, &kernel)?;
    let parallel_conv = response::convolve(&parallel, &kernel)?;
    let measured = response::v_hom_measured(&source, &interf, &kernel)?;
    let rows = (0..perp.len()).map(|i| {
        let p = perp.values[i];
        let v = v_hom_ideal(perp.time(i), &source, &interf).unwrap_or(f64::NAN);
        vec![
            fmt(perp.time(i)),
            fmt(source_curve.values[i]),
            fmt(p),
            fmt(parallel.values[i]),
            fmt(perp_conv.values[i]),
            fmt(parallel_conv.values[i]),
            fmt(v),
        ]
    });
    let csv = csv_bytes(
        &["tau_ps", "g2_source", "g2_perp", "g2_parallel", "g2_perp_conv", "g2_parallel_conv", "v_hom"],
        rows,
    )?;
    let report = CorrelateReport {
        v_hom_ideal: v_hom_ideal(0.0, &source, &interf).ok(),
        v_hom_measured: measured,
        kernel_fwhm_ps: kernel.fwhm,
        grid_step_ps: step,
        separation_warning: interf.separation_warning(&source),
    };
    let mut message = format!("v_hom_measured = {measured:.4}");
    if report.separation_warning {
        message.push_str("\nwarning: delta_tau2 < 10 tau_c, delayed-path dips overlap the interference window");
    }
    Ok(Outcome::ok(
        vec![("correlate.csv".into(), csv), ("correlate_report.json".into(), json_bytes(&report)?)],
        message,
    ))
}

pub fn cmd_visibility_map(config: &RunConfig) -> Result<Outcome> {
    let source = config.source.spec()?;
    let interf = config.interferometer.spec()?;
    let delta_t = config.map.delta_t.values()?;
    let tau_c = config.map.tau_c.values()?;
    let map = response::visibility_map(&delta_t, &tau_c, &source, &interf)?;
    let mut header = vec!["delta_t_ps/tau_c_ps".to_string()];
    header.extend(tau_c.iter().map(|&t| fmt(t)));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = delta_t.iter().zip(&map).map(|(&d, row)| {
        let mut r = vec![fmt(d)];
        r.extend(row.iter().map(|&v| fmt(v)));
        r
    });
    let csv = csv_bytes(&header_refs, rows)?;
    Ok(Outcome::ok(
        vec![("visibility_map.csv".into(), csv)],
        format!("{} x {} visibility map", delta_t.len(), tau_c.len()),
    ))
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    mode: &'static str,
    seed: u64,
    duration_ps: f64,
    emitted: usize,
    detected: usize,
    bin_width_ps: f64,
    normalization: f64,
    bins: usize,
    max_abs_z: f64,
    mean_z2: f64,
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    let sim = config.simulation()?;
    let analytic_step = config.detector.step;
    let analytic = sim.analytic_curve(analytic_step)?;
    let output = sim.run()?;
    let hist = &output.histogram;
    let comparison = montecarlo::mc_vs_analytic(hist, &analytic)?;
    let normalized = hist.normalized();
    let histogram_csv = csv_bytes(
        &["tau_ps", "counts", "normalized_g2"],
        (0..hist.counts.len()).map(|i| vec![fmt(hist.bin_center(i)), hist.counts[i].to_string(), fmt(normalized[i])]),
    )?;
    let comparison_csv = csv_bytes(
        &["tau_ps", "normalized_g2", "analytic", "z"],
        comparison
            .residuals
            .iter()
            .zip(&normalized)
            .map(|(&(c, g, z), &n)| vec![fmt(c), fmt(n), fmt(g), fmt(z)]),
    )?;
    let report = SimulateReport {
        mode: sim.mode.name(),
        seed: sim.stream.seed,
        duration_ps: sim.stream.duration,
        emitted: output.emitted,
        detected: output.events.len(),
        bin_width_ps: hist.bin_width,
        normalization: hist.normalization,
        bins: hist.counts.len(),
        max_abs_z: comparison.max_abs_z,
        mean_z2: comparison.mean_z2,
    };
    let mut files = vec![
        ("histogram.csv".into(), histogram_csv),
        ("comparison.csv".into(), comparison_csv),
        ("simulate_report.json".into(), json_bytes(&report)?),
    ];
    if config.stream.dump_events {
        let rows = output.events.iter().map(|e| {
            let d = match e.detector {
                Detector::D1 => "D1",
                Detector::D2 => "D2",
            };
            vec![d.to_string(), fmt(e.time)]
        });
        files.push(("events.csv".into(), csv_bytes(&["detector", "time_ps"], rows)?));
    }
    Ok(Outcome::ok(
        files,
        format!("{} photons emitted\n{}", output.emitted, comparison.summary().trim_end()),
    ))
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    kind: &'static str,
    #[serde(flatten)]
    result: &'a FitResult,
}

/// Fit spec for a kind: the configured free list (or the kind's default)
/// with every other known parameter fixed.
fn fit_spec(config: &RunConfig, kind: FitKind) -> Result<FitSpec> {
    let base = match kind {
        FitKind::Coherence => FitSpec::coherence_default(),
        FitKind::HbtLifetime => FitSpec::hbt_default(),
        FitKind::VisibilityDecay => return Ok(FitSpec::default()),
    };
    let free = config.fit.free.clone().unwrap_or(base.free);
    let mut fixed = BTreeMap::new();
    if kind == FitKind::Coherence {
        let trap = config.trap.params()?;
        for name in TrapModelParams::PARAMETER_NAMES {
            if !free.iter().any(|p| p.name == name) {
                fixed.insert(name.to_string(), trap.get(name).expect("known parameter"));
            }
        }
    } else if !free.iter().any(|p| p.name == "g2_zero") {
        fixed.insert("g2_zero".to_string(), config.source.g2_zero);
    }
    for (k, v) in &config.fit.fixed {
        fixed.insert(k.clone(), *v);
    }
    Ok(FitSpec { free, fixed })
}

fn weighted_residual(y: f64, m: f64, sigma: Option<f64>) -> f64 {
    (y - m) / sigma.unwrap_or(1.0)
}

pub fn cmd_fit(config: &RunConfig, data: &Path) -> Result<Outcome> {
    let kind = config
        .fit
        .kind
        .ok_or_else(|| Error::usage("fit.kind must be one of coherence, visibility-decay, hbt-lifetime"))?;
    let table = read_numeric_csv_file(data)?;
    let spec = fit_spec(config, kind)?;
    let options = config.simplex();
    let (result, header, rows): (FitResult, [&str; 4], Vec<[f64; 4]>) = match kind {
        FitKind::Coherence => {
            let series = MeasuredSeries::new(
                table.column(&["current_uA"])?,
                table.column(&["tau_c_ps"])?,
                table.optional_column(&["sigma_ps", "sigma"]),
            )?;
            let result = estimation::fit_coherence_curve_with(&series, &spec, &options)?;
            let mut params = TrapModelParams::line_a();
            for (k, v) in &result.values {
                params.set(k, *v);
            }
            let mut rows = Vec::new();
            for i in 0..series.len() {
                let m = coherence_time(&params, series.x[i])?.tau_c;
                let s = series.sigma.as_ref().map(|s| s[i]);
                rows.push([series.x[i], series.y[i], m, weighted_residual(series.y[i], m, s)]);
            }
            (result, ["current_uA", "tau_c_ps", "model_tau_c_ps", "residual"], rows)
        }
        FitKind::VisibilityDecay => {
            let series = MeasuredSeries::new(
                table.column(&["delay_ps"])?,
                table.column(&["visibility"])?,
                table.optional_column(&["sigma"]),
            )?;
            let result = estimation::fit_visibility_decay(&series)?;
            let tau_c = result.value("tau_c");
            let rows = (0..series.len())
                .map(|i| {
                    let m = crate::dephasing::michelson_visibility(series.x[i], tau_c);
                    let s = series.sigma.as_ref().map(|s| s[i]);
                    [series.x[i], series.y[i], m, weighted_residual(series.y[i], m, s)]
                })
                .collect();
            (result, ["delay_ps", "visibility", "model_visibility", "residual"], rows)
        }
        FitKind::HbtLifetime => {
            let hist = histogram_from_table(&table)?;
            let kernel = config.detector.kernel()?;
            let result = estimation::fit_hbt_lifetime_with(&hist, &kernel, &spec, &options)?;
            let model = HbtModel::new(&kernel);
            let (tau_r, g0) = (result.value("tau_r"), result.value("g2_zero"));
            let normalized = hist.normalized();
            let centers: Vec<f64> = hist.bin_centers().collect();
            let curve = model.bin_averages(&centers, hist.bin_width, tau_r, g0);
            let rows = (0..hist.counts.len())
                .map(|i| {
                    let m = curve[i];
                    let s = (hist.counts[i].max(1) as f64).sqrt() / hist.normalization;
                    [hist.bin_center(i), normalized[i], m, weighted_residual(normalized[i], m, Some(s))]
                })
                .collect();
            (result, ["tau_ps", "normalized", "model", "residual"], rows)
        }
    };
    let residuals = csv_bytes(&header, rows.iter().map(|r| r.iter().map(|&v| fmt(v)).collect()))?;
    let report = json_bytes(&FitReport { kind: kind.name(), result: &result })?;
    let exit_code = if result.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    let mut message = result.summary();
    message.truncate(message.trim_end().len());
    Ok(Outcome {
        files: vec![("fit_report.json".into(), report), ("fit_residuals.csv".into(), residuals)],
        message,
        exit_code,
    })
}

// ------------------------------------------------------------------ clap

#[derive(Debug, Parser)]
#[command(name = "qd-hom", version, about = "Dephasing, HOM correlation and Monte Carlo toolkit")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides one configuration leaf, e.g. `--set source.tau_c=400`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coherence time versus injection current.
    CoherenceSweep,
    /// Ideal and convolved correlation traces.
    Correlate,
    /// HOM visibility over detector resolution and coherence time.
    VisibilityMap,
    /// Monte Carlo coincidence histogram with an analytic comparison.
    Simulate,
    /// Fit a model to a CSV data set.
    Fit {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Overrides fit.kind.
        #[arg(long, value_enum)]
        kind: Option<FitKind>,
    },
}

impl Cli {
    /// Resolved configuration with `--seed` and `--out` folded in.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Command::Fit { kind: Some(kind), .. } = &self.command {
            config.fit.kind = Some(*kind);
        }
        Ok(config)
    }

    pub fn execute(&self) -> Result<Outcome> {
        let config = self.run_config()?;
        let outcome = match &self.command {
            Command::CoherenceSweep => cmd_coherence_sweep(&config)?,
            Command::Correlate => cmd_correlate(&config)?,
            Command::VisibilityMap => cmd_visibility_map(&config)?,
            Command::Simulate => cmd_simulate(&config)?,
            Command::Fit { data, .. } => cmd_fit(&config, data)?,
        };
        outcome.write_to(&config.output.dir)?;
        Ok(outcome)
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(outcome) => {
            println!("{}", outcome.message);
            if outcome.exit_code == EXIT_NOT_CONVERGED {
                eprintln!("fit did not converge; results written anyway");
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("qd-hom: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(ValueList::stepped(10.0, 500.0, 10.0).values().unwrap().len(), 50);
        assert_eq!(ValueList::stepped(0.0, 1.0, 0.3).values().unwrap(), vec![0.0, 0.3, 0.6, 0.8999999999999999]);
        let c = ValueList::Counted(CountedRange { start: 1.0, stop: 2.0, count: 3 });
        assert_eq!(c.values().unwrap(), vec![1.0, 1.5, 2.0]);
        assert!(ValueList::stepped(1.0, 0.0, 1.0).values().is_err());
        let parsed: ValueList = serde_json::from_str(r#"{"start": 1, "stop": 3, "step": 1}"#).unwrap();
        assert_eq!(parsed.values().unwrap(), vec![1.0, 2.0, 3.0]);
        let parsed: ValueList = serde_json::from_str("[5, 7]").unwrap();
        assert_eq!(parsed.values().unwrap(), vec![5.0, 7.0]);
    }

    #[test]
    fn overrides_create_and_replace() {
        let mut doc = json!({ "source": { "tau_c": 325.0 } });
        apply_override(&mut doc, "source.tau_c=400").unwrap();
        apply_override(&mut doc, "trap.preset=line-B").unwrap();
        assert_eq!(doc["source"]["tau_c"], json!(400));
        assert_eq!(doc["trap"]["preset"], json!("line-B"));
        assert!(apply_override(&mut doc, "source.tau_c").is_err());
        assert!(apply_override(&mut doc, "source..x=1").is_err());
        assert!(apply_override(&mut doc, "source.tau_c.deep=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json_str(r#"{"sorce": {}}"#, &[]), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_json_str(r#"{"source": {"tau": 1}}"#, &[]), Err(Error::Usage(_))));
        assert!(RunConfig::from_json_str("{}", &["trap.bogus=1".into()]).is_err());
    }

    #[test]
    fn config_syntax_error_has_line() {
        match RunConfig::from_json_str("{\n  \"seed\": 1,\n  oops\n}", &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn presets_layer_under_explicit_values() {
        let c = RunConfig::from_json_str(r#"{"preset": "line-B", "trap": {"tau3": 900}}"#, &[]).unwrap();
        let p = c.trap.params().unwrap();
        assert_eq!(p.tau3, 900.0);
        assert_eq!(p.i0, TrapModelParams::line_b().i0);
        let c = RunConfig::from_json_str("{}", &["preset=fig3-defaults".into()]).unwrap();
        assert_eq!(c.source.spec().unwrap(), SourceSpec::default());
        assert_eq!(c.interferometer.spec().unwrap(), InterferometerSpec::default());
        assert!(RunConfig::from_json_str(r#"{"preset": "nope"}"#, &[]).is_err());
    }

    #[test]
    fn numeric_csv_reports_bad_line() {
        let text = "a,b\n1,2\n\n# note\n3,x\n";
        match read_numeric_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match read_numeric_csv("a,b\n1,2\n3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let t = read_numeric_csv("a, b\n1, 2\n".as_bytes()).unwrap();
        assert_eq!(t.column(&["b"]).unwrap(), vec![2.0]);
    }

    #[test]
    fn histogram_table_round_trip() {
        let hist = CoincidenceHistogram { bin_width: 100.0, range: 200.0, counts: vec![4, 3, 0, 5, 4], normalization: 4.0 };
        let n = hist.normalized();
        let rows = (0..5).map(|i| vec![fmt(hist.bin_center(i)), hist.counts[i].to_string(), fmt(n[i])]);
        let bytes = csv_bytes(&["tau_ps", "counts", "normalized_g2"], rows).unwrap();
        let back = histogram_from_table(&read_numeric_csv(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, hist);
    }
}
