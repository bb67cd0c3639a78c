//! Scenario files.
//!
//! A scenario is a TOML document with the tables `emitter_1`, `emitter_2`,
//! `scenario` and the optional `diffusion`, `simulation` and `output`.
//! Every physical quantity is a string carrying its unit:
//!
//! ```toml
//! [emitter_1]
//! lifetime = "9.5 ns"          # or linewidth = "17 MHz" (Lorentzian FWHM)
//! signal_rate = "9e5 /s"
//! background_rate = "1e5 /s"
//! stark_voltage = "67 V"       # or detuning = "200 MHz"
//!
//! [emitter_2]
//! lifetime = "9.5 ns"
//! signal_rate = "9e5 /s"
//! background_rate = "1e5 /s"
//!
//! [scenario]
//! eta = 0.5
//! irf_fwhm = "800 ps"
//!
//! [diffusion]                  # acts on emitter 1
//! bandwidth = "1 MHz"
//! distribution_fwhm = "2 GHz"  # or rms_detuning, or line_fwhm
//!
//! [simulation]
//! duration = "1 s"
//! seed = 42
//! bin_width = "100 ps"
//! half_range = "60 ns"
//! mode = "multi_stop"          # or "start_stop"
//! deadtime = "0 ns"
//!
//! [output]
//! histogram = "trace.csv"
//! timestamps = "events.phts"
//! ```
//!
//! When only a linewidth is given the emitter is taken as lifetime limited;
//! when only a lifetime is given its linewidth is the natural one. Unknown
//! keys are rejected. Errors name the file, line and key.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::{Spanned, Value};

use crate::analytic::resolve_diffusion;
use crate::error::{Error, Result};
use crate::model::{stark_detuning, DiffusionSpec, EmitterSpec, InterferenceScenario, IrfSpec};
use crate::stochastic::{CorrelatorMode, McConfig};

/// Physical dimension of a quantity in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Time,
    Frequency,
    Rate,
    Voltage,
}

impl Dimension {
    fn factor(self, unit: &str) -> Option<f64> {
        let f = match (self, unit) {
            (Dimension::Time, "s") => 1.0,
            (Dimension::Time, "ms") => 1e-3,
            (Dimension::Time, "us" | "µs" | "μs") => 1e-6,
            (Dimension::Time, "ns") => 1e-9,
            (Dimension::Time, "ps") => 1e-12,
            (Dimension::Time, "fs") => 1e-15,
            (Dimension::Frequency, "Hz") => 1.0,
            (Dimension::Frequency, "kHz") => 1e3,
            (Dimension::Frequency, "MHz") => 1e6,
            (Dimension::Frequency, "GHz") => 1e9,
            (Dimension::Frequency, "THz") => 1e12,
            (Dimension::Rate, "/s" | "1/s" | "s^-1" | "cps" | "Hz") => 1.0,
            (Dimension::Rate, "kcps" | "kHz") => 1e3,
            (Dimension::Rate, "Mcps" | "MHz") => 1e6,
            (Dimension::Voltage, "V") => 1.0,
            (Dimension::Voltage, "mV") => 1e-3,
            (Dimension::Voltage, "kV") => 1e3,
            _ => return None,
        };
        Some(f)
    }

    fn unit(self) -> &'static str {
        match self {
            Dimension::Time => "s",
            Dimension::Frequency => "Hz",
            Dimension::Rate => "/s",
            Dimension::Voltage => "V",
        }
    }

    fn example(self) -> &'static str {
        match self {
            Dimension::Time => "\"9.5 ns\"",
            Dimension::Frequency => "\"17 MHz\"",
            Dimension::Rate => "\"2e5 /s\"",
            Dimension::Voltage => "\"67 V\"",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dimension::Time => "time",
            Dimension::Frequency => "frequency",
            Dimension::Rate => "rate",
            Dimension::Voltage => "voltage",
        }
    }
}

/// Parse `"<number> <unit>"` (the space is optional) into SI units of
/// `dim`: seconds, Hz, counts per second or volts.
pub fn parse_quantity(text: &str, dim: Dimension) -> std::result::Result<f64, String> {
    let text = text.trim();
    let (number, unit) = match text.split_once(char::is_whitespace) {
        Some((n, u)) => (n.trim(), u.trim()),
        None => (1..text.len())
            .rev()
            .filter(|&i| text.is_char_boundary(i))
            .find(|&i| text[..i].parse::<f64>().is_ok())
            .map(|i| (&text[..i], &text[i..]))
            .ok_or_else(|| format!("{text:?} needs a number followed by a unit, e.g. {}", dim.example()))?,
    };
    let value: f64 = number
        .parse()
        .map_err(|_| format!("{number:?} is not a number"))?;
    if !value.is_finite() {
        return Err(format!("{number:?} is not finite"));
    }
    if unit.is_empty() {
        return Err(format!("missing unit, e.g. {}", dim.example()));
    }
    let factor = dim
        .factor(unit)
        .ok_or_else(|| format!("{unit:?} is not a {} unit", dim.name()))?;
    Ok(value * factor)
}

type Field = Option<Spanned<Value>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    emitter_1: Spanned<RawEmitter>,
    emitter_2: Spanned<RawEmitter>,
    scenario: Spanned<RawScenario>,
    diffusion: Option<Spanned<RawDiffusion>>,
    simulation: Option<Spanned<RawSimulation>>,
    output: Option<Spanned<RawOutput>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmitter {
    linewidth: Field,
    lifetime: Field,
    signal_rate: Field,
    background_rate: Field,
    detuning: Field,
    stark_voltage: Field,
    branching_ratio: Field,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    eta: Field,
    irf_fwhm: Field,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    bandwidth: Field,
    rms_detuning: Field,
    line_fwhm: Field,
    distribution_fwhm: Field,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    duration: Field,
    seed: Field,
    bin_width: Field,
    half_range: Field,
    mode: Field,
    deadtime: Field,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    histogram: Field,
    timestamps: Field,
}

/// One emitter as written, in SI units (frequencies in Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterEntry {
    /// Lorentzian FWHM, Hz.
    pub linewidth: Option<f64>,
    pub lifetime: Option<f64>,
    pub signal_rate: f64,
    pub background_rate: f64,
    /// Hz
    pub detuning: Option<f64>,
    pub stark_voltage: Option<f64>,
    pub branching_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioEntry {
    pub eta: f64,
    /// seconds; zero for an ideal detector
    pub irf_fwhm: f64,
}

/// How the diffusion amplitude is specified. All values in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionAmplitude {
    /// Standard deviation of the detuning.
    Rms(f64),
    /// FWHM of the broadened emission line.
    LineFwhm(f64),
    /// FWHM of the Gaussian detuning distribution.
    DistributionFwhm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionEntry {
    /// Hz
    pub bandwidth: f64,
    pub amplitude: DiffusionAmplitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationEntry {
    pub duration: f64,
    pub seed: u64,
    pub bin_width: f64,
    pub half_range: f64,
    pub mode: CorrelatorMode,
    pub deadtime: f64,
}

impl Default for SimulationEntry {
    fn default() -> Self {
        let mc = McConfig::default();
        Self {
            duration: mc.duration,
            seed: mc.seed,
            bin_width: mc.bin_width,
            half_range: mc.half_range,
            mode: mc.mode,
            deadtime: mc.deadtime,
        }
    }
}

impl SimulationEntry {
    pub fn mc_config(&self) -> McConfig {
        McConfig {
            duration: self.duration,
            seed: self.seed,
            bin_width: self.bin_width,
            half_range: self.half_range,
            mode: self.mode,
            deadtime: self.deadtime,
            ..McConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputEntry {
    pub histogram: Option<String>,
    pub timestamps: Option<String>,
}

/// The content of a scenario file with every quantity in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub emitter_1: EmitterEntry,
    pub emitter_2: EmitterEntry,
    pub scenario: ScenarioEntry,
    pub diffusion: Option<DiffusionEntry>,
    pub simulation: SimulationEntry,
    pub output: OutputEntry,
}

/// A validated scenario ready for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub scenario: InterferenceScenario<f64>,
    /// Acts on emitter 1; any target width is already resolved.
    pub diffusion: DiffusionSpec<f64>,
    /// SHA-256 of the canonical text, hex encoded.
    pub hash: String,
}

impl Scenario {
    pub fn mc_config(&self) -> McConfig {
        self.file.simulation.mc_config()
    }
}

fn mode_name(mode: CorrelatorMode) -> &'static str {
    match mode {
        CorrelatorMode::MultiStop => "multi_stop",
        CorrelatorMode::StartStop => "start_stop",
    }
}

fn quantity_text(value: f64, dim: Dimension) -> String {
    format!("\"{value:e} {}\"", dim.unit())
}

fn toml_string(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

impl ScenarioFile {
    /// Canonical text: fixed table and key order, SI units, shortest
    /// round-trip numbers. Parsing the canonical text gives back `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (name, e) in [("emitter_1", &self.emitter_1), ("emitter_2", &self.emitter_2)] {
            let _ = writeln!(out, "[{name}]");
            if let Some(v) = e.linewidth {
                let _ = writeln!(out, "linewidth = {}", quantity_text(v, Dimension::Frequency));
            }
            if let Some(v) = e.lifetime {
                let _ = writeln!(out, "lifetime = {}", quantity_text(v, Dimension::Time));
            }
            let _ = writeln!(out, "signal_rate = {}", quantity_text(e.signal_rate, Dimension::Rate));
            let _ = writeln!(out, "background_rate = {}", quantity_text(e.background_rate, Dimension::Rate));
            if let Some(v) = e.detuning {
                let _ = writeln!(out, "detuning = {}", quantity_text(v, Dimension::Frequency));
            }
            if let Some(v) = e.stark_voltage {
                let _ = writeln!(out, "stark_voltage = {}", quantity_text(v, Dimension::Voltage));
            }
            if let Some(v) = e.branching_ratio {
                let _ = writeln!(out, "branching_ratio = {v:?}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "[scenario]");
        let _ = writeln!(out, "eta = {:?}", self.scenario.eta);
        let _ = writeln!(out, "irf_fwhm = {}", quantity_text(self.scenario.irf_fwhm, Dimension::Time));
        if let Some(d) = &self.diffusion {
            let _ = writeln!(out, "\n[diffusion]");
            let _ = writeln!(out, "bandwidth = {}", quantity_text(d.bandwidth, Dimension::Frequency));
            let (key, v) = match d.amplitude {
                DiffusionAmplitude::Rms(v) => ("rms_detuning", v),
                DiffusionAmplitude::LineFwhm(v) => ("line_fwhm", v),
                DiffusionAmplitude::DistributionFwhm(v) => ("distribution_fwhm", v),
            };
            let _ = writeln!(out, "{key} = {}", quantity_text(v, Dimension::Frequency));
        }
        let s = &self.simulation;
        let _ = writeln!(out, "\n[simulation]");
        let _ = writeln!(out, "duration = {}", quantity_text(s.duration, Dimension::Time));
        let _ = writeln!(out, "seed = {}", s.seed);
        let _ = writeln!(out, "bin_width = {}", quantity_text(s.bin_width, Dimension::Time));
        let _ = writeln!(out, "half_range = {}", quantity_text(s.half_range, Dimension::Time));
        let _ = writeln!(out, "mode = \"{}\"", mode_name(s.mode));
        let _ = writeln!(out, "deadtime = {}", quantity_text(s.deadtime, Dimension::Time));
        if self.output != OutputEntry::default() {
            let _ = writeln!(out, "\n[output]");
            if let Some(p) = &self.output.histogram {
                let _ = writeln!(out, "histogram = {}", toml_string(p));
            }
            if let Some(p) = &self.output.timestamps {
                let _ = writeln!(out, "timestamps = {}", toml_string(p));
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Validate and build the domain objects. Errors carry no line numbers;
    /// use [`parse_scenario`] for located errors.
    pub fn build(&self) -> Result<Scenario> {
        build(self, &Locator::detached())
    }
}

/// Maps dotted keys to the lines they appear on.
struct Locator {
    path: PathBuf,
    lines: HashMap<String, usize>,
}

impl Locator {
    fn detached() -> Self {
        Self {
            path: PathBuf::from("<scenario>"),
            lines: HashMap::new(),
        }
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        let line = self
            .lines
            .get(key)
            .or_else(|| self.lines.get(key.split('.').next().unwrap_or(key)))
            .copied()
            .unwrap_or(0);
        Error::Parse {
            path: self.path.clone(),
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Re-attribute a validation error from the domain layer to `key`.
    fn wrap(&self, key: &str, err: Error) -> Error {
        let message = match err {
            Error::Domain(m) | Error::Precision(m) | Error::Configuration(m) => m,
            other => other.to_string(),
        };
        self.error(key, message)
    }
}

struct Reader<'a> {
    text: &'a str,
    locator: Locator,
}

impl Reader<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn note(&mut self, key: &str, span: Range<usize>) {
        let line = self.line_of(span.start);
        self.locator.lines.insert(key.to_string(), line);
    }

    fn field<'f>(&mut self, table: &str, name: &str, field: &'f Field) -> Option<(String, &'f Value)> {
        let key = format!("{table}.{name}");
        field.as_ref().map(|f| {
            self.note(&key, f.span());
            (key, f.get_ref())
        })
    }

    fn quantity(&mut self, table: &str, name: &str, field: &Field, dim: Dimension) -> Result<Option<f64>> {
        let Some((key, value)) = self.field(table, name, field) else {
            return Ok(None);
        };
        match value {
            Value::String(s) => parse_quantity(s, dim)
                .map(Some)
                .map_err(|m| self.locator.error(&key, m)),
            Value::Integer(_) | Value::Float(_) => Err(self.locator.error(
                &key,
                format!("missing unit: write the {} as a string such as {}", dim.name(), dim.example()),
            )),
            other => Err(self.locator.error(
                &key,
                format!("expected a {} such as {}, found {}", dim.name(), dim.example(), other.type_str()),
            )),
        }
    }

    fn required(&mut self, table: &str, name: &str, field: &Field, dim: Dimension) -> Result<f64> {
        self.quantity(table, name, field, dim)?
            .ok_or_else(|| self.locator.error(&format!("{table}.{name}"), "required key is missing"))
    }

    fn number(&mut self, table: &str, name: &str, field: &Field) -> Result<Option<f64>> {
        let Some((key, value)) = self.field(table, name, field) else {
            return Ok(None);
        };
        match value {
            Value::Float(x) => Ok(Some(*x)),
            Value::Integer(i) => Ok(Some(*i as f64)),
            other => Err(self
                .locator
                .error(&key, format!("expected a plain number, found {}", other.type_str()))),
        }
    }

    fn emitter(&mut self, table: &str, raw: &Spanned<RawEmitter>) -> Result<EmitterEntry> {
        self.note(table, raw.span());
        let r = raw.get_ref();
        Ok(EmitterEntry {
            linewidth: self.quantity(table, "linewidth", &r.linewidth, Dimension::Frequency)?,
            lifetime: self.quantity(table, "lifetime", &r.lifetime, Dimension::Time)?,
            signal_rate: self.required(table, "signal_rate", &r.signal_rate, Dimension::Rate)?,
            background_rate: self.required(table, "background_rate", &r.background_rate, Dimension::Rate)?,
            detuning: self.quantity(table, "detuning", &r.detuning, Dimension::Frequency)?,
            stark_voltage: self.quantity(table, "stark_voltage", &r.stark_voltage, Dimension::Voltage)?,
            branching_ratio: self.number(table, "branching_ratio", &r.branching_ratio)?,
        })
    }

    fn file(&mut self, raw: &RawFile) -> Result<ScenarioFile> {
        let emitter_1 = self.emitter("emitter_1", &raw.emitter_1)?;
        let emitter_2 = self.emitter("emitter_2", &raw.emitter_2)?;

        self.note("scenario", raw.scenario.span());
        let s = raw.scenario.get_ref();
        let eta = self
            .number("scenario", "eta", &s.eta)?
            .ok_or_else(|| self.locator.error("scenario.eta", "required key is missing"))?;
        let irf_fwhm = self
            .quantity("scenario", "irf_fwhm", &s.irf_fwhm, Dimension::Time)?
            .ok_or_else(|| self.locator.error("scenario.irf_fwhm", "required key is missing (use \"0 ps\" for an ideal detector)"))?;

        let diffusion = match &raw.diffusion {
            None => None,
            Some(d) => {
                self.note("diffusion", d.span());
                let r = d.get_ref();
                let bandwidth = self.required("diffusion", "bandwidth", &r.bandwidth, Dimension::Frequency)?;
                let options = [
                    self.quantity("diffusion", "rms_detuning", &r.rms_detuning, Dimension::Frequency)?
                        .map(DiffusionAmplitude::Rms),
                    self.quantity("diffusion", "line_fwhm", &r.line_fwhm, Dimension::Frequency)?
                        .map(DiffusionAmplitude::LineFwhm),
                    self.quantity("diffusion", "distribution_fwhm", &r.distribution_fwhm, Dimension::Frequency)?
                        .map(DiffusionAmplitude::DistributionFwhm),
                ];
                let given: Vec<DiffusionAmplitude> = options.into_iter().flatten().collect();
                if given.len() != 1 {
                    return Err(self.locator.error(
                        "diffusion",
                        "give exactly one of rms_detuning, line_fwhm and distribution_fwhm",
                    ));
                }
                Some(DiffusionEntry {
                    bandwidth,
                    amplitude: given[0],
                })
            }
        };

        let mut simulation = SimulationEntry::default();
        if let Some(sim) = &raw.simulation {
            self.note("simulation", sim.span());
            let r = sim.get_ref();
            let t = "simulation";
            if let Some(v) = self.quantity(t, "duration", &r.duration, Dimension::Time)? {
                simulation.duration = v;
            }
            if let Some((key, value)) = self.field(t, "seed", &r.seed) {
                simulation.seed = match value {
                    Value::Integer(i) if *i >= 0 => *i as u64,
                    _ => return Err(self.locator.error(&key, "seed must be a nonnegative integer")),
                };
            }
            if let Some(v) = self.quantity(t, "bin_width", &r.bin_width, Dimension::Time)? {
                simulation.bin_width = v;
            }
            if let Some(v) = self.quantity(t, "half_range", &r.half_range, Dimension::Time)? {
                simulation.half_range = v;
            }
            if let Some((key, value)) = self.field(t, "mode", &r.mode) {
                simulation.mode = match value.as_str() {
                    Some("multi_stop") => CorrelatorMode::MultiStop,
                    Some("start_stop") => CorrelatorMode::StartStop,
                    _ => return Err(self.locator.error(&key, "mode must be \"multi_stop\" or \"start_stop\"")),
                };
            }
            if let Some(v) = self.quantity(t, "deadtime", &r.deadtime, Dimension::Time)? {
                simulation.deadtime = v;
            }
        }

        let mut output = OutputEntry::default();
        if let Some(o) = &raw.output {
            self.note("output", o.span());
            let r = o.get_ref();
            for (name, field, slot) in [
                ("histogram", &r.histogram, &mut output.histogram),
                ("timestamps", &r.timestamps, &mut output.timestamps),
            ] {
                if let Some((key, value)) = self.field("output", name, field) {
                    *slot = Some(
                        value
                            .as_str()
                            .ok_or_else(|| self.locator.error(&key, "expected a path string"))?
                            .to_string(),
                    );
                }
            }
        }

        Ok(ScenarioFile {
            emitter_1,
            emitter_2,
            scenario: ScenarioEntry { eta, irf_fwhm },
            diffusion,
            simulation,
            output,
        })
    }
}

fn build_emitter(table: &str, e: &EmitterEntry, loc: &Locator) -> Result<EmitterSpec<f64>> {
    let key = |name: &str| format!("{table}.{name}");
    for (name, v) in [("signal_rate", e.signal_rate), ("background_rate", e.background_rate)] {
        if v < 0.0 {
            return Err(loc.error(&key(name), format!("rate must be >= 0, got {v}")));
        }
    }
    if e.signal_rate + e.background_rate <= 0.0 {
        return Err(loc.error(&key("signal_rate"), "signal plus background rate must be positive"));
    }
    let branching = e.branching_ratio.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&branching) {
        return Err(loc.error(&key("branching_ratio"), format!("must lie in [0, 1], got {branching}")));
    }
    let detuning_hz = match (e.detuning, e.stark_voltage) {
        (Some(_), Some(_)) => {
            return Err(loc.error(&key("stark_voltage"), "give either detuning or stark_voltage, not both"))
        }
        (Some(d), None) => d,
        (None, Some(v)) => stark_detuning(v) * 1e6,
        (None, None) => 0.0,
    };
    let tau = std::f64::consts::TAU;
    let (linewidth_key, lifetime, linewidth) = match (e.linewidth, e.lifetime) {
        (None, None) => return Err(loc.error(table, "give a linewidth, a lifetime or both")),
        (Some(w), None) => {
            if !(w > 0.0) {
                return Err(loc.error(&key("linewidth"), format!("linewidth must be positive, got {w} Hz")));
            }
            ("linewidth", 1.0 / (tau * w), tau * w)
        }
        (None, Some(t)) => {
            if !(t > 0.0) {
                return Err(loc.error(&key("lifetime"), format!("lifetime must be positive, got {t} s")));
            }
            ("lifetime", t, 1.0 / t)
        }
        (Some(w), Some(t)) => ("linewidth", t, tau * w),
    };
    EmitterSpec::new(
        tau * detuning_hz,
        linewidth,
        lifetime,
        e.signal_rate,
        e.background_rate,
        branching,
    )
    .map_err(|err| loc.wrap(&key(linewidth_key), err))
}

fn build(file: &ScenarioFile, loc: &Locator) -> Result<Scenario> {
    let e1 = build_emitter("emitter_1", &file.emitter_1, loc)?;
    let e2 = build_emitter("emitter_2", &file.emitter_2, loc)?;
    let irf = IrfSpec::gaussian(file.scenario.irf_fwhm).map_err(|e| loc.wrap("scenario.irf_fwhm", e))?;
    let scenario = InterferenceScenario::new(e1, e2, file.scenario.eta, irf).map_err(|e| loc.wrap("scenario.eta", e))?;
    let diffusion = match &file.diffusion {
        None => DiffusionSpec::none(),
        Some(d) => {
            let tau = std::f64::consts::TAU;
            let (key, spec) = match d.amplitude {
                DiffusionAmplitude::Rms(v) => ("diffusion.rms_detuning", DiffusionSpec::band_limited(d.bandwidth, tau * v)),
                DiffusionAmplitude::LineFwhm(v) => ("diffusion.line_fwhm", DiffusionSpec::with_target_fwhm_hz(d.bandwidth, v)),
                DiffusionAmplitude::DistributionFwhm(v) => (
                    "diffusion.distribution_fwhm",
                    DiffusionSpec::gaussian_distribution_fwhm_hz(d.bandwidth, v),
                ),
            };
            let spec = spec.map_err(|e| loc.wrap(key, e))?;
            resolve_diffusion(&spec, &e1).map_err(|e| loc.wrap(key, e))?
        }
    };
    let s = &file.simulation;
    for (name, v) in [("duration", s.duration), ("bin_width", s.bin_width)] {
        if !(v > 0.0) {
            return Err(loc.error(&format!("simulation.{name}"), format!("must be positive, got {v} s")));
        }
    }
    if !(s.half_range >= 50e-9) {
        return Err(loc.error("simulation.half_range", "the histogram must cover at least ±50 ns"));
    }
    if !(s.deadtime >= 0.0) {
        return Err(loc.error("simulation.deadtime", "must be >= 0"));
    }
    Ok(Scenario {
        file: file.clone(),
        scenario,
        diffusion,
        hash: file.hash(),
    })
}

fn toml_error(path: &Path, text: &str, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    let message = err.message().trim().to_string();
    let key = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains('`'))
        .unwrap_or("<document>")
        .to_string();
    Error::Parse {
        path: path.to_path_buf(),
        line,
        key,
        message,
    }
}

/// Parse and validate scenario text. `path` is only used in messages.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    let raw: RawFile = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    let mut reader = Reader {
        text,
        locator: Locator {
            path: path.to_path_buf(),
            lines: HashMap::new(),
        },
    };
    let file = reader.file(&raw)?;
    build(&file, &reader.locator)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[emitter_1]
lifetime = "9.5 ns"
signal_rate = "9e5 /s"
background_rate = "1e5 /s"
stark_voltage = "67 V"

[emitter_2]
linewidth = "17 MHz"
lifetime = "9.5 ns"
signal_rate = "900 kcps"
background_rate = "1e5/s"

[scenario]
eta = 0.5
irf_fwhm = "800 ps"
"#;

    fn parse(text: &str) -> Result<Scenario> {
        parse_scenario(text, Path::new("test.scenario"))
    }

    fn parse_error(text: &str) -> (usize, String, String) {
        match parse(text) {
            Err(Error::Parse { line, key, message, .. }) => (line, key, message),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn quantities() {
        assert_eq!(parse_quantity("9.5 ns", Dimension::Time).unwrap(), 9.5e-9);
        assert_eq!(parse_quantity("17MHz", Dimension::Frequency).unwrap(), 17e6);
        assert_eq!(parse_quantity("1e5/s", Dimension::Rate).unwrap(), 1e5);
        assert_eq!(parse_quantity(" 67 V ", Dimension::Voltage).unwrap(), 67.0);
        assert!(parse_quantity("17", Dimension::Frequency).is_err());
        assert!(parse_quantity("17 ns", Dimension::Frequency).is_err());
        assert!(parse_quantity("MHz", Dimension::Frequency).is_err());
    }

    #[test]
    fn stark_voltage_sets_detuning() {
        let s = parse(BASIC).unwrap();
        let hz = s.scenario.emitter_1().center_frequency() / std::f64::consts::TAU;
        assert!((hz - 200e6).abs() < 1e-3);
        assert_eq!(s.scenario.eta(), 0.5);
        assert!((s.scenario.detector_irf().fwhm() - 800e-12).abs() < 1e-24);
        assert_eq!(s.diffusion, DiffusionSpec::none());
    }

    #[test]
    fn missing_quantity_derived() {
        let s = parse(BASIC).unwrap();
        let e = s.scenario.emitter_1();
        assert!((e.linewidth() - 1.0 / 9.5e-9).abs() < 1e-3);
        let text = BASIC.replace("lifetime = \"9.5 ns\"\nsignal_rate = \"9e5", "linewidth = \"20 MHz\"\nsignal_rate = \"9e5");
        let s = parse(&text).unwrap();
        let e = s.scenario.emitter_1();
        assert!((e.lifetime() - 1.0 / (std::f64::consts::TAU * 20e6)).abs() < 1e-20);
    }

    #[test]
    fn sub_natural_linewidth_rejected() {
        let text = BASIC.replace("linewidth = \"17 MHz\"", "linewidth = \"1 MHz\"");
        let (line, key, message) = parse_error(&text);
        assert_eq!(line, 9);
        assert_eq!(key, "emitter_2.linewidth");
        assert!(message.contains("natural"), "{message}");
    }

    #[test]
    fn unit_is_mandatory() {
        let text = BASIC.replace("irf_fwhm = \"800 ps\"", "irf_fwhm = 800");
        let (line, key, message) = parse_error(&text);
        assert_eq!((line, key.as_str()), (16, "scenario.irf_fwhm"));
        assert!(message.contains("unit"));
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let text = BASIC.replace("eta = 0.5", "eta = 0.5\ncolour = \"red\"");
        let (line, key, _) = parse_error(&text);
        assert_eq!(line, 16);
        assert_eq!(key, "colour");
    }

    #[test]
    fn out_of_range_eta_rejected() {
        let (line, key, _) = parse_error(&BASIC.replace("eta = 0.5", "eta = 1.5"));
        assert_eq!((line, key.as_str()), (15, "scenario.eta"));
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let text = format!(
            "{BASIC}\n[diffusion]\nbandwidth = \"1 MHz\"\ndistribution_fwhm = \"2 GHz\"\n\n[simulation]\nseed = 7\nmode = \"start_stop\"\n\n[output]\nhistogram = \"out/a b.csv\"\n"
        );
        let first = parse(&text).unwrap();
        let canonical = first.file.to_toml();
        let second = parse(&canonical).unwrap();
        assert_eq!(second.file, first.file);
        assert_eq!(second.file.to_toml(), canonical);
        assert_eq!(second.hash, first.hash);
        assert_eq!(first.hash.len(), 64);
        assert_eq!(second.scenario, first.scenario);
        assert_eq!(first.file.simulation.seed, 7);
        assert_eq!(first.file.simulation.mode, CorrelatorMode::StartStop);
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse(BASIC).unwrap();
        let b = parse(&BASIC.replace("eta = 0.5", "eta = 0.25")).unwrap();
        assert_ne!(a.hash, b.hash);
        let c = parse(&format!("# comment\n{BASIC}")).unwrap();
        assert_eq!(a.hash, c.hash);
    }
}
