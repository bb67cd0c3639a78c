//! Command-line front end: analytic curves, Monte Carlo measurements,
//! histogramming of timestamp files, fits and the figure set.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tpqi::analytic::{coincidence_throughput, lineshape};
use tpqi::estimate::{binned_model, fit, normalize, scenario_values, FitMethod, FitProblem, FitResult, ModelKind, Param};
use tpqi::io::{
    format_significant, load_scenario, parse_quantity, parse_scenario, read_histogram_file, read_timestamps_file,
    split_channels, write_histogram, write_histogram_file, write_timestamps_file, DiffusionAmplitude, Dimension,
    Scenario,
};
use tpqi::model::DiffusionProcess;
use tpqi::stochastic::{autocorrelation_histogram, simulate_cross, start_stop_histogram, CorrelatorMode, HistogramBins};
use tpqi::{CorrelationTrace, Normalization, TraceMetadata};

const BUNDLED: &[(&str, &str)] = &[
    ("fig1de", include_str!("../scenarios/fig1de.scenario")),
    ("fig2a", include_str!("../scenarios/fig2a.scenario")),
    ("fig2b", include_str!("../scenarios/fig2b.scenario")),
    ("fig2c", include_str!("../scenarios/fig2c.scenario")),
    ("fig2d", include_str!("../scenarios/fig2d.scenario")),
    ("fig3a", include_str!("../scenarios/fig3a.scenario")),
    ("fig3c", include_str!("../scenarios/fig3c.scenario")),
];

#[derive(Parser)]
#[command(name = "tpqi", version, about = "Two-photon interference of single emitters: correlation curves, Monte Carlo measurements and fits")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed, overriding the one in the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (output directory for `figures`). Tables go to standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Suppress notes and warnings on standard error.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Curve {
    /// Cross-correlation of the two output ports.
    Cross,
    /// Autocorrelation of emitter 1.
    Auto1,
    /// Autocorrelation of emitter 2.
    Auto2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    MultiStop,
    StartStop,
}

impl From<Mode> for CorrelatorMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::MultiStop => CorrelatorMode::MultiStop,
            Mode::StartStop => CorrelatorMode::StartStop,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Autocorrelation,
    CrossCorrelation,
    CrossCorrelationAveraged,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Autocorrelation => ModelKind::Autocorrelation,
            Model::CrossCorrelation => ModelKind::CrossCorrelation,
            Model::CrossCorrelationAveraged => ModelKind::CrossCorrelationAveraged,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Bin the analytic correlation curve of a scenario (IRF included).
    Simulate {
        /// Scenario file, or the name of a bundled scenario such as `fig2b`.
        scenario: String,
        #[arg(long, value_enum, default_value_t = Curve::Cross)]
        curve: Curve,
    },
    /// Simulate the photon streams, write the timestamps and histogram the coincidences.
    Mc {
        scenario: String,
        /// Where to write the detected timestamps (PHTS). Overrides the scenario's output.timestamps.
        #[arg(long)]
        timestamps: Option<PathBuf>,
        /// Measurement time, e.g. "10 s". Overrides simulation.duration.
        #[arg(long)]
        duration: Option<String>,
        /// Divide by the plateau instead of writing raw counts.
        #[arg(long)]
        normalize: bool,
    },
    /// Histogram the delays in a PHTS timestamp file.
    Histogram {
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        start: u8,
        #[arg(long, default_value_t = 4)]
        stop: u8,
        /// Autocorrelate this channel instead of correlating start and stop.
        #[arg(long)]
        auto: Option<u8>,
        #[arg(long, default_value = "100 ps")]
        bin_width: String,
        #[arg(long, default_value = "60 ns")]
        half_range: String,
        #[arg(long, value_enum, default_value_t = Mode::MultiStop)]
        mode: Mode,
        /// Scenario whose hash and seed are recorded in the histogram.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        normalize: bool,
    },
    /// Fit a correlation model to a histogram table.
    Fit {
        trace: PathBuf,
        /// Scenario supplying the fixed parameters and the detector response.
        #[arg(long)]
        scenario: String,
        /// Defaults to the averaged cross-correlation when the scenario has diffusion.
        #[arg(long, value_enum)]
        model: Option<Model>,
        /// Comma-separated free parameters, e.g. eta,detuning,plateau.
        #[arg(long, value_delimiter = ',')]
        free: Vec<String>,
        /// Starting value of a free parameter, NAME=VALUE in SI units (rad/s for frequencies).
        #[arg(long = "init", value_name = "NAME=VALUE")]
        init: Vec<String>,
        /// Fix the spatial-mode overlap at zero (distinguishable photons).
        #[arg(long)]
        assume_eta_zero: bool,
        /// Emitter described by the autocorrelation model.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        emitter: u8,
    },
    /// Expected coincidence rate of the two-detector setup.
    Throughput {
        /// Photon emission rate per second.
        #[arg(long)]
        rate: f64,
        /// Collection efficiency.
        #[arg(long)]
        collect: f64,
        /// Detection efficiency.
        #[arg(long)]
        detect: f64,
    },
    /// Write the analytic curves of every figure into the output directory.
    Figures,
}

enum Failure {
    Usage(String),
    Invalid(tpqi::Error),
    NotConverged(String),
}

impl From<tpqi::Error> for Failure {
    fn from(e: tpqi::Error) -> Self {
        Failure::Invalid(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Invalid(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.global.quiet {
            log::LevelFilter::Off
        } else {
            log::LevelFilter::Warn
        })
        .format_target(false)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(m)) => {
            if !cli.global.quiet {
                eprintln!("fit did not converge: {m}");
            }
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let Format::Csv = g.format;
    match &cli.command {
        Command::Simulate { scenario, curve } => {
            let s = load(scenario)?;
            let seed = g.seed.unwrap_or(s.file.simulation.seed);
            let trace = analytic_trace(&s, *curve, seed)?;
            emit_trace(&trace, g.out.as_deref())
        }
        Command::Mc {
            scenario,
            timestamps,
            duration,
            normalize: norm,
        } => {
            let s = load(scenario)?;
            let mut config = s.mc_config();
            if let Some(seed) = g.seed {
                config.seed = seed;
            }
            if let Some(d) = duration {
                config.duration = parse_quantity(d, Dimension::Time).map_err(|m| Failure::Usage(format!("--duration: {m}")))?;
            }
            let run = simulate_cross(&s.scenario, &s.diffusion, &config)?;
            let stamps = timestamps.clone().or_else(|| s.file.output.timestamps.as_ref().map(PathBuf::from));
            if let Some(path) = &stamps {
                write_timestamps_file(path, &[&run.channel_3, &run.channel_4])?;
                note(g, format!("wrote {} timestamps to {}", run.channel_3.len() + run.channel_4.len(), path.display()));
            }
            let mut trace = run.trace;
            trace.metadata.scenario_hash = s.hash.clone();
            if *norm {
                trace = normalize(&trace)?;
            }
            let out = g.out.clone().or_else(|| s.file.output.histogram.as_ref().map(PathBuf::from));
            emit_trace(&trace, out.as_deref())
        }
        Command::Histogram {
            input,
            start,
            stop,
            auto,
            bin_width,
            half_range,
            mode,
            scenario,
            normalize: norm,
        } => {
            let bin_width = parse_quantity(bin_width, Dimension::Time).map_err(|m| Failure::Usage(format!("--bin-width: {m}")))?;
            let half_range =
                parse_quantity(half_range, Dimension::Time).map_err(|m| Failure::Usage(format!("--half-range: {m}")))?;
            let streams = split_channels(&read_timestamps_file(input)?);
            let channel = |ch: u8| {
                streams
                    .iter()
                    .find(|s| s.channel == ch)
                    .ok_or_else(|| Failure::Invalid(tpqi::Error::Domain(format!("no events on channel {ch}"))))
            };
            let mut trace = match auto {
                Some(ch) => autocorrelation_histogram(channel(*ch)?, bin_width, half_range)?,
                None => start_stop_histogram(channel(*start)?, channel(*stop)?, bin_width, half_range, (*mode).into())?,
            };
            let tag = scenario.as_deref().map(load).transpose()?;
            trace.metadata.scenario_hash = tag.as_ref().map(|s| s.hash.clone()).unwrap_or_default();
            trace.metadata.seed = g.seed.or(tag.as_ref().map(|s| s.file.simulation.seed)).unwrap_or(0);
            if *norm {
                trace = normalize(&trace)?;
            }
            emit_trace(&trace, g.out.as_deref())
        }
        Command::Fit {
            trace,
            scenario,
            model,
            free,
            init,
            assume_eta_zero,
            emitter,
        } => run_fit(g, trace, scenario, *model, free, init, *assume_eta_zero, *emitter),
        Command::Throughput { rate, collect, detect } => {
            let n = coincidence_throughput(*rate, *collect, *detect)?;
            write_out(g.out.as_deref(), &format!("{}\n", format_significant(n)))
        }
        Command::Figures => figures(g),
    }
}

fn note(g: &Global, message: String) {
    if !g.quiet {
        eprintln!("{message}");
    }
}

/// A scenario file, or a bundled scenario by name when no such file exists.
fn load(arg: &str) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        let name = arg.strip_suffix(".scenario").unwrap_or(arg);
        if let Some((name, text)) = BUNDLED.iter().find(|(n, _)| *n == name) {
            return Ok(parse_scenario(text, Path::new(&format!("{name}.scenario")))?);
        }
    }
    Ok(load_scenario(path)?)
}

fn write_out(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_trace(trace: &CorrelationTrace, out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => write_histogram_file(p, trace)?,
        None => write_histogram(io::stdout().lock(), trace)?,
    }
    Ok(())
}

fn default_cross_model(s: &Scenario) -> ModelKind {
    match s.diffusion.process() {
        DiffusionProcess::None => ModelKind::CrossCorrelation,
        _ => ModelKind::CrossCorrelationAveraged,
    }
}

/// Parameters of the autocorrelation model for one emitter.
fn autocorrelation_values(s: &Scenario, emitter: u8) -> BTreeMap<Param, f64> {
    let e = if emitter == 2 { s.scenario.emitter_2() } else { s.scenario.emitter_1() };
    BTreeMap::from([
        (Param::Linewidth1, e.linewidth()),
        (Param::SignalFraction1, e.signal_fraction()),
        (Param::Plateau, 1.0),
    ])
}

/// The analytic curve averaged over the scenario's histogram bins.
fn analytic_trace(s: &Scenario, curve: Curve, seed: u64) -> Result<CorrelationTrace, Failure> {
    let sim = &s.file.simulation;
    let edges = HistogramBins::new(sim.bin_width, sim.half_range)?.edges();
    let (kind, params) = match curve {
        Curve::Cross => (default_cross_model(s), scenario_values(&s.scenario, &s.diffusion)),
        Curve::Auto1 => (ModelKind::Autocorrelation, autocorrelation_values(s, 1)),
        Curve::Auto2 => (ModelKind::Autocorrelation, autocorrelation_values(s, 2)),
    };
    let values = binned_model(&edges, kind, &params, s.scenario.detector_irf())?;
    let sigma = vec![0.0; values.len()];
    let metadata = TraceMetadata {
        scenario_hash: s.hash.clone(),
        seed,
        total_events: 0,
    };
    Ok(CorrelationTrace::new(edges, values, sigma, Normalization::PlateauNormalized, metadata)?)
}

fn parse_param(name: &str, kind: ModelKind) -> Result<Param, Failure> {
    let p = Param::parse(name.trim()).ok_or_else(|| {
        let known: Vec<&str> = kind.params().iter().map(|p| p.name()).collect();
        Failure::Usage(format!("unknown parameter {name:?}; expected one of {}", known.join(", ")))
    })?;
    if !kind.params().contains(&p) {
        return Err(Failure::Usage(format!("{p} is not a parameter of the {} model", kind.as_str())));
    }
    Ok(p)
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    g: &Global,
    trace_path: &Path,
    scenario: &str,
    model: Option<Model>,
    free: &[String],
    init: &[String],
    assume_eta_zero: bool,
    emitter: u8,
) -> Outcome {
    let s = load(scenario)?;
    let mut trace = read_histogram_file(trace_path)?;
    if trace.normalization() == Normalization::RawCounts {
        trace = normalize(&trace)?;
    }
    let kind = model.map(ModelKind::from).unwrap_or_else(|| default_cross_model(&s));
    if assume_eta_zero && kind == ModelKind::Autocorrelation {
        return Err(Failure::Usage("--assume-eta-zero needs a cross-correlation model".into()));
    }
    let mut names: Vec<Param> = free.iter().map(|n| parse_param(n, kind)).collect::<Result<_, _>>()?;
    if names.is_empty() {
        names = match kind {
            ModelKind::Autocorrelation => vec![Param::SignalFraction1, Param::Plateau],
            ModelKind::CrossCorrelation => vec![Param::Eta, Param::Detuning, Param::Plateau],
            ModelKind::CrossCorrelationAveraged => vec![Param::Eta, Param::RmsDetuning, Param::Plateau],
        };
    }
    if assume_eta_zero {
        names.retain(|p| *p != Param::Eta);
    }
    let mut starts = BTreeMap::new();
    for item in init {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--init expects NAME=VALUE, got {item:?}")))?;
        let p = parse_param(name, kind)?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("--init {name}: {value:?} is not a number")))?;
        starts.insert(p, v);
    }

    let mut problem = match kind {
        ModelKind::Autocorrelation => {
            let mut p = FitProblem::new(trace, kind, *s.scenario.detector_irf());
            for (param, v) in autocorrelation_values(&s, emitter) {
                p = p.fix(param, v);
            }
            p
        }
        _ => FitProblem::from_scenario(trace, kind, &s.scenario, &s.diffusion),
    };
    if assume_eta_zero {
        problem = problem.fix(Param::Eta, 0.0);
    }
    for p in names {
        problem = match starts.get(&p) {
            Some(v) => problem.free(p, Some(*v)),
            None if p == Param::Detuning => problem.free_auto(p),
            None => problem.free(p, None),
        };
    }
    let result = fit(&problem)?;
    let seed = g.seed.unwrap_or(problem.trace.metadata.seed);
    let report = fit_report(&result, &problem.trace.metadata.scenario_hash, seed);
    write_out(g.out.as_deref(), &report)?;
    if result.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(result.message))
    }
}

fn fit_report(r: &FitResult, hash: &str, seed: u64) -> String {
    let method = match r.method {
        FitMethod::LevenbergMarquardt => "levenberg_marquardt",
        FitMethod::NelderMead => "nelder_mead",
    };
    let mut out = String::new();
    out.push_str("# tpqi fit report\n");
    out.push_str(&format!("# scenario_hash = {hash}\n"));
    out.push_str(&format!("# seed = {seed}\n"));
    out.push_str(&format!("# model = {}\n", r.model.as_str()));
    out.push_str(&format!("# converged = {}\n", r.converged));
    out.push_str(&format!("# method = {method}\n"));
    out.push_str(&format!("# iterations = {}\n", r.iterations));
    out.push_str(&format!("# chi2 = {}\n", format_significant(r.chi2)));
    out.push_str(&format!("# degrees_of_freedom = {}\n", r.degrees_of_freedom));
    out.push_str(&format!("# reduced_chi2 = {}\n", format_significant(r.reduced_chi2)));
    out.push_str(&format!("# message = {}\n", r.message));
    out.push_str("param,status,estimate,std_error,unit\n");
    for (p, v) in &r.estimates {
        let status = if r.is_unidentifiable(*p) {
            "unidentifiable"
        } else if r.free.contains(p) {
            "free"
        } else {
            "fixed"
        };
        let se = r.standard_error(*p).map(format_significant).unwrap_or_default();
        let unit = if p.is_frequency() { "rad/s" } else { "1" };
        out.push_str(&format!("{p},{status},{},{se},{unit}\n", format_significant(*v)));
    }
    out
}

fn figures(g: &Global) -> Outcome {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let save = |name: &str, trace: &CorrelationTrace, written: &mut Vec<PathBuf>| -> Outcome {
        let path = dir.join(name);
        write_histogram_file(&path, trace)?;
        written.push(path);
        Ok(())
    };
    let seed_of = |s: &Scenario| g.seed.unwrap_or(s.file.simulation.seed);

    let fig1 = load("fig1de")?;
    save("fig1d.csv", &analytic_trace(&fig1, Curve::Auto1, seed_of(&fig1))?, &mut written)?;
    save("fig1e.csv", &analytic_trace(&fig1, Curve::Auto2, seed_of(&fig1))?, &mut written)?;

    for panel in ["fig2a", "fig2b", "fig2c", "fig2d"] {
        let s = load(panel)?;
        save(&format!("{panel}_eta0.5.csv"), &analytic_trace(&s, Curve::Cross, seed_of(&s))?, &mut written)?;
        let mut ideal = s.file.clone();
        ideal.scenario.eta = 1.0;
        let ideal = ideal.build()?;
        save(&format!("{panel}_eta1.csv"), &analytic_trace(&ideal, Curve::Cross, seed_of(&ideal))?, &mut written)?;
    }

    let fig3a = load("fig3a")?;
    save("fig3a.csv", &analytic_trace(&fig3a, Curve::Cross, seed_of(&fig3a))?, &mut written)?;

    let fig3c = load("fig3c")?;
    for fwhm_mhz in [30.0, 120.0, 300.0] {
        let mut file = fig3c.file.clone();
        if let Some(d) = file.diffusion.as_mut() {
            d.amplitude = DiffusionAmplitude::LineFwhm(fwhm_mhz * 1e6);
        }
        let s = file.build()?;
        let line = lineshape(s.scenario.emitter_1(), &s.diffusion, 1.5e9, 1e6)?;
        let peak = line.values().iter().copied().fold(0.0, f64::max);
        let mut text = String::from("# tpqi emission line\n");
        text.push_str(&format!("# scenario_hash = {}\n# seed = {}\n", s.hash, seed_of(&s)));
        text.push_str(&format!("# line_fwhm_mhz = {fwhm_mhz}\n"));
        text.push_str("detuning_mhz,intensity\n");
        for (x, v) in line.abscissae().zip(line.values()) {
            text.push_str(&format!("{},{}\n", format_significant(x * 1e-6), format_significant(v / peak)));
        }
        let path = dir.join(format!("fig3b_{fwhm_mhz}mhz.csv"));
        fs::write(&path, text)?;
        written.push(path);
    }
    save("fig3c.csv", &analytic_trace(&fig3c, Curve::Cross, seed_of(&fig3c))?, &mut written)?;
    let resonant = load("fig2a")?;
    save("fig3c_resonant.csv", &analytic_trace(&resonant, Curve::Cross, seed_of(&resonant))?, &mut written)?;

    for path in &written {
        note(g, format!("wrote {}", path.display()));
    }
    Ok(())
}
