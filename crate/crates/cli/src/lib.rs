//! `qos` command implementations. Each command writes its human-readable
//! output to the supplied writer and returns an [`Outcome`]; errors map to
//! exit code 1, a failed validation threshold to exit code 2.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qos_core::model::{
    analytical_jitter_with, capacity_from_bandwidth, invert_capacity_for_jitter, invert_load_for_jitter,
    jitter_for, CapacityLimit, FormulaVariant, LinkParams, LoadLimit,
};
use qos_core::report::{log_plot_data, run_validation, ValidationSettings, DEFAULT_THRESHOLD};
use qos_core::sim::{simulate_run, write_packet_trace, ServiceDistribution, SimConfig, DEFAULT_SEED};
use qos_core::trace::{parse_log, parse_scenario, synth_mobility_trace, write_log, MobilityScenario};
use qos_core::analyze_log;
use serde_json::json;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "qos", version, about = "Delay-jitter model, FCFS simulator and QoS trace tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the closed-form jitter of one link.
    Model(ModelArgs),
    /// Largest load or smallest capacity meeting a jitter budget.
    Invert(InvertArgs),
    /// Run one seeded FCFS simulation.
    Simulate(SimulateArgs),
    /// Compare the model against simulation over a load grid.
    Validate(ValidateArgs),
    /// Generate a synthetic 1 Hz field log from a mobility scenario.
    Synth(SynthArgs),
    /// Summarise and correlate the columns of a field log.
    Analyze(AnalyzeArgs),
}

/// Link capacity given directly or as bandwidth over mean packet size.
#[derive(Debug, Args)]
pub struct CapacityArgs {
    /// Service capacity in packets/s.
    #[arg(long, conflicts_with = "bandwidth_bps")]
    pub capacity: Option<f64>,
    /// Link bandwidth in bits/s, used with --packet-bits.
    #[arg(long, requires = "packet_bits")]
    pub bandwidth_bps: Option<f64>,
    /// Mean packet size in bits.
    #[arg(long)]
    pub packet_bits: Option<f64>,
}

impl CapacityArgs {
    fn resolve(&self) -> Result<Option<f64>> {
        Ok(match (self.capacity, self.bandwidth_bps, self.packet_bits) {
            (Some(c), _, _) => Some(c),
            (None, Some(bw), Some(bits)) => Some(capacity_from_bandwidth(bw, bits)?),
            _ => None,
        })
    }

    fn require(&self) -> Result<f64> {
        self.resolve()?
            .context("a capacity is required (--capacity, or --bandwidth-bps with --packet-bits)")
    }
}

/// Arrival rate given directly or as a load fraction of the capacity.
#[derive(Debug, Args)]
pub struct LoadArgs {
    /// Total arrival rate in packets/s.
    #[arg(long, conflicts_with = "rho")]
    pub lambda: Option<f64>,
    /// Offered load lambda / C.
    #[arg(long)]
    pub rho: Option<f64>,
}

impl LoadArgs {
    fn arrival_rate(&self, capacity: f64) -> Result<f64> {
        match (self.lambda, self.rho) {
            (Some(l), _) => Ok(l),
            (None, Some(r)) => Ok(r * capacity),
            (None, None) => bail!("an arrival rate is required (--lambda or --rho)"),
        }
    }
}

fn parse_variant(s: &str) -> Result<FormulaVariant, String> {
    s.parse().map_err(|e: qos_core::ModelError| e.to_string())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub capacity: CapacityArgs,
    #[command(flatten)]
    pub load: LoadArgs,
    /// Formula variant: nonneg-v1 or printed-literal.
    #[arg(long, default_value = "nonneg-v1", value_parser = parse_variant)]
    pub variant: FormulaVariant,
    /// Emit one JSON object instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Fixed capacity (packets/s); solves for the largest arrival rate.
    #[arg(long, conflicts_with = "lambda", required_unless_present = "lambda")]
    pub capacity: Option<f64>,
    /// Fixed arrival rate (packets/s); solves for the smallest capacity.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Jitter budget in seconds.
    #[arg(long)]
    pub budget: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServiceArg {
    Exponential,
    Deterministic,
}

impl From<ServiceArg> for ServiceDistribution {
    fn from(s: ServiceArg) -> Self {
        match s {
            ServiceArg::Exponential => ServiceDistribution::ExponentialUnitMean,
            ServiceArg::Deterministic => ServiceDistribution::Deterministic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub capacity: CapacityArgs,
    #[command(flatten)]
    pub load: LoadArgs,
    /// Packets in the system (waiting + in service); unbounded if absent.
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Total packets generated.
    #[arg(long, default_value_t = 1_000_000)]
    pub packets: u64,
    /// Probability that an arrival belongs to the measured flow.
    #[arg(long, default_value_t = qos_core::sim::DEFAULT_TAGGED_FRACTION)]
    pub tagged_fraction: f64,
    /// Leading fraction of packets excluded from statistics.
    #[arg(long, default_value_t = qos_core::sim::DEFAULT_WARMUP_FRACTION)]
    pub warmup: f64,
    #[arg(long, value_enum, default_value_t = ServiceArg::Exponential)]
    pub service: ServiceArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write the per-packet CSV here.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Directory receiving summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 1000.0)]
    pub capacity: f64,
    /// Comma-separated loads.
    #[arg(long, default_value = "0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
    pub grid: String,
    /// Packets per simulation run.
    #[arg(long, default_value_t = 1_000_000)]
    pub packets: u64,
    /// Independent runs per load.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = qos_core::sim::DEFAULT_TAGGED_FRACTION)]
    pub tagged_fraction: f64,
    #[arg(long, default_value_t = qos_core::sim::DEFAULT_WARMUP_FRACTION)]
    pub warmup: f64,
    #[arg(long, default_value = "nonneg-v1", value_parser = parse_variant)]
    pub variant: FormulaVariant,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory receiving validation.csv, runs.csv and the plot data.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Static,
    ConstantSpeed,
    VariableSpeed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario file in key = value form.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Preset duration in seconds.
    #[arg(long, default_value_t = 600)]
    pub duration: u64,
    /// Station distance of the static preset, metres.
    #[arg(long, default_value_t = 1570.0)]
    pub dist: f64,
    /// Speed of the constant-speed preset, km/h.
    #[arg(long, default_value_t = 50.0)]
    pub speed: f64,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output log path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the resolved scenario in key = value form.
    #[arg(long)]
    pub scenario_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Canonical log CSV.
    pub log: PathBuf,
    /// Add per-speed-bin summaries.
    #[arg(long)]
    pub by_speed: bool,
    /// Directory receiving analysis.json, analysis.txt and plot data.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Successful command completion, distinguishing a failed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    ThresholdFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::ThresholdFailed => 2,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Model(a) => cmd_model(&a, out, err),
        Command::Invert(a) => cmd_invert(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Validate(a) => cmd_validate(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
    }
}

const LITERAL_BANNER: &str = "WARNING: printed-literal reduces to -x*exp(-x)/(C - lambda), which is negative \
for every stable load and cannot be a mean absolute delay variation. Shown for comparison only.";

pub fn cmd_model(a: &ModelArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    let capacity = a.capacity.require()?;
    let params = LinkParams::new(capacity, a.load.arrival_rate(capacity)?)?;
    let p = analytical_jitter_with(&params, a.variant);
    let literal = a.variant == FormulaVariant::PrintedLiteral;
    if literal {
        writeln!(err, "{LITERAL_BANNER}")?;
    }
    if a.json {
        let mut record = json!({
            "capacity_pps": params.capacity(),
            "lambda_pps": params.arrival_rate(),
            "rho": params.load(),
            "formula_variant": a.variant.as_str(),
            "jitter_s": p.jitter_seconds,
            "jitter_ms": p.jitter_seconds * 1e3,
        });
        if literal {
            record["warning"] = LITERAL_BANNER.into();
        }
        writeln!(out, "{record}")?;
    } else {
        if literal {
            writeln!(out, "{LITERAL_BANNER}")?;
        }
        writeln!(
            out,
            "C = {} pkt/s, lambda = {} pkt/s, rho = {}, variant {}",
            params.capacity(),
            params.arrival_rate(),
            params.load(),
            a.variant
        )?;
        writeln!(out, "J = {:.6e} s ({:.6} ms)", p.jitter_seconds, p.jitter_seconds * 1e3)?;
    }
    Ok(Outcome::Ok)
}

pub fn cmd_invert(a: &InvertArgs, out: &mut dyn Write) -> Result<Outcome> {
    let (record, text) = match (a.capacity, a.lambda) {
        (Some(capacity), _) => match invert_load_for_jitter(capacity, a.budget)? {
            LoadLimit::Binding { arrival_rate, jitter_seconds } => {
                let check = jitter_for(capacity, arrival_rate)?;
                (
                    json!({"solve": "lambda", "capacity_pps": capacity, "budget_s": a.budget,
                           "constrained": true, "lambda_pps": arrival_rate, "rho": arrival_rate / capacity,
                           "jitter_s": jitter_seconds, "round_trip_rel_error": (check - a.budget).abs() / a.budget}),
                    format!(
                        "largest arrival rate {arrival_rate} pkt/s (rho = {}) gives J = {jitter_seconds:.9e} s\n\
                         round trip: |J - budget| / budget = {:.3e}",
                        arrival_rate / capacity,
                        (check - a.budget).abs() / a.budget
                    ),
                )
            }
            LoadLimit::Unconstrained { arrival_rate, jitter_seconds } => (
                json!({"solve": "lambda", "capacity_pps": capacity, "budget_s": a.budget,
                       "constrained": false, "lambda_pps": arrival_rate, "jitter_s": jitter_seconds}),
                format!(
                    "unconstrained: the budget holds for every stable load up to {arrival_rate} pkt/s \
                     (J = {jitter_seconds:.9e} s there)"
                ),
            ),
        },
        (None, Some(lambda)) => match invert_capacity_for_jitter(lambda, a.budget)? {
            CapacityLimit::Binding { capacity, jitter_seconds } => {
                let check = jitter_for(capacity, lambda)?;
                (
                    json!({"solve": "capacity", "lambda_pps": lambda, "budget_s": a.budget,
                           "constrained": true, "capacity_pps": capacity, "rho": lambda / capacity,
                           "jitter_s": jitter_seconds, "round_trip_rel_error": (check - a.budget).abs() / a.budget}),
                    format!(
                        "smallest capacity {capacity} pkt/s (rho = {}) gives J = {jitter_seconds:.9e} s\n\
                         round trip: |J - budget| / budget = {:.3e}",
                        lambda / capacity,
                        (check - a.budget).abs() / a.budget
                    ),
                )
            }
            CapacityLimit::Unconstrained { capacity, jitter_seconds } => (
                json!({"solve": "capacity", "lambda_pps": lambda, "budget_s": a.budget,
                       "constrained": false, "capacity_pps": capacity, "jitter_s": jitter_seconds}),
                format!(
                    "unconstrained: any capacity above {capacity} pkt/s meets the budget \
                     (J = {jitter_seconds:.9e} s there)"
                ),
            ),
        },
        (None, None) => bail!("either --capacity or --lambda is required"),
    };
    if a.json {
        writeln!(out, "{record}")?;
    } else {
        writeln!(out, "{text}")?;
    }
    Ok(Outcome::Ok)
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let capacity = a.capacity.require()?;
    let config = SimConfig::new(capacity, a.load.arrival_rate(capacity)?)
        .with_buffer(a.buffer)
        .with_packets(a.packets)
        .with_tagged_fraction(a.tagged_fraction)
        .with_warmup(a.warmup)
        .with_service(a.service.into())
        .with_seed(a.seed);
    let (records, summary) = simulate_run(&config)?;
    if let Some(path) = &a.trace_out {
        let file = create(path)?;
        let mut w = BufWriter::new(file);
        write_packet_trace(&records, &mut w)?;
        w.flush()?;
    }
    let record = serde_json::to_string_pretty(&summary)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("summary.json"), &(record.clone() + "\n"))?;
    }
    if a.json {
        writeln!(out, "{record}")?;
        return Ok(Outcome::Ok);
    }
    let s = &summary;
    let buffer = s.buffer_capacity.map_or("unbounded".to_string(), |k| k.to_string());
    for (k, v) in [
        ("capacity_pps", s.capacity.to_string()),
        ("lambda_pps", s.arrival_rate.to_string()),
        ("rho", (s.arrival_rate / s.capacity).to_string()),
        ("buffer", buffer),
        ("service", s.service_distribution.to_string()),
        ("tagged_fraction", s.tagged_fraction.to_string()),
        ("seed", s.seed.to_string()),
        ("offered_packets", s.offered_packets.to_string()),
        ("delivered_packets", s.delivered_packets.to_string()),
        ("observation_s", s.observation_s.to_string()),
        ("mean_sojourn_s", s.mean_sojourn.to_string()),
        ("mean_wait_s", s.mean_wait.to_string()),
        ("empirical_jitter_s", s.empirical_jitter.to_string()),
        ("jitter_samples", s.n_jitter_samples.to_string()),
        ("throughput_pps", s.throughput.to_string()),
        ("offered_lambda_pps", s.offered_lambda.to_string()),
        ("loss", s.loss.to_string()),
    ] {
        writeln!(out, "{k:<18} {v}")?;
    }
    Ok(Outcome::Ok)
}

/// Parses a comma-separated load list; an empty list is a usage error.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("malformed load {s:?} in --grid")))
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        bail!("--grid must list at least one load");
    }
    Ok(grid)
}

pub fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut settings = ValidationSettings::new(a.capacity, parse_grid(&a.grid)?);
    settings.packets = a.packets;
    settings.seeds = a.seeds;
    settings.base_seed = a.seed;
    settings.tagged_fraction = a.tagged_fraction;
    settings.warmup_fraction = a.warmup;
    settings.variant = a.variant;
    settings.threshold = a.threshold;
    let report = run_validation(&settings)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("validation.csv"), &report.to_csv())?;
    write_file(&a.out.join("runs.csv"), &report.runs_csv())?;
    write_file(&a.out.join("j_model.dat"), &report.plot_model())?;
    write_file(&a.out.join("j_sim.dat"), &report.plot_sim())?;

    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report.rows)?)?;
    } else {
        writeln!(
            out,
            "{:>5} {:>9} {:>13} {:>13} {:>11} {:>9}  result",
            "rho", "lambda", "J_model_s", "J_sim_s", "stderr_s", "rel_err"
        )?;
        for r in &report.rows {
            writeln!(
                out,
                "{:>5} {:>9} {:>13.6e} {:>13.6e} {:>11} {:>9.4}  {}",
                r.rho,
                r.lambda,
                r.j_model,
                r.j_sim_mean,
                r.j_sim_stderr.map_or("n/a".into(), |e| format!("{e:.3e}")),
                r.relative_error,
                if r.pass { "pass" } else { "FAIL" }
            )?;
        }
        writeln!(out, "report written to {}", a.out.join("validation.csv").display())?;
    }
    Ok(if report.all_pass() { Outcome::Ok } else { Outcome::ThresholdFailed })
}

fn preset_scenario(a: &SynthArgs, preset: Preset) -> MobilityScenario {
    match preset {
        Preset::Static => MobilityScenario::static_point(a.dist, a.duration),
        Preset::ConstantSpeed => MobilityScenario::constant_speed(a.speed, a.duration),
        Preset::VariableSpeed => MobilityScenario::variable_speed(a.duration),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut scenario = match (&a.scenario, a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_scenario(&text).with_context(|| format!("in scenario {}", path.display()))?
        }
        (None, Some(p)) => preset_scenario(a, p),
        (None, None) => bail!("either --scenario or --preset is required"),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let rows = synth_mobility_trace(&scenario)?;
    if let Some(path) = &a.scenario_out {
        write_file(path, &scenario.to_kv_string())?;
    }
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(create(path)?);
            write_log(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_log(&rows, &mut *out)?,
    }
    Ok(Outcome::Ok)
}

pub fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<Outcome> {
    let file = fs::File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let rows = parse_log(BufReader::new(file)).with_context(|| format!("in {}", a.log.display()))?;
    let report = analyze_log(&rows, a.by_speed)?;
    let text = report.to_text();
    let record = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("analysis.json"), &(record.clone() + "\n"))?;
        write_file(&dir.join("analysis.txt"), &text)?;
        write_file(&dir.join("tput.dat"), &log_plot_data(&rows, |r| r.tput_bps))?;
        write_file(&dir.join("jitter.dat"), &log_plot_data(&rows, |r| r.jitter_ms))?;
        write_file(&dir.join("speed.dat"), &log_plot_data(&rows, |r| r.speed_kmh))?;
    }
    if a.json {
        writeln!(out, "{record}")?;
    } else {
        write!(out, "{text}")?;
    }
    Ok(Outcome::Ok)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
