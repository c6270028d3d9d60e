//! Command-line front end. Exit codes: 0 ok, 1 runtime failure, 2 usage or
//! validation error.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use armkit_core::metrics::Analysis;
use armkit_core::session::{Mode, SessionState};
use armkit_core::stats::{ComparisonReport, StatsError};
use armkit_core::therapy::{Demographics, Limb, PatientId, Sex};
use armkit_core::{Pmv, ScoreReport, TherapyCode};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{analyze_rows, build_rpmvs, generate_score, sidecar_therapy, BuildError, ScoreError};
use crate::driver::{DriverError, SessionConfig, SessionDriver, CALIBRATION_S};
use crate::ingest::run_blocking;
use crate::registry::{PatientRegistry, RegistryError};
use crate::replay::replay_file;
use crate::service::{serve, ServiceConfig};
use crate::sim::{synthesize_session, MotionProfile};
use crate::store::{new_session_id, DataDir, StoreError};
use crate::transport::{write_paced, Endpoint};

#[derive(Debug, Parser)]
#[command(name = "armkit", version, about = "Two-sensor upper-limb motion analytics")]
pub struct Cli {
    /// Root of the data directory.
    #[arg(long, global = true, env = "ARMKIT_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "ARMKIT_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "ARMKIT_DEFAULT_DURATION_S", default_value_t = 180.0)]
        default_duration_s: f64,
    },
    /// Emit a synthetic wearable stream.
    Simulate(SimulateArgs),
    /// Record one session from a wearable stream.
    Record(RecordArgs),
    /// Reference vectors.
    Rpmv {
        #[command(subcommand)]
        command: RpmvCommand,
    },
    /// Score a patient's saved sessions.
    Score {
        patient: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true, value_parser = parse_therapy)]
        therapies: Vec<TherapyCode>,
    },
    /// Rater-agreement statistics.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Summarize a saved session CSV and optionally stream it back out.
    Replay {
        file: PathBuf,
        /// Therapy for the metrics; read from the sidecar when omitted.
        #[arg(long, value_parser = parse_therapy)]
        therapy: Option<TherapyCode>,
        /// Stream the frames as wire records to this endpoint.
        #[arg(long)]
        out: Option<String>,
        /// Multiple of real time for `--out`; 0 runs unpaced.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
    },
    /// Patient registry.
    Patient {
        #[command(subcommand)]
        command: PatientCommand,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_therapy, default_value = "WF")]
    pub therapy: TherapyCode,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub freq_hz: f64,
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drift_deg_per_min: f64,
    /// Still time before the motion.
    #[arg(long, default_value_t = 0.0)]
    pub hold_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50.0)]
    pub rate_hz: f64,
    /// `-`, a file path, or `tcp://host:port`.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Multiple of real time; 0 runs unpaced. Defaults to 1 for TCP, else 0.
    #[arg(long)]
    pub speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long)]
    pub patient: String,
    #[arg(long, value_parser = parse_therapy)]
    pub therapy: TherapyCode,
    #[arg(long, default_value_t = 180.0)]
    pub duration_s: f64,
    #[arg(long, value_parser = parse_serde::<Mode>, default_value = "active")]
    pub mode: Mode,
    #[arg(long, value_parser = parse_serde::<Limb>, default_value = "right")]
    pub arm: Limb,
    /// `-`, a file of wire records, or `tcp://host:port` to listen on.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Throw the recording away instead of saving it.
    #[arg(long)]
    pub discard: bool,
    /// Print live telemetry as NDJSON on stdout.
    #[arg(long)]
    pub live: bool,
}

#[derive(Debug, Subcommand)]
pub enum RpmvCommand {
    /// Build from `<dir>/<subject>/<session>.csv` recordings of healthy subjects.
    Build {
        dir: PathBuf,
        #[arg(long, value_parser = parse_therapy)]
        therapy: Option<TherapyCode>,
    },
    /// Print a stored reference vector.
    Show {
        #[arg(value_parser = parse_therapy)]
        therapy: TherapyCode,
    },
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Recompute the agreement statistics from the bundled score tables.
    Reproduce,
}

#[derive(Debug, Subcommand)]
pub enum PatientCommand {
    Register {
        #[arg(long)]
        name: String,
        #[arg(long)]
        birth_year: i32,
        #[arg(long)]
        age: u32,
        /// F, M or X.
        #[arg(long, value_parser = parse_serde::<Sex>)]
        sex: Sex,
        #[arg(long)]
        uld_months: u32,
        #[arg(long, value_parser = parse_serde::<Limb>)]
        limb: Limb,
    },
    List,
}

fn parse_therapy(s: &str) -> Result<TherapyCode, String> {
    s.parse().map_err(|e: armkit_core::therapy::CatalogError| e.to_string())
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) | StoreError::BadId(_) | StoreError::MissingRpmv(_) | StoreError::Catalog { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => runtime(e),
        }
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Store(s) => s.into(),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Registry(r) => r.into(),
            ScoreError::Store(s) => s.into(),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Store(s) => s.into(),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DriverError> for CliError {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::InvalidDuration(_) => CliError::Usage(e.to_string()),
            DriverError::Store(s) => s.into(),
            e => runtime(e),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        runtime(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let json = cli.json;
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            if json {
                let kind = if e.exit_code() == 2 { "validation" } else { "runtime" };
                println!("{}", json!({ "error": kind, "message": e.message() }));
            }
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let out = Output { json: cli.json };
    match cli.command {
        Command::Serve { listen, default_duration_s } => {
            let config = ServiceConfig { data_dir: cli.data_dir, listen, default_duration_s };
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(serve(config, |addr| {
                out.emit(&json!({ "listening": addr.to_string() }), &format!("listening on http://{addr}"));
            }))
            .map_err(runtime)
        }
        Command::Simulate(args) => simulate(args, out),
        Command::Record(args) => record(&open(&cli.data_dir)?, args, out),
        Command::Rpmv { command } => rpmv(&open(&cli.data_dir)?, command, out),
        Command::Score { patient, therapies } => {
            let (report, path) = generate_score(&open(&cli.data_dir)?, &patient, &therapies, Utc::now())?;
            out.emit(&json!({ "report": report, "stored_at": path }), &score_text(&report, &path));
            Ok(())
        }
        Command::Stats { command: StatsCommand::Reproduce } => stats_reproduce(out),
        Command::Replay { file, therapy, out: dest, speed } => replay(&cli.data_dir, &file, therapy, dest, speed, out),
        Command::Patient { command } => patient(&open(&cli.data_dir)?, command, out),
    }
}

fn open(dir: &Path) -> Result<DataDir, CliError> {
    Ok(DataDir::open(dir)?)
}

#[derive(Clone, Copy)]
struct Output {
    json: bool,
}

impl Output {
    fn emit<T: Serialize>(&self, value: &T, text: &str) {
        if self.json {
            println!("{}", serde_json::to_string(value).expect("serializable"));
        } else {
            println!("{text}");
        }
    }
}

fn simulate(args: SimulateArgs, out: Output) -> Result<(), CliError> {
    let profile = MotionProfile {
        therapy: args.therapy,
        amplitude_fraction: args.amplitude_fraction,
        frequency_hz: args.freq_hz,
        duration_s: args.duration_s,
        noise_std_deg: args.noise_deg,
        drift_deg_per_min: args.drift_deg_per_min,
        sample_rate_hz: args.rate_hz,
        hold_s: args.hold_s,
    };
    let sim = synthesize_session(profile, &armkit_core::Catalog::builtin(), args.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let amplitude = sim.amplitude_deg();
    let endpoint = Endpoint::parse(&args.out);
    let speed = args.speed.unwrap_or(if matches!(endpoint, Endpoint::Tcp(_)) { 1.0 } else { 0.0 });
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(CliError::Usage("speed must be zero or positive".into()));
    }
    let writer = endpoint.open_writer().map_err(|e| runtime(format!("{}: {e}", args.out)))?;
    let samples = write_paced(writer, sim.records(), speed).map_err(runtime)?;
    let summary = json!({
        "therapy": args.therapy,
        "amplitude_deg": amplitude,
        "samples": samples,
        "seed": args.seed,
        "out": args.out,
    });
    let text = format!("{samples} samples of {} at {amplitude:.2} deg amplitude -> {}", args.therapy, args.out);
    // The stream itself may be on stdout.
    if endpoint == Endpoint::Stdio {
        eprintln!("{}", if out.json { summary.to_string() } else { text });
    } else {
        out.emit(&summary, &text);
    }
    Ok(())
}

fn record(data: &DataDir, args: RecordArgs, out: Output) -> Result<(), CliError> {
    let patient = PatientRegistry::new(data).get(&args.patient)?;
    let catalog = data.load_catalog()?;
    let config = SessionConfig {
        patient_id: PatientId(patient.patient_id.0),
        therapy: args.therapy,
        mode: args.mode,
        arm: args.arm,
        duration_s: args.duration_s,
    };
    let mut driver = SessionDriver::new(new_session_id(args.therapy, Utc::now()), config, &catalog)?;
    driver.handle(armkit_core::session::SessionEvent::Connect)?;
    let endpoint = Endpoint::parse(&args.input);
    let input = endpoint
        .open_reader(|addr| eprintln!("waiting for the wearable on tcp://{addr}"))
        .map_err(|e| runtime(format!("{}: {e}", args.input)))?;
    let live = args.live;
    let ingest = run_blocking(&mut driver, input, |d| {
        for t in d.drain() {
            if live {
                println!("{}", serde_json::to_string(&t).expect("serializable"));
            } else if let crate::driver::TelemetryKind::Warning { message } = &t.kind {
                eprintln!("warning: {message}");
            }
        }
    })?;
    if driver.state() != SessionState::Stopped {
        let why = driver.status().last_error.unwrap_or_else(|| "stream ended early".into());
        return Err(runtime(format!(
            "session ended in {:?} before running (needs {CALIBRATION_S} s calibration and a countdown): {why}",
            driver.state()
        )));
    }
    let rows = driver.row_count();
    let stop_reason = driver.stop_reason();
    let (outcome, record) = if args.mode == Mode::Passive {
        driver.handle(armkit_core::session::SessionEvent::Abort)?;
        ("not kept (passive)", None)
    } else if args.discard {
        driver.discard()?;
        ("discarded", None)
    } else {
        let meta = driver.save(&data.sessions())?;
        ("saved", Some(meta))
    };
    let csv = record.as_ref().map(|m| data.sessions().csv_path(&m.session_id));
    let summary = json!({
        "session_id": driver.id(),
        "rows": rows,
        "stop_reason": stop_reason,
        "outcome": outcome,
        "bad_lines": ingest.bad_lines(),
        "csv": csv,
        "record": record,
    });
    let mut text = format!("{}: {rows} rows, stopped by {stop_reason:?}, {outcome}", driver.id());
    if let Some(m) = &record {
        text += &format!("\n{}", pmv_text(&m.pmv));
    }
    out.emit(&summary, &text);
    Ok(())
}

fn rpmv(data: &DataDir, command: RpmvCommand, out: Output) -> Result<(), CliError> {
    match command {
        RpmvCommand::Build { dir, therapy } => {
            let built = build_rpmvs(&dir, &data.load_catalog()?, therapy, Utc::now())?;
            let store = data.rpmvs();
            let mut lines = Vec::new();
            let mut paths = Vec::new();
            for r in &built {
                let path = store.save(r)?;
                let note = if r.below_design { "  (below 5 subjects x 5 sessions)" } else { "" };
                lines.push(format!(
                    "{}: {} subjects, {} sessions -> {}{note}",
                    r.rpmv.therapy,
                    r.subjects,
                    r.sessions,
                    path.display()
                ));
                paths.push(path);
            }
            out.emit(&json!({ "built": built, "paths": paths }), &lines.join("\n"));
        }
        RpmvCommand::Show { therapy } => {
            let r = data.rpmvs().load(therapy)?;
            let comps: Vec<String> =
                Pmv::NAMES.iter().zip(r.rpmv.components.iter()).map(|(n, v)| format!("{n:>7} {v:.6}")).collect();
            let text = format!(
                "{} from {} subjects / {} sessions, created {}\n{}",
                therapy,
                r.subjects,
                r.sessions,
                r.created_at.to_rfc3339(),
                comps.join("\n")
            );
            out.emit(&r, &text);
        }
    }
    Ok(())
}

fn score_text(report: &ScoreReport, path: &Path) -> String {
    format!("{}\n{}\n{}\nstored at {}", report.table_column(), ScoreReport::csv_header(), report.csv_row(), path.display())
}

/// One line of the reproduction table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, target: f64, tolerance: f64) -> Self {
        Check { name, value, target, tolerance, pass: (value - target).abs() <= tolerance }
    }
}

/// The published agreement figures and their tolerances.
pub fn reproduction_checks(r: &ComparisonReport) -> Vec<Check> {
    vec![
        Check::new("system mean", r.mean_system, 6.19, 0.005),
        Check::new("therapist mean", r.mean_pt, 6.38, 0.005),
        Check::new("pearson r", r.regression.r, 0.9885, 0.002),
        Check::new("r squared", r.regression.r_squared, 0.9771, 0.004),
        Check::new("|t|", r.t_test.t.abs(), 1.39, 0.05),
        Check::new("t df", r.t_test.df, 15.0, 0.0),
        Check::new("t p (two-tailed)", r.t_test.p_two_tailed, 0.184, 0.015),
        Check::new("F", r.f_test.f, 1.05, 0.03),
        Check::new("min deviation %", r.deviation_min, -16.67, 0.01),
        Check::new("max deviation %", r.deviation_max, 10.00, 0.01),
    ]
}

fn stats_reproduce(out: Output) -> Result<(), CliError> {
    let report = ComparisonReport::reproduce()?;
    let checks = reproduction_checks(&report);
    let mut text = String::new();
    for c in &checks {
        text += &format!(
            "{}  {:<18} {:>9.4}  (expected {} ± {})\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.target,
            c.tolerance
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    text += &format!("{} of {} checks passed", checks.len() - failed, checks.len());
    out.emit(&json!({ "report": report, "checks": checks, "passed": failed == 0 }), &text);
    if failed > 0 {
        return Err(runtime(format!("{failed} statistics outside tolerance")));
    }
    Ok(())
}

fn replay(
    data_dir: &Path,
    file: &Path,
    therapy: Option<TherapyCode>,
    dest: Option<String>,
    speed: f64,
    out: Output,
) -> Result<(), CliError> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(CliError::Usage("speed must be zero or positive".into()));
    }
    let replay = replay_file(file, speed).map_err(|e| CliError::Usage(e.to_string()))?;
    let therapy = match therapy {
        Some(t) => Some(t),
        None => sidecar_therapy(file)?,
    };
    let analysis: Option<Analysis> = match therapy {
        Some(code) => {
            let catalog = if data_dir.is_dir() { DataDir::open(data_dir)?.load_catalog()? } else { Default::default() };
            Some(analyze_rows(replay.rows(), catalog.lookup(code)).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        None => None,
    };
    let sent = match &dest {
        Some(d) => {
            let w = Endpoint::parse(d).open_writer().map_err(|e| runtime(format!("{d}: {e}")))?;
            Some(replay.play(w).map_err(runtime)?)
        }
        None => None,
    };
    let rows = replay.rows();
    let span_ms = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b.t_ms - a.t_ms,
        _ => 0,
    };
    let summary = json!({
        "file": file,
        "rows": rows.len(),
        "span_ms": span_ms,
        "therapy": therapy,
        "pmv": analysis.as_ref().map(|a| a.pmv),
        "cycles": analysis.as_ref().map(|a| a.cycles.peaks.len()),
        "samples_sent": sent,
    });
    let mut text = format!("{}: {} rows over {:.2} s", file.display(), rows.len(), span_ms as f64 / 1000.0);
    if let (Some(code), Some(a)) = (therapy, &analysis) {
        text += &format!("\n{code}, {} cycles\n{}", a.cycles.peaks.len(), pmv_text(&a.pmv));
    }
    if let (Some(n), Some(d)) = (sent, &dest) {
        text += &format!("\n{n} samples sent to {d}");
    }
    // Keep stdout clean when it carries the stream.
    if dest.as_deref() == Some("-") {
        eprintln!("{}", if out.json { summary.to_string() } else { text });
    } else {
        out.emit(&summary, &text);
    }
    Ok(())
}

fn pmv_text(p: &Pmv) -> String {
    Pmv::NAMES
        .iter()
        .zip(p.to_array())
        .map(|(n, v)| format!("{n}={v:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn patient(data: &DataDir, command: PatientCommand, out: Output) -> Result<(), CliError> {
    let registry = PatientRegistry::new(data);
    match command {
        PatientCommand::Register { name, birth_year, age, sex, uld_months, limb } => {
            let record = registry.register(Demographics {
                full_name: name,
                birth_year,
                age_years: age,
                sex,
                uld_duration_months: uld_months,
                affected_limb: limb,
            })?;
            out.emit(&record, &format!("registered {}", record.patient_id));
        }
        PatientCommand::List => {
            let all = registry.list()?;
            let text = all
                .iter()
                .map(|r| {
                    let d = &r.demographics;
                    format!("{:<6} {:<28} {:>3}  {:?}  {:?}", r.patient_id.0, d.full_name, d.age_years, d.sex, d.affected_limb)
                })
                .collect::<Vec<_>>()
                .join("\n");
            out.emit(&all, &text);
        }
    }
    let _ = io::stdout().flush();
    Ok(())
}
