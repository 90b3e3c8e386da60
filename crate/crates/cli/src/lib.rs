//! Batch front end: validate input files, run traces headlessly, analyze
//! nets and launch the session service.
//!
//! Every command returns its process exit code. Humans read stdout;
//! machine-readable results go to files, and diagnostics go to stderr as
//! one JSON object per line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use tuftwin_core::activity::{
    close_with_environment, demonstrator_net, settled_predicate, validate_definitions,
    ActivityDefinition, EnvironmentModel,
};
use tuftwin_core::analysis::{analyze_with, AbstractMarking, AnalysisReport, TerminalPredicate};
use tuftwin_core::par::Exploration;
use tuftwin_core::petri::{Net, NetDefinition};
use tuftwin_core::session::{debrief, parse_trace, run_trace, ScenarioSpec, Session, SessionError};
use tuftwin_server::{AppState, ServerConfig};

pub const EXIT_OK: u8 = 0;
/// The input could not be read, parsed or processed.
pub const EXIT_FAILURE: u8 = 1;
/// Analysis ran and found deadlocks, dead transitions or hit a bound.
pub const EXIT_PROBLEMS: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tuftwin", version, about = "Tufting-machine operator training simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a net, scenario or activity-list file.
    Validate { path: PathBuf },
    /// Run an operator trace against a scenario and write log, snapshot and debrief.
    Simulate(SimulateArgs),
    /// Explore the reachability graph of a net or of a scenario's activity nets.
    Analyze(AnalyzeArgs),
    /// Export the composed activity nets of a scenario or activity list.
    Net(NetArgs),
    /// Run the HTTP/WebSocket session service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    pub trace: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// How activity inputs are closed before analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    /// Activities offered one after another in task-list order.
    #[default]
    Sequential,
    /// Every activity offered independently.
    Concurrent,
    /// No environment: the composed nets as they are.
    None,
}

impl Environment {
    fn model(self) -> Option<EnvironmentModel> {
        match self {
            Environment::Sequential => Some(EnvironmentModel::Sequential),
            Environment::Concurrent => Some(EnvironmentModel::Concurrent),
            Environment::None => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Net file, scenario file or activity list.
    pub input: PathBuf,
    /// Markings with more than this many tokens in one place are not expanded.
    #[arg(long, default_value_t = 5)]
    pub k: u32,
    /// Maximum number of graph nodes.
    #[arg(long, default_value_t = 1_000_000)]
    pub m: usize,
    /// Terminal marking predicate not counted as a deadlock, e.g. `done=1 & busy=0`. Repeatable.
    #[arg(long = "allow-terminal", value_name = "PREDICATE")]
    pub allow_terminal: Vec<String>,
    /// Also write the graph in DOT format to this file.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Directory for analysis.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Environment used to close activity inputs; ignored for net files.
    #[arg(long, value_enum, default_value_t = Environment::Sequential)]
    pub environment: Environment,
    /// Expand the frontier on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Scenario file or activity list.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Environment::None)]
    pub environment: Environment,
    /// Write here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Load every `*.json` scenario in this directory at startup.
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    /// Advance running sessions by one tick at this period.
    #[arg(long)]
    pub auto_tick_ms: Option<u64>,
    /// Write one `<session_id>.jsonl` log per session here.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> u8 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    match cli.command {
        Command::Validate { path } => cmd_validate(&path, &mut out, &mut err),
        Command::Simulate(a) => cmd_simulate(&a.scenario, &a.trace, &a.out, &mut out, &mut err),
        Command::Analyze(a) => cmd_analyze(&a, &mut out, &mut err),
        Command::Net(a) => cmd_net(&a, &mut out, &mut err),
        Command::Serve(a) => {
            drop(out);
            drop(err);
            cmd_serve(&a)
        }
    }
}

/// A parsed input file.
#[derive(Debug, Clone)]
pub enum Document {
    Net(NetDefinition),
    Scenario(ScenarioSpec),
    Activities(Vec<ActivityDefinition>),
}

impl Document {
    pub fn kind(&self) -> &'static str {
        match self {
            Document::Net(_) => "net",
            Document::Scenario(_) => "scenario",
            Document::Activities(_) => "activities",
        }
    }

    /// Task list of scenario and activity inputs.
    pub fn activities(&self) -> Option<&[ActivityDefinition]> {
        match self {
            Document::Net(_) => None,
            Document::Scenario(s) => Some(&s.activities),
            Document::Activities(a) => Some(a),
        }
    }
}

/// Why an input file was rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<&'static str>,
    pub errors: Vec<String>,
}

impl Diagnostics {
    fn new(path: &Path, kind: Option<&'static str>, errors: Vec<String>) -> Self {
        Diagnostics {
            path: path.display().to_string(),
            kind,
            errors,
        }
    }

    fn emit(&self, err: &mut dyn Write) {
        let _ = writeln!(err, "{}", json!({ "valid": false, "diagnostics": self }));
    }
}

/// Reads a file and decides what it is from its top-level shape: an object
/// with `net_id` is a net, one with `scenario_id` a scenario, and an array
/// (or an object holding only `activities`) an activity list.
pub fn load_document(path: &Path) -> Result<Document, Diagnostics> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Diagnostics::new(path, None, vec![format!("cannot read: {e}")]))?;
    if text.trim().is_empty() {
        return Err(Diagnostics::new(path, None, vec!["file is empty".into()]));
    }
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Diagnostics::new(path, None, vec![format!("parse: {e}")]))?;
    let fail = |kind, errors| Diagnostics::new(path, Some(kind), errors);
    match &value {
        Value::Object(o) if o.contains_key("net_id") => {
            let def: NetDefinition =
                serde_json::from_value(value).map_err(|e| fail("net", vec![format!("parse: {e}")]))?;
            Net::from_definition(&def).map_err(|e| fail("net", vec![e.to_string()]))?;
            Ok(Document::Net(def))
        }
        Value::Object(o) if o.contains_key("scenario_id") => {
            let spec = ScenarioSpec::from_json(&text).map_err(|e| fail("scenario", session_errors(e)))?;
            Session::new("validate", Arc::new(spec.clone()))
                .map_err(|e| fail("scenario", session_errors(e)))?;
            Ok(Document::Scenario(spec))
        }
        Value::Array(_) => activities(path, value),
        Value::Object(o) if o.len() == 1 && o.contains_key("activities") => {
            activities(path, value["activities"].clone())
        }
        _ => Err(Diagnostics::new(
            path,
            None,
            vec!["not a net (`net_id`), scenario (`scenario_id`) or activity list".into()],
        )),
    }
}

fn activities(path: &Path, value: Value) -> Result<Document, Diagnostics> {
    let fail = |e: String| Diagnostics::new(path, Some("activities"), vec![e]);
    let defs: Vec<ActivityDefinition> =
        serde_json::from_value(value).map_err(|e| fail(format!("parse: {e}")))?;
    validate_definitions(&defs).map_err(|e| fail(e.to_string()))?;
    demonstrator_net(&defs).map_err(|e| fail(e.to_string()))?;
    Ok(Document::Activities(defs))
}

fn session_errors(e: SessionError) -> Vec<String> {
    match e {
        SessionError::ScenarioInvalid(d) => d,
        other => vec![other.to_string()],
    }
}

pub fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match load_document(path) {
        Ok(doc) => {
            let detail = match &doc {
                Document::Net(d) => format!(
                    "net `{}`: {} places, {} transitions",
                    d.net_id,
                    d.places.len(),
                    d.transitions.len()
                ),
                Document::Scenario(s) => {
                    format!("scenario `{}`: {} activities", s.scenario_id, s.activities.len())
                }
                Document::Activities(a) => format!("activity list: {} activities", a.len()),
            };
            let _ = writeln!(out, "{}: valid {detail}", path.display());
            EXIT_OK
        }
        Err(d) => {
            d.emit(err);
            EXIT_FAILURE
        }
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn write_file(dir: &Path, name: &str, text: &str, err: &mut dyn Write) -> bool {
    let path = dir.join(name);
    match std::fs::write(&path, text) {
        Ok(()) => true,
        Err(e) => {
            let _ = writeln!(err, "{}", json!({ "error": format!("cannot write {}: {e}", path.display()) }));
            false
        }
    }
}

/// Writes `log.jsonl` with its metadata header, and `snapshot.json`.
fn write_session(dir: &Path, s: &Session, err: &mut dyn Write) -> bool {
    let meta = json!({ "meta": {
        "session_id": s.id(),
        "scenario_id": s.scenario().scenario_id,
        "created_unix_ms": unix_ms(),
    }});
    let log = format!("{meta}\n{}", s.log_jsonl());
    write_file(dir, "log.jsonl", &log, err) & write_file(dir, "snapshot.json", &s.snapshot_json(), err)
}

/// Parses and applies one trace line at a time, so a bad line stops the
/// run after everything before it has been applied.
fn apply_trace(s: &mut Session, text: &str) -> Result<(), SessionError> {
    for (i, line) in text.lines().enumerate() {
        let at_line = |e: SessionError| match e {
            SessionError::Trace { message, .. } => SessionError::Trace { line: i + 1, message },
            other => other,
        };
        let step = parse_trace(line).map_err(at_line)?;
        run_trace(s, &step).map_err(at_line)?;
    }
    Ok(())
}

/// Runs `trace` against the scenario in a session named `sim`, then
/// finishes it and writes `log.jsonl`, `snapshot.json` and `debrief.json`
/// to `out_dir`. When a trace line fails, the log and snapshot up to that
/// line are still written.
pub fn cmd_simulate(
    scenario: &Path,
    trace: &Path,
    out_dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> u8 {
    let spec = match load_document(scenario) {
        Ok(Document::Scenario(s)) => Arc::new(s),
        Ok(other) => {
            Diagnostics::new(scenario, Some(other.kind()), vec!["expected a scenario file".into()]).emit(err);
            return EXIT_FAILURE;
        }
        Err(d) => {
            d.emit(err);
            return EXIT_FAILURE;
        }
    };
    let text = match std::fs::read_to_string(trace) {
        Ok(t) => t,
        Err(e) => {
            Diagnostics::new(trace, Some("trace"), vec![format!("cannot read: {e}")]).emit(err);
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        let _ = writeln!(err, "{}", json!({ "error": format!("cannot create {}: {e}", out_dir.display()) }));
        return EXIT_FAILURE;
    }

    let mut s = match Session::new("sim", spec) {
        Ok(s) => s,
        Err(e) => {
            Diagnostics::new(scenario, Some("scenario"), session_errors(e)).emit(err);
            return EXIT_FAILURE;
        }
    };
    let result = s
        .start()
        .and_then(|_| apply_trace(&mut s, &text))
        .and_then(|_| s.finish());
    if let Err(e) = result {
        write_session(out_dir, &s, err);
        let _ = writeln!(err, "{}", json!({ "error": e.to_string(), "tick": s.now(), "partial": true }));
        return EXIT_FAILURE;
    }
    let report = match debrief(s.id(), s.scenario().clone(), s.log()) {
        Ok(d) => d,
        Err(e) => {
            write_session(out_dir, &s, err);
            let _ = writeln!(err, "{}", json!({ "error": e.to_string() }));
            return EXIT_FAILURE;
        }
    };
    let text = serde_json::to_string_pretty(&report).expect("debriefs always serialize");
    if !(write_session(out_dir, &s, err) & write_file(out_dir, "debrief.json", &text, err)) {
        return EXIT_FAILURE;
    }

    let _ = writeln!(
        out,
        "{} ticks, {} log records, success: {}",
        report.final_tick,
        s.log().len(),
        report.success
    );
    for a in &report.activities {
        let _ = write!(out, "  {:<16} {:?}", a.activity_id, a.state);
        for e in &a.errors {
            let _ = write!(out, "  [{} at tick {}]", e.error_id, e.tick);
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "outputs in {}", out_dir.display());
    EXIT_OK
}

/// The net to analyze and the predicates that accept its intended terminal
/// markings.
pub fn analysis_input(
    doc: &Document,
    environment: Environment,
) -> Result<(Net, Vec<TerminalPredicate>), String> {
    if let Document::Net(def) = doc {
        return Net::from_definition(def).map(|n| (n, Vec::new())).map_err(|e| e.to_string());
    }
    let defs = doc.activities().expect("activity inputs have a task list");
    let composed = demonstrator_net(defs).map_err(|e| e.to_string())?;
    match environment.model() {
        Some(model) => {
            let closed = close_with_environment(&composed, defs, model).map_err(|e| e.to_string())?;
            Ok((closed, vec![settled_predicate(defs)]))
        }
        None => Ok((composed, Vec::new())),
    }
}

#[derive(Debug, Serialize)]
struct AnalysisFile<'a> {
    input_kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    environment: Option<Environment>,
    allow_terminal: Vec<String>,
    #[serde(flatten)]
    report: &'a AnalysisReport,
}

/// Analyzes the input and returns the report together with the text of
/// `analysis.json`. Only inputs that cannot be analyzed are errors.
pub fn run_analysis(args: &AnalyzeArgs) -> Result<(AnalysisReport, String, String), Diagnostics> {
    let doc = load_document(&args.input)?;
    let fail = |e: String| Diagnostics::new(&args.input, Some(doc.kind()), vec![e]);
    if args.k == 0 || args.m == 0 {
        return Err(fail("--k and --m must be at least 1".into()));
    }
    let (net, mut allow) = analysis_input(&doc, args.environment).map_err(fail)?;
    for text in &args.allow_terminal {
        let p: TerminalPredicate = text.parse().map_err(|e| fail(format!("--allow-terminal: {e}")))?;
        p.validate(&net).map_err(|e| fail(format!("--allow-terminal `{text}`: {e}")))?;
        allow.push(p);
    }
    let strategy = if args.sequential {
        Exploration::Sequential
    } else {
        Exploration::Parallel
    };
    let init = AbstractMarking::initial(&net);
    let (graph, report) = analyze_with(&net, &init, args.k, args.m, &allow, strategy);
    let file = AnalysisFile {
        input_kind: doc.kind(),
        environment: doc.activities().map(|_| args.environment),
        allow_terminal: allow.iter().map(|p| p.to_string()).collect(),
        report: &report,
    };
    let json = serde_json::to_string_pretty(&file).expect("reports always serialize");
    Ok((report, json, graph.to_dot()))
}

/// Exit 0 when the graph is complete, deadlock-free outside the allowlist
/// and every transition fires somewhere; 2 when analysis found problems; 1
/// when it could not run.
pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let (report, json, dot) = match run_analysis(args) {
        Ok(r) => r,
        Err(d) => {
            d.emit(err);
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        let _ = writeln!(err, "{}", json!({ "error": format!("cannot create {}: {e}", args.out.display()) }));
        return EXIT_FAILURE;
    }
    if !write_file(&args.out, "analysis.json", &format!("{json}\n"), err) {
        return EXIT_FAILURE;
    }
    if let Some(path) = &args.dot {
        if let Err(e) = std::fs::write(path, dot) {
            let _ = writeln!(err, "{}", json!({ "error": format!("cannot write {}: {e}", path.display()) }));
            return EXIT_FAILURE;
        }
    }

    let _ = writeln!(
        out,
        "{}: {} markings, {} edges, max {} tokens per place (k = {})",
        report.net_id, report.nodes, report.edges, report.max_tokens_per_place, report.k
    );
    if let Some(t) = &report.truncation {
        let _ = writeln!(out, "truncated: {t}");
    }
    let _ = writeln!(out, "deadlocks: {}", report.deadlocks.len());
    for d in report.deadlocks.iter().take(5) {
        let marked: Vec<String> = d
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(p, n)| format!("{p}={n}"))
            .collect();
        let _ = writeln!(out, "  {}", marked.join(" "));
    }
    let _ = writeln!(out, "non-quasi-live transitions: {}", report.non_quasi_live.len());
    for t in &report.non_quasi_live {
        let _ = writeln!(out, "  {t}");
    }
    let _ = writeln!(out, "bounded: {}", report.bounded);
    if report.clean() && !report.truncated {
        EXIT_OK
    } else {
        EXIT_PROBLEMS
    }
}

pub fn cmd_net(args: &NetArgs, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let doc = match load_document(&args.input) {
        Ok(d @ (Document::Scenario(_) | Document::Activities(_))) => d,
        Ok(d) => {
            Diagnostics::new(&args.input, Some(d.kind()), vec!["expected a scenario or activity list".into()])
                .emit(err);
            return EXIT_FAILURE;
        }
        Err(d) => {
            d.emit(err);
            return EXIT_FAILURE;
        }
    };
    let net = match analysis_input(&doc, args.environment) {
        Ok((n, _)) => n,
        Err(e) => {
            Diagnostics::new(&args.input, Some(doc.kind()), vec![e]).emit(err);
            return EXIT_FAILURE;
        }
    };
    let text = format!("{}\n", net.to_definition().to_json_pretty());
    let written = match &args.output {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{}", json!({ "error": e }));
            EXIT_FAILURE
        }
    }
}

/// Serves until Ctrl-C or SIGTERM. Prints `listening on http://<addr>`
/// once bound.
pub fn cmd_serve(args: &ServeArgs) -> u8 {
    let fail = |msg: String| {
        eprintln!("{}", json!({ "error": msg }));
        EXIT_FAILURE
    };
    let addr: SocketAddr = match args.addr.parse() {
        Ok(a) => a,
        Err(e) => return fail(format!("invalid address `{}`: {e}", args.addr)),
    };
    let auto_tick = match args.auto_tick_ms {
        Some(0) => return fail("--auto-tick-ms must be positive".into()),
        ms => ms.map(Duration::from_millis),
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let config = ServerConfig {
        scenario_dir: args.scenario_dir.clone(),
        log_dir: args.log_dir.clone(),
        auto_tick,
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(format!("cannot start runtime: {e}")),
    };
    runtime.block_on(async {
        let state = match AppState::new(config) {
            Ok(s) => s,
            Err(e) => return fail(e.to_string()),
        };
        let listener = match tokio::net::TcpListener::bind(addr).await {
            Ok(l) => l,
            Err(e) => return fail(format!("cannot bind {addr}: {e}")),
        };
        let bound = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| args.addr.clone());
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        match tuftwin_server::serve_on(listener, state, tuftwin_server::shutdown_signal()).await {
            Ok(()) => EXIT_OK,
            Err(e) => fail(e.to_string()),
        }
    })
}
