mod config;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use asyncall::analytics::{self, Property, SpeedupRatioConfig, VerifyReport};
use asyncall::cml::{Origin, Parser as CmlParser, StreamTokenizer, TokenKind};
use asyncall::corpus;
use asyncall::runtime::stub::{StubConfig, StubServer};
use asyncall::runtime::{
    run_session, Clock, Executor, HttpSource, Mode, NextCall, PolicySource, Registry, ScriptSource, SessionConfig,
    ThreadExecutor, TokenSource, Transcript, VirtualClock, VirtualExecutor, WallClock,
};
use asyncall::sim::{self, Arrival, Policy, SimConfig, SweepRow, SweepSpec, SweepTable};
use asyncall::taskmodel::TaskGraph;
use asyncall::traingen::{self, TraceOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, Overrides};

#[derive(Parser)]
#[command(name = "asyncall", version, about = "Asynchronous function calling: markup, simulation, runtime and data tools")]
struct Cli {
    /// Settings file (`key = value` lines, or a JSON object)
    #[arg(long, global = true, env = "ASYNCALL_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    tpot_ms: Option<f64>,
    #[arg(long, global = true)]
    ttft_ms: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `small` or `large`
    #[arg(long, global = true)]
    trap_profile: Option<String>,
    /// Output file; stdout when absent
    #[arg(long, short, global = true)]
    output: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read markup on stdin and print each completed block as a JSON line
    Parse,
    /// Simulate scheduling policies on task graphs
    Simulate(SimulateArgs),
    /// Check the latency properties on random instances
    VerifyTheorems(VerifyArgs),
    /// Generate a fine-tuning dataset as JSON lines
    GenTrain(GenTrainArgs),
    /// Run one session and stream its transcript as JSON lines
    RunLive(RunLiveArgs),
    /// Serve an emulated model over the streaming chat-completion protocol
    StubServer(StubServerArgs),
}

#[derive(Args, Default)]
struct GraphArgs {
    /// Task graph JSON file (repeatable)
    #[arg(long = "graph")]
    graphs: Vec<PathBuf>,
    /// Built-in corpus graph id (repeatable)
    #[arg(long = "builtin")]
    builtins: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    graphs: GraphArgs,
    /// Simulate every `*.json` graph in a directory
    #[arg(long, conflicts_with = "corpus")]
    sweep: Option<PathBuf>,
    /// Sweep the built-in corpus
    #[arg(long)]
    corpus: bool,
    /// Policy to run (repeatable)
    #[arg(long = "policy")]
    policy: Vec<Policy>,
    /// `all`, or a comma-separated policy list
    #[arg(long)]
    policies: Option<String>,
    /// Seeds per graph in a sweep, counting up from --seed
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Redraw execution estimates from uniform(LO, HI) ms per seed
    #[arg(long, value_parser = parse_range)]
    exec_range: Option<(f64, f64)>,
    /// Arrival times in ms, one per graph, when several graphs are given
    #[arg(long, value_delimiter = ',')]
    arrivals: Vec<f64>,
    /// Charge generation time for call wrappers and traps
    #[arg(long)]
    charge_control_tokens: bool,
    /// json, or csv; sweeps default to csv
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Theorem {
    Dominance,
    SpeedupRatio,
    LptOptimal,
}

impl From<Theorem> for Property {
    fn from(t: Theorem) -> Self {
        match t {
            Theorem::Dominance => Property::Dominance,
            Theorem::SpeedupRatio => Property::SpeedupRatio,
            Theorem::LptOptimal => Property::LptOptimal,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Property to check (repeatable); all when absent
    #[arg(long = "theorem", value_enum)]
    theorems: Vec<Theorem>,
    /// Largest set size (dominance, lpt-optimal) or set size (speedup-ratio)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// E/G ratios for speedup-ratio
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
    ratios: Vec<f64>,
    /// Relative error allowed for speedup-ratio
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
}

#[derive(Args)]
struct GenTrainArgs {
    /// Number of samples; seeds count up from --seed
    #[arg(long)]
    count: u64,
    /// Directory of graph files instead of the built-in corpus
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    /// Announce all but the first task of each graph as user interrupts
    #[arg(long)]
    user_interrupts: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LiveMode {
    Scripted,
    NaiveEndpoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum NextArg {
    Lpt,
    Random,
}

#[derive(Args)]
struct RunLiveArgs {
    #[arg(long, value_enum)]
    mode: LiveMode,
    #[command(flatten)]
    graphs: GraphArgs,
    /// Markup file replayed as the model's output (scripted mode)
    #[arg(long)]
    script: Option<PathBuf>,
    /// Call order of the emulated model
    #[arg(long, value_enum, default_value = "lpt")]
    next: NextArg,
    /// Use the wall clock and worker threads (scripted mode)
    #[arg(long)]
    realtime: bool,
    /// Start a bundled stub endpoint for the graph and connect to it
    #[arg(long)]
    stub: bool,
    /// Where the summary report goes; stderr when absent
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StubServerArgs {
    #[command(flatten)]
    graphs: GraphArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

/// A command failure: bad usage (exit 2) or a domain failure (exit 1).
enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Overrides {
        tpot_ms: cli.tpot_ms,
        ttft_ms: cli.ttft_ms,
        seed: cli.seed,
        trap_profile: cli.trap_profile.clone(),
        output: cli.output.clone(),
    };
    let outcome = match Config::resolve(cli.config.as_deref(), |k| std::env::var(k).ok(), &flags) {
        Err(e) => Err(Failure::Usage(format!("{e:#}"))),
        Ok(config) => match cli.command {
            Command::Parse => cmd_parse(),
            Command::Simulate(a) => cmd_simulate(&config, a),
            Command::VerifyTheorems(a) => cmd_verify(&config, a),
            Command::GenTrain(a) => cmd_gen_train(&config, a),
            Command::RunLive(a) => cmd_run_live(&config, a),
            Command::StubServer(a) => cmd_stub_server(&config, a),
        },
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(0.0 < lo && lo <= hi) {
        return Err(format!("need 0 < LO <= HI, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Report wrapper. Only `header` varies between identical runs.
fn envelope(command: &str, config: &Config, params: Value, result: Value) -> Value {
    json!({
        "header": {
            "tool": "asyncall",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "generated_at_unix_ms": now_ms() as u64,
        },
        "config": config,
        "params": params,
        "result": result,
    })
}

fn emit(config: &Config, text: &str) -> anyhow::Result<()> {
    match &config.output {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {path}")),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn load_graphs(args: &GraphArgs, config: &Config) -> anyhow::Result<Vec<(String, TaskGraph)>> {
    let mut out = Vec::new();
    for path in &args.graphs {
        let g = TaskGraph::load(path).with_context(|| path.display().to_string())?;
        out.push((stem(path), g.with_tpot(config.tpot_ms)?));
    }
    if !args.builtins.is_empty() {
        let all = corpus::builtin();
        for id in &args.builtins {
            let (_, g) = all
                .iter()
                .find(|(k, _)| k == id)
                .ok_or_else(|| anyhow!("no built-in graph {id:?}; known: {}", ids(&all)))?;
            out.push((id.clone(), g.with_tpot(config.tpot_ms)?));
        }
    }
    Ok(out)
}

fn load_dir(dir: &Path, config: &Config) -> anyhow::Result<Vec<(String, TaskGraph)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let g = TaskGraph::load(p).with_context(|| p.display().to_string())?;
            Ok((stem(p), g.with_tpot(config.tpot_ms)?))
        })
        .collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ids(graphs: &[(String, TaskGraph)]) -> String {
    graphs.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(", ")
}

fn one_graph(args: &GraphArgs, config: &Config) -> Result<(String, TaskGraph), Failure> {
    let mut graphs = load_graphs(args, config)?;
    if graphs.len() != 1 {
        return Err(usage("give exactly one --graph or --builtin"));
    }
    Ok(graphs.remove(0))
}

// ---------------------------------------------------------------- parse

fn cmd_parse() -> Outcome {
    let stdin = io::stdin().lock();
    let mut out = io::stdout().lock();
    let mut tokenizer = StreamTokenizer::new();
    let mut parser = CmlParser::new();
    let mut feed = |tokens: Vec<asyncall::cml::Token>, out: &mut dyn Write| -> anyhow::Result<()> {
        for tok in tokens {
            if tok.kind == TokenKind::Eos {
                continue;
            }
            let origin = if tok.kind == TokenKind::Intr { Origin::System } else { Origin::Model };
            if let Some(block) = parser.feed(&tok, origin)? {
                writeln!(out, "{}", serde_json::to_string(&block)?)?;
            }
        }
        Ok(())
    };
    for line in stdin.lines() {
        let mut line = line.context("cannot read stdin")?;
        line.push('\n');
        feed(tokenizer.push(&line), &mut out)?;
    }
    feed(tokenizer.finish(), &mut out)?;
    if parser.is_critical() {
        return Err(anyhow!("input ends inside a block").into());
    }
    Ok(0)
}

// ------------------------------------------------------------- simulate

fn policies(args: &SimulateArgs) -> Result<Vec<Policy>, Failure> {
    let mut out = args.policy.clone();
    if let Some(list) = &args.policies {
        if list == "all" {
            out.extend(Policy::ALL);
        } else {
            for p in list.split(',') {
                out.push(p.trim().parse().map_err(usage)?);
            }
        }
    }
    if out.is_empty() {
        out.push(Policy::AsyncLpt);
    }
    out.dedup();
    Ok(out)
}

fn cmd_simulate(config: &Config, args: SimulateArgs) -> Outcome {
    let policies = policies(&args)?;
    let base = SimConfig {
        ttft_ms: config.ttft_ms,
        seed: config.seed,
        charge_control_tokens: args.charge_control_tokens,
        ..Default::default()
    };
    let sweep_source = match (&args.sweep, args.corpus) {
        (Some(dir), _) => Some(load_dir(dir, config)?),
        (None, true) => Some(corpus::builtin().into_iter().map(|(k, g)| Ok((k, g.with_tpot(config.tpot_ms)?))).collect::<anyhow::Result<_>>()?),
        (None, false) => None,
    };
    let mut params = json!({
        "policies": policies,
        "seeds": args.seeds,
        "exec_range_ms": args.exec_range,
        "charge_control_tokens": args.charge_control_tokens,
    });

    if let Some(corpus) = sweep_source {
        if !args.graphs.graphs.is_empty() || !args.graphs.builtins.is_empty() {
            return Err(usage("--sweep/--corpus and --graph/--builtin are exclusive"));
        }
        params["sweep"] = json!(args.sweep.as_ref().map_or("builtin".into(), |d| d.display().to_string()));
        let spec = SweepSpec {
            policies,
            seeds: (0..args.seeds).map(|k| config.seed + k).collect(),
            base,
            exec_range: args.exec_range,
        };
        let table = sim::sweep(&corpus, &spec);
        let failed = !table.failures.is_empty();
        write_table(config, "simulate", params, &table, args.format.unwrap_or(Format::Csv))?;
        for f in &table.failures {
            eprintln!("failed run: {}", serde_json::to_string(f).unwrap_or_default());
        }
        return Ok(u8::from(failed));
    }

    let graphs = load_graphs(&args.graphs, config)?;
    if graphs.is_empty() {
        return Err(usage("give --graph, --builtin, --sweep or --corpus"));
    }
    let arrivals: Vec<Arrival> = if graphs.len() == 1 && args.arrivals.len() <= 1 {
        vec![Arrival { at_ms: args.arrivals.first().copied().unwrap_or(0.0), graph: graphs[0].1.clone() }]
    } else if args.arrivals.len() == graphs.len() {
        graphs.iter().zip(&args.arrivals).map(|((_, g), &at_ms)| Arrival { at_ms, graph: g.clone() }).collect()
    } else {
        return Err(usage(format!("{} graphs need {} --arrivals times", graphs.len(), graphs.len())));
    };
    params["graphs"] = json!(graphs.iter().map(|(k, _)| k).collect::<Vec<_>>());
    params["arrivals_ms"] = json!(arrivals.iter().map(|a| a.at_ms).collect::<Vec<_>>());
    let id = graphs.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join("+");
    let mut table = SweepTable::default();
    let mut reports = Vec::new();
    for policy in policies {
        let r = sim::simulate_arrivals(&arrivals, &base.with_policy(policy)).map_err(|e| anyhow!("{policy}: {e}"))?;
        table.rows.push(SweepRow {
            graph_id: id.clone(),
            policy,
            seed: r.seed,
            makespan_ms: r.makespan_ms,
            tokens_total: r.tokens_total,
            speedup_vs_sync: r.speedup_vs_sync,
        });
        reports.push(r);
    }
    match args.format.unwrap_or(Format::Json) {
        Format::Json => emit(config, &pretty(&envelope("simulate", config, params, json!({ "reports": reports }))))?,
        Format::Csv => write_table(config, "simulate", params, &table, Format::Csv)?,
    }
    Ok(0)
}

fn write_table(config: &Config, command: &str, params: Value, table: &SweepTable, format: Format) -> anyhow::Result<()> {
    match format {
        Format::Json => {
            let result = json!({"rows": table.rows, "failures": table.failures, "summary": table.summary()});
            emit(config, &pretty(&envelope(command, config, params, result)))
        }
        Format::Csv => {
            // comment lines carry the envelope; the header line is the only one that varies
            let env = envelope(command, config, params, Value::Null);
            let text = format!(
                "# header {}\n# config {}\n# params {}\n{}",
                env["header"], env["config"], env["params"],
                table.to_csv()
            );
            emit(config, &text)
        }
    }
}

// ------------------------------------------------------- verify-theorems

const DOMINANCE_TRIALS: usize = 10_000;
const DOMINANCE_MAX_N: usize = 50;
const LPT_TRIALS: usize = 500;
const LPT_MAX_N: usize = 7;
const LPT_EXHAUSTIVE_LIMIT: usize = 8;
const RATIO_N: usize = 10_000;
const RATIO_TRIALS: usize = 20;

fn cmd_verify(config: &Config, args: VerifyArgs) -> Outcome {
    let selected: Vec<Property> = if args.theorems.is_empty() {
        Property::ALL.to_vec()
    } else {
        args.theorems.iter().map(|&t| t.into()).collect()
    };
    if args.n.is_some_and(|n| n < 2) {
        return Err(usage("--n must be at least 2"));
    }
    if args.trials == Some(0) {
        return Err(usage("--trials must be positive"));
    }
    let mut reports: Vec<VerifyReport> = Vec::new();
    let mut params = serde_json::Map::new();
    params.insert("theorems".into(), json!(selected));
    for p in &selected {
        let report = match p {
            Property::Dominance => {
                let (trials, max_n) = (args.trials.unwrap_or(DOMINANCE_TRIALS), args.n.unwrap_or(DOMINANCE_MAX_N));
                params.insert("dominance".into(), json!({"trials": trials, "n_min": 2, "n_max": max_n}));
                analytics::verify_dominance(trials, 2..=max_n, config.seed)
            }
            Property::LptOptimal => {
                let (trials, max_n) = (args.trials.unwrap_or(LPT_TRIALS), args.n.unwrap_or(LPT_MAX_N));
                if max_n > LPT_EXHAUSTIVE_LIMIT {
                    return Err(usage(format!("exhaustive search supports --n up to {LPT_EXHAUSTIVE_LIMIT}")));
                }
                params.insert("lpt_optimal".into(), json!({"trials": trials, "n_min": 2, "n_max": max_n}));
                analytics::verify_lpt_optimal(trials, 2..=max_n, config.seed)
            }
            Property::SpeedupRatio => {
                let cfg = SpeedupRatioConfig {
                    n: args.n.unwrap_or(RATIO_N),
                    e_mean: 110.0,
                    e_sigma: 20.0,
                    g_mean: 110.0,
                    trials: args.trials.unwrap_or(RATIO_TRIALS),
                    seed: config.seed,
                };
                params.insert(
                    "speedup_ratio".into(),
                    json!({"n": cfg.n, "trials": cfg.trials, "e_mean_ms": cfg.e_mean, "e_sigma_ms": cfg.e_sigma,
                           "ratios": args.ratios, "tolerance": args.tolerance}),
                );
                analytics::verify_speedup_ratio(cfg, &args.ratios, args.tolerance).map_err(|e| usage(e.to_string()))?
            }
        };
        reports.push(report);
    }
    let holds = reports.iter().all(|r| r.holds);
    let result = json!({"holds": holds, "reports": reports});
    emit(config, &pretty(&envelope("verify-theorems", config, Value::Object(params), result)))?;
    Ok(u8::from(!holds))
}

// ------------------------------------------------------------- gen-train

fn cmd_gen_train(config: &Config, args: GenTrainArgs) -> Outcome {
    let Some(out) = config.output.clone() else {
        return Err(usage("gen-train needs --output for the dataset"));
    };
    let corpus = match &args.corpus_dir {
        Some(dir) => load_dir(dir, config)?,
        None => corpus::builtin(),
    };
    let seeds: Vec<u64> = (0..args.count).map(|k| config.seed + k).collect();
    let options = TraceOptions { user_interrupts: args.user_interrupts };
    let stats = traingen::emit_dataset(&corpus, &seeds, options, Path::new(&out)).map_err(anyhow::Error::from)?;
    let params = json!({
        "count": args.count,
        "first_seed": config.seed,
        "corpus": args.corpus_dir.as_ref().map_or("builtin".into(), |d| d.display().to_string()),
        "user_interrupts": args.user_interrupts,
    });
    let report = envelope("gen-train", config, params, serde_json::to_value(stats).expect("stats serialize"));
    print!("{}", pretty(&report));
    Ok(0)
}

// -------------------------------------------------------------- run-live

fn cmd_run_live(config: &Config, args: RunLiveArgs) -> Outcome {
    let mut params = json!({"mode": args.mode, "next": args.next, "realtime": args.realtime, "stub": args.stub});
    let next = match args.next {
        NextArg::Lpt => NextCall::Lpt,
        NextArg::Random => NextCall::Random { seed: config.seed },
    };
    let mut session = SessionConfig { ttft_ms: config.ttft_ms, trap_costs: config.trap_costs(), ..Default::default() };
    let graphs = load_graphs(&args.graphs, config)?;
    let mut _server = None;
    let mut http_requests = None;

    let result = match args.mode {
        LiveMode::Scripted => {
            let registry = if graphs.is_empty() {
                Registry::stubs(corpus::builtin().iter().map(|(_, g)| g), args.realtime)
            } else {
                Registry::stubs(graphs.iter().map(|(_, g)| g), args.realtime)
            };
            let mut source: Box<dyn TokenSource> = match (&args.script, graphs.as_slice()) {
                (Some(path), []) => {
                    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                    params["script"] = json!(path.display().to_string());
                    Box::new(ScriptSource::from_text(&text, config.tpot_ms))
                }
                (None, [(id, g)]) => {
                    params["graph"] = json!(id);
                    Box::new(PolicySource::new(g.clone(), next))
                }
                _ => return Err(usage("scripted mode takes --script, or one --graph/--builtin")),
            };
            let (mut clock, mut executor) = clock_and_executor(args.realtime);
            run_session(source.as_mut(), executor.as_mut(), clock.as_mut(), &registry, session)
        }
        LiveMode::NaiveEndpoint => {
            let [(id, graph)] = graphs.as_slice() else {
                return Err(usage("naive-endpoint mode takes one --graph/--builtin"));
            };
            params["graph"] = json!(id);
            let mut endpoint = config.endpoint();
            if args.stub {
                let auth = endpoint.auth_token.clone().map(|t| (endpoint.auth_header.clone(), t));
                let server = StubServer::start(StubConfig {
                    graph: graph.clone(),
                    ttft_ms: config.ttft_ms,
                    tpot_ms: config.tpot_ms,
                    auth,
                })
                .context("cannot start stub endpoint")?;
                endpoint.url = server.url();
                _server = Some(server);
            }
            // the endpoint's own latency is real time; nothing is emulated
            session.mode = Mode::Naive;
            session.ttft_ms = 0.0;
            let all = graph.ids().map(str::to_owned).collect();
            let mut source = HttpSource::new(endpoint, traingen::prompt_for(graph, &all)).map_err(anyhow::Error::from)?;
            let registry = Registry::stubs([graph], true);
            let r = run_session(&mut source, &mut ThreadExecutor::new(None), &mut WallClock::new(), &registry, session);
            http_requests = Some(source.requests());
            r
        }
    };

    let (transcript, error) = match result {
        Ok(t) => (t, None),
        Err(f) => (f.transcript, Some(f.error)),
    };
    emit(config, &transcript.to_jsonl())?;
    let summary = summarize(&transcript, http_requests, error.as_ref().map(|e| e.to_string()));
    let report = pretty(&envelope("run-live", config, params, summary));
    match &args.report {
        Some(path) => fs::write(path, report).with_context(|| format!("cannot write {}", path.display()))?,
        None => eprint!("{report}"),
    }
    match error {
        Some(e) => Err(anyhow!(e).into()),
        None => Ok(0),
    }
}

fn clock_and_executor(realtime: bool) -> (Box<dyn Clock>, Box<dyn Executor>) {
    if realtime {
        (Box::new(WallClock::new()), Box::new(ThreadExecutor::new(None)))
    } else {
        (Box::new(VirtualClock::new()), Box::new(VirtualExecutor::new()))
    }
}

fn summarize(t: &Transcript, requests: Option<u32>, error: Option<String>) -> Value {
    let audit = t.audit();
    json!({
        "makespan_ms": t.makespan_ms(),
        "entries": t.entries.len(),
        "audit": match &audit {
            Ok(a) => json!({"ok": true, "calls": a.calls, "interrupts": a.interrupts, "traps": a.traps}),
            Err(e) => json!({"ok": false, "problem": e.to_string()}),
        },
        "http_requests": requests,
        "error": error,
    })
}

// ----------------------------------------------------------- stub-server

fn cmd_stub_server(config: &Config, args: StubServerArgs) -> Outcome {
    let (_, graph) = one_graph(&args.graphs, config)?;
    let auth = config.endpoint_auth_token.clone().map(|t| (config.endpoint_auth_header.clone(), t));
    let server = StubServer::bind(&args.bind, StubConfig { graph, ttft_ms: config.ttft_ms, tpot_ms: config.tpot_ms, auth })
        .with_context(|| format!("cannot bind {}", args.bind))?;
    println!("listening on {}", server.url());
    io::stdout().flush().ok();
    server.join();
    Ok(0)
}
