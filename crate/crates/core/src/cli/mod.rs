//! Command-line front end.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_VIOLATIONS`] (validation violations or a
//! failed input), [`EXIT_CONFIG`], [`EXIT_SCORER`], [`EXIT_EMPTY`].

pub mod config;
pub mod grid;
pub mod metrics;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fixtures::DevItem;
use crate::merge::{Branch, MergeBreakdown};
use crate::protocol::{serve, serve_tcp, to_frame, LogProb, Service};
use crate::rerank::{read_nbest, select_best, write_nbest, NBestEntry, ScorerSelector, Selector};
use crate::scoring::{ModelInput, Scorer};
use crate::search::{decode, decode_online, EnsembleConfig, Masking, Mode, TraceBeam, TraceEvent};
use crate::tokenization::Tokenizer;
use config::{env_endpoints, load_selector, Knobs, RunConfig, SelectorSpec};
use grid::{default_alphas, grid_search, scored_nbest, Metric};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SCORER: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

/// Exit code for an error that ends a command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_scorer_failure() {
        EXIT_SCORER
    } else {
        match e {
            Error::UncoverableCharacter { .. }
            | Error::ForeignToken(_)
            | Error::EosNotFinal(_)
            | Error::TokenizationDisagreement { .. } => EXIT_VIOLATIONS,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wordfuse", version, about = "Word-level online ensembling of a generator and a ranker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode every line of an input file; one JSON record per line.
    Decode(DecodeArgs),
    /// Re-rank fixed N-best lists at each alpha and report the best.
    GridSearch(GridArgs),
    /// Print the merge trace of a single payload.
    Explain(ExplainArgs),
    /// Check vocabulary files for round-trip and word-boundary violations.
    Validate(ValidateArgs),
    /// Expose a configured model or selector over the line protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Online,
    Offline,
    GeneratorOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MaskingArg {
    Discard,
    NegInfinity,
}

#[derive(Debug, Args)]
pub struct SearchFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset applied over the config file.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub beams: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub nbest: Option<usize>,
    #[arg(long, value_enum)]
    pub masking: Option<MaskingArg>,
}

impl SearchFlags {
    fn knobs(&self, workers: Option<usize>) -> Knobs {
        Knobs {
            mode: self.mode.map(|m| match m {
                ModeArg::Online => Mode::Online,
                ModeArg::Offline => Mode::Offline,
                ModeArg::GeneratorOnly => Mode::GeneratorOnly,
            }),
            alpha: self.alpha,
            topk: self.topk,
            beams: self.beams,
            max_len: self.max_len,
            nbest: self.nbest,
            workers,
            trace: None,
            masking: self.masking.map(|m| match m {
                MaskingArg::Discard => Masking::Discard,
                MaskingArg::NegInfinity => Masking::NegInfinity,
            }),
        }
    }

    fn resolve(&self, workers: Option<usize>) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.preset.as_deref(), &self.knobs(workers), env_endpoints())
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub search: SearchFlags,
    /// One payload per line; `-` reads standard input.
    #[arg(long)]
    pub input: PathBuf,
    /// JSONL destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Inputs decoded concurrently; output order always follows input order.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Add `wall_ms` to each record (output is then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Also write the N-best lists as TSV.
    #[arg(long)]
    pub nbest_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub search: SearchFlags,
    /// JSONL lines of `{"payload": ..., "reference": ...}`.
    #[arg(long)]
    pub dev: PathBuf,
    /// Comma-separated weights; 0.0 to 1.0 in steps of 0.1 by default.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "exact_match")]
    pub metric: Metric,
    /// Pre-generated N-best TSV with ranker scores, one list per dev line
    /// (`input_id` = line index). Decoded with the generator when omitted.
    #[arg(long)]
    pub nbest_file: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub search: SearchFlags,
    /// The payload to decode.
    pub payload: String,
    /// Print the raw trace records as JSONL.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Vocabulary files to check.
    #[arg(required = true)]
    pub vocab: Vec<PathBuf>,
    /// Extra sentences to round-trip, one per line.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Maximum number of vocabulary words checked per file.
    #[arg(long, default_value_t = 10_000)]
    pub limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServeRole {
    Generator,
    Ranker,
    Selector,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub role: ServeRole,
    /// `host:port` to listen on; standard input/output when omitted. The
    /// bound address is printed on standard error.
    #[arg(long)]
    pub listen: Option<String>,
    /// Exit after this many TCP connections have closed.
    #[arg(long)]
    pub max_connections: Option<usize>,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Decode(a) => cmd_decode(&a, out, err),
        Command::GridSearch(a) => cmd_grid_search(&a, out),
        Command::Explain(a) => cmd_explain(&a, out),
        Command::Validate(a) => cmd_validate(&a, out),
        Command::Serve(a) => cmd_serve(&a, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::file(path, e))?))
}

/// The models a run needs. The ranker is never loaded in generator-only mode.
struct Models {
    generator: Box<dyn Scorer>,
    ranker: Option<Box<dyn Scorer>>,
    selector: Option<Box<dyn Selector>>,
    select_with_ranker: bool,
}

impl Models {
    fn load(cfg: &RunConfig) -> Result<Models> {
        let generator = cfg.load_generator()?;
        let ranker = match cfg.ensemble.mode {
            Mode::GeneratorOnly => None,
            _ => Some(cfg.load_ranker()?),
        };
        let (selector, select_with_ranker) = match &cfg.selector {
            None => (None, false),
            Some(SelectorSpec::Ranker) if ranker.is_none() => {
                return Err(Error::Config("selector kind \"ranker\" needs a ranker, which generator_only mode never loads".into()))
            }
            Some(spec) => (load_selector(spec)?, matches!(spec, SelectorSpec::Ranker)),
        };
        Ok(Models { generator, ranker, selector, select_with_ranker })
    }

    fn selector(&self) -> Option<Box<dyn Selector + '_>> {
        if self.select_with_ranker {
            let ranker = self.ranker.as_deref().expect("checked at load");
            Some(Box::new(ScorerSelector { scorer: ranker }))
        } else {
            self.selector.as_ref().map(|s| Box::new(SelRef(s.as_ref())) as Box<dyn Selector>)
        }
    }
}

struct SelRef<'a>(&'a dyn Selector);

impl Selector for SelRef<'_> {
    fn identity(&self) -> &str {
        self.0.identity()
    }

    fn score(&self, input: &ModelInput, surfaces: &[String]) -> Result<Vec<f64>> {
        self.0.score(input, surfaces)
    }
}

#[derive(Serialize)]
struct EntryRecord<'a> {
    rank: usize,
    surface: &'a str,
    gen_score: LogProb,
    ranker_score: Option<LogProb>,
    merged: LogProb,
    selector_score: Option<LogProb>,
    origin: &'a str,
}

fn entry_records(entries: &[NBestEntry]) -> Vec<EntryRecord<'_>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| EntryRecord {
            rank: i + 1,
            surface: &e.surface,
            gen_score: LogProb(e.gen_score),
            ranker_score: e.ranker_score.map(LogProb),
            merged: LogProb(e.merged),
            selector_score: e.selector_score.map(LogProb),
            origin: &e.origin,
        })
        .collect()
}

/// Outcome of one input line.
struct Decoded {
    record: Value,
    entries: Vec<NBestEntry>,
    failure: Option<i32>,
}

fn decode_one(id: usize, payload: &str, models: &Models, cfg: &RunConfig, timing: bool) -> Decoded {
    let started = Instant::now();
    let mode = cfg.ensemble.mode;
    let mut record = json!({ "input_id": id, "payload": payload, "mode": mode });
    let gen_input = ModelInput::generator(payload);
    let rank_input = ModelInput::ranker(payload);
    let result = decode(
        models.generator.as_ref(),
        models.ranker.as_deref(),
        (&gen_input, &rank_input),
        &cfg.search_config(),
    )
    .and_then(|mut out| {
        out.entries.truncate(cfg.nbest);
        let selection = match (models.selector(), out.entries.is_empty()) {
            (Some(sel), false) => Some(select_best(&out.entries, sel.as_ref(), &rank_input)?),
            _ => None,
        };
        Ok((out, selection))
    });
    let obj = record.as_object_mut().expect("record is an object");
    let (entries, failure) = match result {
        Ok((out, selection)) => {
            let entries = match &selection {
                Some(s) => s.entries.clone(),
                None => out.entries,
            };
            obj.insert("completed".into(), json!(out.decode.completed));
            obj.insert("steps".into(), json!(out.decode.steps));
            obj.insert("stop".into(), json!(out.decode.stop));
            obj.insert("calls".into(), json!(out.decode.calls));
            obj.insert("nbest".into(), serde_json::to_value(entry_records(&entries)).expect("entries serialize"));
            let selected = selection.map(|s| {
                json!({
                    "surface": s.best.surface,
                    "selector_score": s.best.selector_score.map(LogProb),
                    "fallback": s.fallback,
                })
            });
            obj.insert("selected".into(), selected.unwrap_or(Value::Null));
            let failure = (!out.decode.completed || entries.is_empty()).then_some(EXIT_EMPTY);
            (entries, failure)
        }
        Err(e) => {
            obj.insert("error".into(), json!(e.to_string()));
            (Vec::new(), Some(exit_code(&e)))
        }
    };
    if timing {
        obj.insert("wall_ms".into(), json!(started.elapsed().as_secs_f64() * 1e3));
    }
    Decoded { record, entries, failure }
}

/// Most severe first: scorer failure, other failures, empty output.
fn combine(codes: impl Iterator<Item = i32>) -> i32 {
    let codes: Vec<i32> = codes.collect();
    for code in [EXIT_SCORER, EXIT_CONFIG, EXIT_VIOLATIONS, EXIT_EMPTY] {
        if codes.contains(&code) {
            return code;
        }
    }
    EXIT_OK
}

fn cmd_decode(a: &DecodeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = a.search.resolve(a.workers)?;
    cfg.ensemble.validate(usize::MAX)?;
    let text = read_text(&a.input)?;
    let payloads: Vec<&str> = text.lines().collect();
    let models = Models::load(&cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Decoded> = pool.install(|| {
        payloads.par_iter().enumerate().map(|(i, p)| decode_one(i, p, &models, &cfg, a.timing)).collect()
    });

    let mut body = String::new();
    for r in &results {
        body.push_str(&to_frame(&r.record));
        body.push('\n');
    }
    match &a.output {
        Some(path) => std::fs::write(path, body).map_err(|e| Error::file(path, e))?,
        None => out.write_all(body.as_bytes())?,
    }
    if let Some(path) = &a.nbest_file {
        let lists: Vec<(String, Vec<NBestEntry>)> =
            results.iter().enumerate().map(|(i, r)| (i.to_string(), r.entries.clone())).collect();
        write_nbest(create(path)?, &lists)?;
    }
    for (i, r) in results.iter().enumerate() {
        if let Some(e) = r.record.get("error").and_then(Value::as_str) {
            writeln!(err, "input {i}: {e}")?;
        }
    }
    Ok(combine(results.iter().filter_map(|r| r.failure)))
}

fn read_dev(path: &Path) -> Result<Vec<DevItem>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn cmd_grid_search(a: &GridArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.search.resolve(None)?;
    let dev = read_dev(&a.dev)?;
    let alphas = if a.alphas.is_empty() { default_alphas() } else { a.alphas.clone() };
    for &alpha in &alphas {
        crate::merge::check_alpha(alpha)?;
    }
    let lists = match &a.nbest_file {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
            let mut by_id: std::collections::HashMap<String, Vec<NBestEntry>> = read_nbest(file)?.into_iter().collect();
            (0..dev.len()).map(|i| by_id.remove(&i.to_string()).unwrap_or_default()).collect()
        }
        None => {
            let generator = cfg.load_generator()?;
            let ranker = cfg.load_ranker()?;
            let search = EnsembleConfig { beams: cfg.nbest, mode: Mode::GeneratorOnly, ..cfg.ensemble.clone() };
            scored_nbest(generator.as_ref(), ranker.as_ref(), &dev, &search)?
        }
    };
    let report = grid_search(&lists, &dev, &alphas, a.metric)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes"))?;
    } else {
        writeln!(out, "alpha\texact_match\ttoken_f1\tavg_merged")?;
        for row in &report.rows {
            writeln!(out, "{:.2}\t{:.4}\t{:.4}\t{:.6}", row.alpha, row.exact_match, row.token_f1, row.avg_merged)?;
        }
        writeln!(out, "best_alpha\t{:.2}", report.best_alpha)?;
    }
    Ok(EXIT_OK)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

fn fmt_beams(beams: &[TraceBeam]) -> String {
    if beams.is_empty() {
        return "(none)".into();
    }
    beams.iter().map(|b| format!("{:?} {:.6}", b.surface, b.score)).collect::<Vec<_>>().join(", ")
}

/// One line describing a merged score.
pub fn describe_breakdown(b: &MergeBreakdown) -> String {
    match b.branch {
        Branch::Finished => format!(
            "finished   n={} m={} full_g={} full_r={} merged={:.6}",
            b.n,
            b.m,
            fmt_opt(b.full_g),
            fmt_opt(b.full_r),
            b.merged
        ),
        Branch::Unfinished if b.j == 0 => format!(
            "unfinished n={} j=0 (no completed word: generator mean) merged={:.6}",
            b.n, b.merged
        ),
        Branch::Unfinished => format!(
            "unfinished n={} j={} m={} k={} prev_g={} prev_r={} prev_gr={} last_g={} merged={:.6}",
            b.n,
            b.j,
            b.m,
            b.k,
            fmt_opt(b.prev_g),
            fmt_opt(b.prev_r),
            fmt_opt(b.prev_gr),
            fmt_opt(b.last_g),
            b.merged
        ),
    }
}

/// Human-readable rendering of a decode trace.
pub fn render_trace(events: &[TraceEvent]) -> String {
    let mut s = String::new();
    for ev in events {
        match ev {
            TraceEvent::Step { step, live } => {
                let _ = writeln!(s, "step {step}: live {}", fmt_beams(live));
            }
            TraceEvent::Merge { beam, token, surface, score, masked, breakdown, .. } => {
                let detail = match (masked, breakdown) {
                    (true, _) => "masked (outside topk) merged=-inf".to_string(),
                    (false, Some(b)) => {
                        let next = b.ranker_next.as_deref().map(|t| format!(" ranker_next={t:?}")).unwrap_or_default();
                        format!("{}{next}", describe_breakdown(b))
                    }
                    (false, None) => format!("generator mean={score:.6}"),
                };
                let _ = writeln!(s, "  beam {beam} + {token:?} -> {surface:?}: {detail}");
            }
            TraceEvent::Select { completed, live, .. } => {
                let _ = writeln!(s, "  completed: {}", fmt_beams(completed));
                let _ = writeln!(s, "  kept: {}", fmt_beams(live));
            }
        }
    }
    s
}

fn cmd_explain(a: &ExplainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.search.resolve(None)?;
    let generator = cfg.load_generator()?;
    let ranker = cfg.load_ranker()?;
    let search = EnsembleConfig { trace: true, mode: Mode::Online, ..cfg.ensemble.clone() };
    let output = decode_online(
        generator.as_ref(),
        ranker.as_ref(),
        (&ModelInput::generator(a.payload.as_str()), &ModelInput::ranker(a.payload.as_str())),
        &search,
    )?;
    if a.json {
        for ev in &output.trace {
            writeln!(out, "{}", to_frame(ev))?;
        }
    } else {
        writeln!(
            out,
            "payload {:?}: generator {} ranker {} alpha={} topk={} beams={}",
            a.payload,
            generator.identity(),
            ranker.identity(),
            search.alpha,
            search.topk,
            search.beams
        )?;
        out.write_all(render_trace(&output.trace).as_bytes())?;
        match output.best() {
            Some(h) => writeln!(out, "best: {:?} {:.6} (completed={})", h.surface, h.score, output.completed)?,
            None => writeln!(out, "best: (none)")?,
        }
    }
    Ok(if output.completed { EXIT_OK } else { EXIT_EMPTY })
}

fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let samples: Vec<String> = match &a.samples {
        Some(p) => read_text(p)?.lines().map(str::to_string).collect(),
        None => Vec::new(),
    };
    let mut clean = true;
    for path in &a.vocab {
        let tok = Tokenizer::from_file(path)?;
        let report = tok.validate(&samples, a.limit);
        clean &= report.is_clean();
        let line = json!({
            "vocab": path.display().to_string(),
            "clean": report.is_clean(),
            "report": report,
        });
        writeln!(out, "{}", to_frame(&line))?;
    }
    Ok(if clean { EXIT_OK } else { EXIT_VIOLATIONS })
}

fn cmd_serve(a: &ServeArgs, err: &mut dyn Write) -> Result<i32> {
    // Endpoint variables are ignored so a served model never resolves to itself.
    let cfg = RunConfig::resolve(Some(&a.config), None, &Knobs::default(), Default::default())?;
    let scorer;
    let selector: Box<dyn Selector + '_>;
    let service = match a.role {
        ServeRole::Generator => {
            scorer = cfg.load_generator()?;
            Service::Scorer(scorer.as_ref())
        }
        ServeRole::Ranker => {
            scorer = cfg.load_ranker()?;
            Service::Scorer(scorer.as_ref())
        }
        ServeRole::Selector => {
            let spec = cfg.selector.as_ref().ok_or_else(|| Error::Config("no [selector] section".into()))?;
            selector = match load_selector(spec)? {
                Some(s) => s,
                None => {
                    scorer = cfg.load_ranker()?;
                    Box::new(ScorerSelector { scorer: scorer.as_ref() })
                }
            };
            Service::Selector(selector.as_ref())
        }
    };
    match &a.listen {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr).map_err(|e| Error::Config(format!("listen {addr}: {e}")))?;
            writeln!(err, "listening on {}", listener.local_addr()?)?;
            err.flush()?;
            serve_tcp(service, listener, a.max_connections)?;
        }
        None => {
            let stdin = std::io::stdin();
            serve(service, BufReader::new(stdin.lock()), std::io::stdout().lock())?;
        }
    }
    Ok(EXIT_OK)
}

/// Convenience for tests and examples: run with captured output.
pub fn run_captured<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(args, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}
