use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use factgraph::augment::{augment_corpus, NamePools};
use factgraph::dataset::{load_corpus, Dataset};
use factgraph::eval::{evaluate, top1_rate, training_corpus};
use factgraph::fixture::{fixture_now, generate_kb, planted_corpus, FixtureSize};
use factgraph::generation::{GeneratorClient, GeneratorScorer, HttpGenerator, MockGenerator};
use factgraph::inference::{ground, learn_weights, parse_interpretations, query, query_all, GroundOptions, LearnOptions, QueryOptions};
use factgraph::kg::{DialogueState, Span};
use factgraph::linking::{detect_mentions, link_mentions, DictionaryMatcher, LinkOptions};
use factgraph::par::Parallelism;
use factgraph::pipeline::{Engine, Mode, Session};
use factgraph::relevance::{train, LikelihoodScorer, RelevanceModel, TrainConfig};
use factgraph::rulelang::{desugar, parse_ground_atom, parse_program, CoreProgram, DesugarOptions, PredKey, Program};
use factgraph::value::WeightedFact;
use factgraph_service::ServiceConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "factgraph", version, about = "Knowledge-grounded dialogue engine tooling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Service/engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of rule files; for `infer` and `learn-weights`, a rule file.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Directory of template files.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Facts per prompt.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Probability of ground atoms under a rule program.
    Infer {
        /// Additional rule files, combined with --rules.
        #[arg(long = "program")]
        programs: Vec<PathBuf>,
        /// Facts in rule syntax, or a dataset whose KB supplies them.
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long)]
        query: Vec<String>,
        /// Query every atom of `pred/arity`.
        #[arg(long)]
        all: Vec<String>,
        #[arg(long, default_value_t = factgraph::inference::DEFAULT_MAX_ENUM_FACTS)]
        max_enum_facts: usize,
    },
    /// Replays dialogues and reports entity links per mention.
    Link {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chats with one session; utterances from arguments or stdin lines.
    Respond {
        #[arg(long, default_value = "relevance_logic")]
        mode: String,
        /// Dataset providing the KB; a generated KB otherwise.
        #[arg(long)]
        kb: Option<PathBuf>,
        utterances: Vec<String>,
    },
    /// BLEU and fact selection scores on an annotated corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// A mode or `all`.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Renames entities and shifts dates in a corpus.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON object mapping node kinds to replacement names.
        #[arg(long)]
        names: PathBuf,
        /// New "today", YYYY-MM-DD.
        #[arg(long)]
        date: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the relevance model.
    TrainRelevance {
        #[arg(long, conflicts_with = "planted", required_unless_present = "planted")]
        corpus: Option<PathBuf>,
        /// Use a synthetic planted-signal corpus of this many turns.
        #[arg(long)]
        planted: Option<usize>,
        /// Scoring endpoint; gold fact ids drive a mock scorer otherwise.
        #[arg(long)]
        generator_url: Option<String>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = factgraph::relevance::DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learns `t(_)` weights from partial interpretations.
    LearnWeights {
        #[arg(long = "program")]
        programs: Vec<PathBuf>,
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long)]
        interpretations: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

enum Failure {
    Usage(String),
    Domain(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn header(command: &str, seed: Option<u64>, inputs: &[&Path]) -> Result<Value, Failure> {
    let inputs: Vec<Value> = inputs
        .iter()
        .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
        .collect::<Result<_, Failure>>()?;
    Ok(json!({
        "tool": format!("factgraph {}", env!("CARGO_PKG_VERSION")),
        "command": command,
        "seed": seed,
        "inputs": inputs,
    }))
}

fn write_json(out: Option<&Path>, header: Value, key: &str, payload: Value) -> Outcome {
    let mut doc = serde_json::Map::new();
    doc.insert("header".into(), header);
    doc.insert(key.into(), payload);
    let text = serde_json::to_string_pretty(&Value::Object(doc))? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn corpus(path: &Path) -> Result<Vec<Dataset>, Failure> {
    load_corpus(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn service_config(common: &Common) -> Result<ServiceConfig, Failure> {
    let mut cfg = ServiceConfig::load(common.config.as_deref())?;
    if let Some(r) = &common.rules {
        cfg.rules_dir = Some(r.clone());
    }
    if let Some(t) = &common.templates {
        cfg.templates_dir = Some(t.clone());
    }
    if let Some(k) = common.k {
        cfg.engine.k = k;
    }
    Ok(cfg)
}

fn engine(common: &Common) -> Result<Engine, Failure> {
    let cfg = service_config(common)?;
    Ok(Engine::new(Arc::new(cfg.load_rules()?), cfg.engine.clone(), cfg.clients()?))
}

fn parse_mode(s: &str) -> Result<Mode, Failure> {
    s.parse().map_err(Failure::Usage)
}

/// Rule files from `--rules` (a file or a directory of `.pl` files) and
/// `--program`, plus a `--facts` file in rule syntax.
fn program_files(common: &Common, programs: &[PathBuf], facts: Option<&Path>) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    if let Some(r) = &common.rules {
        if r.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(r)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(r.clone());
        }
    }
    files.extend(programs.iter().cloned());
    if let Some(f) = facts.filter(|f| !is_json(f)) {
        files.push(f.to_path_buf());
    }
    if files.is_empty() {
        return Err(Failure::Usage("no rules given; use --rules FILE or --program FILE".into()));
    }
    Ok(files)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|x| x == "json" || x == "jsonl")
}

fn load_program(paths: &[PathBuf]) -> Result<CoreProgram, Failure> {
    let mut program = Program::default();
    for p in paths {
        let parsed = parse_program(&read(p)?).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?;
        program.clauses.extend(parsed.clauses);
    }
    Ok(desugar(&program, DesugarOptions::default())?)
}

/// KB facts when `--facts` names a dataset.
fn kb_facts(facts: Option<&Path>) -> Result<Vec<WeightedFact>, Failure> {
    match facts.filter(|f| is_json(f)) {
        None => Ok(Vec::new()),
        Some(p) => {
            let data = corpus(p)?;
            let first = data.first().ok_or_else(|| Failure::Domain(format!("{}: empty corpus", p.display())))?;
            Ok(first.initial_state()?.to_facts())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let common = &cli.common;
    match &cli.command {
        Command::Infer { programs, facts, query: queries, all, max_enum_facts } => {
            if queries.is_empty() && all.is_empty() {
                return Err(Failure::Usage("give at least one --query or --all".into()));
            }
            let core = load_program(&program_files(common, programs, facts.as_deref())?)?;
            let gp = ground(&core, &kb_facts(facts.as_deref())?, &GroundOptions::default())?;
            let opts = QueryOptions { max_enum_facts: *max_enum_facts, ..QueryOptions::default() };
            let many = queries.len() + all.len() > 1 || !all.is_empty();
            for q in queries {
                let atom = parse_ground_atom(q).map_err(|e| Failure::Usage(format!("query {q:?}: {e}")))?;
                let p = query(&gp, &atom, &opts)?;
                if many {
                    println!("{atom}\t{p:.9}");
                } else {
                    println!("{p:.9}");
                }
            }
            for spec in all {
                let key = spec
                    .rsplit_once('/')
                    .and_then(|(p, a)| Some(PredKey::new(p, a.parse().ok()?)))
                    .ok_or_else(|| Failure::Usage(format!("--all expects pred/arity, got {spec:?}")))?;
                let r = query_all(&gp, &key, &Default::default(), &opts);
                if let Some(e) = r.errors.into_iter().next() {
                    return Err(e.into());
                }
                for m in r.marginals {
                    println!("{}\t{:.9}", m.atom, m.prob);
                }
            }
            Ok(())
        }
        Command::Link { corpus: path, out } => {
            let cfg = service_config(common)?;
            let rules = cfg.load_rules()?;
            let opts = LinkOptions {
                threshold: cfg.engine.link_threshold,
                query: QueryOptions { max_enum_facts: cfg.engine.max_enum_facts, ..QueryOptions::default() },
                ground: GroundOptions::default(),
                anaphora_reach: cfg.engine.anaphora_reach,
            };
            let mut dialogues = Vec::new();
            for data in corpus(path)? {
                let mut state = data.initial_state()?;
                let mut turns = Vec::new();
                for t in &data.dialogue {
                    let id = state.add_turn(t.speaker, &t.text)?;
                    match &t.mentions {
                        Some(ms) => {
                            for m in ms {
                                let span = Span::new(m.span[0], m.span[1]);
                                let surface = span.slice(&t.text).unwrap_or_default().to_string();
                                state.add_mention(&id, span, &surface)?;
                            }
                        }
                        None => {
                            let d = DictionaryMatcher::from_graph(&state.graph);
                            detect_mentions(&mut state, &id, &d)?;
                        }
                    }
                    let links = link_mentions(&mut state, &rules.linking, &id, &opts)?;
                    let mentions: Vec<Value> = links
                        .iter()
                        .map(|l| {
                            let m = state.mention(&l.mention).expect("linked mention exists");
                            json!({ "mention": l.mention, "surface": m.surface, "span": [m.span.start, m.span.end], "candidates": l.candidates })
                        })
                        .collect();
                    turns.push(json!({ "turn": id, "speaker": t.speaker, "text": t.text, "mentions": mentions }));
                }
                dialogues.push(json!({ "turns": turns }));
            }
            write_json(out.as_deref(), header("link", None, &[path])?, "dialogues", Value::Array(dialogues))
        }
        Command::Respond { mode, kb, utterances } => {
            let mode = parse_mode(mode)?;
            let engine = engine(common)?;
            let state = match kb {
                Some(p) => corpus(p)?.first().ok_or_else(|| Failure::Domain("empty corpus".into()))?.initial_state()?,
                None => {
                    let now = fixture_now();
                    DialogueState::new(generate_kb(common.seed, &now, FixtureSize::default())?, now)?
                }
            };
            let mut session = Session::new(state, mode, common.seed);
            let mut turn = |u: &str| -> Outcome {
                let r = engine.respond(&mut session, u)?;
                println!("{}", serde_json::to_string(&r)?);
                Ok(())
            };
            if utterances.is_empty() {
                for line in std::io::stdin().lock().lines() {
                    let line = line?;
                    if !line.trim().is_empty() {
                        turn(&line)?;
                    }
                }
            } else {
                for u in utterances {
                    turn(u)?;
                }
            }
            Ok(())
        }
        Command::Eval { corpus: path, mode, out } => {
            let modes: Vec<Mode> = if mode == "all" { Mode::ALL.to_vec() } else { vec![parse_mode(mode)?] };
            let engine = engine(common)?;
            let data = corpus(path)?;
            let mut reports = Vec::new();
            for m in modes {
                let r = evaluate(&engine, &data, m, common.seed, Parallelism::default())?;
                eprintln!("{:<16} bleu {:.4}  turns {}", m.as_str(), r.bleu, r.turns);
                reports.push(serde_json::to_value(r)?);
            }
            write_json(out.as_deref(), header("eval", Some(common.seed), &[path])?, "reports", Value::Array(reports))
        }
        Command::Augment { corpus: path, names, date, out } => {
            let pools: NamePools = serde_json::from_str(&read(names)?)?;
            let data = augment_corpus(&corpus(path)?, &pools, date, common.seed)?;
            let h = header("augment", Some(common.seed), &[path, names])?;
            write_json(out.as_deref(), h, "dialogues", serde_json::to_value(data)?)
        }
        Command::TrainRelevance { corpus: path, planted, generator_url, epochs, lr, momentum, hidden, out } => {
            let (turns, mock): (_, MockGenerator) = match (path, planted) {
                (_, Some(n)) => planted_corpus(common.seed, *n, 10),
                (Some(p), None) => training_corpus(&engine(common)?, &corpus(p)?, Mode::RelevanceLogic)?,
                (None, None) => return Err(Failure::Usage("give --corpus or --planted".into())),
            };
            let cfg = service_config(common)?;
            let http;
            let generator: &dyn GeneratorClient = match generator_url {
                Some(url) => {
                    http = HttpGenerator::new(url.clone(), cfg.http.clone())?;
                    &http
                }
                None => &mock,
            };
            let scorer = GeneratorScorer { generator, max_chars: cfg.engine.max_prompt_chars };
            let config = TrainConfig {
                k: cfg.engine.k,
                epochs: *epochs,
                lr: *lr,
                momentum: *momentum,
                seed: common.seed,
            };
            let report = train(RelevanceModel::random(*hidden, common.seed), &turns, &scorer, &config)?;
            let mut doc: Value = serde_json::from_str(&report.model.to_json()?)?;
            let inputs: Vec<&Path> = path.iter().map(PathBuf::as_path).collect();
            doc["header"] = header("train-relevance", Some(common.seed), &inputs)?;
            doc["epoch_loss"] = json!(report.epoch_loss);
            std::fs::write(out, serde_json::to_string_pretty(&doc)? + "\n")?;
            if let Some(last) = report.epoch_loss.last() {
                println!("final mean loss {last:.6}");
            }
            if generator_url.is_none() {
                let gold = |t: &_, c: &_| mock_gold(&scorer, t, c);
                println!("top-1 gold rate {:.4}", top1_rate(&report.model, &turns, &gold));
            }
            Ok(())
        }
        Command::LearnWeights { programs, facts, interpretations, max_iterations, out } => {
            let files = program_files(common, programs, facts.as_deref())?;
            let core = load_program(&files)?;
            let data = parse_interpretations(&read(interpretations)?)?;
            let opts = LearnOptions { max_iterations: *max_iterations, ..LearnOptions::default() };
            let r = learn_weights(&core, &kb_facts(facts.as_deref())?, &data, &opts)?;
            let mut inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
            inputs.push(interpretations);
            inputs.extend(facts.as_deref().filter(|f| is_json(f)));
            let h = header("learn-weights", None, &inputs)?;
            let mut text = format!("% {}\n", h["tool"].as_str().unwrap_or_default());
            text.push_str("% learn-weights\n");
            for i in h["inputs"].as_array().into_iter().flatten() {
                text.push_str(&format!("% input {} sha256 {}\n", i["path"].as_str().unwrap_or_default(), i["sha256"].as_str().unwrap_or_default()));
            }
            text.push_str(&format!("% iterations {}, converged {}\n", r.iterations, r.converged));
            text.push_str(&r.program.to_program().to_string());
            std::fs::write(out, text)?;
            for (param, w) in r.program.params.iter().zip(&r.weights) {
                if param.learnable {
                    println!("clause {}: {w:.6}", r.program.source.clauses[param.clause].line);
                }
            }
            Ok(())
        }
        Command::Serve { port } => {
            let mut cfg = service_config(common)?;
            if let Some(p) = port {
                cfg.port = *p;
            }
            factgraph_service::run(cfg)?;
            Ok(())
        }
    }
}

fn mock_gold(scorer: &GeneratorScorer, t: &factgraph::relevance::TrainTurn, c: &factgraph::relevance::TrainCandidate) -> bool {
    scorer.likelihood(t, c).is_ok_and(|p| p > 0.5)
}
