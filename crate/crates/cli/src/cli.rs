//! Command-line interface.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sellkit_core::config::AppConfig;
use sellkit_core::jsonl;
use sellkit_core::llm::mean_judge_score;
use sellkit_core::metrics::{evaluate_benchmark, BenchRecord};
use sellkit_core::prompt::default_rubric;
use sellkit_core::retrieval::{build_library, LibraryBuildError, LibraryRecord};
use sellkit_core::sell::{self, CardNode};
use sellkit_core::synth::{
    check_answer, demand_examples, emit_corpus, generate_demand, generate_reasoning, load_weights,
    reasoning_seeds, run_capped, synthesize_answers, AnswerOutcome, CorpusMode, RejectReason,
    Rejection, Source, SynthAnswer, SynthError, TrainSample,
};
use sellkit_core::targeting::{
    export_segment, export_segment_to_path, select_users, synthetic_users, ExportFormat, UserDb,
};

use crate::app::{tag_index, Resources};
use crate::error::{CmdResult, Failure};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout(), $($arg)*)?
    };
}

#[derive(Debug, Parser)]
#[command(
    name = "sellkit",
    version,
    about = "Translate marketer demands into SELL and work with the results"
)]
pub struct Cli {
    /// Config file. Defaults to ./sellkit.toml when present, built-in
    /// defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random choice (synthesis, random demonstrations).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse SELL and print its canonical form (`-` reads stdin).
    Parse { sell: String },
    /// Print the SELL expression of a card JSON file (`-` reads stdin).
    Print { card: String },
    /// Check SELL against the tag catalog; exits 1 when issues are found.
    Validate { sell: String },
    /// Print the logic skeleton of SELL.
    Structure { sell: String },
    /// Translate demands with the analogical prompt and the configured model.
    Translate(TranslateArgs),
    /// Rank catalog tags against a query.
    Tags {
        query: String,
        #[arg(short, long)]
        n: Option<usize>,
    },
    /// Validate and embed library records into a reasoning library file.
    BuildLibrary {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training-data synthesis.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score predictions against a test set.
    Eval(EvalArgs),
    /// List the users a SELL expression selects.
    Select {
        sell: String,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        /// Overrides `service.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// A single demand.
    #[arg(long, conflicts_with = "input")]
    pub demand: Option<String>,
    /// JSONL of `{id, demand}`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSONL output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Template-driven SELL answers.
    Answers {
        #[arg(long)]
        count: usize,
        /// JSON array of 19 template weights; round-robin when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a demand for each synthesized answer.
    Demands {
        #[arg(long)]
        answers: PathBuf,
        /// Library examples per prompt.
        #[arg(long, default_value_t = 3)]
        examples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Review queue for answers the model produced no demand for.
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Demand to answer with the analogical prompt; bad answers go to review.
    Distill {
        #[arg(long)]
        demands: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Fill in four-step reasoning for samples that lack it.
    Reasoning {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Emit the training corpus.
    Corpus {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "multitask")]
        mode: CorpusMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A synthetic user database over the catalog.
    Users {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub testset: PathBuf,
    /// Also ask the configured model to grade each prediction.
    #[arg(long)]
    pub judge: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Demand input line for `translate` and `synth distill`.
#[derive(Debug, Clone, Deserialize)]
pub struct DemandLine {
    #[serde(default)]
    pub id: Option<String>,
    pub demand: String,
}

#[derive(Debug, Serialize)]
pub struct TranslateLine {
    pub id: String,
    #[serde(flatten)]
    pub translation: crate::app::Translation,
    pub prompt: String,
}

pub fn load_config(path: Option<&Path>) -> CmdResult<AppConfig> {
    let default = Path::new("sellkit.toml");
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None if default.exists() => Ok(AppConfig::load(default)?),
        None => {
            let cfg = AppConfig::default();
            cfg.check()?;
            Ok(cfg)
        }
    }
}

fn read_arg(arg: &str) -> CmdResult<String> {
    if arg == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(arg.to_string())
    }
}

fn output(path: Option<&Path>) -> CmdResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(path: Option<&Path>, items: &[T]) -> CmdResult {
    let mut w = output(path)?;
    jsonl::to_writer(&mut w, items)?;
    w.flush()?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> CmdResult {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_sell(text: &str) -> CmdResult<sell::SellExpr> {
    Ok(sell::parse(text)?)
}

pub fn run(cli: Cli) -> CmdResult {
    let config = load_config(cli.config.as_deref())?;
    let json = cli.json;
    let seed = cli.seed;
    match cli.command {
        Command::Parse { sell } => {
            let expr = parse_sell(&read_arg(&sell)?)?;
            if json {
                print_json(&json!({ "sell": sell::print(&expr), "card": sell::to_card(&expr) }))
            } else {
                out!("{}", sell::print(&expr));
                Ok(())
            }
        }
        Command::Print { card } => {
            let text = if card == "-" {
                read_arg("-")?
            } else {
                fs::read_to_string(&card)?
            };
            let card: CardNode = serde_json::from_str(&text)?;
            let sell = sell::print(&sell::from_card(&card)?);
            if json {
                print_json(&json!({ "sell": sell }))
            } else {
                out!("{sell}");
                Ok(())
            }
        }
        Command::Validate { sell } => {
            let catalog = config.load_catalog()?;
            let expr = parse_sell(&read_arg(&sell)?)?;
            let report = sell::validate(&expr, &catalog);
            if json {
                print_json(&report)?;
            } else if report.ok {
                out!("ok");
            } else {
                for issue in &report.issues {
                    out!("{:?} at {:?}: {}", issue.code, issue.path, issue.message);
                }
            }
            if report.ok {
                Ok(())
            } else {
                Err(Failure::domain(anyhow::anyhow!(
                    "{} validation issue(s)",
                    report.issues.len()
                )))
            }
        }
        Command::Structure { sell } => {
            let skeleton = sell::extract_structure(&parse_sell(&read_arg(&sell)?)?);
            if json {
                print_json(&json!({ "skeleton": skeleton }))
            } else {
                out!("{skeleton}");
                Ok(())
            }
        }
        Command::Translate(args) => translate(config, seed, args),
        Command::Tags { query, n } => {
            let catalog = config.load_catalog()?;
            let embedder = config.embedder()?;
            let index = tag_index(&catalog, &*embedder)?;
            let hits = index.search(&query, n.unwrap_or(config.retrieval.n), &*embedder)?;
            if json {
                print_json(&hits)
            } else {
                for h in hits {
                    out!("{:.4}  {}", h.score, h.item);
                }
                Ok(())
            }
        }
        Command::BuildLibrary { input, out } => {
            let catalog = config.load_catalog()?;
            let embedder = config.embedder()?;
            let records: Vec<LibraryRecord> = jsonl::read(&input)?;
            match build_library(&records, &catalog, &*embedder) {
                Ok(lib) => {
                    lib.save(&out)?;
                    if json {
                        print_json(
                            &json!({ "entries": lib.len(), "embedder_version": embedder.version() }),
                        )?;
                    } else {
                        eprintln!("{} entries written to {}", lib.len(), out.display());
                    }
                    Ok(())
                }
                Err(LibraryBuildError::Rejected(rejections)) => {
                    for r in &rejections {
                        eprintln!("record {} ({}): {:?}", r.index, r.id, r.reason);
                    }
                    if json {
                        print_json(&rejections)?;
                    }
                    Err(Failure::domain(anyhow::anyhow!(
                        "{} record(s) rejected",
                        rejections.len()
                    )))
                }
            }
        }
        Command::Synth(cmd) => synth(config, seed, json, cmd),
        Command::Eval(args) => eval(config, json, args),
        Command::Select { sell, format, out } => {
            let catalog = config.load_catalog()?;
            let users = config.load_users(catalog)?;
            let ids = select_users(&parse_sell(&read_arg(&sell)?)?, &users)?;
            match (&out, json) {
                (Some(p), _) => {
                    export_segment_to_path(&ids, format, p)?;
                    eprintln!("{} users written to {}", ids.len(), p.display());
                }
                (None, true) => print_json(&json!({ "count": ids.len(), "user_ids": ids }))?,
                (None, false) => {
                    let mut w = output(None)?;
                    export_segment(&ids, format, &mut w)?;
                    w.flush()?;
                }
            }
            Ok(())
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| config.service.bind.clone());
            let resources = Resources::load(config, true, seed)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(Arc::new(resources), &bind))?;
            Ok(())
        }
    }
}

fn read_demands(path: &Path) -> CmdResult<Vec<DemandLine>> {
    let mut lines: Vec<DemandLine> = jsonl::read(path)?;
    for (i, l) in lines.iter_mut().enumerate() {
        l.id.get_or_insert_with(|| format!("d{i:04}"));
    }
    Ok(lines)
}

fn translate(config: AppConfig, seed: Option<u64>, args: TranslateArgs) -> CmdResult {
    let demands = match (&args.demand, &args.input) {
        (Some(d), None) => vec![DemandLine {
            id: Some("d0000".into()),
            demand: d.clone(),
        }],
        (None, Some(p)) => read_demands(p)?,
        _ => {
            return Err(Failure::domain(anyhow::anyhow!(
                "give either --demand or --input"
            )))
        }
    };
    let res = Resources::load(config, false, seed)?;
    let threads = res.config.llm.max_in_flight;
    let results = run_capped(&demands, threads, |_, d| res.translate(&d.demand));
    let mut lines = Vec::with_capacity(results.len());
    for (d, r) in demands.into_iter().zip(results) {
        let translation = r?;
        lines.push(TranslateLine {
            id: d.id.unwrap_or_default(),
            prompt: translation.prompt.rendered.clone(),
            translation,
        });
    }
    write_jsonl(args.out.as_deref(), &lines)?;
    let failed = lines
        .iter()
        .filter(|l| l.translation.sell.is_none())
        .count();
    if args.out.is_some() {
        eprintln!(
            "{} translated, {} unparseable",
            lines.len() - failed,
            failed
        );
    }
    Ok(())
}

fn synth(config: AppConfig, seed: Option<u64>, json: bool, cmd: SynthCommand) -> CmdResult {
    let seed = seed.unwrap_or(0);
    let summary = |what: &str, kept: usize, rejected: usize| -> CmdResult {
        if json {
            print_json(&json!({ "kind": what, "written": kept, "rejected": rejected }))
        } else {
            eprintln!("{what}: {kept} written, {rejected} rejected");
            Ok(())
        }
    };
    match cmd {
        SynthCommand::Answers {
            count,
            weights,
            out,
        } => {
            let catalog = config.load_catalog()?;
            let weights = weights.as_deref().map(load_weights).transpose()?;
            let answers = synthesize_answers(&catalog, count, seed, weights.as_deref())?;
            write_jsonl(out.as_deref(), &answers)?;
            if out.is_some() {
                summary("answers", answers.len(), 0)?;
            }
            Ok(())
        }
        SynthCommand::Demands {
            answers,
            examples,
            out,
            rejected,
        } => {
            let res = Resources::load(config, false, Some(seed))?;
            let answers: Vec<SynthAnswer> = jsonl::read(&answers)?;
            let results = run_capped(&answers, res.config.llm.max_in_flight, |_, a| {
                let expr = sell::parse(&a.sell).map_err(|e| SynthError::InvalidSample {
                    id: a.id.clone(),
                    message: e.to_string(),
                })?;
                let demos = demand_examples(&res.library, &expr, examples);
                match generate_demand(&expr, &demos, &res.instructions, &res.gateway) {
                    Ok(g) => Ok(Ok(TrainSample {
                        id: a.id.clone(),
                        demand: g.demand,
                        sell: a.sell.clone(),
                        reasoning: None,
                        source: Source::AnswerToDemand,
                        verified: false,
                    })),
                    Err(SynthError::EmptyCompletion) => Ok(Err(Rejection {
                        id: a.id.clone(),
                        demand: String::new(),
                        completion: String::new(),
                        reason: RejectReason::Empty,
                    })),
                    Err(e) => Err(e),
                }
            });
            let (kept, dropped) = split(results)?;
            write_jsonl(out.as_deref(), &kept)?;
            if let Some(p) = rejected.as_deref() {
                write_jsonl(Some(p), &dropped)?;
            }
            summary("demands", kept.len(), dropped.len())
        }
        SynthCommand::Distill {
            demands,
            out,
            rejected,
        } => {
            let res = Resources::load(config, false, Some(seed))?;
            let demands = read_demands(&demands)?;
            let results = run_capped(&demands, res.config.llm.max_in_flight, |_, d| {
                let id = d.id.clone().unwrap_or_default();
                let t = res.translate(&d.demand)?;
                Ok(match check_answer(&t.completion, &res.catalog) {
                    AnswerOutcome::Accepted(expr) => Ok(TrainSample {
                        id,
                        demand: t.demand,
                        sell: sell::print(&expr),
                        reasoning: None,
                        source: Source::DemandToAnswer,
                        verified: false,
                    }),
                    AnswerOutcome::Rejected(reason) => Err(Rejection {
                        id,
                        demand: t.demand,
                        completion: t.completion,
                        reason,
                    }),
                })
            });
            let (kept, dropped) = split(results)?;
            write_jsonl(out.as_deref(), &kept)?;
            if let Some(p) = rejected.as_deref() {
                write_jsonl(Some(p), &dropped)?;
            }
            summary("distilled", kept.len(), dropped.len())
        }
        SynthCommand::Reasoning {
            samples,
            seeds,
            out,
            rejected,
        } => {
            let res = Resources::load(config, false, Some(seed))?;
            let samples: Vec<TrainSample> = jsonl::read(&samples)?;
            let results = run_capped(&samples, res.config.llm.max_in_flight, |_, s| {
                if s.reasoning.is_some() {
                    return Ok(Ok(s.clone()));
                }
                let expr = sell::parse(&s.sell).map_err(|e| SynthError::InvalidSample {
                    id: s.id.clone(),
                    message: e.to_string(),
                })?;
                let demos = reasoning_seeds(&res.library, &expr, seeds);
                match generate_reasoning(&s.demand, &expr, &demos, &res.instructions, &res.gateway)
                {
                    Ok(g) => Ok(Ok(TrainSample {
                        reasoning: Some(g.reasoning),
                        ..s.clone()
                    })),
                    Err(
                        e @ (SynthError::SchemaMismatch(_)
                        | SynthError::AnswerMismatch { .. }
                        | SynthError::EmptyCompletion),
                    ) => Ok(Err(
                        json!({ "id": s.id, "demand": s.demand, "reason": e.to_string() }),
                    )),
                    Err(e) => Err(e),
                }
            });
            let (kept, dropped) = split(results)?;
            write_jsonl(out.as_deref(), &kept)?;
            if let Some(p) = rejected.as_deref() {
                write_jsonl(Some(p), &dropped)?;
            }
            summary("reasoning", kept.len(), dropped.len())
        }
        SynthCommand::Corpus { samples, mode, out } => {
            let res = Resources::load(config, false, Some(seed))?;
            let samples: Vec<TrainSample> = jsonl::read(&samples)?;
            let records = emit_corpus(&samples, &res.prompt_context(), &res.options, mode)?;
            write_jsonl(out.as_deref(), &records)?;
            if out.is_some() {
                summary("corpus records", records.len(), 0)?;
            }
            Ok(())
        }
        SynthCommand::Users { count, out } => {
            let catalog = config.load_catalog()?;
            let users = synthetic_users(&catalog, count, seed);
            let db = UserDb::new(catalog, users)?;
            let mut w = output(out.as_deref())?;
            db.write_jsonl(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

type Split<T, R> = (Vec<T>, Vec<R>);

fn split<T, R>(results: Vec<Result<Result<T, R>, SynthError>>) -> CmdResult<Split<T, R>> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r? {
            Ok(t) => kept.push(t),
            Err(d) => dropped.push(d),
        }
    }
    Ok((kept, dropped))
}

fn eval(config: AppConfig, json: bool, args: EvalArgs) -> CmdResult {
    let preds: Vec<BenchRecord> = jsonl::read(&args.predictions)?;
    let refs: Vec<BenchRecord> = jsonl::read(&args.testset)?;
    let report = evaluate_benchmark(&preds, &refs)?;
    let judge = if args.judge {
        let gateway = config.gateway()?;
        let instructions = config.instructions()?;
        let items: Vec<_> = report
            .items
            .iter()
            .map(|i| (i.demand.clone(), i.prediction.clone(), i.reference.clone()))
            .collect();
        Some(mean_judge_score(
            &items,
            &default_rubric(),
            &instructions,
            &gateway,
        )?)
    } else {
        None
    };
    let mut value = serde_json::to_value(&report)?;
    if let Some(j) = judge {
        value["aggregates"]["judge_mean"] = json!(j);
    }
    if let Some(p) = &args.out {
        fs::write(p, serde_json::to_string_pretty(&value)? + "\n")?;
    }
    if json {
        print_json(&value)
    } else {
        write!(io::stdout(), "{}", report.to_table())?;
        if let Some(j) = judge {
            out!("judge mean: {j:.2}");
        }
        Ok(())
    }
}
