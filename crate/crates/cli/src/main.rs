mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use apan::bench::{self, Scenario, WorkerKind};
use apan::events::{parse_jodie_csv, split_chronological, write_metadata, DatasetMeta, EventLog};
use apan::model::{read_checkpoint, write_checkpoint, EngineRng, Head, Model};
use apan::synthetic::{periodic_log, SyntheticConfig};
use apan::train::{
    collect_label_samples, evaluate, fit_model, label_auc, train_label_head, write_metrics_csv, Engine,
    Propagation, SplitName,
};
use apan::ApanError;
use rand::SeedableRng;

use config::{RunConfig, Task};

#[derive(Parser, Debug)]
#[command(name = "apan", version, about = "Streaming temporal-graph embeddings with asynchronous mail propagation")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// Interaction log (JODIE CSV) or `synthetic`.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Directory for every artifact of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long = "mailbox-slots", global = true)]
    mailbox_slots: Option<usize>,
    #[arg(long, global = true)]
    fanout: Option<usize>,
    #[arg(long, global = true)]
    hops: Option<usize>,
    /// link, edge or node.
    #[arg(long, global = true)]
    task: Option<String>,
    /// mlp or dot.
    #[arg(long, global = true)]
    loss: Option<String>,
    /// deterministic or async.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// key = value file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a JODIE-format CSV and write its metadata sidecar.
    Ingest { csv: PathBuf },
    /// Train link prediction with early stopping; `--task node|edge` also
    /// fits that head on the frozen encoder.
    Train,
    /// Score a checkpoint on the validation and test ranges.
    Eval { checkpoint: PathBuf },
    /// Compare inference latency of the query-then-infer and mailbox pipelines.
    Bench { scenario: PathBuf },
    /// Rank the mails behind a node's embedding at time `t`.
    Explain { node: usize, t: f64, checkpoint: PathBuf },
}

/// Input that does not exist or cannot be used; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(ApanError::Config { .. }) = cause.downcast_ref::<ApanError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let set = |cfg: &mut RunConfig, key: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(key, &v)?;
        }
        Ok(())
    };
    set(&mut cfg, "dataset", flags.dataset.clone())?;
    set(&mut cfg, "out", flags.out.as_ref().map(|p| p.display().to_string()))?;
    set(&mut cfg, "seed", flags.seed.map(|v| v.to_string()))?;
    set(&mut cfg, "batch", flags.batch.map(|v| v.to_string()))?;
    set(&mut cfg, "lr", flags.lr.map(|v| v.to_string()))?;
    set(&mut cfg, "epochs", flags.epochs.map(|v| v.to_string()))?;
    set(&mut cfg, "patience", flags.patience.map(|v| v.to_string()))?;
    set(&mut cfg, "heads", flags.heads.map(|v| v.to_string()))?;
    set(&mut cfg, "mailbox_slots", flags.mailbox_slots.map(|v| v.to_string()))?;
    set(&mut cfg, "fanout", flags.fanout.map(|v| v.to_string()))?;
    set(&mut cfg, "hops", flags.hops.map(|v| v.to_string()))?;
    set(&mut cfg, "task", flags.task.clone())?;
    set(&mut cfg, "loss", flags.loss.clone())?;
    set(&mut cfg, "mode", flags.mode.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.flags)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.resolved"), cfg.to_text())?;
    match cli.command {
        Command::Ingest { csv } => ingest(&cfg, &csv),
        Command::Train => train(&cfg),
        Command::Eval { checkpoint } => eval(&cfg, &checkpoint),
        Command::Bench { scenario } => run_bench(&cfg, &cli.flags, &scenario),
        Command::Explain { node, t, checkpoint } => explain(&cfg, node, t, &checkpoint),
    }
}

fn read_log(path: &Path) -> Result<EventLog> {
    let file = fs::File::open(path).map_err(|e| usage(format!("dataset {}: {e}", path.display())))?;
    parse_jodie_csv(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn load_dataset(cfg: &RunConfig) -> Result<EventLog> {
    match cfg.dataset.as_deref() {
        None => Err(usage("no dataset given (use --dataset <csv> or --dataset synthetic)")),
        Some("synthetic") => Ok(periodic_log(&SyntheticConfig::default())?),
        Some(path) => read_log(Path::new(path)),
    }
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = fs::File::open(path).map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_checkpoint(model, std::io::BufWriter::new(file))?;
    Ok(())
}

fn label_head(task: Task) -> Option<Head> {
    match task {
        Task::Link => None,
        Task::Edge => Some(Head::Edge),
        Task::Node => Some(Head::Node),
    }
}

fn ingest(cfg: &RunConfig, csv: &Path) -> Result<()> {
    let log = read_log(csv)?;
    let meta = DatasetMeta::of(&log);
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let path = cfg.out.join(format!("{stem}.meta"));
    fs::write(&path, write_metadata(&meta))?;
    println!(
        "{} events, {} nodes ({} users, {} items), d_e = {}",
        meta.num_events,
        log.num_nodes(),
        meta.num_users,
        meta.num_items,
        meta.d_e
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    if cfg.mode == WorkerKind::Async {
        return Err(ApanError::Config {
            key: "mode".into(),
            message: "training runs with lag-free propagation; use `deterministic`".into(),
        }
        .into());
    }
    let log = load_dataset(cfg)?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let split = split_chronological(&log, tcfg.train_frac, tcfg.val_frac)?;
    let model = Model::new(tcfg.model_config(log.d_e()), &mut EngineRng::seed_from_u64(cfg.seed))?;
    let report = fit_model(&log, &tcfg, model, split.clone())?;
    fs::write(cfg.out.join("metrics.csv"), write_metrics_csv(&report.rows))?;
    println!(
        "best epoch {} of {}: val ap {:.4} auc {:.4}; test ap {:.4} auc {:.4} acc {:.4}",
        report.best_epoch,
        report.epochs_run,
        report.best_val.metrics.ap,
        report.best_val.metrics.auc,
        report.test.metrics.ap,
        report.test.metrics.auc,
        report.test.metrics.accuracy
    );
    if let Some(ind) = report.test.inductive {
        println!("inductive test ap {:.4} auc {:.4} ({} pairs)", ind.ap, ind.auc, report.test.inductive_pairs);
    }
    let mut model = report.model;
    if let Some(head) = label_head(cfg.task) {
        let mut engine = Engine::new(model, &log, tcfg.engine_config(), Propagation::Inline)?;
        let head_report = train_label_head(&mut engine, &log, &split, head, &tcfg)?;
        let test_auc = head_report.test_auc.map_or("nan".to_string(), |a| a.to_string());
        fs::write(
            cfg.out.join("head.csv"),
            format!(
                "task,train_auc,test_auc,train_samples,test_samples\n{},{},{},{},{}\n",
                cfg.task, head_report.train_auc, test_auc, head_report.train_samples, head_report.test_samples
            ),
        )?;
        println!("{} head: train auc {:.4}, test auc {test_auc}", cfg.task, head_report.train_auc);
        model = engine.model;
    }
    let path = cfg.out.join("checkpoint.bin");
    save_checkpoint(&model, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let log = load_dataset(cfg)?;
    let tcfg = cfg.train_config();
    let split = split_chronological(&log, tcfg.train_frac, tcfg.val_frac)?;
    let mut engine = Engine::new(model, &log, tcfg.engine_config(), Propagation::Inline)?;
    let mut csv = String::from("split,loss,ap,accuracy,auc,pairs,skipped,inductive_ap,inductive_auc,inductive_pairs\n");
    for which in [SplitName::Val, SplitName::Test] {
        let r = evaluate(&mut engine, &log, &split, which, tcfg.batch_size)?;
        let (iap, iauc) = r.inductive.map_or((f64::NAN, f64::NAN), |m| (m.ap, m.auc));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            which.as_str(),
            r.loss,
            r.metrics.ap,
            r.metrics.accuracy,
            r.metrics.auc,
            r.pairs,
            r.skipped,
            iap,
            iauc,
            r.inductive_pairs
        ));
        println!(
            "{:<5} ap {:.4} auc {:.4} acc {:.4} loss {:.4}",
            which.as_str(),
            r.metrics.ap,
            r.metrics.auc,
            r.metrics.accuracy,
            r.loss
        );
    }
    fs::write(cfg.out.join("eval.csv"), csv)?;
    if let Some(head) = label_head(cfg.task) {
        let samples = collect_label_samples(&mut engine, &log, head, tcfg.batch_size)?;
        let test: Vec<_> = samples.into_iter().filter(|s| split.test.contains(&s.event)).collect();
        let auc = label_auc(&engine.model, head, &test)?;
        println!("{} head test auc {auc:.4} ({} samples)", cfg.task, test.len());
    }
    Ok(())
}

fn run_bench(cfg: &RunConfig, flags: &Flags, scenario: &Path) -> Result<()> {
    let text = fs::read_to_string(scenario).map_err(|e| usage(format!("scenario {}: {e}", scenario.display())))?;
    let mut sc = Scenario::default();
    sc.apply_text(&text)?;
    if flags.seed.is_some() {
        sc.seed = cfg.seed;
    }
    if flags.batch.is_some() {
        sc.batch = cfg.batch;
    }
    if flags.hops.is_some() {
        sc.hops = cfg.hops;
    }
    if flags.fanout.is_some() {
        sc.fanout = cfg.fanout;
    }
    if flags.mailbox_slots.is_some() {
        sc.slots = cfg.mailbox_slots;
    }
    if flags.heads.is_some() {
        sc.heads = cfg.heads;
    }
    if flags.mode.is_some() {
        sc.worker = cfg.mode;
    }
    sc.validate()?;
    fs::write(cfg.out.join("scenario.resolved"), sc.to_text())?;
    let log = bench::bench_log(&sc)?;
    let model = bench::bench_model(&sc)?;
    let runs = vec![
        bench::run_sync(&log, &model, &sc, false)?,
        bench::run_async(&log, &model, &sc, false)?,
    ];
    fs::write(cfg.out.join("bench.csv"), bench::report_csv(&runs))?;
    fs::write(cfg.out.join("worker.csv"), bench::worker_csv(&runs))?;
    print!("{}", bench::text_table(&runs));
    let (s, a) = (runs[0].p50(), runs[1].p50());
    println!("p50 speedup {:.1}x", s / a);
    Ok(())
}

fn explain(cfg: &RunConfig, node: usize, t: f64, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let log = load_dataset(cfg)?;
    if node >= log.num_nodes() {
        bail!("node {node} is outside the dataset (0..{})", log.num_nodes());
    }
    let tcfg = cfg.train_config();
    let mut engine = Engine::new(model, &log, tcfg.engine_config(), Propagation::Inline)?;
    let before = log.events().partition_point(|e| e.timestamp < t);
    engine.replay(&log, 0..before, tcfg.batch_size)?;
    engine.probe(node, t)?;
    let ranked = engine.explain(node)?;
    let mut csv = String::from("rank,mail_timestamp,weight\n");
    println!("node {node} at t = {t}: {before} earlier events");
    for (k, (ts, w)) in ranked.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", k + 1, ts, w));
        println!("{:>3}  t = {:<14} weight {:.6}", k + 1, ts, w);
    }
    fs::write(cfg.out.join("explain.csv"), csv)?;
    Ok(())
}
