//! The `turntake` command line.
//!
//! Every subcommand writes its artifacts under `--out` together with a
//! `manifest.json` listing the effective configuration hash, seed, overrides
//! and artifact paths. Failures print one line on stderr,
//! `error class=<config|data|numerical> code=<n> message="..."`, and exit
//! with the class code (2, 3 or 4).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, write_corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::experiment::{
    apply_override, final_evaluation, grid_search, sequential_forward_selection, summarize,
    write_grid_csv, write_results_csv, write_sfs_report, write_summary_csv, CorpusExecutor,
    ExperimentConfig, TaskScores,
};
use crate::features::FeaturePlan;
use crate::metrics::majority_baseline;
use crate::nn::{checkpoint, gradcheck, LossKind};
use crate::synth::{generate_corpus, SynthConfig};
use crate::tasks::{read_instances, write_instances, Label, TaskKind};

/// Environment variable holding the default worker count.
pub const JOBS_ENV: &str = "TURNTAKE_JOBS";

/// Gradient check tolerance on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "turntake", version, about = "Continuous turn-taking prediction with LSTMs")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// Dotted-path override, e.g. `grid.hidden=[20]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for independent runs.
    #[arg(long, env = JOBS_ENV)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and a matching experiment config.
    Synth(Common),
    /// Grid search followed by repeated final runs.
    Train(Common),
    /// Score a saved checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sequential forward selection over acoustic columns.
    Sfs(Common),
    /// Finite-difference check of the analytic gradients on a tiny model.
    Gradcheck {
        #[arg(long, value_enum, default_value = "bce")]
        loss: LossArg,
    },
    /// Majority-class baselines for an instance file or a config's test split.
    Baselines {
        /// Instance file (session_id, kind, decision_frame, floor_holder, label).
        #[arg(long, conflicts_with = "config")]
        instances: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LossArg {
    Bce,
    Mae,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => LossKind::Bce,
            LossArg::Mae => LossKind::Mae,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    overrides: Vec<String>,
    artifacts: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| Error::config(format!("override {s:?} is not KEY=VALUE")))
        })
        .collect()
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_experiment(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    ExperimentConfig::load(path, &parse_overrides(&common.overrides)?)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Collects artifact paths relative to the output directory.
struct Artifacts<'a> {
    out: &'a Path,
    list: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(out: &'a Path) -> Self {
        Artifacts { out, list: Vec::new() }
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.list.push(rel.to_string());
        self.out.join(rel)
    }

    fn finish(mut self, command: &str, config_text: &str, seed: u64, overrides: &[String]) -> Result<()> {
        self.list.sort();
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(config_text),
            seed,
            overrides: overrides.to_vec(),
            artifacts: self.list,
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::config("--jobs must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

fn print_scores(label: &str, s: &TaskScores) {
    for kind in TaskKind::ALL {
        match s.get(kind) {
            Some(v) => println!("{label} {} {v:.4}", kind.name()),
            None => println!("{label} {} n/a", kind.name()),
        }
    }
}

fn write_baselines(path: &Path, s: &TaskScores) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    w.write_record(["task", "majority_f1"]).map_err(wrap)?;
    for kind in TaskKind::ALL {
        let v = s.get(kind).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([kind.name(), v.as_str()]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_synth(c: &Common) -> Result<()> {
    let mut value = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::config(format!("config: {}", e.message())))?
        }
        None => toml::Value::Table(Default::default()),
    };
    for (k, v) in parse_overrides(&c.overrides)? {
        apply_override(&mut value, &k, &v)?;
    }
    let config: SynthConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))?;
    config.validate()?;
    let corpus = generate_corpus(&config)?;

    create_out(&c.out)?;
    let mut art = Artifacts::new(&c.out);
    write_corpus(&art.path("corpus"), &corpus)?;

    // 60/20/20 split in session order
    let ids: Vec<String> = corpus.sessions.iter().map(|s| s.session_id.clone()).collect();
    let n = ids.len();
    let (a, b) = (n * 6 / 10, n * 8 / 10);
    let experiment = ExperimentConfig {
        corpus: "corpus".into(),
        split: SplitSpec {
            train: ids[..a.max(1)].to_vec(),
            heldout: ids[a.max(1)..b.max(1)].to_vec(),
            test: ids[b.max(1)..].to_vec(),
        },
        plan: FeaturePlan::all_acoustic(),
        objective: LossKind::Bce,
        grid: Default::default(),
        runs_per_hidden_size: 3,
        final_runs: 10,
        seed: config.seed,
        training: Default::default(),
        sfs: Default::default(),
    };
    let p = art.path("experiment.toml");
    std::fs::write(&p, experiment.to_toml_string()).map_err(|e| Error::io(&p, e))?;
    let text = toml::to_string(&config).expect("synth config serializes");
    let p = art.path("synth.toml");
    std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
    println!("wrote {} sessions to {}", n, c.out.join("corpus").display());
    art.finish("synth", &text, config.seed, &c.overrides)
}

fn cmd_train(c: &Common) -> Result<()> {
    let config = load_experiment(c)?;
    let corpus = load_corpus(&config.corpus)?;
    let pool = thread_pool(c.jobs)?;
    create_out(&c.out)?;
    let mut art = Artifacts::new(&c.out);
    let ckpt_dir = art.path("checkpoints");
    create_out(&ckpt_dir)?;

    let search = CorpusExecutor::new(&corpus, &config.split)?;
    write_instances(&art.path("instances.tsv"), &search.test_instances())?;
    let baselines = search.baselines();
    write_baselines(&art.path("baselines.csv"), &baselines)?;

    let outcome = pool.install(|| grid_search(&config, &config.plan, &search))?;
    write_grid_csv(&art.path("grid.csv"), &outcome)?;
    println!(
        "selected hidden={} learning_rate={} l2={}",
        outcome.best.hidden, outcome.best.learning_rate, outcome.best.l2
    );
    let exec = search.with_checkpoints(ckpt_dir);
    let runs = pool.install(|| final_evaluation(&config, &config.plan, outcome.best, &exec))?;
    write_results_csv(&art.path("results.csv"), &runs)?;
    let summary = summarize(&runs);
    write_summary_csv(&art.path("summary.csv"), &summary)?;
    for s in &summary {
        if let (Some(m), Some(sd)) = (s.mean, s.std) {
            println!("{} {m:.4} +- {sd:.4}", s.metric);
        }
    }
    print_scores("baseline", &baselines);
    art.finish("train", &config.to_toml_string(), config.seed, &c.overrides)
}

fn cmd_evaluate(c: &Common, ckpt: &Path) -> Result<()> {
    let config = load_experiment(c)?;
    let loaded = checkpoint::load(ckpt)?;
    let plan_fp = config.plan.fingerprint()?;
    if loaded.plan_fingerprint != plan_fp {
        return Err(Error::config(format!(
            "checkpoint was trained with plan {} but the config plan is {plan_fp}",
            loaded.plan_fingerprint
        )));
    }
    let corpus = load_corpus(&config.corpus)?;
    let exec = CorpusExecutor::new(&corpus, &config.split)?;
    let eval = exec.evaluate(&loaded.params, &config.plan)?;
    create_out(&c.out)?;
    let mut art = Artifacts::new(&c.out);
    let path = art.path("evaluation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    w.write_record(["metric", "value"]).map_err(wrap)?;
    let mut rows = vec![
        ("test_bce".to_string(), Some(eval.test_bce)),
        ("test_mae".to_string(), Some(eval.test_mae)),
    ];
    for kind in TaskKind::ALL {
        rows.push((format!("f_{}", kind.name().to_lowercase()), eval.scores.get(kind)));
    }
    rows.push(("onset_threshold".to_string(), eval.onset_threshold));
    for (k, v) in &rows {
        let v = v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([k.as_str(), v.as_str()]).map_err(wrap)?;
        println!("{k} {v}");
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    art.finish("evaluate", &config.to_toml_string(), loaded.params.seed(), &c.overrides)
}

fn cmd_sfs(c: &Common) -> Result<()> {
    let config = load_experiment(c)?;
    let corpus = load_corpus(&config.corpus)?;
    let pool = thread_pool(c.jobs)?;
    let exec = CorpusExecutor::new(&corpus, &config.split)?;
    create_out(&c.out)?;
    let mut art = Artifacts::new(&c.out);
    let steps = pool.install(|| sequential_forward_selection(&config, &exec))?;
    let path = art.path("sfs.csv");
    art.list.push("sfs_candidates.csv".into());
    write_sfs_report(&path, &steps)?;
    for s in &steps {
        println!("{} {} {:.6}", s.step, s.feature, s.loss);
    }
    art.finish("sfs", &config.to_toml_string(), config.seed, &c.overrides)
}

fn cmd_gradcheck(loss: LossArg) -> Result<()> {
    let report = gradcheck::default_check(loss.into())?;
    for b in &report.blocks {
        println!("{} params={} max_rel_error={:.3e}", b.block, b.params, b.max_rel_error);
    }
    let verdict = if report.passes(GRADCHECK_TOLERANCE) { "PASS" } else { "FAIL" };
    println!("max_rel_error={:.3e} {verdict}", report.max_rel_error);
    if report.passes(GRADCHECK_TOLERANCE) {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

fn cmd_baselines(instances: Option<&Path>, config: Option<&Path>, overrides: &[String]) -> Result<()> {
    let labels_by_kind: Vec<(TaskKind, Vec<Label>)> = match (instances, config) {
        (Some(p), _) => {
            let recs = read_instances(p)?;
            TaskKind::ALL
                .into_iter()
                .map(|k| (k, recs.iter().filter(|r| r.kind == k).map(|r| r.label).collect()))
                .collect()
        }
        (None, Some(p)) => {
            let config = ExperimentConfig::load(p, &parse_overrides(overrides)?)?;
            let corpus = load_corpus(&config.corpus)?;
            let recs = CorpusExecutor::new(&corpus, &config.split)?.test_instances();
            TaskKind::ALL
                .into_iter()
                .map(|k| (k, recs.iter().filter(|r| r.kind == k).map(|r| r.label).collect()))
                .collect()
        }
        (None, None) => return Err(Error::config("baselines needs --instances or --config")),
    };
    for (kind, labels) in labels_by_kind {
        if labels.is_empty() {
            continue;
        }
        let f = majority_baseline(&labels)?;
        println!("{} {f:.4} n={}", kind.name(), labels.len());
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Train(c) => cmd_train(c),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(common, checkpoint),
        Command::Sfs(c) => cmd_sfs(c),
        Command::Gradcheck { loss } => cmd_gradcheck(*loss),
        Command::Baselines {
            instances,
            config,
            overrides,
        } => cmd_baselines(instances.as_deref(), config.as_deref(), overrides),
    }
}

/// Formats an error as the single stderr line described in the module docs.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ").replace('"', "'");
    format!("error class={} code={} message=\"{msg}\"", e.class(), e.exit_code())
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}
