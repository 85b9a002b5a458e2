use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use strokerisk::error::{Error, Result};
use strokerisk::explain::ShapMode;
use strokerisk::pipeline::{self, DataSource, PipelineConfig, Stage};
use strokerisk::tabular;

/// Environment variable naming the directory under which run directories
/// are created when neither `--out` nor `output_dir` is given.
const OUTPUT_ROOT_ENV: &str = "STROKERISK_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "strokerisk", version, about = "Postoperative stroke risk pipeline: cohort statistics, LASSO selection, SMOTE, four classifiers, bootstrap evaluation and SHAP")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic cohort as CSV, with its schema alongside.
    Synth {
        /// CSV path; defaults to `cohort-seed-<seed>.csv` under the output root.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Baseline characteristics table of the train and test partitions.
    Table1,
    /// Fit the preprocessing plan; also writes train/test matrices.
    Preprocess,
    /// Correlation pruning and CV LASSO feature selection.
    Select,
    /// Grid search every configured family.
    Tune,
    /// Train the configured families.
    Train {
        /// Grid search before the final fit.
        #[arg(long)]
        tune: bool,
    },
    /// Evaluate on the test partition with bootstrap intervals.
    Evaluate(EvalArgs),
    /// SHAP explanation of the explained family.
    Explain(ExplainArgs),
    /// Refit without the given features and compare.
    Ablate(ExplainArgs),
    /// Every stage, including the configured ablations.
    RunAll,
    /// Score a CSV with a saved model and preprocessing plan.
    Score {
        /// Model JSON written by `train` (e.g. run/models/logreg.json).
        #[arg(long)]
        model: PathBuf,
        /// Plan JSON; defaults to `plan.json` next to the model.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// TSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Exact,
    Kernel,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    coalitions: Option<usize>,
    #[arg(long)]
    background: Option<usize>,
    /// Comma-separated feature set to drop; repeat for several ablations.
    #[arg(long)]
    drop: Vec<String>,
}

impl ExplainArgs {
    fn drops(&self) -> Vec<Vec<String>> {
        self.drop.iter().map(|d| d.split(',').filter(|s| !s.is_empty()).map(String::from).collect()).collect()
    }

    fn apply(&self, cfg: &mut PipelineConfig) {
        let drops = self.drops();
        if let Some(m) = self.mode {
            cfg.explain.mode = Some(match m {
                Mode::Exact => ShapMode::Exact,
                Mode::Kernel => ShapMode::Kernel,
            });
        }
        if let Some(c) = self.coalitions {
            cfg.explain.coalitions = c;
        }
        if let Some(b) = self.background {
            cfg.explain.background = b;
        }
        if !drops.is_empty() {
            cfg.ablations = drops;
        }
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| output_root().join(format!("seed-{}", cfg.master_seed)))
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn stage(cfg: &PipelineConfig, last: Stage) -> Result<()> {
    let dir = run_dir(cfg);
    let s = pipeline::run_until(cfg, &dir, last)?;
    for (f, r) in &s.reports {
        println!("{}\tAUC {:.3} ({:.3}-{:.3})\taccuracy {:.3}", f.name(), r.auc, r.auc_ci.0, r.auc_ci.1, r.point.accuracy);
    }
    for a in &s.ablations {
        println!("without {}\tAUC {:.3} (baseline {:.3})", a.drop.join(","), a.auc, a.baseline_auc);
    }
    println!("{}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = config(cli)?;
    if cfg.threads > 0 {
        // Only fails when a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match &cli.command {
        Command::Synth { output } => {
            let table = pipeline::load_data(&cfg)?;
            let path = output.clone().unwrap_or_else(|| output_root().join(format!("cohort-seed-{}.csv", cfg.master_seed)));
            if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            tabular::save_csv(&table, &path)?;
            let source = DataSource::Csv { path: path.clone(), schema: table.schema(), outcome: table.outcome_name().to_string() };
            write(&path.with_extension("schema.json"), &(serde_json::to_string_pretty(&source)? + "\n"))?;
            println!("{}\t{} rows\t{} positive", path.display(), table.n_rows(), table.positives());
            Ok(())
        }
        Command::Table1 => stage(&cfg, Stage::Table1),
        Command::Preprocess => stage(&cfg, Stage::Preprocess),
        Command::Select => stage(&cfg, Stage::Select),
        Command::Tune => stage(&cfg, Stage::Tune),
        Command::Train { tune } => {
            cfg.models.tune |= tune;
            stage(&cfg, Stage::Train)
        }
        Command::Evaluate(a) => {
            if let Some(n) = a.n_boot {
                cfg.eval.n_boot = n;
            }
            if let Some(l) = a.level {
                cfg.eval.level = l;
            }
            stage(&cfg, Stage::Evaluate)
        }
        Command::Explain(a) => {
            let last = if a.drop.is_empty() { Stage::Explain } else { Stage::Ablate };
            a.apply(&mut cfg);
            stage(&cfg, last)
        }
        Command::Ablate(a) => {
            a.apply(&mut cfg);
            stage(&cfg, Stage::Ablate)
        }
        Command::RunAll => stage(&cfg, Stage::Ablate),
        Command::Score { model, plan, input, output } => {
            let rows = pipeline::score_new(model, plan.as_deref(), input)?;
            let tsv = pipeline::scores_tsv(&rows);
            match output {
                Some(p) => write(p, &tsv),
                None => {
                    use std::io::Write as _;
                    match std::io::stdout().lock().write_all(tsv.as_bytes()) {
                        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                        _ => Ok(()),
                    }
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
