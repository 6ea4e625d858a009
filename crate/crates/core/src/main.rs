use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedprov::csv_io::{read_csv, write_csv};
use fedprov::error::{Error, Result};
use fedprov::evaluation::{calibration_curve, evaluate, Resample};
use fedprov::harness::{
    calibration_svg, emit_all, emit_report, run_matrix, train_centralized, train_federated, ExperimentConfig,
    ReportFormat, ReportTable,
};
use fedprov::impute::{impute_dataset, MiceConfig};
use fedprov::models::{read_checkpoint, write_checkpoint, ModelFamily};
use fedprov::rng::derive_seed;
use fedprov::schema::{partition_by_province, split_train_test, Dataset, LabeledMatrix, Province};
use fedprov::synth::generate_cohort;

#[derive(Parser)]
#[command(name = "fedprov", version, about = "Federated diabetes-prediction simulator on synthetic provincial cohorts")]
struct Cli {
    /// TOML experiment config; omitted sections use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "FEDPROV_OUT")]
    out: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort, one file per province, and its per-province 70/30 split.
    Generate {
        /// Rescale province sizes to this total.
        #[arg(long)]
        patients: Option<usize>,
    },
    /// MICE-impute a cohort CSV, province by province.
    Impute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train one province's local model.
    TrainLocal {
        #[arg(long)]
        province: Province,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train on all provinces pooled.
    TrainCentral {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train with federated averaging, one client per province.
    TrainFed {
        #[command(flatten)]
        train: TrainArgs,
        /// Clients drawn per round.
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        local_epochs: Option<usize>,
        /// Imputed test CSV used to log global AUC during training.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, requires = "test")]
        eval_every: Option<usize>,
    },
    /// Score a checkpoint on an imputed CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Rebuild report tables from a saved report_table.json.
    Report {
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Run the full experiment matrix and write reports and calibration files.
    RunMatrix,
}

#[derive(Args)]
struct TrainArgs {
    /// Imputed training CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "lr")]
    family: ModelFamily,
    /// Downsample the majority class before training.
    #[arg(long)]
    downsample: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

fn load_matrix(path: &Path) -> Result<(LabeledMatrix, Vec<Province>)> {
    let ds = read_csv(path)?;
    let provinces = ds.records.iter().map(|r| r.province).collect();
    let m = ds.to_matrix().map_err(|e| match e {
        Error::Validation { field, reason } => Error::validation(
            field,
            format!("{reason} in {} (run `fedprov impute` first)", path.display()),
        ),
        other => other,
    })?;
    Ok((m, provinces))
}

fn train_config(ctx: &Context, args: &TrainArgs) -> fedprov::models::TrainConfig {
    let mut cfg = ctx.cfg.train_config(args.family).clone();
    cfg.seed = derive_seed(ctx.seed, "train");
    if let Some(e) = args.epochs {
        cfg.epochs = Some(e);
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if args.learning_rate.is_some() {
        cfg.learning_rate = args.learning_rate;
    }
    cfg
}

fn strategy(args: &TrainArgs) -> Resample {
    if args.downsample {
        Resample::Downsample
    } else {
        Resample::None
    }
}

fn checkpoint_name(prefix: &str, args: &TrainArgs) -> String {
    let suffix = if args.downsample { "_downsample" } else { "" };
    format!("{prefix}_{}{suffix}", args.family.tag())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("fedprov-out"));
    let ctx = Context {
        seed: cfg.seeds.first().copied().unwrap_or(1),
        cfg,
        out,
    };

    match cli.command {
        Command::Generate { patients } => {
            let mut gen = ctx.cfg.generator.clone();
            if let Some(n) = patients {
                if n == 0 {
                    return Err(Error::validation("patients", "must be positive"));
                }
                gen = gen.scaled_to(n);
            }
            let cohort = generate_cohort(&gen, ctx.seed)?;
            let dir = ctx.out_dir()?;
            write_csv(&cohort.dataset, &dir.join("cohort.csv"))?;
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (p, ds) in partition_by_province(&cohort.dataset).parts {
                write_csv(&ds, &dir.join(format!("cohort_{p}.csv")))?;
                let (a, b) = split_train_test(&ds, ctx.cfg.split_fraction, derive_seed(ctx.seed, &format!("split/{p}")))?;
                train.extend(a.records);
                test.extend(b.records);
            }
            write_csv(&Dataset::new(train, "train"), &dir.join("train.csv"))?;
            write_csv(&Dataset::new(test, "test"), &dir.join("test.csv"))?;
            println!("wrote {} records to {}", cohort.dataset.len(), dir.display());
        }
        Command::Impute {
            input,
            output,
            iterations,
        } => {
            let ds = read_csv(&input)?;
            let mut records = Vec::with_capacity(ds.len());
            for (p, part) in partition_by_province(&ds).parts {
                let mice = MiceConfig {
                    n_iterations: iterations.unwrap_or(ctx.cfg.mice.n_iterations),
                    seed: derive_seed(ctx.seed, &format!("mice/{p}")),
                    ..ctx.cfg.mice.clone()
                };
                records.extend(impute_dataset(&part, &mice)?.records);
            }
            let output = match output {
                Some(o) => o,
                None => {
                    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
                    ctx.out_dir()?.join(format!("{stem}_imputed.csv"))
                }
            };
            write_csv(&Dataset::new(records, "imputed"), &output)?;
            println!("wrote {}", output.display());
        }
        Command::TrainLocal { province, train } => {
            let (m, provinces) = load_matrix(&train.input)?;
            let idx: Vec<usize> = (0..m.len()).filter(|&i| provinces[i] == province).collect();
            if idx.is_empty() {
                return Err(Error::validation("province", format!("no {province} records in input")));
            }
            let data = strategy(&train).apply(&m.select(&idx), derive_seed(ctx.seed, "resample"))?;
            let model = train_centralized(train.family, &data, &train_config(&ctx, &train))?;
            let path = ctx.out_dir()?.join(format!("{}.ckpt", checkpoint_name(&format!("local_{province}"), &train)));
            write_checkpoint(&model, &path)?;
            println!("wrote {}", path.display());
        }
        Command::TrainCentral { train } => {
            let (m, _) = load_matrix(&train.input)?;
            let data = strategy(&train).apply(&m, derive_seed(ctx.seed, "resample"))?;
            let model = train_centralized(train.family, &data, &train_config(&ctx, &train))?;
            let path = ctx.out_dir()?.join(format!("{}.ckpt", checkpoint_name("cml", &train)));
            write_checkpoint(&model, &path)?;
            println!("wrote {}", path.display());
        }
        Command::TrainFed {
            train,
            participants,
            rounds,
            local_epochs,
            test,
            eval_every,
        } => {
            let (m, provinces) = load_matrix(&train.input)?;
            let mut parts = Vec::new();
            for p in Province::CLIENTS {
                let idx: Vec<usize> = (0..m.len()).filter(|&i| provinces[i] == p).collect();
                if idx.is_empty() {
                    continue;
                }
                let local = strategy(&train).apply(&m.select(&idx), derive_seed(ctx.seed, &format!("resample/{p}")))?;
                parts.push((p, local));
            }
            let mut fed = ctx.cfg.fed.clone();
            fed.seed = derive_seed(ctx.seed, "train");
            if let Some(n) = participants {
                fed.participants = n;
            }
            if let Some(t) = rounds {
                fed.rounds = t;
            }
            if let Some(e) = local_epochs {
                fed.local_epochs = e;
            }
            if eval_every.is_some() {
                fed.eval_every = eval_every;
            }
            let monitor = test.as_deref().map(load_matrix).transpose()?;
            let (model, history) = train_federated(
                parts,
                train.family,
                &fed,
                &train_config(&ctx, &train),
                monitor.as_ref().map(|(m, p)| (m, p.as_slice())),
            )?;
            let dir = ctx.out_dir()?;
            let name = checkpoint_name("fl", &train);
            write_checkpoint(&model, &dir.join(format!("{name}.ckpt")))?;
            history.write_csv(&dir.join(format!("{name}_history.csv")))?;
            println!("wrote {}", dir.join(format!("{name}.ckpt")).display());
        }
        Command::Evaluate { model, input, bins } => {
            let fitted = read_checkpoint(&model)?;
            let (m, provinces) = load_matrix(&input)?;
            let probs = fitted.predict(&m, &provinces)?;
            let metrics = evaluate(&probs, &m.labels)?;
            let curve = calibration_curve(&probs, &m.labels, bins)?;
            let dir = ctx.out_dir()?;
            let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let json = serde_json::json!({ "metrics": metrics, "ece": curve.ece, "n": m.len() });
            let text = serde_json::to_string_pretty(&json)?;
            let path = dir.join(format!("{stem}_metrics.json"));
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            let svg = dir.join(format!("{stem}_calibration.svg"));
            std::fs::write(&svg, calibration_svg(&curve, stem)).map_err(|e| Error::io(&svg, e))?;
            println!("{text}");
        }
        Command::Report { table } => {
            let path = table.unwrap_or_else(|| ctx.out.join("report_table.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let table: ReportTable = serde_json::from_str(&text)?;
            let files = emit_report(&table, ctx.out_dir()?, &[ReportFormat::Csv, ReportFormat::Markdown])?;
            println!("wrote {} files to {}", files.len(), ctx.out.display());
        }
        Command::RunMatrix => {
            let run = run_matrix(&ctx.cfg)?;
            let files = emit_all(&run, &ctx.cfg, ctx.out_dir()?)?;
            for f in &run.table.failures {
                eprintln!(
                    "warning: seed {} {} {} {}: {}",
                    f.seed,
                    f.family,
                    f.strategy,
                    f.source.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
                    f.message
                );
            }
            println!("wrote {} files to {}", files.len(), ctx.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
