use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ddr::model::{ModelConfig, ModelError, ModelKind, Network};
use ddr::nn::checkpoint::Checkpoint;
use ddr::rpn::{self, DatasetSpec, RpnError};
use ddr::trainer::{self, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "ddr", version, about = "Stack-augmented RNNs on RPN arithmetic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test/generalisation datasets.
    Gen(GenArgs),
    /// Train a model and write metrics and checkpoints to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Collect run logs into plot-ready CSV files.
    Report(ReportArgs),
    /// Execute a module program on a scene.
    Exec(ExecArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', default_value = "100000,5000,20000")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    gen_n: usize,
    #[arg(long, default_value_t = 20000)]
    gen_count: usize,
    #[arg(long, default_value_t = rpn::DEFAULT_BOUND)]
    bound: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "ddrstack")]
    model: ModelKind,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 70)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Global gradient-norm clip (off by default).
    #[arg(long)]
    clip: Option<f64>,
    /// Use only the first K training expressions.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Directory holding train.rpn and val.rpn.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from RUN/last.ddrc for a further `--epochs` epochs.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory for answer statistics.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ExecArgs {
    /// Scene file, one object per line.
    #[arg(long)]
    scene: PathBuf,
    /// Program tokens, whitespace separated.
    #[arg(long)]
    program: String,
}

fn gen(args: GenArgs) -> anyhow::Result<()> {
    let [train, val, test] = args.counts[..] else {
        bail!(ConfigError(format!("--counts needs three values, got {}", args.counts.len())));
    };
    let spec = DatasetSpec {
        n: args.n,
        train,
        val,
        test,
        gen_n: args.gen_n,
        gen_count: args.gen_count,
        seed: args.seed,
        bound: args.bound,
    };
    for path in spec.write_all(&args.out_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<Vec<rpn::Expression>> {
    Ok(rpn::read_dataset(path)?)
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let model = match args.model {
        ModelKind::DdrStack => ModelConfig::ddrstack(args.hidden),
        ModelKind::Baseline => ModelConfig::baseline(args.hidden, args.layers),
    };
    let config = TrainConfig {
        model,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        eval_every: args.eval_every,
        clip_norm: args.clip,
    };
    config.validate()?;
    let mut train_set = load(&args.data.join("train.rpn"))?;
    if let Some(k) = args.train_limit {
        train_set.truncate(k);
    }
    let val_set = load(&args.data.join("val.rpn"))?;
    fs::create_dir_all(&args.out).with_context(|| args.out.display().to_string())?;
    fs::write(args.out.join("config.txt"), format!("{config:#?}\n"))?;

    let log = |r: &trainer::EpochRecord| match r.val_l1 {
        Some(v) => eprintln!("epoch {:>3}  train {:.5}  val {:.5}", r.epoch, r.train_l1, v),
        None => eprintln!("epoch {:>3}  train {:.5}", r.epoch, r.train_l1),
    };
    let outcome = if args.resume {
        let (net, adam, epoch) = trainer::load_training_state(&args.out.join("last.ddrc"), &config)?;
        trainer::train_from(&config, net, adam, epoch, &train_set, &val_set, Some(&args.out), log)?
    } else {
        trainer::train(&config, &train_set, &val_set, Some(&args.out), log)?
    };
    println!(
        "best epoch {} val_l1 {} ({} parameters)",
        outcome.best_epoch,
        outcome.best_val_l1,
        model.param_count()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let net = Network::from_checkpoint(&ck)?;
    let epoch = ck.meta_parse("epoch").unwrap_or(0);
    let data = load(&args.data)?;
    let report = trainer::evaluate(&net, &data, &net.config().kind.to_string(), epoch)?;
    match args.out {
        Some(out) => {
            fs::write(&out, report.to_csv()).with_context(|| out.display().to_string())?;
            println!("overall_l1 {} -> {}", report.overall_l1, out.display());
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let files = trainer::report(&args.runs, &args.out, args.data.as_deref())?;
    println!("wrote {}", files.curves_train.display());
    println!("wrote {}", files.curves_subproblem.display());
    if let Some(p) = files.answer_stats {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", files.param_counts.display());
    Ok(())
}

fn exec(args: ExecArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.scene).with_context(|| args.scene.display().to_string())?;
    let scene = ddr::progexec::SceneGraph::parse(&text)?;
    let program = ddr::progexec::parse_program(&args.program)?;
    println!("{}", ddr::progexec::execute(&scene, &program)?);
    Ok(())
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<TrainError>() {
        return match e {
            TrainError::Config(_) => 2,
            TrainError::NonFinite { .. } => 4,
            TrainError::Model(ModelError::Contract(_)) => 2,
            _ => 3,
        };
    }
    if err.downcast_ref::<ModelError>().is_some_and(|e| matches!(e, ModelError::Contract(_))) {
        return 2;
    }
    if err.downcast_ref::<RpnError>().is_some() {
        return 3;
    }
    if err.downcast_ref::<ddr::progexec::ExecError>().is_some() {
        return 3;
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Exec(a) => exec(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
