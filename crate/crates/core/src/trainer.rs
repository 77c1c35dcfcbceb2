//! Training loop, evaluation metrics, and curve/report emission.
//!
//! A run directory holds:
//! - `metrics.csv`: `epoch,train_l1,val_l1`, appended once per epoch
//! - `best.ddrc`: parameters with the lowest validation L1 so far
//! - `last.ddrc`: parameters plus Adam state after the latest epoch
//! - `eval_<name>.csv`: written by the `eval` command (`subproblem,l1` rows,
//!   then `overall,<l1>`)

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{ModelConfig, ModelError, Network, Predictor};
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::{Adam, AdamConfig};
use crate::rng::{derive_seed, Rng};
use crate::rpn::Expression;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}, expression {index}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        index: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs (the final epoch is always validated).
    pub eval_every: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::ddrstack(32),
            lr: 1e-3,
            epochs: 70,
            batch_size: 32,
            seed: 0,
            eval_every: 1,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so frozen-parameter runs can be checked.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.model.hidden == 0 {
            return Err(TrainError::Config("batch size, eval cadence and hidden size must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: Option<f64>,
}

impl EpochRecord {
    fn csv_row(&self) -> String {
        match self.val_l1 {
            Some(v) => format!("{},{},{}", self.epoch, self.train_l1, v),
            None => format!("{},{},", self.epoch, self.train_l1),
        }
    }
}

pub const METRICS_HEADER: &str = "epoch,train_l1,val_l1";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Network,
    pub best_epoch: usize,
    pub best_val_l1: f64,
    pub last: Network,
    pub history: Vec<EpochRecord>,
}

/// Trains a freshly initialised model; see [`train_from`].
pub fn train(
    config: &TrainConfig,
    train_set: &[Expression],
    val_set: &[Expression],
    out_dir: Option<&Path>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let net = Network::new(config.model, config.seed)?;
    let adam = Adam::new(config.adam(), net.params());
    train_from(config, net, adam, 0, train_set, val_set, out_dir, on_epoch)
}

/// Continues training `net` from `start_epoch` (0 for a fresh run).
///
/// Each epoch visits the training set in an order shuffled by a stream
/// derived from `(seed, epoch)`, applies one Adam step per batch with the
/// batch-averaged gradient, and validates on the configured cadence.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    config: &TrainConfig,
    mut net: Network,
    mut adam: Adam,
    start_epoch: usize,
    train_set: &[Expression],
    val_set: &[Expression],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Data("training and validation sets must be non-empty".into()));
    }
    if net.config() != config.model {
        return Err(TrainError::Config("model does not match configuration".into()));
    }

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("metrics.csv");
            let fresh = start_epoch == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(&path)
                .map_err(io_err(&path))?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}").map_err(io_err(&path))?;
            }
            Some((f, path))
        }
        None => None,
    };

    // A resumed run competes against the best checkpoint written so far.
    let mut best: Option<(Network, usize, f64)> = match out_dir.map(|d| d.join("best.ddrc")) {
        Some(path) if start_epoch > 0 && path.exists() => {
            let ck = Checkpoint::load(&path)?;
            Some((Network::from_checkpoint(&ck)?, ck.meta_parse("epoch")?, ck.meta_parse("val_l1")?))
        }
        _ => None,
    };
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in start_epoch + 1..=start_epoch + config.epochs {
        order.sort_unstable();
        Rng::new(derive_seed(config.seed, epoch as u64)).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            net.params_mut().zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (mut g, bound, loss) = net.loss_graph(&train_set[i])?;
                let l = g.value(loss).item().map_err(ModelError::from)?;
                if !l.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: batch_idx,
                        index: i,
                        loss: l,
                    });
                }
                loss_sum += l;
                g.backward(loss).map_err(ModelError::from)?;
                net.params_mut().accumulate_grads(&g, &bound, scale);
            }
            adam.step(net.params_mut()).map_err(ModelError::from)?;
        }

        let last_epoch = epoch == start_epoch + config.epochs;
        let val_l1 = if epoch % config.eval_every == 0 || last_epoch {
            Some(evaluate(&net, val_set, "val", epoch)?.overall_l1)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_l1: loss_sum / train_set.len() as f64,
            val_l1,
        };

        if let Some(v) = val_l1 {
            if best.as_ref().is_none_or(|(_, _, b)| v < *b) {
                best = Some((net.clone(), epoch, v));
                if let Some(dir) = out_dir {
                    let mut ck = net.to_checkpoint();
                    ck.set_meta("epoch", epoch);
                    ck.set_meta("val_l1", v);
                    ck.save(dir.join("best.ddrc"))?;
                }
            }
        }
        if let Some((f, path)) = metrics.as_mut() {
            writeln!(f, "{}", record.csv_row()).map_err(io_err(path))?;
            f.flush().map_err(io_err(path))?;
        }
        if let Some(dir) = out_dir {
            save_training_state(&dir.join("last.ddrc"), &net, &adam, epoch)?;
        }
        on_epoch(&record);
        history.push(record);
    }

    let (best, best_epoch, best_val_l1) = best.expect("final epoch is always validated");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_l1,
        last: net,
        history,
    })
}

/// Writes parameters together with Adam moments and the epoch counter.
pub fn save_training_state(path: &Path, net: &Network, adam: &Adam, epoch: usize) -> Result<()> {
    let mut ck = net.to_checkpoint();
    ck.set_meta("epoch", epoch);
    ck.set_meta("adam_t", adam.t);
    ck.set_meta("adam_lr", adam.config.lr);
    for ((p, m), v) in net.params().params().iter().zip(&adam.m).zip(&adam.v) {
        let shape = p.value.shape().to_vec();
        ck.push(format!("adam.m.{}", p.name), Tensor::new(shape.clone(), m.clone()).expect("moment shape"));
        ck.push(format!("adam.v.{}", p.name), Tensor::new(shape, v.clone()).expect("moment shape"));
    }
    ck.save(path)?;
    Ok(())
}

/// Inverse of [`save_training_state`]; the optimiser takes `config`'s
/// hyperparameters.
pub fn load_training_state(path: &Path, config: &TrainConfig) -> Result<(Network, Adam, usize)> {
    let ck = Checkpoint::load(path)?;
    let net = Network::from_checkpoint(&ck)?;
    let mut adam = Adam::new(config.adam(), net.params());
    adam.t = ck.meta_parse("adam_t")?;
    for (i, p) in net.params().params().iter().enumerate() {
        adam.m[i] = ck.tensor(&format!("adam.m.{}", p.name))?.data().to_vec();
        adam.v[i] = ck.tensor(&format!("adam.v.{}", p.name))?.data().to_vec();
    }
    let epoch = ck.meta_parse("epoch")?;
    Ok((net, adam, epoch))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub epoch: usize,
    pub n: usize,
    pub overall_l1: f64,
    /// Mean `|pred_k - answer_k|` over the set for each subproblem `k`.
    pub per_subproblem_l1: Vec<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subproblem,l1\n");
        for (k, v) in self.per_subproblem_l1.iter().enumerate() {
            writeln!(s, "{},{}", k + 1, v).expect("write to string");
        }
        writeln!(s, "overall,{}", self.overall_l1).expect("write to string");
        s
    }

    pub fn parse_csv(text: &str) -> Result<(Vec<f64>, Option<f64>), String> {
        let mut per = Vec::new();
        let mut overall = None;
        for (i, line) in text.lines().enumerate().skip(1) {
            let (k, v) = line.split_once(',').ok_or(format!("line {}: expected two fields", i + 1))?;
            let v: f64 = v.parse().map_err(|_| format!("line {}: bad value `{v}`", i + 1))?;
            if k == "overall" {
                overall = Some(v);
            } else {
                let k: usize = k.parse().map_err(|_| format!("line {}: bad subproblem `{k}`", i + 1))?;
                if k != per.len() + 1 {
                    return Err(format!("line {}: subproblem {k} out of order", i + 1));
                }
                per.push(v);
            }
        }
        Ok((per, overall))
    }
}

/// Per-subproblem and overall L1 of `predictor` on a set of equal-length
/// expressions.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &[Expression],
    model_id: &str,
    epoch: usize,
) -> Result<EvalReport> {
    let Some(first) = dataset.first() else {
        return Err(TrainError::Data("cannot evaluate on an empty dataset".into()));
    };
    let n = first.n();
    let mut per = vec![0.0; n];
    let mut overall = 0.0;
    for (i, expr) in dataset.iter().enumerate() {
        if expr.n() != n {
            return Err(TrainError::Data(format!(
                "expression {i} has n={}, dataset started with n={n}",
                expr.n()
            )));
        }
        let preds = predictor.predict(expr)?;
        if preds.len() != n {
            return Err(ModelError::Contract(format!("{} predictions for n={n}", preds.len())).into());
        }
        let mut expr_sum = 0.0;
        for (k, (p, a)) in preds.iter().zip(expr.answers()).enumerate() {
            let e = (p - a).abs();
            per[k] += e;
            expr_sum += e;
        }
        overall += expr_sum / n as f64;
    }
    let count = dataset.len() as f64;
    per.iter_mut().for_each(|v| *v /= count);
    Ok(EvalReport {
        model_id: model_id.to_string(),
        epoch,
        n,
        overall_l1: overall / count,
        per_subproblem_l1: per,
    })
}

/// Averages `values` over a centred window (truncated at the ends).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (usize, f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (0, f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (v.len(), mean, var.sqrt())
}

/// Subproblems left out when reporting the "late" answer spread.
pub const LEADING_SUBPROBLEMS_SKIPPED: usize = 3;

fn run_label(run: &Path) -> String {
    run.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string())
}

fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || TrainError::Data(format!("{}:{}: malformed metrics row", path.display(), i + 1));
        let mut fields = line.split(',');
        let epoch = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let train_l1 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let val_l1 = match fields.next() {
            Some("") | None => None,
            Some(s) => Some(s.parse().map_err(|_| bad())?),
        };
        out.push(EpochRecord {
            epoch,
            train_l1,
            val_l1,
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub curves_train: PathBuf,
    pub curves_subproblem: PathBuf,
    pub answer_stats: Option<PathBuf>,
    pub param_counts: PathBuf,
}

/// Collects run logs into plot-ready CSVs:
/// - `curves_train.csv`: `epoch` then `<run>_train_l1,<run>_val_l1` per run
/// - `curves_subproblem.csv`: `subproblem` then one `<run>_<eval>_l1` column
///   per evaluation file found in each run
/// - `answer_stats.csv` (when `data_dir` is given): answer mean/std per split
/// - `param_counts.csv`: closed-form counts for the reference configurations
pub fn report(runs: &[PathBuf], out_dir: &Path, data_dir: Option<&Path>) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut train_logs = Vec::new();
    let mut eval_curves: Vec<(String, Vec<f64>)> = Vec::new();
    for run in runs {
        let label = run_label(run);
        train_logs.push((label.clone(), read_metrics(&run.join("metrics.csv"))?));
        let mut evals: Vec<PathBuf> = match fs::read_dir(run) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.starts_with("eval_") && s.ends_with(".csv"))
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        evals.sort();
        for path in evals {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let (per, _) = EvalReport::parse_csv(&text)
                .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
            let name = stem.trim_start_matches("eval_");
            eval_curves.push((format!("{label}_{name}_l1"), per));
        }
    }

    let mut train_csv = String::from("epoch");
    for (label, _) in &train_logs {
        write!(train_csv, ",{label}_train_l1,{label}_val_l1").expect("write to string");
    }
    train_csv.push('\n');
    let mut epochs: Vec<usize> = train_logs.iter().flat_map(|(_, h)| h.iter().map(|r| r.epoch)).collect();
    epochs.sort_unstable();
    epochs.dedup();
    for epoch in epochs {
        write!(train_csv, "{epoch}").expect("write to string");
        for (_, log) in &train_logs {
            let rec = log.iter().find(|r| r.epoch == epoch);
            write!(
                train_csv,
                ",{},{}",
                fmt_opt(rec.map(|r| r.train_l1)),
                fmt_opt(rec.and_then(|r| r.val_l1))
            )
            .expect("write to string");
        }
        train_csv.push('\n');
    }
    let curves_train = out_dir.join("curves_train.csv");
    fs::write(&curves_train, train_csv).map_err(io_err(&curves_train))?;

    let mut sub_csv = String::from("subproblem");
    for (label, _) in &eval_curves {
        write!(sub_csv, ",{label}").expect("write to string");
    }
    sub_csv.push('\n');
    let rows = eval_curves.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for k in 0..rows {
        write!(sub_csv, "{}", k + 1).expect("write to string");
        for (_, v) in &eval_curves {
            write!(sub_csv, ",{}", fmt_opt(v.get(k).copied())).expect("write to string");
        }
        sub_csv.push('\n');
    }
    let curves_subproblem = out_dir.join("curves_subproblem.csv");
    fs::write(&curves_subproblem, sub_csv).map_err(io_err(&curves_subproblem))?;

    let answer_stats = match data_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(io_err(dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "rpn"))
                .collect();
            files.sort();
            let mut csv = String::from("dataset,n,expressions,answer_mean,answer_std,late_answer_mean,late_answer_std\n");
            for path in files {
                let exprs = crate::rpn::read_dataset(&path).map_err(|e| TrainError::Data(e.to_string()))?;
                let n = exprs.first().map_or(0, Expression::n);
                let (_, mean, std) = mean_std(exprs.iter().flat_map(|e| e.answers().iter().copied()));
                let (_, late_mean, late_std) = mean_std(
                    exprs
                        .iter()
                        .flat_map(|e| e.answers().iter().skip(LEADING_SUBPROBLEMS_SKIPPED).copied()),
                );
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
                writeln!(
                    csv,
                    "{name},{n},{},{mean},{std},{late_mean},{late_std}",
                    exprs.len()
                )
                .expect("write to string");
            }
            let path = out_dir.join("answer_stats.csv");
            fs::write(&path, csv).map_err(io_err(&path))?;
            Some(path)
        }
        None => None,
    };

    let mut counts = String::from("model,hidden,layers,params\n");
    for cfg in [
        ModelConfig::ddrstack(32),
        ModelConfig::baseline(32, 1),
        ModelConfig::baseline(128, 1),
        ModelConfig::baseline(128, 2),
    ] {
        writeln!(counts, "{},{},{},{}", cfg.kind, cfg.hidden, cfg.layers, cfg.param_count()).expect("write to string");
    }
    let param_counts = out_dir.join("param_counts.csv");
    fs::write(&param_counts, counts).map_err(io_err(&param_counts))?;

    Ok(ReportFiles {
        curves_train,
        curves_subproblem,
        answer_stats,
        param_counts,
    })
}
