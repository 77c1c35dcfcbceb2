//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 4 (full) needs hours of single-core training. It runs when
//! `DDR_FULL_RUNS` names a directory holding `full_ddrstack/best.ddrc` and
//! `full_baseline/best.ddrc` (as produced by `ddr train`), or trains in
//! process when `DDR_ACCEPTANCE_FULL=1`. Otherwise it is reported as not run.
//!
//! `DDR_ACCEPTANCE_ONLY=1,6` restricts the run to the listed criteria.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ddr::autodiff::{Graph, Tensor, TensorError, Var};
use ddr::gradcheck::grad_check_many;
use ddr::model::{l1_loss, ModelConfig, ModelError, Network};
use ddr::nn::checkpoint::Checkpoint;
use ddr::nn::Bound;
use ddr::progexec::{
    execute, parse_program, random_scene, step, ExecError, ExecState, ExecValue, ProgramToken, SceneGraph,
    SceneObject,
};
use ddr::rng::Rng;
use ddr::rpn::{evaluate, evaluate_steps, generate_expression, parse_tokens, DatasetSpec, Expression, Operator, Split, Step};
use ddr::trainer::{self, smooth, TrainConfig};

use common::*;

const GRAD_TOL: f64 = 1e-4;
const FULL_DDR_MAX_L1: f64 = 0.22;
const FULL_BASELINE_MIN_L1: f64 = 0.25;
const CI_DDR_MAX_L1: f64 = 0.5;
const CI_MIN_RELATIVE_GAP: f64 = 0.20;
const GEN_BASELINE_LATE_L1: f64 = 2.0;
const GEN_LATE_INDEX: usize = 15;
const GEN_RATIO: f64 = 2.0;
const SMOOTH_WINDOW: usize = 5;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    NotRun,
    /// Diagnostic only; not one of the criteria.
    Info,
}

struct Outcome {
    id: &'static str,
    status: Status,
    detail: String,
}

fn report(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

// ---------------------------------------------------------------------------
// 1

fn criterion_1() -> Outcome {
    let ddr = Network::new(ModelConfig::ddrstack(32), 0).unwrap().params().num_params();
    let base = Network::new(ModelConfig::baseline(32, 1), 0).unwrap().params().num_params();
    report(
        "1 parameter counts",
        ddr == 16_993 && base == 8_801,
        format!("ddrstack(h=32) = {ddr} (want 16993), baseline(h=32, 1 layer) = {base} (want 8801)"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Values bounded away from zero, with random sign.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.5, 2.0);
    for v in t.data_mut() {
        if rng.next_f64() < 0.5 {
            *v = -*v;
        }
    }
    t
}

type Check = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>>;

/// Reduces `out` to a scalar through a fixed random weighting so every
/// output element contributes a distinct adjoint.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = g.leaf(weights.clone());
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor>, Check)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, Check)> = Vec::new();
    macro_rules! case {
        ($name:literal, [$($input:expr),+], $out_shape:expr, |$g:ident, $v:ident| $body:expr) => {{
            let inputs = vec![$($input),+];
            let w = rand_tensor(rng, &$out_shape, -1.0, 1.0);
            let f: Check = Box::new(move |$g: &mut Graph, $v: &[Var]| {
                let out = $body?;
                weighted_sum($g, out, &w)
            });
            cases.push(($name, inputs, f));
        }};
    }
    case!("add", [rand_tensor(rng, &[5], -2.0, 2.0), rand_tensor(rng, &[5], -2.0, 2.0)], [5], |g, v| g.add(v[0], v[1]));
    case!("sub", [rand_tensor(rng, &[2, 3], -2.0, 2.0), rand_tensor(rng, &[2, 3], -2.0, 2.0)], [2, 3], |g, v| g.sub(v[0], v[1]));
    case!("mul", [rand_tensor(rng, &[4], -2.0, 2.0), rand_tensor(rng, &[4], -2.0, 2.0)], [4], |g, v| g.mul(v[0], v[1]));
    case!("div", [rand_tensor(rng, &[4], -2.0, 2.0), away_from_zero(rng, &[4])], [4], |g, v| g.div(v[0], v[1]));
    case!("matmul (matrix-vector)", [rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[4], -1.0, 1.0)], [3], |g, v| g.matmul(v[0], v[1]));
    case!("matmul (matrix-matrix)", [rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[4, 2], -1.0, 1.0)], [3, 2], |g, v| g.matmul(v[0], v[1]));
    case!("concat axis 0", [rand_tensor(rng, &[3], -1.0, 1.0), rand_tensor(rng, &[2], -1.0, 1.0)], [5], |g, v| g.concat(&[v[0], v[1]], 0));
    case!("concat axis 1", [rand_tensor(rng, &[2, 3], -1.0, 1.0), rand_tensor(rng, &[2, 1], -1.0, 1.0)], [2, 4], |g, v| g.concat(&[v[0], v[1]], 1));
    case!("slice", [rand_tensor(rng, &[3, 4], -1.0, 1.0)], [3, 2], |g, v| g.slice(v[0], 1, 1, 2));
    case!("sigmoid", [rand_tensor(rng, &[6], -3.0, 3.0)], [6], |g, v| g.sigmoid(v[0]));
    case!("tanh", [rand_tensor(rng, &[6], -3.0, 3.0)], [6], |g, v| g.tanh(v[0]));
    case!("embedding_row", [rand_tensor(rng, &[5, 3], -1.0, 1.0)], [3], |g, v| g.embedding_row(v[0], 2));
    case!("sum", [rand_tensor(rng, &[2, 3], -1.0, 1.0)], [1], |g, v| g.sum(v[0]));
    case!("mean", [rand_tensor(rng, &[7], -1.0, 1.0)], [1], |g, v| g.mean(v[0]));
    case!("abs", [away_from_zero(rng, &[6])], [6], |g, v| g.abs(v[0]));
    cases
}

fn to_tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

fn criterion_2() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut track = |err: f64, what: String| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, what);
        }
    };
    let mut primitives = 0;
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        for (name, inputs, f) in primitive_cases(&mut rng) {
            let err = grad_check_many(|g, v| f(g, v), &inputs, 1e-5).unwrap();
            track(err, format!("{name}, seed {seed}"));
            primitives += 1;
        }
    }
    let mut full = 0;
    for seed in 0..10u64 {
        let net = Network::new(ModelConfig::ddrstack(8), 100 + seed).unwrap();
        let expr = generate_expression(&mut Rng::new(200 + seed), 1 + (seed as usize % 5), 100.0).unwrap();
        let points: Vec<Tensor> = net.params().params().iter().map(|p| p.value.clone()).collect();
        let err = grad_check_many(
            |g, vars| {
                let bound = Bound::from_vars(vars.to_vec());
                let preds = net.forward(g, &bound, &expr).map_err(to_tensor_err)?;
                l1_loss(g, &preds, expr.answers()).map_err(to_tensor_err)
            },
            &points,
            1e-5,
        )
        .unwrap();
        track(err, format!("ddrstack(h=8) loss, seed {seed}"));
        full += 1;
    }
    report(
        "2 gradient correctness",
        worst.0 < GRAD_TOL,
        format!(
            "{primitives} primitive checks + {full} full-model checks; max relative error {:.3e} ({}) < {GRAD_TOL:e}",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

fn criterion_3() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut mismatches = 0;
    for i in 0..10_000 {
        let n = 1 + (i % 12);
        let expr = generate_expression(&mut rng, n, 100.0).unwrap();
        let stack = evaluate(expr.tokens()).unwrap();
        let mut tree_answers = Vec::new();
        rpn_tree_eval(&rpn_tree(expr.tokens()).unwrap(), &mut tree_answers).unwrap();
        let same = stack.len() == tree_answers.len()
            && stack.iter().zip(&tree_answers).all(|(a, b)| a.to_bits() == b.to_bits())
            && stack.iter().zip(expr.answers()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            mismatches += 1;
        }
    }
    let worked = evaluate_steps([
        Step::Push(2.0),
        Step::Push(3.0),
        Step::Push(4.0),
        Step::Apply(Operator::Add),
        Step::Apply(Operator::Mul),
    ])
    .unwrap();
    let fig = evaluate(&parse_tokens("0.4 0.8 /").unwrap()).unwrap();
    report(
        "3 oracle equivalence",
        mismatches == 0 && worked == vec![7.0, 14.0] && fig == vec![0.5],
        format!("{mismatches}/10000 stack/tree mismatches; \"2 3 4 + *\" -> {worked:?}; \"0.4 0.8 /\" -> {fig:?}"),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5

struct Trained {
    ddr: Network,
    baseline: Network,
}

struct Sets {
    val: Vec<Expression>,
    test: Vec<Expression>,
    gen: Vec<Expression>,
}

fn reference_sets(spec: &DatasetSpec) -> Sets {
    Sets {
        val: spec.generate(Split::Val).unwrap(),
        test: spec.generate(Split::Test).unwrap(),
        gen: spec.generate(Split::Gen).unwrap(),
    }
}

fn train_pair(train: &[Expression], val: &[Expression], epochs: usize) -> Trained {
    let run = |model: ModelConfig| {
        let cfg = TrainConfig {
            model,
            epochs,
            seed: 1,
            ..TrainConfig::default()
        };
        trainer::train(&cfg, train, val, None, |_| {}).unwrap().best
    };
    Trained {
        ddr: run(ModelConfig::ddrstack(32)),
        baseline: run(ModelConfig::baseline(32, 1)),
    }
}

fn test_l1(net: &Network, data: &[Expression]) -> f64 {
    trainer::evaluate(net, data, "test", 0).unwrap().overall_l1
}

fn criterion_4_ci(sets: &Sets, spec: &DatasetSpec) -> (Outcome, Trained) {
    let mut train = spec.generate(Split::Train).unwrap();
    train.truncate(20_000);
    let started = Instant::now();
    let models = train_pair(&train, &sets.val, 20);
    let ddr = test_l1(&models.ddr, &sets.test);
    let base = test_l1(&models.baseline, &sets.test);
    let gap = (base - ddr) / base;
    let out = report(
        "4 training (CI: 20k train, 20 epochs)",
        ddr <= CI_DDR_MAX_L1 && gap >= CI_MIN_RELATIVE_GAP,
        format!(
            "test L1 ddrstack {ddr:.4} (<= {CI_DDR_MAX_L1}), baseline {base:.4}; relative gap {:.1}% (>= {:.0}%); {:.0}s",
            100.0 * gap,
            100.0 * CI_MIN_RELATIVE_GAP,
            started.elapsed().as_secs_f64()
        ),
    );
    (out, models)
}

/// Checkpoints from the full-scale runs, kept in the repository.
fn default_full_runs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../checkpoints")
}

fn load_net(path: &Path) -> Network {
    let ck = Checkpoint::load(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Network::from_checkpoint(&ck).unwrap()
}

fn criterion_4_full(sets: &Sets, spec: &DatasetSpec) -> (Outcome, Option<Trained>) {
    let id = "4 training (full: 100k train, <= 70 epochs)";
    let dir = std::env::var("DDR_FULL_RUNS").map(PathBuf::from).unwrap_or_else(|_| default_full_runs());
    let models = if dir.join("full_ddrstack/best.ddrc").exists() {
        Trained {
            ddr: load_net(&dir.join("full_ddrstack/best.ddrc")),
            baseline: load_net(&dir.join("full_baseline/best.ddrc")),
        }
    } else if std::env::var("DDR_ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
        train_pair(&spec.generate(Split::Train).unwrap(), &sets.val, 70)
    } else {
        let out = Outcome {
            id,
            status: Status::NotRun,
            detail: format!(
                "no checkpoints at {}; set DDR_FULL_RUNS=<dir> or DDR_ACCEPTANCE_FULL=1",
                default_full_runs().display()
            ),
        };
        return (out, None);
    };
    let ddr = test_l1(&models.ddr, &sets.test);
    let base = test_l1(&models.baseline, &sets.test);
    let out = report(
        id,
        ddr <= FULL_DDR_MAX_L1 && base >= FULL_BASELINE_MIN_L1,
        format!("test L1 ddrstack {ddr:.4} (<= {FULL_DDR_MAX_L1}), baseline {base:.4} (>= {FULL_BASELINE_MIN_L1})"),
    );
    (out, Some(models))
}

fn criterion_5(id: &'static str, models: &Trained, gen: &[Expression]) -> Outcome {
    let ddr = trainer::evaluate(&models.ddr, gen, "ddrstack", 0).unwrap().per_subproblem_l1;
    let base = trainer::evaluate(&models.baseline, gen, "baseline", 0).unwrap().per_subproblem_l1;
    let late = GEN_LATE_INDEX - 1..ddr.len();
    let base_peak = base[late.clone()].iter().cloned().fold(f64::MIN, f64::max);
    let a = base_peak > GEN_BASELINE_LATE_L1;

    let sm = smooth(&ddr, SMOOTH_WINDOW);
    let drops: Vec<usize> = (1..sm.len()).filter(|&k| sm[k] < sm[k - 1]).map(|k| k + 1).collect();
    let min_ratio = late.clone().map(|k| base[k] / ddr[k]).fold(f64::MAX, f64::min);
    let b = drops.is_empty() && min_ratio >= GEN_RATIO;
    report(
        id,
        a && b,
        format!(
            "(a) baseline max L1 beyond index {GEN_LATE_INDEX} = {base_peak:.3} (> {GEN_BASELINE_LATE_L1}); \
             (b) smoothed ddrstack decreases at indices {drops:?}, min baseline/ddrstack ratio beyond {GEN_LATE_INDEX} = {min_ratio:.2} (>= {GEN_RATIO}); \
             ddrstack L1 at 1/15/30 = {:.3}/{:.3}/{:.3}",
            ddr[0],
            ddr[GEN_LATE_INDEX - 1],
            ddr[ddr.len() - 1]
        ),
    )
}

// ---------------------------------------------------------------------------
// 6

/// Runs every type-valid program of up to `max_len` tokens over `vocab` on
/// every scene, comparing the incremental executor against the tree oracle.
fn exhaustive(vocab: &[ProgramToken], max_len: usize, scenes: &[SceneGraph]) -> (usize, usize, Option<String>) {
    let mut states: Vec<Vec<Result<ExecState, ExecError>>> =
        vec![scenes.iter().map(|s| Ok(ExecState::start(s))).collect()];
    let mut programs = 0;
    let mut checks = 0;
    let mut first_mismatch = None;
    enumerate_programs(vocab, max_len, |prefix, complete| {
        let depth = prefix.len();
        let tok = prefix[depth - 1];
        states.truncate(depth);
        let next: Vec<Result<ExecState, ExecError>> = states[depth - 1]
            .iter()
            .zip(scenes)
            .map(|(st, scene)| match st {
                Ok(st) => step(scene, st, tok),
                Err(e) => Err(e.clone()),
            })
            .collect();
        if complete {
            programs += 1;
            let tree = program_tree(prefix).expect("balanced program");
            for (res, scene) in next.iter().zip(scenes) {
                checks += 1;
                let ok = match (res, oracle_eval(scene, &tree)) {
                    (Ok(st), Ok(v)) => st.saved.is_empty() && st.current == to_exec(v),
                    (Err(ExecError::Cardinality { .. }), Err(OErr::Cardinality)) => true,
                    _ => false,
                };
                if !ok && first_mismatch.is_none() {
                    first_mismatch = Some(format!("{:?} on {:?}", prefix, scene.objects.len()));
                }
            }
        }
        states.push(next);
        true
    });
    (programs, checks, first_mismatch)
}

fn figure_scene(red_cubes: usize, blue_spheres: usize, red_spheres: usize, others: usize) -> SceneGraph {
    use ddr::progexec::{Color, Material, Shape, Size};
    let mut rng = Rng::new((red_cubes * 1000 + blue_spheres * 100 + red_spheres * 10 + others) as u64);
    let mut objs = Vec::new();
    let mut add = |shape, color| {
        objs.push(SceneObject {
            shape,
            color,
            size: Size::Large,
            material: Material::Metal,
            x: rng.next_f64(),
            y: rng.next_f64(),
        })
    };
    (0..red_cubes).for_each(|_| add(Shape::Cube, Color::Red));
    (0..blue_spheres).for_each(|_| add(Shape::Sphere, Color::Blue));
    (0..red_spheres).for_each(|_| add(Shape::Sphere, Color::Red));
    (0..others).for_each(|_| add(Shape::Cylinder, Color::Green));
    SceneGraph::new(objs).unwrap()
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(6);
    let scenes: Vec<SceneGraph> = (0..100)
        .map(|_| {
            let k = rng.below(5) as usize;
            random_scene(&mut rng, k)
        })
        .collect();
    let full_vocab = ProgramToken::vocabulary();
    let (p_full, c_full, m_full) = exhaustive(&full_vocab, 5, &scenes);
    let (p_red, c_red, m_red) = exhaustive(&reduced_vocabulary(), 8, &scenes);

    let program = parse_program("filter_color_red fork filter_shape_sphere union count").unwrap();
    let mut fig_ok = true;
    let mut fig_cases = 0;
    for (rc, bs, rs, o) in [(2, 1, 0, 0), (0, 0, 0, 0), (1, 2, 1, 3), (3, 0, 2, 1), (0, 4, 0, 2)] {
        let scene = figure_scene(rc, bs, rs, o);
        fig_cases += 1;
        fig_ok &= execute(&scene, &program).unwrap() == ExecValue::Integer((rc + bs + rs) as i64);
    }
    let mismatch = m_full.or(m_red);
    report(
        "6 progexec correctness",
        mismatch.is_none() && fig_ok,
        format!(
            "full vocabulary <= 5 tokens: {p_full} programs; one filter per attribute <= 8 tokens: {p_red} programs; \
             {} program/scene checks, mismatch: {}; red-or-sphere count correct on {fig_cases} scenes: {fig_ok}; {:.0}s",
            c_full + c_red,
            mismatch.as_deref().unwrap_or("none"),
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn ddr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddr"))
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut identical_data = true;
    for run in ["a", "b"] {
        let status = ddr_bin()
            .args(["gen", "--seed", "42", "--out-dir"])
            .arg(tmp.path().join(run))
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    }
    let files = ["train.rpn", "val.rpn", "test.rpn", "gen30.rpn"];
    for f in files {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        identical_data &= a == b;
    }
    let mut csvs = Vec::new();
    for run in ["r1", "r2"] {
        let status = ddr_bin()
            .args(["train", "--model", "ddrstack", "--hidden", "8", "--epochs", "2", "--train-limit", "500"])
            .args(["--seed", "3", "--data"])
            .arg(tmp.path().join("a"))
            .arg("--out")
            .arg(tmp.path().join(run))
            .stderr(std::process::Stdio::null())
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        csvs.push(std::fs::read(tmp.path().join(run).join("metrics.csv")).unwrap());
    }
    report(
        "7 reproducibility",
        identical_data && csvs[0] == csvs[1],
        format!(
            "gen --seed 42 twice: {} files byte-identical: {identical_data}; train twice: metrics.csv identical: {}",
            files.len(),
            csvs[0] == csvs[1]
        ),
    )
}

fn print(o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::NotRun => "NOT RUN",
        Status::Info => "INFO",
    };
    println!("[{tag}] criterion {}: {}", o.id, o.detail);
}

fn selected(criterion: u32) -> bool {
    match std::env::var("DDR_ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|c| c.trim() == criterion.to_string()),
        Err(_) => true,
    }
}

fn main() {
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome| {
        print(&o);
        outcomes.push(o);
    };
    if selected(1) {
        record(criterion_1());
    }
    if selected(2) {
        record(criterion_2());
    }
    if selected(3) {
        record(criterion_3());
    }
    if selected(6) {
        record(criterion_6());
    }
    if selected(7) {
        record(criterion_7());
    }

    if !(selected(4) || selected(5)) {
        return finish(outcomes);
    }
    let spec = DatasetSpec::default();
    let sets = reference_sets(&spec);
    let (ci, ci_models) = criterion_4_ci(&sets, &spec);
    record(ci);
    // Criterion 5 is defined on the full-scale models; the same checks on
    // the CI models are printed for reference only.
    let mut ci_gen = criterion_5("5 checks on CI models (reference only)", &ci_models, &sets.gen);
    ci_gen.detail = format!("{} [{}]", ci_gen.detail, if ci_gen.status == Status::Pass { "would pass" } else { "would fail" });
    ci_gen.status = Status::Info;
    let (full, full_models) = criterion_4_full(&sets, &spec);
    record(full);
    match full_models {
        Some(models) => record(criterion_5("5 generalization (full models)", &models, &sets.gen)),
        None => record(Outcome {
            id: "5 generalization (full models)",
            status: Status::NotRun,
            detail: "needs the criterion 4 (full) models".into(),
        }),
    }
    record(ci_gen);

    finish(outcomes);
}

fn finish(outcomes: Vec<Outcome>) {
    let count = |s: Status| outcomes.iter().filter(|o| o.status == s).count();
    let failed: Vec<&str> = outcomes.iter().filter(|o| o.status == Status::Fail).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed, {} not run",
        count(Status::Pass),
        failed.len(),
        count(Status::NotRun)
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
