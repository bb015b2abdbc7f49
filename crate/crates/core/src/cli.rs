//! Command-line front end. [`run`] maps every failure to an exit code:
//! 0 success, 1 usage, 2 data, 3 runtime or numeric.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_kv, render_kv};
use crate::data::{Dataset, DatasetKind, Split};
use crate::error::Error;
use crate::evaluation::{
    self, categorical_classifier_accuracy, categorical_probability_histogram, categorical_traversal_grid,
    lambda_sweep_row, latent_traversal_grid, write_csv, write_pgm,
};
use crate::gradcheck::run_suite;
use crate::objectives::{mi_lower_bound_estimate, MiEstimateConfig};
use crate::training::{load_model_file, train, RunDir, TrainConfig, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vmi",
    version,
    about = "VAEs with a variational mutual-information regularizer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, writing checkpoints and per-step metrics.
    Train(TrainArgs),
    /// Render latent traversal grids as PGM images.
    Traverse(TraverseArgs),
    /// Clustering accuracy, posterior histograms and digit counts of a joint model.
    Eval(EvalArgs),
    /// Fit a fresh auxiliary network to a frozen model and print the MI lower bound.
    MiEstimate(MiArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(SeedArgs),
    /// Check the total-expectation identity on random finite joints.
    LemmaCheck(LemmaArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    FashionMnist,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => Self::Mnist,
            DatasetArg::FashionMnist => Self::FashionMnist,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LatentArg {
    Gaussian,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraverseMode {
    Z1z2,
    LambdaSweep,
    Categorical,
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite value >= 0, got {s}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite value > 0, got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Data root holding `mnist/` and `fashion-mnist/` (default: $VMI_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub latent: Option<LatentArg>,
    #[arg(long = "lambda", value_parser = non_negative, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: Option<u64>,
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long, value_parser = positive)]
    pub tau: Option<f64>,
    /// Q-only steps per batch.
    #[arg(long)]
    pub q_steps: Option<u64>,
    /// Fitting steps of the per-epoch fresh-Q bound (0 disables it).
    #[arg(long)]
    pub eval_q_steps: Option<u64>,
    /// Train on the first N training images only.
    #[arg(long)]
    pub train_limit: Option<u64>,
    /// Flat `key=value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from this epoch checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    /// Checkpoint(s); lambda-sweep takes one per row, in order.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub ckpt: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "z1z2")]
    pub mode: TraverseMode,
    #[arg(long, default_value_t = evaluation::DEFAULT_GRID_N)]
    pub grid_n: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Index of the first seed image in the split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Seed images (rows) for the categorical grid.
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split for the histograms; accuracy is always reported on both.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[arg(long, required = true)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, required = true)]
    pub seed: u64,
    /// Fitting steps for the fresh auxiliary network.
    #[arg(long, default_value_t = 2000)]
    pub q_steps: usize,
    /// Fitting passes over the data; overrides --q-steps.
    #[arg(long)]
    pub q_epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Held-out images the bound is averaged over.
    #[arg(long, default_value_t = 2000)]
    pub eval_samples: usize,
    /// Estimate on a copy whose decoder ignores the categorical code.
    #[arg(long)]
    pub ignore_c: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LemmaArgs {
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub joints: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Data(_) => EXIT_DATA,
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn data_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Traverse(a) => cmd_traverse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::MiEstimate(a) => cmd_mi(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::LemmaCheck(a) => cmd_lemma(a),
    }
}

fn data_root(args: &DataArgs) -> std::result::Result<PathBuf, Failure> {
    Dataset::data_root(args.data_dir.as_deref())
        .ok_or_else(|| data_failure("no data directory: pass --data-dir or set VMI_DATA_DIR"))
}

fn load(args: &DataArgs, kind: DatasetKind, split: Split) -> std::result::Result<Dataset, Failure> {
    let root = data_root(args)?;
    Dataset::load(&root, kind, split).map_err(|e| data_failure(e.to_string()))
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

/// Writes `manifest.txt` with the command, crate version and resolved settings.
fn write_manifest(dir: &Path, command: &str, pairs: Vec<(String, String)>) -> CmdResult {
    ensure_dir(dir)?;
    let mut all = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    all.extend(pairs);
    let path = dir.join("manifest.txt");
    fs::write(&path, render_kv(all)).map_err(|e| Error::io(&path, e).into())
}

/// Resolved training configuration: `base`, then the config file, then flags.
/// File and flag pairs are applied together so `latent` resets the layout
/// before any explicit layout keys.
pub fn resolve_train_config(a: &TrainArgs, base: TrainConfig) -> std::result::Result<TrainConfig, Failure> {
    let mut flags: Vec<(String, String)> = Vec::new();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
        flags = parse_kv(&text)?;
    }
    let mut set = |k: &str, v: String| flags.push((k.to_string(), v));
    if let Some(l) = a.latent {
        set(
            "latent",
            if l == LatentArg::Joint { "joint" } else { "gaussian" }.into(),
        );
    }
    if let Some(d) = a.dataset {
        set("dataset", DatasetKind::from(d).to_string());
    }
    if let Some(v) = a.lambda {
        set("lambda", v.to_string());
    }
    if let Some(v) = a.epochs {
        set("epochs", v.to_string());
    }
    if let Some(v) = a.batch {
        set("batch", v.to_string());
    }
    if let Some(v) = a.tau {
        set("tau", v.to_string());
    }
    if let Some(v) = a.q_steps {
        set("q_steps", v.to_string());
    }
    if let Some(v) = a.eval_q_steps {
        set("eval_q_steps", v.to_string());
    }
    if let Some(v) = a.train_limit {
        set("train_limit", v.to_string());
    }
    set("seed", a.seed.to_string());
    let mut cfg = base;
    cfg.apply(&flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let (cfg, state) = match &a.ckpt {
        Some(path) => {
            let (state, stored) = TrainState::from_checkpoint(&Checkpoint::load(path)?)?;
            let cfg = resolve_train_config(&a, stored.clone())?;
            if stored.spec != cfg.spec || stored.arch != cfg.arch {
                return Err(usage(
                    "--ckpt was trained with a different latent layout or architecture",
                ));
            }
            (cfg, state)
        }
        None => {
            let cfg = resolve_train_config(&a, TrainConfig::default())?;
            let state = TrainState::init(&cfg)?;
            (cfg, state)
        }
    };
    let ds = load(&a.data, cfg.dataset, Split::Train)?;
    let mut manifest = cfg.to_kv();
    manifest.push(("data_dir".into(), data_root(&a.data)?.display().to_string()));
    if let Some(p) = &a.ckpt {
        manifest.push(("resumed_from".into(), p.display().to_string()));
    }
    write_manifest(&a.out, "train", manifest)?;
    let run = RunDir::new(&a.out);
    let report = train(&cfg, &ds, state, Some(&run))?;
    if let Some(last) = report.records.last() {
        println!(
            "trained {} steps: elbo {:.4} kl_cat {:.4} mi_term {:.4}",
            report.state.step,
            last.breakdown.elbo(),
            last.breakdown.kl_cat,
            last.breakdown.mi_term
        );
    }
    println!("final checkpoint: {}", run.final_checkpoint().display());
    Ok(())
}

fn cmd_traverse(a: TraverseArgs) -> CmdResult {
    let models = a
        .ckpt
        .iter()
        .map(|p| load_model_file(p))
        .collect::<crate::Result<Vec<_>>>()?;
    let (first, cfg) = &models[0];
    let ds = load(&a.data, cfg.dataset, a.split.into())?;
    let rows = match a.mode {
        TraverseMode::Categorical => a.rows,
        _ => 1,
    };
    if a.index + rows > ds.len() {
        return Err(usage(format!(
            "--index {} with {rows} rows exceeds the {} images",
            a.index,
            ds.len()
        )));
    }
    if a.grid_n == 0 {
        return Err(usage("--grid-n must be positive"));
    }
    ensure_dir(&a.out)?;
    let seed = ds.image(a.index).to_vec();
    let (name, grid) = match a.mode {
        TraverseMode::Z1z2 => {
            if models.len() != 1 {
                return Err(usage("z1z2 mode takes exactly one --ckpt"));
            }
            ("traverse_z1z2", latent_traversal_grid(first, &seed, a.grid_n)?)
        }
        TraverseMode::LambdaSweep => {
            let params: Vec<_> = models.iter().map(|(p, _)| p.clone()).collect();
            ("lambda_sweep", lambda_sweep_row(&params, &seed, a.grid_n)?)
        }
        TraverseMode::Categorical => {
            if models.len() != 1 {
                return Err(usage("categorical mode takes exactly one --ckpt"));
            }
            let seeds: Vec<Vec<f64>> = (a.index..a.index + rows).map(|i| ds.image(i).to_vec()).collect();
            ("categorical", categorical_traversal_grid(first, &seeds)?)
        }
    };
    let pgm = a.out.join(format!("{name}.pgm"));
    write_pgm(&grid, &pgm)?;
    let stats: Vec<String> = (0..grid.rows)
        .map(|r| {
            format!(
                "{r},{},{}",
                grid.row_variation(r),
                a.ckpt[r.min(a.ckpt.len() - 1)].display()
            )
        })
        .collect();
    write_csv(
        &a.out.join(format!("{name}_variation.csv")),
        "row,l1_variation,checkpoint",
        stats,
    )?;
    println!(
        "{}: variation {:.6}, column variance {:.6}",
        pgm.display(),
        grid.variation(),
        grid.column_variance()
    );
    let mut manifest: Vec<(String, String)> = vec![
        ("mode".into(), format!("{:?}", a.mode).to_lowercase()),
        (
            "checkpoints".into(),
            a.ckpt
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("split".into(), Split::from(a.split).to_string()),
        ("index".into(), a.index.to_string()),
        ("grid_n".into(), a.grid_n.to_string()),
    ];
    manifest.push(("rows".into(), rows.to_string()));
    write_manifest(&a.out, "traverse", manifest)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let (params, cfg) = load_model_file(&a.ckpt)?;
    let k = params
        .spec
        .cat_k
        .ok_or_else(|| usage("eval needs a joint (categorical) checkpoint"))?;
    let train_ds = load(&a.data, cfg.dataset, Split::Train)?;
    let test_ds = load(&a.data, cfg.dataset, Split::Test)?;
    ensure_dir(&a.out)?;
    let post_train = evaluation::encode(&params, &train_ds.images)?;
    let post_test = evaluation::encode(&params, &test_ds.images)?;
    let probs_train = post_train.probs.expect("joint model");
    let probs_test = post_test.probs.expect("joint model");
    let assign_train = evaluation::assignments(&probs_train);
    let assign_test = evaluation::assignments(&probs_test);
    let acc = categorical_classifier_accuracy(&assign_train, &train_ds.labels, &assign_test, &test_ds.labels, k);
    write_csv(
        &a.out.join("accuracy.csv"),
        "split,accuracy",
        [format!("train,{}", acc.train), format!("test,{}", acc.test)],
    )?;

    let (probs, assign, labels) = match a.split {
        SplitArg::Train => (&probs_train, &assign_train, &train_ds.labels),
        SplitArg::Test => (&probs_test, &assign_test, &test_ds.labels),
    };
    let hist = categorical_probability_histogram(probs, a.bins)?;
    write_csv(
        &a.out.join("probability_histogram.csv"),
        "bin_lo,bin_hi,count",
        hist.iter().enumerate().map(|(i, c)| {
            let w = 1.0 / a.bins as f64;
            format!("{},{},{c}", i as f64 * w, (i + 1) as f64 * w)
        }),
    )?;
    let counts = evaluation::onehot_digit_histograms(assign, labels, k);
    write_csv(
        &a.out.join("digit_histogram.csv"),
        "category,mapped_label,d0,d1,d2,d3,d4,d5,d6,d7,d8,d9",
        counts.iter().enumerate().map(|(c, row)| {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            format!("{c},{},{}", acc.mapping[c], cells.join(","))
        }),
    )?;
    let kl = evaluation::mean_categorical_kl(probs);
    println!("accuracy train {:.4} test {:.4}", acc.train, acc.test);
    println!("categorical KL {kl:.4} nats");
    println!(
        "probability mass in [0.05,0.15] {:.4}, above 0.8 {:.4}",
        evaluation::mass_within(probs, 0.05, 0.15),
        evaluation::mass_above(probs, 0.8)
    );
    write_manifest(
        &a.out,
        "eval",
        vec![
            ("checkpoint".into(), a.ckpt.display().to_string()),
            ("split".into(), Split::from(a.split).to_string()),
            ("bins".into(), a.bins.to_string()),
            ("accuracy_train".into(), acc.train.to_string()),
            ("accuracy_test".into(), acc.test.to_string()),
            ("categorical_kl".into(), kl.to_string()),
        ],
    )
}

fn cmd_mi(a: MiArgs) -> CmdResult {
    let (mut params, cfg) = load_model_file(&a.ckpt)?;
    if a.ignore_c {
        params = evaluation::ignore_categorical_code(&params)?;
    }
    let ds = load(&a.data, cfg.dataset, a.split.into())?;
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let eval_samples = a.eval_samples.min(ds.len() / 2);
    let q_steps = match a.q_epochs {
        Some(e) => e * (ds.len() - eval_samples).div_ceil(a.batch),
        None => a.q_steps,
    };
    let est = mi_lower_bound_estimate(
        &params,
        &ds.images,
        &MiEstimateConfig {
            q_steps,
            batch_size: a.batch,
            eval_samples,
            seed: a.seed,
            ..MiEstimateConfig::default()
        },
    )?;
    println!("{:.6}", est.bound);
    eprintln!(
        "MI lower bound {:.6} nats (standard error {:.6}, {} held-out images, {q_steps} Q steps)",
        est.bound, est.std_error, est.eval_samples
    );
    if let Some(out) = &a.out {
        write_manifest(
            out,
            "mi-estimate",
            vec![
                ("checkpoint".into(), a.ckpt.display().to_string()),
                ("split".into(), Split::from(a.split).to_string()),
                ("seed".into(), a.seed.to_string()),
                ("q_steps".into(), q_steps.to_string()),
                ("batch".into(), a.batch.to_string()),
                ("eval_samples".into(), est.eval_samples.to_string()),
                ("ignore_c".into(), a.ignore_c.to_string()),
                ("mi_bound".into(), est.bound.to_string()),
                ("std_error".into(), est.std_error.to_string()),
            ],
        )?;
    }
    Ok(())
}

fn cmd_gradcheck(a: SeedArgs) -> CmdResult {
    let results = run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{status:<4} {:<40} max rel err {:.3e}", r.name, r.max_rel_err);
    }
    if let Some(out) = &a.out {
        write_manifest(
            out,
            "gradcheck",
            vec![
                ("seed".into(), a.seed.to_string()),
                ("failed".into(), failed.to_string()),
            ],
        )?;
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{failed} gradient families exceed the tolerance"),
        });
    }
    Ok(())
}

fn cmd_lemma(a: LemmaArgs) -> CmdResult {
    let battery = evaluation::lemma_battery(a.seed, a.joints, a.samples)?;
    println!(
        "joints {}  max exact |lhs - rhs| {:.3e}",
        battery.checks.len(),
        battery.max_exact_gap
    );
    println!("Monte Carlo checks outside 3 standard errors: {}", battery.mc_failures);
    if let Some(out) = &a.out {
        write_manifest(
            out,
            "lemma-check",
            vec![
                ("seed".into(), a.seed.to_string()),
                ("joints".into(), a.joints.to_string()),
                ("samples".into(), a.samples.to_string()),
                ("max_exact_gap".into(), battery.max_exact_gap.to_string()),
                ("mc_failures".into(), battery.mc_failures.to_string()),
            ],
        )?;
    }
    if battery.max_exact_gap > 1e-12 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: "exact sides differ".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("vmi").chain(args.iter().copied()))
    }

    #[test]
    fn train_command_parses() {
        let cli = parse(&[
            "train",
            "--dataset",
            "mnist",
            "--latent",
            "joint",
            "--lambda",
            "1.0",
            "--seed",
            "42",
            "--out",
            "runs/a",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!("expected train")
        };
        let cfg = resolve_train_config(&a, TrainConfig::default()).unwrap();
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.seed, 42);
        assert!(cfg.spec.is_joint());
    }

    #[test]
    fn negative_lambda_rejected() {
        let err = parse(&["train", "--lambda", "-1", "--seed", "1", "--out", "x"]).unwrap_err();
        assert!(err.to_string().contains("--lambda"), "{err}");
    }

    #[test]
    fn missing_subcommand_and_seed_are_usage_errors() {
        assert_eq!(run(["vmi"]), EXIT_USAGE);
        assert_eq!(run(["vmi", "train", "--out", "x"]), EXIT_USAGE);
        assert_eq!(
            run(["vmi", "train", "--seed", "1", "--out", "x", "--bogus"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# sweep\nlatent=gaussian\nlambda=5\nepochs=3\n").unwrap();
        let p = path.to_str().unwrap();
        let Command::Train(a) = parse(&["train", "--config", p, "--lambda", "0.1", "--seed", "3", "--out", "o"])
            .unwrap()
            .command
        else {
            panic!("expected train")
        };
        let cfg = resolve_train_config(&a, TrainConfig::default()).unwrap();
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.epochs, 3);
        assert!(!cfg.spec.is_joint());
    }

    #[test]
    fn missing_data_dir_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "vmi",
            "train",
            "--seed",
            "1",
            "--data-dir",
            dir.path().join("absent").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }
}
