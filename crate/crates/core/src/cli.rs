//! Command-line interface: `simulate`, `train`, `evaluate` and `verify`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bench::{run_benchmark, BenchConfig, Method};
use crate::combo::{Combo, LabeledSample, TreatmentRule};
use crate::consistency::{adversarial_instance, sweep, VerifyReport};
use crate::error::{Error, Result};
use crate::io::{read_dataset, read_json, to_json_pretty, write_json, write_text, Dataset};
use crate::losses::{surrogate_empirical_risk, LossSpec, PenaltyKind, SurrogateKind};
use crate::metrics::weighted_value_t;
use crate::network::{NetConfig, NetParams};
use crate::propensity::PropensityModel;
use crate::rng::rng_for;
use crate::simulator::SimConfig;
use crate::trainer::{sgd_fit_weighted, tune_planned, FitResult, TrainConfig, WeightPlan, Weighted};

const SPLIT_STREAM: u64 = 0x5B11;

#[derive(Debug, Parser)]
#[command(name = "combiowl", version, about = "Outcome-weighted learning of combination therapies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simulation benchmark and write a report.
    Simulate(SimulateArgs),
    /// Fit a decision network to a dataset CSV.
    Train(TrainArgs),
    /// Score a fitted network on a dataset CSV.
    Evaluate(EvaluateArgs),
    /// Check the consistency results on random finite instances.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr0: f64,
    #[arg(long, default_value_t = 0.97)]
    pub lr_decay: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
    pub lambda_grid: Vec<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub early_stop: usize,
    /// Use the raw inverse-propensity weights instead of mean-normalized ones.
    #[arg(long)]
    pub raw_weights: bool,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr0,
            lr_decay: self.lr_decay,
            lambda_grid: self.lambda_grid.clone(),
            seed,
            early_stop_patience: self.early_stop,
            normalize_weights: !self.raw_weights,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub p: usize,
    /// Hidden width of the true effect network.
    #[arg(long, default_value_t = 45)]
    pub nh: usize,
    /// Noise scale; 1.1 by default, 0.2 with --misspec.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Subtract the quadratic interaction `gamma * (sum of effects)^2`.
    #[arg(long)]
    pub misspec: bool,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 200)]
    pub ntrain: usize,
    /// Validation size; `ntrain * K` when unset.
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub test_multiplier: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, env = "COMBIOWL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "naive,dnn-simple,dnn-1hdd,bayes")]
    pub methods: Vec<Method>,
    /// Hidden width of the dnn-1hdd decision network.
    #[arg(long, default_value_t = 20)]
    pub hidden: usize,
    #[arg(long, default_value = "hinge")]
    pub surrogate: SurrogateKind,
    #[arg(long, default_value = "lasso")]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Epochs for the naive pairwise classifiers; defaults to --epochs.
    #[arg(long)]
    pub naive_epochs: Option<usize>,
    /// Output directory for report.json, summary.csv and rows.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

impl SimulateArgs {
    pub fn bench_config(&self) -> Result<BenchConfig> {
        let base = if self.misspec {
            SimConfig::misspecified(self.seed)
        } else {
            SimConfig::correct(self.seed)
        };
        let sim = SimConfig {
            k: self.k,
            p: self.p,
            n_h: self.nh,
            sigma: self.sigma.unwrap_or(base.sigma),
            gamma_int: self.gamma,
            ..base
        };
        let mut cfg = BenchConfig::new(sim);
        cfg.n_train = self.ntrain;
        cfg.val_size = self.val_size;
        cfg.test_multiplier = self.test_multiplier;
        cfg.repeats = self.repeats;
        cfg.methods = self.methods.clone();
        cfg.hidden = self.hidden;
        cfg.surrogate = self.surrogate;
        cfg.penalty = self.penalty;
        cfg.train = self.optim.config(self.seed);
        cfg.naive_train = TrainConfig {
            epochs: self.naive_epochs.unwrap_or(self.optim.epochs),
            ..cfg.train.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityChoice {
    /// Empirical frequency of each combination.
    Marginal,
    /// Product of per-label logistic regressions.
    Perlabel,
    /// The dataset's `pi` column.
    Column,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = PropensityChoice::Marginal)]
    pub propensity: PropensityChoice,
    /// Fraction of rows held out for validation (seeded split).
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Hidden width; 0 gives a direct linear map.
    #[arg(long, default_value_t = 0)]
    pub hidden: usize,
    #[arg(long, default_value = "hinge")]
    pub surrogate: SurrogateKind,
    #[arg(long, default_value = "lasso")]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, env = "COMBIOWL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory for params.json, fit.json and history.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalPropensity {
    /// The `pi` column if present, else the fitted model, else the marginal
    /// estimate on the evaluation data.
    Auto,
    Column,
    Marginal,
    Perlabel,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model directory written by `train`, or a params.json file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// fit.json from `train`; found next to params.json when omitted.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalPropensity::Auto)]
    pub propensity: EvalPropensity,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TheoremChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

impl TheoremChoice {
    fn theorems(self) -> Vec<u8> {
        match self {
            TheoremChoice::One => vec![1],
            TheoremChoice::Two => vec![2],
            TheoremChoice::Three => vec![3],
            TheoremChoice::All => vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = TheoremChoice::All)]
    pub theorem: TheoremChoice,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, env = "COMBIOWL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also check the harmful-interaction instance, whose hypothesis fails.
    #[arg(long)]
    pub inject_adversarial: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Propensities used in training, recorded so evaluation can reproduce the
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PropensitySource {
    Column,
    Model { model: PropensityModel },
}

/// Everything besides the weights needed to interpret a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub schema_version: String,
    pub loss: LossSpec,
    pub propensity: PropensitySource,
    pub selected_lambda: f64,
    pub outcome_shift: f64,
    pub weight_scale: f64,
    pub best_epoch: usize,
    /// Penalized training surrogate risk of the returned parameters.
    pub train_risk: f64,
    pub lambda_scores: Vec<crate::trainer::LambdaScore>,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub schema_version: String,
    /// `None` when no recommendation matches an observed combination.
    pub t_value: Option<f64>,
    pub n_match: usize,
    pub n_eval: usize,
    /// Penalized surrogate risk over the recorded training rows, when the fit
    /// summary is available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_risk: Option<f64>,
}

/// Run a parsed command; returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Train(args) => cmd_train(&args).map(|_| 0),
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            emit(args.out.as_deref(), &to_json_pretty(&report)?)?;
            Ok(0)
        }
        Command::Verify(args) => cmd_verify(&args).map(|r| i32::from(!r.ok())),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let cfg = args.bench_config()?;
    let report = run_benchmark(&cfg, args.jobs)?;
    if let Some(dir) = &args.out {
        write_json(&dir.join("report.json"), &report)?;
        write_text(&dir.join("summary.csv"), &report.summary_csv())?;
        write_text(&dir.join("rows.csv"), &report.rows_csv())?;
    }
    print!("{}", report.display_table());
    Ok(0)
}

fn split_rows(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("val fraction must lie in [0, 1), got {fraction}")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng_for(seed, SPLIT_STREAM));
    let n_val = (fraction * n as f64).round() as usize;
    let mut val = rows[..n_val].to_vec();
    let mut train = rows[n_val..].to_vec();
    if train.is_empty() {
        return Err(Error::Empty("training rows after split"));
    }
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

fn pick<T: Clone>(items: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| items[i].clone()).collect()
}

fn column(data: &Dataset, path: &Path) -> Result<Vec<f64>> {
    data.pi.clone().ok_or_else(|| Error::Data {
        path: path.display().to_string(),
        message: "propensity column 'pi' requested but absent".into(),
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(NetParams, FitSummary)> {
    let data = read_dataset(&args.data)?;
    let (train_rows, val_rows) = split_rows(data.samples.len(), args.val_fraction, args.seed)?;
    let train = pick(&data.samples, &train_rows);
    let val = pick(&data.samples, &val_rows);
    let cfg = args.optim.config(args.seed);

    let source = match args.propensity {
        PropensityChoice::Column => PropensitySource::Column,
        PropensityChoice::Marginal => PropensitySource::Model {
            model: PropensityModel::fit_marginal(&train)?,
        },
        PropensityChoice::Perlabel => PropensitySource::Model {
            model: PropensityModel::fit_per_label_logistic(&train)?,
        },
    };
    let (train_pi, val_pi) = match &source {
        PropensitySource::Column => {
            let pi = column(&data, &args.data)?;
            (pick(&pi, &train_rows), pick(&pi, &val_rows))
        }
        PropensitySource::Model { model } => (model.of_samples(&train)?, model.of_samples(&val)?),
    };
    let plan = WeightPlan::new(&train, &train_pi, &val, &val_pi, cfg.normalize_weights)?;
    let net = NetConfig::new(data.p(), args.hidden, data.k())?;
    let loss = LossSpec::new(args.surrogate, args.penalty, 0.0)?;

    let fit: FitResult = if val.is_empty() {
        let [lambda] = cfg.lambda_grid[..] else {
            return Err(Error::InvalidConfig(
                "a lambda grid needs validation rows; set --val-fraction or a single lambda".into(),
            ));
        };
        let mut fit = sgd_fit_weighted(
            Weighted::new(&train, &plan.train)?,
            Weighted::empty(),
            net,
            &loss.with_lambda(lambda),
            &cfg,
        )?;
        fit.outcome_shift = plan.shift;
        fit.weight_scale = plan.scale;
        fit
    } else {
        tune_planned(&train, &val, &plan, net, &loss, &cfg)?
    };

    let summary = FitSummary {
        schema_version: "1".into(),
        loss: loss.with_lambda(fit.selected_lambda),
        propensity: source,
        selected_lambda: fit.selected_lambda,
        outcome_shift: fit.outcome_shift,
        weight_scale: fit.weight_scale,
        best_epoch: fit.best_epoch,
        train_risk: fit.history[fit.best_epoch].train_risk,
        lambda_scores: fit.lambda_scores.clone(),
        train_rows,
        val_rows,
    };
    write_json(&args.out.join("params.json"), &fit.params)?;
    write_json(&args.out.join("fit.json"), &summary)?;
    write_text(&args.out.join("history.csv"), &fit.history_csv())?;
    log::info!(
        "selected lambda {} at epoch {}, training risk {:.6}",
        summary.selected_lambda,
        summary.best_epoch,
        summary.train_risk
    );
    Ok((fit.params, summary))
}

fn model_paths(args: &EvaluateArgs) -> (PathBuf, Option<PathBuf>) {
    if args.model.is_dir() {
        let fit = args.model.join("fit.json");
        (args.model.join("params.json"), args.fit.clone().or(fit.exists().then_some(fit)))
    } else {
        let sibling = args.model.with_file_name("fit.json");
        (args.model.clone(), args.fit.clone().or(sibling.exists().then_some(sibling)))
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateReport> {
    let (params_path, fit_path) = model_paths(args);
    let params: NetParams = read_json(&params_path)?;
    let fit: Option<FitSummary> = fit_path.as_deref().map(read_json).transpose()?;
    let data = read_dataset(&args.data)?;
    let cfg = params.config();
    if data.p() != cfg.input_dim || data.k() != cfg.output_dim {
        return Err(Error::Data {
            path: args.data.display().to_string(),
            message: format!(
                "model expects p = {} and K = {}, data has p = {} and K = {}",
                cfg.input_dim,
                cfg.output_dim,
                data.p(),
                data.k()
            ),
        });
    }

    let fitted_model = fit.as_ref().and_then(|f| match &f.propensity {
        PropensitySource::Model { model } => Some(model.clone()),
        PropensitySource::Column => None,
    });
    let pi = match args.propensity {
        EvalPropensity::Column => column(&data, &args.data)?,
        EvalPropensity::Marginal => PropensityModel::fit_marginal(&data.samples)?.of_samples(&data.samples)?,
        EvalPropensity::Perlabel => {
            PropensityModel::fit_per_label_logistic(&data.samples)?.of_samples(&data.samples)?
        }
        EvalPropensity::Auto => match (&data.pi, &fitted_model) {
            (Some(pi), _) => pi.clone(),
            (None, Some(model)) => model.of_samples(&data.samples)?,
            (None, None) => PropensityModel::fit_marginal(&data.samples)?.of_samples(&data.samples)?,
        },
    };
    let pred: Vec<Combo> = data
        .samples
        .iter()
        .map(|s| params.recommend(&s.x))
        .collect::<Result<_>>()?;
    let value = weighted_value_t(&pred, &data.samples, &pi)?;

    let train_risk = match &fit {
        Some(f) if f.train_rows.iter().all(|&i| i < data.samples.len()) => {
            let rows = &f.train_rows;
            let train: Vec<LabeledSample> = pick(&data.samples, rows);
            let train_pi = match &f.propensity {
                PropensitySource::Column => pick(&column(&data, &args.data)?, rows),
                PropensitySource::Model { model } => model.of_samples(&train)?,
            };
            let weights: Vec<f64> = train
                .iter()
                .zip(&train_pi)
                .map(|(s, p)| (s.r + f.outcome_shift) / p / f.weight_scale)
                .collect();
            Some(surrogate_empirical_risk(&train, &weights, &params, &f.loss)?)
        }
        _ => None,
    };
    Ok(EvaluateReport {
        schema_version: "1".into(),
        t_value: value.t,
        n_match: value.n_match,
        n_eval: data.samples.len(),
        train_risk,
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport> {
    if args.instances == 0 {
        log::warn!("no random instances requested; the verification is vacuous");
    }
    let extra = if args.inject_adversarial {
        vec![adversarial_instance()]
    } else {
        Vec::new()
    };
    let theorems = args
        .theorem
        .theorems()
        .into_iter()
        .map(|t| sweep(t, args.instances, args.seed, &extra))
        .collect::<Result<Vec<_>>>()?;
    let report = VerifyReport {
        schema_version: "1".into(),
        seed: args.seed,
        theorems,
    };
    for t in &report.theorems {
        let status = if t.ok() { "pass" } else { "FAIL" };
        let hypothesis = t
            .condition_holds
            .map(|n| format!(", hypothesis held on {n}"))
            .unwrap_or_default();
        eprintln!(
            "theorem {}: {status} ({}/{} instances{hypothesis}, {} counterexamples)",
            t.theorem,
            t.passed,
            t.instances,
            t.counterexamples.len()
        );
    }
    emit(args.out.as_deref(), &to_json_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["combiowl", "simulate", "--k", "3", "--methods", "naive,bayes", "--misspec"]).unwrap();
        let Command::Simulate(args) = cli.command else { panic!() };
        let cfg = args.bench_config().unwrap();
        assert_eq!(cfg.methods, vec![Method::Naive, Method::Bayes]);
        assert_eq!(cfg.sim.sigma, 0.2);
        assert!(cfg.sim.misspec);
        assert_eq!(cfg.sim.k, 3);

        let cli = Cli::try_parse_from(["combiowl", "verify", "--theorem", "2", "--instances", "5"]).unwrap();
        let Command::Verify(args) = cli.command else { panic!() };
        assert_eq!(args.theorem.theorems(), vec![2]);

        assert!(Cli::try_parse_from(["combiowl", "simulate", "--methods", "svm"]).is_err());
        assert!(Cli::try_parse_from(["combiowl", "train", "--data", "x.csv"]).is_err());
    }

    #[test]
    fn split_is_seeded_and_partitions() {
        let (t, v) = split_rows(10, 0.2, 3).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(t.len(), 8);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_rows(10, 0.2, 3).unwrap(), (t, v));
        assert!(split_rows(10, 1.0, 3).is_err());
    }
}
