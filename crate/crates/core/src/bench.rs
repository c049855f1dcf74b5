//! Simulation benchmark: per repeat, draw a fresh truth and fresh train,
//! validation and test sets, fit each method, and score it on the test set
//! against the realized-optimal combinations.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combo::{Combo, TreatmentRule};
use crate::error::{Error, Result};
use crate::losses::{LossSpec, PenaltyKind, SurrogateKind};
use crate::metrics::MetricsReport;
use crate::network::NetConfig;
use crate::propensity::PropensityModel;
use crate::rng::derive_seed;
use crate::simulator::{gen_dataset, gen_truth, naive_baseline_fit, SimConfig, SimDataset};
use crate::trainer::{tune, TrainConfig};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "dnn-simple")]
    DnnSimple,
    #[serde(rename = "dnn-1hdd")]
    Dnn1hdd,
    #[serde(rename = "bayes")]
    Bayes,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::DnnSimple, Method::Dnn1hdd, Method::Bayes];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::DnnSimple => "dnn-simple",
            Method::Dnn1hdd => "dnn-1hdd",
            Method::Bayes => "bayes",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Data-generating process; `sim.seed` is the master seed.
    pub sim: SimConfig,
    pub n_train: usize,
    /// Validation size; `n_train * K` when unset.
    pub val_size: Option<usize>,
    /// Test size is `test_multiplier * n_train * K`.
    pub test_multiplier: usize,
    pub repeats: usize,
    pub methods: Vec<Method>,
    /// Hidden width of the one-hidden-layer network.
    pub hidden: usize,
    pub surrogate: SurrogateKind,
    pub penalty: PenaltyKind,
    pub train: TrainConfig,
    /// Optimizer settings for the pairwise classifiers of the naive baseline.
    pub naive_train: TrainConfig,
}

impl BenchConfig {
    pub fn new(sim: SimConfig) -> Self {
        let train = TrainConfig {
            seed: sim.seed,
            ..TrainConfig::default()
        };
        BenchConfig {
            sim,
            n_train: 200,
            val_size: None,
            test_multiplier: 10,
            repeats: 10,
            methods: Method::ALL.to_vec(),
            hidden: 20,
            surrogate: SurrogateKind::Hinge,
            penalty: PenaltyKind::Lasso,
            naive_train: train.clone(),
            train,
        }
    }

    pub fn train_size(&self) -> usize {
        self.n_train * self.sim.k
    }

    pub fn val_size(&self) -> usize {
        self.val_size.unwrap_or(self.train_size())
    }

    pub fn test_size(&self) -> usize {
        self.test_multiplier * self.train_size()
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        self.naive_train.validate()?;
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if self.n_train == 0 || self.test_multiplier == 0 || self.val_size() == 0 {
            return Err(Error::InvalidConfig("sample sizes must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        if self.methods.contains(&Method::Dnn1hdd) && self.hidden == 0 {
            return Err(Error::InvalidConfig("dnn-1hdd needs a hidden width of at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: Method,
    pub repeat: usize,
    /// Penalty strength chosen on validation data; `None` for the oracle.
    pub selected_lambda: Option<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(repeats)`; 0 for one repeat.
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mcr: MeanSe,
    pub amcr: MeanSe,
    pub adj_mcr: MeanSe,
    pub adj_amcr: MeanSe,
    pub ab: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub provenance: Provenance,
    pub config: BenchConfig,
    pub rows: Vec<RunRow>,
    pub summary: Vec<MethodSummary>,
}

impl RunReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// One line per method: adjusted MCR, adjusted AMCR and AB with SEs.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,adj_mcr,adj_mcr_se,adj_amcr,adj_amcr_se,ab,ab_se\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.method, s.adj_mcr.mean, s.adj_mcr.se, s.adj_amcr.mean, s.adj_amcr.se, s.ab.mean, s.ab.se
            ));
        }
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = format!("method,repeat,selected_lambda,{}\n", MetricsReport::CSV_HEADER);
        for r in &self.rows {
            let lambda = r.selected_lambda.map(|l| format!("{l:.16e}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.method, r.repeat, lambda, r.metrics.csv_row()));
        }
        out
    }

    /// Human-readable table of means with SEs in parentheses.
    pub fn display_table(&self) -> String {
        let mut out = format!("{:<12}{:>20}{:>20}{:>20}\n", "method", "adj MCR", "adj AMCR", "AB");
        for s in &self.summary {
            let cell = |m: MeanSe| format!("{:.4} ({:.4})", m.mean, m.se);
            out.push_str(&format!(
                "{:<12}{:>20}{:>20}{:>20}\n",
                s.method.name(),
                cell(s.adj_mcr),
                cell(s.adj_amcr),
                cell(s.ab)
            ));
        }
        out
    }
}

fn predict<R: TreatmentRule + ?Sized>(rule: &R, test: &SimDataset) -> Result<Vec<Combo>> {
    test.samples.iter().map(|s| rule.recommend(&s.x)).collect()
}

/// All methods for one repeat, in the order of `cfg.methods`.
pub fn run_repeat(cfg: &BenchConfig, repeat: usize) -> Result<Vec<RunRow>> {
    let seed = derive_seed(cfg.sim.seed, repeat as u64);
    let sim = SimConfig {
        seed: derive_seed(seed, 0),
        ..cfg.sim.clone()
    };
    let truth = gen_truth(&sim)?;
    let train = gen_dataset(&truth, &sim, cfg.train_size(), derive_seed(seed, 1))?;
    let val = gen_dataset(&truth, &sim, cfg.val_size(), derive_seed(seed, 2))?;
    let test = gen_dataset(&truth, &sim, cfg.test_size(), derive_seed(seed, 3))?;
    let reference = test.optimal_assignments();
    let propensity = PropensityModel::fit_marginal(&train.samples)?;
    let loss = LossSpec::new(cfg.surrogate, cfg.penalty, 0.0)?;
    let (k, p) = (cfg.sim.k, cfg.sim.p);

    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let method_seed = derive_seed(seed, 10 + method as u64);
        let (pred, selected_lambda) = match method {
            Method::Bayes => (test.bayes_rules(), None),
            Method::Naive => {
                let tc = TrainConfig {
                    seed: method_seed,
                    ..cfg.naive_train.clone()
                };
                let fit = naive_baseline_fit(&train.samples, &val.samples, &propensity, &loss, &tc)?;
                (predict(&fit.classifier, &test)?, Some(fit.selected_lambda))
            }
            Method::DnnSimple | Method::Dnn1hdd => {
                let hidden = if method == Method::Dnn1hdd { cfg.hidden } else { 0 };
                let tc = TrainConfig {
                    seed: method_seed,
                    ..cfg.train.clone()
                };
                let net = NetConfig::new(p, hidden, k)?;
                let fit = tune(&train.samples, &val.samples, net, &loss, &tc, &propensity)?;
                (predict(&fit.params, &test)?, Some(fit.selected_lambda))
            }
        };
        log::debug!("repeat {repeat}: {method} done");
        rows.push(RunRow {
            method,
            repeat,
            selected_lambda,
            metrics: MetricsReport::simulation(&pred, &reference, &test)?,
        });
    }
    Ok(rows)
}

/// Run every repeat on a pool of `jobs` threads (0 = rayon default). The
/// report does not depend on `jobs`.
pub fn run_benchmark(cfg: &BenchConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_repeat = pool.install(|| {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| run_repeat(cfg, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<RunRow> = per_repeat.into_iter().flatten().collect();

    let summary = cfg
        .methods
        .iter()
        .map(|&method| {
            let of = |f: fn(&MetricsReport) -> f64| {
                let values: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| f(&r.metrics)).collect();
                MeanSe::of(&values)
            };
            MethodSummary {
                method,
                mcr: of(|m| m.mcr),
                amcr: of(|m| m.amcr),
                adj_mcr: of(|m| m.adj_mcr),
                adj_amcr: of(|m| m.adj_amcr),
                ab: of(|m| m.ab.unwrap_or(f64::NAN)),
            }
        })
        .collect();

    Ok(RunReport {
        schema_version: SCHEMA_VERSION.into(),
        provenance: Provenance {
            seed: cfg.sim.seed,
            config_hash: cfg.hash()?,
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config: cfg.clone(),
        rows,
        summary,
    })
}
