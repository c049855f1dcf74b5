//! Mini-batch SGD on the penalized outcome-weighted surrogate risk, with
//! outcome shifting, best-validation checkpointing and selection of the
//! penalty strength over a grid.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combo::LabeledSample;
use crate::error::{Error, Result};
use crate::losses::{empirical_weighted_risk, surrogate_data_risk, surrogate_empirical_risk, LossSpec};
use crate::network::{backward_indexed, NetConfig, NetParams};
use crate::propensity::PropensityModel;
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Learning rate at epoch `e` is `lr0 * lr_decay^e`.
    pub lr_decay: f64,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement; 0 disables.
    pub early_stop_patience: usize,
    /// Divide the inverse-propensity weights by their training mean. The
    /// minimizer is unchanged up to a rescaling of `lambda`, and step sizes
    /// become independent of the outcome scale.
    pub normalize_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 200,
            lr0: 0.05,
            lr_decay: 0.97,
            lambda_grid: vec![0.1, 0.01, 0.001, 0.0001],
            seed: 0,
            early_stop_patience: 0,
            normalize_weights: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("lambda grid entries must be finite and nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Penalized surrogate risk on the training set after the epoch.
    pub train_risk: f64,
    /// Unpenalized surrogate risk on the validation set, when there is one.
    pub val_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Validation outcome-weighted Hamming risk of the induced rule.
    pub val_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: NetParams,
    pub history: Vec<EpochRecord>,
    /// Epoch (0-based) whose parameters were returned.
    pub best_epoch: usize,
    pub selected_lambda: f64,
    pub outcome_shift: f64,
    /// Divisor applied to the raw weights `(R + c) / pi`.
    pub weight_scale: f64,
    /// Per-grid-point validation scores; empty for a single fit.
    pub lambda_scores: Vec<LambdaScore>,
}

impl FitResult {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_risk,val_risk\n");
        for h in &self.history {
            let val = h.val_risk.map(|v| format!("{v:.16e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.16e},{}\n", h.epoch, h.train_risk, val));
        }
        out
    }
}

/// Samples with their (already shifted and scaled) weights.
#[derive(Debug, Clone, Copy)]
pub struct Weighted<'a> {
    pub samples: &'a [LabeledSample],
    pub weights: &'a [f64],
}

impl<'a> Weighted<'a> {
    pub fn new(samples: &'a [LabeledSample], weights: &'a [f64]) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "per-sample weights",
                expected: samples.len(),
                actual: weights.len(),
            });
        }
        Ok(Weighted { samples, weights })
    }

    pub fn empty() -> Self {
        Weighted {
            samples: &[],
            weights: &[],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Shift outcomes by `c = max(0, -min R)` so all are nonnegative.
pub fn outcome_shift(data: &[LabeledSample]) -> (Vec<LabeledSample>, f64) {
    let c = shift_constant(data.iter().map(|s| s.r));
    let shifted = data
        .iter()
        .map(|s| LabeledSample {
            r: s.r + c,
            ..s.clone()
        })
        .collect();
    (shifted, c)
}

fn shift_constant(outcomes: impl Iterator<Item = f64>) -> f64 {
    let min = outcomes.fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        (-min).max(0.0)
    } else {
        0.0
    }
}

/// Training and validation weights `(R + c) / pi / scale` for a data split.
#[derive(Debug, Clone)]
pub struct WeightPlan {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
}

impl WeightPlan {
    /// The shift is taken over training and validation outcomes together so
    /// that both weight vectors are nonnegative.
    pub fn new(
        train: &[LabeledSample],
        train_pi: &[f64],
        val: &[LabeledSample],
        val_pi: &[f64],
        normalize: bool,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training data"));
        }
        for (set, pi) in [(train, train_pi), (val, val_pi)] {
            if set.len() != pi.len() {
                return Err(Error::DimensionMismatch {
                    context: "propensities",
                    expected: set.len(),
                    actual: pi.len(),
                });
            }
        }
        let shift = shift_constant(train.iter().chain(val).map(|s| s.r));
        let raw = |set: &[LabeledSample], pi: &[f64]| -> Result<Vec<f64>> {
            set.iter()
                .zip(pi)
                .enumerate()
                .map(|(i, (s, &p))| {
                    let w = (s.r + shift) / p;
                    if w.is_finite() && p > 0.0 {
                        Ok(w)
                    } else {
                        Err(Error::NonFinite { sample: i })
                    }
                })
                .collect()
        };
        let mut train_w = raw(train, train_pi)?;
        let mut val_w = raw(val, val_pi)?;
        let mean = train_w.iter().sum::<f64>() / train_w.len() as f64;
        let scale = if normalize && mean > 0.0 { mean } else { 1.0 };
        train_w.iter_mut().chain(val_w.iter_mut()).for_each(|w| *w /= scale);
        Ok(WeightPlan {
            train: train_w,
            val: val_w,
            shift,
            scale,
        })
    }

    pub fn from_model(
        train: &[LabeledSample],
        val: &[LabeledSample],
        propensity: &PropensityModel,
        normalize: bool,
    ) -> Result<Self> {
        let train_pi = propensity.of_samples(train)?;
        let val_pi = propensity.of_samples(val)?;
        WeightPlan::new(train, &train_pi, val, &val_pi, normalize)
    }
}

/// SGD on pre-weighted data for a single penalty strength (`loss.lambda`).
///
/// Batches come from a seeded shuffle without replacement each epoch. With
/// validation data the parameters of the epoch with the lowest validation
/// surrogate risk are returned, otherwise the final iterate.
pub fn sgd_fit_weighted(
    train: Weighted<'_>,
    val: Weighted<'_>,
    net_config: NetConfig,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    net_config.validate()?;
    loss.validate(net_config.output_dim)?;
    if loss.tau != 1 {
        return Err(Error::SurrogateOrder(loss.tau));
    }
    if train.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if val.is_empty() && cfg.early_stop_patience > 0 {
        return Err(Error::InvalidConfig(
            "early stopping requested without validation data".into(),
        ));
    }

    let mut params = NetParams::init(net_config, derive_seed(cfg.seed, 1))?;
    let mut rng = rng_for(cfg.seed, 2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, NetParams)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut n_batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let grad = backward_indexed(&params, train.samples, train.weights, batch, loss)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged { epoch, batch: b },
                    other => other,
                })?;
            params.axpy(-lr, &grad);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            n_batches = b + 1;
        }

        let diverged = |_| Error::Diverged {
            epoch,
            batch: n_batches,
        };
        let train_risk =
            surrogate_empirical_risk(train.samples, train.weights, &params, loss).map_err(diverged)?;
        if !train_risk.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: n_batches,
            });
        }
        let val_risk = if val.is_empty() {
            None
        } else {
            Some(
                surrogate_data_risk(val.samples, val.weights, &params, loss.surrogate)
                    .map_err(diverged)?,
            )
        };
        history.push(EpochRecord {
            epoch,
            train_risk,
            val_risk,
        });

        match val_risk {
            Some(v) => {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, epoch, params.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                        break;
                    }
                }
            }
            None => best = None,
        }
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (history.len() - 1, params),
    };
    Ok(FitResult {
        params,
        history,
        best_epoch,
        selected_lambda: loss.lambda,
        outcome_shift: 0.0,
        weight_scale: 1.0,
        lambda_scores: Vec::new(),
    })
}

/// Fit at `loss.lambda` with weights `(R + c) / pi(A | X)`.
pub fn sgd_fit(
    data: &[LabeledSample],
    val_data: &[LabeledSample],
    net_config: NetConfig,
    loss: &LossSpec,
    cfg: &TrainConfig,
    propensity: &PropensityModel,
) -> Result<FitResult> {
    let plan = WeightPlan::from_model(data, val_data, propensity, cfg.normalize_weights)?;
    let mut fit = sgd_fit_weighted(
        Weighted::new(data, &plan.train)?,
        Weighted::new(val_data, &plan.val)?,
        net_config,
        loss,
        cfg,
    )?;
    fit.outcome_shift = plan.shift;
    fit.weight_scale = plan.scale;
    Ok(fit)
}

/// Index of the lowest score; ties go to the larger lambda, and among equal
/// lambdas to the first occurrence.
pub fn select_lambda(grid: &[f64], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&l, &s)) in grid.iter().zip(scores).enumerate() {
        best = match best {
            None => Some(i),
            Some(b) if s < scores[b] || (s == scores[b] && l > grid[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// Fit once per grid value and keep the fit whose induced rule has the lowest
/// validation outcome-weighted Hamming risk.
pub fn tune(
    data: &[LabeledSample],
    val_data: &[LabeledSample],
    net_config: NetConfig,
    loss: &LossSpec,
    cfg: &TrainConfig,
    propensity: &PropensityModel,
) -> Result<FitResult> {
    let plan = WeightPlan::from_model(data, val_data, propensity, cfg.normalize_weights)?;
    tune_planned(data, val_data, &plan, net_config, loss, cfg)
}

/// [`tune`] with weights already computed, e.g. from known propensities.
pub fn tune_planned(
    data: &[LabeledSample],
    val_data: &[LabeledSample],
    plan: &WeightPlan,
    net_config: NetConfig,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if val_data.is_empty() {
        return Err(Error::Empty("validation data"));
    }
    let train = Weighted::new(data, &plan.train)?;
    let val = Weighted::new(val_data, &plan.val)?;

    let fits: Vec<(FitResult, f64)> = cfg
        .lambda_grid
        .par_iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let sub = TrainConfig {
                seed: derive_seed(cfg.seed, 100 + j as u64),
                ..cfg.clone()
            };
            let fit = sgd_fit_weighted(train, val, net_config, &loss.with_lambda(lambda), &sub)?;
            let score = empirical_weighted_risk(val.samples, val.weights, &fit.params, 1)?;
            Ok((fit, score))
        })
        .collect::<Result<_>>()?;

    let scores: Vec<f64> = fits.iter().map(|(_, s)| *s).collect();
    let chosen = select_lambda(&cfg.lambda_grid, &scores).expect("nonempty grid");
    let lambda_scores = cfg
        .lambda_grid
        .iter()
        .zip(&scores)
        .map(|(&lambda, &val_risk)| LambdaScore { lambda, val_risk })
        .collect();
    let (mut fit, _) = fits.into_iter().nth(chosen).expect("index in range");
    fit.outcome_shift = plan.shift;
    fit.weight_scale = plan.scale;
    fit.lambda_scores = lambda_scores;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combo::Combo;
    use crate::losses::{penalty_value, PenaltyKind, SurrogateKind};
    use crate::network::backward;

    fn toy(n: usize) -> Vec<LabeledSample> {
        // separable: label = sign(x0), outcome 1 + |x1|
        (0..n)
            .map(|i| {
                let x0 = (i as f64 - n as f64 / 2.0 + 0.5) / 3.0;
                let x1 = ((i * 7) % 5) as f64 / 5.0 - 0.4;
                let a = Combo::new(vec![if x0 > 0.0 { 1 } else { -1 }]).unwrap();
                LabeledSample::new(vec![x0, x1], a, 1.0 + x1.abs())
            })
            .collect()
    }

    #[test]
    fn shift_examples() {
        let d = |r: &[f64]| -> Vec<LabeledSample> {
            r.iter()
                .map(|&r| LabeledSample::new(vec![0.0], Combo::constant(1, true), r))
                .collect()
        };
        let (same, c) = outcome_shift(&d(&[0.0, 2.5]));
        assert_eq!(c, 0.0);
        assert_eq!(same, d(&[0.0, 2.5]));
        let (shifted, c) = outcome_shift(&d(&[-2.0, 1.0]));
        assert_eq!(c, 2.0);
        assert_eq!(shifted.iter().map(|s| s.r).collect::<Vec<_>>(), vec![0.0, 3.0]);
    }

    #[test]
    fn full_batch_step_is_gradient_descent() {
        let data = toy(12);
        let w: Vec<f64> = data.iter().map(|s| s.r).collect();
        let net = NetConfig::new(2, 3, 1).unwrap();
        let loss = LossSpec::new(SurrogateKind::Logistic, PenaltyKind::Ridge, 0.01).unwrap();
        let cfg = TrainConfig {
            batch_size: data.len(),
            epochs: 1,
            lr0: 0.1,
            seed: 4,
            ..TrainConfig::default()
        };
        let fit = sgd_fit_weighted(Weighted::new(&data, &w).unwrap(), Weighted::empty(), net, &loss, &cfg)
            .unwrap();
        let mut expected = NetParams::init(net, derive_seed(4, 1)).unwrap();
        let g = backward(&expected, &data, &w, &loss).unwrap();
        expected.axpy(-0.1, &g);
        assert_eq!(fit.params.as_flat(), expected.as_flat());
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy(30);
        let val = toy(10);
        let model = PropensityModel::known_constant(0.5).unwrap();
        let net = NetConfig::new(2, 4, 1).unwrap();
        let loss = LossSpec::new(SurrogateKind::Hinge, PenaltyKind::Lasso, 0.001).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = sgd_fit(&data, &val, net, &loss, &cfg, &model).unwrap();
        let b = sgd_fit(&data, &val, net, &loss, &cfg, &model).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.history.len(), 20);
        // checkpoint is the best validation epoch
        let best = a
            .history
            .iter()
            .map(|h| h.val_risk.unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.history[a.best_epoch].val_risk, Some(best));
    }

    #[test]
    fn least_squares_convex_toy_descends() {
        let data = toy(20);
        let w: Vec<f64> = data.iter().map(|s| s.r).collect();
        let net = NetConfig::new(2, 0, 1).unwrap();
        let loss = LossSpec::new(SurrogateKind::LeastSquares, PenaltyKind::None, 0.0).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            lr0: 0.01,
            seed: 1,
            ..TrainConfig::default()
        };
        let fit = sgd_fit_weighted(Weighted::new(&data, &w).unwrap(), Weighted::empty(), net, &loss, &cfg)
            .unwrap();
        let init = NetParams::init(net, derive_seed(1, 1)).unwrap();
        let mut last = surrogate_empirical_risk(&data, &w, &init, &loss).unwrap();
        for h in &fit.history {
            assert!(h.train_risk < last, "{} !< {}", h.train_risk, last);
            last = h.train_risk;
        }
    }

    #[test]
    fn early_stop_needs_validation() {
        let data = toy(8);
        let w = vec![1.0; 8];
        let cfg = TrainConfig {
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        let loss = LossSpec::new(SurrogateKind::Hinge, PenaltyKind::None, 0.0).unwrap();
        let r = sgd_fit_weighted(
            Weighted::new(&data, &w).unwrap(),
            Weighted::empty(),
            NetConfig::new(2, 0, 1).unwrap(),
            &loss,
            &cfg,
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn early_stopping_truncates_history() {
        let data = toy(40);
        let w = vec![1.0; 40];
        let cfg = TrainConfig {
            epochs: 500,
            early_stop_patience: 5,
            lr0: 0.5,
            lr_decay: 1.0,
            ..TrainConfig::default()
        };
        let loss = LossSpec::new(SurrogateKind::Hinge, PenaltyKind::None, 0.0).unwrap();
        let set = Weighted::new(&data, &w).unwrap();
        let fit = sgd_fit_weighted(set, set, NetConfig::new(2, 0, 1).unwrap(), &loss, &cfg).unwrap();
        assert!(fit.history.len() < 500);
        assert_eq!(fit.history.len(), fit.best_epoch + 6);
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy(8);
        let w = vec![1e300; 8];
        let cfg = TrainConfig {
            lr0: 1e10,
            ..TrainConfig::default()
        };
        let loss = LossSpec::new(SurrogateKind::Exponential, PenaltyKind::None, 0.0).unwrap();
        let r = sgd_fit_weighted(
            Weighted::new(&data, &w).unwrap(),
            Weighted::empty(),
            NetConfig::new(2, 0, 1).unwrap(),
            &loss,
            &cfg,
        );
        assert!(matches!(r, Err(Error::Diverged { epoch: 0, .. })), "{r:?}");
    }

    #[test]
    fn lambda_selection_ties() {
        assert_eq!(select_lambda(&[0.5], &[3.0]), Some(0));
        assert_eq!(select_lambda(&[0.1, 0.01], &[1.0, 1.0]), Some(0));
        assert_eq!(select_lambda(&[0.01, 0.1], &[1.0, 1.0]), Some(1));
        assert_eq!(select_lambda(&[0.1, 0.1, 0.01], &[1.0, 1.0, 1.0]), Some(0));
        assert_eq!(select_lambda(&[0.1, 0.01], &[2.0, 1.0]), Some(1));
        assert_eq!(select_lambda(&[], &[]), None);
    }

    #[test]
    fn tune_prefers_the_lambda_that_fits() {
        // two labels that follow sign(x0) and sign(x1); a heavy lasso penalty
        // collapses the linear rule to a constant
        let make = |n: usize, offset: f64| -> Vec<LabeledSample> {
            (0..n)
                .map(|i| {
                    let t = i as f64 + offset;
                    let x = vec![(t * 0.7).sin() * 2.0, (t * 1.3).cos() * 2.0];
                    let a = Combo::new(vec![
                        if x[0] > 0.0 { 1 } else { -1 },
                        if x[1] > 0.0 { 1 } else { -1 },
                    ])
                    .unwrap();
                    LabeledSample::new(x, a, 1.0)
                })
                .collect()
        };
        let (train, val) = (make(80, 0.0), make(40, 1000.0));
        let model = PropensityModel::known_constant(0.25).unwrap();
        let loss = LossSpec::new(SurrogateKind::Hinge, PenaltyKind::Lasso, 0.0).unwrap();
        let cfg = TrainConfig {
            lambda_grid: vec![10.0, 0.0001],
            epochs: 100,
            lr0: 0.1,
            seed: 3,
            ..TrainConfig::default()
        };
        let fit = tune(&train, &val, NetConfig::new(2, 0, 2).unwrap(), &loss, &cfg, &model).unwrap();
        assert_eq!(fit.selected_lambda, 0.0001);
        assert!(fit.lambda_scores[1].val_risk < fit.lambda_scores[0].val_risk);
        let single = TrainConfig {
            lambda_grid: vec![0.01],
            ..cfg.clone()
        };
        let fit = tune(&train, &val, NetConfig::new(2, 0, 2).unwrap(), &loss, &single, &model).unwrap();
        assert_eq!(fit.selected_lambda, 0.01);
    }

    #[test]
    fn ridge_shrinks_along_grid() {
        let data = toy(20);
        let w: Vec<f64> = data.iter().map(|s| s.r).collect();
        let net = NetConfig::new(2, 0, 1).unwrap();
        let mut last = f64::INFINITY;
        for &lambda in &[0.0001, 0.001, 0.01, 0.1] {
            let loss = LossSpec::new(SurrogateKind::LeastSquares, PenaltyKind::Ridge, lambda).unwrap();
            let cfg = TrainConfig {
                batch_size: 20,
                epochs: 3000,
                lr0: 0.1,
                lr_decay: 1.0,
                seed: 5,
                ..TrainConfig::default()
            };
            let fit =
                sgd_fit_weighted(Weighted::new(&data, &w).unwrap(), Weighted::empty(), net, &loss, &cfg)
                    .unwrap();
            let pen = penalty_value(&fit.params, PenaltyKind::Ridge);
            assert!(pen <= last + 1e-12, "lambda {lambda}: {pen} > {last}");
            last = pen;
        }
    }
}
