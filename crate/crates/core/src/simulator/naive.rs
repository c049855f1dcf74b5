//! Label-powerset baseline: one outcome-weighted linear hinge classifier per
//! pair of combinations, combined by majority vote.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combo::{Combo, LabeledSample, TreatmentRule};
use crate::error::{Error, Result};
use crate::losses::{empirical_weighted_risk, LossSpec};
use crate::network::{NetConfig, NetParams};
use crate::propensity::PropensityModel;
use crate::rng::derive_seed;
use crate::trainer::{select_lambda, sgd_fit_weighted, LambdaScore, TrainConfig, WeightPlan, Weighted};

/// Linear rule voting for `first` when its score is nonnegative, `second`
/// otherwise (combination indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairClassifier {
    pub first: u32,
    pub second: u32,
    pub params: NetParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveClassifier {
    pub k: usize,
    pub pairs: Vec<PairClassifier>,
    /// Training samples per combination index, for vote tie-breaking.
    pub train_counts: Vec<usize>,
}

impl NaiveClassifier {
    pub fn coefficient_count(&self) -> usize {
        self.pairs.iter().map(|p| p.params.as_flat().len()).sum()
    }
}

impl TreatmentRule for NaiveClassifier {
    /// Most votes wins; ties go to the larger training count, then to the
    /// lexicographically largest combination.
    fn recommend(&self, x: &[f64]) -> Result<Combo> {
        let mut votes = vec![0usize; 1 << self.k];
        for pair in &self.pairs {
            let score = pair.params.scores(x)?[0];
            votes[if score >= 0.0 { pair.first } else { pair.second } as usize] += 1;
        }
        let best = (0..votes.len())
            .max_by_key(|&i| (votes[i], self.train_counts[i], i))
            .expect("at least one combination");
        Ok(Combo::from_index(best as u32, self.k))
    }
}

/// Fit every pairwise classifier at `loss.lambda` on pre-weighted data. Pairs
/// with an unobserved arm are skipped.
pub fn naive_fit_weighted(
    train: Weighted<'_>,
    k: usize,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<NaiveClassifier> {
    let first = train.samples.first().ok_or(Error::Empty("training data"))?;
    let p = first.x.len();
    let n_combo = 1usize << k;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_combo];
    for (i, s) in train.samples.iter().enumerate() {
        if s.a.k() != k {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: k,
                actual: s.a.k(),
            });
        }
        groups[s.a.index() as usize].push(i);
    }
    let pair_ids: Vec<(u32, u32)> = (0..n_combo)
        .flat_map(|a| (a + 1..n_combo).map(move |b| (a as u32, b as u32)))
        .filter(|&(a, b)| !groups[a as usize].is_empty() && !groups[b as usize].is_empty())
        .collect();
    if pair_ids.is_empty() {
        return Err(Error::NoTrainablePairs);
    }

    let on = Combo::constant(1, true);
    let off = Combo::constant(1, false);
    let net = NetConfig::new(p, 0, 1)?;
    let pairs = pair_ids
        .par_iter()
        .map(|&(a, b)| {
            let members: Vec<usize> = groups[a as usize]
                .iter()
                .chain(&groups[b as usize])
                .copied()
                .collect();
            let samples: Vec<LabeledSample> = members
                .iter()
                .map(|&i| {
                    let s = &train.samples[i];
                    let label = if s.a.index() == a { on.clone() } else { off.clone() };
                    LabeledSample::new(s.x.clone(), label, s.r)
                })
                .collect();
            let weights: Vec<f64> = members.iter().map(|&i| train.weights[i]).collect();
            let sub = TrainConfig {
                seed: derive_seed(cfg.seed, u64::from(a) * n_combo as u64 + u64::from(b)),
                early_stop_patience: 0,
                ..cfg.clone()
            };
            let fit = sgd_fit_weighted(Weighted::new(&samples, &weights)?, Weighted::empty(), net, loss, &sub)?;
            Ok(PairClassifier {
                first: a,
                second: b,
                params: fit.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(NaiveClassifier {
        k,
        pairs,
        train_counts: groups.iter().map(Vec::len).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveFit {
    pub classifier: NaiveClassifier,
    pub selected_lambda: f64,
    pub lambda_scores: Vec<LambdaScore>,
}

/// Fit the pairwise classifiers for each grid value and keep the classifier
/// with the lowest validation outcome-weighted Hamming risk.
pub fn naive_baseline_fit(
    data: &[LabeledSample],
    val_data: &[LabeledSample],
    propensity: &PropensityModel,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<NaiveFit> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let k = data.first().ok_or(Error::Empty("training data"))?.a.k();
    let plan = WeightPlan::from_model(data, val_data, propensity, cfg.normalize_weights)?;
    let train = Weighted::new(data, &plan.train)?;
    let mut candidates = Vec::with_capacity(cfg.lambda_grid.len());
    for (j, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let sub = TrainConfig {
            seed: derive_seed(cfg.seed, 100 + j as u64),
            ..cfg.clone()
        };
        let clf = naive_fit_weighted(train, k, &loss.with_lambda(lambda), &sub)?;
        let score = if val_data.is_empty() {
            0.0
        } else {
            empirical_weighted_risk(val_data, &plan.val, &clf, 1)?
        };
        candidates.push((clf, score));
    }
    let scores: Vec<f64> = candidates.iter().map(|(_, s)| *s).collect();
    let chosen = select_lambda(&cfg.lambda_grid, &scores).expect("nonempty grid");
    let lambda_scores = cfg
        .lambda_grid
        .iter()
        .zip(&scores)
        .map(|(&lambda, &val_risk)| LambdaScore { lambda, val_risk })
        .collect();
    Ok(NaiveFit {
        classifier: candidates.swap_remove(chosen).0,
        selected_lambda: cfg.lambda_grid[chosen],
        lambda_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{PenaltyKind, SurrogateKind};

    fn hinge() -> LossSpec {
        LossSpec::new(SurrogateKind::Hinge, PenaltyKind::Lasso, 0.0).unwrap()
    }

    #[test]
    fn coefficient_count_for_five_labels() {
        // every one of the 32 combinations observed once
        let data: Vec<LabeledSample> = Combo::enumerate(5)
            .unwrap()
            .enumerate()
            .map(|(i, a)| LabeledSample::new(vec![i as f64 * 0.01; 30], a, 1.0))
            .collect();
        let w = vec![1.0; data.len()];
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let clf = naive_fit_weighted(Weighted::new(&data, &w).unwrap(), 5, &hinge(), &cfg).unwrap();
        assert_eq!(clf.pairs.len(), 496);
        assert_eq!(clf.coefficient_count(), 15376);
    }

    #[test]
    fn single_label_is_one_binary_classifier() {
        let data: Vec<LabeledSample> = (0..40)
            .map(|i| {
                let x = i as f64 / 10.0 - 2.0 + 0.05;
                // treatment helps when x > 0: reward agreement with sign(x)
                let a = Combo::new(vec![if i % 2 == 0 { 1 } else { -1 }]).unwrap();
                let good = (x > 0.0) == a.is_on(0);
                LabeledSample::new(vec![x], a, if good { 2.0 } else { 0.1 })
            })
            .collect();
        let model = PropensityModel::known_constant(0.5).unwrap();
        let cfg = TrainConfig {
            lambda_grid: vec![0.0001],
            epochs: 300,
            lr0: 0.2,
            ..TrainConfig::default()
        };
        let fit = naive_baseline_fit(&data, &data, &model, &hinge(), &cfg).unwrap();
        assert_eq!(fit.classifier.pairs.len(), 1);
        assert_eq!(fit.classifier.recommend(&[1.5]).unwrap(), Combo::constant(1, true));
        assert_eq!(fit.classifier.recommend(&[-1.5]).unwrap(), Combo::constant(1, false));
    }

    #[test]
    fn dominant_combination_wins_the_vote() {
        let target = Combo::from_bit_string("101").unwrap();
        let data: Vec<LabeledSample> = Combo::enumerate(3)
            .unwrap()
            .flat_map(|a| {
                let r = if a == target { 10.0 } else { 0.0 };
                (0..6).map(move |j| LabeledSample::new(vec![j as f64 * 0.3 - 0.75, 1.0], a.clone(), r))
            })
            .collect();
        let model = PropensityModel::fit_marginal(&data).unwrap();
        let cfg = TrainConfig {
            lambda_grid: vec![0.001],
            epochs: 100,
            ..TrainConfig::default()
        };
        let fit = naive_baseline_fit(&data, &data, &model, &hinge(), &cfg).unwrap();
        for x in [[-1.0, 1.0], [0.0, 1.0], [2.0, 1.0]] {
            assert_eq!(fit.classifier.recommend(&x).unwrap(), target);
        }
    }

    #[test]
    fn vote_ties_use_counts_then_order() {
        let zero = NetParams::zeros(NetConfig::new(1, 0, 1).unwrap());
        // a single pair between 0 and 1 always votes for 0; counts decide
        // nothing here
        let clf = NaiveClassifier {
            k: 1,
            pairs: vec![PairClassifier {
                first: 0,
                second: 1,
                params: zero.clone(),
            }],
            train_counts: vec![1, 5],
        };
        assert_eq!(clf.recommend(&[0.0]).unwrap().index(), 0);
        // no pairs: all tied at zero votes, larger count wins
        let clf = NaiveClassifier {
            k: 1,
            pairs: vec![],
            train_counts: vec![3, 2],
        };
        assert_eq!(clf.recommend(&[0.0]).unwrap().index(), 0);
        let clf = NaiveClassifier {
            k: 1,
            pairs: vec![],
            train_counts: vec![2, 2],
        };
        assert_eq!(clf.recommend(&[0.0]).unwrap().index(), 1);
    }

    #[test]
    fn untrainable_when_one_arm() {
        let data = vec![LabeledSample::new(vec![0.0], Combo::constant(1, true), 1.0)];
        let w = vec![1.0];
        let r = naive_fit_weighted(Weighted::new(&data, &w).unwrap(), 1, &hinge(), &TrainConfig::default());
        assert!(matches!(r, Err(Error::NoTrainablePairs)));
    }
}
