//! Synthetic combination-therapy trials.
//!
//! Each treatment's effect comes from a random one-hidden-layer ReLU network
//! of the covariates and has magnitude in `(2.0, 2.05)`; the main effect lies
//! in `(-2.05, -2.0)`. Effects add up across the treatments given, optionally
//! minus a quadratic interaction `gamma * (sum of effects)^2`. Assignment is
//! uniform over all `2^K` combinations and every patient carries a table of
//! independent noise draws, one per combination, so that realized potential
//! outcomes are available for scoring.

mod naive;

pub use naive::{naive_baseline_fit, naive_fit_weighted, NaiveClassifier, NaiveFit, PairClassifier};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combo::{Combo, LabeledSample, MAX_ENUMERABLE_K};
use crate::error::{Error, Result};
use crate::metrics::OutcomeOracle;
use crate::rng::rng_for;

const TRUTH_STREAM: u64 = 0x7A07;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: usize,
    pub p: usize,
    pub n_h: usize,
    pub sigma: f64,
    pub misspec: bool,
    /// Quadratic interaction scale, used only when `misspec`.
    pub gamma_int: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Additive effects, `sigma = 1.1`.
    pub fn correct(seed: u64) -> Self {
        SimConfig {
            k: 5,
            p: 30,
            n_h: 45,
            sigma: 1.1,
            misspec: false,
            gamma_int: 0.1,
            seed,
        }
    }

    /// Quadratic interaction with `gamma = 0.1`, `sigma = 0.2`.
    pub fn misspecified(seed: u64) -> Self {
        SimConfig {
            sigma: 0.2,
            misspec: true,
            ..SimConfig::correct(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 || self.n_h == 0 {
            return Err(Error::InvalidConfig(
                "simulation needs K, p and n_h of at least 1".into(),
            ));
        }
        if self.k > MAX_ENUMERABLE_K {
            return Err(Error::TooManyLabels(self.k));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !self.gamma_int.is_finite() {
            return Err(Error::InvalidConfig("gamma must be finite".into()));
        }
        Ok(())
    }

    fn interaction(&self) -> Option<f64> {
        self.misspec.then_some(self.gamma_int)
    }
}

/// Coefficients of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub p: usize,
    pub n_h: usize,
    pub k: usize,
    /// `p x n_h`, row-major.
    pub w1: Vec<f64>,
    /// `n_h x K`, row-major.
    pub w2: Vec<f64>,
    /// Main-effect coefficients, length `p`.
    pub gamma_main: Vec<f64>,
}

pub fn gen_truth(config: &SimConfig) -> Result<SimTruth> {
    config.validate()?;
    let mut rng = rng_for(config.seed, TRUTH_STREAM);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let w1 = draw(config.p * config.n_h);
    let w2 = draw(config.n_h * config.k);
    let gamma_main = draw(config.p);
    Ok(SimTruth {
        p: config.p,
        n_h: config.n_h,
        k: config.k,
        w1,
        w2,
        gamma_main,
    })
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SimTruth {
    /// Treatment effects `T_k` and main effect `M` for covariates `x`.
    pub fn effects(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut h = vec![0.0; self.n_h];
        for (i, &xi) in x.iter().enumerate() {
            for (hj, &w) in h.iter_mut().zip(&self.w1[i * self.n_h..(i + 1) * self.n_h]) {
                *hj += w * xi;
            }
        }
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let t = (0..self.k)
            .map(|k| {
                let u: f64 = h
                    .iter()
                    .enumerate()
                    .map(|(j, hj)| hj * self.w2[j * self.k + k])
                    .sum();
                let sign = if u >= 0.0 { 1.0 } else { -1.0 };
                sign * (0.05 * logistic(u) + 2.0)
            })
            .collect();
        let g: f64 = self.gamma_main.iter().zip(x).map(|(g, v)| g * v).sum();
        (t, 0.05 * logistic(g) - 2.05)
    }
}

/// `E[R | A = a, X]` given the patient's effects, with the quadratic
/// interaction subtracted when `interaction` is set.
pub fn conditional_mean(t: &[f64], m: f64, a: &Combo, interaction: Option<f64>) -> f64 {
    let total: f64 = t
        .iter()
        .enumerate()
        .filter(|(k, _)| a.is_on(*k))
        .map(|(_, v)| v)
        .sum();
    match interaction {
        Some(gamma) => total - gamma * total * total + m,
        None => total + m,
    }
}

/// Index of the largest value; ties go to the largest index, i.e. the
/// lexicographically largest combination.
fn argmax_index(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v >= best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Combination maximizing `mean`, by exhaustive enumeration.
pub fn bayes_rule(k: usize, mean: impl Fn(&Combo) -> f64) -> Result<Combo> {
    let all: Vec<Combo> = Combo::enumerate(k)?.collect();
    let best = argmax_index(all.iter().map(&mean));
    Ok(all[best].clone())
}

/// Combination maximizing the realized outcome `means[a] + sigma * noise[a]`,
/// both indexed by combination index.
pub fn optimal_assignment(means: &[f64], noise: &[f64], sigma: f64, k: usize) -> Combo {
    debug_assert_eq!(means.len(), 1 << k);
    let best = argmax_index(means.iter().zip(noise).map(|(m, e)| m + sigma * e));
    Combo::from_index(best as u32, k)
}

/// Simulated patients together with their potential-outcome oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub k: usize,
    pub sigma: f64,
    pub interaction: Option<f64>,
    pub samples: Vec<LabeledSample>,
    /// Per-patient treatment effects `T_{k,i}`.
    pub effects: Vec<Vec<f64>>,
    /// Per-patient main effect `M_i`.
    pub main: Vec<f64>,
    /// `n x 2^K` standard-normal draws, row-major by patient.
    noise: Vec<f64>,
}

/// Draw `n` patients. Per patient: covariates i.i.d. N(0, 1), a uniform
/// combination, then one noise draw per combination.
pub fn gen_dataset(truth: &SimTruth, config: &SimConfig, n: usize, seed: u64) -> Result<SimDataset> {
    config.validate()?;
    if truth.k != config.k || truth.p != config.p {
        return Err(Error::InvalidConfig("truth does not match simulation config".into()));
    }
    if n == 0 {
        return Err(Error::Empty("simulated sample size"));
    }
    let k = config.k;
    let n_combo = 1usize << k;
    let interaction = config.interaction();
    let mut rng = rng_for(seed, 0);
    let mut samples = Vec::with_capacity(n);
    let mut effects = Vec::with_capacity(n);
    let mut main = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n * n_combo);
    for _ in 0..n {
        let x: Vec<f64> = (0..config.p).map(|_| rng.sample(StandardNormal)).collect();
        let a = Combo::new((0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())?;
        let start = noise.len();
        noise.extend((0..n_combo).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let (t, m) = truth.effects(&x);
        let r = conditional_mean(&t, m, &a, interaction) + config.sigma * noise[start + a.index() as usize];
        samples.push(LabeledSample::new(x, a, r));
        effects.push(t);
        main.push(m);
    }
    Ok(SimDataset {
        k,
        sigma: config.sigma,
        interaction,
        samples,
        effects,
        main,
        noise,
    })
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn conditional_mean(&self, i: usize, a: &Combo) -> f64 {
        conditional_mean(&self.effects[i], self.main[i], a, self.interaction)
    }

    /// Noiseless means of every combination, by index.
    pub fn means(&self, i: usize) -> Vec<f64> {
        Combo::enumerate(self.k)
            .expect("validated K")
            .map(|a| self.conditional_mean(i, &a))
            .collect()
    }

    pub fn noise(&self, i: usize) -> &[f64] {
        let n_combo = 1usize << self.k;
        &self.noise[i * n_combo..(i + 1) * n_combo]
    }

    pub fn realized(&self, i: usize, a: &Combo) -> f64 {
        self.conditional_mean(i, a) + self.sigma * self.noise(i)[a.index() as usize]
    }

    pub fn bayes(&self, i: usize) -> Combo {
        let best = argmax_index(self.means(i).into_iter());
        Combo::from_index(best as u32, self.k)
    }

    pub fn optimal(&self, i: usize) -> Combo {
        optimal_assignment(&self.means(i), self.noise(i), self.sigma, self.k)
    }

    pub fn bayes_rules(&self) -> Vec<Combo> {
        (0..self.len()).map(|i| self.bayes(i)).collect()
    }

    pub fn optimal_assignments(&self) -> Vec<Combo> {
        (0..self.len()).map(|i| self.optimal(i)).collect()
    }

    /// `(sup_a |r_a|, inf_k |T_k|)` for patient `i`, where `r_a` is the
    /// deviation of the mean from the additive model.
    pub fn interaction_bound(&self, i: usize) -> (f64, f64) {
        let t = &self.effects[i];
        let sup_r = Combo::enumerate(self.k)
            .expect("validated K")
            .map(|a| (self.conditional_mean(i, &a) - conditional_mean(t, self.main[i], &a, None)).abs())
            .fold(0.0, f64::max);
        let inf_t = t.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        (sup_r, inf_t)
    }
}

impl OutcomeOracle for SimDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn realized_outcome(&self, i: usize, a: &Combo) -> Result<f64> {
        if i >= self.len() {
            return Err(Error::DimensionMismatch {
                context: "patient index",
                expected: self.len(),
                actual: i,
            });
        }
        if a.k() != self.k {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: self.k,
                actual: a.k(),
            });
        }
        Ok(self.realized(i, a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            k: 3,
            p: 4,
            n_h: 5,
            ..SimConfig::correct(seed)
        }
    }

    #[test]
    fn truth_is_seeded() {
        let cfg = SimConfig::correct(3);
        let a = gen_truth(&cfg).unwrap();
        assert_eq!(a, gen_truth(&cfg).unwrap());
        assert_ne!(a.w1, gen_truth(&SimConfig::correct(4)).unwrap().w1);
        assert_eq!(a.w1.len(), 30 * 45);
        assert_eq!(a.w2.len(), 45 * 5);
        assert_eq!(a.gamma_main.len(), 30);
    }

    #[test]
    fn truth_entries_are_standard_normal() {
        let cfg = SimConfig {
            p: 100,
            n_h: 1000,
            ..SimConfig::correct(21)
        };
        let t = gen_truth(&cfg).unwrap();
        let n = t.w1.len() as f64;
        let mean = t.w1.iter().sum::<f64>() / n;
        let var = t.w1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn conditional_mean_examples() {
        let t = [2.0, -2.0];
        let all_off = Combo::constant(2, false);
        assert_eq!(conditional_mean(&t, -2.0, &all_off, None), -2.0);
        let both = Combo::constant(2, true);
        assert_eq!(conditional_mean(&t, -2.0, &both, None), -2.0);
        // treatment sum 4 under gamma 0.1 loses 1.6
        let t = [2.0, 2.0];
        let additive = conditional_mean(&t, -2.0, &both, None);
        let quad = conditional_mean(&t, -2.0, &both, Some(0.1));
        assert!((additive - quad - 1.6).abs() < 1e-12);
    }

    #[test]
    fn bayes_rule_is_sign_of_effects_when_additive() {
        let cfg = small(5);
        let truth = gen_truth(&cfg).unwrap();
        let ds = gen_dataset(&truth, &cfg, 300, 9).unwrap();
        for i in 0..ds.len() {
            let by_sign = Combo::from_scores(&ds.effects[i]);
            assert_eq!(ds.bayes(i), by_sign);
            let brute = bayes_rule(cfg.k, |a| ds.conditional_mean(i, a)).unwrap();
            assert_eq!(brute, by_sign);
        }
    }

    #[test]
    fn bayes_rule_examples() {
        let t = [-2.0, -2.01, -2.02];
        let got = bayes_rule(3, |a| conditional_mean(&t, -2.0, a, None)).unwrap();
        assert_eq!(got, Combo::constant(3, false));
        // ties resolve to the lexicographically largest combination
        let flat = bayes_rule(2, |_| 1.0).unwrap();
        assert_eq!(flat, Combo::constant(2, true));
        assert!(matches!(bayes_rule(17, |_| 0.0), Err(Error::TooManyLabels(17))));
    }

    #[test]
    fn misspecified_bayes_can_drop_good_treatments() {
        // five beneficial treatments: the quadratic penalty makes giving all
        // of them worse than giving two or three
        let t = [2.04; 5];
        let best = bayes_rule(5, |a| conditional_mean(&t, -2.0, a, Some(0.1))).unwrap();
        let n_on = (0..5).filter(|&k| best.is_on(k)).count();
        assert!(n_on < 5);
        let brute_best = Combo::enumerate(5)
            .unwrap()
            .map(|a| conditional_mean(&t, -2.0, &a, Some(0.1)))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(conditional_mean(&t, -2.0, &best, Some(0.1)), brute_best);
    }

    #[test]
    fn structural_bounds_and_noiseless_outcome() {
        let cfg = SimConfig {
            sigma: 0.0,
            ..small(8)
        };
        let truth = gen_truth(&cfg).unwrap();
        let ds = gen_dataset(&truth, &cfg, 500, 1).unwrap();
        for i in 0..ds.len() {
            assert!(ds.effects[i].iter().all(|t| (2.0..=2.05).contains(&t.abs())));
            assert!((-2.05..=-2.0).contains(&ds.main[i]));
            let s = &ds.samples[i];
            assert_eq!(s.r, ds.conditional_mean(i, &s.a));
            // sigma = 0: realized optimum is the Bayes rule
            assert_eq!(ds.optimal(i), ds.bayes(i));
            let off = Combo::constant(cfg.k, false);
            assert_eq!(ds.realized(i, &off), ds.main[i]);
        }
    }

    #[test]
    fn additive_structure_is_exact() {
        let cfg = small(2);
        let truth = gen_truth(&cfg).unwrap();
        let ds = gen_dataset(&truth, &cfg, 50, 3).unwrap();
        for i in 0..ds.len() {
            for a in Combo::enumerate(cfg.k).unwrap() {
                for k in (0..cfg.k).filter(|&k| !a.is_on(k)) {
                    let mut with = a.as_slice().to_vec();
                    with[k] = 1;
                    let with = Combo::new(with).unwrap();
                    let diff = ds.conditional_mean(i, &with) - ds.conditional_mean(i, &a);
                    assert!((diff - ds.effects[i][k]).abs() < 1e-12);
                }
            }
            let (sup_r, inf_t) = ds.interaction_bound(i);
            assert_eq!(sup_r, 0.0);
            assert!(2.0 * sup_r < inf_t);
        }
    }

    #[test]
    fn misspecified_model_violates_small_interaction_condition() {
        let cfg = SimConfig::misspecified(4);
        let truth = gen_truth(&cfg).unwrap();
        let ds = gen_dataset(&truth, &cfg, 200, 5).unwrap();
        let violated = (0..ds.len())
            .filter(|&i| {
                let (sup_r, inf_t) = ds.interaction_bound(i);
                2.0 * sup_r >= inf_t
            })
            .count();
        assert_eq!(violated, ds.len());
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = small(6);
        let truth = gen_truth(&cfg).unwrap();
        let a = gen_dataset(&truth, &cfg, 20, 77).unwrap();
        assert_eq!(a, gen_dataset(&truth, &cfg, 20, 77).unwrap());
        assert_ne!(a.samples, gen_dataset(&truth, &cfg, 20, 78).unwrap().samples);
        assert_eq!(a.optimal_assignments(), a.optimal_assignments());
    }

    #[test]
    fn uniform_assignment() {
        let cfg = SimConfig::correct(10);
        let truth = gen_truth(&cfg).unwrap();
        let ds = gen_dataset(&truth, &cfg, 100_000, 11).unwrap();
        let mut counts = [0usize; 32];
        for s in &ds.samples {
            counts[s.a.index() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 1.0 / 32.0).abs() < 0.005);
        }
    }
}
