//! Exact population risks on finite covariate support, with brute-force
//! checks that the Hamming and surrogate minimizers recover the 0-1 optimal
//! rule.
//!
//! An instance lists `m` covariate points with their probabilities and, per
//! point, the mean outcome `mu[x][a]` and propensity `pi[x][a]` of every
//! combination (indexed by [`Combo::index`]). Because the covariate law is
//! discrete, every population quantity is a finite sum.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combo::Combo;
use crate::error::{Error, Result};
use crate::losses::{tau_order_loss, zero_one_loss, SurrogateKind};
use crate::rng::{derive_seed, rng_for, SimRng};

/// Exhaustive rule search is limited to `(2^3)^3 = 512` rules.
pub const MAX_SEARCH_K: usize = 3;
pub const MAX_SEARCH_POINTS: usize = 3;

/// Labels with `|S+ - S-| < TIE_TOLERANCE * (S+ + S-)` are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub const GOLDEN_BRACKET: f64 = 50.0;
pub const GOLDEN_TOLERANCE: f64 = 1e-10;

/// Agreement required between the golden-section and closed-form minimizers.
const CLOSED_FORM_TOLERANCE: f64 = 1e-6;

/// Additive structure `mu[x][a] = sum_{k: a_k = +1} t[x][k] + r[x][a] + main[x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub t: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub main: Vec<f64>,
}

impl Decomposition {
    fn compose(&self, x: usize, a: &Combo) -> f64 {
        let effects: f64 = (0..a.k()).filter(|&k| a.is_on(k)).map(|k| self.t[x][k]).sum();
        effects + self.r[x][a.index() as usize] + self.main[x]
    }

    /// `inf_k |T_k(x)| - 2 sup_a |r_a(x)|`, minimized over the support.
    /// The interaction condition holds iff this is positive.
    pub fn margin(&self) -> f64 {
        self.t
            .iter()
            .zip(&self.r)
            .map(|(t, r)| {
                let inf_t = t.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                let sup_r = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                inf_t - 2.0 * sup_r
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub k: usize,
    pub probs: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
}

fn check_distribution(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig(format!("{what} must be positive")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl DiscreteInstance {
    pub fn new(k: usize, probs: Vec<f64>, mu: Vec<Vec<f64>>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let inst = DiscreteInstance {
            k,
            probs,
            mu,
            pi,
            decomposition: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Instance whose mean table is composed from `decomposition`.
    pub fn from_decomposition(
        k: usize,
        probs: Vec<f64>,
        decomposition: Decomposition,
        pi: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = probs.len();
        if decomposition.t.len() != m || decomposition.r.len() != m || decomposition.main.len() != m {
            return Err(Error::DimensionMismatch {
                context: "decomposition points",
                expected: m,
                actual: decomposition.t.len(),
            });
        }
        if decomposition.t.iter().any(|t| t.len() != k) {
            return Err(Error::DimensionMismatch {
                context: "treatment effects",
                expected: k,
                actual: decomposition.t.iter().map(Vec::len).find(|&l| l != k).unwrap_or(k),
            });
        }
        let combos: Vec<Combo> = Combo::enumerate(k)?.collect();
        if decomposition.r.iter().any(|r| r.len() != combos.len()) {
            return Err(Error::DimensionMismatch {
                context: "interactions",
                expected: combos.len(),
                actual: decomposition.r.iter().map(Vec::len).find(|&l| l != combos.len()).unwrap_or(0),
            });
        }
        let mu = (0..m)
            .map(|x| combos.iter().map(|a| decomposition.compose(x, a)).collect())
            .collect();
        let inst = DiscreteInstance {
            k,
            probs,
            mu,
            pi,
            decomposition: Some(decomposition),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n_combos = Combo::enumerate(self.k)?.count();
        let m = self.probs.len();
        if m == 0 {
            return Err(Error::Empty("covariate support"));
        }
        check_distribution(&self.probs, "point probabilities")?;
        for (table, context) in [(&self.mu, "mean table"), (&self.pi, "propensity table")] {
            if table.len() != m {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: m,
                    actual: table.len(),
                });
            }
            if let Some(row) = table.iter().find(|row| row.len() != n_combos) {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n_combos,
                    actual: row.len(),
                });
            }
        }
        if self.mu.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("mean outcomes must be finite and nonnegative".into()));
        }
        for row in &self.pi {
            check_distribution(row, "propensities")?;
        }
        if let Some(dec) = &self.decomposition {
            for (x, row) in self.mu.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    if dec.compose(x, &Combo::from_index(i as u32, self.k)) != v {
                        return Err(Error::InvalidConfig(format!(
                            "mean table disagrees with decomposition at point {x}, combination {i}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.probs.len()
    }

    pub fn n_combos(&self) -> usize {
        1 << self.k
    }

    /// Same means under a different propensity table.
    pub fn with_propensity(&self, pi: Vec<Vec<f64>>) -> Result<Self> {
        let inst = DiscreteInstance { pi, ..self.clone() };
        inst.validate()?;
        Ok(inst)
    }

    /// Aggregated means `(S+, S-)` over combinations with label `label` on
    /// and off at point `x`.
    pub fn label_masses(&self, x: usize, label: usize) -> (f64, f64) {
        let (mut plus, mut minus) = (0.0, 0.0);
        for (i, &v) in self.mu[x].iter().enumerate() {
            if Combo::from_index(i as u32, self.k).is_on(label) {
                plus += v;
            } else {
                minus += v;
            }
        }
        (plus, minus)
    }

    fn total_mass(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.mu)
            .map(|(p, row)| p * row.iter().sum::<f64>())
            .sum()
    }

    /// Absolute tolerance for comparing population risks.
    fn risk_tolerance(&self) -> f64 {
        1e-10 * (1.0 + self.total_mass())
    }

    fn check_rule(&self, rule: &[Combo]) -> Result<()> {
        if rule.len() != self.n_points() {
            return Err(Error::DimensionMismatch {
                context: "rule points",
                expected: self.n_points(),
                actual: rule.len(),
            });
        }
        if let Some(d) = rule.iter().find(|d| d.k() != self.k) {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: self.k,
                actual: d.k(),
            });
        }
        Ok(())
    }

    /// `E[R / pi(A|X) * loss(A, D(X))]`, summed with the propensity kept in
    /// both the law of `A` and the weight.
    fn weighted_risk(&self, rule: &[Combo], loss: impl Fn(&Combo, &Combo) -> Result<f64>) -> Result<f64> {
        self.check_rule(rule)?;
        let mut total = 0.0;
        for (x, d) in rule.iter().enumerate() {
            for (i, (&mu, &pi)) in self.mu[x].iter().zip(&self.pi[x]).enumerate() {
                let a = Combo::from_index(i as u32, self.k);
                total += self.probs[x] * pi * (mu / pi) * loss(&a, d)?;
            }
        }
        Ok(total)
    }
}

pub fn zero_one_risk_exact(inst: &DiscreteInstance, rule: &[Combo]) -> Result<f64> {
    inst.weighted_risk(rule, zero_one_loss)
}

pub fn hamming_risk_exact(inst: &DiscreteInstance, rule: &[Combo], tau: usize) -> Result<f64> {
    inst.weighted_risk(rule, |a, d| tau_order_loss(a, d, tau))
}

/// Per point and label, the sign of `S+ - S-` (ties resolved to `+1`).
pub fn hamming_minimizer(inst: &DiscreteInstance) -> Vec<Combo> {
    (0..inst.n_points())
        .map(|x| {
            let contrasts: Vec<f64> = (0..inst.k)
                .map(|label| {
                    let (plus, minus) = inst.label_masses(x, label);
                    plus - minus
                })
                .collect();
            Combo::from_scores(&contrasts)
        })
        .collect()
}

/// Pointwise best combination; ties go to the largest index.
pub fn zero_one_minimizer(inst: &DiscreteInstance) -> Vec<Combo> {
    inst.mu
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v >= row[best] {
                    best = i;
                }
            }
            Combo::from_index(best as u32, inst.k)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rule: Vec<Combo>,
    pub risk: f64,
}

/// Minimize `risk` over all `(2^K)^m` rules; the first minimum in
/// enumeration order is kept.
pub fn exhaustive_argmin(
    inst: &DiscreteInstance,
    risk: impl Fn(&[Combo]) -> Result<f64>,
) -> Result<SearchResult> {
    if inst.k > MAX_SEARCH_K || inst.n_points() > MAX_SEARCH_POINTS {
        return Err(Error::SearchTooLarge);
    }
    let combos: Vec<Combo> = Combo::enumerate(inst.k)?.collect();
    let n = combos.len();
    let m = inst.n_points();
    let mut best: Option<SearchResult> = None;
    let mut rule = vec![combos[0].clone(); m];
    for code in 0..n.pow(m as u32) {
        let mut rest = code;
        for slot in rule.iter_mut() {
            *slot = combos[rest % n].clone();
            rest /= n;
        }
        let value = risk(&rule)?;
        if best.as_ref().is_none_or(|b| value < b.risk) {
            best = Some(SearchResult {
                rule: rule.clone(),
                risk: value,
            });
        }
    }
    Ok(best.expect("at least one rule"))
}

fn has_near_tie(inst: &DiscreteInstance) -> bool {
    (0..inst.n_points()).any(|x| {
        (0..inst.k).any(|label| {
            let (plus, minus) = inst.label_masses(x, label);
            (plus - minus).abs() <= 1e-9 * (plus + minus)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    /// Some 0-1 minimizer equals the label-wise contrast sign at every point.
    pub condition_holds: bool,
    /// The Hamming minimizer attains the minimal 0-1 risk.
    pub consistent: bool,
    /// The closed-form Hamming minimizer attains the exhaustive minimum (and
    /// equals the exhaustive argmin when no label is nearly tied).
    pub closed_form_matches: bool,
    pub hamming_risk: f64,
    pub exhaustive_hamming_risk: f64,
    pub zero_one_risk_of_hamming: f64,
    pub min_zero_one_risk: f64,
}

impl Theorem1Check {
    pub fn passed(&self) -> bool {
        (!self.condition_holds || self.consistent) && self.closed_form_matches
    }
}

pub fn verify_theorem1(inst: &DiscreteInstance) -> Result<Theorem1Check> {
    let tol = inst.risk_tolerance();
    let hamming = hamming_minimizer(inst);
    let hamming_risk = hamming_risk_exact(inst, &hamming, 1)?;
    let search_h = exhaustive_argmin(inst, |r| hamming_risk_exact(inst, r, 1))?;
    let search_01 = exhaustive_argmin(inst, |r| zero_one_risk_exact(inst, r))?;
    let zero_one_of_hamming = zero_one_risk_exact(inst, &hamming)?;

    let condition_holds = hamming.iter().zip(&inst.mu).all(|(d, row)| {
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row[d.index() as usize] >= best
    });
    let closed_form_matches =
        (hamming_risk - search_h.risk).abs() <= tol && (has_near_tie(inst) || search_h.rule == hamming);
    Ok(Theorem1Check {
        condition_holds,
        consistent: zero_one_of_hamming - search_01.risk <= tol,
        closed_form_matches,
        hamming_risk,
        exhaustive_hamming_risk: search_h.risk,
        zero_one_risk_of_hamming: zero_one_of_hamming,
        min_zero_one_risk: search_01.risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Check {
    /// `2 sup_a |r_a(x)| < inf_k |T_k(x)|` at every point.
    pub condition_holds: bool,
    pub consistent: bool,
    pub margin: f64,
    pub zero_one_risk_of_hamming: f64,
    pub min_zero_one_risk: f64,
}

impl Theorem2Check {
    pub fn passed(&self) -> bool {
        !self.condition_holds || self.consistent
    }
}

pub fn verify_theorem2(inst: &DiscreteInstance) -> Result<Theorem2Check> {
    let dec = inst
        .decomposition
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("interaction check needs a decomposed instance".into()))?;
    let margin = dec.margin();
    let hamming = hamming_minimizer(inst);
    let zero_one_of_hamming = zero_one_risk_exact(inst, &hamming)?;
    let search = exhaustive_argmin(inst, |r| zero_one_risk_exact(inst, r))?;
    Ok(Theorem2Check {
        condition_holds: margin > 0.0,
        consistent: zero_one_of_hamming - search.risk <= inst.risk_tolerance(),
        margin,
        zero_one_risk_of_hamming: zero_one_of_hamming,
        min_zero_one_risk: search.risk,
    })
}

/// Minimizer of a unimodal `f` on `[lo, hi]`, to bracket width `tol`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

pub fn surrogate_objective(s_plus: f64, s_minus: f64, phi: SurrogateKind, c: f64) -> f64 {
    s_plus * phi.value(c) + s_minus * phi.value(-c)
}

/// Minimizer of `c -> S+ phi(c) + S- phi(-c)` by golden-section search on
/// `[-50, 50]`.
pub fn pointwise_minimizer(s_plus: f64, s_minus: f64, phi: SurrogateKind) -> f64 {
    golden_section_min(
        |c| surrogate_objective(s_plus, s_minus, phi, c),
        -GOLDEN_BRACKET,
        GOLDEN_BRACKET,
        GOLDEN_TOLERANCE,
    )
}

/// Known minimizer, or `None` where it is not unique or lies at infinity.
pub fn closed_form_minimizer(s_plus: f64, s_minus: f64, phi: SurrogateKind) -> Option<f64> {
    let both = s_plus > 0.0 && s_minus > 0.0;
    match phi {
        SurrogateKind::Logistic => both.then(|| (s_plus / s_minus).ln()),
        SurrogateKind::Exponential => both.then(|| 0.5 * (s_plus / s_minus).ln()),
        SurrogateKind::LeastSquares => {
            (s_plus + s_minus > 0.0).then(|| (s_plus - s_minus) / (s_plus + s_minus))
        }
        SurrogateKind::Hinge => {
            if s_plus > s_minus {
                Some(1.0)
            } else if s_plus < s_minus {
                Some(-1.0)
            } else {
                None
            }
        }
    }
}

pub fn surrogate_pointwise_minimizer(
    inst: &DiscreteInstance,
    x: usize,
    label: usize,
    phi: SurrogateKind,
) -> Result<f64> {
    let (plus, minus) = inst.label_masses(x, label);
    if plus == 0.0 && minus == 0.0 {
        return Err(Error::DegenerateLabel { point: x, label });
    }
    Ok(pointwise_minimizer(plus, minus, phi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMismatch {
    pub surrogate: SurrogateKind,
    pub point: usize,
    pub label: usize,
    pub s_plus: f64,
    pub s_minus: f64,
    pub minimizer: f64,
    pub closed_form: Option<f64>,
    pub hamming_sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Theorem3Check {
    pub labels_checked: usize,
    pub ties_skipped: usize,
    pub mismatches: Vec<LabelMismatch>,
}

impl Theorem3Check {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// For every point, label and surrogate: the sign of the pointwise surrogate
/// minimizer equals the Hamming minimizer's label, and the search agrees with
/// the closed form where one exists. Tied and massless labels are skipped.
pub fn verify_theorem3(inst: &DiscreteInstance, surrogates: &[SurrogateKind]) -> Result<Theorem3Check> {
    let hamming = hamming_minimizer(inst);
    let mut check = Theorem3Check::default();
    for (x, d) in hamming.iter().enumerate() {
        for label in 0..inst.k {
            let (plus, minus) = inst.label_masses(x, label);
            if (plus - minus).abs() < TIE_TOLERANCE * (plus + minus) || plus + minus == 0.0 {
                check.ties_skipped += surrogates.len();
                continue;
            }
            for &phi in surrogates {
                check.labels_checked += 1;
                let c = surrogate_pointwise_minimizer(inst, x, label, phi)?;
                let closed = closed_form_minimizer(plus, minus, phi)
                    .filter(|v| v.abs() < GOLDEN_BRACKET - 1.0);
                let sign_ok = (if c >= 0.0 { 1 } else { -1 }) == d.get(label);
                let closed_ok = closed.is_none_or(|v| (c - v).abs() <= CLOSED_FORM_TOLERANCE * (1.0 + v.abs()));
                if !(sign_ok && closed_ok) {
                    check.mismatches.push(LabelMismatch {
                        surrogate: phi,
                        point: x,
                        label,
                        s_plus: plus,
                        s_minus: minus,
                        minimizer: c,
                        closed_form: closed,
                        hamming_sign: d.get(label),
                    });
                }
            }
        }
    }
    Ok(check)
}

fn random_simplex(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean outcomes uniform on `[0, 10]`; random point and propensity laws.
pub fn random_instance(rng: &mut SimRng, k: usize, m: usize) -> Result<DiscreteInstance> {
    let n = 1usize << k;
    let probs = random_simplex(rng, m);
    let mu = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..=10.0)).collect())
        .collect();
    let pi = (0..m).map(|_| random_simplex(rng, n)).collect();
    DiscreteInstance::new(k, probs, mu, pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionRegime {
    /// `2 |r_a(x)| < inf_k |T_k(x)|` everywhere.
    Holds,
    /// Some point has an interaction of at least half the smallest effect.
    Violated,
}

/// Effects `T ~ +-U[1, 3]`, interactions inside or outside the bound, and a
/// main effect that keeps every mean nonnegative.
pub fn random_decomposed_instance(
    rng: &mut SimRng,
    k: usize,
    m: usize,
    regime: InteractionRegime,
) -> Result<DiscreteInstance> {
    let n = 1usize << k;
    let probs = random_simplex(rng, m);
    let t: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let v: f64 = rng.random_range(1.0..=3.0);
                    if rng.random_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect()
        })
        .collect();
    let bounds: Vec<f64> = t
        .iter()
        .map(|row| row.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())) / 2.0)
        .collect();
    let mut r: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&b| {
            let scale = match regime {
                InteractionRegime::Holds => 0.999 * b,
                InteractionRegime::Violated => 3.0 * b,
            };
            (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
        })
        .collect();
    if regime == InteractionRegime::Violated {
        let x = rng.random_range(0..m);
        let a = rng.random_range(0..n);
        let v = rng.random_range(1.01 * bounds[x]..=3.0 * bounds[x]);
        r[x][a] = if rng.random_bool(0.5) { v } else { -v };
    }
    let mut dec = Decomposition {
        t,
        r,
        main: vec![0.0; m],
    };
    let combos: Vec<Combo> = Combo::enumerate(k)?.collect();
    for x in 0..m {
        let lowest = combos.iter().map(|a| dec.compose(x, a)).fold(f64::INFINITY, f64::min);
        dec.main[x] = -lowest + rng.random_range(0.01..=1.0);
    }
    let pi = (0..m).map(|_| random_simplex(rng, n)).collect();
    DiscreteInstance::from_decomposition(k, probs, dec, pi)
}

/// Two equally good treatments that are harmful together: `T = (2, 2)`,
/// `r_{(+,+)} = -5`, uniform propensities at a single point.
pub fn adversarial_instance() -> DiscreteInstance {
    let mut r = vec![0.0; 4];
    r[Combo::from_bit_string("11").expect("valid").index() as usize] = -5.0;
    let dec = Decomposition {
        t: vec![vec![2.0, 2.0]],
        r: vec![r],
        main: vec![5.0],
    };
    DiscreteInstance::from_decomposition(2, vec![1.0], dec, vec![vec![0.25; 4]]).expect("valid instance")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub index: usize,
    pub instance: DiscreteInstance,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem: u8,
    pub instances: usize,
    pub passed: usize,
    /// Instances whose hypothesis held (theorems 1 and 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_holds: Option<usize>,
    /// Label checks performed and skipped as ties (theorem 3).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_checked: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ties_skipped: Option<usize>,
    pub counterexamples: Vec<Counterexample>,
}

impl TheoremReport {
    pub fn ok(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: String,
    pub seed: u64,
    pub theorems: Vec<TheoremReport>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.theorems.iter().all(TheoremReport::ok)
    }
}

struct Outcome {
    passed: bool,
    condition_holds: bool,
    labels_checked: usize,
    ties_skipped: usize,
    detail: serde_json::Value,
}

fn check_instance(theorem: u8, inst: &DiscreteInstance) -> Result<Outcome> {
    let outcome = match theorem {
        1 => {
            let c = verify_theorem1(inst)?;
            Outcome {
                passed: c.passed(),
                condition_holds: c.condition_holds,
                labels_checked: 0,
                ties_skipped: 0,
                detail: serde_json::to_value(&c)?,
            }
        }
        2 => {
            let c = verify_theorem2(inst)?;
            Outcome {
                passed: c.passed(),
                condition_holds: c.condition_holds,
                labels_checked: 0,
                ties_skipped: 0,
                detail: serde_json::to_value(&c)?,
            }
        }
        3 => {
            let c = verify_theorem3(inst, &SurrogateKind::ALL)?;
            Outcome {
                passed: c.passed(),
                condition_holds: true,
                labels_checked: c.labels_checked,
                ties_skipped: c.ties_skipped,
                detail: serde_json::to_value(&c)?,
            }
        }
        other => return Err(Error::InvalidConfig(format!("unknown theorem {other}"))),
    };
    Ok(outcome)
}

/// Instance `index` of the sweep for `theorem`. Theorems 1 and 3 alternate
/// unstructured and additive instances; theorem 2 alternates instances that
/// satisfy and violate the interaction bound.
pub fn sweep_instance(theorem: u8, seed: u64, index: usize) -> Result<DiscreteInstance> {
    let mut rng = rng_for(derive_seed(seed, u64::from(theorem)), index as u64);
    let k = rng.random_range(1..=MAX_SEARCH_K);
    let m = rng.random_range(1..=MAX_SEARCH_POINTS);
    match (theorem, index % 2) {
        (2, 0) => random_decomposed_instance(&mut rng, k, m, InteractionRegime::Holds),
        (2, _) => random_decomposed_instance(&mut rng, k, m, InteractionRegime::Violated),
        (_, 0) => random_instance(&mut rng, k, m),
        _ => random_decomposed_instance(&mut rng, k, m, InteractionRegime::Holds),
    }
}

/// Check `instances` random instances plus `extra`, in parallel. Reports are
/// independent of the thread count.
pub fn sweep(theorem: u8, instances: usize, seed: u64, extra: &[DiscreteInstance]) -> Result<TheoremReport> {
    let generated = (0..instances)
        .into_par_iter()
        .map(|i| sweep_instance(theorem, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&DiscreteInstance> = generated.iter().chain(extra).collect();
    let outcomes = all
        .par_iter()
        .map(|inst| check_instance(theorem, inst))
        .collect::<Result<Vec<_>>>()?;

    let mut report = TheoremReport {
        theorem,
        instances: all.len(),
        passed: 0,
        condition_holds: (theorem != 3).then_some(0),
        labels_checked: (theorem == 3).then_some(0),
        ties_skipped: (theorem == 3).then_some(0),
        counterexamples: Vec::new(),
    };
    for (index, (inst, outcome)) in all.iter().zip(outcomes).enumerate() {
        if let Some(n) = report.condition_holds.as_mut() {
            *n += usize::from(outcome.condition_holds);
        }
        if let Some(n) = report.labels_checked.as_mut() {
            *n += outcome.labels_checked;
        }
        if let Some(n) = report.ties_skipped.as_mut() {
            *n += outcome.ties_skipped;
        }
        if outcome.passed {
            report.passed += 1;
        } else {
            report.counterexamples.push(Counterexample {
                index,
                instance: (*inst).clone(),
                detail: outcome.detail,
            });
        }
    }
    Ok(report)
}
