//! Outcome-weighted Hamming loss, its `tau`-th order generalization, convex
//! surrogates, and weight penalties.

use serde::{Deserialize, Serialize};

use crate::combo::{Combo, LabeledSample, TreatmentRule};
use crate::error::{Error, Result};
use crate::network::NetParams;

// ── Surrogates ──────────────────────────────────────────────────────────

/// Convex margin loss `phi` replacing the indicator `1{margin <= 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Exponential,
    Hinge,
    LeastSquares,
    Logistic,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 4] = [
        SurrogateKind::Exponential,
        SurrogateKind::Hinge,
        SurrogateKind::LeastSquares,
        SurrogateKind::Logistic,
    ];

    pub fn value(self, x: f64) -> f64 {
        match self {
            SurrogateKind::Exponential => (-x).exp(),
            SurrogateKind::Hinge => (1.0 - x).max(0.0),
            SurrogateKind::LeastSquares => (1.0 - x) * (1.0 - x),
            // ln(1 + e^{-x}) without overflow for large |x|
            SurrogateKind::Logistic => {
                if x > 0.0 {
                    (-x).exp().ln_1p()
                } else {
                    -x + x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative, or the subgradient on the flat side at the hinge kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SurrogateKind::Exponential => -(-x).exp(),
            SurrogateKind::Hinge => {
                if x < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            SurrogateKind::LeastSquares => -2.0 * (1.0 - x),
            SurrogateKind::Logistic => {
                // -1 / (1 + e^x)
                if x > 0.0 {
                    let e = (-x).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + x.exp())
                }
            }
        }
    }

    /// Central-difference slope at zero; every supported kind is negative.
    pub fn numeric_slope_at_zero(self) -> f64 {
        let h = 1e-6;
        (self.value(h) - self.value(-h)) / (2.0 * h)
    }

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Exponential => "exponential",
            SurrogateKind::Hinge => "hinge",
            SurrogateKind::LeastSquares => "least_squares",
            SurrogateKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SurrogateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown surrogate {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Ridge,
    Lasso,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "ridge" => Ok(PenaltyKind::Ridge),
            "lasso" => Ok(PenaltyKind::Lasso),
            _ => Err(Error::InvalidConfig(format!("unknown penalty {s:?}"))),
        }
    }
}

/// Surrogate, Hamming order and penalty of a training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub surrogate: SurrogateKind,
    pub tau: usize,
    pub penalty: PenaltyKind,
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(surrogate: SurrogateKind, penalty: PenaltyKind, lambda: f64) -> Result<Self> {
        let spec = LossSpec {
            surrogate,
            tau: 1,
            penalty,
            lambda,
        };
        spec.validate(1)?;
        Ok(spec)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        LossSpec { lambda, ..self }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.tau < 1 || self.tau > k {
            return Err(Error::TauOutOfRange { tau: self.tau, k });
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.surrogate.numeric_slope_at_zero() < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "surrogate {} has nonnegative slope at zero",
                self.surrogate.name()
            )));
        }
        Ok(())
    }
}

// ── Label losses ────────────────────────────────────────────────────────

fn check_pair(a: &Combo, d: &Combo) -> Result<()> {
    if a.k() != d.k() {
        return Err(Error::DimensionMismatch {
            context: "combination length",
            expected: a.k(),
            actual: d.k(),
        });
    }
    Ok(())
}

fn matched(a: &Combo, d: &Combo) -> usize {
    a.as_slice()
        .iter()
        .zip(d.as_slice())
        .filter(|(x, y)| x == y)
        .count()
}

/// Proportion of labels on which `a` and `d` disagree.
pub fn hamming_distance(a: &Combo, d: &Combo) -> Result<f64> {
    check_pair(a, d)?;
    Ok((a.k() - matched(a, d)) as f64 / a.k() as f64)
}

pub fn zero_one_loss(a: &Combo, d: &Combo) -> Result<f64> {
    check_pair(a, d)?;
    Ok(if a == d { 0.0 } else { 1.0 })
}

/// `C(n, k)` as a float; exact for the label counts used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `tau`-th order Hamming loss: one minus the fraction of size-`tau` label
/// subsets on which `a` and `d` agree completely.
///
/// A subset agrees iff all its labels are among the `m` matching ones, so the
/// count is `C(m, tau)`. `tau = 1` is the Hamming distance, `tau = K` the 0-1
/// loss.
pub fn tau_order_loss(a: &Combo, d: &Combo, tau: usize) -> Result<f64> {
    check_pair(a, d)?;
    let k = a.k();
    if tau < 1 || tau > k {
        return Err(Error::TauOutOfRange { tau, k });
    }
    let m = matched(a, d);
    let all = binomial(k, tau);
    // the numerator is exact, so tau = 1 reproduces the Hamming distance bit for bit
    Ok((all - binomial(m, tau)) / all)
}

fn check_weights(data: &[LabeledSample], weights: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("data"));
    }
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            context: "per-sample weights",
            expected: data.len(),
            actual: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite { sample: i });
    }
    Ok(())
}

/// `(1/n) sum_i w_i * L_tau(A_i, rule(X_i))`.
pub fn empirical_weighted_risk<R: TreatmentRule + ?Sized>(
    data: &[LabeledSample],
    weights: &[f64],
    rule: &R,
    tau: usize,
) -> Result<f64> {
    check_weights(data, weights)?;
    let mut total = 0.0;
    for (s, &w) in data.iter().zip(weights) {
        let d = rule.recommend(&s.x)?;
        total += w * tau_order_loss(&s.a, &d, tau)?;
    }
    Ok(total / data.len() as f64)
}

/// Unpenalized surrogate risk `(1/n) sum_i w_i (1/K) sum_k phi(A_ik D_k(X_i))`.
pub fn surrogate_data_risk(
    data: &[LabeledSample],
    weights: &[f64],
    params: &NetParams,
    surrogate: SurrogateKind,
) -> Result<f64> {
    check_weights(data, weights)?;
    let k = params.config().output_dim;
    let mut total = 0.0;
    for (i, (s, &w)) in data.iter().zip(weights).enumerate() {
        if s.a.k() != k {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: k,
                actual: s.a.k(),
            });
        }
        let scores = params.scores(&s.x)?;
        let per: f64 = scores
            .iter()
            .zip(s.a.as_slice())
            .map(|(&d, &a)| surrogate.value(f64::from(a) * d))
            .sum();
        total += w * per / k as f64;
        if !total.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
    }
    Ok(total / data.len() as f64)
}

/// Penalized surrogate risk minimized by the trainer.
pub fn surrogate_empirical_risk(
    data: &[LabeledSample],
    weights: &[f64],
    params: &NetParams,
    spec: &LossSpec,
) -> Result<f64> {
    if spec.tau != 1 {
        return Err(Error::SurrogateOrder(spec.tau));
    }
    let risk = surrogate_data_risk(data, weights, params, spec.surrogate)?;
    Ok(risk + spec.lambda * penalty_value(params, spec.penalty))
}

// ── Penalties ───────────────────────────────────────────────────────────

/// Ridge: squared Frobenius norms of the weight matrices. Lasso: entrywise
/// absolute sums. Bias vectors are not penalized.
pub fn penalty_value(params: &NetParams, kind: PenaltyKind) -> f64 {
    let weights = params.w1().iter().chain(params.w2());
    match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Ridge => weights.map(|w| w * w).sum(),
        PenaltyKind::Lasso => weights.map(|w| w.abs()).sum(),
    }
}

/// Subgradient with the same shape as `params`; `d|w|/dw` at 0 is 0.
pub fn penalty_subgradient(params: &NetParams, kind: PenaltyKind) -> NetParams {
    let mut g = params.zeros_like();
    let f = |w: f64| match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Ridge => 2.0 * w,
        PenaltyKind::Lasso => {
            if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    };
    for (gi, &w) in g.w1_mut().iter_mut().zip(params.w1()) {
        *gi = f(w);
    }
    for (gi, &w) in g.w2_mut().iter_mut().zip(params.w2()) {
        *gi = f(w);
    }
    g
}
