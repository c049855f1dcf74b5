//! Propensity scores `pi(a | x) = Pr(A = a | X = x)`.
//!
//! Two estimators: empirical combination frequencies when assignment is
//! independent of the covariates, and a product of `K` per-label logistic
//! regressions when the labels are conditionally independent given `X`.
//! All returned probabilities are clipped below at `clip_floor`.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::combo::{Combo, LabeledSample};
use crate::error::{Error, Result};

pub const DEFAULT_CLIP_FLOOR: f64 = 1e-3;
const LOGISTIC_RIDGE: f64 = 1e-8;
const LOGISTIC_GRAD_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 10_000;

/// Known propensities supplied by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownPropensity {
    Constant { value: f64 },
    /// Keyed by combination bit pattern (`"101"`); unlisted combinations have
    /// probability zero before clipping.
    Table { probs: BTreeMap<String, f64> },
}

/// Logistic fit for one label, or its marginal frequency when the label never
/// varies in the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelModel {
    /// `[intercept, beta_1, ..., beta_p]` for `P(A_k = +1 | x)`.
    Logistic { coef: Vec<f64> },
    Marginal { p_on: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PropensityVariant {
    Known(KnownPropensity),
    MarginalEmpirical {
        k: usize,
        freqs: BTreeMap<String, f64>,
    },
    PerLabelLogistic {
        labels: Vec<LabelModel>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub variant: PropensityVariant,
    pub clip_floor: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl PropensityModel {
    pub fn known_constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "known propensity must lie in (0, 1], got {value}"
            )));
        }
        Ok(PropensityModel {
            variant: PropensityVariant::Known(KnownPropensity::Constant { value }),
            clip_floor: DEFAULT_CLIP_FLOOR,
        })
    }

    pub fn known_table(probs: BTreeMap<String, f64>) -> Result<Self> {
        for (key, &p) in &probs {
            Combo::from_bit_string(key)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "propensity for {key} outside [0, 1]: {p}"
                )));
            }
        }
        Ok(PropensityModel {
            variant: PropensityVariant::Known(KnownPropensity::Table { probs }),
            clip_floor: DEFAULT_CLIP_FLOOR,
        })
    }

    pub fn with_clip_floor(mut self, floor: f64) -> Self {
        self.clip_floor = floor;
        self
    }

    /// Empirical frequency of each observed combination.
    pub fn fit_marginal(data: &[LabeledSample]) -> Result<Self> {
        let first = data.first().ok_or(Error::Empty("data"))?;
        let k = first.a.k();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in data {
            if s.a.k() != k {
                return Err(Error::DimensionMismatch {
                    context: "combination length",
                    expected: k,
                    actual: s.a.k(),
                });
            }
            *counts.entry(s.a.bit_string()).or_default() += 1;
        }
        let n = data.len() as f64;
        let freqs = counts
            .into_iter()
            .map(|(key, c)| (key, c as f64 / n))
            .collect();
        Ok(PropensityModel {
            variant: PropensityVariant::MarginalEmpirical { k, freqs },
            clip_floor: DEFAULT_CLIP_FLOOR,
        })
    }

    /// `K` independent logistic regressions of `A_k` on `X` with intercept,
    /// fitted by full-batch gradient descent on the mean log-likelihood with a
    /// tiny ridge term. Labels observed in a single class fall back to their
    /// marginal frequency.
    pub fn fit_per_label_logistic(data: &[LabeledSample]) -> Result<Self> {
        let first = data.first().ok_or(Error::Empty("data"))?;
        let (k, p) = (first.a.k(), first.x.len());
        for s in data {
            if s.a.k() != k || s.x.len() != p {
                return Err(Error::DimensionMismatch {
                    context: "sample shape",
                    expected: p,
                    actual: s.x.len(),
                });
            }
        }
        let labels = (0..k)
            .map(|label| {
                let n_on = data.iter().filter(|s| s.a.is_on(label)).count();
                if n_on == 0 || n_on == data.len() {
                    warn!("label {label} has a single class; using its marginal frequency");
                    LabelModel::Marginal {
                        p_on: n_on as f64 / data.len() as f64,
                    }
                } else {
                    LabelModel::Logistic {
                        coef: fit_logistic(data, label),
                    }
                }
            })
            .collect();
        Ok(PropensityModel {
            variant: PropensityVariant::PerLabelLogistic { labels },
            clip_floor: DEFAULT_CLIP_FLOOR,
        })
    }

    /// Labels that fell back to marginal frequencies (per-label variant only).
    pub fn fallback_labels(&self) -> Vec<usize> {
        match &self.variant {
            PropensityVariant::PerLabelLogistic { labels } => labels
                .iter()
                .enumerate()
                .filter(|(_, m)| matches!(m, LabelModel::Marginal { .. }))
                .map(|(i, _)| i)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Probability before clipping.
    pub fn raw_propensity(&self, a: &Combo, x: &[f64]) -> Result<f64> {
        match &self.variant {
            PropensityVariant::Known(KnownPropensity::Constant { value }) => Ok(*value),
            PropensityVariant::Known(KnownPropensity::Table { probs }) => {
                Ok(probs.get(&a.bit_string()).copied().unwrap_or(0.0))
            }
            PropensityVariant::MarginalEmpirical { k, freqs } => {
                if a.k() != *k {
                    return Err(Error::DimensionMismatch {
                        context: "combination length",
                        expected: *k,
                        actual: a.k(),
                    });
                }
                Ok(freqs.get(&a.bit_string()).copied().unwrap_or(0.0))
            }
            PropensityVariant::PerLabelLogistic { labels } => {
                if a.k() != labels.len() {
                    return Err(Error::DimensionMismatch {
                        context: "combination length",
                        expected: labels.len(),
                        actual: a.k(),
                    });
                }
                let mut prob = 1.0;
                for (label, model) in labels.iter().enumerate() {
                    let p_on = match model {
                        LabelModel::Marginal { p_on } => *p_on,
                        LabelModel::Logistic { coef } => {
                            if x.len() + 1 != coef.len() {
                                return Err(Error::DimensionMismatch {
                                    context: "covariate vector",
                                    expected: coef.len() - 1,
                                    actual: x.len(),
                                });
                            }
                            sigmoid(linear(coef, x))
                        }
                    };
                    prob *= if a.is_on(label) { p_on } else { 1.0 - p_on };
                }
                Ok(prob)
            }
        }
    }

    /// `pi(a | x)` clipped to `[clip_floor, 1]`.
    pub fn propensity(&self, a: &Combo, x: &[f64]) -> Result<f64> {
        Ok(self.raw_propensity(a, x)?.clamp(self.clip_floor, 1.0))
    }

    /// Propensity of each sample's received combination.
    pub fn of_samples(&self, data: &[LabeledSample]) -> Result<Vec<f64>> {
        data.iter().map(|s| self.propensity(&s.a, &s.x)).collect()
    }
}

fn linear(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Gradient descent with step `1/L`, `L` the standard Lipschitz bound
/// `0.25 * mean(1 + |x|^2) + 2 * ridge` of the mean logistic loss.
fn fit_logistic(data: &[LabeledSample], label: usize) -> Vec<f64> {
    let p = data[0].x.len();
    let n = data.len() as f64;
    let lipschitz = 0.25 * data.iter().map(|s| 1.0 + s.x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n
        + 2.0 * LOGISTIC_RIDGE;
    let step = 1.0 / lipschitz;
    let mut coef = vec![0.0; p + 1];
    let mut grad = vec![0.0; p + 1];
    for _ in 0..LOGISTIC_MAX_ITER {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for s in data {
            let y = if s.a.is_on(label) { 1.0 } else { 0.0 };
            let resid = sigmoid(linear(&coef, &s.x)) - y;
            grad[0] += resid;
            for (g, v) in grad[1..].iter_mut().zip(&s.x) {
                *g += resid * v;
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g /= n;
            if j > 0 {
                *g += 2.0 * LOGISTIC_RIDGE * coef[j];
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < LOGISTIC_GRAD_TOL {
            break;
        }
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= step * g;
        }
    }
    coef
}
