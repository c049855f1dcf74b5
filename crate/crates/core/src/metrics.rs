//! Evaluation scores for recommended combinations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::combo::{Combo, LabeledSample};
use crate::error::{Error, Result};
use crate::losses::hamming_distance;
use crate::propensity::PropensityModel;

/// Realized potential outcomes, available only in simulation.
pub trait OutcomeOracle {
    fn len(&self) -> usize;

    /// Outcome patient `i` would have realized under combination `a`.
    fn realized_outcome(&self, i: usize, a: &Combo) -> Result<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub mcr: f64,
    pub amcr: f64,
    pub adj_mcr: f64,
    pub adj_amcr: f64,
    /// Average benefit; simulation only.
    pub ab: Option<f64>,
    /// Weighted value statistic; `None` when no prediction matches the
    /// observed assignment.
    pub t_value: Option<f64>,
    pub n_match: usize,
    pub n_eval: usize,
    /// Combinations with no patients among the reference labels.
    pub skipped_classes: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "mcr,amcr,adj_mcr,adj_amcr,ab,t_value,n_match,n_eval,skipped_classes";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
            self.mcr,
            self.amcr,
            self.adj_mcr,
            self.adj_amcr,
            opt(self.ab),
            opt(self.t_value),
            self.n_match,
            self.n_eval,
            self.skipped_classes
        )
    }

    /// Classification scores and average benefit against simulated truth.
    pub fn simulation<O: OutcomeOracle + ?Sized>(
        pred: &[Combo],
        opt: &[Combo],
        oracle: &O,
    ) -> Result<Self> {
        let k = opt.first().ok_or(Error::Empty("predictions"))?.k();
        let mcr = mcr(pred, opt)?;
        let Amcr { value: amcr, skipped } = amcr(pred, opt, k)?;
        Ok(MetricsReport {
            mcr,
            amcr,
            adj_mcr: adjust(mcr, k)?,
            adj_amcr: adjust(amcr, k)?,
            ab: Some(avg_benefit(pred, oracle)?),
            t_value: None,
            n_match: pred.iter().zip(opt).filter(|(p, o)| p == o).count(),
            n_eval: pred.len(),
            skipped_classes: skipped,
        })
    }
}

fn check_lengths(pred: &[Combo], other: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if pred.len() != other {
        return Err(Error::DimensionMismatch {
            context: "predictions",
            expected: other,
            actual: pred.len(),
        });
    }
    Ok(())
}

/// Fraction of patients whose full combination differs from the reference.
pub fn mcr(pred: &[Combo], opt: &[Combo]) -> Result<f64> {
    check_lengths(pred, opt.len())?;
    let wrong = pred.iter().zip(opt).filter(|(p, o)| p != o).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean per-patient Hamming distance to the reference.
pub fn mean_hamming(pred: &[Combo], opt: &[Combo]) -> Result<f64> {
    check_lengths(pred, opt.len())?;
    let mut total = 0.0;
    for (p, o) in pred.iter().zip(opt) {
        total += hamming_distance(p, o)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amcr {
    pub value: f64,
    pub skipped: usize,
}

/// Misclassification rate averaged over reference classes. Empty classes are
/// skipped and the average taken over the non-empty ones.
pub fn amcr(pred: &[Combo], opt: &[Combo], k: usize) -> Result<Amcr> {
    check_lengths(pred, opt.len())?;
    let mut classes: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (p, o) in pred.iter().zip(opt) {
        if o.k() != k || p.k() != k {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: k,
                actual: o.k().max(p.k()),
            });
        }
        let entry = classes.entry(o.index()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(p != o);
    }
    let total: f64 = classes
        .values()
        .map(|&(n, wrong)| wrong as f64 / n as f64)
        .sum();
    let n_classes = 1usize << k;
    Ok(Amcr {
        value: total / classes.len() as f64,
        skipped: n_classes - classes.len(),
    })
}

/// `1 - (1 - score)^(1/K)`: per-label equivalent of a combination error rate.
pub fn adjust(score: f64, k: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::ScoreOutOfRange(score));
    }
    if k == 0 {
        return Err(Error::Empty("treatment combination"));
    }
    Ok(1.0 - (1.0 - score).powf(1.0 / k as f64))
}

/// Mean realized outcome under the recommended combinations.
pub fn avg_benefit<O: OutcomeOracle + ?Sized>(pred: &[Combo], oracle: &O) -> Result<f64> {
    check_lengths(pred, oracle.len())?;
    let mut total = 0.0;
    for (i, p) in pred.iter().enumerate() {
        total += oracle.realized_outcome(i, p)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueStatistic {
    /// `None` when no prediction matches the observed assignment.
    pub t: Option<f64>,
    pub n_match: usize,
}

/// Inverse-propensity weighted mean outcome among patients whose observed
/// combination equals the recommendation.
pub fn weighted_value_t(pred: &[Combo], data: &[LabeledSample], pi: &[f64]) -> Result<ValueStatistic> {
    check_lengths(pred, data.len())?;
    if pi.len() != data.len() {
        return Err(Error::DimensionMismatch {
            context: "propensities",
            expected: data.len(),
            actual: pi.len(),
        });
    }
    let (mut num, mut den, mut n_match) = (0.0, 0.0, 0);
    for (i, ((p, s), &prob)) in pred.iter().zip(data).zip(pi).enumerate() {
        if p != &s.a {
            continue;
        }
        if !(prob > 0.0) {
            return Err(Error::NonFinite { sample: i });
        }
        let w = 1.0 / prob;
        num += w * s.r;
        den += w;
        n_match += 1;
    }
    Ok(ValueStatistic {
        t: (den > 0.0).then(|| num / den),
        n_match,
    })
}

pub fn weighted_value_t_model(
    pred: &[Combo],
    data: &[LabeledSample],
    model: &PropensityModel,
) -> Result<ValueStatistic> {
    weighted_value_t(pred, data, &model.of_samples(data)?)
}
