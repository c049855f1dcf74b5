//! Treatment combinations and patient records.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `K` for which the `2^K` combinations are enumerated.
pub const MAX_ENUMERABLE_K: usize = 16;

/// A treatment combination in `{-1,+1}^K`; entry `k` is `+1` when treatment
/// `k` is given.
///
/// Combinations are indexed by reading the entries as bits, first label most
/// significant, so that numeric index order coincides with lexicographic order
/// under `+1 > -1`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct Combo(Vec<i8>);

impl Combo {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("treatment combination"));
        }
        if let Some(&bad) = entries.iter().find(|&&e| e != 1 && e != -1) {
            return Err(Error::InvalidTreatment(bad as i64));
        }
        Ok(Combo(entries))
    }

    /// Constant combination: every treatment on (`+1`) or off (`-1`).
    pub fn constant(k: usize, on: bool) -> Self {
        Combo(vec![if on { 1 } else { -1 }; k])
    }

    pub fn from_index(index: u32, k: usize) -> Self {
        debug_assert!(k <= 32);
        Combo(
            (0..k)
                .map(|j| if (index >> (k - 1 - j)) & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    /// Elementwise sign of a score vector with `sign(0) = +1`.
    pub fn from_scores(scores: &[f64]) -> Self {
        Combo(scores.iter().map(|&s| if s >= 0.0 { 1 } else { -1 }).collect())
    }

    pub fn index(&self) -> u32 {
        self.0
            .iter()
            .fold(0u32, |acc, &e| (acc << 1) | u32::from(e == 1))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, k: usize) -> i8 {
        self.0[k]
    }

    pub fn is_on(&self, k: usize) -> bool {
        self.0[k] == 1
    }

    /// Bit pattern such as `"10110"`, `'1'` where the treatment is given.
    pub fn bit_string(&self) -> String {
        self.0.iter().map(|&e| if e == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        let entries = s
            .chars()
            .map(|c| match c {
                '1' => Ok(1),
                '0' => Ok(-1),
                _ => Err(Error::InvalidConfig(format!(
                    "bad combination pattern {s:?}: expected only '0' and '1'"
                ))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Combo::new(entries)
    }

    /// All `2^K` combinations in index order.
    pub fn enumerate(k: usize) -> Result<impl Iterator<Item = Combo>> {
        if k == 0 {
            return Err(Error::Empty("treatment combination"));
        }
        if k > MAX_ENUMERABLE_K {
            return Err(Error::TooManyLabels(k));
        }
        Ok((0..(1u32 << k)).map(move |i| Combo::from_index(i, k)))
    }
}

impl TryFrom<Vec<i8>> for Combo {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        Combo::new(v)
    }
}

impl From<Combo> for Vec<i8> {
    fn from(c: Combo) -> Self {
        c.0
    }
}

impl fmt::Debug for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Combo({})", self.bit_string())
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bit_string())
    }
}

/// One patient record: covariates, received combination, outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub a: Combo,
    pub r: f64,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, a: Combo, r: f64) -> Self {
        LabeledSample { x, a, r }
    }
}

/// Anything that maps covariates to a recommended combination.
pub trait TreatmentRule {
    fn recommend(&self, x: &[f64]) -> Result<Combo>;
}

impl<F> TreatmentRule for F
where
    F: Fn(&[f64]) -> Combo,
{
    fn recommend(&self, x: &[f64]) -> Result<Combo> {
        Ok(self(x))
    }
}
