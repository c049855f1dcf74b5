//! Decision network: an optional ReLU hidden layer followed by an affine map
//! to `K` scores. The recommended combination is the elementwise sign of the
//! scores.
//!
//! Parameters live in one contiguous buffer (`W1 | h0 | W2 | D0`) so that
//! gradients share the same type and SGD updates are a single `axpy`.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::combo::{Combo, LabeledSample, TreatmentRule};
use crate::error::{Error, Result};
use crate::losses::{penalty_subgradient, LossSpec};
use crate::rng::rng_for;

pub const PARAMS_VERSION: u32 = 1;

/// Layer sizes. `hidden_dim = 0` means the input is mapped affinely to the
/// scores with no hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    #[serde(rename = "p")]
    pub input_dim: usize,
    #[serde(rename = "d")]
    pub hidden_dim: usize,
    #[serde(rename = "K")]
    pub output_dim: usize,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        let cfg = NetConfig {
            input_dim,
            hidden_dim,
            output_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "network needs p >= 1 and K >= 1, got p = {}, K = {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn has_hidden(&self) -> bool {
        self.hidden_dim > 0
    }

    /// Rows of the output weight matrix: `d`, or `p` without a hidden layer.
    pub fn w2_rows(&self) -> usize {
        if self.has_hidden() {
            self.hidden_dim
        } else {
            self.input_dim
        }
    }

    fn sizes(&self) -> [usize; 4] {
        let d = self.hidden_dim;
        [
            self.input_dim * d,
            d,
            self.w2_rows() * self.output_dim,
            self.output_dim,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().sum()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Vec<f64>,
    /// `W1^T x + h0`; empty without a hidden layer.
    pub z1: Vec<f64>,
    /// `ReLU(z1)`; empty without a hidden layer.
    pub h: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    config: NetConfig,
    data: Vec<f64>,
}

impl NetParams {
    pub fn zeros(config: NetConfig) -> Self {
        NetParams {
            config,
            data: vec![0.0; config.param_count()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetParams::zeros(self.config)
    }

    /// Weights uniform on `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`
    /// per matrix, biases zero.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = NetParams::zeros(config);
        let mut rng = rng_for(seed, 0x1417);
        if config.has_hidden() {
            let s = (6.0 / (config.input_dim + config.hidden_dim) as f64).sqrt();
            for w in params.w1_mut() {
                *w = rng.random_range(-s..=s);
            }
        }
        let s = (6.0 / (config.w2_rows() + config.output_dim) as f64).sqrt();
        for w in params.w2_mut() {
            *w = rng.random_range(-s..=s);
        }
        Ok(params)
    }

    pub fn from_parts(
        config: NetConfig,
        w1: Vec<f64>,
        h0: Vec<f64>,
        w2: Vec<f64>,
        d0: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let parts = [w1, h0, w2, d0];
        let names = ["W1", "h0", "W2", "D0"];
        for ((part, want), name) in parts.iter().zip(config.sizes()).zip(names) {
            if part.len() != want {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: want,
                    actual: part.len(),
                });
            }
        }
        let data: Vec<f64> = parts.concat();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite network parameter at flat index {i}"
            )));
        }
        Ok(NetParams { config, data })
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    fn bounds(&self) -> [std::ops::Range<usize>; 4] {
        let [a, b, c, d] = self.config.sizes();
        [0..a, a..a + b, a + b..a + b + c, a + b + c..a + b + c + d]
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[self.bounds()[0].clone()]
    }
    pub fn h0(&self) -> &[f64] {
        &self.data[self.bounds()[1].clone()]
    }
    pub fn w2(&self) -> &[f64] {
        &self.data[self.bounds()[2].clone()]
    }
    pub fn d0(&self) -> &[f64] {
        &self.data[self.bounds()[3].clone()]
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let r = self.bounds()[0].clone();
        &mut self.data[r]
    }
    pub fn h0_mut(&mut self) -> &mut [f64] {
        let r = self.bounds()[1].clone();
        &mut self.data[r]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let r = self.bounds()[2].clone();
        &mut self.data[r]
    }
    pub fn d0_mut(&mut self) -> &mut [f64] {
        let r = self.bounds()[3].clone();
        &mut self.data[r]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &NetParams) {
        debug_assert_eq!(self.config, other.config);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                context: "covariate vector",
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Writes `z1` and `h` (hidden layer only) and returns the scores.
    fn forward_into(&self, x: &[f64], z1: &mut Vec<f64>, h: &mut Vec<f64>) -> Vec<f64> {
        let NetConfig {
            input_dim: p,
            hidden_dim: d,
            output_dim: k,
        } = self.config;
        z1.clear();
        h.clear();
        let input: &[f64] = if d > 0 {
            let w1 = self.w1();
            z1.extend_from_slice(self.h0());
            for (i, &xi) in x.iter().enumerate() {
                let row = &w1[i * d..(i + 1) * d];
                for (z, &w) in z1.iter_mut().zip(row) {
                    *z += w * xi;
                }
            }
            h.extend(z1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }));
            h
        } else {
            debug_assert_eq!(x.len(), p);
            x
        };
        let w2 = self.w2();
        let mut scores = self.d0().to_vec();
        for (j, &v) in input.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (s, &w) in scores.iter_mut().zip(&w2[j * k..(j + 1) * k]) {
                *s += w * v;
            }
        }
        scores
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let (mut z1, mut h) = (Vec::new(), Vec::new());
        let scores = self.forward_into(x, &mut z1, &mut h);
        Ok(ForwardTrace {
            x: x.to_vec(),
            z1,
            h,
            scores,
        })
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (mut z1, mut h) = (Vec::new(), Vec::new());
        Ok(self.forward_into(x, &mut z1, &mut h))
    }
}

impl TreatmentRule for NetParams {
    fn recommend(&self, x: &[f64]) -> Result<Combo> {
        Ok(decide(&self.scores(x)?))
    }
}

/// Elementwise sign with `sign(0) = +1`.
pub fn decide(scores: &[f64]) -> Combo {
    Combo::from_scores(scores)
}

// ── Back-propagation ────────────────────────────────────────────────────

/// Exact (sub)gradient of
/// `(1/|batch|) sum_i w_i (1/K) sum_k phi(A_ik D_k(X_i)) + lambda * penalty`.
pub fn backward(
    params: &NetParams,
    batch: &[LabeledSample],
    weights: &[f64],
    loss: &LossSpec,
) -> Result<NetParams> {
    if weights.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "per-sample weights",
            expected: batch.len(),
            actual: weights.len(),
        });
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    backward_indexed(params, batch, weights, &idx, loss)
}

/// [`backward`] over the subset `batch` of `data`. Errors carry the index into
/// `data` of the offending sample.
pub fn backward_indexed(
    params: &NetParams,
    data: &[LabeledSample],
    weights: &[f64],
    batch: &[usize],
    loss: &LossSpec,
) -> Result<NetParams> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if loss.tau != 1 {
        return Err(Error::SurrogateOrder(loss.tau));
    }
    let NetConfig {
        hidden_dim: d,
        output_dim: k,
        ..
    } = params.config;
    let mut grad = params.zeros_like();
    let [r_w1, r_h0, r_w2, r_d0] = params.bounds();
    let scale = 1.0 / (batch.len() as f64 * k as f64);
    let w2 = params.w2();

    let (mut z1, mut h) = (Vec::with_capacity(d), Vec::with_capacity(d));
    let mut g_out = vec![0.0; k];
    let mut g_hidden = vec![0.0; d];

    for &i in batch {
        let s = &data[i];
        params.check_input(&s.x)?;
        if s.a.k() != k {
            return Err(Error::DimensionMismatch {
                context: "combination length",
                expected: k,
                actual: s.a.k(),
            });
        }
        let w = weights[i];
        if !w.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
        if w == 0.0 {
            continue;
        }
        let scores = params.forward_into(&s.x, &mut z1, &mut h);
        for ((g, &sc), &a) in g_out.iter_mut().zip(&scores).zip(s.a.as_slice()) {
            let a = f64::from(a);
            *g = w * scale * loss.surrogate.derivative(a * sc) * a;
        }
        if !g_out.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite { sample: i });
        }

        let data_g = &mut grad.data;
        let input: &[f64] = if d > 0 { &h } else { &s.x };
        {
            let gw2 = &mut data_g[r_w2.clone()];
            for (j, &v) in input.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (gw, &g) in gw2[j * k..(j + 1) * k].iter_mut().zip(&g_out) {
                    *gw += v * g;
                }
            }
        }
        for (gd, &g) in data_g[r_d0.clone()].iter_mut().zip(&g_out) {
            *gd += g;
        }
        if d == 0 {
            continue;
        }
        // dz1_j = (W2_j . g_out) * 1{z1_j > 0}
        for j in 0..d {
            g_hidden[j] = if z1[j] > 0.0 {
                w2[j * k..(j + 1) * k]
                    .iter()
                    .zip(&g_out)
                    .map(|(w, g)| w * g)
                    .sum()
            } else {
                0.0
            };
        }
        if !g_hidden.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite { sample: i });
        }
        for (gh, &g) in data_g[r_h0.clone()].iter_mut().zip(&g_hidden) {
            *gh += g;
        }
        let gw1 = &mut data_g[r_w1.clone()];
        for (xi_idx, &xi) in s.x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gw, &g) in gw1[xi_idx * d..(xi_idx + 1) * d].iter_mut().zip(&g_hidden) {
                *gw += xi * g;
            }
        }
    }

    if loss.lambda > 0.0 {
        grad.axpy(loss.lambda, &penalty_subgradient(params, loss.penalty));
    }
    Ok(grad)
}

// ── Serialization ───────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct NetParamsDoc {
    version: u32,
    config: NetConfig,
    #[serde(rename = "W1")]
    w1: Vec<f64>,
    h0: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<f64>,
    #[serde(rename = "D0")]
    d0: Vec<f64>,
}

impl Serialize for NetParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        NetParamsDoc {
            version: PARAMS_VERSION,
            config: self.config,
            w1: self.w1().to_vec(),
            h0: self.h0().to_vec(),
            w2: self.w2().to_vec(),
            d0: self.d0().to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NetParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = NetParamsDoc::deserialize(deserializer)?;
        if doc.version != PARAMS_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported network parameter version {}",
                doc.version
            )));
        }
        NetParams::from_parts(doc.config, doc.w1, doc.h0, doc.w2, doc.d0)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{PenaltyKind, SurrogateKind};

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = NetConfig::new(30, 45, 5).unwrap();
        assert_eq!(cfg.param_count(), 30 * 45 + 45 + 45 * 5 + 5);
        assert_eq!(cfg.param_count(), 1625);
        let a = NetParams::init(cfg, 11).unwrap();
        let b = NetParams::init(cfg, 11).unwrap();
        assert_eq!(a.as_flat(), b.as_flat());
        assert_ne!(a.as_flat(), NetParams::init(cfg, 12).unwrap().as_flat());
        let s = (6.0f64 / 75.0).sqrt();
        assert!(a.w1().iter().all(|w| w.abs() <= s));
        assert!(a.h0().iter().chain(a.d0()).all(|&b| b == 0.0));

        let simple = NetParams::init(NetConfig::new(30, 0, 5).unwrap(), 1).unwrap();
        assert!(simple.w1().is_empty() && simple.h0().is_empty());
        assert_eq!(simple.w2().len(), 150);
        assert_eq!(simple.d0().len(), 5);
        assert!(NetConfig::new(0, 3, 1).is_err());
    }

    #[test]
    fn forward_hand_example() {
        let cfg = NetConfig::new(1, 1, 1).unwrap();
        let p = NetParams::from_parts(cfg, vec![1.0], vec![-2.0], vec![1.0], vec![0.0]).unwrap();
        let t = p.forward(&[3.0]).unwrap();
        assert_eq!((t.z1[0], t.h[0], t.scores[0]), (1.0, 1.0, 1.0));
        let t = p.forward(&[1.0]).unwrap();
        assert_eq!((t.z1[0], t.h[0], t.scores[0]), (-1.0, 0.0, 0.0));
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_params_give_zero_scores() {
        let p = NetParams::zeros(NetConfig::new(4, 3, 2).unwrap());
        assert_eq!(p.scores(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn trace_is_consistent() {
        let p = NetParams::init(NetConfig::new(3, 4, 2).unwrap(), 5).unwrap();
        let x = [0.3, -1.2, 2.0];
        let t = p.forward(&x).unwrap();
        for (z, h) in t.z1.iter().zip(&t.h) {
            assert_eq!(*h, z.max(0.0));
        }
        assert_eq!(p.forward(&x).unwrap(), t);
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(&[0.3, -0.1, 2.0]).as_slice(), &[1, -1, 1]);
        assert_eq!(decide(&[0.0, 0.0]).as_slice(), &[1, 1]);
        assert_eq!(decide(&[0.6, -0.2, 4.0]), decide(&[0.3, -0.1, 2.0]));
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let p = NetParams::init(NetConfig::new(2, 3, 2).unwrap(), 3).unwrap();
        let batch = vec![
            LabeledSample::new(vec![1.0, 2.0], Combo::new(vec![1, -1]).unwrap(), 1.0),
            LabeledSample::new(vec![-1.0, 0.5], Combo::new(vec![-1, -1]).unwrap(), 2.0),
        ];
        let spec = LossSpec::new(SurrogateKind::Logistic, PenaltyKind::Ridge, 0.0).unwrap();
        let g = backward(&p, &batch, &[0.0, 0.0], &spec).unwrap();
        assert!(g.as_flat().iter().all(|&v| v == 0.0));
        assert!(matches!(
            backward(&p, &batch, &[f64::NAN, 1.0], &spec),
            Err(Error::NonFinite { sample: 0 })
        ));
        assert!(backward(&p, &[], &[], &spec).is_err());
    }

    #[test]
    fn json_roundtrip_is_bit_faithful() {
        let p = NetParams::init(NetConfig::new(3, 2, 2).unwrap(), 9).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["config"]["K"], 2);
        let q: NetParams = serde_json::from_str(&s).unwrap();
        let bits = |p: &NetParams| p.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        let bad = s.replace("\"version\":1", "\"version\":2");
        assert!(serde_json::from_str::<NetParams>(&bad).is_err());
    }
}
