//! The feedforward relevance scorer and top-K selection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{Features, NUM_FEATURES};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 16;
const FORMAT: &str = "factgraph-relevance";
const VERSION: u32 = 1;

/// `logit = w2 . tanh(W1 x + b1) + b2` over the four features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceModel {
    hidden: usize,
    /// Row-major, `hidden x NUM_FEATURES`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    inputs: usize,
    #[serde(flatten)]
    model: RelevanceModel,
}

/// Hidden activations kept for backprop.
pub(crate) struct Forward {
    pub h: Vec<f64>,
    pub logit: f64,
}

impl RelevanceModel {
    pub fn zeros(hidden: usize) -> Self {
        RelevanceModel {
            hidden,
            w1: vec![0.0; hidden * NUM_FEATURES],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Weights drawn from U[-0.1, 0.1].
    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(hidden);
        let mut params = m.params();
        params.iter_mut().for_each(|p| *p = rng.gen_range(-0.1..=0.1));
        m.set_params(&params);
        m
    }

    /// Untrained default: each feature feeds its own hidden unit and the
    /// logit is `3 * sum_i tanh(x_i)`.
    pub fn feature_sum(hidden: usize) -> Self {
        assert!(hidden >= NUM_FEATURES, "feature_sum needs at least {NUM_FEATURES} hidden units");
        let mut m = Self::zeros(hidden);
        for i in 0..NUM_FEATURES {
            m.w1[i * NUM_FEATURES + i] = 1.0;
            m.w2[i] = 3.0;
        }
        m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.hidden * (NUM_FEATURES + 2) + 1
    }

    /// Flat parameters: `w1`, `b1`, `w2`, `b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let h = self.hidden;
        let (w1, rest) = p.split_at(h * NUM_FEATURES);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    pub(crate) fn forward(&self, f: &Features) -> Forward {
        let x = f.to_array();
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * NUM_FEATURES..(j + 1) * NUM_FEATURES];
                (row.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + self.b1[j]).tanh()
            })
            .collect();
        let logit = h.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2;
        Forward { h, logit }
    }

    pub fn logit(&self, f: &Features) -> f64 {
        self.forward(f).logit
    }

    /// Adds `scale * d logit / d params` into `grad`.
    pub(crate) fn backward(&self, f: &Features, fw: &Forward, scale: f64, grad: &mut [f64]) {
        let x = f.to_array();
        let h = self.hidden;
        let (gw1, rest) = grad.split_at_mut(h * NUM_FEATURES);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        gb2[0] += scale;
        for j in 0..h {
            gw2[j] += scale * fw.h[j];
            let da = scale * self.w2[j] * (1.0 - fw.h[j] * fw.h[j]);
            gb1[j] += da;
            for i in 0..NUM_FEATURES {
                gw1[j * NUM_FEATURES + i] += da * x[i];
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            inputs: NUM_FEATURES,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if f.format != FORMAT {
            return Err(Error::Model(format!("unexpected format {:?}", f.format)));
        }
        if f.version != VERSION {
            return Err(Error::Model(format!("unsupported version {}", f.version)));
        }
        let m = f.model;
        if f.inputs != NUM_FEATURES
            || m.w1.len() != m.hidden * NUM_FEATURES
            || m.b1.len() != m.hidden
            || m.w2.len() != m.hidden
        {
            return Err(Error::Model("parameter shapes do not match".into()));
        }
        if !m.params().iter().all(|p| p.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Default for RelevanceModel {
    fn default() -> Self {
        Self::feature_sum(DEFAULT_HIDDEN)
    }
}

/// Numerically stable softmax; empty in, empty out.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub index: usize,
    pub logit: f64,
    /// Softmax over all candidates.
    pub prob: f64,
}

/// Scores every candidate and returns the `k` most probable, ties broken by
/// text.
pub fn score_and_select(model: &RelevanceModel, features: &[Features], texts: &[&str], k: usize) -> Vec<Scored> {
    let logits: Vec<f64> = features.iter().map(|f| model.logit(f)).collect();
    rank(&logits, texts, k)
}

pub(crate) fn rank(logits: &[f64], texts: &[&str], k: usize) -> Vec<Scored> {
    let probs = softmax(logits);
    let mut all: Vec<Scored> =
        (0..logits.len()).map(|i| Scored { index: i, logit: logits[i], prob: probs[i] }).collect();
    all.sort_by(|a, b| {
        b.logit.total_cmp(&a.logit).then_with(|| texts[a.index].cmp(texts[b.index])).then(a.index.cmp(&b.index))
    });
    all.truncate(k);
    all
}
