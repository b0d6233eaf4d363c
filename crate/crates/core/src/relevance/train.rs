//! Training the relevance model by maximizing the marginal likelihood of the
//! gold response over the top-K selected facts:
//! `L = -ln sum_z P(y|x,z) P_K(z|x)`, with `P_K` the softmax restricted to the
//! current top K.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Features;
use super::model::{rank, softmax, RelevanceModel};
use crate::error::{Error, Result};
use crate::kg::Speaker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCandidate {
    pub id: String,
    pub text: String,
    pub features: Features,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTurn {
    pub history: Vec<(Speaker, String)>,
    pub response: String,
    pub candidates: Vec<TrainCandidate>,
}

/// `P(y | x, z)` for a single fact `z`.
pub trait LikelihoodScorer: Sync {
    fn likelihood(&self, turn: &TrainTurn, candidate: &TrainCandidate) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { k: 10, epochs: 20, lr: 0.05, momentum: 0.9, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: RelevanceModel,
    /// Mean loss per epoch, measured during the epoch.
    pub epoch_loss: Vec<f64>,
}

/// Loss and gradient for one turn given per-candidate likelihoods.
pub fn loss_and_grad(model: &RelevanceModel, features: &[Features], texts: &[&str], likelihoods: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.num_params()];
    if features.is_empty() {
        return (0.0, grad);
    }
    let fws: Vec<_> = features.iter().map(|f| model.forward(f)).collect();
    let logits: Vec<f64> = fws.iter().map(|f| f.logit).collect();
    let top = rank(&logits, texts, k);
    let p = softmax(&top.iter().map(|s| s.logit).collect::<Vec<_>>());
    let s: f64 = top.iter().zip(&p).map(|(t, p)| likelihoods[t.index] * p).sum();
    let loss = -s.ln();
    if s > 0.0 {
        for (t, pz) in top.iter().zip(&p) {
            let dl = -pz * (likelihoods[t.index] - s) / s;
            model.backward(&features[t.index], &fws[t.index], dl, &mut grad);
        }
    }
    (loss, grad)
}

/// Momentum SGD, one update per turn, turns shuffled each epoch by `seed`.
/// Likelihoods are requested once per (turn, candidate) and cached.
pub fn train(mut model: RelevanceModel, corpus: &[TrainTurn], scorer: &dyn LikelihoodScorer, config: &TrainConfig) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cache: Mutex<HashMap<(usize, usize), f64>> = Mutex::new(HashMap::new());
    let mut velocity = vec![0.0; model.num_params()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &ti in &order {
            let turn = &corpus[ti];
            let features: Vec<Features> = turn.candidates.iter().map(|c| c.features).collect();
            let texts: Vec<&str> = turn.candidates.iter().map(|c| c.text.as_str()).collect();
            let logits: Vec<f64> = features.iter().map(|f| model.logit(f)).collect();
            let mut lik = vec![0.0; features.len()];
            for s in rank(&logits, &texts, config.k) {
                let key = (ti, s.index);
                let cached = cache.lock().expect("cache").get(&key).copied();
                lik[s.index] = match cached {
                    Some(v) => v,
                    None => {
                        let v = scorer.likelihood(turn, &turn.candidates[s.index])?;
                        cache.lock().expect("cache").insert(key, v);
                        v
                    }
                };
            }
            let (loss, grad) = loss_and_grad(&model, &features, &texts, &lik, config.k);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    turn: ti,
                    detail: format!("loss {loss}; every selected fact has likelihood 0 or the weights diverged"),
                });
            }
            total += loss;
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.lr * *v;
            }
            model.set_params(&params);
        }
        let mean = if corpus.is_empty() { 0.0 } else { total / corpus.len() as f64 };
        log::info!("relevance epoch {}: mean loss {mean:.6}", epoch + 1);
        epoch_loss.push(mean);
    }
    Ok(TrainReport { model, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_matches_hand_computation() {
        // logits ln 2, ln 3, 0 give P_K = (1/3, 1/2, 1/6); S = 0.9/3 + 0.1/2 + 0.1/6 = 0.3667
        let mut m = RelevanceModel::zeros(1);
        let mut p = m.params();
        // w1 row picks recency, w2 = 2: logit = 2 tanh(recency)
        p[3] = 1.0;
        p[5] = 2.0;
        m.set_params(&p);
        let f: Vec<Features> = [2f64.ln(), 3f64.ln(), 0.0]
            .iter()
            .map(|l| Features { recency: (l / 2.0).atanh(), ..Default::default() })
            .collect();
        let (loss, _) = loss_and_grad(&m, &f, &["a", "b", "c"], &[0.9, 0.1, 0.1], 10);
        let s = 0.9 / 3.0 + 0.1 / 2.0 + 0.1 / 6.0;
        assert!((loss + f64::ln(s)).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = RelevanceModel::random(8, 11);
        let f: Vec<Features> = (0..6)
            .map(|i| Features::from_array([0.1 * i as f64, 0.5 - 0.07 * i as f64, (i % 3) as f64 / 2.0, 0.2]))
            .collect();
        let texts = ["a", "b", "c", "d", "e", "f"];
        let lik = [0.9, 0.1, 0.3, 0.05, 0.7, 0.2];
        let (_, g) = loss_and_grad(&m, &f, &texts, &lik, 4);
        let p0 = m.params();
        for i in 0..p0.len() {
            let eps = 1e-6;
            let mut hi = m.clone();
            let mut lo = m.clone();
            let mut p = p0.clone();
            p[i] += eps;
            hi.set_params(&p);
            p[i] -= 2.0 * eps;
            lo.set_params(&p);
            let fd = (loss_and_grad(&hi, &f, &texts, &lik, 4).0 - loss_and_grad(&lo, &f, &texts, &lik, 4).0) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    struct Zero;
    impl LikelihoodScorer for Zero {
        fn likelihood(&self, _: &TrainTurn, _: &TrainCandidate) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn zero_likelihood_is_reported() {
        let turn = TrainTurn {
            history: vec![],
            response: "r".into(),
            candidates: vec![TrainCandidate { id: "a".into(), text: "a".into(), features: Features::default() }],
        };
        let err = train(RelevanceModel::random(4, 0), &[turn], &Zero, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, turn: 0, .. }));
    }
}
