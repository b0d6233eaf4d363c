//! Corpus evaluation: BLEU-4 and fact-selection precision/recall.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TurnSpec};
use crate::error::{Error, Result};
use crate::kg::{Span, Speaker};
use crate::par::{self, Parallelism};
use crate::generation::MockGenerator;
use crate::pipeline::{Engine, Mode, Session};
use crate::relevance::{score_and_select, RelevanceModel, TrainCandidate, TrainTurn};

fn ngrams(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(|s| s.to_string()).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 over whitespace tokens with clipped counts, brevity
/// penalty and no smoothing. Orders for which the hypotheses contain no
/// n-grams at all are left out of the geometric mean.
pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> f64 {
    assert_eq!(hypotheses.len(), references.len(), "one reference per hypothesis");
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            let hc = ngrams(&ht, n);
            let rc = ngrams(&rt, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        orders += 1;
    }
    let bp = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Precision and recall of `selected` against `gold`.
pub fn precision_recall(selected: &[String], gold: &[String]) -> (f64, f64) {
    let gold: BTreeSet<&String> = gold.iter().collect();
    let sel: BTreeSet<&String> = selected.iter().collect();
    let hit = sel.intersection(&gold).count() as f64;
    let p = if sel.is_empty() { 0.0 } else { hit / sel.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    (p, r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub dialogues: usize,
    pub turns: usize,
    pub bleu: f64,
    pub k: usize,
    /// Mean over turns with gold fact ids; absent when the corpus has none.
    pub precision_at_k: Option<f64>,
    pub recall_at_k: Option<f64>,
    /// Metrics needing external models are not computed.
    pub meteor: String,
    pub bertscore: String,
    pub unieval: String,
}

struct DialogueOutcome {
    hyps: Vec<String>,
    refs: Vec<String>,
    selection: Vec<(f64, f64)>,
}

fn spans(turn: &TurnSpec) -> Option<Vec<Span>> {
    turn.mentions.as_ref().map(|ms| ms.iter().map(|m| Span::new(m.span[0], m.span[1])).collect())
}

fn run_dialogue(engine: &Engine, data: &Dataset, index: usize, mode: Mode, seed: u64) -> Result<DialogueOutcome> {
    let refs = data
        .gold_responses
        .clone()
        .ok_or_else(|| Error::Dataset(format!("dialogue {index} has no gold_responses")))?;
    if refs.len() != data.user_turn_count() {
        return Err(Error::Dataset(format!(
            "dialogue {index}: {} gold responses for {} user turns",
            refs.len(),
            data.user_turn_count()
        )));
    }
    let mut session = Session::new(data.initial_state()?, mode, seed.wrapping_add(index as u64));
    let mut hyps = Vec::new();
    let mut selection = Vec::new();
    for (i, turn) in data.dialogue.iter().enumerate() {
        let mentions = spans(turn);
        match turn.speaker {
            Speaker::System => {
                engine.record_system_turn(&mut session, &turn.text, mentions.as_deref())?;
            }
            Speaker::User => {
                let u = hyps.len();
                let result = engine.answer(&mut session, &turn.text, mentions.as_deref())?;
                if let Some(gold) = data.gold_fact_ids.as_ref().and_then(|g| g.get(u)).filter(|g| !g.is_empty()) {
                    let chosen: Vec<String> = result.facts.iter().map(|f| f.source_atom.clone()).collect();
                    selection.push(precision_recall(&chosen, gold));
                }
                hyps.push(result.response);
                let next_is_system = data.dialogue.get(i + 1).is_some_and(|t| t.speaker == Speaker::System);
                if !next_is_system {
                    engine.record_system_turn(&mut session, &refs[u], None)?;
                }
            }
        }
    }
    Ok(DialogueOutcome { hyps, refs, selection })
}

/// Replays every dialogue with gold system turns as history and scores the
/// generated responses. Dialogues run in parallel; aggregation keeps corpus
/// order.
pub fn evaluate(engine: &Engine, corpus: &[Dataset], mode: Mode, seed: u64, parallelism: Parallelism) -> Result<EvalReport> {
    let indexed: Vec<(usize, &Dataset)> = corpus.iter().enumerate().collect();
    let outcomes = par::map(parallelism, &indexed, |(i, d)| run_dialogue(engine, d, *i, mode, seed));
    let (mut hyps, mut refs, mut selection) = (Vec::new(), Vec::new(), Vec::new());
    for o in outcomes {
        let o = o?;
        hyps.extend(o.hyps);
        refs.extend(o.refs);
        selection.extend(o.selection);
    }
    let mean = |f: fn(&(f64, f64)) -> f64| {
        (!selection.is_empty()).then(|| selection.iter().map(f).sum::<f64>() / selection.len() as f64)
    };
    let na = || "n/a (requires an external model)".to_string();
    Ok(EvalReport {
        mode,
        dialogues: corpus.len(),
        turns: hyps.len(),
        bleu: if hyps.is_empty() { 0.0 } else { corpus_bleu(&hyps, &refs) },
        k: engine.config.k,
        precision_at_k: mean(|x| x.0),
        recall_at_k: mean(|x| x.1),
        meteor: na(),
        bertscore: na(),
        unieval: na(),
    })
}

/// Relevance training turns from annotated dialogues, with a mock generator
/// whose likelihoods follow each turn's gold fact ids. Candidates are the ones
/// `mode` would score.
pub fn training_corpus(engine: &Engine, corpus: &[Dataset], mode: Mode) -> Result<(Vec<TrainTurn>, MockGenerator)> {
    let mut turns = Vec::new();
    let mut mock = MockGenerator::new();
    for (index, data) in corpus.iter().enumerate() {
        let refs = data
            .gold_responses
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("dialogue {index} has no gold_responses")))?;
        let gold = data.gold_fact_ids.as_ref();
        let mut session = Session::new(data.initial_state()?, mode, index as u64);
        let mut u = 0;
        for (i, turn) in data.dialogue.iter().enumerate() {
            let mentions = spans(turn);
            if turn.speaker == Speaker::System {
                engine.record_system_turn(&mut session, &turn.text, mentions.as_deref())?;
                continue;
            }
            let reference = refs
                .get(u)
                .ok_or_else(|| Error::Dataset(format!("dialogue {index}: missing gold response for user turn {u}")))?;
            let (facts, feats) = engine.scored_candidates(&mut session, mode, &turn.text, mentions.as_deref())?;
            if let Some(ids) = gold.and_then(|g| g.get(u)) {
                mock.add_gold(reference.clone(), ids.iter().cloned());
            }
            turns.push(TrainTurn {
                history: session.state.turns().iter().map(|t| (t.speaker, t.text.clone())).collect(),
                response: reference.clone(),
                candidates: facts
                    .iter()
                    .zip(feats)
                    .map(|(f, features)| TrainCandidate { id: f.id(), text: f.text.clone(), features })
                    .collect(),
            });
            if !data.dialogue.get(i + 1).is_some_and(|t| t.speaker == Speaker::System) {
                engine.record_system_turn(&mut session, reference, None)?;
            }
            u += 1;
        }
    }
    Ok((turns, mock))
}

/// Share of turns whose top-scored candidate is a gold fact for the turn's
/// response under `gold`.
pub fn top1_rate(model: &RelevanceModel, turns: &[TrainTurn], gold: &dyn Fn(&TrainTurn, &TrainCandidate) -> bool) -> f64 {
    if turns.is_empty() {
        return 0.0;
    }
    let hits = turns
        .iter()
        .filter(|t| {
            let feats: Vec<_> = t.candidates.iter().map(|c| c.features).collect();
            let texts: Vec<&str> = t.candidates.iter().map(|c| c.text.as_str()).collect();
            score_and_select(model, &feats, &texts, 1).first().is_some_and(|s| gold(t, &t.candidates[s.index]))
        })
        .count();
    hits as f64 / turns.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let h = [s("the meeting is at ten today")];
        assert!((corpus_bleu(&h, &h) - 1.0).abs() < 1e-12);
        assert_eq!(corpus_bleu(&[s("a b c d")], &[s("w x y z")]), 0.0);
    }

    #[test]
    fn bleu_brevity_example() {
        let b = corpus_bleu(&[s("the cat sat")], &[s("the cat sat down")]);
        assert!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        assert!((b - 0.7165).abs() < 1e-4);
    }

    #[test]
    fn selection_metrics() {
        let (p, r) = precision_recall(&[s("a"), s("b")], &[s("b"), s("c"), s("d")]);
        assert_eq!((p, r), (0.5, 1.0 / 3.0));
        assert_eq!(precision_recall(&[], &[s("a")]), (0.0, 0.0));
    }
}
