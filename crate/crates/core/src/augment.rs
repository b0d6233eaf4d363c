//! Corpus augmentation: consistent entity renaming and date shifting.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MentionSpec};
use crate::error::{Error, Result};
use crate::kg::AttrValue;

/// Replacement names by node kind. Kinds without a pool keep their names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NamePools(pub BTreeMap<String, Vec<String>>);

const MAX_RETRIES: usize = 64;

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Replaced character ranges `[start, end)` in the original text and their
/// replacement lengths.
struct Edit {
    start: usize,
    end: usize,
    new_len: usize,
}

/// Replaces whole, case-insensitive occurrences of the keys of `names`
/// (longest first) and returns the new text with its edits.
fn replace_names(text: &str, names: &[(Vec<char>, String)]) -> (String, Vec<Edit>) {
    let chars: Vec<char> = text.chars().collect();
    let lower: Vec<char> = chars.iter().map(|c| c.to_lowercase().next().unwrap_or(*c)).collect();
    let mut out = String::new();
    let mut edits = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let at_boundary = i == 0 || !is_word(chars[i - 1]);
        let hit = at_boundary
            .then(|| {
                names.iter().find(|(old, _)| {
                    let end = i + old.len();
                    end <= chars.len() && lower[i..end] == old[..] && (end == chars.len() || !is_word(chars[end]))
                })
            })
            .flatten();
        match hit {
            Some((old, new)) => {
                edits.push(Edit { start: i, end: i + old.len(), new_len: new.chars().count() });
                out.push_str(new);
                i += old.len();
            }
            None => {
                out.push(chars[i]);
                i += 1;
            }
        }
    }
    (out, edits)
}

/// Maps a character offset of the original text into the edited text. An
/// offset inside a replaced range snaps to the start of the replacement, or
/// to its end when `is_end`.
fn map_offset(pos: usize, edits: &[Edit], is_end: bool) -> usize {
    let mut shift: isize = 0;
    for e in edits {
        if pos <= e.start {
            break;
        }
        if pos < e.end {
            let base = (e.start as isize + shift) as usize;
            return if is_end { base + e.new_len } else { base };
        }
        shift += e.new_len as isize - (e.end - e.start) as isize;
    }
    (pos as isize + shift) as usize
}

fn shift_date(s: &str, days: i64) -> Option<String> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    if d.format("%Y-%m-%d").to_string() != s {
        return None;
    }
    Some((d + chrono::Duration::days(days)).format("%Y-%m-%d").to_string())
}

/// Renames entities from `pools` everywhere they occur and moves every date
/// so that the dialogue's today becomes `new_base_date`.
pub fn augment(data: &Dataset, pools: &NamePools, new_base_date: &str, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    let old_today = data.now.parsed_date()?;
    let new_today = NaiveDate::parse_from_str(new_base_date, "%Y-%m-%d")
        .map_err(|e| Error::Dataset(format!("bad base date {new_base_date:?}: {e}")))?;
    let days = (new_today - old_today).num_days();

    let mut taken: Vec<String> = data
        .kb
        .nodes
        .iter()
        .filter_map(|n| n.attrs.get("name").and_then(|a| a.value.as_str()).map(str::to_lowercase))
        .collect();
    let mut renames: Vec<(Vec<char>, String)> = Vec::new();
    let mut order: Vec<usize> = (0..out.kb.nodes.len()).collect();
    order.sort_by(|&a, &b| out.kb.nodes[a].id.cmp(&out.kb.nodes[b].id));
    for i in order {
        let node = &mut out.kb.nodes[i];
        let Some(pool) = pools.0.get(&node.kind).filter(|p| !p.is_empty()) else { continue };
        let Some(old) = node.attrs.get("name").and_then(|a| a.value.as_str()).map(str::to_string) else { continue };
        let mut fresh = None;
        for _ in 0..MAX_RETRIES {
            let cand = pool.choose(&mut rng).expect("non-empty pool");
            if !taken.contains(&cand.to_lowercase()) {
                fresh = Some(cand.clone());
                break;
            }
        }
        let fresh = fresh.ok_or_else(|| {
            Error::Dataset(format!("no unused {} name found in {MAX_RETRIES} draws; the pool is too small", node.kind))
        })?;
        taken.push(fresh.to_lowercase());
        if let Some(a) = node.attrs.get_mut("name") {
            a.value = AttrValue::Str(fresh.clone());
        }
        renames.push((old.to_lowercase().chars().collect(), fresh));
    }
    renames.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    for node in &mut out.kb.nodes {
        for attr in node.attrs.values_mut() {
            if let AttrValue::Str(s) = &attr.value {
                if let Some(shifted) = shift_date(s, days) {
                    attr.value = AttrValue::Str(shifted);
                }
            }
        }
    }
    out.now.date = new_today.format("%Y-%m-%d").to_string();

    for turn in &mut out.dialogue {
        let (text, edits) = replace_names(&turn.text, &renames);
        if let Some(ms) = &mut turn.mentions {
            for m in ms.iter_mut() {
                *m = MentionSpec { span: [map_offset(m.span[0], &edits, false), map_offset(m.span[1], &edits, true)] };
            }
        }
        turn.text = text;
    }
    if let Some(gold) = &mut out.gold_responses {
        for g in gold.iter_mut() {
            *g = replace_names(g, &renames).0;
        }
    }
    Ok(out)
}

/// Augments each dialogue with its own seed derived from `seed`.
pub fn augment_corpus(corpus: &[Dataset], pools: &NamePools, new_base_date: &str, seed: u64) -> Result<Vec<Dataset>> {
    corpus.iter().enumerate().map(|(i, d)| augment(d, pools, new_base_date, seed.wrapping_add(i as u64))).collect()
}
