//! JSON ingestion schema for knowledge bases and annotated dialogues.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AttrValue, DialogueState, KnowledgeGraph, Speaker, Span};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KbSpec {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, AttrSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub value: AttrValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub src: String,
    pub label: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionSpec {
    pub span: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnSpec {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<MentionSpec>>,
}

/// Wall-clock anchor of a dialogue: `YYYY-MM-DD` and `HH:MM`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Now {
    pub date: String,
    pub time: String,
}

pub const DATE_FORMAT: &str = "%Y-%m-%d";

impl Now {
    pub fn new(date: &str, time: &str) -> Self {
        Now { date: date.to_string(), time: time.to_string() }
    }

    pub fn parsed_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.date, DATE_FORMAT)
            .map_err(|e| Error::Dataset(format!("bad date {:?}: {e}", self.date)))
    }

    pub fn tomorrow(&self) -> Result<String> {
        let d = self.parsed_date()?;
        let t = d
            .checked_add_days(Days::new(1))
            .ok_or_else(|| Error::Dataset("date overflow".into()))?;
        Ok(t.format(DATE_FORMAT).to_string())
    }

    /// Lowercase English weekday names of today and tomorrow.
    pub fn weekdays(&self) -> Result<(String, String)> {
        let d = self.parsed_date()?;
        let next = d.succ_opt().ok_or_else(|| Error::Dataset("date overflow".into()))?;
        let name = |d: NaiveDate| d.format("%A").to_string().to_lowercase();
        Ok((name(d), name(next)))
    }
}

/// One annotated dialogue with its knowledge base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kb: KbSpec,
    #[serde(default)]
    pub dialogue: Vec<TurnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_responses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_fact_ids: Option<Vec<Vec<String>>>,
    pub now: Now,
}

impl Dataset {
    /// Fresh dialogue state holding this dataset's KB and no turns.
    pub fn initial_state(&self) -> Result<DialogueState> {
        DialogueState::new(KnowledgeGraph::from_spec(&self.kb)?, self.now.clone())
    }

    /// State with the whole annotated dialogue replayed, mentions included.
    pub fn replayed_state(&self) -> Result<DialogueState> {
        let mut state = self.initial_state()?;
        for turn in &self.dialogue {
            let id = state.add_turn(turn.speaker, &turn.text)?;
            for m in turn.mentions.iter().flatten() {
                let span = Span::new(m.span[0], m.span[1]);
                let surface = span.slice(&turn.text).unwrap_or_default().to_string();
                state.add_mention(&id, span, &surface)?;
            }
        }
        Ok(state)
    }

    pub fn user_turn_count(&self) -> usize {
        self.dialogue.iter().filter(|t| t.speaker == Speaker::User).count()
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dataset>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text)
}

/// Accepts a dataset, an array of datasets, or an object whose `dialogues`
/// field holds the array.
pub fn parse_corpus(text: &str) -> Result<Vec<Dataset>> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    if let Some(inner) = v.get_mut("dialogues").map(serde_json::Value::take) {
        return Ok(serde_json::from_value(inner)?);
    }
    if v.is_array() {
        Ok(serde_json::from_value(v)?)
    } else {
        Ok(vec![serde_json::from_value(v)?])
    }
}
