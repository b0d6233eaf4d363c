//! Seeded generator of small GraphWOZ-style office knowledge bases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Now;
use crate::generation::MockGenerator;
use crate::relevance::{Features, TrainCandidate, TrainTurn};
use crate::error::Result;
use crate::kg::{KnowledgeGraph, NodeId, Speaker};

pub const FIRST_NAMES: &[&str] = &[
    "Jill", "Lisa", "Omar", "Priya", "Marcus", "Elena", "Tomas", "Aiko", "Grace", "Samuel", "Nadia", "Victor",
    "Hannah", "Diego", "Ingrid", "Kwame", "Sofia", "Arjun", "Maya", "Felix",
];
pub const LAST_NAMES: &[&str] = &[
    "Martinez", "Wilson", "Haddad", "Raman", "Okafor", "Novak", "Berg", "Tanaka", "Murphy", "Keller", "Petrova",
    "Lindqvist", "Mensah", "Costa", "Fischer", "Dubois", "Ahmed", "Larsen", "Moreau", "Silva",
];
const TOPICS: &[&str] = &[
    "Deliverables", "Budget", "Roadmap", "Hiring", "Design", "Security", "Onboarding", "Release", "Research",
    "Marketing", "Infrastructure", "Quarterly",
];
const EVENT_KINDS: &[&str] = &["team meeting", "review", "workshop", "sync", "planning session"];
const ROOMS: &[&str] = &["Aurora", "Birch", "Cedar", "Delta", "Ember", "Fjord"];
const GROUPS: &[&str] = &["Deliverables team", "Design team", "Research group", "Operations team"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureSize {
    pub people: usize,
    pub events: usize,
    pub rooms: usize,
    pub groups: usize,
}

impl Default for FixtureSize {
    fn default() -> Self {
        FixtureSize { people: 8, events: 6, rooms: 3, groups: 2 }
    }
}

/// The reference clock for generated dialogues.
pub fn fixture_now() -> Now {
    Now::new("2023-05-01", "10:15")
}

/// A KB of people, groups, rooms and events around `now`. About half the
/// events are today; every event has a room and two to four attendees.
pub fn generate_kb(seed: u64, now: &Now, size: FixtureSize) -> Result<KnowledgeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = KnowledgeGraph::new();
    let today = now.parsed_date()?;
    let dates: Vec<String> = (0..3).map(|d| (today + chrono::Days::new(d)).format("%Y-%m-%d").to_string()).collect();

    let mut full: Vec<String> =
        FIRST_NAMES.iter().flat_map(|f| LAST_NAMES.iter().map(move |l| format!("{f} {l}"))).collect();
    full.shuffle(&mut rng);
    let mut firsts_used = Vec::new();
    let mut people = Vec::new();
    for name in full {
        if people.len() == size.people.min(FIRST_NAMES.len()) {
            break;
        }
        // distinct first names keep single-word mentions unambiguous
        let first = name.split(' ').next().unwrap_or_default().to_string();
        if firsts_used.contains(&first) {
            continue;
        }
        firsts_used.push(first);
        let id = g.add_node("p", "person");
        g.set_attr(&id, "name", name, 1.0)?;
        people.push(id);
    }

    let mut groups = Vec::new();
    for name in GROUPS.iter().take(size.groups) {
        let id = g.add_node("g", "group");
        g.set_attr(&id, "name", *name, 1.0)?;
        groups.push(id);
    }
    if !groups.is_empty() {
        for p in &people {
            let gi = rng.gen_range(0..groups.len());
            g.add_edge(p, "group", &groups[gi], 1.0)?;
        }
    }

    let mut rooms = Vec::new();
    for name in ROOMS.iter().take(size.rooms) {
        let id = g.add_node("r", "room");
        g.set_attr(&id, "name", format!("{name} room"), 1.0)?;
        rooms.push(id);
    }

    let mut used_names = Vec::new();
    for i in 0..size.events {
        let id = g.add_node("e", "event");
        let name = loop {
            let n = format!("{} {}", TOPICS.choose(&mut rng).unwrap_or(&"General"), EVENT_KINDS.choose(&mut rng).unwrap_or(&"meeting"));
            if !used_names.contains(&n) {
                break n;
            }
        };
        used_names.push(name.clone());
        g.set_attr(&id, "name", name, 1.0)?;
        let day = if i % 2 == 0 { 0 } else { rng.gen_range(0..3) };
        g.set_attr(&id, "date", dates[day].clone(), 1.0)?;
        let start: u32 = rng.gen_range(8..17);
        g.set_attr(&id, "start_time", format!("{start:02}:00"), 1.0)?;
        g.set_attr(&id, "end_time", format!("{:02}:00", start + 1), 1.0)?;
        if !rooms.is_empty() {
            let r = rooms.choose(&mut rng).expect("rooms").clone();
            g.add_edge(&id, "location", &r, 1.0)?;
        }
        let n = rng.gen_range(2..=4).min(people.len());
        let attendees: Vec<&NodeId> = people.choose_multiple(&mut rng, n).collect();
        for p in attendees {
            g.add_edge(&id, "attendee", p, 1.0)?;
        }
    }
    Ok(g)
}

/// A synthetic relevance corpus with one gold candidate per turn whose
/// features all lie in [0.55, 1] while every distractor's lie in [0, 0.5].
/// The returned generator rates the gold fact 0.9 and the rest 0.1.
pub fn planted_corpus(seed: u64, turns: usize, candidates: usize) -> (Vec<TrainTurn>, MockGenerator) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mock = MockGenerator::new();
    let mut out = Vec::with_capacity(turns);
    for t in 0..turns {
        let gold = rng.gen_range(0..candidates);
        let response = format!("Response {t}.");
        let cands = (0..candidates)
            .map(|c| {
                let (lo, hi) = if c == gold { (0.55, 1.0) } else { (0.0, 0.5) };
                let mut f = || rng.gen_range(lo..=hi);
                TrainCandidate {
                    id: format!("fact({t},{c})"),
                    text: format!("Fact {c} of turn {t}."),
                    features: Features::from_array([f(), f(), f(), f()]),
                }
            })
            .collect();
        mock.add_gold(response.clone(), [format!("fact({t},{gold})")]);
        out.push(TrainTurn { history: vec![(Speaker::User, format!("Question {t}?"))], response, candidates: cands });
    }
    (out, mock)
}
