//! The per-turn response pipeline: link, derive, verbalize, score, prompt,
//! generate.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generation::{build_prompt, GeneratorClient, MockGenerator, PromptFact, DEFAULT_MAX_PROMPT_CHARS};
use crate::inference::{ground, query_all, GroundOptions, QueryOptions, DEFAULT_MAX_ENUM_FACTS};
use crate::kg::{DialogueState, MentionId, Span, Speaker, TurnId, REFERS_TO};
use crate::linking::{detect_mentions, link_mentions, repair_dangling_mentions, DictionaryMatcher, LinkOptions, MentionDetector, DEFAULT_LINK_THRESHOLD};
use crate::relevance::{compute_features, score_and_select, Bm25Params, EmbeddingClient, Features, HashEmbedder, RelevanceModel};
use crate::rulelang::{desugar, parse_program, CoreProgram, DesugarOptions, Program};
use crate::value::{Value, WeightedFact};
use crate::verbalizer::{verbalize, TemplateSet, VerbalizedFact};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No knowledge at all.
    NoFacts,
    /// Every verbalized fact, derived ones included, shuffled and truncated.
    AllFacts,
    /// Top-K of the KB facts.
    Relevance,
    /// Top-K of KB and derived facts.
    RelevanceLogic,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NoFacts, Mode::AllFacts, Mode::Relevance, Mode::RelevanceLogic];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoFacts => "no_facts",
            Mode::AllFacts => "all_facts",
            Mode::Relevance => "relevance",
            Mode::RelevanceLogic => "relevance_logic",
        }
    }

    fn derives(self) -> bool {
        matches!(self, Mode::AllFacts | Mode::RelevanceLogic)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}, expected one of no_facts, all_facts, relevance, relevance_logic"))
    }
}

const BUNDLED_LINKING: &str = include_str!("../../../rules/graphwoz_linking.pl");
const BUNDLED_COMMONSENSE: &[&str] =
    &[include_str!("../../../rules/graphwoz_commonsense.pl"), include_str!("../../../rules/kvret.pl")];
const BUNDLED_TEMPLATES: &[&str] =
    &[include_str!("../../../templates/graphwoz.tsv"), include_str!("../../../templates/kvret.tsv")];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleOptions {
    /// Rename the dangling mention variable in the last anaphora rule.
    pub repair_anaphora: bool,
    pub per_grounding_switches: bool,
}

/// Compiled linking and commonsense programs with their templates.
#[derive(Clone, Debug)]
pub struct Rules {
    pub linking: CoreProgram,
    pub commonsense: CoreProgram,
    pub templates: TemplateSet,
}

fn merge(sources: &[String]) -> Result<Program> {
    let mut program = Program::default();
    for s in sources {
        program.clauses.extend(parse_program(s)?.clauses);
    }
    Ok(program)
}

impl Rules {
    pub fn from_sources(linking: &[String], commonsense: &[String], templates: &[String], options: RuleOptions) -> Result<Self> {
        let desugar_opts = DesugarOptions { per_grounding_switches: options.per_grounding_switches };
        let mut link_prog = merge(linking)?;
        if options.repair_anaphora {
            link_prog = repair_dangling_mentions(&link_prog);
        }
        let mut set = TemplateSet::default();
        for t in templates {
            set.extend_from(t)?;
        }
        Ok(Rules {
            linking: desugar(&link_prog, desugar_opts)?,
            commonsense: desugar(&merge(commonsense)?, desugar_opts)?,
            templates: set,
        })
    }

    /// The rule and template files shipped with the crate.
    pub fn bundled(options: RuleOptions) -> Result<Self> {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self::from_sources(&s(&[BUNDLED_LINKING]), &s(BUNDLED_COMMONSENSE), &s(BUNDLED_TEMPLATES), options)
    }

    /// Loads `*.pl` from `rules_dir` (files whose name contains `linking` form
    /// the linking program, the rest the commonsense program) and `*.tsv` from
    /// `templates_dir`.
    pub fn load(rules_dir: &Path, templates_dir: &Path, options: RuleOptions) -> Result<Self> {
        let mut files: Vec<_> = std::fs::read_dir(rules_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pl"))
            .collect();
        files.sort();
        let (mut linking, mut commonsense) = (Vec::new(), Vec::new());
        for f in files {
            let text = std::fs::read_to_string(&f)?;
            let is_linking = f.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.contains("linking"));
            if is_linking { linking.push(text) } else { commonsense.push(text) }
        }
        let mut rules = Self::from_sources(&linking, &commonsense, &[], options)?;
        rules.templates = TemplateSet::load_dir(templates_dir)?;
        Ok(rules)
    }
}

/// Millisecond clock used for stage timings.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> f64;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1000.0
    }
}

/// Always reads zero, for reproducible turn results.
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub k: usize,
    pub link_threshold: f64,
    pub max_prompt_chars: usize,
    pub anaphora_reach: usize,
    pub max_enum_facts: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: 10,
            link_threshold: DEFAULT_LINK_THRESHOLD,
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
            anaphora_reach: 4,
            max_enum_facts: DEFAULT_MAX_ENUM_FACTS,
        }
    }
}

#[derive(Clone)]
pub struct Clients {
    /// `None` matches KB names and pronouns with a dictionary built per turn.
    pub detector: Option<Arc<dyn MentionDetector>>,
    pub embedder: Arc<dyn EmbeddingClient>,
    pub generator: Arc<dyn GeneratorClient>,
    pub model: Arc<RelevanceModel>,
    pub clock: Arc<dyn Clock>,
}

impl Clients {
    /// Dictionary detector, hash embedder, mock generator, untrained model
    /// and a frozen clock.
    pub fn deterministic() -> Self {
        Clients {
            detector: None,
            embedder: Arc::new(HashEmbedder::default()),
            generator: Arc::new(MockGenerator::new()),
            model: Arc::new(RelevanceModel::default()),
            clock: Arc::new(FrozenClock),
        }
    }
}

pub struct Engine {
    pub rules: Arc<Rules>,
    pub config: EngineConfig,
    pub clients: Clients,
}

/// One conversation.
#[derive(Clone, Debug)]
pub struct Session {
    pub state: DialogueState,
    pub mode: Mode,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl Session {
    pub fn new(state: DialogueState, mode: Mode, seed: u64) -> Self {
        Session { state, mode, seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactView {
    pub text: String,
    /// Relevance probability; absent when the mode does not score.
    pub prob: Option<f64>,
    /// Probability of the fact itself.
    pub fact_prob: f64,
    pub source_atom: String,
    pub derived: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub mention: MentionId,
    pub surface: String,
    pub entity: String,
    pub prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub link: f64,
    pub derive: f64,
    pub verbalize: f64,
    pub score: f64,
    pub generate: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub user_turn: TurnId,
    pub response: String,
    /// In prompt order.
    pub facts: Vec<FactView>,
    pub links: Vec<LinkView>,
    pub timing_ms: Timings,
}

impl Engine {
    pub fn new(rules: Arc<Rules>, config: EngineConfig, clients: Clients) -> Self {
        Engine { rules, config, clients }
    }

    fn link_options(&self) -> LinkOptions {
        LinkOptions {
            threshold: self.config.link_threshold,
            query: self.query_options(),
            ground: GroundOptions::default(),
            anaphora_reach: self.config.anaphora_reach,
        }
    }

    fn query_options(&self) -> QueryOptions {
        QueryOptions { max_enum_facts: self.config.max_enum_facts, ..QueryOptions::default() }
    }

    /// Adds a turn, with `mentions` given or detected, and links it.
    fn add_and_link(&self, state: &mut DialogueState, speaker: Speaker, text: &str, mentions: Option<&[Span]>) -> Result<(TurnId, Vec<LinkView>)> {
        let turn = state.add_turn(speaker, text)?;
        match mentions {
            Some(spans) => {
                for span in spans {
                    let surface = span.slice(text).unwrap_or_default().to_string();
                    state.add_mention(&turn, *span, &surface)?;
                }
            }
            None => match &self.clients.detector {
                Some(d) => {
                    detect_mentions(state, &turn, d.as_ref())?;
                }
                None => {
                    let d = DictionaryMatcher::from_graph(&state.graph);
                    detect_mentions(state, &turn, &d)?;
                }
            },
        }
        let results = link_mentions(state, &self.rules.linking, &turn, &self.link_options())?;
        let mut links = Vec::new();
        for r in results {
            let surface = state.mention(&r.mention).map(|m| m.surface.clone()).unwrap_or_default();
            for c in r.candidates.into_iter().filter(|c| c.prob >= self.config.link_threshold) {
                links.push(LinkView { mention: r.mention.clone(), surface: surface.clone(), entity: c.entity.0, prob: c.prob });
            }
        }
        Ok((turn, links))
    }

    /// Commonsense facts about the entities linked in the current user turn.
    fn derive(&self, state: &DialogueState) -> Result<Vec<(crate::value::GroundAtom, f64)>> {
        let scope: BTreeSet<String> =
            state.current_turn_entities(self.config.link_threshold).into_iter().map(|n| n.0).collect();
        if scope.is_empty() {
            return Ok(Vec::new());
        }
        let current: HashSet<&str> = match state.last_user_turn() {
            Some(t) => state.mentions_in(&t.id).map(|m| m.id.as_str()).collect(),
            None => HashSet::new(),
        };
        // Entity references from earlier turns are history, not evidence for
        // this turn's inferences.
        let facts: Vec<WeightedFact> = state
            .to_facts()
            .into_iter()
            .filter(|f| {
                &*f.atom.pred != REFERS_TO
                    || f.atom.arity() != 2
                    || matches!(&f.atom.args[0], Value::Sym(m) if current.contains(&**m))
            })
            .collect();
        let gp = ground(&self.rules.commonsense, &facts, &GroundOptions::default())?;
        let opts = self.query_options();
        let mut out = Vec::new();
        for pred in self.rules.commonsense.user_head_predicates() {
            let probe = crate::value::GroundAtom::new(&*pred.0, vec![Value::Int(0); pred.1]);
            if self.rules.templates.hides(&probe) {
                continue;
            }
            let r = query_all(&gp, &pred, &scope, &opts);
            if let Some(e) = r.errors.into_iter().next() {
                return Err(e);
            }
            out.extend(r.marginals.into_iter().map(|m| (m.atom, m.prob)));
        }
        Ok(out)
    }

    fn candidate_facts(&self, state: &DialogueState, derived: Vec<(crate::value::GroundAtom, f64)>) -> Vec<VerbalizedFact> {
        let templates = &self.rules.templates;
        let kb = state.to_facts().into_iter().filter(|f| !templates.hides(&f.atom)).map(|f| (f.atom, f.prob, false));
        let der = derived.into_iter().filter(|(a, _)| !templates.hides(a)).map(|(a, p)| (a, p, true));
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (atom, prob, is_derived) in kb.chain(der) {
            let mut v = verbalize(&atom, prob, &state.graph, templates);
            v.derived = is_derived;
            if seen.insert(v.text.clone()) {
                out.push(v);
            }
        }
        out
    }

    /// Adds the user turn to `state`, links it and verbalizes the candidate
    /// facts for `mode`: nothing for NoFacts, KB facts, and with derivation
    /// also the scoped commonsense facts.
    fn gather(&self, state: &mut DialogueState, mode: Mode, utterance: &str, mentions: Option<&[Span]>, timing: &mut Timings) -> Result<(TurnId, Vec<LinkView>, Vec<VerbalizedFact>)> {
        let clock = &self.clients.clock;
        let t0 = clock.now_ms();
        let (user_turn, links) = if mode == Mode::NoFacts {
            (state.add_turn(Speaker::User, utterance)?, Vec::new())
        } else {
            self.add_and_link(state, Speaker::User, utterance, mentions)?
        };
        let t1 = clock.now_ms();
        timing.link = t1 - t0;
        let derived = if mode.derives() { self.derive(state)? } else { Vec::new() };
        let t2 = clock.now_ms();
        timing.derive = t2 - t1;
        let candidates = if mode == Mode::NoFacts { Vec::new() } else { self.candidate_facts(state, derived) };
        timing.verbalize = clock.now_ms() - t2;
        Ok((user_turn, links, candidates))
    }

    /// Adds the user turn and returns the candidates of the relevance model
    /// with their features, as a `mode` turn would score them.
    pub fn scored_candidates(&self, session: &mut Session, mode: Mode, utterance: &str, mentions: Option<&[Span]>) -> Result<(Vec<VerbalizedFact>, Vec<Features>)> {
        let mut state = session.state.clone();
        let (_, _, candidates) = self.gather(&mut state, mode, utterance, mentions, &mut Timings::default())?;
        let feats = compute_features(&state, &candidates, self.clients.embedder.as_ref(), Bm25Params::default())?;
        session.state = state;
        Ok((candidates, feats))
    }

    /// Answers `utterance`, leaving the system turn unrecorded. On error the
    /// session is unchanged.
    pub fn answer(&self, session: &mut Session, utterance: &str, mentions: Option<&[Span]>) -> Result<TurnResult> {
        let clock = &self.clients.clock;
        let t0 = clock.now_ms();
        let mut state = session.state.clone();
        let mut rng = session.rng.clone();
        let mut timing = Timings::default();
        let mode = session.mode;
        let (user_turn, links, candidates) = self.gather(&mut state, mode, utterance, mentions, &mut timing)?;
        let t3 = clock.now_ms();

        let (chosen, k): (Vec<(VerbalizedFact, Option<f64>)>, usize) = match mode {
            Mode::NoFacts => (Vec::new(), self.config.k),
            Mode::AllFacts => {
                let mut all = candidates;
                all.shuffle(&mut rng);
                let n = all.len();
                (all.into_iter().map(|f| (f, None)).collect(), n)
            }
            Mode::Relevance | Mode::RelevanceLogic => {
                let feats = compute_features(&state, &candidates, self.clients.embedder.as_ref(), Bm25Params::default())?;
                let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
                let top = score_and_select(&self.clients.model, &feats, &texts, self.config.k);
                let picked = top.iter().map(|s| (candidates[s.index].clone(), Some(s.prob))).collect();
                (picked, self.config.k)
            }
        };
        let t4 = clock.now_ms();
        timing.score = t4 - t3;

        let history: Vec<(Speaker, String)> = state.turns().iter().map(|t| (t.speaker, t.text.clone())).collect();
        let prompt_facts: Vec<PromptFact> = chosen.iter().map(|(f, _)| PromptFact { id: f.id(), text: f.text.clone() }).collect();
        let prompt = build_prompt(&history, &prompt_facts, k, self.config.max_prompt_chars);
        let response = self.clients.generator.generate(&prompt)?;
        let t5 = clock.now_ms();
        timing.generate = t5 - t4;
        timing.total = t5 - t0;

        let facts = chosen
            .into_iter()
            .take(prompt.facts.len())
            .map(|(f, prob)| FactView { source_atom: f.id(), text: f.text, prob, fact_prob: f.prob, derived: f.derived })
            .collect();
        session.state = state;
        session.rng = rng;
        Ok(TurnResult { user_turn, response, facts, links, timing_ms: timing })
    }

    /// Records a system turn and links its mentions.
    pub fn record_system_turn(&self, session: &mut Session, text: &str, mentions: Option<&[Span]>) -> Result<TurnId> {
        let mut state = session.state.clone();
        let turn = if session.mode == Mode::NoFacts {
            state.add_turn(Speaker::System, text)?
        } else {
            self.add_and_link(&mut state, Speaker::System, text, mentions)?.0
        };
        session.state = state;
        Ok(turn)
    }

    /// Answers and records the generated response as the system turn.
    pub fn respond(&self, session: &mut Session, utterance: &str) -> Result<TurnResult> {
        let result = self.answer(session, utterance, None)?;
        self.record_system_turn(session, &result.response, None)?;
        Ok(result)
    }
}
