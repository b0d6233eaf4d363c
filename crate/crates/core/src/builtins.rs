//! Evaluable predicates called from rule bodies: string similarity, temporal
//! tests, integer ranges and list length.
//!
//! All string builtins lowercase and trim their inputs. Temporal builtins
//! take a trailing truth flag (`1` or `0`) that must match the test outcome.

use std::collections::{BTreeSet, HashMap};

use crate::value::Value;

/// Argument positions a builtin needs bound, and those it may bind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature {
    pub required: &'static [usize],
    pub outputs: &'static [usize],
}

const SIG_METRIC: Signature = Signature { required: &[0, 1], outputs: &[2] };
const SIG_TEST2: Signature = Signature { required: &[0, 1], outputs: &[] };

/// Static signature table, also used by the desugarer for binding analysis.
pub fn signature(name: &str, arity: usize) -> Option<Signature> {
    Some(match (name, arity) {
        ("lev_distance" | "jw_similarity" | "lcs" | "nb_common_words", 3) => SIG_METRIC,
        ("is_processable_time" | "is_time_expression" | "morning_time" | "afternoon_time", 2) => SIG_TEST2,
        ("time_between", 4) => Signature { required: &[0, 1, 2, 3], outputs: &[] },
        ("between", 3) => Signature { required: &[0, 1], outputs: &[2] },
        ("list_length", 2) => Signature { required: &[0], outputs: &[1] },
        _ => return None,
    })
}

pub fn is_builtin(name: &str, arity: usize) -> bool {
    signature(name, arity).is_some()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LcsMode {
    /// Longest common contiguous substring.
    #[default]
    Substring,
    Subsequence,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinOptions {
    pub lcs: LcsMode,
}

type EvalFn = fn(&[Option<Value>], &BuiltinOptions) -> Vec<Vec<Value>>;

/// Maps `name/arity` to an evaluation function with its mode declaration.
#[derive(Clone)]
pub struct BuiltinRegistry {
    entries: HashMap<(String, usize), (Signature, EvalFn)>,
    options: BuiltinOptions,
}

impl std::fmt::Debug for BuiltinRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<_> = self.entries.keys().map(|(n, a)| format!("{n}/{a}")).collect();
        names.sort();
        f.debug_struct("BuiltinRegistry").field("entries", &names).finish()
    }
}

impl Default for BuiltinRegistry {
    fn default() -> Self {
        Self::standard(BuiltinOptions::default())
    }
}

impl BuiltinRegistry {
    pub fn standard(options: BuiltinOptions) -> Self {
        let mut entries = HashMap::new();
        let table: &[(&str, usize, EvalFn)] = &[
            ("lev_distance", 3, eval_lev),
            ("jw_similarity", 3, eval_jw),
            ("lcs", 3, eval_lcs),
            ("nb_common_words", 3, eval_common_words),
            ("is_processable_time", 2, eval_processable_time),
            ("is_time_expression", 2, eval_time_expression),
            ("morning_time", 2, eval_morning),
            ("afternoon_time", 2, eval_afternoon),
            ("time_between", 4, eval_time_between),
            ("between", 3, eval_between),
            ("list_length", 2, eval_list_length),
        ];
        for &(name, arity, f) in table {
            let sig = signature(name, arity).expect("table entries have signatures");
            entries.insert((name.to_string(), arity), (sig, f));
        }
        BuiltinRegistry { entries, options }
    }

    pub fn contains(&self, name: &str, arity: usize) -> bool {
        self.lookup(name, arity).is_some()
    }

    pub fn signature(&self, name: &str, arity: usize) -> Option<Signature> {
        self.lookup(name, arity).map(|(s, _)| *s)
    }

    fn lookup(&self, name: &str, arity: usize) -> Option<&(Signature, EvalFn)> {
        self.entries.get(&(name.to_string(), arity))
    }

    /// Evaluates a builtin call. `args[i]` is `None` for unbound positions.
    /// Returns every full argument vector that satisfies the builtin, or
    /// `None` when a required argument is unbound or the name is unknown.
    pub fn eval(&self, name: &str, args: &[Option<Value>]) -> Option<Vec<Vec<Value>>> {
        let (sig, f) = self.lookup(name, args.len())?;
        if sig.required.iter().any(|&i| args[i].is_none()) {
            return None;
        }
        Some(f(args, &self.options))
    }
}

fn norm(s: &str) -> Vec<char> {
    s.trim().to_lowercase().chars().collect()
}

fn text(v: &Option<Value>) -> Option<String> {
    match v {
        Some(Value::Str(s)) | Some(Value::Sym(s)) => Some(s.to_string()),
        Some(Value::Int(i)) => Some(i.to_string()),
        _ => None,
    }
}

/// Levenshtein distance over characters, case-insensitive after trimming.
pub fn lev_distance(a: &str, b: &str) -> usize {
    let (a, b) = (norm(a), norm(b));
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn jaro(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_match = vec![false; a.len()];
    let mut b_match = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_match[j] && b[j] == *ca {
                a_match[i] = true;
                b_match[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let mut transpositions = 0usize;
    let mut k = 0;
    for (i, ca) in a.iter().enumerate() {
        if a_match[i] {
            while !b_match[k] {
                k += 1;
            }
            if *ca != b[k] {
                transpositions += 1;
            }
            k += 1;
        }
    }
    let m = matches as f64;
    let t = (transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler similarity with prefix scale 0.1 and a prefix of at most 4.
pub fn jw_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (norm(a), norm(b));
    let j = jaro(&a, &b);
    let prefix = a.iter().zip(&b).take(4).take_while(|(x, y)| x == y).count();
    (j + prefix as f64 * 0.1 * (1.0 - j)).min(1.0)
}

/// Length of the longest common contiguous substring.
pub fn lcs(a: &str, b: &str) -> usize {
    let (a, b) = (norm(a), norm(b));
    let mut best = 0;
    let mut prev = vec![0usize; b.len() + 1];
    for ca in &a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            if ca == cb {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

/// Length of the longest common subsequence.
pub fn lcs_subsequence(a: &str, b: &str) -> usize {
    let (a, b) = (norm(a), norm(b));
    let mut prev = vec![0usize; b.len() + 1];
    for ca in &a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Size of the intersection of the whitespace-token sets.
pub fn nb_common_words(a: &str, b: &str) -> usize {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let sa: BTreeSet<&str> = a.split_whitespace().collect();
    let sb: BTreeSet<&str> = b.split_whitespace().collect();
    sa.intersection(&sb).count()
}

/// Minutes since midnight for `HH:MM`, `H am/pm`, `H:MM pm`, or an integer hour.
pub fn parse_time(v: &Value) -> Option<u32> {
    match v {
        Value::Int(h) if (0..=24).contains(h) => Some(*h as u32 * 60),
        Value::Str(s) | Value::Sym(s) => parse_time_str(s),
        _ => None,
    }
}

pub fn parse_time_str(s: &str) -> Option<u32> {
    let s = s.trim().to_lowercase();
    let (clock, meridiem) = if let Some(rest) = s.strip_suffix("am") {
        (rest.trim_end(), Some(false))
    } else if let Some(rest) = s.strip_suffix("pm") {
        (rest.trim_end(), Some(true))
    } else {
        (s.as_str(), None)
    };
    let (h, m) = match clock.split_once(':') {
        Some((h, m)) => {
            if m.len() != 2 {
                return None;
            }
            (h.parse::<u32>().ok()?, m.parse::<u32>().ok()?)
        }
        None if meridiem.is_some() => (clock.parse::<u32>().ok()?, 0),
        None => return None,
    };
    if h.to_string().len() > 2 || m > 59 {
        return None;
    }
    let h = match meridiem {
        Some(pm) => {
            if !(1..=12).contains(&h) {
                return None;
            }
            (h % 12) + if pm { 12 } else { 0 }
        }
        None if h <= 23 => h,
        None => return None,
    };
    Some(h * 60 + m)
}

pub fn is_time_expression(s: &str) -> bool {
    parse_time_str(s).is_some()
}

fn in_window(s: &str, lo: u32, hi: u32, word: &str) -> bool {
    match parse_time_str(s) {
        Some(t) => (lo..hi).contains(&t),
        None => s.to_lowercase().split(|c: char| !c.is_alphanumeric()).any(|w| w == word),
    }
}

/// Time expression in `[08:00,12:00)`, or text containing the word "morning".
pub fn is_morning(s: &str) -> bool {
    in_window(s, 8 * 60, 12 * 60, "morning")
}

/// Time expression in `[12:00,18:00)`, or text containing the word "afternoon".
pub fn is_afternoon(s: &str) -> bool {
    in_window(s, 12 * 60, 18 * 60, "afternoon")
}

fn flag(v: &Option<Value>) -> Option<bool> {
    match v {
        Some(Value::Int(1)) => Some(true),
        Some(Value::Int(0)) => Some(false),
        _ => None,
    }
}

fn bound(args: &[Option<Value>]) -> Vec<Value> {
    args.iter().map(|a| a.clone().expect("required argument bound")).collect()
}

/// Binds (or checks) output position 2 of a string metric.
fn metric(args: &[Option<Value>], value: Value) -> Vec<Vec<Value>> {
    match &args[2] {
        None => vec![vec![args[0].clone().unwrap(), args[1].clone().unwrap(), value]],
        Some(v) if v.as_f64().is_some() && v.as_f64() == value.as_f64() => vec![bound(args)],
        Some(_) => Vec::new(),
    }
}

fn eval_lev(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    match (text(&args[0]), text(&args[1])) {
        (Some(a), Some(b)) => metric(args, Value::Int(lev_distance(&a, &b) as i64)),
        _ => Vec::new(),
    }
}

fn eval_jw(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    match (text(&args[0]), text(&args[1])) {
        (Some(a), Some(b)) => metric(args, Value::Float(jw_similarity(&a, &b))),
        _ => Vec::new(),
    }
}

fn eval_lcs(args: &[Option<Value>], opts: &BuiltinOptions) -> Vec<Vec<Value>> {
    match (text(&args[0]), text(&args[1])) {
        (Some(a), Some(b)) => {
            let n = match opts.lcs {
                LcsMode::Substring => lcs(&a, &b),
                LcsMode::Subsequence => lcs_subsequence(&a, &b),
            };
            metric(args, Value::Int(n as i64))
        }
        _ => Vec::new(),
    }
}

fn eval_common_words(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    match (text(&args[0]), text(&args[1])) {
        (Some(a), Some(b)) => metric(args, Value::Int(nb_common_words(&a, &b) as i64)),
        _ => Vec::new(),
    }
}

fn flagged_test(args: &[Option<Value>], test: fn(&str) -> bool) -> Vec<Vec<Value>> {
    let (Some(s), Some(f)) = (text(&args[0]), flag(&args[1])) else {
        return Vec::new();
    };
    if test(&s) == f {
        vec![bound(args)]
    } else {
        Vec::new()
    }
}

fn eval_processable_time(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    flagged_test(args, is_time_expression)
}

fn eval_time_expression(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    flagged_test(args, is_time_expression)
}

fn eval_morning(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    flagged_test(args, is_morning)
}

fn eval_afternoon(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    flagged_test(args, is_afternoon)
}

fn eval_time_between(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    let times: Option<Vec<u32>> = args[..3].iter().map(|a| a.as_ref().and_then(parse_time)).collect();
    let (Some(t), Some(f)) = (times, flag(&args[3])) else {
        return Vec::new();
    };
    if (t[1] <= t[0] && t[0] < t[2]) == f {
        vec![bound(args)]
    } else {
        Vec::new()
    }
}

fn eval_between(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    let (Some(Value::Int(lo)), Some(Value::Int(hi))) = (&args[0], &args[1]) else {
        return Vec::new();
    };
    match &args[2] {
        None => (*lo..=*hi).map(|t| vec![Value::Int(*lo), Value::Int(*hi), Value::Int(t)]).collect(),
        Some(Value::Int(t)) if (*lo..=*hi).contains(t) => vec![bound(args)],
        Some(_) => Vec::new(),
    }
}

fn eval_list_length(args: &[Option<Value>], _: &BuiltinOptions) -> Vec<Vec<Value>> {
    let Some(Value::List(items)) = &args[0] else {
        return Vec::new();
    };
    let n = Value::Int(items.len() as i64);
    match &args[1] {
        None => vec![vec![args[0].clone().unwrap(), n]],
        Some(v) if *v == n => vec![bound(args)],
        Some(_) => Vec::new(),
    }
}
