//! Distribution schedules `π₁, π₂, …` as a pull-based stream.
//!
//! A [`Source`] is the immutable description (stationary, explicit table,
//! or a generator callback). A [`Schedule`] is a cursor over a source: it
//! interns symbol labels in first-seen order, caches pulled lookahead
//! steps, and maintains the committed prefix masses `P_k(s)`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::numeric::{Exact, Float, Mode, NumericError, Scalar};

/// Largest tolerated deviation of a float distribution's total from 1.
pub const FLOAT_SUM_TOLERANCE: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Numeric {
        line: usize,
        #[source]
        source: NumericError,
    },
    #[error("first line must be a mode header like {{\"mode\":\"exact\"}}")]
    MissingHeader,
    #[error("step {step}: negative mass {mass} for symbol {symbol:?}")]
    NegativeMass { step: u64, symbol: String, mass: String },
    #[error("step {step}: masses sum to {sum}, expected 1")]
    BadSum { step: u64, sum: String },
    #[error("duplicate step index {0}")]
    DuplicateStep(u64),
    #[error("step {step}: duplicate symbol {symbol:?}")]
    DuplicateSymbol { step: u64, symbol: String },
    #[error("step indices must be 1..=n without gaps; step {0} is missing")]
    MissingStep(u64),
    #[error("step index must be at least 1")]
    ZeroStep,
    #[error("schedule has no distributions")]
    Empty,
    #[error("stationary shorthand cannot be combined with step lines or a tail policy")]
    MixedForms,
    #[error("schedule exhausted at step {step} (tail policy halt)")]
    Exhausted { step: u64 },
    #[error("lookahead cache exceeded its cap of {cap} steps")]
    LookaheadCap { cap: usize },
    #[error("step {step} is already committed; peeks must target the frontier or later")]
    BehindFrontier { step: u64 },
    #[error("generator sources cannot be serialised")]
    NotSerialisable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijection between external labels and dense indices, in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    labels: Vec<String>,
    index: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id and whether the label was new.
    pub fn intern(&mut self, label: &str) -> (SymbolId, bool) {
        if let Some(&id) = self.index.get(label) {
            return (id, false);
        }
        let id = SymbolId(self.labels.len() as u32);
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        (id, true)
    }

    pub fn get(&self, label: &str) -> Option<SymbolId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: SymbolId) -> &str {
        &self.labels[id.index()]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A validated distribution keyed by label: positive masses summing to one.
pub type RawDist<S> = Vec<(String, S)>;

/// One step's distribution after interning. Only positive masses are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDist<S> {
    pub step: u64,
    masses: Vec<(SymbolId, S)>,
}

impl<S: Scalar> StepDist<S> {
    pub fn mass(&self, id: SymbolId) -> Option<&S> {
        self.masses.iter().find(|(s, _)| *s == id).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymbolId, &S)> + '_ {
        self.masses.iter().map(|(s, m)| (*s, m))
    }

    pub fn support_len(&self) -> usize {
        self.masses.len()
    }

    pub fn total(&self) -> S {
        self.masses.iter().fold(S::zero(), |mut acc, (_, m)| {
            acc += m;
            acc
        })
    }
}

/// Produces the distribution for any requested step. Implementations must be
/// pure: the same step index always yields the same distribution.
pub trait StepGenerator<S>: Send + Sync {
    fn dist(&self, step: u64) -> RawDist<S>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailPolicy {
    Halt,
    RepeatLast,
}

impl TailPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TailPolicy::Halt => "halt",
            TailPolicy::RepeatLast => "repeat-last",
        }
    }
}

#[derive(Clone)]
pub enum Source<S> {
    Stationary(RawDist<S>),
    Table { steps: Vec<RawDist<S>>, tail: TailPolicy },
    Generator(Arc<dyn StepGenerator<S>>),
}

impl<S: fmt::Debug> fmt::Debug for Source<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Stationary(d) => f.debug_tuple("Stationary").field(d).finish(),
            Source::Table { steps, tail } => f
                .debug_struct("Table")
                .field("steps", &steps.len())
                .field("tail", tail)
                .finish(),
            Source::Generator(_) => f.write_str("Generator(..)"),
        }
    }
}

impl<S: Scalar> Source<S> {
    /// Validates and builds a stationary source.
    pub fn stationary<L: Into<String>>(
        masses: impl IntoIterator<Item = (L, S)>,
    ) -> Result<Self, ScheduleError> {
        let raw = masses.into_iter().map(|(l, m)| (l.into(), m)).collect();
        Ok(Source::Stationary(validate_dist(1, raw)?))
    }

    /// Validates and builds a table source.
    pub fn table<L: Into<String>>(
        steps: impl IntoIterator<Item = Vec<(L, S)>>,
        tail: TailPolicy,
    ) -> Result<Self, ScheduleError> {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let raw = d.into_iter().map(|(l, m)| (l.into(), m)).collect();
                validate_dist(i as u64 + 1, raw)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if steps.is_empty() {
            return Err(ScheduleError::Empty);
        }
        Ok(Source::Table { steps, tail })
    }

    pub fn generator(g: impl StepGenerator<S> + 'static) -> Self {
        Source::Generator(Arc::new(g))
    }

    /// Validated raw distribution for step `i`, or `None` past a halting table.
    pub fn raw_step(&self, i: u64) -> Result<Option<RawDist<S>>, ScheduleError> {
        if i == 0 {
            return Err(ScheduleError::ZeroStep);
        }
        Ok(match self {
            Source::Stationary(d) => Some(d.clone()),
            Source::Table { steps, tail } => match steps.get(i as usize - 1) {
                Some(d) => Some(d.clone()),
                None => match tail {
                    TailPolicy::Halt => None,
                    TailPolicy::RepeatLast => steps.last().cloned(),
                },
            },
            Source::Generator(g) => Some(validate_dist(i, g.dist(i))?),
        })
    }

    /// Last available step, if the source is finite.
    pub fn end(&self) -> Option<u64> {
        match self {
            Source::Table { steps, tail: TailPolicy::Halt } => Some(steps.len() as u64),
            _ => None,
        }
    }

    /// First step from which every later distribution is identical.
    pub fn stationary_from(&self) -> Option<u64> {
        match self {
            Source::Stationary(_) => Some(1),
            Source::Table { steps, tail: TailPolicy::RepeatLast } => Some(steps.len() as u64),
            _ => None,
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, Source::Stationary(_))
    }

    /// Renders the source in the JSON-lines schedule format.
    pub fn to_jsonl(&self) -> Result<String, ScheduleError> {
        let obj = |d: &RawDist<S>| {
            let fields: Vec<String> = d
                .iter()
                .map(|(l, m)| format!("{}:{}", json_str(l), json_str(&m.to_string())))
                .collect();
            format!("{{{}}}", fields.join(","))
        };
        let mut out = format!("{{\"mode\":\"{}\"}}\n", S::MODE);
        match self {
            Source::Stationary(d) => out.push_str(&format!("{{\"stationary\":{}}}\n", obj(d))),
            Source::Table { steps, tail } => {
                for (i, d) in steps.iter().enumerate() {
                    out.push_str(&format!("{{\"step\":{},\"probs\":{}}}\n", i + 1, obj(d)));
                }
                out.push_str(&format!("{{\"tail\":\"{}\"}}\n", tail.as_str()));
            }
            Source::Generator(_) => return Err(ScheduleError::NotSerialisable),
        }
        Ok(out)
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialisation cannot fail")
}

/// Checks nonnegativity, uniqueness and unit total; strips zero masses.
/// Float totals within [`FLOAT_SUM_TOLERANCE`] of 1 are renormalised.
pub fn validate_dist<S: Scalar>(step: u64, raw: RawDist<S>) -> Result<RawDist<S>, ScheduleError> {
    let mut seen = HashSet::with_capacity(raw.len());
    let mut total = S::zero();
    for (label, mass) in &raw {
        if !seen.insert(label.as_str()) {
            return Err(ScheduleError::DuplicateSymbol { step, symbol: label.clone() });
        }
        if mass.is_negative() {
            return Err(ScheduleError::NegativeMass {
                step,
                symbol: label.clone(),
                mass: mass.to_string(),
            });
        }
        total += mass;
    }
    let mut out: RawDist<S> = raw.into_iter().filter(|(_, m)| !m.is_zero()).collect();
    match S::MODE {
        Mode::Exact => {
            if total != S::one() {
                return Err(ScheduleError::BadSum { step, sum: total.to_string() });
            }
        }
        Mode::Float => {
            if (total.to_f64() - 1.0).abs() > FLOAT_SUM_TOLERANCE {
                return Err(ScheduleError::BadSum { step, sum: total.to_string() });
            }
            if total != S::one() {
                for (_, m) in out.iter_mut() {
                    *m = m.div(&total);
                }
            }
        }
    }
    Ok(out)
}

/// Cursor over a [`Source`]: symbol registry, lookahead cache and the
/// committed prefix masses `P_k(s)` at frontier `k`.
#[derive(Debug, Clone)]
pub struct Schedule<S> {
    source: Source<S>,
    symbols: SymbolTable,
    frontier: u64,
    prefix: Vec<S>,
    ahead: VecDeque<StepDist<S>>,
    lookahead_cap: Option<usize>,
}

impl<S: Scalar> Schedule<S> {
    pub fn new(source: Source<S>) -> Self {
        Schedule {
            source,
            symbols: SymbolTable::new(),
            frontier: 0,
            prefix: Vec::new(),
            ahead: VecDeque::new(),
            lookahead_cap: None,
        }
    }

    /// Limits how many uncommitted steps may be cached. Exceeding the cap is
    /// an error, never a silent truncation.
    pub fn with_lookahead_cap(mut self, cap: usize) -> Self {
        self.lookahead_cap = Some(cap);
        self
    }

    pub fn source(&self) -> &Source<S> {
        &self.source
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn frontier(&self) -> u64 {
        self.frontier
    }

    /// Committed `P_k(s)` at the frontier.
    pub fn prefix(&self, id: SymbolId) -> &S {
        &self.prefix[id.index()]
    }

    pub fn prefixes(&self) -> &[S] {
        &self.prefix
    }

    pub fn end(&self) -> Option<u64> {
        self.source.end()
    }

    pub fn stationary_from(&self) -> Option<u64> {
        self.source.stationary_from()
    }

    fn register(&mut self, raw: RawDist<S>, step: u64) -> StepDist<S> {
        let masses = raw
            .into_iter()
            .map(|(label, m)| {
                let (id, new) = self.symbols.intern(&label);
                if new {
                    self.prefix.push(S::zero());
                }
                (id, m)
            })
            .collect();
        StepDist { step, masses }
    }

    fn materialize(&mut self, i: u64) -> Result<StepDist<S>, ScheduleError> {
        match self.source.raw_step(i)? {
            Some(raw) => Ok(self.register(raw, i)),
            None => Err(ScheduleError::Exhausted { step: i }),
        }
    }

    /// Distribution for step `i` (any `i ≥ 1`). Deterministic; registers
    /// symbols the first time they appear.
    pub fn pull(&mut self, i: u64) -> Result<StepDist<S>, ScheduleError> {
        if i > self.frontier {
            self.fetch(i).cloned()
        } else {
            self.materialize(i)
        }
    }

    /// Borrow an uncommitted step (`i > frontier`), caching every step in
    /// between.
    pub fn fetch(&mut self, i: u64) -> Result<&StepDist<S>, ScheduleError> {
        if i <= self.frontier {
            return Err(ScheduleError::BehindFrontier { step: i });
        }
        let offset = (i - self.frontier - 1) as usize;
        while self.ahead.len() <= offset {
            if let Some(cap) = self.lookahead_cap {
                if self.ahead.len() >= cap {
                    return Err(ScheduleError::LookaheadCap { cap });
                }
            }
            let next = self.frontier + self.ahead.len() as u64 + 1;
            let dist = self.materialize(next)?;
            self.ahead.push_back(dist);
        }
        Ok(&self.ahead[offset])
    }

    /// Commits step `frontier + 1` into the prefix and returns it.
    pub fn advance_prefix(&mut self) -> Result<StepDist<S>, ScheduleError> {
        let next = self.frontier + 1;
        self.fetch(next)?;
        let dist = self.ahead.pop_front().expect("fetched above");
        for (id, m) in dist.iter() {
            self.prefix[id.index()] += m;
        }
        self.frontier = next;
        Ok(dist)
    }

    /// `P_{k'}(s)` for `k' ≥ frontier` without moving the frontier.
    pub fn peek_prefix(&mut self, id: SymbolId, k: u64) -> Result<S, ScheduleError> {
        if k < self.frontier {
            return Err(ScheduleError::BehindFrontier { step: k });
        }
        let mut acc = self.prefix.get(id.index()).cloned().unwrap_or_else(S::zero);
        for i in self.frontier + 1..=k {
            if let Some(m) = self.fetch(i)?.mass(id) {
                acc += m;
            }
        }
        Ok(acc)
    }

    /// Same as [`peek_prefix`](Self::peek_prefix) but by label; unknown
    /// labels have mass zero.
    pub fn peek_prefix_label(&mut self, label: &str, k: u64) -> Result<S, ScheduleError> {
        if k > self.frontier {
            self.fetch(k)?;
        }
        match self.symbols.get(label) {
            Some(id) => self.peek_prefix(id, k),
            None => Ok(S::zero()),
        }
    }

    /// A fresh cursor over the same source.
    pub fn restart(&self) -> Schedule<S> {
        let mut s = Schedule::new(self.source.clone());
        s.lookahead_cap = self.lookahead_cap;
        s
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// A parsed schedule in whichever numeric mode the document selects.
#[derive(Debug, Clone)]
pub enum AnySource {
    Exact(Source<Exact>),
    Float(Source<Float>),
}

impl AnySource {
    pub fn mode(&self) -> Mode {
        match self {
            AnySource::Exact(_) => Mode::Exact,
            AnySource::Float(_) => Mode::Float,
        }
    }
}

/// Map that keeps every entry, including duplicate keys.
struct Entries(Vec<(String, Box<RawValue>)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Box<RawValue>>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

enum Line {
    Header(Mode),
    Stationary(Vec<(String, String)>),
    Step(u64, Vec<(String, String)>),
    Tail(TailPolicy),
}

fn number_text(v: &RawValue) -> Option<String> {
    match serde_json::from_str::<serde_json::Value>(v.get()).ok()? {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Number(_) => Some(v.get().trim().to_string()),
        _ => None,
    }
}

pub(crate) fn parse_probs(line: usize, v: &RawValue) -> Result<Vec<(String, String)>, ScheduleError> {
    let syntax = |msg: &str| ScheduleError::Syntax { line, msg: msg.to_string() };
    let Entries(entries) =
        serde_json::from_str(v.get()).map_err(|_| syntax("probabilities must be an object"))?;
    entries
        .into_iter()
        .map(|(k, v)| {
            number_text(&v)
                .map(|t| (k, t))
                .ok_or_else(|| syntax("masses must be strings like \"1/3\" or numbers"))
        })
        .collect()
}

fn parse_line(line: usize, text: &str) -> Result<Line, ScheduleError> {
    let syntax = |msg: String| ScheduleError::Syntax { line, msg };
    let Entries(fields) = serde_json::from_str(text).map_err(|e| syntax(e.to_string()))?;
    let keys: Vec<String> = fields.iter().map(|(k, _)| k.clone()).collect();
    let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
    let mut fields = fields.into_iter();
    match keys.as_slice() {
        ["mode"] => {
            let (_, v) = fields.next().unwrap();
            let mode = serde_json::from_str::<String>(v.get())
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| syntax("mode must be \"exact\" or \"float\"".into()))?;
            Ok(Line::Header(mode))
        }
        ["stationary"] => {
            let (_, v) = fields.next().unwrap();
            Ok(Line::Stationary(parse_probs(line, &v)?))
        }
        ["tail"] => {
            let (_, v) = fields.next().unwrap();
            match serde_json::from_str::<String>(v.get()).ok().as_deref() {
                Some("halt") => Ok(Line::Tail(TailPolicy::Halt)),
                Some("repeat-last") => Ok(Line::Tail(TailPolicy::RepeatLast)),
                _ => Err(syntax("tail must be \"halt\" or \"repeat-last\"".into())),
            }
        }
        ["step", "probs"] | ["probs", "step"] => {
            let mut step = None;
            let mut probs = None;
            for (k, v) in fields {
                if k == "step" {
                    step = serde_json::from_str::<u64>(v.get()).ok();
                } else {
                    probs = Some(v);
                }
            }
            let step = step.ok_or_else(|| syntax("step must be a positive integer".into()))?;
            if step == 0 {
                return Err(ScheduleError::ZeroStep);
            }
            Ok(Line::Step(step, parse_probs(line, &probs.unwrap())?))
        }
        _ => Err(syntax(format!("unrecognised line with keys {keys:?}"))),
    }
}

fn convert<S: Scalar>(
    line: usize,
    step: u64,
    probs: Vec<(String, String)>,
) -> Result<RawDist<S>, ScheduleError> {
    let raw = probs
        .into_iter()
        .map(|(l, t)| {
            S::parse(&t)
                .map(|m| (l, m))
                .map_err(|source| ScheduleError::Numeric { line, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    validate_dist(step, raw)
}

/// `(step, line number, label/mass text)` of one table line.
type StepLine = (u64, usize, Vec<(String, String)>);

fn build<S: Scalar>(lines: Vec<(usize, Line)>) -> Result<Source<S>, ScheduleError> {
    let mut stationary = None;
    let mut steps: Vec<StepLine> = Vec::new();
    let mut tail = None;
    for (no, line) in lines {
        match line {
            Line::Header(_) => {
                return Err(ScheduleError::Syntax { line: no, msg: "repeated mode header".into() })
            }
            Line::Stationary(p) => {
                if stationary.is_some() {
                    return Err(ScheduleError::MixedForms);
                }
                stationary = Some((no, p));
            }
            Line::Step(i, p) => steps.push((i, no, p)),
            Line::Tail(t) => {
                if tail.replace(t).is_some() {
                    return Err(ScheduleError::Syntax { line: no, msg: "repeated tail line".into() });
                }
            }
        }
    }
    if let Some((no, p)) = stationary {
        if !steps.is_empty() || tail.is_some() {
            return Err(ScheduleError::MixedForms);
        }
        return Ok(Source::Stationary(convert(no, 1, p)?));
    }
    if steps.is_empty() {
        return Err(ScheduleError::Empty);
    }
    steps.sort_by_key(|(i, _, _)| *i);
    for w in steps.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(ScheduleError::DuplicateStep(w[0].0));
        }
    }
    for (expected, (i, _, _)) in (1u64..).zip(&steps) {
        if *i != expected {
            return Err(ScheduleError::MissingStep(expected));
        }
    }
    let steps = steps
        .into_iter()
        .map(|(i, no, p)| convert(no, i, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Source::Table { steps, tail: tail.unwrap_or(TailPolicy::Halt) })
}

/// Parses a JSON-lines schedule document. `mode_override` replaces the
/// header's numeric mode. Blank lines are ignored.
pub fn parse_schedule(text: &str, mode_override: Option<Mode>) -> Result<AnySource, ScheduleError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let header_mode = match lines.next() {
        Some((no, l)) => match parse_line(no, l) {
            Ok(Line::Header(m)) => m,
            _ => return Err(ScheduleError::MissingHeader),
        },
        None => return Err(ScheduleError::MissingHeader),
    };
    let rest = lines
        .map(|(no, l)| parse_line(no, l).map(|p| (no, p)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match mode_override.unwrap_or(header_mode) {
        Mode::Exact => AnySource::Exact(build(rest)?),
        Mode::Float => AnySource::Float(build(rest)?),
    })
}

// ---------------------------------------------------------------------------
// Generators

/// `π_i = ½ δ_{a_i} + ½ δ_{b_i}`: two brand-new symbols every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreshPair;

impl<S: Scalar> StepGenerator<S> for FreshPair {
    fn dist(&self, step: u64) -> RawDist<S> {
        let half = S::one().div(&S::from_u64(2));
        vec![(format!("a{step}"), half.clone()), (format!("b{step}"), half)]
    }
}

/// Uniform distribution over the given labels.
pub fn uniform<S: Scalar>(labels: &[&str]) -> RawDist<S> {
    let w = S::one().div(&S::from_u64(labels.len() as u64));
    labels.iter().map(|l| (l.to_string(), w.clone())).collect()
}
