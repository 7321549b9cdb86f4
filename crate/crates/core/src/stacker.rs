//! Earliest-deadline sequence generator.
//!
//! At step `k+1` a symbol is a *candidate* when `N_k(s) < P_{k+1}(s)`, i.e.
//! picking it cannot push its discrepancy to 1 or above. A candidate's
//! *deadline* is the first `k' ≥ k+1` with `P_{k'}(s) ≥ N_k(s) + 1`, the
//! step by which it would be undersampled if never chosen. The generator
//! always emits the candidate with the earliest deadline, which keeps every
//! discrepancy `D_k(s) = N_k(s) − P_k(s)` strictly inside `(−1, 1)`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numeric::{Mode, Scalar};
use crate::schedule::{Schedule, ScheduleError, StepDist, SymbolId};

/// Default number of future steps a deadline scan may inspect.
pub const DEFAULT_HORIZON_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StackerError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("no candidate at step {step}")]
    NoCandidate { step: u64 },
}

/// Deterministic tie-breaking among equally urgent candidates. Both
/// policies depend only on deadlines, discrepancies and symbol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum TieBreak {
    /// Lowest first-seen index wins.
    #[default]
    FirstSeen,
    /// Most negative `D_k(s)` wins, then first-seen.
    MostNegative,
}

impl TieBreak {
    pub fn as_str(self) -> &'static str {
        match self {
            TieBreak::FirstSeen => "first-seen",
            TieBreak::MostNegative => "most-negative",
        }
    }
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-seen" => Ok(TieBreak::FirstSeen),
            "most-negative" => Ok(TieBreak::MostNegative),
            other => Err(format!("unknown tiebreak {other:?} (expected first-seen or most-negative)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Horizon {
    Capped(u64),
    Unbounded,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon::Capped(DEFAULT_HORIZON_CAP)
    }
}

impl FromStr for Horizon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "unbounded" {
            return Ok(Horizon::Unbounded);
        }
        match s.parse::<u64>() {
            Ok(n) if n > 0 => Ok(Horizon::Capped(n)),
            _ => Err(format!("horizon cap must be a positive integer or \"unbounded\", got {s:?}")),
        }
    }
}

/// A resolved deadline step, or a deadline beyond everything scanned.
/// `Unresolved` orders after every resolved deadline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Deadline {
    At(u64),
    Unresolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S> {
    pub symbol: SymbolId,
    /// `P_{k+1}(s) − N_k(s)`, always positive.
    pub slack: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StackerConfig {
    pub tiebreak: TieBreak,
    pub horizon: Horizon,
}

/// Result of choosing the next symbol, before state is committed.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: SymbolId,
    pub deadline: Deadline,
    /// The symbol that had to be chosen to avoid undersampling, if any.
    pub critical: Option<SymbolId>,
    /// All candidate deadlines were unresolved; picked by slack.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    /// Step just completed (the new `k`).
    pub k: u64,
    pub chosen: SymbolId,
    pub deadline: Deadline,
    pub critical: Option<SymbolId>,
    pub fallback: bool,
    /// Updated `D_k(s)` for every symbol whose discrepancy moved.
    pub delta: Vec<(SymbolId, S)>,
}

/// Generator state: counts `N_k`, the schedule (which owns `P_k` and the
/// lookahead cache), and the step index `k`.
#[derive(Debug, Clone)]
pub struct Stacker<S> {
    sched: Schedule<S>,
    counts: Vec<u64>,
    k: u64,
    config: StackerConfig,
    /// Symbols with `D_k(s) < 0`.
    deficit: BTreeSet<SymbolId>,
}

struct Tracked<S> {
    symbol: SymbolId,
    acc: S,
    target: S,
}

impl<S: Scalar> Stacker<S> {
    pub fn new(sched: Schedule<S>, config: StackerConfig) -> Self {
        Stacker { sched, counts: Vec::new(), k: 0, config, deficit: BTreeSet::new() }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn config(&self) -> StackerConfig {
        self.config
    }

    pub fn schedule(&self) -> &Schedule<S> {
        &self.sched
    }

    pub fn label(&self, id: SymbolId) -> &str {
        self.sched.symbols().label(id)
    }

    pub fn count(&self, id: SymbolId) -> u64 {
        self.counts.get(id.index()).copied().unwrap_or(0)
    }

    /// `N_k(s)` for every registered symbol.
    pub fn counts(&self) -> Vec<u64> {
        (0..self.sched.symbols().len()).map(|i| self.count(SymbolId(i as u32))).collect()
    }

    /// `D_k(s) = N_k(s) − P_k(s)`, computed fresh from counts and prefix.
    pub fn discrepancy(&self, id: SymbolId) -> S {
        S::from_u64(self.count(id)) - self.sched.prefix(id).clone()
    }

    pub fn discrepancies(&self) -> Vec<S> {
        (0..self.sched.symbols().len()).map(|i| self.discrepancy(SymbolId(i as u32))).collect()
    }

    pub fn into_schedule(self) -> Schedule<S> {
        self.sched
    }

    fn next_dist(&mut self) -> Result<StepDist<S>, StackerError> {
        Ok(self.sched.fetch(self.k + 1)?.clone())
    }

    fn candidates_for(&self, next: &StepDist<S>) -> Vec<Candidate<S>> {
        let mut pool: BTreeSet<SymbolId> = self.deficit.clone();
        pool.extend(next.iter().map(|(s, _)| s));
        pool.into_iter()
            .filter_map(|s| {
                let mut slack = self.sched.prefix(s).clone();
                if let Some(m) = next.mass(s) {
                    slack += m;
                }
                slack -= &S::from_u64(self.count(s));
                slack.is_positive().then_some(Candidate { symbol: s, slack })
            })
            .collect()
    }

    /// Symbols with `N_k(s) < P_{k+1}(s)`, in first-seen order.
    pub fn candidates(&mut self) -> Result<Vec<Candidate<S>>, StackerError> {
        let next = self.next_dist()?;
        Ok(self.candidates_for(&next))
    }

    /// Last step a scan may look at, given the horizon cap and an optional
    /// lookahead window.
    fn scan_limit(&self, lookahead: Option<u64>) -> Option<u64> {
        let mut limit = match self.config.horizon {
            Horizon::Capped(cap) => Some(self.k.saturating_add(cap)),
            Horizon::Unbounded => None,
        };
        if let Some(l) = lookahead {
            let w = self.k.saturating_add(l);
            limit = Some(limit.map_or(w, |x| x.min(w)));
        }
        if let Some(end) = self.sched.end() {
            limit = Some(limit.map_or(end, |x| x.min(end)));
        }
        limit
    }

    /// Shared incremental deadline scan. Returns the minimal deadline among
    /// `symbols` together with every symbol attaining it.
    fn earliest(
        &mut self,
        symbols: &[SymbolId],
        lookahead: Option<u64>,
    ) -> Result<(Deadline, Vec<SymbolId>), StackerError> {
        let limit = self.scan_limit(lookahead);
        // A source that is stationary from the next step on reveals every
        // future distribution, so closed forms are allowed even online.
        let stationary_from = self
            .sched
            .stationary_from()
            .filter(|&sf| lookahead.is_none() || sf <= self.k + 1);

        let mut tracked: Vec<Tracked<S>> = symbols
            .iter()
            .map(|&s| Tracked {
                symbol: s,
                acc: self.sched.prefix(s).clone(),
                target: S::from_u64(self.count(s) + 1),
            })
            .collect();
        let index: HashMap<SymbolId, usize> =
            tracked.iter().enumerate().map(|(i, t)| (t.symbol, i)).collect();

        let mut step = self.k + 1;
        loop {
            if let Some(sf) = stationary_from.filter(|&sf| step >= sf) {
                return Ok(self.closed_form(&tracked, step, sf));
            }
            if limit.is_some_and(|l| step > l) {
                return Ok((Deadline::Unresolved, Vec::new()));
            }
            let dist = self.sched.fetch(step)?;
            let mut fired = Vec::new();
            for (s, m) in dist.iter() {
                if let Some(&i) = index.get(&s) {
                    let t = &mut tracked[i];
                    t.acc += m;
                    if t.acc >= t.target {
                        fired.push(t.symbol);
                    }
                }
            }
            if step == self.k + 1 {
                // Symbols outside the support can only fire here if they
                // were already undersampled (possible in online mode).
                for t in &tracked {
                    if dist.mass(t.symbol).is_none() && t.acc >= t.target {
                        fired.push(t.symbol);
                    }
                }
            }
            if !fired.is_empty() {
                fired.sort();
                return Ok((Deadline::At(step), fired));
            }
            step += 1;
        }
    }

    /// Deadlines once the schedule repeats one distribution forever from
    /// `sf` on. `tracked[i].acc` holds `P_{step-1}(s)`.
    fn closed_form(&mut self, tracked: &[Tracked<S>], step: u64, sf: u64) -> (Deadline, Vec<SymbolId>) {
        let tail = self.sched.fetch(step.max(sf)).expect("stationary tail is always available").clone();
        let mut best = Deadline::Unresolved;
        let mut tied = Vec::new();
        for t in tracked {
            let need = t.target.clone() - t.acc.clone();
            let d = if !need.is_positive() {
                Deadline::At(step)
            } else {
                match tail.mass(t.symbol) {
                    Some(m) => need
                        .ceil_div(m)
                        .and_then(|n| (step - 1).checked_add(n))
                        .map_or(Deadline::Unresolved, Deadline::At),
                    None => Deadline::Unresolved,
                }
            };
            match d.cmp(&best) {
                std::cmp::Ordering::Less => {
                    best = d;
                    tied.clear();
                    tied.push(t.symbol);
                }
                std::cmp::Ordering::Equal if d != Deadline::Unresolved => tied.push(t.symbol),
                _ => {}
            }
        }
        tied.sort();
        (best, tied)
    }

    /// Deadline of a single candidate, scanning without a lookahead window.
    pub fn deadline(&mut self, id: SymbolId) -> Result<Deadline, StackerError> {
        Ok(self.earliest(&[id], None)?.0)
    }

    fn break_tie(&self, tied: &[SymbolId]) -> SymbolId {
        match self.config.tiebreak {
            TieBreak::FirstSeen => *tied.iter().min().expect("nonempty tie set"),
            TieBreak::MostNegative => *tied
                .iter()
                .min_by(|a, b| self.discrepancy(**a).cmp(&self.discrepancy(**b)).then(a.cmp(b)))
                .expect("nonempty tie set"),
        }
    }

    fn select_with(&mut self, lookahead: Option<u64>) -> Result<Selection, StackerError> {
        let next = self.next_dist()?;
        let cands = self.candidates_for(&next);
        if cands.is_empty() {
            return Err(StackerError::NoCandidate { step: self.k + 1 });
        }
        let one = S::one();
        let critical: Vec<SymbolId> =
            cands.iter().filter(|c| c.slack >= one).map(|c| c.symbol).collect();
        let guaranteed = lookahead.is_none() && S::MODE == Mode::Exact;
        if guaranteed {
            debug_assert!(critical.len() <= 1, "more than one critical symbol at step {}", self.k + 1);
        }
        let critical = critical.first().copied();

        let symbols: Vec<SymbolId> = cands.iter().map(|c| c.symbol).collect();
        let (deadline, tied) = self.earliest(&symbols, lookahead)?;
        let selection = if tied.is_empty() {
            let best = cands.iter().map(|c| &c.slack).max().expect("nonempty");
            let widest: Vec<SymbolId> =
                cands.iter().filter(|c| &c.slack == best).map(|c| c.symbol).collect();
            Selection { chosen: self.break_tie(&widest), deadline, critical, fallback: true }
        } else {
            Selection { chosen: self.break_tie(&tied), deadline, critical, fallback: false }
        };
        if guaranteed {
            if let Some(c) = critical {
                debug_assert_eq!(c, selection.chosen, "critical symbol not selected");
            }
        }
        Ok(selection)
    }

    /// Chooses the next symbol without committing it.
    pub fn select(&mut self) -> Result<Selection, StackerError> {
        self.select_with(None)
    }

    fn commit(&mut self, sel: Selection, guaranteed: bool) -> Result<StepOutcome<S>, StackerError> {
        let dist = self.sched.advance_prefix()?;
        let n = self.sched.symbols().len();
        if self.counts.len() < n {
            self.counts.resize(n, 0);
        }
        self.counts[sel.chosen.index()] += 1;
        self.k += 1;

        let mut moved: Vec<SymbolId> = dist.iter().map(|(s, _)| s).collect();
        if dist.mass(sel.chosen).is_none() {
            moved.push(sel.chosen);
        }
        let mut delta = Vec::with_capacity(moved.len());
        for s in moved {
            let d = self.discrepancy(s);
            if d.is_negative() {
                self.deficit.insert(s);
            } else {
                self.deficit.remove(&s);
            }
            if guaranteed && S::MODE == Mode::Exact {
                debug_assert!(
                    d.abs() < S::one(),
                    "discrepancy bound violated at k={} for {:?}: {}",
                    self.k,
                    self.label(s),
                    d
                );
            }
            delta.push((s, d));
        }
        Ok(StepOutcome {
            k: self.k,
            chosen: sel.chosen,
            deadline: sel.deadline,
            critical: sel.critical,
            fallback: sel.fallback,
            delta,
        })
    }

    /// One step of the generator: select the earliest-deadline candidate
    /// and commit it.
    pub fn step(&mut self) -> Result<StepOutcome<S>, StackerError> {
        let sel = self.select_with(None)?;
        self.commit(sel, true)
    }

    /// Like [`step`](Self::step) but deadline scans only see steps up to
    /// `k + lookahead`. `None` means unlimited lookahead. Carries no
    /// discrepancy guarantee.
    pub fn step_online(&mut self, lookahead: Option<u64>) -> Result<StepOutcome<S>, StackerError> {
        if let Some(l) = lookahead {
            assert!(l >= 1, "lookahead must be at least one step");
        }
        let sel = self.select_with(lookahead)?;
        self.commit(sel, lookahead.is_none())
    }

    /// Runs `steps` iterations, handing every outcome to `observe`.
    pub fn run(
        &mut self,
        steps: u64,
        lookahead: Option<u64>,
        mut observe: impl FnMut(&Self, &StepOutcome<S>),
    ) -> Result<(), StackerError> {
        for _ in 0..steps {
            let out = self.step_online(lookahead)?;
            observe(self, &out);
        }
        Ok(())
    }
}

/// A finished run: the emitted sequence, the final generator state, and
/// the steps that used the all-unresolved fallback.
#[derive(Debug, Clone)]
pub struct Run<S> {
    pub sequence: Vec<SymbolId>,
    pub fallback_steps: Vec<u64>,
    pub state: Stacker<S>,
}

impl<S: Scalar> Run<S> {
    pub fn labels(&self) -> Vec<String> {
        self.sequence.iter().map(|&s| self.state.label(s).to_string()).collect()
    }
}

/// Generates `steps` symbols from a fresh cursor.
pub fn generate<S: Scalar>(
    sched: Schedule<S>,
    steps: u64,
    config: StackerConfig,
) -> Result<Run<S>, StackerError> {
    let mut state = Stacker::new(sched, config);
    let mut sequence = Vec::with_capacity(steps as usize);
    let mut fallback_steps = Vec::new();
    state.run(steps, None, |_, out| {
        sequence.push(out.chosen);
        if out.fallback {
            fallback_steps.push(out.k);
        }
    })?;
    Ok(Run { sequence, fallback_steps, state })
}

/// Structured log line for a step that used the slack fallback.
pub fn fallback_event(k: u64, chosen: &str) -> String {
    format!(
        "{{\"k\":{k},\"event\":\"unresolved-fallback\",\"chosen\":{}}}",
        serde_json::to_string(chosen).expect("string serialisation cannot fail")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Exact;
    use crate::schedule::{uniform, FreshPair, Source, TailPolicy};

    fn e(s: &str) -> Exact {
        s.parse().unwrap()
    }

    fn triple() -> Schedule<Exact> {
        Schedule::new(Source::stationary([("a", e("1/2")), ("b", e("1/3")), ("c", e("1/6"))]).unwrap())
    }

    fn stacker(sched: Schedule<Exact>) -> Stacker<Exact> {
        Stacker::new(sched, StackerConfig::default())
    }

    fn advance(st: &mut Stacker<Exact>, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                let out = st.step().unwrap();
                st.label(out.chosen).to_string()
            })
            .collect()
    }

    fn cand_labels(st: &mut Stacker<Exact>) -> Vec<String> {
        let c = st.candidates().unwrap();
        c.iter().map(|c| st.label(c.symbol).to_string()).collect()
    }

    fn id(st: &Stacker<Exact>, l: &str) -> SymbolId {
        st.schedule().symbols().get(l).unwrap()
    }

    #[test]
    fn triple_candidates_along_the_run() {
        let mut st = stacker(triple());
        assert_eq!(cand_labels(&mut st), ["a", "b", "c"]);
        advance(&mut st, 2);
        assert_eq!(cand_labels(&mut st), ["a", "c"]);
        advance(&mut st, 3);
        assert_eq!(cand_labels(&mut st), ["c"]);
        let sel = st.select().unwrap();
        assert_eq!(sel.critical, Some(id(&st, "c")));
        assert_eq!(sel.chosen, id(&st, "c"));
    }

    #[test]
    fn triple_deadlines() {
        let mut st = stacker(triple());
        st.candidates().unwrap();
        let (a, b, c) = (id(&st, "a"), id(&st, "b"), id(&st, "c"));
        assert_eq!(st.deadline(a).unwrap(), Deadline::At(2));
        assert_eq!(st.deadline(b).unwrap(), Deadline::At(3));
        assert_eq!(st.deadline(c).unwrap(), Deadline::At(6));
        assert_eq!(st.select().unwrap().chosen, a);
        assert_eq!(advance(&mut st, 3), ["a", "b", "a"]);
        assert_eq!(st.deadline(b).unwrap(), Deadline::At(6));
        assert_eq!(st.deadline(c).unwrap(), Deadline::At(6));
        let sel = st.select().unwrap();
        assert_eq!(sel.deadline, Deadline::At(6));
        assert_eq!(sel.chosen, b);
    }

    #[test]
    fn triple_sequence_and_reset() {
        let mut st = stacker(triple());
        assert_eq!(advance(&mut st, 6), ["a", "b", "a", "b", "a", "c"]);
        assert!(st.discrepancies().iter().all(|d| d.is_zero()));
        let run = generate(triple(), 12, StackerConfig::default()).unwrap();
        assert_eq!(run.labels().join(""), "ababacababac");
        assert!(run.fallback_steps.is_empty());
    }

    #[test]
    fn table_source_matches_stationary_run() {
        // same triple written as a one-step table with a repeating tail
        let src = Source::table(
            [vec![("a", e("1/2")), ("b", e("1/3")), ("c", e("1/6"))]],
            TailPolicy::RepeatLast,
        )
        .unwrap();
        let run = generate(Schedule::new(src), 12, StackerConfig::default()).unwrap();
        assert_eq!(run.labels().join(""), "ababacababac");
    }

    #[test]
    fn uniform_two_alternates() {
        let run = generate(
            Schedule::new(Source::stationary(uniform::<Exact>(&["a", "b"])).unwrap()),
            9,
            StackerConfig::default(),
        )
        .unwrap();
        assert_eq!(run.labels().join(""), "ababababa");
        let d = run.state.discrepancies();
        assert_eq!(d, vec![e("1/2"), e("-1/2")]);
    }

    #[test]
    fn single_symbol_never_drifts() {
        let mut st = stacker(Schedule::new(Source::stationary([("a", e("1"))]).unwrap()));
        for _ in 0..20 {
            let out = st.step().unwrap();
            assert!(out.delta.iter().all(|(_, d)| d.is_zero()));
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let run = generate(triple(), 0, StackerConfig::default()).unwrap();
        assert!(run.sequence.is_empty());
        assert_eq!(run.state.k(), 0);
    }

    #[test]
    fn most_negative_tiebreak() {
        let mut st = Stacker::new(
            triple(),
            StackerConfig { tiebreak: TieBreak::MostNegative, ..Default::default() },
        );
        advance(&mut st, 3);
        // b and c tie at deadline 6 with D = 0 and -1/2
        let (b, c) = (id(&st, "b"), id(&st, "c"));
        assert!(st.discrepancy(c) < st.discrepancy(b));
        assert_eq!(st.select().unwrap().chosen, c);
    }

    #[test]
    fn fresh_pair_is_always_unresolved() {
        let config = StackerConfig { horizon: Horizon::Capped(16), ..Default::default() };
        let mut st = Stacker::new(Schedule::new(Source::<Exact>::generator(FreshPair)), config);
        for k in 0..30 {
            let cands = st.candidates().unwrap();
            for c in &cands {
                assert_eq!(st.deadline(c.symbol).unwrap_or(Deadline::At(0)), Deadline::Unresolved);
            }
            let out = st.step().unwrap();
            assert!(out.fallback, "step {}", k + 1);
            assert!(out.delta.iter().all(|(_, d)| d.abs() < Exact::one()));
        }
    }

    #[test]
    fn online_matches_offline_on_stationary() {
        let mut off = stacker(triple());
        let mut on = stacker(triple());
        for _ in 0..30 {
            let a = off.step().unwrap();
            let b = on.step_online(Some(1)).unwrap();
            assert_eq!(a.chosen, b.chosen);
        }
        let mut inf = stacker(triple());
        let mut off = stacker(triple());
        for _ in 0..12 {
            assert_eq!(inf.step_online(None).unwrap().chosen, off.step().unwrap().chosen);
        }
    }

    #[test]
    fn fallback_event_format() {
        assert_eq!(
            fallback_event(3, "a3"),
            r#"{"k":3,"event":"unresolved-fallback","chosen":"a3"}"#
        );
    }

    #[test]
    fn parse_flags() {
        assert_eq!("most-negative".parse::<TieBreak>().unwrap(), TieBreak::MostNegative);
        assert_eq!("unbounded".parse::<Horizon>().unwrap(), Horizon::Unbounded);
        assert_eq!("64".parse::<Horizon>().unwrap(), Horizon::Capped(64));
        assert!("0".parse::<Horizon>().is_err());
    }
}
