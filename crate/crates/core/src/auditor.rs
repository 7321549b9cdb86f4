//! Verification and measurement over generated sequences.
//!
//! [`audit_bound`] recomputes every `D_k(s)` from the raw sequence and a
//! fresh schedule cursor; it never looks at the generator's bookkeeping.
//! The trace-based audits ([`audit_window`], [`audit_recurrence`],
//! [`audit_orbit`]) work on the snapshots captured by [`TraceRecorder`].

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::numeric::{Mode, Scalar};
use crate::schedule::{RawDist, Schedule, ScheduleError};
use crate::stacker::{Run, Stacker, StackerConfig, StackerError, StepOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("sequence has {sequence} terms but the schedule ends at step {schedule}")]
    LengthMismatch { sequence: usize, schedule: u64 },
    #[error(transparent)]
    Schedule(ScheduleError),
    #[error(transparent)]
    Stacker(#[from] StackerError),
    #[error("f-weight constraint residual {0} is not zero")]
    NonzeroResidual(String),
    #[error("symbol {symbol:?} occurs {count} times; gap statistics need at least 2")]
    TooFewOccurrences { symbol: String, count: usize },
    #[error("symbol {0:?} has zero mass in the stationary distribution")]
    ZeroMass(String),
    #[error("trace lacks full snapshots (cadence {0}); rerun with cadence 1")]
    SparseSnapshots(u64),
}

fn as_text<S: Scalar, Z: Serializer>(v: &S, ser: Z) -> Result<Z::Ok, Z::Error> {
    ser.serialize_str(&v.to_string())
}

// ---------------------------------------------------------------------------
// Trace

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct TraceRow<S: Scalar> {
    pub k: u64,
    pub chosen: String,
    #[serde(serialize_with = "as_text")]
    pub max_abs_d: S,
    pub argmax: String,
    #[serde(serialize_with = "as_text")]
    pub zero_sum_residual: S,
}

/// Full discrepancy vector at step `k`, indexed by first-seen symbol order.
/// Symbols registered later are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<S> {
    pub k: u64,
    pub d: Vec<S>,
    /// Symbol chosen at step `k` (`None` for `k = 0`).
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Trace<S: Scalar> {
    pub symbols: Vec<String>,
    pub rows: Vec<TraceRow<S>>,
    pub snapshots: Vec<Snapshot<S>>,
    pub cadence: u64,
}

/// Snapshot cadence used when none is requested explicitly.
pub fn default_cadence(steps: u64) -> u64 {
    if steps <= 10_000 {
        1
    } else {
        64
    }
}

/// Builds a [`Trace`] from step outcomes.
#[derive(Debug)]
pub struct TraceRecorder<S: Scalar> {
    d: Vec<S>,
    rows: Vec<TraceRow<S>>,
    snapshots: Vec<Snapshot<S>>,
    cadence: u64,
    record_max: Option<S>,
}

impl<S: Scalar> TraceRecorder<S> {
    pub fn new(cadence: u64) -> Self {
        assert!(cadence >= 1);
        TraceRecorder {
            d: Vec::new(),
            rows: Vec::new(),
            snapshots: vec![Snapshot { k: 0, d: Vec::new(), chosen: None }],
            cadence,
            record_max: None,
        }
    }

    pub fn observe(&mut self, state: &Stacker<S>, out: &StepOutcome<S>) {
        let n = state.schedule().symbols().len();
        if self.d.len() < n {
            self.d.resize(n, S::zero());
        }
        for (s, v) in &out.delta {
            self.d[s.index()] = v.clone();
        }
        let mut max_abs = S::zero();
        let mut argmax = 0usize;
        let mut residual = S::zero();
        for (i, v) in self.d.iter().enumerate() {
            residual += v;
            let a = v.abs();
            if a > max_abs {
                max_abs = a;
                argmax = i;
            }
        }
        let label = |i: usize| state.schedule().symbols().labels().get(i).cloned().unwrap_or_default();
        // new running extremes always get a full snapshot
        let extreme = self.record_max.as_ref().is_none_or(|m| max_abs > *m);
        if extreme {
            self.record_max = Some(max_abs.clone());
        }
        self.rows.push(TraceRow {
            k: out.k,
            chosen: label(out.chosen.index()),
            max_abs_d: max_abs,
            argmax: label(argmax),
            zero_sum_residual: residual,
        });
        if extreme || out.k.is_multiple_of(self.cadence) {
            self.snapshots.push(Snapshot { k: out.k, d: self.d.clone(), chosen: Some(out.chosen.index()) });
        }
    }

    pub fn finish(self, symbols: Vec<String>) -> Trace<S> {
        Trace { symbols, rows: self.rows, snapshots: self.snapshots, cadence: self.cadence }
    }
}

/// Runs the generator for `steps` steps while recording a trace.
/// `lookahead` restricts deadline scans as in [`Stacker::step_online`].
pub fn generate_traced<S: Scalar>(
    sched: Schedule<S>,
    steps: u64,
    config: StackerConfig,
    cadence: u64,
    lookahead: Option<u64>,
) -> Result<(Run<S>, Trace<S>), StackerError> {
    let mut state = Stacker::new(sched, config);
    let mut rec = TraceRecorder::new(cadence);
    let mut sequence = Vec::with_capacity(steps as usize);
    let mut fallback_steps = Vec::new();
    state.run(steps, lookahead, |st, out| {
        rec.observe(st, out);
        sequence.push(out.chosen);
        if out.fallback {
            fallback_steps.push(out.k);
        }
    })?;
    let trace = rec.finish(state.schedule().symbols().labels().to_vec());
    Ok((Run { sequence, fallback_steps, state }, trace))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl<S: Scalar> Trace<S> {
    /// `k,chosen,max_abs_D,argmax,zero_sum_residual` with one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,chosen,max_abs_D,argmax,zero_sum_residual\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.k,
                csv_field(&r.chosen),
                r.max_abs_d,
                csv_field(&r.argmax),
                r.zero_sum_residual
            );
        }
        out
    }

    pub fn is_full(&self) -> bool {
        self.cadence == 1
    }
}

// ---------------------------------------------------------------------------
// Independent recomputation

/// Replays `sequence` against a fresh cursor and calls `visit(k, labels, d)`
/// with the full discrepancy vector after every step (`k = 1..=T`). Labels
/// follow first-seen order of the replay, which includes chosen labels that
/// never had positive mass.
pub fn replay<S: Scalar>(
    sequence: &[String],
    sched: &Schedule<S>,
    mut visit: impl FnMut(u64, &[String], &[S]),
) -> Result<(), AuditError> {
    let mut cursor = sched.restart();
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut prefix: Vec<S> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut slot = |label: &str, labels: &mut Vec<String>, prefix: &mut Vec<S>, counts: &mut Vec<u64>| {
        *index.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            prefix.push(S::zero());
            counts.push(0);
            labels.len() - 1
        })
    };
    let mut d = Vec::new();
    for (i, chosen) in sequence.iter().enumerate() {
        let k = i as u64 + 1;
        let dist = cursor.pull(k).map_err(|e| match e {
            ScheduleError::Exhausted { step } => {
                AuditError::LengthMismatch { sequence: sequence.len(), schedule: step - 1 }
            }
            other => AuditError::Schedule(other),
        })?;
        for (id, m) in dist.iter() {
            let label = cursor.symbols().label(id).to_string();
            let j = slot(&label, &mut labels, &mut prefix, &mut counts);
            prefix[j] += m;
        }
        let j = slot(chosen, &mut labels, &mut prefix, &mut counts);
        counts[j] += 1;
        d.clear();
        d.extend(counts.iter().zip(&prefix).map(|(&n, p)| S::from_u64(n) - p.clone()));
        visit(k, &labels, &d);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct Violation<S: Scalar> {
    pub k: u64,
    pub symbol: String,
    #[serde(serialize_with = "as_text")]
    pub d: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct BoundReport<S: Scalar> {
    pub mode: Mode,
    pub steps: u64,
    #[serde(serialize_with = "as_text")]
    pub max_abs_d: S,
    pub argmax_k: u64,
    pub argmax_symbol: String,
    /// Largest `|Σ_s D_k(s)|` seen; zero in exact mode.
    #[serde(serialize_with = "as_text")]
    pub max_zero_sum_residual: S,
    pub violations: Vec<Violation<S>>,
    /// Exact mode gives a hard verdict; float mode is advisory.
    pub hard: bool,
    pub pass: bool,
}

/// Recomputes `D_k(s)` for every step and symbol and flags `|D| ≥ 1`.
pub fn audit_bound<S: Scalar>(sequence: &[String], sched: &Schedule<S>) -> Result<BoundReport<S>, AuditError> {
    let one = S::one();
    let mut max_abs = S::zero();
    let mut argmax = (0, String::new());
    let mut residual_max = S::zero();
    let mut violations = Vec::new();
    replay(sequence, sched, |k, labels, d| {
        let mut residual = S::zero();
        for (i, v) in d.iter().enumerate() {
            residual += v;
            let a = v.abs();
            if a >= one {
                violations.push(Violation { k, symbol: labels[i].clone(), d: v.clone() });
            }
            if a > max_abs {
                max_abs = a;
                argmax = (k, labels[i].clone());
            }
        }
        let r = residual.abs();
        if r > residual_max {
            residual_max = r;
        }
    })?;
    let hard = S::MODE == Mode::Exact;
    let pass = violations.is_empty() && (!hard || residual_max.is_zero());
    Ok(BoundReport {
        mode: S::MODE,
        steps: sequence.len() as u64,
        max_abs_d: max_abs,
        argmax_k: argmax.0,
        argmax_symbol: argmax.1,
        max_zero_sum_residual: residual_max,
        violations,
        hard,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Trace audits

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct WindowReport<S: Scalar> {
    /// `max_{j ≤ k, s} |D_k(s) − D_j(s)|` over the captured snapshots.
    #[serde(serialize_with = "as_text")]
    pub value: S,
    pub symbol: String,
    pub from_k: u64,
    pub to_k: u64,
    /// Snapshots were taken every step, so the value is exact rather than a
    /// lower bound.
    pub complete: bool,
    pub below_two: bool,
}

/// Largest windowed discrepancy. For each symbol this is the spread between
/// its largest and smallest snapshot values.
pub fn audit_window<S: Scalar>(trace: &Trace<S>) -> WindowReport<S> {
    let n = trace.symbols.len();
    let mut best = (S::zero(), 0usize, 0u64, 0u64);
    for s in 0..n {
        let mut lo: Option<(S, u64)> = None;
        let mut hi: Option<(S, u64)> = None;
        for snap in &trace.snapshots {
            let v = snap.d.get(s).cloned().unwrap_or_else(S::zero);
            if lo.as_ref().is_none_or(|(l, _)| v < *l) {
                lo = Some((v.clone(), snap.k));
            }
            if hi.as_ref().is_none_or(|(h, _)| v > *h) {
                hi = Some((v, snap.k));
            }
        }
        if let (Some((l, lk)), Some((h, hk))) = (lo, hi) {
            let spread = h - l;
            if spread > best.0 {
                best = (spread, s, lk.min(hk), lk.max(hk));
            }
        }
    }
    let two = S::from_u64(2);
    WindowReport {
        below_two: best.0 < two,
        value: best.0,
        symbol: trace.symbols.get(best.1).cloned().unwrap_or_default(),
        from_k: best.2,
        to_k: best.3,
        complete: trace.is_full(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct RecurrenceReport<S: Scalar> {
    pub transitions: u64,
    /// Largest `|D_{k+1}(s) − (D_k(s) − π_{k+1}(s) + [s = chosen])|`.
    #[serde(serialize_with = "as_text")]
    pub max_residual: S,
    pub exact: bool,
}

/// Checks `D_{k+1} = D_k − π_{k+1} + e_chosen` across consecutive snapshots.
pub fn audit_recurrence<S: Scalar>(trace: &Trace<S>, sched: &Schedule<S>) -> Result<RecurrenceReport<S>, AuditError> {
    if !trace.is_full() {
        return Err(AuditError::SparseSnapshots(trace.cadence));
    }
    let mut cursor = sched.restart();
    let mut max_residual = S::zero();
    let mut transitions = 0;
    let get = |v: &[S], i: usize| v.get(i).cloned().unwrap_or_else(S::zero);
    for w in trace.snapshots.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let dist = cursor.pull(next.k).map_err(AuditError::Schedule)?;
        let mut pi = vec![S::zero(); trace.symbols.len()];
        for (id, m) in dist.iter() {
            let label = cursor.symbols().label(id);
            let i = trace.symbols.iter().position(|l| l == label).expect("trace covers schedule symbols");
            pi[i] = m.clone();
        }
        let chosen = next.chosen.expect("rows after k=0 record a choice");
        for (s, p) in pi.iter().enumerate() {
            let mut expect = get(&prev.d, s) - p.clone();
            if s == chosen {
                expect += &S::one();
            }
            let r = (get(&next.d, s) - expect).abs();
            if r > max_residual {
                max_residual = r;
            }
        }
        transitions += 1;
    }
    Ok(RecurrenceReport { transitions, exact: max_residual.is_zero(), max_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitReport<S: Scalar> {
    pub recurrence: RecurrenceReport<S>,
    /// Every `D_k` lies in the closed box `[−1, 1]^n`.
    pub in_box: bool,
    /// Distinct discrepancy vectors in order of first visit, each padded to
    /// `n` coordinates.
    pub points: Vec<Vec<S>>,
    /// Smallest `k ≥ 1` with `D_k = 0`.
    pub first_return: Option<u64>,
}

/// Orbit of the discrepancy vector for a finite-support stationary run.
pub fn audit_orbit<S: Scalar>(trace: &Trace<S>, sched: &Schedule<S>, n: usize) -> Result<OrbitReport<S>, AuditError> {
    let recurrence = audit_recurrence(trace, sched)?;
    let one = S::one();
    let mut seen = BTreeSet::new();
    let mut points = Vec::new();
    let mut in_box = true;
    let mut first_return = None;
    for snap in &trace.snapshots {
        let mut p = snap.d.clone();
        p.resize(n.max(p.len()), S::zero());
        in_box &= p.iter().all(|v| v.abs() <= one);
        if snap.k > 0 && first_return.is_none() && p.iter().all(|v| v.is_zero()) {
            first_return = Some(snap.k);
        }
        if seen.insert(p.clone()) {
            points.push(p);
        }
    }
    Ok(OrbitReport { recurrence, in_box, points, first_return })
}

// ---------------------------------------------------------------------------
// f-discrepancy and gaps

/// Signed weights `f(s)`; symbols not listed weigh zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FWeight<S> {
    pub f: Vec<(String, S)>,
}

impl<S: Scalar> FWeight<S> {
    pub fn weight(&self, label: &str) -> S {
        self.f.iter().find(|(l, _)| l == label).map_or_else(S::zero, |(_, w)| w.clone())
    }

    /// `Σ_s f(s) π(s)`.
    pub fn residual(&self, pi: &RawDist<S>) -> S {
        pi.iter().fold(S::zero(), |acc, (l, p)| acc + self.weight(l).mul(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct FDiscrepancy<S: Scalar> {
    /// `max_k Σ_{i<k} f(s_i)` over `k = 1..=T+1`.
    #[serde(serialize_with = "as_text")]
    pub max: S,
    #[serde(serialize_with = "as_text")]
    pub min: S,
    /// Number of leading terms at which the maximum is first reached.
    pub argmax_prefix: u64,
    pub argmin_prefix: u64,
}

/// Running-sum extremes of `f` along the sequence. When `pi` is given the
/// weights must satisfy `Σ_s f(s) π(s) = 0`.
pub fn f_discrepancy<S: Scalar>(
    sequence: &[String],
    f: &FWeight<S>,
    pi: Option<&RawDist<S>>,
) -> Result<FDiscrepancy<S>, AuditError> {
    if let Some(pi) = pi {
        let r = f.residual(pi);
        if !r.is_zero() {
            return Err(AuditError::NonzeroResidual(r.to_string()));
        }
    }
    let mut sum = S::zero();
    let mut out = FDiscrepancy { max: S::zero(), min: S::zero(), argmax_prefix: 0, argmin_prefix: 0 };
    for (i, s) in sequence.iter().enumerate() {
        sum += &f.weight(s);
        if sum > out.max {
            out.max = sum.clone();
            out.argmax_prefix = i as u64 + 1;
        }
        if sum < out.min {
            out.min = sum.clone();
            out.argmin_prefix = i as u64 + 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct GapReport<S: Scalar> {
    pub symbol: String,
    pub occurrences: usize,
    /// `max_{m<n} |(pos_n − pos_m) − (n − m)/π(s)|`.
    #[serde(serialize_with = "as_text")]
    pub max_deviation: S,
    /// Deviation ≤ 1 held for every pair.
    pub weak: bool,
    /// Deviation < 1 held for every pair.
    pub strict: bool,
}

/// Gap deviation of one symbol's occurrence positions from the ideal
/// arithmetic progression with spacing `1/π(s)`.
pub fn gap_stats<S: Scalar>(sequence: &[String], pi: &RawDist<S>, symbol: &str) -> Result<GapReport<S>, AuditError> {
    let p = pi
        .iter()
        .find(|(l, m)| l == symbol && m.is_positive())
        .map(|(_, m)| m.clone())
        .ok_or_else(|| AuditError::ZeroMass(symbol.to_string()))?;
    let spacing = S::one().div(&p);
    // deviation for a pair is |x_n − x_m| with x_j = pos_j − j/π
    let mut lo: Option<S> = None;
    let mut hi: Option<S> = None;
    let mut count = 0u64;
    for (i, s) in sequence.iter().enumerate() {
        if s != symbol {
            continue;
        }
        count += 1;
        let x = S::from_u64(i as u64 + 1) - S::from_u64(count).mul(&spacing);
        if lo.as_ref().is_none_or(|l| x < *l) {
            lo = Some(x.clone());
        }
        if hi.as_ref().is_none_or(|h| x > *h) {
            hi = Some(x);
        }
    }
    if count < 2 {
        return Err(AuditError::TooFewOccurrences { symbol: symbol.to_string(), count: count as usize });
    }
    let dev = hi.unwrap() - lo.unwrap();
    let one = S::one();
    Ok(GapReport {
        symbol: symbol.to_string(),
        occurrences: count as usize,
        weak: dev <= one,
        strict: dev < one,
        max_deviation: dev,
    })
}

/// [`gap_stats`] for every support symbol with at least two occurrences.
pub fn gap_stats_all<S: Scalar>(sequence: &[String], pi: &RawDist<S>) -> Vec<GapReport<S>> {
    pi.iter().filter_map(|(l, _)| gap_stats(sequence, pi, l).ok()).collect()
}

/// Rebuilds a full trace (cadence 1) from a sequence alone. Symbol order
/// is the replay's first-seen order.
pub fn replay_trace<S: Scalar>(sequence: &[String], sched: &Schedule<S>) -> Result<Trace<S>, AuditError> {
    let mut rows = Vec::with_capacity(sequence.len());
    let mut snapshots = vec![Snapshot { k: 0, d: Vec::new(), chosen: None }];
    let mut symbols = Vec::new();
    replay(sequence, sched, |k, labels, d| {
        let mut max_abs = S::zero();
        let mut argmax = 0;
        let mut residual = S::zero();
        for (i, v) in d.iter().enumerate() {
            residual += v;
            let a = v.abs();
            if a > max_abs {
                max_abs = a;
                argmax = i;
            }
        }
        let chosen = labels.iter().position(|l| *l == sequence[k as usize - 1]).expect("replay registers chosen");
        rows.push(TraceRow {
            k,
            chosen: labels[chosen].clone(),
            max_abs_d: max_abs,
            argmax: labels[argmax].clone(),
            zero_sum_residual: residual,
        });
        snapshots.push(Snapshot { k, d: d.to_vec(), chosen: Some(chosen) });
        if labels.len() > symbols.len() {
            symbols = labels.to_vec();
        }
    })?;
    Ok(Trace { symbols, rows, snapshots, cadence: 1 })
}

/// Combined report written by the `audit` command.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct AuditReport<S: Scalar> {
    pub bound: BoundReport<S>,
    pub window: WindowReport<S>,
    pub recurrence: RecurrenceReport<S>,
    /// Hard verdict: bound and recurrence hold (exact mode only).
    pub pass: bool,
}

/// Every sequence-level audit, recomputed from the sequence and schedule.
pub fn audit_sequence<S: Scalar>(sequence: &[String], sched: &Schedule<S>) -> Result<AuditReport<S>, AuditError> {
    let bound = audit_bound(sequence, sched)?;
    let trace = replay_trace(sequence, sched)?;
    let window = audit_window(&trace);
    let recurrence = audit_recurrence(&trace, sched)?;
    let pass = bound.pass && (!bound.hard || recurrence.exact);
    Ok(AuditReport { bound, window, recurrence, pass })
}
