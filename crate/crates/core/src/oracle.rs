//! Exhaustive minimax search over all length-`T` sequences.
//!
//! The search scales every mass by the least common multiple `L` of all
//! denominators in the first `T` steps and works with `i128` values of
//! `L · D_k(s)`. It shares no arithmetic with the generator, which makes
//! it usable as ground truth for small instances. Values are optima over
//! the finite horizon `T` only.

use std::collections::HashMap;

use num_integer::Integer;
use serde::Serialize;
use thiserror::Error;

use crate::auditor::{audit_bound, AuditError};
use crate::numeric::{Exact, Scalar};
use crate::schedule::{uniform, Schedule, ScheduleError, Source, StepDist, TailPolicy};
use crate::stacker::{generate, Stacker, StackerConfig, StackerError};

pub const MAX_SYMBOLS: usize = 6;
pub const MAX_HORIZON: u64 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large: {symbols} symbols over {horizon} steps (limits {MAX_SYMBOLS} and {MAX_HORIZON})")]
    Limits { symbols: usize, horizon: u64 },
    #[error("common denominator of the first {0} steps does not fit in 128 bits")]
    Overflow(u64),
    #[error("tightness probe needs n ≥ 2, got {0}")]
    TooSmall(usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Stacker(#[from] StackerError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Incumbent and dominance pruning. Disable only to cross-check.
    pub prune: bool,
    /// Explore first-level subtrees on the rayon pool.
    pub parallel: bool,
    pub enforce_limits: bool,
    /// Tie-break policy of the greedy comparison run.
    pub config: StackerConfig,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { prune: true, parallel: false, enforce_limits: true, config: StackerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// Horizon-`T` optimum of `max_{k≤T, s} |D_k(s)|`.
    #[serde(serialize_with = "text")]
    pub opt_value: Exact,
    /// Same quantity for the earliest-deadline generator.
    #[serde(serialize_with = "text")]
    pub greedy_value: Exact,
    /// Lexicographically first optimal sequence in first-seen symbol order.
    pub witness: Vec<String>,
    pub nodes_explored: u64,
    pub horizon: u64,
}

fn text<Z: serde::Serializer>(v: &Exact, ser: Z) -> Result<Z::Ok, Z::Error> {
    ser.serialize_str(&v.to_string())
}

/// Masses of the first `T` steps as integers over a common denominator.
struct Scaled {
    labels: Vec<String>,
    scale: i128,
    /// `steps[i][s] = L · π_{i+1}(s)`.
    steps: Vec<Vec<i128>>,
}

fn scale_schedule(sched: &Schedule<Exact>, horizon: u64) -> Result<Scaled, OracleError> {
    let mut cursor = sched.restart();
    let dists: Vec<StepDist<Exact>> = (1..=horizon).map(|i| cursor.pull(i)).collect::<Result<_, _>>()?;
    let labels = cursor.symbols().labels().to_vec();
    let mut scale: i128 = 1;
    for d in &dists {
        for (_, m) in d.iter() {
            let den = i128::try_from(m.denom()).map_err(|_| OracleError::Overflow(horizon))?;
            let g = scale.gcd(&den);
            scale = (scale / g).checked_mul(den).ok_or(OracleError::Overflow(horizon))?;
        }
    }
    // keep headroom for sums of up to `horizon` masses
    scale.checked_mul(horizon as i128 + 1).ok_or(OracleError::Overflow(horizon))?;
    let steps = dists
        .iter()
        .map(|d| {
            let mut row = vec![0i128; labels.len()];
            for (s, m) in d.iter() {
                let n = i128::try_from(m.numer()).expect("numerator bounded by denominator");
                let den = i128::try_from(m.denom()).expect("checked above");
                row[s.index()] = n * (scale / den);
            }
            row
        })
        .collect();
    Ok(Scaled { labels, scale, steps })
}

struct Search<'a> {
    inst: &'a Scaled,
    prune: bool,
    incumbent: i128,
    best_path: Option<Vec<usize>>,
    nodes: u64,
    visited: HashMap<(usize, Vec<i128>), i128>,
    path: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(inst: &'a Scaled, prune: bool) -> Self {
        Search { inst, prune, incumbent: i128::MAX, best_path: None, nodes: 0, visited: HashMap::new(), path: Vec::new() }
    }

    /// Applies step `depth + 1` with symbol `s`; returns the new vector and
    /// its largest absolute entry.
    fn child(&self, d: &[i128], depth: usize, s: usize) -> (Vec<i128>, i128) {
        let masses = &self.inst.steps[depth];
        let mut next = Vec::with_capacity(d.len());
        let mut worst = 0;
        for (i, (&v, &m)) in d.iter().zip(masses).enumerate() {
            let mut x = v - m;
            if i == s {
                x += self.inst.scale;
            }
            worst = worst.max(x.abs());
            next.push(x);
        }
        (next, worst)
    }

    fn dfs(&mut self, d: &[i128], depth: usize, running: i128) {
        if depth == self.inst.steps.len() {
            if running < self.incumbent {
                self.incumbent = running;
                self.best_path = Some(self.path.clone());
            }
            return;
        }
        for s in 0..d.len() {
            self.nodes += 1;
            let (next, worst) = self.child(d, depth, s);
            let running = running.max(worst);
            if self.prune {
                if running >= self.incumbent {
                    continue;
                }
                let key = (depth + 1, next.clone());
                match self.visited.get(&key) {
                    Some(&seen) if seen <= running => continue,
                    _ => {
                        self.visited.insert(key, running);
                    }
                }
            }
            self.path.push(s);
            self.dfs(&next, depth + 1, running);
            self.path.pop();
        }
    }

    /// First path in lexicographic order whose value is at most `bound`.
    fn first_within(&mut self, d: &[i128], depth: usize, bound: i128) -> bool {
        if depth == self.inst.steps.len() {
            return true;
        }
        for s in 0..d.len() {
            let (next, worst) = self.child(d, depth, s);
            if worst > bound {
                continue;
            }
            let key = (depth + 1, next.clone());
            if self.visited.contains_key(&key) {
                continue;
            }
            self.path.push(s);
            if self.first_within(&next, depth + 1, bound) {
                return true;
            }
            self.path.pop();
            // every completion from here exceeds the bound
            self.visited.insert(key, 0);
        }
        false
    }
}

/// Result of one independent first-level subtree.
fn search_subtree(inst: &Scaled, first: usize, prune: bool) -> (i128, u64) {
    let mut search = Search::new(inst, prune);
    let root = vec![0i128; inst.labels.len()];
    search.nodes += 1;
    let (next, worst) = search.child(&root, 0, first);
    search.path.push(first);
    search.dfs(&next, 1, worst);
    (search.incumbent, search.nodes)
}

fn run_subtrees(inst: &Scaled, prune: bool, parallel: bool) -> Vec<(i128, u64)> {
    let firsts: Vec<usize> = (0..inst.labels.len()).collect();
    if parallel {
        crate::batch::map(&firsts, |&s| search_subtree(inst, s, prune))
    } else {
        firsts.iter().map(|&s| search_subtree(inst, s, prune)).collect()
    }
}

/// Computes the horizon-`T` minimax optimum of `max |D_k(s)|` exactly.
///
/// First-level subtrees are searched independently (each with its own
/// incumbent), so node counts do not depend on thread scheduling. The
/// witness comes from a final sequential pass.
pub fn minimax_search(sched: &Schedule<Exact>, horizon: u64, opts: SearchOptions) -> Result<OracleResult, OracleError> {
    let inst = scale_schedule(sched, horizon)?;
    let n = inst.labels.len();
    if opts.enforce_limits && (n > MAX_SYMBOLS || horizon > MAX_HORIZON) {
        return Err(OracleError::Limits { symbols: n, horizon });
    }
    let run = generate(sched.restart(), horizon, opts.config)?;
    let greedy = audit_bound(&run.labels(), sched)?;

    if horizon == 0 {
        return Ok(OracleResult {
            opt_value: Exact::zero(),
            greedy_value: greedy.max_abs_d,
            witness: Vec::new(),
            nodes_explored: 0,
            horizon,
        });
    }

    let results = run_subtrees(&inst, opts.prune, opts.parallel);
    let opt = results.iter().map(|r| r.0).min().expect("at least one symbol");
    let nodes = results.iter().map(|r| r.1).sum();

    let mut pass = Search::new(&inst, true);
    let found = pass.first_within(&vec![0i128; n], 0, opt);
    assert!(found, "optimum {opt} has no witness");
    let witness = pass.path.iter().map(|&s| inst.labels[s].clone()).collect();

    Ok(OracleResult {
        opt_value: Exact::from_integer(opt).div(&Exact::from_integer(inst.scale)),
        greedy_value: greedy.max_abs_d,
        witness,
        nodes_explored: nodes,
        horizon,
    })
}

fn uniform_schedule(n: usize) -> Schedule<Exact> {
    let labels: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Schedule::new(Source::stationary(uniform::<Exact>(&refs)).expect("uniform is a distribution"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessCertificate {
    pub n: usize,
    /// `1 − 1/n`.
    #[serde(serialize_with = "text")]
    pub value: Exact,
    pub oracle: OracleResult,
    /// The oracle optimum at horizon `n − 1` is at least `1 − 1/n`.
    pub confirmed: bool,
}

/// Uniform distribution on `n` symbols: after `n − 1` steps some symbol has
/// never appeared, so no sequence keeps every `|D|` below `1 − 1/n`.
pub fn tightness_probe(n: usize) -> Result<TightnessCertificate, OracleError> {
    if n < 2 {
        return Err(OracleError::TooSmall(n));
    }
    if n > MAX_SYMBOLS {
        return Err(OracleError::Limits { symbols: n, horizon: n as u64 - 1 });
    }
    let value = Exact::one() - Exact::one().div(&Exact::from_u64(n as u64));
    let oracle = minimax_search(&uniform_schedule(n), n as u64 - 1, SearchOptions::default())?;
    Ok(TightnessCertificate { n, confirmed: oracle.opt_value >= value, value, oracle })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LookaheadDemo {
    /// Choices of the lookahead-1 generator for steps 1–3.
    pub prefix: Vec<String>,
    /// `(symbol, D_3)` for all five symbols.
    #[serde(serialize_with = "pairs")]
    pub pre_adversary: Vec<(String, Exact)>,
    /// The two symbols at `D_3 = −3/5`; step 4 is uniform on them.
    pub adversarial_pair: Vec<String>,
    pub online_sequence: Vec<String>,
    #[serde(serialize_with = "pairs")]
    pub final_d: Vec<(String, Exact)>,
    /// Most negative `D_4` after the online run (−11/10).
    #[serde(serialize_with = "text")]
    pub worst_d4: Exact,
    /// `min over s₄ of max_s |D_4(s)|` for the online prefix.
    #[serde(serialize_with = "text")]
    pub best_response: Exact,
    /// Candidate-respecting 3-prefixes examined.
    pub prefixes_checked: usize,
    /// Every such prefix is forced to `max |D_4| ≥ 11/10` by its adversary.
    pub all_prefixes_forced: bool,
    /// Oracle on the same four steps with full knowledge.
    pub full_knowledge: OracleResult,
    /// Offline generator's `max |D|` on the same four steps.
    #[serde(serialize_with = "text")]
    pub offline_max: Exact,
}

fn pairs<Z: serde::Serializer>(v: &[(String, Exact)], ser: Z) -> Result<Z::Ok, Z::Error> {
    use serde::ser::SerializeMap;
    let mut map = ser.serialize_map(Some(v.len()))?;
    for (k, x) in v {
        map.serialize_entry(k, &x.to_string())?;
    }
    map.end()
}

const FIVE: [&str; 5] = ["1", "2", "3", "4", "5"];

fn adversarial_table(pair: &[String]) -> Source<Exact> {
    let u5 = uniform::<Exact>(&FIVE);
    let half = Exact::new(1, 2);
    let last = pair.iter().map(|p| (p.clone(), half.clone())).collect();
    Source::table([u5.clone(), u5.clone(), u5, last], TailPolicy::Halt).expect("valid table")
}

/// `D` after playing `prefix` against `steps`, as exact values per symbol of
/// [`FIVE`].
fn discrepancies_after(prefix: &[&str], steps: &[Vec<(String, Exact)>]) -> Vec<Exact> {
    FIVE.iter()
        .map(|s| {
            let n = prefix.iter().filter(|p| *p == s).count() as u64;
            let p = steps[..prefix.len()].iter().fold(Exact::zero(), |acc, d| {
                acc + d.iter().find(|(l, _)| l == s).map_or_else(Exact::zero, |(_, m)| m.clone())
            });
            Exact::from_u64(n) - p
        })
        .collect()
}

/// Best achievable `max_s |D_4(s)|` when step 4 is uniform on the two
/// symbols left at `−3/5` after `prefix`.
fn adversary_value(prefix: &[&str]) -> (Vec<String>, Exact) {
    let u5 = uniform::<Exact>(&FIVE);
    let d3 = discrepancies_after(prefix, &[u5.clone(), u5.clone(), u5.clone()]);
    let target = Exact::new(-3, 5);
    let pair: Vec<String> =
        FIVE.iter().zip(&d3).filter(|(_, d)| **d == target).map(|(s, _)| s.to_string()).collect();
    let Source::Table { steps, .. } = adversarial_table(&pair) else { unreachable!() };
    let best = FIVE
        .iter()
        .map(|s4| {
            let mut seq: Vec<&str> = prefix.to_vec();
            seq.push(s4);
            discrepancies_after(&seq, &steps).iter().map(Exact::abs).max().expect("five symbols")
        })
        .min()
        .expect("five choices");
    (pair, best)
}

/// Three uniform steps on five symbols followed by a fourth step chosen
/// after seeing the first three choices. Any generator that cannot look at
/// step 4 while choosing steps 1–3 ends with some `D_4 = −11/10`.
pub fn lookahead_probe() -> Result<LookaheadDemo, OracleError> {
    let u5 = uniform::<Exact>(&FIVE);
    let blind = Source::table([u5.clone(), u5.clone(), u5], TailPolicy::Halt)?;
    let mut st = Stacker::new(Schedule::new(blind), StackerConfig::default());
    let mut prefix = Vec::new();
    for _ in 0..3 {
        let out = st.step_online(Some(1))?;
        prefix.push(st.label(out.chosen).to_string());
    }
    let pre_adversary: Vec<(String, Exact)> = FIVE
        .iter()
        .map(|s| {
            let id = st.schedule().symbols().get(s).expect("all five seen");
            (s.to_string(), st.discrepancy(id))
        })
        .collect();
    let refs: Vec<&str> = prefix.iter().map(String::as_str).collect();
    let (pair, best_response) = adversary_value(&refs);

    let table = adversarial_table(&pair);
    let mut online = Stacker::new(Schedule::new(table.clone()), StackerConfig::default());
    let mut online_sequence = Vec::new();
    for _ in 0..4 {
        let out = online.step_online(Some(1))?;
        online_sequence.push(online.label(out.chosen).to_string());
    }
    assert_eq!(online_sequence[..3], prefix[..], "lookahead-1 run saw step 4 early");
    let final_d: Vec<(String, Exact)> = FIVE
        .iter()
        .map(|s| {
            let id = online.schedule().symbols().get(s).expect("all five seen");
            (s.to_string(), online.discrepancy(id))
        })
        .collect();
    let worst_d4 = final_d.iter().map(|(_, d)| d.clone()).min().expect("five symbols");

    // every candidate-respecting prefix: at step k+1 a candidate has N_k < (k+1)/5
    let mut checked = 0;
    let mut forced = true;
    let eleven_tenths = Exact::new(11, 10);
    for a in FIVE {
        for b in FIVE.iter().filter(|b| **b != a) {
            for c in FIVE.iter().filter(|c| **c != a && *c != b) {
                checked += 1;
                forced &= adversary_value(&[a, b, c]).1 >= eleven_tenths;
            }
        }
    }

    let sched = Schedule::new(table);
    let full_knowledge = minimax_search(&sched, 4, SearchOptions::default())?;
    let offline = generate(sched.restart(), 4, StackerConfig::default())?;
    let offline_max = audit_bound(&offline.labels(), &sched)?.max_abs_d;

    Ok(LookaheadDemo {
        prefix,
        pre_adversary,
        adversarial_pair: pair,
        online_sequence,
        final_d,
        worst_d4,
        best_response,
        prefixes_checked: checked,
        all_prefixes_forced: forced,
        full_knowledge,
        offline_max,
    })
}
