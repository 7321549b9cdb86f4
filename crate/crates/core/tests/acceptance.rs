//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Everything runs in exact rational arithmetic.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ldstack::auditor::{audit_bound, audit_recurrence, audit_window, generate_traced};
use ldstack::batch;
use ldstack::oracle::{lookahead_probe, minimax_search, tightness_probe, SearchOptions};
use ldstack::rotor::{extract_rotor, period_of, verify_rotor};
use ldstack::schedule::FreshPair;
use ldstack::testgen::{mixed_sources, random_dist, random_source, InstanceSpec, SourceKind};
use ldstack::{generate, Exact, Horizon, Scalar, Schedule, Source, StackerConfig, TieBreak};

const SEED: u64 = 0x5EED_2024;

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
/// Sequence bytes, trace bytes and stderr bytes of one `generate` call.
type Outputs = (Vec<u8>, Vec<u8>, Vec<u8>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(s: &str) -> Exact {
    s.parse().unwrap()
}

// ---------------------------------------------------------------------------
// Criteria 1–3 and 8 share one batch of long runs.

const BATCH: usize = 500;
const LONG_T: u64 = 10_000;
const WINDOW_T: u64 = 1_000;
const LEMMA_TRACES: usize = 20;
const LEMMA_PAIRS: usize = 50;

#[derive(Debug, Default)]
struct LongRun {
    seed: u64,
    max_abs_d: Option<Exact>,
    violations: usize,
    bound_error: Option<String>,
    zero_sum_ok: bool,
    recurrence_ok: bool,
    window: Option<Exact>,
    lemma_checked: usize,
    lemma_failures: Vec<String>,
}

/// `Σ_s ⌊P_{k'}(s) − N_k(s)⌋⁺ ≤ k' − k` on random pairs `k < k'`.
fn induction_lemma(seq: &[String], sched: &Schedule<Exact>, seed: u64, out: &mut LongRun) {
    let t = seq.len();
    let mut cursor = sched.restart();
    let mut labels: Vec<String> = Vec::new();
    let idx = |labels: &mut Vec<String>, l: &str| match labels.iter().position(|x| x == l) {
        Some(i) => i,
        None => {
            labels.push(l.to_string());
            labels.len() - 1
        }
    };
    // prefix[k] and counts[k] for k = 0..=T, sparse by symbol index
    let mut prefix: Vec<Vec<Exact>> = vec![Vec::new()];
    let mut counts: Vec<Vec<u64>> = vec![Vec::new()];
    for (i, chosen) in seq.iter().enumerate() {
        let dist = cursor.pull(i as u64 + 1).unwrap();
        let mut p = prefix[i].clone();
        let mut n = counts[i].clone();
        for (id, m) in dist.iter() {
            let j = idx(&mut labels, cursor.symbols().label(id));
            if p.len() <= j {
                p.resize(j + 1, Exact::zero());
            }
            p[j] += m;
        }
        let j = idx(&mut labels, chosen);
        if n.len() <= j {
            n.resize(j + 1, 0);
        }
        n[j] += 1;
        prefix.push(p);
        counts.push(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..LEMMA_PAIRS {
        let k = rng.gen_range(0..t);
        let k2 = rng.gen_range(k + 1..=t);
        let mut need = 0u64;
        for (s, p) in prefix[k2].iter().enumerate() {
            let n = counts[k].get(s).copied().unwrap_or(0);
            let r = p.clone() - Exact::from_u64(n);
            if r.is_positive() {
                need += r.floor_nonneg();
            }
        }
        out.lemma_checked += 1;
        if need > (k2 - k) as u64 {
            out.lemma_failures.push(format!("seed {seed}: k={k}, k'={k2}: Σ R = {need} > {}", k2 - k));
        }
    }
}

fn long_run(index: usize, seed: u64, src: &Source<Exact>) -> LongRun {
    let sched = Schedule::new(src.clone());
    let mut out = LongRun { seed, ..Default::default() };
    let (run, trace) = match generate_traced(sched.restart(), LONG_T, StackerConfig::default(), 1, None) {
        Ok(r) => r,
        Err(err) => {
            out.bound_error = Some(format!("seed {seed}: {err}"));
            return out;
        }
    };
    let seq = run.labels();
    match audit_bound(&seq, &sched) {
        Ok(r) => {
            out.violations = r.violations.len();
            out.max_abs_d = Some(r.max_abs_d);
            if !r.pass {
                out.bound_error = Some(format!("seed {seed}: audit failed"));
            }
        }
        Err(err) => out.bound_error = Some(format!("seed {seed}: {err}")),
    }
    out.zero_sum_ok = trace.rows.iter().all(|r| r.zero_sum_residual.is_zero())
        && trace.snapshots.iter().all(|s| s.d.iter().fold(Exact::zero(), |a, v| a + v.clone()).is_zero());
    out.recurrence_ok = audit_recurrence(&trace, &sched).is_ok_and(|r| r.exact && r.transitions == LONG_T);
    let mut short = trace.clone();
    short.snapshots.retain(|s| s.k <= WINDOW_T);
    out.window = Some(audit_window(&short).value);
    if index < LEMMA_TRACES {
        induction_lemma(&seq, &sched, seed, &mut out);
    }
    out
}

fn criterion_bound(runs: &[LongRun]) -> Verdict {
    let mut worst = Exact::zero();
    for r in runs {
        if let Some(err) = &r.bound_error {
            return Err(err.clone());
        }
        ensure(r.violations == 0, || format!("seed {}: {} violations", r.seed, r.violations))?;
        let m = r.max_abs_d.clone().unwrap();
        ensure(m < Exact::one(), || format!("seed {}: max |D| = {m}", r.seed))?;
        worst = worst.max(m);
    }
    Ok(format!("{} schedules × {LONG_T} steps, worst max|D| = {worst} < 1, 0 violations", runs.len()))
}

fn criterion_zero_sum(runs: &[LongRun]) -> Verdict {
    for r in runs {
        ensure(r.zero_sum_ok, || format!("seed {}: Σ_s D_k(s) ≠ 0", r.seed))?;
        ensure(r.recurrence_ok, || format!("seed {}: recurrence residual", r.seed))?;
    }
    Ok(format!("{} traces: Σ D = 0 and D_(k+1) = D_k − π_(k+1) + e_chosen at every step", runs.len()))
}

fn criterion_window(runs: &[LongRun]) -> Verdict {
    let mut worst = Exact::zero();
    for r in runs {
        let w = r.window.clone().ok_or_else(|| format!("seed {}: no trace", r.seed))?;
        ensure(w < e("2"), || format!("seed {}: window {w}", r.seed))?;
        worst = worst.max(w);
    }
    Ok(format!("{} traces, first {WINDOW_T} steps: worst window = {worst} < 2", runs.len()))
}

fn criterion_lemma(runs: &[LongRun]) -> Verdict {
    let checked: usize = runs.iter().map(|r| r.lemma_checked).sum();
    let fails: Vec<&String> = runs.iter().flat_map(|r| &r.lemma_failures).collect();
    ensure(fails.is_empty(), || fails[0].clone())?;
    ensure(checked == LEMMA_TRACES * LEMMA_PAIRS, || format!("only {checked} pairs checked"))?;
    Ok(format!("{checked} (k, k') pairs over {LEMMA_TRACES} traces: Σ_s ⌊P_k'(s) − N_k(s)⌋⁺ ≤ k' − k"))
}

// ---------------------------------------------------------------------------

fn criterion_tightness() -> Verdict {
    let mut parts = Vec::new();
    for (n, want) in [(2, "1/2"), (3, "2/3"), (4, "3/4"), (5, "4/5")] {
        let cert = tightness_probe(n).map_err(|e| e.to_string())?;
        ensure(cert.value == e(want), || format!("n={n}: 1 − 1/n computed as {}", cert.value))?;
        ensure(cert.confirmed, || format!("n={n}: optimum {} < {want}", cert.oracle.opt_value))?;
        ensure(cert.oracle.opt_value == e(want), || format!("n={n}: optimum {} ≠ {want}", cert.oracle.opt_value))?;
        parts.push(format!("n={n}: {}", cert.oracle.opt_value));
    }
    Ok(format!("horizon-(n−1) optimum = 1 − 1/n ({})", parts.join(", ")))
}

fn criterion_lookahead() -> Verdict {
    let demo = lookahead_probe().map_err(|e| e.to_string())?;
    ensure(demo.worst_d4 == e("-11/10"), || format!("worst D_4 = {}", demo.worst_d4))?;
    ensure(demo.prefixes_checked == 60 && demo.all_prefixes_forced, || "some prefix escapes the adversary".into())?;
    ensure(demo.full_knowledge.opt_value < Exact::one(), || {
        format!("full-knowledge optimum {}", demo.full_knowledge.opt_value)
    })?;
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = ldstack::cli::run(["ldstack", "demo", "lookahead"], &mut out, &mut err);
    let text = String::from_utf8(out).unwrap();
    ensure(code == 0 && text.contains("worst D_4 = -11/10"), || format!("demo lookahead exited {code}"))?;
    Ok(format!(
        "lookahead-1 ends at D_4 = {}; full knowledge reaches max|D_4| ≤ {} < 1",
        demo.worst_d4, demo.full_knowledge.opt_value
    ))
}

fn criterion_periodicity() -> Verdict {
    let triple = vec![("a".to_string(), e("1/2")), ("b".to_string(), e("1/3")), ("c".to_string(), e("1/6"))];
    let r = extract_rotor(&triple, TieBreak::FirstSeen).map_err(|e| e.to_string())?;
    ensure(r.m == 6, || format!("(½,⅓,⅙) period {}", r.m))?;
    let counts: Vec<u64> = r.counts().into_iter().map(|(_, c)| c).collect();
    ensure(counts == [3, 2, 1], || format!("(½,⅓,⅙) counts {counts:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 6);
    let pis: Vec<_> = (0..100).map(|_| random_dist(&mut rng, 5, 12)).collect();
    let results = batch::map(&pis, |pi| -> Result<u64, String> {
        let r = extract_rotor(pi, TieBreak::FirstSeen).map_err(|e| e.to_string())?;
        ensure(BigInt::from(r.m) == period_of(pi), || format!("m = {} ≠ lcm", r.m))?;
        let rep = verify_rotor(&r);
        ensure(rep.pass, || rep.failures.join("; "))?;
        let seq = generate(Schedule::new(Source::Stationary(pi.clone())), 3 * r.m, StackerConfig::default())
            .map_err(|e| e.to_string())?
            .labels();
        ensure(seq.iter().enumerate().all(|(i, s)| *s == r.pattern[i % r.m as usize]), || {
            "s_(k+m) ≠ s_k within 3m steps".into()
        })?;
        Ok(r.m)
    });
    let mut max_m = 0;
    for (i, r) in results.into_iter().enumerate() {
        max_m = max_m.max(r.map_err(|e| format!("π #{i} {:?}: {e}", pis[i]))?);
    }
    Ok(format!("(½,⅓,⅙) → m = 6, counts (3,2,1); 100 random π verified over 3m steps (largest m = {max_m})"))
}

fn criterion_oracle() -> Verdict {
    let spec = InstanceSpec { max_support: 4, max_den: 12, max_table_len: 10 };
    const KINDS: [SourceKind; 3] = [SourceKind::Stationary, SourceKind::Table, SourceKind::Generator];
    let cases: Vec<(u64, Source<Exact>, u64)> = (0..200u64)
        .map(|i| {
            let seed = SEED ^ (7 << 32) ^ i;
            let horizon = ChaCha8Rng::seed_from_u64(seed).gen_range(1..=10);
            (seed, random_source(seed, KINDS[i as usize % 3], spec), horizon)
        })
        .collect();
    let results = batch::map(&cases, |(seed, src, t)| -> Result<u64, String> {
        let sched = Schedule::new(src.clone());
        let r = minimax_search(&sched, *t, SearchOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(r.greedy_value < Exact::one(), || format!("seed {seed}: greedy {}", r.greedy_value))?;
        ensure(r.opt_value <= r.greedy_value, || {
            format!("seed {seed}: optimum {} > greedy {}", r.opt_value, r.greedy_value)
        })?;
        Ok(r.nodes_explored)
    });
    let mut nodes = 0;
    for r in results {
        nodes += r?;
    }
    let sub: Vec<_> = cases.iter().take(20).collect();
    let agree = batch::map(&sub, |(seed, src, t)| -> Result<(), String> {
        let sched = Schedule::new(src.clone());
        let a = minimax_search(&sched, *t, SearchOptions::default()).map_err(|e| e.to_string())?;
        let b = minimax_search(&sched, *t, SearchOptions { prune: false, ..SearchOptions::default() })
            .map_err(|e| e.to_string())?;
        ensure(a.opt_value == b.opt_value, || format!("seed {seed}: pruned {} ≠ unpruned {}", a.opt_value, b.opt_value))
    });
    for r in agree {
        r?;
    }
    Ok(format!("200 instances: greedy < 1 and optimum ≤ greedy ({nodes} nodes); pruned = unpruned on 20"))
}

fn criterion_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_once = |schedule: &str, tag: &str| -> Result<Outputs, String> {
        let seq = dir.path().join(format!("{tag}.seq"));
        let trace = dir.path().join(format!("{tag}.csv"));
        let mut out = Vec::new();
        let mut err = Vec::new();
        let args = [
            "ldstack",
            "generate",
            "--schedule",
            schedule,
            "--steps",
            "2000",
            "--out",
            seq.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ];
        let code = ldstack::cli::run(args, &mut out, &mut err);
        ensure(code == 0, || format!("generate exited {code}: {}", String::from_utf8_lossy(&err)))?;
        Ok((std::fs::read(seq).unwrap(), std::fs::read(trace).unwrap(), err))
    };
    let mut files = 0;
    for (i, kind) in ["stationary", "table"].iter().enumerate() {
        let mut out = Vec::new();
        let code = ldstack::cli::run(
            ["ldstack", "sample", "--seed", &(SEED + i as u64).to_string(), "--kind", kind],
            &mut out,
            &mut Vec::new(),
        );
        ensure(code == 0, || format!("sample exited {code}"))?;
        let path = dir.path().join(format!("{kind}.jsonl"));
        std::fs::write(&path, out).unwrap();
        let a = run_once(path.to_str().unwrap(), &format!("{kind}-a"))?;
        let b = run_once(path.to_str().unwrap(), &format!("{kind}-b"))?;
        ensure(a == b, || format!("{kind}: outputs differ between runs"))?;
        ensure(!a.0.is_empty() && !a.1.is_empty(), || "empty output".into())?;
        files += 2;
    }
    Ok(format!("{files} sequence/trace file pairs byte-identical across repeated runs"))
}

fn criterion_fresh_pair() -> Verdict {
    const T: u64 = 1_000;
    let config = StackerConfig { horizon: Horizon::Capped(16), ..StackerConfig::default() };
    let sched = Schedule::new(Source::<Exact>::generator(FreshPair));
    let run = generate(sched.restart(), T, config).map_err(|e| e.to_string())?;
    ensure(run.fallback_steps == (1..=T).collect::<Vec<_>>(), || {
        format!("{} of {T} steps used the fallback", run.fallback_steps.len())
    })?;
    let labels = run.labels();
    let events: Vec<String> = run.fallback_steps.iter().map(|&k| ldstack::stacker::fallback_event(k, &labels[k as usize - 1])).collect();
    ensure(events[0] == r#"{"k":1,"event":"unresolved-fallback","chosen":"a1"}"#, || events[0].clone())?;
    let report = audit_bound(&labels, &sched).map_err(|e| e.to_string())?;
    ensure(report.pass && report.max_abs_d < Exact::one(), || format!("max |D| = {}", report.max_abs_d))?;
    Ok(format!(
        "{T} steps, {} fallback events, {} symbols, max|D| = {}",
        events.len(),
        run.state.schedule().symbols().len(),
        report.max_abs_d
    ))
}

fn catch<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|p| {
        p.downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .map_or_else(|| "panicked".into(), |m| format!("panicked: {m}"))
    })
}

fn main() {
    let start = Instant::now();
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));

    let sources = mixed_sources(SEED, BATCH, InstanceSpec::default());
    let indexed: Vec<(usize, u64, Source<Exact>)> =
        sources.into_iter().enumerate().map(|(i, (seed, _, src))| (i, seed, src)).collect();
    let batch_start = Instant::now();
    let runs = catch(|| batch::map(&indexed, |(i, seed, src)| long_run(*i, *seed, src)));
    let batch_secs = batch_start.elapsed().as_secs_f64();
    let with_runs = |f: fn(&[LongRun]) -> Verdict| -> Verdict { f(runs.as_ref().map_err(Clone::clone)?) };

    let criteria: Vec<Criterion> = vec![
        ("discrepancy bound", Box::new(|| with_runs(criterion_bound))),
        ("zero sum and recurrence", Box::new(|| with_runs(criterion_zero_sum))),
        ("window bound", Box::new(|| with_runs(criterion_window))),
        ("tightness", Box::new(criterion_tightness)),
        ("lookahead impossibility", Box::new(criterion_lookahead)),
        ("periodicity", Box::new(criterion_periodicity)),
        ("oracle agreement", Box::new(criterion_oracle)),
        ("induction lemma", Box::new(|| with_runs(criterion_lemma))),
        ("determinism", Box::new(criterion_determinism)),
        ("countable support", Box::new(criterion_fresh_pair)),
    ];

    println!("shared batch: {BATCH} schedules × {LONG_T} steps generated and traced in {batch_secs:.1}s");
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = catch(f).and_then(|v| v);
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    panic::set_hook(hook);
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
