//! Property checks of the generator as a state machine over random schedules.

use proptest::prelude::*;

use ldstack::auditor::audit_bound;
use ldstack::oracle::{minimax_search, SearchOptions};
use ldstack::testgen::{random_source, InstanceSpec, SourceKind};
use ldstack::{
    generate, parse_schedule, AnySource, Exact, Float, Scalar, Schedule, Source, Stacker, StackerConfig, TieBreak,
};

fn kind() -> impl Strategy<Value = SourceKind> {
    prop_oneof![Just(SourceKind::Stationary), Just(SourceKind::Table), Just(SourceKind::Generator)]
}

fn tiebreak() -> impl Strategy<Value = TieBreak> {
    prop_oneof![Just(TieBreak::FirstSeen), Just(TieBreak::MostNegative)]
}

fn source(seed: u64, kind: SourceKind) -> Source<Exact> {
    random_source(seed, kind, InstanceSpec { max_support: 6, max_den: 20, max_table_len: 24 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Each step: at most one critical symbol, it is the one chosen, the
    /// choice was a candidate, and every |D| stays below 1.
    #[test]
    fn step_invariants(seed in any::<u64>(), kind in kind(), tb in tiebreak()) {
        let config = StackerConfig { tiebreak: tb, ..StackerConfig::default() };
        let mut st = Stacker::new(Schedule::new(source(seed, kind)), config);
        for _ in 0..400 {
            let before = st.clone();
            let sel = st.select().unwrap();
            let cands = st.candidates().unwrap();
            let critical: Vec<_> = cands.iter().filter(|c| c.slack >= Exact::one()).collect();
            prop_assert!(critical.len() <= 1);
            if let Some(c) = critical.first() {
                prop_assert_eq!(sel.chosen, c.symbol);
                prop_assert_eq!(sel.critical, Some(c.symbol));
            }
            prop_assert!(cands.iter().any(|c| c.symbol == sel.chosen));
            let out = st.step().unwrap();
            prop_assert_eq!(out.chosen, sel.chosen);
            prop_assert_eq!(out.k, before.k() + 1);
            for d in st.discrepancies() {
                prop_assert!(d.abs() < Exact::one(), "|D| = {} at k = {}", d.abs(), out.k);
            }
        }
    }

    /// Σ_s ⌊P_k'(s) − N_k(s)⌋⁺ ≤ k' − k for every pair on a short run.
    #[test]
    fn induction_lemma_all_pairs(seed in any::<u64>(), kind in kind()) {
        let src = source(seed, kind);
        let mut st = Stacker::new(Schedule::new(src.clone()), StackerConfig::default());
        let t = 40u64;
        let mut counts = vec![st.counts()];
        for _ in 0..t {
            st.step().unwrap();
            counts.push(st.counts());
        }
        let mut cursor = Schedule::new(src);
        let mut prefixes = vec![Vec::new()];
        for _ in 0..t {
            cursor.advance_prefix().unwrap();
            prefixes.push(cursor.prefixes().to_vec());
        }
        // register ids in the same order as the generator
        prop_assert_eq!(cursor.symbols().labels(), &st.schedule().symbols().labels()[..cursor.symbols().len()]);
        for (k, nk) in counts.iter().enumerate().take(t as usize) {
            for (k2, pk2) in prefixes.iter().enumerate().skip(k + 1) {
                let need: u64 = pk2
                    .iter()
                    .enumerate()
                    .map(|(s, p)| {
                        let r = p.clone() - Exact::from_u64(nk.get(s).copied().unwrap_or(0));
                        if r.is_positive() { r.floor_nonneg() } else { 0 }
                    })
                    .sum();
                prop_assert!(need <= (k2 - k) as u64, "k={} k'={} need={}", k, k2, need);
            }
        }
    }

    /// Unlimited lookahead through the online entry point matches `generate`.
    #[test]
    fn online_unlimited_equals_offline(seed in any::<u64>(), kind in kind()) {
        let src = source(seed, kind);
        let offline = generate(Schedule::new(src.clone()), 200, StackerConfig::default()).unwrap();
        let mut st = Stacker::new(Schedule::new(src), StackerConfig::default());
        let online: Vec<_> = (0..200).map(|_| st.step_online(None).unwrap().chosen).collect();
        prop_assert_eq!(offline.sequence, online);
    }

    /// Longer runs extend shorter ones.
    #[test]
    fn prefix_stable(seed in any::<u64>(), kind in kind(), t in 1u64..150) {
        let src = source(seed, kind);
        let short = generate(Schedule::new(src.clone()), t, StackerConfig::default()).unwrap().labels();
        let long = generate(Schedule::new(src), t + 50, StackerConfig::default()).unwrap().labels();
        prop_assert_eq!(&long[..t as usize], &short[..]);
    }

    /// The independent audit agrees with the generator's own bookkeeping.
    #[test]
    fn audit_matches_state(seed in any::<u64>(), kind in kind()) {
        let src = source(seed, kind);
        let run = generate(Schedule::new(src.clone()), 300, StackerConfig::default()).unwrap();
        let report = audit_bound(&run.labels(), &Schedule::new(src)).unwrap();
        prop_assert!(report.pass);
        let mut finals = run.state.discrepancies();
        finals.retain(|d| !d.is_zero());
        prop_assert!(finals.iter().all(|d| d.abs() <= report.max_abs_d));
    }

    /// Float mode on the same schedule stays within the bound up to rounding.
    #[test]
    fn float_mode_tracks_bound(seed in any::<u64>(), stationary in any::<bool>()) {
        let kind = if stationary { SourceKind::Stationary } else { SourceKind::Table };
        let text = source(seed, kind).to_jsonl().unwrap();
        let AnySource::Float(src) = parse_schedule(&text, Some(ldstack::Mode::Float)).unwrap() else {
            unreachable!()
        };
        let run = generate(Schedule::new(src.clone()), 500, StackerConfig::default()).unwrap();
        let report = audit_bound(&run.labels(), &Schedule::new(src)).unwrap();
        prop_assert!(!report.hard);
        prop_assert!(report.max_abs_d < Float::new(1.0 + 1e-9).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The exhaustive optimum never exceeds the generator's value.
    #[test]
    fn oracle_bounds_greedy(seed in any::<u64>(), kind in kind(), t in 1u64..8) {
        let src = random_source(seed, kind, InstanceSpec { max_support: 3, max_den: 8, max_table_len: 8 });
        let r = minimax_search(&Schedule::new(src), t, SearchOptions::default()).unwrap();
        prop_assert!(r.opt_value <= r.greedy_value);
        prop_assert!(r.greedy_value < Exact::one());
        prop_assert_eq!(r.witness.len() as u64, t);
    }
}
