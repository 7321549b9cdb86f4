//! Seeded random schedules for property runs, benches and the `sample`
//! command. Every generator here is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numeric::Exact;
use crate::schedule::{RawDist, Source, StepGenerator, TailPolicy};

/// Random rational distribution over a random nonempty subset of
/// `s0..s{universe-1}`. Every mass has a denominator dividing some
/// `q ≤ max_den`.
pub fn random_dist<R: Rng>(rng: &mut R, universe: usize, max_den: u64) -> RawDist<Exact> {
    assert!(universe >= 1 && max_den >= 1);
    let q = rng.gen_range(1..=max_den);
    let mut labels: Vec<usize> = (0..universe).collect();
    labels.shuffle(rng);
    let m = rng.gen_range(1..=universe);
    labels.truncate(m);
    labels.sort_unstable();
    // composition of q into m nonnegative parts via sorted cut points
    let mut cuts: Vec<u64> = (0..m - 1).map(|_| rng.gen_range(0..=q)).collect();
    cuts.push(0);
    cuts.push(q);
    cuts.sort_unstable();
    let dist: RawDist<Exact> = labels
        .iter()
        .zip(cuts.windows(2))
        .filter(|(_, w)| w[1] > w[0])
        .map(|(l, w)| (format!("s{l}"), Exact::new((w[1] - w[0]) as i64, q as i64)))
        .collect();
    debug_assert!(!dist.is_empty());
    dist
}

/// Fresh random distribution at every step, derived from `(seed, step)`.
#[derive(Debug, Clone, Copy)]
pub struct RandomSteps {
    pub seed: u64,
    pub universe: usize,
    pub max_den: u64,
}

impl StepGenerator<Exact> for RandomSteps {
    fn dist(&self, step: u64) -> RawDist<Exact> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        random_dist(&mut rng, self.universe, self.max_den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Stationary,
    Table,
    Generator,
}

/// Parameters for [`random_source`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub max_support: usize,
    pub max_den: u64,
    /// Longest explicit table before the repeating tail.
    pub max_table_len: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec { max_support: 8, max_den: 30, max_table_len: 64 }
    }
}

pub fn random_source(seed: u64, kind: SourceKind, spec: InstanceSpec) -> Source<Exact> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let universe = rng.gen_range(1..=spec.max_support);
    match kind {
        SourceKind::Stationary => Source::Stationary(random_dist(&mut rng, universe, spec.max_den)),
        SourceKind::Table => {
            let len = rng.gen_range(1..=spec.max_table_len);
            let steps = (0..len).map(|_| random_dist(&mut rng, universe, spec.max_den)).collect();
            Source::Table { steps, tail: TailPolicy::RepeatLast }
        }
        SourceKind::Generator => Source::generator(RandomSteps {
            seed: rng.gen(),
            universe,
            max_den: spec.max_den,
        }),
    }
}

/// Cycles through the three source kinds so a batch mixes all of them.
pub fn mixed_sources(base_seed: u64, count: usize, spec: InstanceSpec) -> Vec<(u64, SourceKind, Source<Exact>)> {
    const KINDS: [SourceKind; 3] = [SourceKind::Stationary, SourceKind::Table, SourceKind::Generator];
    (0..count)
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let kind = KINDS[i % 3];
            (seed, kind, random_source(seed, kind, spec))
        })
        .collect()
}

/// Random stationary distribution over exactly `s0..s{n-1}` with every mass
/// positive and denominators at most `max_den`.
pub fn random_full_support<R: Rng>(rng: &mut R, n: usize, max_den: u64) -> RawDist<Exact> {
    loop {
        let d = random_dist(rng, n, max_den);
        if d.len() == n {
            return d;
        }
        if n > max_den as usize {
            panic!("cannot give {n} symbols positive mass with denominators ≤ {max_den}");
        }
    }
}
