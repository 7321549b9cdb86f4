//! Data-parallel helpers. With the `parallel` feature (on by default) work
//! is spread over the rayon pool; without it everything runs sequentially.
//! Results are returned in input order either way.

use crate::auditor::{audit_bound, AuditError};
use crate::numeric::Scalar;
use crate::schedule::Schedule;
use crate::stacker::{generate, StackerConfig};

/// Maps `f` over `items` sequentially.
pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

/// Runs `f` inside a pool with `threads` workers (ignored without the
/// `parallel` feature).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Summary of one generate-then-audit job.
#[derive(Debug, Clone, PartialEq)]
pub struct Checked<S> {
    pub steps: u64,
    pub max_abs_d: S,
    pub violations: usize,
    pub pass: bool,
}

/// Generates `steps` symbols from a fresh cursor and audits them
/// independently.
pub fn generate_and_audit<S: Scalar>(
    sched: &Schedule<S>,
    steps: u64,
    config: StackerConfig,
) -> Result<Checked<S>, AuditError> {
    let run = generate(sched.restart(), steps, config)?;
    let report = audit_bound(&run.labels(), sched)?;
    Ok(Checked { steps, max_abs_d: report.max_abs_d, violations: report.violations.len(), pass: report.pass })
}

/// [`generate_and_audit`] over many schedules.
pub fn check_all<S: Scalar>(
    scheds: &[Schedule<S>],
    steps: u64,
    config: StackerConfig,
    parallel: bool,
) -> Vec<Result<Checked<S>, AuditError>> {
    let job = |s: &Schedule<S>| generate_and_audit(s, steps, config);
    if parallel {
        map(scheds, job)
    } else {
        map_seq(scheds, job)
    }
}
