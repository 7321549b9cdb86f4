//! Deterministic low-discrepancy symbol sequences.
//!
//! Given any schedule of discrete distributions `π₁, π₂, …`, the
//! earliest-deadline generator in [`stacker`] emits symbols `s₁, s₂, …` whose
//! running counts `N_k(s)` stay strictly within 1 of the cumulative expected
//! counts `P_k(s) = Σ_{i≤k} π_i(s)`. The remaining modules audit that bound
//! independently, compute exact minimax optima on small instances, and
//! extract the periodic pattern produced for rational stationary inputs.
//!
//! ```
//! use ldstack::auditor::audit_bound;
//! use ldstack::{generate, Exact, Schedule, Source, StackerConfig};
//!
//! let pi = Source::stationary([
//!     ("a", Exact::new(1, 2)),
//!     ("b", Exact::new(1, 3)),
//!     ("c", Exact::new(1, 6)),
//! ])
//! .unwrap();
//! let sched = Schedule::new(pi);
//! let run = generate(sched.restart(), 12, StackerConfig::default()).unwrap();
//! assert_eq!(run.labels().concat(), "ababacababac");
//!
//! let report = audit_bound(&run.labels(), &sched).unwrap();
//! assert_eq!(report.max_abs_d, Exact::new(5, 6));
//! assert!(report.pass);
//! ```

pub mod auditor;
pub mod batch;
pub mod cli;
pub mod numeric;
pub mod oracle;
pub mod rotor;
pub mod schedule;
pub mod stacker;
pub mod testgen;

pub use numeric::{Exact, Float, Mode, Scalar};
pub use schedule::{parse_schedule, AnySource, Schedule, Source, StepDist, SymbolId, TailPolicy};
pub use stacker::{generate, Deadline, Horizon, Run, Stacker, StackerConfig, TieBreak};
