//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when an audit or verification fails, 2 on
//! usage errors (bad flags, unreadable or invalid input files).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::auditor::{audit_sequence, TraceRecorder};
use crate::batch::with_threads;
use crate::numeric::{Mode, Scalar};
use crate::oracle::{lookahead_probe, minimax_search, tightness_probe, SearchOptions};
use crate::rotor::{extract_rotor, verify_rotor, Rotor, RotorError};
use crate::schedule::{parse_schedule, AnySource, Schedule, Source};
use crate::stacker::{fallback_event, Horizon, Stacker, StackerConfig, TieBreak};
use crate::testgen::{random_source, InstanceSpec, SourceKind};

#[derive(Debug, Parser)]
#[command(name = "ldstack", version, about = "Earliest-deadline low-discrepancy sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a sequence from a schedule.
    Generate(GenerateArgs),
    /// Re-verify a sequence against its schedule.
    Audit(AuditArgs),
    /// Exact minimax optimum over all sequences of a short horizon.
    Oracle(OracleArgs),
    /// Extract and verify the periodic pattern of a stationary schedule.
    Rotor(RotorArgs),
    /// Worked examples with exact values.
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
    /// Print a random schedule in the schedule file format.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// Schedule file (JSON lines).
    #[arg(long, value_name = "PATH")]
    schedule: PathBuf,
    /// Override the numeric mode declared in the schedule header.
    #[arg(long, value_name = "MODE")]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, default_value = "first-seen", value_name = "POLICY")]
    tiebreak: TieBreak,
    /// Deadline scan limit: a positive step count or `unbounded`.
    #[arg(long, default_value = "1000000", value_name = "N|unbounded")]
    horizon_cap: Horizon,
}

impl PolicyArgs {
    fn config(&self) -> StackerConfig {
        StackerConfig { tiebreak: self.tiebreak, horizon: self.horizon_cap }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_name = "T")]
    steps: u64,
    /// Only look this many steps ahead (drops the discrepancy guarantee).
    #[arg(long, value_name = "L", value_parser = clap::value_parser!(u64).range(1..))]
    lookahead: Option<u64>,
    /// Print the sequence as one JSON array instead of one label per line.
    #[arg(long)]
    json: bool,
    /// Write the sequence here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the per-step CSV trace here.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Sequence file: one label per line or a JSON array.
    #[arg(long, value_name = "PATH")]
    sequence: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_name = "T")]
    steps: u64,
    /// Worker threads for independent subtrees (results do not depend on it).
    #[arg(long, default_value_t = 1, value_name = "K", value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// Disable pruning (exhaustive enumeration, for cross-checks).
    #[arg(long)]
    no_prune: bool,
}

#[derive(Debug, Args)]
struct RotorArgs {
    /// Stationary exact schedule to extract the rotor from.
    #[arg(long, value_name = "PATH", required_unless_present = "verify", conflicts_with = "verify")]
    schedule: Option<PathBuf>,
    #[arg(long, value_name = "MODE")]
    mode: Option<Mode>,
    #[arg(long, default_value = "first-seen", value_name = "POLICY")]
    tiebreak: TieBreak,
    /// Verify an existing rotor file instead of extracting one.
    #[arg(long, value_name = "PATH")]
    verify: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// No sequence beats 1 − 1/n on the uniform distribution over n symbols.
    Tightness {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Bounded lookahead is not enough: an adversarial fourth step forces −11/10.
    Lookahead {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleKind {
    Stationary,
    Table,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "stationary")]
    kind: SampleKind,
    /// Largest support size.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    support: u64,
    /// Largest denominator.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    max_den: u64,
}

/// Outcome of a command that ran to completion.
enum Failure {
    Usage(String),
    Verification(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load(args: &ScheduleArgs) -> Result<AnySource, Failure> {
    let text = read(&args.schedule)?;
    parse_schedule(&text, args.mode).map_err(|e| usage(format!("{}: {e}", args.schedule.display())))
}

fn load_exact(args: &ScheduleArgs, what: &str) -> Result<Source<crate::Exact>, Failure> {
    match load(args)? {
        AnySource::Exact(s) => Ok(s),
        AnySource::Float(_) => Err(usage(format!("{what} requires exact mode"))),
    }
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisation cannot fail")
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisation cannot fail")
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate_cmd(&a, out, err),
        Command::Audit(a) => audit_cmd(&a, out),
        Command::Oracle(a) => oracle_cmd(&a, out),
        Command::Rotor(a) => rotor_cmd(&a, out, err),
        Command::Demo { demo: Demo::Tightness { n, json } } => tightness_cmd(n, json, out),
        Command::Demo { demo: Demo::Lookahead { json } } => lookahead_cmd(json, out),
        Command::Sample(a) => sample_cmd(&a, out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Verification(msg)) => {
            let _ = writeln!(err, "verification failed: {msg}");
            1
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = io::BufWriter::new(stdout.lock());
    let mut err = stderr.lock();
    run(std::env::args_os(), &mut out, &mut err)
}

fn generate_cmd(a: &GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match load(&a.schedule)? {
        AnySource::Exact(s) => generate_typed(Schedule::new(s), a, out, err),
        AnySource::Float(s) => generate_typed(Schedule::new(s), a, out, err),
    }
}

fn generate_typed<S: Scalar>(
    sched: Schedule<S>,
    a: &GenerateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let mut st = Stacker::new(sched, a.policy.config());
    // the CSV needs only per-step rows, so snapshots stay sparse
    let mut rec = a.trace.as_ref().map(|_| TraceRecorder::new(u64::MAX));
    let mut labels = Vec::with_capacity(a.steps as usize);
    let mut events = String::new();
    for _ in 0..a.steps {
        let o = st.step_online(a.lookahead).map_err(usage)?;
        let label = st.label(o.chosen).to_string();
        if o.fallback {
            events.push_str(&fallback_event(o.k, &label));
            events.push('\n');
        }
        if let Some(r) = rec.as_mut() {
            r.observe(&st, &o);
        }
        labels.push(label);
    }
    let _ = err.write_all(events.as_bytes());
    let text = if a.json {
        json_line(&labels) + "\n"
    } else {
        labels.iter().map(|l| format!("{l}\n")).collect()
    };
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => out.write_all(text.as_bytes()).map_err(usage)?,
    }
    if let (Some(path), Some(r)) = (&a.trace, rec) {
        let trace = r.finish(st.schedule().symbols().labels().to_vec());
        write_file(path, &trace.to_csv())?;
    }
    Ok(())
}

fn read_sequence(path: &Path) -> Result<Vec<String>, Failure> {
    let text = read(path)?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    } else {
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }
}

fn audit_cmd(a: &AuditArgs, out: &mut dyn Write) -> CmdResult {
    let sequence = read_sequence(&a.sequence)?;
    match load(&a.schedule)? {
        AnySource::Exact(s) => audit_typed(&sequence, Schedule::new(s), out),
        AnySource::Float(s) => audit_typed(&sequence, Schedule::new(s), out),
    }
}

fn audit_typed<S: Scalar>(sequence: &[String], sched: Schedule<S>, out: &mut dyn Write) -> CmdResult {
    let report = audit_sequence(sequence, &sched).map_err(usage)?;
    writeln!(out, "{}", json_pretty(&report)).map_err(usage)?;
    if report.bound.hard && !report.pass {
        return Err(Failure::Verification(format!(
            "{} violations, max |D| = {}",
            report.bound.violations.len(),
            report.bound.max_abs_d
        )));
    }
    Ok(())
}

fn oracle_cmd(a: &OracleArgs, out: &mut dyn Write) -> CmdResult {
    let sched = Schedule::new(load_exact(&a.schedule, "the oracle")?);
    let opts = SearchOptions {
        prune: !a.no_prune,
        parallel: a.threads > 1,
        enforce_limits: true,
        config: a.policy.config(),
    };
    let result = with_threads(a.threads as usize, || minimax_search(&sched, a.steps, opts)).map_err(usage)?;
    writeln!(out, "{}", json_pretty(&result)).map_err(usage)
}

fn rotor_cmd(a: &RotorArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let (rotor, print_rotor) = match (&a.schedule, &a.verify) {
        (_, Some(path)) => (Rotor::from_json(&read(path)?).map_err(usage)?, false),
        (Some(path), None) => {
            let args = ScheduleArgs { schedule: path.clone(), mode: a.mode };
            let AnySource::Exact(Source::Stationary(pi)) = load(&args)? else {
                return Err(usage(RotorError::NonRational));
            };
            (extract_rotor(&pi, a.tiebreak).map_err(|e| Failure::Verification(e.to_string()))?, true)
        }
        (None, None) => unreachable!("clap requires one of --schedule and --verify"),
    };
    let report = verify_rotor(&rotor);
    if print_rotor {
        writeln!(out, "{}", rotor.to_json()).map_err(usage)?;
        let _ = writeln!(err, "{}", json_line(&report));
    } else {
        writeln!(out, "{}", json_pretty(&report)).map_err(usage)?;
    }
    if !report.pass {
        return Err(Failure::Verification(report.failures.join("; ")));
    }
    Ok(())
}

fn tightness_cmd(n: usize, json: bool, out: &mut dyn Write) -> CmdResult {
    let cert = tightness_probe(n).map_err(usage)?;
    let text = if json {
        json_pretty(&cert) + "\n"
    } else {
        format!(
            "1 − 1/n = {}\n\
             certificate: uniform on {n} symbols, horizon {}: oracle optimum {} ≥ {} ({})\n\
             witness: {}\n\
             nodes explored: {}\n",
            cert.value,
            cert.oracle.horizon,
            cert.oracle.opt_value,
            cert.value,
            if cert.confirmed { "confirmed" } else { "NOT confirmed" },
            cert.oracle.witness.join(" "),
            cert.oracle.nodes_explored,
        )
    };
    out.write_all(text.as_bytes()).map_err(usage)?;
    if !cert.confirmed {
        return Err(Failure::Verification(format!("oracle optimum {} < {}", cert.oracle.opt_value, cert.value)));
    }
    Ok(())
}

fn lookahead_cmd(json: bool, out: &mut dyn Write) -> CmdResult {
    let demo = lookahead_probe().map_err(usage)?;
    let fmt_d = |v: &[(String, crate::Exact)]| v.iter().map(|(s, d)| format!("{s}:{d}")).collect::<Vec<_>>().join(" ");
    let text = if json {
        json_pretty(&demo) + "\n"
    } else {
        format!(
            "lookahead-1 choices for steps 1-3 (uniform on 1..5): {}\n\
             D_3: {}\n\
             step 4 is uniform on {}\n\
             online sequence: {}\n\
             D_4: {}\n\
             worst D_4 = {}\n\
             best fourth choice still leaves max |D_4| = {}; all {} candidate-respecting prefixes are forced to ≥ 11/10: {}\n\
             full knowledge of step 4: oracle optimum {}, offline generator {}\n",
            demo.prefix.join(" "),
            fmt_d(&demo.pre_adversary),
            demo.adversarial_pair.join(" and "),
            demo.online_sequence.join(" "),
            fmt_d(&demo.final_d),
            demo.worst_d4,
            demo.best_response,
            demo.prefixes_checked,
            demo.all_prefixes_forced,
            demo.full_knowledge.opt_value,
            demo.offline_max,
        )
    };
    out.write_all(text.as_bytes()).map_err(usage)?;
    let one = crate::Exact::one();
    if demo.worst_d4 != crate::Exact::new(-11, 10)
        || !demo.all_prefixes_forced
        || demo.full_knowledge.opt_value >= one
        || demo.offline_max >= one
    {
        return Err(Failure::Verification("lookahead example did not reproduce".into()));
    }
    Ok(())
}

fn sample_cmd(a: &SampleArgs, out: &mut dyn Write) -> CmdResult {
    let spec = InstanceSpec { max_support: a.support as usize, max_den: a.max_den, ..InstanceSpec::default() };
    let kind = match a.kind {
        SampleKind::Stationary => SourceKind::Stationary,
        SampleKind::Table => SourceKind::Table,
    };
    // derive the instance seed through the RNG so nearby seeds differ widely
    let seed = rand::Rng::gen(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let text = random_source(seed, kind, spec).to_jsonl().map_err(usage)?;
    out.write_all(text.as_bytes()).map_err(usage)
}
