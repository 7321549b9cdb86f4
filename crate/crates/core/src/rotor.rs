//! Periodic sequences for rational stationary distributions.
//!
//! With a stationary rational `π` and a tie-break that only looks at the
//! generator state, `D_m` is an integer vector at `m = lcm` of the
//! denominators; every entry lies in `(−1, 1)`, so it is zero and the
//! generator is back in its initial state. The sequence therefore repeats
//! with period `m` from the start.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::numeric::{Exact, Scalar};
use crate::schedule::{parse_probs, validate_dist, RawDist, Schedule, ScheduleError, Source};
use crate::stacker::{Stacker, StackerConfig, StackerError, TieBreak};

/// Largest period `extract_rotor` will simulate.
pub const MAX_PERIOD: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotorError {
    #[error("rotor extraction needs exact rational masses and a stationary schedule")]
    NonRational,
    #[error("period {0} exceeds the limit of {MAX_PERIOD}")]
    PeriodTooLarge(BigInt),
    #[error("D_{m}({symbol}) = {value}, expected 0")]
    NonzeroReset { m: u64, symbol: String, value: String },
    #[error("s_{} = {} differs from s_{k} = {}", k + m, later, earlier)]
    NotPeriodic { k: u64, m: u64, earlier: String, later: String },
    #[error("malformed rotor file: {0}")]
    Format(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Stacker(#[from] StackerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rotor {
    pub m: u64,
    pub pattern: Vec<String>,
    pub pi: RawDist<Exact>,
}

impl Serialize for Rotor {
    fn serialize<Z: Serializer>(&self, ser: Z) -> Result<Z::Ok, Z::Error> {
        struct Pi<'a>(&'a RawDist<Exact>);
        impl Serialize for Pi<'_> {
            fn serialize<Z: Serializer>(&self, ser: Z) -> Result<Z::Ok, Z::Error> {
                let mut map = ser.serialize_map(Some(self.0.len()))?;
                for (l, p) in self.0 {
                    map.serialize_entry(l, &p.to_string())?;
                }
                map.end()
            }
        }
        let mut st = ser.serialize_struct("Rotor", 3)?;
        st.serialize_field("m", &self.m)?;
        st.serialize_field("pattern", &self.pattern)?;
        st.serialize_field("pi", &Pi(&self.pi))?;
        st.end()
    }
}

impl Rotor {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rotor serialisation cannot fail")
    }

    /// Parses the JSON form. `pi` keeps its key order and is not validated,
    /// so hand-built rotors can be checked by [`verify_rotor`].
    pub fn from_json(text: &str) -> Result<Rotor, RotorError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            m: u64,
            pattern: Vec<String>,
            pi: Box<RawValue>,
        }
        let f: File = serde_json::from_str(text).map_err(|e| RotorError::Format(e.to_string()))?;
        let pi = parse_probs(1, &f.pi)?
            .into_iter()
            .map(|(l, t)| Exact::parse(&t).map(|p| (l, p)))
            .collect::<Result<_, _>>()
            .map_err(|e| RotorError::Format(e.to_string()))?;
        Ok(Rotor { m: f.m, pattern: f.pattern, pi })
    }

    /// Occurrences of each support symbol in one period.
    pub fn counts(&self) -> Vec<(String, u64)> {
        self.pi
            .iter()
            .map(|(l, _)| (l.clone(), self.pattern.iter().filter(|s| *s == l).count() as u64))
            .collect()
    }
}

/// Least common multiple of the denominators of the positive masses.
pub fn period_of(pi: &RawDist<Exact>) -> BigInt {
    pi.iter().filter(|(_, p)| !p.is_zero()).fold(BigInt::one(), |acc, (_, p)| acc.lcm(&p.denom()))
}

/// Runs the generator for `2m` steps on the stationary schedule `pi`,
/// checks `D_m = 0` and `s_{k+m} = s_k`, and returns the first period.
pub fn extract_rotor(pi: &RawDist<Exact>, tiebreak: TieBreak) -> Result<Rotor, RotorError> {
    let pi = validate_dist(1, pi.clone())?;
    let big_m = period_of(&pi);
    let m = big_m.to_u64().filter(|&m| m <= MAX_PERIOD).ok_or(RotorError::PeriodTooLarge(big_m))?;
    let config = StackerConfig { tiebreak, ..StackerConfig::default() };
    let mut st = Stacker::new(Schedule::new(Source::Stationary(pi.clone())), config);
    let mut pattern = Vec::with_capacity(m as usize);
    for _ in 0..m {
        let out = st.step()?;
        pattern.push(st.label(out.chosen).to_string());
    }
    for (l, _) in &pi {
        let d = st.schedule().symbols().get(l).map_or_else(Exact::zero, |id| st.discrepancy(id));
        if !d.is_zero() {
            return Err(RotorError::NonzeroReset { m, symbol: l.clone(), value: d.to_string() });
        }
    }
    for k in 1..=m {
        let out = st.step()?;
        let later = st.label(out.chosen);
        let earlier = &pattern[k as usize - 1];
        if later != earlier {
            return Err(RotorError::NotPeriodic { k, m, earlier: earlier.clone(), later: later.to_string() });
        }
    }
    Ok(Rotor { m, pattern, pi })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotorReport {
    pub m: u64,
    /// `lcm` of the denominators of `π`, as text (it may be large).
    pub lcm: String,
    pub distribution_ok: bool,
    pub length_ok: bool,
    pub period_matches_lcm: bool,
    pub composition_ok: bool,
    pub reset_ok: bool,
    #[serde(serialize_with = "text")]
    pub max_abs_d: Exact,
    pub bounded_ok: bool,
    /// Smallest divisor `d` of `m` with a `d`-periodic pattern and `D_d = 0`.
    pub minimal_period: u64,
    pub minimal_ok: bool,
    pub failures: Vec<String>,
    pub pass: bool,
}

fn text<Z: Serializer>(v: &Exact, ser: Z) -> Result<Z::Ok, Z::Error> {
    ser.serialize_str(&v.to_string())
}

/// Checks a rotor without trusting how it was produced.
pub fn verify_rotor(rotor: &Rotor) -> RotorReport {
    let mut failures = Vec::new();
    let m = rotor.m;
    let distribution_ok = match validate_dist(1, rotor.pi.clone()) {
        Ok(_) => true,
        Err(e) => {
            failures.push(format!("pi: {e}"));
            false
        }
    };
    let pi: RawDist<Exact> = rotor.pi.iter().filter(|(_, p)| !p.is_zero()).cloned().collect();
    let lcm = period_of(&pi);
    let period_matches_lcm = BigInt::from(m) == lcm;
    if !period_matches_lcm {
        failures.push(format!("m = {m} but the denominators have lcm {lcm}"));
    }
    let length_ok = m >= 1 && rotor.pattern.len() as u64 == m;
    if !length_ok {
        failures.push(format!("pattern has {} symbols, m = {m}", rotor.pattern.len()));
    }

    let mut composition_ok = true;
    for (l, p) in &pi {
        let want = p.mul(&Exact::from_u64(m));
        let have = rotor.pattern.iter().filter(|s| *s == l).count() as u64;
        if want != Exact::from_u64(have) {
            composition_ok = false;
            failures.push(format!("composition: {l} has {have} ≠ {want} occurrences"));
        }
    }
    for s in &rotor.pattern {
        if !pi.iter().any(|(l, _)| l == s) {
            composition_ok = false;
            failures.push(format!("composition: {s} is outside the support"));
            break;
        }
    }

    // D_k along the pattern
    let mut counts = vec![0u64; pi.len()];
    let mut max_abs_d = Exact::zero();
    let mut reset_at = Vec::new();
    for (k, s) in rotor.pattern.iter().enumerate() {
        let k = k as u64 + 1;
        if let Some(i) = pi.iter().position(|(l, _)| l == s) {
            counts[i] += 1;
        }
        let mut zero = true;
        for ((_, p), &n) in pi.iter().zip(&counts) {
            let d = Exact::from_u64(n) - p.mul(&Exact::from_u64(k));
            zero &= d.is_zero();
            max_abs_d = max_abs_d.max(d.abs());
        }
        if zero {
            reset_at.push(k);
        }
    }
    let reset_ok = length_ok && reset_at.last() == Some(&m);
    if !reset_ok {
        failures.push(format!("D_{m} is not zero"));
    }
    let bounded_ok = max_abs_d < Exact::one();
    if !bounded_ok {
        failures.push(format!("in-period max |D| = {max_abs_d} ≥ 1"));
    }

    let periodic = |d: usize| rotor.pattern.iter().zip(rotor.pattern.iter().skip(d)).all(|(a, b)| a == b);
    let minimal_period = (1..=m)
        .filter(|&d| m.is_multiple_of(d))
        .find(|&d| d == m || (reset_at.contains(&d) && periodic(d as usize)))
        .unwrap_or(m);
    let minimal_ok = minimal_period == m;
    if !minimal_ok {
        failures.push(format!("claimed period {m} but the pattern repeats every {minimal_period}"));
    }

    let pass = failures.is_empty();
    RotorReport {
        m,
        lcm: lcm.to_string(),
        distribution_ok,
        length_ok,
        period_matches_lcm,
        composition_ok,
        reset_ok,
        max_abs_d,
        bounded_ok,
        minimal_period,
        minimal_ok,
        failures,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::uniform;
    use crate::testgen::random_dist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(s: &str) -> Exact {
        s.parse().unwrap()
    }

    fn triple() -> RawDist<Exact> {
        vec![("a".into(), e("1/2")), ("b".into(), e("1/3")), ("c".into(), e("1/6"))]
    }

    fn labels(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    #[test]
    fn triple_rotor() {
        let r = extract_rotor(&triple(), TieBreak::FirstSeen).unwrap();
        assert_eq!(r.m, 6);
        assert_eq!(r.pattern, labels("ababac"));
        assert_eq!(r.counts(), vec![("a".into(), 3), ("b".into(), 2), ("c".into(), 1)]);
        assert_eq!(
            r.to_json(),
            r#"{"m":6,"pattern":["a","b","a","b","a","c"],"pi":{"a":"1/2","b":"1/3","c":"1/6"}}"#
        );
        let rep = verify_rotor(&r);
        assert!(rep.pass, "{:?}", rep.failures);
        assert_eq!(rep.minimal_period, 6);
        assert_eq!(rep.max_abs_d, e("5/6"));
        assert_eq!(Rotor::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn trivial_rotors() {
        let r = extract_rotor(&uniform(&["a", "b"]), TieBreak::FirstSeen).unwrap();
        assert_eq!((r.m, r.pattern.clone()), (2, labels("ab")));
        let r = extract_rotor(&vec![("a".into(), e("1"))], TieBreak::FirstSeen).unwrap();
        assert_eq!((r.m, r.pattern.clone()), (1, labels("a")));
        assert!(verify_rotor(&r).pass);
    }

    #[test]
    fn zero_masses_are_stripped() {
        let mut pi = triple();
        pi.push(("z".into(), e("0")));
        let r = extract_rotor(&pi, TieBreak::MostNegative).unwrap();
        assert_eq!(r.m, 6);
        assert!(!r.pi.iter().any(|(l, _)| l == "z"));
    }

    #[test]
    fn hand_built_failures() {
        let bad = Rotor { m: 2, pattern: labels("aa"), pi: uniform(&["a", "b"]) };
        let rep = verify_rotor(&bad);
        assert!(!rep.pass && !rep.composition_ok);
        assert!(rep.failures.iter().any(|f| f.contains("b has 0 ≠ 1")));

        let long = Rotor { m: 4, pattern: labels("abab"), pi: uniform(&["a", "b"]) };
        let rep = verify_rotor(&long);
        assert!(!rep.pass && !rep.minimal_ok && rep.composition_ok && rep.reset_ok);
        assert_eq!(rep.minimal_period, 2);
    }

    #[test]
    fn random_rotors_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let pi = random_dist(&mut rng, 5, 12);
            for tb in [TieBreak::FirstSeen, TieBreak::MostNegative] {
                let r = extract_rotor(&pi, tb).unwrap();
                assert_eq!(BigInt::from(r.m), period_of(&pi));
                assert!(verify_rotor(&r).pass);
            }
        }
    }
}
