//! Arithmetic substrate shared by every other module.
//!
//! Two numeric modes exist. [`Exact`] wraps an arbitrary-precision rational
//! kept in lowest terms after every operation; [`Float`] wraps a finite
//! `f64`. Algorithms are generic over [`Scalar`] so a run is monomorphised
//! into exactly one mode and can never mix the two.
//!
//! Float comparisons are raw IEEE comparisons with no epsilon. The strict
//! inequalities the generator relies on therefore only hold up to
//! accumulated rounding (roughly `k` ulps after `k` steps); use exact mode
//! whenever the `< 1` guarantee has to be checked rather than trusted.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericError {
    #[error("numeric mode mismatch: {0:?} vs {1:?}")]
    ModeMismatch(Mode, Mode),
    #[error("incomparable values (NaN)")]
    Incomparable,
    #[error("cannot parse {0:?} as a number")]
    Parse(String),
    #[error("zero denominator in {0:?}")]
    ZeroDenominator(String),
    #[error("non-finite value {0:?}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Float,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Float => "float",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "float" => Ok(Mode::Float),
            other => Err(format!("unknown mode {other:?} (expected exact or float)")),
        }
    }
}

/// Signed scalar used for probability masses, prefix sums and discrepancies.
pub trait Scalar:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + Ord
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + for<'a> AddAssign<&'a Self>
    + for<'a> SubAssign<&'a Self>
{
    const MODE: Mode;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_u64(n: u64) -> Self;
    fn parse(text: &str) -> Result<Self, NumericError>;

    fn mul(&self, other: &Self) -> Self;
    /// Panics on division by zero.
    fn div(&self, other: &Self) -> Self;

    fn abs(&self) -> Self;
    fn to_f64(&self) -> f64;

    /// `max(floor(self), 0)`, saturating at `u64::MAX`.
    fn floor_nonneg(&self) -> u64;

    /// `max(ceil(self / den), 0)` for `den > 0`; `None` when the result does
    /// not fit in a `u64`.
    fn ceil_div(&self, den: &Self) -> Option<u64>;

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }
    fn is_negative(&self) -> bool {
        *self < Self::zero()
    }
    fn is_positive(&self) -> bool {
        *self > Self::zero()
    }
}

// ---------------------------------------------------------------------------
// Exact

/// Arbitrary-precision rational, always in lowest terms with a positive
/// denominator.
///
/// Values whose numerator and denominator fit in an `i128` are stored
/// inline; anything larger spills to a heap `BigRational`. The split is
/// canonical (a value is `Big` only when it cannot be `Small`), so
/// structural equality is value equality.
#[derive(Clone)]
pub struct Exact(Repr);

#[derive(Clone)]
enum Repr {
    /// `d > 0`, `gcd(n, d) = 1`, `n != i128::MIN`.
    Small { n: i128, d: i128 },
    Big(BigRational),
}

fn gcd_i128(a: i128, b: i128) -> i128 {
    // both arguments are nonnegative here
    let (mut a, mut b) = (a as u128, b as u128);
    if a == 0 {
        return b as i128;
    }
    if b == 0 {
        return a as i128;
    }
    let shift = (a | b).trailing_zeros();
    a >>= a.trailing_zeros();
    loop {
        b >>= b.trailing_zeros();
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        b -= a;
        if b == 0 {
            return (a << shift) as i128;
        }
    }
}

/// Reduces `n/d` with `d > 0`; `None` if the result is not representable.
fn small(n: i128, d: i128) -> Option<Exact> {
    if n == i128::MIN {
        return None;
    }
    if d == 1 {
        return Some(Exact(Repr::Small { n, d }));
    }
    let g = gcd_i128(n.abs(), d);
    Some(Exact(Repr::Small { n: n / g, d: d / g }))
}

fn small_add(a: i128, b: i128, c: i128, d: i128) -> Option<Exact> {
    if b == d {
        return small(a.checked_add(c)?, b);
    }
    let g = gcd_i128(b, d);
    let (bg, dg) = (b / g, d / g);
    let n = a.checked_mul(dg)?.checked_add(c.checked_mul(bg)?)?;
    small(n, b.checked_mul(dg)?)
}

fn small_mul(a: i128, b: i128, c: i128, d: i128) -> Option<Exact> {
    let g1 = gcd_i128(a.abs(), d);
    let g2 = gcd_i128(c.abs(), b);
    let n = (a / g1).checked_mul(c / g2)?;
    let den = (b / g2).checked_mul(d / g1)?;
    small(n, den)
}

impl Exact {
    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        let (n, d) = if denom < 0 { (-(numer as i128), -(denom as i128)) } else { (numer as i128, denom as i128) };
        small(n, d).expect("i64 ratios always fit")
    }

    pub fn from_integer(n: i128) -> Self {
        small(n, 1).unwrap_or_else(|| Exact(Repr::Big(BigRational::from_integer(n.into()))))
    }

    pub fn from_ratio(r: BigRational) -> Self {
        let r = BigRational::new(r.numer().clone(), r.denom().clone());
        match (r.numer().to_i128(), r.denom().to_i128()) {
            (Some(n), Some(d)) if n != i128::MIN => Exact(Repr::Small { n, d }),
            _ => Exact(Repr::Big(r)),
        }
    }

    pub fn to_ratio(&self) -> BigRational {
        match &self.0 {
            Repr::Small { n, d } => BigRational::new_raw((*n).into(), (*d).into()),
            Repr::Big(r) => r.clone(),
        }
    }

    pub fn numer(&self) -> BigInt {
        match &self.0 {
            Repr::Small { n, .. } => (*n).into(),
            Repr::Big(r) => r.numer().clone(),
        }
    }

    pub fn denom(&self) -> BigInt {
        match &self.0 {
            Repr::Small { d, .. } => (*d).into(),
            Repr::Big(r) => r.denom().clone(),
        }
    }

    pub fn is_integer(&self) -> bool {
        match &self.0 {
            Repr::Small { d, .. } => *d == 1,
            Repr::Big(r) => r.is_integer(),
        }
    }

    /// Whether the value currently lives on the heap.
    pub fn is_big(&self) -> bool {
        matches!(self.0, Repr::Big(_))
    }

    fn add_ref(&self, rhs: &Exact) -> Exact {
        if let (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) = (&self.0, &rhs.0) {
            if let Some(r) = small_add(*a, *b, *c, *d) {
                return r;
            }
        }
        Exact::from_ratio(self.to_ratio() + rhs.to_ratio())
    }

    fn sub_ref(&self, rhs: &Exact) -> Exact {
        if let (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) = (&self.0, &rhs.0) {
            if let Some(r) = c.checked_neg().and_then(|c| small_add(*a, *b, c, *d)) {
                return r;
            }
        }
        Exact::from_ratio(self.to_ratio() - rhs.to_ratio())
    }

    fn signum(&self) -> i32 {
        match &self.0 {
            Repr::Small { n, .. } => n.signum() as i32,
            Repr::Big(r) => r.numer().signum().to_i32().unwrap_or(0),
        }
    }
}

impl PartialEq for Exact {
    fn eq(&self, other: &Self) -> bool {
        match (&self.0, &other.0) {
            (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) => a == c && b == d,
            (Repr::Big(x), Repr::Big(y)) => x == y,
            _ => false,
        }
    }
}

impl Eq for Exact {}

impl std::hash::Hash for Exact {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match &self.0 {
            Repr::Small { n, d } => (0u8, n, d).hash(state),
            Repr::Big(r) => (1u8, r).hash(state),
        }
    }
}

impl PartialOrd for Exact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Exact {
    fn cmp(&self, other: &Self) -> Ordering {
        if let (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) = (&self.0, &other.0) {
            if b == d {
                return a.cmp(c);
            }
            if let (Some(x), Some(y)) = (a.checked_mul(*d), c.checked_mul(*b)) {
                return x.cmp(&y);
            }
        }
        self.to_ratio().cmp(&other.to_ratio())
    }
}

impl fmt::Debug for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Repr::Small { n, d: 1 } => write!(f, "{n}"),
            Repr::Small { n, d } => write!(f, "{n}/{d}"),
            Repr::Big(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Repr::Big(r) => write!(f, "{}/{}", r.numer(), r.denom()),
        }
    }
}

impl Add for Exact {
    type Output = Exact;
    fn add(self, rhs: Exact) -> Exact {
        self.add_ref(&rhs)
    }
}

impl Sub for Exact {
    type Output = Exact;
    fn sub(self, rhs: Exact) -> Exact {
        self.sub_ref(&rhs)
    }
}

impl Neg for Exact {
    type Output = Exact;
    fn neg(self) -> Exact {
        match self.0 {
            Repr::Small { n, d } => Exact(Repr::Small { n: -n, d }),
            Repr::Big(r) => Exact::from_ratio(-r),
        }
    }
}

impl<'a> AddAssign<&'a Exact> for Exact {
    fn add_assign(&mut self, rhs: &'a Exact) {
        *self = self.add_ref(rhs);
    }
}

impl<'a> SubAssign<&'a Exact> for Exact {
    fn sub_assign(&mut self, rhs: &'a Exact) {
        *self = self.sub_ref(rhs);
    }
}

fn parse_bigint(text: &str) -> Result<BigInt, NumericError> {
    text.trim()
        .parse::<BigInt>()
        .map_err(|_| NumericError::Parse(text.to_string()))
}

/// Parses a decimal literal such as `0.25`, `-3`, `1e-3` or `2.5E2` exactly.
fn parse_decimal_exact(text: &str) -> Result<BigRational, NumericError> {
    let bad = || NumericError::Parse(text.to_string());
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => {
            let exp: i64 = text[pos + 1..].parse().map_err(|_| bad())?;
            (&text[..pos], exp)
        }
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: BigInt = digits.parse().map_err(|_| bad())?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10u32);
    let power = num_traits::pow(ten, scale.unsigned_abs() as usize);
    Ok(if scale >= 0 {
        BigRational::from_integer(numer * power)
    } else {
        BigRational::new(numer, power)
    })
}

impl FromStr for Exact {
    type Err = NumericError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let numer = parse_bigint(n)?;
            let denom = parse_bigint(d)?;
            if denom.is_zero() {
                return Err(NumericError::ZeroDenominator(text.to_string()));
            }
            Ok(Exact::from_ratio(BigRational::new(numer, denom)))
        } else {
            parse_decimal_exact(text).map(Exact::from_ratio)
        }
    }
}

impl Scalar for Exact {
    const MODE: Mode = Mode::Exact;

    fn zero() -> Self {
        Exact(Repr::Small { n: 0, d: 1 })
    }
    fn one() -> Self {
        Exact(Repr::Small { n: 1, d: 1 })
    }
    fn from_u64(n: u64) -> Self {
        Exact(Repr::Small { n: n as i128, d: 1 })
    }
    fn parse(text: &str) -> Result<Self, NumericError> {
        text.parse()
    }
    fn mul(&self, other: &Self) -> Self {
        if let (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) = (&self.0, &other.0) {
            if let Some(r) = small_mul(*a, *b, *c, *d) {
                return r;
            }
        }
        Exact::from_ratio(self.to_ratio() * other.to_ratio())
    }
    fn div(&self, other: &Self) -> Self {
        assert!(!other.is_zero(), "exact division by zero");
        if let (Repr::Small { n: a, d: b }, Repr::Small { n: c, d }) = (&self.0, &other.0) {
            let (rn, rd) = if *c < 0 { (-*d, -*c) } else { (*d, *c) };
            if let Some(r) = small_mul(*a, *b, rn, rd) {
                return r;
            }
        }
        Exact::from_ratio(self.to_ratio() / other.to_ratio())
    }
    fn abs(&self) -> Self {
        match &self.0 {
            Repr::Small { n, d } => Exact(Repr::Small { n: n.abs(), d: *d }),
            Repr::Big(r) => Exact::from_ratio(r.abs()),
        }
    }
    fn to_f64(&self) -> f64 {
        match &self.0 {
            Repr::Small { n, d } => *n as f64 / *d as f64,
            Repr::Big(r) => r.to_f64().unwrap_or(f64::NAN),
        }
    }
    fn floor_nonneg(&self) -> u64 {
        match &self.0 {
            Repr::Small { n, .. } if *n <= 0 => 0,
            Repr::Small { n, d } => u64::try_from(n / d).unwrap_or(u64::MAX),
            Repr::Big(r) if r.is_negative() => 0,
            Repr::Big(r) => r.numer().div_floor(r.denom()).to_u64().unwrap_or(u64::MAX),
        }
    }
    fn ceil_div(&self, den: &Self) -> Option<u64> {
        let q = self.div(den);
        match &q.0 {
            Repr::Small { n, .. } if *n <= 0 => Some(0),
            Repr::Small { n, d } => u64::try_from(n / d + i128::from(n % d != 0)).ok(),
            Repr::Big(r) if !r.is_positive() => Some(0),
            Repr::Big(r) => r.numer().div_ceil(r.denom()).to_u64(),
        }
    }
    fn is_zero(&self) -> bool {
        self.signum() == 0
    }
    fn is_negative(&self) -> bool {
        self.signum() < 0
    }
    fn is_positive(&self) -> bool {
        self.signum() > 0
    }
}

// ---------------------------------------------------------------------------
// Float

/// Finite binary64 value. NaN and infinities are rejected at construction,
/// so the total order below is sound for every value built through the
/// public API.
#[derive(Clone, Copy, PartialEq)]
pub struct Float(f64);

impl Float {
    pub fn new(v: f64) -> Result<Self, NumericError> {
        if v.is_finite() {
            // normalise -0.0 so that equality and display agree
            Ok(Float(v + 0.0))
        } else {
            Err(NumericError::NonFinite(v.to_string()))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Eq for Float {}

impl PartialOrd for Float {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Float {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .expect("incomparable float values (NaN) in float-mode run")
    }
}

impl fmt::Debug for Float {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Float {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Float {
    type Output = Float;
    fn add(self, rhs: Float) -> Float {
        Float(self.0 + rhs.0)
    }
}

impl Sub for Float {
    type Output = Float;
    fn sub(self, rhs: Float) -> Float {
        Float(self.0 - rhs.0)
    }
}

impl Neg for Float {
    type Output = Float;
    fn neg(self) -> Float {
        Float(-self.0 + 0.0)
    }
}

impl<'a> AddAssign<&'a Float> for Float {
    fn add_assign(&mut self, rhs: &'a Float) {
        self.0 += rhs.0;
    }
}

impl<'a> SubAssign<&'a Float> for Float {
    fn sub_assign(&mut self, rhs: &'a Float) {
        self.0 -= rhs.0;
    }
}

impl FromStr for Float {
    type Err = NumericError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        let bad = || NumericError::Parse(text.to_string());
        let v = if let Some((n, d)) = text.split_once('/') {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(NumericError::ZeroDenominator(text.to_string()));
            }
            n / d
        } else {
            text.parse::<f64>().map_err(|_| bad())?
        };
        Float::new(v)
    }
}

impl Scalar for Float {
    const MODE: Mode = Mode::Float;

    fn zero() -> Self {
        Float(0.0)
    }
    fn one() -> Self {
        Float(1.0)
    }
    fn from_u64(n: u64) -> Self {
        Float(n as f64)
    }
    fn parse(text: &str) -> Result<Self, NumericError> {
        text.parse()
    }
    fn mul(&self, other: &Self) -> Self {
        Float(self.0 * other.0)
    }
    fn div(&self, other: &Self) -> Self {
        assert!(other.0 != 0.0, "float division by zero");
        Float(self.0 / other.0)
    }
    fn abs(&self) -> Self {
        Float(self.0.abs())
    }
    fn to_f64(&self) -> f64 {
        self.0
    }
    fn floor_nonneg(&self) -> u64 {
        if self.0 <= 0.0 {
            0
        } else {
            self.0.floor() as u64
        }
    }
    fn ceil_div(&self, den: &Self) -> Option<u64> {
        let q = (self.0 / den.0).ceil();
        if q <= 0.0 {
            Some(0)
        } else if q < u64::MAX as f64 {
            Some(q as u64)
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Mode-tagged values

/// A mode-tagged number. Arithmetic between different modes is an error
/// rather than a silent conversion.
#[derive(Debug, Clone, PartialEq)]
pub enum Num {
    Exact(Exact),
    Float(Float),
}

/// Probability mass.
pub type Prob = Num;
/// Signed discrepancy (count minus expected count).
pub type Disc = Num;

impl Num {
    pub fn parse(mode: Mode, text: &str) -> Result<Num, NumericError> {
        Ok(match mode {
            Mode::Exact => Num::Exact(text.parse()?),
            Mode::Float => Num::Float(text.parse()?),
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Num::Exact(_) => Mode::Exact,
            Num::Float(_) => Mode::Float,
        }
    }

    pub fn add(&self, other: &Num) -> Result<Num, NumericError> {
        match (self, other) {
            (Num::Exact(a), Num::Exact(b)) => Ok(Num::Exact(a.clone() + b.clone())),
            (Num::Float(a), Num::Float(b)) => Ok(Num::Float(*a + *b)),
            _ => Err(NumericError::ModeMismatch(self.mode(), other.mode())),
        }
    }

    pub fn sub(&self, other: &Num) -> Result<Num, NumericError> {
        match (self, other) {
            (Num::Exact(a), Num::Exact(b)) => Ok(Num::Exact(a.clone() - b.clone())),
            (Num::Float(a), Num::Float(b)) => Ok(Num::Float(*a - *b)),
            _ => Err(NumericError::ModeMismatch(self.mode(), other.mode())),
        }
    }

    /// Exact mode compares rationals exactly; float mode is a raw IEEE
    /// comparison and reports NaN as [`NumericError::Incomparable`].
    pub fn try_cmp(&self, other: &Num) -> Result<Ordering, NumericError> {
        match (self, other) {
            (Num::Exact(a), Num::Exact(b)) => Ok(a.cmp(b)),
            (Num::Float(a), Num::Float(b)) => a
                .get()
                .partial_cmp(&b.get())
                .ok_or(NumericError::Incomparable),
            _ => Err(NumericError::ModeMismatch(self.mode(), other.mode())),
        }
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Exact(v) => v.fmt(f),
            Num::Float(v) => v.fmt(f),
        }
    }
}
