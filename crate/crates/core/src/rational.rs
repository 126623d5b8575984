//! Exact rational helpers, p-adic valuations and exact `r + Σ c_p log p` values.

use std::collections::BTreeMap;
use std::fmt;

use num::bigint::{BigInt, BigUint, Sign};
use num::rational::BigRational;
use num::traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Q = BigRational;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot parse rational from {0:?}")]
pub struct ParseRationalError(pub String);

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn parse_q(s: &str) -> Result<Q, ParseRationalError> {
    let s = s.trim();
    let err = || ParseRationalError(s.to_string());
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        Ok(Q::new(n, d))
    } else if let Some((ip, fp)) = s.split_once('.') {
        // finite decimal, e.g. "0.25" or "-1.5"
        let neg = ip.starts_with('-');
        let ip = ip.trim_start_matches(['-', '+']);
        if fp.is_empty() || !fp.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let digits: BigInt = format!("{}{}", if ip.is_empty() { "0" } else { ip }, fp)
            .parse()
            .map_err(|_| err())?;
        let den = num::pow(BigInt::from(10), fp.len());
        let v = Q::new(digits, den);
        Ok(if neg { -v } else { v })
    } else {
        let n: BigInt = s.parse().map_err(|_| err())?;
        Ok(Q::from_integer(n))
    }
}

pub fn fmt_q(x: &Q) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Float with 17 significant digits, round-trip safe.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn to_f64(x: &Q) -> f64 {
    if let (Some(n), Some(d)) = (x.numer().to_f64(), x.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational value of a finite float.
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).expect("finite float")
}

pub fn qmax(a: &Q, b: &Q) -> Q {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn qmin(a: &Q, b: &Q) -> Q {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

pub fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |a, i| a * BigInt::from(i))
}

fn vp_int(p: u64, n: &BigInt) -> i64 {
    let p = BigInt::from(p);
    let mut n = n.abs();
    let mut k = 0;
    while (&n % &p).is_zero() {
        n /= &p;
        k += 1;
    }
    k
}

/// p-adic valuation of a nonzero rational.
pub fn vp(p: u64, x: &Q) -> i64 {
    assert!(!x.is_zero(), "valuation of zero");
    vp_int(p, x.numer()) - vp_int(p, x.denom())
}

/// Prime factorization by trial division.
pub fn factor(n: &BigUint) -> Vec<(BigUint, u32)> {
    let mut out = Vec::new();
    let mut n = n.clone();
    if n.is_zero() {
        return out;
    }
    let mut d = BigUint::from(2u32);
    while &d * &d <= n {
        let mut e = 0;
        while (&n % &d).is_zero() {
            n /= &d;
            e += 1;
        }
        if e > 0 {
            out.push((d.clone(), e));
        }
        d += if d == BigUint::from(2u32) { 1u32 } else { 2u32 };
    }
    if n > BigUint::one() {
        out.push((n, 1));
    }
    out
}

pub fn primes_of(x: &Q) -> Vec<u64> {
    let mut ps: Vec<u64> = factor(&x.numer().magnitude().clone())
        .into_iter()
        .chain(factor(&x.denom().magnitude().clone()))
        .map(|(p, _)| p.to_u64().expect("prime fits in u64"))
        .collect();
    ps.sort_unstable();
    ps.dedup();
    ps
}

pub fn is_prime(p: u64) -> bool {
    p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| p % d != 0)
}

/// Exact real `rat + Σ_p coef_p · log p` over primes p.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LogLinear {
    pub rat: Q,
    pub logs: BTreeMap<u64, Q>,
}

impl LogLinear {
    pub fn zero() -> Self {
        Self { rat: Q::zero(), logs: BTreeMap::new() }
    }

    pub fn rational(r: Q) -> Self {
        Self { rat: r, logs: BTreeMap::new() }
    }

    pub fn log_prime(p: u64, c: Q) -> Self {
        let mut s = Self::zero();
        s.add_log(p, c);
        s
    }

    /// log|x| for nonzero rational x.
    pub fn log_abs(x: &Q) -> Self {
        assert!(!x.is_zero(), "log of zero");
        let mut s = Self::zero();
        for (p, e) in factor(x.numer().magnitude()) {
            s.add_log(p.to_u64().unwrap(), qi(e as i64));
        }
        for (p, e) in factor(x.denom().magnitude()) {
            s.add_log(p.to_u64().unwrap(), qi(-(e as i64)));
        }
        s
    }

    fn add_log(&mut self, p: u64, c: Q) {
        let e = self.logs.entry(p).or_insert_with(Q::zero);
        *e += c;
        if e.is_zero() {
            self.logs.remove(&p);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rat.is_zero() && self.logs.is_empty()
    }

    pub fn is_rational(&self) -> bool {
        self.logs.is_empty()
    }

    pub fn scale(&self, c: &Q) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Self {
            rat: &self.rat * c,
            logs: self.logs.iter().map(|(p, v)| (*p, v * c)).collect(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        // sum small terms first for stability
        let mut terms: Vec<f64> = self
            .logs
            .iter()
            .map(|(p, c)| to_f64(c) * (*p as f64).ln())
            .collect();
        terms.push(to_f64(&self.rat));
        terms.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        terms.iter().sum()
    }
}

impl std::ops::Add for &LogLinear {
    type Output = LogLinear;
    fn add(self, o: &LogLinear) -> LogLinear {
        let mut s = self.clone();
        s.rat += &o.rat;
        for (p, c) in &o.logs {
            s.add_log(*p, c.clone());
        }
        s
    }
}

impl std::ops::Sub for &LogLinear {
    type Output = LogLinear;
    fn sub(self, o: &LogLinear) -> LogLinear {
        self + &o.scale(&qi(-1))
    }
}

impl std::ops::AddAssign<&LogLinear> for LogLinear {
    fn add_assign(&mut self, o: &LogLinear) {
        *self = &*self + o;
    }
}

impl fmt::Display for LogLinear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.rat.is_zero() || self.logs.is_empty() {
            parts.push(fmt_q(&self.rat));
        }
        for (p, c) in &self.logs {
            parts.push(format!("{}*log({})", fmt_q(c), p));
        }
        write!(f, "{}", parts.join(" + "))
    }
}

/// Value that is either exact or a float estimate.
#[derive(Clone, Debug, PartialEq)]
pub enum ExtReal {
    Exact(Q),
    Approx(f64),
    NegInfinity,
}

impl ExtReal {
    pub fn to_f64(&self) -> f64 {
        match self {
            ExtReal::Exact(q) => to_f64(q),
            ExtReal::Approx(x) => *x,
            ExtReal::NegInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn exact(&self) -> Option<&Q> {
        match self {
            ExtReal::Exact(q) => Some(q),
            _ => None,
        }
    }

    pub fn is_neg_infinity(&self) -> bool {
        matches!(self, ExtReal::NegInfinity)
    }

    pub fn add(&self, o: &ExtReal) -> ExtReal {
        match (self, o) {
            (ExtReal::NegInfinity, _) | (_, ExtReal::NegInfinity) => ExtReal::NegInfinity,
            (ExtReal::Exact(a), ExtReal::Exact(b)) => ExtReal::Exact(a + b),
            _ => ExtReal::Approx(self.to_f64() + o.to_f64()),
        }
    }

    pub fn scale(&self, c: &Q) -> ExtReal {
        match self {
            ExtReal::Exact(a) => ExtReal::Exact(a * c),
            ExtReal::Approx(x) => ExtReal::Approx(x * to_f64(c)),
            ExtReal::NegInfinity if c.is_positive() => ExtReal::NegInfinity,
            ExtReal::NegInfinity if c.is_zero() => ExtReal::Exact(Q::zero()),
            ExtReal::NegInfinity => ExtReal::Approx(f64::INFINITY),
        }
    }

    pub fn render(&self) -> String {
        match self {
            ExtReal::Exact(q) => fmt_q(q),
            ExtReal::Approx(x) => fmt_f64(*x),
            ExtReal::NegInfinity => "-inf".into(),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn sign_of(x: &Q) -> Sign {
    x.numer().sign()
}

/// serde adapters: rationals as "p/q" strings.
pub mod serde_q {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let s = RatRepr::deserialize(d)?;
        s.into_q().map_err(serde::de::Error::custom)
    }

    /// Accepts "p/q" strings and plain integers.
    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum RatRepr {
        S(String),
        I(i64),
    }

    impl RatRepr {
        pub(crate) fn into_q(self) -> Result<Q, ParseRationalError> {
            match self {
                RatRepr::S(s) => parse_q(&s),
                RatRepr::I(i) => Ok(qi(i)),
            }
        }
    }
}

pub mod serde_vec_q {
    use super::serde_q::RatRepr;
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[Q], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<String> = xs.iter().map(fmt_q).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Q>, D::Error> {
        let v = Vec::<RatRepr>::deserialize(d)?;
        v.into_iter()
            .map(|r| r.into_q().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_roundtrip() {
        for s in ["0", "-1/2", "7", "3/4", "-12/5"] {
            assert_eq!(fmt_q(&parse_q(s).unwrap()), s);
        }
        assert_eq!(parse_q("2/4").unwrap(), q(1, 2));
        assert_eq!(parse_q("-1.25").unwrap(), q(-5, 4));
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("abc").is_err());
    }

    #[test]
    fn valuations() {
        assert_eq!(vp(2, &qi(4)), 2);
        assert_eq!(vp(2, &q(3, 8)), -3);
        assert_eq!(vp(3, &qi(5)), 0);
    }

    #[test]
    fn log_abs_is_exact() {
        let l = LogLinear::log_abs(&q(12, 5));
        assert_eq!(l.logs[&2], qi(2));
        assert_eq!(l.logs[&3], qi(1));
        assert_eq!(l.logs[&5], qi(-1));
        assert!((l.to_f64() - (12.0f64 / 5.0).ln()).abs() < 1e-14);
        let z = &l - &LogLinear::log_abs(&q(12, 5));
        assert!(z.is_zero());
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(6, 2), BigInt::from(15));
        assert_eq!(factorial(5), BigInt::from(120));
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
