//! Exact multilinear intersection calculus for (k·D̄₁₀ + m·D̄₀₁)^{d+1}.

use std::collections::BTreeMap;
use std::fmt;

use num::bigint::{BigInt, BigUint};
use num::traits::{One, ToPrimitive, Zero};

use crate::rational::{binom, factorial, fmt_q, Q};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DegreeError {
    #[error("genus must be at least 1 (got {0})")]
    GenusZero(u64),
    #[error("normal form is not a single base term: {0}")]
    NotReduced(String),
    #[error("closed forms disagree: {0} vs {1}")]
    ClosedFormMismatch(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    /// pullback of the ω-divisor
    D10,
    /// the 𝓛-divisor
    D01,
    /// class of a generic fibre, after the fibre degree has been taken
    Fiber,
    /// Ē on the base
    Base,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symbol::D10 => "D10",
            Symbol::D01 => "D01",
            Symbol::Fiber => "F",
            Symbol::Base => "E",
        })
    }
}

pub type Monomial = BTreeMap<Symbol, BigUint>;

/// Polynomial in the symbols k, m with exact rational coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Poly(pub BTreeMap<(BigUint, BigUint), Q>);

impl Poly {
    pub fn constant(c: Q) -> Poly {
        Poly::km(c, BigUint::zero(), BigUint::zero())
    }

    pub fn km(c: Q, ek: BigUint, em: BigUint) -> Poly {
        let mut p = BTreeMap::new();
        if !c.is_zero() {
            p.insert((ek, em), c);
        }
        Poly(p)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&self, c: &Q) -> Poly {
        if c.is_zero() {
            return Poly::default();
        }
        Poly(self.0.iter().map(|(e, v)| (e.clone(), v * c)).collect())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.0.clone();
        for (e, v) in &o.0 {
            let x = r.entry(e.clone()).or_insert_with(Q::zero);
            *x += v;
            if x.is_zero() {
                r.remove(e);
            }
        }
        Poly(r)
    }

    /// Value with numeric k and m.
    pub fn eval(&self, k: &Q, m: &Q) -> Q {
        self.0
            .iter()
            .map(|((ek, em), c)| {
                let ek = ek.to_usize().expect("exponent fits");
                let em = em.to_usize().expect("exponent fits");
                c * num::pow(k.clone(), ek) * num::pow(m.clone(), em)
            })
            .sum()
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|((ek, em), c)| {
                let mut s = fmt_q(c);
                for (name, e) in [("k", ek), ("m", em)] {
                    if e.is_one() {
                        s.push_str(&format!("*{name}"));
                    } else if !e.is_zero() {
                        s.push_str(&format!("*{name}^{e}"));
                    }
                }
                s
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

/// k and m either symbolic or fixed rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Param {
    Symbolic,
    Value(Q),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub g: u64,
    pub d_prime: u64,
    pub d: u64,
}

impl Dims {
    pub fn new(g: u64) -> Result<Dims, DegreeError> {
        if g == 0 {
            return Err(DegreeError::GenusZero(g));
        }
        let d_prime = g * (g + 1) / 2;
        Ok(Dims { g, d_prime, d: d_prime + g })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntersectionExpr {
    pub dims: Dims,
    pub terms: BTreeMap<Monomial, Poly>,
}

impl IntersectionExpr {
    fn insert(&mut self, mono: Monomial, c: Poly) {
        let mono: Monomial = mono.into_iter().filter(|(_, e)| !e.is_zero()).collect();
        let cur = self.terms.remove(&mono).unwrap_or_default().add(&c);
        if !cur.is_zero() {
            self.terms.insert(mono, cur);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree_of(mono: &Monomial) -> BigUint {
        mono.iter()
            .filter(|(s, _)| matches!(s, Symbol::D10 | Symbol::D01))
            .map(|(_, e)| e.clone())
            .sum()
    }
}

impl fmt::Display for IntersectionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| {
                let mono: Vec<String> = m.iter().map(|(s, e)| if e.is_one() { s.to_string() } else { format!("{s}^{e}") }).collect();
                format!("({c})*{}", mono.join("*"))
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

fn pow2(e: u64) -> BigInt {
    num::pow(BigInt::from(2), e as usize)
}

fn coeff(c: BigInt, k: &Param, m: &Param, ek: u64, em: u64) -> Poly {
    let mut c = Q::from_integer(c);
    let (mut xk, mut xm) = (BigUint::from(ek), BigUint::from(em));
    if let Param::Value(v) = k {
        c *= num::pow(v.clone(), ek as usize);
        xk = BigUint::zero();
    }
    if let Param::Value(v) = m {
        c *= num::pow(v.clone(), em as usize);
        xm = BigUint::zero();
    }
    Poly::km(c, xk, xm)
}

/// Binomial expansion of (k·D̄₁₀ + m·D̄₀₁)^{d+1}.
pub fn expand(k: &Param, m: &Param, g: u64) -> Result<IntersectionExpr, DegreeError> {
    let dims = Dims::new(g)?;
    let n = dims.d + 1;
    let mut e = IntersectionExpr { dims, terms: BTreeMap::new() };
    for j in 0..=n {
        let mono: Monomial = [(Symbol::D10, BigUint::from(n - j)), (Symbol::D01, BigUint::from(j))].into_iter().collect();
        e.insert(mono, coeff(binom(n, j), k, m, n - j, j));
    }
    Ok(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewriteRule {
    Pullback2,
    DegreeScaling,
    Vanishing,
    FiberDegree,
    Projection,
}

/// Multiplier of a monomial under [2]*: D̄₁₀ is fixed and [2]*D̄₀₁ = 4·D̄₀₁.
fn pullback2_factor(mono: &Monomial) -> Option<BigInt> {
    if mono.keys().any(|s| !matches!(s, Symbol::D10 | Symbol::D01)) {
        return None;
    }
    let j = mono.get(&Symbol::D01).cloned().unwrap_or_default().to_u64()?;
    Some(pow2(2 * j))
}

/// deg [2] = 2^{2g} on the generic fibre.
fn degree_scaling_factor(dims: &Dims) -> BigInt {
    pow2(2 * dims.g)
}

/// One pass of `rule` over all monomials it applies to.
pub fn apply_rule(expr: &IntersectionExpr, rule: RewriteRule, log: &mut Vec<String>) -> IntersectionExpr {
    let dims = expr.dims;
    let mut out = IntersectionExpr { dims, terms: BTreeMap::new() };
    for (mono, c) in &expr.terms {
        match rule {
            RewriteRule::Vanishing => {
                if let Some(a) = pullback2_factor(mono) {
                    let b = degree_scaling_factor(&dims);
                    if a != b {
                        log.push(format!(
                            "vanishing: [2]^*X = {a}*X (pullback2) and [2]^*X = {b}*X (degree_scaling) for X = {}; hence X = 0",
                            IntersectionExpr { dims, terms: [(mono.clone(), Poly::constant(Q::one()))].into_iter().collect() }
                        ));
                        continue;
                    }
                }
                out.insert(mono.clone(), c.clone());
            }
            RewriteRule::FiberDegree => {
                let j = mono.get(&Symbol::D01).and_then(|e| e.to_u64());
                if j == Some(dims.g) {
                    let deg = pow2(dims.g) * factorial(dims.g);
                    log.push(format!("fiber_degree: D01^{} restricted to a fibre has degree 2^g*g! = {deg}", dims.g));
                    let mut m2 = mono.clone();
                    m2.remove(&Symbol::D01);
                    *m2.entry(Symbol::Fiber).or_default() += BigUint::one();
                    out.insert(m2, c.scale(&Q::from_integer(deg)));
                } else {
                    out.insert(mono.clone(), c.clone());
                }
            }
            RewriteRule::Projection => {
                let has_fiber = mono.get(&Symbol::Fiber).is_some_and(|e| e.is_one());
                let only_d10 = mono.keys().all(|s| matches!(s, Symbol::D10 | Symbol::Fiber));
                if has_fiber && only_d10 {
                    let a = mono.get(&Symbol::D10).cloned().unwrap_or_default();
                    log.push(format!("projection: D10^{a}*F = E^{a} on the base"));
                    let m2: Monomial = [(Symbol::Base, a)].into_iter().collect();
                    out.insert(m2, c.clone());
                } else {
                    out.insert(mono.clone(), c.clone());
                }
            }
            RewriteRule::Pullback2 | RewriteRule::DegreeScaling => {
                // evaluation rules; they only feed `Vanishing`
                if let Some(a) = pullback2_factor(mono) {
                    let name = if rule == RewriteRule::Pullback2 { "pullback2" } else { "degree_scaling" };
                    let v = if rule == RewriteRule::Pullback2 { a } else { degree_scaling_factor(&dims) };
                    log.push(format!("{name}: multiplier {v}"));
                }
                out.insert(mono.clone(), c.clone());
            }
        }
    }
    out
}

/// Apply the rules of `schedule` cyclically until nothing changes.
pub fn normal_form(expr: &IntersectionExpr, schedule: &[RewriteRule], log: &mut Vec<String>) -> IntersectionExpr {
    let mut cur = expr.clone();
    loop {
        let mut next = cur.clone();
        for r in schedule {
            next = apply_rule(&next, *r, log);
        }
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

pub fn apply_vanishing(expr: &IntersectionExpr, log: &mut Vec<String>) -> IntersectionExpr {
    let e = apply_rule(expr, RewriteRule::Pullback2, log);
    let e = apply_rule(&e, RewriteRule::DegreeScaling, log);
    apply_rule(&e, RewriteRule::Vanishing, log)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reduced {
    /// D̄^{d+1} = coefficient · Ē^{base_exponent}
    pub coefficient: Poly,
    pub base_exponent: BigUint,
}

/// Fibre degree and projection on a post-vanishing expression; checks the two closed forms.
pub fn reduce_to_base(expr: &IntersectionExpr, k: &Param, m: &Param, log: &mut Vec<String>) -> Result<Reduced, DegreeError> {
    let dims = expr.dims;
    let e = normal_form(expr, &[RewriteRule::FiberDegree, RewriteRule::Projection], log);
    let base_exp = BigUint::from(dims.d_prime + 1);
    let coefficient = match e.terms.len() {
        0 => Poly::default(),
        1 => {
            let (mono, c) = e.terms.iter().next().unwrap();
            let want: Monomial = [(Symbol::Base, base_exp.clone())].into_iter().collect();
            if *mono != want {
                return Err(DegreeError::NotReduced(e.to_string()));
            }
            c.clone()
        }
        _ => return Err(DegreeError::NotReduced(e.to_string())),
    };
    if !coefficient.is_zero() {
        let lhs = binom(dims.d + 1, dims.g) * pow2(dims.g) * factorial(dims.g);
        let rhs = factorial(dims.d + 1) / factorial(dims.d_prime + 1) * pow2(dims.g);
        if lhs != rhs {
            return Err(DegreeError::ClosedFormMismatch(lhs.to_string(), rhs.to_string()));
        }
        let closed = coeff(rhs.clone(), k, m, dims.d_prime + 1, dims.g);
        if closed != coefficient {
            return Err(DegreeError::ClosedFormMismatch(coefficient.to_string(), closed.to_string()));
        }
        log.push(format!(
            "closed form: binom({}, {})*2^{}*{}! = ({})!/({})!*2^{} = {rhs}",
            dims.d + 1,
            dims.g,
            dims.g,
            dims.g,
            dims.d + 1,
            dims.d_prime + 1,
            dims.g
        ));
    }
    Ok(Reduced { coefficient, base_exponent: base_exp })
}

/// Geometric 2^g·d!/d′! and arithmetic 2^g·(d+1)!/(d′+1)! coefficients.
pub fn geometric_coefficient(g: u64) -> Result<(Q, Q), DegreeError> {
    let dims = Dims::new(g)?;
    let geo = pow2(g) * factorial(dims.d) / factorial(dims.d_prime);
    let ari = pow2(g) * factorial(dims.d + 1) / factorial(dims.d_prime + 1);
    Ok((Q::from_integer(geo), Q::from_integer(ari)))
}

/// Full replay: expand, vanish, reduce. Returns the coefficient of Ē^{d′+1} and the log.
pub fn replay(g: u64, k: &Param, m: &Param) -> Result<(Reduced, Vec<String>), DegreeError> {
    let mut log = Vec::new();
    let e = expand(k, m, g)?;
    log.push(format!("expand g={g}: {e}"));
    let v = apply_vanishing(&e, &mut log);
    log.push(format!("after vanishing: {v}"));
    let r = reduce_to_base(&v, k, m, &mut log)?;
    log.push(format!("result: ({})*E^{}", r.coefficient, r.base_exponent));
    Ok((r, log))
}
