//! Model and adelic arithmetic divisors on ℙ¹ over ℚ.
//!
//! Archimedean Green function: g_∞(z) = u(log|z|²) + κ − Σ_{a finite} m_a log|z−a|²
//! with u piecewise linear, u' ∈ [0, deg D] at the ends. At a prime p,
//! g_p = g^can_p + μ_p + Σ deviations, in units of log p; heights and pairings
//! weight place p by 2·log p to match the log|·|² normalization at ∞.

use std::collections::{BTreeMap, BTreeSet};

use num::traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::berkovich::{gromov, pole_depth, union_tree, BerkTree, Point, TreeDivisor, TreeError, TreeFunction, TypeII};
use crate::energy::{full_mass_check, mixed_relative_energy, AdditivePshTuple, EnergyError};
use crate::psh1d::{ConvexProfile, Pl, ProfileError};
use crate::rational::{fmt_q, primes_of, qi, to_f64, vp, ExtReal, LogLinear, Q};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdelicError {
    #[error("supports meet at {0}")]
    SupportsNotDisjoint(Point),
    #[error("tolerance not reached within {0} terms")]
    ToleranceNotReached(usize),
    #[error("sandwich unverifiable: {0}")]
    SandwichUnverifiable(String),
    #[error("pullback by z^n needs support in {{0, inf}} and no deviations")]
    RamificationUnsupported,
    #[error("full-mass check fails")]
    FullMassFails,
    #[error("pole at {0}")]
    PoleAtPoint(Point),
    #[error("profile: {0}")]
    BadProfile(String),
    #[error("terms {0} and {1} are {2} apart, above the declared tail")]
    NotCauchy(usize, usize, String),
    #[error("boundary divisor: {0}")]
    BadBoundary(String),
    #[error("divisors do not share geometric and finite data")]
    NotComparable,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// c · Π (z − a)^{m_a}
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFunction {
    pub c: Q,
    pub factors: Vec<(Q, i64)>,
}

impl RationalFunction {
    pub fn new(c: Q, factors: Vec<(Q, i64)>) -> Result<RationalFunction, AdelicError> {
        if c.is_zero() {
            return Err(AdelicError::Invalid("leading coefficient must be nonzero".into()));
        }
        for (i, (a, _)) in factors.iter().enumerate() {
            if factors[..i].iter().any(|(b, _)| b == a) {
                return Err(AdelicError::Invalid(format!("repeated root {}", fmt_q(a))));
            }
        }
        Ok(RationalFunction { c, factors })
    }

    pub fn divisor(&self) -> TreeDivisor {
        let mut terms: Vec<(Point, Q)> = self.factors.iter().map(|(a, m)| (Point::Finite(a.clone()), qi(*m))).collect();
        let total: i64 = self.factors.iter().map(|f| f.1).sum();
        terms.push((Point::Infinity, qi(-total)));
        TreeDivisor::new(terms)
    }

    pub fn eval(&self, x: &Q) -> Option<Q> {
        let mut v = self.c.clone();
        for (a, m) in &self.factors {
            let d = x - a;
            if d.is_zero() {
                return None;
            }
            v *= num::pow::pow(d.clone(), m.unsigned_abs() as usize).pipe(|w| if *m < 0 { w.recip() } else { w });
        }
        Some(v)
    }
}

trait Pipe: Sized {
    fn pipe<R>(self, f: impl FnOnce(Self) -> R) -> R {
        f(self)
    }
}
impl<T> Pipe for T {}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArithDivisor {
    points: TreeDivisor,
    vertical: BTreeMap<u64, Q>,
    profile: Pl,
    kappa: LogLinear,
    deviations: BTreeMap<u64, Vec<TreeFunction>>,
}

fn finite_mults(d: &TreeDivisor) -> impl Iterator<Item = (&Q, &Q)> {
    d.terms.iter().filter_map(|(x, m)| x.as_finite().map(|a| (a, m)))
}

impl ModelArithDivisor {
    /// Geometric part plus archimedean profile; canonical at every prime.
    pub fn new(points: TreeDivisor, profile: Pl, kappa: LogLinear) -> Result<ModelArithDivisor, AdelicError> {
        if !profile.sigma_minus().is_zero() {
            return Err(AdelicError::BadProfile(format!("slope at -inf is {}, expected 0", fmt_q(profile.sigma_minus()))));
        }
        if *profile.sigma_plus() != points.degree() {
            return Err(AdelicError::BadProfile(format!(
                "slope at +inf is {}, expected the degree {}",
                fmt_q(profile.sigma_plus()),
                fmt_q(&points.degree())
            )));
        }
        Ok(ModelArithDivisor { points, vertical: BTreeMap::new(), profile, kappa, deviations: BTreeMap::new() })
    }

    pub fn zero() -> ModelArithDivisor {
        ModelArithDivisor::new(TreeDivisor::default(), Pl::constant(Q::zero()), LogLinear::zero()).unwrap()
    }

    /// ([∞], max(0, t)), canonical at every prime; heights are 2·h_Weil.
    pub fn fs_surrogate() -> ModelArithDivisor {
        ModelArithDivisor::new(
            TreeDivisor::new(vec![(Point::Infinity, qi(1))]),
            Pl::max_affine(&[(Q::zero(), Q::zero()), (qi(1), Q::zero())]),
            LogLinear::zero(),
        )
        .unwrap()
    }

    /// div̂(f) = (div f, −log|f|²), with matching vertical parts so that
    /// g_p(x) = v_p(f(x)).
    pub fn principal(f: &RationalFunction) -> ModelArithDivisor {
        let mut d = ModelArithDivisor::new(f.divisor(), Pl::constant(Q::zero()), LogLinear::log_abs(&f.c).scale(&qi(-2)))
            .expect("degree zero");
        let mut ps: BTreeSet<u64> = primes_of(&f.c).into_iter().collect();
        for (a, _) in &f.factors {
            if !a.is_zero() {
                ps.extend(primes_of(a));
            }
        }
        for p in ps {
            let mut mu = qi(vp(p, &f.c));
            for (a, m) in &f.factors {
                mu -= qi(*m) * pole_depth(p, a);
            }
            d = d.with_vertical(p, mu);
        }
        d
    }

    pub fn with_vertical(mut self, p: u64, mu: Q) -> ModelArithDivisor {
        let e = self.vertical.entry(p).or_insert_with(Q::zero);
        *e += mu;
        if e.is_zero() {
            self.vertical.remove(&p);
        }
        self
    }

    /// Deviations must be constant toward the leaves.
    pub fn with_deviation(mut self, f: TreeFunction) -> Result<ModelArithDivisor, AdelicError> {
        if f.ray_slopes().iter().any(|s| !s.is_zero()) {
            return Err(AdelicError::Invalid("deviation must be constant toward the leaves".into()));
        }
        self.deviations.entry(f.tree().p()).or_default().push(f);
        Ok(self)
    }

    pub fn points(&self) -> &TreeDivisor {
        &self.points
    }

    pub fn vertical(&self) -> &BTreeMap<u64, Q> {
        &self.vertical
    }

    pub fn profile(&self) -> &Pl {
        &self.profile
    }

    pub fn kappa(&self) -> &LogLinear {
        &self.kappa
    }

    pub fn deviations(&self) -> &BTreeMap<u64, Vec<TreeFunction>> {
        &self.deviations
    }

    pub fn degree(&self) -> Q {
        self.points.degree()
    }

    pub fn with_profile(&self, profile: Pl) -> Result<ModelArithDivisor, AdelicError> {
        let mut d = ModelArithDivisor::new(self.points.clone(), profile, self.kappa.clone())?;
        d.vertical = self.vertical.clone();
        d.deviations = self.deviations.clone();
        Ok(d)
    }

    /// g ↦ g − c at the archimedean place.
    pub fn shift_green(&self, c: &LogLinear) -> ModelArithDivisor {
        let mut d = self.clone();
        d.kappa = &d.kappa - c;
        d
    }

    pub fn add(&self, o: &ModelArithDivisor) -> ModelArithDivisor {
        let mut points = self.points.clone();
        for (x, m) in &o.points.terms {
            points.add_term(x.clone(), m.clone());
        }
        let mut d = ModelArithDivisor {
            points,
            vertical: self.vertical.clone(),
            profile: self.profile.add(&o.profile),
            kappa: &self.kappa + &o.kappa,
            deviations: self.deviations.clone(),
        };
        for (p, mu) in &o.vertical {
            d = d.with_vertical(*p, mu.clone());
        }
        for (p, fs) in &o.deviations {
            d.deviations.entry(*p).or_default().extend(fs.iter().cloned());
        }
        d
    }

    pub fn scale(&self, c: &Q) -> ModelArithDivisor {
        if c.is_zero() {
            return ModelArithDivisor::zero();
        }
        ModelArithDivisor {
            points: TreeDivisor::new(self.points.terms.iter().map(|(x, m)| (x.clone(), m * c)).collect()),
            vertical: self.vertical.iter().map(|(p, m)| (*p, m * c)).collect(),
            profile: self.profile.scale(c),
            kappa: self.kappa.scale(c),
            deviations: self.deviations.iter().map(|(p, fs)| (*p, fs.iter().map(|f| f.scale(c)).collect())).collect(),
        }
    }

    pub fn sub(&self, o: &ModelArithDivisor) -> ModelArithDivisor {
        self.add(&o.scale(&-Q::one()))
    }

    /// Primes at which the finite-place data can be non-canonical or where
    /// the support has non-integral coordinates.
    pub fn primes(&self) -> BTreeSet<u64> {
        let mut s: BTreeSet<u64> = self.vertical.keys().copied().collect();
        s.extend(self.deviations.keys().copied());
        for (a, _) in finite_mults(&self.points) {
            if !a.is_zero() {
                s.extend(primes_of(a));
            }
        }
        s
    }

    fn check_off_support(&self, x: &Point) -> Result<(), AdelicError> {
        if self.points.multiplicity(x).is_zero() {
            Ok(())
        } else {
            Err(AdelicError::PoleAtPoint(x.clone()))
        }
    }

    /// u at an exact real t = r + Σ c_p log p.
    fn u_at(&self, t: &LogLinear) -> LogLinear {
        let u = &self.profile;
        let piece = if t.is_rational() {
            u.breakpoints().partition_point(|b| *b < t.rat)
        } else {
            let tf = t.to_f64();
            u.breakpoints().partition_point(|b| to_f64(b) < tf)
        };
        let (s, c) = u.piece_line(piece);
        &t.scale(&s) + &LogLinear::rational(c)
    }

    pub fn green_inf(&self, x: &Point) -> Result<LogLinear, AdelicError> {
        self.check_off_support(x)?;
        let ((_, c_minus), (_, c_plus)) = self.profile.end_lines();
        Ok(match x {
            Point::Infinity => &LogLinear::rational(c_plus) + &self.kappa,
            Point::Finite(z) if z.is_zero() => {
                let mut v = &LogLinear::rational(c_minus) + &self.kappa;
                for (a, m) in finite_mults(&self.points) {
                    v = &v - &LogLinear::log_abs(a).scale(&(m * qi(2)));
                }
                v
            }
            Point::Finite(z) => {
                let t = LogLinear::log_abs(z).scale(&qi(2));
                let mut v = &self.u_at(&t) + &self.kappa;
                for (a, m) in finite_mults(&self.points) {
                    v = &v - &LogLinear::log_abs(&(z - a)).scale(&(m * qi(2)));
                }
                v
            }
        })
    }

    pub fn green_inf_f64(&self, re: f64, im: f64) -> f64 {
        let t = (re * re + im * im).ln();
        let mut v = self.profile.eval_f64(t) + self.kappa.to_f64();
        for (a, m) in finite_mults(&self.points) {
            let dr = re - to_f64(a);
            v -= to_f64(m) * (dr * dr + im * im).ln();
        }
        v
    }

    /// Circle average of g_∞ over |z|² = e^b (Jensen).
    pub fn circle_average(&self, b: &Q) -> LogLinear {
        let mut v = &LogLinear::rational(self.profile.eval(b)) + &self.kappa;
        for (a, m) in finite_mults(&self.points) {
            let l = if a.is_zero() {
                LogLinear::rational(b.clone())
            } else {
                let la = LogLinear::log_abs(a).scale(&qi(2));
                let bigger = if la.is_rational() { la.rat > *b } else { la.to_f64() > to_f64(b) };
                if bigger {
                    la
                } else {
                    LogLinear::rational(b.clone())
                }
            };
            v = &v - &l.scale(m);
        }
        v
    }

    fn residual_p(&self, p: u64, x: &TypeII) -> Q {
        let mut v = self.vertical.get(&p).cloned().unwrap_or_else(Q::zero);
        for f in self.deviations.get(&p).into_iter().flatten() {
            v += f.eval_type2(x);
        }
        v
    }

    /// g_p at a type-II point, units of log p.
    pub fn green_p_type2(&self, p: u64, x: &TypeII) -> Q {
        let can: Q = self.points.terms.iter().map(|(a, m)| m * x.meet(p, a)).sum();
        can + self.residual_p(p, x)
    }

    pub fn green_p(&self, p: u64, x: &Point) -> Result<Q, AdelicError> {
        self.check_off_support(x)?;
        let mut v = self.vertical.get(&p).cloned().unwrap_or_else(Q::zero);
        for (a, m) in &self.points.terms {
            v += m * gromov(p, x, a).expect("off support");
        }
        for f in self.deviations.get(&p).into_iter().flatten() {
            v += f.eval(x)?;
        }
        Ok(v)
    }

    /// Laplacian of the non-canonical part at p: (type-II point, mass).
    fn residual_laplacian(&self, p: u64) -> Vec<(TypeII, Q)> {
        let mut out = Vec::new();
        for f in self.deviations.get(&p).into_iter().flatten() {
            for v in 0..f.tree().vertices().len() {
                let m = f.laplacian_at(v);
                if !m.is_zero() {
                    out.push((f.tree().type2(v), m));
                }
            }
        }
        out
    }

    /// Δg_p ≥ 0 at every vertex of the deviation skeleta (canonical part adds deg·δ_ζ).
    pub fn finite_places_psh(&self) -> bool {
        self.deviations.keys().all(|&p| {
            let mut mass: BTreeMap<String, Q> = BTreeMap::new();
            for (pt, m) in self.residual_laplacian(p) {
                let key = if pt.depth.is_zero() { "zeta".to_string() } else { format!("{}@{}", fmt_q(&pt.depth), pt.rep) };
                *mass.entry(key).or_insert_with(Q::zero) += m;
            }
            let deg = self.degree();
            mass.iter().all(|(k, m)| if k == "zeta" { !(m + &deg).is_negative() } else { !m.is_negative() })
        })
    }
}

fn pair_primes(a: &ModelArithDivisor, b: &ModelArithDivisor) -> BTreeSet<u64> {
    let mut s = a.primes();
    s.extend(b.primes());
    for (x, _) in finite_mults(&a.points) {
        for (y, _) in finite_mults(&b.points) {
            let d = x - y;
            if !d.is_zero() {
                s.extend(primes_of(&d));
            }
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeightValue {
    #[serde(serialize_with = "ser_loglinear")]
    pub exact: LogLinear,
    pub value: f64,
}

fn ser_loglinear<S: serde::Serializer>(x: &LogLinear, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

/// h(x) = g_∞(x) + Σ_p 2·log p·g_p(x).
pub fn height(x: &Point, d: &ModelArithDivisor) -> Result<HeightValue, AdelicError> {
    let mut h = d.green_inf(x)?;
    let mut ps = d.primes();
    if let Point::Finite(z) = x {
        if !z.is_zero() {
            ps.extend(primes_of(z));
        }
        for (a, _) in finite_mults(&d.points) {
            let diff = z - a;
            if !diff.is_zero() {
                ps.extend(primes_of(&diff));
            }
        }
    }
    for p in ps {
        let g = d.green_p(p, x)?;
        h += &LogLinear::log_prime(p, g * qi(2));
    }
    let value = h.to_f64();
    Ok(HeightValue { exact: h, value })
}

/// D̄₀·D̄₁ for disjoint supports:
/// Σ_j b_j g₀(q_j) + ∫ g₁ ω₀ at ∞, plus Σ_p 2 log p [Σ_j b_j g₀,p(q_j) + ∫ g₁,p ω₀,p].
pub fn pairing(d0: &ModelArithDivisor, d1: &ModelArithDivisor) -> Result<LogLinear, AdelicError> {
    for (x, _) in &d1.points.terms {
        if !d0.points.multiplicity(x).is_zero() {
            return Err(AdelicError::SupportsNotDisjoint(x.clone()));
        }
    }
    let mut total = LogLinear::zero();
    for (q, b) in &d1.points.terms {
        total += &d0.green_inf(q)?.scale(b);
    }
    let u = &d0.profile;
    let slopes = u.slopes();
    for (i, bp) in u.breakpoints().iter().enumerate() {
        let mass = &slopes[i + 1] - &slopes[i];
        total += &d1.circle_average(bp).scale(&mass);
    }
    let deg0 = d0.degree();
    for p in pair_primes(d0, d1) {
        let mut s = Q::zero();
        for (q, b) in &d1.points.terms {
            s += b * d0.green_p(p, q)?;
        }
        s += &deg0 * d1.green_p_type2(p, &TypeII::gauss());
        for (pt, m) in d0.residual_laplacian(p) {
            s += m * d1.green_p_type2(p, &pt);
        }
        total += &LogLinear::log_prime(p, s * qi(2));
    }
    Ok(total)
}

/// Extended real used for norms.
#[derive(Clone, Debug, PartialEq)]
pub enum Norm {
    Exact(Q),
    Approx(f64),
    Infinite,
}

impl Norm {
    pub fn to_f64(&self) -> f64 {
        match self {
            Norm::Exact(q) => to_f64(q),
            Norm::Approx(x) => *x,
            Norm::Infinite => f64::INFINITY,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Norm::Exact(q) => fmt_q(q),
            Norm::Approx(x) => crate::rational::fmt_f64(*x),
            Norm::Infinite => "inf".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Ratio {
    Exact(Q),
    Approx(f64),
    PosInf,
    NegInf,
}

impl Ratio {
    fn to_f64(&self) -> f64 {
        match self {
            Ratio::Exact(q) => to_f64(q),
            Ratio::Approx(x) => *x,
            Ratio::PosInf => f64::INFINITY,
            Ratio::NegInf => f64::NEG_INFINITY,
        }
    }
}

fn discrete_ratio(d: &Q, b: &Q) -> Option<Ratio> {
    if b.is_positive() {
        Some(Ratio::Exact(d / b))
    } else if d.is_zero() {
        None
    } else if d.is_positive() {
        Some(Ratio::PosInf)
    } else {
        Some(Ratio::NegInf)
    }
}

/// Effective boundary divisor with g_B ≥ η > 0 away from its support.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDivisor {
    div: ModelArithDivisor,
    moved: ModelArithDivisor,
    eta: Q,
    self_pairing: f64,
}

/// Log radii used for archimedean comparisons.
pub const NORM_RADII: usize = 512;
const NORM_ANGLES: usize = 32;
const NORM_T: f64 = 30.0;

impl BoundaryDivisor {
    /// `mover` separates B from itself: B̄·B̄ is computed as B̄·(B̄ + div̂ f).
    pub fn new(div: ModelArithDivisor, eta: Q, mover: &RationalFunction) -> Result<BoundaryDivisor, AdelicError> {
        if div.points.terms.iter().any(|(_, m)| !m.is_positive()) {
            return Err(AdelicError::BadBoundary("geometric part must be effective and nonzero".into()));
        }
        if div.vertical.values().any(|m| m.is_negative()) {
            return Err(AdelicError::BadBoundary("vertical part must be effective".into()));
        }
        if !eta.is_positive() {
            return Err(AdelicError::BadBoundary("eta must be positive".into()));
        }
        let etaf = to_f64(&eta);
        for (re, im) in arch_grid(&div, &div) {
            if div.green_inf_f64(re, im) < etaf {
                return Err(AdelicError::BadBoundary(format!("g_B < eta near ({re:.3e}, {im:.3e})")));
            }
        }
        let moved = div.add(&ModelArithDivisor::principal(mover));
        let self_pairing = pairing(&div, &moved)?.to_f64();
        Ok(BoundaryDivisor { div, moved, eta, self_pairing })
    }

    pub fn divisor(&self) -> &ModelArithDivisor {
        &self.div
    }

    pub fn eta(&self) -> &Q {
        &self.eta
    }

    pub fn self_pairing(&self) -> f64 {
        self.self_pairing
    }

    /// |B̄·X̄|, through B̄ + div̂ f when X̄ meets the support of B̄.
    pub fn pairing_abs(&self, x: &ModelArithDivisor) -> Result<f64, AdelicError> {
        match pairing(&self.div, x) {
            Err(AdelicError::SupportsNotDisjoint(_)) => Ok(pairing(&self.moved, x)?.to_f64().abs()),
            other => Ok(other?.to_f64().abs()),
        }
    }
}

fn radial(d: &ModelArithDivisor) -> bool {
    finite_mults(&d.points).all(|(a, _)| a.is_zero())
}

/// Sample points: circles about the origin and about each finite support point.
fn arch_grid(d: &ModelArithDivisor, b: &ModelArithDivisor) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut centers: Vec<f64> = Vec::new();
    for (a, _) in finite_mults(&d.points).chain(finite_mults(&b.points)) {
        let af = to_f64(a);
        if af != 0.0 && !centers.contains(&af) {
            centers.push(af);
        }
    }
    let mut ts: Vec<f64> =
        (0..NORM_RADII).map(|i| -NORM_T + 2.0 * NORM_T * i as f64 / (NORM_RADII - 1) as f64).collect();
    ts.extend(d.profile.breakpoints().iter().chain(b.profile.breakpoints()).map(to_f64));
    for t in &ts {
        let r = (t / 2.0).exp();
        for k in 0..NORM_ANGLES {
            let th = (k as f64 + 0.5) * std::f64::consts::TAU / NORM_ANGLES as f64;
            out.push((r * th.cos(), r * th.sin()));
        }
    }
    for c in centers {
        for i in 0..NORM_RADII {
            let r = (-NORM_T / 2.0 * (i as f64 + 1.0) / NORM_RADII as f64).exp();
            for k in 0..8 {
                let th = (k as f64 + 0.5) * std::f64::consts::TAU / 8.0;
                out.push((c + r * th.cos(), r * th.sin()));
            }
        }
    }
    out
}

fn radial_pl(d: &ModelArithDivisor) -> Pl {
    let m0 = d.points.multiplicity(&Point::Finite(Q::zero()));
    d.profile.sub(&Pl::affine(m0, Q::zero())).shift(&d.kappa.rat)
}

fn arch_ratios(d: &ModelArithDivisor, b: &ModelArithDivisor) -> Vec<Ratio> {
    let exact = radial(d) && radial(b) && d.kappa.is_rational() && b.kappa.is_rational();
    if !exact {
        return arch_grid(d, b)
            .into_iter()
            .map(|(re, im)| Ratio::Approx(d.green_inf_f64(re, im) / b.green_inf_f64(re, im)))
            .collect();
    }
    let gd = radial_pl(d);
    let gb = radial_pl(b);
    let mut out: Vec<Ratio> = gd
        .breakpoints()
        .iter()
        .chain(gb.breakpoints())
        .map(|t| Ratio::Exact(gd.eval(t) / gb.eval(t)))
        .collect();
    let ((sdl, cdl), (sdr, cdr)) = gd.end_lines();
    let ((sbl, cbl), (sbr, cbr)) = gb.end_lines();
    // t → −∞ then t → +∞; the direction sign turns slopes into growth rates
    for (sd, cd, sb, cb, dir) in [(sdl, cdl, sbl, cbl, -1), (sdr, cdr, sbr, cbr, 1)] {
        let (gd_rate, gb_rate) = (&sd * qi(dir), &sb * qi(dir));
        if gb_rate.is_positive() {
            out.push(Ratio::Exact(gd_rate / gb_rate));
        } else if gd_rate.is_positive() {
            out.push(Ratio::PosInf);
        } else if gd_rate.is_negative() {
            out.push(Ratio::NegInf);
        } else {
            out.push(Ratio::Exact(cd / cb));
        }
    }
    out
}

fn all_ratios(d: &ModelArithDivisor, bnd: &BoundaryDivisor) -> Result<Vec<Ratio>, AdelicError> {
    let b = &bnd.div;
    let mut out = Vec::new();
    for (x, m) in &d.points.terms {
        out.extend(discrete_ratio(m, &b.points.multiplicity(x)));
    }
    let mut ps: BTreeSet<u64> = d.vertical.keys().chain(d.deviations.keys()).copied().collect();
    ps.extend(b.vertical.keys().chain(b.deviations.keys()).copied());
    for p in ps {
        let trees: Vec<&BerkTree> = d
            .deviations
            .get(&p)
            .into_iter()
            .flatten()
            .chain(b.deviations.get(&p).into_iter().flatten())
            .map(|f| f.tree())
            .collect();
        let tree = union_tree(p, &trees, &[])?;
        for v in 0..tree.vertices().len() {
            let pt = tree.type2(v);
            out.extend(discrete_ratio(&d.residual_p(p, &pt), &b.residual_p(p, &pt)));
        }
    }
    out.extend(arch_ratios(d, b));
    Ok(out)
}

/// inf{ε : −εB̄ ≤ D̄ ≤ εB̄}, exact on the discrete parts and on radial PL data.
pub fn b_adic_norm(d: &ModelArithDivisor, b: &BoundaryDivisor) -> Result<Norm, AdelicError> {
    let rs = all_ratios(d, b)?;
    if rs.iter().any(|r| matches!(r, Ratio::PosInf | Ratio::NegInf)) {
        return Ok(Norm::Infinite);
    }
    if rs.iter().all(|r| matches!(r, Ratio::Exact(_))) {
        let m = rs
            .iter()
            .map(|r| match r {
                Ratio::Exact(q) => q.abs(),
                _ => unreachable!(),
            })
            .max()
            .unwrap_or_else(Q::zero);
        return Ok(Norm::Exact(m));
    }
    Ok(Norm::Approx(rs.iter().map(|r| r.to_f64().abs()).fold(0.0, f64::max)))
}

/// D̄ ≥ 0 componentwise, on the same comparison points as the norm.
pub fn is_effective(d: &ModelArithDivisor, b: &BoundaryDivisor) -> Result<bool, AdelicError> {
    Ok(all_ratios(d, b)?.iter().all(|r| match r {
        Ratio::Exact(q) => !q.is_negative(),
        r => r.to_f64() >= -1e-12,
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct NefReport {
    pub degree_nonnegative: bool,
    pub profile_convex: bool,
    pub finite_places_psh: bool,
    pub heights: Vec<(String, f64)>,
    pub nef: bool,
    /// a sampled necessary condition, never a certificate
    pub sampled: bool,
}

pub fn is_nef(d: &ModelArithDivisor, probes: &[Point]) -> Result<NefReport, AdelicError> {
    let degree_nonnegative = !d.degree().is_negative();
    let profile_convex = d.profile.is_convex();
    let finite_places_psh = d.finite_places_psh();
    let mut heights = Vec::new();
    for x in probes {
        heights.push((x.to_string(), height(x, d)?.value));
    }
    let nef = degree_nonnegative && profile_convex && finite_places_psh && heights.iter().all(|h| h.1 >= -1e-12);
    Ok(NefReport { degree_nonnegative, profile_convex, finite_places_psh, heights, nef, sampled: true })
}

/// Materialized prefix with declared tails: ‖D_n − D_m‖ ≤ tail_eps[N] for n, m ≥ N.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchySequence {
    pub terms: Vec<ModelArithDivisor>,
    pub tail_eps: Vec<Q>,
}

impl CauchySequence {
    pub fn new(terms: Vec<ModelArithDivisor>, tail_eps: Vec<Q>) -> Result<CauchySequence, AdelicError> {
        if terms.is_empty() || terms.len() != tail_eps.len() {
            return Err(AdelicError::Invalid("need one declared tail per term".into()));
        }
        Ok(CauchySequence { terms, tail_eps })
    }

    pub fn constant(d: ModelArithDivisor) -> CauchySequence {
        CauchySequence { terms: vec![d], tail_eps: vec![Q::zero()] }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Term n, repeating the last term past the prefix with tail 0 only for
    /// constant sequences.
    fn term(&self, n: usize) -> (&ModelArithDivisor, &Q) {
        let i = n.min(self.terms.len() - 1);
        (&self.terms[i], &self.tail_eps[i])
    }

    pub fn verify(&self, b: &BoundaryDivisor) -> Result<(), AdelicError> {
        for n in 0..self.terms.len() {
            for m in n + 1..self.terms.len() {
                let norm = b_adic_norm(&self.terms[n].sub(&self.terms[m]), b)?;
                let ok = match &norm {
                    Norm::Exact(q) => *q <= self.tail_eps[n],
                    Norm::Approx(x) => *x <= to_f64(&self.tail_eps[n]) * (1.0 + 1e-9) + 1e-12,
                    Norm::Infinite => false,
                };
                if !ok {
                    return Err(AdelicError::NotCauchy(n, m, norm.render()));
                }
            }
        }
        Ok(())
    }

    /// a₀, b₀, a₁, b₁, … for equivalent sequences; tails add through the common limit.
    pub fn splice(a: &CauchySequence, b: &CauchySequence) -> CauchySequence {
        let n = a.len().max(b.len());
        let mut terms = Vec::new();
        let mut tail = Vec::new();
        for k in 0..n {
            let (ta, ea) = a.term(k);
            let (tb, eb) = b.term(k);
            let e = ea + eb;
            terms.push(ta.clone());
            tail.push(e.clone());
            terms.push(tb.clone());
            tail.push(e);
        }
        CauchySequence { terms, tail_eps: tail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdelicArithDivisor {
    pub seq: CauchySequence,
}

impl AdelicArithDivisor {
    pub fn model(d: ModelArithDivisor) -> AdelicArithDivisor {
        AdelicArithDivisor { seq: CauchySequence::constant(d) }
    }

    pub fn last(&self) -> &ModelArithDivisor {
        self.seq.terms.last().expect("nonempty")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IntersectResult {
    pub value: f64,
    #[serde(serialize_with = "ser_loglinear")]
    pub exact_term: LogLinear,
    pub tail_bound: f64,
    pub index: usize,
}

/// Diagonal limit of model pairings with tail bound
/// ε₀·B̄·D̄₁ₙ + ε₁·B̄·D̄₀ₙ + ε₀ε₁·B̄·B̄.
pub fn intersect(
    a: &AdelicArithDivisor,
    b: &AdelicArithDivisor,
    boundary: Option<&BoundaryDivisor>,
    tol: f64,
) -> Result<IntersectResult, AdelicError> {
    let n_max = a.seq.len().max(b.seq.len());
    for n in 0..n_max {
        let (an, ea) = a.seq.term(n);
        let (bn, eb) = b.seq.term(n);
        let tail = if ea.is_zero() && eb.is_zero() {
            0.0
        } else {
            let bd = boundary.ok_or_else(|| AdelicError::Invalid("non-constant sequences need a boundary divisor".into()))?;
            let (ea, eb) = (to_f64(ea), to_f64(eb));
            let mut t = ea * eb * bd.self_pairing.abs();
            if ea > 0.0 {
                t += ea * bd.pairing_abs(bn)?;
            }
            if eb > 0.0 {
                t += eb * bd.pairing_abs(an)?;
            }
            t
        };
        if tail <= tol {
            let exact = pairing(an, bn)?;
            return Ok(IntersectResult { value: exact.to_f64(), exact_term: exact, tail_bound: tail, index: n });
        }
    }
    Err(AdelicError::ToleranceNotReached(n_max))
}

/// Re-indexed subsequence with ‖E_{n_k} − D̄‖ ≤ 2^{−k}, then D̄_k = E_{n_k} + (4/2^k)B̄.
pub fn monotone_nef_approximation(
    e: &CauchySequence,
    b: &BoundaryDivisor,
    terms: usize,
) -> Result<CauchySequence, AdelicError> {
    e.verify(b).map_err(|err| AdelicError::SandwichUnverifiable(err.to_string()))?;
    let mut out = Vec::new();
    let mut tails = Vec::new();
    let mut start = 0;
    for k in 0..terms {
        let target = Q::new(1.into(), num::pow(num::BigInt::from(2), k));
        let Some(n) = (start..e.len()).find(|&n| e.tail_eps[n] <= target) else {
            return Err(AdelicError::SandwichUnverifiable(format!("no term with tail <= 2^-{k} in the prefix")));
        };
        start = n;
        let c = Q::new(4.into(), num::pow(num::BigInt::from(2), k));
        out.push(e.terms[n].add(&b.div.scale(&c)));
        tails.push(qi(6) * &target);
    }
    for k in 0..out.len().saturating_sub(1) {
        if !is_effective(&out[k].sub(&out[k + 1]), b)? {
            return Err(AdelicError::SandwichUnverifiable(format!("term {k} is not above term {}", k + 1)));
        }
    }
    Ok(CauchySequence { terms: out, tail_eps: tails })
}

fn same_finite_and_geometric(a: &ModelArithDivisor, b: &ModelArithDivisor) -> bool {
    a.points == b.points && a.vertical == b.vertical && a.deviations == b.deviations
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyCheck {
    #[serde(serialize_with = "ser_loglinear")]
    pub lhs: LogLinear,
    pub rhs: f64,
    pub residual: f64,
    /// lhs − rhs vanishes as an exact real
    pub exact_zero: bool,
}

fn convex_profile(u: &Pl) -> Result<ConvexProfile, AdelicError> {
    Ok(ConvexProfile::from_pl(u.clone())?)
}

/// D̄·(D̄+div̂ f) − D̄′·(D̄′+div̂ f) against the mixed relative energy of (g, g; g′, g′).
pub fn energy_difference_check(
    d: &ModelArithDivisor,
    d_prime: &ModelArithDivisor,
    mover: &RationalFunction,
) -> Result<EnergyCheck, AdelicError> {
    if !same_finite_and_geometric(d, d_prime) {
        return Err(AdelicError::NotComparable);
    }
    let shift = ModelArithDivisor::principal(mover);
    let lhs = &pairing(d, &d.add(&shift))? - &pairing(d_prime, &d_prime.add(&shift))?;
    let (u, v) = (convex_profile(&d.profile)?, convex_profile(&d_prime.profile)?);
    let k = &d.kappa - &d_prime.kappa;
    if !k.is_rational() {
        return Err(AdelicError::Invalid("Green constants must differ by a rational".into()));
    }
    let u = u.shift(&k.rat);
    let deg = d.degree();
    let tuple = AdditivePshTuple::new(vec![vec![u.clone()], vec![u]], vec![vec![v.clone()], vec![v]], vec![deg.clone(), deg])?;
    let rhs = mixed_relative_energy(&tuple)?;
    let exact_zero = match &rhs {
        ExtReal::Exact(q) => (&lhs - &LogLinear::rational(q.clone())).is_zero(),
        _ => false,
    };
    let rf = rhs.to_f64();
    Ok(EnergyCheck { residual: lhs.to_f64() - rf, lhs, rhs: rf, exact_zero })
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneralizedProduct {
    pub anchor: f64,
    pub energy: String,
    pub value: f64,
}

/// Anchor self-pairing plus the mixed relative energy of the singular profile;
/// value −∞ when the energy diverges. `mass_tol` absorbs truncation of
/// materialized profiles.
pub fn generalized_product(
    profile: &ConvexProfile,
    anchor: &ModelArithDivisor,
    mover: &RationalFunction,
    mass_tol: f64,
) -> Result<GeneralizedProduct, AdelicError> {
    let v = convex_profile(&anchor.profile)?.shift(&anchor.kappa.rat);
    if !anchor.kappa.is_rational() {
        return Err(AdelicError::Invalid("anchor Green constant must be rational".into()));
    }
    let deg = anchor.degree();
    let mass_gap = (profile.sigma_plus().to_f64() - profile.sigma_minus().to_f64() - to_f64(&deg)).abs();
    let tuple = AdditivePshTuple::new(
        vec![vec![profile.clone()], vec![profile.clone()]],
        vec![vec![v.clone()], vec![v]],
        vec![deg.clone(), deg],
    )?;
    if full_mass_check(&tuple).iter().any(|ok| !ok) && mass_gap > mass_tol {
        return Err(AdelicError::FullMassFails);
    }
    let a = pairing(anchor, &anchor.add(&ModelArithDivisor::principal(mover)))?.to_f64();
    let e = mixed_relative_energy(&tuple)?;
    Ok(GeneralizedProduct { anchor: a, energy: e.render(), value: if e.is_neg_infinity() { f64::NEG_INFINITY } else { a + e.to_f64() } })
}

/// Pullback by z ↦ zⁿ: profile u(nt), multiplicities ×n, finite data unchanged.
pub fn pullback_power(d: &ModelArithDivisor, n: u32) -> Result<ModelArithDivisor, AdelicError> {
    if n == 0 {
        return Err(AdelicError::Invalid("n must be positive".into()));
    }
    let toric = d.points.terms.iter().all(|(x, _)| matches!(x, Point::Infinity) || x.as_finite().is_some_and(|a| a.is_zero()));
    if !toric || !d.deviations.is_empty() {
        return Err(AdelicError::RamificationUnsupported);
    }
    let nq = qi(n as i64);
    let mut out = ModelArithDivisor::new(
        TreeDivisor::new(d.points.terms.iter().map(|(x, m)| (x.clone(), m * &nq)).collect()),
        d.profile.precompose_scale(&nq),
        d.kappa.clone(),
    )?;
    out.vertical = d.vertical.clone();
    Ok(out)
}

/// intersect(f*D̄₀, f*D̄₁) / intersect(D̄₀, D̄₁) for f = zⁿ.
pub fn pullback_ratio(d0: &ModelArithDivisor, d1: &ModelArithDivisor, n: u32) -> Result<f64, AdelicError> {
    let base = pairing(d0, d1)?.to_f64();
    let up = pairing(&pullback_power(d0, n)?, &pullback_power(d1, n)?)?.to_f64();
    Ok(up / base)
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaRow {
    pub eps: f64,
    pub k_eps: f64,
    pub n_eps: u64,
    pub norm: f64,
}

/// γ_n = max(g − n, g′) with h = g − g′ = o(g_B): least n with
/// sup max(h − n, 0)/g_B ≤ ε on a radial grid, against K_ε = sup(h − ε g_B).
pub fn gamma_check(h: &dyn Fn(f64) -> f64, g_b: &dyn Fn(f64) -> f64, eps: &[f64], t_max: f64, n_grid: usize) -> Vec<GammaRow> {
    let ts: Vec<f64> = (0..n_grid).map(|i| -t_max + 2.0 * t_max * i as f64 / (n_grid - 1) as f64).collect();
    let norm_at = |n: f64| ts.iter().map(|&t| (h(t) - n).max(0.0) / g_b(t)).fold(0.0, f64::max);
    eps.iter()
        .map(|&e| {
            let k_eps = ts.iter().map(|&t| h(t) - e * g_b(t)).fold(f64::NEG_INFINITY, f64::max);
            let mut n = 0u64;
            while norm_at(n as f64) > e {
                n += 1;
            }
            GammaRow { eps: e, k_eps, n_eps: n, norm: norm_at(n as f64) }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NonIntRow {
    pub n: u32,
    pub value_at_cusp: f64,
    pub margin: f64,
    /// max relative error of the second difference against 1/s²
    pub analytic_rel_err: f64,
    /// (s, g_n(s)) on circles log|q| = s, all ≥ value_at_cusp
    pub circle_trace: Vec<(f64, f64)>,
}

/// g(s) = −log(−s/2π) for s = log|q| < 0, the cusp at s = −∞.
pub fn cusp_green(s: f64) -> f64 {
    -(-s / std::f64::consts::TAU).ln()
}

/// Truncations g_n = max(g, −n): discrete radial convexity on s ∈ [−16, −1] and g_n(0) = −n.
pub fn non_integrability_demo(n_max: u32, grid: usize) -> Vec<NonIntRow> {
    let (a, b) = (-16.0, -1.0);
    let h = (b - a) / (grid - 1) as f64;
    let ss: Vec<f64> = (0..grid).map(|i| a + h * i as f64).collect();
    (1..=n_max)
        .map(|n| {
            let gn = |s: f64| cusp_green(s).max(-(n as f64));
            let mut margin = f64::INFINITY;
            let mut rel = 0.0f64;
            for i in 1..grid - 1 {
                let d2 = (gn(ss[i - 1]) - 2.0 * gn(ss[i]) + gn(ss[i + 1])) / (h * h);
                margin = margin.min(d2);
                let exact = 1.0 / (ss[i] * ss[i]);
                rel = rel.max((d2 - exact).abs() / exact);
            }
            let value_at_cusp = gn(f64::NEG_INFINITY);
            let circle_trace = [-1.0, -2.0, -4.0, -8.0, -16.0].iter().map(|&s| (s, gn(s))).collect();
            NonIntRow { n, value_at_cusp, margin, analytic_rel_err: rel, circle_trace }
        })
        .collect()
}

/// `divisor.json`
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivisorJson {
    pub points: BTreeMap<String, String>,
    pub profile: PlJson,
    #[serde(default)]
    pub kappa: Option<String>,
    #[serde(default)]
    pub vertical: BTreeMap<String, String>,
    #[serde(default)]
    pub deviations: BTreeMap<String, Vec<DeviationJson>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlJson {
    #[serde(with = "crate::rational::serde_vec_q")]
    pub breakpoints: Vec<Q>,
    #[serde(with = "crate::rational::serde_vec_q")]
    pub slopes: Vec<Q>,
    #[serde(with = "crate::rational::serde_q")]
    pub anchor_value: Q,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationJson {
    #[serde(default, with = "crate::rational::serde_q")]
    pub constant: Q,
    pub tents: Vec<TentJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TentJson {
    pub point: Point,
    #[serde(with = "crate::rational::serde_q")]
    pub depth: Q,
    #[serde(with = "crate::rational::serde_q")]
    pub weight: Q,
}

/// `{"c": "3/2", "factors": [["1", 2], ["-1/4", -1]]}`
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalFunctionJson {
    pub c: String,
    pub factors: Vec<(String, i64)>,
}

impl RationalFunctionJson {
    pub fn into_function(self) -> Result<RationalFunction, AdelicError> {
        let factors = self.factors.iter().map(|(a, m)| Ok((parse_rat(a)?, *m))).collect::<Result<Vec<_>, AdelicError>>()?;
        RationalFunction::new(parse_rat(&self.c)?, factors)
    }
}

fn parse_rat(s: &str) -> Result<Q, AdelicError> {
    crate::rational::parse_q(s).map_err(|e| AdelicError::Invalid(e.0))
}

impl DivisorJson {
    pub fn into_divisor(self) -> Result<ModelArithDivisor, AdelicError> {
        let mut terms = Vec::new();
        for (x, m) in &self.points {
            terms.push((x.parse::<Point>()?, parse_rat(m)?));
        }
        let profile = Pl::new(self.profile.breakpoints, self.profile.slopes, self.profile.anchor_value)?;
        let kappa = LogLinear::rational(match &self.kappa {
            Some(k) => parse_rat(k)?,
            None => Q::zero(),
        });
        let mut d = ModelArithDivisor::new(TreeDivisor::new(terms), profile, kappa)?;
        for (p, mu) in &self.vertical {
            let p: u64 = p.parse().map_err(|_| AdelicError::Invalid(format!("bad prime {p}")))?;
            if !crate::rational::is_prime(p) {
                return Err(TreeError::NotPrime(p).into());
            }
            d = d.with_vertical(p, parse_rat(mu)?);
        }
        for (p, devs) in self.deviations {
            let p: u64 = p.parse().map_err(|_| AdelicError::Invalid(format!("bad prime {p}")))?;
            for dev in devs {
                let tents: Vec<(TypeII, Q)> =
                    dev.tents.into_iter().map(|t| (TypeII { depth: t.depth, rep: t.point }, t.weight)).collect();
                d = d.with_deviation(TreeFunction::from_tents(p, dev.constant, &tents)?)?;
            }
        }
        Ok(d)
    }
}
