//! Convex one-variable profiles in the coordinate t = log|z|², their
//! Monge–Ampère measures and the pointwise operations used by the energy code.

use num::traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::rational::{self, fmt_q, from_f64, qi, to_f64, ExtReal, Q};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("slopes must have length breakpoints + 1 (got {slopes} slopes for {breakpoints} breakpoints)")]
    BadLengths { breakpoints: usize, slopes: usize },
    #[error("breakpoints must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("profile is not convex: slope {index} decreases")]
    NonConvex { index: usize },
    #[error("sampled profile needs at least 3 grid points and t_min < t_max")]
    BadGrid,
    #[error("sampled data has wrong length")]
    BadSamples,
    #[error("asymptotic slopes must satisfy sigma_minus <= sigma_plus")]
    SlopeOrder,
    #[error("difference of profiles is unbounded on the support of the measure")]
    UnboundedDifference,
    #[error("malformed profile: {0}")]
    Malformed(String),
}

/// Piecewise-linear function of one variable with exact data.
///
/// `slopes[i]` is the slope on `(breakpoints[i-1], breakpoints[i])`, with the
/// convention `breakpoints[-1] = -inf` and `breakpoints[n] = +inf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pl {
    bps: Vec<Q>,
    slopes: Vec<Q>,
    anchor: Q,
    vals: Vec<Q>,
}

impl Pl {
    pub fn new(bps: Vec<Q>, slopes: Vec<Q>, anchor: Q) -> Result<Pl, ProfileError> {
        if slopes.len() != bps.len() + 1 {
            return Err(ProfileError::BadLengths { breakpoints: bps.len(), slopes: slopes.len() });
        }
        for i in 1..bps.len() {
            if bps[i] <= bps[i - 1] {
                return Err(ProfileError::NotIncreasing(i));
            }
        }
        Ok(Self::build(bps, slopes, anchor))
    }

    fn build(bps: Vec<Q>, slopes: Vec<Q>, anchor: Q) -> Pl {
        let (mut b2, mut s2) = (Vec::with_capacity(bps.len()), vec![slopes[0].clone()]);
        for (i, b) in bps.into_iter().enumerate() {
            if slopes[i + 1] != *s2.last().unwrap() {
                b2.push(b);
                s2.push(slopes[i + 1].clone());
            }
        }
        let vals = values_at(&b2, &s2, &anchor);
        Pl { bps: b2, slopes: s2, anchor, vals }
    }

    pub fn affine(slope: Q, intercept: Q) -> Pl {
        Pl { bps: vec![], slopes: vec![slope], anchor: intercept, vals: vec![] }
    }

    pub fn constant(c: Q) -> Pl {
        Self::affine(Q::zero(), c)
    }

    /// `max(0, n t)`-type helper: `max(a, s t + c)` built exactly.
    pub fn max_affine(lines: &[(Q, Q)]) -> Pl {
        assert!(!lines.is_empty());
        lines
            .iter()
            .map(|(s, c)| Pl::affine(s.clone(), c.clone()))
            .reduce(|a, b| a.pointwise_max(&b))
            .unwrap()
    }

    /// Build from values at breakpoints plus the two end slopes.
    pub fn from_values(bps: Vec<Q>, vals: Vec<Q>, left: Q, right: Q) -> Result<Pl, ProfileError> {
        if bps.len() != vals.len() || bps.is_empty() {
            return Err(ProfileError::BadLengths { breakpoints: bps.len(), slopes: vals.len() + 1 });
        }
        let mut slopes = vec![left];
        for i in 1..bps.len() {
            if bps[i] <= bps[i - 1] {
                return Err(ProfileError::NotIncreasing(i));
            }
            slopes.push((&vals[i] - &vals[i - 1]) / (&bps[i] - &bps[i - 1]));
        }
        slopes.push(right);
        let anchor = eval_raw(&bps, &slopes, &vals, &Q::zero()).unwrap();
        Pl::new(bps, slopes, anchor)
    }

    pub fn breakpoints(&self) -> &[Q] {
        &self.bps
    }

    pub fn slopes(&self) -> &[Q] {
        &self.slopes
    }

    pub fn anchor(&self) -> &Q {
        &self.anchor
    }

    pub fn values_at_breakpoints(&self) -> &[Q] {
        &self.vals
    }

    pub fn sigma_minus(&self) -> &Q {
        &self.slopes[0]
    }

    pub fn sigma_plus(&self) -> &Q {
        self.slopes.last().unwrap()
    }

    pub fn is_convex(&self) -> bool {
        self.slopes.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn eval(&self, t: &Q) -> Q {
        eval_raw(&self.bps, &self.slopes, &self.vals, t).unwrap_or_else(|| &self.anchor + &self.slopes[0] * t)
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        let p = self.bps.partition_point(|b| to_f64(b) < t);
        if self.bps.is_empty() {
            return to_f64(&self.anchor) + to_f64(&self.slopes[0]) * t;
        }
        if p == 0 {
            to_f64(&self.vals[0]) - to_f64(&self.slopes[0]) * (to_f64(&self.bps[0]) - t)
        } else {
            to_f64(&self.vals[p - 1]) + to_f64(&self.slopes[p]) * (t - to_f64(&self.bps[p - 1]))
        }
    }

    /// Intercept at t = 0 of the line extending the piece with index `p`.
    pub fn piece_line(&self, p: usize) -> (Q, Q) {
        let s = self.slopes[p].clone();
        if self.bps.is_empty() {
            return (s, self.anchor.clone());
        }
        let (b, v) = if p == 0 { (&self.bps[0], &self.vals[0]) } else { (&self.bps[p - 1], &self.vals[p - 1]) };
        let c = v - &s * b;
        (s, c)
    }

    /// Lines at the two ends: (slope, intercept) for t -> -inf and t -> +inf.
    pub fn end_lines(&self) -> ((Q, Q), (Q, Q)) {
        (self.piece_line(0), self.piece_line(self.slopes.len() - 1))
    }

    pub fn add(&self, o: &Pl) -> Pl {
        let bps = merge(&self.bps, &o.bps);
        let slopes = pieces_of(&bps)
            .map(|t| self.slope_near(&t) + o.slope_near(&t))
            .collect();
        Pl::build(bps, slopes, &self.anchor + &o.anchor)
    }

    pub fn sub(&self, o: &Pl) -> Pl {
        self.add(&o.scale(&qi(-1)))
    }

    pub fn scale(&self, c: &Q) -> Pl {
        if c.is_zero() {
            return Pl::constant(Q::zero());
        }
        Pl::build(self.bps.clone(), self.slopes.iter().map(|s| s * c).collect(), &self.anchor * c)
    }

    pub fn shift(&self, c: &Q) -> Pl {
        Pl::build(self.bps.clone(), self.slopes.clone(), &self.anchor + c)
    }

    /// t ↦ u(n t) for n > 0.
    pub fn precompose_scale(&self, n: &Q) -> Pl {
        assert!(n.is_positive());
        Pl::build(
            self.bps.iter().map(|b| b / n).collect(),
            self.slopes.iter().map(|s| s * n).collect(),
            self.anchor.clone(),
        )
    }

    /// t ↦ u(t − a).
    pub fn translate(&self, a: &Q) -> Pl {
        let anchor = self.eval(&-a.clone());
        Pl::build(self.bps.iter().map(|b| b + a).collect(), self.slopes.clone(), anchor)
    }

    /// Slope on the open piece containing points just right of `t`
    /// (or just left of the first breakpoint when `t` sits below it).
    fn slope_near(&self, probe: &Probe) -> Q {
        let p = match probe {
            Probe::All => 0,
            Probe::Left(b) => self.bps.partition_point(|x| x < b),
            Probe::Mid(a, b) => {
                let m = (a + b) / qi(2);
                self.bps.partition_point(|x| x < &m)
            }
            Probe::Right(b) => self.bps.partition_point(|x| x <= b),
        };
        self.slopes[p].clone()
    }

    /// Exact pointwise maximum; crossings become breakpoints and collinear
    /// pieces merge.
    pub fn pointwise_max(&self, o: &Pl) -> Pl {
        let base = merge(&self.bps, &o.bps);
        let mut pts = base.clone();
        let probes: Vec<Probe> = pieces_of(&base).collect();
        for pr in &probes {
            let (lo, hi) = pr.bounds();
            let (s1, s2) = (self.slope_near(pr), o.slope_near(pr));
            if s1 == s2 {
                continue;
            }
            let t0 = pr.interior_point();
            let (a1, a2) = (self.eval(&t0) - &s1 * &t0, o.eval(&t0) - &s2 * &t0);
            let x = (&a2 - &a1) / (&s1 - &s2);
            let inside = lo.map_or(true, |l| &x > l) && hi.map_or(true, |h| &x < h);
            if inside {
                pts.push(x);
            }
        }
        pts.sort();
        pts.dedup();
        let slopes: Vec<Q> = pieces_of(&pts)
            .map(|pr| {
                let t = pr.interior_point();
                if self.eval(&t) >= o.eval(&t) {
                    self.slope_near(&pr)
                } else {
                    o.slope_near(&pr)
                }
            })
            .collect();
        let z = Q::zero();
        let anchor = rational::qmax(&self.eval(&z), &o.eval(&z));
        Pl::build(pts, slopes, anchor)
    }

    /// ∫_a^b u(t) dt, exact.
    pub fn integral(&self, a: &Q, b: &Q) -> Q {
        if a >= b {
            return Q::zero();
        }
        let mut pts = vec![a.clone()];
        pts.extend(self.bps.iter().filter(|x| *x > a && *x < b).cloned());
        pts.push(b.clone());
        pts.windows(2)
            .map(|w| (&w[1] - &w[0]) * (self.eval(&w[0]) + self.eval(&w[1])) / qi(2))
            .sum()
    }

    /// Exact supremum (None when unbounded above).
    pub fn sup(&self) -> Option<Q> {
        if self.sigma_minus().is_negative() || self.sigma_plus().is_positive() {
            return None;
        }
        let mut best = self.anchor.clone();
        for v in &self.vals {
            if *v > best {
                best = v.clone();
            }
        }
        Some(best)
    }

    pub fn inf(&self) -> Option<Q> {
        self.scale(&qi(-1)).sup().map(|s| -s)
    }
}

fn eval_raw(bps: &[Q], slopes: &[Q], vals: &[Q], t: &Q) -> Option<Q> {
    if bps.is_empty() {
        return None;
    }
    let p = bps.partition_point(|b| b < t);
    Some(if p == 0 {
        &vals[0] - &slopes[0] * (&bps[0] - t)
    } else {
        &vals[p - 1] + &slopes[p] * (t - &bps[p - 1])
    })
}

fn values_at(bps: &[Q], slopes: &[Q], anchor: &Q) -> Vec<Q> {
    let n = bps.len();
    let mut vals = vec![Q::zero(); n];
    let z = Q::zero();
    let j = bps.partition_point(|b| b <= &z);
    if j < n {
        vals[j] = anchor + &slopes[j] * &bps[j];
        for i in j + 1..n {
            vals[i] = &vals[i - 1] + &slopes[i] * (&bps[i] - &bps[i - 1]);
        }
    }
    if j > 0 {
        vals[j - 1] = anchor + &slopes[j] * &bps[j - 1];
        for i in (0..j - 1).rev() {
            vals[i] = &vals[i + 1] - &slopes[i + 1] * (&bps[i + 1] - &bps[i]);
        }
    }
    vals
}

fn merge(a: &[Q], b: &[Q]) -> Vec<Q> {
    let mut v: Vec<Q> = a.iter().chain(b.iter()).cloned().collect();
    v.sort();
    v.dedup();
    v
}

#[derive(Clone, Debug)]
enum Probe {
    All,
    Left(Q),
    Mid(Q, Q),
    Right(Q),
}

impl Probe {
    fn bounds(&self) -> (Option<&Q>, Option<&Q>) {
        match self {
            Probe::All => (None, None),
            Probe::Left(b) => (None, Some(b)),
            Probe::Mid(a, b) => (Some(a), Some(b)),
            Probe::Right(a) => (Some(a), None),
        }
    }

    fn interior_point(&self) -> Q {
        match self {
            Probe::All => Q::zero(),
            Probe::Left(b) => b - Q::one(),
            Probe::Mid(a, b) => (a + b) / qi(2),
            Probe::Right(a) => a + Q::one(),
        }
    }
}

/// One probe per open piece of the partition given by `bps`.
fn pieces_of(bps: &[Q]) -> impl Iterator<Item = Probe> + '_ {
    let n = bps.len();
    let count = n + 1;
    (0..count).map(move |i| {
        if n == 0 {
            Probe::All
        } else if i == 0 {
            Probe::Left(bps[0].clone())
        } else if i == n {
            Probe::Right(bps[n - 1].clone())
        } else {
            Probe::Mid(bps[i - 1].clone(), bps[i].clone())
        }
    })
}

/// Asymptotic slope of a sampled profile: exact, or a declared real number.
#[derive(Clone, Debug, PartialEq)]
pub enum Slope {
    Exact(Q),
    Real(f64),
}

impl Slope {
    pub fn to_f64(&self) -> f64 {
        match self {
            Slope::Exact(q) => to_f64(q),
            Slope::Real(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&Q> {
        match self {
            Slope::Exact(q) => Some(q),
            Slope::Real(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { n: 4096, t_min: -40.0, t_max: 40.0 }
    }
}

impl Grid {
    pub fn step(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.t_min + self.step() * i as f64
    }
}

/// Smooth convex profile known through values and derivatives on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    grid: Grid,
    values: Vec<f64>,
    derivs: Vec<f64>,
    sigma_minus: Slope,
    sigma_plus: Slope,
}

impl Sampled {
    pub fn new(
        grid: Grid,
        values: Vec<f64>,
        derivs: Vec<f64>,
        sigma_minus: Slope,
        sigma_plus: Slope,
    ) -> Result<Sampled, ProfileError> {
        if grid.n < 3 || !(grid.t_min < grid.t_max) {
            return Err(ProfileError::BadGrid);
        }
        if values.len() != grid.n || derivs.len() != grid.n {
            return Err(ProfileError::BadSamples);
        }
        if sigma_minus.to_f64() > sigma_plus.to_f64() {
            return Err(ProfileError::SlopeOrder);
        }
        let scale = derivs.iter().fold(1.0f64, |a, d| a.max(d.abs()));
        for i in 1..grid.n {
            if derivs[i] < derivs[i - 1] - 1e-12 * scale {
                return Err(ProfileError::NonConvex { index: i });
            }
        }
        Ok(Sampled { grid, values, derivs, sigma_minus, sigma_plus })
    }

    pub fn from_fn(
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        sigma_minus: Slope,
        sigma_plus: Slope,
        grid: Grid,
    ) -> Result<Sampled, ProfileError> {
        let ts: Vec<f64> = (0..grid.n).map(|i| grid.point(i)).collect();
        Sampled::new(
            grid,
            ts.iter().map(|&t| f(t)).collect(),
            ts.iter().map(|&t| df(t)).collect(),
            sigma_minus,
            sigma_plus,
        )
    }

    /// n·log(1+eᵗ), the smooth reference of degree n.
    pub fn log_one_plus_exp(n: &Q, grid: Grid) -> Sampled {
        let nf = to_f64(n);
        Sampled::from_fn(
            |t| nf * softplus(t),
            |t| nf * logistic(t),
            Slope::Exact(Q::zero()),
            Slope::Exact(n.clone()),
            grid,
        )
        .expect("softplus is convex")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    pub fn eval(&self, t: f64) -> f64 {
        let g = self.grid;
        let n = g.n;
        if t <= g.t_min {
            return self.values[0] + self.sigma_minus.to_f64() * (t - g.t_min);
        }
        if t >= g.t_max {
            return self.values[n - 1] + self.sigma_plus.to_f64() * (t - g.t_max);
        }
        let h = g.step();
        let i = (((t - g.t_min) / h).floor() as usize).min(n - 2);
        let s = (t - g.point(i)) / h;
        let (y0, y1, d0, d1) = (self.values[i], self.values[i + 1], self.derivs[i], self.derivs[i + 1]);
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    }

    /// Piecewise-linear interpolant through the samples with exact values;
    /// slopes are forced nondecreasing.
    pub fn linearize(&self) -> Pl {
        let g = self.grid;
        let bps: Vec<Q> = (0..g.n).map(|i| from_f64(g.point(i))).collect();
        let vals: Vec<Q> = self.values.iter().map(|v| from_f64(*v)).collect();
        let left = self.sigma_minus.exact().cloned().unwrap_or_else(|| from_f64(self.sigma_minus.to_f64()));
        let right = self.sigma_plus.exact().cloned().unwrap_or_else(|| from_f64(self.sigma_plus.to_f64()));
        let mut slopes = vec![left];
        for i in 1..g.n {
            let s = (&vals[i] - &vals[i - 1]) / (&bps[i] - &bps[i - 1]);
            let s = rational::qmax(&s, slopes.last().unwrap());
            slopes.push(s);
        }
        let last = slopes.last().unwrap().clone();
        slopes.push(rational::qmax(&right, &last));
        // re-anchor at the first sample, integrating the adjusted slopes
        let mut v = vals[0].clone();
        let mut adj = vec![v.clone()];
        for i in 1..g.n {
            v = &v + &slopes[i] * (&bps[i] - &bps[i - 1]);
            adj.push(v.clone());
        }
        let anchor = eval_raw(&bps, &slopes, &adj, &Q::zero()).unwrap();
        Pl::new(bps, slopes, anchor).expect("grid is increasing")
    }
}

pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Convex profile: exact piecewise-linear or sampled smooth.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexProfile {
    Pl(Pl),
    Sampled(Sampled),
}

impl ConvexProfile {
    pub fn pl(bps: Vec<Q>, slopes: Vec<Q>, anchor: Q) -> Result<ConvexProfile, ProfileError> {
        ConvexProfile::from_pl(Pl::new(bps, slopes, anchor)?)
    }

    pub fn from_pl(p: Pl) -> Result<ConvexProfile, ProfileError> {
        if let Some(i) = p.slopes.windows(2).position(|w| w[0] > w[1]) {
            return Err(ProfileError::NonConvex { index: i + 1 });
        }
        Ok(ConvexProfile::Pl(p))
    }

    /// max over the given lines (slope, intercept).
    pub fn max_affine(lines: &[(Q, Q)]) -> ConvexProfile {
        ConvexProfile::Pl(Pl::max_affine(lines))
    }

    /// max(0, s·(t − a)).
    pub fn hinge(s: Q, a: Q) -> ConvexProfile {
        let c = -(&s * &a);
        ConvexProfile::max_affine(&[(Q::zero(), Q::zero()), (s, c)])
    }

    pub fn affine(slope: Q, intercept: Q) -> ConvexProfile {
        ConvexProfile::Pl(Pl::affine(slope, intercept))
    }

    pub fn as_pl(&self) -> Option<&Pl> {
        match self {
            ConvexProfile::Pl(p) => Some(p),
            ConvexProfile::Sampled(_) => None,
        }
    }

    pub fn is_pl(&self) -> bool {
        matches!(self, ConvexProfile::Pl(_))
    }

    pub fn to_pl(&self) -> Pl {
        match self {
            ConvexProfile::Pl(p) => p.clone(),
            ConvexProfile::Sampled(s) => s.linearize(),
        }
    }

    pub fn sigma_minus(&self) -> Slope {
        match self {
            ConvexProfile::Pl(p) => Slope::Exact(p.sigma_minus().clone()),
            ConvexProfile::Sampled(s) => s.sigma_minus.clone(),
        }
    }

    pub fn sigma_plus(&self) -> Slope {
        match self {
            ConvexProfile::Pl(p) => Slope::Exact(p.sigma_plus().clone()),
            ConvexProfile::Sampled(s) => s.sigma_plus.clone(),
        }
    }

    pub fn eval(&self, t: &Q) -> ExtReal {
        match self {
            ConvexProfile::Pl(p) => ExtReal::Exact(p.eval(t)),
            ConvexProfile::Sampled(s) => ExtReal::Approx(s.eval(to_f64(t))),
        }
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        match self {
            ConvexProfile::Pl(p) => p.eval_f64(t),
            ConvexProfile::Sampled(s) => s.eval(t),
        }
    }

    /// Sum of two convex profiles (the result stays convex).
    pub fn add(&self, o: &ConvexProfile) -> ConvexProfile {
        match (self, o) {
            (ConvexProfile::Pl(a), ConvexProfile::Pl(b)) => ConvexProfile::Pl(a.add(b)),
            _ => {
                let (a, b) = (self.to_sampled(), o.to_sampled_on(a_grid(self, o)));
                let a = a.resample(b.grid);
                ConvexProfile::Sampled(Sampled {
                    grid: b.grid,
                    values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
                    derivs: a.derivs.iter().zip(&b.derivs).map(|(x, y)| x + y).collect(),
                    sigma_minus: add_slopes(&a.sigma_minus, &b.sigma_minus),
                    sigma_plus: add_slopes(&a.sigma_plus, &b.sigma_plus),
                })
            }
        }
    }

    /// Multiplication by a nonnegative rational.
    pub fn scale(&self, c: &Q) -> ConvexProfile {
        assert!(!c.is_negative(), "scaling a convex profile by a negative number");
        match self {
            ConvexProfile::Pl(p) => ConvexProfile::Pl(p.scale(c)),
            ConvexProfile::Sampled(s) => {
                let cf = to_f64(c);
                ConvexProfile::Sampled(Sampled {
                    grid: s.grid,
                    values: s.values.iter().map(|v| v * cf).collect(),
                    derivs: s.derivs.iter().map(|v| v * cf).collect(),
                    sigma_minus: scale_slope(&s.sigma_minus, c),
                    sigma_plus: scale_slope(&s.sigma_plus, c),
                })
            }
        }
    }

    pub fn shift(&self, c: &Q) -> ConvexProfile {
        match self {
            ConvexProfile::Pl(p) => ConvexProfile::Pl(p.shift(c)),
            ConvexProfile::Sampled(s) => {
                let cf = to_f64(c);
                let mut s = s.clone();
                s.values.iter_mut().for_each(|v| *v += cf);
                ConvexProfile::Sampled(s)
            }
        }
    }

    fn to_sampled(&self) -> Sampled {
        self.to_sampled_on(Grid::default())
    }

    fn to_sampled_on(&self, grid: Grid) -> Sampled {
        match self {
            ConvexProfile::Sampled(s) => s.clone(),
            ConvexProfile::Pl(p) => Sampled {
                grid,
                values: (0..grid.n).map(|i| p.eval_f64(grid.point(i))).collect(),
                derivs: (0..grid.n)
                    .map(|i| {
                        let t = from_f64(grid.point(i));
                        to_f64(&p.slopes[p.bps.partition_point(|b| b <= &t)])
                    })
                    .collect(),
                sigma_minus: Slope::Exact(p.sigma_minus().clone()),
                sigma_plus: Slope::Exact(p.sigma_plus().clone()),
            },
        }
    }
}

impl Sampled {
    fn resample(&self, grid: Grid) -> Sampled {
        if grid == self.grid {
            return self.clone();
        }
        let h = 1e-6;
        Sampled {
            grid,
            values: (0..grid.n).map(|i| self.eval(grid.point(i))).collect(),
            derivs: (0..grid.n)
                .map(|i| {
                    let t = grid.point(i);
                    (self.eval(t + h) - self.eval(t - h)) / (2.0 * h)
                })
                .collect(),
            sigma_minus: self.sigma_minus.clone(),
            sigma_plus: self.sigma_plus.clone(),
        }
    }
}

fn a_grid(a: &ConvexProfile, b: &ConvexProfile) -> Grid {
    match (a, b) {
        (ConvexProfile::Sampled(s), _) | (_, ConvexProfile::Sampled(s)) => s.grid,
        _ => Grid::default(),
    }
}

fn add_slopes(a: &Slope, b: &Slope) -> Slope {
    match (a, b) {
        (Slope::Exact(x), Slope::Exact(y)) => Slope::Exact(x + y),
        _ => Slope::Real(a.to_f64() + b.to_f64()),
    }
}

fn scale_slope(a: &Slope, c: &Q) -> Slope {
    match a {
        Slope::Exact(x) => Slope::Exact(x * c),
        Slope::Real(x) => Slope::Real(x * to_f64(c)),
    }
}

/// Reference profile of degree n: σ⁻ = 0, σ⁺ = n.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceProfile {
    degree: Q,
    profile: ConvexProfile,
}

impl ReferenceProfile {
    pub fn new(degree: Q, profile: ConvexProfile) -> Result<ReferenceProfile, ProfileError> {
        let ok = profile.sigma_minus() == Slope::Exact(Q::zero()) && profile.sigma_plus() == Slope::Exact(degree.clone());
        if !ok || degree.is_negative() {
            return Err(ProfileError::Malformed("reference needs slopes 0 and its degree".into()));
        }
        Ok(ReferenceProfile { degree, profile })
    }

    /// max(0, n t).
    pub fn pl_surrogate(n: Q) -> ReferenceProfile {
        let p = ConvexProfile::hinge(n.clone(), Q::zero());
        ReferenceProfile { degree: n, profile: p }
    }

    /// n·log(1+eᵗ) sampled on the given grid.
    pub fn smooth(n: Q, grid: Grid) -> ReferenceProfile {
        let p = ConvexProfile::Sampled(Sampled::log_one_plus_exp(&n, grid));
        ReferenceProfile { degree: n, profile: p }
    }

    pub fn degree(&self) -> &Q {
        &self.degree
    }

    pub fn profile(&self) -> &ConvexProfile {
        &self.profile
    }
}

/// Piece of an exact piecewise-constant density.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityPiece {
    #[serde(with = "rational::serde_q")]
    pub start: Q,
    #[serde(with = "rational::serde_q")]
    pub end: Q,
    #[serde(with = "rational::serde_q")]
    pub value: Q,
}

/// Density given as masses of the cells of a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledDensity {
    pub grid: Grid,
    pub cell_masses: Vec<f64>,
}

impl SampledDensity {
    pub fn density_at_cell(&self, i: usize) -> f64 {
        self.cell_masses[i] / self.grid.step()
    }
}

/// Finite measure on the real line. Masses produced by `ma_measure` are
/// nonnegative; signed measures arise only as differences inside the engine.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LineMeasure {
    pub atoms: Vec<(Q, Q)>,
    pub density: Vec<DensityPiece>,
    pub sampled: Option<SampledDensity>,
}

impl LineMeasure {
    pub fn zero() -> LineMeasure {
        LineMeasure::default()
    }

    pub fn atom(x: Q, m: Q) -> LineMeasure {
        LineMeasure { atoms: vec![(x, m)], ..Default::default() }
    }

    pub fn is_exact(&self) -> bool {
        self.sampled.is_none()
    }

    pub fn exact_mass(&self) -> Q {
        let a: Q = self.atoms.iter().map(|(_, m)| m.clone()).sum();
        let d: Q = self.density.iter().map(|p| (&p.end - &p.start) * &p.value).sum();
        a + d
    }

    pub fn total_mass(&self) -> ExtReal {
        let e = self.exact_mass();
        match &self.sampled {
            None => ExtReal::Exact(e),
            Some(s) => ExtReal::Approx(to_f64(&e) + s.cell_masses.iter().sum::<f64>()),
        }
    }

    pub fn mass_f64(&self) -> f64 {
        self.total_mass().to_f64()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|(_, m)| m.is_zero())
            && self.density.iter().all(|p| p.value.is_zero())
            && self.sampled.as_ref().map_or(true, |s| s.cell_masses.iter().all(|m| *m == 0.0))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|(_, m)| !m.is_negative())
            && self.density.iter().all(|p| !p.value.is_negative())
            && self.sampled.as_ref().map_or(true, |s| s.cell_masses.iter().all(|m| *m >= -1e-15))
    }

    pub fn scale(&self, c: &Q) -> LineMeasure {
        let cf = to_f64(c);
        LineMeasure {
            atoms: self.atoms.iter().map(|(x, m)| (x.clone(), m * c)).collect(),
            density: self
                .density
                .iter()
                .map(|p| DensityPiece { start: p.start.clone(), end: p.end.clone(), value: &p.value * c })
                .collect(),
            sampled: self.sampled.as_ref().map(|s| SampledDensity {
                grid: s.grid,
                cell_masses: s.cell_masses.iter().map(|m| m * cf).collect(),
            }),
        }
    }

    /// Sum of measures; atoms at the same position are combined.
    pub fn add(&self, o: &LineMeasure) -> LineMeasure {
        let mut atoms: Vec<(Q, Q)> = self.atoms.iter().chain(&o.atoms).cloned().collect();
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Q, Q)> = Vec::new();
        for (x, m) in atoms {
            match merged.last_mut() {
                Some((y, n)) if *y == x => *n += m,
                _ => merged.push((x, m)),
            }
        }
        merged.retain(|(_, m)| !m.is_zero());
        let sampled = match (&self.sampled, &o.sampled) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (Some(a), Some(b)) => {
                assert_eq!(a.grid, b.grid, "sampled densities on different grids");
                Some(SampledDensity {
                    grid: a.grid,
                    cell_masses: a.cell_masses.iter().zip(&b.cell_masses).map(|(x, y)| x + y).collect(),
                })
            }
        };
        LineMeasure {
            atoms: merged,
            density: self.density.iter().chain(&o.density).cloned().collect(),
            sampled,
        }
    }

    pub fn sub(&self, o: &LineMeasure) -> LineMeasure {
        self.add(&o.scale(&qi(-1)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "atoms": self.atoms.iter().map(|(x, m)| [fmt_q(x), fmt_q(m)]).collect::<Vec<_>>(),
            "density": self.density.iter().map(|p| [fmt_q(&p.start), fmt_q(&p.end), fmt_q(&p.value)]).collect::<Vec<_>>(),
        })
    }
}

/// Distributional second derivative of `u` on the open line.
pub fn ma_measure(u: &ConvexProfile) -> LineMeasure {
    match u {
        ConvexProfile::Pl(p) => LineMeasure {
            atoms: p
                .bps
                .iter()
                .enumerate()
                .map(|(i, b)| (b.clone(), &p.slopes[i + 1] - &p.slopes[i]))
                .collect(),
            ..Default::default()
        },
        ConvexProfile::Sampled(s) => LineMeasure {
            sampled: Some(SampledDensity {
                grid: s.grid,
                cell_masses: s.derivs.windows(2).map(|w| w[1] - w[0]).collect(),
            }),
            ..Default::default()
        },
    }
}

/// σ⁺ − σ⁻.
pub fn npp_mass(u: &ConvexProfile) -> ExtReal {
    match (u.sigma_minus(), u.sigma_plus()) {
        (Slope::Exact(a), Slope::Exact(b)) => ExtReal::Exact(b - a),
        (a, b) => ExtReal::Approx(b.to_f64() - a.to_f64()),
    }
}

pub fn eval(u: &ConvexProfile, t: &Q) -> ExtReal {
    u.eval(t)
}

/// Pointwise maximum; sampled inputs are linearized first.
pub fn profile_max(u: &ConvexProfile, v: &ConvexProfile) -> ConvexProfile {
    ConvexProfile::Pl(u.to_pl().pointwise_max(&v.to_pl()))
}

fn same_slope(a: &Slope, b: &Slope) -> bool {
    match (a, b) {
        (Slope::Exact(x), Slope::Exact(y)) => x == y,
        _ => (a.to_f64() - b.to_f64()).abs() <= 1e-12,
    }
}

/// ∫ (f − g) dμ; exact for piecewise-linear data.
pub fn integrate_against(f: &ConvexProfile, g: &ConvexProfile, mu: &LineMeasure) -> Result<ExtReal, ProfileError> {
    if mu.sampled.is_some()
        && (!same_slope(&f.sigma_minus(), &g.sigma_minus()) || !same_slope(&f.sigma_plus(), &g.sigma_plus()))
    {
        return Err(ProfileError::UnboundedDifference);
    }
    if let (ConvexProfile::Pl(a), ConvexProfile::Pl(b), None) = (f, g, &mu.sampled) {
        return Ok(ExtReal::Exact(integrate_pl_diff(a, b, mu)));
    }
    let diff = |t: f64| f.eval_f64(t) - g.eval_f64(t);
    let mut acc = 0.0;
    for (x, m) in &mu.atoms {
        acc += to_f64(m) * diff(to_f64(x));
    }
    for p in &mu.density {
        let (a, b) = (to_f64(&p.start), to_f64(&p.end));
        let n = 256;
        let h = (b - a) / n as f64;
        let s: f64 = (0..n).map(|i| (diff(a + h * i as f64) + diff(a + h * (i + 1) as f64)) * 0.5 * h).sum();
        acc += to_f64(&p.value) * s;
    }
    if let Some(s) = &mu.sampled {
        let g = s.grid;
        for (i, m) in s.cell_masses.iter().enumerate() {
            acc += m * 0.5 * (diff(g.point(i)) + diff(g.point(i + 1)));
        }
    }
    Ok(ExtReal::Approx(acc))
}

/// Exact ∫ (a − b) dμ for piecewise-linear a, b and exact μ.
pub fn integrate_pl_diff(a: &Pl, b: &Pl, mu: &LineMeasure) -> Q {
    let d = a.sub(b);
    integrate_pl(&d, mu)
}

pub fn integrate_pl(d: &Pl, mu: &LineMeasure) -> Q {
    assert!(mu.sampled.is_none());
    let mut acc = Q::zero();
    for (x, m) in &mu.atoms {
        if !m.is_zero() {
            acc += m * d.eval(x);
        }
    }
    for p in &mu.density {
        acc += &p.value * d.integral(&p.start, &p.end);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularityClass {
    Bounded,
    Algebraic,
    AlmostAsymptoticallyAlgebraic,
    Other,
}

/// Sandwich witness: w_k + (f − ref)/k − C ≤ u ≤ w_k + C for k = 1, 2, …
#[derive(Clone, Debug)]
pub struct AlgebraicWitness {
    pub approximants: Vec<ConvexProfile>,
    pub f: ConvexProfile,
    pub c: f64,
    pub grid: Grid,
}

impl AlgebraicWitness {
    pub fn verify(&self, u: &ConvexProfile, reference: &ReferenceProfile) -> bool {
        let algebraic = |p: &ConvexProfile| p.sigma_minus().exact().is_some() && p.sigma_plus().exact().is_some();
        if self.approximants.is_empty() || !algebraic(&self.f) || !self.approximants.iter().all(algebraic) {
            return false;
        }
        let r = reference.profile();
        let tol = 1e-9;
        self.approximants.iter().enumerate().all(|(i, w)| {
            let k = (i + 1) as f64;
            // asymptotic form of the sandwich
            let slope_ok = |sel: fn(&ConvexProfile) -> Slope, sign: f64| {
                let (su, sw, sf, sr) = (sel(u).to_f64(), sel(w).to_f64(), sel(&self.f).to_f64(), sel(r).to_f64());
                sign * (sw + (sf - sr) / k - su) <= tol && sign * (su - sw) <= tol
            };
            slope_ok(ConvexProfile::sigma_plus, 1.0)
                && slope_ok(ConvexProfile::sigma_minus, -1.0)
                && (0..self.grid.n).all(|j| {
                    let t = self.grid.point(j);
                    let (uu, ww) = (u.eval_f64(t), w.eval_f64(t));
                    let lower = ww + (self.f.eval_f64(t) - r.eval_f64(t)) / k - self.c;
                    lower <= uu + tol && uu <= ww + self.c + tol
                })
        })
    }
}

/// Classification of the singularity type of `u` relative to `reference`.
pub fn singularity_class(
    u: &ConvexProfile,
    reference: &ReferenceProfile,
    witness: Option<&AlgebraicWitness>,
) -> SingularityClass {
    let r = reference.profile();
    if same_slope(&u.sigma_minus(), &r.sigma_minus()) && same_slope(&u.sigma_plus(), &r.sigma_plus()) {
        return SingularityClass::Bounded;
    }
    if u.sigma_minus().exact().is_some() && u.sigma_plus().exact().is_some() {
        return SingularityClass::Algebraic;
    }
    match witness {
        Some(w) if w.verify(u, reference) => SingularityClass::AlmostAsymptoticallyAlgebraic,
        _ => SingularityClass::Other,
    }
}

/// JSON form of a profile (`profile.json`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ProfileJson {
    #[serde(rename = "pl")]
    Pl {
        #[serde(with = "rational::serde_vec_q")]
        breakpoints: Vec<Q>,
        #[serde(with = "rational::serde_vec_q")]
        slopes: Vec<Q>,
        #[serde(with = "rational::serde_q")]
        anchor_value: Q,
    },
    #[serde(rename = "sampled")]
    Sampled {
        t_min: f64,
        t_max: f64,
        values: Vec<f64>,
        derivatives: Vec<f64>,
        sigma_minus: f64,
        sigma_plus: f64,
    },
    #[serde(rename = "softplus")]
    Softplus {
        #[serde(with = "rational::serde_q")]
        degree: Q,
        #[serde(default)]
        n: Option<usize>,
    },
}

impl ProfileJson {
    pub fn into_profile(self) -> Result<ConvexProfile, ProfileError> {
        match self {
            ProfileJson::Pl { breakpoints, slopes, anchor_value } => ConvexProfile::pl(breakpoints, slopes, anchor_value),
            ProfileJson::Sampled { t_min, t_max, values, derivatives, sigma_minus, sigma_plus } => {
                let grid = Grid { n: values.len(), t_min, t_max };
                let exact_or_real = |x: f64| {
                    if x.fract() == 0.0 {
                        Slope::Exact(from_f64(x))
                    } else {
                        Slope::Real(x)
                    }
                };
                Ok(ConvexProfile::Sampled(Sampled::new(
                    grid,
                    values,
                    derivatives,
                    exact_or_real(sigma_minus),
                    exact_or_real(sigma_plus),
                )?))
            }
            ProfileJson::Softplus { degree, n } => {
                let grid = Grid { n: n.unwrap_or(4096), ..Grid::default() };
                Ok(ConvexProfile::Sampled(Sampled::log_one_plus_exp(&degree, grid)))
            }
        }
    }

    pub fn from_profile(p: &ConvexProfile) -> ProfileJson {
        match p {
            ConvexProfile::Pl(p) => ProfileJson::Pl {
                breakpoints: p.bps.clone(),
                slopes: p.slopes.clone(),
                anchor_value: p.anchor.clone(),
            },
            ConvexProfile::Sampled(s) => ProfileJson::Sampled {
                t_min: s.grid.t_min,
                t_max: s.grid.t_max,
                values: s.values.clone(),
                derivatives: s.derivs.clone(),
                sigma_minus: s.sigma_minus.to_f64(),
                sigma_plus: s.sigma_plus.to_f64(),
            },
        }
    }
}
