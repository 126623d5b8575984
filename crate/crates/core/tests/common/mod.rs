#![allow(dead_code)]

use adelic_energy::berkovich::Point;
use adelic_energy::psh1d::{ConvexProfile, Pl};
use adelic_energy::rational::{q, qi, Q};
use num::{BigInt, Integer, One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random convex PL profile with slopes running from 0 up to `deg`.
pub fn rand_pl(rng: &mut ChaCha8Rng, deg: i64) -> Pl {
    let n = rng.gen_range(1..=4usize);
    let mut bps: Vec<i64> = Vec::new();
    while bps.len() < n {
        let b = rng.gen_range(-10..=10);
        if !bps.contains(&b) {
            bps.push(b);
        }
    }
    bps.sort();
    let mut inner: Vec<i64> = (0..n - 1).map(|_| rng.gen_range(0..=4 * deg)).collect();
    inner.sort();
    let mut slopes = vec![Q::zero()];
    slopes.extend(inner.into_iter().map(|s| q(s, 4)));
    slopes.push(qi(deg));
    Pl::new(bps.into_iter().map(|b| q(b, 2)).collect(), slopes, q(rng.gen_range(-8..=8), 4)).unwrap()
}

pub fn profile(pl: Pl) -> ConvexProfile {
    ConvexProfile::from_pl(pl).unwrap()
}

pub fn pl_of(c: &ConvexProfile) -> &Pl {
    c.as_pl().expect("piecewise-linear profile")
}

/// ∫_a^b of the slope function, a ≤ b.
fn slope_integral(pl: &Pl, a: &Q, b: &Q) -> Q {
    let bps = pl.breakpoints();
    let slopes = pl.slopes();
    let mut total = Q::zero();
    for (i, s) in slopes.iter().enumerate() {
        let lo = if i == 0 { a.clone() } else { bps[i - 1].clone().max(a.clone()) };
        let hi = if i == bps.len() { b.clone() } else { bps[i].clone().min(b.clone()) };
        if hi > lo {
            total += s * (hi - lo);
        }
    }
    total
}

/// Value from the value at 0 and the slopes.
pub fn value(pl: &Pl, t: &Q) -> Q {
    let zero = Q::zero();
    if *t >= zero {
        pl.anchor() + slope_integral(pl, &zero, t)
    } else {
        pl.anchor() - slope_integral(pl, t, &zero)
    }
}

/// Limit at −∞ for a profile with left slope 0.
pub fn left_limit(pl: &Pl) -> Q {
    assert!(pl.slopes()[0].is_zero());
    match pl.breakpoints().first() {
        Some(b) => value(pl, b),
        None => pl.anchor().clone(),
    }
}

/// (location, mass) of the point masses of u″.
pub fn atoms(pl: &Pl) -> Vec<(Q, Q)> {
    let s = pl.slopes();
    pl.breakpoints().iter().enumerate().map(|(i, b)| (b.clone(), &s[i + 1] - &s[i])).collect()
}

pub fn mass(pl: &Pl) -> Q {
    let s = pl.slopes();
    &s[s.len() - 1] - &s[0]
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut r = p.clone();
            r.insert(pos, n - 1);
            out.push(r);
        }
    }
    out
}

/// Σ_k ∫(φ_k − ψ_k) ∧_{j<k}(dd^c φ_j) ∧_{j>k}(dd^c ψ_j) for additive profiles,
/// expanded over assignments of the d factors to the d axes.
pub fn mixed_energy_oracle(phi: &[Vec<Pl>], psi: &[Vec<Pl>]) -> Q {
    let d = phi.len() - 1;
    let mut total = Q::zero();
    for k in 0..=d {
        let factors: Vec<&Vec<Pl>> = (0..=d).filter(|&j| j != k).map(|j| if j < k { &phi[j] } else { &psi[j] }).collect();
        for sigma in permutations(d) {
            // factor sigma[i] sits on axis i
            for i in 0..d {
                let mu = &factors[sigma[i]][i];
                let w: Q = atoms(mu).iter().map(|(b, m)| m * (value(&phi[k][i], b) - value(&psi[k][i], b))).sum();
                let others: Q = (0..d).filter(|&a| a != i).map(|a| mass(&factors[sigma[a]][a])).product();
                total += w * others;
            }
        }
    }
    total
}

pub fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |a, k| a * BigInt::from(k))
}

/// p-adic valuation of a nonzero rational by repeated division.
pub fn valuation(p: u64, x: &Q) -> i64 {
    let pb = BigInt::from(p);
    let count = |n: &BigInt| {
        let mut n = n.abs();
        let mut c = 0;
        while n.is_multiple_of(&pb) {
            n /= &pb;
            c += 1;
        }
        c
    };
    count(x.numer()) - count(x.denom())
}

fn pole(p: u64, x: &Q) -> i64 {
    if x.is_zero() {
        0
    } else {
        (-valuation(p, x)).max(0)
    }
}

/// Separation depth of the paths from the Gauss point to x and to a.
pub fn meet_depth(p: u64, x: &Point, a: &Point) -> Option<Q> {
    match (x, a) {
        (Point::Infinity, Point::Infinity) => None,
        (Point::Finite(u), Point::Infinity) | (Point::Infinity, Point::Finite(u)) => Some(qi(pole(p, u))),
        (Point::Finite(u), Point::Finite(v)) if u == v => None,
        (Point::Finite(u), Point::Finite(v)) => Some(qi(valuation(p, &(u - v)) + pole(p, u) + pole(p, v))),
    }
}

/// Random rational with a random p-power factor.
pub fn rand_rational(rng: &mut ChaCha8Rng, p: u64) -> Q {
    let mut a = rng.gen_range(-40i64..=40);
    if a == 0 {
        a = 1;
    }
    let b = rng.gen_range(1i64..=25);
    let e = rng.gen_range(-2i32..=3);
    let pe = Q::from_integer(BigInt::from(p).pow(e.unsigned_abs()));
    if e < 0 {
        q(a, b) / pe
    } else {
        q(a, b) * pe
    }
}

/// Naive Weil height log max(|a|, |b|) of a/b in lowest terms.
pub fn weil(x: &Q) -> f64 {
    let a = x.numer().abs();
    let b = x.denom().abs();
    let m = if a > b { a } else { b };
    m.to_f64().unwrap().ln()
}
