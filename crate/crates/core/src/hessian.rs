//! φ(y) = βY⁻¹βᵗ for Y = Y₀ + Σ y_j Y_j, β = β₀ + Σ y_j β_j: Gram form of the
//! Hessian, empirical constants for the flag-condition bounds, and the
//! integrability bookkeeping of the resulting integrand.

use nalgebra::{DMatrix, DVector};
use num::traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rational::{from_f64, q, qi, to_f64, Q};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HessianError {
    #[error("family shape: {0}")]
    Shape(String),
    #[error("Y0 is not positive definite")]
    NotPositiveDefinite,
    #[error("Y_{0} is not positive semidefinite")]
    NotSemidefinite(usize),
    #[error("beta_{0} is not in the row space of Y_{0}")]
    BetaOutsideRowSpace(usize),
    #[error("flag condition fails: ker Y_{0} is not contained in ker Y_{1}")]
    FlagViolated(usize, usize),
    #[error("Y_{0} is not in leading block form")]
    NotBlockForm(usize),
    #[error("evaluation point has an entry below the floor")]
    BelowFloor,
    #[error("index sets need cardinality g")]
    BadIndexSets,
}

const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FlagFamily {
    g: usize,
    d: usize,
    y: Vec<DMatrix<f64>>,
    beta: Vec<DVector<f64>>,
    ranks: Vec<usize>,
    flag_ok: bool,
}

fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let e = m.clone().symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let (ev, _) = sym_eigen(m);
    let top = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    ev.iter().filter(|x| x.abs() > RANK_TOL * top.max(1.0)).count()
}

fn kernel_basis(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let (ev, vecs) = sym_eigen(m);
    let top = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    (0..ev.len())
        .filter(|&i| ev[i].abs() <= RANK_TOL * top.max(1.0))
        .map(|i| vecs.column(i).into_owned())
        .collect()
}

impl FlagFamily {
    pub fn new(y: Vec<DMatrix<f64>>, beta: Vec<DVector<f64>>) -> Result<FlagFamily, HessianError> {
        if y.len() < 2 || beta.len() != y.len() {
            return Err(HessianError::Shape("need Y_0..Y_d and beta_0..beta_d with d >= 1".into()));
        }
        let g = y[0].nrows();
        for (j, m) in y.iter().enumerate() {
            if m.nrows() != g || m.ncols() != g || beta[j].len() != g {
                return Err(HessianError::Shape(format!("entry {j} has the wrong size")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(HessianError::Shape(format!("Y_{j} is not symmetric")));
            }
        }
        if y[0].clone().cholesky().is_none() {
            return Err(HessianError::NotPositiveDefinite);
        }
        let mut ranks = Vec::new();
        for (j, m) in y.iter().enumerate() {
            let (ev, _) = sym_eigen(m);
            let top = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if ev.iter().any(|x| *x < -RANK_TOL * top.max(1.0)) {
                return Err(HessianError::NotSemidefinite(j));
            }
            ranks.push(numeric_rank(m));
            for k in kernel_basis(m) {
                if beta[j].dot(&k).abs() > 1e-9 * beta[j].norm().max(1.0) {
                    return Err(HessianError::BetaOutsideRowSpace(j));
                }
            }
        }
        let d = y.len() - 1;
        let mut flag_ok = true;
        'outer: for j in 1..=d {
            let ker = kernel_basis(&y[j]);
            for l in j + 1..=d {
                for k in &ker {
                    if (&y[l] * k).norm() > 1e-9 * y[l].amax().max(1.0) {
                        flag_ok = false;
                        break 'outer;
                    }
                }
            }
        }
        Ok(FlagFamily { g, d, y, beta, ranks, flag_ok })
    }

    /// Block recipe: Y_j = diag(A_j, 0) with A_j positive definite of size r_j,
    /// r_j nonincreasing; β_j = α_j Y_j.
    pub fn structured(g: usize, ranks: &[usize], seed: u64) -> FlagFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![random_spd(g, g, &mut rng)];
        for &r in ranks {
            y.push(random_spd(g, r, &mut rng));
        }
        let beta = y
            .iter()
            .map(|m| {
                let alpha = DVector::from_fn(g, |_, _| rng.gen_range(-1.0..1.0));
                m.transpose() * alpha
            })
            .collect();
        FlagFamily::new(y, beta).expect("structured family is valid")
    }

    /// Random structured family with nonincreasing random ranks in 1..=g.
    pub fn random(g: usize, d: usize, seed: u64) -> FlagFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let mut ranks: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=g)).collect();
        ranks.sort_unstable_by(|a, b| b.cmp(a));
        FlagFamily::structured(g, &ranks, seed)
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn flag_ok(&self) -> bool {
        self.flag_ok
    }

    pub fn y_mats(&self) -> &[DMatrix<f64>] {
        &self.y
    }

    pub fn betas(&self) -> &[DVector<f64>] {
        &self.beta
    }

    /// Leading-block form: entries outside the leading rk_j block vanish.
    pub fn is_block_form(&self) -> bool {
        self.y.iter().zip(&self.ranks).all(|(m, &r)| {
            (0..self.g).all(|a| (0..self.g).all(|b| (a < r && b < r) || m[(a, b)] == 0.0))
        })
    }

    fn assemble(&self, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let mut ym = self.y[0].clone();
        let mut b = self.beta[0].clone();
        for j in 1..=self.d {
            ym += &self.y[j] * y[j - 1];
            b += &self.beta[j] * y[j - 1];
        }
        (ym, b)
    }
}

fn random_spd(g: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
    let block = &a * a.transpose() + DMatrix::identity(r, r) * (r as f64) * 0.5;
    let mut m = DMatrix::zeros(g, g);
    m.view_mut((0, 0), (r, r)).copy_from(&block);
    m
}

/// Quantities at one evaluation point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub phi: f64,
    pub y_inv: DMatrix<f64>,
    /// W_0..W_d
    pub w: Vec<DVector<f64>>,
    pub hessian: DMatrix<f64>,
    /// max |W_0 + Σ y_j W_j|
    pub relation_residual: f64,
}

pub fn phi(fam: &FlagFamily, y: &[f64]) -> f64 {
    let (ym, b) = fam.assemble(y);
    let sol = ym.cholesky().expect("Y positive definite").solve(&b);
    b.dot(&sol)
}

/// Hessian 2 W_i Y⁻¹ W_jᵗ with W_j = β_j − βY⁻¹Y_j.
pub fn hessian_gram(fam: &FlagFamily, y: &[f64]) -> Evaluation {
    assert_eq!(y.len(), fam.d);
    let (ym, b) = fam.assemble(y);
    let chol = ym.cholesky().expect("Y positive definite");
    let y_inv = chol.inverse();
    let yib = &y_inv * &b;
    let phi = b.dot(&yib);
    let w: Vec<DVector<f64>> = (0..=fam.d).map(|j| &fam.beta[j] - &fam.y[j] * &yib).collect();
    let yiw: Vec<DVector<f64>> = w.iter().map(|wj| &y_inv * wj).collect();
    let hessian = DMatrix::from_fn(fam.d, fam.d, |i, j| 2.0 * w[i + 1].dot(&yiw[j + 1]));
    let mut rel = w[0].clone();
    for j in 1..=fam.d {
        rel += &w[j] * y[j - 1];
    }
    let scale = w.iter().map(|v| v.amax()).fold(1.0, f64::max) * y.iter().fold(1.0, |a: f64, b| a.max(*b));
    Evaluation { phi, y_inv, w, hessian, relation_residual: rel.amax() / scale }
}

/// Central second differences of φ with steps h_i = rel·max(1, y_i).
/// φ is evaluated exactly on the dyadic values of the inputs, so only the O(h²) truncation remains.
pub fn finite_difference_hessian(fam: &FlagFamily, y: &[f64], rel: f64) -> DMatrix<f64> {
    let d = y.len();
    let exact = ExactFamily {
        y: fam.y.iter().map(|m| QMatrix { rows: (0..fam.g).map(|a| (0..fam.g).map(|b| from_f64(m[(a, b)])).collect()).collect() }).collect(),
        beta: fam.beta.iter().map(|v| v.iter().map(|x| from_f64(*x)).collect()).collect(),
    };
    let y0: Vec<Q> = y.iter().map(|v| from_f64(*v)).collect();
    let h: Vec<Q> = y.iter().map(|v| from_f64(rel * v.abs().max(1.0))).collect();
    let at = |di: &[(usize, bool)]| {
        let mut z = y0.clone();
        for &(i, up) in di {
            if up {
                z[i] += &h[i];
            } else {
                z[i] -= &h[i];
            }
        }
        exact.phi(&z)
    };
    let centre = at(&[]);
    DMatrix::from_fn(d, d, |i, j| {
        let v = if i == j {
            (at(&[(i, true)]) - &centre * Q::from_integer(2.into()) + at(&[(i, false)])) / (&h[i] * &h[i])
        } else {
            (at(&[(i, true), (j, true)]) - at(&[(i, true), (j, false)]) - at(&[(i, false), (j, true)])
                + at(&[(i, false), (j, false)]))
                / (Q::from_integer(4.into()) * &h[i] * &h[j])
        };
        to_f64(&v)
    })
}

/// Gram matrix singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Exact small rational matrices for the slow path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QMatrix {
    pub rows: Vec<Vec<Q>>,
}

impl QMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn inverse(&self) -> Option<QMatrix> {
        let n = self.n();
        let mut a: Vec<Vec<Q>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { Q::one() } else { Q::zero() }));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n).find(|&r| !a[r][c].is_zero())?;
            a.swap(c, p);
            let inv = Q::one() / &a[c][c];
            for x in a[c].iter_mut() {
                *x *= &inv;
            }
            for r in 0..n {
                if r != c && !a[r][c].is_zero() {
                    let f = a[r][c].clone();
                    for k in 0..2 * n {
                        let v = &a[c][k] * &f;
                        a[r][k] -= v;
                    }
                }
            }
        }
        Some(QMatrix { rows: a.into_iter().map(|r| r[n..].to_vec()).collect() })
    }

    pub fn mul_vec(&self, v: &[Q]) -> Vec<Q> {
        self.rows.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

fn dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact family data: Y_0..Y_d and β_0..β_d.
#[derive(Clone, Debug)]
pub struct ExactFamily {
    pub y: Vec<QMatrix>,
    pub beta: Vec<Vec<Q>>,
}

impl ExactFamily {
    fn assemble(&self, y: &[Q]) -> (QMatrix, Vec<Q>) {
        let g = self.y[0].n();
        let mut m = self.y[0].clone();
        let mut b = self.beta[0].clone();
        for (j, yj) in y.iter().enumerate() {
            for a in 0..g {
                for c in 0..g {
                    m.rows[a][c] += yj * &self.y[j + 1].rows[a][c];
                }
                b[a] += yj * &self.beta[j + 1][a];
            }
        }
        (m, b)
    }

    pub fn phi(&self, y: &[Q]) -> Q {
        let (m, b) = self.assemble(y);
        let inv = m.inverse().expect("Y invertible");
        dot(&b, &inv.mul_vec(&b))
    }

    pub fn hessian(&self, y: &[Q]) -> Vec<Vec<Q>> {
        let (m, b) = self.assemble(y);
        let inv = m.inverse().expect("Y invertible");
        let yib = inv.mul_vec(&b);
        let w: Vec<Vec<Q>> = (0..self.y.len())
            .map(|j| {
                let yj_yib = self.y[j].mul_vec(&yib);
                self.beta[j].iter().zip(&yj_yib).map(|(a, c)| a - c).collect()
            })
            .collect();
        let d = y.len();
        (0..d)
            .map(|i| (0..d).map(|j| qi(2) * dot(&w[i + 1], &inv.mul_vec(&w[j + 1]))).collect())
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub name: &'static str,
    pub c_hat: f64,
    pub argmax: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub lemmas: Vec<LemmaReport>,
    /// max |(W_j)_ℓ| over ℓ > rk_j
    pub above_rank_max: f64,
    pub points: usize,
}

impl BoundsReport {
    pub fn get(&self, name: &str) -> Option<&LemmaReport> {
        self.lemmas.iter().find(|l| l.name == name)
    }
}

pub const BOUND_NAMES: [&str; 5] = ["inverse_entries", "w_entries", "hessian_entries", "w_subset", "minor_determinants"];

fn subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == r)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn minor_det(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let a = |i: usize, j: usize| m[(rows[i], cols[j])];
    match rows.len() {
        0 => 1.0,
        1 => a(0, 0),
        2 => a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
        3 => {
            a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
        }
        n => DMatrix::from_fn(n, n, a).lu().determinant(),
    }
}

/// Empirical constants: sup over the grid of (quantity × reciprocal bound).
pub fn verify_bounds(fam: &FlagFamily, grid: &[Vec<f64>]) -> Result<BoundsReport, HessianError> {
    if !fam.flag_ok {
        for j in 1..=fam.d {
            for l in j + 1..=fam.d {
                if fam.ranks[l] > fam.ranks[j] {
                    return Err(HessianError::FlagViolated(j, l));
                }
            }
        }
        return Err(HessianError::FlagViolated(1, 2));
    }
    for (j, _) in fam.y.iter().enumerate() {
        if !fam.is_block_form() {
            return Err(HessianError::NotBlockForm(j));
        }
    }
    let (g, d) = (fam.g, fam.d);
    let rk = &fam.ranks;
    let mut best = vec![(0.0f64, Vec::new()); 5];
    let mut above = 0.0f64;
    let nonempty: Vec<Vec<usize>> = (1..=d).flat_map(|r| subsets(d, r)).collect();
    let minors: Vec<(Vec<usize>, Vec<usize>)> = (1..=g.min(d))
        .flat_map(|r| {
            let s = subsets(d, r);
            s.iter().flat_map(|j| s.iter().map(move |k| (j.clone(), k.clone()))).collect::<Vec<_>>()
        })
        .collect();
    let mut upd = |slot: usize, v: f64, y: &[f64]| {
        if v > best[slot].0 || best[slot].1.is_empty() {
            best[slot] = (v.max(best[slot].0), if v >= best[slot].0 { y.to_vec() } else { best[slot].1.clone() });
        }
    };
    for y in grid {
        let e = hessian_gram(fam, y);
        let yy = |j: usize| if j == 0 { 1.0 } else { y[j - 1] };
        let total: f64 = (0..=d).map(yy).sum();
        for k in 1..=g {
            for l in 1..=g {
                let s: f64 = (1..=d).filter(|&j| rk[j] >= k.min(l)).map(yy).sum();
                upd(0, e.y_inv[(k - 1, l - 1)].abs() * (1.0 + s), y);
            }
        }
        for j in 0..=d {
            for l in 0..g {
                let v = e.w[j][l].abs();
                if l < rk[j] {
                    upd(1, v, y);
                } else {
                    above = above.max(v);
                }
            }
        }
        for i in 1..=d {
            for j in 1..=d {
                let v = e.hessian[(i - 1, j - 1)].abs() / 2.0;
                upd(2, v * (1.0 + (yy(i) * yy(j)).sqrt()), y);
            }
        }
        for set in &nonempty {
            let mut wi = DVector::zeros(g);
            for &i in set {
                wi += &e.w[i + 1] * yy(i + 1);
            }
            let q = wi.dot(&(&e.y_inv * &wi));
            let s_i: f64 = set.iter().map(|&i| yy(i + 1)).sum();
            let s_c: f64 = (0..=d).filter(|j| *j == 0 || !set.contains(&(j - 1))).map(yy).sum();
            upd(3, q * total / (s_i * s_c), y);
        }
        for (jj, kk) in &minors {
            let det_sub = minor_det(&e.hessian, jj, kk);
            let inter: Vec<usize> = jj.iter().filter(|x| kk.contains(x)).cloned().collect();
            let s_c: f64 = (0..=d).filter(|j| *j == 0 || !inter.contains(&(j - 1))).map(yy).sum();
            let roots: f64 = jj.iter().chain(kk.iter()).map(|&j| yy(j + 1).sqrt()).product();
            upd(4, det_sub.abs() * total / s_c * roots, y);
        }
    }
    let lemmas = BOUND_NAMES
        .iter()
        .zip(best)
        .map(|(name, (c, arg))| LemmaReport { name, c_hat: c, argmax: arg })
        .collect();
    Ok(BoundsReport { lemmas, above_rank_max: above, points: grid.len() })
}

/// Tensor grid with `n` log-spaced values per axis in [lo, hi].
pub fn log_grid(d: usize, lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..n)
        .map(|i| if n == 1 { lo } else { (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp() })
        .collect();
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct Stability {
    pub name: &'static str,
    pub coarse: f64,
    pub fine: f64,
    pub ratio: f64,
    pub stable: bool,
}

/// Ĉ(fine)/Ĉ(coarse) per bound; a zero constant on both grids counts as stable.
pub fn stability(coarse: &BoundsReport, fine: &BoundsReport, tol: f64) -> Vec<Stability> {
    coarse
        .lemmas
        .iter()
        .zip(&fine.lemmas)
        .map(|(a, b)| {
            let ratio = if a.c_hat == 0.0 && b.c_hat == 0.0 { 1.0 } else { b.c_hat / a.c_hat };
            Stability { name: a.name, coarse: a.c_hat, fine: b.c_hat, ratio, stable: ratio.is_finite() && ratio <= tol }
        })
        .collect()
}

/// Elementary inequality Σs_j (Πt_k)^{1/n} ≤ C Σt_k Πs_j with C = m/(n ε^{m−1}).
pub fn inequality_19(s: &[f64], t: &[f64], eps: f64) -> Result<(f64, f64, f64), HessianError> {
    if s.is_empty() || t.is_empty() {
        return Err(HessianError::Shape("s and t must be nonempty".into()));
    }
    if s.iter().chain(t).any(|x| *x < eps) {
        return Err(HessianError::BelowFloor);
    }
    let (m, n) = (s.len() as f64, t.len() as f64);
    let c = m / (n * eps.powf(m - 1.0));
    let lhs = s.iter().sum::<f64>() * t.iter().product::<f64>().powf(1.0 / n);
    let rhs = c * t.iter().sum::<f64>() * s.iter().product::<f64>();
    Ok((lhs, rhs, c))
}

/// η₁ vanishes for r < g (pulled back from the base), η₂ for r > g (rank of the Hessian).
pub fn integrand_vanishes(r: usize, g: usize) -> bool {
    r != g
}

/// Exponents of |log|q_i|| per coordinate before and after the transfer step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExponentTable {
    pub pre: Vec<Q>,
    pub post: Vec<Q>,
    /// index classes: 0 = I, 1 = I″, 2 = I′
    pub class: Vec<u8>,
    pub n: usize,
}

/// Exponent bookkeeping for index sets J, K ⊆ {1..d} (0-based here).
pub fn exponent_table(j: &[usize], k: &[usize], d: usize) -> ExponentTable {
    let inj = |i: usize| j.contains(&i);
    let ink = |i: usize| k.contains(&i);
    let n = (0..d).filter(|&i| inj(i) && ink(i)).count();
    let half = q(1, 2);
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut class = Vec::new();
    for i in 0..d {
        // η₁: |q log|q||⁻¹ for each of J^c, K^c; η₂: |log|q||^{-1/2} for each of J, K
        let mut e = Q::zero();
        for (inside, _) in [(inj(i), 'J'), (ink(i), 'K')] {
            e += if inside { half.clone() } else { Q::one() };
        }
        pre.push(e.clone());
        let cls = match (inj(i), ink(i)) {
            (true, true) => 0u8,
            (false, false) => 2u8,
            _ => 1u8,
        };
        class.push(cls);
        // fourth root of the Σ-ratio moves 1/4 from every I″, I′ factor to the
        // I factors, 1/(4n) each; with n = 0 the ratio is simply bounded by 1
        let shifted = if cls == 0 { e + Q::new(1.into(), (4 * n as i64).into()) } else { e - q(1, 4) };
        post.push(shifted);
    }
    ExponentTable { pre, post, class, n }
}

/// Expected final exponents (1+1/4n, 1+1/4, 1+3/4) by class.
pub fn expected_exponents(n: usize) -> [Q; 3] {
    let i_exp = if n == 0 { qi(1) } else { qi(1) + Q::new(1.into(), (4 * n as i64).into()) };
    [i_exp, q(5, 4), q(7, 4)]
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureLevel {
    pub w_max: f64,
    pub nodes: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrandReport {
    pub exponents_match: bool,
    pub final_levels: Vec<QuadratureLevel>,
    pub final_stable: bool,
    pub assembled_levels: Vec<QuadratureLevel>,
    pub assembled_stable: bool,
    pub control_levels: Vec<QuadratureLevel>,
    pub control_diverges: bool,
    pub transfer_ratio_max: f64,
    pub transfer_constant: f64,
}

/// ∫_{log 2}^{e^{w_max}} x^{−a} dx in the variable w = log x (trapezoid).
pub fn radial_quadrature(a: f64, w_max: f64, nodes: usize) -> f64 {
    let w0 = 2f64.ln().ln();
    let h = (w_max - w0) / (nodes - 1) as f64;
    let f = |w: f64| ((1.0 - a) * w).exp();
    (0..nodes - 1).map(|i| 0.5 * h * (f(w0 + h * i as f64) + f(w0 + h * (i + 1) as f64))).sum()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Integrability of the bound on the punctured polydisk |q_i| ≤ 1/2 in radial
/// coordinates x_i = |log|q_i||, where dq∧dq̄/|q|² becomes dx up to 2π.
pub fn integrand_bound_check(j: &[usize], k: &[usize], g: usize, d: usize, levels: usize) -> Result<IntegrandReport, HessianError> {
    if j.len() != g || k.len() != g || j.iter().chain(k).any(|&i| i >= d) {
        return Err(HessianError::BadIndexSets);
    }
    let table = exponent_table(j, k, d);
    let want = expected_exponents(table.n);
    let exponents_match = table.post.iter().zip(&table.class).all(|(e, c)| *e == want[*c as usize]);
    let post: Vec<f64> = table.post.iter().map(crate::rational::to_f64).collect();
    let pre: Vec<f64> = table.pre.iter().map(crate::rational::to_f64).collect();
    let amin = post.iter().cloned().fold(f64::INFINITY, f64::min);
    let w_base = 24.0 / (amin - 1.0);
    let spec = |l: usize| {
        let w = w_base * 2f64.powi(l as i32);
        (w, (w * 8.0 * 2f64.powi(l as i32)).ceil() as usize + 1)
    };

    let final_levels: Vec<QuadratureLevel> = (0..levels)
        .map(|l| {
            let (w, n) = spec(l);
            let v = post.iter().map(|&a| radial_quadrature(a, w, n)).product();
            QuadratureLevel { w_max: w, nodes: n, value: v }
        })
        .collect();
    let stable = |lv: &[QuadratureLevel]| lv.windows(2).all(|p| relative_gap(p[0].value, p[1].value) <= 0.02);
    let final_stable = stable(&final_levels);

    let class = table.class.clone();
    let ratio = |x: &[f64]| {
        let total: f64 = 1.0 + x.iter().sum::<f64>();
        let comp: f64 = 1.0 + (0..d).filter(|&i| class[i] != 0).map(|i| x[i]).sum::<f64>();
        comp / total
    };
    let assembled = |x: &[f64]| -> f64 { ratio(x) * x.iter().zip(&pre).map(|(xi, e)| xi.powf(-e)).product::<f64>() };

    let assembled_levels: Vec<QuadratureLevel> = if d <= 3 {
        let w_short = (4.0 * (1 + table.n) as f64).max(12.0) * 4.0;
        (0..levels)
            .map(|l| {
                let w = w_short * 2f64.powi(l as i32);
                let n = (if d == 3 { 48 } else { 160 }) << l;
                QuadratureLevel { w_max: w, nodes: n, value: tensor_quadrature(&assembled, d, w, n) }
            })
            .collect()
    } else {
        Vec::new()
    };
    let assembled_stable = assembled_levels.is_empty() || stable(&assembled_levels);

    // negative control: exponent 1 on the I factors and no ratio
    let control: Vec<f64> = post.iter().zip(&class).map(|(a, c)| if *c == 0 { 1.0 } else { *a }).collect();
    let control_levels: Vec<QuadratureLevel> = (0..levels)
        .map(|l| {
            let (w, n) = spec(l);
            let v = control.iter().map(|&a| radial_quadrature(a, w, n)).product();
            QuadratureLevel { w_max: w, nodes: n, value: v }
        })
        .collect();
    let control_diverges = table.n > 0
        && control_levels.windows(2).all(|p| p[1].value >= p[0].value * 1.5);

    // transfer inequality: assembled ≤ C^{1/4}·final with C from the elementary inequality
    let m = d + 1 - table.n;
    let n = table.n.max(1);
    let eps = 2f64.ln().min(1.0);
    let c_ineq = m as f64 / (n as f64 * eps.powi(m as i32 - 1));
    let transfer_constant = c_ineq.powf(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut transfer_ratio_max = 0.0f64;
    for _ in 0..20_000 {
        let x: Vec<f64> = (0..d).map(|_| (rng.gen_range(eps.ln()..30.0f64)).exp()).collect();
        let fin: f64 = x.iter().zip(&post).map(|(xi, e)| xi.powf(-e)).product();
        transfer_ratio_max = transfer_ratio_max.max(assembled(&x) / fin);
    }
    Ok(IntegrandReport {
        exponents_match,
        final_levels,
        final_stable,
        assembled_levels,
        assembled_stable,
        control_levels,
        control_diverges,
        transfer_ratio_max,
        transfer_constant,
    })
}

/// ∫ over [log 2, e^{w_max}]^d of f(x) dx, trapezoid in w = log x per axis.
fn tensor_quadrature(f: &dyn Fn(&[f64]) -> f64, d: usize, w_max: f64, n: usize) -> f64 {
    let w0 = 2f64.ln().ln();
    let h = (w_max - w0) / (n - 1) as f64;
    let nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = w0 + h * i as f64;
            let wt = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            (w.exp(), wt * w.exp())
        })
        .collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    loop {
        let mut wt = 1.0;
        for a in 0..d {
            x[a] = nodes[idx[a]].0;
            wt *= nodes[idx[a]].1;
        }
        acc += wt * f(&x);
        let mut a = 0;
        loop {
            if a == d {
                return acc;
            }
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// `fam.json`: explicit matrices, or a structured recipe.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyJson {
    Explicit { y: Vec<Vec<Vec<f64>>>, beta: Vec<Vec<f64>> },
    Structured { g: usize, ranks: Vec<usize>, seed: u64 },
}

impl FamilyJson {
    pub fn into_family(self) -> Result<FlagFamily, HessianError> {
        match self {
            FamilyJson::Explicit { y, beta } => {
                let mats = y
                    .iter()
                    .map(|m| {
                        let g = m.len();
                        if m.iter().any(|r| r.len() != g) {
                            return Err(HessianError::Shape("matrices must be square".into()));
                        }
                        Ok(DMatrix::from_fn(g, g, |a, b| m[a][b]))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                FlagFamily::new(mats, beta.into_iter().map(DVector::from_vec).collect())
            }
            FamilyJson::Structured { g, ranks, seed } => {
                if g == 0 || ranks.is_empty() || ranks.iter().any(|&r| r == 0 || r > g) {
                    return Err(HessianError::Shape("ranks must lie in 1..=g".into()));
                }
                Ok(FlagFamily::structured(g, &ranks, seed))
            }
        }
    }
}
