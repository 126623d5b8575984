//! End-to-end acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use adelic_energy::adelic::{
    energy_difference_check, height, intersect, non_integrability_demo, pairing, pullback_ratio, AdelicArithDivisor,
    BoundaryDivisor, CauchySequence, ModelArithDivisor, RationalFunction,
};
use adelic_energy::berkovich::{
    canonical_green, model_green_compare, random_subharmonic_perturbation, slope_rule_holds, BerkTree, Point,
    TreeDivisor,
};
use adelic_energy::degree::{geometric_coefficient, replay, Param};
use adelic_energy::energy::{
    mixed_relative_energy, polarization_check, relative_energy, single_trace, AdditivePshTuple, TraceConfig,
    TraceVerdict,
};
use adelic_energy::energy::escaping_ladder;
use adelic_energy::hessian::{
    hessian_gram, inequality_19, integrand_bound_check, log_grid, singular_values, stability, verify_bounds,
    ExactFamily, FlagFamily, QMatrix,
};
use adelic_energy::psh1d::{ConvexProfile, Pl};
use adelic_energy::rational::{q, qi, to_f64, ExtReal, LogLinear, Q};
use common::*;
use nalgebra::{DMatrix, DVector};
use num::{BigInt, BigUint, One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn exact(v: &ExtReal) -> Result<Q, String> {
    v.exact().cloned().ok_or_else(|| format!("expected an exact value, got {v}"))
}

// 1 ---------------------------------------------------------------------------

fn degree_formula() -> Outcome {
    for g in 1..=8u64 {
        let dp = g * (g + 1) / 2;
        let d = dp + g;
        let two_g = BigInt::from(2).pow(g as u32);
        let ari = factorial(d + 1) / factorial(dp + 1) * &two_g;
        let geo = factorial(d) / factorial(dp) * &two_g;
        let (geo_got, ari_got) = geometric_coefficient(g).map_err(|e| e.to_string())?;
        ensure(geo_got == Q::from_integer(geo.clone()), || format!("g={g}: geometric {geo_got} != {geo}"))?;
        ensure(ari_got == Q::from_integer(ari.clone()), || format!("g={g}: arithmetic {ari_got} != {ari}"))?;
        let (r, _) = replay(g, &Param::Symbolic, &Param::Symbolic).map_err(|e| e.to_string())?;
        let terms: Vec<_> = r.coefficient.0.iter().collect();
        let want_key = (BigUint::from(dp + 1), BigUint::from(g));
        ensure(terms.len() == 1 && *terms[0].0 == want_key && *terms[0].1 == Q::from_integer(ari.clone()), || {
            format!("g={g}: replay gave {}", r.coefficient)
        })?;
        ensure(r.base_exponent == BigUint::from(dp + 1), || format!("g={g}: base exponent {}", r.base_exponent))?;
        let (k, m) = (q(3, 2), qi(5));
        let (rv, _) = replay(g, &Param::Value(k.clone()), &Param::Value(m.clone())).map_err(|e| e.to_string())?;
        let want = Q::from_integer(ari) * num::pow(k.clone(), (dp + 1) as usize) * num::pow(m.clone(), g as usize);
        ensure(rv.coefficient.eval(&k, &m) == want, || format!("g={g}: numeric replay mismatch"))?;
    }
    let (r1, _) = replay(1, &Param::Symbolic, &Param::Symbolic).unwrap();
    let (r2, _) = replay(2, &Param::Symbolic, &Param::Symbolic).unwrap();
    ensure(r1.coefficient.to_string() == "6*k^2*m" && r2.coefficient.to_string() == "120*k^4*m^2", || {
        format!("anchors: {} / {}", r1.coefficient, r2.coefficient)
    })?;
    Ok("g = 1..8 exact; g=1 -> 6*k^2*m, geometric 4".into())
}

// 2 ---------------------------------------------------------------------------

struct RandomTuple {
    phi: Vec<Vec<Pl>>,
    psi: Vec<Vec<Pl>>,
    degrees: Vec<i64>,
}

impl RandomTuple {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> RandomTuple {
        let degrees: Vec<i64> = (0..=d).map(|_| rng.gen_range(1..=3)).collect();
        let phi = degrees.iter().map(|&m| (0..d).map(|_| rand_pl(rng, m)).collect()).collect();
        let psi = degrees.iter().map(|&m| (0..d).map(|_| rand_pl(rng, m)).collect()).collect();
        RandomTuple { phi, psi, degrees }
    }

    fn tuple(&self) -> AdditivePshTuple {
        let rows = |r: &Vec<Vec<Pl>>| r.iter().map(|row| row.iter().cloned().map(profile).collect()).collect();
        AdditivePshTuple::new(rows(&self.phi), rows(&self.psi), self.degrees.iter().map(|&m| qi(m)).collect()).unwrap()
    }
}

fn energy_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut perms_checked = 0usize;
    for case in 0..100 {
        let d = 1 + case % 3;
        let rt = RandomTuple::new(&mut rng, d);
        let t = rt.tuple();
        let e = exact(&mixed_relative_energy(&t).map_err(|e| e.to_string())?)?;
        let oracle = mixed_energy_oracle(&rt.phi, &rt.psi);
        ensure(e == oracle, || format!("case {case}: engine {e} != oracle {oracle}"))?;

        let perms = permutations(d + 1);
        let chosen: Vec<Vec<usize>> = if d <= 2 {
            perms
        } else {
            (0..50).map(|_| perms[rng.gen_range(0..perms.len())].clone()).collect()
        };
        for s in &chosen {
            let v = exact(&mixed_relative_energy(&t.permute(s)).unwrap())?;
            ensure(v == e, || format!("case {case}: permutation {s:?} gives {v} != {e}"))?;
            perms_checked += 1;
        }

        let (lam, lam2) = (q(rng.gen_range(1..=6), 3), q(rng.gen_range(1..=6), 2));
        let m2 = rng.gen_range(1..=3);
        let phi2: Vec<Pl> = (0..d).map(|_| rand_pl(&mut rng, m2)).collect();
        let psi2: Vec<Pl> = (0..d).map(|_| rand_pl(&mut rng, m2)).collect();
        let other = t
            .with_row(0, phi2.iter().cloned().map(profile).collect(), psi2.iter().cloned().map(profile).collect(), qi(m2))
            .unwrap();
        let comb = |a: &[Pl], b: &[Pl]| -> Vec<ConvexProfile> {
            a.iter().zip(b).map(|(x, y)| profile(x.scale(&lam).add(&y.scale(&lam2)))).collect()
        };
        let mixed_deg = &lam * qi(rt.degrees[0]) + &lam2 * qi(m2);
        let combined = t.with_row(0, comb(&rt.phi[0], &phi2), comb(&rt.psi[0], &psi2), mixed_deg).unwrap();
        let lhs = exact(&mixed_relative_energy(&combined).unwrap())?;
        let rhs = &lam * &e + &lam2 * exact(&mixed_relative_energy(&other).unwrap())?;
        ensure(lhs == rhs, || format!("case {case}: multilinearity {lhs} != {rhs}"))?;

        // φ′ = max(φ − c, r − c′) ≤ φ with the same end slopes
        let lower: Vec<Vec<Pl>> = rt
            .phi
            .iter()
            .zip(&rt.degrees)
            .map(|(row, &m)| {
                row.iter()
                    .map(|u| {
                        let r = rand_pl(&mut rng, m);
                        let gap = r.sub(u).sup().unwrap();
                        let c = q(rng.gen_range(0..=8), 4);
                        let c2 = gap + q(rng.gen_range(0..=8), 4);
                        u.shift(&-c).pointwise_max(&r.shift(&-c2))
                    })
                    .collect()
            })
            .collect();
        let lower_t = RandomTuple { phi: lower, psi: rt.psi.clone(), degrees: rt.degrees.clone() };
        let el = exact(&mixed_relative_energy(&lower_t.tuple()).unwrap())?;
        ensure(el <= e, || format!("case {case}: monotonicity {el} > {e}"))?;
        ensure(el == mixed_energy_oracle(&lower_t.phi, &lower_t.psi), || format!("case {case}: oracle on lowered tuple"))?;

        let res = exact(&polarization_check(&t).map_err(|e| e.to_string())?)?;
        ensure(res.is_zero(), || format!("case {case}: polarization residual {res}"))?;
        // independent polarization over all subsets
        let mut pol = Q::zero();
        for mask in 1u32..(1 << (d + 1)) {
            let members: Vec<usize> = (0..=d).filter(|j| mask >> j & 1 == 1).collect();
            let sum_row = |rows: &Vec<Vec<Pl>>| -> Vec<Pl> {
                (0..d).map(|i| members.iter().skip(1).fold(rows[members[0]][i].clone(), |acc, &j| acc.add(&rows[j][i]))).collect()
            };
            let (sp, ss) = (sum_row(&rt.phi), sum_row(&rt.psi));
            let diag = mixed_energy_oracle(&vec![sp; d + 1], &vec![ss; d + 1]);
            let sign = if (d + 1 - members.len()) % 2 == 0 { Q::one() } else { -Q::one() };
            pol += sign * diag;
        }
        let fact = Q::from_integer(factorial(d as u64 + 1));
        ensure(pol == &fact * &e, || format!("case {case}: subset expansion {pol} != (d+1)!·{e}"))?;

        let single = exact(&relative_energy(&t.phi()[0], &t.psi()[0]).unwrap())?;
        let diag_t = AdditivePshTuple::diagonal(t.phi()[0].clone(), t.psi()[0].clone(), qi(rt.degrees[0])).unwrap();
        let diag_e = exact(&mixed_relative_energy(&diag_t).unwrap())?;
        ensure(diag_e == qi(d as i64 + 1) * &single, || format!("case {case}: diagonal {diag_e} vs single {single}"))?;
        let diag_oracle = mixed_energy_oracle(&vec![rt.phi[0].clone(); d + 1], &vec![rt.psi[0].clone(); d + 1]);
        ensure(diag_e == diag_oracle, || format!("case {case}: diagonal oracle"))?;
    }
    Ok(format!("100 tuples, {perms_checked} permutations, all identities exact"))
}

// 3 ---------------------------------------------------------------------------

fn approximant_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = TraceConfig::default();
    for case in 0..50 {
        let m = rng.gen_range(1..=3);
        let (u, v) = (rand_pl(&mut rng, m), rand_pl(&mut rng, m));
        let bound = v.sub(&u).sup().unwrap();
        let exact_e = mixed_energy_oracle(&[vec![u.clone()], vec![u.clone()]], &[vec![v.clone()], vec![v.clone()]]) / qi(2);
        let tr = single_trace(&[profile(u.clone())], &[profile(v.clone())], &cfg).map_err(|e| e.to_string())?;
        ensure(tr.verdict == TraceVerdict::Stabilized(ExtReal::Exact(exact_e.clone())), || {
            format!("case {case}: verdict {:?}, want {exact_e}", tr.verdict)
        })?;
        for (c, val) in &tr.entries {
            let val = exact(val)?;
            if *c >= bound {
                ensure(val == exact_e, || format!("case {case}: C={c} past bound {bound} gives {val}"))?;
            } else {
                ensure(val >= exact_e, || format!("case {case}: C={c} below the limit"))?;
            }
        }
        let mono = tr.entries.windows(2).all(|w| w[1].1.to_f64() <= w[0].1.to_f64());
        ensure(mono, || format!("case {case}: trace not nonincreasing"))?;
    }
    let relu = ConvexProfile::hinge(qi(1), qi(0));
    let tr = single_trace(&[escaping_ladder(26)], &[relu.clone()], &cfg).unwrap();
    ensure(tr.verdict == TraceVerdict::Diverged, || format!("ladder verdict {:?}", tr.verdict))?;
    // the ladder loses a fixed amount per quadrupling of the level: the trace drops without bound
    let vals: Vec<f64> = tr.entries.iter().map(|(_, v)| v.to_f64()).collect();
    let n = vals.len();
    ensure(vals[n - 1] < vals[n - 6] - 1.0, || format!("ladder trace too flat: {:?}", &vals[n - 6..]))?;
    ensure(relative_energy(&[escaping_ladder(26)], &[relu]).unwrap().is_neg_infinity(), || "ladder energy finite".into())?;
    Ok(format!("50 pairs stabilize at the oracle value; ladder diverges (last {:.3})", vals[n - 1]))
}

// 4 ---------------------------------------------------------------------------

fn energy_difference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let m_inf = rng.gen_range(1..=2);
        let a = q(rng.gen_range(3..=9), rng.gen_range(2..=7));
        let deg = m_inf + 1;
        // D + div f = deg·[0], disjoint from D
        let mover = RationalFunction::new(qi(1), vec![(Q::zero(), deg), (a.clone(), -1)]).unwrap();
        let points = TreeDivisor::new(vec![(Point::Infinity, qi(m_inf)), (Point::Finite(a), qi(1))]);
        let (u, v) = (rand_pl(&mut rng, deg), rand_pl(&mut rng, deg));
        let (k1, k2) = (q(rng.gen_range(-6..=6), 3), q(rng.gen_range(-6..=6), 3));
        let mu = q(rng.gen_range(0..=4), 2);
        let d1 = ModelArithDivisor::new(points.clone(), u.clone(), LogLinear::rational(k1.clone())).unwrap().with_vertical(5, mu.clone());
        let d2 = ModelArithDivisor::new(points, v.clone(), LogLinear::rational(k2.clone())).unwrap().with_vertical(5, mu);
        let chk = energy_difference_check(&d1, &d2, &mover).map_err(|e| e.to_string())?;
        let us = u.shift(&(&k1 - &k2));
        let oracle = mixed_energy_oracle(&[vec![us.clone()], vec![us]], &[vec![v.clone()], vec![v]]);
        ensure((chk.rhs - to_f64(&oracle)).abs() < 1e-12, || format!("case {case}: energy {} vs oracle {oracle}", chk.rhs))?;
        ensure(chk.residual.abs() < 1e-6 && chk.exact_zero, || format!("case {case}: residual {} exact {}", chk.residual, chk.exact_zero))?;
        worst = worst.max(chk.residual.abs());
    }
    Ok(format!("20 pairs, exact zero residual (max float residual {worst:.1e})"))
}

// 5 ---------------------------------------------------------------------------

fn qdet(m: &[Vec<Q>]) -> Q {
    let n = m.len();
    if n == 0 {
        return Q::one();
    }
    (0..n)
        .map(|c| {
            let minor: Vec<Vec<Q>> = m[1..].iter().map(|r| r.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, x)| x.clone()).collect()).collect();
            let s = if c % 2 == 0 { Q::one() } else { -Q::one() };
            s * &m[0][c] * qdet(&minor)
        })
        .sum()
}

/// βY⁻¹βᵗ through Cramer's rule.
fn phi_exact(ys: &[Vec<Vec<Q>>], betas: &[Vec<Q>], y: &[Q]) -> Q {
    let g = betas[0].len();
    let mut m = ys[0].clone();
    let mut b = betas[0].clone();
    for (j, yj) in y.iter().enumerate() {
        for a in 0..g {
            for c in 0..g {
                m[a][c] += yj * &ys[j + 1][a][c];
            }
            b[a] += yj * &betas[j + 1][a];
        }
    }
    let det = qdet(&m);
    let mut x = Vec::new();
    for c in 0..g {
        let mut mc = m.clone();
        for a in 0..g {
            mc[a][c] = b[a].clone();
        }
        x.push(qdet(&mc) / &det);
    }
    b.iter().zip(&x).map(|(u, v)| u * v).sum()
}

fn fd_hessian_oracle(fam: &FlagFamily, y: &[f64], rel: f64) -> DMatrix<f64> {
    let qf = |x: f64| Q::from_float(x).unwrap();
    let ys: Vec<Vec<Vec<Q>>> =
        fam.y_mats().iter().map(|m| (0..m.nrows()).map(|a| (0..m.ncols()).map(|c| qf(m[(a, c)])).collect()).collect()).collect();
    let betas: Vec<Vec<Q>> = fam.betas().iter().map(|v| v.iter().map(|x| qf(*x)).collect()).collect();
    let y0: Vec<Q> = y.iter().map(|v| qf(*v)).collect();
    let h: Vec<Q> = y.iter().map(|v| qf(rel * v.abs().max(1.0))).collect();
    let at = |moves: &[(usize, i32)]| {
        let mut z = y0.clone();
        for &(i, s) in moves {
            z[i] += &h[i] * qi(s as i64);
        }
        phi_exact(&ys, &betas, &z)
    };
    let d = y.len();
    let centre = at(&[]);
    DMatrix::from_fn(d, d, |i, j| {
        let v = if i == j {
            (at(&[(i, 1)]) - qi(2) * &centre + at(&[(i, -1)])) / (&h[i] * &h[i])
        } else {
            (at(&[(i, 1), (j, 1)]) - at(&[(i, 1), (j, -1)]) - at(&[(i, -1), (j, 1)]) + at(&[(i, -1), (j, -1)]))
                / (qi(4) * &h[i] * &h[j])
        };
        to_f64(&v)
    })
}

fn hessian_gram_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let g = 1 + (seed % 3) as usize;
        let d = 1 + (seed % 6) as usize;
        let fam = FlagFamily::random(g, d, seed);
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5f64).exp()).collect();
        let e = hessian_gram(&fam, &y);
        let fd = fd_hessian_oracle(&fam, &y, 1e-4);
        let scale = e.hessian.amax();
        let err = (&fd - &e.hessian).amax() / scale;
        worst = worst.max(err);
        ensure(err <= 1e-5, || format!("family {seed} (g={g}, d={d}): relative error {err:e}"))?;
        ensure((&e.hessian - e.hessian.transpose()).amax() <= 1e-12 * scale, || format!("family {seed}: not symmetric"))?;
        let eig = e.hessian.clone().symmetric_eigen().eigenvalues;
        let trace = e.hessian.trace();
        ensure(eig.min() >= -1e-10 * trace, || format!("family {seed}: eigenvalue {}", eig.min()))?;
        let sv = singular_values(&e.hessian);
        ensure(sv.iter().skip(g).all(|s| *s <= 1e-8 * sv[0]), || format!("family {seed}: rank above {g}: {sv:?}"))?;
        ensure(e.relation_residual <= 1e-10, || format!("family {seed}: relation residual {}", e.relation_residual))?;
    }
    // 1×1: Y₀ = Y₁ = 1, β₀ = 0, β₁ = b
    for (b, y) in [(qi(1), qi(1)), (q(3, 2), q(2, 7)), (qi(-2), qi(5))] {
        let fam = ExactFamily {
            y: vec![QMatrix { rows: vec![vec![qi(1)]] }, QMatrix { rows: vec![vec![qi(1)]] }],
            beta: vec![vec![Q::zero()], vec![b.clone()]],
        };
        let h = fam.hessian(&[y.clone()]);
        let want = qi(2) * &b * &b / num::pow(qi(1) + &y, 3);
        ensure(h[0][0] == want, || format!("1x1 closed form: {} != {want}", h[0][0]))?;
        ensure(fam.phi(&[y.clone()]) == &b * &b * &y * &y / (qi(1) + &y), || "1x1 phi".into())?;
    }
    Ok(format!("100 families, worst FD relative error {worst:.2e}; 1x1 closed form exact"))
}

// 6 ---------------------------------------------------------------------------

fn sup_inverse_and_hessian(fam: &FlagFamily, grid: &[Vec<f64>]) -> (f64, f64) {
    let (g, d) = (fam.g(), fam.d());
    let rk = fam.ranks();
    let (mut c_inv, mut c_hess) = (0.0f64, 0.0f64);
    for y in grid {
        let mut ym = fam.y_mats()[0].clone();
        let mut b: DVector<f64> = fam.betas()[0].clone();
        for j in 1..=d {
            ym += &fam.y_mats()[j] * y[j - 1];
            b += &fam.betas()[j] * y[j - 1];
        }
        let inv = ym.clone().try_inverse().unwrap();
        for k in 1..=g {
            for l in 1..=g {
                let s: f64 = (1..=d).filter(|&j| rk[j] >= k.min(l)).map(|j| y[j - 1]).sum();
                c_inv = c_inv.max(inv[(k - 1, l - 1)].abs() * (1.0 + s));
            }
        }
        let x = ym.lu().solve(&b).unwrap();
        let w: Vec<DVector<f64>> = (1..=d).map(|j| &fam.betas()[j] - &fam.y_mats()[j] * &x).collect();
        for i in 0..d {
            for j in 0..d {
                let hij = w[i].dot(&(&inv * &w[j]));
                c_hess = c_hess.max(hij.abs() * (1.0 + (y[i] * y[j]).sqrt()));
            }
        }
    }
    (c_inv, c_hess)
}

fn bounds_check() -> Outcome {
    let fam = FlagFamily::structured(2, &[2, 1, 1], 6);
    let coarse_grid = log_grid(3, 1.0, 1e6, 22);
    let fine_grid = log_grid(3, 1.0, 1e6, 43);
    let coarse = verify_bounds(&fam, &coarse_grid).map_err(|e| e.to_string())?;
    let fine = verify_bounds(&fam, &fine_grid).map_err(|e| e.to_string())?;
    let st = stability(&coarse, &fine, 1.05);
    ensure(st.len() == 5, || "expected five bounds".into())?;
    for s in &st {
        ensure(s.fine.is_finite() && s.coarse.is_finite() && s.stable, || format!("{}: {} -> {} (ratio {})", s.name, s.coarse, s.fine, s.ratio))?;
    }
    ensure(coarse.above_rank_max <= 1e-9, || format!("W entries above rank: {}", coarse.above_rank_max))?;
    let (c_inv, c_hess) = sup_inverse_and_hessian(&fam, &coarse_grid);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let got_inv = coarse.get("inverse_entries").unwrap().c_hat;
    let got_hess = coarse.get("hessian_entries").unwrap().c_hat;
    ensure(rel(got_inv, c_inv) < 1e-9, || format!("inverse bound {got_inv} vs oracle {c_inv}"))?;
    ensure(rel(got_hess, c_hess) < 1e-9, || format!("hessian bound {got_hess} vs oracle {c_hess}"))?;

    let (lhs, rhs, c) = inequality_19(&[1.0, 1.0], &[5.0], 1.0).map_err(|e| e.to_string())?;
    ensure(lhs == 10.0 && rhs == 10.0 && c == 2.0, || format!("boundary case: {lhs} {rhs} {c}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut worst = 0.0f64;
    for trial in 0..100_000 {
        let (m, n) = (rng.gen_range(1..=5usize), rng.gen_range(1..=5usize));
        let eps: f64 = rng.gen_range(0.05..3.0);
        let s: Vec<f64> = (0..m).map(|_| eps * rng.gen_range(0.0..6.0f64).exp()).collect();
        let t: Vec<f64> = (0..n).map(|_| eps * rng.gen_range(0.0..6.0f64).exp()).collect();
        let (l, r, c) = inequality_19(&s, &t, eps).map_err(|e| e.to_string())?;
        let c_oracle = m as f64 / (n as f64 * eps.powi(m as i32 - 1));
        let l_oracle = s.iter().sum::<f64>() * t.iter().product::<f64>().powf(1.0 / n as f64);
        let r_oracle = c_oracle * t.iter().sum::<f64>() * s.iter().product::<f64>();
        ensure(rel(c, c_oracle) < 1e-12 && rel(l, l_oracle) < 1e-12 && rel(r, r_oracle) < 1e-12, || format!("trial {trial}: values differ"))?;
        ensure(l_oracle <= r_oracle * (1.0 + 1e-12), || format!("trial {trial}: {l_oracle} > {r_oracle}"))?;
        worst = worst.max(l_oracle / r_oracle);
    }
    let ratios: Vec<String> = st.iter().map(|s| format!("{}={:.4}", s.name, s.ratio)).collect();
    Ok(format!("{}; inequality max lhs/rhs {worst:.6}", ratios.join(" ")))
}

// 7 ---------------------------------------------------------------------------

fn integrand_check() -> Outcome {
    let ll2 = 2f64.ln();
    // (J, K, g, d)
    let cases: [(&[usize], &[usize], usize, usize); 4] =
        [(&[0], &[0], 1, 2), (&[0, 1], &[1, 2], 2, 3), (&[0], &[1], 1, 3), (&[0, 1], &[0, 1], 2, 4)];
    let mut notes = Vec::new();
    for (j, k, g, d) in cases {
        let r = integrand_bound_check(j, k, g, d, 3).map_err(|e| e.to_string())?;
        ensure(r.exponents_match, || format!("J={j:?} K={k:?}: exponent table mismatch"))?;
        // analytic ∫_{log 2}^∞ x^{−a} dx = (log 2)^{1−a}/(a−1), one factor per coordinate
        let n = j.iter().filter(|i| k.contains(i)).count();
        let exps: Vec<f64> = (0..d)
            .map(|i| match (j.contains(&i), k.contains(&i)) {
                (true, true) => 1.0 + if n == 0 { 0.0 } else { 0.25 / n as f64 },
                (false, false) => 1.75,
                _ => 1.25,
            })
            .collect();
        let analytic: f64 = exps.iter().map(|a| ll2.powf(1.0 - a) / (a - 1.0)).product();
        let last = r.final_levels.last().unwrap().value;
        ensure(r.final_stable, || format!("J={j:?} K={k:?}: final levels unstable"))?;
        ensure((last - analytic).abs() / analytic <= 0.02, || format!("J={j:?} K={k:?}: quadrature {last} vs analytic {analytic}"))?;
        ensure(r.assembled_stable, || format!("J={j:?} K={k:?}: assembled bound unstable {:?}", r.assembled_levels))?;
        ensure(r.transfer_ratio_max <= r.transfer_constant, || format!("J={j:?} K={k:?}: transfer ratio {}", r.transfer_ratio_max))?;
        if n > 0 {
            ensure(r.control_diverges, || format!("J={j:?} K={k:?}: control does not diverge"))?;
            // exponent 1 on the I factors: each grows like log of the cutoff
            let c: Vec<f64> = r.control_levels.iter().map(|l| l.value).collect();
            ensure(c.windows(2).all(|w| w[1] > 1.5 * w[0]), || format!("control levels {c:?}"))?;
        }
        notes.push(format!("d={d}:{last:.4}/{analytic:.4}"));
    }
    Ok(notes.join(" "))
}

// 8 ---------------------------------------------------------------------------

fn berkovich_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let primes = [2u64, 3, 5, 7];
    let mut perturbations = 0;
    for case in 0..25 {
        let p = primes[case % 4];
        let n = rng.gen_range(2..=5);
        let mut pts: Vec<Point> = Vec::new();
        if rng.gen_bool(0.5) {
            pts.push(Point::Infinity);
        }
        while pts.len() < n {
            let x = Point::Finite(rand_rational(&mut rng, p));
            if !pts.contains(&x) {
                pts.push(x);
            }
        }
        let mults: Vec<Q> = pts.iter().map(|_| qi(if rng.gen_bool(0.5) { rng.gen_range(1..=3) } else { -rng.gen_range(1..=3) })).collect();
        let div = TreeDivisor::new(pts.iter().cloned().zip(mults.iter().cloned()).collect());
        let mut probes: Vec<Point> = Vec::new();
        while probes.len() < 4 {
            let x = Point::Finite(rand_rational(&mut rng, p));
            if !pts.contains(&x) && !probes.contains(&x) {
                probes.push(x);
            }
        }
        let all: Vec<Point> = pts.iter().chain(&probes).cloned().collect();
        let tree = BerkTree::build_skeleton(p, &all).map_err(|e| e.to_string())?;
        let g = canonical_green(&tree, &div).map_err(|e| e.to_string())?;
        ensure(slope_rule_holds(&g, &div), || format!("case {case}: slope rule"))?;
        for x in &probes {
            let want: Q = pts.iter().zip(&mults).map(|(a, m)| m * meet_depth(p, x, a).unwrap()).sum();
            let got = g.eval(x).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("case {case}: g({x}) = {got}, oracle {want}"))?;
        }
        let verts = tree.vertices();
        for v in 0..verts.len() {
            let t2 = tree.type2(v);
            let want: Q = pts
                .iter()
                .zip(&mults)
                .map(|(a, m)| m * meet_depth(p, &t2.rep, a).map_or(t2.depth.clone(), |h| h.min(t2.depth.clone())))
                .sum();
            ensure(g.values()[v] == want, || format!("case {case}: vertex {v} value"))?;
            // outgoing slopes from values and depths
            let mut lap = Q::zero();
            for c in tree.children(v) {
                lap += (&g.values()[*c] - &g.values()[v]) / (&verts[*c].depth - &verts[v].depth);
            }
            if let Some(par) = verts[v].parent {
                lap += (&g.values()[par] - &g.values()[v]) / (&verts[v].depth - &verts[par].depth);
            }
            for (l, x) in tree.leaves().iter().enumerate() {
                if tree.leaf_base(l) == v {
                    lap += div.multiplicity(x);
                }
            }
            let want = if v == 0 { div.degree() } else { Q::zero() };
            ensure(lap == want && g.laplacian_at(v) == want, || format!("case {case}: Laplacian {lap} at vertex {v}, want {want}"))?;
        }
        for k in 0..4 {
            let f = random_subharmonic_perturbation(&tree, (case * 4 + k) as u64);
            let h = g.add(&f).map_err(|e| e.to_string())?;
            let worst = model_green_compare(&h, &div).map_err(|e| e.to_string())?;
            ensure(!worst.is_positive(), || format!("case {case}: perturbation exceeds canonical by {worst}"))?;
            ensure(h.values().iter().zip(g.values()).all(|(a, b)| a <= b), || format!("case {case}: pointwise check"))?;
            perturbations += 1;
        }
    }
    ensure(perturbations == 100, || format!("{perturbations} perturbations"))?;

    let fs = ModelArithDivisor::fs_surrogate();
    let mut shifts = 0;
    for case in 0..20 {
        let nf = rng.gen_range(1..=3);
        let mut factors: Vec<(Q, i64)> = Vec::new();
        while factors.len() < nf {
            let a = rand_rational(&mut rng, [2, 3, 5][case % 3]);
            if !factors.iter().any(|(b, _)| *b == a) {
                factors.push((a, rng.gen_range(-2..=2i64).max(1) * if rng.gen_bool(0.5) { 1 } else { -1 }));
            }
        }
        let c = q(rng.gen_range(1..=30), rng.gen_range(1..=30));
        let f = RationalFunction::new(c, factors.clone()).map_err(|e| e.to_string())?;
        let shifted = fs.add(&ModelArithDivisor::principal(&f));
        for _ in 0..3 {
            let x = rand_rational(&mut rng, 7);
            if factors.iter().any(|(a, _)| *a == x) {
                continue;
            }
            let pt = Point::Finite(x.clone());
            let h0 = height(&pt, &fs).map_err(|e| e.to_string())?;
            let h1 = height(&pt, &shifted).map_err(|e| e.to_string())?;
            ensure(h0.exact == h1.exact, || format!("case {case}: height changes under div(f) at {x}: {} vs {}", h0.exact, h1.exact))?;
            ensure((h0.value - 2.0 * weil(&x)).abs() <= 1e-12 * (1.0 + h0.value.abs()), || format!("case {case}: FS height at {x}"))?;
            shifts += 1;
        }
    }
    Ok(format!("25 divisors, 100 perturbations, {shifts} height invariance checks exact"))
}

// 9 ---------------------------------------------------------------------------

fn toric(at: Point, m: i64, u: Pl, kappa: Q) -> ModelArithDivisor {
    ModelArithDivisor::new(TreeDivisor::new(vec![(at, qi(m))]), u, LogLinear::rational(kappa)).unwrap()
}

fn adelic_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..30 {
        let (m0, m1) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (u0, u1) = (rand_pl(&mut rng, m0), rand_pl(&mut rng, m1));
        let (k0, k1) = (q(rng.gen_range(-6..=6), 4), q(rng.gen_range(-6..=6), 4));
        let d0 = toric(Point::Infinity, m0, u0.clone(), k0.clone());
        let d1 = toric(Point::Finite(Q::zero()), m1, u1.clone(), k1.clone());
        // g₀ at 0 is the left limit; ω₀ has atoms at the breakpoints of u₀ where g₁ = u₁(t) + κ₁ − m₁t
        let oracle: Q = qi(m1) * (left_limit(&u0) + &k0)
            + atoms(&u0).iter().map(|(b, w)| w * (value(&u1, b) + &k1 - qi(m1) * b)).sum::<Q>();
        let p01 = pairing(&d0, &d1).map_err(|e| e.to_string())?;
        let p10 = pairing(&d1, &d0).map_err(|e| e.to_string())?;
        ensure(p01 == LogLinear::rational(oracle.clone()), || format!("case {case}: pairing {p01} vs oracle {oracle}"))?;
        ensure(p01 == p10, || format!("case {case}: asymmetric {p01} / {p10}"))?;
        if !oracle.is_zero() {
            for n in [2u32, 3] {
                let r = pullback_ratio(&d0, &d1, n).map_err(|e| e.to_string())?;
                ensure((r - n as f64).abs() <= 1e-6, || format!("case {case}: pullback ratio {r} for n={n}"))?;
            }
        }
    }

    // model data with finite points, vertical parts and principal divisors
    for case in 0..30 {
        let mk = |rng: &mut ChaCha8Rng, pts: &[Point]| {
            let mults: Vec<i64> = pts.iter().map(|_| rng.gen_range(1..=2)).collect();
            let deg: i64 = mults.iter().sum();
            let u = rand_pl(rng, deg);
            let d = ModelArithDivisor::new(
                TreeDivisor::new(pts.iter().cloned().zip(mults.iter().map(|&m| qi(m))).collect()),
                u,
                LogLinear::rational(q(rng.gen_range(-4..=4), 3)),
            )
            .unwrap();
            d.with_vertical([2, 3, 5][rng.gen_range(0..3)], q(rng.gen_range(0..=3), 2))
        };
        let a1 = mk(&mut rng, &[Point::Infinity, Point::Finite(q(1, 3))]);
        let a2 = mk(&mut rng, &[Point::Finite(q(5, 2)), Point::Finite(q(-9, 4))]);
        let f = RationalFunction::new(q(rng.gen_range(1..=9), 4), vec![(q(7, 5), 1), (q(-1, 6), -1)]).unwrap();
        let a3 = ModelArithDivisor::principal(&f);
        let b = mk(&mut rng, &[Point::Finite(Q::zero()), Point::Finite(q(4, 9))]);
        let pr = |x: &ModelArithDivisor, y: &ModelArithDivisor| pairing(x, y).map_err(|e| e.to_string());
        let (l, r) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let combo = a1.scale(&q(l, 2)).add(&a2.scale(&q(r, 3))).add(&a3);
        let lhs = pr(&combo, &b)?;
        let rhs = &(&pr(&a1, &b)?.scale(&q(l, 2)) + &pr(&a2, &b)?.scale(&q(r, 3))) + &pr(&a3, &b)?;
        ensure(lhs == rhs, || format!("case {case}: bilinearity {lhs} vs {rhs}"))?;
        ensure(pr(&b, &combo)? == lhs, || format!("case {case}: symmetry"))?;
        for x in [&a1, &a2, &a3] {
            ensure(pr(x, &b)? == pr(&b, x)?, || format!("case {case}: symmetry on a generator"))?;
        }
        ensure(pr(&a3, &b)?.is_zero(), || format!("case {case}: principal pairing {}", pr(&a3, &b).unwrap()))?;
    }

    // spliced sequences D + 2^{−n}B and D + 3^{−n}B
    let bdiv = ModelArithDivisor::new(
        TreeDivisor::new(vec![(Point::Finite(Q::zero()), qi(1)), (Point::Infinity, qi(1))]),
        Pl::max_affine(&[(Q::zero(), Q::zero()), (qi(2), Q::zero())]),
        LogLinear::rational(qi(1)),
    )
    .unwrap();
    let mover = RationalFunction::new(qi(1), vec![(qi(1), 1), (qi(-1), 1), (qi(0), -1)]).unwrap();
    let bd = BoundaryDivisor::new(bdiv.clone(), qi(1), &mover).map_err(|e| e.to_string())?;
    let base = toric(Point::Infinity, 1, Pl::max_affine(&[(Q::zero(), qi(1)), (qi(1), Q::zero())]), Q::zero());
    let e = ModelArithDivisor::new(
        TreeDivisor::new(vec![(Point::Finite(q(1, 2)), qi(1))]),
        Pl::max_affine(&[(Q::zero(), Q::zero()), (qi(1), Q::zero())]),
        LogLinear::rational(q(1, 3)),
    )
    .unwrap();
    let limit = pairing(&base, &e).map_err(|e| e.to_string())?.to_f64();
    let seq = |r: i64, len: usize| {
        let eps: Vec<Q> = (0..len).map(|n| Q::new(BigInt::one(), BigInt::from(r).pow(n as u32))).collect();
        CauchySequence::new(eps.iter().map(|c| base.add(&bdiv.scale(c))).collect(), eps).unwrap()
    };
    let (sa, sb) = (seq(2, 24), seq(3, 16));
    let spliced = CauchySequence::splice(&sa, &sb);
    for s in [&sa, &sb, &spliced] {
        s.verify(&bd).map_err(|e| e.to_string())?;
    }
    let eseq = AdelicArithDivisor::model(e.clone());
    let mut values = Vec::new();
    for tol in [1e-1, 1e-2, 1e-3] {
        for s in [&sa, &sb, &spliced] {
            let r = intersect(&AdelicArithDivisor { seq: s.clone() }, &eseq, Some(&bd), tol).map_err(|e| e.to_string())?;
            ensure((r.value - limit).abs() <= r.tail_bound + 1e-12, || format!("tol {tol}: {} off the limit {limit} by more than {}", r.value, r.tail_bound))?;
            values.push((r.value, r.tail_bound));
        }
    }
    for w in values.chunks(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        ensure((a.0 - c.0).abs() <= a.1 + c.1 + 1e-12 && (b.0 - c.0).abs() <= b.1 + c.1 + 1e-12, || "spliced value outside the tails".into())?;
    }
    Ok(format!("toric oracle, bilinearity and symmetry exact; spliced limit {limit:.6} within tails; pullback ratios n = 2, 3"))
}

// 10 --------------------------------------------------------------------------

fn nonint_check() -> Outcome {
    let grid = 2048;
    let rows = non_integrability_demo(40, grid);
    ensure(rows.len() == 40, || "row count".into())?;
    let (a, b) = (-16.0f64, -1.0f64);
    let h = (b - a) / (grid - 1) as f64;
    let g = |s: f64| -(-s / (2.0 * std::f64::consts::PI)).ln();
    let mut margin = f64::INFINITY;
    let mut rel = 0.0f64;
    for i in 1..grid - 1 {
        let s = a + h * i as f64;
        let d2 = (g(s - h) - 2.0 * g(s) + g(s + h)) / (h * h);
        margin = margin.min(d2);
        rel = rel.max((d2 * s * s - 1.0).abs());
    }
    ensure(margin > 0.0 && rel < 1e-4, || format!("oracle margin {margin}, analytic error {rel}"))?;
    for (i, r) in rows.iter().enumerate() {
        let n = i as u32 + 1;
        ensure(r.n == n && r.value_at_cusp == -(n as f64), || format!("row {n}: g_n(0) = {}", r.value_at_cusp))?;
        ensure(r.margin > 0.0 && (r.margin - margin).abs() <= 1e-9 * margin.abs().max(1.0), || format!("row {n}: margin {} vs {margin}", r.margin))?;
        ensure(r.analytic_rel_err < 1e-4, || format!("row {n}: analytic error {}", r.analytic_rel_err))?;
        ensure(r.circle_trace.iter().all(|(_, v)| *v >= r.value_at_cusp), || format!("row {n}: circle values below the cusp value"))?;
    }
    ensure(rows.windows(2).all(|w| w[1].value_at_cusp < w[0].value_at_cusp), || "cusp values not decreasing".into())?;
    Ok(format!("g_n(0) = -n for n = 1..40; margin {margin:.4e}, analytic error {rel:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("1 degree formula", degree_formula, 1),
        ("2 energy identities", energy_identities, 30),
        ("3 approximant convergence", approximant_convergence, 10),
        ("4 energy difference", energy_difference, 10),
        ("5 hessian gram", hessian_gram_check, 20),
        ("6 hessian bounds", bounds_check, 60),
        ("7 integrand", integrand_check, 30),
        ("8 berkovich", berkovich_check, 10),
        ("9 adelic pairing", adelic_check, 30),
        ("10 non-integrability", nonint_check, 5),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let out = match out {
            Ok(msg) if took > Duration::from_secs(budget) => Err(format!("{msg}; took {:.2}s, budget {budget}s", took.as_secs_f64())),
            other => other,
        };
        match out {
            Ok(msg) => println!("PASS  {name:<28} {:>7.3}s  {msg}", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<28} {:>7.3}s  {msg}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
