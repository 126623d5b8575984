//! Mixed Monge–Ampère measures and relative energies for additive functions
//! φ(t₁,…,t_d) = Σ_i u_i(t_i) on (ℙ¹)^d.

use num::traits::{One, Signed, Zero};

use crate::psh1d::{integrate_against, ma_measure, ConvexProfile, LineMeasure, ProfileError, Slope};
use crate::rational::{factorial, qi, to_f64, ExtReal, Q};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnergyError {
    #[error("tuple shape: {0}")]
    Shape(String),
    #[error("entry ({index}, axis {axis}) violates the reference slope budget")]
    SlopeBudget { index: usize, axis: usize },
    #[error("entry ({index}, axis {axis}) is not more singular than its reference pair")]
    NotMoreSingular { index: usize, axis: usize },
    #[error("energy of subset {0:?} diverges")]
    SubsetEnergyDiverges(Vec<usize>),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Rows j = 0..=d of per-axis profiles for φ and ψ, with per-row reference degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditivePshTuple {
    d: usize,
    phi: Vec<Vec<ConvexProfile>>,
    psi: Vec<Vec<ConvexProfile>>,
    degrees: Vec<Q>,
}

impl AdditivePshTuple {
    pub fn new(
        phi: Vec<Vec<ConvexProfile>>,
        psi: Vec<Vec<ConvexProfile>>,
        degrees: Vec<Q>,
    ) -> Result<AdditivePshTuple, EnergyError> {
        let rows = phi.len();
        if rows < 2 || psi.len() != rows || degrees.len() != rows {
            return Err(EnergyError::Shape(format!(
                "need d+1 >= 2 rows of phi, psi and degrees (got {}, {}, {})",
                rows,
                psi.len(),
                degrees.len()
            )));
        }
        let d = rows - 1;
        for (j, (a, b)) in phi.iter().zip(&psi).enumerate() {
            if a.len() != d || b.len() != d {
                return Err(EnergyError::Shape(format!("row {j} must have {d} axes")));
            }
            for (i, u) in a.iter().chain(b.iter()).enumerate() {
                let lo = u.sigma_minus().to_f64();
                let hi = u.sigma_plus().to_f64();
                if lo < 0.0 || hi > to_f64(&degrees[j]) {
                    return Err(EnergyError::SlopeBudget { index: j, axis: i % d });
                }
            }
        }
        Ok(AdditivePshTuple { d, phi, psi, degrees })
    }

    /// All rows equal to the same pair (φ, ψ).
    pub fn diagonal(phi: Vec<ConvexProfile>, psi: Vec<ConvexProfile>, degree: Q) -> Result<AdditivePshTuple, EnergyError> {
        let d = phi.len();
        AdditivePshTuple::new(vec![phi; d + 1], vec![psi; d + 1], vec![degree; d + 1])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn phi(&self) -> &[Vec<ConvexProfile>] {
        &self.phi
    }

    pub fn psi(&self) -> &[Vec<ConvexProfile>] {
        &self.psi
    }

    pub fn degrees(&self) -> &[Q] {
        &self.degrees
    }

    /// Apply the same permutation to rows of φ, ψ and references.
    pub fn permute(&self, sigma: &[usize]) -> AdditivePshTuple {
        AdditivePshTuple {
            d: self.d,
            phi: sigma.iter().map(|&s| self.phi[s].clone()).collect(),
            psi: sigma.iter().map(|&s| self.psi[s].clone()).collect(),
            degrees: sigma.iter().map(|&s| self.degrees[s].clone()).collect(),
        }
    }

    pub fn with_row(&self, j: usize, phi: Vec<ConvexProfile>, psi: Vec<ConvexProfile>, degree: Q) -> Result<AdditivePshTuple, EnergyError> {
        let mut t = self.clone();
        t.phi[j] = phi;
        t.psi[j] = psi;
        t.degrees[j] = degree;
        AdditivePshTuple::new(t.phi, t.psi, t.degrees)
    }
}

/// Formal sum of product measures, one term per assignment of factors to axes.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedMAMeasure {
    pub terms: Vec<(Vec<usize>, Vec<LineMeasure>)>,
}

impl MixedMAMeasure {
    pub fn total_mass(&self) -> ExtReal {
        self.terms.iter().fold(ExtReal::Exact(Q::zero()), |acc, (_, ms)| {
            let m = ms.iter().fold(ExtReal::Exact(Q::one()), |p, m| mul(&p, &m.total_mass()));
            acc.add(&m)
        })
    }

    pub fn is_exact(&self) -> bool {
        self.terms.iter().all(|(_, ms)| ms.iter().all(|m| m.is_exact()))
    }
}

fn mul(a: &ExtReal, b: &ExtReal) -> ExtReal {
    match (a, b) {
        (ExtReal::Exact(x), ExtReal::Exact(y)) => ExtReal::Exact(x * y),
        _ => ExtReal::Approx(a.to_f64() * b.to_f64()),
    }
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Curvature factor of an additive function: one measure per axis.
pub type Factor = Vec<LineMeasure>;

pub fn factor_of(profiles: &[ConvexProfile]) -> Factor {
    profiles.iter().map(ma_measure).collect()
}

/// ⟨F₁ ∧ … ∧ F_d⟩ for additive factors; perm[j] is the axis carrying factor j.
pub fn mixed_of_factors(factors: &[Factor]) -> MixedMAMeasure {
    let d = factors.len();
    let terms = permutations(d)
        .into_iter()
        .filter_map(|perm| {
            let mut ms = vec![LineMeasure::zero(); d];
            for (j, &axis) in perm.iter().enumerate() {
                ms[axis] = factors[j][axis].clone();
            }
            if ms.iter().any(|m| m.is_zero()) {
                None
            } else {
                Some((perm, ms))
            }
        })
        .collect();
    MixedMAMeasure { terms }
}

/// Mixed measure of the φ-rows listed in `indices` (|indices| = d).
pub fn mixed_ma(tuple: &AdditivePshTuple, indices: &[usize]) -> Result<MixedMAMeasure, EnergyError> {
    if indices.len() != tuple.d {
        return Err(EnergyError::Shape(format!("need {} indices", tuple.d)));
    }
    let factors: Vec<Factor> = indices.iter().map(|&j| factor_of(&tuple.phi[j])).collect();
    Ok(mixed_of_factors(&factors))
}

/// ∫ Σ_i (f_i − g_i)(t_i) against a mixed measure.
pub fn integrate_additive(f: &[ConvexProfile], g: &[ConvexProfile], mu: &MixedMAMeasure) -> Result<ExtReal, ProfileError> {
    let mut acc = ExtReal::Exact(Q::zero());
    for (_, ms) in &mu.terms {
        let masses: Vec<ExtReal> = ms.iter().map(|m| m.total_mass()).collect();
        for i in 0..ms.len() {
            let mut w = integrate_against(&f[i], &g[i], &ms[i])?;
            for (k, m) in masses.iter().enumerate() {
                if k != i {
                    w = mul(&w, m);
                }
            }
            acc = acc.add(&w);
        }
    }
    Ok(acc)
}

fn bounded_pair(a: &ConvexProfile, b: &ConvexProfile) -> bool {
    let eq = |x: Slope, y: Slope| match (x, y) {
        (Slope::Exact(p), Slope::Exact(q)) => p == q,
        (x, y) => (x.to_f64() - y.to_f64()).abs() <= 1e-12,
    };
    eq(a.sigma_minus(), b.sigma_minus()) && eq(a.sigma_plus(), b.sigma_plus())
}

/// φ ≤ ψ + C for some constant C, read off from the asymptotic slopes.
pub fn more_singular(phi: &ConvexProfile, psi: &ConvexProfile) -> bool {
    phi.sigma_minus().to_f64() >= psi.sigma_minus().to_f64() - 1e-15
        && phi.sigma_plus().to_f64() <= psi.sigma_plus().to_f64() + 1e-15
}

fn check_more_singular(phi: &[Vec<ConvexProfile>], psi: &[Vec<ConvexProfile>]) -> Result<(), EnergyError> {
    for (j, (a, b)) in phi.iter().zip(psi).enumerate() {
        for (i, (u, v)) in a.iter().zip(b).enumerate() {
            if !more_singular(u, v) {
                return Err(EnergyError::NotMoreSingular { index: j, axis: i });
            }
        }
    }
    Ok(())
}

fn all_bounded(phi: &[Vec<ConvexProfile>], psi: &[Vec<ConvexProfile>]) -> bool {
    phi.iter().zip(psi).all(|(a, b)| a.iter().zip(b).all(|(u, v)| bounded_pair(u, v)))
}

/// Σ_k ∫(φ_k − ψ_k)⟨Π_{j<k}(ddᶜφ_j+ω_j) ∧ Π_{j>k}(ddᶜψ_j+ω_j)⟩ for bounded differences.
pub fn mixed_energy_bounded(phi: &[Vec<ConvexProfile>], psi: &[Vec<ConvexProfile>]) -> Result<ExtReal, EnergyError> {
    let rows = phi.len();
    let fphi: Vec<Factor> = phi.iter().map(|r| factor_of(r)).collect();
    let fpsi: Vec<Factor> = psi.iter().map(|r| factor_of(r)).collect();
    let mut acc = ExtReal::Exact(Q::zero());
    for k in 0..rows {
        let factors: Vec<Factor> = (0..rows)
            .filter(|&j| j != k)
            .map(|j| if j < k { fphi[j].clone() } else { fpsi[j].clone() })
            .collect();
        let mu = mixed_of_factors(&factors);
        acc = acc.add(&integrate_additive(&phi[k], &psi[k], &mu)?);
    }
    Ok(acc)
}

/// Single relative energy, bounded case, via the subset expansion
/// (1/(d+1)) Σ_k Σ_{|S|=k} k!(d−k)! ∫(φ−ψ) Π_{i∈S} μ^φ_i Π_{i∉S} μ^ψ_i.
pub fn single_energy_bounded(phi: &[ConvexProfile], psi: &[ConvexProfile]) -> Result<ExtReal, EnergyError> {
    let d = phi.len();
    let mphi: Vec<LineMeasure> = phi.iter().map(ma_measure).collect();
    let mpsi: Vec<LineMeasure> = psi.iter().map(ma_measure).collect();
    let mut acc = ExtReal::Exact(Q::zero());
    for mask in 0u32..(1 << d) {
        let k = mask.count_ones() as u64;
        let weight = Q::from_integer(factorial(k) * factorial(d as u64 - k));
        let ms: Vec<LineMeasure> =
            (0..d).map(|i| if mask >> i & 1 == 1 { mphi[i].clone() } else { mpsi[i].clone() }).collect();
        let term = integrate_additive(phi, psi, &MixedMAMeasure { terms: vec![((0..d).collect(), ms)] })?;
        acc = acc.add(&term.scale(&weight));
    }
    Ok(acc.scale(&Q::new(1.into(), (d as i64 + 1).into())))
}

/// Canonical approximant max(φ, ψ − C), taken axis by axis.
pub fn approximant(phi: &[ConvexProfile], psi: &[ConvexProfile], c: &Q) -> Vec<ConvexProfile> {
    phi.iter()
        .zip(psi)
        .map(|(u, v)| crate::psh1d::profile_max(u, &v.shift(&-c.clone())))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceConfig {
    pub schedule: Vec<Q>,
    pub rel_drop: f64,
    pub consecutive: usize,
    pub start: Q,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            schedule: (0..=20).map(|k| Q::from_integer(num::pow(num::BigInt::from(2), k))).collect(),
            rel_drop: 1e-3,
            consecutive: 5,
            start: qi(1024),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceVerdict {
    Stabilized(ExtReal),
    Diverged,
    Unresolved(ExtReal),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub entries: Vec<(Q, ExtReal)>,
    pub verdict: TraceVerdict,
}

impl Trace {
    pub fn value(&self) -> ExtReal {
        match &self.verdict {
            TraceVerdict::Stabilized(v) | TraceVerdict::Unresolved(v) => v.clone(),
            TraceVerdict::Diverged => ExtReal::NegInfinity,
        }
    }
}

fn judge(entries: &[(Q, ExtReal)], cfg: &TraceConfig) -> TraceVerdict {
    let mut run = 0;
    for w in entries.windows(2) {
        let (prev, cur) = (w[0].1.to_f64(), w[1].1.to_f64());
        if w[1].0 > cfg.start && w[0].0 >= cfg.start {
            if prev - cur > cfg.rel_drop * prev.abs().max(f64::MIN_POSITIVE) {
                run += 1;
                if run >= cfg.consecutive {
                    return TraceVerdict::Diverged;
                }
            } else {
                run = 0;
            }
        }
    }
    let n = entries.len();
    let last = entries[n - 1].1.clone();
    if n >= 2 && entries[n - 2].1 == last {
        TraceVerdict::Stabilized(last)
    } else {
        TraceVerdict::Unresolved(last)
    }
}

/// Energies of canonical approximants along the schedule.
pub fn approximant_limit_trace(
    phi: &[Vec<ConvexProfile>],
    psi: &[Vec<ConvexProfile>],
    cfg: &TraceConfig,
    energy: impl Fn(&[Vec<ConvexProfile>], &[Vec<ConvexProfile>]) -> Result<ExtReal, EnergyError>,
) -> Result<Trace, EnergyError> {
    check_more_singular(phi, psi)?;
    let mut entries = Vec::new();
    for c in &cfg.schedule {
        let approx: Vec<Vec<ConvexProfile>> = phi.iter().zip(psi).map(|(a, b)| approximant(a, b, c)).collect();
        entries.push((c.clone(), energy(&approx, psi)?));
    }
    let verdict = judge(&entries, cfg);
    Ok(Trace { entries, verdict })
}

/// Single-energy trace for one pair (φ, ψ) of axis profiles.
pub fn single_trace(phi: &[ConvexProfile], psi: &[ConvexProfile], cfg: &TraceConfig) -> Result<Trace, EnergyError> {
    approximant_limit_trace(&[phi.to_vec()], &[psi.to_vec()], cfg, |a, b| single_energy_bounded(&a[0], &b[0]))
}

pub fn mixed_trace(tuple: &AdditivePshTuple, cfg: &TraceConfig) -> Result<Trace, EnergyError> {
    approximant_limit_trace(&tuple.phi, &tuple.psi, cfg, mixed_energy_bounded)
}

/// I_ψ(φ) with the 1/(d+1) prefactor; d = number of axes.
pub fn relative_energy(phi: &[ConvexProfile], psi: &[ConvexProfile]) -> Result<ExtReal, EnergyError> {
    relative_energy_with(phi, psi, &TraceConfig::default())
}

pub fn relative_energy_with(phi: &[ConvexProfile], psi: &[ConvexProfile], cfg: &TraceConfig) -> Result<ExtReal, EnergyError> {
    if phi.len() != psi.len() || phi.is_empty() {
        return Err(EnergyError::Shape("phi and psi need the same positive number of axes".into()));
    }
    check_more_singular(&[phi.to_vec()], &[psi.to_vec()])?;
    if phi.iter().zip(psi).all(|(u, v)| bounded_pair(u, v)) {
        return single_energy_bounded(phi, psi);
    }
    Ok(single_trace(phi, psi, cfg)?.value())
}

/// Mixed relative energy, no prefactor.
pub fn mixed_relative_energy(tuple: &AdditivePshTuple) -> Result<ExtReal, EnergyError> {
    mixed_relative_energy_with(tuple, &TraceConfig::default())
}

pub fn mixed_relative_energy_with(tuple: &AdditivePshTuple, cfg: &TraceConfig) -> Result<ExtReal, EnergyError> {
    check_more_singular(&tuple.phi, &tuple.psi)?;
    if all_bounded(&tuple.phi, &tuple.psi) {
        return mixed_energy_bounded(&tuple.phi, &tuple.psi);
    }
    Ok(mixed_trace(tuple, cfg)?.value())
}

/// Per-row comparison of ∫⟨(ddᶜφ_j+ω)^d⟩ and ∫⟨(ddᶜψ_j+ω)^d⟩.
pub fn full_mass_check(tuple: &AdditivePshTuple) -> Vec<bool> {
    let mass = |row: &[ConvexProfile]| mixed_of_factors(&vec![factor_of(row); row.len()]).total_mass();
    tuple
        .phi
        .iter()
        .zip(&tuple.psi)
        .map(|(a, b)| match (mass(a), mass(b)) {
            (ExtReal::Exact(x), ExtReal::Exact(y)) => x == y,
            (x, y) => (x.to_f64() - y.to_f64()).abs() <= 1e-6 * y.to_f64().abs().max(1.0),
        })
        .collect()
}

fn sum_rows(rows: &[Vec<ConvexProfile>], subset: &[usize]) -> Vec<ConvexProfile> {
    let d = rows[0].len();
    (0..d)
        .map(|i| {
            subset[1..]
                .iter()
                .fold(rows[subset[0]][i].clone(), |acc, &j| acc.add(&rows[j][i]))
        })
        .collect()
}

/// (d+1)!·I_𝛙(𝛗) − Σ_I (−1)^{d+1−|I|} I_{𝛙_I}(𝛗_I), where the subset terms are
/// mixed energies of the diagonal tuple built from 𝛗_I = Σ_{i∈I} φ_i.
pub fn polarization_check(tuple: &AdditivePshTuple) -> Result<ExtReal, EnergyError> {
    let d = tuple.d;
    let lhs = mixed_relative_energy(tuple)?.scale(&Q::from_integer(factorial(d as u64 + 1)));
    let mut rhs = ExtReal::Exact(Q::zero());
    for mask in 1u32..(1 << (d + 1)) {
        let subset: Vec<usize> = (0..=d).filter(|j| mask >> j & 1 == 1).collect();
        let phi_i = sum_rows(&tuple.phi, &subset);
        let psi_i = sum_rows(&tuple.psi, &subset);
        let deg: Q = subset.iter().map(|&j| tuple.degrees[j].clone()).sum();
        let diag = AdditivePshTuple::diagonal(phi_i, psi_i, deg)?;
        let e = mixed_relative_energy(&diag)?;
        if e.is_neg_infinity() {
            return Err(EnergyError::SubsetEnergyDiverges(subset));
        }
        let sign = if (d + 1 - subset.len()) % 2 == 0 { Q::one() } else { -Q::one() };
        rhs = rhs.add(&e.scale(&sign));
    }
    Ok(lhs.add(&rhs.scale(&-Q::one())))
}

/// Both sides of ∫(φ_j−ψ_j)⟨ddᶜ(φ_{j+1}−ψ_{j+1}) ∧ Θ⟩ = ∫(φ_{j+1}−ψ_{j+1})⟨ddᶜ(φ_j−ψ_j) ∧ Θ⟩
/// with Θ = Π_{i<j}(ddᶜφ_i+ω_i) ∧ Π_{i>j+1}(ddᶜψ_i+ω_i).
pub fn transposition_sides(tuple: &AdditivePshTuple, j: usize) -> Result<(ExtReal, ExtReal), EnergyError> {
    let d = tuple.d;
    assert!(j < d);
    let diff = |k: usize| -> Factor {
        factor_of(&tuple.phi[k])
            .iter()
            .zip(factor_of(&tuple.psi[k]))
            .map(|(a, b)| a.sub(&b))
            .collect()
    };
    let theta: Vec<Factor> = (0..=d)
        .filter(|&i| i != j && i != j + 1)
        .map(|i| if i < j { factor_of(&tuple.phi[i]) } else { factor_of(&tuple.psi[i]) })
        .collect();
    let with = |extra: Factor| {
        let mut f = theta.clone();
        f.push(extra);
        mixed_of_factors(&f)
    };
    let lhs = integrate_additive(&tuple.phi[j], &tuple.psi[j], &with(diff(j + 1)))?;
    let rhs = integrate_additive(&tuple.phi[j + 1], &tuple.psi[j + 1], &with(diff(j)))?;
    Ok((lhs, rhs))
}

/// Full-mass profile on [1, ∞) whose energy relative to max(0, t) is −∞:
/// slope 1 − 2^{−(k+1)} on [4^k, 4^{k+1}], materialized up to `depth` pieces.
pub fn escaping_ladder(depth: u32) -> ConvexProfile {
    let mut bps = vec![qi(1)];
    let mut slopes = vec![Q::zero()];
    for k in 0..depth {
        let s = Q::one() - Q::new(1.into(), num::pow(num::BigInt::from(2), k as usize + 1));
        slopes.push(s);
        bps.push(Q::from_integer(num::pow(num::BigInt::from(4), k as usize + 1)));
    }
    slopes.push(Q::one() - Q::new(1.into(), num::pow(num::BigInt::from(2), depth as usize + 1)));
    ConvexProfile::pl(bps, slopes, Q::zero()).expect("ladder is convex")
}

/// sup(φ − ψ) over the line; used as the probe constant for more-singularity.
pub fn probe_constant(phi: &ConvexProfile, psi: &ConvexProfile) -> Option<Q> {
    match (phi, psi) {
        (ConvexProfile::Pl(a), ConvexProfile::Pl(b)) => a.sub(b).sup(),
        _ => None,
    }
}

pub fn is_nonpositive(x: &ExtReal) -> bool {
    match x {
        ExtReal::Exact(q) => !q.is_positive(),
        ExtReal::Approx(f) => *f <= 1e-9,
        ExtReal::NegInfinity => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn relu() -> ConvexProfile {
        ConvexProfile::hinge(qi(1), qi(0))
    }

    fn zero() -> ConvexProfile {
        ConvexProfile::affine(qi(0), qi(0))
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn mixed_ma_examples() {
        let t = AdditivePshTuple::new(vec![vec![relu()], vec![relu()]], vec![vec![relu()], vec![relu()]], vec![qi(1); 2]).unwrap();
        let m = mixed_ma(&t, &[0]).unwrap();
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].1[0].atoms, vec![(qi(0), qi(1))]);

        let rows = vec![vec![relu(), zero()], vec![zero(), relu()], vec![relu(), relu()]];
        let t2 = AdditivePshTuple::new(rows.clone(), rows, vec![qi(1); 3]).unwrap();
        let cross = mixed_ma(&t2, &[0, 1]).unwrap();
        assert_eq!(cross.terms.len(), 1);
        assert_eq!(cross.total_mass(), ExtReal::Exact(qi(1)));
        let same = mixed_ma(&t2, &[2, 2]).unwrap();
        assert_eq!(same.total_mass(), ExtReal::Exact(qi(2)));
    }

    #[test]
    fn worked_example_single_and_mixed() {
        let phi = vec![ConvexProfile::hinge(qi(1), qi(1))];
        let psi = vec![relu()];
        assert_eq!(relative_energy(&phi, &psi).unwrap(), ExtReal::Exact(q(-1, 2)));
        let t = AdditivePshTuple::diagonal(phi, psi, qi(1)).unwrap();
        assert_eq!(mixed_relative_energy(&t).unwrap(), ExtReal::Exact(qi(-1)));
        assert_eq!(polarization_check(&t).unwrap(), ExtReal::Exact(qi(0)));
    }

    #[test]
    fn constant_shift() {
        for d in 1..=3usize {
            let psi = vec![relu(); d];
            let phi: Vec<ConvexProfile> = psi.iter().map(|p| p.shift(&qi(-3))).collect();
            // total shift −3d, mass d!
            let want = qi(-3 * d as i64) * Q::from_integer(factorial(d as u64));
            assert_eq!(relative_energy(&phi, &psi).unwrap(), ExtReal::Exact(want));
        }
    }

    #[test]
    fn full_mass_examples() {
        let t = AdditivePshTuple::diagonal(vec![relu().shift(&qi(-3))], vec![relu()], qi(1)).unwrap();
        assert_eq!(full_mass_check(&t), vec![true, true]);
        let t = AdditivePshTuple::diagonal(vec![ConvexProfile::hinge(q(1, 2), qi(0))], vec![relu()], qi(1)).unwrap();
        assert_eq!(full_mass_check(&t), vec![false, false]);
        // compensating deficits on different axes: 1/2 · 3/2 ≠ 1
        let phi = vec![ConvexProfile::hinge(q(1, 2), qi(0)), ConvexProfile::hinge(q(3, 2), qi(0))];
        let psi = vec![relu(), relu()];
        let t = AdditivePshTuple::diagonal(phi, psi, qi(2)).unwrap();
        assert_eq!(full_mass_check(&t), vec![false; 3]);
    }

    #[test]
    fn trace_of_constant_shift() {
        let psi = vec![relu()];
        let phi = vec![relu().shift(&qi(-5))];
        let tr = single_trace(&phi, &psi, &TraceConfig::default()).unwrap();
        for (c, v) in &tr.entries {
            let m = if *c < qi(5) { c.clone() } else { qi(5) };
            assert_eq!(*v, ExtReal::Exact(-m));
        }
        assert_eq!(tr.verdict, TraceVerdict::Stabilized(ExtReal::Exact(qi(-5))));
    }

    #[test]
    fn slope_deficit_diverges() {
        let phi = vec![ConvexProfile::hinge(q(1, 2), qi(0))];
        let psi = vec![relu()];
        assert_eq!(relative_energy(&phi, &psi).unwrap(), ExtReal::NegInfinity);
    }

    #[test]
    fn ladder_diverges() {
        let phi = vec![escaping_ladder(26)];
        let psi = vec![relu()];
        let tr = single_trace(&phi, &psi, &TraceConfig::default()).unwrap();
        assert_eq!(tr.verdict, TraceVerdict::Diverged);
        let w = tr.entries.windows(2).all(|w| w[1].1.to_f64() <= w[0].1.to_f64());
        assert!(w);
    }

    #[test]
    fn not_more_singular_rejected() {
        let phi = vec![ConvexProfile::hinge(qi(1), qi(0))];
        let psi = vec![ConvexProfile::hinge(q(1, 2), qi(0))];
        assert!(matches!(relative_energy(&phi, &psi), Err(EnergyError::NotMoreSingular { .. })));
    }

    #[test]
    fn transposition_d1() {
        let t = AdditivePshTuple::new(
            vec![vec![ConvexProfile::hinge(qi(1), qi(1))], vec![ConvexProfile::max_affine(&[(qi(0), qi(-2)), (qi(1), qi(-3))])]],
            vec![vec![relu()], vec![relu().shift(&qi(-1))]],
            vec![qi(1); 2],
        )
        .unwrap();
        let (a, b) = transposition_sides(&t, 0).unwrap();
        assert_eq!(a, b);
    }
}
