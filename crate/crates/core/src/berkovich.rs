//! Finite skeleta of the Berkovich projective line over ℚ_p, rooted at the
//! Gauss point ζ. Depths and function values are in units of log p.
//!
//! Laplacian convention: Δf(v) = Σ of outgoing slopes at v. Canonical Green
//! functions have Δ = deg D at ζ and 0 elsewhere; subharmonic means Δ ≥ 0.

use std::fmt;
use std::str::FromStr;

use num::traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rational::{fmt_q, is_prime, parse_q, qi, qmin, vp, Q};

pub use crate::adelic::height;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TreeError {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("duplicate point {0}")]
    DuplicatePoint(Point),
    #[error("{0} is not a leaf of the tree")]
    NotALeaf(Point),
    #[error("evaluation at the pole {0}")]
    EvaluationAtPole(Point),
    #[error("value at the Gauss point is {0}, expected 0")]
    NotNormalized(String),
    #[error("slope toward {0} differs from its multiplicity")]
    RaySlopeMismatch(Point),
    #[error("not subharmonic at vertices {0:?}")]
    NotSubharmonic(Vec<usize>),
    #[error("functions live on different trees")]
    DifferentTrees,
    #[error("cannot parse {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Point {
    Finite(Q),
    Infinity,
}

impl Point {
    pub fn finite(x: Q) -> Point {
        Point::Finite(x)
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }

    pub fn as_finite(&self) -> Option<&Q> {
        match self {
            Point::Finite(x) => Some(x),
            Point::Infinity => None,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Finite(x) => write!(f, "{}", fmt_q(x)),
            Point::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for Point {
    type Err = TreeError;
    fn from_str(s: &str) -> Result<Point, TreeError> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Point::Infinity),
            t => parse_q(t).map(Point::Finite).map_err(|_| TreeError::Parse(s.to_string())),
        }
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Point, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let s = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("bad point {other}"))),
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// max(0, −v_p(x)), with 0 at x = 0.
pub fn pole_depth(p: u64, x: &Q) -> Q {
    if x.is_zero() {
        return Q::zero();
    }
    qi((-vp(p, x)).max(0))
}

/// Depth at which the paths from ζ to x and to y separate; None when x = y.
pub fn gromov(p: u64, x: &Point, y: &Point) -> Option<Q> {
    match (x, y) {
        (Point::Infinity, Point::Infinity) => None,
        (Point::Finite(a), Point::Infinity) | (Point::Infinity, Point::Finite(a)) => Some(pole_depth(p, a)),
        (Point::Finite(a), Point::Finite(b)) => {
            if a == b {
                None
            } else {
                Some(qi(vp(p, &(a - b))) + pole_depth(p, a) + pole_depth(p, b))
            }
        }
    }
}

/// Type-II point at `depth` along the path from ζ toward `rep`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeII {
    #[serde(with = "crate::rational::serde_q")]
    pub depth: Q,
    pub rep: Point,
}

impl TypeII {
    pub fn gauss() -> TypeII {
        TypeII { depth: Q::zero(), rep: Point::Infinity }
    }

    /// Depth of the meet with the path toward x.
    pub fn meet(&self, p: u64, x: &Point) -> Q {
        match gromov(p, &self.rep, x) {
            Some(g) => qmin(&self.depth, &g),
            None => self.depth.clone(),
        }
    }

    pub fn same(&self, p: u64, o: &TypeII) -> bool {
        self.depth == o.depth && self.meet(p, &o.rep) == self.depth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub depth: Q,
    /// index into the leaves
    pub rep: usize,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerkTree {
    p: u64,
    leaves: Vec<Point>,
    vertices: Vec<Vertex>,
    children: Vec<Vec<usize>>,
    leaf_base: Vec<usize>,
}

/// Where a point retracts to on the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub enum Location {
    Vertex(usize),
    Edge { parent: usize, child: usize, offset: Q },
    /// offset None: the leaf itself
    Ray { leaf: usize, offset: Option<Q> },
}

impl BerkTree {
    pub fn build_skeleton(p: u64, points: &[Point]) -> Result<BerkTree, TreeError> {
        BerkTree::build_with(p, points, &[])
    }

    /// Skeleton with additional type-II vertices; their reps must be among the points.
    pub fn build_with(p: u64, points: &[Point], extra: &[TypeII]) -> Result<BerkTree, TreeError> {
        if !is_prime(p) {
            return Err(TreeError::NotPrime(p));
        }
        for (i, a) in points.iter().enumerate() {
            if points[..i].contains(a) {
                return Err(TreeError::DuplicatePoint(a.clone()));
            }
        }
        let leaf_of = |x: &Point| points.iter().position(|y| y == x).ok_or_else(|| TreeError::NotALeaf(x.clone()));
        let mut cand: Vec<(Q, usize)> = vec![(Q::zero(), 0)];
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let g = gromov(p, &points[i], &points[j]).expect("distinct points");
                cand.push((g, i));
            }
        }
        for e in extra {
            if e.depth.is_negative() {
                return Err(TreeError::Parse(format!("negative depth {}", fmt_q(&e.depth))));
            }
            cand.push((e.depth.clone(), leaf_of(&e.rep)?));
        }
        cand.sort_by(|a, b| a.0.cmp(&b.0));
        let on_path = |d: &Q, rep: usize, leaf: usize| -> bool {
            points.is_empty() || gromov(p, &points[rep], &points[leaf]).map_or(true, |g| *d <= g)
        };
        let mut vertices: Vec<Vertex> = Vec::new();
        for (d, rep) in cand {
            if vertices.iter().any(|v| v.depth == d && on_path(&d, v.rep, rep)) {
                continue;
            }
            let parent = vertices
                .iter()
                .enumerate()
                .filter(|(_, v)| v.depth < d && on_path(&v.depth, v.rep, rep))
                .max_by(|a, b| a.1.depth.cmp(&b.1.depth))
                .map(|(i, _)| i);
            vertices.push(Vertex { depth: d, rep, parent });
        }
        let mut children = vec![Vec::new(); vertices.len()];
        for (i, v) in vertices.iter().enumerate() {
            if let Some(par) = v.parent {
                children[par].push(i);
            }
        }
        let leaf_base = (0..points.len())
            .map(|l| {
                (0..vertices.len())
                    .filter(|&i| on_path(&vertices[i].depth, vertices[i].rep, l))
                    .max_by(|&a, &b| vertices[a].depth.cmp(&vertices[b].depth))
                    .expect("root is on every path")
            })
            .collect();
        Ok(BerkTree { p, leaves: points.to_vec(), vertices, children, leaf_base })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn leaves(&self) -> &[Point] {
        &self.leaves
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn leaf_base(&self, leaf: usize) -> usize {
        self.leaf_base[leaf]
    }

    pub fn leaf_index(&self, x: &Point) -> Option<usize> {
        self.leaves.iter().position(|y| y == x)
    }

    pub fn type2(&self, v: usize) -> TypeII {
        let vx = &self.vertices[v];
        let rep = self.leaves.get(vx.rep).cloned().unwrap_or(Point::Infinity);
        TypeII { depth: vx.depth.clone(), rep }
    }

    /// Does the path from ζ to the leaf pass through vertex v?
    pub fn below(&self, v: usize, leaf: usize) -> bool {
        let vx = &self.vertices[v];
        gromov(self.p, &self.leaves[vx.rep], &self.leaves[leaf]).map_or(true, |g| vx.depth <= g)
    }

    /// Retraction of a type-II point (depth None: the type-I point itself).
    pub fn locate(&self, depth: Option<&Q>, x: &Point) -> Location {
        let mut best: Option<(Option<Q>, usize)> = None;
        for (l, leaf) in self.leaves.iter().enumerate() {
            let m = match (gromov(self.p, x, leaf), depth) {
                (Some(g), Some(h)) => Some(qmin(&g, h)),
                (Some(g), None) => Some(g),
                (None, Some(h)) => Some(h.clone()),
                (None, None) => None,
            };
            let better = match (&best, &m) {
                (None, _) => true,
                (Some((Some(_), _)), None) => true,
                (Some((Some(b), _)), Some(c)) => c > b,
                (Some((None, _)), _) => false,
            };
            if better {
                best = Some((m, l));
            }
        }
        let Some((h, leaf)) = best else {
            return Location::Vertex(0);
        };
        let Some(h) = h else {
            return Location::Ray { leaf, offset: None };
        };
        let mut u = 0;
        loop {
            let next = self.children[u].iter().find(|&&c| self.below(c, leaf)).copied();
            match next {
                Some(c) if self.vertices[c].depth <= h => u = c,
                Some(c) => {
                    let offset = &h - &self.vertices[u].depth;
                    return if offset.is_zero() {
                        Location::Vertex(u)
                    } else {
                        Location::Edge { parent: u, child: c, offset }
                    };
                }
                None => {
                    let offset = &h - &self.vertices[u].depth;
                    return if offset.is_zero() { Location::Vertex(u) } else { Location::Ray { leaf, offset: Some(offset) } };
                }
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let name = |i: usize| format!("v{i}");
        let mut edges = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if let Some(par) = v.parent {
                edges.push(serde_json::json!({
                    "from": name(par), "to": name(i),
                    "length": fmt_q(&(&v.depth - &self.vertices[par].depth)),
                }));
            }
        }
        for (l, leaf) in self.leaves.iter().enumerate() {
            edges.push(serde_json::json!({ "from": name(self.leaf_base[l]), "to": leaf.to_string(), "length": "inf" }));
        }
        let verts: Vec<serde_json::Value> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::json!({
                    "name": name(i), "depth": fmt_q(&v.depth),
                    "toward": self.leaves.get(v.rep).map(|x| x.to_string()),
                })
            })
            .collect();
        serde_json::json!({
            "p": self.p,
            "leaves": self.leaves.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
            "vertices": verts,
            "edges": edges,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TreeDivisor {
    pub terms: Vec<(Point, Q)>,
}

impl TreeDivisor {
    pub fn new(terms: Vec<(Point, Q)>) -> TreeDivisor {
        let mut d = TreeDivisor { terms: Vec::new() };
        for (x, m) in terms {
            d.add_term(x, m);
        }
        d
    }

    pub fn add_term(&mut self, x: Point, m: Q) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.0 == x) {
            t.1 += m;
        } else {
            self.terms.push((x, m));
        }
        self.terms.retain(|t| !t.1.is_zero());
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
    }

    pub fn degree(&self) -> Q {
        self.terms.iter().map(|t| t.1.clone()).sum()
    }

    pub fn multiplicity(&self, x: &Point) -> Q {
        self.terms.iter().find(|t| t.0 == *x).map(|t| t.1.clone()).unwrap_or_else(Q::zero)
    }

    pub fn support(&self) -> Vec<Point> {
        self.terms.iter().map(|t| t.0.clone()).collect()
    }

    /// "1*[0] -1*[inf] + 1/2*[3]"
    pub fn parse(s: &str) -> Result<TreeDivisor, TreeError> {
        let err = || TreeError::Parse(s.to_string());
        let mut terms = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            let mut sign = qi(1);
            while let Some(c) = rest.chars().next().filter(|c| *c == '+' || *c == '-' || c.is_whitespace()) {
                if c == '-' {
                    sign = -sign;
                }
                rest = &rest[c.len_utf8()..];
            }
            let open = rest.find('[').ok_or_else(err)?;
            let close = rest.find(']').ok_or_else(err)?;
            let coef = rest[..open].trim().trim_end_matches('*').trim();
            let coef = if coef.is_empty() { qi(1) } else { parse_q(coef).map_err(|_| err())? };
            terms.push((rest[open + 1..close].parse()?, coef * sign));
            rest = rest[close + 1..].trim_start();
        }
        Ok(TreeDivisor::new(terms))
    }
}

impl fmt::Display for TreeDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(x, m)| format!("{}*[{}]", fmt_q(m), x)).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Piecewise-linear function on a skeleton: values at vertices plus slopes along
/// the leaf rays beyond their base vertices. Constant off the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeFunction {
    tree: BerkTree,
    values: Vec<Q>,
    ray_slopes: Vec<Q>,
}

impl TreeFunction {
    pub fn new(tree: BerkTree, values: Vec<Q>, ray_slopes: Vec<Q>) -> TreeFunction {
        assert_eq!(values.len(), tree.vertices.len());
        assert_eq!(ray_slopes.len(), tree.leaves.len());
        TreeFunction { tree, values, ray_slopes }
    }

    pub fn constant(tree: BerkTree, c: Q) -> TreeFunction {
        let n = tree.vertices.len();
        let l = tree.leaves.len();
        TreeFunction { tree, values: vec![c; n], ray_slopes: vec![Q::zero(); l] }
    }

    /// Σ_k w_k · min(h_k, (x | a_k)) + c, on the skeleton of the a_k.
    pub fn from_tents(p: u64, constant: Q, tents: &[(TypeII, Q)]) -> Result<TreeFunction, TreeError> {
        let mut pts: Vec<Point> = Vec::new();
        for (t, _) in tents {
            if !pts.contains(&t.rep) {
                pts.push(t.rep.clone());
            }
        }
        let extra: Vec<TypeII> = tents.iter().map(|t| t.0.clone()).collect();
        let tree = BerkTree::build_with(p, &pts, &extra)?;
        let values = (0..tree.vertices.len())
            .map(|v| {
                let pt = tree.type2(v);
                tents.iter().fold(constant.clone(), |acc, (t, w)| acc + w * qmin(&t.depth, &pt.meet(p, &t.rep)))
            })
            .collect();
        let l = tree.leaves.len();
        Ok(TreeFunction { tree, values, ray_slopes: vec![Q::zero(); l] })
    }

    pub fn tree(&self) -> &BerkTree {
        &self.tree
    }

    pub fn values(&self) -> &[Q] {
        &self.values
    }

    pub fn ray_slopes(&self) -> &[Q] {
        &self.ray_slopes
    }

    pub fn value_at_gauss(&self) -> &Q {
        &self.values[0]
    }

    /// Slope along the edge from the parent of `child` toward `child`.
    pub fn edge_slope(&self, child: usize) -> Q {
        let v = &self.tree.vertices[child];
        let par = v.parent.expect("edge needs a parent");
        (&self.values[child] - &self.values[par]) / (&v.depth - &self.tree.vertices[par].depth)
    }

    pub fn eval_location(&self, loc: &Location) -> Result<Q, TreeError> {
        Ok(match loc {
            Location::Vertex(v) => self.values[*v].clone(),
            Location::Edge { parent, child, offset } => &self.values[*parent] + self.edge_slope(*child) * offset,
            Location::Ray { leaf, offset: Some(o) } => &self.values[self.tree.leaf_base[*leaf]] + &self.ray_slopes[*leaf] * o,
            Location::Ray { leaf, offset: None } => {
                if !self.ray_slopes[*leaf].is_zero() {
                    return Err(TreeError::EvaluationAtPole(self.tree.leaves[*leaf].clone()));
                }
                self.values[self.tree.leaf_base[*leaf]].clone()
            }
        })
    }

    pub fn eval(&self, x: &Point) -> Result<Q, TreeError> {
        self.eval_location(&self.tree.locate(None, x))
    }

    pub fn eval_type2(&self, x: &TypeII) -> Q {
        self.eval_location(&self.tree.locate(Some(&x.depth), &x.rep)).expect("type-II points are never poles")
    }

    pub fn laplacian_at(&self, v: usize) -> Q {
        let mut s: Q = self.tree.children[v].iter().map(|&c| self.edge_slope(c)).sum();
        for l in 0..self.tree.leaves.len() {
            if self.tree.leaf_base[l] == v {
                s += &self.ray_slopes[l];
            }
        }
        if self.tree.vertices[v].parent.is_some() {
            s -= self.edge_slope(v);
        }
        s
    }

    pub fn add(&self, o: &TreeFunction) -> Result<TreeFunction, TreeError> {
        if self.tree != o.tree {
            return Err(TreeError::DifferentTrees);
        }
        Ok(TreeFunction {
            tree: self.tree.clone(),
            values: self.values.iter().zip(&o.values).map(|(a, b)| a + b).collect(),
            ray_slopes: self.ray_slopes.iter().zip(&o.ray_slopes).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, c: &Q) -> TreeFunction {
        TreeFunction {
            tree: self.tree.clone(),
            values: self.values.iter().map(|a| a * c).collect(),
            ray_slopes: self.ray_slopes.iter().map(|a| a * c).collect(),
        }
    }

    /// The same function on a finer skeleton containing this one.
    pub fn resample(&self, tree: &BerkTree) -> TreeFunction {
        let values = (0..tree.vertices.len()).map(|v| self.eval_type2(&tree.type2(v))).collect();
        let ray_slopes = tree
            .leaves
            .iter()
            .map(|x| self.tree.leaf_index(x).map(|l| self.ray_slopes[l].clone()).unwrap_or_else(Q::zero))
            .collect();
        TreeFunction { tree: tree.clone(), values, ray_slopes }
    }
}

/// Smallest skeleton containing the given trees.
pub fn union_tree(p: u64, trees: &[&BerkTree], points: &[Point]) -> Result<BerkTree, TreeError> {
    let mut pts: Vec<Point> = Vec::new();
    let mut extra = Vec::new();
    for t in trees {
        for x in &t.leaves {
            if !pts.contains(x) {
                pts.push(x.clone());
            }
        }
        for v in 0..t.vertices.len() {
            if !t.leaves.is_empty() {
                extra.push(t.type2(v));
            }
        }
    }
    for x in points {
        if !pts.contains(x) {
            pts.push(x.clone());
        }
    }
    BerkTree::build_with(p, &pts, &extra)
}

/// Slope walk from ζ: the slope away from ζ on each edge is the multiplicity
/// of D beyond it.
pub fn canonical_green(tree: &BerkTree, d: &TreeDivisor) -> Result<TreeFunction, TreeError> {
    let mut mult = vec![Q::zero(); tree.leaves.len()];
    for (x, m) in &d.terms {
        let l = tree.leaf_index(x).ok_or_else(|| TreeError::NotALeaf(x.clone()))?;
        mult[l] = m.clone();
    }
    let n = tree.vertices.len();
    let beyond: Vec<Q> = (0..n)
        .map(|v| (0..tree.leaves.len()).filter(|&l| tree.below(v, l)).map(|l| mult[l].clone()).sum())
        .collect();
    let mut values = vec![Q::zero(); n];
    let mut stack = vec![0usize];
    while let Some(u) = stack.pop() {
        for &c in &tree.children[u] {
            let len = &tree.vertices[c].depth - &tree.vertices[u].depth;
            values[c] = &values[u] + len * &beyond[c];
            stack.push(c);
        }
    }
    Ok(TreeFunction { tree: tree.clone(), values, ray_slopes: mult })
}

/// Every edge slope (re-derived from values) equals the multiplicity beyond it,
/// ray slopes equal leaf multiplicities, and the value at ζ is 0.
pub fn slope_rule_holds(g: &TreeFunction, d: &TreeDivisor) -> bool {
    let t = &g.tree;
    if !g.values[0].is_zero() {
        return false;
    }
    let edges_ok = (1..t.vertices.len()).all(|c| {
        let want: Q = (0..t.leaves.len()).filter(|&l| t.below(c, l)).map(|l| d.multiplicity(&t.leaves[l])).sum();
        g.edge_slope(c) == want
    });
    let rays_ok = t.leaves.iter().enumerate().all(|(l, x)| g.ray_slopes[l] == d.multiplicity(x));
    edges_ok && rays_ok
}

/// max over vertices of g − g^can, after checking g(ζ) = 0, matching ray
/// slopes and Δg ≥ 0 away from ζ.
pub fn model_green_compare(g: &TreeFunction, d: &TreeDivisor) -> Result<Q, TreeError> {
    let t = &g.tree;
    if !g.values[0].is_zero() {
        return Err(TreeError::NotNormalized(fmt_q(&g.values[0])));
    }
    for (l, x) in t.leaves.iter().enumerate() {
        if g.ray_slopes[l] != d.multiplicity(x) {
            return Err(TreeError::RaySlopeMismatch(x.clone()));
        }
    }
    let bad: Vec<usize> = (1..t.vertices.len()).filter(|&v| g.laplacian_at(v).is_negative()).collect();
    if !bad.is_empty() {
        return Err(TreeError::NotSubharmonic(bad));
    }
    let can = canonical_green(t, d)?;
    Ok(g.values.iter().zip(&can.values).map(|(a, b)| a - b).max().expect("root exists"))
}

/// −Σ c_k min(h_k, (x|v_k)) over random vertices v_k ≠ ζ with c_k ∈ (0, 3]:
/// zero at ζ, Laplacian c_k ≥ 0 at each v_k, constant toward the leaves.
pub fn random_subharmonic_perturbation(tree: &BerkTree, seed: u64) -> TreeFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tree.vertices.len();
    let mut values = vec![Q::zero(); n];
    if n > 1 {
        let k = rng.gen_range(1..=n.min(4));
        for _ in 0..k {
            let v = rng.gen_range(1..n);
            let c = Q::new(rng.gen_range(1..=12).into(), 4.into());
            let pv = tree.type2(v);
            for (u, val) in values.iter_mut().enumerate() {
                *val -= &c * qmin(&pv.depth, &tree.type2(u).meet(tree.p, &pv.rep));
            }
        }
    }
    TreeFunction { tree: tree.clone(), values, ray_slopes: vec![Q::zero(); tree.leaves.len()] }
}
