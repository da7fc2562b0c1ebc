//! Discrete polynomial partitioning: bisect weighted point masses by
//! low-degree zero sets, form shrunken cells, and drive the
//! cellular/algebraic dichotomy.

use crate::error::{Error, Result};
use crate::geom::{poly_json, Polynomial, Variety};
use crate::rng;
use serde_json::json;

/// A finite weighted point measure.
#[derive(Debug, Clone)]
pub struct WeightedPoints {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Shape("one weight per point".into()));
        }
        if points.is_empty() {
            return Err(Error::Argument("empty point set".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("inconsistent point dimensions".into()));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Argument("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Argument("total weight must be positive".into()));
        }
        Ok(WeightedPoints { points, weights })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// One cell: the path of bisector signs identifying it, plus its members.
#[derive(Debug, Clone)]
pub struct Cell {
    pub sign_pattern: Vec<i8>,
    pub indices: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Split {
        poly: usize,
        neg: Box<Node>,
        pos: Box<Node>,
    },
}

/// The result of the recursive bisection: a list of bisecting polynomials
/// organized as a binary tree, the induced cells, and the wall points.
#[derive(Debug, Clone)]
pub struct Partition {
    pub bisectors: Vec<Polynomial>,
    pub cells: Vec<Cell>,
    pub wall: Vec<usize>,
    root: Node,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointClass {
    Cell(usize),
    Wall,
}

impl Partition {
    /// Classify an arbitrary point. Points within `tol` of a bisector zero
    /// set (in value, relative to the bisector's scale) are wall.
    pub fn classify(&self, p: &[f64]) -> PointClass {
        let mut node = &self.root;
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > 64 {
                return PointClass::Wall;
            }
            match node {
                Node::Leaf(c) => return PointClass::Cell(*c),
                Node::Split { poly, neg, pos } => {
                    let v = self.bisectors[*poly].eval(p);
                    if v == 0.0 {
                        return PointClass::Wall;
                    }
                    node = if v < 0.0 { neg } else { pos };
                }
            }
        }
    }

    pub fn degree(&self) -> u32 {
        self.bisectors.iter().map(|b| b.degree()).sum()
    }

    /// Evaluate the product polynomial via its factors.
    pub fn product_eval(&self, p: &[f64]) -> f64 {
        self.bisectors.iter().map(|b| b.eval(p)).product()
    }

    /// Gradient of the product via the factor rule (prefix/suffix
    /// products keep this linear in the number of factors).
    pub fn product_gradient(&self, p: &[f64]) -> Vec<f64> {
        let n = self.bisectors.len();
        let vals: Vec<f64> = self.bisectors.iter().map(|b| b.eval(p)).collect();
        let mut prefix = vec![1.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] * vals[i];
        }
        let mut suffix = vec![1.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] * vals[i];
        }
        let mut grad = vec![0.0; self.dim];
        for (i, b) in self.bisectors.iter().enumerate() {
            let rest = prefix[i] * suffix[i + 1];
            if rest == 0.0 {
                continue;
            }
            for (gi, bg) in grad.iter_mut().zip(b.gradient(p)) {
                *gi += rest * bg;
            }
        }
        grad
    }

    /// Expanded product of all bisectors. Potentially large after
    /// refinement rounds; prefer the factor-based evaluators internally.
    pub fn product_polynomial(&self) -> Polynomial {
        let mut product = Polynomial::new(self.dim, vec![(vec![0u32; self.dim], 1.0)]);
        for b in &self.bisectors {
            product = product.multiply(b);
        }
        product
    }

    pub fn to_json_string(&self) -> String {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                json!({
                    "sign_pattern": c.sign_pattern,
                    "indices": c.indices,
                    "weight": c.weight,
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({
            "poly": poly_json(&self.product_polynomial()),
            "cells": cells,
            "wall_indices": self.wall,
        }))
        .expect("partition serialization")
    }
}

fn bbox_diameter(w: &WeightedPoints, group: &[usize]) -> f64 {
    let dim = w.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &i in group {
        for ax in 0..dim {
            lo[ax] = lo[ax].min(w.points[i][ax]);
            hi[ax] = hi[ax].max(w.points[i][ax]);
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}

fn binom(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Monomial exponent lists of total degree 1..=d in `dim` variables.
fn monomial_exponents(dim: usize, d: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    fn rec(ax: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if ax == cur.len() {
            if cur.iter().any(|e| *e > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for e in 0..=left {
            cur[ax] = e;
            rec(ax + 1, left - e, cur, out);
        }
        cur[ax] = 0;
    }
    rec(0, d, &mut cur, &mut out);
    out
}

struct VeroneseFrame {
    exponents: Vec<Vec<u32>>,
    center: Vec<f64>,
    halfwidth: Vec<f64>,
    feat_mean: Vec<f64>,
    feat_scale: Vec<f64>,
}

impl VeroneseFrame {
    fn features(&self, p: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = p
            .iter()
            .zip(self.center.iter().zip(&self.halfwidth))
            .map(|(x, (c, h))| (x - c) / h)
            .collect();
        let mut f = Vec::with_capacity(self.exponents.len() + 1);
        f.push(1.0);
        for (m, e) in self.exponents.iter().enumerate() {
            let raw: f64 = e
                .iter()
                .zip(&y)
                .map(|(k, v)| v.powi(*k as i32))
                .product();
            f.push((raw - self.feat_mean[m]) / self.feat_scale[m]);
        }
        f
    }

    /// Convert a coefficient vector over the standardized features into a
    /// polynomial in the original coordinates.
    fn to_polynomial(&self, coeffs: &[f64]) -> Polynomial {
        let dim = self.center.len();
        let mut constant = coeffs[0];
        let mut acc = Polynomial::new(dim, vec![(vec![0; dim], 0.0)]);
        for (m, e) in self.exponents.iter().enumerate() {
            let c = coeffs[m + 1] / self.feat_scale[m];
            constant -= coeffs[m + 1] * self.feat_mean[m] / self.feat_scale[m];
            if c == 0.0 {
                continue;
            }
            // monomial prod ((x_i - ctr_i)/hw_i)^{e_i}
            let mut mono = Polynomial::new(dim, vec![(vec![0; dim], c)]);
            for (i, k) in e.iter().enumerate() {
                let mut lin_e = vec![0u32; dim];
                lin_e[i] = 1;
                let lin = Polynomial::new(
                    dim,
                    vec![
                        (lin_e, 1.0 / self.halfwidth[i]),
                        (vec![0; dim], -self.center[i] / self.halfwidth[i]),
                    ],
                );
                for _ in 0..*k {
                    mono = mono.multiply(&lin);
                }
            }
            acc = acc.add(&mono);
        }
        acc.add(&Polynomial::new(dim, vec![(vec![0; dim], constant)]))
    }
}

fn build_frame(w: &WeightedPoints, deg: u32, groups: &[Vec<usize>]) -> VeroneseFrame {
    let dim = w.dim();
    let mut center = vec![0.0; dim];
    let total = w.total_weight();
    for (p, wt) in w.points.iter().zip(&w.weights) {
        for (c, x) in center.iter_mut().zip(p) {
            *c += wt * x / total;
        }
    }
    let mut halfwidth = vec![0.0f64; dim];
    for p in &w.points {
        for (h, (x, c)) in halfwidth.iter_mut().zip(p.iter().zip(&center)) {
            *h = h.max((x - c).abs());
        }
    }
    for h in halfwidth.iter_mut() {
        if *h < 1e-12 {
            *h = 1.0;
        }
    }
    let exponents = monomial_exponents(dim, deg);
    let mut frame = VeroneseFrame {
        exponents,
        center,
        halfwidth,
        feat_mean: Vec::new(),
        feat_scale: Vec::new(),
    };
    // standardize features over the active points
    let active: Vec<usize> = groups.iter().flatten().copied().collect();
    let m = frame.exponents.len();
    let mut mean = vec![0.0; m];
    let mut scale = vec![0.0; m];
    frame.feat_mean = vec![0.0; m];
    frame.feat_scale = vec![1.0; m];
    let inv = 1.0 / active.len().max(1) as f64;
    for &i in &active {
        let f = frame.features(&w.points[i]);
        for (mm, fv) in mean.iter_mut().zip(f.iter().skip(1)) {
            *mm += fv * inv;
        }
    }
    for &i in &active {
        let f = frame.features(&w.points[i]);
        for (sv, (fv, mm)) in scale.iter_mut().zip(f.iter().skip(1).zip(&mean)) {
            *sv += (fv - mm) * (fv - mm) * inv;
        }
    }
    for s in scale.iter_mut() {
        *s = s.sqrt().max(1e-9);
    }
    frame.feat_mean = mean;
    frame.feat_scale = scale;
    frame
}

/// Gradient-descent search for one polynomial whose sign bisects every
/// group's weight (annealed smoothed-sign objective, deterministic
/// restarts). Returns the polynomial when every group is balanced within
/// `tol` of half, by weight.
fn veronese_bisector(
    w: &WeightedPoints,
    groups: &[Vec<usize>],
    deg: u32,
    tol: f64,
    seed: u64,
) -> Option<Polynomial> {
    let frame = build_frame(w, deg, groups);
    let live: Vec<&Vec<usize>> = groups
        .iter()
        .filter(|g| g.iter().map(|&i| w.weights[i]).sum::<f64>() > 0.0 && g.len() > 1)
        .collect();
    if live.is_empty() {
        return None;
    }
    // flattened (group, weight, features) triples
    let mut members: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for (gi, g) in live.iter().enumerate() {
        for &i in g.iter() {
            members.push((gi, w.weights[i], frame.features(&w.points[i])));
        }
    }
    let gw: Vec<f64> = live
        .iter()
        .map(|g| g.iter().map(|&i| w.weights[i]).sum::<f64>())
        .collect();
    let dims = frame.exponents.len() + 1;
    let iters = 320;
    for restart in 0..6u64 {
        let mut rr = rng::stream(seed, "veronese", restart);
        let mut c: Vec<f64> = (0..dims).map(|_| rng::uniform(&mut rr, -1.0, 1.0)).collect();
        normalize(&mut c);
        let mut momentum = vec![0.0; dims];
        for it in 0..iters {
            // annealed smoothing width
            let h = 0.03f64.powf(it as f64 / iters as f64);
            let mut imb = vec![0.0; live.len()];
            let vals: Vec<f64> = members
                .iter()
                .map(|(gi, wt, f)| {
                    let v: f64 = c.iter().zip(f).map(|(a, b)| a * b).sum();
                    imb[*gi] += wt * (v / h).tanh();
                    v
                })
                .collect();
            let mut grad = vec![0.0; dims];
            for ((gi, wt, f), v) in members.iter().zip(&vals) {
                let sech2 = 1.0 - (v / h).tanh().powi(2);
                let gwi = gw[*gi].max(1e-300);
                let factor = 2.0 * (imb[*gi] / gwi) * wt * sech2 / (h * gwi);
                for (gg, fv) in grad.iter_mut().zip(f) {
                    *gg += factor * fv;
                }
            }
            let lr = 0.25;
            for ((ci, m), g) in c.iter_mut().zip(&mut momentum).zip(&grad) {
                *m = 0.8 * *m - lr * g;
                *ci += *m;
            }
            normalize(&mut c);
        }
        // exact-sign verification
        let mut signed = vec![0.0; live.len()];
        for (gi, wt, f) in &members {
            let v: f64 = c.iter().zip(f).map(|(a, b)| a * b).sum();
            signed[*gi] += wt * v.signum();
        }
        let ok = signed
            .iter()
            .zip(&gw)
            .all(|(s, g)| s.abs() <= tol * g.max(1e-300));
        if ok {
            return Some(frame.to_polynomial(&c));
        }
    }
    None
}

fn normalize(v: &mut [f64]) {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Exact weighted-median hyperplane for one group, along its widest axis.
fn median_hyperplane(w: &WeightedPoints, group: &[usize]) -> Result<Polynomial> {
    let dim = w.dim();
    let mut best_axis = 0;
    let mut best_spread = -1.0;
    for ax in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in group {
            lo = lo.min(w.points[i][ax]);
            hi = hi.max(w.points[i][ax]);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_axis = ax;
        }
    }
    if best_spread <= 0.0 {
        return Err(Error::Degenerate(
            "all points coincide; no separating bisector".into(),
        ));
    }
    let mut vals: Vec<(f64, f64)> = group
        .iter()
        .map(|&i| (w.points[i][best_axis], w.weights[i]))
        .collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = vals.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    let mut cut = vals[vals.len() / 2].0;
    for win in vals.windows(2) {
        acc += win[0].1;
        if acc >= total / 2.0 {
            cut = 0.5 * (win[0].0 + win[1].0);
            break;
        }
    }
    if vals.iter().all(|v| v.0 >= cut) || vals.iter().all(|v| v.0 < cut) {
        // degenerate weights (e.g. all mass on one point): fall back to a
        // geometric split that still separates the points
        cut = 0.5 * (vals[0].0 + vals[vals.len() - 1].0);
    }
    let mut normal = vec![0.0; dim];
    normal[best_axis] = 1.0;
    Ok(Polynomial::hyperplane(&normal, cut))
}

/// Equal-mass partition by `ceil(n log2 d)` bisection rounds.
///
/// Each round first attempts one simultaneous (ham-sandwich style)
/// polynomial found by a randomized linear-separator search over the
/// Veronese lift; groups the search leaves unbalanced fall back to exact
/// per-group median hyperplanes.
pub fn equal_mass_partition(w: &WeightedPoints, d: u32) -> Result<Partition> {
    equal_mass_partition_with(w, d, None)
}

/// [`equal_mass_partition`] with optional diameter enforcement: cells whose
/// bounding-box diagonal exceeds the limit get extra median bisections
/// (up to four refinement rounds).
pub fn equal_mass_partition_with(
    w: &WeightedPoints,
    d: u32,
    diameter_limit: Option<f64>,
) -> Result<Partition> {
    if d < 2 {
        return Err(Error::Argument("need d >= 2".into()));
    }
    let dim = w.dim();
    let levels = ((dim as f64) * (d as f64).log2()).ceil() as usize;
    let extra = if diameter_limit.is_some() { 4 } else { 0 };
    let mut bisectors: Vec<Polynomial> = Vec::new();
    // leaves: (node path, member indices)
    let mut wall: Vec<usize> = Vec::new();
    let mut leaves: Vec<(Vec<i8>, Vec<usize>)> = vec![(Vec::new(), (0..w.points.len()).collect())];
    // tree is rebuilt from the recorded splits at the end
    let mut plan: Vec<Vec<(Vec<i8>, usize)>> = Vec::new(); // per level: (leaf path, poly idx)

    for level in 0..levels + extra {
        let refining = level >= levels;
        let needs_split = |g: &[usize]| -> bool {
            if g.len() <= 1 {
                return false;
            }
            if !refining {
                return true;
            }
            let limit = diameter_limit.expect("refining implies a limit");
            bbox_diameter(w, g) > limit
        };
        let live_groups: Vec<Vec<usize>> = leaves
            .iter()
            .filter(|(_, g)| needs_split(g))
            .map(|(_, g)| g.clone())
            .collect();
        if live_groups.is_empty() {
            break;
        }
        let mut level_polys: Vec<(Vec<i8>, usize)> = Vec::new();
        // refinement rounds are plain spatial bisections
        let simultaneous = if refining {
            None
        } else {
            // smallest Veronese degree with enough coefficients
            let mut deg = 1u32;
            while binom(deg as usize + dim, dim) - 1 < live_groups.len() {
                deg += 1;
            }
            veronese_bisector(w, &live_groups, deg, 0.2, 1000 + level as u64)
        };
        match simultaneous {
            Some(poly) => {
                let idx = bisectors.len();
                bisectors.push(poly);
                for (path, g) in &leaves {
                    if needs_split(g) {
                        level_polys.push((path.clone(), idx));
                    }
                }
            }
            None => {
                for (path, g) in &leaves {
                    if needs_split(g) {
                        let poly = median_hyperplane(w, g)?;
                        let idx = bisectors.len();
                        bisectors.push(poly);
                        level_polys.push((path.clone(), idx));
                    }
                }
            }
        }
        // split the leaves
        let mut next: Vec<(Vec<i8>, Vec<usize>)> = Vec::new();
        for (path, g) in leaves {
            let split = level_polys.iter().find(|(p, _)| *p == path);
            match split {
                None => next.push((path, g)),
                Some((_, pidx)) => {
                    let poly = &bisectors[*pidx];
                    let scale: f64 = g
                        .iter()
                        .map(|&i| poly.eval(&w.points[i]).abs())
                        .fold(0.0, f64::max)
                        .max(1e-300);
                    let mut neg = Vec::new();
                    let mut pos = Vec::new();
                    for &i in &g {
                        let v = poly.eval(&w.points[i]);
                        if v.abs() <= 1e-12 * scale {
                            wall.push(i);
                        } else if v < 0.0 {
                            neg.push(i);
                        } else {
                            pos.push(i);
                        }
                    }
                    let mut pn = path.clone();
                    pn.push(-1);
                    let mut pp = path;
                    pp.push(1);
                    next.push((pn, neg));
                    next.push((pp, pos));
                }
            }
        }
        leaves = next;
        plan.push(level_polys);
    }

    // assemble the classification tree from the split plan
    fn build(path: &mut Vec<i8>, plan: &[Vec<(Vec<i8>, usize)>], level: usize, leaf_counter: &mut usize) -> Node {
        if level < plan.len() {
            if let Some((_, pidx)) = plan[level].iter().find(|(p, _)| p == path) {
                let pidx = *pidx;
                path.push(-1);
                let neg = build(path, plan, level + 1, leaf_counter);
                path.pop();
                path.push(1);
                let pos = build(path, plan, level + 1, leaf_counter);
                path.pop();
                return Node::Split {
                    poly: pidx,
                    neg: Box::new(neg),
                    pos: Box::new(pos),
                };
            }
            // no split at this level: continue deeper with the same path
            return build(path, plan, level + 1, leaf_counter);
        }
        let n = Node::Leaf(*leaf_counter);
        *leaf_counter += 1;
        n
    }
    let mut counter = 0usize;
    let root = build(&mut Vec::new(), &plan, 0, &mut counter);

    // map leaves to cells in tree order: recompute classification per leaf
    let mut partition = Partition {
        bisectors,
        cells: Vec::new(),
        wall: Vec::new(),
        root,
        dim,
    };
    let mut cells: Vec<Cell> = (0..counter)
        .map(|_| Cell {
            sign_pattern: Vec::new(),
            indices: Vec::new(),
            weight: 0.0,
        })
        .collect();
    // sign patterns from the recorded leaf paths
    for (path, g) in &leaves {
        if g.is_empty() {
            continue;
        }
        let rep = g[0];
        if let PointClass::Cell(ci) = partition.classify(&w.points[rep]) {
            cells[ci].sign_pattern = path.clone();
        }
    }
    let mut wall_set: Vec<usize> = wall;
    for i in 0..w.points.len() {
        if wall_set.contains(&i) {
            continue;
        }
        match partition.classify(&w.points[i]) {
            PointClass::Cell(ci) => {
                cells[ci].indices.push(i);
                cells[ci].weight += w.weights[i];
            }
            PointClass::Wall => wall_set.push(i),
        }
    }
    cells.retain(|c| !c.indices.is_empty());
    partition.cells = cells;
    partition.wall = wall_set;
    Ok(partition)
}

/// Count the cell intervals a line visits, by dense sampling; the FTA bound
/// is `deg(P) + 1`. A line inside the wall reports 0.
pub fn line_cell_crossings(
    partition: &Partition,
    origin: &[f64],
    direction: &[f64],
    t_half: f64,
    samples: usize,
) -> usize {
    let mut runs = 0usize;
    let mut last: Option<PointClass> = None;
    for s in 0..samples {
        let t = -t_half + 2.0 * t_half * (s as f64 + 0.5) / samples as f64;
        let p: Vec<f64> = origin
            .iter()
            .zip(direction)
            .map(|(o, d)| o + t * d)
            .collect();
        let class = match classify_with_tol(partition, &p) {
            PointClass::Wall => {
                last = Some(PointClass::Wall);
                continue;
            }
            c => c,
        };
        if last != Some(class) {
            runs += 1;
            last = Some(class);
        }
    }
    runs
}

fn classify_with_tol(partition: &Partition, p: &[f64]) -> PointClass {
    // small relative tolerance so sampled points numerically on the zero
    // set count as wall
    for b in &partition.bisectors {
        let v = b.eval(p);
        let scale = b
            .monomials
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
            .max(1e-300)
            * p.iter().map(|x| x.abs().max(1.0)).fold(1.0, f64::max);
        if v.abs() <= 1e-11 * scale {
            return PointClass::Wall;
        }
    }
    partition.classify(p)
}

/// Shrunken cells: each cell minus the first-order wall neighborhood of
/// width `r^{1/2 + delta_m}` around `Z(P)`.
///
/// Since `Z(P)` is the union of the bisector zero sets, the first-order
/// distance estimate is the minimum of `|P_i| / |grad P_i|` over the
/// factors (the raw `|P|/|grad P|` of the product under-counts distance
/// through harmonic accumulation).
pub struct ShrunkenCells {
    /// Retained member indices per cell (same order as `partition.cells`).
    pub retained: Vec<Vec<usize>>,
    pub wall_indices: Vec<usize>,
    pub retained_weight: f64,
}

impl Partition {
    /// First-order distance from `p` to the union of bisector zero sets.
    pub fn wall_distance_estimate(&self, p: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for b in &self.bisectors {
            let v = b.eval(p).abs();
            let g = b.gradient(p);
            let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn > 0.0 {
                best = best.min(v / gn);
            } else if v == 0.0 {
                return 0.0;
            }
        }
        best
    }
}

pub fn shrunken_cells(
    partition: &Partition,
    w: &WeightedPoints,
    r: f64,
    delta_m: f64,
) -> ShrunkenCells {
    let width = r.powf(0.5 + delta_m);
    let mut retained = vec![Vec::new(); partition.cells.len()];
    let mut wall_indices = partition.wall.clone();
    let mut kept = 0.0;
    for (ci, cell) in partition.cells.iter().enumerate() {
        for &i in &cell.indices {
            if partition.wall_distance_estimate(&w.points[i]) <= width {
                wall_indices.push(i);
            } else {
                retained[ci].push(i);
                kept += w.weights[i];
            }
        }
    }
    ShrunkenCells {
        retained,
        wall_indices,
        retained_weight: kept,
    }
}

/// Outcome of one dichotomy step.
pub enum DichotomyOutcome {
    Cellular {
        partition: Partition,
        /// Cells whose shrunken weight clears `c_low d^{-m} total`.
        heavy_cells: Vec<usize>,
        heavy_weight: f64,
    },
    Algebraic {
        variety: Variety,
        capture: f64,
    },
}

/// Thresholds for the dichotomy decision.
#[derive(Debug, Clone, Copy)]
pub struct DichotomyConfig {
    /// A cell is "heavy" when its shrunken weight is at least
    /// `c_low d^{-m} total`.
    pub c_low: f64,
    /// Minimal mass fraction the heavy shrunken cells must carry for the
    /// cellular branch.
    pub cellular_floor: f64,
    /// Algebraic case requires this fraction near the fitted variety.
    pub capture_min: f64,
}

impl Default for DichotomyConfig {
    fn default() -> Self {
        DichotomyConfig {
            c_low: 0.1,
            cellular_floor: 0.25,
            capture_min: 0.5,
        }
    }
}

/// Weighted-PCA hyperplane fit: normal = smallest principal direction.
fn fit_hyperplane(w: &WeightedPoints) -> (Vec<f64>, Vec<f64>) {
    let dim = w.dim();
    let total = w.total_weight();
    let mut mean = vec![0.0; dim];
    for (p, wt) in w.points.iter().zip(&w.weights) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += wt * x / total;
        }
    }
    let mut cov = nalgebra::DMatrix::zeros(dim, dim);
    for (p, wt) in w.points.iter().zip(&w.weights) {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += wt * (p[i] - mean[i]) * (p[j] - mean[j]) / total;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut best = 0;
    for i in 0..dim {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let normal: Vec<f64> = (0..dim).map(|i| eig.eigenvectors[(i, best)]).collect();
    (normal, mean)
}

/// One step of the cellular/algebraic dichotomy for a measure supported
/// near the variety `z` at scale `r`.
///
/// The branch is picked by which side dominates: the mass retained in
/// heavy shrunken cells versus the mass captured by a fitted
/// lower-dimensional variety (hyperplane fit at desk scale). Cell
/// diameters are driven below `r/2` by extra spatial bisections.
pub fn dichotomy_step(
    w: &WeightedPoints,
    z: &Variety,
    d: u32,
    r: f64,
    delta_m: f64,
    cfg: &DichotomyConfig,
) -> Result<DichotomyOutcome> {
    let total = w.total_weight();
    let m = z.dim();
    let thickness = r.powf(0.5 + delta_m);

    // algebraic capture by a weighted-PCA hyperplane fit
    let (normal, mean) = fit_hyperplane(w);
    let offset: f64 = normal.iter().zip(&mean).map(|(n, c)| n * c).sum();
    let fit = Polynomial::hyperplane(&normal, offset);
    let capture: f64 = w
        .points
        .iter()
        .zip(&w.weights)
        .filter(|(p, _)| fit.eval(p).abs() <= thickness)
        .map(|(_, wt)| wt)
        .sum::<f64>()
        / total;

    // degenerate concentration: everything within one wall width
    let spread = {
        let all: Vec<usize> = (0..w.points.len()).collect();
        bbox_diameter(w, &all)
    };
    if spread <= thickness {
        let variety = Variety::new(w.dim(), vec![fit])?;
        return Ok(DichotomyOutcome::Algebraic {
            variety,
            capture: 1.0,
        });
    }

    let partition = equal_mass_partition_with(w, d, Some(r / 2.0))?;
    let shrunken = shrunken_cells(&partition, w, r, delta_m);
    let floor = cfg.c_low * (d as f64).powi(-(m as i32)) * total;
    let mut heavy = Vec::new();
    let mut heavy_weight = 0.0;
    for (ci, kept) in shrunken.retained.iter().enumerate() {
        let wt: f64 = kept.iter().map(|&i| w.weights[i]).sum();
        if wt >= floor {
            heavy.push(ci);
            heavy_weight += wt;
        }
    }
    let cellular_score = heavy_weight / total;

    if cellular_score >= capture && cellular_score >= cfg.cellular_floor {
        return Ok(DichotomyOutcome::Cellular {
            partition,
            heavy_cells: heavy,
            heavy_weight,
        });
    }
    if capture >= cfg.capture_min {
        let variety = Variety::new(w.dim(), vec![fit])?;
        return Ok(DichotomyOutcome::Algebraic { variety, capture });
    }
    Err(Error::NeitherCase(format!(
        "heavy shrunken cells carry {:.3} of mass (floor {:.3}); \
         hyperplane captures {:.3} (need {:.3})",
        cellular_score, cfg.cellular_floor, capture, cfg.capture_min
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_cube(count: usize, dim: usize, seed: u64) -> WeightedPoints {
        let mut r = rng::stream(seed, "uniform-pts", 0);
        let points: Vec<Vec<f64>> = (0..count)
            .map(|_| rng::point_in_box(&mut r, &vec![-1.0; dim], &vec![1.0; dim]))
            .collect();
        WeightedPoints::new(points, vec![1.0; count]).unwrap()
    }

    #[test]
    fn four_corner_points_split_into_singletons() {
        let pts = vec![
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ];
        let w = WeightedPoints::new(pts, vec![1.0; 4]).unwrap();
        let part = equal_mass_partition(&w, 2).unwrap();
        assert_eq!(part.wall.len(), 0);
        assert_eq!(part.cells.len(), 4);
        for c in &part.cells {
            assert_eq!(c.indices.len(), 1);
            assert!((c.weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_mass_on_one_point_is_reported_not_failed() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.3], vec![-0.4, 0.9]];
        let w = WeightedPoints::new(pts, vec![5.0, 0.0, 0.0]).unwrap();
        let part = equal_mass_partition(&w, 2).unwrap();
        let heaviest = part
            .cells
            .iter()
            .map(|c| c.weight)
            .fold(0.0f64, f64::max);
        assert!((heaviest - 5.0).abs() < 1e-12, "one cell holds everything");
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![vec![0.5, 0.5]; 8];
        let w = WeightedPoints::new(pts, vec![1.0; 8]).unwrap();
        match equal_mass_partition(&w, 2) {
            Err(Error::Degenerate(_)) => {}
            other => panic!("expected degenerate error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn uniform_mass_contracts() {
        let w = uniform_cube(4000, 3, 5);
        let d = 4u32;
        let part = equal_mass_partition(&w, d).unwrap();
        let total = w.total_weight();
        let dn = (d as f64).powi(3);
        assert!(
            (part.cells.len() as f64) <= 8.0 * dn,
            "cell count {}",
            part.cells.len()
        );
        let maxw = part.cells.iter().map(|c| c.weight).fold(0.0f64, f64::max);
        assert!(
            maxw <= 4.0 / dn * total,
            "max cell weight {} vs bound {}",
            maxw,
            4.0 / dn * total
        );
        // exhaustive and exclusive
        let assigned: usize = part.cells.iter().map(|c| c.indices.len()).sum::<usize>()
            + part.wall.len();
        assert_eq!(assigned, 4000);
        // rescaling weights rescales cell weights, same assignment
        let w2 = WeightedPoints::new(w.points.clone(), vec![3.0; 4000]).unwrap();
        let part2 = equal_mass_partition(&w2, d).unwrap();
        assert_eq!(part.cells.len(), part2.cells.len());
        for (a, b) in part.cells.iter().zip(&part2.cells) {
            assert_eq!(a.indices, b.indices);
            assert!((b.weight - 3.0 * a.weight).abs() <= 1e-9 * b.weight.max(1.0));
        }
    }

    #[test]
    fn line_crossing_bound_holds() {
        let w = uniform_cube(2000, 2, 9);
        let part = equal_mass_partition(&w, 4).unwrap();
        let bound = part.degree() as usize + 1;
        let mut r = rng::stream(10, "lines", 0);
        for _ in 0..200 {
            let origin = rng::point_in_box(&mut r, &[-1.0, -1.0], &[1.0, 1.0]);
            let dir = rng::unit_vector(&mut r, 2);
            let crossings = line_cell_crossings(&part, &origin, &dir, 3.0, 3000);
            assert!(
                crossings <= bound,
                "crossings {crossings} exceed deg+1 = {bound}"
            );
        }
    }

    #[test]
    fn line_inside_wall_reports_zero() {
        // partition of points split by x = 0-ish plane; walk along the wall
        let pts = vec![
            vec![-1.0, 0.0],
            vec![-0.5, 0.4],
            vec![0.5, -0.4],
            vec![1.0, 0.0],
        ];
        let w = WeightedPoints::new(pts, vec![1.0; 4]).unwrap();
        let part = equal_mass_partition(&w, 2).unwrap();
        // find a bisector and walk inside its zero set: use the first
        // hyperplane-like factor
        let b = &part.bisectors[0];
        // walk along the zero set of an axis-aligned hyperplane
        if b.degree() == 1 {
            let g = b.gradient(&[0.0, 0.0]);
            // point on the plane: solve n.x = c along the normal
            let c = -b.eval(&[0.0, 0.0]);
            let n2: f64 = g.iter().map(|x| x * x).sum();
            let origin: Vec<f64> = g.iter().map(|gi| gi * c / n2).collect();
            let dir = vec![-g[1] / n2.sqrt(), g[0] / n2.sqrt()];
            let crossings = line_cell_crossings(&part, &origin, &dir, 1.0, 512);
            assert_eq!(crossings, 0, "line inside Z(P) must see only wall");
        }
    }

    #[test]
    fn shrunken_cells_drop_wall_neighborhood() {
        // P = x1: points at known distances
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![-3.0, 0.5], vec![0.05, 1.0]];
        let w = WeightedPoints::new(pts, vec![1.0; 4]).unwrap();
        let mut part = equal_mass_partition(&w, 2).unwrap();
        // overwrite with a single known bisector for the distance check
        part.bisectors = vec![Polynomial::hyperplane(&[1.0, 0.0], 0.0)];
        let r = 1.1;
        let delta_m = 0.1;
        // width = r^{0.6} ~ 1.058
        let shr = shrunken_cells(&part, &w, r, delta_m);
        let width = r.powf(0.6);
        for (ci, kept) in shr.retained.iter().enumerate() {
            for &i in kept {
                assert!(w.points[i][0].abs() > width, "cell {ci} kept a wall point");
            }
        }
        // the point exactly on the plane is wall
        assert!(shr.wall_indices.contains(&0));
        // the far points are retained
        let kept_all: Vec<usize> = shr.retained.iter().flatten().copied().collect();
        assert!(kept_all.contains(&1));
        assert!(kept_all.contains(&2));
    }

    #[test]
    fn dichotomy_cellular_for_ambient_uniform() {
        let base = uniform_cube(3000, 3, 11);
        let scale_r = 1024.0f64;
        let w = WeightedPoints::new(
            base.points
                .iter()
                .map(|p| p.iter().map(|x| 0.5 * x * scale_r).collect())
                .collect(),
            base.weights.clone(),
        )
        .unwrap();
        let z = Variety::full_space(3);
        match dichotomy_step(&w, &z, 4, scale_r, 0.02, &DichotomyConfig::default()).unwrap() {
            DichotomyOutcome::Cellular {
                heavy_weight,
                partition,
                ..
            } => {
                assert!(heavy_weight >= 0.25 * w.total_weight());
                assert!(!partition.cells.is_empty());
                // diameter enforcement: nonempty cells fit in r/2
                for c in &partition.cells {
                    assert!(
                        bbox_diameter(&w, &c.indices) <= scale_r / 2.0 + 1e-9,
                        "cell diameter exceeds r/2"
                    );
                }
            }
            _ => panic!("uniform ambient data must be cellular"),
        }
    }

    #[test]
    fn dichotomy_algebraic_for_planted_slab() {
        // mass on a tilted hyperplane slab of thickness r^{1/2+delta}
        let mut r = rng::stream(12, "slab", 0);
        let normal = [0.6, 0.8, 0.0];
        let scale_r = 64.0f64;
        let thick = scale_r.powf(0.5 + 0.04);
        let mut pts = Vec::new();
        for _ in 0..2000 {
            // point on the plane + small normal offset
            let u = rng::uniform(&mut r, -scale_r, scale_r);
            let v = rng::uniform(&mut r, -scale_r, scale_r);
            let off = rng::uniform(&mut r, -0.4 * thick, 0.4 * thick);
            let base = [
                -0.8 * u + normal[0] * off,
                0.6 * u + normal[1] * off,
                v + normal[2] * off,
            ];
            pts.push(base.to_vec());
        }
        let w = WeightedPoints::new(pts, vec![1.0; 2000]).unwrap();
        let z = Variety::full_space(3);
        match dichotomy_step(&w, &z, 4, scale_r, 0.04, &DichotomyConfig::default()).unwrap() {
            DichotomyOutcome::Algebraic { variety, capture } => {
                assert!(capture >= 0.9, "capture {capture}");
                // recovered normal parallel to the planted one
                let g = variety.polys[0].gradient(&[0.0, 0.0, 0.0]);
                let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                let cosang = (g[0] * normal[0] + g[1] * normal[1] + g[2] * normal[2]).abs() / gn;
                assert!(cosang >= 0.99, "normal misaligned: cos = {cosang}");
            }
            _ => panic!("slab data must be algebraic"),
        }
    }

    #[test]
    fn dichotomy_single_point_is_algebraic() {
        let pts = vec![vec![1.0, 2.0, 3.0]; 5];
        let w = WeightedPoints::new(pts, vec![1.0; 5]).unwrap();
        let z = Variety::full_space(3);
        match dichotomy_step(&w, &z, 4, 16.0, 0.1, &DichotomyConfig::default()).unwrap() {
            DichotomyOutcome::Algebraic { capture, .. } => assert!(capture >= 1.0 - 1e-12),
            _ => panic!("a single point concentrates near any variety through it"),
        }
    }

    #[test]
    fn partition_export_schema() {
        let w = uniform_cube(128, 2, 21);
        let part = equal_mass_partition(&w, 2).unwrap();
        let s = part.to_json_string();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v.get("poly").is_some());
        assert!(v.get("cells").unwrap().as_array().unwrap().len() == part.cells.len());
        assert!(v.get("wall_indices").is_some());
        let c0 = &v["cells"][0];
        assert!(c0.get("sign_pattern").is_some());
        assert!(c0.get("indices").is_some());
        assert!(c0.get("weight").is_some());
    }
}
