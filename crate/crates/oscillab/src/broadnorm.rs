//! Broad norms over grids of `K^2`-balls with Grassmannian minimization,
//! and the exponent arithmetic: the critical exponent, its admissible
//! range, the derived exponent tables and the per-step constants.

use crate::error::{Error, Result};
use crate::geom::{angle_to_subspace, Subspace};
use crate::grid::AxisBox;
use crate::rng;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exact critical exponent
/// `p_n(k) = 2 + 6 / (2(n-1) + (k-1) prod_{i=k}^{n-1} 2i/(2i+1))`
/// (the empty product is 1).
pub fn p_critical(n: u32, k: u32) -> Result<BigRational> {
    if !(2 <= k && k <= n - 1) {
        return Err(Error::Domain(format!(
            "need 2 <= k <= n-1, got n = {n}, k = {k}"
        )));
    }
    let mut prod = BigRational::one();
    for i in k..n {
        prod *= ratio(2 * i as i64, 2 * i as i64 + 1);
    }
    let den = rat(2 * (n as i64 - 1)) + rat(k as i64 - 1) * prod;
    Ok(rat(2) + rat(6) / den)
}

pub fn p_critical_f64(n: u32, k: u32) -> Result<f64> {
    Ok(p_critical(n, k)?.to_f64().expect("finite rational"))
}

/// Admissible range `(2 + 4/(2n-k), 2 + 2/(k-2))`; the upper bound is
/// `None` (infinity) at `k = 2`.
pub fn bound_range(n: u32, k: u32) -> Result<(BigRational, Option<BigRational>)> {
    if k < 2 {
        return Err(Error::Domain(format!("need k >= 2, got {k}")));
    }
    let low = rat(2) + rat(4) / rat(2 * n as i64 - k as i64);
    let high = if k == 2 {
        None
    } else {
        Some(rat(2) + rat(2) / rat(k as i64 - 2))
    };
    Ok((low, high))
}

/// Parameters of the broad norm `BL^p_{k,A}`.
#[derive(Debug, Clone, Copy)]
pub struct BroadNormConfig {
    pub k: usize,
    pub a: usize,
    /// The angular parameter `K`; caps within angle `1/K` of a chosen
    /// subspace are discarded.
    pub big_k: f64,
    pub p: f64,
}

impl BroadNormConfig {
    pub fn new(k: usize, a: usize, big_k: f64, p: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain("broad norm requires k >= 2".into()));
        }
        if a < 1 {
            return Err(Error::Domain("broad norm requires A >= 1".into()));
        }
        if big_k < 2.0 || p < 2.0 {
            return Err(Error::Domain("broad norm requires K >= 2, p >= 2".into()));
        }
        Ok(BroadNormConfig { k, a, big_k, p })
    }
}

/// One cap's contribution on one ball: sampled Gauss directions plus the
/// `L^p` mass `||H g_tau||_{L^p(B)}^p`.
#[derive(Debug, Clone)]
pub struct CapSample {
    pub directions: Vec<Vec<f64>>,
    pub mass: f64,
}

impl CapSample {
    pub fn single(direction: Vec<f64>, mass: f64) -> Self {
        CapSample {
            directions: vec![direction],
            mass,
        }
    }
}

/// A deterministic, inclusion-ordered family of `(k-1)`-dimensional
/// subspaces used to approximate the Grassmannian minimum.
#[derive(Debug, Clone)]
pub struct GrassmannSet {
    pub subspaces: Vec<Subspace>,
}

impl GrassmannSet {
    /// A net from `(k-1)`-subsets of a fixed `2(n-1)`-point sphere design,
    /// augmented with data-adapted subspaces spanned by the top-mass cap
    /// directions (given in descending order of importance).
    pub fn deterministic(n: usize, k: usize, top_dirs: &[Vec<f64>]) -> Result<Self> {
        if k < 2 || k > n {
            return Err(Error::Domain(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
        }
        let span_dim = k - 1;
        let design = sphere_design(n, 2 * (n - 1));
        let mut subspaces = Vec::new();
        // data-adapted first so the minimizing tuple can pin the heavy caps
        for window in top_dirs.windows(span_dim.max(1)) {
            if let Ok(s) = Subspace::span(n, window) {
                if s.dim() == span_dim {
                    subspaces.push(s);
                }
            }
        }
        let idx: Vec<usize> = (0..design.len()).collect();
        for combo in combinations(&idx, span_dim) {
            let vecs: Vec<Vec<f64>> = combo.iter().map(|&i| design[i].clone()).collect();
            if let Ok(s) = Subspace::span(n, &vecs) {
                if s.dim() == span_dim {
                    subspaces.push(s);
                }
            }
        }
        if subspaces.is_empty() {
            return Err(Error::Degenerate("no subspaces in sample set".into()));
        }
        Ok(GrassmannSet { subspaces })
    }

    pub fn len(&self) -> usize {
        self.subspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subspaces.is_empty()
    }
}

fn sphere_design(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 3 && count == 4 {
        // tetrahedral design
        let s = 3.0f64.sqrt().recip();
        return vec![
            vec![s, s, s],
            vec![s, -s, -s],
            vec![-s, s, -s],
            vec![-s, -s, s],
        ];
    }
    // deterministic quasi-uniform fallback (fixed internal seed)
    let mut r = rng::stream(0x5eed, "sphere-design", n as u64);
    (0..count).map(|_| rng::unit_vector(&mut r, n)).collect()
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if k > items.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        out.push(combo.iter().map(|&i| items[i]).collect());
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] != i + items.len() - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

fn cap_excluded(cap: &CapSample, subspace: &Subspace, big_k: f64) -> bool {
    // tau in_K V: some sampled direction within angle 1/K
    cap.directions
        .iter()
        .any(|d| angle_to_subspace(d, subspace) < 1.0 / big_k)
}

/// `mu(B)`: min over `A`-subsets of the sample set of the max mass among
/// caps not within `1/K` of any chosen subspace. Deterministic given the
/// sample set; ties break toward the earlier tuple. Empty max is 0.
pub fn broad_local(caps: &[CapSample], cfg: &BroadNormConfig, set: &GrassmannSet) -> f64 {
    let s = set.len();
    // exclusion matrix
    let excl: Vec<Vec<bool>> = caps
        .iter()
        .map(|c| {
            set.subspaces
                .iter()
                .map(|v| cap_excluded(c, v, cfg.big_k))
                .collect()
        })
        .collect();
    let a = cfg.a.min(s);
    let idx: Vec<usize> = (0..s).collect();
    let mut best = f64::INFINITY;
    for combo in combinations(&idx, a) {
        let mut worst = 0.0f64;
        for (ci, cap) in caps.iter().enumerate() {
            let excluded = combo.iter().any(|&vi| excl[ci][vi]);
            if !excluded {
                worst = worst.max(cap.mass);
            }
        }
        if worst < best {
            best = worst;
        }
    }
    if best.is_infinite() {
        0.0
    } else {
        best
    }
}

/// Per-ball data for a broad norm over a region.
#[derive(Debug, Clone)]
pub struct BroadBall {
    /// Lower corner of the `K^2` cube.
    pub corner: Vec<f64>,
    pub caps: Vec<CapSample>,
}

/// A field of per-ball cap masses on the `K^2` grid.
#[derive(Debug, Clone)]
pub struct BroadField {
    pub dim: usize,
    /// Side of each grid cube (`K^2`).
    pub ball_side: f64,
    pub balls: Vec<BroadBall>,
}

impl BroadField {
    fn ball_box(&self, b: &BroadBall) -> AxisBox {
        AxisBox {
            lo: b.corner.clone(),
            hi: b.corner.iter().map(|c| c + self.ball_side).collect(),
        }
    }
}

/// `BL^p_{k,A}(U) = (sum_B |B n U|/|B| mu(B))^{1/p}` with `U` a union of
/// disjoint axis boxes.
pub fn broad_norm(
    field: &BroadField,
    cfg: &BroadNormConfig,
    set: &GrassmannSet,
    region: &[AxisBox],
) -> f64 {
    let mut acc = 0.0;
    let vol = field.ball_side.powi(field.dim as i32);
    for b in &field.balls {
        let bx = field.ball_box(b);
        let overlap: f64 = region.iter().map(|u| bx.overlap_volume(u)).sum();
        if overlap == 0.0 {
            continue;
        }
        acc += overlap / vol * broad_local(&b.caps, cfg, set);
    }
    acc.powf(1.0 / cfg.p)
}

/// The exponent family `p_k >= ... >= p_n >= 2` with its derived
/// `alpha_i, beta_i`.
#[derive(Debug, Clone)]
pub struct ExponentTable {
    pub n: usize,
    pub k: usize,
    /// `p_i` for `k <= i <= n`.
    pub p: Vec<f64>,
    /// `alpha_i` for `k <= i <= n` (`alpha_n = 1`).
    pub alpha: Vec<f64>,
    /// `beta_i` for `k <= i <= n+1` (`beta_n = beta_{n+1} = 1`).
    pub beta: Vec<f64>,
}

fn half_minus_inv(p: f64) -> f64 {
    0.5 - 1.0 / p
}

impl ExponentTable {
    pub fn new(n: usize, k: usize, p: &[f64]) -> Result<Self> {
        if k < 2 || k > n {
            return Err(Error::Domain(format!("need 2 <= k <= n, got k = {k}")));
        }
        if p.len() != n - k + 1 {
            return Err(Error::Shape(format!(
                "need p_i for k <= i <= n: {} values, got {}",
                n - k + 1,
                p.len()
            )));
        }
        for w in p.windows(2) {
            if w[0] < w[1] - 1e-12 {
                return Err(Error::Argument("p_i must be non-increasing".into()));
            }
        }
        if p[p.len() - 1] < 2.0 {
            return Err(Error::Argument("p_n must be >= 2".into()));
        }
        // inverses of (1/2 - 1/p_i) are taken for i < n
        for (j, pi) in p.iter().take(p.len() - 1).enumerate() {
            if half_minus_inv(*pi).abs() < 1e-14 {
                return Err(Error::Degenerate(format!(
                    "p_{} = 2 makes (1/2 - 1/p)^(-1) undefined",
                    k + j
                )));
            }
        }
        let m = p.len();
        let mut alpha = vec![1.0; m];
        let mut beta = vec![1.0; m + 1];
        let pn = p[m - 1];
        for j in 0..m - 1 {
            alpha[j] = half_minus_inv(p[j + 1]) / half_minus_inv(p[j]);
            beta[j] = half_minus_inv(pn) / half_minus_inv(p[j]);
        }
        let table = ExponentTable {
            n,
            k,
            p: p.to_vec(),
            alpha,
            beta,
        };
        for (name, vals) in [("alpha", &table.alpha), ("beta", &table.beta)] {
            for v in vals.iter() {
                if !(-1e-12..=1.0 + 1e-12).contains(v) {
                    return Err(Error::Argument(format!("{name} exponent {v} outside [0,1]")));
                }
            }
        }
        Ok(table)
    }

    /// `alpha_i`, indexed by the paper's `i` (`k <= i <= n`).
    pub fn alpha_at(&self, i: usize) -> f64 {
        self.alpha[i - self.k]
    }

    /// `beta_i` for `k <= i <= n+1`.
    pub fn beta_at(&self, i: usize) -> f64 {
        self.beta[i - self.k]
    }
}

/// `M(r_vec, D_vec) = (prod D_i)^{(n-l) delta}
///   prod r_i^{(beta_{i+1} - beta_i)/2} D_i^{(beta_{i+1} - beta_l)/2}`,
/// with the vectors ordered `(r_n, ..., r_l)`.
pub fn m_constant(
    r_vec: &[f64],
    d_vec: &[f64],
    table: &ExponentTable,
    delta: f64,
) -> Result<f64> {
    if r_vec.len() != d_vec.len() || r_vec.is_empty() {
        return Err(Error::Shape("r and D vectors must match and be nonempty".into()));
    }
    let levels = r_vec.len();
    let l = table.n + 1 - levels;
    if l < table.k {
        return Err(Error::Domain(format!(
            "level l = {l} below the table's k = {}",
            table.k
        )));
    }
    let dprod: f64 = d_vec.iter().product();
    let mut m = dprod.powf((table.n - l) as f64 * delta);
    let beta_l = table.beta_at(l);
    for (j, (ri, di)) in r_vec.iter().zip(d_vec).enumerate() {
        let i = table.n - j;
        let bi1 = table.beta_at(i + 1);
        let bi = table.beta_at(i);
        m *= ri.powf(0.5 * (bi1 - bi)) * di.powf(0.5 * (bi1 - beta_l));
    }
    Ok(m)
}

/// Dimensional inputs to the per-step constants.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub delta_m: f64,
    /// The unspecified dimensional constant in the `r^{C #a delta_m}` factor.
    pub c_growth: f64,
}

/// The four per-step constants
/// `(d^{#c d}(log r)^{2p #a (1+d)},
///   d^{#c d + n #a (1+d)},
///   d^{#c d + #a d} r^{C #a dm},
///   d^{j d} r^{C #a dm})`.
pub fn step_constants(
    j: usize,
    d: f64,
    r: f64,
    a_count: usize,
    c_count: usize,
    params: &StepParams,
) -> Result<(f64, f64, f64, f64)> {
    if a_count + c_count != j {
        return Err(Error::Argument(format!(
            "counters must sum to j: {a_count} + {c_count} != {j}"
        )));
    }
    let del = params.delta;
    let a = a_count as f64;
    let c = c_count as f64;
    let c1 = d.powf(c * del) * r.ln().powf(2.0 * params.p * a * (1.0 + del));
    let c2 = d.powf(c * del + params.n as f64 * a * (1.0 + del));
    let c3 = d.powf(c * del + a * del) * r.powf(params.c_growth * a * params.delta_m);
    let c4 = d.powf(j as f64 * del) * r.powf(params.c_growth * a * params.delta_m);
    Ok((c1, c2, c3, c4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::gauss_map;
    use approx::assert_relative_eq;

    #[test]
    fn critical_exponent_exact_values() {
        // n = 3, k = 2 -> 13/4
        let p = p_critical(3, 2).unwrap();
        assert_eq!(p, ratio(13, 4));
        // n = 4, k = 3 -> 25/9
        let p = p_critical(4, 3).unwrap();
        assert_eq!(p, ratio(25, 9));
        // k = n-1: single-factor product
        let p = p_critical(5, 4).unwrap();
        // denominator 2*4 + 3 * (8/9) = 8 + 24/9 = 96/9; p = 2 + 54/96 = 2 + 9/16
        assert_eq!(p, ratio(41, 16));
        assert!(p_critical(3, 1).is_err());
        assert!(p_critical(3, 3).is_err());
    }

    #[test]
    fn critical_exponent_monotone_in_k() {
        for n in 4..=20u32 {
            let mut prev = p_critical(n, 2).unwrap();
            for k in 3..=n - 1 {
                let cur = p_critical(n, k).unwrap();
                assert!(cur < prev, "p_{n}({k}) not decreasing");
                prev = cur;
            }
        }
    }

    #[test]
    fn bound_range_values() {
        let (lo, hi) = bound_range(4, 3).unwrap();
        assert_eq!(lo, ratio(14, 5));
        assert_eq!(hi.unwrap(), rat(4));
        let (_, hi) = bound_range(7, 2).unwrap();
        assert!(hi.is_none());
        // Guth's odd-n exponent 2(3n+1)/(3n-3) at n = 5 is 8/3, inside
        // [2 + 4/(2n-k), inf) for k = 2: 8/3 >= 2 + 4/8 = 5/2
        let (lo, _) = bound_range(5, 2).unwrap();
        assert!(ratio(8, 3) >= lo);
    }

    fn synthetic_caps(masses: &[f64], dirs: &[Vec<f64>]) -> Vec<CapSample> {
        masses
            .iter()
            .zip(dirs)
            .map(|(m, d)| CapSample::single(d.clone(), *m))
            .collect()
    }

    #[test]
    fn broad_local_single_cap_vanishes() {
        let cfg = BroadNormConfig::new(2, 1, 8.0, 4.0).unwrap();
        let dir = gauss_map(&[0.3, 0.1]);
        let caps = synthetic_caps(&[2.5], &[dir.clone()]);
        let set = GrassmannSet::deterministic(3, 2, &[dir]).unwrap();
        assert_eq!(broad_local(&caps, &cfg, &set), 0.0);
    }

    #[test]
    fn broad_local_bounds_and_antitonicity() {
        let mut r = rng::stream(31, "broad", 0);
        let set_dirs: Vec<Vec<f64>> = (0..3).map(|_| rng::unit_vector(&mut r, 3)).collect();
        let set = GrassmannSet::deterministic(3, 2, &set_dirs).unwrap();
        for trial in 0..50 {
            let mut rr = rng::stream(32, "broad-trial", trial);
            let count = 5 + (rng::uniform(&mut rr, 0.0, 5.0) as usize);
            let masses: Vec<f64> = (0..count).map(|_| rng::uniform(&mut rr, 0.0, 3.0)).collect();
            let dirs: Vec<Vec<f64>> = (0..count)
                .map(|_| {
                    gauss_map(&[rng::uniform(&mut rr, -1.0, 1.0), rng::uniform(&mut rr, -1.0, 1.0)])
                })
                .collect();
            let caps = synthetic_caps(&masses, &dirs);
            let maxmass = masses.iter().cloned().fold(0.0, f64::max);
            let mut prev = f64::INFINITY;
            for a in [1usize, 2, 4] {
                let cfg = BroadNormConfig::new(2, a, 8.0, 4.0).unwrap();
                let mu = broad_local(&caps, &cfg, &set);
                assert!(mu <= maxmass + 1e-15, "mu exceeds max cap mass");
                assert!(mu <= prev + 1e-15, "mu not antitone in A");
                prev = mu;
            }
            // permutation invariance
            let cfg = BroadNormConfig::new(2, 2, 8.0, 4.0).unwrap();
            let before = broad_local(&caps, &cfg, &set);
            let mut perm: Vec<CapSample> = caps.clone();
            perm.rotate_left(2);
            assert_relative_eq!(before, broad_local(&perm, &cfg, &set));
        }
    }

    #[test]
    fn broad_norm_subadditive_over_disjoint_tilings() {
        let mut r = rng::stream(33, "broad-norm", 0);
        let cfg = BroadNormConfig::new(2, 2, 8.0, 4.0).unwrap();
        let dirs: Vec<Vec<f64>> = (0..4).map(|_| rng::unit_vector(&mut r, 3)).collect();
        let set = GrassmannSet::deterministic(3, 2, &dirs).unwrap();
        let side = 64.0;
        let balls: Vec<BroadBall> = (0..8)
            .map(|i| {
                let count = 4;
                let caps = (0..count)
                    .map(|_| {
                        CapSample::single(
                            gauss_map(&[
                                rng::uniform(&mut r, -1.0, 1.0),
                                rng::uniform(&mut r, -1.0, 1.0),
                            ]),
                            rng::uniform(&mut r, 0.0, 2.0),
                        )
                    })
                    .collect();
                BroadBall {
                    corner: vec![(i % 4) as f64 * side, (i / 4) as f64 * side, 0.0],
                    caps,
                }
            })
            .collect();
        let field = BroadField {
            dim: 3,
            ball_side: side,
            balls,
        };
        let u1 = AxisBox::new(vec![0.0, 0.0, 0.0], vec![128.0, 128.0, 64.0]).unwrap();
        let u2 = AxisBox::new(vec![128.0, 0.0, 0.0], vec![256.0, 128.0, 64.0]).unwrap();
        let whole = AxisBox::new(vec![0.0, 0.0, 0.0], vec![256.0, 128.0, 64.0]).unwrap();
        let a = broad_norm(&field, &cfg, &set, &[u1.clone()]);
        let b = broad_norm(&field, &cfg, &set, &[u2.clone()]);
        let u = broad_norm(&field, &cfg, &set, &[whole]);
        assert!(
            u.powf(cfg.p) <= a.powf(cfg.p) + b.powf(cfg.p) + 1e-12,
            "subadditivity fails: {u} vs {a}, {b}"
        );
        // empty region
        assert_eq!(broad_norm(&field, &cfg, &set, &[]), 0.0);
    }

    #[test]
    fn exponent_table_and_m() {
        // all p_i equal -> alpha = beta = 1, M = (prod D)^{(n-l) delta}
        let t = ExponentTable::new(4, 2, &[4.0, 4.0, 4.0]).unwrap();
        assert!(t.alpha.iter().all(|a| (a - 1.0).abs() < 1e-15));
        assert!(t.beta.iter().all(|b| (b - 1.0).abs() < 1e-15));
        let m = m_constant(&[256.0, 64.0, 16.0], &[2.0, 3.0, 4.0], &t, 0.1).unwrap();
        assert_relative_eq!(m, 24.0f64.powf(2.0 * 0.1), epsilon = 1e-12);

        // beta_n = beta_{n+1} = 1 enforced
        let t = ExponentTable::new(3, 2, &[4.0, 10.0 / 3.0]).unwrap();
        assert_relative_eq!(t.beta_at(3), 1.0);
        assert_relative_eq!(t.beta_at(4), 1.0);
        // beta_2 = (1/2 - 3/10) / (1/2 - 1/4) = (1/5) / (1/4) = 4/5
        assert_relative_eq!(t.beta_at(2), 0.8, epsilon = 1e-12);
        // alpha_2 = same ratio here since p_3 = p_n
        assert_relative_eq!(t.alpha_at(2), 0.8, epsilon = 1e-12);

        // p_i = 2 below the top index is a reported division error
        assert!(ExponentTable::new(3, 2, &[2.0, 2.0]).is_err());
        // p_n = 2 alone is fine
        assert!(ExponentTable::new(3, 2, &[4.0, 2.0]).is_ok());
    }

    #[test]
    fn exponent_table_exact_fraction_oracle() {
        // float vs exact rational for beta_2 with p = (4, 10/3), n = 3
        let p2 = ratio(4, 1);
        let p3 = ratio(10, 3);
        let half = ratio(1, 2);
        let beta2 = (half.clone() - p3.recip()) / (half - p2.recip());
        let t = ExponentTable::new(3, 2, &[4.0, 10.0 / 3.0]).unwrap();
        assert_relative_eq!(t.beta_at(2), beta2.to_f64().unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn step_constant_examples() {
        let params = StepParams {
            n: 3,
            p: 4.0,
            delta: 0.1,
            delta_m: 0.02,
            c_growth: 1.0,
        };
        // j = 0: all four are 1
        let (c1, c2, c3, c4) = step_constants(0, 4.0, 100.0, 0, 0, &params).unwrap();
        assert_eq!((c1, c2, c3, c4), (1.0, 1.0, 1.0, 1.0));
        // #c = 1, #a = 0: C^I = d^delta
        let (c1, _, _, _) = step_constants(1, 4.0, 100.0, 0, 1, &params).unwrap();
        assert_relative_eq!(c1, 4.0f64.powf(0.1), epsilon = 1e-14);
        // #a = 1, #c = 0, r = e: log r = 1 so C^I = 1; C^II = d^{n(1+delta)}
        let e = std::f64::consts::E;
        let (c1, c2, _, _) = step_constants(1, 4.0, e, 1, 0, &params).unwrap();
        assert_relative_eq!(c1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c2, 4.0f64.powf(3.0 * 1.1), epsilon = 1e-12);
        // counters must sum to j
        assert!(step_constants(2, 4.0, 10.0, 1, 0, &params).is_err());
    }
}
