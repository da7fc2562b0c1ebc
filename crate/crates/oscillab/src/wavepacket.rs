//! Scale-`r` wave packet decomposition: frequency caps and their smooth
//! partition of unity, modulated Fourier-series packets relative to a ball
//! center, core lines and tubes, two-scale comparison, and the discrete
//! extension sum.

use crate::error::{Error, Result};
use crate::grid::{for_each_index, AxisBox, GridFunction, TrigPoly};
use crate::phase::{PhaseField, PolyBump1D, SpaceTimePoint};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One frequency cap: a lattice cube of side `(9/11) r^{-1/2}`.
#[derive(Debug, Clone)]
pub struct Cap {
    pub center: Vec<f64>,
    pub side: f64,
    pub index: Vec<i64>,
}

impl Cap {
    /// The cap itself as a box.
    pub fn cube(&self) -> AxisBox {
        let h = 0.5 * self.side;
        AxisBox {
            lo: self.center.iter().map(|c| c - h).collect(),
            hi: self.center.iter().map(|c| c + h).collect(),
        }
    }

    /// `(11/10) theta`, the support of `psi_theta`.
    pub fn support_box(&self) -> AxisBox {
        self.cube().dilate(1.1)
    }

    /// `(11/9) theta`, the Fourier-series box of side `r^{-1/2}`.
    pub fn fourier_box(&self) -> AxisBox {
        self.cube().dilate(11.0 / 9.0)
    }

    /// Center plus corners, for sampled angle computations.
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![self.center.clone()];
        pts.extend(self.cube().corners());
        pts
    }
}

/// The lattice of caps at scale `r` covering `B^{dim}(0, 2)`.
#[derive(Debug, Clone)]
pub struct CapSet {
    pub dim: usize,
    pub r: f64,
    pub side: f64,
    pub caps: Vec<Cap>,
    lookup: HashMap<Vec<i64>, usize>,
}

/// Caps of side `(9/11) r^{-1/2}` tiling a neighborhood of `B(0, 2)`.
pub fn make_caps(r: f64, dim: usize) -> Result<CapSet> {
    if r < 1.0 {
        return Err(Error::Argument(format!("cap scale r must be >= 1, got {r}")));
    }
    let side = (9.0 / 11.0) * r.powf(-0.5);
    // one extra ring keeps the partition-of-unity denominator healthy on
    // the boundary of B(0,2)
    let reach = 2.0 + 1.5 * side;
    let max_i = (reach / side).ceil() as i64;
    let mut caps = Vec::new();
    let mut lookup = HashMap::new();
    let mut idx = vec![-max_i; dim];
    loop {
        let center: Vec<f64> = idx.iter().map(|i| (*i as f64 + 0.5) * side).collect();
        // keep caps whose cube touches B(0, 2 + side)
        let closest: f64 = center
            .iter()
            .map(|c| (c.abs() - 0.5 * side).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        if closest <= 2.0 + side {
            lookup.insert(idx.clone(), caps.len());
            caps.push(Cap {
                center,
                side,
                index: idx.clone(),
            });
        }
        let mut ax = dim;
        loop {
            if ax == 0 {
                return Ok(CapSet {
                    dim,
                    r,
                    side,
                    caps,
                    lookup,
                });
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] <= max_i {
                break;
            }
            idx[ax] = -max_i;
        }
    }
}

impl CapSet {
    pub fn len(&self) -> usize {
        self.caps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    pub fn position(&self, index: &[i64]) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    /// Index of the cap whose cube contains `w`, ties broken toward the
    /// lexicographically smallest lattice index.
    pub fn cap_containing(&self, w: &[f64]) -> Option<usize> {
        let idx: Vec<i64> = w.iter().map(|x| (x / self.side).floor() as i64).collect();
        self.position(&idx)
    }

    /// Caps whose `psi` support can be nonzero at `w` (index and its
    /// neighbors).
    pub fn caps_near(&self, w: &[f64]) -> Vec<usize> {
        let base: Vec<i64> = w.iter().map(|x| (x / self.side).floor() as i64).collect();
        let mut out = Vec::new();
        let dim = self.dim;
        let mut offs = vec![-1i64; dim];
        loop {
            let idx: Vec<i64> = base.iter().zip(&offs).map(|(b, o)| b + o).collect();
            if let Some(i) = self.position(&idx) {
                out.push(i);
            }
            let mut ax = dim;
            loop {
                if ax == 0 {
                    return out;
                }
                ax -= 1;
                offs[ax] += 1;
                if offs[ax] <= 1 {
                    break;
                }
                offs[ax] = -1;
            }
        }
    }
}

/// Smooth partition of unity subordinate to the caps, plus the wider
/// cutoffs `psi~_theta`.
///
/// Each raw bump is 1 on its cap and supported on `(11/10) theta`
/// (transition width `0.05 * side`); dividing by the lattice sum gives an
/// exact partition with derivative growth `r^{|alpha|/2}`.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub caps: CapSet,
    transition: f64,
}

impl PartitionOfUnity {
    pub fn new(caps: CapSet) -> Self {
        let transition = 0.05 * caps.side;
        PartitionOfUnity { caps, transition }
    }

    fn raw_bump(&self, cap: &Cap, w: &[f64]) -> f64 {
        let h = 0.5 * cap.side;
        let mut v = 1.0;
        for (x, c) in w.iter().zip(&cap.center) {
            let b = PolyBump1D {
                lo_out: c - h - self.transition,
                lo_in: c - h,
                hi_in: c + h,
                hi_out: c + h + self.transition,
            };
            v *= b.eval(*x);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// `psi_theta(w)`.
    pub fn psi(&self, cap_idx: usize, w: &[f64]) -> f64 {
        let num = self.raw_bump(&self.caps.caps[cap_idx], w);
        if num == 0.0 {
            return 0.0;
        }
        let mut den = 0.0;
        for i in self.caps.caps_near(w) {
            den += self.raw_bump(&self.caps.caps[i], w);
        }
        num / den
    }

    /// Sum over all caps; 1 on the covered region.
    pub fn partition_sum(&self, w: &[f64]) -> f64 {
        let near = self.caps.caps_near(w);
        if near.is_empty() {
            return 0.0;
        }
        let mut s = 0.0;
        for i in near {
            s += self.psi(i, w);
        }
        s
    }

    /// `psi~_theta`: 1 on `(11/10) theta`, supported on `(11/9) theta`.
    pub fn psi_tilde(&self, cap_idx: usize, w: &[f64]) -> f64 {
        let cap = &self.caps.caps[cap_idx];
        let inner = cap.support_box();
        let outer = cap.fourier_box();
        let mut v = 1.0;
        for ax in 0..w.len() {
            let b = PolyBump1D {
                lo_out: outer.lo[ax],
                lo_in: inner.lo[ax],
                hi_in: inner.hi[ax],
                hi_out: outer.hi[ax],
            };
            v *= b.eval(w[ax]);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// `int psi~^2` over one cap (same for every cap by translation).
    pub fn psi_tilde_l2sq(&self) -> f64 {
        let cap = &self.caps.caps[0];
        let box_ = cap.fourier_box();
        let n = 400usize;
        let mut acc_axis = Vec::with_capacity(self.caps.dim);
        for ax in 0..self.caps.dim {
            let h = box_.side(ax) / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                let x = box_.lo[ax] + (i as f64 + 0.5) * h;
                let inner = cap.support_box();
                let b = PolyBump1D {
                    lo_out: box_.lo[ax],
                    lo_in: inner.lo[ax],
                    hi_in: inner.hi[ax],
                    hi_out: box_.hi[ax],
                };
                let v = b.eval(x);
                s += v * v * h;
            }
            acc_axis.push(s);
        }
        acc_axis.iter().product()
    }
}

/// A single wave packet `(theta, v)` with its Fourier-series coefficient.
///
/// `v_int` holds the lattice coordinates; the frequency is `v = r^{1/2} v_int`.
/// `coeff` is the series coefficient: the packet function is
/// `coeff * e^{2 pi i (v.w - phi(x0; w))} psi~_theta(w)`.
#[derive(Debug, Clone)]
pub struct WavePacket {
    pub cap_idx: usize,
    pub v_int: Vec<i64>,
    pub coeff: Complex64,
    pub scale_r: f64,
    pub center: SpaceTimePoint,
}

impl WavePacket {
    pub fn v(&self) -> Vec<f64> {
        let s = self.scale_r.sqrt();
        self.v_int.iter().map(|k| *k as f64 * s).collect()
    }
}

/// A complete decomposition of one function at one scale and center.
pub struct Decomposition {
    pub pou: PartitionOfUnity,
    pub r: f64,
    pub center: SpaceTimePoint,
    pub lambda: f64,
    pub c_n: f64,
    pub packets: Vec<WavePacket>,
}

fn pf_of(dec: &Decomposition) -> PhaseField {
    PhaseField::new(dec.lambda, dec.c_n).expect("stored parameters were validated")
}

/// Slow (non-oscillatory once the center phase is factored out) input to the
/// cap-by-cap coefficient integrals.
pub struct SlowInput<'a> {
    /// The slow factor `S(w)`.
    pub eval: &'a (dyn Fn(&[f64]) -> Complex64 + Sync),
    /// When present, the coefficient phase is
    /// `phi(x_center; w) - phi(base; w)` instead of `phi(x_center; w)`.
    pub base_center: Option<&'a SpaceTimePoint>,
    /// Known carrier frequency of `S` (e.g. the parent packet's `v` when
    /// re-decomposing a packet); shifts the per-cap lattice window.
    pub carrier: Vec<f64>,
    /// Per-unit-cycle frequency bound of `S` once the carrier is removed.
    pub freq_bound: f64,
}

fn cap_grid(box_: &AxisBox, n_axis: usize) -> Vec<Vec<f64>> {
    let dim = box_.dim();
    let shape = vec![n_axis; dim];
    let mut nodes = Vec::with_capacity(n_axis.pow(dim as u32));
    for_each_index(&shape, |idx, _| {
        nodes.push(
            (0..dim)
                .map(|ax| box_.lo[ax] + box_.side(ax) * (idx[ax] as f64 + 0.5) / n_axis as f64)
                .collect(),
        );
    });
    nodes
}

/// Spread of `grad_w phase` over a cap, from corner samples.
fn grad_spread(
    pf: &PhaseField,
    center: &SpaceTimePoint,
    base: Option<&SpaceTimePoint>,
    cap: &Cap,
) -> Result<(Vec<f64>, f64)> {
    let grad_at = |w: &[f64]| -> Result<Vec<f64>> {
        let mut g = pf.phase_grad_omega(center, w)?;
        if let Some(b) = base {
            let gb = pf.phase_grad_omega(b, w)?;
            for (gi, bi) in g.iter_mut().zip(&gb) {
                *gi -= bi;
            }
        }
        Ok(g)
    };
    let g0 = grad_at(&cap.center)?;
    let mut spread: f64 = 0.0;
    for corner in cap.fourier_box().corners() {
        let g = grad_at(&corner)?;
        let d: f64 = g
            .iter()
            .zip(&g0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        spread = spread.max(d);
    }
    Ok((g0, spread))
}

/// Decompose a slow input against the caps at scale `r`, windowing the
/// frequency lattice per cap around the stationary value
/// `grad_w phi(x0; w_theta)`.
pub fn decompose_slow(
    pf: &PhaseField,
    input: &SlowInput,
    r: f64,
    x0: &SpaceTimePoint,
    window_lattice: usize,
) -> Result<Decomposition> {
    let dim = x0.x.len();
    let caps = make_caps(r, dim)?;
    let pou = PartitionOfUnity::new(caps);
    let sqrt_r = r.sqrt();

    let per_cap: Vec<Vec<WavePacket>> = pou
        .caps
        .caps
        .par_iter()
        .enumerate()
        .map(|(ci, cap)| -> Result<Vec<WavePacket>> {
            let (g0, spread) = grad_spread(pf, x0, input.base_center, cap)?;
            // lattice center of the window: stationary phase plus carrier
            let v_star: Vec<i64> = g0
                .iter()
                .zip(&input.carrier)
                .map(|(g, c)| ((g + c) / sqrt_r).round() as i64)
                .collect();
            let box_ = cap.fourier_box();
            // residual oscillation after pre-modulating by v*
            let rounding = 0.5 * sqrt_r * (dim as f64).sqrt();
            let window_freq = (window_lattice as f64 + 1.0) * sqrt_r;
            let freq = input.freq_bound + spread + rounding + window_freq;
            // the psi transition of width 0.05*side needs ~150 cells per axis
            let n_axis = ((4.0 * freq * box_.side(0)).ceil() as usize + 160).max(96);
            let nodes = cap_grid(&box_, n_axis);
            let cell: f64 = (0..dim)
                .map(|ax| box_.side(ax) / n_axis as f64)
                .product();
            // sampled slow integrand pre-modulated by v*
            let mut f = Vec::with_capacity(nodes.len());
            let vstar_real: Vec<f64> = v_star.iter().map(|k| *k as f64 * sqrt_r).collect();
            for w in &nodes {
                let psi = pou.psi(ci, w);
                if psi == 0.0 {
                    f.push(Complex64::new(0.0, 0.0));
                    continue;
                }
                let mut phase = pf.phase(x0, w)?;
                if let Some(b) = input.base_center {
                    phase -= pf.phase(b, w)?;
                }
                let s = (input.eval)(w);
                f.push(
                    s * psi * Complex64::from_polar(1.0, TWO_PI * (phase - dot(&vstar_real, w))),
                );
            }
            // coefficients for each lattice offset in the window
            let mut packets = Vec::new();
            let win = window_lattice as i64;
            let mut offs = vec![-win; dim];
            let series_scale = r.powf(dim as f64 / 2.0); // 1 / box volume
            loop {
                let dv: Vec<f64> = offs.iter().map(|o| *o as f64 * sqrt_r).collect();
                let mut acc = Complex64::new(0.0, 0.0);
                for (w, fv) in nodes.iter().zip(&f) {
                    if fv.norm_sqr() == 0.0 {
                        continue;
                    }
                    acc += fv * Complex64::from_polar(1.0, -TWO_PI * dot(&dv, w));
                }
                let coeff = acc * cell * series_scale;
                if coeff.norm() > 1e-14 {
                    packets.push(WavePacket {
                        cap_idx: ci,
                        v_int: v_star.iter().zip(&offs).map(|(a, b)| a + b).collect(),
                        coeff,
                        scale_r: r,
                        center: x0.clone(),
                    });
                }
                let mut ax = dim;
                let done = loop {
                    if ax == 0 {
                        break true;
                    }
                    ax -= 1;
                    offs[ax] += 1;
                    if offs[ax] <= win {
                        break false;
                    }
                    offs[ax] = -win;
                };
                if done {
                    break;
                }
            }
            Ok(packets)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Decomposition {
        pou,
        r,
        center: x0.clone(),
        lambda: pf.lambda(),
        c_n: pf.c_n(),
        packets: per_cap.into_iter().flatten().collect(),
    })
}

/// Wave packet decomposition of a grid function supported in
/// `[0,1]^{n-1}`.
///
/// `v_radius` truncates the frequency window around each cap's stationary
/// lattice point; the default choice `r^{1/2} (4 + log2 r)` keeps the
/// truncation error far below the reconstruction tolerance for smooth
/// inputs.
pub fn decompose(
    pf: &PhaseField,
    g: &GridFunction,
    r: f64,
    x0: &SpaceTimePoint,
    v_radius: f64,
) -> Result<Decomposition> {
    if v_radius < 10.0 * r.sqrt() {
        return Err(Error::Argument(format!(
            "v_radius must be at least 10 sqrt(r) = {}",
            10.0 * r.sqrt()
        )));
    }
    let band = g.shape.iter().min().unwrap() / 2;
    let band = band.saturating_sub(1);
    let tp = TrigPoly::from_grid(g, band, 1e-13)?;
    let freq = tp.band() as f64;
    // g lives on its domain box only; the trigonometric interpolant is
    // periodic, so cut off its phantom copies under the far caps
    let domain = g.domain.clone();
    let eval = move |w: &[f64]| {
        if domain.contains(w) {
            tp.eval(w)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let input = SlowInput {
        eval: &eval,
        base_center: None,
        carrier: vec![0.0; x0.x.len()],
        freq_bound: freq,
    };
    let window = (v_radius / r.sqrt()).floor() as usize;
    decompose_slow(pf, &input, r, x0, window)
}

/// Default truncation radius `r^{1/2} (4 + log2 r)`, floored at the
/// precondition `10 r^{1/2}`.
pub fn default_v_radius(r: f64) -> f64 {
    (r.sqrt() * (4.0 + r.log2())).max(10.0 * r.sqrt())
}

impl Decomposition {
    /// Value of the single packet function
    /// `coeff e^{2 pi i (v.w - phi(x0; w))} psi~_theta(w)` at `w`.
    pub fn packet_value(&self, packet: &WavePacket, w: &[f64]) -> Complex64 {
        let psi = self.pou.psi_tilde(packet.cap_idx, w);
        if psi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let pf = pf_of(self);
        let phase = dot(&packet.v(), w) - pf.phase(&packet.center, w).expect("t != 0");
        packet.coeff * psi * Complex64::from_polar(1.0, TWO_PI * phase)
    }

    /// Value of the sum of a subset of packets (all when `subset` is None).
    pub fn sum_value(&self, subset: Option<&[usize]>, w: &[f64]) -> Complex64 {
        let pf = pf_of(self);
        let mut per_cap: HashMap<usize, Complex64> = HashMap::new();
        match subset {
            Some(list) => {
                for &i in list {
                    let p = &self.packets[i];
                    let psi = self.pou.psi_tilde(p.cap_idx, w);
                    if psi == 0.0 {
                        continue;
                    }
                    *per_cap.entry(p.cap_idx).or_default() +=
                        p.coeff * psi * Complex64::from_polar(1.0, TWO_PI * dot(&p.v(), w));
                }
            }
            None => {
                for p in &self.packets {
                    let psi = self.pou.psi_tilde(p.cap_idx, w);
                    if psi == 0.0 {
                        continue;
                    }
                    *per_cap.entry(p.cap_idx).or_default() +=
                        p.coeff * psi * Complex64::from_polar(1.0, TWO_PI * dot(&p.v(), w));
                }
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (_, v) in per_cap {
            acc += v;
        }
        if acc.norm_sqr() == 0.0 {
            return acc;
        }
        let phase = -pf.phase(&self.center, w).expect("t != 0");
        acc * Complex64::from_polar(1.0, TWO_PI * phase)
    }

    /// `|| g_T ||_2^2` of one packet (exact up to the psi~ quadrature).
    pub fn packet_l2_sq(&self, packet: &WavePacket) -> f64 {
        packet.coeff.norm_sqr() * self.pou.psi_tilde_l2sq()
    }

    /// `sum_T ||g_T||_2^2`.
    pub fn total_packet_mass(&self) -> f64 {
        let unit = self.pou.psi_tilde_l2sq();
        self.packets.iter().map(|p| p.coeff.norm_sqr() * unit).sum()
    }

    /// Indices of packets on one cap.
    pub fn packets_on_cap(&self, cap_idx: usize) -> Vec<usize> {
        (0..self.packets.len())
            .filter(|i| self.packets[*i].cap_idx == cap_idx)
            .collect()
    }

    pub fn to_json_string(&self, delta: f64) -> String {
        let packets: Vec<PacketJson> = self
            .packets
            .iter()
            .map(|p| {
                let pf = pf_of(self);
                let tube = tube_of(&pf, self, p, delta);
                PacketJson {
                    theta_index: self.pou.caps.caps[p.cap_idx].index.clone(),
                    v: p.v(),
                    coeff_re: p.coeff.re,
                    coeff_im: p.coeff.im,
                    empty: tube.empty,
                }
            })
            .collect();
        let doc = PacketSetJson {
            r: self.r,
            delta,
            x0: self.center.as_vec(),
            packets,
        };
        serde_json::to_string_pretty(&doc).expect("packet serialization")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PacketJson {
    theta_index: Vec<i64>,
    v: Vec<f64>,
    coeff_re: f64,
    coeff_im: f64,
    empty: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PacketSetJson {
    r: f64,
    delta: f64,
    x0: Vec<f64>,
    packets: Vec<PacketJson>,
}

impl PacketSetJson {
    pub fn from_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// The spatial tube of a packet: a neighborhood of radius `r^{1/2+delta}`
/// of the core line `x(t) = t w_theta - d`.
#[derive(Debug, Clone)]
pub struct Tube {
    pub omega_theta: Vec<f64>,
    pub cap_index: Vec<i64>,
    pub scale_r: f64,
    pub delta: f64,
    pub radius: f64,
    pub empty: bool,
    /// Offset `d` in `x(t) = t w_theta - d` (zero for empty tubes).
    pub core_offset: Vec<f64>,
    pub center: SpaceTimePoint,
}

impl Tube {
    /// Unit direction `(w_theta, 1)/sqrt(1+|w_theta|^2)`.
    pub fn direction(&self) -> Vec<f64> {
        crate::geom::gauss_map(&self.omega_theta)
    }

    /// Spatial position of the core line at time `t`.
    pub fn core_at(&self, t: f64) -> Vec<f64> {
        self.omega_theta
            .iter()
            .zip(&self.core_offset)
            .map(|(w, d)| t * w - d)
            .collect()
    }

    /// Distance from a space-time point to the core line.
    pub fn distance_to_core(&self, p: &[f64]) -> f64 {
        let dim = self.omega_theta.len();
        let dir = self.direction();
        // point on the line at t = 0
        let mut base: Vec<f64> = self.core_offset.iter().map(|d| -d).collect();
        base.push(0.0);
        let diff: Vec<f64> = p.iter().zip(&base).map(|(a, b)| a - b).collect();
        let along = dot(&diff, &dir);
        let d2: f64 = diff
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let proj = along * dir[i];
                (v - proj) * (v - proj)
            })
            .sum();
        let _ = dim;
        d2.sqrt()
    }

    /// Core-line points (as space-time vectors) inside `B(center, radius)`.
    pub fn sample_in_ball(&self, center: &[f64], radius: f64, count: usize) -> Vec<Vec<f64>> {
        if self.empty {
            return Vec::new();
        }
        let tc = center[center.len() - 1];
        let mut out = Vec::new();
        for i in 0..count {
            let t = tc - radius + 2.0 * radius * (i as f64 + 0.5) / count as f64;
            let mut p = self.core_at(t);
            p.push(t);
            let d: f64 = p
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= radius {
                out.push(p);
            }
        }
        out
    }

    /// `|w_theta - w_theta'|`.
    pub fn cap_distance(&self, other: &Tube) -> f64 {
        self.omega_theta
            .iter()
            .zip(&other.omega_theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cap_key(&self) -> Vec<i64> {
        self.cap_index.clone()
    }

    /// Angle between core directions.
    pub fn angle_to(&self, other: &Tube) -> f64 {
        let a = self.direction();
        let b = other.direction();
        dot(&a, &b).clamp(-1.0, 1.0).acos()
    }

    /// Sampled Hausdorff-style distance between this core restricted to the
    /// ball and the other tube's core (max over samples of point-to-line
    /// distance, both directions). `None` when either restriction is empty.
    pub fn core_set_distance(
        &self,
        other: &Tube,
        ball_center: &[f64],
        ball_radius: f64,
        samples: usize,
    ) -> Option<f64> {
        let mine = self.sample_in_ball(ball_center, ball_radius, samples);
        let theirs = other.sample_in_ball(ball_center, ball_radius, samples);
        if mine.is_empty() || theirs.is_empty() {
            return None;
        }
        let mut worst: f64 = 0.0;
        for p in &mine {
            worst = worst.max(other.distance_to_core(p));
        }
        for p in &theirs {
            worst = worst.max(self.distance_to_core(p));
        }
        Some(worst)
    }
}

/// Emptiness threshold `10 C_n lambda / sqrt(1 + (10 C_n)^2)`.
pub fn empty_threshold(pf: &PhaseField) -> f64 {
    let c = 10.0 * pf.c_n();
    c * pf.lambda() / (1.0 + c * c).sqrt()
}

/// Build the tube of a packet: empty when
/// `|v - grad_w phi(x0; w_theta)|` exceeds the threshold, otherwise the
/// `r^{1/2+delta}` neighborhood of the core line
/// `w_theta t - x = lambda q / sqrt(lambda^2 - |q|^2)` with
/// `q = grad_w phi(x0; w_theta) - v`.
pub fn tube_of(pf: &PhaseField, dec: &Decomposition, packet: &WavePacket, delta: f64) -> Tube {
    let cap = &dec.pou.caps.caps[packet.cap_idx];
    let grad = pf
        .phase_grad_omega(&packet.center, &cap.center)
        .expect("packet centers have t != 0");
    let v = packet.v();
    let q: Vec<f64> = grad.iter().zip(&v).map(|(g, vi)| g - vi).collect();
    let qn = norm(&q);
    let lambda = pf.lambda();
    let empty = qn >= empty_threshold(pf);
    let core_offset = if empty {
        vec![0.0; q.len()]
    } else {
        let s = (lambda * lambda - qn * qn).sqrt();
        q.iter().map(|qi| lambda * qi / s).collect()
    };
    Tube {
        omega_theta: cap.center.clone(),
        cap_index: cap.index.clone(),
        scale_r: packet.scale_r,
        delta,
        radius: packet.scale_r.powf(0.5 + delta),
        empty,
        core_offset,
        center: packet.center.clone(),
    }
}

/// Evaluate `H^lambda` applied to a single normalized packet profile at the
/// given space-time points (the stored coefficient is not applied):
/// `int e^{2 pi i (phi(x; w) - phi(x0; w) + v.w)} psi~_theta(w) dw`.
pub fn packet_field(
    pf: &PhaseField,
    dec: &Decomposition,
    packet: &WavePacket,
    points: &[SpaceTimePoint],
) -> Result<Vec<Complex64>> {
    packet_field_with(pf, dec, packet, points, 160)
}

/// [`packet_field`] with an explicit node margin for the psi~ transitions
/// (lower margins trade coefficient accuracy for speed).
pub fn packet_field_with(
    pf: &PhaseField,
    dec: &Decomposition,
    packet: &WavePacket,
    points: &[SpaceTimePoint],
    extra_nodes: usize,
) -> Result<Vec<Complex64>> {
    let cap = &dec.pou.caps.caps[packet.cap_idx];
    let box_ = cap.fourier_box();
    let dim = box_.dim();
    let v = packet.v();
    // oscillation of phi(x;.) - phi(x0;.) + v.w over the cap
    let mut freq: f64 = 0.0;
    for p in points {
        let (g0, spread) = grad_spread(pf, p, Some(&packet.center), cap)?;
        let resid = norm(&g0.iter().zip(&v).map(|(a, b)| a + b).collect::<Vec<f64>>());
        freq = freq.max(resid + spread);
    }
    let n_axis = ((4.0 * freq * box_.side(0)).ceil() as usize + extra_nodes).max(96);
    let nodes = cap_grid(&box_, n_axis);
    let cell: f64 = (0..dim).map(|ax| box_.side(ax) / n_axis as f64).product();
    let psi: Vec<f64> = nodes
        .iter()
        .map(|w| dec.pou.psi_tilde(packet.cap_idx, w))
        .collect();
    points
        .par_iter()
        .map(|p| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, ps) in nodes.iter().zip(&psi) {
                if *ps == 0.0 {
                    continue;
                }
                let phase = pf.phase(p, w)? - pf.phase(&packet.center, w)? + dot(&v, w);
                acc += *ps * Complex64::from_polar(1.0, TWO_PI * phase);
            }
            Ok(acc * cell)
        })
        .collect()
}

/// Ratio of the max of `|H g_T|` over sample points in the ball but outside
/// the dilated tube, to the max over points on the tube core inside the
/// ball. Invariant under scaling of the packet.
pub fn essential_support_ratio(
    pf: &PhaseField,
    dec: &Decomposition,
    packet: &WavePacket,
    tube: &Tube,
    ball_center: &SpaceTimePoint,
    ball_radius: f64,
    dilate: f64,
    seed: u64,
) -> Result<f64> {
    let on_tube: Vec<SpaceTimePoint> = tube
        .sample_in_ball(&ball_center.as_vec(), ball_radius, 24)
        .into_iter()
        .map(|p| {
            let (x, t) = p.split_last().map(|(t, x)| (x.to_vec(), *t)).unwrap();
            SpaceTimePoint::new(x, t)
        })
        .collect();
    if on_tube.is_empty() {
        return Err(Error::Construction(
            "tube does not meet the ball; no reference points".into(),
        ));
    }
    let mut rstream = crate::rng::stream(seed, "ess-supp", 0);
    let mut far = Vec::new();
    let cvec = ball_center.as_vec();
    while far.len() < 48 {
        let p = crate::rng::point_in_ball(&mut rstream, &cvec, ball_radius);
        if p[p.len() - 1].abs() < 1e-6 {
            continue;
        }
        if tube.distance_to_core(&p) > dilate * tube.radius {
            let (x, t) = p.split_last().map(|(t, x)| (x.to_vec(), *t)).unwrap();
            far.push(SpaceTimePoint::new(x, t));
        }
    }
    let on_vals = packet_field(pf, dec, packet, &on_tube)?;
    let far_vals = packet_field(pf, dec, packet, &far)?;
    let on_max = on_vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let far_max = far_vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if on_max == 0.0 {
        return Err(Error::Degenerate("packet vanishes on its own tube".into()));
    }
    Ok(far_max / on_max)
}

/// Thresholds for the two-scale link (the `\lesssim` constants of the
/// candidate-set definition).
#[derive(Debug, Clone, Copy)]
pub struct TwoScaleConfig {
    /// cap distance constant: `dist(theta, theta~) <= angle_const rho^{-1/2}`
    pub angle_const: f64,
    /// displacement constant:
    /// `|v~ - (grad phi_{x0}(x~0; w_theta) + v)| <= disp_const r^{(1+delta)/2}`
    pub disp_const: f64,
    pub delta: f64,
}

impl Default for TwoScaleConfig {
    fn default() -> Self {
        TwoScaleConfig {
            angle_const: 4.0,
            disp_const: 8.0,
            delta: 0.1,
        }
    }
}

/// The scale-`rho` children of one scale-`r` packet.
pub struct TwoScaleLink {
    /// Decomposition of the parent packet at the smaller scale (all caps
    /// near the parent, every lattice point in a window wide enough to
    /// cover the link thresholds).
    pub small: Decomposition,
    /// Indices into `small.packets` that satisfy the link thresholds.
    pub children: Vec<usize>,
    /// Shift `grad phi_{x0}(x~0; w_theta) + v`, the expected child center.
    pub shifted_v: Vec<f64>,
}

/// Compute the candidate children of `parent` on `B(x~0, rho)`.
pub fn two_scale_children(
    pf: &PhaseField,
    parent_dec: &Decomposition,
    parent: &WavePacket,
    small_center: &SpaceTimePoint,
    rho: f64,
    cfg: &TwoScaleConfig,
) -> Result<TwoScaleLink> {
    let r = parent.scale_r;
    if !(r.sqrt() <= rho + 1e-9 && rho <= r + 1e-9) {
        return Err(Error::Argument(format!(
            "need sqrt(r) <= rho <= r, got rho = {rho}, r = {r}"
        )));
    }
    let cap = &parent_dec.pou.caps.caps[parent.cap_idx];
    let grad_small = pf.phase_grad_omega(small_center, &cap.center)?;
    let grad_big = pf.phase_grad_omega(&parent.center, &cap.center)?;
    let shifted_v: Vec<f64> = grad_small
        .iter()
        .zip(&grad_big)
        .zip(&parent.v())
        .map(|((s, b), v)| s - b + v)
        .collect();

    // decompose the parent packet at the smaller scale
    let parent_clone = parent.clone();
    let pou = parent_dec.pou.clone();
    let lambda = parent_dec.lambda;
    let c_n = parent_dec.c_n;
    let base = parent.center.clone();
    let slow = move |w: &[f64]| -> Complex64 {
        // packet profile without the base modulation e^{-2 pi i phi(x0; w)}
        let psi = pou.psi_tilde(parent_clone.cap_idx, w);
        if psi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        parent_clone.coeff
            * psi
            * Complex64::from_polar(1.0, TWO_PI * dot(&parent_clone.v(), w))
    };
    let input = SlowInput {
        eval: &slow,
        base_center: Some(&base),
        carrier: parent.v(),
        freq_bound: 40.0 * r.sqrt(),
    };
    let window = ((cfg.disp_const * r.powf(0.5 * (1.0 + cfg.delta))) / rho.sqrt()).ceil() as usize + 2;
    let small = decompose_slow(
        &PhaseField::new(lambda, c_n)?,
        &input,
        rho,
        small_center,
        window,
    )?;

    let mut children = Vec::new();
    let angle_bound = cfg.angle_const * rho.powf(-0.5);
    let disp_bound = cfg.disp_const * r.powf(0.5 * (1.0 + cfg.delta));
    for (i, p) in small.packets.iter().enumerate() {
        let child_cap = &small.pou.caps.caps[p.cap_idx];
        let cap_dist: f64 = child_cap
            .center
            .iter()
            .zip(&cap.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if cap_dist > angle_bound {
            continue;
        }
        let disp: f64 = p
            .v()
            .iter()
            .zip(&shifted_v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if disp > disp_bound {
            continue;
        }
        children.push(i);
    }
    Ok(TwoScaleLink {
        small,
        children,
        shifted_v,
    })
}

/// Relative L2 error of the child reconstruction of the parent packet,
/// measured on a quadrature grid over the union of the relevant cap boxes.
pub fn two_scale_capture_error(
    parent_dec: &Decomposition,
    parent: &WavePacket,
    link: &TwoScaleLink,
) -> f64 {
    // covering box of parent cap and child caps
    let mut lo = parent_dec.pou.caps.caps[parent.cap_idx].fourier_box().lo;
    let mut hi = parent_dec.pou.caps.caps[parent.cap_idx].fourier_box().hi;
    for &i in &link.children {
        let b = link.small.pou.caps.caps[link.small.packets[i].cap_idx].fourier_box();
        for ax in 0..lo.len() {
            lo[ax] = lo[ax].min(b.lo[ax]);
            hi[ax] = hi[ax].max(b.hi[ax]);
        }
    }
    let box_ = AxisBox { lo, hi };
    let dim = box_.dim();
    // the integrand's carriers oscillate at |v - grad phi| which can reach
    // 2 lambda across the covering box; size the grid to that worst case
    let freq = 2.0 * parent_dec.lambda
        + norm(
            &link
                .shifted_v
                .iter()
                .zip(&parent.v())
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        )
        + 60.0 * parent.scale_r.sqrt();
    let n_axis = ((1.2 * freq * box_.side(0)).ceil() as usize + 200).max(128);
    let nodes = cap_grid(&box_, n_axis);
    let cell: f64 = (0..dim).map(|ax| box_.side(ax) / n_axis as f64).product();
    let parent_idx = parent_dec
        .packets
        .iter()
        .position(|p| std::ptr::eq(p, parent));
    let mut num = 0.0;
    let mut den = 0.0;
    let vals: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|w| {
            let a = match parent_idx {
                Some(i) => parent_dec.sum_value(Some(&[i]), w),
                None => {
                    // packet not stored in dec: evaluate directly
                    let psi = parent_dec.pou.psi_tilde(parent.cap_idx, w);
                    if psi == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        let pf = PhaseField::new(parent_dec.lambda, parent_dec.c_n).unwrap();
                        parent.coeff
                            * psi
                            * Complex64::from_polar(
                                1.0,
                                TWO_PI
                                    * (dot(&parent.v(), w)
                                        - pf.phase(&parent.center, w).unwrap()),
                            )
                    }
                }
            };
            let b = link.small.sum_value(Some(&link.children), w);
            ((a - b).norm_sqr(), a.norm_sqr())
        })
        .collect();
    for (n2, d2) in vals {
        num += n2 * cell;
        den += d2 * cell;
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}

/// `(sum_T ||g_T||^2 / ||g||^2, fixed-theta ratio ||sum_T g_T||^2 / sum ||g_T||^2)`.
pub fn l2_orthogonality_report(dec: &Decomposition, g_l2: f64) -> (f64, f64) {
    let total = dec.total_packet_mass();
    let first = if g_l2 > 0.0 { total / (g_l2 * g_l2) } else { 0.0 };

    // pick the heaviest cap
    let mut mass_per_cap: HashMap<usize, f64> = HashMap::new();
    for p in &dec.packets {
        *mass_per_cap.entry(p.cap_idx).or_default() += p.coeff.norm_sqr();
    }
    let Some((&cap_idx, _)) = mass_per_cap
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
    else {
        return (first, 1.0);
    };
    let on_cap = dec.packets_on_cap(cap_idx);
    let box_ = dec.pou.caps.caps[cap_idx].fourier_box();
    let sqrt_r = dec.r.sqrt();
    let max_off = on_cap
        .iter()
        .map(|&i| {
            let p = &dec.packets[i];
            p.v_int.iter().map(|k| k.abs()).max().unwrap_or(0)
        })
        .max()
        .unwrap_or(0) as f64;
    let n_axis = ((8.0 * max_off * sqrt_r * box_.side(0)).ceil() as usize + 200).max(128);
    let nodes = cap_grid(&box_, n_axis);
    let cell: f64 = (0..box_.dim())
        .map(|ax| box_.side(ax) / n_axis as f64)
        .product();
    let mut sum_sq = 0.0;
    for w in &nodes {
        let psi = dec.pou.psi_tilde(cap_idx, w);
        if psi == 0.0 {
            continue;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for &i in &on_cap {
            let p = &dec.packets[i];
            acc += p.coeff * Complex64::from_polar(1.0, TWO_PI * dot(&p.v(), w));
        }
        sum_sq += (acc * psi).norm_sqr() * cell;
    }
    let indiv: f64 = on_cap.iter().map(|&i| dec.packet_l2_sq(&dec.packets[i])).sum();
    let second = if indiv > 0.0 { sum_sq / indiv } else { 1.0 };
    (first, second)
}

/// Single Fourier-series coefficient of a slow input at an arbitrary
/// lattice point (used to probe the rapidly decaying far tail).
pub fn coefficient_at(
    pf: &PhaseField,
    input: &SlowInput,
    pou: &PartitionOfUnity,
    x0: &SpaceTimePoint,
    cap_idx: usize,
    v_int: &[i64],
) -> Result<Complex64> {
    let cap = &pou.caps.caps[cap_idx];
    let box_ = cap.fourier_box();
    let dim = box_.dim();
    let sqrt_r = pou.caps.r.sqrt();
    let v: Vec<f64> = v_int.iter().map(|k| *k as f64 * sqrt_r).collect();
    let (g0, spread) = grad_spread(pf, x0, input.base_center, cap)?;
    let resid = norm(&g0.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<f64>>());
    let freq = input.freq_bound + resid + spread;
    let n_axis = ((4.0 * freq * box_.side(0)).ceil() as usize + 160).max(96);
    let nodes = cap_grid(&box_, n_axis);
    let cell: f64 = (0..dim).map(|ax| box_.side(ax) / n_axis as f64).product();
    let mut acc = Complex64::new(0.0, 0.0);
    for w in &nodes {
        let psi = pou.psi(cap_idx, w);
        if psi == 0.0 {
            continue;
        }
        let mut phase = pf.phase(x0, w)?;
        if let Some(b) = input.base_center {
            phase -= pf.phase(b, w)?;
        }
        acc += (input.eval)(w) * psi * Complex64::from_polar(1.0, TWO_PI * (phase - dot(&v, w)));
    }
    Ok(acc * cell * pou.caps.r.powf(dim as f64 / 2.0))
}

/// `sum_{w in D} F(w) e^{2 pi i phi(x; w)}` for a separated point set.
pub fn discrete_extension_sum(
    pf: &PhaseField,
    points_d: &[Vec<f64>],
    values: &[Complex64],
    min_separation: f64,
    eval_points: &[SpaceTimePoint],
) -> Result<Vec<Complex64>> {
    if points_d.len() != values.len() {
        return Err(Error::Shape("one value per discrete point".into()));
    }
    for (i, a) in points_d.iter().enumerate() {
        for b in points_d.iter().skip(i + 1) {
            let d: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if d < min_separation {
                return Err(Error::Separation(format!(
                    "points at distance {d:.3e} violate separation {min_separation:.3e}"
                )));
            }
        }
    }
    eval_points
        .par_iter()
        .map(|p| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, f) in points_d.iter().zip(values) {
                acc += f * Complex64::from_polar(1.0, TWO_PI * pf.phase(p, w)?);
            }
            Ok(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Bump1D;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn cap_side_and_covering() {
        // r = 121, dim 1 -> side 9/121
        let caps = make_caps(121.0, 1).unwrap();
        assert_relative_eq!(caps.side, 9.0 / 121.0, epsilon = 1e-15);

        // every point of B(0,2) lies in >= 1 cap; count near the lattice count
        let caps = make_caps(4.0, 2).unwrap();
        let mut r = rng::stream(2, "caps-cover", 0);
        for _ in 0..2000 {
            let p = rng::point_in_ball(&mut r, &[0.0, 0.0], 2.0);
            assert!(caps.cap_containing(&p).is_some(), "uncovered point {p:?}");
        }
        let expect = (22.0f64 / 9.0 * 2.0 * 4.0f64.sqrt()).powi(2);
        let ratio = caps.len() as f64 / expect;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "cap count {} vs nominal {expect}",
            caps.len()
        );

        // overlap multiplicity of the 11/10-dilates is at most 2^{n-1}
        for _ in 0..500 {
            let p = rng::point_in_ball(&mut r, &[0.0, 0.0], 2.0);
            let mult = caps
                .caps
                .iter()
                .filter(|c| c.support_box().contains(&p))
                .count();
            assert!(mult <= 4, "multiplicity {mult} at {p:?}");
        }
    }

    #[test]
    fn partition_of_unity_properties() {
        let caps = make_caps(16.0, 2).unwrap();
        let pou = PartitionOfUnity::new(caps);
        let mut r = rng::stream(3, "pou", 0);
        for _ in 0..1000 {
            let p = rng::point_in_ball(&mut r, &[0.0, 0.0], 2.0);
            let s = pou.partition_sum(&p);
            assert!((s - 1.0).abs() <= 1e-10, "partition sum {s} at {p:?}");
        }
        // support: positive at center, zero past 0.55 * side from center
        let ci = pou.caps.cap_containing(&[0.3, 0.3]).unwrap();
        let c = pou.caps.caps[ci].center.clone();
        let v = pou.psi(ci, &c);
        assert!(v > 0.0 && v <= 1.0);
        let side = pou.caps.side;
        let outside = [c[0] + 0.5501 * side + 0.56 * side, c[1]];
        // a full side + margin past the support box
        assert_eq!(pou.psi(ci, &outside), 0.0);
    }

    #[test]
    fn partition_derivative_growth() {
        // max |d psi| r^{-1/2} bounded by a fixed constant across scales
        let mut worst: f64 = 0.0;
        for r in [16.0f64, 64.0, 256.0] {
            let caps = make_caps(r, 1).unwrap();
            let pou = PartitionOfUnity::new(caps);
            let ci = pou.caps.cap_containing(&[0.5]).unwrap();
            let c = pou.caps.caps[ci].center[0];
            let side = pou.caps.side;
            let h = side * 1e-4;
            let mut sup: f64 = 0.0;
            for i in 0..400 {
                let x = c - 0.7 * side + 1.4 * side * i as f64 / 400.0;
                let d = (pou.psi(ci, &[x + h]) - pou.psi(ci, &[x - h])) / (2.0 * h);
                sup = sup.max(d.abs());
            }
            worst = worst.max(sup * r.powf(-0.5));
        }
        assert!(worst <= 100.0, "derivative growth constant {worst}");
    }

    fn smooth_test_g(seed: u64, n_samples: usize) -> GridFunction {
        let mut r = rng::stream(seed, "smooth-g", 0);
        let modes: Vec<(i64, Complex64)> = (-6..=6)
            .map(|k| {
                let a = rng::uniform(&mut r, -1.0, 1.0);
                let b = rng::uniform(&mut r, -1.0, 1.0);
                let decay = 1.0 / (1.0 + (k * k) as f64);
                (k, Complex64::new(a * decay, b * decay))
            })
            .collect();
        // taper to compact support inside (0, 1)
        let taper = Bump1D::new(0.01, 0.08, 0.92, 0.99).unwrap();
        GridFunction::from_fn(vec![n_samples], AxisBox::unit(1), |p| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, c) in &modes {
                acc += c * Complex64::from_polar(1.0, TWO_PI * (*k as f64) * p[0]);
            }
            acc * taper.eval(p[0])
        })
    }

    #[test]
    fn zero_function_gives_zero_coefficients() {
        let pf = PhaseField::new(256.0, 4.0).unwrap();
        let g = GridFunction::zeros(vec![256], AxisBox::unit(1));
        let x0 = SpaceTimePoint::new(vec![0.0], 64.0);
        let dec = decompose(&pf, &g, 64.0, &x0, default_v_radius(64.0)).unwrap();
        assert!(dec.packets.is_empty());
    }

    #[test]
    fn reconstruction_and_orthogonality_small_scale() {
        let lambda = 1024.0;
        let pf = PhaseField::new(lambda, 4.0).unwrap();
        let g = smooth_test_g(8, 512);
        let x0 = SpaceTimePoint::new(vec![0.0], lambda / 4.0);
        let r = 64.0;
        let dec = decompose(&pf, &g, r, &x0, 64.0 * r.sqrt()).unwrap();
        assert!(!dec.packets.is_empty());

        // reconstruction on [0,1]
        let tp = TrigPoly::from_grid(&g, 255, 1e-13).unwrap();
        let m = 4096;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..m {
            let w = [(i as f64 + 0.5) / m as f64];
            let a = tp.eval(&w);
            let b = dec.sum_value(None, &w);
            num += (a - b).norm_sqr();
            den += a.norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-3, "reconstruction error {rel}");

        // Plancherel two-sided bound
        let (ratio, fixed_theta) = l2_orthogonality_report(&dec, g.l2_norm());
        assert!(
            (0.25..=4.0).contains(&ratio),
            "packet mass ratio {ratio} out of [1/4, 4]"
        );
        assert!(
            (0.25..=4.0).contains(&fixed_theta),
            "fixed-theta ratio {fixed_theta}"
        );
    }

    #[test]
    fn modulation_covariance() {
        let pf = PhaseField::new(256.0, 4.0).unwrap();
        let g = smooth_test_g(4, 256);
        let phase = 0.77;
        let rotated = GridFunction::new(
            g.shape.clone(),
            g.samples
                .iter()
                .map(|z| z * Complex64::from_polar(1.0, phase))
                .collect(),
            g.domain.clone(),
        )
        .unwrap();
        let x0 = SpaceTimePoint::new(vec![0.0], 64.0);
        let a = decompose(&pf, &g, 16.0, &x0, default_v_radius(16.0)).unwrap();
        let b = decompose(&pf, &rotated, 16.0, &x0, default_v_radius(16.0)).unwrap();
        assert_eq!(a.packets.len(), b.packets.len());
        let rot = Complex64::from_polar(1.0, phase);
        for (p, q) in a.packets.iter().zip(&b.packets) {
            assert_eq!(p.cap_idx, q.cap_idx);
            assert_eq!(p.v_int, q.v_int);
            let expect = p.coeff * rot;
            assert!((q.coeff - expect).norm() <= 1e-9 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn dominant_coefficient_for_planted_packet() {
        // g = psi_theta0 e^{-2 pi i phi(x0;.)} e^{2 pi i v0.w} concentrates
        // its coefficient mass at (theta0, v0)
        let lambda = 512.0;
        let pf = PhaseField::new(lambda, 4.0).unwrap();
        let r = 64.0;
        let x0 = SpaceTimePoint::new(vec![0.0], 128.0);
        let caps = make_caps(r, 1).unwrap();
        let pou = PartitionOfUnity::new(caps);
        let theta0 = pou.caps.cap_containing(&[0.5]).unwrap();
        let grad = pf
            .phase_grad_omega(&x0, &pou.caps.caps[theta0].center)
            .unwrap();
        let v0_int = (grad[0] / r.sqrt()).round() as i64 + 2;
        let v0 = v0_int as f64 * r.sqrt();
        let pou2 = pou.clone();
        let g = GridFunction::from_fn(vec![8192], AxisBox::unit(1), |w| {
            let psi = pou2.psi(theta0, w);
            if psi == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            psi * Complex64::from_polar(
                1.0,
                TWO_PI * (v0 * w[0] - pf.phase(&x0, w).unwrap()),
            )
        });
        let dec = decompose(&pf, &g, r, &x0, default_v_radius(r)).unwrap();
        let total: f64 = dec.packets.iter().map(|p| p.coeff.norm_sqr()).sum();
        let target: f64 = dec
            .packets
            .iter()
            .filter(|p| p.cap_idx == theta0 && p.v_int == vec![v0_int])
            .map(|p| p.coeff.norm_sqr())
            .sum();
        assert!(
            target >= 0.5 * total,
            "planted packet carries {target} of {total}"
        );
    }

    #[test]
    fn tube_geometry() {
        let lambda = 100.0;
        let pf = PhaseField::new(lambda, 1.0).unwrap();
        // threshold example: 10 C_n lambda / sqrt(1 + (10 C_n)^2)
        assert_relative_eq!(
            empty_threshold(&pf),
            1000.0 / 101.0f64.sqrt(),
            epsilon = 1e-12
        );

        // v = grad phi(x0; w_theta) -> core line x = t w_theta
        let lambda = 256.0;
        let pf = PhaseField::new(lambda, 4.0).unwrap();
        let r = 64.0;
        let x0 = SpaceTimePoint::new(vec![10.0], 100.0);
        let g = smooth_test_g(5, 256);
        let dec = decompose(&pf, &g, r, &x0, default_v_radius(r)).unwrap();
        let packet = dec.packets[dec.packets.len() / 2].clone();
        let tube = tube_of(&pf, &dec, &packet, 0.1);
        assert!(!tube.empty);
        // residual of the defining equation on sampled core points:
        // grad_w phi(x,t; w_theta) + v - grad_w phi(x0; w_theta) = 0
        let cap_center = dec.pou.caps.caps[packet.cap_idx].center.clone();
        let grad0 = pf.phase_grad_omega(&x0, &cap_center).unwrap();
        for t in [20.0, 100.0, 311.0] {
            let x = tube.core_at(t);
            let p = SpaceTimePoint::new(x, t);
            let g = pf.phase_grad_omega(&p, &cap_center).unwrap();
            let resid: f64 = g
                .iter()
                .zip(&packet.v())
                .zip(&grad0)
                .map(|((a, v), b)| (a + v - b).abs())
                .fold(0.0, f64::max);
            assert!(
                resid <= 1e-8 * lambda,
                "core residual {resid} at t = {t}"
            );
        }

        // exact-stationary packet: v = grad -> core through x = t w_theta
        let cap = &dec.pou.caps.caps[packet.cap_idx];
        let grad = pf.phase_grad_omega(&x0, &cap.center).unwrap();
        let synthetic = WavePacket {
            cap_idx: packet.cap_idx,
            v_int: vec![0],
            coeff: Complex64::new(1.0, 0.0),
            scale_r: r,
            center: x0.clone(),
        };
        // fake a lattice exactly at grad by shifting: construct tube directly
        let q = vec![grad[0] - grad[0]];
        assert_eq!(q[0], 0.0);
        let t = tube_of(&pf, &dec, &synthetic, 0.1);
        // core offset for v = 0 is lambda grad / sqrt(lambda^2 - grad^2)
        let expect = lambda * grad[0] / (lambda * lambda - grad[0] * grad[0]).sqrt();
        assert_relative_eq!(t.core_offset[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn discrete_sum_basics() {
        let pf = PhaseField::new(64.0, 4.0).unwrap();
        let pts = vec![vec![0.25], vec![0.5], vec![0.75]];
        let vals = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let eval = vec![SpaceTimePoint::new(vec![3.0], 32.0)];
        let out = discrete_extension_sum(&pf, &pts, &vals, 0.2, &eval).unwrap();
        let expect = Complex64::from_polar(1.0, TWO_PI * pf.phase(&eval[0], &[0.25]).unwrap());
        assert!((out[0] - expect).norm() <= 1e-12);

        // zero values -> zero
        let zeros = vec![Complex64::new(0.0, 0.0); 3];
        let out = discrete_extension_sum(&pf, &pts, &zeros, 0.2, &eval).unwrap();
        assert_eq!(out[0], Complex64::new(0.0, 0.0));

        // separation violation
        let close = vec![vec![0.25], vec![0.26]];
        let vals = vec![Complex64::new(1.0, 0.0); 2];
        assert!(discrete_extension_sum(&pf, &close, &vals, 0.2, &eval).is_err());
    }
}
