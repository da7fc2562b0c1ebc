// temporary diagnostic; removed before release
use num_complex::Complex64;
use oscillab::grid::{AxisBox, GridFunction, TrigPoly};
use oscillab::phase::{Bump1D, PhaseField, SpaceTimePoint};
use oscillab::rng;
use oscillab::wavepacket::{decompose, Decomposition};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn smooth_g(seed: u64, n: usize) -> GridFunction {
    let mut r = rng::stream(seed, "smooth-g", 0);
    let modes: Vec<(i64, Complex64)> = (-6..=6)
        .map(|k| {
            let a = rng::uniform(&mut r, -1.0, 1.0);
            let b = rng::uniform(&mut r, -1.0, 1.0);
            let decay = 1.0 / (1.0 + (k * k) as f64);
            (k, Complex64::new(a * decay, b * decay))
        })
        .collect();
    let taper = Bump1D::new(0.01, 0.08, 0.92, 0.99).unwrap();
    GridFunction::from_fn(vec![n], AxisBox::unit(1), |p| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in &modes {
            acc += c * Complex64::from_polar(1.0, TWO_PI * (*k as f64) * p[0]);
        }
        acc * taper.eval(p[0])
    })
}

fn recon_err(dec: &Decomposition, g: &GridFunction) -> f64 {
    let tp = TrigPoly::from_grid(g, g.shape[0] / 2 - 1, 1e-13).unwrap();
    let m = 8192;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        let w = [(i as f64 + 0.5) / m as f64];
        let a = tp.eval(&w);
        let b = dec.sum_value(None, &w);
        num += (a - b).norm_sqr();
        den += a.norm_sqr();
    }
    (num / den).sqrt()
}

fn main() { part_probe(); if true { return; }
    for (lambda, r, t_div) in [(1024.0f64, 64.0f64, 4.0f64), (4096.0, 256.0, 4.0)] {
        let pf = PhaseField::new(lambda, 4.0).unwrap();
        let x0 = SpaceTimePoint::new(vec![0.0], lambda / t_div);
        let g = smooth_g(8, 512);
        for window in [48.0, 64.0, 80.0] {
            let v_radius = window * r.sqrt();
            let t = std::time::Instant::now();
            let dec = decompose(&pf, &g, r, &x0, v_radius).unwrap();
            let err = recon_err(&dec, &g);
            println!(
                "lambda={lambda} r={r} window={window} packets={} err={err:.3e} ({:?})",
                dec.packets.len(),
                t.elapsed()
            );
        }
    }
}

// appended: single-cap diagnostics
#[allow(dead_code)]
fn single_cap() {
    use oscillab::wavepacket::make_caps;
    let lambda = 1024.0;
    let r = 64.0f64;
    let pf = PhaseField::new(lambda, 4.0).unwrap();
    let x0 = SpaceTimePoint::new(vec![0.0], lambda / 4.0);
    let g = smooth_g(8, 2048);
    let tp = TrigPoly::from_grid(&g, 1023, 1e-13).unwrap();
    println!("tp band = {}", tp.band());
    let dec = decompose(&pf, &g, r, &x0, 48.0 * r.sqrt()).unwrap();
    let caps = make_caps(r, 1).unwrap();
    let ci = caps.cap_containing(&[0.5]).unwrap();
    // per-cap comparison: sum over this cap's packets vs g psi e^{i phi}
    let on_cap: Vec<usize> = (0..dec.packets.len())
        .filter(|&i| dec.packets[i].cap_idx == ci)
        .collect();
    println!("packets on cap {}: {}", ci, on_cap.len());
    // coefficient magnitudes by |dv|
    let mut mags: Vec<(i64, f64)> = on_cap
        .iter()
        .map(|&i| {
            let p = &dec.packets[i];
            (p.v_int[0], p.coeff.norm())
        })
        .collect();
    mags.sort_by_key(|m| m.0);
    let center = mags[mags.len() / 2].0;
    for (v, m) in &mags {
        if (v - center).abs() <= 48 && (v - center).abs() % 8 == 0 {
            println!("  dv = {:+4}  |c| = {:.3e}", v - center, m);
        }
    }
    // partial-sum error at the cap center for growing windows
    let w = [dec.pou.caps.caps[ci].center[0]];
    let truth = tp.eval(&w) * dec.pou.psi(ci, &w)
        * Complex64::from_polar(1.0, TWO_PI * pf.phase(&x0, &w).unwrap());
    for win in [8i64, 16, 24, 32, 48] {
        let mut acc = Complex64::new(0.0, 0.0);
        for &i in &on_cap {
            let p = &dec.packets[i];
            if (p.v_int[0] - center).abs() <= win {
                acc += p.coeff * Complex64::from_polar(1.0, TWO_PI * p.v()[0] * w[0]);
            }
        }
        println!("  win {win}: |sum - truth| = {:.3e} (|truth| = {:.3e})", (acc - truth).norm(), truth.norm());
    }
}


#[allow(dead_code)]
fn coeff_probe() {
    use oscillab::wavepacket::make_caps;
    let lambda = 1024.0;
    let r = 64.0f64;
    let pf = PhaseField::new(lambda, 4.0).unwrap();
    let x0 = SpaceTimePoint::new(vec![0.0], lambda / 4.0);
    let g = smooth_g(8, 2048);
    let tp = TrigPoly::from_grid(&g, 1023, 1e-13).unwrap();
    let caps = make_caps(r, 1).unwrap();
    let pou = oscillab::wavepacket::PartitionOfUnity::new(caps);
    let ci = pou.caps.cap_containing(&[0.5]).unwrap();
    let cap = &pou.caps.caps[ci];
    let bx = cap.fourier_box();
    let grad = pf.phase_grad_omega(&x0, &cap.center).unwrap();
    let v_star = (grad[0] / 8.0).round() as i64;
    for dv in [-24i64, -8, 8, 24] {
        let v = (v_star + dv) as f64 * 8.0;
        for n in [400usize, 740, 1480, 2960, 5920] {
            let h = bx.side(0) / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                let w = [bx.lo[0] + (j as f64 + 0.5) * h];
                let psi = pou.psi(ci, &w);
                if psi == 0.0 { continue; }
                let phase = pf.phase(&x0, &w).unwrap() - v * w[0];
                acc += tp.eval(&w) * psi * Complex64::from_polar(1.0, TWO_PI * phase);
            }
            let c = acc * h * 8.0;
            println!("dv={dv:+} n={n:5} |c| = {:.4e}", c.norm());
        }
        println!();
    }
}


#[allow(dead_code)]
fn profile_probe() {
    use oscillab::wavepacket::make_caps;
    let lambda = 1024.0;
    let r = 64.0f64;
    let pf = PhaseField::new(lambda, 4.0).unwrap();
    let x0 = SpaceTimePoint::new(vec![0.0], lambda / 4.0);
    // plain constant input: isolate psi/chirp structure
    let caps = make_caps(r, 1).unwrap();
    let pou = oscillab::wavepacket::PartitionOfUnity::new(caps);
    let ci = pou.caps.cap_containing(&[0.5]).unwrap();
    let cap = &pou.caps.caps[ci];
    let bx = cap.fourier_box();
    let grad = pf.phase_grad_omega(&x0, &cap.center).unwrap();
    let v_star = (grad[0] / 8.0).round() as i64;
    let n = 4096usize;
    let h = bx.side(0) / n as f64;
    // precompute psi and phase samples
    let mut psis = Vec::new();
    let mut phases = Vec::new();
    for j in 0..n {
        let w = [bx.lo[0] + (j as f64 + 0.5) * h];
        psis.push(pou.psi(ci, &w));
        phases.push(pf.phase(&x0, &w).unwrap());
    }
    println!("cap center {:.4}, v* = {v_star}, side = {:.5}", cap.center[0], bx.side(0));
    for dv in -30i64..=30 {
        let v = (v_star + dv) as f64 * 8.0;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            if psis[j] == 0.0 { continue; }
            let w = bx.lo[0] + (j as f64 + 0.5) * h;
            acc += psis[j] * Complex64::from_polar(1.0, TWO_PI * (phases[j] - v * w));
        }
        let c = (acc * h * 8.0).norm();
        println!("dv={dv:+3} |c| = {c:.4e}");
    }
}


#[allow(dead_code)]
fn psi_probe() {
    use oscillab::wavepacket::make_caps;
    let r = 64.0f64;
    let caps = make_caps(r, 1).unwrap();
    let pou = oscillab::wavepacket::PartitionOfUnity::new(caps);
    let ci = pou.caps.cap_containing(&[0.5]).unwrap();
    let cap = &pou.caps.caps[ci];
    let bx = cap.fourier_box();
    let n = 8192usize;
    let h = bx.side(0) / n as f64;
    // pure psi spectrum (no chirp)
    println!("pure psi lattice spectrum:");
    for dv in [0i64, 2, 4, 8, 12, 16, 20, 24] {
        let v = dv as f64 * 8.0;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let w = bx.lo[0] + (j as f64 + 0.5) * h;
            let psi = pou.psi(ci, &[w]);
            if psi == 0.0 { continue; }
            acc += psi * Complex64::from_polar(1.0, -TWO_PI * v * w);
        }
        println!("  dv={dv:+3} |psi^(v)| = {:.4e}", (acc * h * 8.0).norm());
    }
    // raw bump (no normalization)
    println!("raw bump spectrum:");
    for dv in [0i64, 2, 4, 8, 12, 16, 20, 24] {
        let v = dv as f64 * 8.0;
        let mut acc = Complex64::new(0.0, 0.0);
        let half = 0.5 * cap.side;
        let tr = 0.05 * cap.side;
        let b = Bump1D::new(cap.center[0]-half-tr, cap.center[0]-half, cap.center[0]+half, cap.center[0]+half+tr).unwrap();
        for j in 0..n {
            let w = bx.lo[0] + (j as f64 + 0.5) * h;
            let psi = b.eval(w);
            if psi == 0.0 { continue; }
            acc += psi * Complex64::from_polar(1.0, -TWO_PI * v * w);
        }
        println!("  dv={dv:+3} |raw^(v)| = {:.4e}", (acc * h * 8.0).norm());
    }
    // psi with the sum over neighbors printed along a transition
    println!("psi values across the right edge:");
    let edge = cap.center[0] + 0.5 * cap.side;
    for k in 0..13 {
        let w = edge - 0.09 * cap.side + k as f64 * 0.015 * cap.side;
        println!("  w-edge = {:+.4} l: psi = {:.6}, sum = {:.9}", (w - edge)/cap.side, pou.psi(ci, &[w]), pou.partition_sum(&[w]));
    }
}


#[allow(dead_code)]
fn part_probe() {
    use oscillab::partition::*;
    let mut r = oscillab::rng::stream(7, "partition-uniform", 0);
    let half = 0.5 * 1024.0;
    let pts: Vec<Vec<f64>> = (0..10000)
        .map(|_| oscillab::rng::point_in_box(&mut r, &vec![-half; 3], &vec![half; 3]))
        .collect();
    let w = WeightedPoints::new(pts, vec![1.0; 10000]).unwrap();
    let part = equal_mass_partition_with(&w, 4, Some(512.0)).unwrap();
    println!("bisectors: {} (degrees {:?})", part.bisectors.len(),
        part.bisectors.iter().map(|b| b.degree()).collect::<Vec<_>>());
    println!("cells: {}, wall: {}", part.cells.len(), part.wall.len());
    // distance estimate histogram
    let mut ds: Vec<f64> = w.points.iter().map(|p| part.wall_distance_estimate(p)).collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for q in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9] {
        println!("dist quantile {q}: {:.2}", ds[(q * 10000.0) as usize]);
    }
    let width = 1024.0f64.powf(0.52);
    println!("wall width = {width:.2}");
    let shr = shrunken_cells(&part, &w, 1024.0, 0.02);
    println!("retained weight = {}", shr.retained_weight);
    // per-bisector: fraction of points within width
    for (i, b) in part.bisectors.iter().enumerate() {
        let frac = w.points.iter().filter(|p| {
            let v = b.eval(p).abs();
            let g = b.gradient(p);
            let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            gn > 0.0 && v / gn <= width
        }).count() as f64 / 10000.0;
        println!("bisector {i} (deg {}): near-fraction {frac:.3}", b.degree());
    }
}
