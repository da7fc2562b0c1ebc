//! Grid-level operators: the Bochner-Riesz multiplier, the extension-like
//! operator `H^lambda`, the convolution form `S^lambda`, its frozen variant,
//! and the slice L2 bound.

use crate::error::{Error, Result};
use crate::grid::{for_each_index, AxisBox, GridFunction};
use crate::phase::{CutoffAlr, PhaseField, SpaceTimePoint};
use num_complex::Complex64;
use rayon::prelude::*;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Apply the multiplier `(1 - |xi|^2)_+^alpha` on the grid-dual frequency
/// lattice of `f` (diagonal in the discrete Fourier basis; exact on
/// band-limited inputs).
pub fn apply_bochner_riesz(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let mut coeffs = f.fft();
    let shape = f.shape.clone();
    let mut mult = vec![0.0f64; coeffs.len()];
    for_each_index(&shape, |idx, flat| {
        let mut xi2 = 0.0;
        for (ax, &k) in idx.iter().enumerate() {
            let fr = f.frequency(ax, k);
            xi2 += fr * fr;
        }
        mult[flat] = bochner_riesz_symbol(xi2, alpha);
    });
    for (c, m) in coeffs.iter_mut().zip(&mult) {
        *c *= *m;
    }
    let mut out = f.clone();
    out.ifft_into(coeffs);
    Ok(out)
}

/// The symbol `(1 - |xi|^2)_+^alpha` as a function of `|xi|^2`.
///
/// For negative `alpha` (used by the focusing experiment below the critical
/// line) lattice points within 1e-12 of the unit sphere are sent to zero to
/// keep the singular symbol finite.
pub fn bochner_riesz_symbol(xi_norm_sq: f64, alpha: f64) -> f64 {
    let s = 1.0 - xi_norm_sq;
    if s <= 0.0 {
        0.0
    } else if alpha == 0.0 {
        1.0
    } else if alpha < 0.0 && s < 1e-12 {
        0.0
    } else {
        s.powf(alpha)
    }
}

/// Whether the evaluation multiplies by the cutoff `a_{lambda,R}`.
pub enum Cutoff<'a> {
    Off,
    On(&'a CutoffAlr),
}

fn max_offset_over_box(p: &SpaceTimePoint, domain: &AxisBox) -> f64 {
    // |x - t w| is convex in w, so the max over a box is at a corner.
    domain
        .corners()
        .iter()
        .map(|c| {
            p.x.iter()
                .zip(c)
                .map(|(xi, wi)| {
                    let d = xi - p.t * wi;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn nyquist_check(pf: &PhaseField, points: &[SpaceTimePoint], g: &GridFunction) -> Result<()> {
    let lambda = pf.lambda();
    for p in points {
        let m = max_offset_over_box(p, &g.domain);
        let grad = lambda * m / (lambda * lambda + m * m).sqrt();
        for ax in 0..g.dim() {
            let h = g.domain.side(ax) / g.shape[ax] as f64;
            let osc = TWO_PI * grad * h;
            if osc > std::f64::consts::FRAC_PI_2 {
                return Err(Error::Resolution(format!(
                    "oscillation per cell {osc:.3} rad > pi/2 on axis {ax}; \
                     need >= {} samples",
                    (4.0 * grad * g.domain.side(ax)).ceil()
                )));
            }
        }
    }
    Ok(())
}

/// `H^lambda g(x) = int e^{2 pi i phi(x; w)} g(w) dw` by the tensor
/// trapezoid rule on `g`'s own grid, optionally multiplied by the cutoff.
///
/// Fails with a resolution error when `g`'s grid cannot resolve the phase
/// oscillation at one of the requested points.
pub fn eval_h_lambda(
    pf: &PhaseField,
    g: &GridFunction,
    points: &[SpaceTimePoint],
    cutoff: Cutoff,
) -> Result<Vec<Complex64>> {
    for p in points {
        if p.t == 0.0 {
            return Err(Error::Domain("H^lambda evaluated at t = 0".into()));
        }
        if p.x.len() != g.dim() {
            return Err(Error::Shape("point/grid dimension mismatch".into()));
        }
    }
    nyquist_check(pf, points, g)?;
    let mut nodes = Vec::with_capacity(g.len());
    for_each_index(&g.shape, |idx, _| nodes.push(g.node(idx)));
    let w = g.cell_volume();
    let out: Vec<Complex64> = points
        .par_iter()
        .map(|p| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (node, val) in nodes.iter().zip(&g.samples) {
                if val.norm_sqr() == 0.0 {
                    continue;
                }
                let ph = pf.phase(p, node).expect("t != 0 checked above");
                acc += val * Complex64::from_polar(1.0, TWO_PI * ph);
            }
            acc *= w;
            if let Cutoff::On(c) = &cutoff {
                acc *= c.eval(p);
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Carleson-Sjolin form: `S f(x) = int e^{2 pi i lambda |x-y|} a(x-y) f(y) dy`
/// over `f`'s grid on a box in `R^n`.
pub fn eval_s_lambda<A>(
    f: &GridFunction,
    amplitude: A,
    lambda: f64,
    points: &[Vec<f64>],
) -> Result<Vec<Complex64>>
where
    A: Fn(&[f64]) -> f64 + Sync,
{
    for ax in 0..f.dim() {
        let h = f.domain.side(ax) / f.shape[ax] as f64;
        if TWO_PI * lambda * h > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Resolution(format!(
                "kernel e^(2 pi i lambda |x-y|) needs >= {} samples on axis {ax}",
                (4.0 * lambda * f.domain.side(ax)).ceil()
            )));
        }
    }
    let mut nodes = Vec::with_capacity(f.len());
    for_each_index(&f.shape, |idx, _| nodes.push(f.node(idx)));
    let w = f.cell_volume();
    Ok(points
        .par_iter()
        .map(|x| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut diff = vec![0.0; x.len()];
            for (y, val) in nodes.iter().zip(&f.samples) {
                if val.norm_sqr() == 0.0 {
                    continue;
                }
                let mut d2 = 0.0;
                for i in 0..x.len() {
                    diff[i] = x[i] - y[i];
                    d2 += diff[i] * diff[i];
                }
                let a = amplitude(&diff);
                if a == 0.0 {
                    continue;
                }
                acc += val * a * Complex64::from_polar(1.0, TWO_PI * lambda * d2.sqrt());
            }
            acc * w
        })
        .collect())
}

/// Frozen-variable form: `(S-bar g)(u, t) =
/// int e^{2 pi i phi(u, t; w)} a(u/l - t w/l, t/l, w) g(w) dw`.
pub fn eval_s_bar<A>(
    pf: &PhaseField,
    amplitude: A,
    g: &GridFunction,
    points: &[SpaceTimePoint],
) -> Result<Vec<Complex64>>
where
    A: Fn(&[f64], f64, &[f64]) -> f64 + Sync,
{
    nyquist_check(pf, points, g)?;
    let lambda = pf.lambda();
    let mut nodes = Vec::with_capacity(g.len());
    for_each_index(&g.shape, |idx, _| nodes.push(g.node(idx)));
    let w = g.cell_volume();
    Ok(points
        .par_iter()
        .map(|p| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut z1 = vec![0.0; p.x.len()];
            for (node, val) in nodes.iter().zip(&g.samples) {
                if val.norm_sqr() == 0.0 {
                    continue;
                }
                for i in 0..p.x.len() {
                    z1[i] = p.x[i] / lambda - p.t * node[i] / lambda;
                }
                let a = amplitude(&z1, p.t / lambda, node);
                if a == 0.0 {
                    continue;
                }
                let ph = pf.phase(p, node).expect("t != 0");
                acc += val * a * Complex64::from_polar(1.0, TWO_PI * ph);
            }
            acc * w
        })
        .collect())
}

/// Max over `t_samples` of the slice ratio
/// `|| a_{lambda,R} H g (., t) ||_2 / || g ||_2`, computed by quadrature on
/// the spatial slice `[-2 lambda_R, 2 lambda_R]^{n-1}`.
pub fn l2_bound_check(
    pf: &PhaseField,
    g: &GridFunction,
    k: u32,
    r_scale: f64,
    t_samples: &[f64],
) -> Result<f64> {
    let cutoff = CutoffAlr::new(pf, k, r_scale, g.dim())?;
    let g_norm = g.l2_norm();
    if g_norm == 0.0 {
        return Ok(0.0);
    }
    let lambda = pf.lambda();
    let mut worst: f64 = 0.0;
    for &t in t_samples {
        if t == 0.0 {
            return Err(Error::Domain("slice at t = 0".into()));
        }
        // spatial frequency of H(.,t) is at most lambda/t cycles per unit
        let h = (t.abs() / (8.0 * lambda)).min(0.5);
        let half = cutoff.outer.hi[0];
        let steps = ((2.0 * half) / h).ceil() as usize;
        let d = g.dim();
        let mut shape = vec![steps; d];
        // keep slice quadrature tractable in higher dimensions
        if d > 1 {
            let max_total = 1 << 22;
            let mut total: usize = shape.iter().product();
            while total > max_total {
                for s in shape.iter_mut() {
                    *s = (*s + 1) / 2;
                }
                total = shape.iter().product();
            }
        }
        let slice_box = AxisBox::centered(d, half);
        let mut points = Vec::new();
        for_each_index(&shape, |idx, _| {
            let x: Vec<f64> = (0..d)
                .map(|ax| slice_box.lo[ax] + slice_box.side(ax) * (idx[ax] as f64 + 0.5) / shape[ax] as f64)
                .collect();
            points.push(SpaceTimePoint::new(x, t));
        });
        let vals = eval_h_lambda(pf, g, &points, Cutoff::On(&cutoff))?;
        let cell: f64 = (0..d).map(|ax| slice_box.side(ax) / shape[ax] as f64).product();
        let norm = (vals.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell).sqrt();
        worst = worst.max(norm / g_norm);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mode(shape: Vec<usize>, domain: AxisBox, k: Vec<i64>) -> GridFunction {
        // DFT bin k on the box has physical frequency k / side
        let sides: Vec<f64> = (0..domain.dim()).map(|ax| domain.side(ax)).collect();
        GridFunction::from_fn(shape, domain, |p| {
            let mut ph = 0.0;
            for (i, kk) in k.iter().enumerate() {
                ph += *kk as f64 * p[i] / sides[i];
            }
            Complex64::from_polar(1.0, TWO_PI * ph)
        })
    }

    #[test]
    fn bochner_riesz_on_single_modes() {
        // |xi| = 0 -> unchanged
        let domain = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let f = mode(vec![16, 16], domain.clone(), vec![0, 0]);
        let out = apply_bochner_riesz(&f, 1.5).unwrap();
        for (a, b) in f.samples.iter().zip(&out.samples) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
        }

        // |xi| >= 1 -> zero
        let f = mode(vec![16, 16], domain.clone(), vec![1, 1]);
        let out = apply_bochner_riesz(&f, 1.0).unwrap();
        assert!(out.samples.iter().all(|z| z.norm() < 1e-12));

        // |xi|^2 = 0.5, alpha = 1 -> 0.5 f  (box side 2 gives xi = k/2)
        let domain2 = AxisBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let f = mode(vec![16, 16], domain2, vec![1, 1]); // xi = (1/2, 1/2)
        let out = apply_bochner_riesz(&f, 1.0).unwrap();
        for (a, b) in f.samples.iter().zip(&out.samples) {
            assert_relative_eq!(b.re, 0.5 * a.re, epsilon = 1e-10);
            assert_relative_eq!(b.im, 0.5 * a.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn bochner_riesz_is_diagonal_composition() {
        // applying alpha1 then alpha2 equals the pointwise product multiplier
        let domain = AxisBox::new(vec![0.0], vec![4.0]).unwrap();
        let f = GridFunction::from_fn(vec![64], domain, |p| {
            Complex64::new((TWO_PI * p[0] / 4.0).sin() + 0.3, 0.1 * p[0])
        });
        let a = apply_bochner_riesz(&apply_bochner_riesz(&f, 0.7).unwrap(), 1.1).unwrap();
        // product multiplier (1-s)^0.7 (1-s)^1.1 = (1-s)^1.8
        let b = apply_bochner_riesz(&f, 1.8).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_relative_eq!(x.re, y.re, epsilon = 1e-10);
            assert_relative_eq!(x.im, y.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn h_lambda_zero_and_delta() {
        let pf = PhaseField::new(32.0, 4.0).unwrap();
        let domain = AxisBox::unit(1);
        let g = GridFunction::zeros(vec![256], domain.clone());
        let pts = vec![SpaceTimePoint::new(vec![3.0], 16.0)];
        let out = eval_h_lambda(&pf, &g, &pts, Cutoff::Off).unwrap();
        assert_eq!(out[0], Complex64::new(0.0, 0.0));

        // single-cell g integrates to w * e^{2 pi i phi(x; w0)}
        let mut g = GridFunction::zeros(vec![4096], domain);
        let idx = 1024;
        let cell = g.cell_volume();
        let weight = 0.7;
        g.samples[idx] = Complex64::new(weight / cell, 0.0);
        let omega0 = g.node(&[idx]);
        let p = SpaceTimePoint::new(vec![5.0], 20.0);
        let out = eval_h_lambda(&pf, &g, &[p.clone()], Cutoff::Off).unwrap();
        let expect = Complex64::from_polar(weight, TWO_PI * pf.phase(&p, &omega0).unwrap());
        assert!(
            (out[0] - expect).norm() / expect.norm() <= 1e-3,
            "one-point oracle off: {} vs {}",
            out[0],
            expect
        );
    }

    #[test]
    fn h_lambda_modulus_invariance_under_global_phase() {
        let pf = PhaseField::new(16.0, 4.0).unwrap();
        let domain = AxisBox::unit(1);
        let g = GridFunction::from_fn(vec![128], domain.clone(), |p| {
            Complex64::new((TWO_PI * p[0]).sin(), 0.2)
        });
        let rotated = GridFunction::new(
            g.shape.clone(),
            g.samples
                .iter()
                .map(|z| z * Complex64::from_polar(1.0, 1.234))
                .collect(),
            domain,
        )
        .unwrap();
        let pts = vec![
            SpaceTimePoint::new(vec![1.0], 8.0),
            SpaceTimePoint::new(vec![-2.0], 30.0),
        ];
        let a = eval_h_lambda(&pf, &g, &pts, Cutoff::Off).unwrap();
        let b = eval_h_lambda(&pf, &rotated, &pts, Cutoff::Off).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.norm(), y.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn h_lambda_rejects_coarse_grids() {
        let pf = PhaseField::new(512.0, 4.0).unwrap();
        let g = GridFunction::from_fn(vec![16], AxisBox::unit(1), |_| Complex64::new(1.0, 0.0));
        let pts = vec![SpaceTimePoint::new(vec![400.0], 200.0)];
        match eval_h_lambda(&pf, &g, &pts, Cutoff::Off) {
            Err(Error::Resolution(_)) => {}
            other => panic!("expected resolution error, got {other:?}"),
        }
    }

    #[test]
    fn s_bar_one_point_oracle() {
        let pf = PhaseField::new(8.0, 4.0).unwrap();
        let mut g = GridFunction::zeros(vec![2048], AxisBox::unit(1));
        let idx = 512;
        let cell = g.cell_volume();
        g.samples[idx] = Complex64::new(1.0 / cell, 0.0);
        let omega0 = g.node(&[idx]);
        let p = SpaceTimePoint::new(vec![2.0], 6.0);
        let amp = |_: &[f64], t: f64, _: &[f64]| if t.abs() > 0.1 { 1.0 } else { 0.0 };
        let out = eval_s_bar(&pf, amp, &g, &[p.clone()]).unwrap();
        let expect = Complex64::from_polar(1.0, TWO_PI * pf.phase(&p, &omega0).unwrap());
        assert!((out[0] - expect).norm() <= 1e-3);
    }

    #[test]
    fn s_lambda_zero_input() {
        let f = GridFunction::zeros(vec![32, 32], AxisBox::centered(2, 1.0));
        let out = eval_s_lambda(&f, |_| 1.0, 4.0, &[vec![0.3, 0.4]]).unwrap();
        assert_eq!(out[0], Complex64::new(0.0, 0.0));
    }
}
