//! Decoupling scan: curvature of the frequency surface swept by the phase
//! gradient, and an empirical decoupling ratio over caps.

use super::config::ExperimentConfig;
use super::report::ReportRow;
use crate::error::{Error, Result};
use crate::grid::{for_each_index, AxisBox, GridFunction};
use crate::operators::{eval_h_lambda, Cutoff};
use crate::phase::{PhaseField, SpaceTimePoint};
use crate::rng;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Hessian `d^2_w < grad_x,t phi(x0; w), (w0, 1) >` at `w = w0` by central
/// second differences of the closed-form gradient.
fn surface_hessian(
    pf: &PhaseField,
    x0: &SpaceTimePoint,
    omega0: &[f64],
) -> Result<DMatrix<f64>> {
    let d = omega0.len();
    let mut normal = omega0.to_vec();
    normal.push(1.0);
    let f = |w: &[f64]| -> Result<f64> {
        let g = pf.phase_grad_xt(x0, w)?;
        Ok(g.iter().zip(&normal).map(|(a, b)| a * b).sum())
    };
    let h = 1e-4;
    let f0 = f(omega0)?;
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                let mut wp = omega0.to_vec();
                let mut wm = omega0.to_vec();
                wp[i] += h;
                wm[i] -= h;
                m[(i, i)] = (f(&wp)? - 2.0 * f0 + f(&wm)?) / (h * h);
            } else {
                let mut wpp = omega0.to_vec();
                let mut wpm = omega0.to_vec();
                let mut wmp = omega0.to_vec();
                let mut wmm = omega0.to_vec();
                wpp[i] += h;
                wpp[j] += h;
                wpm[i] += h;
                wpm[j] -= h;
                wmp[i] -= h;
                wmp[j] += h;
                wmm[i] -= h;
                wmm[j] -= h;
                m[(i, j)] = (f(&wpp)? - f(&wpm)? - f(&wmp)? + f(&wmm)?) / (4.0 * h * h);
            }
        }
    }
    Ok(m)
}

pub fn run_decoupling_scan(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    if cfg.n > 3 {
        return Err(Error::Config("decoupling scan runs at n in {2, 3}".into()));
    }
    let lambda = 256.0;
    let pf = PhaseField::new(lambda, cfg.c_n)?;
    let d = cfg.n - 1;
    let mut rows = Vec::new();

    // model point: the Hessian is the identity at x0 = 0, w0 = 0
    {
        let x0 = SpaceTimePoint::new(vec![0.0; d], lambda / 2.0);
        let m = surface_hessian(&pf, &x0, &vec![0.0; d])?;
        let mut defect: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((m[(i, j)] - target).abs());
            }
        }
        rows.push(ReportRow::upper(
            "decouple/model-hessian-identity",
            format!("n={};lambda={lambda}", cfg.n),
            defect,
            1e-5,
        ));
    }

    // positive curvature at random base points
    let mut r = rng::stream(cfg.seed, "decouple-curv", 0);
    let mut min_eig = f64::INFINITY;
    for _ in 0..1000 {
        let t = rng::uniform(&mut r, lambda / cfg.c_n, cfg.c_n * lambda);
        let x = rng::point_in_box(&mut r, &vec![-lambda; d], &vec![lambda; d]);
        let w = rng::point_in_box(&mut r, &vec![0.0; d], &vec![1.0; d]);
        let m = surface_hessian(&pf, &SpaceTimePoint::new(x, t), &w)?;
        let sym = (&m + m.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        for ev in eig.eigenvalues.iter() {
            min_eig = min_eig.min(*ev);
        }
    }
    rows.push(ReportRow::lower(
        "decouple/curvature-positive",
        format!("n={};lambda={lambda};samples=1000;seed={}", cfg.n, cfg.seed),
        min_eig,
        0.0,
    ));

    // empirical decoupling ratio over K caps on a K^2 ball
    let kk = 4usize; // caps of side 1/K
    let p = cfg.p;
    let m_dim = cfg.n;
    let gamma = (m_dim as f64 - 1.0) * (0.5 - 1.0 / p);
    if cfg.n == 2 {
        let t0 = lambda / 2.0;
        let ball_r = (kk * kk) as f64;
        let center = SpaceTimePoint::new(vec![0.0], t0);
        // evaluation grid on the ball
        let steps = 96usize;
        let mut points = Vec::new();
        for_each_index(&[steps, steps], |idx, _| {
            let x = center.x[0] - ball_r + 2.0 * ball_r * (idx[0] as f64 + 0.5) / steps as f64;
            let t = center.t - ball_r + 2.0 * ball_r * (idx[1] as f64 + 0.5) / steps as f64;
            points.push(SpaceTimePoint::new(vec![x], t));
        });
        let cell = (2.0 * ball_r / steps as f64).powi(2);
        let lp = |vals: &[Complex64]| -> f64 {
            (vals.iter().map(|z| z.norm().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
        };
        for (label, active_caps) in [("single-cap", 1usize), ("random-caps", kk)] {
            let mut rr = rng::stream(cfg.seed, "decouple-caps", active_caps as u64);
            let mut fields: Vec<Vec<Complex64>> = Vec::new();
            for cap in 0..active_caps {
                let lo = cap as f64 / kk as f64;
                let hi = lo + 1.0 / kk as f64;
                // random per-cap amplitude and phase, smooth taper at the
                // cap edges
                let amp = rng::uniform(&mut rr, 0.5, 1.5);
                let phase = rng::uniform(&mut rr, 0.0, std::f64::consts::TAU);
                let taper = crate::phase::Bump1D::new(
                    lo,
                    lo + 0.1 / kk as f64,
                    hi - 0.1 / kk as f64,
                    hi,
                )?;
                let g = GridFunction::from_fn(
                    vec![(4.0 * lambda) as usize],
                    AxisBox::unit(1),
                    |w| Complex64::from_polar(amp * taper.eval(w[0]), phase),
                );
                fields.push(eval_h_lambda(&pf, &g, &points, Cutoff::Off)?);
            }
            let mut total = vec![Complex64::new(0.0, 0.0); points.len()];
            let mut rhs = 0.0;
            for f in &fields {
                for (t, v) in total.iter_mut().zip(f) {
                    *t += v;
                }
                rhs += lp(f).powf(p);
            }
            let ratio = lp(&total) / ((kk as f64).powf(gamma) * rhs.powf(1.0 / p));
            let reference = if active_caps == 1 {
                (kk as f64).powf(-gamma) * (1.0 + 1e-6)
            } else {
                4.0
            };
            rows.push(ReportRow::upper(
                &format!("decouple/ratio-{label}"),
                format!("K={kk};p={p};caps={active_caps};seed={}", cfg.seed),
                ratio,
                reference,
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_identity_at_model_point() {
        let pf = PhaseField::new(64.0, 4.0).unwrap();
        let x0 = SpaceTimePoint::new(vec![0.0, 0.0], 32.0);
        let m = surface_hessian(&pf, &x0, &[0.0, 0.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((m[(i, j)] - target).abs() <= 1e-5, "entry ({i},{j}) = {}", m[(i, j)]);
            }
        }
    }
}
