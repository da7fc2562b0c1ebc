//! Focusing (Knapp-type) experiment for the Bochner-Riesz multiplier: a
//! single thin frequency cap, tracked across dyadic scales on either side
//! of the critical line `alpha = n(1/2 - 1/p) - 1/2`.

use super::config::ExperimentConfig;
use super::report::ReportRow;
use crate::error::{Error, Result};
use crate::grid::{for_each_index, AxisBox, GridFunction};
use crate::operators::bochner_riesz_symbol;
use crate::phase::Bump1D;
use num_complex::Complex64;

pub fn critical_alpha(n: usize, p: f64) -> f64 {
    n as f64 * (0.5 - 1.0 / p) - 0.5
}

/// Cap-adapted input at scale `delta`: a smooth frequency bump of width
/// `delta` (tangential) by `delta^2` (radial), seated inside the unit ball
/// below the north pole.
fn knapp_ratio(n: usize, p: f64, alpha: f64, delta: f64) -> Result<f64> {
    if n != 2 {
        return Err(Error::Config("knapp experiment runs at n = 2".into()));
    }
    // anisotropic box sized to the cap's dual extents
    let l1 = (4.0 / delta).max(16.0);
    let l2 = (4.0 / (delta * delta)).max(16.0);
    let n1 = (4.0 * l1) as usize;
    let n2 = (4.0 * l2) as usize;
    if n1 * n2 > 1 << 24 {
        return Err(Error::Resolution(format!(
            "cap at delta = {delta} needs a {n1} x {n2} grid; too fine for desk scale"
        )));
    }
    let domain = AxisBox::new(vec![0.0, 0.0], vec![l1, l2])?;
    // cap center: depth 2 delta^2 inside the sphere along axis 2
    let center = (0.0, 1.0 - 2.0 * delta * delta);
    let half1 = 0.5 * delta;
    let half2 = 0.5 * delta * delta;
    // resolution check: the radial thickness must span >= 4 frequency cells
    let cell2 = 1.0 / l2;
    if 2.0 * half2 < 4.0 * cell2 {
        return Err(Error::Resolution(format!(
            "cap thickness {:.2e} thinner than 4 frequency cells {:.2e}",
            2.0 * half2,
            4.0 * cell2
        )));
    }
    let bump1 = Bump1D::new(-half1, -0.6 * half1, 0.6 * half1, half1)?;
    let bump2 = Bump1D::new(-half2, -0.6 * half2, 0.6 * half2, half2)?;

    // assemble f-hat on the frequency lattice, then invert
    let shape = vec![n1, n2];
    let mut f = GridFunction::zeros(shape.clone(), domain);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); f.len()];
    for_each_index(&shape, |idx, flat| {
        let xi1 = signed_freq(idx[0], n1) / l1;
        let xi2 = signed_freq(idx[1], n2) / l2;
        let v = bump1.eval(xi1 - center.0) * bump2.eval(xi2 - center.1);
        if v != 0.0 {
            coeffs[flat] = Complex64::new(v, 0.0);
        }
    });
    f.ifft_into(coeffs.clone());
    let norm_f = lp_norm(&f, p);
    if norm_f == 0.0 {
        return Err(Error::Degenerate("zero cap input".into()));
    }
    // multiply by the Bochner-Riesz symbol on the same lattice
    let mut out_coeffs = coeffs;
    for_each_index(&shape, |idx, flat| {
        let xi1 = signed_freq(idx[0], n1) / l1;
        let xi2 = signed_freq(idx[1], n2) / l2;
        out_coeffs[flat] *= bochner_riesz_symbol(xi1 * xi1 + xi2 * xi2, alpha);
    });
    let mut out = GridFunction::zeros(shape, f.domain.clone());
    out.ifft_into(out_coeffs);
    Ok(lp_norm(&out, p) / norm_f)
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = k as i64;
    let n = n as i64;
    (if k <= n / 2 { k } else { k - n }) as f64
}

fn lp_norm(g: &GridFunction, p: f64) -> f64 {
    let cell = g.cell_volume();
    (g.samples.iter().map(|z| z.norm().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
}

pub fn run_knapp(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let p = cfg.p;
    let n = cfg.n;
    let crit = critical_alpha(n, p);
    let scales = [0.25, 0.125, 0.0625];
    let mut rows = Vec::new();
    for (label, alpha, expect_decreasing) in [
        ("above", crit + 0.3, true),
        ("below", crit - 0.2, false),
    ] {
        let mut ratios = Vec::new();
        for &delta in &scales {
            let ratio = knapp_ratio(n, p, alpha, delta)?;
            rows.push(ReportRow {
                experiment: format!("knapp/ratio-{label}"),
                parameters: format!("n={n};p={p};alpha={alpha:.4};delta={delta}"),
                measured: ratio,
                reference: 0.0,
                pass: true,
                runtime_s: 0.0,
            });
            ratios.push(ratio);
        }
        // monotonicity across shrinking delta
        let diffs: Vec<f64> = ratios.windows(2).map(|w| w[1] - w[0]).collect();
        let row = if expect_decreasing {
            // ratios along shrinking delta must not increase
            let worst = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ReportRow::upper(
                &format!("knapp/monotone-{label}"),
                format!("n={n};p={p};alpha={alpha:.4};scales=3"),
                worst,
                0.0,
            )
        } else {
            // strictly increasing toward small delta
            let worst = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
            ReportRow::lower(
                &format!("knapp/monotone-{label}"),
                format!("n={n};p={p};alpha={alpha:.4};scales=3"),
                worst,
                0.0,
            )
        };
        rows.push(row);
    }
    Ok(rows)
}
