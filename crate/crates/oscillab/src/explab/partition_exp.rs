//! Partitioning experiment: the discrete partitioning contracts at the
//! acceptance scales, line-crossing counts, shrunken-cell accounting, and
//! the dichotomy on planted inputs.

use super::config::ExperimentConfig;
use super::report::ReportRow;
use crate::error::Result;
use crate::geom::Variety;
use crate::partition::{
    dichotomy_step, equal_mass_partition, line_cell_crossings, shrunken_cells, DichotomyConfig,
    DichotomyOutcome, WeightedPoints,
};
use crate::rng;

fn uniform_points(count: usize, dim: usize, half: f64, seed: u64) -> WeightedPoints {
    let mut r = rng::stream(seed, "partition-uniform", 0);
    let pts = (0..count)
        .map(|_| rng::point_in_box(&mut r, &vec![-half; dim], &vec![half; dim]))
        .collect();
    WeightedPoints::new(pts, vec![1.0; count]).unwrap()
}

pub fn run_partition_suite(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let dim = 3usize;
    let d = cfg.d.max(2);
    let w = uniform_points(cfg.points, dim, 1.0, cfg.seed);
    let total = w.total_weight();
    let part = equal_mass_partition(&w, d)?;
    let dn = (d as f64).powi(dim as i32);
    let params = format!("n=3;d={d};points={};seed={}", cfg.points, cfg.seed);
    let mut rows = Vec::new();

    rows.push(ReportRow::upper(
        "partition/nonempty-cells",
        params.clone(),
        part.cells.len() as f64,
        8.0 * dn,
    ));
    let maxw = part.cells.iter().map(|c| c.weight).fold(0.0, f64::max);
    rows.push(ReportRow::upper(
        "partition/max-cell-weight",
        params.clone(),
        maxw,
        4.0 / dn * total,
    ));

    // exact FTA property: crossings never exceed deg(P) + 1
    let bound = part.degree() as f64 + 1.0;
    let mut worst = 0usize;
    let mut rr = rng::stream(cfg.seed, "partition-lines", 1);
    for _ in 0..1000 {
        let origin = rng::point_in_box(&mut rr, &[-1.0; 3], &[1.0; 3]);
        let dir = rng::unit_vector(&mut rr, 3);
        worst = worst.max(line_cell_crossings(&part, &origin, &dir, 3.0, 4000));
    }
    rows.push(ReportRow::upper(
        "partition/line-crossings",
        format!("{params};lines=1000;degP={}", part.degree()),
        worst as f64,
        bound,
    ));

    // shrunken cells: retained weight accounting at a desk scale where the
    // wall width r^{1/2+delta} separates from the r/2 cell size
    let scale_r = 1024.0;
    let delta_m = cfg.delta_m(3);
    // extent r keeps the base cells below the r/2 diameter bound, so the
    // wall stays a union of O(d log d) surfaces rather than a refinement
    // forest
    let half = 0.5 * scale_r;
    let w_big = WeightedPoints::new(
        w.points.iter().map(|p| p.iter().map(|x| x * half).collect()).collect(),
        w.weights.clone(),
    )?;
    let part_big = equal_mass_partition(&w_big, d)?;
    let shr = shrunken_cells(&part_big, &w_big, scale_r, delta_m);
    let wall_fraction = 1.0 - shr.retained_weight / total;
    rows.push(ReportRow::upper(
        "partition/wall-fraction",
        format!("{params};r={scale_r};delta_m={delta_m}"),
        wall_fraction,
        0.9,
    ));

    // dichotomy: ambient uniform data is cellular
    let z = Variety::full_space(3);
    let outcome = dichotomy_step(&w_big, &z, d, scale_r, delta_m, &DichotomyConfig::default())?;
    let cellular_ok = matches!(outcome, DichotomyOutcome::Cellular { .. });
    rows.push(ReportRow {
        experiment: "partition/dichotomy-uniform-cellular".into(),
        parameters: params.clone(),
        measured: if cellular_ok { 1.0 } else { 0.0 },
        reference: 1.0,
        pass: cellular_ok,
        runtime_s: 0.0,
    });

    // dichotomy: a planted hyperplane slab is algebraic with high capture
    let mut rs = rng::stream(cfg.seed, "partition-slab", 2);
    let normal = [3.0 / 5.0, 4.0 / 5.0, 0.0];
    let thick = scale_r.powf(0.5 + delta_m);
    let mut pts = Vec::new();
    for _ in 0..cfg.points.min(4000) {
        let u = rng::uniform(&mut rs, -half, half);
        let v = rng::uniform(&mut rs, -half, half);
        let off = rng::uniform(&mut rs, -0.4 * thick, 0.4 * thick);
        pts.push(vec![
            -0.8 * u + normal[0] * off,
            0.6 * u + normal[1] * off,
            v + normal[2] * off,
        ]);
    }
    let len = pts.len();
    let w_slab = WeightedPoints::new(pts, vec![1.0; len])?;
    let outcome = dichotomy_step(&w_slab, &z, d, scale_r, delta_m, &DichotomyConfig::default())?;
    let capture = match outcome {
        DichotomyOutcome::Algebraic { capture, .. } => capture,
        DichotomyOutcome::Cellular { .. } => 0.0,
    };
    rows.push(ReportRow::lower(
        "partition/dichotomy-slab-capture",
        format!("{params};r={scale_r}"),
        capture,
        0.9,
    ));
    Ok(rows)
}
