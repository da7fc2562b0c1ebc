//! Exponent bookkeeping experiment: exact critical exponents, admissible
//! ranges, exponent tables and the per-step constants.

use super::config::ExperimentConfig;
use super::report::ReportRow;
use crate::broadnorm::{
    bound_range, m_constant, p_critical, p_critical_f64, step_constants, ExponentTable,
    StepParams,
};
use crate::error::Result;
use num_bigint::BigInt;
use num_rational::BigRational;

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn run_exponents(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();

    // p_3(2) = 13/4 exactly
    let exact = p_critical(3, 2)? == rational(13, 4);
    rows.push(ReportRow {
        experiment: "exponents/p-critical-3-2".into(),
        parameters: "n=3;k=2".into(),
        measured: p_critical_f64(3, 2)?,
        reference: 3.25,
        pass: exact,
        runtime_s: 0.0,
    });

    // monotone decreasing in k up to n = 20
    let mut violations = 0usize;
    for n in 4..=20u32 {
        let mut prev = p_critical(n, 2)?;
        for k in 3..=n - 1 {
            let cur = p_critical(n, k)?;
            if cur >= prev {
                violations += 1;
            }
            prev = cur;
        }
    }
    rows.push(ReportRow::upper(
        "exponents/p-critical-monotone",
        "n<=20".into(),
        violations as f64,
        0.0,
    ));

    // bound_range(4,3) = (14/5, 4) exactly
    let (lo, hi) = bound_range(4, 3)?;
    let range_exact = lo == rational(14, 5) && hi == Some(rational(4, 1));
    rows.push(ReportRow {
        experiment: "exponents/bound-range-4-3".into(),
        parameters: "n=4;k=3".into(),
        measured: 2.0 + 4.0 / 5.0,
        reference: 2.8,
        pass: range_exact,
        runtime_s: 0.0,
    });
    let (_, hi2) = bound_range(5, 2)?;
    rows.push(ReportRow {
        experiment: "exponents/bound-range-k2-unbounded".into(),
        parameters: "n=5;k=2".into(),
        measured: if hi2.is_none() { 1.0 } else { 0.0 },
        reference: 1.0,
        pass: hi2.is_none(),
        runtime_s: 0.0,
    });

    // table collapse when all p_i agree: M = (prod D)^{(n-l) delta}
    let table = ExponentTable::new(3, 2, &[cfg.p, cfg.p])?;
    let m = m_constant(&[cfg.r, cfg.rho], &[2.0, 3.0], &table, cfg.delta)?;
    let expect = 6.0f64.powf(cfg.delta);
    rows.push(ReportRow::near(
        "exponents/m-collapse",
        format!("p={};delta={}", cfg.p, cfg.delta),
        m,
        expect,
        1e-12,
    ));

    // step constants at j = 0 are all one
    let params = StepParams {
        n: cfg.n,
        p: cfg.p,
        delta: cfg.delta,
        delta_m: cfg.delta_n,
        c_growth: 1.0,
    };
    let (c1, c2, c3, c4) = step_constants(0, cfg.d as f64, cfg.r, 0, 0, &params)?;
    rows.push(ReportRow::near(
        "exponents/step-constants-j0",
        "j=0".into(),
        c1 * c2 * c3 * c4,
        1.0,
        1e-14,
    ));
    Ok(rows)
}
