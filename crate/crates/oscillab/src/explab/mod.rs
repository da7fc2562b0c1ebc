//! The experiment harness: configuration, per-lemma experiment drivers, and
//! deterministic report emission.
//!
//! Each driver takes an [`ExperimentConfig`] and returns [`ReportRow`]s whose
//! verdicts derive solely from the numbers they carry. With the default
//! `timings = false`, reruns with the same seed are byte-identical.

pub mod config;
pub mod decouple;
pub mod exponents_exp;
pub mod knapp;
pub mod partition_exp;
pub mod report;
pub mod rescale;
pub mod transequi;
pub mod wavepackets;

pub use config::ExperimentConfig;
pub use report::{emit, emit_plotscript, parse_json, render, Format, ReportRow};

use crate::error::{Error, Result};
use std::time::Instant;

/// Cap the rayon worker count from `OSCILLAB_THREADS` (call once, early).
pub fn init_threads() {
    if let Ok(v) = std::env::var("OSCILLAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

/// Run one named experiment. Runtimes are stamped on the rows only when
/// `cfg.timings` is set, keeping default reports reproducible.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let start = Instant::now();
    let mut rows = match name {
        "knapp" => knapp::run_knapp(cfg)?,
        "wavepackets" => wavepackets::run_wavepacket_suite(cfg)?,
        "transequi" => transequi::run_transverse_equidistribution(cfg)?,
        "rescale" => rescale::run_parabolic_rescale(cfg)?,
        "decouple" => decouple::run_decoupling_scan(cfg)?,
        "partition" => partition_exp::run_partition_suite(cfg)?,
        "exponents" => exponents_exp::run_exponents(cfg)?,
        other => {
            return Err(Error::Config(format!(
                "unknown experiment '{other}'; expected one of knapp, wavepackets, \
                 transequi, rescale, decouple, partition, exponents"
            )))
        }
    };
    if cfg.timings {
        let elapsed = start.elapsed().as_secs_f64();
        for r in rows.iter_mut() {
            r.runtime_s = elapsed;
        }
    }
    Ok(rows)
}
