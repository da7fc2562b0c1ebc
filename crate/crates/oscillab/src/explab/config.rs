//! Experiment configuration: TOML/JSON loading, defaults and validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Ambient dimension `n` (the input side lives in `n-1` variables).
    pub n: usize,
    pub lambda: f64,
    pub r: f64,
    pub rho: f64,
    /// Angular parameter `K` of the broad norm.
    pub big_k: f64,
    /// Broad norm `k` (transversality dimension).
    pub k: usize,
    /// Broad norm `A` (number of excluded subspaces).
    pub a: usize,
    pub p: f64,
    /// Smoothing order for the multiplier experiments.
    pub alpha: f64,
    /// Tube thickening exponent.
    pub delta: f64,
    /// Base of the `delta_m` family (`delta_n`); the family doubles per
    /// level down.
    pub delta_n: f64,
    /// Samples per axis for grid inputs.
    pub grid: usize,
    pub seed: u64,
    /// The `R <= lambda^{1-epsilon}` margin.
    pub epsilon: f64,
    /// `K` of the scale ladder.
    pub scale_k: u32,
    pub c_n: f64,
    /// Partitioning degree.
    pub d: u32,
    /// Point count for partitioning experiments.
    pub points: usize,
    /// Record wall-clock runtimes in emitted rows (off by default so that
    /// reports are byte-identical across reruns).
    pub timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: String::new(),
            n: 2,
            lambda: 4096.0,
            r: 256.0,
            rho: 64.0,
            big_k: 8.0,
            k: 2,
            a: 2,
            p: 4.0,
            alpha: 0.0,
            delta: 0.1,
            delta_n: 0.02,
            grid: 512,
            seed: 7,
            epsilon: 0.1,
            scale_k: 2,
            c_n: 4.0,
            d: 4,
            points: 10_000,
            timings: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > 3 {
            return Err(Error::Config(format!(
                "n = {} unsupported; desk-scale experiments run at n in {{2, 3}}",
                self.n
            )));
        }
        if self.lambda < 1.0 {
            return Err(Error::Config("lambda must be >= 1".into()));
        }
        if self.r < 1.0 {
            return Err(Error::Config("r must be >= 1".into()));
        }
        if self.r > self.lambda.powf(1.0 - self.epsilon) + 1e-9 {
            return Err(Error::Config(format!(
                "scale ordering violated: r = {} exceeds lambda^(1-eps) = {:.1}; \
                 lower r or raise lambda",
                self.r,
                self.lambda.powf(1.0 - self.epsilon)
            )));
        }
        if self.rho < self.r.sqrt() - 1e-9 || self.rho > self.r + 1e-9 {
            return Err(Error::Config(format!(
                "scale ordering violated: need sqrt(r) <= rho <= r, got rho = {}, r = {} \
                 (sqrt(r) = {:.2})",
                self.rho,
                self.r,
                self.r.sqrt()
            )));
        }
        if self.c_n < 1.0 {
            return Err(Error::Config("c_n must be >= 1".into()));
        }
        if self.grid < 8 {
            return Err(Error::Config("grid must have at least 8 samples".into()));
        }
        Ok(())
    }

    /// `delta_m` for dimension `m`: `delta_n` at `m = n`, doubling per level
    /// down (so smaller `m` gets a larger exponent, respecting the ordering
    /// `delta << delta_n << ... << delta_1`).
    pub fn delta_m(&self, m: usize) -> f64 {
        self.delta_n * 2f64.powi((self.n as i32 - m as i32).max(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_orderings() {
        let mut cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        cfg.rho = 10.0; // below sqrt(256) = 16
        assert!(cfg.validate().is_err());
        cfg.rho = 64.0;
        cfg.r = 4000.0; // above lambda^{0.9}
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn delta_family_is_ordered() {
        let cfg = ExperimentConfig {
            n: 3,
            ..Default::default()
        };
        assert!(cfg.delta_m(3) < cfg.delta_m(2));
        assert!(cfg.delta_m(2) < cfg.delta_m(1));
        assert_eq!(cfg.delta_m(3), cfg.delta_n);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.lambda, cfg.lambda);
        assert_eq!(back.seed, cfg.seed);
    }
}
