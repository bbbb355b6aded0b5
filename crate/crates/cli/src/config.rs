//! Experiment configuration, presets and the config hash embedded in artifacts.

use std::path::{Path, PathBuf};

use mftransfer::integrate::{IntegratorSpec, Scheme};
use mftransfer::model::ModelSpec;
use mftransfer::sampling::MarginalConvention;
use mftransfer::units::beta_from_kelvin;
use mftransfer::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything that determines a run. Round-trips through TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Inverse temperature in the model's energy unit; overrides `temperature`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Kelvin, for models in kJ/mol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub convention: MarginalConvention,
    /// Cells per configuration axis.
    pub grid: Vec<usize>,
    /// Samples per cell for the full operator.
    pub samples: usize,
    /// Samples per cell for the mean-field component maps.
    pub mf_samples: usize,
    pub integrator: IntegratorSpec,
    pub seed: u64,
    /// Number of dominant eigenpairs to extract.
    pub eigenpairs: usize,
    pub roothaan_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_order: Option<Vec<usize>>,
    pub table_refine: usize,
    /// Product selections: per subsystem, 0 for the invariant factor or k for
    /// the eigenvector at the (k+1)-th largest eigenvalue.
    pub products: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// United-atom butane at 300 K on a 32³ grid, K = 32, T = 0.05 ps in 10
    /// explicit Euler steps, 10 sweeps.
    pub fn butane() -> Self {
        Self {
            model: ModelSpec::from_preset("butane_ua").expect("known preset"),
            beta: None,
            temperature: Some(300.0),
            convention: MarginalConvention::Boltzmann,
            grid: vec![32, 32, 32],
            samples: 32,
            mf_samples: 1024,
            integrator: IntegratorSpec::euler(10, 0.05),
            seed: 1,
            eigenpairs: 4,
            roothaan_iters: 10,
            sweep_order: None,
            table_refine: 2,
            products: vec![vec![0, 0, 1], vec![0, 0, 2]],
            output_dir: None,
        }
    }

    /// Coupled 2D double well at β = 1 on a 32² grid, K = 32, T = 1 in 20 RK4 steps.
    pub fn double_well_2d() -> Self {
        Self {
            model: ModelSpec::from_preset("double_well_2d").expect("known preset"),
            beta: Some(1.0),
            temperature: None,
            convention: MarginalConvention::Boltzmann,
            grid: vec![32, 32],
            samples: 32,
            mf_samples: 1024,
            integrator: IntegratorSpec::rk4(20, 1.0),
            seed: 1,
            eigenpairs: 4,
            roothaan_iters: 10,
            sweep_order: None,
            table_refine: 2,
            products: vec![vec![1, 0], vec![0, 1], vec![1, 1]],
            output_dir: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "butane" | "butane_ua" => Ok(Self::butane()),
            "double_well_2d" | "2d" => Ok(Self::double_well_2d()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build();
        if self.grid.len() != model.dim() || self.grid.contains(&0) {
            return Err(Error::Config(format!(
                "grid {:?} does not fit a {}-dimensional model",
                self.grid,
                model.dim()
            )));
        }
        if self.samples == 0 || self.mf_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.eigenpairs == 0 || self.roothaan_iters == 0 || self.table_refine == 0 {
            return Err(Error::Config(
                "eigenpairs, roothaan_iters and table_refine must be positive".into(),
            ));
        }
        self.integrator
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let n = model.layout().len();
        for p in &self.products {
            if p.len() != n {
                return Err(Error::Config(format!(
                    "product selection {p:?} needs one entry per subsystem ({n})"
                )));
            }
            if p.iter().any(|&k| k >= self.eigenpairs) {
                return Err(Error::Config(format!(
                    "product selection {p:?} asks for more than {} eigenpairs",
                    self.eigenpairs
                )));
            }
        }
        self.beta()?;
        Ok(())
    }

    pub fn beta(&self) -> Result<f64> {
        let b = match (self.beta, self.temperature) {
            (Some(b), _) => b,
            (None, Some(t)) => beta_from_kelvin(t),
            (None, None) => return Err(Error::Config("set either beta or temperature".into())),
        };
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!(
                "inverse temperature {b} is not positive"
            )));
        }
        Ok(b)
    }

    /// Hex SHA-256 of the canonical TOML form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let text = c.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets the integration time from `"<number>"` in model units or
    /// `"<number>s"` in seconds.
    pub fn set_time(&mut self, text: &str) -> Result<()> {
        let t = parse_time(text, self.model.build().seconds_per_time_unit())?;
        self.integrator.t_final = t;
        Ok(())
    }

    pub fn set_scheme(&mut self, text: &str) -> Result<()> {
        self.integrator.scheme = text
            .parse::<Scheme>()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

pub fn parse_time(text: &str, seconds_per_unit: f64) -> Result<f64> {
    let t = text.trim();
    let (num, scale) = match t.strip_suffix('s') {
        Some(n) => (n, 1.0 / seconds_per_unit),
        None => (t, 1.0),
    };
    num.trim()
        .parse::<f64>()
        .map(|x| x * scale)
        .map_err(|_| Error::Config(format!("cannot parse time {text:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [
            ExperimentConfig::butane(),
            ExperimentConfig::double_well_2d(),
        ] {
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn butane_time_in_seconds_converts_to_picoseconds() {
        let mut cfg = ExperimentConfig::butane();
        cfg.set_time("0.5e-13s").unwrap();
        assert!((cfg.integrator.t_final - 0.05).abs() < 1e-15);
        cfg.set_time("0.1").unwrap();
        assert_eq!(cfg.integrator.t_final, 0.1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::double_well_2d();
        cfg.grid = vec![32];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::double_well_2d();
        cfg.products = vec![vec![1, 9]];
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn hash_ignores_output_directory_but_not_seed() {
        let a = ExperimentConfig::double_well_2d();
        let mut b = a.clone();
        b.output_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
