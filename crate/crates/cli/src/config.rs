//! Run configuration: a JSON file merged with command-line overrides.
//! Every key has a flag of the same name (underscores become dashes).

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use imgtransport::energy::ElasticParams;
use imgtransport::fe::Boundary;
use imgtransport::geodesic::{ModelParams, Tolerances};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryArg {
    Dirichlet,
    Periodic,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Dirichlet => Boundary::DirichletIdentity,
            BoundaryArg::Periodic => Boundary::Periodic,
        }
    }
}

/// How intensities map to 8-bit pixels on output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Display {
    /// Clamp to `[0, 1]`, then scale by 255.
    #[default]
    Clamp,
    /// `(v - min) / (max - min)` per image.
    Rescale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyCase {
    /// Accelerating Gaussian bump on a periodic grid.
    Bump,
    /// `u = 1 + t x_1` at rest on a Dirichlet grid; the discretization is exact.
    Linear,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input images (PGM P2/P5 or grayscale PNG).
    #[arg(value_name = "IMAGE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<PathBuf>>,
    /// Barycenter weights, comma separated; must sum to 1.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_elastic: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_elastic: Option<f64>,
    /// Number of time steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Grid levels of the coarse-to-fine cascade, ending at the input resolution.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    /// Outer sweeps per cascade stage.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ncg_grad_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ncg_max_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcg_rel_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcg_max_iters: Option<usize>,
    /// Stop a stage once the image increment drops below this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stall_tol: Option<f64>,
    /// Keep intensities nonnegative.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonnegative: Option<bool>,
    /// Also write the per-step source images z_k.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit_source: Option<bool>,
    /// Resample inputs whose size is not (2^L+1) x (2^L+1).
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample: Option<bool>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<Display>,
    /// Output directory, replaced atomically on success.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Barycenter: also sweep the weight triangle with step 1/N (three inputs).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triangle: Option<usize>,
    /// BB: number of time intervals.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    /// BB: augmentation parameter.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// BB: stop once the primal residual drops below this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bb_tol: Option<f64>,
    /// BB: times in [0, 1] at which to write slices (default: all).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<ConsistencyCase>,
    /// Consistency: values of K.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_k: Option<usize>,
    /// Consistency: grid level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

macro_rules! merge_fields {
    ($base:ident, $over:ident; $($f:ident),* $(,)?) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        let base = self;
        merge_fields!(base, over;
            inputs, weights, delta, gamma, lambda_elastic, mu_elastic, k, levels, sweeps, boundary,
            ncg_grad_tol, ncg_max_iters, pcg_rel_tol, pcg_max_iters, stall_tol, nonnegative,
            emit_source, resample, display, out, threads, triangle, nt, r, max_iters, bb_tol, times,
            case, ks, reference_k, level)
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(0.1)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(0.1)
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(4)
    }

    pub fn levels(&self) -> u32 {
        self.levels.unwrap_or(1)
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary.unwrap_or(BoundaryArg::Dirichlet).into()
    }

    pub fn display(&self) -> Display {
        self.display.unwrap_or_default()
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn nonnegative(&self) -> bool {
        self.nonnegative.unwrap_or(false)
    }

    pub fn emit_source(&self) -> bool {
        self.emit_source.unwrap_or(false)
    }

    pub fn resample(&self) -> bool {
        self.resample.unwrap_or(false)
    }

    pub fn inputs(&self) -> &[PathBuf] {
        self.inputs.as_deref().unwrap_or(&[])
    }

    /// Exactly `n` input paths.
    pub fn expect_inputs(&self, n: usize) -> Result<&[PathBuf], ConfigError> {
        let inputs = self.inputs();
        if inputs.len() != n {
            return Err(invalid(format!("expected {n} input images, got {}", inputs.len())));
        }
        Ok(inputs)
    }

    pub fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            ncg_grad_tol: self.ncg_grad_tol.unwrap_or(d.ncg_grad_tol),
            ncg_max_iters: self.ncg_max_iters.unwrap_or(d.ncg_max_iters),
            pcg_rel_tol: self.pcg_rel_tol.unwrap_or(d.pcg_rel_tol),
            pcg_max_iters: self.pcg_max_iters.unwrap_or(d.pcg_max_iters),
            outer_max_sweeps: self.sweeps.unwrap_or(d.outer_max_sweeps),
            outer_stall_tol: self.stall_tol.unwrap_or(d.outer_stall_tol),
        }
    }

    pub fn model_params(&self, boundary: Boundary) -> Result<ModelParams, ConfigError> {
        let d = ElasticParams::default();
        let elastic = ElasticParams::new(self.lambda_elastic.unwrap_or(d.lambda), self.mu_elastic.unwrap_or(d.mu))
            .map_err(|e| invalid(e.to_string()))?;
        let p = ModelParams {
            delta: self.delta(),
            gamma: self.gamma(),
            elastic,
            k: self.k(),
            boundary,
            tolerances: self.tolerances(),
            parallel: self.threads.map_or(true, |n| n != 1),
        };
        p.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(p)
    }

    /// Weights for `m` inputs (uniform when absent), checked to sum to one.
    pub fn weights(&self, m: usize) -> Result<Vec<f64>, ConfigError> {
        let w = self.weights.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
        if w.len() != m {
            return Err(invalid(format!("{} weights given for {m} inputs", w.len())));
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("weights must be nonnegative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("weights must sum to 1, got {sum}")));
        }
        Ok(w)
    }

    /// Checks shared by every subcommand, run before any input is read.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_params(self.boundary())?;
        if self.levels() == 0 {
            return Err(invalid("levels must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1"));
        }
        if let Some(w) = &self.weights {
            self.weights(w.len())?;
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid(format!("r must be positive, got {r}")));
            }
        }
        if let Some(t) = self.bb_tol {
            if !(t > 0.0) {
                return Err(invalid(format!("bb_tol must be positive, got {t}")));
            }
        }
        if let Some(times) = &self.times {
            if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(invalid("times must lie in [0, 1]"));
            }
        }
        if self.nt.is_some_and(|n| n < 2) {
            return Err(invalid("nt must be at least 2"));
        }
        if self.triangle == Some(0) {
            return Err(invalid("triangle needs a positive step count"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"delta": 0.1, "detla": 2}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"delta": 0.5, "boundary": "periodic"}"#).unwrap();
        assert_eq!(c.delta, Some(0.5));
        assert_eq!(c.boundary(), Boundary::Periodic);
    }

    #[test]
    fn overrides_win() {
        let file = RunConfig { delta: Some(0.5), gamma: Some(2.0), ..Default::default() };
        let flags = RunConfig { delta: Some(0.25), ..Default::default() };
        let c = file.merge(flags);
        assert_eq!((c.delta(), c.gamma()), (0.25, 2.0));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = [
            RunConfig { delta: Some(0.0), ..Default::default() },
            RunConfig { delta: Some(-1.0), ..Default::default() },
            RunConfig { gamma: Some(-0.1), ..Default::default() },
            RunConfig { weights: Some(vec![0.5, 0.6]), ..Default::default() },
            RunConfig { weights: Some(vec![1.5, -0.5]), ..Default::default() },
            RunConfig { k: Some(0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig::default().weights(4).unwrap(), vec![0.25; 4]);
    }
}
