//! Run configuration: a single JSON document with the problem constants,
//! the curvature profile, the list of `k` values and command options.

use std::path::{Path, PathBuf};

use bubble_reduction_core::{KProfile, ProblemParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Curvature profile descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ProfileSpec {
    /// `K(r) = 1 - c₀|r - r₀|^m` near `r₀`, built from `params`.
    #[default]
    LocalMax,
    /// `K ≡ value`.
    Constant { value: f64 },
    /// `K(r) = 1 + slope · r / (1 + r)`.
    Monotone { slope: f64 },
}

impl ProfileSpec {
    pub fn build(&self, params: &ProblemParams) -> Result<KProfile, CliError> {
        let profile = match *self {
            Self::LocalMax => KProfile::local_max(params),
            Self::Constant { value } => KProfile::constant(value)?,
            Self::Monotone { slope } => KProfile::monotone(slope)?,
        };
        Ok(profile)
    }

    /// Short name used in table rows.
    pub fn label(&self) -> &'static str {
        match self {
            Self::LocalMax => "local_max",
            Self::Constant { .. } => "constant",
            Self::Monotone { .. } => "monotone",
        }
    }
}

/// Command options and verdict tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Monte-Carlo draws per constant.
    pub mc_samples: usize,
    /// Oracle agreement threshold in standard errors.
    pub z_threshold: f64,
    /// Residual verdict: slope must not exceed `-m/2 + slope_margin`.
    pub slope_margin: f64,
    /// Points per ray scan in sampled norms.
    pub per_ray: usize,
    /// Exponent `θ̄` of the critical-point box.
    pub theta_bar: f64,
    /// Smallest `k` accepted by the critical-point search.
    pub k_min: usize,
    /// Picard iteration cap.
    pub max_iter: usize,
    /// Picard tolerance in `‖·‖*`.
    pub tol: f64,
    /// Refinement level of the collocation grid.
    pub collocation_level: usize,
    /// Slope of the monotone profile in the Kazdan-Warner check.
    pub kw_slope: f64,
    /// Lower bound for the normalised monotone Kazdan-Warner integral.
    pub kw_threshold: f64,
    /// Required ratio between the shifted and the corrected integral.
    pub kw_ratio: f64,
    /// Samples per auxiliary estimate.
    pub lemma_samples: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            z_threshold: 3.0,
            slope_margin: 0.15,
            per_ray: 16,
            theta_bar: 0.1,
            k_min: 8,
            max_iter: 25,
            tol: 1e-6,
            collocation_level: 1,
            kw_slope: 0.5,
            kw_threshold: 1e-3,
            kw_ratio: 10.0,
            lemma_samples: 2_000,
        }
    }
}

/// A complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ProblemParams,
    #[serde(default)]
    pub profile: ProfileSpec,
    pub k_list: Vec<usize>,
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub options: RunOptions,
}

fn default_refinement() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Range checks beyond those of the problem constants.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.k_list.is_empty() {
            return Err(CliError::Config("k_list must not be empty".into()));
        }
        if self.k_list.contains(&0) {
            return Err(CliError::Config("k_list entries must be positive".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("k_list must be strictly ascending".into()));
        }
        if self.refinement == 0 {
            return Err(CliError::Config("refinement must be at least 1".into()));
        }
        let o = &self.options;
        if o.mc_samples < 2 || o.lemma_samples == 0 || o.per_ray < 2 {
            return Err(CliError::Config(
                "sample counts must be positive (at least 2 draws and 2 points per ray)".into(),
            ));
        }
        if o.max_iter == 0 || o.collocation_level == 0 {
            return Err(CliError::Config(
                "max_iter and collocation_level must be at least 1".into(),
            ));
        }
        let positives = [
            ("z_threshold", o.z_threshold),
            ("theta_bar", o.theta_bar),
            ("tol", o.tol),
            ("kw_threshold", o.kw_threshold),
            ("kw_ratio", o.kw_ratio),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !o.slope_margin.is_finite() {
            return Err(CliError::Config("slope_margin must be finite".into()));
        }
        self.profile.build(&self.params)?;
        Ok(())
    }
}
