//! Experiment configuration files (JSON or TOML).
//!
//! Every field is optional; command-line flags override file values, which
//! override the documented defaults. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use coordlab::dist::ErrorDistribution;
use coordlab::netsignal::Branch;
use coordlab::onesignal::{OneSignalGrid, OneSignalParams};
use coordlab::twosignal::{ConditionGrid, TwoSignalParams, SignalGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Benchmark,
    Netsignal,
    Twosignal,
    Onesignal,
    Simulate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Informational; the subcommand decides what runs.
    pub model: Option<Model>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub netsignal: NetSection,
    #[serde(default)]
    pub twosignal: TwoSection,
    #[serde(default)]
    pub onesignal: OneSection,
    #[serde(default)]
    pub simulate: SimSection,
}

/// Defaults: `c = 0.5`, `alpha_x = 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub c: Option<f64>,
    pub alpha_x: Option<f64>,
}

/// Defaults: `theta = 0.25`, `z_star = 0.25`, `alpha_z = 16`, `c = 0.5`,
/// relative branch switch at `0.5`, bifurcation over `[-0.5, 1.5]` with 201
/// points, cutoff scan over `[-12, 12]` with 241 points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub theta: Option<f64>,
    pub z_star: Option<f64>,
    pub alpha_z: Option<f64>,
    pub c: Option<f64>,
    pub branch: Option<Branch>,
    pub theta_min: Option<f64>,
    pub theta_max: Option<f64>,
    pub points: Option<usize>,
    pub z_min: Option<f64>,
    pub z_max: Option<f64>,
    pub scan_points: Option<usize>,
}

/// Defaults: `delta = 0.2`, `gamma = 0.1`, `xi = 1`, `c = 0.5`, normal `x`
/// noise with precision 1 and `y` noise with precision `10⁴`, `t = 0.5`,
/// `sigma = 0.4`, 200 iterations, `sup_tol = 1e-6`, `eta_max = 1 + 10 sd_y`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSection {
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub xi: Option<f64>,
    pub c: Option<f64>,
    pub dist_x: Option<ErrorDistribution>,
    pub dist_y: Option<ErrorDistribution>,
    pub t: Option<f64>,
    pub sigma: Option<f64>,
    pub eta_max: Option<f64>,
    pub max_iter: Option<usize>,
    pub sup_tol: Option<f64>,
    pub grid: Option<SignalGrid>,
    pub condition_grid: Option<ConditionGrid>,
}

/// Defaults: `delta = 0.2`, `gamma = 0.1`, `c = 0.5`, normal noise with
/// precision `10⁴`, `t = 0.5`, 200 iterations, `sup_tol = 1e-10`,
/// `xi_max = 1 + 10 sd`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneSection {
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub dist_rho: Option<ErrorDistribution>,
    pub t: Option<f64>,
    pub xi_max: Option<f64>,
    pub max_iter: Option<usize>,
    pub sup_tol: Option<f64>,
    pub grid: Option<OneSignalGrid>,
    pub condition_grid: Option<ConditionGrid>,
}

/// Defaults: `model = netsignal`, `theta = 0.25`, `n = 100000`, `seed = 42`,
/// `init = 0.5`, `damping = 1`, 50 to 500 rounds, tolerance `3/√n`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub model: Option<Model>,
    pub theta: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<f64>,
    pub damping: Option<f64>,
    pub min_rounds: Option<usize>,
    pub max_rounds: Option<usize>,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    /// Reads a `.json` or `.toml` file; other extensions are sniffed.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let json = match ext {
            "json" => true,
            "toml" => false,
            _ => text.trim_start().starts_with('{'),
        };
        if json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
        }
    }
}

impl TwoSection {
    pub fn params(&self) -> TwoSignalParams {
        let d = TwoSignalParams::example();
        TwoSignalParams {
            delta: self.delta.unwrap_or(d.delta),
            gamma: self.gamma.unwrap_or(d.gamma),
            xi: self.xi.unwrap_or(d.xi),
            c: self.c.unwrap_or(d.c),
            dist_x: self.dist_x.clone().unwrap_or(d.dist_x),
            dist_y: self.dist_y.clone().unwrap_or(d.dist_y),
        }
    }
}

impl OneSection {
    pub fn params(&self) -> OneSignalParams {
        let d = OneSignalParams::example();
        OneSignalParams {
            delta: self.delta.unwrap_or(d.delta),
            gamma: self.gamma.unwrap_or(d.gamma),
            c: self.c.unwrap_or(d.c),
            dist_rho: self.dist_rho.clone().unwrap_or(d.dist_rho),
        }
    }
}
