//! Run configuration loaded from TOML.

use std::path::Path;

use intrinsic::annotations::{SlicParams, DEFAULT_EQUAL_DELTA};
use intrinsic::eval::DEFAULT_WHDR_DELTA;
use intrinsic::losses::{FeatureSigmas, LossWeights};
use intrinsic::solver::SolveConfig;
use intrinsic::tonemap::ToneMapParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub tonemap: ToneMapParams,
    pub weights: LossWeights,
    pub features: FeatureSigmas,
    pub solver: SolverSection,
    pub slic: SlicParams,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub tolerance: f64,
    pub sigma_p: f64,
    pub sinkhorn_iters: usize,
    pub l1_smoothing: f64,
    pub exact_reconstruction: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self {
            max_iters: d.max_iters,
            initial_step: d.initial_step,
            backtrack: d.backtrack,
            armijo: d.armijo,
            tolerance: d.tolerance,
            sigma_p: d.sigma_p,
            sinkhorn_iters: d.sinkhorn_iters,
            l1_smoothing: d.l1_smoothing,
            exact_reconstruction: d.exact_reconstruction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub whdr_delta: f64,
    pub equal_delta: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            whdr_delta: DEFAULT_WHDR_DELTA,
            equal_delta: DEFAULT_EQUAL_DELTA,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            weights: self.weights,
            features: self.features,
            max_iters: self.solver.max_iters,
            initial_step: self.solver.initial_step,
            backtrack: self.solver.backtrack,
            armijo: self.solver.armijo,
            tolerance: self.solver.tolerance,
            sigma_p: self.solver.sigma_p,
            sinkhorn_iters: self.solver.sinkhorn_iters,
            l1_smoothing: self.solver.l1_smoothing,
            exact_reconstruction: self.solver.exact_reconstruction,
            slic: self.slic,
            equal_delta: self.eval.equal_delta,
            seed: self.seed,
        }
    }

    /// Checks every section against its own invariants.
    pub fn validate(&self) -> intrinsic::Result<()> {
        self.tonemap.validate()?;
        self.solve_config().validate()?;
        if !(self.eval.whdr_delta >= 0.0) {
            return Err(intrinsic::Error::InvalidParameter {
                name: "whdr_delta",
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}
