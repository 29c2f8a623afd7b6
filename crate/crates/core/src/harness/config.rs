//! TOML experiment configuration and builders for the domain objects.

use serde::Deserialize;

use crate::error::{Result, WdroError};
use crate::dual::McBudget;
use crate::geometry::SampleSpace;
use crate::models::{LossModel, ThetaBounds};
use crate::risk::OptBudget;

fn cfg_err(msg: impl Into<String>) -> WdroError {
    WdroError::Config(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub kind: String,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub dims: Option<usize>,
    #[serde(default)]
    pub y_bound: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default)]
    pub theta_dim: Option<usize>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_theta_lo")]
    pub theta_lo: f64,
    #[serde(default = "default_theta_hi")]
    pub theta_hi: f64,
    #[serde(default)]
    pub kernel_bandwidth: Option<f64>,
    #[serde(default)]
    pub ridge_mu: Option<f64>,
    #[serde(default)]
    pub kernel_centers: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub constant_value: Option<f64>,
}

fn default_theta_lo() -> f64 {
    0.25
}
fn default_theta_hi() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdroConfig {
    pub rho: f64,
    /// ε = eps0 · ρ (regularization proportional to the radius).
    pub eps0: f64,
    /// σ = sigma0 · ρ.
    pub sigma0: f64,
}

impl Default for WdroConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            eps0: 0.0,
            sigma0: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples_per_xi: usize,
    pub multistarts: usize,
    pub ess_floor: f64,
    pub ascent_tol: f64,
    pub ascent_max_iters: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        let b = McBudget::default();
        Self {
            samples_per_xi: b.samples_per_xi,
            multistarts: b.multistarts,
            ess_floor: b.ess_floor,
            ascent_tol: b.ascent_tol,
            ascent_max_iters: b.ascent_max_iters,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        let b = OptBudget::default();
        Self {
            max_iters: b.max_iters,
            tol: b.tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n: usize,
    pub generator: String,
    pub theta_true: Option<Vec<f64>>,
    pub noise: f64,
    /// Per-coordinate Gaussian scale of the synthetic features; defaults
    /// to `0.5 · R / √d_feat` so rejection into the shrunken space stays
    /// cheap in higher dimension.
    pub feature_scale: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 100,
            generator: "gaussian_clipped".into(),
            theta_true: None,
            noise: 0.1,
            feature_scale: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub replicates: u64,
    pub rho_grid: Vec<f64>,
    pub true_risk_samples: usize,
    pub seed: u64,
    /// Sample sizes for the scaling and sandwich sweeps.
    pub n_grid: Vec<usize>,
    /// Override of the empirical radius correction used by the shift
    /// experiment (typically read off a scaling/sandwich run).
    pub rho_n: Option<f64>,
    /// Candidate radius corrections for the sandwich search, as
    /// fractions of ρ.
    pub rho_n_fracs: Vec<f64>,
    /// Shift magnitudes as fractions of the full in-budget translation.
    pub shift_fracs: Vec<f64>,
    pub target_coverage: f64,
    /// Reference-sample size for the sandwich's true-side risks.
    pub ref_risk_samples: usize,
    /// Bootstrap resamples for the scaling fit interval.
    pub bootstrap: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            replicates: 1,
            rho_grid: Vec::new(),
            true_risk_samples: 100_000,
            seed: 0,
            n_grid: Vec::new(),
            rho_n: None,
            rho_n_fracs: vec![0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5],
            shift_fracs: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            target_coverage: 0.9,
            ref_risk_samples: 2000,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusConfig {
    pub n_directions: usize,
    pub radii: Option<Vec<f64>>,
    pub n_samples: usize,
    pub mc_samples: usize,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        Self {
            n_directions: 16,
            radii: None,
            n_samples: 1000,
            mc_samples: 2048,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub wdro: WdroConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub radius: RadiusConfig,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| cfg_err(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    fn validate(&self) -> Result<()> {
        match self.space.kind.as_str() {
            "ball" | "box" | "ball_x_interval" => {}
            k => return Err(cfg_err(format!("unknown space.kind '{k}'"))),
        }
        match self.model.family.as_str() {
            "logistic" | "linear_regression" | "kernel_ridge" | "constant" => {}
            f => return Err(cfg_err(format!("unknown model.family '{f}'"))),
        }
        if self.wdro.eps0 < 0.0 || self.wdro.sigma0 < 0.0 {
            return Err(cfg_err("wdro.eps0 and wdro.sigma0 must be >= 0"));
        }
        if self.wdro.eps0 > 0.0 && self.wdro.sigma0 == 0.0 {
            return Err(cfg_err("wdro.sigma0 must be positive when eps0 > 0"));
        }
        if self.experiment.replicates == 0 {
            return Err(cfg_err("experiment.replicates must be >= 1"));
        }
        if self.experiment.replicates >= crate::rng::REFERENCE_REPLICATE {
            return Err(cfg_err("experiment.replicates out of range"));
        }
        let mut prev = 0.0;
        for r in &self.experiment.rho_grid {
            if !(*r > 0.0) || *r <= prev {
                return Err(cfg_err("experiment.rho_grid must be positive ascending"));
            }
            prev = *r;
        }
        if !(self.experiment.target_coverage > 0.0 && self.experiment.target_coverage < 1.0) {
            return Err(cfg_err("experiment.target_coverage must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn build_space(&self) -> Result<SampleSpace> {
        let s = &self.space;
        let space = match s.kind.as_str() {
            "ball" => {
                let d = s.dims.ok_or_else(|| cfg_err("space.dims required for ball"))?;
                let r = s.radius.ok_or_else(|| cfg_err("space.radius required for ball"))?;
                SampleSpace::ball(vec![0.0; d], r)?
            }
            "box" => {
                let lo = s.lo.clone().ok_or_else(|| cfg_err("space.lo required for box"))?;
                let hi = s.hi.clone().ok_or_else(|| cfg_err("space.hi required for box"))?;
                SampleSpace::cube(lo, hi)?
            }
            "ball_x_interval" => {
                let d = s
                    .dims
                    .ok_or_else(|| cfg_err("space.dims (total) required for ball_x_interval"))?;
                if d < 2 {
                    return Err(cfg_err("ball_x_interval needs dims >= 2"));
                }
                let r = s.radius.ok_or_else(|| cfg_err("space.radius required"))?;
                let b = s.y_bound.ok_or_else(|| cfg_err("space.y_bound required"))?;
                SampleSpace::ball_x_interval(d - 1, r, b)?
            }
            _ => unreachable!(),
        };
        match s.margin {
            Some(m) => space.with_margin(m),
            None => Ok(space),
        }
    }

    /// Parameter dimension implied by the family and the space.
    pub fn theta_dim(&self, space: &SampleSpace) -> usize {
        if let Some(p) = self.model.theta_dim {
            return p;
        }
        match self.model.family.as_str() {
            "logistic" => space.dims(),
            "linear_regression" => space.dims() - 1,
            "kernel_ridge" => self
                .model
                .kernel_centers
                .as_ref()
                .map(|c| c.len())
                .unwrap_or(1),
            _ => 1,
        }
    }

    fn theta_bounds(&self) -> ThetaBounds {
        ThetaBounds::Annulus {
            lo: self.model.theta_lo,
            hi: self.model.theta_hi,
        }
    }

    /// Deterministic default parameter: the all-ones direction scaled to
    /// the middle of the annulus.
    pub fn theta_init(&self, space: &SampleSpace) -> Vec<f64> {
        if let Some(t) = &self.model.theta {
            return t.clone();
        }
        let p = self.theta_dim(space);
        let norm_target = 0.5 * (self.model.theta_lo + self.model.theta_hi);
        let unit = 1.0 / (p as f64).sqrt();
        vec![unit * norm_target; p]
    }

    /// Law parameter of the synthetic distribution.
    pub fn theta_true(&self, space: &SampleSpace) -> Vec<f64> {
        if let Some(t) = &self.data.theta_true {
            return t.clone();
        }
        let p = self.theta_dim(space);
        vec![1.0 / (p as f64).sqrt(); p]
    }

    pub fn build_model(&self, space: &SampleSpace) -> Result<LossModel> {
        let theta = self.theta_init(space);
        self.build_model_with_theta(space, theta)
    }

    pub fn build_model_with_theta(
        &self,
        space: &SampleSpace,
        theta: Vec<f64>,
    ) -> Result<LossModel> {
        let bounds = self.theta_bounds();
        let model = match self.model.family.as_str() {
            "logistic" => LossModel::logistic(theta, bounds)?,
            "linear_regression" => LossModel::linear_regression(theta, bounds)?,
            "kernel_ridge" => {
                let centers = self
                    .model
                    .kernel_centers
                    .clone()
                    .ok_or_else(|| cfg_err("model.kernel_centers required for kernel_ridge"))?;
                let bw = self
                    .model
                    .kernel_bandwidth
                    .ok_or_else(|| cfg_err("model.kernel_bandwidth required for kernel_ridge"))?;
                let mu = self.model.ridge_mu.unwrap_or(0.0);
                LossModel::kernel_ridge(theta, centers, bw, mu, bounds)?
            }
            "constant" => LossModel::constant(self.model.constant_value.unwrap_or(1.0)),
            _ => unreachable!(),
        };
        model.nonneg_shifted(space)
    }

    pub fn mc_budget(&self) -> McBudget {
        McBudget {
            samples_per_xi: self.mc.samples_per_xi,
            multistarts: self.mc.multistarts,
            ess_floor: self.mc.ess_floor,
            ascent_tol: self.mc.ascent_tol,
            ascent_max_iters: self.mc.ascent_max_iters,
        }
    }

    pub fn opt_budget(&self) -> OptBudget {
        OptBudget {
            max_iters: self.opt.max_iters,
            tol: self.opt.tol,
        }
    }

    /// (ε, σ) tied to a radius: ε = eps0·ρ, σ = sigma0·ρ.
    pub fn eps_sigma(&self, rho: f64) -> (f64, f64) {
        (self.wdro.eps0 * rho, self.wdro.sigma0 * rho)
    }
}
