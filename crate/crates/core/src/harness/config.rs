//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::costs::{power_cost, CostFunction};
use crate::diffusion::{Bump, DEFAULT_SPHERE_BAND, DEFAULT_TORUS_BAND};
use crate::error::{Error, Result};
use crate::geometry::{Model, ScaleFlow, DEFAULT_CUT_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    WassersteinMonotonicity,
    GeneralCostMonotonicity,
    LemmaSweep,
    DualityPreservation,
    ThetaMonotonicity,
    AdmissibilityReport,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::WassersteinMonotonicity,
        ExperimentKind::GeneralCostMonotonicity,
        ExperimentKind::LemmaSweep,
        ExperimentKind::DualityPreservation,
        ExperimentKind::ThetaMonotonicity,
        ExperimentKind::AdmissibilityReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::WassersteinMonotonicity => "wasserstein_monotonicity",
            ExperimentKind::GeneralCostMonotonicity => "general_cost_monotonicity",
            ExperimentKind::LemmaSweep => "lemma_sweep",
            ExperimentKind::DualityPreservation => "duality_preservation",
            ExperimentKind::ThetaMonotonicity => "theta_monotonicity",
            ExperimentKind::AdmissibilityReport => "admissibility_report",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{name}'")))
    }
}

/// A monotone grid, either listed or as `{ start, end, count }`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, end: f64, count: usize },
}

impl Grid {
    pub fn range(start: f64, end: f64, count: usize) -> Self {
        Grid::Range { start, end, count }
    }

    /// Strictly increasing values.
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, end, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect(),
            },
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("grids must be nonempty, finite and strictly increasing".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Sphere,
    Torus,
}

impl From<ModelName> for Model {
    fn from(m: ModelName) -> Self {
        match m {
            ModelName::Sphere => Model::Sphere2,
            ModelName::Torus => Model::Torus2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    #[default]
    BackwardRicci,
    UserScale,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub model: ModelName,
    #[serde(default)]
    pub law: LawName,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default)]
    pub k: f64,
    /// Required for `backward_ricci`; the sample range for `user_scale`.
    pub domain: Option<[f64; 2]>,
    /// `user_scale` samples of `c(τ)`.
    pub taus: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_guard")]
    pub cut_guard: f64,
}

impl FlowConfig {
    pub fn build(&self) -> Result<ScaleFlow> {
        let flow = match self.law {
            LawName::BackwardRicci => {
                let [a, b] = self.domain.ok_or_else(|| Error::Config("flow.domain is required".into()))?;
                ScaleFlow::backward_ricci(self.model.into(), self.c0, self.k, (a, b))?
            }
            LawName::UserScale => {
                let (Some(t), Some(v)) = (&self.taus, &self.values) else {
                    return Err(Error::Config("user_scale flows need flow.taus and flow.values".into()));
                };
                ScaleFlow::user_scale(self.model.into(), t.clone(), v.clone(), self.k)?
            }
        };
        flow.with_cut_guard(self.cut_guard)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub bumps: Vec<Bump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKindName {
    #[default]
    Power,
    Table,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub kind: CostKindName,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default)]
    pub k: f64,
    /// CSV with columns `s, tau, eta, eta_s, eta_ss, eta_tau`, relative to
    /// the config file.
    pub path: Option<PathBuf>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { kind: CostKindName::Power, p: 2.0, k: 0.0, path: None }
    }
}

impl CostConfig {
    pub fn build(&self, base: Option<&Path>) -> Result<CostFunction> {
        match self.kind {
            CostKindName::Power => power_cost(self.p, self.k),
            CostKindName::Table => {
                let p = self.path.as_ref().ok_or_else(|| Error::Config("table costs need cost.path".into()))?;
                let full = match base {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                CostFunction::from_csv(&full)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    /// Cloud size `N`.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Band limit; defaults per model.
    pub band_limit: Option<usize>,
    /// Longitudes of the sphere cloud.
    #[serde(default = "default_n_phi")]
    pub n_phi: usize,
    pub tau_grid: Option<Grid>,
    pub s_grid: Option<Grid>,
    /// Rerun at `N/2` to estimate the discretization error.
    #[serde(default = "yes")]
    pub study: bool,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self { n: default_n(), band_limit: None, n_phi: default_n_phi(), tau_grid: None, s_grid: None, study: true }
    }
}

impl ResolutionConfig {
    pub fn band(&self, model: Model) -> usize {
        self.band_limit.unwrap_or(match model {
            Model::Sphere2 => DEFAULT_SPHERE_BAND,
            Model::Torus2 => DEFAULT_TORUS_BAND,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Overrides the tolerance derived from the resolution study.
    pub mono: Option<f64>,
    pub z: Option<f64>,
    pub lemma: Option<f64>,
    pub j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Smallest standard-metric separation sampled.
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self { pairs: default_pairs(), min_distance: default_min_distance() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    #[serde(default = "default_tau_bar")]
    pub tau_bar: [f64; 2],
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self { tau_bar: default_tau_bar() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreservationConfig {
    /// Final time; defaults to the end of the flow domain.
    pub b: Option<f64>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Side of the evaluation grid (`grid²` points on the torus, `grid`
    /// Gauss rings × `n_phi` longitudes on the sphere).
    #[serde(default = "default_eval_grid")]
    pub grid: usize,
    /// Colatitudes of the meridian scanned by the competitiveness repair on
    /// the sphere (default 400), or the side of the scanned torus grid
    /// (default `3 × grid`, so the evaluation grid is a subset).
    pub repair_resolution: Option<usize>,
}

impl PreservationConfig {
    pub fn repair(&self, model: Model) -> usize {
        self.repair_resolution.unwrap_or(match model {
            Model::Sphere2 => DEFAULT_SPHERE_REPAIR,
            Model::Torus2 => 3 * self.grid,
        })
    }
}

impl Default for PreservationConfig {
    fn default() -> Self {
        Self {
            b: None,
            checkpoints: default_checkpoints(),
            grid: default_eval_grid(),
            repair_resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityConfig {
    pub s_grid: Option<Grid>,
    pub tau_grid: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    /// The flow is known to break the hypotheses; a failed check is recorded
    /// as expected instead of as a violation.
    #[serde(default)]
    pub expect_violation: bool,
    pub flow: FlowConfig,
    pub mu: Option<DensityConfig>,
    pub nu: Option<DensityConfig>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub lemma: LemmaConfig,
    #[serde(default)]
    pub theta: ThetaConfig,
    #[serde(default)]
    pub preservation: PreservationConfig,
    #[serde(default)]
    pub admissibility: AdmissibilityConfig,
    /// Directory used to resolve relative paths; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment.ok_or_else(|| Error::Config("no experiment selected".into()))
    }

    pub fn cost_function(&self) -> Result<CostFunction> {
        self.cost.build(self.base_dir.as_deref())
    }

    pub fn density(&self, which: &str) -> Result<&DensityConfig> {
        let d = match which {
            "mu" => self.mu.as_ref(),
            _ => self.nu.as_ref(),
        };
        d.ok_or_else(|| Error::Config(format!("density block [{which}] is required")))
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}
fn default_guard() -> f64 {
    DEFAULT_CUT_GUARD
}
fn default_n() -> usize {
    300
}
fn default_n_phi() -> usize {
    4
}
fn default_pairs() -> usize {
    200
}
fn default_min_distance() -> f64 {
    0.05
}
fn default_tau_bar() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_checkpoints() -> usize {
    6
}
fn default_eval_grid() -> usize {
    24
}
const DEFAULT_SPHERE_REPAIR: usize = 400;
