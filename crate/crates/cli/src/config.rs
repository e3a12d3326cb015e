//! Run configuration. One TOML document; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anchormix::datasets;
use anchormix::ingest::{load_dataset, SchemaOptions, TrialFormat};
use anchormix::model::{NormalWishartPrior, RatePrior};
use anchormix::predictive::SimConfig;
use anchormix::selection::AssignSolver;
use anchormix::{ComponentPrior, Dataset, NormalGammaPrior, PriorSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<DataConfig>,
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub anchors: AnchorsConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub features: FeaturesSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Galaxies,
    SisfallSynthetic,
    ScaleMixture,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub builtin: Option<Builtin>,
    /// Seed for generated builtins; defaults to the run seed.
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub schema: SchemaFields,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFields {
    pub value_columns: Option<Vec<String>>,
    pub id_column: Option<String>,
    pub group_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPreset {
    Galaxies,
    Sisfall,
    ScaleMixture,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub preset: Option<PriorPreset>,
    pub dirichlet: Option<f64>,
    pub normal_gamma: Option<NormalGammaConfig>,
    pub normal_wishart: Option<NormalWishartConfig>,
}

/// A literal location or a data statistic.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Scalar(f64),
    Vector(Vec<f64>),
    Statistic(Statistic),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Midpoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalGammaConfig {
    pub mean: MeanSpec,
    pub kappa: f64,
    pub shape: f64,
    /// Fixed `b0`.
    pub rate: Option<f64>,
    /// `b0 ~ Gamma(shape, rate)`.
    pub rate_prior: Option<GammaHyper>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalWishartConfig {
    pub mean: MeanSpec,
    pub kappa: f64,
    pub dof: f64,
    /// Row-major rows; identity when absent.
    pub scale: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Em,
    MinEntropy,
    Explicit,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorsConfig {
    #[serde(default)]
    pub method: Method,
    pub per_component: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    /// 1-based row numbers per component (method = "explicit").
    pub sets: Option<Vec<Vec<usize>>>,
    /// An earlier `anchors.json` (method = "file").
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub solver: AssignSolver,
    #[serde(default = "default_em_starts")]
    pub n_starts: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_min_entropy_starts")]
    pub min_entropy_starts: usize,
    #[serde(default = "default_true")]
    pub refine: bool,
}

impl Default for AnchorsConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

fn default_em_starts() -> usize {
    25
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    1000
}
fn default_min_entropy_starts() -> usize {
    20
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerInit {
    /// Start chains at the anchored EM estimate.
    #[default]
    Map,
    /// Start chains from uniform free allocations.
    Uniform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_target")]
    pub target_draws: usize,
    #[serde(default)]
    pub init: SamplerInit,
}

impl Default for SamplerSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

fn default_chains() -> usize {
    10
}
fn default_iterations() -> usize {
    10_000
}
fn default_burn_in() -> usize {
    1_000
}
fn default_target() -> usize {
    5_000
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub scale: SimScale,
    pub deltas: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
    pub datasets: Option<usize>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub posterior_draws: Option<usize>,
    pub m_min: Option<usize>,
    pub m_max: Option<usize>,
    pub prior_mean: Option<f64>,
    pub prior_var: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub columns: Option<[usize; 3]>,
    pub scale: Option<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn k(&self) -> Result<usize, CliError> {
        self.k.ok_or_else(|| invalid("config needs `k`"))
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        let data = self.data.as_ref().ok_or_else(|| invalid("config needs a [data] section"))?;
        match (&data.path, data.builtin) {
            (Some(path), None) => {
                let schema = SchemaOptions {
                    value_columns: data.schema.value_columns.clone(),
                    id_column: data.schema.id_column.clone(),
                    group_column: data.schema.group_column.clone(),
                };
                Ok(load_dataset(path, &schema)?)
            }
            (None, Some(b)) => {
                if data.schema.value_columns.is_some()
                    || data.schema.id_column.is_some()
                    || data.schema.group_column.is_some()
                {
                    return Err(invalid("column options apply only to data.path"));
                }
                Ok(match b {
                    Builtin::Galaxies => datasets::galaxies(),
                    Builtin::SisfallSynthetic => datasets::sisfall_synthetic(),
                    Builtin::ScaleMixture => datasets::scale_mixture(data.seed.unwrap_or(self.seed())).0,
                })
            }
            _ => Err(invalid("[data] needs exactly one of `path` or `builtin`")),
        }
    }

    pub fn prior(&self, data: &Dataset) -> Result<PriorSpec, CliError> {
        let cfg = self.prior.as_ref().ok_or_else(|| invalid("config needs a [prior] section"))?;
        let chosen = [cfg.preset.is_some(), cfg.normal_gamma.is_some(), cfg.normal_wishart.is_some()];
        if chosen.iter().filter(|&&c| c).count() != 1 {
            return Err(invalid("[prior] needs exactly one of `preset`, `normal_gamma` or `normal_wishart`"));
        }
        let prior = if let Some(preset) = cfg.preset {
            if cfg.dirichlet.is_some() {
                return Err(invalid("`dirichlet` cannot be combined with a preset"));
            }
            match preset {
                PriorPreset::Galaxies => datasets::galaxies_prior(data),
                PriorPreset::Sisfall => datasets::sisfall_prior(data),
                PriorPreset::ScaleMixture => datasets::scale_mixture_prior(data),
            }
        } else {
            let component = if let Some(ng) = &cfg.normal_gamma {
                let rate = match (ng.rate, ng.rate_prior) {
                    (Some(b), None) => RatePrior::Fixed(b),
                    (None, Some(h)) => RatePrior::Gamma { shape: h.shape, rate: h.rate },
                    _ => return Err(invalid("normal_gamma needs exactly one of `rate` or `rate_prior`")),
                };
                let mean = resolve_mean(&ng.mean, data)?;
                if mean.len() != 1 {
                    return Err(invalid("normal_gamma mean must be a scalar"));
                }
                ComponentPrior::NormalGamma(NormalGammaPrior { mean: mean[0], kappa: ng.kappa, shape: ng.shape, rate })
            } else {
                let nw = cfg.normal_wishart.as_ref().expect("checked above");
                let p = data.p();
                let scale = match &nw.scale {
                    None => DMatrix::identity(p, p),
                    Some(rows) => {
                        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                            return Err(invalid(format!("normal_wishart scale must be {p} x {p}")));
                        }
                        DMatrix::from_row_slice(p, p, &rows.concat())
                    }
                };
                ComponentPrior::NormalWishart(NormalWishartPrior {
                    mean: resolve_mean(&nw.mean, data)?,
                    kappa: nw.kappa,
                    dof: nw.dof,
                    scale,
                })
            };
            PriorSpec { dirichlet: cfg.dirichlet.unwrap_or(1.0), component }
        };
        prior.validate(data.p())?;
        Ok(prior)
    }

    pub fn budgets(&self, k: usize) -> Result<Vec<usize>, CliError> {
        match (&self.anchors.budgets, self.anchors.per_component) {
            (Some(b), None) => {
                if b.len() != k {
                    return Err(invalid(format!("{} budgets for k = {k}", b.len())));
                }
                Ok(b.clone())
            }
            (None, per) => Ok(vec![per.unwrap_or(1); k]),
            (Some(_), Some(_)) => Err(invalid("give either anchors.budgets or anchors.per_component")),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        let base = match s.scale {
            SimScale::Desk => SimConfig::default(),
            SimScale::Paper => SimConfig::paper_scale(),
        };
        SimConfig {
            deltas: s.deltas.clone().unwrap_or(base.deltas),
            sigmas: s.sigmas.clone().unwrap_or(base.sigmas),
            datasets: s.datasets.unwrap_or(base.datasets),
            n: s.n.unwrap_or(base.n),
            replicates: s.replicates.unwrap_or(base.replicates),
            posterior_draws: s.posterior_draws.unwrap_or(base.posterior_draws),
            m_min: s.m_min.unwrap_or(base.m_min),
            m_max: s.m_max.unwrap_or(base.m_max),
            prior_mean: s.prior_mean.unwrap_or(base.prior_mean),
            prior_var: s.prior_var.unwrap_or(base.prior_var),
            seed: self.seed(),
        }
    }

    pub fn trial_format(&self) -> TrialFormat {
        let d = TrialFormat::default();
        TrialFormat {
            columns: self.features.columns.unwrap_or(d.columns),
            scale: self.features.scale.unwrap_or(d.scale),
        }
    }
}

fn resolve_mean(spec: &MeanSpec, data: &Dataset) -> Result<Vec<f64>, CliError> {
    let mean = match spec {
        MeanSpec::Scalar(v) => vec![*v],
        MeanSpec::Vector(v) => v.clone(),
        MeanSpec::Statistic(Statistic::Mean) => data.mean(),
        MeanSpec::Statistic(Statistic::Midpoint) => data.midpoint(),
    };
    if mean.len() != data.p() {
        return Err(invalid(format!("prior mean has {} entries, data has {} columns", mean.len(), data.p())));
    }
    Ok(mean)
}
