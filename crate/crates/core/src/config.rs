//! Run configuration: one TOML file with sections, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::{McmcConfig, ModelSpec, ParamMode, PriorSpec};
use crate::cox::Correlation;
use crate::error::{IpmError, Result};
use crate::grid::{Bandwidth, KdeOptions, TraitGrid};
use crate::kernel::CovariateSet;
use crate::propagation::RecruitPlacement;
use crate::sim::{sim_model_spec, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub grid: GridSection,
    pub binning: BinningSection,
    pub model: ModelSection,
    pub priors: PriorSpec,
    pub mcmc: McmcSection,
    pub sim: SimSection,
    pub project: ProjectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataSection::default(),
            grid: GridSection::default(),
            binning: BinningSection::default(),
            model: ModelSection::default(),
            priors: PriorSpec::default(),
            mcmc: McmcSection::default(),
            sim: SimSection::default(),
            project: ProjectSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub patterns: Option<PathBuf>,
    pub climates: Option<PathBuf>,
    /// Directory of a previous `fit` run, read by `project` and `summarize`.
    pub fit_dir: Option<PathBuf>,
    /// Truth file from `simulate`, overlaid on projections.
    pub truth: Option<PathBuf>,
    /// Fit only the first this many years.
    pub training_years: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 50.0,
            cells: 100,
        }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<TraitGrid> {
        TraitGrid::new(self.lower, self.upper, self.cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningSection {
    pub n_temp: usize,
    pub n_precip: usize,
}

impl Default for BinningSection {
    fn default() -> Self {
        Self { n_temp: 2, n_precip: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// `Q0` fixed at `q0`, `delta0` sampled.
    Estimated,
    /// `Q0` and `delta0` solved from `q_max` and `delta_max`.
    BoundaryFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fixed,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub boundary: BoundaryMode,
    pub q0: f64,
    pub q_max: f64,
    pub delta_max: f64,
    pub delta1: Mode,
    pub delta1_value: f64,
    pub mu: Mode,
    pub mu_value: f64,
    pub intercept: Mode,
    pub intercept_value: f64,
    pub covariates: CovariateSet,
    pub standardize: bool,
    pub gp_family: Correlation,
    /// Fixed KDE bandwidth in cm; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub placement: RecruitPlacement,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelSpec::default();
        Self {
            boundary: BoundaryMode::Estimated,
            q0: d.q0,
            q_max: 0.9,
            delta_max: 1.0,
            delta1: Mode::Fixed,
            delta1_value: 0.0,
            mu: Mode::Fixed,
            mu_value: 0.0,
            intercept: Mode::Estimated,
            intercept_value: 0.0,
            covariates: d.covariates,
            standardize: d.standardize,
            gp_family: d.gp_family,
            bandwidth: None,
            placement: d.placement,
        }
    }
}

impl ModelSection {
    /// Section reproducing the simulation study's model.
    pub fn for_simulation() -> Self {
        let s = sim_model_spec();
        Self {
            intercept: Mode::Fixed,
            covariates: s.covariates,
            standardize: s.standardize,
            bandwidth: match s.kde.bandwidth {
                Bandwidth::Fixed(h) => Some(h),
                Bandwidth::Silverman => None,
            },
            ..Self::default()
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let mode = |m: Mode, v: f64| match m {
            Mode::Fixed => ParamMode::Fixed(v),
            Mode::Estimated => ParamMode::Estimated,
        };
        let bandwidth = match self.bandwidth {
            None => Bandwidth::Silverman,
            Some(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
            Some(h) => return Err(IpmError::InvalidBandwidth(h)),
        };
        let spec = ModelSpec {
            q0: self.q0,
            delta0: ParamMode::Estimated,
            delta1: mode(self.delta1, self.delta1_value),
            mu: mode(self.mu, self.mu_value),
            intercept: mode(self.intercept, self.intercept_value),
            covariates: self.covariates,
            standardize: self.standardize,
            gp_family: self.gp_family,
            kde: KdeOptions::per_plot(bandwidth),
            placement: self.placement,
        };
        let spec = match self.boundary {
            BoundaryMode::Estimated => spec,
            BoundaryMode::BoundaryFixed => spec.with_boundary(self.q_max, self.delta_max)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub target_acceptance: f64,
    pub compensated_moves: bool,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            chains: d.chains,
            target_acceptance: d.target_acceptance,
            compensated_moves: d.compensated_moves,
        }
    }
}

impl McmcSection {
    pub fn build(&self, seed: u64) -> Result<McmcConfig> {
        let cfg = McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: self.chains,
            seed,
            target_acceptance: self.target_acceptance,
            compensated_moves: self.compensated_moves,
            ..McmcConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_bins: usize,
    pub plots_per_bin: usize,
    pub years: usize,
    pub missing: f64,
    pub first_year: i32,
    /// Draw latent noise in the generator.
    pub gp_noise: bool,
    pub sigma2_eps: f64,
    /// Effective range `3 / phi` as a fraction of the trait interval.
    pub range_fraction: f64,
    pub initial_mass: f64,
    pub transition: Option<Vec<Vec<f64>>>,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_bins: d.n_bins,
            plots_per_bin: d.plots_per_bin,
            years: d.horizon,
            missing: d.missing_fraction,
            first_year: d.first_year,
            gp_noise: true,
            sigma2_eps: 0.04,
            range_fraction: 0.5,
            initial_mass: d.initial_mass,
            transition: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    /// Projection steps from the first observed year.
    pub horizon: usize,
    pub level: f64,
    /// Year index of the starting intensities.
    pub start_year: usize,
    /// Second fit whose band widths are compared against this one.
    pub compare: Option<PathBuf>,
}

impl Default for ProjectSection {
    fn default() -> Self {
        Self {
            horizon: 9,
            level: 0.95,
            start_year: 0,
            compare: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IpmError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IpmError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            IpmError::Config(m) => IpmError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.sim;
        let d = SimConfig::default();
        let span = self.grid.upper - self.grid.lower;
        let transition = match &s.transition {
            Some(t) => t.clone(),
            None if s.n_bins == d.n_bins => d.transition.clone(),
            None => return Err(IpmError::Config(format!("sim.transition is required for {} bins", s.n_bins))),
        };
        let cfg = SimConfig {
            n_bins: s.n_bins,
            plots_per_bin: s.plots_per_bin,
            horizon: s.years,
            transition,
            missing_fraction: s.missing,
            seed: self.seed,
            grid_lower: self.grid.lower,
            grid_upper: self.grid.upper,
            grid_cells: self.grid.cells,
            gp: if s.gp_noise {
                Some(crate::cox::GPConfig {
                    sigma2_eps: s.sigma2_eps,
                    phi: 3.0 / (s.range_fraction * span),
                    family: Correlation::Exponential,
                })
            } else {
                None
            },
            initial_mass: s.initial_mass,
            first_year: s.first_year,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section that does not need input files.
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        if self.binning.n_temp == 0 || self.binning.n_precip == 0 {
            return Err(IpmError::Config("binning needs at least one interval per axis".into()));
        }
        self.model.spec()?;
        self.priors.validate()?;
        self.mcmc.build(self.seed)?;
        if !(self.project.level > 0.0 && self.project.level < 1.0) {
            return Err(IpmError::Config(format!("project.level must lie in (0, 1), got {}", self.project.level)));
        }
        Ok(())
    }
}

/// `NTxNP`, e.g. `4x1`.
pub fn parse_bins(s: &str) -> Result<(usize, usize)> {
    let bad = || IpmError::Config(format!("bins must look like 4x1, got `{s}`"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

/// `L,U,B`, e.g. `0,50,100`.
pub fn parse_grid(s: &str) -> Result<GridSection> {
    let bad = || IpmError::Config(format!("grid must look like 0,50,100, got `{s}`"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let g = GridSection {
        lower: parts[0].parse().map_err(|_| bad())?,
        upper: parts[1].parse().map_err(|_| bad())?,
        cells: parts[2].parse().map_err(|_| bad())?,
    };
    g.build()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.model = ModelSection::for_simulation();
        c.model.bandwidth = Some(0.75);
        c.sim.transition = Some(vec![vec![1.0]]);
        c.data.patterns = Some("p.csv".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            "seed = 7\n[grid]\ncells = 40\n[model]\nboundary = \"boundary_fixed\"\ngp_family = \"matern32\"\n\
             covariates = \"temp_only\"\n[mcmc]\niterations = 500\nburn_in = 100\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.cells, 40);
        let spec = c.model.spec().unwrap();
        assert!(!spec.delta0.is_free());
        assert_eq!(spec.gp_family, Correlation::Matern32);
        assert_eq!(c.mcmc.build(7).unwrap().iterations, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("[grid]\ncels = 3\n"), Err(IpmError::Config(_))));
    }

    #[test]
    fn flag_syntax() {
        assert_eq!(parse_bins("4x1").unwrap(), (4, 1));
        assert!(parse_bins("4by1").is_err());
        assert!(parse_bins("0x2").is_err());
        assert_eq!(parse_grid("0, 50, 200").unwrap().cells, 200);
        assert!(parse_grid("10,0,5").is_err());
    }

    #[test]
    fn default_sim_matches_library() {
        let c = RunConfig::default().sim_config().unwrap();
        let d = SimConfig::default();
        assert_eq!(c.transition, d.transition);
        assert!((c.gp.unwrap().phi - d.gp.unwrap().phi).abs() < 1e-15);
    }
}
