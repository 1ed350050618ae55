//! Synthetic multi-bin panels, missingness injection and the recovery and
//! projection experiments built on them.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bayes::{
    mcmc_fit, prepare_fit, resolve_priors, summarize, FitData, McmcConfig, ModelSpec, ParamMode, PosteriorChain,
    PriorSpec,
};
use crate::bayes::summary::{pointwise_band, Band};
use crate::climate::{build_binning, build_panel, per_plot_intensity, ClimateBinning, ClimateRow, SparsePanel};
use crate::cox::{Correlation, GPConfig, GpFactor};
use crate::error::{IpmError, Result};
use crate::grid::{Bandwidth, IntensityField, KdeOptions, PointPattern, TraitGrid};
use crate::kernel::{ClimateRecord, CovariateSet, Covariates, KernelParams};
use crate::propagation::{project, pseudo_ipm_step, ProjectionMode, RecruitPlacement};
use crate::rng::{derive_seed, stream, Purpose};

/// Four-level label chain used for the synthetic study.
pub fn default_transition() -> Vec<Vec<f64>> {
    vec![
        vec![0.7, 0.2, 0.07, 0.03],
        vec![0.2, 0.7, 0.03, 0.07],
        vec![0.07, 0.03, 0.7, 0.2],
        vec![0.03, 0.07, 0.2, 0.7],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_bins: usize,
    pub plots_per_bin: usize,
    /// Number of simulated years.
    pub horizon: usize,
    pub true_params: KernelParams,
    pub transition: Vec<Vec<f64>>,
    pub missing_fraction: f64,
    pub seed: u64,
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub grid_cells: usize,
    /// Latent noise of the generator; `None` draws patterns from the kernel
    /// intensity alone.
    pub gp: Option<GPConfig>,
    pub initial_mass: f64,
    /// Median diameter of the initial lognormal-shaped size distribution.
    pub initial_median: f64,
    pub initial_log_sd: f64,
    pub first_year: i32,
    /// Constant precipitation written to the climate table.
    pub precip: f64,
    pub placement: RecruitPlacement,
}

impl Default for SimConfig {
    fn default() -> Self {
        let (lower, upper) = (0.0, 50.0);
        Self {
            n_bins: 4,
            plots_per_bin: 100,
            horizon: 10,
            true_params: KernelParams::simulation_truth(),
            transition: default_transition(),
            missing_fraction: 0.0,
            seed: 1,
            grid_lower: lower,
            grid_upper: upper,
            grid_cells: 100,
            gp: Some(GPConfig {
                sigma2_eps: 0.04,
                // Effective range 3 / phi of half the trait interval.
                phi: 6.0 / (upper - lower),
                family: Correlation::Exponential,
            }),
            initial_mass: 30.0,
            initial_median: 20.0,
            initial_log_sd: 0.4,
            first_year: 2005,
            precip: 1000.0,
            placement: RecruitPlacement::Renormalized,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.plots_per_bin == 0 || self.horizon < 2 {
            return Err(IpmError::InvalidParameter(
                "need at least one bin, one plot per bin and two years".into(),
            ));
        }
        if self.transition.len() != self.n_bins {
            return Err(IpmError::LengthMismatch {
                expected: self.n_bins,
                found: self.transition.len(),
            });
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != self.n_bins {
                return Err(IpmError::LengthMismatch {
                    expected: self.n_bins,
                    found: row.len(),
                });
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-12 {
                return Err(IpmError::InvalidParameter(format!(
                    "transition row {i} is not a probability vector (sum {total})"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(IpmError::InvalidParameter(format!(
                "missing fraction must lie in [0, 1), got {}",
                self.missing_fraction
            )));
        }
        if !(self.initial_mass > 0.0 && self.initial_median > 0.0 && self.initial_log_sd > 0.0) {
            return Err(IpmError::InvalidParameter("initial field settings must be positive".into()));
        }
        self.true_params.validate()?;
        self.true_params.check_covariates(&Covariates::scalar(0.0))?;
        if let Some(gp) = &self.gp {
            gp.validate()?;
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TraitGrid> {
        TraitGrid::new(self.grid_lower, self.grid_upper, self.grid_cells)
    }

    pub fn n_plots(&self) -> usize {
        self.n_bins * self.plots_per_bin
    }

    pub fn plot_id(&self, j: usize) -> String {
        format!("P{j:04}")
    }
}

/// Model settings matching the generator: a single raw covariate equal to the
/// label, no intercept, `Q0 = 1`, `delta1 = mu = 0`.
pub fn sim_model_spec() -> ModelSpec {
    ModelSpec {
        q0: 1.0,
        delta0: ParamMode::Estimated,
        delta1: ParamMode::Fixed(0.0),
        mu: ParamMode::Fixed(0.0),
        intercept: ParamMode::Fixed(0.0),
        covariates: CovariateSet::TempOnly,
        standardize: false,
        kde: KdeOptions::per_plot(Bandwidth::Silverman),
        ..ModelSpec::default()
    }
}

/// Initial intensity of each plot: a lognormal density shape on the grid with
/// per-plot jitter in mass and location.
pub fn initial_fields(cfg: &SimConfig) -> Result<Vec<IntensityField>> {
    let grid = cfg.grid()?;
    (0..cfg.n_plots())
        .map(|j| {
            let mut rng = stream(cfg.seed, Purpose::Initial, j as u64);
            let mass = cfg.initial_mass * rng.random_range(0.8..1.2);
            let median = cfg.initial_median * (0.1 * standard_normal(&mut rng)).exp();
            let s = cfg.initial_log_sd;
            let shape: Vec<f64> = grid
                .centers()
                .iter()
                .map(|&x| {
                    let u = x - grid.lower();
                    if u <= 0.0 {
                        0.0
                    } else {
                        (-(u / median).ln().powi(2) / (2.0 * s * s)).exp() / u
                    }
                })
                .collect();
            let total: f64 = shape.iter().sum::<f64>() * grid.width();
            IntensityField::new(grid.clone(), shape.iter().map(|v| v * mass / total).collect())
        })
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Label paths `[plot][year]`. Plots start evenly spread over the bins.
pub fn simulate_labels(cfg: &SimConfig) -> Vec<Vec<usize>> {
    (0..cfg.n_plots())
        .map(|j| {
            let mut rng = stream(cfg.seed, Purpose::Labels, j as u64);
            let mut path = vec![j / cfg.plots_per_bin];
            for _ in 1..cfg.horizon {
                let row = &cfg.transition[*path.last().expect("nonempty")];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = row.len() - 1;
                for (k, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = k;
                        break;
                    }
                }
                path.push(next);
            }
            path
        })
        .collect()
}

/// Generator state: labels, true intensities and latent noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub labels: Vec<Vec<usize>>,
    /// `[plot][year]`.
    pub gamma: Vec<Vec<IntensityField>>,
    /// `[year][bin]`; the pattern of a plot in year `t >= 1` is perturbed by
    /// the field of the bin it occupied in `t - 1`, year 0 by its own bin.
    pub eps: Vec<Vec<Vec<f64>>>,
}

impl SimTruth {
    /// Intensity the year-`t` pattern of plot `j` is drawn from.
    pub fn operating(&self, j: usize, t: usize) -> Result<IntensityField> {
        let l = self.labels[j][t.saturating_sub(1)];
        let g = &self.gamma[j][t];
        let v = g.values().iter().zip(&self.eps[t][l]).map(|(a, e)| a * e.exp()).collect();
        IntensityField::new(g.grid().clone(), v)
    }
}

pub fn covariate_for(label: usize) -> Covariates {
    Covariates::scalar(label as f64)
}

/// Chains each plot's intensity forward with the one-step operator, the
/// covariate of each step being the plot's label at the start of the step.
pub fn generate_truth(cfg: &SimConfig, initial: &[IntensityField]) -> Result<SimTruth> {
    cfg.validate()?;
    if initial.len() != cfg.n_plots() {
        return Err(IpmError::LengthMismatch {
            expected: cfg.n_plots(),
            found: initial.len(),
        });
    }
    let grid = cfg.grid()?;
    if initial.iter().any(|f| f.grid() != &grid) {
        return Err(IpmError::GridMismatch);
    }
    let labels = simulate_labels(cfg);
    let mut gamma = Vec::with_capacity(initial.len());
    for (j, g0) in initial.iter().enumerate() {
        let mut path = vec![g0.clone()];
        for t in 1..cfg.horizon {
            let next = pseudo_ipm_step(&path[t - 1], &covariate_for(labels[j][t - 1]), &cfg.true_params, cfg.placement)?;
            path.push(next);
        }
        gamma.push(path);
    }
    let b = grid.cells();
    let eps = match &cfg.gp {
        None => vec![vec![vec![0.0; b]; cfg.n_bins]; cfg.horizon],
        Some(gp) => {
            let factor = GpFactor::new(&grid, gp.phi, gp.family)?;
            (0..cfg.horizon)
                .map(|t| {
                    (0..cfg.n_bins)
                        .map(|l| {
                            let mut rng = stream(cfg.seed, Purpose::GpNoise, (t * cfg.n_bins + l) as u64);
                            let mut e = vec![0.0; b];
                            factor.sample_into(gp.sigma2_eps, &mut rng, &mut e);
                            e
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(SimTruth { labels, gamma, eps })
}

/// Poisson counts per cell with mean `lambda * d`, points uniform in each cell.
pub fn sample_pattern_with<R: Rng + ?Sized>(
    lambda: &IntensityField,
    rng: &mut R,
    plot_id: &str,
    year: i32,
) -> PointPattern {
    let grid = lambda.grid();
    let d = grid.width();
    let mut points = Vec::new();
    for (j, &v) in lambda.values().iter().enumerate() {
        let mean = v * d;
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
        let left = grid.edge(j);
        for _ in 0..n {
            // Stay strictly inside the cell so the point bins back to it.
            let x = (left + rng.random::<f64>() * d).clamp(left, left + d * (1.0 - 1e-12));
            points.push(x);
        }
    }
    PointPattern::new(plot_id, year, points)
}

pub fn sample_pattern(lambda: &IntensityField, seed: u64) -> PointPattern {
    let mut rng = stream(seed, Purpose::Patterns, 0);
    sample_pattern_with(lambda, &mut rng, "sim", 0)
}

/// Complete synthetic dataset: every plot observed in every year.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub truth: SimTruth,
    pub patterns: Vec<PointPattern>,
    pub climates: Vec<ClimateRow>,
}

impl SimDataset {
    pub fn years(&self) -> Vec<i32> {
        (0..self.config.horizon).map(|t| self.config.first_year + t as i32).collect()
    }

    /// Full panel and the `n_bins x 1` binning the labels were written for.
    pub fn panel(&self) -> Result<(SparsePanel, ClimateBinning)> {
        let recs: Vec<ClimateRecord> = self.climates.iter().map(|r| r.climate).collect();
        let binning = build_binning(&recs, self.config.n_bins, 1)?;
        let panel = build_panel(&self.patterns, &self.climates, &binning)?;
        Ok((panel, binning))
    }
}

pub fn simulate_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    let initial = initial_fields(cfg)?;
    simulate_from(cfg, &initial)
}

pub fn simulate_from(cfg: &SimConfig, initial: &[IntensityField]) -> Result<SimDataset> {
    let truth = generate_truth(cfg, initial)?;
    let mut patterns = Vec::with_capacity(cfg.n_plots() * cfg.horizon);
    let mut climates = Vec::with_capacity(cfg.n_plots() * cfg.horizon);
    for j in 0..cfg.n_plots() {
        let id = cfg.plot_id(j);
        for t in 0..cfg.horizon {
            let year = cfg.first_year + t as i32;
            let mut rng = stream(cfg.seed, Purpose::Patterns, (j * cfg.horizon + t) as u64);
            patterns.push(sample_pattern_with(&truth.operating(j, t)?, &mut rng, &id, year));
            climates.push(ClimateRow {
                plot_id: id.clone(),
                year,
                climate: ClimateRecord {
                    winter_temp: truth.labels[j][t] as f64,
                    annual_precip: cfg.precip,
                },
            });
        }
    }
    Ok(SimDataset {
        config: cfg.clone(),
        truth,
        patterns,
        climates,
    })
}

/// Removes `round(fraction * n)` of the `n` measured plots of each bin in
/// every year but the last, uniformly at random.
pub fn inject_missingness(panel: &SparsePanel, fraction: f64, seed: u64) -> Result<SparsePanel> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(IpmError::InvalidParameter(format!("missing fraction must lie in [0, 1), got {fraction}")));
    }
    let mut out = panel.clone();
    let nt = panel.n_years();
    for t in 0..nt.saturating_sub(1) {
        for l in 0..panel.bins() {
            let cohort = panel.s_set(t, l);
            let k = (fraction * cohort.len() as f64).round() as usize;
            if k > cohort.len() {
                return Err(IpmError::OverRemoval {
                    requested: k,
                    available: cohort.len(),
                });
            }
            let mut rng = stream(seed, Purpose::Missingness, (t * panel.bins() + l) as u64);
            for i in index::sample(&mut rng, cohort.len(), k) {
                out.remove(cohort[i], t);
            }
        }
    }
    Ok(out)
}

/// Settings for a recovery run over several missingness levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub sim: SimConfig,
    pub fractions: Vec<f64>,
    /// Years used for fitting; the rest are held out.
    pub training_years: usize,
    pub spec: ModelSpec,
    pub priors: PriorSpec,
    pub mcmc: McmcConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            fractions: vec![0.0, 0.5, 0.8],
            training_years: 9,
            spec: sim_model_spec(),
            priors: PriorSpec::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub fraction: f64,
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    /// Interval width over the width at the first fraction.
    pub width_ratio: f64,
}

/// One fitted missingness level.
#[derive(Debug, Clone)]
pub struct RecoveryFit {
    pub fraction: f64,
    pub panel: SparsePanel,
    pub binning: ClimateBinning,
    pub data: FitData,
    pub chains: Vec<PosteriorChain>,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub dataset: SimDataset,
    pub rows: Vec<RecoveryRow>,
    pub fits: Vec<RecoveryFit>,
}

/// Fits one missingness level of an existing dataset.
pub fn fit_level(dataset: &SimDataset, cfg: &RecoveryConfig, fraction: f64) -> Result<RecoveryFit> {
    let (full, binning) = dataset.panel()?;
    let miss_seed = derive_seed(cfg.sim.seed, (fraction * 1e6).round() as u64);
    let panel = inject_missingness(&full, fraction, miss_seed)?;
    let training = panel.truncate_years(cfg.training_years);
    let grid = cfg.sim.grid()?;
    let data = prepare_fit(&training, &binning, &grid, &cfg.spec, &cfg.priors)?;
    let priors = resolve_priors(&cfg.priors, &cfg.spec, &data, cfg.mcmc.seed)?;
    let chains = mcmc_fit(&data, &cfg.spec, &priors, &cfg.mcmc, None)?;
    Ok(RecoveryFit {
        fraction,
        panel,
        binning,
        data,
        chains,
    })
}

/// Simulate once, then fit every missingness level and tabulate coverage.
pub fn recovery_experiment(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    if cfg.fractions.is_empty() {
        return Err(IpmError::InvalidParameter("no missingness levels requested".into()));
    }
    if cfg.training_years < 2 || cfg.training_years > cfg.sim.horizon {
        return Err(IpmError::InvalidParameter(format!(
            "training years must lie in [2, {}], got {}",
            cfg.sim.horizon, cfg.training_years
        )));
    }
    let dataset = simulate_dataset(&cfg.sim)?;
    let mut fits = Vec::with_capacity(cfg.fractions.len());
    for &f in &cfg.fractions {
        fits.push(fit_level(&dataset, cfg, f)?);
    }
    let rows = recovery_rows(&cfg.spec, &cfg.sim.true_params, &fits)?;
    Ok(RecoveryReport { dataset, rows, fits })
}

/// Truth, posterior summary and coverage of each sampled kernel parameter.
pub fn recovery_rows(spec: &ModelSpec, truth: &KernelParams, fits: &[RecoveryFit]) -> Result<Vec<RecoveryRow>> {
    let coords = spec.coordinates();
    let mut base_width: Vec<f64> = Vec::new();
    let mut rows = Vec::new();
    for fit in fits {
        let table = summarize(&fit.chains)?;
        for (k, &c) in coords.iter().enumerate() {
            let s = &table[k];
            let t = c.get(truth);
            if base_width.len() <= k {
                base_width.push(s.width());
            }
            rows.push(RecoveryRow {
                fraction: fit.fraction,
                name: s.name.clone(),
                truth: t,
                mean: s.mean,
                lower: s.lower,
                upper: s.upper,
                covered: s.covers(t),
                width_ratio: s.width() / base_width[k],
            });
        }
    }
    Ok(rows)
}

/// Pointwise projection band of one bin with the truth overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct BinProjection {
    pub bin: usize,
    pub centers: Vec<f64>,
    pub band: Band,
    pub truth: Vec<f64>,
    pub start: IntensityField,
}

impl BinProjection {
    pub fn containment(&self) -> f64 {
        self.band.containment(&self.truth)
    }
}

/// Projects each bin from its first-year per-plot intensity in `start_panel`
/// over `steps` years at the bin's own covariate, once per posterior draw of
/// `fit` and once with the true parameters. Passing the same panel for fits at
/// different missingness levels keeps their starting fields equal.
pub fn projection_experiment(
    fit: &RecoveryFit,
    start_panel: &SparsePanel,
    spec: &ModelSpec,
    truth: &KernelParams,
    steps: usize,
    level: f64,
) -> Result<Vec<BinProjection>> {
    let grid = fit.data.grid.clone();
    let mut out = Vec::new();
    for l in 0..fit.binning.bins() {
        let start = per_plot_intensity(start_panel, 0, l, &grid, &spec.kde)?;
        let z = match &fit.binning.centroids[l] {
            Some(c) => fit.data.covariates.apply(c),
            None => continue,
        };
        let zs = vec![z; steps];
        let final_field = |p: &KernelParams| -> Result<Vec<f64>> {
            let path = project(&start, &zs, p, steps, ProjectionMode::Chained, spec.placement)?;
            Ok(path.last().expect("horizon + 1 fields").values().to_vec())
        };
        let curves: Vec<Vec<f64>> = fit
            .chains
            .iter()
            .flat_map(|c| c.params.iter())
            .map(final_field)
            .collect::<Result<_>>()?;
        out.push(BinProjection {
            bin: l,
            centers: grid.centers().to_vec(),
            band: pointwise_band(&curves, level)?,
            truth: final_field(truth)?,
            start: start.clone(),
        });
    }
    Ok(out)
}
