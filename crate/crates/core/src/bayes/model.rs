use serde::{Deserialize, Serialize};

use crate::climate::{live_terms, ClimateBinning, LiveTerm, SparsePanel};
use crate::cox::Correlation;
use crate::error::{IpmError, Result};
use crate::grid::{KdeOptions, TraitGrid};
use crate::kernel::{
    recruitment_unchecked, survival_unchecked, CovariateMap, CovariateSet, KernelParams,
};
use crate::propagation::RecruitPlacement;
use crate::rng::{stream, Purpose};

use super::prior::{PositivePrior, PriorSpec, RateChoice};

/// Whether a kernel parameter is sampled or held at a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum ParamMode {
    Estimated,
    Fixed(f64),
}

impl ParamMode {
    pub fn is_free(self) -> bool {
        matches!(self, ParamMode::Estimated)
    }
}

/// Structural choices for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Survival scale, never sampled.
    pub q0: f64,
    pub delta0: ParamMode,
    pub delta1: ParamMode,
    pub mu: ParamMode,
    pub intercept: ParamMode,
    pub covariates: CovariateSet,
    pub standardize: bool,
    pub gp_family: Correlation,
    pub kde: KdeOptions,
    pub placement: RecruitPlacement,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            q0: 1.0,
            delta0: ParamMode::Estimated,
            delta1: ParamMode::Fixed(0.0),
            mu: ParamMode::Fixed(0.0),
            intercept: ParamMode::Estimated,
            covariates: CovariateSet::Both,
            standardize: true,
            gp_family: Correlation::Exponential,
            kde: KdeOptions::default(),
            placement: RecruitPlacement::Renormalized,
        }
    }
}

impl ModelSpec {
    /// Q0 and delta0 taken from boundary conditions instead of being estimated.
    pub fn with_boundary(mut self, q_max: f64, delta_max: f64) -> Result<Self> {
        let (q0, d0) = solve_boundary(q_max, delta_max)?;
        self.q0 = q0;
        self.delta0 = ParamMode::Fixed(d0);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return Err(IpmError::InvalidParameter(format!("Q0 must be positive, got {}", self.q0)));
        }
        for (name, m) in [("delta0", self.delta0), ("delta1", self.delta1)] {
            if let ParamMode::Fixed(v) = m {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(IpmError::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Sampled coordinates in a fixed order.
    pub fn coordinates(&self) -> Vec<Coord> {
        let mut c = vec![Coord::Q1, Coord::Sigma];
        if self.delta0.is_free() {
            c.push(Coord::Delta0);
        }
        if self.delta1.is_free() {
            c.push(Coord::Delta1);
        }
        c.push(Coord::Eta);
        if self.mu.is_free() {
            c.push(Coord::Mu);
        }
        if self.intercept.is_free() {
            c.push(Coord::Beta(0));
        }
        c.extend((1..=self.covariates.count()).map(Coord::Beta));
        c
    }

    pub fn coordinate_name(&self, c: Coord) -> String {
        match c {
            Coord::Q1 => "Q1".into(),
            Coord::Sigma => "sigma".into(),
            Coord::Delta0 => "delta0".into(),
            Coord::Delta1 => "delta1".into(),
            Coord::Eta => "eta".into(),
            Coord::Mu => "mu".into(),
            Coord::Beta(0) => "beta0".into(),
            Coord::Beta(k) => format!("beta_{}", self.covariates.names()[k - 1]),
        }
    }

    /// Kernel parameters with fixed entries filled in and free ones at `free`.
    pub fn assemble(&self, q1: f64, sigma: f64, eta: f64) -> KernelParams {
        let fixed = |m: ParamMode| match m {
            ParamMode::Fixed(v) => v,
            ParamMode::Estimated => 0.0,
        };
        let mut beta = vec![0.0; self.covariates.count() + 1];
        beta[0] = fixed(self.intercept);
        KernelParams {
            q0: self.q0,
            q1,
            mu: fixed(self.mu),
            sigma,
            delta0: fixed(self.delta0),
            delta1: fixed(self.delta1),
            eta,
            beta,
        }
    }
}

/// One sampled kernel parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    Q1,
    Sigma,
    Delta0,
    Delta1,
    Eta,
    Mu,
    /// Regression coefficient; 0 is the intercept.
    Beta(usize),
}

impl Coord {
    /// Sampled on the log scale.
    pub fn is_positive(self) -> bool {
        !matches!(self, Coord::Mu | Coord::Beta(_))
    }

    pub fn get(self, p: &KernelParams) -> f64 {
        match self {
            Coord::Q1 => p.q1,
            Coord::Sigma => p.sigma,
            Coord::Delta0 => p.delta0,
            Coord::Delta1 => p.delta1,
            Coord::Eta => p.eta,
            Coord::Mu => p.mu,
            Coord::Beta(k) => p.beta[k],
        }
    }

    pub fn set(self, p: &mut KernelParams, v: f64) {
        match self {
            Coord::Q1 => p.q1 = v,
            Coord::Sigma => p.sigma = v,
            Coord::Delta0 => p.delta0 = v,
            Coord::Delta1 => p.delta1 = v,
            Coord::Eta => p.eta = v,
            Coord::Mu => p.mu = v,
            Coord::Beta(k) => p.beta[k] = v,
        }
    }

    /// Unconstrained value.
    pub fn to_free(self, v: f64) -> f64 {
        if self.is_positive() {
            v.ln()
        } else {
            v
        }
    }

    pub fn from_free(self, u: f64) -> f64 {
        if self.is_positive() {
            u.exp()
        } else {
            u
        }
    }

    /// Whether a change in this coordinate alters the growth stencil.
    pub fn touches_growth(self) -> bool {
        matches!(self, Coord::Sigma | Coord::Mu)
    }
}

/// `Q0 = q/(1-q)` and `delta0 = ln Delta` from the zero-density limits.
pub fn solve_boundary(q_max: f64, delta_max: f64) -> Result<(f64, f64)> {
    if !(q_max > 0.0 && q_max < 1.0) {
        return Err(IpmError::InvalidBound(format!("survival bound must lie in (0, 1), got {q_max}")));
    }
    if !(delta_max > 0.0 && delta_max.is_finite()) {
        return Err(IpmError::InvalidBound(format!("recruitment bound must be positive, got {delta_max}")));
    }
    Ok((q_max / (1.0 - q_max), delta_max.ln()))
}

/// Largest absolute year-on-year relative change and the interval it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identifiability {
    pub rho_max: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Identifiability {
    pub fn contains(&self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }
}

pub fn identifiability_bound(series: &[f64], min_half_width: f64) -> Result<Identifiability> {
    if series.len() < 2 {
        return Err(IpmError::InsufficientSamples {
            found: series.len(),
            required: 2,
        });
    }
    if let Some(t) = series.iter().position(|&n| !(n > 0.0)) {
        return Err(IpmError::ZeroPopulation(t));
    }
    let rho_max = series
        .windows(2)
        .map(|w| ((w[1] - w[0]) / w[0]).abs())
        .fold(0.0, f64::max);
    let half = rho_max.max(min_half_width);
    Ok(Identifiability {
        rho_max,
        lower: 1.0 - half,
        upper: 1.0 + half,
    })
}

/// Everything the posterior needs from the data.
#[derive(Debug, Clone)]
pub struct FitData {
    pub grid: TraitGrid,
    pub terms: Vec<LiveTerm>,
    pub bound: Identifiability,
    pub covariates: CovariateMap,
    pub years: Vec<i32>,
    pub bins: usize,
}

impl FitData {
    /// Realized densities at which the constraint is enforced.
    pub fn densities(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().map(|t| t.gamma_dot)
    }

    /// Errors unless `q + Delta` lies inside the interval at every realized density.
    pub fn check_constraint(&self, p: &KernelParams) -> Result<()> {
        for g in self.densities() {
            let v = survival_unchecked(p.q0, p.q1, g) + recruitment_unchecked(p.delta0, p.delta1, g);
            if !self.bound.contains(v) {
                return Err(IpmError::ConstraintViolation {
                    value: v,
                    lower: self.bound.lower,
                    upper: self.bound.upper,
                });
            }
        }
        Ok(())
    }

    pub fn satisfies(&self, p: &KernelParams) -> bool {
        self.check_constraint(p).is_ok()
    }
}

/// Builds the likelihood terms and the identifiability interval from a panel.
pub fn prepare_fit(
    panel: &SparsePanel,
    binning: &ClimateBinning,
    grid: &TraitGrid,
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<FitData> {
    spec.validate()?;
    priors.validate()?;
    let covariates = if spec.standardize {
        let recs: Vec<_> = (0..panel.n_plots())
            .flat_map(|j| (0..panel.n_years()).map(move |t| (j, t)))
            .map(|(j, t)| *panel.climate(j, t))
            .collect();
        CovariateMap::standardized(spec.covariates, &recs)
    } else {
        CovariateMap::raw(spec.covariates)
    };
    let terms = live_terms(panel, binning, grid, &spec.kde, &covariates)?;
    let series: Vec<f64> = panel
        .population_series()
        .into_iter()
        .enumerate()
        .map(|(t, n)| n.ok_or(IpmError::ZeroPopulation(t)))
        .collect::<Result<_>>()?;
    let bound = identifiability_bound(&series, priors.min_half_width)?;
    Ok(FitData {
        grid: grid.clone(),
        terms,
        bound,
        covariates,
        years: panel.years().to_vec(),
        bins: panel.bins(),
    })
}

/// Priors with data-dependent pieces made concrete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPriors {
    pub spec: PriorSpec,
    pub q1: PositivePrior,
    pub delta1: PositivePrior,
    pub phi: PositivePrior,
    /// Prior probability of the identifiability region under the chosen rates.
    pub constraint_mass: f64,
}

const RATE_LADDER: [f64; 10] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
const CALIBRATION_DRAWS: usize = 4000;

/// Fixes the exponential rates of `Q1` and `delta1`.
///
/// Automatic rates are `k / g` with `g` the median realized density; the
/// smallest `k` on a fixed ladder whose prior gives the constraint region
/// probability at least one half is used, or the best one if none does.
pub fn resolve_priors(priors: &PriorSpec, spec: &ModelSpec, data: &FitData, seed: u64) -> Result<ResolvedPriors> {
    priors.validate()?;
    let mut dens: Vec<f64> = data.densities().collect();
    dens.sort_by(f64::total_cmp);
    let g = crate::stats::quantile_sorted(&dens, 0.5).max(1e-9);
    let mass_for = |q1_rate: f64, d1_rate: f64| -> f64 {
        let mut rng = stream(seed, Purpose::Generic, 17);
        let q1p = PositivePrior::Exponential { rate: q1_rate };
        let d1p = PositivePrior::Exponential { rate: d1_rate };
        let mut hits = 0usize;
        for _ in 0..CALIBRATION_DRAWS {
            let mut p = spec.assemble(q1p.sample(&mut rng), 1.0, 1.0);
            if spec.delta0.is_free() {
                p.delta0 = priors.delta0.sample(&mut rng);
            }
            if spec.delta1.is_free() {
                p.delta1 = d1p.sample(&mut rng);
            }
            hits += usize::from(data.satisfies(&p));
        }
        hits as f64 / CALIBRATION_DRAWS as f64
    };
    let candidates: Vec<(f64, f64)> = match (priors.q1_rate, priors.delta1_rate) {
        (RateChoice::Fixed(a), RateChoice::Fixed(b)) => vec![(a, b)],
        (RateChoice::Fixed(a), RateChoice::Auto) => RATE_LADDER.iter().map(|k| (a, k / g)).collect(),
        (RateChoice::Auto, RateChoice::Fixed(b)) => RATE_LADDER.iter().map(|k| (k / g, b)).collect(),
        (RateChoice::Auto, RateChoice::Auto) => RATE_LADDER.iter().map(|k| (k / g, k / g)).collect(),
    };
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &c in &candidates {
        let m = mass_for(c.0, c.1);
        if m >= 0.5 {
            best = (c, m);
            break;
        }
        if m > best.1 {
            best = (c, m);
        }
    }
    let ((q1_rate, d1_rate), constraint_mass) = best;
    Ok(ResolvedPriors {
        spec: priors.clone(),
        q1: PositivePrior::Exponential { rate: q1_rate },
        delta1: PositivePrior::Exponential { rate: d1_rate },
        phi: priors.phi_prior(data.grid.span()),
        constraint_mass,
    })
}
