//! Log-Gaussian Cox observation layer: GP log-intensity perturbations and the
//! cell-discretized Poisson likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};
use crate::grid::{IntensityField, PointPattern, TraitGrid};
use crate::rng::{stream, Purpose};

/// Intensities are floored here before the log-GP factor is applied.
pub const GAMMA_FLOOR: f64 = 1e-12;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// `exp(-phi h)`
    #[default]
    Exponential,
    /// `(1 + sqrt(3) phi h) exp(-sqrt(3) phi h)`
    Matern32,
}

impl Correlation {
    pub fn eval(self, phi: f64, h: f64) -> f64 {
        match self {
            Correlation::Exponential => (-phi * h).exp(),
            Correlation::Matern32 => {
                let a = 3f64.sqrt() * phi * h;
                (1.0 + a) * (-a).exp()
            }
        }
    }
}

/// Stationary GP on the trait interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GPConfig {
    pub sigma2_eps: f64,
    pub phi: f64,
    #[serde(default)]
    pub family: Correlation,
}

impl GPConfig {
    pub fn new(sigma2_eps: f64, phi: f64) -> Result<Self> {
        let c = Self {
            sigma2_eps,
            phi,
            family: Correlation::Exponential,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_eps > 0.0 && self.sigma2_eps.is_finite()) {
            return Err(IpmError::InvalidParameter(format!(
                "GP variance must be positive, got {}",
                self.sigma2_eps
            )));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(IpmError::InvalidParameter(format!(
                "GP decay must be positive, got {}",
                self.phi
            )));
        }
        Ok(())
    }

    /// Covariance between cell centers `j` and `k`.
    pub fn covariance(&self, h: f64) -> f64 {
        self.sigma2_eps * self.family.eval(self.phi, h)
    }
}

/// Cholesky factor of the correlation matrix on the grid centers.
///
/// The variance enters only as a scale, so one factor serves every
/// `sigma2_eps` with the same decay.
#[derive(Debug, Clone)]
pub struct CorrelationFactor {
    chol: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
    phi: f64,
    family: Correlation,
}

impl CorrelationFactor {
    pub fn new(grid: &TraitGrid, phi: f64, family: Correlation) -> Result<Self> {
        let c = grid.centers();
        let b = c.len();
        let corr = DMatrix::from_fn(b, b, |j, k| family.eval(phi, (c[j] - c[k]).abs()));
        let mut jitter = JITTER_START;
        loop {
            let mut m = corr.clone();
            for j in 0..b {
                m[(j, j)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                let l = ch.unpack();
                let log_det = 2.0 * (0..b).map(|j| l[(j, j)].ln()).sum::<f64>();
                return Ok(Self {
                    chol: l,
                    log_det,
                    jitter,
                    phi,
                    family,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(IpmError::NotPositiveDefinite { jitter: jitter / 10.0 });
            }
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn family(&self) -> Correlation {
        self.family
    }

    /// Relative jitter that was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn size(&self) -> usize {
        self.chol.nrows()
    }

    /// `sqrt(sigma2) L w` for a standard-normal `w`.
    pub fn correlate(&self, sigma2: f64, white: &[f64]) -> Vec<f64> {
        let s = sigma2.sqrt();
        let b = self.size();
        (0..b)
            .map(|j| s * (0..=j).map(|k| self.chol[(j, k)] * white[k]).sum::<f64>())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> Vec<f64> {
        let white: Vec<f64> = (0..self.size()).map(|_| rng.sample(StandardNormal)).collect();
        self.correlate(sigma2, &white)
    }

    /// `eps' R^{-1} eps` for the jittered correlation matrix `R`.
    pub fn quad_form(&self, eps: &[f64]) -> f64 {
        let v = DVector::from_column_slice(eps);
        let w = self
            .chol
            .solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal");
        w.norm_squared()
    }

    /// Log density of `eps` under `N(0, sigma2 R)`.
    pub fn log_density(&self, sigma2: f64, eps: &[f64]) -> f64 {
        self.log_density_from_quad(sigma2, self.quad_form(eps))
    }

    /// Same as [`log_density`](Self::log_density) with the quadratic form precomputed.
    pub fn log_density_from_quad(&self, sigma2: f64, quad: f64) -> f64 {
        let b = self.size() as f64;
        -0.5 * (b * (2.0 * std::f64::consts::PI).ln() + b * sigma2.ln() + self.log_det + quad / sigma2)
    }
}

/// GP prior used by the sampler.
///
/// For the exponential family on equally spaced centers the process is a
/// stationary AR(1) sequence with lag-one correlation `e^{-phi d}`, which
/// gives exact O(B) draws and densities. Other families use the dense factor.
#[derive(Debug, Clone)]
pub enum GpFactor {
    Markov { rho: f64, cells: usize },
    Dense(CorrelationFactor),
}

impl GpFactor {
    pub fn new(grid: &TraitGrid, phi: f64, family: Correlation) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(IpmError::InvalidParameter(format!("GP decay must be positive, got {phi}")));
        }
        match family {
            Correlation::Exponential => Ok(GpFactor::Markov {
                rho: (-phi * grid.width()).exp(),
                cells: grid.cells(),
            }),
            _ => Ok(GpFactor::Dense(CorrelationFactor::new(grid, phi, family)?)),
        }
    }

    /// Dense factor regardless of family.
    pub fn dense(grid: &TraitGrid, phi: f64, family: Correlation) -> Result<Self> {
        Ok(GpFactor::Dense(CorrelationFactor::new(grid, phi, family)?))
    }

    pub fn size(&self) -> usize {
        match self {
            GpFactor::Markov { cells, .. } => *cells,
            GpFactor::Dense(f) => f.size(),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R, out: &mut [f64]) {
        match self {
            GpFactor::Markov { rho, .. } => {
                let s = sigma2.sqrt();
                let innov = s * (1.0 - rho * rho).sqrt();
                let mut prev = s * rng.sample::<f64, _>(StandardNormal);
                out[0] = prev;
                for slot in out.iter_mut().skip(1) {
                    prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
                    *slot = prev;
                }
            }
            GpFactor::Dense(f) => out.copy_from_slice(&f.sample(sigma2, rng)),
        }
    }

    /// `eps' R^{-1} eps`.
    pub fn quad_form(&self, eps: &[f64]) -> f64 {
        match self {
            GpFactor::Markov { rho, .. } => {
                let v = 1.0 - rho * rho;
                let tail: f64 = eps.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
                eps[0] * eps[0] + tail / v
            }
            GpFactor::Dense(f) => f.quad_form(eps),
        }
    }

    /// `log det R`.
    pub fn log_det(&self) -> f64 {
        match self {
            GpFactor::Markov { rho, cells } => (*cells as f64 - 1.0) * (1.0 - rho * rho).ln(),
            GpFactor::Dense(f) => f.log_det,
        }
    }

    pub fn log_density_from_quad(&self, sigma2: f64, quad: f64) -> f64 {
        let b = self.size() as f64;
        -0.5 * (b * (2.0 * std::f64::consts::PI).ln() + b * sigma2.ln() + self.log_det() + quad / sigma2)
    }

    pub fn log_density(&self, sigma2: f64, eps: &[f64]) -> f64 {
        self.log_density_from_quad(sigma2, self.quad_form(eps))
    }
}

/// Mean-zero GP draw on the grid centers, deterministic in `seed`.
pub fn sample_gp(grid: &TraitGrid, config: &GPConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let f = CorrelationFactor::new(grid, config.phi, config.family)?;
    let mut rng = stream(seed, Purpose::GpNoise, 0);
    Ok(f.sample(config.sigma2_eps, &mut rng))
}

/// Log density of `eps` under the GP prior.
pub fn gp_log_density(grid: &TraitGrid, config: &GPConfig, eps: &[f64]) -> Result<f64> {
    config.validate()?;
    if eps.len() != grid.cells() {
        return Err(IpmError::LengthMismatch {
            expected: grid.cells(),
            found: eps.len(),
        });
    }
    let f = CorrelationFactor::new(grid, config.phi, config.family)?;
    Ok(f.log_density(config.sigma2_eps, eps))
}

/// `lambda = gamma e^eps` cell-wise.
pub fn apply_log_gp(gamma: &IntensityField, eps: &[f64]) -> Result<IntensityField> {
    if eps.len() != gamma.values().len() {
        return Err(IpmError::LengthMismatch {
            expected: gamma.values().len(),
            found: eps.len(),
        });
    }
    let values = gamma
        .values()
        .iter()
        .zip(eps)
        .map(|(g, e)| g * e.exp())
        .collect();
    Ok(IntensityField::new(gamma.grid().clone(), values)?.with_labels(gamma.year, gamma.bin))
}

/// Per-cell point counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: Vec<u64>,
    pub year: Option<i32>,
    pub bin: Option<usize>,
}

impl CellCounts {
    pub fn zeros(cells: usize) -> Self {
        Self {
            counts: vec![0; cells],
            year: None,
            bin: None,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another set of counts cell-wise.
    pub fn absorb(&mut self, other: &CellCounts) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(IpmError::LengthMismatch {
                expected: self.counts.len(),
                found: other.counts.len(),
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

pub fn bin_counts(pattern: &PointPattern, grid: &TraitGrid) -> Result<CellCounts> {
    let mut counts = vec![0u64; grid.cells()];
    for &x in &pattern.diameters {
        counts[grid.cell_index(x)?] += 1;
    }
    Ok(CellCounts {
        counts,
        year: Some(pattern.year),
        bin: None,
    })
}

/// `-sum m lambda d + sum n log(m lambda)`.
pub fn log_likelihood(counts: &CellCounts, lambda: &IntensityField, multiplicity: u64) -> Result<f64> {
    if counts.counts.len() != lambda.values().len() {
        return Err(IpmError::LengthMismatch {
            expected: lambda.values().len(),
            found: counts.counts.len(),
        });
    }
    if multiplicity == 0 {
        return Err(IpmError::InvalidMultiplicity);
    }
    let ll = poisson_cells(&counts.counts, lambda.values(), lambda.grid().width(), multiplicity as f64);
    if ll.is_finite() {
        return Ok(ll);
    }
    let (cell, &count) = counts
        .counts
        .iter()
        .enumerate()
        .find(|(j, &n)| n > 0 && lambda.values()[*j] <= 0.0)
        .expect("non-finite likelihood comes from a zero cell with points");
    Err(IpmError::ZeroIntensityWithCount { cell, count })
}

/// Unchecked kernel of [`log_likelihood`]; `-inf` when a counted cell has zero intensity.
pub(crate) fn poisson_cells(counts: &[u64], lambda: &[f64], width: f64, m: f64) -> f64 {
    let mut exposure = 0.0;
    let mut logs = 0.0;
    for (&n, &l) in counts.iter().zip(lambda) {
        exposure += l;
        if n > 0 {
            logs += n as f64 * (m * l).ln();
        }
    }
    -m * width * exposure + logs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::discretize;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bin_counts_examples() {
        let g = discretize(0.0, 10.0, 5).unwrap();
        let c = bin_counts(&PointPattern::new("p", 0, vec![1.0, 3.0, 9.0]), &g).unwrap();
        assert_eq!(c.counts, vec![1, 1, 0, 0, 1]);
        let e = bin_counts(&PointPattern::new("p", 0, vec![]), &g).unwrap();
        assert_eq!(e.total(), 0);
        let u = bin_counts(&PointPattern::new("p", 0, vec![10.0]), &g).unwrap();
        assert_eq!(u.counts[4], 1);
        assert!(bin_counts(&PointPattern::new("p", 0, vec![10.5]), &g).is_err());
    }

    #[test]
    fn likelihood_closed_forms() {
        let g = discretize(0.0, 10.0, 10).unwrap();
        let lambda = IntensityField::constant(g.clone(), 2.0).unwrap();
        let counts = CellCounts { counts: vec![1, 0, 2, 0, 0, 1, 0, 0, 1, 0], year: None, bin: None };
        assert_relative_eq!(log_likelihood(&counts, &lambda, 1).unwrap(), -20.0 + 5.0 * 2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(log_likelihood(&counts, &lambda, 3).unwrap(), -60.0 + 5.0 * 6f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(log_likelihood(&CellCounts::zeros(10), &lambda, 2).unwrap(), -40.0);
        assert!(matches!(log_likelihood(&counts, &lambda, 0), Err(IpmError::InvalidMultiplicity)));
    }

    #[test]
    fn zero_intensity_with_points_is_an_error() {
        let g = discretize(0.0, 2.0, 2).unwrap();
        let lambda = IntensityField::new(g, vec![1.0, 0.0]).unwrap();
        let counts = CellCounts { counts: vec![0, 3], year: None, bin: None };
        assert!(matches!(
            log_likelihood(&counts, &lambda, 1),
            Err(IpmError::ZeroIntensityWithCount { cell: 1, count: 3 })
        ));
        let ok = CellCounts { counts: vec![3, 0], year: None, bin: None };
        assert!(log_likelihood(&ok, &lambda, 1).is_ok());
    }

    #[test]
    fn constant_intensity_maximized_at_closed_form() {
        // Golden-section search over log lambda against N / (m B d).
        let g = discretize(0.0, 5.0, 10).unwrap();
        let counts = CellCounts { counts: vec![0, 3, 1, 0, 0, 2, 0, 4, 0, 1], year: None, bin: None };
        let m = 2;
        let f = |ll: f64| {
            let lam = IntensityField::constant(g.clone(), ll.exp()).unwrap();
            log_likelihood(&counts, &lam, m).unwrap()
        };
        let (mut a, mut b) = (-5.0f64, 5.0f64);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) > f(d) { b = d } else { a = c }
        }
        let expect = 11.0 / (2.0 * 10.0 * 0.5);
        assert_relative_eq!(((a + b) / 2.0).exp(), expect, max_relative = 1e-6);
    }

    #[test]
    fn log_gp_identities() {
        let g = discretize(0.0, 4.0, 4).unwrap();
        let gamma = IntensityField::new(g, vec![1.0, 2.0, 0.0, 4.0]).unwrap();
        let same = apply_log_gp(&gamma, &[0.0; 4]).unwrap();
        assert_eq!(same.values(), gamma.values());
        let c = apply_log_gp(&gamma, &[0.7; 4]).unwrap();
        assert_relative_eq!(c.mass(), 0.7f64.exp() * gamma.mass(), max_relative = 1e-14);
        let mixed = apply_log_gp(&gamma, &[-3.0, 2.0, 1.0, -0.5]).unwrap();
        assert!(mixed.values().iter().all(|&v| v >= 0.0));
        assert!(apply_log_gp(&gamma, &[0.0; 3]).is_err());
    }

    #[test]
    fn gp_density_matches_dense_formula() {
        let g = discretize(0.0, 3.0, 3).unwrap();
        let cfg = GPConfig::new(0.5, 0.8).unwrap();
        let eps = [0.3, -0.2, 0.1];
        // Dense oracle via nalgebra inverse and determinant.
        let c = g.centers();
        let sigma = DMatrix::from_fn(3, 3, |j, k| {
            0.5 * (-0.8 * (c[j] - c[k]).abs()).exp() + if j == k { 0.5 * JITTER_START } else { 0.0 }
        });
        let v = DVector::from_column_slice(&eps);
        let quad = (v.transpose() * sigma.clone().try_inverse().unwrap() * &v)[(0, 0)];
        let expect = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + quad);
        assert_relative_eq!(gp_log_density(&g, &cfg, &eps).unwrap(), expect, max_relative = 1e-10);
    }

    #[test]
    fn tiny_variance_gives_tiny_draws() {
        let g = discretize(0.0, 10.0, 20).unwrap();
        let cfg = GPConfig::new(1e-20, 1.0).unwrap();
        let e = sample_gp(&g, &cfg, 3).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn sampling_is_seeded() {
        let g = discretize(0.0, 10.0, 20).unwrap();
        let cfg = GPConfig::new(0.04, 0.1).unwrap();
        assert_eq!(sample_gp(&g, &cfg, 9).unwrap(), sample_gp(&g, &cfg, 9).unwrap());
        assert_ne!(sample_gp(&g, &cfg, 9).unwrap(), sample_gp(&g, &cfg, 10).unwrap());
    }

    #[test]
    fn matern_is_a_valid_correlation() {
        assert_eq!(Correlation::Matern32.eval(1.0, 0.0), 1.0);
        assert!(Correlation::Matern32.eval(1.0, 2.0) < Correlation::Matern32.eval(1.0, 1.0));
        let g = discretize(0.0, 10.0, 40).unwrap();
        assert!(CorrelationFactor::new(&g, 0.5, Correlation::Matern32).is_ok());
    }

    #[test]
    fn markov_factor_matches_dense_cholesky() {
        let g = discretize(0.0, 50.0, 100).unwrap();
        let m = GpFactor::new(&g, 0.12, Correlation::Exponential).unwrap();
        let d = GpFactor::dense(&g, 0.12, Correlation::Exponential).unwrap();
        let eps: Vec<f64> = (0..100).map(|j| (j as f64 * 0.37).sin() * 0.3).collect();
        // The dense factor carries a 1e-10 relative jitter.
        assert_relative_eq!(m.log_density(0.04, &eps), d.log_density(0.04, &eps), max_relative = 1e-6);
        assert_relative_eq!(m.log_det(), d.log_det(), max_relative = 1e-5);
    }

    proptest! {
        #[test]
        fn likelihood_concave_in_log_intensity(
            logs in proptest::collection::vec(-3.0f64..3.0, 6),
            counts in proptest::collection::vec(0u64..5, 6),
            cell in 0usize..6,
            m in 1u64..4,
        ) {
            let g = discretize(0.0, 3.0, 6).unwrap();
            let c = CellCounts { counts, year: None, bin: None };
            let eval = |shift: f64| {
                let v: Vec<f64> = logs.iter().enumerate()
                    .map(|(j, l)| if j == cell { (l + shift).exp() } else { l.exp() })
                    .collect();
                log_likelihood(&c, &IntensityField::new(g.clone(), v).unwrap(), m).unwrap()
            };
            let h = 1e-2;
            prop_assert!(eval(h) - 2.0 * eval(0.0) + eval(-h) <= 1e-9);
        }

        #[test]
        fn counts_are_conserved(points in proptest::collection::vec(0.0f64..=10.0, 0..50)) {
            let g = discretize(0.0, 10.0, 7).unwrap();
            let n = points.len() as u64;
            prop_assert_eq!(bin_counts(&PointPattern::new("p", 0, points), &g).unwrap().total(), n);
        }
    }
}
