//! Discretized kernel operator: one-step pseudo-IPM updates, projection and
//! the dominant eigenpair.
//!
//! With cell width `d` and centers `x*`, the operator entry `(j, l)` is
//! `K(x*_j, x*_l) d`. Because survival, recruitment and the climate factor do
//! not depend on size, the matrix splits as
//! `e^{z'beta} (q G + Delta r 1')`, where `G` is a Toeplitz growth matrix and `r`
//! the recruit-size weights. [`Propagator`] exploits that split.

use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};
use crate::grid::{integrate, IntensityField, TraitGrid};
use crate::kernel::{
    climate_factor, normal_pdf, recruit_density, recruitment_rate, survival_prob, Covariates,
    KernelParams,
};

/// Beyond this many standard deviations the Gaussian underflows to zero.
const GROWTH_REACH: f64 = 40.0;

/// How recruit sizes are spread over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecruitPlacement {
    /// Recruit weights are the exponential density normalized over the grid
    /// cells, so every recruit lands inside `[L, U]`.
    #[default]
    Renormalized,
    /// Recruit weights are the exponential density at cell centers times `d`;
    /// the tail beyond `U` is lost.
    Pointwise,
}

/// Precomputed growth stencil and recruit weights for one parameter set.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: TraitGrid,
    /// `growth[k - min_offset] = phi(k d; mu, sigma) d` for offsets `j - l = k`.
    growth: Vec<f64>,
    min_offset: isize,
    recruits: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &TraitGrid, params: &KernelParams, placement: RecruitPlacement) -> Result<Self> {
        let mut p = Self {
            grid: grid.clone(),
            growth: Vec::new(),
            min_offset: 0,
            recruits: Vec::new(),
        };
        p.set_growth(params.mu, params.sigma)?;
        p.set_recruits(params.eta, placement)?;
        Ok(p)
    }

    pub fn grid(&self) -> &TraitGrid {
        &self.grid
    }

    /// Rebuilds the growth stencil for a new increment mean and spread.
    pub fn set_growth(&mut self, mu: f64, sigma: f64) -> Result<()> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(IpmError::InvalidParameter(format!(
                "growth needs sigma > 0, got mu {mu}, sigma {sigma}"
            )));
        }
        let d = self.grid.width();
        let b = self.grid.cells() as isize;
        let lo = (((mu - GROWTH_REACH * sigma) / d).floor() as isize).max(-(b - 1));
        let hi = (((mu + GROWTH_REACH * sigma) / d).ceil() as isize).min(b - 1);
        self.growth.clear();
        if lo <= hi {
            self.growth
                .extend((lo..=hi).map(|k| normal_pdf(k as f64 * d, mu, sigma) * d));
        }
        self.min_offset = lo;
        Ok(())
    }

    /// Rebuilds the recruit weights for a new exponential rate.
    pub fn set_recruits(&mut self, eta: f64, placement: RecruitPlacement) -> Result<()> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(IpmError::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        let d = self.grid.width();
        let lower = self.grid.lower();
        self.recruits.clear();
        self.recruits
            .extend(self.grid.centers().iter().map(|&y| eta * (-eta * (y - lower)).exp() * d));
        if placement == RecruitPlacement::Renormalized {
            let total: f64 = self.recruits.iter().sum();
            self.recruits.iter_mut().for_each(|r| *r /= total);
        }
        Ok(())
    }

    /// Recruit weights per cell (already multiplied by `d`).
    pub fn recruit_weights(&self) -> &[f64] {
        &self.recruits
    }

    /// Growth entry for `j - l = offset`, including the factor `d`.
    pub fn growth_weight(&self, offset: isize) -> f64 {
        let idx = offset - self.min_offset;
        if idx < 0 || idx as usize >= self.growth.len() {
            0.0
        } else {
            self.growth[idx as usize]
        }
    }

    /// `out = G input` for the Toeplitz growth matrix.
    pub fn apply_growth(&self, input: &[f64], out: &mut [f64]) {
        let b = self.grid.cells() as isize;
        debug_assert_eq!(input.len(), b as usize);
        let max_offset = self.min_offset + self.growth.len() as isize - 1;
        for (j, slot) in out.iter_mut().enumerate() {
            let j = j as isize;
            // l ranges over j - max_offset ..= j - min_offset, clipped to the grid.
            let l_lo = (j - max_offset).max(0);
            let l_hi = (j - self.min_offset).min(b - 1);
            let mut acc = 0.0;
            let mut l = l_lo;
            while l <= l_hi {
                acc += self.growth[(j - l - self.min_offset) as usize] * input[l as usize];
                l += 1;
            }
            *slot = acc;
        }
    }

    /// Combines a precomputed `G input` with recruitment:
    /// `out_j = scale (q growth_j + Delta g r_j / d)`.
    pub fn combine(&self, grown: &[f64], gamma_dot: f64, q: f64, delta: f64, scale: f64, out: &mut [f64]) {
        let influx = delta * gamma_dot / self.grid.width();
        for ((slot, g), r) in out.iter_mut().zip(grown).zip(&self.recruits) {
            *slot = scale * (q * g + influx * r);
        }
    }

    /// One kernel application with density dependence frozen at `gamma_dot`.
    pub fn step_values(
        &self,
        input: &[f64],
        z: &Covariates,
        params: &KernelParams,
        gamma_dot: f64,
    ) -> Result<Vec<f64>> {
        if input.len() != self.grid.cells() {
            return Err(IpmError::LengthMismatch {
                expected: self.grid.cells(),
                found: input.len(),
            });
        }
        step_frozen(self, input, z, params, gamma_dot)
    }
}

fn integrate_slice(values: &[f64], width: f64) -> f64 {
    values.iter().sum::<f64>() * width
}

/// Dense `B x B` discretized kernel operator.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    grid: TraitGrid,
    entries: Vec<f64>,
}

impl KernelMatrix {
    /// Wraps an arbitrary nonnegative row-major matrix.
    pub fn from_entries(grid: TraitGrid, entries: Vec<f64>) -> Result<Self> {
        let b = grid.cells();
        if entries.len() != b * b {
            return Err(IpmError::LengthMismatch {
                expected: b * b,
                found: entries.len(),
            });
        }
        if entries.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(IpmError::InvalidParameter(
                "kernel matrix entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, entries })
    }

    pub fn grid(&self) -> &TraitGrid {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.cells()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.size() + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let b = self.size();
        (0..b).map(|l| (0..b).map(|j| self.get(j, l)).sum()).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.entries
            .chunks_exact(self.size())
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Discretized operator with entries `K(x*_j, x*_l; z, theta, g) d`.
pub fn build_kernel_matrix(
    grid: &TraitGrid,
    z: &Covariates,
    params: &KernelParams,
    gamma_dot: f64,
    placement: RecruitPlacement,
) -> Result<KernelMatrix> {
    params.validate()?;
    let q = survival_prob(params, gamma_dot)?;
    let delta = recruitment_rate(params, gamma_dot)?;
    let scale = climate_factor(params, z)?;
    let d = grid.width();
    let b = grid.cells();
    let recruits: Vec<f64> = match placement {
        RecruitPlacement::Pointwise => grid
            .centers()
            .iter()
            .map(|&y| recruit_density(y, params, grid.lower()).map(|g| g * d))
            .collect::<Result<_>>()?,
        RecruitPlacement::Renormalized => {
            Propagator::new(grid, params, placement)?.recruit_weights().to_vec()
        }
    };
    let c = grid.centers();
    let mut entries = Vec::with_capacity(b * b);
    for j in 0..b {
        for l in 0..b {
            let growth = normal_pdf(c[j] - c[l], params.mu, params.sigma) * d;
            entries.push(scale * (q * growth + delta * recruits[j]));
        }
    }
    KernelMatrix::from_entries(grid.clone(), entries)
}

/// One pseudo-IPM step: `out(x*_j) = sum_l K(x*_j, x*_l; z, theta, g) d in(x*_l)`
/// with `g` the mass of the input field.
pub fn pseudo_ipm_step(
    gamma_hat: &IntensityField,
    z: &Covariates,
    params: &KernelParams,
    placement: RecruitPlacement,
) -> Result<IntensityField> {
    let gamma_dot = integrate(gamma_hat);
    step_with_density(gamma_hat, z, params, gamma_dot, placement)
}

/// Like [`pseudo_ipm_step`] but with the density-dependence argument supplied.
pub fn step_with_density(
    gamma_hat: &IntensityField,
    z: &Covariates,
    params: &KernelParams,
    gamma_dot: f64,
    placement: RecruitPlacement,
) -> Result<IntensityField> {
    params.validate()?;
    let prop = Propagator::new(gamma_hat.grid(), params, placement)?;
    let values = step_frozen(&prop, gamma_hat.values(), z, params, gamma_dot)?;
    Ok(IntensityField::new(gamma_hat.grid().clone(), values)?
        .with_labels(gamma_hat.year.map(|y| y + 1), gamma_hat.bin))
}

/// Applies the kernel with survival and recruitment evaluated at `gamma_dot`.
pub(crate) fn step_frozen(
    prop: &Propagator,
    input: &[f64],
    z: &Covariates,
    params: &KernelParams,
    gamma_dot: f64,
) -> Result<Vec<f64>> {
    if input.len() != prop.grid().cells() {
        return Err(IpmError::GridMismatch);
    }
    let q = survival_prob(params, gamma_dot)?;
    let delta = recruitment_rate(params, gamma_dot)?;
    let scale = climate_factor(params, z)?;
    let mass = integrate_slice(input, prop.grid().width());
    let mut grown = vec![0.0; input.len()];
    prop.apply_growth(input, &mut grown);
    let mut out = vec![0.0; input.len()];
    prop.combine(&grown, mass, q, delta, scale, &mut out);
    Ok(out)
}

/// How successive steps of [`project`] are fed.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionMode<'a> {
    /// Each output becomes the next input.
    Chained,
    /// Step `t` is applied to the supplied empirical field `t`.
    Anchored(&'a [IntensityField]),
}

/// Iterates the pseudo-IPM `horizon` times from `gamma0`, returning all
/// `horizon + 1` fields (the initial field first).
pub fn project(
    gamma0: &IntensityField,
    climates: &[Covariates],
    params: &KernelParams,
    horizon: usize,
    mode: ProjectionMode<'_>,
    placement: RecruitPlacement,
) -> Result<Vec<IntensityField>> {
    if climates.len() < horizon {
        return Err(IpmError::LengthMismatch {
            expected: horizon,
            found: climates.len(),
        });
    }
    if let ProjectionMode::Anchored(anchors) = mode {
        if anchors.len() < horizon {
            return Err(IpmError::LengthMismatch {
                expected: horizon,
                found: anchors.len(),
            });
        }
        if anchors.iter().any(|a| a.grid() != gamma0.grid()) {
            return Err(IpmError::GridMismatch);
        }
    }
    params.validate()?;
    let prop = Propagator::new(gamma0.grid(), params, placement)?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(gamma0.clone());
    for t in 0..horizon {
        let input = match mode {
            ProjectionMode::Chained => &out[t],
            ProjectionMode::Anchored(anchors) => &anchors[t],
        };
        let g = integrate(input);
        let values = step_frozen(&prop, input.values(), &climates[t], params, g)?;
        let year = gamma0.year.map(|y| y + t as i32 + 1);
        out.push(IntensityField::new(gamma0.grid().clone(), values)?.with_labels(year, gamma0.bin));
    }
    Ok(out)
}

/// Dominant eigenvalue and its eigenfunction.
#[derive(Debug, Clone)]
pub struct EigenPair {
    /// Asymptotic growth rate.
    pub lambda: f64,
    /// Stable trait distribution, normalized to unit integral.
    pub vector: IntensityField,
    /// `||K w - lambda w||_inf / ||w||_inf` at termination.
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration from the uniform field.
///
/// Stops once `||K w - lambda w||_inf <= tol lambda ||w||_inf`.
pub fn dominant_eigenpair(matrix: &KernelMatrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let b = matrix.size();
    let d = matrix.grid().width();
    let mut w = vec![1.0; b];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let kw = matrix.apply(&w);
        let norm = kw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(IpmError::NoConvergence {
                iterations: iter,
                residual,
            });
        }
        let next: Vec<f64> = kw.iter().map(|v| v / norm).collect();
        // Rayleigh-type estimate from the mass ratio, valid for nonnegative iterates.
        let knext = matrix.apply(&next);
        let lambda = knext.iter().sum::<f64>() / next.iter().sum::<f64>();
        residual = knext
            .iter()
            .zip(&next)
            .map(|(a, v)| (a - lambda * v).abs())
            .fold(0.0, f64::max);
        w = next;
        if !(lambda > 0.0) {
            return Err(IpmError::NoConvergence {
                iterations: iter,
                residual,
            });
        }
        if residual <= tol * lambda {
            let mass: f64 = w.iter().sum::<f64>() * d;
            let values = w.iter().map(|v| (v / mass).max(0.0)).collect();
            return Ok(EigenPair {
                lambda,
                vector: IntensityField::new(matrix.grid().clone(), values)?,
                residual,
                iterations: iter,
            });
        }
    }
    Err(IpmError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::discretize;
    use crate::kernel::kernel_eval;
    use approx::assert_relative_eq;

    fn params() -> KernelParams {
        KernelParams {
            q0: 1.0,
            q1: 0.01,
            mu: 0.0,
            sigma: 0.25,
            delta0: 0.3,
            delta1: 0.0,
            eta: 0.1,
            beta: vec![0.0],
        }
    }

    fn bump(grid: &TraitGrid, center: f64, sd: f64, mass: f64) -> IntensityField {
        let raw: Vec<f64> = grid
            .centers()
            .iter()
            .map(|x| (-0.5 * ((x - center) / sd).powi(2)).exp())
            .collect();
        let total: f64 = raw.iter().sum::<f64>() * grid.width();
        IntensityField::new(grid.clone(), raw.iter().map(|v| v * mass / total).collect()).unwrap()
    }

    #[test]
    fn two_cell_matrix_matches_scalar_kernel() {
        let grid = discretize(0.0, 2.0, 2).unwrap();
        let p = KernelParams { sigma: 0.8, q1: 0.05, delta1: 0.02, eta: 0.5, ..params() };
        let g = 3.0;
        let m = build_kernel_matrix(&grid, &Covariates::none(), &p, g, RecruitPlacement::Pointwise).unwrap();
        let c = grid.centers();
        for j in 0..2 {
            for l in 0..2 {
                let k = kernel_eval(c[j], c[l], &Covariates::none(), &p, g, 0.0).unwrap();
                assert_relative_eq!(m.get(j, l), k * grid.width(), max_relative = 1e-14);
            }
        }
        // Row sums equal the step of the all-ones field with g frozen.
        let ones = IntensityField::constant(grid.clone(), 1.0).unwrap();
        let out = step_with_density(&ones, &Covariates::none(), &p, g, RecruitPlacement::Pointwise).unwrap();
        for j in 0..2 {
            assert_relative_eq!(out.values()[j], m.get(j, 0) + m.get(j, 1), max_relative = 1e-14);
        }
    }

    #[test]
    fn narrow_growth_without_recruitment_is_diagonal() {
        let grid = discretize(0.0, 10.0, 10).unwrap();
        // delta0 = 0 gives Delta = 1; a huge delta1 drives it to zero.
        let p = KernelParams { sigma: 1e-3, delta0: 0.0, delta1: 1e3, q1: 0.0, ..params() };
        let m = build_kernel_matrix(&grid, &Covariates::none(), &p, 1.0, RecruitPlacement::Pointwise).unwrap();
        let q = 0.5;
        for j in 0..10 {
            for l in 0..10 {
                let expect = if j == l { q * normal_pdf(0.0, 0.0, 1e-3) * grid.width() } else { 0.0 };
                assert_relative_eq!(m.get(j, l), expect, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn matrix_ignores_density_without_dependence() {
        let grid = discretize(0.0, 5.0, 6).unwrap();
        let p = KernelParams { q1: 0.0, delta1: 0.0, ..params() };
        let a = build_kernel_matrix(&grid, &Covariates::none(), &p, 1.0, RecruitPlacement::default()).unwrap();
        let b = build_kernel_matrix(&grid, &Covariates::none(), &p, 500.0, RecruitPlacement::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn renormalized_recruits_sum_to_one() {
        let grid = discretize(0.0, 50.0, 100).unwrap();
        let prop = Propagator::new(&grid, &params(), RecruitPlacement::Renormalized).unwrap();
        assert_relative_eq!(prop.recruit_weights().iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        let pw = Propagator::new(&grid, &params(), RecruitPlacement::Pointwise).unwrap();
        // Pointwise loses the e^{-eta (U - L)} tail.
        assert_relative_eq!(pw.recruit_weights().iter().sum::<f64>(), 1.0 - (-5.0f64).exp(), max_relative = 1e-3);
    }

    #[test]
    fn step_matches_dense_matrix_product() {
        let grid = discretize(0.0, 20.0, 40).unwrap();
        let p = KernelParams { sigma: 0.9, mu: 0.3, beta: vec![0.1, 0.05], ..params() };
        let z = Covariates::scalar(2.0);
        let f = bump(&grid, 8.0, 3.0, 25.0);
        let m = build_kernel_matrix(&grid, &z, &p, integrate(&f), RecruitPlacement::default()).unwrap();
        let dense = m.apply(f.values());
        let out = pseudo_ipm_step(&f, &z, &p, RecruitPlacement::default()).unwrap();
        for (a, b) in out.values().iter().zip(&dense) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn zero_field_stays_zero() {
        let grid = discretize(0.0, 20.0, 40).unwrap();
        let out = pseudo_ipm_step(&IntensityField::zeros(grid), &Covariates::none(), &params(), RecruitPlacement::default()).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_is_linear_with_frozen_density() {
        let grid = discretize(0.0, 30.0, 60).unwrap();
        let p = params();
        let f1 = bump(&grid, 10.0, 2.0, 20.0);
        let f2 = bump(&grid, 18.0, 4.0, 7.0);
        let (a, b) = (1.7, 0.4);
        let combo: Vec<f64> = f1.values().iter().zip(f2.values()).map(|(x, y)| a * x + b * y).collect();
        let combo = IntensityField::new(grid.clone(), combo).unwrap();
        let g = 33.0;
        let pl = RecruitPlacement::default();
        let lhs = step_with_density(&combo, &Covariates::none(), &p, g, pl).unwrap();
        let s1 = step_with_density(&f1, &Covariates::none(), &p, g, pl).unwrap();
        let s2 = step_with_density(&f2, &Covariates::none(), &p, g, pl).unwrap();
        for j in 0..grid.cells() {
            let rhs = a * s1.values()[j] + b * s2.values()[j];
            assert!((lhs.values()[j] - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn project_zero_horizon_and_composition() {
        let grid = discretize(0.0, 30.0, 60).unwrap();
        let p = params();
        let f = bump(&grid, 12.0, 3.0, 30.0);
        let zs = vec![Covariates::none(); 2];
        let pl = RecruitPlacement::default();
        let none = project(&f, &zs, &p, 0, ProjectionMode::Chained, pl).unwrap();
        assert_eq!(none.len(), 1);
        assert_eq!(none[0], f);
        let two = project(&f, &zs, &p, 2, ProjectionMode::Chained, pl).unwrap();
        let manual = pseudo_ipm_step(&pseudo_ipm_step(&f, &zs[0], &p, pl).unwrap(), &zs[1], &p, pl).unwrap();
        for (a, b) in two[2].values().iter().zip(manual.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-14);
        }
        assert!(project(&f, &zs, &p, 3, ProjectionMode::Chained, pl).is_err());
    }

    #[test]
    fn anchored_projection_uses_supplied_fields() {
        let grid = discretize(0.0, 30.0, 60).unwrap();
        let p = params();
        let anchors = vec![bump(&grid, 10.0, 3.0, 30.0), bump(&grid, 15.0, 3.0, 50.0)];
        let zs = vec![Covariates::none(); 2];
        let pl = RecruitPlacement::default();
        let out = project(&anchors[0], &zs, &p, 2, ProjectionMode::Anchored(&anchors), pl).unwrap();
        let expect = pseudo_ipm_step(&anchors[1], &zs[1], &p, pl).unwrap();
        assert_eq!(out[2].values(), expect.values());
    }

    #[test]
    fn geometric_growth_without_density_dependence() {
        // Domain wide enough that growth leakage is negligible.
        let grid = discretize(0.0, 60.0, 240).unwrap();
        // Recruitment switched off so nothing lands next to L and shrinks out.
        let p = KernelParams { q1: 0.0, delta0: 0.0, delta1: 1e3, ..params() };
        let f = bump(&grid, 30.0, 4.0, 10.0);
        let zs = vec![Covariates::none(); 5];
        let out = project(&f, &zs, &p, 5, ProjectionMode::Chained, RecruitPlacement::Renormalized).unwrap();
        let rate = 0.5f64;
        assert_relative_eq!(integrate(&out[5]), rate.powi(5) * 10.0, max_relative = 1e-6);
    }

    #[test]
    fn eigenpair_of_scaled_identity() {
        let grid = discretize(0.0, 4.0, 4).unwrap();
        let mut e = vec![0.0; 16];
        for j in 0..4 {
            e[j * 4 + j] = 2.5;
        }
        let m = KernelMatrix::from_entries(grid, e).unwrap();
        let ep = dominant_eigenpair(&m, 1e-12, 100).unwrap();
        assert_relative_eq!(ep.lambda, 2.5, max_relative = 1e-14);
        assert!(ep.vector.values().iter().all(|&v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn eigenpair_two_by_two() {
        let grid = discretize(0.0, 2.0, 2).unwrap();
        let m = KernelMatrix::from_entries(grid, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let ep = dominant_eigenpair(&m, 1e-12, 100).unwrap();
        assert_relative_eq!(ep.lambda, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn eigenvector_is_nonnegative() {
        let grid = discretize(0.0, 40.0, 80).unwrap();
        let m = build_kernel_matrix(&grid, &Covariates::none(), &params(), 20.0, RecruitPlacement::default()).unwrap();
        let ep = dominant_eigenpair(&m, 1e-10, 10_000).unwrap();
        assert!(ep.vector.values().iter().all(|&v| v >= 0.0));
        assert_relative_eq!(integrate(&ep.vector), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn nilpotent_matrix_fails_to_converge() {
        let grid = discretize(0.0, 2.0, 2).unwrap();
        let m = KernelMatrix::from_entries(grid, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(dominant_eigenpair(&m, 1e-10, 50), Err(IpmError::NoConvergence { .. })));
    }
}
