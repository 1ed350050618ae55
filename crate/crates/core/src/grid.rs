//! Trait-space discretization, empirical intensities and midpoint quadrature.
//!
//! Everything downstream works on a fixed grid of `B` equal cells over the
//! diameter interval `[L, U]`. Intensities are piecewise constant on the cells
//! and are integrated with the midpoint rule.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};
use crate::kernel::ClimateRecord;

/// Equal-width discretization of `[lower, upper]` into `cells` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitGrid {
    lower: f64,
    upper: f64,
    cells: usize,
    width: f64,
    centers: Vec<f64>,
}

impl TraitGrid {
    pub fn new(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(IpmError::InvalidBounds { lower, upper });
        }
        if cells < 2 {
            return Err(IpmError::InvalidCount(cells));
        }
        let width = (upper - lower) / cells as f64;
        let centers = (0..cells)
            .map(|j| lower + (j as f64 + 0.5) * width)
            .collect();
        Ok(Self {
            lower,
            upper,
            cells,
            width,
            centers,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Cell width `d`.
    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn span(&self) -> f64 {
        self.upper - self.lower
    }

    /// Left edge of cell `j` (edge `cells` is the upper bound).
    pub fn edge(&self, j: usize) -> f64 {
        if j >= self.cells {
            self.upper
        } else {
            self.lower + j as f64 * self.width
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index of the cell holding `x`. Points at `U` go to the last cell.
    pub fn cell_index(&self, x: f64) -> Result<usize> {
        if !self.contains(x) {
            return Err(IpmError::OutOfRange {
                value: x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let j = ((x - self.lower) / self.width).floor() as usize;
        Ok(j.min(self.cells - 1))
    }
}

/// Shorthand for [`TraitGrid::new`].
pub fn discretize(lower: f64, upper: f64, cells: usize) -> Result<TraitGrid> {
    TraitGrid::new(lower, upper, cells)
}

/// Nonnegative intensity (individuals per trait unit) held cell-wise on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityField {
    grid: TraitGrid,
    values: Vec<f64>,
    /// Year index the field refers to, if any.
    pub year: Option<i32>,
    /// Climate bin, or `None` for a plot-level field.
    pub bin: Option<usize>,
}

impl IntensityField {
    pub fn new(grid: TraitGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(IpmError::LengthMismatch {
                expected: grid.cells(),
                found: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(IpmError::InvalidParameter(format!(
                "intensity values must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(Self {
            grid,
            values,
            year: None,
            bin: None,
        })
    }

    pub fn zeros(grid: TraitGrid) -> Self {
        let values = vec![0.0; grid.cells()];
        Self {
            grid,
            values,
            year: None,
            bin: None,
        }
    }

    /// Constant field `c` on every cell.
    pub fn constant(grid: TraitGrid, c: f64) -> Result<Self> {
        let values = vec![c; grid.cells()];
        Self::new(grid, values)
    }

    pub fn with_labels(mut self, year: Option<i32>, bin: Option<usize>) -> Self {
        self.year = year;
        self.bin = bin;
        self
    }

    pub fn grid(&self) -> &TraitGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Midpoint-rule integral: the expected number of individuals.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.width()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * factor).collect();
        Ok(Self::new(self.grid.clone(), values)?.with_labels(self.year, self.bin))
    }
}

/// Midpoint-rule integral of `field` over the grid.
pub fn integrate(field: &IntensityField) -> f64 {
    field.mass()
}

/// One plot-year's observed diameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub plot_id: String,
    pub year: i32,
    pub diameters: Vec<f64>,
    pub climate: Option<ClimateRecord>,
}

impl PointPattern {
    pub fn new(plot_id: impl Into<String>, year: i32, diameters: Vec<f64>) -> Self {
        Self {
            plot_id: plot_id.into(),
            year,
            diameters,
            climate: None,
        }
    }

    pub fn len(&self) -> usize {
        self.diameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diameters.is_empty()
    }

    pub fn check_within(&self, grid: &TraitGrid) -> Result<()> {
        match self.diameters.iter().find(|&&x| !grid.contains(x)) {
            Some(&x) => Err(IpmError::OutOfRange {
                value: x,
                lower: grid.lower(),
                upper: grid.upper(),
            }),
            None => Ok(()),
        }
    }
}

/// Kernel bandwidth selection for [`empirical_intensity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule of thumb on the pooled diameters.
    #[default]
    Silverman,
    Fixed(f64),
}

/// How the kernel estimate's total mass is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassMode {
    /// Mass equals the pooled point count.
    #[default]
    Raw,
    /// Mass equals the pooled count divided by the number of patterns.
    PerPlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeOptions {
    pub bandwidth: Bandwidth,
    pub mode: MassMode,
    /// Return a zero field instead of failing on an empty pattern list.
    pub allow_empty: bool,
}

impl Default for KdeOptions {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Silverman,
            mode: MassMode::Raw,
            allow_empty: false,
        }
    }
}

impl KdeOptions {
    pub fn per_plot(bandwidth: Bandwidth) -> Self {
        Self {
            bandwidth,
            mode: MassMode::PerPlot,
            allow_empty: false,
        }
    }
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to the cell
/// width when the sample is too small or has no spread.
pub fn silverman_bandwidth(points: &[f64], fallback: f64) -> f64 {
    let n = points.len();
    if n < 2 {
        return fallback;
    }
    let mean = points.iter().sum::<f64>() / n as f64;
    let var = points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = crate::stats::quantile_sorted(&sorted, 0.75) - crate::stats::quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        fallback
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Adds the cell masses of a Gaussian kernel centred at `center` to `acc`.
fn accumulate_kernel(acc: &mut [f64], grid: &TraitGrid, center: f64, h: f64) {
    const REACH: f64 = 9.0;
    let lo = center - REACH * h;
    let hi = center + REACH * h;
    if hi < grid.lower() || lo > grid.upper() {
        return;
    }
    let d = grid.width();
    let first = (((lo - grid.lower()) / d).floor().max(0.0) as usize).min(grid.cells() - 1);
    let last = (((hi - grid.lower()) / d).floor().max(0.0) as usize).min(grid.cells() - 1);
    let mut below = std_normal_cdf((grid.edge(first) - center) / h);
    for (j, slot) in acc.iter_mut().enumerate().take(last + 1).skip(first) {
        let above = std_normal_cdf((grid.edge(j + 1) - center) / h);
        *slot += above - below;
        below = above;
    }
}

/// Gaussian kernel intensity estimate with reflection at both ends of the grid.
///
/// Cell values are the kernel mass falling in each cell divided by the cell
/// width, so the estimate tends to the histogram of the points as the
/// bandwidth shrinks. The field is rescaled to carry exactly the pooled count
/// (raw mode) or the pooled count per pattern (per-plot mode).
pub fn empirical_intensity(
    patterns: &[PointPattern],
    grid: &TraitGrid,
    options: &KdeOptions,
) -> Result<IntensityField> {
    if patterns.is_empty() {
        return if options.allow_empty {
            Ok(IntensityField::zeros(grid.clone()))
        } else {
            Err(IpmError::EmptyInput)
        };
    }
    for p in patterns {
        p.check_within(grid)?;
    }
    let pooled: Vec<f64> = patterns
        .iter()
        .flat_map(|p| p.diameters.iter().copied())
        .collect();
    let target_mass = match options.mode {
        MassMode::Raw => pooled.len() as f64,
        MassMode::PerPlot => pooled.len() as f64 / patterns.len() as f64,
    };
    if pooled.is_empty() {
        return Ok(IntensityField::zeros(grid.clone()));
    }
    let h = match options.bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(&pooled, grid.width()),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(IpmError::InvalidBandwidth(h));
    }
    let mut cell_mass = vec![0.0; grid.cells()];
    for &x in &pooled {
        accumulate_kernel(&mut cell_mass, grid, x, h);
        accumulate_kernel(&mut cell_mass, grid, 2.0 * grid.lower() - x, h);
        accumulate_kernel(&mut cell_mass, grid, 2.0 * grid.upper() - x, h);
    }
    let total: f64 = cell_mass.iter().sum();
    let scale = target_mass / (total * grid.width());
    let values = cell_mass.into_iter().map(|m| m * scale).collect();
    IntensityField::new(grid.clone(), values)
}
