//! Climate-space binning and the plot-by-year sparse panel.
//!
//! Plots are grouped by the climate bin they fall in each year. For a year
//! `t` and bin `l`, `S(t, l)` holds the plots in bin `l` that were measured at
//! `t`, and `R(t, l)` the plots in bin `l` at `t` that were measured at `t + 1`.
//! The two sets may be disjoint, which is the usual situation for rotating
//! inventory designs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cox::{bin_counts, CellCounts};
use crate::error::{IpmError, Result};
use crate::grid::{empirical_intensity, IntensityField, KdeOptions, MassMode, PointPattern, TraitGrid};
use crate::kernel::{ClimateRecord, CovariateMap, Covariates, KernelParams};
use crate::propagation::{pseudo_ipm_step, RecruitPlacement};

/// One row of the plot-year climate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateRow {
    pub plot_id: String,
    pub year: i32,
    pub climate: ClimateRecord,
}

/// Rectangular equi-spaced partition of (temperature, precipitation) space.
///
/// Bins are numbered from 0, temperature-major: `l = i_temp * n_precip + i_precip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateBinning {
    pub temp_breaks: Vec<f64>,
    pub precip_breaks: Vec<f64>,
    /// Mean member climate per bin; `None` for bins nobody fell in.
    pub centroids: Vec<Option<ClimateRecord>>,
    pub members: Vec<usize>,
}

fn breaks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    let mut b: Vec<f64> = (0..=n).map(|k| lo + w * k as f64).collect();
    b[n] = hi;
    b
}

/// Index of the interval containing `v`; values on an interior break go to
/// the lower interval.
fn locate(breaks: &[f64], v: f64) -> Option<usize> {
    let n = breaks.len() - 1;
    if !(v >= breaks[0] && v <= breaks[n]) {
        return None;
    }
    Some(breaks[1..].partition_point(|&b| b < v).min(n - 1))
}

pub fn build_binning(climates: &[ClimateRecord], n_temp: usize, n_precip: usize) -> Result<ClimateBinning> {
    if climates.is_empty() {
        return Err(IpmError::EmptyInput);
    }
    if n_temp == 0 || n_precip == 0 {
        return Err(IpmError::InvalidParameter(format!(
            "bin counts must be positive, got {n_temp}x{n_precip}"
        )));
    }
    for c in climates {
        c.validate()?;
    }
    let (tmin, tmax) = min_max(climates.iter().map(|c| c.winter_temp));
    let (pmin, pmax) = min_max(climates.iter().map(|c| c.annual_precip));
    // A constant axis is only acceptable when it is not being split.
    if tmin == tmax && n_temp > 1 {
        return Err(IpmError::DegenerateRange("temperature"));
    }
    if pmin == pmax && n_precip > 1 {
        return Err(IpmError::DegenerateRange("precipitation"));
    }
    let mut binning = ClimateBinning {
        temp_breaks: breaks(tmin, tmax, n_temp),
        precip_breaks: breaks(pmin, pmax, n_precip),
        centroids: vec![None; n_temp * n_precip],
        members: vec![0; n_temp * n_precip],
    };
    let mut sums = vec![(0.0, 0.0); binning.bins()];
    for c in climates {
        let l = assign(c, &binning)?;
        sums[l].0 += c.winter_temp;
        sums[l].1 += c.annual_precip;
        binning.members[l] += 1;
    }
    for (l, (st, sp)) in sums.into_iter().enumerate() {
        let n = binning.members[l];
        if n > 0 {
            binning.centroids[l] = Some(ClimateRecord {
                winter_temp: st / n as f64,
                annual_precip: sp / n as f64,
            });
        }
    }
    Ok(binning)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

impl ClimateBinning {
    pub fn n_temp(&self) -> usize {
        self.temp_breaks.len() - 1
    }

    pub fn n_precip(&self) -> usize {
        self.precip_breaks.len() - 1
    }

    pub fn bins(&self) -> usize {
        self.n_temp() * self.n_precip()
    }

    pub fn is_empty_bin(&self, l: usize) -> bool {
        self.centroids[l].is_none()
    }
}

pub fn assign(z: &ClimateRecord, binning: &ClimateBinning) -> Result<usize> {
    let out = || IpmError::OutOfRectangle {
        temp: z.winter_temp,
        precip: z.annual_precip,
    };
    let i = locate(&binning.temp_breaks, z.winter_temp).ok_or_else(out)?;
    let k = locate(&binning.precip_breaks, z.annual_precip).ok_or_else(out)?;
    Ok(i * binning.n_precip() + k)
}

/// Plot-by-year array of observation indicators, bin labels and patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePanel {
    plots: Vec<String>,
    years: Vec<i32>,
    bins: usize,
    labels: Vec<usize>,
    climates: Vec<ClimateRecord>,
    patterns: Vec<Option<PointPattern>>,
}

pub fn build_panel(
    patterns: &[PointPattern],
    climates: &[ClimateRow],
    binning: &ClimateBinning,
) -> Result<SparsePanel> {
    if climates.is_empty() {
        return Err(IpmError::EmptyInput);
    }
    let mut table: BTreeMap<(&str, i32), &ClimateRecord> = BTreeMap::new();
    for row in climates {
        if table.insert((row.plot_id.as_str(), row.year), &row.climate).is_some() {
            return Err(IpmError::InvalidParameter(format!(
                "duplicate climate record for plot {} in year {}",
                row.plot_id, row.year
            )));
        }
    }
    let mut plot_set: BTreeSet<&str> = climates.iter().map(|r| r.plot_id.as_str()).collect();
    plot_set.extend(patterns.iter().map(|p| p.plot_id.as_str()));
    let year_set: BTreeSet<i32> = climates.iter().map(|r| r.year).chain(patterns.iter().map(|p| p.year)).collect();
    let plots: Vec<String> = plot_set.iter().map(|s| s.to_string()).collect();
    let years: Vec<i32> = year_set.into_iter().collect();
    let nt = years.len();

    let mut labels = Vec::with_capacity(plots.len() * nt);
    let mut recs = Vec::with_capacity(plots.len() * nt);
    for plot in &plots {
        for &year in &years {
            let rec = table.get(&(plot.as_str(), year)).ok_or_else(|| IpmError::MissingClimate {
                plot: plot.clone(),
                year,
            })?;
            labels.push(assign(rec, binning)?);
            recs.push(**rec);
        }
    }
    let mut slots: Vec<Option<PointPattern>> = vec![None; plots.len() * nt];
    for p in patterns {
        let j = plots.binary_search(&p.plot_id).expect("plot collected above");
        let t = years.binary_search(&p.year).expect("year collected above");
        let slot = &mut slots[j * nt + t];
        if slot.is_some() {
            return Err(IpmError::InvalidParameter(format!(
                "duplicate pattern for plot {} in year {}",
                p.plot_id, p.year
            )));
        }
        let mut p = p.clone();
        p.climate = Some(recs[j * nt + t]);
        *slot = Some(p);
    }
    Ok(SparsePanel {
        plots,
        years,
        bins: binning.bins(),
        labels,
        climates: recs,
        patterns: slots,
    })
}

impl SparsePanel {
    pub fn plots(&self) -> &[String] {
        &self.plots
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_plots(&self) -> usize {
        self.plots.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    fn idx(&self, j: usize, t: usize) -> usize {
        j * self.years.len() + t
    }

    pub fn observed(&self, j: usize, t: usize) -> bool {
        self.patterns[self.idx(j, t)].is_some()
    }

    pub fn label(&self, j: usize, t: usize) -> usize {
        self.labels[self.idx(j, t)]
    }

    pub fn climate(&self, j: usize, t: usize) -> &ClimateRecord {
        &self.climates[self.idx(j, t)]
    }

    pub fn pattern(&self, j: usize, t: usize) -> Option<&PointPattern> {
        self.patterns[self.idx(j, t)].as_ref()
    }

    /// Every stored pattern, plot-major.
    pub fn patterns(&self) -> impl Iterator<Item = &PointPattern> {
        self.patterns.iter().flatten()
    }

    /// Drops the pattern at `(j, t)`, marking the plot-year unobserved.
    pub fn remove(&mut self, j: usize, t: usize) -> Option<PointPattern> {
        let i = self.idx(j, t);
        self.patterns[i].take()
    }

    /// All plots in bin `l` at year `t`, observed or not.
    pub fn members(&self, t: usize, l: usize) -> Vec<usize> {
        (0..self.n_plots()).filter(|&j| self.label(j, t) == l).collect()
    }

    /// Plots in bin `l` at `t` that were measured at `t`.
    pub fn s_set(&self, t: usize, l: usize) -> Vec<usize> {
        (0..self.n_plots())
            .filter(|&j| self.label(j, t) == l && self.observed(j, t))
            .collect()
    }

    /// Plots in bin `l` at `t` that were measured at `t + 1`.
    pub fn r_set(&self, t: usize, l: usize) -> Vec<usize> {
        if t + 1 >= self.n_years() {
            return Vec::new();
        }
        (0..self.n_plots())
            .filter(|&j| self.label(j, t) == l && self.observed(j, t + 1))
            .collect()
    }

    /// Patterns of `S(t, l)`.
    pub fn start_patterns(&self, t: usize, l: usize) -> Vec<PointPattern> {
        self.s_set(t, l)
            .into_iter()
            .map(|j| self.pattern(j, t).expect("member of S is observed").clone())
            .collect()
    }

    /// Year `t + 1` patterns of `R(t, l)`.
    pub fn end_patterns(&self, t: usize, l: usize) -> Vec<PointPattern> {
        self.r_set(t, l)
            .into_iter()
            .map(|j| self.pattern(j, t + 1).expect("member of R is observed next year").clone())
            .collect()
    }

    /// Keeps only years with index below `years`.
    pub fn truncate_years(&self, years: usize) -> Self {
        let keep = years.min(self.n_years());
        let mut out = Self {
            plots: self.plots.clone(),
            years: self.years[..keep].to_vec(),
            bins: self.bins,
            labels: Vec::new(),
            climates: Vec::new(),
            patterns: Vec::new(),
        };
        for j in 0..self.n_plots() {
            for t in 0..keep {
                let i = self.idx(j, t);
                out.labels.push(self.labels[i]);
                out.climates.push(self.climates[i]);
                out.patterns.push(self.patterns[i].clone());
            }
        }
        out
    }

    /// Estimated total abundance per year: the mean tree count of the
    /// measured plots scaled to the full set of plots. Years with no measured
    /// plot are `None`.
    pub fn population_series(&self) -> Vec<Option<f64>> {
        (0..self.n_years())
            .map(|t| {
                let counts: Vec<usize> = (0..self.n_plots())
                    .filter_map(|j| self.pattern(j, t).map(|p| p.len()))
                    .collect();
                if counts.is_empty() {
                    None
                } else {
                    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
                    Some(mean * self.n_plots() as f64)
                }
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<PanelSummaryRow> {
        let mut rows = Vec::new();
        for t in 0..self.n_years().saturating_sub(1) {
            for l in 0..self.bins {
                let s = self.s_set(t, l);
                let r = self.r_set(t, l);
                rows.push(PanelSummaryRow {
                    year: self.years[t],
                    bin: l,
                    n_start: s.len(),
                    m_end: r.len(),
                    pooled_count_start: s.iter().map(|&j| self.pattern(j, t).map_or(0, |p| p.len())).sum(),
                    pooled_count_end: r.iter().map(|&j| self.pattern(j, t + 1).map_or(0, |p| p.len())).sum(),
                });
            }
        }
        rows
    }
}

/// Occupancy of one `(year, bin)` transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSummaryRow {
    pub year: i32,
    pub bin: usize,
    pub n_start: usize,
    pub m_end: usize,
    pub pooled_count_start: usize,
    pub pooled_count_end: usize,
}

/// Empirical intensity of the pooled `S(t, l)` patterns divided by their number.
pub fn per_plot_intensity(
    panel: &SparsePanel,
    t: usize,
    l: usize,
    grid: &TraitGrid,
    kde: &KdeOptions,
) -> Result<IntensityField> {
    let start = panel.start_patterns(t, l);
    if start.is_empty() {
        return Err(IpmError::EmptyBinYear { year: t, bin: l });
    }
    let opts = KdeOptions {
        mode: MassMode::PerPlot,
        allow_empty: false,
        ..*kde
    };
    Ok(empirical_intensity(&start, grid, &opts)?.with_labels(Some(panel.years()[t]), Some(l)))
}

/// Pooled cell counts of the year `t + 1` patterns of `R(t, l)`.
pub fn end_counts(panel: &SparsePanel, t: usize, l: usize, grid: &TraitGrid) -> Result<(CellCounts, usize)> {
    let end = panel.end_patterns(t, l);
    if end.is_empty() {
        return Err(IpmError::EmptyBinYear { year: t + 1, bin: l });
    }
    let mut pooled = CellCounts::zeros(grid.cells());
    for p in &end {
        pooled.absorb(&bin_counts(p, grid)?)?;
    }
    pooled.year = panel.years().get(t + 1).copied();
    pooled.bin = Some(l);
    Ok((pooled, end.len()))
}

/// One-step target for bin `l` from year `t`: the propagated per-plot
/// intensity, the number of plots measured at `t + 1`, and their pooled counts.
pub fn scaled_step_target(
    panel: &SparsePanel,
    t: usize,
    l: usize,
    params: &KernelParams,
    grid: &TraitGrid,
    z: &Covariates,
    kde: &KdeOptions,
    placement: RecruitPlacement,
) -> Result<(IntensityField, usize, CellCounts)> {
    let start = per_plot_intensity(panel, t, l, grid, kde)?;
    let (counts, m) = end_counts(panel, t, l, grid)?;
    let next = pseudo_ipm_step(&start, z, params, placement)?;
    Ok((next, m, counts))
}

/// Data for one `(t, l)` likelihood term.
#[derive(Debug, Clone)]
pub struct LiveTerm {
    pub t: usize,
    pub bin: usize,
    /// Per-plot intensity of `S(t, l)`.
    pub start: IntensityField,
    /// Mass of `start`; drives density dependence.
    pub gamma_dot: f64,
    pub counts: CellCounts,
    pub multiplicity: usize,
    pub covariates: Covariates,
    pub n_start: usize,
}

/// A `(t, l)` pair contributes when both sides have measured plots and the
/// starting plots carry at least one tree.
pub fn live_terms(
    panel: &SparsePanel,
    binning: &ClimateBinning,
    grid: &TraitGrid,
    kde: &KdeOptions,
    covariates: &CovariateMap,
) -> Result<Vec<LiveTerm>> {
    let mut terms = Vec::new();
    for t in 0..panel.n_years().saturating_sub(1) {
        for l in 0..panel.bins() {
            let s = panel.s_set(t, l);
            let r = panel.r_set(t, l);
            if s.is_empty() || r.is_empty() {
                continue;
            }
            let pooled: usize = s.iter().map(|&j| panel.pattern(j, t).map_or(0, |p| p.len())).sum();
            if pooled == 0 {
                continue;
            }
            let start = per_plot_intensity(panel, t, l, grid, kde)?;
            let (counts, m) = end_counts(panel, t, l, grid)?;
            let centroid = binning.centroids[l].expect("occupied bin has a centroid");
            terms.push(LiveTerm {
                t,
                bin: l,
                gamma_dot: start.mass(),
                start,
                counts,
                multiplicity: m,
                covariates: covariates.apply(&centroid),
                n_start: s.len(),
            });
        }
    }
    if terms.is_empty() {
        return Err(IpmError::NoLiveTerms);
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::discretize;
    use approx::assert_relative_eq;

    fn rec(t: f64, p: f64) -> ClimateRecord {
        ClimateRecord { winter_temp: t, annual_precip: p }
    }

    #[test]
    fn five_by_five_has_25_bins() {
        let c = vec![rec(-10.0, 200.0), rec(5.0, 1500.0), rec(0.0, 700.0)];
        let b = build_binning(&c, 5, 5).unwrap();
        assert_eq!(b.bins(), 25);
        assert_eq!(b.members.iter().sum::<usize>(), 3);
    }

    #[test]
    fn single_record_is_its_own_centroid() {
        let b = build_binning(&[rec(1.0, 2.0)], 1, 1).unwrap();
        assert_eq!(b.centroids[0], Some(rec(1.0, 2.0)));
        assert!(matches!(build_binning(&[rec(1.0, 2.0)], 2, 1), Err(IpmError::DegenerateRange("temperature"))));
    }

    #[test]
    fn centroid_is_member_mean() {
        let c = vec![rec(0.0, 100.0), rec(2.0, 200.0), rec(10.0, 1000.0)];
        let b = build_binning(&c, 2, 2).unwrap();
        assert_eq!(assign(&rec(0.0, 100.0), &b).unwrap(), 0);
        assert_eq!(b.centroids[0], Some(rec(1.0, 150.0)));
    }

    #[test]
    fn ties_go_to_lower_bin() {
        let c = vec![rec(0.0, 0.0), rec(4.0, 4.0)];
        let b = build_binning(&c, 4, 4).unwrap();
        // Interior break at temp 1.0 belongs to temperature interval 0.
        assert_eq!(assign(&rec(1.0, 0.5), &b).unwrap(), 0);
        assert_eq!(assign(&rec(1.0001, 0.5), &b).unwrap(), 4);
        assert_eq!(assign(&rec(4.0, 4.0), &b).unwrap(), 15);
        assert_eq!(assign(&rec(0.0, 0.0), &b).unwrap(), 0);
        assert!(matches!(assign(&rec(4.1, 1.0), &b), Err(IpmError::OutOfRectangle { .. })));
        // Centre of bin 7 (temp interval 1, precip interval 3).
        assert_eq!(assign(&rec(1.5, 3.5), &b).unwrap(), 7);
    }

    fn climate_rows(plots: &[&str], years: std::ops::Range<i32>, f: impl Fn(&str, i32) -> ClimateRecord) -> Vec<ClimateRow> {
        let mut rows = Vec::new();
        for p in plots {
            for y in years.clone() {
                rows.push(ClimateRow { plot_id: p.to_string(), year: y, climate: f(p, y) });
            }
        }
        rows
    }

    #[test]
    fn full_panel_sets_coincide() {
        let rows = climate_rows(&["a", "b", "c"], 0..3, |p, _| rec(if p == "a" { 0.0 } else { 1.0 }, 10.0));
        let b = build_binning(&rows.iter().map(|r| r.climate).collect::<Vec<_>>(), 2, 1).unwrap();
        let mut pats = Vec::new();
        for p in ["a", "b", "c"] {
            for y in 0..3 {
                pats.push(PointPattern::new(p, y, vec![1.0, 2.0]));
            }
        }
        let panel = build_panel(&pats, &rows, &b).unwrap();
        for t in 0..2 {
            for l in 0..2 {
                assert_eq!(panel.s_set(t, l), panel.members(t, l));
                assert_eq!(panel.r_set(t, l), panel.members(t, l));
            }
        }
        assert_eq!(panel.s_set(0, 1), vec![1, 2]);
    }

    #[test]
    fn rotating_panel_has_disjoint_sets() {
        let plots = ["p0", "p1", "p2", "p3"];
        let rows = climate_rows(&plots, 0..6, |_, _| rec(0.0, 0.0));
        let b = build_binning(&rows.iter().map(|r| r.climate).collect::<Vec<_>>(), 1, 1).unwrap();
        // Plot k measured in years k, k + 4, ... : never two years running.
        let mut pats = Vec::new();
        for (k, p) in plots.iter().enumerate() {
            for y in (k as i32..6).step_by(4) {
                pats.push(PointPattern::new(*p, y, vec![3.0]));
            }
        }
        let panel = build_panel(&pats, &rows, &b).unwrap();
        for t in 0..5 {
            let s: BTreeSet<_> = panel.s_set(t, 0).into_iter().collect();
            let r: BTreeSet<_> = panel.r_set(t, 0).into_iter().collect();
            assert!(s.is_disjoint(&r));
        }
    }

    #[test]
    fn single_observation_lands_in_one_s_and_one_r() {
        let rows = climate_rows(&["x"], 0..5, |_, _| rec(0.0, 0.0));
        let b = build_binning(&rows.iter().map(|r| r.climate).collect::<Vec<_>>(), 1, 1).unwrap();
        let panel = build_panel(&[PointPattern::new("x", 3, vec![1.0])], &rows, &b).unwrap();
        let s_hits: Vec<usize> = (0..5).filter(|&t| !panel.s_set(t, 0).is_empty()).collect();
        let r_hits: Vec<usize> = (0..5).filter(|&t| !panel.r_set(t, 0).is_empty()).collect();
        assert_eq!(s_hits, vec![3]);
        assert_eq!(r_hits, vec![2]);
    }

    #[test]
    fn missing_climate_is_reported() {
        let mut rows = climate_rows(&["a", "b"], 0..2, |_, _| rec(0.0, 0.0));
        rows.pop();
        let b = build_binning(&[rec(0.0, 0.0)], 1, 1).unwrap();
        assert!(matches!(build_panel(&[], &rows, &b), Err(IpmError::MissingClimate { .. })));
    }

    #[test]
    fn per_plot_intensity_divides_by_plot_count() {
        let rows = climate_rows(&["a", "b", "c", "d"], 0..2, |_, _| rec(0.0, 0.0));
        let b = build_binning(&[rec(0.0, 0.0)], 1, 1).unwrap();
        let grid = discretize(0.0, 20.0, 40).unwrap();
        let pats: Vec<PointPattern> = ["a", "b", "c", "d"]
            .iter()
            .map(|p| PointPattern::new(*p, 0, (0..10).map(|k| 1.0 + k as f64 * 1.7).collect()))
            .collect();
        let panel = build_panel(&pats, &rows, &b).unwrap();
        let f = per_plot_intensity(&panel, 0, 0, &grid, &KdeOptions::default()).unwrap();
        assert_relative_eq!(f.mass(), 10.0, max_relative = 1e-9);
        assert!(matches!(per_plot_intensity(&panel, 1, 0, &grid, &KdeOptions::default()), Err(IpmError::EmptyBinYear { .. })));

        let one = build_panel(&pats[..1], &climate_rows(&["a"], 0..2, |_, _| rec(0.0, 0.0)), &b).unwrap();
        let raw = empirical_intensity(&pats[..1], &grid, &KdeOptions::default()).unwrap();
        assert_eq!(per_plot_intensity(&one, 0, 0, &grid, &KdeOptions::default()).unwrap().values(), raw.values());
    }

    #[test]
    fn summary_counts_both_sides() {
        let rows = climate_rows(&["a", "b"], 0..2, |_, _| rec(0.0, 0.0));
        let b = build_binning(&[rec(0.0, 0.0)], 1, 1).unwrap();
        let pats = vec![
            PointPattern::new("a", 0, vec![1.0, 2.0]),
            PointPattern::new("b", 1, vec![1.0, 2.0, 3.0]),
        ];
        let panel = build_panel(&pats, &rows, &b).unwrap();
        let s = panel.summary();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n_start, s[0].m_end, s[0].pooled_count_start, s[0].pooled_count_end), (1, 1, 2, 3));
    }
}
