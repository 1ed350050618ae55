//! The four command-line workflows. `main.rs` only parses arguments and maps
//! errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bayes::summary::{abundance_table, pointwise_band, summarize};
use crate::bayes::{
    mcmc_fit, prepare_fit, resolve_priors, FitData, Identifiability, ModelSpec, PosteriorChain, ResolvedPriors,
};
use crate::climate::{build_binning, build_panel, per_plot_intensity, ClimateBinning, SparsePanel};
use crate::config::{parse_bins, parse_grid, ModelSection, RunConfig};
use crate::error::{IpmError, Result};
use crate::grid::IntensityField;
use crate::io;
use crate::kernel::{ClimateRecord, KernelParams};
use crate::propagation::{project, ProjectionMode};
use crate::sim::{inject_missingness, simulate_dataset, BinProjection};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ipmscale", version, about = "Climate-binned integral projection models fitted by MCMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel with known parameters.
    Simulate(CommonArgs),
    /// Fit the model to pattern and climate tables.
    Fit(CommonArgs),
    /// Project fitted bins forward and write posterior bands.
    Project(CommonArgs),
    /// Tabulate a previous fit.
    Summarize(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub missing: Option<f64>,
    /// Climate bins as NTxNP.
    #[arg(long)]
    pub bins: Option<String>,
    /// Trait grid as L,U,B.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long)]
    pub climates: Option<PathBuf>,
    /// Directory of a previous fit (project, summarize).
    #[arg(long = "fit-dir")]
    pub fit_dir: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Loads the config file, resolves its relative paths against the file's
/// directory and applies flag overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(IpmError::Config(format!("config file {} does not exist", path.display())));
            }
            let mut c = RunConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut c.data.patterns, &mut c.data.climates, &mut c.data.fit_dir, &mut c.data.truth]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            c
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.missing {
        cfg.sim.missing = m;
    }
    if let Some(b) = &args.bins {
        let (t, p) = parse_bins(b)?;
        cfg.binning.n_temp = t;
        cfg.binning.n_precip = p;
    }
    if let Some(g) = &args.grid {
        cfg.grid = parse_grid(g)?;
    }
    if let Some(n) = args.iterations {
        cfg.mcmc.iterations = n;
    }
    if let Some(n) = args.burn_in {
        cfg.mcmc.burn_in = n;
    }
    if let Some(n) = args.chains {
        cfg.mcmc.chains = n;
    }
    if let Some(p) = &args.patterns {
        cfg.data.patterns = Some(p.clone());
    }
    if let Some(p) = &args.climates {
        cfg.data.climates = Some(p.clone());
    }
    if let Some(p) = &args.fit_dir {
        cfg.data.fit_dir = Some(p.clone());
    }
    for p in [&mut cfg.data.patterns, &mut cfg.data.climates, &mut cfg.data.fit_dir, &mut cfg.data.truth]
        .into_iter()
        .flatten()
    {
        if let Ok(abs) = fs::canonicalize(&*p) {
            *p = abs;
        }
    }
    if let Some(p) = &cfg.project.compare {
        if let Ok(abs) = fs::canonicalize(p) {
            cfg.project.compare = Some(abs);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Staging directory renamed onto the target once every file is written.
pub struct Staging {
    tmp: PathBuf,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path, overwrite: bool) -> Result<Self> {
        if target.exists() {
            let non_empty = fs::read_dir(target)
                .map_err(|e| IpmError::io(target, e))?
                .next()
                .is_some();
            if non_empty && !overwrite {
                return Err(IpmError::Config(format!(
                    "output directory {} exists and is not empty; pass --overwrite to replace it",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| IpmError::Config(format!("invalid output directory {}", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| IpmError::io(parent, e))?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| IpmError::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| IpmError::io(&tmp, e))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.tmp.join(file)
    }

    pub fn commit(self) -> Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| IpmError::io(&self.target, e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| IpmError::io(&self.target, e))
    }

    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub file: String,
    pub chain: usize,
    pub draws: usize,
    pub iterations_run: usize,
    pub interrupted: bool,
}

/// Written by every command next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Identifiability>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priors: Option<ResolvedPriors>,
    #[serde(default)]
    pub chains: Vec<ChainRecord>,
    pub config: RunConfig,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed: cfg.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            constraint: None,
            priors: None,
            chains: Vec::new(),
            config: cfg.clone(),
        }
    }

    fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: io::file_digest(path)?,
        });
        Ok(())
    }

    /// Digests every file already staged, then writes itself.
    fn finish(mut self, staging: &Staging, files: &[&str]) -> Result<()> {
        for f in files {
            self.outputs.push(FileDigest {
                path: f.to_string(),
                sha256: io::file_digest(&staging.path(f))?,
            });
        }
        let text = toml::to_string(&self).map_err(|e| IpmError::Config(e.to_string()))?;
        io::write_text(&staging.path("manifest.toml"), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|e| IpmError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| IpmError::Config(format!("{}: {e}", path.display())))
    }
}

/// Run a parsed command line.
pub fn run(cli: &Cli, cancel: &AtomicBool) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&resolve_config(a)?, &a.out, a.overwrite),
        Command::Fit(a) => cmd_fit(&resolve_config(a)?, &a.out, a.overwrite, cancel),
        Command::Project(a) => cmd_project(&resolve_config(a)?, &a.out, a.overwrite),
        Command::Summarize(a) => cmd_summarize(&resolve_config(a)?, &a.out, a.overwrite),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I, cancel: &AtomicBool) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| IpmError::Config(e.to_string()))?;
    run(&cli, cancel)
}

fn staged<T>(staging: Staging, f: impl FnOnce(&Staging) -> Result<T>) -> Result<T> {
    match f(&staging) {
        Ok(v) => {
            staging.commit()?;
            Ok(v)
        }
        Err(e) => {
            staging.abandon();
            Err(e)
        }
    }
}

/// Truth parameters and generator settings of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub params: KernelParams,
    pub sigma2_eps: Option<f64>,
    pub phi: Option<f64>,
    pub transition: Vec<Vec<f64>>,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<String> {
    let sim = cfg.sim_config()?;
    let staging = Staging::new(out, overwrite)?;
    staged(staging, |st| {
        let ds = simulate_dataset(&sim)?;
        let (full, _) = ds.panel()?;
        let panel = inject_missingness(&full, sim.missing_fraction, crate::rng::derive_seed(sim.seed, 0x6d69_7373))?;
        let patterns: Vec<_> = panel.patterns().cloned().collect();
        io::write_patterns(&st.path("patterns.csv"), &patterns)?;
        io::write_climates(&st.path("climates.csv"), &ds.climates)?;
        io::write_panel_summary(&st.path("panel_summary.csv"), &panel.summary())?;
        let truth = TruthFile {
            params: sim.true_params.clone(),
            sigma2_eps: sim.gp.map(|g| g.sigma2_eps),
            phi: sim.gp.map(|g| g.phi),
            transition: sim.transition.clone(),
        };
        io::write_text(
            &st.path("truth.toml"),
            &toml::to_string(&truth).map_err(|e| IpmError::Config(e.to_string()))?,
        )?;
        // Ready-made config for fitting this dataset with the generating model.
        let mut fit = cfg.clone();
        fit.data.patterns = Some("patterns.csv".into());
        fit.data.climates = Some("climates.csv".into());
        fit.data.truth = Some("truth.toml".into());
        fit.data.fit_dir = None;
        fit.data.training_years = Some(sim.horizon - 1);
        fit.binning.n_temp = sim.n_bins;
        fit.binning.n_precip = 1;
        fit.model = ModelSection::for_simulation();
        io::write_text(&st.path("fit.toml"), &fit.to_toml())?;
        let files = ["patterns.csv", "climates.csv", "panel_summary.csv", "truth.toml", "fit.toml"];
        Manifest::new("simulate", cfg).finish(st, &files)?;
        Ok(format!(
            "simulated {} plots x {} years in {} bins ({} observed plot-years) -> {}",
            sim.n_plots(),
            sim.horizon,
            sim.n_bins,
            patterns.len(),
            out.display()
        ))
    })
}

/// Inputs of a fit, parsed and validated.
pub struct Loaded {
    pub panel: SparsePanel,
    pub binning: ClimateBinning,
    pub data: FitData,
    pub spec: ModelSpec,
    pub inputs: Vec<PathBuf>,
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| IpmError::Config(format!("no {what} file given (flag or [data] section)")))?;
    if !p.is_file() {
        return Err(IpmError::Config(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

pub fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let pat_path = require(&cfg.data.patterns, "pattern")?;
    let clim_path = require(&cfg.data.climates, "climate")?;
    let patterns = io::read_patterns(&pat_path)?;
    let climates = io::read_climates(&clim_path)?;
    let grid = cfg.grid.build()?;
    for p in &patterns {
        p.check_within(&grid).map_err(|e| IpmError::Config(format!("plot {} year {}: {e}", p.plot_id, p.year)))?;
    }
    let recs: Vec<ClimateRecord> = climates.iter().map(|r| r.climate).collect();
    let binning = build_binning(&recs, cfg.binning.n_temp, cfg.binning.n_precip)?;
    let mut panel = build_panel(&patterns, &climates, &binning)?;
    if let Some(n) = cfg.data.training_years {
        panel = panel.truncate_years(n);
    }
    let spec = cfg.model.spec()?;
    let data = match prepare_fit(&panel, &binning, &grid, &spec, &cfg.priors) {
        Ok(d) => d,
        Err(IpmError::NoLiveTerms) => {
            let mut table = String::from("year,bin,n_start,m_end,pooled_count_start,pooled_count_end\n");
            for r in panel.summary() {
                table.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.year, r.bin, r.n_start, r.m_end, r.pooled_count_start, r.pooled_count_end
                ));
            }
            eprint!("occupancy of (year, bin) transitions:\n{table}");
            return Err(IpmError::NoLiveTerms);
        }
        Err(e) => return Err(e),
    };
    Ok(Loaded {
        panel,
        binning,
        data,
        spec,
        inputs: vec![pat_path, clim_path],
    })
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path, overwrite: bool, cancel: &AtomicBool) -> Result<String> {
    let loaded = load_data(cfg)?;
    let mcmc = cfg.mcmc.build(cfg.seed)?;
    let priors = resolve_priors(&cfg.priors, &loaded.spec, &loaded.data, cfg.seed)?;
    let staging = Staging::new(out, overwrite)?;
    staged(staging, |st| {
        let chains = mcmc_fit(&loaded.data, &loaded.spec, &priors, &mcmc, Some(cancel))?;
        let mut manifest = Manifest::new("fit", cfg);
        for p in &loaded.inputs {
            manifest.add_input(p)?;
        }
        manifest.constraint = Some(loaded.data.bound);
        manifest.priors = Some(priors.clone());
        let mut files: Vec<String> = Vec::new();
        for c in &chains {
            let name = format!("chain_{}.csv", c.chain);
            io::write_chain(&st.path(&name), c)?;
            manifest.chains.push(ChainRecord {
                file: name.clone(),
                chain: c.chain,
                draws: c.len(),
                iterations_run: c.iterations_run,
                interrupted: c.interrupted,
            });
            files.push(name);
        }
        io::write_acceptance(&st.path("acceptance.csv"), &chains)?;
        io::write_panel_summary(&st.path("panel_summary.csv"), &loaded.panel.summary())?;
        files.extend(["acceptance.csv".to_string(), "panel_summary.csv".to_string()]);
        let interrupted = chains.iter().any(|c| c.interrupted);
        let mut report = String::new();
        match summarize(&chains) {
            Ok(table) => {
                io::write_summary(&st.path("summary.csv"), &table)?;
                files.push("summary.csv".into());
                report.push_str(&format_table(&table));
            }
            Err(IpmError::InsufficientSamples { found, required }) if interrupted => {
                report.push_str(&format!("interrupted with {found} retained draws (< {required}); no summary\n"));
            }
            Err(e) => return Err(e),
        }
        let refs: Vec<&str> = files.iter().map(String::as_str).collect();
        manifest.finish(st, &refs)?;
        if interrupted {
            report.push_str("sampling interrupted; chains checkpointed at the last completed iteration\n");
        }
        Ok(report)
    })
}

pub fn format_table(table: &[crate::bayes::ParamSummary]) -> String {
    let mut s = format!("{:<12} {:>12} {:>12} {:>12}\n", "param", "mean", "2.5%", "97.5%");
    for r in table {
        s.push_str(&format!("{:<12} {:>12.5} {:>12.5} {:>12.5}\n", r.name, r.mean, r.lower, r.upper));
    }
    s
}

/// Fit directory contents: manifest and chains, plus the data it was run on.
pub struct FitRun {
    pub manifest: Manifest,
    pub chains: Vec<PosteriorChain>,
    pub loaded: Loaded,
}

pub fn load_fit(cfg: &RunConfig) -> Result<FitRun> {
    let dir = cfg
        .data
        .fit_dir
        .clone()
        .ok_or_else(|| IpmError::Config("no fit directory given (--fit-dir or data.fit_dir)".into()))?;
    if !dir.join("manifest.toml").is_file() {
        return Err(IpmError::Config(format!("{} holds no fit manifest", dir.display())));
    }
    let manifest = Manifest::load(&dir)?;
    if manifest.command != "fit" {
        return Err(IpmError::Config(format!("{} is a `{}` run, not a fit", dir.display(), manifest.command)));
    }
    let spec = manifest.config.model.spec()?;
    let mut chains = Vec::new();
    for rec in &manifest.chains {
        let path = dir.join(&rec.file);
        if !path.is_file() {
            return Err(IpmError::Config(format!("missing chain file {}", path.display())));
        }
        chains.push(io::read_chain(&path, &spec, rec.chain, manifest.seed)?);
    }
    if chains.is_empty() {
        return Err(IpmError::Config(format!("{} lists no chains", dir.display())));
    }
    let loaded = load_data(&manifest.config)?;
    for (want, path) in manifest.inputs.iter().zip(&loaded.inputs) {
        if io::file_digest(path)? != want.sha256 {
            return Err(IpmError::Config(format!("{} changed since the fit", path.display())));
        }
    }
    Ok(FitRun { manifest, chains, loaded })
}

/// Per-bin projection from the start-year intensities: posterior bands at the
/// horizon, yearly median fields and abundance trajectories.
pub struct ProjectionOutput {
    pub bands: Vec<BinProjection>,
    pub median_fields: Vec<(usize, IntensityField)>,
    /// `(bin, year, mean, lower, upper)` of projected abundance.
    pub abundance: Vec<(usize, i32, f64, f64, f64)>,
}

pub fn projection_bands(run: &FitRun, cfg: &RunConfig, truth: Option<&KernelParams>) -> Result<ProjectionOutput> {
    let l = &run.loaded;
    let grid = l.data.grid.clone();
    let horizon = cfg.project.horizon;
    let t0 = cfg.project.start_year;
    if t0 >= l.panel.n_years() {
        return Err(IpmError::Config(format!("project.start_year {t0} is past the data")));
    }
    let mut out = ProjectionOutput {
        bands: Vec::new(),
        median_fields: Vec::new(),
        abundance: Vec::new(),
    };
    let draws: Vec<&KernelParams> = run.chains.iter().flat_map(|c| c.params.iter()).collect();
    for bin in 0..l.binning.bins() {
        let Some(centroid) = l.binning.centroids[bin] else { continue };
        let start = match per_plot_intensity(&l.panel, t0, bin, &grid, &l.spec.kde) {
            Ok(s) => s,
            Err(IpmError::EmptyBinYear { .. }) => continue,
            Err(e) => return Err(e),
        };
        let zs = vec![l.data.covariates.apply(&centroid); horizon];
        let paths: Vec<Vec<IntensityField>> = draws
            .iter()
            .map(|p| project(&start, &zs, p, horizon, ProjectionMode::Chained, l.spec.placement))
            .collect::<Result<_>>()?;
        for step in 0..=horizon {
            let curves: Vec<Vec<f64>> = paths.iter().map(|p| p[step].values().to_vec()).collect();
            let band = pointwise_band(&curves, cfg.project.level)?;
            let year = l.panel.years()[t0] + step as i32;
            out.median_fields
                .push((bin, IntensityField::new(grid.clone(), band.median.clone())?.with_labels(Some(year), Some(bin))));
            let masses: Vec<f64> = paths.iter().map(|p| p[step].mass()).collect();
            let mut sorted = masses.clone();
            sorted.sort_by(f64::total_cmp);
            let tail = 0.5 * (1.0 - cfg.project.level);
            out.abundance.push((
                bin,
                year,
                crate::stats::mean(&masses),
                crate::stats::quantile_sorted(&sorted, tail),
                crate::stats::quantile_sorted(&sorted, 1.0 - tail),
            ));
            if step == horizon {
                let truth_curve = match truth {
                    Some(p) => project(&start, &zs, p, horizon, ProjectionMode::Chained, l.spec.placement)?
                        .pop()
                        .expect("horizon + 1 fields")
                        .into_values(),
                    None => vec![f64::NAN; grid.cells()],
                };
                out.bands.push(BinProjection {
                    bin,
                    centers: grid.centers().to_vec(),
                    band,
                    truth: truth_curve,
                    start: start.clone(),
                });
            }
        }
    }
    if out.bands.is_empty() {
        return Err(IpmError::NoLiveTerms);
    }
    Ok(out)
}

fn load_truth(path: &Option<PathBuf>) -> Result<Option<TruthFile>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| IpmError::io(p, e))?;
            toml::from_str(&text)
                .map(Some)
                .map_err(|e| IpmError::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn cmd_project(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<String> {
    let run = load_fit(cfg)?;
    let truth = load_truth(&cfg.data.truth.clone().or(run.manifest.config.data.truth.clone()))?;
    let compare = match &cfg.project.compare {
        Some(dir) => {
            let mut other = cfg.clone();
            other.data.fit_dir = Some(dir.clone());
            Some(load_fit(&other)?)
        }
        None => None,
    };
    let staging = Staging::new(out, overwrite)?;
    staged(staging, |st| {
        let proj = projection_bands(&run, cfg, truth.as_ref().map(|t| &t.params))?;
        io::write_bands(&st.path("bands.csv"), &proj.bands)?;
        io::write_projection(&st.path("projection.csv"), &proj.median_fields)?;
        let abundance_rows = proj.abundance.iter().map(|(b, y, m, lo, hi)| {
            vec![b.to_string(), y.to_string(), m.to_string(), lo.to_string(), hi.to_string()]
        });
        io::write_csv(&st.path("abundance_trajectory.csv"), &["bin", "year", "mean", "lower", "upper"], abundance_rows)?;
        let mut files = vec!["bands.csv", "projection.csv", "abundance_trajectory.csv"];
        let mut report = String::new();
        for b in &proj.bands {
            report.push_str(&format!("bin {}: median band width {:.5}", b.bin, b.band.median_width()));
            if truth.is_some() {
                report.push_str(&format!(", truth containment {:.3}", b.containment()));
            }
            report.push('\n');
        }
        if let Some(other) = &compare {
            let theirs = projection_bands(other, cfg, None)?;
            let rows: Vec<Vec<String>> = proj
                .bands
                .iter()
                .filter_map(|b| theirs.bands.iter().find(|o| o.bin == b.bin).map(|o| (b, o)))
                .map(|(b, o)| {
                    let (w, wo) = (b.band.median_width(), o.band.median_width());
                    report.push_str(&format!("bin {}: width ratio against comparison {:.4}\n", b.bin, w / wo));
                    vec![b.bin.to_string(), w.to_string(), wo.to_string(), (w / wo).to_string()]
                })
                .collect();
            io::write_csv(
                &st.path("width_ratio.csv"),
                &["bin", "median_width", "comparison_median_width", "ratio"],
                rows,
            )?;
            files.push("width_ratio.csv");
        }
        let mut manifest = Manifest::new("project", cfg);
        for p in &run.loaded.inputs {
            manifest.add_input(p)?;
        }
        manifest.finish(st, &files)?;
        Ok(report)
    })
}

pub fn cmd_summarize(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<String> {
    let run = load_fit(cfg)?;
    let table = summarize(&run.chains)?;
    let staging = Staging::new(out, overwrite)?;
    staged(staging, |st| {
        io::write_summary(&st.path("summary.csv"), &table)?;
        let rows = abundance_table(&run.loaded.data, &run.loaded.spec, &run.chains)?;
        io::write_abundance(&st.path("abundance.csv"), &rows)?;
        let mut manifest = Manifest::new("summarize", cfg);
        for p in &run.loaded.inputs {
            manifest.add_input(p)?;
        }
        manifest.finish(st, &["summary.csv", "abundance.csv"])?;
        Ok(format_table(&table))
    })
}
