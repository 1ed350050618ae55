//! CSV ingestion and export. Headers are checked verbatim, which pins the
//! units (cm, deg C, mm) carried in the column names.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bayes::summary::{AbundanceRow, ParamSummary};
use crate::bayes::{ModelSpec, PosteriorChain};
use crate::climate::{ClimateRow, PanelSummaryRow};
use crate::error::{IpmError, Result};
use crate::grid::{IntensityField, PointPattern};
use crate::kernel::ClimateRecord;
use crate::sim::{BinProjection, RecoveryRow};

pub const PATTERN_HEADER: [&str; 3] = ["plot_id", "year", "diameter_cm"];
pub const CLIMATE_HEADER: [&str; 4] = ["plot_id", "year", "winter_temp_c", "annual_precip_mm"];
pub const CHAIN_HEADER: [&str; 3] = ["iteration", "param", "value"];
const LOG_POST: &str = "log_posterior";

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> IpmError {
    IpmError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| IpmError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let found = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn records(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = open_reader(path, header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, k: usize, what: &str) -> Result<T> {
    let raw = &rec[k];
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from `{raw}`")))
}

fn finite(path: &Path, line: u64, v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("{what} must be finite, got {v}")))
    }
}

/// One row per tree. A row with an empty diameter marks a plot-year that was
/// measured and had no trees.
pub fn read_patterns(path: &Path) -> Result<Vec<PointPattern>> {
    let mut groups: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for (line, rec) in records(path, &PATTERN_HEADER)? {
        let plot = rec[0].to_string();
        if plot.is_empty() {
            return Err(parse_err(path, line, "empty plot_id"));
        }
        let year: i32 = field(path, line, &rec, 1, "year")?;
        let entry = groups.entry((plot, year)).or_default();
        if !rec[2].is_empty() {
            let d: f64 = field(path, line, &rec, 2, "diameter_cm")?;
            let d = finite(path, line, d, "diameter_cm")?;
            if d < 0.0 {
                return Err(parse_err(path, line, format!("negative diameter {d}")));
            }
            entry.push(d);
        }
    }
    if groups.is_empty() {
        return Err(parse_err(path, 1, "no pattern rows"));
    }
    Ok(groups
        .into_iter()
        .map(|((plot, year), d)| PointPattern::new(plot, year, d))
        .collect())
}

pub fn read_climates(path: &Path) -> Result<Vec<ClimateRow>> {
    let rows: Vec<ClimateRow> = records(path, &CLIMATE_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            let plot = rec[0].to_string();
            if plot.is_empty() {
                return Err(parse_err(path, line, "empty plot_id"));
            }
            let t: f64 = field(path, line, &rec, 2, "winter_temp_c")?;
            let p: f64 = field(path, line, &rec, 3, "annual_precip_mm")?;
            Ok(ClimateRow {
                plot_id: plot,
                year: field(path, line, &rec, 1, "year")?,
                climate: ClimateRecord {
                    winter_temp: finite(path, line, t, "winter_temp_c")?,
                    annual_precip: finite(path, line, p, "annual_precip_mm")?,
                },
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no climate rows"));
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| IpmError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> IpmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IpmError::io(path, io),
        other => IpmError::InvalidParameter(format!("csv write to {}: {other:?}", path.display())),
    }
}

/// Writes `rows` under `header`, all fields already formatted.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IpmError::io(path, e))
}

pub fn write_patterns(path: &Path, patterns: &[PointPattern]) -> Result<()> {
    let rows = patterns.iter().flat_map(|p| {
        if p.is_empty() {
            vec![vec![p.plot_id.clone(), p.year.to_string(), String::new()]]
        } else {
            p.diameters
                .iter()
                .map(|d| vec![p.plot_id.clone(), p.year.to_string(), d.to_string()])
                .collect()
        }
    });
    write_csv(path, &PATTERN_HEADER, rows)
}

pub fn write_climates(path: &Path, rows: &[ClimateRow]) -> Result<()> {
    write_csv(
        path,
        &CLIMATE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.plot_id.clone(),
                r.year.to_string(),
                r.climate.winter_temp.to_string(),
                r.climate.annual_precip.to_string(),
            ]
        }),
    )
}

pub fn write_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let rows = chain.iterations.iter().enumerate().flat_map(|(k, it)| {
        chain
            .names
            .iter()
            .zip(&chain.draws[k])
            .map(move |(n, v)| vec![it.to_string(), n.clone(), v.to_string()])
            .chain(std::iter::once(vec![
                it.to_string(),
                LOG_POST.to_string(),
                chain.log_posterior[k].to_string(),
            ]))
    });
    write_csv(path, &CHAIN_HEADER, rows)
}

/// Reads a chain written by [`write_chain`].
pub fn read_chain(path: &Path, spec: &ModelSpec, chain: usize, seed: u64) -> Result<PosteriorChain> {
    let mut names: Vec<String> = Vec::new();
    let mut iterations: Vec<usize> = Vec::new();
    let mut draws: Vec<Vec<f64>> = Vec::new();
    let mut log_post: Vec<f64> = Vec::new();
    for (line, rec) in records(path, &CHAIN_HEADER)? {
        let it: usize = field(path, line, &rec, 0, "iteration")?;
        let v: f64 = field(path, line, &rec, 2, "value")?;
        let name = &rec[1];
        if iterations.last() != Some(&it) {
            if let Some(row) = draws.last() {
                if row.len() != names.len() || log_post.len() != draws.len() {
                    return Err(parse_err(path, line, format!("incomplete draw for iteration {}", iterations.last().unwrap_or(&0))));
                }
            }
            iterations.push(it);
            draws.push(Vec::new());
        }
        if name == LOG_POST {
            log_post.push(v);
            continue;
        }
        let row = draws.last_mut().expect("pushed above");
        if iterations.len() == 1 {
            names.push(name.to_string());
        } else if names.get(row.len()).map(String::as_str) != Some(name) {
            return Err(parse_err(path, line, format!("unexpected parameter `{name}`")));
        }
        row.push(v);
    }
    if draws.last().is_some_and(|r| r.len() != names.len()) || log_post.len() != draws.len() {
        return Err(parse_err(path, 0, "truncated final draw"));
    }
    PosteriorChain::from_draws(spec, chain, seed, names, iterations, draws, log_post)
}

pub fn write_summary(path: &Path, table: &[ParamSummary]) -> Result<()> {
    write_csv(
        path,
        &["param", "mean", "median", "lower_2.5", "upper_97.5", "samples"],
        table.iter().map(|s| {
            vec![
                s.name.clone(),
                s.mean.to_string(),
                s.median.to_string(),
                s.lower.to_string(),
                s.upper.to_string(),
                s.samples.to_string(),
            ]
        }),
    )
}

pub fn write_acceptance(path: &Path, chains: &[PosteriorChain]) -> Result<()> {
    write_csv(
        path,
        &["chain", "block", "acceptance"],
        chains
            .iter()
            .flat_map(|c| c.acceptance.iter().map(move |(n, a)| vec![c.chain.to_string(), n.clone(), a.to_string()])),
    )
}

pub fn write_panel_summary(path: &Path, rows: &[PanelSummaryRow]) -> Result<()> {
    write_csv(
        path,
        &["year", "bin", "n_start", "m_end", "pooled_count_start", "pooled_count_end"],
        rows.iter().map(|r| {
            vec![
                r.year.to_string(),
                r.bin.to_string(),
                r.n_start.to_string(),
                r.m_end.to_string(),
                r.pooled_count_start.to_string(),
                r.pooled_count_end.to_string(),
            ]
        }),
    )
}

pub fn write_abundance(path: &Path, rows: &[AbundanceRow]) -> Result<()> {
    write_csv(
        path,
        &["year", "bin", "observed_per_plot", "predicted_mean", "lower_2.5", "upper_97.5"],
        rows.iter().map(|r| {
            vec![
                r.year.to_string(),
                r.bin.to_string(),
                r.observed.to_string(),
                r.mean.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
            ]
        }),
    )
}

pub fn write_bands(path: &Path, bands: &[BinProjection]) -> Result<()> {
    write_csv(
        path,
        &["bin", "cell_center", "lower", "median", "upper", "truth"],
        bands.iter().flat_map(|b| {
            (0..b.centers.len()).map(move |j| {
                vec![
                    b.bin.to_string(),
                    b.centers[j].to_string(),
                    b.band.lower[j].to_string(),
                    b.band.median[j].to_string(),
                    b.band.upper[j].to_string(),
                    b.truth[j].to_string(),
                ]
            })
        }),
    )
}

/// Projected fields as `bin,year,cell_center,intensity`.
pub fn write_projection(path: &Path, fields: &[(usize, IntensityField)]) -> Result<()> {
    write_csv(
        path,
        &["bin", "year", "cell_center", "intensity"],
        fields.iter().flat_map(|(bin, f)| {
            let year = f.year.map_or(String::new(), |y| y.to_string());
            f.grid()
                .centers()
                .iter()
                .zip(f.values())
                .map(move |(x, v)| vec![bin.to_string(), year.clone(), x.to_string(), v.to_string()])
                .collect::<Vec<_>>()
        }),
    )
}

pub fn write_recovery(path: &Path, rows: &[RecoveryRow]) -> Result<()> {
    write_csv(
        path,
        &["missing_fraction", "param", "truth", "mean", "lower_2.5", "upper_97.5", "covered", "width_ratio"],
        rows.iter().map(|r| {
            vec![
                r.fraction.to_string(),
                r.name.clone(),
                r.truth.to_string(),
                r.mean.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
                r.covered.to_string(),
                r.width_ratio.to_string(),
            ]
        }),
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| IpmError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| IpmError::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| IpmError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| IpmError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
