//! Long-format CSV datasets and fit directories.
//!
//! A dataset has one row per observation with the columns
//! `subject, measure, replicate, t, value, channel`. The `replicate` field is
//! left empty for two-level data. A fit directory holds plain CSV tables plus
//! JSON sidecars; floats are written in shortest round-trip form so reading a
//! directory back reproduces the fit exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curves::{CurveSet, NestedIndex};
use crate::eigen::EigenSystem;
use crate::error::{Error, Result};
use crate::grid::{Curve, Grid};
use crate::mfpca::{FitConfig, LevelFit, MultilevelFit, UnitKey};

pub const LONG_COLUMNS: [&str; 6] = ["subject", "measure", "replicate", "t", "value", "channel"];

pub const MEAN_FILE: &str = "mean.csv";
pub const MEASURE_MEANS_FILE: &str = "measure_means.csv";
pub const EIGENVALUES_FILE: &str = "eigenvalues.csv";
pub const NOISE_FILE: &str = "noise.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn eigenfunctions_file(level: usize) -> String {
    format!("eigenfunctions_level{level}.csv")
}

pub fn scores_file(level: usize) -> String {
    format!("scores_level{level}.csv")
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridPolicy {
    /// Every curve must cover the same grid.
    #[default]
    Strict,
    /// Keep only the grid points shared by all curves.
    Intersect,
}

impl std::str::FromStr for GridPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(GridPolicy::Strict),
            "intersect" => Ok(GridPolicy::Intersect),
            other => Err(Error::InvalidParameter(format!(
                "unknown grid policy {other:?} (expected strict or intersect)"
            ))),
        }
    }
}

/// What the reader kept, skipped and dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub channel: String,
    pub records_read: usize,
    pub records_other_channels: usize,
    pub curves: usize,
    pub grid_points: usize,
    /// `(curve, number of grid points removed)` under the intersect policy.
    pub dropped_points: Vec<(String, usize)>,
    pub ignored_columns: Vec<String>,
    /// Per-subject measure and replicate counts.
    pub design: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub curves: CurveSet,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct GroupKey {
    subject: usize,
    measure: usize,
    replicate: Option<usize>,
}

fn group_name(subjects: &[String], measures: &[String], key: &GroupKey) -> String {
    match key.replicate {
        Some(k) => format!(
            "(subject {}, measure {}, replicate {k})",
            subjects[key.subject], measures[key.measure]
        ),
        None => format!("(subject {}, measure {})", subjects[key.subject], measures[key.measure]),
    }
}

/// Order-preserving string interner.
#[derive(Default)]
struct Labels {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Labels {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&i) = self.lookup.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

fn float_key(t: f64) -> u64 {
    // -0.0 and 0.0 are the same grid point
    (t + 0.0).to_bits()
}

/// Read one channel of a long-format CSV file.
///
/// With `channel = None` the file must contain a single channel.
pub fn read_long_csv(path: &Path, channel: Option<&str>, policy: GridPolicy) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, format!("cannot read header: {e}")))?
        .clone();
    let mut col = [0usize; 6];
    for (c, name) in LONG_COLUMNS.iter().enumerate() {
        col[c] = headers.iter().position(|h| h == *name).ok_or_else(|| {
            Error::format(
                path,
                format!(
                    "missing column {name:?}; expected columns {}",
                    LONG_COLUMNS.join(", ")
                ),
            )
        })?;
    }
    let ignored_columns: Vec<String> = headers
        .iter()
        .filter(|h| !LONG_COLUMNS.contains(h))
        .map(str::to_string)
        .collect();

    struct Record {
        line: u64,
        subject: String,
        measure: String,
        replicate: Option<usize>,
        t: f64,
        value: f64,
        channel: String,
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |c: usize| row.get(col[c]).unwrap_or("");
        let parse_float = |c: usize| -> Result<f64> {
            let s = field(c);
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {}: {s:?} is not a finite number", LONG_COLUMNS[c]),
                })
        };
        let subject = field(0).to_string();
        let measure = field(1).to_string();
        if subject.is_empty() || measure.is_empty() {
            return Err(Error::Parse {
                line,
                message: "subject and measure must be nonempty".into(),
            });
        }
        let replicate = match field(2) {
            "" => None,
            s => Some(s.parse::<usize>().ok().filter(|k| *k >= 1).ok_or_else(|| Error::Parse {
                line,
                message: format!("column replicate: {s:?} is not a positive integer"),
            })?),
        };
        records.push(Record {
            line,
            subject,
            measure,
            replicate,
            t: parse_float(3)?,
            value: parse_float(4)?,
            channel: field(5).to_string(),
        });
    }

    let channels: BTreeSet<&str> = records.iter().map(|r| r.channel.as_str()).collect();
    let channel = match channel {
        Some(c) => {
            if !channels.contains(c) {
                return Err(Error::format(
                    path,
                    format!(
                        "channel {c:?} not found; available channels: {}",
                        channels.iter().copied().collect::<Vec<_>>().join(", ")
                    ),
                ));
            }
            c.to_string()
        }
        None => match channels.len() {
            0 => return Err(Error::format(path, "file has no records")),
            1 => channels.iter().next().expect("one channel").to_string(),
            _ => {
                return Err(Error::format(
                    path,
                    format!(
                        "file has several channels ({}); choose one",
                        channels.iter().copied().collect::<Vec<_>>().join(", ")
                    ),
                ))
            }
        },
    };

    let mut subjects = Labels::default();
    let mut measures = Labels::default();
    let mut groups: BTreeMap<GroupKey, BTreeMap<u64, (f64, f64, u64)>> = BTreeMap::new();
    let mut other = 0;
    let mut with_replicate = None;
    for r in &records {
        if r.channel != channel {
            other += 1;
            continue;
        }
        match with_replicate {
            None => with_replicate = Some(r.replicate.is_some()),
            Some(w) if w != r.replicate.is_some() => {
                return Err(Error::Parse {
                    line: r.line,
                    message: "replicate is given for some records but not for others".into(),
                })
            }
            _ => {}
        }
        let key = GroupKey {
            subject: subjects.id(&r.subject),
            measure: measures.id(&r.measure),
            replicate: r.replicate,
        };
        let curve = groups.entry(key.clone()).or_default();
        if let Some((_, _, first)) = curve.get(&float_key(r.t)) {
            return Err(Error::Duplicate {
                line: r.line,
                key: format!(
                    "{} at t = {} (first seen on line {first})",
                    group_name(&subjects.names, &measures.names, &key),
                    r.t
                ),
            });
        }
        curve.insert(float_key(r.t), (r.t, r.value, r.line));
    }
    if groups.is_empty() {
        return Err(Error::format(path, format!("no records for channel {channel:?}")));
    }

    let mut union: BTreeMap<u64, f64> = BTreeMap::new();
    for curve in groups.values() {
        for (k, (t, _, _)) in curve {
            union.insert(*k, *t);
        }
    }
    let mut dropped_points = Vec::new();
    let keep: BTreeSet<u64> = match policy {
        GridPolicy::Strict => {
            for (key, curve) in &groups {
                if curve.len() != union.len() {
                    return Err(Error::IncompleteCurve(format!(
                        "{} has {} of the {} grid points",
                        group_name(&subjects.names, &measures.names, key),
                        curve.len(),
                        union.len()
                    )));
                }
            }
            union.keys().copied().collect()
        }
        GridPolicy::Intersect => {
            let keep: BTreeSet<u64> = union
                .keys()
                .copied()
                .filter(|k| groups.values().all(|c| c.contains_key(k)))
                .collect();
            for (key, curve) in &groups {
                let dropped = curve.len() - keep.len();
                if dropped > 0 {
                    dropped_points.push((group_name(&subjects.names, &measures.names, key), dropped));
                }
            }
            keep
        }
    };
    let mut points: Vec<f64> = keep.iter().map(|k| union[k]).collect();
    points.sort_by(f64::total_cmp);
    let grid = Arc::new(Grid::new(points.clone()).map_err(|e| Error::format(path, e.to_string()))?);
    let order: Vec<u64> = points.iter().map(|t| float_key(*t)).collect();

    let rows: Vec<(NestedIndex, Vec<f64>)> = groups
        .iter()
        .map(|(key, curve)| {
            (
                NestedIndex::new(key.subject + 1, key.measure + 1, key.replicate),
                order.iter().map(|k| curve[k].1).collect(),
            )
        })
        .collect();
    let curves = CurveSet::new(grid, subjects.names, measures.names, rows)?;
    let report = IngestReport {
        channel,
        records_read: records.len(),
        records_other_channels: other,
        curves: curves.n_rows(),
        grid_points: points.len(),
        dropped_points,
        ignored_columns,
        design: curves.layout_report(),
    };
    Ok(Dataset { curves, report })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Write a CSV table with a header row.
pub fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write curves in long format, one record per grid point.
pub fn write_long_csv(curves: &CurveSet, channel: &str, path: &Path) -> Result<()> {
    let header: Vec<String> = LONG_COLUMNS.iter().map(|s| s.to_string()).collect();
    let points = curves.grid().points();
    let rows = (0..curves.n_rows()).flat_map(|r| {
        let idx = curves.index(r);
        let row = curves.row(r);
        points.iter().zip(row).map(move |(t, v)| {
            vec![
                curves.subject_label(idx.subject).to_string(),
                curves.measure_label(idx.measure).to_string(),
                idx.replicate.map(|k| k.to_string()).unwrap_or_default(),
                format_float(*t),
                format_float(*v),
                channel.to_string(),
            ]
        })
    });
    write_csv(path, &header, rows)
}

/// Provenance stored next to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub format: String,
    pub version: String,
    pub levels: usize,
    pub config: FitConfig,
    pub seed: Option<u64>,
    /// Trimmed eigenpairs per level.
    pub trimmed: Vec<usize>,
    pub grid_points: usize,
    pub measures: Vec<String>,
    /// Effective run settings recorded by the caller.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NoiseFile {
    noise_variance: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Write every table of a fit into `dir` (created if needed).
pub fn write_fit(
    fit: &MultilevelFit,
    dir: &Path,
    seed: Option<u64>,
    run: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let points = fit.grid.points();
    let weights = fit.grid.weights();

    write_csv(
        &dir.join(MEAN_FILE),
        &["t".into(), "weight".into(), "mean".into()],
        (0..points.len()).map(|t| {
            vec![
                format_float(points[t]),
                format_float(weights[t]),
                format_float(fit.global_mean.values()[t]),
            ]
        }),
    )?;

    let mut header = vec!["t".to_string()];
    header.extend(fit.measure_means.iter().map(|(l, _)| l.clone()));
    write_csv(
        &dir.join(MEASURE_MEANS_FILE),
        &header,
        (0..points.len()).map(|t| {
            std::iter::once(format_float(points[t]))
                .chain(fit.measure_means.iter().map(move |(_, c)| format_float(c.values()[t])))
        }),
    )?;

    let mut eigen_rows = Vec::new();
    for (l, level) in fit.levels.iter().enumerate() {
        let eig = &level.eig;
        let k = eig.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|a| format!("phi{a}")));
        let rows: Vec<Vec<String>> = if k == 0 {
            Vec::new()
        } else {
            (0..points.len())
                .map(|t| {
                    std::iter::once(format_float(points[t]))
                        .chain((0..k).map(|a| format_float(eig.functions()[(t, a)])))
                        .collect()
                })
                .collect()
        };
        write_csv(&dir.join(eigenfunctions_file(l + 1)), &header, rows)?;
        for a in 0..k {
            eigen_rows.push(vec![
                (l + 1).to_string(),
                (a + 1).to_string(),
                format_float(eig.eigenvalues()[a]),
                format_float(eig.pve()[a]),
            ]);
        }

        let mut header: Vec<String> = ["subject", "measure", "replicate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=level.scores.ncols()).map(|a| format!("score{a}")));
        write_csv(
            &dir.join(scores_file(l + 1)),
            &header,
            level.units.iter().enumerate().map(|(r, u)| {
                [
                    u.subject.clone(),
                    u.measure.clone().unwrap_or_default(),
                    u.replicate.map(|k| k.to_string()).unwrap_or_default(),
                ]
                .into_iter()
                .chain((0..level.scores.ncols()).map(move |a| format_float(level.scores[(r, a)])))
            }),
        )?;
    }
    write_csv(
        &dir.join(EIGENVALUES_FILE),
        &["level".into(), "component".into(), "eigenvalue".into(), "pve".into()],
        eigen_rows,
    )?;

    write_json(
        &dir.join(NOISE_FILE),
        &NoiseFile {
            noise_variance: fit.noise_variance,
        },
    )?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &FitManifest {
            format: crate::FORMAT_VERSION.to_string(),
            version: crate::VERSION.to_string(),
            levels: fit.levels.len(),
            config: fit.config,
            seed,
            trimmed: fit.levels.iter().map(|l| l.eig.trimmed()).collect(),
            grid_points: points.len(),
            measures: fit.measure_means.iter().map(|(l, _)| l.clone()).collect(),
            run,
        },
    )
}

/// Rows of a CSV file with its header; `line` numbers are 1-based file lines.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn float(&self, line: u64, s: &str) -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::format(&self.path, format!("line {line}: {s:?} is not a number")))
    }

    fn expect_header(&self, prefix: &[&str]) -> Result<()> {
        if self.header.len() < prefix.len() || self.header.iter().zip(prefix).any(|(h, p)| h != p) {
            return Err(Error::format(
                &self.path,
                format!("expected header starting with {}", prefix.join(",")),
            ));
        }
        Ok(())
    }
}

/// Read a fit directory written by [`write_fit`].
pub fn read_fit(dir: &Path) -> Result<MultilevelFit> {
    let manifest: FitManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != crate::FORMAT_VERSION {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            format!("unsupported format {:?}", manifest.format),
        ));
    }
    let noise: NoiseFile = read_json(&dir.join(NOISE_FILE))?;

    let mean = Table::read(&dir.join(MEAN_FILE))?;
    mean.expect_header(&["t", "weight", "mean"])?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut mu = Vec::new();
    for (line, row) in &mean.rows {
        points.push(mean.float(*line, &row[0])?);
        weights.push(mean.float(*line, &row[1])?);
        mu.push(mean.float(*line, &row[2])?);
    }
    let grid = Arc::new(
        Grid::with_weights(points, weights).map_err(|e| Error::format(&mean.path, e.to_string()))?,
    );
    let m = grid.len();

    let mm = Table::read(&dir.join(MEASURE_MEANS_FILE))?;
    mm.expect_header(&["t"])?;
    if mm.rows.len() != m {
        return Err(Error::format(&mm.path, format!("expected {m} rows")));
    }
    let mut measure_means = Vec::new();
    for c in 1..mm.header.len() {
        let values = mm
            .rows
            .iter()
            .map(|(line, row)| mm.float(*line, &row[c]))
            .collect::<Result<Vec<_>>>()?;
        measure_means.push((mm.header[c].clone(), Curve::new(grid.clone(), values)?));
    }

    let ev = Table::read(&dir.join(EIGENVALUES_FILE))?;
    ev.expect_header(&["level", "component", "eigenvalue", "pve"])?;
    let mut by_level: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (line, row) in &ev.rows {
        let level: usize = row[0]
            .parse()
            .map_err(|_| Error::format(&ev.path, format!("line {line}: bad level")))?;
        let comp: usize = row[1]
            .parse()
            .map_err(|_| Error::format(&ev.path, format!("line {line}: bad component")))?;
        by_level
            .entry(level)
            .or_default()
            .push((comp, ev.float(*line, &row[2])?, ev.float(*line, &row[3])?));
    }

    let mut levels = Vec::with_capacity(manifest.levels);
    for l in 1..=manifest.levels {
        let mut entries = by_level.remove(&l).unwrap_or_default();
        entries.sort_by_key(|e| e.0);
        let k = entries.len();
        if entries.iter().enumerate().any(|(a, e)| e.0 != a + 1) {
            return Err(Error::format(&ev.path, format!("level {l}: components are not 1..{k}")));
        }
        let ef = Table::read(&dir.join(eigenfunctions_file(l)))?;
        ef.expect_header(&["t"])?;
        if ef.header.len() != k + 1 || (k > 0 && ef.rows.len() != m) {
            return Err(Error::format(
                &ef.path,
                format!("expected {k} eigenfunctions on {m} grid points"),
            ));
        }
        let mut functions = DMatrix::zeros(m, k);
        for (t, (line, row)) in ef.rows.iter().enumerate() {
            for a in 0..k {
                functions[(t, a)] = ef.float(*line, &row[a + 1])?;
            }
        }
        let eig = EigenSystem::from_parts(
            grid.clone(),
            entries.iter().map(|e| e.1).collect(),
            functions,
            entries.iter().map(|e| e.2).collect(),
            manifest.trimmed.get(l - 1).copied().unwrap_or(0),
        )?;

        let sc = Table::read(&dir.join(scores_file(l)))?;
        sc.expect_header(&["subject", "measure", "replicate"])?;
        let kk = sc.header.len() - 3;
        if kk != k {
            return Err(Error::format(
                &sc.path,
                format!("{kk} score columns but {k} eigenvalues"),
            ));
        }
        let mut units = Vec::with_capacity(sc.rows.len());
        let mut scores = DMatrix::zeros(sc.rows.len(), k);
        for (r, (line, row)) in sc.rows.iter().enumerate() {
            let replicate = match row[2].as_str() {
                "" => None,
                s => Some(s.parse().map_err(|_| {
                    Error::format(&sc.path, format!("line {line}: bad replicate {s:?}"))
                })?),
            };
            units.push(UnitKey {
                subject: row[0].clone(),
                measure: (!row[1].is_empty()).then(|| row[1].clone()),
                replicate,
            });
            for a in 0..k {
                scores[(r, a)] = sc.float(*line, &row[a + 3])?;
            }
        }
        levels.push(LevelFit { eig, units, scores });
    }

    Ok(MultilevelFit {
        global_mean: Curve::new(grid.clone(), mu)?,
        grid,
        measure_means,
        levels,
        noise_variance: noise.noise_variance,
        config: manifest.config,
    })
}

/// Read only the manifest of a fit directory.
pub fn read_manifest(dir: &Path) -> Result<FitManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}
