use std::collections::HashMap;
use std::fs;
use std::path::Path;

use mfda_core::icc::icc_report;
use mfda_core::ingest::{
    format_float, read_fit, read_long_csv, write_csv, write_fit, write_long_csv, MANIFEST_FILE,
};
use mfda_core::leveltest::{
    partition_scores, score_covariate_correlation, two_sample_score_test, Correlation, Method,
    TestConfig, TestReport,
};
use mfda_core::mfpca::{fit_nested, unit_keys, LevelFit, MultilevelFit, UnitKey};
use mfda_core::simkl::{generate, GeneratorSpec};
use mfda_core::{Error, Result, FORMAT_VERSION, VERSION};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::EffectiveFit;
use crate::{CorrelateArgs, FitArgs, IccArgs, SimulateArgs, TestArgs};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const TRUTH_MEANS_FILE: &str = "truth_means.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const ICC_FILE: &str = "icc.json";
pub const POINTWISE_ICC_FILE: &str = "pointwise_icc.csv";
pub const TEST_REPORT_FILE: &str = "test_report.json";
pub const CORRELATION_FILE: &str = "correlation.json";
pub const SCORE_COVARIATE_FILE: &str = "score_covariate.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn unit_columns(u: &UnitKey) -> [String; 3] {
    [
        u.subject.clone(),
        u.measure.clone().unwrap_or_default(),
        u.replicate.map(|k| k.to_string()).unwrap_or_default(),
    ]
}

#[derive(Serialize)]
struct Truth {
    format: &'static str,
    channel: String,
    analytic_icc: f64,
    noise_variance: f64,
    level_variances: Vec<f64>,
    eigenvalues: Vec<Vec<f64>>,
    subjects: Vec<String>,
    measures: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    format: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    spec: &'a T,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec = GeneratorSpec::from_toml(&text)
        .map_err(|e| Error::format(&args.spec, e.to_string()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let sim = generate(&spec)?;
    let out = &args.out;
    create_dir(out)?;
    write_long_csv(&sim.curves, &spec.channel, &out.join(DATA_FILE))?;

    let truth = &sim.truth;
    let grid = sim.curves.grid();
    let points = grid.points();
    let measures = sim.curves.measures().to_vec();
    write_json(
        &out.join(TRUTH_FILE),
        &Truth {
            format: FORMAT_VERSION,
            channel: spec.channel.clone(),
            analytic_icc: truth.icc,
            noise_variance: truth.noise_variance,
            level_variances: spec.level_variances(),
            eigenvalues: truth.eigenvalues.clone(),
            subjects: sim.curves.subjects().to_vec(),
            measures: measures.clone(),
        },
    )?;

    let mut header: Vec<String> = vec!["t".into(), "mean".into(), "icc".into()];
    header.extend(measures.iter().cloned());
    write_csv(
        &out.join(TRUTH_MEANS_FILE),
        &header,
        (0..points.len()).map(|t| {
            [points[t], truth.mean[t], truth.pointwise_icc[t]]
                .into_iter()
                .chain(truth.measure_means.iter().map(move |m| m[t]))
                .map(format_float)
        }),
    )?;

    let keys = unit_keys(&sim.curves, truth.eigenvalues.len());
    for (l, (phi, scores)) in truth.eigenfunctions.iter().zip(&truth.scores).enumerate() {
        let mut header = vec!["t".to_string()];
        header.extend((1..=phi.ncols()).map(|a| format!("phi{a}")));
        write_csv(
            &out.join(format!("truth_eigenfunctions_level{}.csv", l + 1)),
            &header,
            (0..points.len()).map(|t| {
                std::iter::once(format_float(points[t]))
                    .chain((0..phi.ncols()).map(move |a| format_float(phi[(t, a)])))
            }),
        )?;
        let mut header: Vec<String> = ["subject", "measure", "replicate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=scores.ncols()).map(|a| format!("score{a}")));
        write_csv(
            &out.join(format!("truth_scores_level{}.csv", l + 1)),
            &header,
            keys[l].iter().enumerate().map(|(r, u)| {
                unit_columns(u)
                    .into_iter()
                    .chain((0..scores.ncols()).map(move |a| format_float(scores[(r, a)])))
            }),
        )?;
    }

    write_json(
        &out.join(MANIFEST_FILE),
        &RunManifest {
            format: FORMAT_VERSION,
            version: VERSION,
            command: "simulate",
            seed: spec.seed,
            spec: &spec,
        },
    )?;
    println!("curves={}", sim.curves.n_rows());
    println!("grid_points={}", points.len());
    println!("analytic_icc={}", format_float(truth.icc));
    Ok(())
}

/// `key=value` lines describing a fit.
pub fn fit_summary(fit: &MultilevelFit) -> Vec<String> {
    let mut lines = vec![format!("levels={}", fit.levels.len())];
    for (l, level) in fit.levels.iter().enumerate() {
        lines.push(format!("level{}_components={}", l + 1, level.eig.len()));
        lines.push(format!(
            "level{}_variance={}",
            l + 1,
            format_float(level.eig.total_variance())
        ));
    }
    lines.push(format!("noise_variance={}", format_float(fit.noise_variance)));
    let shares = fit.variance_shares();
    for (l, s) in shares.iter().take(fit.levels.len()).enumerate() {
        lines.push(format!("share_level{}={}", l + 1, format_float(*s)));
    }
    if let Some(s) = shares.get(fit.levels.len()) {
        lines.push(format!("share_noise={}", format_float(*s)));
    }
    lines
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let effective = EffectiveFit::resolve(args)?;
    let data = read_long_csv(
        &args.data,
        effective.channel.as_deref(),
        effective.grid_policy(),
    )?;
    for (key, n) in &data.report.dropped_points {
        eprintln!("mfda: dropped {n} grid point(s) from {key}");
    }
    let fit = fit_nested(&data.curves, &effective.fit_config())?;
    create_dir(&args.out)?;
    write_json(&args.out.join(INGEST_REPORT_FILE), &data.report)?;
    let run = serde_json::json!({
        "command": "fit",
        "data": args.data.display().to_string(),
        "effective": effective,
        "channel": data.report.channel,
    });
    write_fit(&fit, &args.out, None, run)?;
    for line in fit_summary(&fit) {
        println!("{line}");
    }
    Ok(())
}

#[derive(Serialize)]
struct IccFile {
    global_icc: f64,
    level_variances: Vec<f64>,
    noise_variance: f64,
    levels: usize,
}

pub fn icc(args: &IccArgs) -> Result<()> {
    let fit = read_fit(&args.fit_dir)?;
    let report = icc_report(&fit)?;
    let out = args.out.as_deref().unwrap_or(&args.fit_dir);
    create_dir(out)?;
    write_json(
        &out.join(ICC_FILE),
        &IccFile {
            global_icc: report.global_icc,
            level_variances: fit.level_variances(),
            noise_variance: fit.noise_variance,
            levels: fit.levels.len(),
        },
    )?;
    let points = fit.grid.points();
    let values = report.pointwise.values();
    write_csv(
        &out.join(POINTWISE_ICC_FILE),
        &["t".into(), "icc".into()],
        (0..points.len()).map(|t| [format_float(points[t]), format_float(values[t])]),
    )?;
    println!("{:.2}", report.global_icc);
    Ok(())
}

fn level_of(fit: &MultilevelFit, level: usize) -> Result<&LevelFit> {
    fit.level(level).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "level {level} does not exist; the fit has {} levels",
            fit.levels.len()
        ))
    })
}

#[derive(Serialize)]
struct TestFile<'a> {
    level: usize,
    group_a: &'a [String],
    group_b: &'a [String],
    seed: u64,
    #[serde(flatten)]
    report: &'a TestReport,
}

pub fn test(args: &TestArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let fit = read_fit(&args.fit_dir)?;
    let level = level_of(&fit, args.level)?;
    if level.units.iter().all(|u| u.measure.is_none()) {
        return Err(Error::InvalidParameter(format!(
            "level {} scores are not attached to measures",
            args.level
        )));
    }
    let groups = partition_scores(level, &args.group_a, &args.group_b)?;
    let config = TestConfig {
        method,
        permutations: args.perms,
        seed: args.seed,
        paired: args.paired,
        ks_asymptotic: args.ks_asymptotic,
    };
    let report = two_sample_score_test(&groups.a, &groups.b, &config)?;
    let out = args.out.as_deref().unwrap_or(&args.fit_dir);
    create_dir(out)?;
    write_json(
        &out.join(TEST_REPORT_FILE),
        &TestFile {
            level: args.level,
            group_a: &args.group_a,
            group_b: &args.group_b,
            seed: args.seed,
            report: &report,
        },
    )?;
    println!("{}", format_float(report.global_p));
    Ok(())
}

/// Subject-keyed values of one covariate column.
fn read_covariate(path: &Path, column: Option<&str>) -> Result<(String, HashMap<String, f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let subject_col = headers
        .iter()
        .position(|h| h == "subject")
        .ok_or_else(|| Error::format(path, "missing column \"subject\""))?;
    let value_col = match column {
        Some(c) => headers.iter().position(|h| h == c).ok_or_else(|| {
            Error::format(
                path,
                format!(
                    "no column {c:?}; columns are {}",
                    headers.iter().collect::<Vec<_>>().join(", ")
                ),
            )
        })?,
        None => (0..headers.len())
            .find(|&c| c != subject_col)
            .ok_or_else(|| Error::format(path, "no covariate column"))?,
    };
    let mut values = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let subject = row.get(subject_col).unwrap_or("").to_string();
        let raw = row.get(value_col).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("covariate value {raw:?} is not a number"),
        })?;
        if values.insert(subject.clone(), v).is_some() {
            return Err(Error::Duplicate {
                line,
                key: format!("subject {subject:?}"),
            });
        }
    }
    Ok((headers[value_col].to_string(), values))
}

#[derive(Serialize)]
struct CorrelationFile<'a> {
    level: usize,
    measure: Option<&'a str>,
    covariate: &'a str,
    n: usize,
    correlations: &'a [Correlation],
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let fit = read_fit(&args.fit_dir)?;
    let level = level_of(&fit, args.level)?;
    let (name, covariate) = read_covariate(&args.covariate, args.column.as_deref())?;
    let measures: Vec<&str> = {
        let mut seen = Vec::new();
        for u in &level.units {
            if let Some(m) = u.measure.as_deref() {
                if !seen.contains(&m) {
                    seen.push(m);
                }
            }
        }
        seen
    };
    if level.units.iter().any(|u| u.replicate.is_some()) {
        return Err(Error::InvalidParameter(
            "correlation is defined for subject or subject-measure scores, not replicates".into(),
        ));
    }
    let measure = match (&args.measure, measures.len()) {
        (_, 0) => None,
        (Some(m), _) if measures.contains(&m.as_str()) => Some(m.as_str()),
        (Some(m), _) => {
            return Err(Error::InvalidParameter(format!(
                "unknown measure {m:?}; known measures: {}",
                measures.join(", ")
            )))
        }
        (None, 1) => Some(measures[0]),
        (None, _) => {
            return Err(Error::InvalidParameter(format!(
                "level {} has several measures; choose one with --measure ({})",
                args.level,
                measures.join(", ")
            )))
        }
    };
    let rows: Vec<usize> = (0..level.units.len())
        .filter(|&r| measure.is_none() || level.units[r].measure.as_deref() == measure)
        .collect();
    let missing: Vec<&str> = rows
        .iter()
        .map(|&r| level.units[r].subject.as_str())
        .filter(|s| !covariate.contains_key(*s))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "covariate has no value for subject(s) {}",
            missing.join(", ")
        )));
    }
    let k = level.scores.ncols();
    let scores = DMatrix::from_fn(rows.len(), k, |i, a| level.scores[(rows[i], a)]);
    let values: Vec<f64> = rows
        .iter()
        .map(|&r| covariate[&level.units[r].subject])
        .collect();
    let correlations = score_covariate_correlation(&scores, &values)?;

    let out = args.out.as_deref().unwrap_or(&args.fit_dir);
    create_dir(out)?;
    write_json(
        &out.join(CORRELATION_FILE),
        &CorrelationFile {
            level: args.level,
            measure,
            covariate: &name,
            n: rows.len(),
            correlations: &correlations,
        },
    )?;
    let scores = &scores;
    let mut header = vec!["subject".to_string(), name.clone()];
    header.extend((1..=k).map(|a| format!("score{a}")));
    write_csv(
        &out.join(SCORE_COVARIATE_FILE),
        &header,
        rows.iter().enumerate().map(|(i, &r)| {
            [level.units[r].subject.clone(), format_float(values[i])]
                .into_iter()
                .chain((0..k).map(move |a| format_float(scores[(i, a)])))
        }),
    )?;
    for c in &correlations {
        println!(
            "component={} rho={} p={}",
            c.component,
            format_float(c.rho),
            format_float(c.p_value)
        );
    }
    Ok(())
}
