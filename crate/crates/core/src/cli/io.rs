//! Cohort CSV parsing and the CSV / JSON writers.

use std::io::{Read, Write};
use std::path::Path;

use crate::cohort::{validate_cohort, Cohort, SubjectRecord};
use crate::pipeline::Analysis;
use crate::simulate::{McSummary, TruthCurves};

use super::CliError;

pub const COHORT_HEADER: [&str; 5] = ["id", "obs_time", "death", "treated", "treat_time"];

/// Formats a number for the machine-readable outputs.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn schema(source: &str, line: u64, message: impl Into<String>) -> CliError {
    CliError::Schema {
        source_name: source.to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Reads `id,obs_time,death,treated,treat_time,z1..zp` (header mandatory;
/// `treat_time` empty for untreated subjects).
pub fn read_cohort<R: Read>(reader: R, source: &str) -> Result<Cohort, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| schema(source, 1, e.to_string()))?,
        None => return Err(schema(source, 1, "missing header")),
    };
    if header.len() < COHORT_HEADER.len()
        || header.iter().zip(COHORT_HEADER).any(|(a, b)| a != b)
    {
        return Err(schema(
            source,
            1,
            format!("header must start with {}", COHORT_HEADER.join(",")),
        ));
    }
    let width = header.len();
    let mut subjects = Vec::new();
    let mut ids = std::collections::HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            schema(source, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(schema(
                source,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let field = |i: usize| -> Result<f64, CliError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| schema(source, line, format!("{}: not a number: '{}'", &header[i], &rec[i])))
        };
        let id: i64 = rec[0]
            .parse()
            .map_err(|_| schema(source, line, format!("id: not an integer: '{}'", &rec[0])))?;
        if let Some(prev) = ids.insert(id, line) {
            return Err(schema(source, line, format!("duplicate id {id} (first on line {prev})")));
        }
        let obs_time = field(1)?;
        if !(obs_time.is_finite() && obs_time >= 0.0) {
            return Err(schema(source, line, "obs_time must be finite and >= 0"));
        }
        let death = parse_flag(&rec[2]).ok_or_else(|| schema(source, line, "death must be 0 or 1"))?;
        let treated =
            parse_flag(&rec[3]).ok_or_else(|| schema(source, line, "treated must be 0 or 1"))?;
        let covariates = (5..width).map(field).collect::<Result<Vec<_>, _>>()?;
        if covariates.iter().any(|z| !z.is_finite()) {
            return Err(schema(source, line, "covariates must be finite"));
        }
        let subject = if treated {
            if rec[4].is_empty() {
                return Err(schema(source, line, "treated subject needs treat_time"));
            }
            let t = field(4)?;
            if !(t.is_finite() && t >= 0.0) {
                return Err(schema(source, line, "treat_time must be finite and >= 0"));
            }
            if t >= obs_time {
                return Err(schema(source, line, "treat_time must be before obs_time"));
            }
            SubjectRecord::treated(id, obs_time, death, t, covariates)
        } else {
            if !rec[4].is_empty() {
                return Err(schema(source, line, "untreated subject must have empty treat_time"));
            }
            SubjectRecord::untreated(id, obs_time, death, covariates)
        };
        subjects.push(subject);
    }
    if subjects.is_empty() {
        return Err(schema(source, 2, "no data rows"));
    }
    validate_cohort(subjects).map_err(|e| schema(source, 0, e.to_string()))
}

pub fn read_cohort_file(path: &Path) -> Result<Cohort, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_cohort(file, &path.display().to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = io_err(path);
    let mut header: Vec<String> = COHORT_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((1..=cohort.p()).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(&err)?;
    for s in cohort.subjects() {
        let mut row = vec![
            s.id.to_string(),
            num(s.obs_time),
            (s.death as u8).to_string(),
            (s.treated as u8).to_string(),
            if s.treated { num(s.treat_time) } else { String::new() },
        ];
        row.extend(s.covariates.iter().map(|z| num(*z)));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Output grid: 0, every jump time and the requested times, sorted.
pub fn curve_grid(analysis: &Analysis, times: &[f64]) -> Vec<f64> {
    let tau1 = analysis.delta.tau1;
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(analysis.jump_grid())
        .chain(times.iter().copied())
        .filter(|t| *t >= 0.0 && *t <= tau1)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// One row of curve values: (t, S1, se, S0, se, delta, se).
pub fn curve_row(analysis: &Analysis, t: f64) -> Result<[f64; 7], CliError> {
    let mut row = [t, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (i, c) in [analysis.s1(), analysis.s0(), &analysis.delta].iter().enumerate() {
        row[1 + 2 * i] = c.eval(t).map_err(|e| CliError::Other(e.to_string()))?;
        row[2 + 2 * i] = c
            .standard_error(t)
            .map_err(|e| CliError::Other(e.to_string()))?
            .unwrap_or(f64::NAN);
    }
    Ok(row)
}

pub fn write_curves(path: &Path, analysis: &Analysis, times: &[f64]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = io_err(path);
    w.write_record(["t", "S1_hat", "S1_se", "S0_hat", "S0_se", "delta_hat", "delta_se"])
        .map_err(&err)?;
    for t in curve_grid(analysis, times) {
        let row = curve_row(analysis, t)?;
        w.write_record(row.iter().map(|x| num(*x))).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_matches(path: &Path, analysis: &Analysis) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = io_err(path);
    w.write_record(["treated_id", "control_id", "T_k", "log_psi_T", "log_psi_D"])
        .map_err(&err)?;
    for p in &analysis.matching.pairs {
        w.write_record([
            p.treated_id.to_string(),
            p.control_id.to_string(),
            num(p.match_time),
            p.log_psi_t.map(num).unwrap_or_else(|| "NA".into()),
            p.log_psi_d.map(num).unwrap_or_else(|| "NA".into()),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_mc_summary(path: &Path, summaries: &[McSummary]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = io_err(path);
    w.write_record(["Setting", "t", "Quantity", "Est", "Bias", "ESD", "ASE", "CP"])
        .map_err(&err)?;
    for s in summaries {
        for r in &s.rows {
            w.write_record([
                r.setting.clone(),
                num(r.t),
                r.quantity.label().to_string(),
                num(r.est),
                num(r.bias),
                r.esd.map(num).unwrap_or_else(|| "NA".into()),
                num(r.ase),
                num(r.cp),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_truth(path: &Path, truths: &[(String, TruthCurves)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = io_err(path);
    w.write_record(["Setting", "t", "S1", "S1_mc_se", "S0", "S0_mc_se", "delta", "delta_mc_se"])
        .map_err(&err)?;
    for (name, tr) in truths {
        for i in 0..tr.times.len() {
            w.write_record([
                name.clone(),
                num(tr.times[i]),
                num(tr.s1[i]),
                num(tr.s1_se[i]),
                num(tr.s0[i]),
                num(tr.s0_se[i]),
                num(tr.delta[i]),
                num(tr.delta_se[i]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(f).map_err(|e| CliError::Io(e.to_string()))
}
