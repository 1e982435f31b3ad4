use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{
    classify_diabetes, CovariateSchema, Gender, GlucoseSource, HourRecord, IcuUnit, PatientSeries,
    StaticCovariates,
};

/// Leading columns of the long-format cohort CSV, before the covariates.
pub const FIXED_COLUMNS: [&str; 18] = [
    "patient_id",
    "hour_index",
    "age_years",
    "gender",
    "icu_unit",
    "sofa_admission",
    "elixhauser",
    "mech_vent",
    "intubation",
    "vasopressor",
    "hba1c_ge_7",
    "first_glucose_mgdl",
    "icd9_codes",
    "admission_meds_diabetic",
    "history_mentions_diabetes",
    "died_within_90d",
    "glucose_mgdl",
    "glucose_source",
];

struct Row {
    line: usize,
    hour: HourRecord,
    statics: StaticCovariates,
    died: bool,
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> &'a str {
    rec.get(i).unwrap_or("").trim()
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, column: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| parse_err(line, format!("column '{column}': cannot parse '{raw}'")))
}

fn parse_opt_f64(line: usize, column: &str, raw: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = parse_num(line, column, raw)?;
    if !v.is_finite() {
        return Err(parse_err(
            line,
            format!("column '{column}': non-finite value"),
        ));
    }
    Ok(Some(v))
}

fn parse_flag(line: usize, column: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Ok(true),
        "0" | "false" | "f" | "no" | "n" => Ok(false),
        _ => Err(parse_err(
            line,
            format!("column '{column}': '{raw}' is not a flag"),
        )),
    }
}

fn parse_row(line: usize, rec: &csv::StringRecord, n_cov: usize) -> Result<(String, Row)> {
    let expected = FIXED_COLUMNS.len() + n_cov;
    if rec.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} columns, found {}", rec.len()),
        ));
    }
    let patient_id = field(rec, 0).to_string();
    if patient_id.is_empty() {
        return Err(parse_err(line, "empty patient_id"));
    }
    let hour_index: u32 = parse_num(line, "hour_index", field(rec, 1))?;

    let age_years: f64 = parse_num(line, "age_years", field(rec, 2))?;
    if !(age_years.is_finite() && age_years >= 0.0) {
        return Err(parse_err(
            line,
            format!("age_years must be >= 0, got {age_years}"),
        ));
    }
    let gender: Gender = field(rec, 3).parse().map_err(|e| parse_err(line, e))?;
    let icu_unit: IcuUnit = field(rec, 4).parse().map_err(|e| parse_err(line, e))?;
    let sofa_admission: u32 = parse_num(line, "sofa_admission", field(rec, 5))?;
    let elixhauser: i32 = parse_num(line, "elixhauser", field(rec, 6))?;
    let first_glucose_mgdl: f64 = parse_num(line, "first_glucose_mgdl", field(rec, 11))?;
    let icd9_codes = field(rec, 12)
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    let statics = StaticCovariates {
        age_years,
        gender,
        icu_unit,
        sofa_admission,
        elixhauser,
        mech_vent: parse_flag(line, "mech_vent", field(rec, 7))?,
        intubation: parse_flag(line, "intubation", field(rec, 8))?,
        vasopressor: parse_flag(line, "vasopressor", field(rec, 9))?,
        hba1c_ge_7: parse_flag(line, "hba1c_ge_7", field(rec, 10))?,
        first_glucose_mgdl,
        icd9_codes,
        admission_meds_diabetic: parse_flag(line, "admission_meds_diabetic", field(rec, 13))?,
        history_mentions_diabetes: parse_flag(line, "history_mentions_diabetes", field(rec, 14))?,
    };
    let died = match field(rec, 15) {
        "0" => false,
        "1" => true,
        other => {
            return Err(parse_err(
                line,
                format!("died_within_90d must be 0 or 1, got '{other}'"),
            ))
        }
    };

    let glucose_mgdl = parse_opt_f64(line, "glucose_mgdl", field(rec, 16))?;
    let mut glucose_source: GlucoseSource =
        field(rec, 17).parse().map_err(|e| parse_err(line, e))?;
    match glucose_mgdl {
        Some(g) if g <= 0.0 => {
            return Err(parse_err(
                line,
                format!("glucose_mgdl must be > 0, got {g}"),
            ))
        }
        Some(_) if glucose_source == GlucoseSource::None => {
            return Err(parse_err(
                line,
                "glucose_mgdl present without glucose_source",
            ))
        }
        None => glucose_source = GlucoseSource::None,
        _ => {}
    }

    let covariates = (0..n_cov)
        .map(|j| parse_opt_f64(line, "covariate", field(rec, FIXED_COLUMNS.len() + j)))
        .collect::<Result<Vec<_>>>()?;

    Ok((
        patient_id,
        Row {
            line,
            hour: HourRecord {
                hour_index,
                covariates,
                glucose_mgdl,
                glucose_source,
            },
            statics,
            died,
        },
    ))
}

fn check_header(header: &csv::StringRecord, schema: &CovariateSchema) -> Result<()> {
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    let want: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect();
    if got != want {
        let first_diff = got
            .iter()
            .zip(&want)
            .position(|(a, b)| a != b)
            .unwrap_or(got.len().min(want.len()));
        return Err(parse_err(
            1,
            format!(
                "header does not match covariate schema at column {}: expected '{}', found '{}'",
                first_diff + 1,
                want.get(first_diff).unwrap_or(&"<end>"),
                got.get(first_diff).unwrap_or(&"<end>"),
            ),
        ));
    }
    Ok(())
}

/// Reads the long-format cohort CSV into one series per patient, sorted by
/// `patient_id`, with hour gaps materialized as all-missing records.
pub fn parse_cohort<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Vec<PatientSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?, schema)?;

    let mut grouped: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let (id, row) = parse_row(line, &rec, schema.len())?;
        grouped.entry(id).or_default().push(row);
    }

    grouped
        .into_iter()
        .map(|(patient_id, rows)| assemble(patient_id, rows, schema.len()))
        .collect()
}

fn assemble(patient_id: String, mut rows: Vec<Row>, n_cov: usize) -> Result<PatientSeries> {
    let integrity = |message: String| Error::Integrity {
        patient_id: patient_id.clone(),
        message,
    };
    rows.sort_by_key(|r| r.hour.hour_index);
    for pair in rows.windows(2) {
        if pair[0].hour.hour_index == pair[1].hour.hour_index {
            return Err(integrity(format!(
                "duplicate hour_index {} (lines {} and {})",
                pair[0].hour.hour_index, pair[0].line, pair[1].line
            )));
        }
    }
    let first = &rows[0];
    for r in &rows[1..] {
        if r.statics != first.statics || r.died != first.died {
            return Err(integrity(format!(
                "static covariates or outcome differ between lines {} and {}",
                first.line, r.line
            )));
        }
    }
    let statics = first.statics.clone();
    let died = first.died;
    let max_hour = rows.last().map(|r| r.hour.hour_index).unwrap_or(0);
    if max_hour == 0 {
        return Err(integrity(
            "a trajectory needs at least 2 hourly records".into(),
        ));
    }

    let mut hours = Vec::with_capacity(max_hour as usize + 1);
    let mut it = rows.into_iter().peekable();
    for h in 0..=max_hour {
        match it.next_if(|r| r.hour.hour_index == h) {
            Some(r) => hours.push(r.hour),
            None => hours.push(HourRecord::missing(h, n_cov)),
        }
    }

    let diabetic = classify_diabetes(&statics);
    Ok(PatientSeries {
        patient_id,
        hours,
        statics,
        alive_at_90d: !died,
        diabetic,
    })
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes series back in the long-format schema accepted by [`parse_cohort`].
pub fn write_cohort<W: Write>(
    writer: W,
    series: &[PatientSeries],
    schema: &CovariateSchema,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect();
    wtr.write_record(&header)?;
    for s in series {
        let st = &s.statics;
        let fixed_statics = [
            st.age_years.to_string(),
            st.gender.as_str().to_string(),
            st.icu_unit.as_str().to_string(),
            st.sofa_admission.to_string(),
            st.elixhauser.to_string(),
            flag(st.mech_vent).to_string(),
            flag(st.intubation).to_string(),
            flag(st.vasopressor).to_string(),
            flag(st.hba1c_ge_7).to_string(),
            st.first_glucose_mgdl.to_string(),
            st.icd9_codes.join(";"),
            flag(st.admission_meds_diabetic).to_string(),
            flag(st.history_mentions_diabetes).to_string(),
            flag(s.died()).to_string(),
        ];
        for h in &s.hours {
            let mut record: Vec<String> = Vec::with_capacity(header.len());
            record.push(s.patient_id.clone());
            record.push(h.hour_index.to_string());
            record.extend(fixed_statics.iter().cloned());
            record.push(opt(h.glucose_mgdl));
            record.push(h.glucose_source.as_str().to_string());
            record.extend(h.covariates.iter().map(|c| opt(*c)));
            wtr.write_record(&record)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<cohort csv>", e))?;
    Ok(())
}
