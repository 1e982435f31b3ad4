//! CSV artifacts passed between pipeline stages: per-hour state tables,
//! cluster assignments, trajectories and solved policies.

use std::io::{Read, Write};

use crate::cohort::SplitSide;
use crate::error::{Error, Result};
use crate::mdp::{Step, Trajectory};
use crate::scalar::Scalar;
use crate::solver::{Policy, QTable};

const STATE_ID_COLUMNS: [&str; 5] = ["patient_id", "hour_index", "split", "died", "glucose_mgdl"];

/// Hourly feature vectors of one patient, with the fields later stages need.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePatient<T> {
    pub patient_id: String,
    pub split: SplitSide,
    pub died: bool,
    pub hour_index: Vec<u32>,
    pub glucose_mgdl: Vec<Option<f64>>,
    pub rows: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTable<T> {
    pub features: Vec<String>,
    pub patients: Vec<StatePatient<T>>,
}

impl<T: Scalar> StateTable<T> {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn n_rows(&self) -> usize {
        self.patients.iter().map(|p| p.rows.len()).sum()
    }

    /// Rows of the given split, in patient then hour order.
    pub fn rows_of(&self, side: SplitSide) -> Vec<&[T]> {
        self.patients
            .iter()
            .filter(|p| p.split == side)
            .flat_map(|p| p.rows.iter().map(Vec::as_slice))
            .collect()
    }

    /// Same patients and metadata with every row replaced by `f(row)`.
    pub fn map_rows<F>(&self, features: Vec<String>, f: F) -> Result<StateTable<T>>
    where
        F: Fn(&[T]) -> Result<Vec<T>>,
    {
        let patients = self
            .patients
            .iter()
            .map(|p| {
                Ok(StatePatient {
                    rows: p.rows.iter().map(|r| f(r)).collect::<Result<_>>()?,
                    ..p.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(StateTable { features, patients })
    }
}

fn parse_split(s: &str, line: usize) -> Result<SplitSide> {
    match s {
        "train" => Ok(SplitSide::Train),
        "test" => Ok(SplitSide::Test),
        other => Err(Error::Parse {
            line,
            message: format!("split must be train or test, got {other:?}"),
        }),
    }
}

fn parse_flag(s: &str, line: usize, column: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            message: format!("{column} must be 0 or 1, got {other:?}"),
        }),
    }
}

fn parse_num<N: std::str::FromStr>(s: &str, line: usize, column: &str) -> Result<N> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{column}: cannot parse {s:?}"),
    })
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_state_table<T: Scalar, W: Write>(table: &StateTable<T>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let header: Vec<&str> = STATE_ID_COLUMNS
        .iter()
        .copied()
        .chain(table.features.iter().map(String::as_str))
        .collect();
    wtr.write_record(&header)?;
    for p in &table.patients {
        for (t, row) in p.rows.iter().enumerate() {
            let mut rec = vec![
                p.patient_id.clone(),
                p.hour_index[t].to_string(),
                p.split.as_str().to_string(),
                flag(p.died).to_string(),
                p.glucose_mgdl[t].map(|g| g.to_string()).unwrap_or_default(),
            ];
            rec.extend(row.iter().map(|x| x.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<state table>", e))?;
    Ok(())
}

/// Rows of one patient must be contiguous, as written by [`write_state_table`].
pub fn read_state_table<T: Scalar, R: Read>(input: R) -> Result<StateTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let head: Vec<&str> = header.iter().take(STATE_ID_COLUMNS.len()).collect();
    if head != STATE_ID_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "state table header must start with {}",
                STATE_ID_COLUMNS.join(",")
            ),
        });
    }
    let features: Vec<String> = header
        .iter()
        .skip(STATE_ID_COLUMNS.len())
        .map(String::from)
        .collect();
    let mut patients: Vec<StatePatient<T>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let id = &rec[0];
        let hour: u32 = parse_num(&rec[1], line, "hour_index")?;
        let split = parse_split(&rec[2], line)?;
        let died = parse_flag(&rec[3], line, "died")?;
        let glucose = if rec[4].is_empty() {
            None
        } else {
            Some(parse_num::<f64>(&rec[4], line, "glucose_mgdl")?)
        };
        let row = rec
            .iter()
            .skip(STATE_ID_COLUMNS.len())
            .zip(&features)
            .map(|(v, name)| parse_num::<T>(v, line, name))
            .collect::<Result<Vec<T>>>()?;

        let same = patients.last().is_some_and(|p| p.patient_id == id);
        if !same {
            if !seen.insert(id.to_string()) {
                return Err(Error::Parse {
                    line,
                    message: format!("rows of patient {id} are not contiguous"),
                });
            }
            patients.push(StatePatient {
                patient_id: id.to_string(),
                split,
                died,
                hour_index: Vec::new(),
                glucose_mgdl: Vec::new(),
                rows: Vec::new(),
            });
        }
        let p = patients.last_mut().expect("pushed above");
        if p.split != split || p.died != died {
            return Err(Error::Integrity {
                patient_id: id.to_string(),
                message: "split or outcome changes between rows".into(),
            });
        }
        p.hour_index.push(hour);
        p.glucose_mgdl.push(glucose);
        p.rows.push(row);
    }
    Ok(StateTable { features, patients })
}

pub fn write_assignments<W: Write>(
    patients: &[(String, Vec<u32>, Vec<usize>)],
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["patient_id", "hour_index", "state_id"])?;
    for (id, hours, states) in patients {
        for (h, s) in hours.iter().zip(states) {
            wtr.write_record([id.as_str(), &h.to_string(), &s.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<assignments>", e))?;
    Ok(())
}

/// `(patient_id, hour_index, state_id)` rows in file order.
pub fn read_assignments<R: Read>(input: R) -> Result<Vec<(String, u32, usize)>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["patient_id", "hour_index", "state_id"] {
        return Err(Error::Parse {
            line: 1,
            message: "assignments header must be patient_id,hour_index,state_id".into(),
        });
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let line = i + 2;
            Ok((
                rec[0].to_string(),
                parse_num(&rec[1], line, "hour_index")?,
                parse_num(&rec[2], line, "state_id")?,
            ))
        })
        .collect()
}

pub fn write_trajectories<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "patient_id",
        "split",
        "died",
        "step",
        "state",
        "action",
        "next_state",
    ])?;
    for tr in trajectories {
        for (t, st) in tr.steps.iter().enumerate() {
            wtr.write_record([
                tr.patient_id.as_str(),
                tr.split.as_str(),
                flag(tr.died),
                &t.to_string(),
                &st.state.to_string(),
                &st.action.to_string(),
                &st.next.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<trajectories>", e))?;
    Ok(())
}

pub fn read_trajectories<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 7 {
            return Err(Error::Parse {
                line,
                message: format!("expected 7 fields, found {}", rec.len()),
            });
        }
        let split = parse_split(&rec[1], line)?;
        let died = parse_flag(&rec[2], line, "died")?;
        let step: usize = parse_num(&rec[3], line, "step")?;
        let st = Step {
            state: parse_num(&rec[4], line, "state")?,
            action: parse_num(&rec[5], line, "action")?,
            next: parse_num(&rec[6], line, "next_state")?,
        };
        match out.last_mut() {
            Some(tr) if tr.patient_id == rec[0] && step == tr.steps.len() => tr.steps.push(st),
            _ if step == 0 => out.push(Trajectory {
                patient_id: rec[0].to_string(),
                split,
                died,
                steps: vec![st],
            }),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("step {step} of patient {} is out of sequence", &rec[0]),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_policy<T: Scalar, W: Write>(policy: &Policy, values: &[T], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["state_id", "policy_action", "V"])?;
    for (s, v) in values.iter().enumerate() {
        let a = policy.action(s).map(|a| a.to_string()).unwrap_or_default();
        wtr.write_record([s.to_string(), a, v.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<policy>", e))?;
    Ok(())
}

pub fn read_policy<T: Scalar, R: Read>(input: R) -> Result<(Policy, Vec<T>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut actions = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let s: usize = parse_num(&rec[0], line, "state_id")?;
        if s != actions.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected state {}, found {s}", actions.len()),
            });
        }
        actions.push(if rec[1].is_empty() {
            None
        } else {
            Some(parse_num(&rec[1], line, "policy_action")?)
        });
        values.push(parse_num(&rec[2], line, "V")?);
    }
    Ok((Policy(actions), values))
}

pub fn write_q<T: Scalar, W: Write>(q: &QTable<T>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["state_id", "action", "Q"])?;
    for (s, row) in q.iter().enumerate() {
        for (a, v) in row {
            wtr.write_record([s.to_string(), a.to_string(), v.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<q table>", e))?;
    Ok(())
}
