use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CovariateSchema, PatientSeries};

/// Fills every missing covariate cell: linear interpolation between the
/// nearest observed neighbours, constant extension before the first and
/// after the last observation.
pub fn impute_series(mut series: PatientSeries, schema: &CovariateSchema) -> Result<PatientSeries> {
    let n_cov = series
        .hours
        .first()
        .map(|h| h.covariates.len())
        .unwrap_or(0);
    for j in 0..n_cov {
        let observed: Vec<(usize, f64)> = series
            .hours
            .iter()
            .enumerate()
            .filter_map(|(t, h)| h.covariates[j].map(|v| (t, v)))
            .collect();
        let (Some(&(first_t, first_v)), Some(&(last_t, last_v))) =
            (observed.first(), observed.last())
        else {
            return Err(Error::Imputation {
                patient_id: series.patient_id.clone(),
                covariate: schema
                    .names()
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("#{j}")),
            });
        };
        for h in &mut series.hours[..first_t] {
            h.covariates[j] = Some(first_v);
        }
        for h in &mut series.hours[last_t + 1..] {
            h.covariates[j] = Some(last_v);
        }
        for pair in observed.windows(2) {
            let (t0, v0) = pair[0];
            let (t1, v1) = pair[1];
            let span = (t1 - t0) as f64;
            for t in t0 + 1..t1 {
                let w = (t - t0) as f64 / span;
                series.hours[t].covariates[j] = Some(v0 + (v1 - v0) * w);
            }
        }
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPatient {
    pub patient_id: String,
    pub reason: String,
}

/// Imputes every series in parallel, dropping (and reporting) patients with a
/// covariate that is never observed. Output order follows input order.
pub fn impute_cohort(
    series_list: Vec<PatientSeries>,
    schema: &CovariateSchema,
) -> (Vec<PatientSeries>, Vec<DroppedPatient>) {
    let results: Vec<(String, Result<PatientSeries>)> = series_list
        .into_par_iter()
        .map(|s| (s.patient_id.clone(), impute_series(s, schema)))
        .collect();
    let mut kept = Vec::with_capacity(results.len());
    let mut dropped = Vec::new();
    for (patient_id, r) in results {
        match r {
            Ok(s) => kept.push(s),
            Err(e) => {
                log::warn!("dropping patient {patient_id}: {e}");
                dropped.push(DroppedPatient {
                    patient_id,
                    reason: e.to_string(),
                });
            }
        }
    }
    (kept, dropped)
}
