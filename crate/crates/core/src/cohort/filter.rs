use serde::{Deserialize, Serialize};

use super::{GlucoseSource, PatientSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterCriteria {
    pub min_age_years: f64,
    pub min_sofa: u32,
    /// Patients with a strictly larger fraction of missing covariate cells are excluded.
    pub max_missing_fraction: f64,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        Self {
            min_age_years: 18.0,
            min_sofa: 2,
            max_missing_fraction: 0.10,
        }
    }
}

/// Exclusion counts. Each excluded patient is counted once, under the first
/// criterion it fails in the order age, SOFA, missingness.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub excluded_age: usize,
    pub excluded_sofa: usize,
    pub excluded_missing: usize,
    pub retained: usize,
    /// Glucose readings dropped because they were not arterial or venous.
    pub masked_glucose_readings: usize,
}

/// Clears glucose readings whose source is neither arterial nor venous.
/// Returns the number of readings cleared.
pub fn mask_non_blood_glucose(series: &mut PatientSeries) -> usize {
    let mut masked = 0;
    for h in &mut series.hours {
        if h.glucose_mgdl.is_some() && !h.glucose_source.is_blood() {
            h.glucose_mgdl = None;
            h.glucose_source = GlucoseSource::None;
            masked += 1;
        } else if h.glucose_mgdl.is_none() {
            h.glucose_source = GlucoseSource::None;
        }
    }
    masked
}

pub fn filter_cohort(
    series_list: Vec<PatientSeries>,
    criteria: &FilterCriteria,
) -> (Vec<PatientSeries>, FilterSummary) {
    let mut summary = FilterSummary {
        input: series_list.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(series_list.len());
    for mut s in series_list {
        if s.statics.age_years < criteria.min_age_years {
            summary.excluded_age += 1;
        } else if s.statics.sofa_admission < criteria.min_sofa {
            summary.excluded_sofa += 1;
        } else if s.missing_fraction() > criteria.max_missing_fraction {
            summary.excluded_missing += 1;
        } else {
            summary.masked_glucose_readings += mask_non_blood_glucose(&mut s);
            kept.push(s);
        }
    }
    summary.retained = kept.len();
    (kept, summary)
}
