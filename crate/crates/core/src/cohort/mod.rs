//! Patient time series: ingestion, cohort filtering, imputation,
//! normalization and the train/test split.

mod features;
mod filter;
mod impute;
mod normalize;
mod parse;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use features::{FeatureLayout, StaticFeature};
pub use filter::{filter_cohort, mask_non_blood_glucose, FilterCriteria, FilterSummary};
pub use impute::{impute_cohort, impute_series, DroppedPatient};
pub use normalize::{apply_normalization, fit_normalization, NormalizationSpec, NormalizedSeries};
pub use parse::{parse_cohort, write_cohort, FIXED_COLUMNS};
pub use split::{split_patients, Split, SplitSide};

/// Ordered names of the per-hour covariates, as declared in the pipeline
/// config and validated against the CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateSchema(pub Vec<String>);

impl CovariateSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self(names.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    /// Vitals, labs and GCS subscores collected hourly.
    pub fn default_icu() -> Self {
        Self::new([
            "systolic_bp",
            "diastolic_bp",
            "resp_rate",
            "temperature",
            "heart_rate",
            "spo2",
            "gcs_eyes",
            "gcs_verbal",
            "gcs_motor",
            "po2",
            "pco2",
            "ph",
            "total_co2",
            "anion_gap",
            "albumin",
            "bicarbonate",
            "calcium",
            "sodium",
            "potassium",
            "chloride",
            "lactate",
            "creatinine",
            "bun",
            "ptt",
            "inr",
            "co2",
            "total_bilirubin",
            "hemoglobin",
            "hematocrit",
            "wbc",
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlucoseSource {
    Arterial,
    Venous,
    Other,
    None,
}

impl GlucoseSource {
    pub fn is_blood(self) -> bool {
        matches!(self, GlucoseSource::Arterial | GlucoseSource::Venous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GlucoseSource::Arterial => "arterial",
            GlucoseSource::Venous => "venous",
            GlucoseSource::Other => "other",
            GlucoseSource::None => "",
        }
    }
}

impl FromStr for GlucoseSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arterial" => Ok(GlucoseSource::Arterial),
            "venous" => Ok(GlucoseSource::Venous),
            "other" => Ok(GlucoseSource::Other),
            "" | "none" => Ok(GlucoseSource::None),
            other => Err(format!("unknown glucose source '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
            Gender::Unknown => "U",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "u" | "unknown" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender '{other}'")),
        }
    }
}

/// First-stay ICU care unit, using the MIMIC-III care unit names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IcuUnit {
    Micu,
    Sicu,
    Ccu,
    Csru,
    Tsicu,
    Other,
}

impl IcuUnit {
    pub const ALL: [IcuUnit; 6] = [
        IcuUnit::Micu,
        IcuUnit::Sicu,
        IcuUnit::Ccu,
        IcuUnit::Csru,
        IcuUnit::Tsicu,
        IcuUnit::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IcuUnit::Micu => "MICU",
            IcuUnit::Sicu => "SICU",
            IcuUnit::Ccu => "CCU",
            IcuUnit::Csru => "CSRU",
            IcuUnit::Tsicu => "TSICU",
            IcuUnit::Other => "OTHER",
        }
    }
}

impl fmt::Display for IcuUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IcuUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MICU" => Ok(IcuUnit::Micu),
            "SICU" => Ok(IcuUnit::Sicu),
            "CCU" => Ok(IcuUnit::Ccu),
            "CSRU" => Ok(IcuUnit::Csru),
            "TSICU" => Ok(IcuUnit::Tsicu),
            "OTHER" => Ok(IcuUnit::Other),
            other => Err(format!("unknown ICU unit '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticCovariates {
    pub age_years: f64,
    pub gender: Gender,
    pub icu_unit: IcuUnit,
    pub sofa_admission: u32,
    pub elixhauser: i32,
    pub mech_vent: bool,
    pub intubation: bool,
    pub vasopressor: bool,
    pub hba1c_ge_7: bool,
    pub first_glucose_mgdl: f64,
    pub icd9_codes: Vec<String>,
    pub admission_meds_diabetic: bool,
    pub history_mentions_diabetes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour_index: u32,
    pub covariates: Vec<Option<f64>>,
    pub glucose_mgdl: Option<f64>,
    pub glucose_source: GlucoseSource,
}

impl HourRecord {
    pub fn missing(hour_index: u32, n_covariates: usize) -> Self {
        Self {
            hour_index,
            covariates: vec![None; n_covariates],
            glucose_mgdl: None,
            glucose_source: GlucoseSource::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeries {
    pub patient_id: String,
    pub hours: Vec<HourRecord>,
    pub statics: StaticCovariates,
    /// True when the patient was alive 90 days after admission.
    pub alive_at_90d: bool,
    pub diabetic: bool,
}

impl PatientSeries {
    pub fn died(&self) -> bool {
        !self.alive_at_90d
    }

    pub fn missing_fraction(&self) -> f64 {
        let total: usize = self.hours.iter().map(|h| h.covariates.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let missing = self
            .hours
            .iter()
            .flat_map(|h| h.covariates.iter())
            .filter(|c| c.is_none())
            .count();
        missing as f64 / total as f64
    }
}

/// Diabetic if any source fires: ICD-9 249.*/250.*, HbA1c >= 7.0%,
/// diabetic admission medications, or a diabetes mention in the history.
pub fn classify_diabetes(statics: &StaticCovariates) -> bool {
    let coded = statics.icd9_codes.iter().any(|code| {
        let code = code.trim();
        code.starts_with("249") || code.starts_with("250")
    });
    coded
        || statics.hba1c_ge_7
        || statics.admission_meds_diabetic
        || statics.history_mentions_diabetes
}


#[cfg(test)]
mod tests {
    use super::test_support::statics;
    use super::*;

    #[test]
    fn icd9_250_is_diabetic() {
        let mut s = statics();
        s.icd9_codes = vec!["250.00".into()];
        assert!(classify_diabetes(&s));
        s.icd9_codes = vec!["249.1".into()];
        assert!(classify_diabetes(&s));
    }

    #[test]
    fn no_source_means_non_diabetic() {
        let mut s = statics();
        s.icd9_codes = vec!["038.9".into(), "428.0".into(), "V58.67".into()];
        assert!(!classify_diabetes(&s));
    }

    #[test]
    fn hba1c_alone_is_diabetic() {
        let mut s = statics();
        s.hba1c_ge_7 = true;
        assert!(classify_diabetes(&s));
    }

    #[test]
    fn meds_or_history_alone_is_diabetic() {
        let mut s = statics();
        s.admission_meds_diabetic = true;
        assert!(classify_diabetes(&s));
        let mut s = statics();
        s.history_mentions_diabetes = true;
        assert!(classify_diabetes(&s));
    }
}
