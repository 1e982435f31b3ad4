use serde::{Deserialize, Serialize};

use super::{CovariateSchema, Gender, IcuUnit, PatientSeries};

/// Patient-level covariate appended to every hourly state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticFeature {
    AgeYears,
    Gender,
    /// One-hot over [`IcuUnit::ALL`].
    IcuUnit,
    SofaAdmission,
    Elixhauser,
    MechVent,
    Intubation,
    Vasopressor,
    Hba1cGe7,
    FirstGlucoseMgdl,
    Diabetic,
}

impl StaticFeature {
    pub const ALL: [StaticFeature; 11] = [
        StaticFeature::AgeYears,
        StaticFeature::Gender,
        StaticFeature::IcuUnit,
        StaticFeature::SofaAdmission,
        StaticFeature::Elixhauser,
        StaticFeature::MechVent,
        StaticFeature::Intubation,
        StaticFeature::Vasopressor,
        StaticFeature::Hba1cGe7,
        StaticFeature::FirstGlucoseMgdl,
        StaticFeature::Diabetic,
    ];

    fn names(self) -> Vec<String> {
        let single = |s: &str| vec![s.to_string()];
        match self {
            StaticFeature::AgeYears => single("age_years"),
            StaticFeature::Gender => single("gender"),
            StaticFeature::IcuUnit => IcuUnit::ALL
                .iter()
                .map(|u| format!("icu_unit_{}", u.as_str().to_ascii_lowercase()))
                .collect(),
            StaticFeature::SofaAdmission => single("sofa_admission"),
            StaticFeature::Elixhauser => single("elixhauser"),
            StaticFeature::MechVent => single("mech_vent"),
            StaticFeature::Intubation => single("intubation"),
            StaticFeature::Vasopressor => single("vasopressor"),
            StaticFeature::Hba1cGe7 => single("hba1c_ge_7"),
            StaticFeature::FirstGlucoseMgdl => single("first_glucose_mgdl"),
            StaticFeature::Diabetic => single("diabetic"),
        }
    }

    fn push_values(self, s: &PatientSeries, out: &mut Vec<f64>) {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let st = &s.statics;
        match self {
            StaticFeature::AgeYears => out.push(st.age_years),
            StaticFeature::Gender => out.push(match st.gender {
                Gender::Female => 0.0,
                Gender::Male => 1.0,
                Gender::Unknown => 0.5,
            }),
            StaticFeature::IcuUnit => out.extend(IcuUnit::ALL.iter().map(|&u| b(u == st.icu_unit))),
            StaticFeature::SofaAdmission => out.push(f64::from(st.sofa_admission)),
            StaticFeature::Elixhauser => out.push(f64::from(st.elixhauser)),
            StaticFeature::MechVent => out.push(b(st.mech_vent)),
            StaticFeature::Intubation => out.push(b(st.intubation)),
            StaticFeature::Vasopressor => out.push(b(st.vasopressor)),
            StaticFeature::Hba1cGe7 => out.push(b(st.hba1c_ge_7)),
            StaticFeature::FirstGlucoseMgdl => out.push(st.first_glucose_mgdl),
            StaticFeature::Diabetic => out.push(b(s.diabetic)),
        }
    }
}

/// Column layout of the per-hour state vector: hourly covariates followed
/// by the selected patient-level features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub covariates: CovariateSchema,
    pub statics: Vec<StaticFeature>,
}

impl FeatureLayout {
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.covariates.names().to_vec();
        for f in &self.statics {
            names.extend(f.names());
        }
        names
    }

    pub fn dim(&self) -> usize {
        self.names().len()
    }

    /// Raw (unnormalized) state vector of hour `t`; missing covariates are `None`.
    pub fn raw_row(&self, series: &PatientSeries, t: usize) -> Vec<Option<f64>> {
        let mut statics = Vec::new();
        for f in &self.statics {
            f.push_values(series, &mut statics);
        }
        series.hours[t]
            .covariates
            .iter()
            .copied()
            .chain(statics.into_iter().map(Some))
            .collect()
    }
}
