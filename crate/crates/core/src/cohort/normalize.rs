use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{FeatureLayout, PatientSeries};

/// Per-feature `(min, max)` from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub features: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationSpec {
    /// Maps `x` to `(x - min) / (max - min)` clamped to `[0, 1]`; degenerate
    /// ranges map to 0.
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[j], self.max[j]);
        if hi <= lo {
            return 0.0;
        }
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.scale(j, x))
            .collect()
    }
}

/// Model-ready view of one patient: normalized hourly state vectors plus the
/// glucose channel and outcome needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub patient_id: String,
    pub died: bool,
    pub states: Vec<Vec<f64>>,
    pub glucose_mgdl: Vec<Option<f64>>,
}

pub fn fit_normalization(training: &[PatientSeries], layout: &FeatureLayout) -> NormalizationSpec {
    let features = layout.names();
    let mut min = vec![f64::INFINITY; features.len()];
    let mut max = vec![f64::NEG_INFINITY; features.len()];
    for s in training {
        for t in 0..s.hours.len() {
            for (j, v) in layout.raw_row(s, t).into_iter().enumerate() {
                if let Some(v) = v {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
    }
    for j in 0..features.len() {
        if !min[j].is_finite() || !max[j].is_finite() {
            min[j] = 0.0;
            max[j] = 0.0;
        }
    }
    NormalizationSpec { features, min, max }
}

pub fn apply_normalization(
    series: &PatientSeries,
    layout: &FeatureLayout,
    spec: &NormalizationSpec,
) -> Result<NormalizedSeries> {
    if spec.features.len() != layout.dim() {
        return Err(Error::arg(format!(
            "normalization has {} features, layout has {}",
            spec.features.len(),
            layout.dim()
        )));
    }
    let states = (0..series.hours.len())
        .map(|t| {
            layout
                .raw_row(series, t)
                .into_iter()
                .enumerate()
                .map(|(j, v)| {
                    v.map(|x| spec.scale(j, x)).ok_or_else(|| {
                        Error::arg(format!(
                            "patient {} hour {t}: '{}' is missing; impute before normalizing",
                            series.patient_id, spec.features[j]
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalizedSeries {
        patient_id: series.patient_id.clone(),
        died: series.died(),
        states,
        glucose_mgdl: series.hours.iter().map(|h| h.glucose_mgdl).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::series;
    use super::super::CovariateSchema;
    use super::*;
    use proptest::prelude::*;

    fn layout() -> FeatureLayout {
        FeatureLayout {
            covariates: CovariateSchema::new(["x", "c"]),
            statics: vec![],
        }
    }

    fn train() -> Vec<PatientSeries> {
        vec![series(
            "t",
            &[&[Some(50.0), Some(7.0)], &[Some(150.0), Some(7.0)]],
        )]
    }

    #[test]
    fn affine_map_constant_and_clamp() {
        let spec = fit_normalization(&train(), &layout());
        assert_eq!(spec.min, vec![50.0, 7.0]);
        assert_eq!(spec.max, vec![150.0, 7.0]);
        assert_eq!(spec.scale(0, 100.0), 0.5);
        assert_eq!(spec.scale(1, 123.0), 0.0);
        assert_eq!(spec.scale(0, 200.0), 1.0);
        assert_eq!(spec.scale(0, -3.0), 0.0);
    }

    #[test]
    fn statics_are_appended_after_covariates() {
        let layout = FeatureLayout {
            covariates: CovariateSchema::new(["x", "c"]),
            statics: vec![
                super::super::StaticFeature::AgeYears,
                super::super::StaticFeature::IcuUnit,
            ],
        };
        assert_eq!(layout.dim(), 2 + 1 + 6);
        let row = layout.raw_row(&train()[0], 0);
        assert_eq!(row[2], Some(40.0));
        assert_eq!(row[3], Some(1.0));
        assert_eq!(row[4..].iter().map(|v| v.unwrap()).sum::<f64>(), 0.0);
    }

    #[test]
    fn missing_cells_are_rejected() {
        let spec = fit_normalization(&train(), &layout());
        let s = series("q", &[&[None, Some(1.0)], &[Some(1.0), Some(2.0)]]);
        assert!(apply_normalization(&s, &layout(), &spec).is_err());
    }

    proptest! {
        #[test]
        fn normalized_cells_stay_in_unit_interval(
            train_vals in proptest::collection::vec(-1e3f64..1e3, 2..20),
            test_vals in proptest::collection::vec(-1e4f64..1e4, 2..20),
        ) {
            let rows: Vec<Vec<Option<f64>>> = train_vals.iter().map(|&v| vec![Some(v), Some(1.0)]).collect();
            let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
            let spec = fit_normalization(&[series("t", &refs)], &layout());
            let rows: Vec<Vec<Option<f64>>> = test_vals.iter().map(|&v| vec![Some(v), Some(v)]).collect();
            let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
            let out = apply_normalization(&series("q", &refs), &layout(), &spec).unwrap();
            for row in &out.states {
                for &v in row {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
