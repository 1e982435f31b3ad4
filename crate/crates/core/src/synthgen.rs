//! Synthetic cohorts drawn from a known latent MDP, used as the oracle for
//! the whole pipeline.
//!
//! Each patient follows a latent severity chain. At hour `t` the behavioural
//! policy picks a glucose bin, a glucose value is drawn uniformly inside that
//! bin, and covariates are emitted around the latent state's mean. From hour
//! 1 on the patient may die (hazard of the current state) or be discharged
//! alive; otherwise the next latent state follows the transition tensor.
//! Patients still in the ICU at the horizon are labelled alive.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    classify_diabetes, CovariateSchema, Gender, GlucoseSource, HourRecord, IcuUnit, PatientSeries,
    StaticCovariates,
};
use crate::error::{Error, Result};
use crate::mdp::{ActionSpace, TERMINAL_REWARD};
use crate::rng::{self, StageRng};
use crate::solver::{policy_iteration, ActionModel, Outcome, Policy, TabularMdp};

const STOCHASTIC_TOL: f64 = 1e-9;
/// Policy-evaluation threshold for the exact ground-truth solve.
pub const GROUND_TRUTH_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_latent_states: usize,
    pub n_actions: usize,
    pub horizon_hours: usize,
    pub gamma: f64,
    /// `[state][action][next_state]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub death_hazard: Vec<f64>,
    /// Per-hour probability of an alive discharge, applied after the hazard.
    pub discharge: Vec<f64>,
    pub initial: Vec<f64>,
    /// `[state][covariate]` on a 0..1 scale, mapped onto `covariate_ranges`.
    pub emission_means: Vec<Vec<f64>>,
    /// Standard deviation of covariate noise on the same 0..1 scale.
    pub noise_scale: f64,
    pub covariates: CovariateSchema,
    pub covariate_ranges: Vec<(f64, f64)>,
    /// `[state][action]`
    pub behavior: Vec<Vec<f64>>,
    pub action_space: ActionSpace,
    pub missing_rate: f64,
    pub other_source_rate: f64,
    pub seed: u64,
}

/// Exact latent MDP behind a synthetic cohort, with its solution and the
/// latent state of every generated patient-hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mdp: TabularMdp<f64>,
    pub optimal_policy: Policy,
    pub optimal_values: Vec<f64>,
    pub latent_paths: Vec<LatentPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub patient_id: String,
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub series: Vec<PatientSeries>,
    pub ground_truth: GroundTruth,
}

fn check_distribution(what: &str, p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::arg(format!(
            "{what} has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::arg(format!("{what} has entries outside [0, 1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::arg(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

fn covariate_range(name: &str) -> (f64, f64) {
    match name {
        "systolic_bp" => (70.0, 190.0),
        "diastolic_bp" => (35.0, 110.0),
        "resp_rate" => (8.0, 40.0),
        "temperature" => (35.0, 40.5),
        "heart_rate" => (45.0, 150.0),
        "spo2" => (82.0, 100.0),
        "gcs_eyes" => (1.0, 4.0),
        "gcs_verbal" => (1.0, 5.0),
        "gcs_motor" => (1.0, 6.0),
        "po2" => (50.0, 300.0),
        "pco2" => (25.0, 70.0),
        "ph" => (7.1, 7.6),
        "total_co2" => (12.0, 36.0),
        "anion_gap" => (6.0, 28.0),
        "albumin" => (1.5, 5.0),
        "bicarbonate" => (12.0, 34.0),
        "calcium" => (6.5, 11.0),
        "sodium" => (125.0, 152.0),
        "potassium" => (2.8, 6.2),
        "chloride" => (90.0, 120.0),
        "lactate" => (0.5, 10.0),
        "creatinine" => (0.4, 6.0),
        "bun" => (5.0, 110.0),
        "ptt" => (20.0, 90.0),
        "inr" => (0.8, 4.0),
        "co2" => (15.0, 35.0),
        "total_bilirubin" => (0.2, 12.0),
        "hemoglobin" => (6.0, 16.0),
        "hematocrit" => (18.0, 48.0),
        "wbc" => (1.0, 30.0),
        _ => (0.0, 1.0),
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (l, a) = (self.n_latent_states, self.n_actions);
        if self.n_patients == 0 || l == 0 || a == 0 {
            return Err(Error::arg(
                "n_patients, n_latent_states and n_actions must be positive",
            ));
        }
        if self.horizon_hours < 2 {
            return Err(Error::arg("horizon_hours must be at least 2"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::arg("gamma must be in [0, 1)"));
        }
        self.action_space.validate()?;
        if self.action_space.n_actions() != a {
            return Err(Error::arg(format!(
                "n_actions = {a} but the bin edges define {} bins",
                self.action_space.n_actions()
            )));
        }
        if self.transitions.len() != l {
            return Err(Error::arg(
                "transition tensor must have one block per latent state",
            ));
        }
        for (s, block) in self.transitions.iter().enumerate() {
            if block.len() != a {
                return Err(Error::arg(format!(
                    "transition block {s} must have {a} rows"
                )));
            }
            for (act, row) in block.iter().enumerate() {
                check_distribution(&format!("transitions[{s}][{act}]"), row, l)?;
            }
        }
        for (what, v) in [
            ("death_hazard", &self.death_hazard),
            ("discharge", &self.discharge),
        ] {
            if v.len() != l || v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::arg(format!("{what} needs {l} entries in [0, 1]")));
            }
        }
        check_distribution("initial", &self.initial, l)?;
        if self.behavior.len() != l {
            return Err(Error::arg(
                "behavior needs one distribution per latent state",
            ));
        }
        for (s, row) in self.behavior.iter().enumerate() {
            check_distribution(&format!("behavior[{s}]"), row, a)?;
        }
        let c = self.covariates.len();
        if self.covariate_ranges.len() != c {
            return Err(Error::arg(
                "covariate_ranges must match the covariate schema",
            ));
        }
        if self.emission_means.len() != l || self.emission_means.iter().any(|m| m.len() != c) {
            return Err(Error::arg(
                "emission_means must be n_latent_states x n_covariates",
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::arg("noise_scale must be positive"));
        }
        for (what, r) in [
            ("missing_rate", self.missing_rate),
            ("other_source_rate", self.other_source_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::arg(format!("{what} must be in [0, 1)")));
            }
        }
        Ok(())
    }

    /// A cohort with a planted harmful glucose bin: bin 0 (< 60 mg/dl) sends
    /// the patient straight into the crisis state, and the behavioural policy
    /// picks it 30% of the time, more often than any other bin. Each state has
    /// its own helpful bin that moves the patient one severity level down;
    /// the two other bins the clinicians use risk a jump of two levels up.
    pub fn planted(n_patients: usize, seed: u64) -> Self {
        let l = 5;
        let space = ActionSpace::default();
        let a = space.n_actions();
        let harmful = 0;
        let helpful = [5, 4, 6, 3, 5];
        let neutral = [[2, 8], [3, 7], [4, 9], [5, 8], [2, 7]];
        let crisis = l - 1;

        let mut transitions = vec![vec![vec![0.0; l]; a]; l];
        for s in 0..l {
            let better = s.saturating_sub(1);
            let worse = (s + 1).min(l - 1);
            let much_worse = (s + 2).min(l - 1);
            for act in 0..a {
                let row = &mut transitions[s][act];
                if act == harmful {
                    row[crisis] = 1.0;
                } else if act == helpful[s] {
                    row[better] += 0.7;
                    row[s] += 0.3;
                } else if neutral[s].contains(&act) {
                    row[better] += 0.1;
                    row[s] += 0.4;
                    row[much_worse] += 0.5;
                } else {
                    row[s] += 0.5;
                    row[worse] += 0.5;
                }
            }
        }
        let behavior = (0..l)
            .map(|s| {
                let mut row = vec![0.0; a];
                row[harmful] = 0.30;
                row[helpful[s]] = 0.25;
                row[neutral[s][0]] = 0.25;
                row[neutral[s][1]] = 0.20;
                row
            })
            .collect();

        let covariates = CovariateSchema::default_icu();
        let mut means_rng = rng::substream(seed, "synth-emission");
        let emission_means = (0..l)
            .map(|_| {
                (0..covariates.len())
                    .map(|_| means_rng.random_range(0.15..0.85))
                    .collect()
            })
            .collect();
        let covariate_ranges = covariates
            .names()
            .iter()
            .map(|n| covariate_range(n))
            .collect();

        Self {
            n_patients,
            n_latent_states: l,
            n_actions: a,
            horizon_hours: 72,
            gamma: 0.9,
            transitions,
            death_hazard: vec![0.001, 0.004, 0.01, 0.025, 0.06],
            // Hour 0 can never end a stay, which dilutes the estimated discharge
            // rate of the mildest state; its fast discharge keeps the helpful bin
            // clearly ahead there after that dilution.
            discharge: vec![0.40, 0.20, 0.10, 0.07, 0.05],
            initial: vec![0.20, 0.30, 0.30, 0.15, 0.05],
            emission_means,
            noise_scale: 0.03,
            covariates,
            covariate_ranges,
            behavior,
            action_space: space,
            missing_rate: 0.01,
            other_source_rate: 0.0,
            seed,
        }
    }

    /// The latent MDP with SURVIVE = `L` and DEATH = `L + 1`.
    pub fn latent_mdp(&self) -> TabularMdp<f64> {
        let l = self.n_latent_states;
        let (survive, death) = (l, l + 1);
        let mut actions = Vec::with_capacity(l + 2);
        for s in 0..l {
            let h = self.death_hazard[s];
            let d = (1.0 - h) * self.discharge[s];
            let stay = (1.0 - h) * (1.0 - self.discharge[s]);
            let models = (0..self.n_actions)
                .map(|act| {
                    let mut outcomes = Vec::new();
                    for (next, &p) in self.transitions[s][act].iter().enumerate() {
                        if p > 0.0 && stay > 0.0 {
                            outcomes.push(Outcome {
                                next,
                                prob: stay * p,
                                reward: 0.0,
                            });
                        }
                    }
                    if d > 0.0 {
                        outcomes.push(Outcome {
                            next: survive,
                            prob: d,
                            reward: TERMINAL_REWARD,
                        });
                    }
                    if h > 0.0 {
                        outcomes.push(Outcome {
                            next: death,
                            prob: h,
                            reward: -TERMINAL_REWARD,
                        });
                    }
                    ActionModel {
                        action: act,
                        outcomes,
                    }
                })
                .collect();
            actions.push(models);
        }
        actions.push(Vec::new());
        actions.push(Vec::new());
        TabularMdp {
            gamma: self.gamma,
            terminal: (0..l + 2).map(|s| s >= l).collect(),
            actions,
        }
    }
}

/// Exact policy iteration on the latent MDP.
pub fn solve_ground_truth(cfg: &GeneratorConfig) -> Result<(Policy, Vec<f64>)> {
    cfg.validate()?;
    let sol = policy_iteration(&cfg.latent_mdp(), GROUND_TRUTH_EPSILON, None)?;
    Ok((sol.policy, sol.values))
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn glucose_in_bin<R: Rng>(space: &ActionSpace, action: usize, rng: &mut R) -> f64 {
    let (lo, hi) = space.bin_range(action);
    let lo = if action == 0 {
        (hi - 20.0).max(hi * 0.5)
    } else {
        lo
    };
    let hi = if hi.is_infinite() { lo + 100.0 } else { hi };
    let g = rng.random_range(lo..hi);
    // Keep clear of the right-open edge after text round-trips.
    (g * 100.0).floor() / 100.0
}

fn random_statics<R: Rng>(rng: &mut R, first_glucose: f64) -> StaticCovariates {
    let diabetic_code = rng.random_bool(0.2);
    let mut icd9_codes = vec!["038.9".to_string(), "995.92".to_string()];
    if diabetic_code {
        icd9_codes.push("250.00".into());
    }
    StaticCovariates {
        age_years: f64::from(rng.random_range(30u32..90)),
        gender: if rng.random_bool(0.5) {
            Gender::Female
        } else {
            Gender::Male
        },
        icu_unit: IcuUnit::ALL[rng.random_range(0..IcuUnit::ALL.len())],
        sofa_admission: rng.random_range(2..16),
        elixhauser: rng.random_range(0..20),
        mech_vent: rng.random_bool(0.4),
        intubation: rng.random_bool(0.3),
        vasopressor: rng.random_bool(0.35),
        hba1c_ge_7: rng.random_bool(0.15),
        first_glucose_mgdl: first_glucose,
        icd9_codes,
        admission_meds_diabetic: rng.random_bool(0.1),
        history_mentions_diabetes: rng.random_bool(0.1),
    }
}

fn generate_patient(cfg: &GeneratorConfig, index: usize) -> (PatientSeries, LatentPath) {
    let mut rng: StageRng = rng::indexed_substream(cfg.seed, rng::SYNTH, index as u64);
    let noise = Normal::new(0.0, cfg.noise_scale).expect("validated noise scale");
    let patient_id = format!("syn{index:06}");
    let mut state = sample_index(&cfg.initial, &mut rng);
    let mut hours = Vec::new();
    let mut latent = Vec::new();
    let mut died = false;

    for t in 0..cfg.horizon_hours {
        let action = sample_index(&cfg.behavior[state], &mut rng);
        let glucose = glucose_in_bin(&cfg.action_space, action, &mut rng);
        let source = if rng.random_bool(cfg.other_source_rate) {
            GlucoseSource::Other
        } else if rng.random_bool(0.5) {
            GlucoseSource::Arterial
        } else {
            GlucoseSource::Venous
        };
        let covariates = cfg.emission_means[state]
            .iter()
            .zip(&cfg.covariate_ranges)
            .map(|(&m, &(lo, hi))| {
                let z: f64 = noise.sample(&mut rng);
                let observed = !rng.random_bool(cfg.missing_rate);
                observed.then(|| lo + (hi - lo) * (m + z))
            })
            .collect();
        hours.push(HourRecord {
            hour_index: t as u32,
            covariates,
            glucose_mgdl: Some(glucose),
            glucose_source: source,
        });
        latent.push(state);

        if t + 1 == cfg.horizon_hours {
            break;
        }
        if t >= 1 {
            if rng.random_bool(cfg.death_hazard[state]) {
                died = true;
                break;
            }
            if rng.random_bool(cfg.discharge[state]) {
                break;
            }
        }
        state = sample_index(&cfg.transitions[state][action], &mut rng);
    }

    let first_glucose = hours[0].glucose_mgdl.unwrap_or(120.0);
    let statics = random_statics(&mut rng, first_glucose);
    let diabetic = classify_diabetes(&statics);
    (
        PatientSeries {
            patient_id: patient_id.clone(),
            hours,
            statics,
            alive_at_90d: !died,
            diabetic,
        },
        LatentPath {
            patient_id,
            states: latent,
        },
    )
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let (optimal_policy, optimal_values) = solve_ground_truth(cfg)?;
    let (series, latent_paths): (Vec<_>, Vec<_>) = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(cfg, i))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(SyntheticCohort {
        series,
        ground_truth: GroundTruth {
            mdp: cfg.latent_mdp(),
            optimal_policy,
            optimal_values,
            latent_paths,
        },
    })
}
