//! Estimated-mortality-versus-expected-return curve and the real/optimal
//! policy comparison built on it.
//!
//! Every state visit contributes one sample `(V(state), died)`. Samples are
//! weighted by `1 / trajectory length`, so each patient carries unit mass and
//! curve averages are comparable with the patient-level mortality rate.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MortalityMapping {
    /// Map every visited state's value through the curve, then average.
    PerState,
    /// Map the visitation-weighted mean return through the curve.
    MeanReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub n_bins: usize,
    /// Bins with fewer visits merge into their nearest neighbour.
    pub min_bin_support: u64,
    pub mapping: MortalityMapping,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_bins: 20,
            min_bin_support: 50,
            mapping: MortalityMapping::PerState,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub value: T,
    pub died: bool,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationCurve<T> {
    /// Weighted mean return of each retained bin, increasing.
    pub bin_centers: Vec<T>,
    /// Non-increasing in return, within `[0, 1]`.
    pub mortality: Vec<T>,
    /// Visits per retained bin.
    pub support: Vec<u64>,
    pub domain: (T, T),
}

impl<T: Scalar> CalibrationCurve<T> {
    /// Piecewise-linear between bin centers, flat beyond the end bins.
    pub fn estimate(&self, expected_return: T) -> T {
        let c = &self.bin_centers;
        let m = &self.mortality;
        let last = c.len() - 1;
        if expected_return <= c[0] {
            return m[0];
        }
        if expected_return >= c[last] {
            return m[last];
        }
        let i = c.partition_point(|&x| x <= expected_return) - 1;
        let w = (expected_return - c[i]) / (c[i + 1] - c[i]);
        m[i] + (m[i + 1] - m[i]) * w
    }
}

pub fn estimate_mortality<T: Scalar>(curve: &CalibrationCurve<T>, expected_return: T) -> T {
    curve.estimate(expected_return)
}

/// Visit samples of `trajectories` under per-state `values`.
pub fn visit_samples<T: Scalar>(
    values: &[T],
    trajectories: &[Trajectory],
) -> Result<Vec<Sample<T>>> {
    let mut out = Vec::new();
    for t in trajectories {
        if t.steps.is_empty() {
            continue;
        }
        let weight = T::one() / T::of_usize(t.steps.len());
        for step in &t.steps {
            let value = *values.get(step.state).ok_or_else(|| {
                Error::arg(format!(
                    "no value for state {} of patient {}",
                    step.state, t.patient_id
                ))
            })?;
            out.push(Sample {
                value,
                died: t.died,
                weight,
            });
        }
    }
    Ok(out)
}

/// Patient-normalized state visitation: `w(s) = (1/N) Σ_i n_i(s) / T_i`.
pub fn visitation<T: Scalar>(
    trajectories: &[Trajectory],
    n_states: usize,
) -> Result<Vec<(usize, T)>> {
    let used: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| !t.steps.is_empty())
        .collect();
    if used.is_empty() {
        return Err(Error::arg("empty visitation: no trajectories"));
    }
    let mut mass = vec![T::zero(); n_states];
    let n = T::of_usize(used.len());
    for t in used {
        let w = T::one() / (T::of_usize(t.steps.len()) * n);
        for step in &t.steps {
            if step.state >= n_states {
                return Err(Error::arg(format!("visit to unknown state {}", step.state)));
            }
            mass[step.state] = mass[step.state] + w;
        }
    }
    Ok(mass
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w > T::zero())
        .collect())
}

pub fn empirical_mortality(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    trajectories.iter().filter(|t| t.died).count() as f64 / trajectories.len() as f64
}

/// Weighted pool-adjacent-violators fit constrained to be non-increasing.
pub fn pav_non_increasing<T: Scalar>(values: &[T], weights: &[T]) -> Vec<T> {
    // Blocks of (mean, weight, length).
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() >= 2 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            let w = w1 + w2;
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / w, w, n1 + n2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Bin<T> {
    weight: T,
    weighted_value: T,
    weighted_deaths: T,
    support: u64,
}

impl<T: Scalar> Bin<T> {
    fn center(&self) -> T {
        self.weighted_value / self.weight
    }

    fn absorb(&mut self, other: Bin<T>) {
        self.weight = self.weight + other.weight;
        self.weighted_value = self.weighted_value + other.weighted_value;
        self.weighted_deaths = self.weighted_deaths + other.weighted_deaths;
        self.support += other.support;
    }
}

pub fn fit_curve_from_samples<T: Scalar>(
    samples: &[Sample<T>],
    n_bins: usize,
    min_bin_support: u64,
) -> Result<CalibrationCurve<T>> {
    if n_bins == 0 {
        return Err(Error::arg("n_bins must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::Calibration("no samples".into()));
    }
    let lo = samples.iter().map(|s| s.value).fold(T::infinity(), T::min);
    let hi = samples
        .iter()
        .map(|s| s.value)
        .fold(T::neg_infinity(), T::max);
    let width = (hi - lo) / T::of_usize(n_bins);
    let zero = Bin {
        weight: T::zero(),
        weighted_value: T::zero(),
        weighted_deaths: T::zero(),
        support: 0,
    };
    let mut bins = vec![zero; n_bins];
    for s in samples {
        let idx = if width > T::zero() {
            ((s.value - lo) / width)
                .floor()
                .to_usize()
                .unwrap_or(0)
                .min(n_bins - 1)
        } else {
            0
        };
        let b = &mut bins[idx];
        b.weight = b.weight + s.weight;
        b.weighted_value = b.weighted_value + s.weight * s.value;
        if s.died {
            b.weighted_deaths = b.weighted_deaths + s.weight;
        }
        b.support += 1;
    }
    bins.retain(|b| b.support > 0);

    while bins.len() > 1 {
        let Some(i) = (0..bins.len())
            .filter(|&i| bins[i].support < min_bin_support)
            .min_by_key(|&i| bins[i].support)
        else {
            break;
        };
        let target = match (i.checked_sub(1), (i + 1 < bins.len()).then_some(i + 1)) {
            (Some(l), Some(r)) => {
                let dl = bins[i].center() - bins[l].center();
                let dr = bins[r].center() - bins[i].center();
                if dl <= dr {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("at least two bins"),
        };
        let b = bins.remove(i);
        let target = if target > i { target - 1 } else { target };
        bins[target].absorb(b);
    }
    if bins.len() < 2 {
        return Err(Error::Calibration(format!(
            "only {} bin(s) with support >= {min_bin_support}; cohort too small",
            bins.len()
        )));
    }

    let raw: Vec<T> = bins.iter().map(|b| b.weighted_deaths / b.weight).collect();
    let weights: Vec<T> = bins.iter().map(|b| b.weight).collect();
    let mortality = pav_non_increasing(&raw, &weights)
        .into_iter()
        .map(|m| m.max(T::zero()).min(T::one()))
        .collect();
    Ok(CalibrationCurve {
        bin_centers: bins.iter().map(Bin::center).collect(),
        mortality,
        support: bins.iter().map(|b| b.support).collect(),
        domain: (lo, hi),
    })
}

/// Fits the curve from the real policy's values over the training trajectories.
pub fn fit_curve<T: Scalar>(
    real_values: &[T],
    trajectories: &[Trajectory],
    n_bins: usize,
    min_bin_support: u64,
) -> Result<CalibrationCurve<T>> {
    let samples = visit_samples(real_values, trajectories)?;
    fit_curve_from_samples(&samples, n_bins, min_bin_support)
}

/// Expected return and estimated mortality of one policy under a visitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub expected_return: f64,
    pub estimated_mortality: f64,
}

pub fn score_policy<T: Scalar>(
    values: &[T],
    curve: &CalibrationCurve<T>,
    visitation: &[(usize, T)],
    mapping: MortalityMapping,
) -> Result<PolicyScore> {
    if visitation.is_empty() {
        return Err(Error::arg("empty visitation"));
    }
    let mut mean = T::zero();
    let mut mapped = T::zero();
    let mut mass = T::zero();
    for &(s, w) in visitation {
        let v = *values
            .get(s)
            .ok_or_else(|| Error::arg(format!("visitation mass on unknown state {s}")))?;
        mean = mean + w * v;
        mapped = mapped + w * curve.estimate(v);
        mass = mass + w;
    }
    let mean = mean / mass;
    let mortality = match mapping {
        MortalityMapping::PerState => mapped / mass,
        MortalityMapping::MeanReturn => curve.estimate(mean),
    };
    Ok(PolicyScore {
        expected_return: mean.to_f64_lossy(),
        estimated_mortality: mortality.to_f64_lossy(),
    })
}

/// The training-split check: the real policy mapped through the curve should
/// reproduce the training cohort's observed mortality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityAnchor {
    pub train_estimated_mortality: f64,
    pub train_empirical_mortality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub representation: String,
    pub real: PolicyScore,
    pub optimal: PolicyScore,
    /// Observed 90-day mortality of the test split.
    pub cohort_mortality: f64,
    pub n_test_patients: usize,
    pub sanity_anchor: SanityAnchor,
    pub mortality_mapping: MortalityMapping,
    pub config_digest: String,
    pub seed: u64,
}

pub struct EvaluationInputs<'a, T> {
    pub representation: &'a str,
    pub real_values: &'a [T],
    pub optimal_values: &'a [T],
    pub curve: &'a CalibrationCurve<T>,
    pub train: &'a [Trajectory],
    pub test: &'a [Trajectory],
    pub n_states: usize,
    pub mapping: MortalityMapping,
    pub config_digest: &'a str,
    pub seed: u64,
}

pub fn evaluate<T: Scalar>(inp: &EvaluationInputs<'_, T>) -> Result<EvaluationReport> {
    let test_w = visitation(inp.test, inp.n_states)?;
    let train_w = visitation(inp.train, inp.n_states)?;
    let real = score_policy(inp.real_values, inp.curve, &test_w, inp.mapping)?;
    let optimal = score_policy(inp.optimal_values, inp.curve, &test_w, inp.mapping)?;
    let anchor = score_policy(inp.real_values, inp.curve, &train_w, inp.mapping)?;
    Ok(EvaluationReport {
        representation: inp.representation.to_string(),
        real,
        optimal,
        cohort_mortality: empirical_mortality(inp.test),
        n_test_patients: inp.test.len(),
        sanity_anchor: SanityAnchor {
            train_estimated_mortality: anchor.estimated_mortality,
            train_empirical_mortality: empirical_mortality(inp.train),
        },
        mortality_mapping: inp.mapping,
        config_digest: inp.config_digest.to_string(),
        seed: inp.seed,
    })
}

pub fn emit_curve_csv<T: Scalar, W: Write>(curve: &CalibrationCurve<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["expected_return", "estimated_mortality", "support"])?;
    for ((c, m), s) in curve
        .bin_centers
        .iter()
        .zip(&curve.mortality)
        .zip(&curve.support)
    {
        w.write_record([c.to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<curve csv>", e))?;
    Ok(())
}

/// Reads the nodes written by [`emit_curve_csv`] as `(return, mortality, support)`.
pub fn read_curve_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<(T, T, u64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = || Error::Parse {
            line,
            message: "malformed curve row".into(),
        };
        let c = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let m = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let s = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.push((c, m, s));
    }
    Ok(out)
}
