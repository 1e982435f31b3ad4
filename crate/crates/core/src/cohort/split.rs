use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PatientSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PatientSeries>,
    pub test: Vec<PatientSeries>,
    pub stratified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

impl SplitSide {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitSide::Train => "train",
            SplitSide::Test => "test",
        }
    }
}

/// Patient-level split, deterministic under `seed`. With `stratify` set and
/// at least two patients in each outcome class the split is stratified by
/// outcome; a cohort too small to stratify falls back to a plain random split
/// with a warning.
pub fn split_patients(
    series_list: Vec<PatientSeries>,
    test_fraction: f64,
    stratify: bool,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = series_list.len();
    if n < 2 {
        return Err(Error::arg(format!("cannot split a cohort of {n} patients")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let died: Vec<usize> = (0..n).filter(|&i| series_list[i].died()).collect();
    let alive: Vec<usize> = (0..n).filter(|&i| !series_list[i].died()).collect();
    let stratified = stratify && died.len() >= 2 && alive.len() >= 2;

    let mut in_test = vec![false; n];
    if stratified {
        let n_test_died =
            ((died.len() as f64 * test_fraction).round() as usize).clamp(1, died.len() - 1);
        let n_test_died = n_test_died.min(n_test.saturating_sub(1)).max(1);
        let n_test_alive = (n_test - n_test_died).min(alive.len() - 1);
        for (group, take) in [(died, n_test_died), (alive, n_test_alive)] {
            let mut group = group;
            group.shuffle(&mut rng);
            for &i in &group[..take] {
                in_test[i] = true;
            }
        }
    } else {
        if stratify {
            log::warn!("cohort too small to stratify by outcome; using a plain random split");
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }

    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (s, t) in series_list.into_iter().zip(in_test) {
        if t {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(Split {
        train,
        test,
        stratified,
    })
}
