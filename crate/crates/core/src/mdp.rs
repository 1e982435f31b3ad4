//! Finite MDP estimated from clustered hourly trajectories: 11 glucose-bin
//! actions, empirical transitions, and ±100 rewards on entry into the
//! absorbing SURVIVE / DEATH states.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{DroppedPatient, SplitSide};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::solver::{ActionModel, Outcome, Policy, TabularMdp};

pub const DEFAULT_BIN_EDGES: [f64; 10] = [
    60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 220.0, 260.0, 300.0,
];
pub const TERMINAL_REWARD: f64 = 100.0;
pub const DEFAULT_MIN_COUNT: u64 = 5;
const FORMAT_TAG: &str = "# glyrl-mdp v1";

/// Glucose bins in mg/dl, left-closed and right-open; the top bin is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpace {
    pub bin_edges: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
        }
    }
}

impl ActionSpace {
    pub fn new(bin_edges: Vec<f64>) -> Result<Self> {
        let space = Self { bin_edges };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_edges.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::arg("glucose bin edges must be finite and positive"));
        }
        if self.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("glucose bin edges must be strictly increasing"));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.bin_edges.len() + 1
    }

    /// `[lo, hi)` of bin `action`; `hi` is infinite for the top bin.
    pub fn bin_range(&self, action: usize) -> (f64, f64) {
        let lo = if action == 0 {
            0.0
        } else {
            self.bin_edges[action - 1]
        };
        let hi = self.bin_edges.get(action).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

pub fn discretize_glucose(glucose_mgdl: f64, space: &ActionSpace) -> Result<usize> {
    if !(glucose_mgdl.is_finite() && glucose_mgdl > 0.0) {
        return Err(Error::arg(format!(
            "glucose must be positive and finite, got {glucose_mgdl}"
        )));
    }
    Ok(space.bin_edges.partition_point(|&e| e <= glucose_mgdl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: String,
    pub split: SplitSide,
    pub died: bool,
    pub steps: Vec<Step>,
}

/// One patient's hourly cluster ids and glucose readings.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedSeries {
    pub patient_id: String,
    pub split: SplitSide,
    pub died: bool,
    pub states: Vec<usize>,
    pub glucose_mgdl: Vec<Option<f64>>,
}

pub fn survive_state(k: usize) -> usize {
    k
}

pub fn death_state(k: usize) -> usize {
    k + 1
}

/// One step per hour; the final step enters SURVIVE or DEATH. Hours without
/// a glucose reading reuse the most recent action (the first observed one
/// for leading hours). Patients with no reading at all are dropped.
pub fn build_trajectories(
    series: &[AssignedSeries],
    k: usize,
    space: &ActionSpace,
) -> Result<(Vec<Trajectory>, Vec<DroppedPatient>)> {
    let mut out = Vec::with_capacity(series.len());
    let mut dropped = Vec::new();
    for s in series {
        if s.states.len() != s.glucose_mgdl.len() || s.states.is_empty() {
            return Err(Error::arg(format!(
                "patient {}: {} states but {} glucose slots",
                s.patient_id,
                s.states.len(),
                s.glucose_mgdl.len()
            )));
        }
        if let Some(&bad) = s.states.iter().find(|&&st| st >= k) {
            return Err(Error::arg(format!(
                "patient {}: state {bad} outside 0..{k}",
                s.patient_id
            )));
        }
        let observed: Vec<Option<usize>> = s
            .glucose_mgdl
            .iter()
            .map(|g| g.map(|g| discretize_glucose(g, space)).transpose())
            .collect::<Result<_>>()?;
        let Some(first) = observed.iter().flatten().next().copied() else {
            log::warn!("dropping patient {}: no glucose observations", s.patient_id);
            dropped.push(DroppedPatient {
                patient_id: s.patient_id.clone(),
                reason: "no glucose observations".into(),
            });
            continue;
        };
        let mut last = first;
        let terminal = if s.died {
            death_state(k)
        } else {
            survive_state(k)
        };
        let steps = (0..s.states.len())
            .map(|t| {
                if let Some(a) = observed[t] {
                    last = a;
                }
                Step {
                    state: s.states[t],
                    action: last,
                    next: s.states.get(t + 1).copied().unwrap_or(terminal),
                }
            })
            .collect();
        out.push(Trajectory {
            patient_id: s.patient_id.clone(),
            split: s.split,
            died: s.died,
            steps,
        });
    }
    Ok((out, dropped))
}

/// Estimated MDP over `k` cluster states plus SURVIVE (`k`) and DEATH (`k + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel<T> {
    pub k: usize,
    pub gamma: T,
    pub action_space: ActionSpace,
    pub min_count: u64,
    pub representation: String,
    /// Every observed `(s, a, s')` count, including pairs below `min_count`.
    pub counts: BTreeMap<(usize, usize, usize), u64>,
    /// Per cluster state: actions with at least `min_count` observations.
    pub available: Vec<Vec<usize>>,
    /// Per cluster state: `Some(a)` when no action qualified and a zero-reward
    /// self-loop under action `a` stands in.
    pub fallback: Vec<Option<usize>>,
}

impl<T: Scalar> MdpModel<T> {
    pub fn n_states(&self) -> usize {
        self.k + 2
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s >= self.k
    }

    pub fn reward(&self, next: usize) -> T {
        if next == survive_state(self.k) {
            T::of(TERMINAL_REWARD)
        } else if next == death_state(self.k) {
            -T::of(TERMINAL_REWARD)
        } else {
            T::zero()
        }
    }

    fn row(&self, s: usize, a: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts
            .range((s, a, 0)..=(s, a, usize::MAX))
            .map(|(&(_, _, n), &c)| (n, c))
    }

    pub fn pair_count(&self, s: usize, a: usize) -> u64 {
        self.row(s, a).map(|(_, c)| c).sum()
    }

    /// Per-action observation totals at `s`, in action order.
    pub fn action_counts(&self, s: usize) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for (&(_, a, _), &c) in self.counts.range((s, 0, 0)..=(s, usize::MAX, usize::MAX)) {
            *out.entry(a).or_insert(0) += c;
        }
        out
    }

    /// Empirical `P(s' | s, a)` over available pairs, `None` otherwise.
    pub fn transitions(&self, s: usize, a: usize) -> Option<Vec<(usize, T)>> {
        if s >= self.k || !self.available[s].contains(&a) {
            return None;
        }
        let total = T::of(self.pair_count(s, a) as f64);
        Some(
            self.row(s, a)
                .map(|(n, c)| (n, T::of(c as f64) / total))
                .collect(),
        )
    }

    pub fn to_tabular(&self) -> TabularMdp<T> {
        let mut actions = Vec::with_capacity(self.n_states());
        for s in 0..self.k {
            let models = if let Some(a) = self.fallback[s] {
                vec![ActionModel {
                    action: a,
                    outcomes: vec![Outcome {
                        next: s,
                        prob: T::one(),
                        reward: T::zero(),
                    }],
                }]
            } else {
                self.available[s]
                    .iter()
                    .map(|&a| ActionModel {
                        action: a,
                        outcomes: self
                            .transitions(s, a)
                            .unwrap_or_default()
                            .into_iter()
                            .map(|(next, prob)| Outcome {
                                next,
                                prob,
                                reward: self.reward(next),
                            })
                            .collect(),
                    })
                    .collect()
            };
            actions.push(models);
        }
        actions.push(Vec::new());
        actions.push(Vec::new());
        TabularMdp {
            gamma: self.gamma,
            terminal: (0..self.n_states()).map(|s| self.is_terminal(s)).collect(),
            actions,
        }
    }
}

fn most_counted(counts: &BTreeMap<usize, u64>) -> Option<usize> {
    counts
        .iter()
        .fold(None, |best: Option<(usize, u64)>, (&a, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((a, c)),
        })
        .map(|(a, _)| a)
}

pub fn mdp_from_counts<T: Scalar>(
    k: usize,
    counts: BTreeMap<(usize, usize, usize), u64>,
    min_count: u64,
    gamma: T,
    action_space: ActionSpace,
    representation: impl Into<String>,
) -> Result<MdpModel<T>> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::arg(format!("gamma must be in [0, 1), got {gamma}")));
    }
    if let Some(&(s, a, n)) = counts
        .keys()
        .find(|&&(s, a, n)| s >= k || n > k + 1 || a >= action_space.n_actions())
    {
        return Err(Error::arg(format!(
            "count ({s}, {a}, {n}) is outside the state/action space"
        )));
    }
    let mut model = MdpModel {
        k,
        gamma,
        action_space,
        min_count,
        representation: representation.into(),
        counts,
        available: vec![Vec::new(); k],
        fallback: vec![None; k],
    };
    for s in 0..k {
        let per_action = model.action_counts(s);
        model.available[s] = per_action
            .iter()
            .filter(|(_, &c)| c >= min_count.max(1))
            .map(|(&a, _)| a)
            .collect();
        if model.available[s].is_empty() {
            let a = most_counted(&per_action).unwrap_or(0);
            log::debug!(
                "state {s} has no action with {min_count}+ observations; self-loop fallback"
            );
            model.fallback[s] = Some(a);
        }
    }
    Ok(model)
}

/// Accumulates the steps of `trajectories` (all of them; filter by split first).
pub fn estimate_mdp<T: Scalar>(
    trajectories: &[Trajectory],
    k: usize,
    min_count: u64,
    gamma: T,
    action_space: ActionSpace,
    representation: impl Into<String>,
) -> Result<MdpModel<T>> {
    if trajectories.is_empty() {
        return Err(Error::arg("cannot estimate an MDP from zero trajectories"));
    }
    let mut counts = BTreeMap::new();
    for t in trajectories {
        for step in &t.steps {
            *counts
                .entry((step.state, step.action, step.next))
                .or_insert(0) += 1;
        }
    }
    mdp_from_counts(k, counts, min_count, gamma, action_space, representation)
}

/// Most frequently observed action per state (lowest action on ties). States
/// without any observation get their fallback action.
pub fn extract_real_policy<T: Scalar>(mdp: &MdpModel<T>) -> Policy {
    let mut actions: Vec<Option<usize>> = (0..mdp.k)
        .map(|s| match mdp.fallback[s] {
            Some(a) => Some(a),
            None => most_counted(&mdp.action_counts(s)),
        })
        .collect();
    actions.extend([None, None]);
    Policy(actions)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the sparse triplet file: a versioned header, then `s,a,s',count,p`
/// rows (`p` empty for pairs below `min_count`).
pub fn write_mdp<T: Scalar, W: Write>(mdp: &MdpModel<T>, mut out: W) -> Result<()> {
    let mut body = String::new();
    for (&(s, a, n), &c) in &mdp.counts {
        let p = mdp
            .transitions(s, a)
            .and_then(|row| row.into_iter().find(|&(m, _)| m == n))
            .map(|(_, p)| p.to_string())
            .unwrap_or_default();
        writeln!(body, "{s},{a},{n},{c},{p}").expect("string write");
    }
    let edges: Vec<String> = mdp
        .action_space
        .bin_edges
        .iter()
        .map(|e| e.to_string())
        .collect();
    let header = format!(
        "{FORMAT_TAG}\nn_states={}\nk={}\ngamma={}\nbin_edges={}\nmin_count={}\nrepresentation={}\nscalar={}\nrows={}\nchecksum={}\ns,a,s_next,count,p\n",
        mdp.n_states(),
        mdp.k,
        mdp.gamma,
        edges.join(";"),
        mdp.min_count,
        mdp.representation,
        T::name(),
        mdp.counts.len(),
        sha256_hex(body.as_bytes()),
    );
    let io = |e| Error::io("<mdp>", e);
    out.write_all(header.as_bytes()).map_err(io)?;
    out.write_all(body.as_bytes()).map_err(io)?;
    Ok(())
}

pub fn read_mdp<T: Scalar, R: BufRead>(input: R, path: &Path) -> Result<MdpModel<T>> {
    let bad = |m: String| Error::compat(path, m);
    let mut lines = input.lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file".into()))?
            .map_err(|e| Error::io(path, e))
    };
    let tag = next_line()?;
    if tag.trim() != FORMAT_TAG {
        return Err(bad(format!("unsupported format tag '{tag}'")));
    }
    let mut header = BTreeMap::new();
    loop {
        let line = next_line()?;
        if line == "s,a,s_next,count,p" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        header.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| {
        header
            .get(key)
            .ok_or_else(|| bad(format!("missing header '{key}'")))
    };
    let num = |key: &str| -> Result<u64> {
        get(key)?
            .parse()
            .map_err(|_| bad(format!("header '{key}' is not an integer")))
    };
    if get("scalar")? != T::name() {
        return Err(bad(format!(
            "file stores {} values, reader expects {}",
            get("scalar")?,
            T::name()
        )));
    }
    let k = num("k")? as usize;
    if num("n_states")? as usize != k + 2 {
        return Err(bad("n_states must equal k + 2".into()));
    }
    let gamma: T = get("gamma")?
        .parse()
        .map_err(|_| bad("gamma is not a number".into()))?;
    let bin_edges = get("bin_edges")?
        .split(';')
        .map(|e| e.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("bin_edges are not numbers".into()))?;
    let action_space = ActionSpace::new(bin_edges).map_err(|e| bad(e.to_string()))?;
    let min_count = num("min_count")?;
    let rows = num("rows")? as usize;
    let checksum = get("checksum")?.clone();
    let representation = get("representation")?.clone();

    let mut body = String::new();
    let mut counts = BTreeMap::new();
    let mut probs = Vec::with_capacity(rows);
    for _ in 0..rows {
        let line = next_line()?;
        writeln!(body, "{line}").expect("string write");
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("malformed row '{line}'")));
        }
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(format!("malformed row '{line}'")))
        };
        let (s, a, n) = (parse(f[0])?, parse(f[1])?, parse(f[2])?);
        let c = parse(f[3])? as u64;
        counts.insert((s, a, n), c);
        probs.push(((s, a, n), f[4].to_string()));
    }
    if sha256_hex(body.as_bytes()) != checksum {
        return Err(bad("row checksum mismatch (corrupted file)".into()));
    }
    let model = mdp_from_counts(k, counts, min_count, gamma, action_space, representation)
        .map_err(|e| bad(e.to_string()))?;
    for ((s, a, n), stored) in probs {
        let derived = model
            .transitions(s, a)
            .and_then(|row| row.into_iter().find(|&(m, _)| m == n))
            .map(|(_, p)| p.to_string())
            .unwrap_or_default();
        if derived != stored {
            return Err(bad(format!(
                "stored probability for ({s}, {a}, {n}) disagrees with counts"
            )));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, died: bool, steps: &[(usize, usize, usize)]) -> Trajectory {
        Trajectory {
            patient_id: id.into(),
            split: SplitSide::Train,
            died,
            steps: steps
                .iter()
                .map(|&(state, action, next)| Step {
                    state,
                    action,
                    next,
                })
                .collect(),
        }
    }

    #[test]
    fn glucose_bins() {
        let space = ActionSpace::default();
        assert_eq!(space.n_actions(), 11);
        assert_eq!(discretize_glucose(75.0, &space).unwrap(), 1);
        assert_eq!(discretize_glucose(80.0, &space).unwrap(), 2);
        assert_eq!(discretize_glucose(59.9, &space).unwrap(), 0);
        assert_eq!(discretize_glucose(500.0, &space).unwrap(), 10);
        assert!(discretize_glucose(0.0, &space).is_err());
        assert!(discretize_glucose(f64::NAN, &space).is_err());
        assert!(ActionSpace::new(vec![10.0, 10.0]).is_err());
        assert_eq!(space.bin_range(10), (300.0, f64::INFINITY));
    }

    #[test]
    fn trajectories_end_in_outcome_terminal_with_carried_actions() {
        let k = 4;
        let series = vec![
            AssignedSeries {
                patient_id: "a".into(),
                split: SplitSide::Train,
                died: false,
                states: vec![0, 1, 2],
                glucose_mgdl: vec![Some(75.0), Some(130.0), Some(200.0)],
            },
            AssignedSeries {
                patient_id: "b".into(),
                split: SplitSide::Train,
                died: true,
                states: vec![3, 3, 1],
                glucose_mgdl: vec![Some(90.0), None, Some(310.0)],
            },
            AssignedSeries {
                patient_id: "c".into(),
                split: SplitSide::Test,
                died: true,
                states: vec![0, 1],
                glucose_mgdl: vec![None, None],
            },
        ];
        let (trajs, dropped) = build_trajectories(&series, k, &ActionSpace::default()).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(dropped[0].patient_id, "c");
        let a = &trajs[0].steps;
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].next, survive_state(k));
        assert_eq!(
            a.iter().map(|s| s.action).collect::<Vec<_>>(),
            vec![1, 4, 7]
        );
        let b = &trajs[1].steps;
        assert_eq!(b[2].next, death_state(k));
        assert_eq!(b[1].action, b[0].action);
        for t in &trajs {
            assert!(t.steps.windows(2).all(|w| w[0].next == w[1].state));
        }
    }

    #[test]
    fn leading_missing_glucose_takes_first_reading() {
        let series = vec![AssignedSeries {
            patient_id: "a".into(),
            split: SplitSide::Train,
            died: false,
            states: vec![0, 0, 0],
            glucose_mgdl: vec![None, Some(150.0), None],
        }];
        let (trajs, _) = build_trajectories(&series, 1, &ActionSpace::default()).unwrap();
        assert!(trajs[0].steps.iter().all(|s| s.action == 5));
    }

    #[test]
    fn single_observation_has_unit_probability_and_reward() {
        let mdp = estimate_mdp::<f64>(
            &[traj("a", false, &[(0, 3, 2)])],
            2,
            1,
            0.9,
            ActionSpace::default(),
            "raw",
        )
        .unwrap();
        assert_eq!(mdp.transitions(0, 3), Some(vec![(2, 1.0)]));
        let tab = mdp.to_tabular();
        assert_eq!(tab.actions[0][0].outcomes[0].reward, 100.0);
        assert_eq!(tab.actions[0][0].expected_reward(), 100.0);
    }

    #[test]
    fn empirical_frequencies_split_evenly() {
        let trajs = [
            traj("a", false, &[(0, 3, 1), (1, 0, 3)]),
            traj("b", false, &[(0, 3, 2), (2, 0, 3)]),
        ];
        let mdp = estimate_mdp::<f64>(&trajs, 3, 1, 0.9, ActionSpace::default(), "raw").unwrap();
        assert_eq!(mdp.transitions(0, 3), Some(vec![(1, 0.5), (2, 0.5)]));
    }

    #[test]
    fn rare_actions_are_unavailable_and_isolated_states_fall_back() {
        let mut steps = vec![(0, 2, 0); 6];
        steps.extend([(0, 7, 0), (0, 7, 0), (0, 7, 1), (1, 4, 2)]);
        let mdp = estimate_mdp::<f64>(
            &[traj("a", false, &steps)],
            2,
            5,
            0.9,
            ActionSpace::default(),
            "raw",
        )
        .unwrap();
        assert_eq!(mdp.available[0], vec![2]);
        assert_eq!(mdp.transitions(0, 7), None);
        assert_eq!(mdp.fallback[1], Some(4));
        let tab = mdp.to_tabular();
        assert_eq!(
            tab.actions[1][0].outcomes,
            vec![Outcome {
                next: 1,
                prob: 1.0,
                reward: 0.0
            }]
        );
        assert_eq!(
            extract_real_policy(&mdp).0,
            vec![Some(2), Some(4), None, None]
        );
    }

    #[test]
    fn real_policy_argmax_and_ties() {
        let mut steps = vec![(0, 2, 0); 10];
        steps.extend(vec![(0, 7, 0); 3]);
        steps.extend(vec![(1, 1, 1); 5]);
        steps.extend(vec![(1, 4, 3); 5]);
        let mdp = estimate_mdp::<f64>(
            &[traj("a", true, &steps)],
            2,
            1,
            0.9,
            ActionSpace::default(),
            "raw",
        )
        .unwrap();
        assert_eq!(
            extract_real_policy(&mdp).0,
            vec![Some(2), Some(1), None, None]
        );
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let trajs = [
            traj("a", false, &[(0, 3, 1), (1, 0, 3)]),
            traj("b", true, &[(0, 3, 2), (2, 1, 4)]),
            traj("c", true, &[(0, 5, 0), (0, 1, 4)]),
        ];
        let mdp =
            estimate_mdp::<f64>(&trajs, 3, 1, 0.9, ActionSpace::default(), "sparse_ae").unwrap();
        let mut buf = Vec::new();
        write_mdp(&mdp, &mut buf).unwrap();
        let back: MdpModel<f64> = read_mdp(buf.as_slice(), Path::new("m")).unwrap();
        assert_eq!(back, mdp);

        let text = String::from_utf8(buf).unwrap();
        let corrupted = text.replace("0,3,1,1,", "0,3,1,2,");
        assert_ne!(corrupted, text);
        assert!(matches!(
            read_mdp::<f64, _>(corrupted.as_bytes(), Path::new("m")),
            Err(Error::Compatibility { .. })
        ));
        let versioned = text.replace("v1", "v9");
        assert!(read_mdp::<f64, _>(versioned.as_bytes(), Path::new("m")).is_err());
        assert!(read_mdp::<f32, _>(text.as_bytes(), Path::new("m")).is_err());
    }
}
