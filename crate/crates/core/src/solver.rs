//! Exact dynamic programming on a finite MDP: iterative policy evaluation,
//! greedy improvement and policy iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const MAX_IMPROVEMENTS: usize = 1000;
const MAX_SWEEPS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Outcome<T> {
    pub next: usize,
    pub prob: T,
    pub reward: T,
}

/// One available action of a state with its sparse successor distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActionModel<T> {
    pub action: usize,
    pub outcomes: Vec<Outcome<T>>,
}

impl<T: Scalar> ActionModel<T> {
    pub fn expected_reward(&self) -> T {
        self.outcomes
            .iter()
            .fold(T::zero(), |acc, o| acc + o.prob * o.reward)
    }

    fn backup(&self, gamma: T, values: &[T]) -> T {
        self.outcomes.iter().fold(T::zero(), |acc, o| {
            acc + o.prob * (o.reward + gamma * values[o.next])
        })
    }
}

/// Solver-facing MDP. Terminal states are absorbing with value 0; every
/// non-terminal state lists its available actions in increasing action order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TabularMdp<T> {
    pub gamma: T,
    pub terminal: Vec<bool>,
    pub actions: Vec<Vec<ActionModel<T>>>,
}

impl<T: Scalar> TabularMdp<T> {
    pub fn n_states(&self) -> usize {
        self.terminal.len()
    }

    pub fn find_action(&self, s: usize, action: usize) -> Option<&ActionModel<T>> {
        self.actions[s].iter().find(|m| m.action == action)
    }

    /// Same dynamics with every reward multiplied by `c`.
    pub fn scale_rewards(&self, c: T) -> Self {
        let mut out = self.clone();
        for o in out
            .actions
            .iter_mut()
            .flatten()
            .flat_map(|m| m.outcomes.iter_mut())
        {
            o.reward = o.reward * c;
        }
        out
    }
}

/// Deterministic policy: one action label per non-terminal state, `None`
/// on terminals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<Option<usize>>);

impl Policy {
    pub fn action(&self, s: usize) -> Option<usize> {
        self.0.get(s).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest-index available action everywhere.
    pub fn first_available<T: Scalar>(mdp: &TabularMdp<T>) -> Self {
        Policy(
            (0..mdp.n_states())
                .map(|s| {
                    if mdp.terminal[s] {
                        None
                    } else {
                        mdp.actions[s].first().map(|m| m.action)
                    }
                })
                .collect(),
        )
    }
}

/// Per-state Q values as `(action, value)` in increasing action order.
pub type QTable<T> = Vec<Vec<(usize, T)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub values: Vec<T>,
    pub sweeps: usize,
    /// Sup-norm change of every sweep.
    pub deltas: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolicySolution<T> {
    pub policy: Policy,
    pub values: Vec<T>,
    pub q: QTable<T>,
    pub evaluation_sweeps: usize,
    pub improvements: usize,
    pub converged: bool,
}

fn check_policy<'a, T: Scalar>(
    mdp: &'a TabularMdp<T>,
    policy: &Policy,
) -> Result<Vec<Option<&'a ActionModel<T>>>> {
    if policy.len() != mdp.n_states() {
        return Err(Error::arg(format!(
            "policy covers {} states, MDP has {}",
            policy.len(),
            mdp.n_states()
        )));
    }
    (0..mdp.n_states())
        .map(|s| {
            if mdp.terminal[s] {
                return Ok(None);
            }
            let a = policy
                .action(s)
                .ok_or_else(|| Error::arg(format!("policy has no action for state {s}")))?;
            mdp.find_action(s, a)
                .map(Some)
                .ok_or_else(|| Error::arg(format!("action {a} is not available in state {s}")))
        })
        .collect()
}

/// Synchronous sweeps `v_{k+1}(s) = R(s, π(s)) + γ Σ P v_k(s')` from `init`
/// (zeros when `None`) until the sup-norm change drops below `epsilon`.
pub fn policy_evaluation<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy,
    epsilon: T,
    init: Option<&[T]>,
) -> Result<Evaluation<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let chosen = check_policy(mdp, policy)?;
    let mut values = match init {
        Some(v) if v.len() == mdp.n_states() => v.to_vec(),
        Some(v) => {
            return Err(Error::arg(format!(
                "initial values cover {} states, MDP has {}",
                v.len(),
                mdp.n_states()
            )))
        }
        None => vec![T::zero(); mdp.n_states()],
    };
    for (s, t) in mdp.terminal.iter().enumerate() {
        if *t {
            values[s] = T::zero();
        }
    }
    let mut deltas = Vec::new();
    loop {
        let next: Vec<T> = chosen
            .par_iter()
            .map(|m| match m {
                Some(m) => m.backup(mdp.gamma, &values),
                None => T::zero(),
            })
            .collect();
        let delta = values
            .iter()
            .zip(&next)
            .fold(T::zero(), |d, (&a, &b)| d.max((a - b).abs()));
        values = next;
        deltas.push(delta);
        if delta < epsilon {
            break;
        }
        if deltas.len() >= MAX_SWEEPS {
            return Err(Error::NonConvergence(0));
        }
    }
    Ok(Evaluation {
        values,
        sweeps: deltas.len(),
        deltas,
    })
}

/// `Q(s, a) = R_s^a + γ Σ_{s'} P(s, a, s') V(s')` for every available pair.
pub fn q_from_v<T: Scalar>(mdp: &TabularMdp<T>, values: &[T]) -> QTable<T> {
    mdp.actions
        .iter()
        .map(|acts| {
            acts.iter()
                .map(|m| (m.action, m.backup(mdp.gamma, values)))
                .collect()
        })
        .collect()
}

/// Argmax of `Q(s, ·)` per state, lowest action index on ties.
pub fn greedy_improve<T: Scalar>(mdp: &TabularMdp<T>, q: &QTable<T>) -> Policy {
    Policy(
        (0..mdp.n_states())
            .map(|s| {
                if mdp.terminal[s] {
                    return None;
                }
                q[s].iter()
                    .fold(None, |best: Option<(usize, T)>, &(a, v)| match best {
                        Some((ba, bv)) if bv > v || (bv == v && ba < a) => Some((ba, bv)),
                        _ => Some((a, v)),
                    })
                    .map(|(a, _)| a)
            })
            .collect(),
    )
}

/// Policy iteration from `initial` (lowest-index actions when `None`).
///
/// A state keeps its current action whenever that action is still a
/// maximizer of Q, so the loop cannot cycle between exactly tied actions.
/// Stops once an improvement round changes no action.
pub fn policy_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    epsilon: T,
    initial: Option<&Policy>,
) -> Result<PolicySolution<T>> {
    let mut policy = match initial {
        Some(p) => p.clone(),
        None => Policy::first_available(mdp),
    };
    let mut values: Option<Vec<T>> = None;
    let mut sweeps = 0;
    for round in 1..=MAX_IMPROVEMENTS {
        let eval = policy_evaluation(mdp, &policy, epsilon, values.as_deref())?;
        sweeps += eval.sweeps;
        let q = q_from_v(mdp, &eval.values);
        let greedy = greedy_improve(mdp, &q);
        let mut changed = false;
        let next = Policy(
            (0..mdp.n_states())
                .map(|s| {
                    let (Some(cur), Some(best)) = (policy.action(s), greedy.action(s)) else {
                        return greedy.action(s);
                    };
                    let qv = |a: usize| q[s].iter().find(|(b, _)| *b == a).map(|&(_, v)| v);
                    match (qv(cur), qv(best)) {
                        (Some(vc), Some(vb)) if vc >= vb => Some(cur),
                        _ => {
                            changed |= cur != best;
                            Some(best)
                        }
                    }
                })
                .collect(),
        );
        if !changed {
            return Ok(PolicySolution {
                policy,
                values: eval.values,
                q,
                evaluation_sweeps: sweeps,
                improvements: round,
                converged: true,
            });
        }
        policy = next;
        values = Some(eval.values);
    }
    Err(Error::NonConvergence(MAX_IMPROVEMENTS))
}

/// Evaluates a fixed policy and packages it like a policy-iteration result.
pub fn solve_fixed_policy<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy,
    epsilon: T,
) -> Result<PolicySolution<T>> {
    let eval = policy_evaluation(mdp, policy, epsilon, None)?;
    let q = q_from_v(mdp, &eval.values);
    Ok(PolicySolution {
        policy: policy.clone(),
        values: eval.values,
        q,
        evaluation_sweeps: eval.sweeps,
        improvements: 0,
        converged: true,
    })
}

/// `Σ_s w(s) V(s)` over the given `(state, weight)` pairs. Weights must lie
/// on non-terminal states and sum to one.
pub fn weighted_return<T: Scalar>(
    mdp: &TabularMdp<T>,
    values: &[T],
    weights: &[(usize, T)],
) -> Result<T> {
    let mut total = T::zero();
    let mut mass = T::zero();
    for &(s, w) in weights {
        if s >= mdp.n_states() || mdp.terminal[s] {
            return Err(Error::arg(format!(
                "weight on unknown or terminal state {s}"
            )));
        }
        if w < T::zero() {
            return Err(Error::arg(format!("negative weight on state {s}")));
        }
        total = total + w * values[s];
        mass = mass + w;
    }
    if (mass - T::one()).abs() > T::of(1e-6) {
        return Err(Error::arg(format!(
            "state weights sum to {mass}, expected 1"
        )));
    }
    Ok(total)
}

pub fn evaluate_policy_return<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy,
    weights: &[(usize, T)],
    epsilon: T,
) -> Result<T> {
    let eval = policy_evaluation(mdp, policy, epsilon, None)?;
    weighted_return(mdp, &eval.values, weights)
}
