//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use glyrl::calib::EvaluationReport;
use glyrl::cohort::{
    apply_normalization, fit_normalization, impute_series, write_cohort, CovariateSchema,
    FeatureLayout, Gender, GlucoseSource, HourRecord, IcuUnit, PatientSeries, StaticCovariates,
};
use glyrl::config::{PipelineConfig, Representation};
use glyrl::encoder::{bernoulli_kl, loss_gradient, loss_parts, EncoderParams, SparsityConfig};
use glyrl::mdp::{
    death_state, estimate_mdp, read_mdp, survive_state, ActionSpace, Step, Trajectory,
};
use glyrl::pipeline::{self, run_pipeline};
use glyrl::solver::{
    policy_iteration, solve_fixed_policy, weighted_return, ActionModel, Outcome, Policy, TabularMdp,
};
use glyrl::synthgen::{generate, GeneratorConfig, SyntheticCohort};
use glyrl::{cluster, table};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.9;
const ORACLE_TOL: f64 = 1e-10;
const DP_AGREEMENT: f64 = 1e-6;
const DOMINANCE_SLACK: f64 = 1e-3;
const HAND_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const FD_MAX_REL: f64 = 1e-4;
const KMEANS_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-9;
const MIN_IMPROVEMENT: f64 = 0.02;
const MIN_AGREEMENT: f64 = 0.90;
const ANCHOR_TOL: f64 = 0.02;
const END_TO_END_PATIENTS: usize = 2000;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir"))
        .path()
}

// ---------------------------------------------------------------------------
// Synthetic pipeline runs shared by several criteria.

struct SynthRun {
    label: String,
    dir: PathBuf,
    cohort: SyntheticCohort,
    report: EvaluationReport,
}

fn synth_config(representation: Representation, k: usize, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg.representation = representation;
    cfg.preprocessing.state_statics = Vec::new();
    cfg.clustering.k = k;
    cfg.clustering.n_init = 3;
    cfg
}

fn run_synthetic(
    label: &str,
    gen: &GeneratorConfig,
    cfg: &PipelineConfig,
) -> Result<SynthRun, String> {
    let dir = scratch().join(label);
    fs::create_dir_all(&dir).map_err(err)?;
    let cohort = generate(gen).map_err(err)?;
    let csv = dir.join("cohort.csv");
    let mut f = fs::File::create(&csv).map_err(err)?;
    write_cohort(&mut f, &cohort.series, &gen.covariates).map_err(err)?;
    let out = dir.join("out");
    let run = run_pipeline(cfg, &csv, &out).map_err(err)?;
    Ok(SynthRun {
        label: label.to_string(),
        dir: out,
        cohort,
        report: run.report,
    })
}

fn main_run() -> &'static Result<SynthRun, String> {
    static RUN: OnceLock<Result<SynthRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let gen = GeneratorConfig::planted(END_TO_END_PATIENTS, 2024);
        run_synthetic(
            "planted-raw",
            &gen,
            &synth_config(Representation::Raw, gen.n_latent_states, 7),
        )
    })
}

fn main_run_ok() -> Result<&'static SynthRun, String> {
    main_run()
        .as_ref()
        .map_err(|e| format!("synthetic pipeline run failed: {e}"))
}

// ---------------------------------------------------------------------------
// Criterion 1

const REPORT_KEYS: [&str; 10] = [
    "config_digest",
    "cohort_mortality",
    "mortality_mapping",
    "n_test_patients",
    "optimal",
    "real",
    "representation",
    "sanity_anchor",
    "seed",
    "estimated_mortality",
];

fn key_set(v: &serde_json::Value, out: &mut Vec<String>) {
    if let Some(map) = v.as_object() {
        for (k, child) in map {
            out.push(k.clone());
            key_set(child, out);
        }
    }
}

fn criterion_1() -> Check {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    ensure(text.contains("MIMIC-III"), || {
        "README does not mention MIMIC-III".into()
    })?;
    ensure(text.contains("5,565"), || {
        "README does not mention the 5,565-patient cohort".into()
    })?;
    ensure(text.contains("cannot be reproduced"), || {
        "README does not state that the published numbers cannot be reproduced".into()
    })?;

    // A cohort shaped like the real extract: statics, non-blood glucose
    // readings to mask, missing covariates. Default config, untouched.
    let mut gen = GeneratorConfig::planted(600, 99);
    gen.missing_rate = 0.03;
    gen.other_source_rate = 0.1;
    let dir = scratch().join("mimic-shaped");
    fs::create_dir_all(&dir).map_err(err)?;
    let cohort = generate(&gen).map_err(err)?;
    let csv = dir.join("cohort.csv");
    write_cohort(
        fs::File::create(&csv).map_err(err)?,
        &cohort.series,
        &gen.covariates,
    )
    .map_err(err)?;

    let mut shapes = Vec::new();
    for rep in [Representation::Raw, Representation::SparseAe] {
        let cfg = PipelineConfig {
            representation: rep,
            ..PipelineConfig::default()
        };
        let out = dir.join(rep.as_str());
        run_pipeline(&cfg, &csv, &out).map_err(|e| format!("{rep}: {e}"))?;
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(pipeline::REPORT)).map_err(err)?)
                .map_err(err)?;
        let mut keys = Vec::new();
        key_set(&json, &mut keys);
        for k in REPORT_KEYS {
            ensure(keys.iter().any(|x| x == k), || {
                format!("{rep} report lacks key {k}")
            })?;
        }
        keys.sort();
        shapes.push(keys);
        ensure(out.join(pipeline::CURVE_CSV).exists(), || {
            format!("{rep}: curve.csv missing")
        })?;
    }
    ensure(shapes[0] == shapes[1], || {
        "raw and sparse_ae reports differ in schema".into()
    })?;
    Ok("README states non-reproducibility; default config runs on a MIMIC-shaped CSV with both representations".into())
}

// ---------------------------------------------------------------------------
// Criteria 2 and 3: random MDPs

fn random_mdp(rng: &mut ChaCha8Rng) -> TabularMdp<f64> {
    let n = rng.random_range(1..=20usize);
    let (survive, death) = (n, n + 1);
    let total = n + 2;
    let mut actions = Vec::with_capacity(total);
    for _ in 0..n {
        let mut ids: Vec<usize> = (0..5).collect();
        ids.shuffle(rng);
        let mut ids: Vec<usize> = ids[..rng.random_range(1..=5)].to_vec();
        ids.sort_unstable();
        let models = ids
            .into_iter()
            .map(|action| {
                let mut next: Vec<usize> = (0..total).collect();
                next.shuffle(rng);
                next.truncate(rng.random_range(1..=4usize.min(total)));
                let w: Vec<f64> = next.iter().map(|_| rng.random_range(0.05..1.0)).collect();
                let sum: f64 = w.iter().sum();
                let outcomes = next
                    .iter()
                    .zip(&w)
                    .map(|(&s, &wi)| Outcome {
                        next: s,
                        prob: wi / sum,
                        reward: if s == survive {
                            100.0
                        } else if s == death {
                            -100.0
                        } else {
                            0.0
                        },
                    })
                    .collect();
                ActionModel { action, outcomes }
            })
            .collect();
        actions.push(models);
    }
    actions.push(Vec::new());
    actions.push(Vec::new());
    TabularMdp {
        gamma: GAMMA,
        terminal: (0..total).map(|s| s >= n).collect(),
        actions,
    }
}

/// Bellman optimality sweeps over dense arrays, written separately from the
/// solver under test.
fn value_iteration_oracle(mdp: &TabularMdp<f64>, tol: f64) -> Vec<f64> {
    let n = mdp.terminal.len();
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            next[s] = mdp.actions[s]
                .iter()
                .map(|a| {
                    a.outcomes
                        .iter()
                        .map(|o| o.prob * (o.reward + mdp.gamma * v[o.next]))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < tol {
            return v;
        }
    }
}

fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd9);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mdp = random_mdp(&mut rng);
        let oracle = value_iteration_oracle(&mdp, ORACLE_TOL);
        // ε-truncated evaluation carries error up to γε/(1−γ); 1e-9 keeps it
        // far below the 1e-6 comparison.
        let sol = policy_iteration(&mdp, 1e-9, None).map_err(err)?;
        let gap = sup_norm(&sol.values, &oracle);
        worst = worst.max(gap);
        ensure(gap <= DP_AGREEMENT, || {
            format!("MDP {i}: sup-norm gap {gap:.3e}")
        })?;
    }
    Ok(format!(
        "100 random MDPs, worst sup-norm gap {worst:.2e} (limit {DP_AGREEMENT:.0e})"
    ))
}

fn dominance(
    mdp: &TabularMdp<f64>,
    real: &Policy,
    weights: &[(usize, f64)],
    what: &str,
) -> Result<f64, String> {
    let eps = glyrl::solver::DEFAULT_EPSILON;
    let r = solve_fixed_policy(mdp, real, eps).map_err(err)?;
    let o = policy_iteration(mdp, eps, Some(real)).map_err(err)?;
    for s in 0..mdp.n_states() {
        ensure(o.values[s] >= r.values[s] - DOMINANCE_SLACK, || {
            format!(
                "{what}: state {s} V* = {} < V^r = {}",
                o.values[s], r.values[s]
            )
        })?;
    }
    let ro = weighted_return(mdp, &o.values, weights).map_err(err)?;
    let rr = weighted_return(mdp, &r.values, weights).map_err(err)?;
    ensure(ro >= rr - DOMINANCE_SLACK, || {
        format!("{what}: mean return {ro} < {rr}")
    })?;
    Ok(ro - rr)
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3d);
    for i in 0..100 {
        let mdp = random_mdp(&mut rng);
        let real = Policy(
            mdp.actions
                .iter()
                .map(|acts| {
                    (!acts.is_empty()).then(|| acts[rng.random_range(0..acts.len())].action)
                })
                .collect(),
        );
        let mut weights: Vec<(usize, f64)> = (0..mdp.n_states())
            .filter(|&s| !mdp.terminal[s])
            .map(|s| (s, rng.random_range(0.01..1.0)))
            .collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        weights.iter_mut().for_each(|w| w.1 /= total);
        dominance(&mdp, &real, &weights, &format!("random MDP {i}"))?;
    }

    let run = main_run_ok()?;
    let path = run.dir.join(pipeline::MDP);
    let mdp_model: glyrl::MdpModel = read_mdp(
        std::io::BufReader::new(fs::File::open(&path).map_err(err)?),
        &path,
    )
    .map_err(err)?;
    let mdp = mdp_model.to_tabular();
    let trajs = table::read_trajectories(
        fs::File::open(run.dir.join(pipeline::TRAJECTORIES)).map_err(err)?,
    )
    .map_err(err)?;
    let test: Vec<_> = trajs
        .into_iter()
        .filter(|t| t.split == glyrl::cohort::SplitSide::Test)
        .collect();
    let weights = glyrl::calib::visitation::<f64>(&test, mdp.n_states()).map_err(err)?;
    let gain = dominance(
        &mdp,
        &glyrl::mdp::extract_real_policy(&mdp_model),
        &weights,
        "synthetic MDP",
    )?;
    ensure(
        run.report.optimal.expected_return >= run.report.real.expected_return,
        || "report: optimal mean return below real".into(),
    )?;
    Ok(format!(
        "100 random MDPs and the synthetic-cohort MDP (mean return gain {gain:.2})"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4

fn det(action: usize, next: usize, reward: f64) -> ActionModel<f64> {
    ActionModel {
        action,
        outcomes: vec![Outcome {
            next,
            prob: 1.0,
            reward,
        }],
    }
}

fn criterion_4() -> Check {
    // 0 = s0, 1 = s1, 2 = s2, 3 = SURVIVE, 4 = DEATH
    let mdp = TabularMdp {
        gamma: GAMMA,
        terminal: vec![false, false, false, true, true],
        actions: vec![
            vec![det(0, 1, 0.0)],
            vec![det(0, 3, 100.0)],
            vec![det(0, 4, -100.0)],
            vec![],
            vec![],
        ],
    };
    let eps = glyrl::solver::DEFAULT_EPSILON;
    let sol = policy_iteration(&mdp, eps, None).map_err(err)?;
    let expected = [90.0, 100.0, -100.0, 0.0, 0.0];
    let gap = sup_norm(&sol.values, &expected);
    ensure(gap <= HAND_TOL, || {
        format!("values {:?}, gap {gap:e}", sol.values)
    })?;
    let q0 = sol.q[0][0].1;
    ensure((q0 - 90.0).abs() <= HAND_TOL, || format!("Q(s0, a) = {q0}"))?;

    // Two-action dominance: SURVIVE vs DEATH.
    let choice = TabularMdp {
        gamma: GAMMA,
        terminal: vec![false, true, true],
        actions: vec![vec![det(1, 2, -100.0), det(4, 1, 100.0)], vec![], vec![]],
    };
    let sol = policy_iteration(&choice, eps, None).map_err(err)?;
    ensure(
        sol.policy.action(0) == Some(4) && (sol.values[0] - 100.0).abs() <= HAND_TOL,
        || {
            format!(
                "dominance case picked {:?} with V = {}",
                sol.policy.action(0),
                sol.values[0]
            )
        },
    )?;
    Ok(format!(
        "chain V = (90, 100, -100) within {gap:.1e}; Q(s0) = {q0:.6}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e);
    let mut worst: f64 = 0.0;
    let configs = 12;
    for c in 0..configs {
        let input_dim = rng.random_range(2..=7);
        let latent_dim = rng.random_range(1..=6);
        let batch = rng.random_range(1..=6);
        let sparsity = SparsityConfig {
            target: rng.random_range(0.02..0.3),
            beta: rng.random_range(0.0..5.0),
        };
        let params = EncoderParams::<f64>::init(input_dim, latent_dim, &mut rng);
        let data: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input_dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let grad = loss_gradient(&data, &params, &sparsity).map_err(err)?;
        let flat_grad: Vec<f64> = grad
            .buffers()
            .iter()
            .flat_map(|b| b.iter().copied())
            .collect();
        let mut idx = 0;
        for buf in 0..4 {
            for j in 0..params.buffers()[buf].len() {
                let mut plus = params.clone();
                plus.buffers_mut()[buf][j] += FD_STEP;
                let mut minus = params.clone();
                minus.buffers_mut()[buf][j] -= FD_STEP;
                let lp = loss_parts(&data, &plus, &sparsity).map_err(err)?.total();
                let lm = loss_parts(&data, &minus, &sparsity).map_err(err)?.total();
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                let analytic = flat_grad[idx];
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / scale;
                worst = worst.max(rel);
                ensure(rel <= FD_MAX_REL, || {
                    format!("config {c}, buffer {buf}[{j}]: analytic {analytic:e} vs numeric {numeric:e}")
                })?;
                idx += 1;
            }
        }
    }
    for d in [0.01, 0.05, 0.1, 0.5, 0.9] {
        let kl = bernoulli_kl(d, d);
        ensure(kl == 0.0, || format!("KL(D || D) = {kl:e} at D = {d}"))?;
    }
    Ok(format!(
        "{configs} configurations, max relative error {worst:.2e}; KL(D||D) = 0 exactly"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6

fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let mut inertia = 0.0;
            for j in 0..k {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == j)
                    .map(|(p, _)| p)
                    .collect();
                let dim = points[0].len();
                let centre: Vec<f64> = (0..dim)
                    .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                    .collect();
                inertia += members
                    .iter()
                    .map(|p| {
                        p.iter()
                            .zip(&centre)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>();
            }
            best = best.min(inertia);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b);
    let mut fits = 0;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = rng.random_range(3..=8);
        let k = rng.random_range(1..=3usize.min(n));
        let dim = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let cfg = glyrl::cluster::KMeansConfig {
            k,
            max_iters: 300,
            tol: 1e-12,
            n_init: 20,
        };
        // Every restart is checked for monotone inertia, not just the winner.
        for run in 0..cfg.n_init {
            let fit = cluster::kmeans_fit::<f64, _>(
                &points,
                k,
                1000 * i + run as u64,
                cfg.max_iters,
                cfg.tol,
            )
            .map_err(err)?;
            fits += 1;
            ensure(
                fit.model.inertia_history.windows(2).all(|w| w[1] <= w[0]),
                || format!("instance {i}: inertia rose {:?}", fit.model.inertia_history),
            )?;
        }
        let best = cluster::kmeans_fit_best::<f64, _>(&points, &cfg, i).map_err(err)?;
        let oracle = brute_force_inertia(&points, k);
        let gap = (best.model.inertia - oracle).abs();
        worst = worst.max(gap);
        ensure(gap <= KMEANS_TOL, || {
            format!(
                "instance {i} (n = {n}, k = {k}): inertia {} vs optimum {oracle}",
                best.model.inertia
            )
        })?;
    }
    Ok(format!(
        "20 instances match the brute-force optimum (worst gap {worst:.1e}); {fits} fits monotone"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 7

fn check_mdp_integrity(mdp: &glyrl::MdpModel, what: &str) -> Result<usize, String> {
    let mut rows = 0;
    for s in 0..mdp.k {
        for &a in &mdp.available[s] {
            let p = mdp
                .transitions(s, a)
                .ok_or_else(|| format!("{what}: ({s}, {a}) has no row"))?;
            let sum: f64 = p.iter().map(|x| x.1).sum();
            ensure((sum - 1.0).abs() <= ROW_SUM_TOL, || {
                format!("{what}: row ({s}, {a}) sums to {sum}")
            })?;
            rows += 1;
        }
    }
    let tab = mdp.to_tabular();
    let (surv, death) = (survive_state(mdp.k), death_state(mdp.k));
    for acts in &tab.actions {
        for a in acts {
            for o in &a.outcomes {
                let expected = if o.next == surv {
                    100.0
                } else if o.next == death {
                    -100.0
                } else {
                    0.0
                };
                ensure(o.reward == expected, || {
                    format!("{what}: reward {} into state {}", o.reward, o.next)
                })?;
            }
        }
    }
    Ok(rows)
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a);
    let k = 6;
    let space = ActionSpace::default();
    let trajs: Vec<Trajectory> = (0..300)
        .map(|i| {
            let died = rng.random_bool(0.3);
            let len = rng.random_range(1..=12);
            let states: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
            let steps = (0..len)
                .map(|t| Step {
                    state: states[t],
                    action: rng.random_range(0..space.n_actions()),
                    next: states.get(t + 1).copied().unwrap_or(if died {
                        death_state(k)
                    } else {
                        survive_state(k)
                    }),
                })
                .collect();
            Trajectory {
                patient_id: format!("p{i}"),
                split: glyrl::cohort::SplitSide::Train,
                died,
                steps,
            }
        })
        .collect();
    let mdp = estimate_mdp::<f64>(&trajs, k, 1, GAMMA, space, "raw").map_err(err)?;
    let mut tally: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    for t in &trajs {
        for s in &t.steps {
            *tally.entry((s.state, s.action, s.next)).or_default() += 1;
        }
    }
    let steps: u64 = trajs.iter().map(|t| t.steps.len() as u64).sum();
    let counted: u64 = mdp.counts.values().sum();
    ensure(counted == steps, || {
        format!("{counted} counted transitions for {steps} steps")
    })?;
    ensure(mdp.counts == tally, || {
        "per-triple counts differ from a direct tally".into()
    })?;
    let rows = check_mdp_integrity(&mdp, "random trajectories")?;

    let run = main_run_ok()?;
    let path = run.dir.join(pipeline::MDP);
    let synth: glyrl::MdpModel = read_mdp(
        std::io::BufReader::new(fs::File::open(&path).map_err(err)?),
        &path,
    )
    .map_err(err)?;
    let synth_rows = check_mdp_integrity(&synth, "synthetic cohort")?;
    Ok(format!("{rows} + {synth_rows} counted rows sum to 1; {counted} transitions conserved; rewards ±100 into terminals"))
}

// ---------------------------------------------------------------------------
// Criterion 8

/// Majority latent state per cluster over all assigned patient-hours.
fn cluster_to_latent(run: &SynthRun, k: usize) -> Result<Vec<Option<usize>>, String> {
    let latent: HashMap<&str, &Vec<usize>> = run
        .cohort
        .ground_truth
        .latent_paths
        .iter()
        .map(|p| (p.patient_id.as_str(), &p.states))
        .collect();
    let rows =
        table::read_assignments(fs::File::open(run.dir.join(pipeline::ASSIGNMENTS)).map_err(err)?)
            .map_err(err)?;
    let l = run.cohort.ground_truth.optimal_values.len();
    let mut votes = vec![vec![0usize; l]; k];
    for (id, hour, state) in rows {
        let path = latent
            .get(id.as_str())
            .ok_or_else(|| format!("unknown patient {id}"))?;
        votes[state][path[hour as usize]] += 1;
    }
    Ok(votes
        .iter()
        .map(|v| {
            let best = (0..l).max_by_key(|&i| (v[i], std::cmp::Reverse(i)))?;
            (v[best] > 0).then_some(best)
        })
        .collect())
}

fn criterion_8() -> Check {
    let run = main_run_ok()?;
    let r = &run.report;
    let drop = r.real.estimated_mortality - r.optimal.estimated_mortality;
    ensure(drop >= MIN_IMPROVEMENT, || {
        format!(
            "estimated mortality real {:.4} vs optimal {:.4}: drop {:.4} < {MIN_IMPROVEMENT}",
            r.real.estimated_mortality, r.optimal.estimated_mortality, drop
        )
    })?;
    let sol = pipeline::read_solution(&run.dir.join(pipeline::SOLUTION_DIR)).map_err(err)?;
    let k = sol.meta.n_states - 2;
    let map = cluster_to_latent(run, k)?;
    let trajs = table::read_trajectories(
        fs::File::open(run.dir.join(pipeline::TRAJECTORIES)).map_err(err)?,
    )
    .map_err(err)?;
    let mut visited = vec![false; k];
    for t in &trajs {
        for s in &t.steps {
            visited[s.state] = true;
        }
    }
    let truth = &run.cohort.ground_truth.optimal_policy;
    let (mut agree, mut total) = (0, 0);
    for c in (0..k).filter(|&c| visited[c]) {
        total += 1;
        if let Some(l) = map[c] {
            if sol.optimal.0.action(c) == truth.action(l) {
                agree += 1;
            }
        }
    }
    let frac = agree as f64 / total.max(1) as f64;
    ensure(frac >= MIN_AGREEMENT, || {
        format!("policy agreement {agree}/{total} = {frac:.3}")
    })?;
    Ok(format!(
        "{} patients: estimated mortality {:.2}% -> {:.2}% (drop {:.2} pp); policy agreement {agree}/{total} visited states",
        END_TO_END_PATIENTS,
        100.0 * r.real.estimated_mortality,
        100.0 * r.optimal.estimated_mortality,
        100.0 * drop,
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9

fn criterion_9() -> Check {
    let mut runs: Vec<(String, EvaluationReport)> = Vec::new();
    let main = main_run_ok()?;
    runs.push((main.label.clone(), main.report.clone()));
    for (i, seed) in [31u64, 32, 33].into_iter().enumerate() {
        let gen = GeneratorConfig::planted(800, seed);
        let rep = if i == 2 {
            Representation::SparseAe
        } else {
            Representation::Raw
        };
        let k = if i == 1 { 12 } else { gen.n_latent_states };
        let mut cfg = synth_config(rep, k, seed);
        if rep == Representation::SparseAe {
            cfg.encoder.latent_dim = 8;
        }
        let run = run_synthetic(&format!("anchor-{seed}"), &gen, &cfg)?;
        runs.push((run.label.clone(), run.report));
    }
    let mut worst: f64 = 0.0;
    for (label, r) in &runs {
        let gap = (r.sanity_anchor.train_estimated_mortality
            - r.sanity_anchor.train_empirical_mortality)
            .abs();
        worst = worst.max(gap);
        ensure(gap <= ANCHOR_TOL, || {
            format!(
                "{label}: estimated {:.4} vs empirical {:.4}",
                r.sanity_anchor.train_estimated_mortality,
                r.sanity_anchor.train_empirical_mortality
            )
        })?;
    }
    Ok(format!(
        "{} synthetic runs, worst train gap {:.3} pp",
        runs.len(),
        100.0 * worst
    ))
}

// ---------------------------------------------------------------------------
// Criterion 10

fn criterion_10() -> Check {
    let gen = GeneratorConfig::planted(400, 5);
    let mut cfg = synth_config(Representation::SparseAe, 8, 3);
    cfg.encoder.latent_dim = 8;
    cfg.encoder.epochs = 10;
    let first = run_synthetic("determinism-a", &gen, &cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(err)?;
    let second = pool.install(|| run_synthetic("determinism-b", &gen, &cfg))?;
    let mut files = vec![
        pipeline::REPORT,
        pipeline::CURVE_CSV,
        pipeline::CURVE_JSON,
        pipeline::ENCODER_MODEL,
        pipeline::CLUSTER_MODEL,
        pipeline::MDP,
        pipeline::STATES,
        pipeline::LATENTS,
        pipeline::MANIFEST,
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    files.push(format!(
        "{}/{}",
        pipeline::SOLUTION_DIR,
        pipeline::OPTIMAL_POLICY
    ));
    for f in &files {
        let a = fs::read(first.dir.join(f)).map_err(err)?;
        let b = fs::read(second.dir.join(f)).map_err(err)?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across runs (second run on one thread)",
        files.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 11

fn statics() -> StaticCovariates {
    StaticCovariates {
        age_years: 60.0,
        gender: Gender::Female,
        icu_unit: IcuUnit::Micu,
        sofa_admission: 5,
        elixhauser: 3,
        mech_vent: false,
        intubation: false,
        vasopressor: false,
        hba1c_ge_7: false,
        first_glucose_mgdl: 120.0,
        icd9_codes: Vec::new(),
        admission_meds_diabetic: false,
        history_mentions_diabetes: false,
    }
}

fn patient(id: &str, columns: &[Vec<Option<f64>>]) -> PatientSeries {
    let hours = columns[0].len();
    PatientSeries {
        patient_id: id.into(),
        hours: (0..hours)
            .map(|t| HourRecord {
                hour_index: t as u32,
                covariates: columns.iter().map(|c| c[t]).collect(),
                glucose_mgdl: Some(110.0),
                glucose_source: GlucoseSource::Arterial,
            })
            .collect(),
        statics: statics(),
        alive_at_90d: true,
        diabetic: false,
    }
}

fn criterion_11() -> Check {
    let schema = CovariateSchema(vec!["a".into(), "b".into()]);
    // a: edges missing, interior gap on the line 2t + 1; b: gap of length 3.
    let a = vec![None, Some(3.0), None, None, Some(9.0), None];
    let b = vec![Some(10.0), None, None, None, Some(2.0), Some(4.0)];
    let filled = impute_series(patient("p", &[a, b]), &schema).map_err(err)?;
    let col = |j: usize| {
        filled
            .hours
            .iter()
            .map(|h| h.covariates[j].unwrap())
            .collect::<Vec<f64>>()
    };
    ensure(col(0) == [3.0, 3.0, 5.0, 7.0, 9.0, 9.0], || {
        format!("column a imputed as {:?}", col(0))
    })?;
    ensure(col(1) == [10.0, 8.0, 6.0, 4.0, 2.0, 4.0], || {
        format!("column b imputed as {:?}", col(1))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xb);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let len = rng.random_range(3..20);
        let (lo, hi) = (0, len - 1);
        let v0: f64 = rng.random_range(-50.0..50.0);
        let slope: f64 = rng.random_range(-5.0..5.0);
        let line: Vec<f64> = (0..len).map(|t| v0 + slope * t as f64).collect();
        let mut col: Vec<Option<f64>> = line.iter().map(|&x| Some(x)).collect();
        for t in lo + 1..hi {
            if rng.random_bool(0.5) {
                col[t] = None;
            }
        }
        let filled =
            impute_series(patient("q", &[col]), &CovariateSchema(vec!["a".into()])).map_err(err)?;
        for (t, h) in filled.hours.iter().enumerate() {
            worst = worst.max((h.covariates[0].unwrap() - line[t]).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("random linear gaps recovered within {worst:e}")
    })?;

    let layout = FeatureLayout {
        covariates: schema.clone(),
        statics: glyrl::cohort::StaticFeature::ALL.to_vec(),
    };
    let train: Vec<PatientSeries> = (0..5)
        .map(|i| {
            let a: Vec<Option<f64>> = (0..4).map(|_| Some(rng.random_range(0.0..10.0))).collect();
            let b: Vec<Option<f64>> = (0..4).map(|_| Some(rng.random_range(-3.0..3.0))).collect();
            let mut p = patient(&format!("t{i}"), &[a, b]);
            p.statics.age_years = 20.0 + 10.0 * i as f64;
            p
        })
        .collect();
    let spec = fit_normalization(&train, &layout);
    let outlier = patient(
        "o",
        &[
            vec![Some(-100.0), Some(100.0)],
            vec![Some(50.0), Some(-50.0)],
        ],
    );
    let mut cells = 0;
    for p in train.iter().chain(std::iter::once(&outlier)) {
        let norm = apply_normalization(p, &layout, &spec).map_err(err)?;
        for row in &norm.states {
            for &x in row {
                cells += 1;
                ensure((0.0..=1.0).contains(&x), || {
                    format!("normalized cell {x} outside [0, 1]")
                })?;
            }
        }
    }
    Ok(format!(
        "hand cases exact; 200 random lines within {worst:.0e}; {cells} normalized cells in [0, 1]"
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 2,
            name: "DP oracle equivalence",
            limit: Some(Duration::from_secs(10)),
            run: criterion_2,
        },
        Criterion {
            id: 4,
            name: "hand-solved Bellman cases",
            limit: Some(Duration::from_secs(1)),
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "sparse-AE gradient check",
            limit: Some(Duration::from_secs(30)),
            run: criterion_5,
        },
        Criterion {
            id: 6,
            name: "k-means correctness",
            limit: Some(Duration::from_secs(10)),
            run: criterion_6,
        },
        Criterion {
            id: 11,
            name: "imputation/normalization exactness",
            limit: Some(Duration::from_secs(1)),
            run: criterion_11,
        },
        Criterion {
            id: 8,
            name: "end-to-end synthetic improvement",
            limit: Some(Duration::from_secs(120)),
            run: || {
                main_run();
                criterion_8()
            },
        },
        Criterion {
            id: 3,
            name: "optimality dominance",
            limit: Some(Duration::from_secs(10)),
            run: criterion_3,
        },
        Criterion {
            id: 7,
            name: "MDP integrity",
            limit: None,
            run: criterion_7,
        },
        Criterion {
            id: 9,
            name: "calibration sanity anchor",
            limit: None,
            run: criterion_9,
        },
        Criterion {
            id: 10,
            name: "determinism",
            limit: None,
            run: criterion_10,
        },
        Criterion {
            id: 1,
            name: "desk-scale statement and MIMIC-shaped input",
            limit: None,
            run: criterion_1,
        },
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        let line = match &outcome {
            Ok(detail) => format!(
                "PASS  criterion {:>2}  {}  [{elapsed:.2?}]  {detail}",
                c.id, c.name
            ),
            Err(detail) => {
                failed += 1;
                format!(
                    "FAIL  criterion {:>2}  {}  [{elapsed:.2?}]  {detail}",
                    c.id, c.name
                )
            }
        };
        println!("{line}");
        lines.push((c.id, line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nsummary by criterion:");
    for (_, l) in &lines {
        println!("{l}");
    }
    if failed > 0 {
        println!("\n{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("\nall {} criteria passed", criteria.len());
}
