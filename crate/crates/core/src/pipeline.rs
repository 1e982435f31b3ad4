//! Pipeline stages over on-disk artifacts.
//!
//! Every stage reads the files written by earlier stages, so running the
//! stages one by one from the command line produces the same bytes as
//! [`run_pipeline`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calib::{self, CalibrationCurve, EvaluationInputs, EvaluationReport};
use crate::cluster::{kmeans_fit_best, ClusterModel};
use crate::cohort::{
    apply_normalization, filter_cohort, fit_normalization, impute_cohort, parse_cohort,
    split_patients, DroppedPatient, FilterSummary, NormalizationSpec, PatientSeries, SplitSide,
};
use crate::config::{PipelineConfig, Representation};
use crate::encoder::{self, EncoderParams, SparsityConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::mdp::{
    build_trajectories, estimate_mdp, extract_real_policy, read_mdp, write_mdp, AssignedSeries,
};
use crate::solver::{policy_iteration, solve_fixed_policy};
use crate::table::{self, StatePatient, StateTable};

pub const INGEST_SUMMARY: &str = "ingest_summary.json";
pub const NORMALIZATION: &str = "normalization.json";
pub const STATES: &str = "states.csv";
pub const ENCODER_MODEL: &str = "encoder.model";
pub const LATENTS: &str = "latents.csv";
pub const CLUSTER_MODEL: &str = "clusters.model";
pub const ASSIGNMENTS: &str = "assignments.csv";
pub const MDP: &str = "mdp.txt";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const SOLUTION_DIR: &str = "solution";
pub const OPTIMAL_POLICY: &str = "optimal_policy.csv";
pub const OPTIMAL_Q: &str = "optimal_q.csv";
pub const REAL_POLICY: &str = "real_policy.csv";
pub const REAL_Q: &str = "real_q.csv";
pub const SOLUTION_META: &str = "solution.json";
pub const CURVE_JSON: &str = "curve.json";
pub const CURVE_CSV: &str = "curve.csv";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";

const ARTIFACT_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<A: Serialize>(path: &Path, value: &A) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

fn read_json<A: DeserializeOwned>(path: &Path) -> Result<A> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::compat(path, format!("malformed JSON: {e}")))
}

/// Reads an artifact after checking its `format` tag and `version`.
fn read_artifact<A: DeserializeOwned>(path: &Path, format: &str) -> Result<A> {
    let raw: serde_json::Value = read_json(path)?;
    let found = raw
        .get("format")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>");
    if found != format {
        return Err(Error::compat(
            path,
            format!("expected a {format} artifact, found {found}"),
        ));
    }
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(ARTIFACT_VERSION)) {
        return Err(Error::compat(
            path,
            format!("unsupported {format} version {version:?}, expected {ARTIFACT_VERSION}"),
        ));
    }
    serde_json::from_value(raw).map_err(|e| Error::compat(path, e.to_string()))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub filter: FilterSummary,
    pub dropped: Vec<DroppedPatient>,
    pub n_train: usize,
    pub n_test: usize,
    pub stratified: bool,
    pub train_mortality: f64,
    pub test_mortality: f64,
    pub n_features: usize,
}

fn mortality(series: &[PatientSeries]) -> f64 {
    series.iter().filter(|s| s.died()).count() as f64 / series.len().max(1) as f64
}

fn state_rows(
    series: &[PatientSeries],
    side: SplitSide,
    cfg: &PipelineConfig,
    spec: &NormalizationSpec,
) -> Result<Vec<StatePatient<f64>>> {
    let layout = cfg.layout();
    series
        .par_iter()
        .map(|s| {
            let norm = apply_normalization(s, &layout, spec)?;
            Ok(StatePatient {
                patient_id: norm.patient_id,
                split: side,
                died: norm.died,
                hour_index: s.hours.iter().map(|h| h.hour_index).collect(),
                glucose_mgdl: norm.glucose_mgdl,
                rows: norm.states,
            })
        })
        .collect()
}

/// Parse, filter, impute, split and normalize the cohort CSV. Writes the
/// state table, the normalization bounds (fitted on the training split) and a
/// summary of exclusions.
pub fn ingest(cfg: &PipelineConfig, input: &Path, out_dir: &Path) -> Result<IngestSummary> {
    let schema = &cfg.cohort.covariates;
    let parsed = parse_cohort(open(input)?, schema)?;
    let (filtered, filter) = filter_cohort(parsed, &cfg.preprocessing.filter());
    let (imputed, dropped) = impute_cohort(filtered, schema);
    if imputed.len() < 2 {
        return Err(Error::arg(format!(
            "{} patients remain after filtering and imputation; need at least 2",
            imputed.len()
        )));
    }
    let split = split_patients(
        imputed,
        cfg.split.test_fraction,
        cfg.split.stratify,
        cfg.split_seed(),
    )?;
    let layout = cfg.layout();
    let spec = fit_normalization(&split.train, &layout);

    let mut patients = state_rows(&split.train, SplitSide::Train, cfg, &spec)?;
    patients.extend(state_rows(&split.test, SplitSide::Test, cfg, &spec)?);
    let table = StateTable {
        features: layout.names(),
        patients,
    };
    let summary = IngestSummary {
        filter,
        dropped,
        n_train: split.train.len(),
        n_test: split.test.len(),
        stratified: split.stratified,
        train_mortality: mortality(&split.train),
        test_mortality: mortality(&split.test),
        n_features: layout.dim(),
    };
    log::info!(
        "ingest: {} train / {} test patients, {} features",
        summary.n_train,
        summary.n_test,
        summary.n_features
    );

    let path = out_dir.join(STATES);
    let mut w = create(&path)?;
    table::write_state_table(&table, &mut w)?;
    finish(w, &path)?;
    write_json(&out_dir.join(NORMALIZATION), &spec)?;
    write_json(&out_dir.join(INGEST_SUMMARY), &summary)?;
    Ok(summary)
}

fn read_states(path: &Path) -> Result<StateTable<f64>> {
    table::read_state_table(open(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::compat(path, format!("line {line}: {message}")),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderArtifact {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub input_features: Vec<String>,
    pub sparsity: SparsityConfig,
    pub train: TrainConfig,
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub params: EncoderParams<f64>,
}

const ENCODER_FORMAT: &str = "glyrl-encoder";

/// Fits the sparse autoencoder on training rows and writes the model plus the
/// latent table for every patient-hour.
pub fn train_encoder(
    cfg: &PipelineConfig,
    states: &Path,
    out_dir: &Path,
) -> Result<EncoderArtifact> {
    let table = read_states(states)?;
    let train_rows = table.rows_of(SplitSide::Train);
    let train_cfg = cfg.encoder.train_config(cfg.seed);
    let sparsity = cfg.encoder.sparsity();
    let fit = encoder::train::<f64, _>(&train_rows, cfg.encoder.latent_dim, &train_cfg, &sparsity)?;
    log::info!(
        "train-encoder: loss {:.6} -> {:.6} (best epoch {})",
        fit.initial_loss(),
        fit.final_loss(),
        fit.best_epoch
    );
    let names = (0..cfg.encoder.latent_dim)
        .map(|j| format!("z{j}"))
        .collect();
    let latents = table.map_rows(names, |row| fit.params.encode(row))?;

    let artifact = EncoderArtifact {
        format: ENCODER_FORMAT.into(),
        version: ARTIFACT_VERSION,
        scalar: "f64".into(),
        input_features: table.features.clone(),
        sparsity,
        train: train_cfg,
        loss_history: fit.loss_history,
        best_epoch: fit.best_epoch,
        params: fit.params,
    };
    write_json(&out_dir.join(ENCODER_MODEL), &artifact)?;
    let path = out_dir.join(LATENTS);
    let mut w = create(&path)?;
    table::write_state_table(&latents, &mut w)?;
    finish(w, &path)?;
    Ok(artifact)
}

pub fn read_encoder(path: &Path) -> Result<EncoderArtifact> {
    read_artifact(path, ENCODER_FORMAT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub representation: Representation,
    pub features: Vec<String>,
    pub model: ClusterModel<f64>,
}

const CLUSTER_FORMAT: &str = "glyrl-clusters";

/// k-means on the training rows of `input` (the state table, or the latent
/// table in sparse-autoencoder mode), then nearest-centroid assignment of
/// every row.
pub fn cluster(cfg: &PipelineConfig, input: &Path, out_dir: &Path) -> Result<ClusterArtifact> {
    let table = read_states(input)?;
    let train_rows = table.rows_of(SplitSide::Train);
    if train_rows.len() < cfg.clustering.k {
        return Err(Error::arg(format!(
            "k = {} clusters but only {} training rows",
            cfg.clustering.k,
            train_rows.len()
        )));
    }
    let fit = kmeans_fit_best::<f64, _>(&train_rows, &cfg.clustering, cfg.seed)?;
    log::info!(
        "cluster: k = {}, inertia {:.6} after {} iterations (converged: {})",
        fit.model.k,
        fit.model.inertia,
        fit.model.iterations,
        fit.model.converged
    );
    let model = fit.model;
    let assignments: Vec<(String, Vec<u32>, Vec<usize>)> = table
        .patients
        .par_iter()
        .map(|p| {
            let states = p
                .rows
                .iter()
                .map(|r| model.assign(r))
                .collect::<Result<_>>()?;
            Ok((p.patient_id.clone(), p.hour_index.clone(), states))
        })
        .collect::<Result<_>>()?;

    let artifact = ClusterArtifact {
        format: CLUSTER_FORMAT.into(),
        version: ARTIFACT_VERSION,
        scalar: "f64".into(),
        representation: cfg.representation,
        features: table.features.clone(),
        model,
    };
    write_json(&out_dir.join(CLUSTER_MODEL), &artifact)?;
    let path = out_dir.join(ASSIGNMENTS);
    let mut w = create(&path)?;
    table::write_assignments(&assignments, &mut w)?;
    finish(w, &path)?;
    Ok(artifact)
}

pub fn read_clusters(path: &Path) -> Result<ClusterArtifact> {
    read_artifact(path, CLUSTER_FORMAT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSummary {
    pub n_states: usize,
    pub n_train_trajectories: usize,
    pub n_test_trajectories: usize,
    pub dropped: Vec<DroppedPatient>,
}

/// Joins assignments with the state table, builds per-patient trajectories
/// and estimates the MDP from the training trajectories.
pub fn build_mdp(
    cfg: &PipelineConfig,
    states: &Path,
    assignments: &Path,
    clusters: &Path,
    out_dir: &Path,
) -> Result<MdpSummary> {
    let table = read_states(states)?;
    let rows = table::read_assignments(open(assignments)?)?;
    let k = read_clusters(clusters)?.model.k;
    if rows.len() != table.n_rows() {
        return Err(Error::compat(
            assignments,
            format!(
                "{} assignments for {} state rows",
                rows.len(),
                table.n_rows()
            ),
        ));
    }
    let mut it = rows.into_iter();
    let mut series = Vec::with_capacity(table.patients.len());
    for p in &table.patients {
        let mut st = Vec::with_capacity(p.rows.len());
        for &h in &p.hour_index {
            let (id, hour, s) = it.next().expect("counts checked");
            if id != p.patient_id || hour != h {
                return Err(Error::compat(
                    assignments,
                    format!(
                        "row ({id}, {hour}) does not match state table row ({}, {h})",
                        p.patient_id
                    ),
                ));
            }
            st.push(s);
        }
        series.push(AssignedSeries {
            patient_id: p.patient_id.clone(),
            split: p.split,
            died: p.died,
            states: st,
            glucose_mgdl: p.glucose_mgdl.clone(),
        });
    }

    let space = cfg.mdp.action_space()?;
    let (trajectories, dropped) = build_trajectories(&series, k, &space)?;
    let train: Vec<_> = trajectories
        .iter()
        .filter(|t| t.split == SplitSide::Train)
        .cloned()
        .collect();
    let mdp = estimate_mdp(
        &train,
        k,
        cfg.mdp.min_count,
        cfg.mdp.gamma,
        space,
        cfg.representation.as_str(),
    )?;
    log::info!(
        "build-mdp: {} states, {} counted transitions from {} training trajectories",
        mdp.n_states(),
        mdp.counts.len(),
        train.len()
    );

    let path = out_dir.join(MDP);
    let mut w = create(&path)?;
    write_mdp(&mdp, &mut w)?;
    finish(w, &path)?;
    let path = out_dir.join(TRAJECTORIES);
    let mut w = create(&path)?;
    table::write_trajectories(&trajectories, &mut w)?;
    finish(w, &path)?;
    Ok(MdpSummary {
        n_states: mdp.n_states(),
        n_train_trajectories: train.len(),
        n_test_trajectories: trajectories.len() - train.len(),
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub format: String,
    pub version: u32,
    pub representation: String,
    pub mdp_sha256: String,
    pub n_states: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub improvements: usize,
    pub evaluation_sweeps: usize,
    pub converged: bool,
    /// Non-terminal states where the optimal action differs from the real one.
    pub policy_changes: usize,
}

const SOLUTION_FORMAT: &str = "glyrl-solution";

fn load_mdp(path: &Path) -> Result<crate::MdpModel> {
    read_mdp(open(path)?, path)
}

/// Policy iteration from the real policy, plus the real policy's own values.
pub fn solve(cfg: &PipelineConfig, mdp_path: &Path, out_dir: &Path) -> Result<SolutionMeta> {
    let mdp = load_mdp(mdp_path)?;
    let tab = mdp.to_tabular();
    let eps = cfg.solver.epsilon;
    let real_policy = extract_real_policy(&mdp);
    let real = solve_fixed_policy(&tab, &real_policy, eps)?;
    let opt = policy_iteration(&tab, eps, Some(&real_policy))?;
    let policy_changes = (0..mdp.k)
        .filter(|&s| opt.policy.action(s) != real_policy.action(s))
        .count();
    log::info!(
        "solve: {} improvement rounds, {} of {} states changed",
        opt.improvements,
        policy_changes,
        mdp.k
    );

    for (name, policy, values) in [
        (OPTIMAL_POLICY, &opt.policy, &opt.values),
        (REAL_POLICY, &real.policy, &real.values),
    ] {
        let path = out_dir.join(name);
        let mut w = create(&path)?;
        table::write_policy(policy, values, &mut w)?;
        finish(w, &path)?;
    }
    for (name, q) in [(OPTIMAL_Q, &opt.q), (REAL_Q, &real.q)] {
        let path = out_dir.join(name);
        let mut w = create(&path)?;
        table::write_q(q, &mut w)?;
        finish(w, &path)?;
    }
    let meta = SolutionMeta {
        format: SOLUTION_FORMAT.into(),
        version: ARTIFACT_VERSION,
        representation: mdp.representation.clone(),
        mdp_sha256: sha256_file(mdp_path)?,
        n_states: mdp.n_states(),
        gamma: mdp.gamma,
        epsilon: eps,
        improvements: opt.improvements,
        evaluation_sweeps: opt.evaluation_sweeps,
        converged: opt.converged,
        policy_changes,
    };
    write_json(&out_dir.join(SOLUTION_META), &meta)?;
    Ok(meta)
}

pub struct LoadedSolution {
    pub meta: SolutionMeta,
    pub optimal: (crate::solver::Policy, Vec<f64>),
    pub real: (crate::solver::Policy, Vec<f64>),
}

pub fn read_solution(dir: &Path) -> Result<LoadedSolution> {
    let meta: SolutionMeta = read_artifact(&dir.join(SOLUTION_META), SOLUTION_FORMAT)?;
    let load = |name: &str| -> Result<(crate::solver::Policy, Vec<f64>)> {
        let path = dir.join(name);
        let (p, v) = table::read_policy(open(&path)?)?;
        if v.len() != meta.n_states {
            return Err(Error::compat(
                &path,
                format!("{} states, expected {}", v.len(), meta.n_states),
            ));
        }
        Ok((p, v))
    };
    Ok(LoadedSolution {
        optimal: load(OPTIMAL_POLICY)?,
        real: load(REAL_POLICY)?,
        meta,
    })
}

fn read_trajectories(path: &Path) -> Result<Vec<crate::mdp::Trajectory>> {
    table::read_trajectories(open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveArtifact {
    pub format: String,
    pub version: u32,
    pub representation: String,
    pub curve: CalibrationCurve<f64>,
}

const CURVE_FORMAT: &str = "glyrl-curve";

/// Fits the mortality curve from the real policy's values over the training
/// trajectories.
pub fn calibrate(
    cfg: &PipelineConfig,
    solution_dir: &Path,
    trajectories: &Path,
    out_dir: &Path,
) -> Result<CalibrationCurve<f64>> {
    let sol = read_solution(solution_dir)?;
    let train: Vec<_> = read_trajectories(trajectories)?
        .into_iter()
        .filter(|t| t.split == SplitSide::Train)
        .collect();
    let curve = calib::fit_curve(
        &sol.real.1,
        &train,
        cfg.calibration.n_bins,
        cfg.calibration.min_bin_support,
    )?;
    log::info!(
        "calibrate: {} bins over {:?}",
        curve.bin_centers.len(),
        curve.domain
    );
    write_json(
        &out_dir.join(CURVE_JSON),
        &CurveArtifact {
            format: CURVE_FORMAT.into(),
            version: ARTIFACT_VERSION,
            representation: sol.meta.representation.clone(),
            curve: curve.clone(),
        },
    )?;
    let path = out_dir.join(CURVE_CSV);
    let mut w = create(&path)?;
    calib::emit_curve_csv(&curve, &mut w)?;
    finish(w, &path)?;
    Ok(curve)
}

/// Scores the real and optimal policies under the test visitation.
pub fn evaluate(
    cfg: &PipelineConfig,
    mdp_path: &Path,
    solution_dir: &Path,
    curve_path: &Path,
    trajectories: &Path,
    out_dir: &Path,
) -> Result<EvaluationReport> {
    let mdp = load_mdp(mdp_path)?;
    let sol = read_solution(solution_dir)?;
    if sol.meta.mdp_sha256 != sha256_file(mdp_path)? {
        return Err(Error::compat(
            solution_dir,
            "solution was computed from a different MDP file",
        ));
    }
    let curve: CurveArtifact = read_artifact(curve_path, CURVE_FORMAT)?;
    if mdp.representation != cfg.representation.as_str() {
        log::warn!(
            "config says representation {} but the MDP was built from {}; reporting {}",
            cfg.representation,
            mdp.representation,
            mdp.representation
        );
    }
    let (train, test): (Vec<_>, Vec<_>) = read_trajectories(trajectories)?
        .into_iter()
        .partition(|t| t.split == SplitSide::Train);
    let digest = cfg.digest();
    let report = calib::evaluate(&EvaluationInputs {
        representation: &mdp.representation,
        real_values: &sol.real.1,
        optimal_values: &sol.optimal.1,
        curve: &curve.curve,
        train: &train,
        test: &test,
        n_states: mdp.n_states(),
        mapping: cfg.calibration.mapping,
        config_digest: &digest,
        seed: cfg.seed,
    })?;
    log::info!(
        "evaluate: real {:.2} / {:.2}%, optimal {:.2} / {:.2}%",
        report.real.expected_return,
        100.0 * report.real.estimated_mortality,
        report.optimal.expected_return,
        100.0 * report.optimal.estimated_mortality
    );
    write_json(&out_dir.join(REPORT), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub representation: Representation,
    pub input_sha256: String,
    pub stages: Vec<String>,
    /// Artifact path relative to the output directory, with its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub struct RunOutcome {
    pub report: EvaluationReport,
    pub manifest: Manifest,
}

/// Paths produced by a full run under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn solution(&self) -> PathBuf {
        self.root.join(SOLUTION_DIR)
    }
}

/// ingest → (train-encoder) → cluster → build-mdp → solve → calibrate →
/// evaluate, then a manifest of every artifact.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let at = Layout::new(out_dir);
    let sol_dir = at.solution();
    let mut stages = vec!["ingest"];
    in_stage("ingest", ingest(cfg, input, out_dir))?;
    let cluster_input = match cfg.representation {
        Representation::Raw => at.file(STATES),
        Representation::SparseAe => {
            stages.push("train-encoder");
            in_stage(
                "train-encoder",
                train_encoder(cfg, &at.file(STATES), out_dir),
            )?;
            at.file(LATENTS)
        }
    };
    stages.extend(["cluster", "build-mdp", "solve", "calibrate", "evaluate"]);
    in_stage("cluster", cluster(cfg, &cluster_input, out_dir))?;
    in_stage(
        "build-mdp",
        build_mdp(
            cfg,
            &at.file(STATES),
            &at.file(ASSIGNMENTS),
            &at.file(CLUSTER_MODEL),
            out_dir,
        ),
    )?;
    in_stage("solve", solve(cfg, &at.file(MDP), &sol_dir))?;
    in_stage(
        "calibrate",
        calibrate(cfg, &sol_dir, &at.file(TRAJECTORIES), out_dir),
    )?;
    let report = in_stage(
        "evaluate",
        evaluate(
            cfg,
            &at.file(MDP),
            &sol_dir,
            &at.file(CURVE_JSON),
            &at.file(TRAJECTORIES),
            out_dir,
        ),
    )?;

    let mut names = vec![INGEST_SUMMARY, NORMALIZATION, STATES];
    if cfg.representation == Representation::SparseAe {
        names.extend([ENCODER_MODEL, LATENTS]);
    }
    names.extend([
        CLUSTER_MODEL,
        ASSIGNMENTS,
        MDP,
        TRAJECTORIES,
        CURVE_JSON,
        CURVE_CSV,
        REPORT,
    ]);
    let mut artifacts = BTreeMap::new();
    for name in names {
        artifacts.insert(name.to_string(), sha256_file(&at.file(name))?);
    }
    for name in [
        OPTIMAL_POLICY,
        OPTIMAL_Q,
        REAL_POLICY,
        REAL_Q,
        SOLUTION_META,
    ] {
        artifacts.insert(
            format!("{SOLUTION_DIR}/{name}"),
            sha256_file(&sol_dir.join(name))?,
        );
    }
    let manifest = Manifest {
        format: "glyrl-manifest".into(),
        version: ARTIFACT_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.seed,
        representation: cfg.representation,
        input_sha256: sha256_file(input)?,
        stages: stages.into_iter().map(String::from).collect(),
        artifacts,
    };
    write_json(&at.file(MANIFEST), &manifest)?;
    Ok(RunOutcome { report, manifest })
}
