//! Cross-validated experiment driver: runs the k-fold protocol end to end,
//! collects per-concept metrics, fits the closed-form linear baseline on
//! identical folds, and summarizes the learned shape-function patterns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gam::{train_gam, GamConfig, GamError, PatternDeltas};
use crate::heads::{eval_heads, train_heads, HeadMetrics, HeadsConfig, HeadsError};
use crate::ingest::{kfold_split, ConceptVector, Dataset, IngestError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Gam(#[from] GamError),
    #[error(transparent)]
    Heads(#[from] HeadsError),
    #[error("normal equations are singular")]
    SingularSystem,
}

/// Which concept values feed the additive model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    /// Ground-truth consensus vectors (isolates the explainer).
    Consensus,
    /// Concept-head predictions from embeddings (full bottleneck pipeline).
    Predicted,
}

impl std::str::FromStr for TargetSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consensus" => Ok(TargetSource::Consensus),
            "predicted" => Ok(TargetSource::Predicted),
            other => Err(format!("unknown source '{other}' (use consensus|predicted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub subnets_per_concept: usize,
    pub train_target_source: TargetSource,
    /// Worker threads for independent folds; 1 = sequential.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0],
            k: 5,
            epochs: 80,
            batch_size: 16,
            base_lr: 1e-4,
            subnets_per_concept: 4,
            train_target_source: TargetSource::Consensus,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.seeds.is_empty() {
            return Err(EvalError::Config("at least one seed required".into()));
        }
        if self.k < 2 {
            return Err(EvalError::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.batch_size == 0 {
            return Err(EvalError::Config("batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(EvalError::Config("base_lr must be positive".into()));
        }
        if self.subnets_per_concept == 0 {
            return Err(EvalError::Config("subnets_per_concept must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(EvalError::Config("jobs must be positive".into()));
        }
        Ok(())
    }

    fn gam_config(&self, seed: u64) -> GamConfig {
        GamConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            subnets_per_concept: self.subnets_per_concept,
            seed,
            ..GamConfig::default()
        }
    }

    fn heads_config(&self, seed: u64) -> HeadsConfig {
        HeadsConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            seed,
            ..HeadsConfig::default()
        }
    }
}

/// Metrics for one (seed, fold) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out MAE of the additive model's malignancy score.
    pub gam_malignancy_mae: f64,
    /// Held-out MAE of the closed-form linear baseline on the same fold.
    pub baseline_mae: f64,
    /// Concept-head metrics on the held-out fold, when embeddings exist.
    pub heads: Option<HeadMetrics>,
    pub deltas: PatternDeltas,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Across-run aggregates (mean and population stddev over seeds x folds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub runs: usize,
    pub gam_malignancy_mae: MeanStd,
    pub baseline_mae: MeanStd,
    pub heads_numeric_mae: Option<BTreeMap<String, MeanStd>>,
    pub heads_categorical_f1: Option<BTreeMap<String, MeanStd>>,
}

/// One qualitative claim evaluated across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub claim: String,
    pub satisfied: usize,
    pub total: usize,
    pub fraction: f64,
    /// False when every run's relevant delta was exactly zero (nothing was
    /// learned, so the claim is untested rather than failed).
    pub conclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub claims: Vec<ClaimResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<FoldResult>,
    pub aggregate: AggregateStats,
    pub patterns: PatternSummary,
}

/// Runs the full protocol: for every seed, split into k folds, train the
/// additive model (and the concept heads when embeddings are present) on
/// each training fold, and evaluate on the held-out fold. Folds may run on
/// worker threads; results are assembled in (seed, fold) order regardless.
pub fn run_experiment(
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, EvalError> {
    config.validate()?;
    if dataset.rows.len() < config.k {
        return Err(EvalError::Config(format!(
            "dataset has {} rows, fewer than k={}",
            dataset.rows.len(),
            config.k
        )));
    }
    if config.train_target_source == TargetSource::Predicted && dataset.embeddings.is_none() {
        return Err(EvalError::Config(
            "predicted target source requires embeddings".into(),
        ));
    }

    // (seed, fold, train indices, test indices) work items.
    let mut tasks = Vec::with_capacity(config.seeds.len() * config.k);
    for &seed in &config.seeds {
        let folds = kfold_split(dataset.rows.len(), config.k, seed)?;
        for (fold, (train_idx, test_idx)) in folds.into_iter().enumerate() {
            tasks.push((seed, fold, train_idx, test_idx));
        }
    }

    let runs: Vec<FoldResult> = if config.jobs <= 1 {
        tasks
            .iter()
            .map(|(seed, fold, train_idx, test_idx)| {
                run_fold(dataset, config, *seed, *fold, train_idx, test_idx)
            })
            .collect::<Result<_, _>>()?
    } else {
        run_tasks_parallel(dataset, config, &tasks)?
    };

    let aggregate = aggregate_stats(&runs);
    let patterns = pattern_suite(&runs);
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        aggregate,
        patterns,
    })
}

fn run_tasks_parallel(
    dataset: &Dataset,
    config: &ExperimentConfig,
    tasks: &[(u64, usize, Vec<usize>, Vec<usize>)],
) -> Result<Vec<FoldResult>, EvalError> {
    let jobs = config.jobs.min(tasks.len());
    // Round-robin assignment; workers return indexed results so assembly
    // order is independent of scheduling.
    let mut per_worker: Vec<Vec<(usize, &(u64, usize, Vec<usize>, Vec<usize>))>> =
        (0..jobs).map(|_| Vec::new()).collect();
    for (i, task) in tasks.iter().enumerate() {
        per_worker[i % jobs].push((i, task));
    }

    let mut slots: Vec<Option<FoldResult>> = Vec::new();
    slots.resize_with(tasks.len(), || None);
    let worker_outputs: Vec<Vec<(usize, Result<FoldResult, EvalError>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = per_worker
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .into_iter()
                            .map(|(i, (seed, fold, train_idx, test_idx))| {
                                (i, run_fold(dataset, config, *seed, *fold, train_idx, test_idx))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold worker panicked"))
                .collect()
        });
    for (i, result) in worker_outputs.into_iter().flatten() {
        slots[i] = Some(result?);
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

fn run_fold(
    dataset: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<FoldResult, EvalError> {
    // A test nodule must never appear in its fold's training set.
    {
        let test_ids: std::collections::BTreeSet<&str> = test_idx
            .iter()
            .map(|&i| dataset.rows[i].nodule_id.as_str())
            .collect();
        assert!(
            train_idx
                .iter()
                .all(|&i| !test_ids.contains(dataset.rows[i].nodule_id.as_str())),
            "fold leak: train and test share nodule ids"
        );
    }

    let train_rows: Vec<ConceptVector> =
        train_idx.iter().map(|&i| dataset.rows[i].clone()).collect();
    let test_rows: Vec<ConceptVector> =
        test_idx.iter().map(|&i| dataset.rows[i].clone()).collect();

    // Concept heads: trained whenever embeddings are available, and always
    // for the predicted pipeline.
    let mut heads_model = None;
    if dataset.embeddings.is_some() {
        let mut train_subset = Dataset::new(dataset.schema.clone(), train_rows.clone());
        train_subset.embeddings = dataset.embeddings.clone();
        let outcome = train_heads(&train_subset, &config.heads_config(seed))?;
        heads_model = Some(outcome.model);
    }

    // Inputs the additive model trains and evaluates on.
    let (gam_train, gam_test) = match config.train_target_source {
        TargetSource::Consensus => (train_rows.clone(), test_rows.clone()),
        TargetSource::Predicted => {
            let heads = heads_model
                .as_ref()
                .expect("predicted source implies embeddings, so heads were trained");
            let predict_rows = |rows: &[ConceptVector]| -> Result<Vec<ConceptVector>, EvalError> {
                rows.iter()
                    .map(|row| {
                        let embedding = dataset.embedding_of(&row.nodule_id).ok_or_else(|| {
                            EvalError::Heads(HeadsError::MissingEmbeddings {
                                nodule_id: row.nodule_id.clone(),
                            })
                        })?;
                        let mut v = heads.predict_vector(&row.nodule_id, embedding)?;
                        // The regression target stays the consensus score.
                        v.malignancy_target = row.malignancy_target;
                        v.n_raters = row.n_raters;
                        Ok(v)
                    })
                    .collect()
            };
            (predict_rows(&train_rows)?, predict_rows(&test_rows)?)
        }
    };

    let outcome = train_gam(&gam_train, &dataset.schema, &config.gam_config(seed))?;
    let gam_malignancy_mae = outcome.model.mae_on(&gam_test)?;
    let deltas = outcome.model.global_patterns()?;

    let (weights, intercept) = fit_ridge_features(&gam_train, RIDGE_DAMPING)?;
    let baseline_mae = linear_mae(&gam_test, &weights, intercept);

    let heads = match &heads_model {
        Some(model) => {
            let mut test_subset = Dataset::new(dataset.schema.clone(), test_rows.clone());
            test_subset.embeddings = dataset.embeddings.clone();
            Some(eval_heads(model, &test_subset)?)
        }
        None => None,
    };

    Ok(FoldResult {
        seed,
        fold,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        gam_malignancy_mae,
        baseline_mae,
        heads,
        deltas,
    })
}

fn aggregate_stats(runs: &[FoldResult]) -> AggregateStats {
    let gam: Vec<f64> = runs.iter().map(|r| r.gam_malignancy_mae).collect();
    let baseline: Vec<f64> = runs.iter().map(|r| r.baseline_mae).collect();

    let (heads_numeric_mae, heads_categorical_f1) = if runs.iter().all(|r| r.heads.is_some()) {
        let mut numeric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut f1: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for run in runs {
            let metrics = run.heads.as_ref().unwrap();
            for (name, &v) in &metrics.numeric_mae {
                numeric.entry(name.clone()).or_default().push(v);
            }
            for (name, &v) in &metrics.categorical_f1 {
                f1.entry(name.clone()).or_default().push(v);
            }
        }
        (
            Some(numeric.into_iter().map(|(k, v)| (k, mean_std(&v))).collect()),
            Some(f1.into_iter().map(|(k, v)| (k, mean_std(&v))).collect()),
        )
    } else {
        (None, None)
    };

    AggregateStats {
        runs: runs.len(),
        gam_malignancy_mae: mean_std(&gam),
        baseline_mae: mean_std(&baseline),
        heads_numeric_mae,
        heads_categorical_f1,
    }
}

pub const CLAIM_SPICULATION: &str = "spiculation delta > 0";
pub const CLAIM_TEXTURE: &str = "texture delta < 0";
pub const CLAIM_CALCIFICATION: &str = "calcification Absent above class mean";

/// Evaluates the qualitative shape-function claims across runs and reports
/// the fraction of runs satisfying each.
pub fn pattern_suite(runs: &[FoldResult]) -> PatternSummary {
    let spiculation: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.deltas.ordinal_delta("spiculation"))
        .collect();
    let texture: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.deltas.ordinal_delta("texture"))
        .collect();
    let absent: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.deltas.class_delta("calcification", "Absent"))
        .collect();

    let claim = |name: &str, deltas: &[Option<f64>], test: fn(f64) -> bool| -> ClaimResult {
        let total = deltas.len();
        let satisfied = deltas.iter().filter(|d| d.map(test).unwrap_or(false)).count();
        let conclusive = deltas.iter().any(|d| d.map(|v| v != 0.0).unwrap_or(false));
        ClaimResult {
            claim: name.to_string(),
            satisfied,
            total,
            fraction: if total == 0 {
                0.0
            } else {
                satisfied as f64 / total as f64
            },
            conclusive,
        }
    };

    PatternSummary {
        claims: vec![
            claim(CLAIM_SPICULATION, &spiculation, |d| d > 0.0),
            claim(CLAIM_TEXTURE, &texture, |d| d < 0.0),
            claim(CLAIM_CALCIFICATION, &absent, |d| d > 0.0),
        ],
    }
}

/// Ridge damping applied to the normal equations (not the intercept).
pub const RIDGE_DAMPING: f64 = 1e-8;

/// Closed-form least squares on the concatenated concept features, solved by
/// normal equations with ridge damping. Returns the per-fold test MAE.
pub fn linear_baseline(
    rows: &[ConceptVector],
    folds: &[(Vec<usize>, Vec<usize>)],
) -> Result<Vec<f64>, EvalError> {
    folds
        .iter()
        .map(|(train_idx, test_idx)| {
            let train: Vec<ConceptVector> = train_idx.iter().map(|&i| rows[i].clone()).collect();
            let test: Vec<ConceptVector> = test_idx.iter().map(|&i| rows[i].clone()).collect();
            let (weights, intercept) = fit_ridge_features(&train, RIDGE_DAMPING)?;
            Ok(linear_mae(&test, &weights, intercept))
        })
        .collect()
}

fn fit_ridge_features(rows: &[ConceptVector], damping: f64) -> Result<(Vec<f64>, f64), EvalError> {
    let features: Vec<Vec<f64>> = rows.iter().map(ConceptVector::features).collect();
    let targets: Vec<f64> = rows.iter().map(|r| r.malignancy_target).collect();
    fit_ridge(&features, &targets, damping)
}

/// Ordinary least squares with an unpenalized intercept: solves
/// (XtX + damping I) w = Xt y on the augmented system.
pub fn fit_ridge(
    features: &[Vec<f64>],
    targets: &[f64],
    damping: f64,
) -> Result<(Vec<f64>, f64), EvalError> {
    assert_eq!(features.len(), targets.len());
    assert!(!features.is_empty());
    let d = features[0].len();
    let dim = d + 1; // intercept last
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for (x, &y) in features.iter().zip(targets) {
        debug_assert_eq!(x.len(), d);
        for i in 0..d {
            for j in i..d {
                a[i][j] += x[i] * x[j];
            }
            a[i][d] += x[i];
            b[i] += x[i] * y;
        }
        a[d][d] += 1.0;
        b[d] += y;
    }
    for i in 0..dim {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    // Damping on feature weights only; the intercept stays unpenalized.
    for i in 0..d {
        a[i][i] += damping;
    }
    let solution = solve_linear(a, b)?;
    let (weights, intercept) = solution.split_at(d);
    Ok((weights.to_vec(), intercept[0]))
}

fn linear_mae(rows: &[ConceptVector], weights: &[f64], intercept: f64) -> f64 {
    let mut total = 0.0;
    for row in rows {
        let x = row.features();
        let pred = x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + intercept;
        total += (pred - row.malignancy_target).abs();
    }
    total / rows.len() as f64
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, EvalError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(EvalError::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for col in row + 1..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Plain-text report: one row per concept, one column per model variant.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let agg = &report.aggregate;
    out.push_str(&format!(
        "runs: {} ({} seeds x {} folds)\n\n",
        agg.runs,
        report.config.seeds.len(),
        report.config.k
    ));
    out.push_str(&format!(
        "{:<22} {:>18} {:>18} {:>18}\n",
        "concept", "heads", "gam", "linear baseline"
    ));
    let fmt = |m: &MeanStd| format!("{:.4} +/- {:.4}", m.mean, m.std);
    let heads_cell = |name: &str| -> String {
        agg.heads_numeric_mae
            .as_ref()
            .and_then(|m| m.get(name))
            .map(|m| fmt(m))
            .unwrap_or_else(|| "-".to_string())
    };
    // Ordinal concepts: heads MAE only.
    let schema_concepts: Vec<String> = report
        .runs
        .first()
        .map(|r| {
            r.deltas
                .ordinal_deltas
                .iter()
                .map(|d| d.concept.clone())
                .collect()
        })
        .unwrap_or_default();
    for concept in &schema_concepts {
        out.push_str(&format!(
            "{:<22} {:>18} {:>18} {:>18}\n",
            concept,
            heads_cell(concept),
            "-",
            "-"
        ));
    }
    out.push_str(&format!(
        "{:<22} {:>18} {:>18} {:>18}\n",
        "malignancy (MAE)",
        heads_cell("malignancy"),
        fmt(&agg.gam_malignancy_mae),
        fmt(&agg.baseline_mae)
    ));
    if let Some(f1) = &agg.heads_categorical_f1 {
        for (name, m) in f1 {
            out.push_str(&format!(
                "{:<22} {:>18} {:>18} {:>18}\n",
                format!("{name} (F1)"),
                fmt(m),
                "-",
                "-"
            ));
        }
    }
    out.push('\n');
    for claim in &report.patterns.claims {
        out.push_str(&format!(
            "pattern: {:<40} {}/{} runs ({:.0}%){}\n",
            claim.claim,
            claim.satisfied,
            claim.total,
            claim.fraction * 100.0,
            if claim.conclusive { "" } else { " [inconclusive]" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gam::{CategoricalDeltas, ClassDelta, ConceptDelta};
    use crate::synthetic::surrogate_dataset;
    use crate::testutil::seeded_rng as test_rng;
    use rand::Rng;

    #[test]
    fn fit_ridge_recovers_exact_linear_law() {
        let mut rng = test_rng(0, 30);
        let true_w = [0.7, -0.4, 0.2];
        let true_b = 0.15;
        let features: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = features
            .iter()
            .map(|x| x.iter().zip(&true_w).map(|(a, b)| a * b).sum::<f64>() + true_b)
            .collect();
        let (w, b) = fit_ridge(&features, &targets, RIDGE_DAMPING).unwrap();
        for (got, want) in w.iter().zip(&true_w) {
            assert!((got - want).abs() < 1e-6, "weight {got} vs {want}");
        }
        assert!((b - true_b).abs() < 1e-6);
    }

    #[test]
    fn fit_ridge_constant_target_is_pure_intercept() {
        let mut rng = test_rng(1, 30);
        let features: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let targets = vec![0.42; 100];
        let (w, b) = fit_ridge(&features, &targets, RIDGE_DAMPING).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-9), "weights {w:?}");
        assert!((b - 0.42).abs() < 1e-9);
    }

    #[test]
    fn linear_baseline_nails_linearly_generated_rows() {
        let schema = crate::synthetic::ordinal_only_schema(&["a", "b", "c"]);
        let rows = crate::synthetic::rows_from_generator(&schema, 250, 2, |v| {
            0.3 * v[0] + 0.2 * v[1] + 0.4 * v[2] + 0.05
        });
        let folds = kfold_split(rows.len(), 5, 0).unwrap();
        let maes = linear_baseline(&rows, &folds).unwrap();
        assert_eq!(maes.len(), 5);
        for mae in maes {
            assert!(mae < 1e-8, "MAE {mae}");
        }
    }

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![3],
            k: 3,
            epochs: 2,
            batch_size: 8,
            base_lr: 1e-3,
            subnets_per_concept: 2,
            train_target_source: TargetSource::Consensus,
            jobs: 1,
        }
    }

    #[test]
    fn experiment_is_deterministic_and_parallel_invariant() {
        let dataset = surrogate_dataset(45, 8);
        let config = quick_config();
        let a = run_experiment(&dataset, &config).unwrap();
        let b = run_experiment(&dataset, &config).unwrap();
        assert_eq!(a, b);

        let parallel = ExperimentConfig { jobs: 3, ..config };
        let c = run_experiment(&dataset, &parallel).unwrap();
        assert_eq!(a.runs, c.runs);
        assert_eq!(a.aggregate, c.aggregate);
    }

    #[test]
    fn aggregate_mae_equals_mean_of_folds() {
        let dataset = surrogate_dataset(45, 9);
        let report = run_experiment(&dataset, &quick_config()).unwrap();
        let mean = report
            .runs
            .iter()
            .map(|r| r.gam_malignancy_mae)
            .sum::<f64>()
            / report.runs.len() as f64;
        assert!((report.aggregate.gam_malignancy_mae.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_matches_constant_predictor_oracle() {
        let dataset = surrogate_dataset(60, 10);
        let config = ExperimentConfig {
            epochs: 0,
            ..quick_config()
        };
        let report = run_experiment(&dataset, &config).unwrap();
        let folds = kfold_split(dataset.rows.len(), config.k, config.seeds[0]).unwrap();
        for (run, (train_idx, test_idx)) in report.runs.iter().zip(&folds) {
            let mean: f64 = train_idx
                .iter()
                .map(|&i| dataset.rows[i].malignancy_target)
                .sum::<f64>()
                / train_idx.len() as f64;
            let expected: f64 = test_idx
                .iter()
                .map(|&i| (dataset.rows[i].malignancy_target - mean).abs())
                .sum::<f64>()
                / test_idx.len() as f64;
            assert!(
                (run.gam_malignancy_mae - expected).abs() < 1e-12,
                "fold {}: {} vs {}",
                run.fold,
                run.gam_malignancy_mae,
                expected
            );
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let dataset = surrogate_dataset(20, 1);
        for bad in [
            ExperimentConfig { k: 1, ..quick_config() },
            ExperimentConfig { seeds: vec![], ..quick_config() },
            ExperimentConfig { base_lr: 0.0, ..quick_config() },
            ExperimentConfig { batch_size: 0, ..quick_config() },
            ExperimentConfig { jobs: 0, ..quick_config() },
            ExperimentConfig {
                train_target_source: TargetSource::Predicted,
                ..quick_config()
            },
        ] {
            assert!(matches!(
                run_experiment(&dataset, &bad),
                Err(EvalError::Config(_))
            ));
        }
    }

    fn fabricated_run(spiculation: f64, texture: f64, absent: f64) -> FoldResult {
        FoldResult {
            seed: 0,
            fold: 0,
            train_size: 10,
            test_size: 5,
            gam_malignancy_mae: 0.1,
            baseline_mae: 0.12,
            heads: None,
            deltas: PatternDeltas {
                ordinal_deltas: vec![
                    ConceptDelta { concept: "spiculation".into(), delta: spiculation },
                    ConceptDelta { concept: "texture".into(), delta: texture },
                ],
                categorical_deltas: vec![CategoricalDeltas {
                    concept: "calcification".into(),
                    class_deltas: vec![ClassDelta { class: "Absent".into(), delta: absent }],
                }],
            },
        }
    }

    #[test]
    fn pattern_suite_counts_fractions() {
        let runs = vec![
            fabricated_run(0.5, -0.2, 0.1),
            fabricated_run(0.1, 0.3, 0.2),
            fabricated_run(-0.2, -0.1, -0.4),
            fabricated_run(0.9, -0.6, 0.8),
        ];
        let summary = pattern_suite(&runs);
        assert_eq!(summary.claims[0].satisfied, 3); // spiculation > 0
        assert_eq!(summary.claims[1].satisfied, 3); // texture < 0
        assert_eq!(summary.claims[2].satisfied, 3); // absent > mean
        assert!(summary.claims.iter().all(|c| c.conclusive));
    }

    #[test]
    fn pattern_suite_marks_all_zero_models_inconclusive() {
        let runs = vec![fabricated_run(0.0, 0.0, 0.0); 3];
        let summary = pattern_suite(&runs);
        for claim in &summary.claims {
            assert_eq!(claim.satisfied, 0);
            assert!(!claim.conclusive);
        }
    }

    #[test]
    fn table_renders_every_concept_row() {
        let dataset = surrogate_dataset(45, 12);
        let report = run_experiment(&dataset, &quick_config()).unwrap();
        let table = render_table(&report);
        for concept in ["subtlety", "spiculation", "malignancy", "pattern:"] {
            assert!(table.contains(concept), "missing {concept} in:\n{table}");
        }
    }
}
