//! The concept predictor: task-specific head networks mapping a feature
//! embedding to six numeric concept scores, a malignancy score, and two
//! categorical class distributions.
//!
//! Numeric heads end in a sigmoid (scores live on [0, 1]); categorical heads
//! end in a softmax over their class count. All heads share the embedding
//! input and are trained jointly under a summed regression + cross-entropy
//! loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::ingest::{ConceptVector, Dataset};
use crate::nn::{ce_loss, mse_loss, GradTape, MicroNet, NnError, OutputActivation};
use crate::optim::{AdamState, EpochStats, PlateauScheduler, TrainOutcome};
use crate::rng::{seeded_rng, streams};
use crate::schema::ConceptSchema;

/// Hidden widths of every head network.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// Fraction of the (already shuffled) training rows held out for the
/// learning-rate scheduler.
const VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HeadsError {
    #[error("embedding missing for nodule '{nodule_id}'")]
    MissingEmbeddings { nodule_id: String },
    #[error("dataset carries no embeddings")]
    NoEmbeddings,
    #[error("batch is empty")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint schema digest {found} does not match model schema {expected}")]
    SchemaDigestMismatch { expected: String, found: String },
}

/// Training hyperparameters for the concept heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig {
            epochs: 80,
            batch_size: 16,
            base_lr: 1e-4,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

/// Concept predictor: one sigmoid head per ordinal concept plus malignancy,
/// one softmax head per categorical concept, all over the same embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptHeads {
    schema: ConceptSchema,
    input_dim: usize,
    /// Ordinal-concept heads in schema order; the malignancy head is last.
    numeric_heads: Vec<MicroNet>,
    categorical_heads: Vec<MicroNet>,
}

/// One forward pass through every head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptPrediction {
    /// Ordinal concept scores in schema order.
    pub numeric: Vec<f64>,
    pub malignancy: f64,
    /// One distribution per categorical concept, in schema order.
    pub categorical: Vec<Vec<f64>>,
}

impl ConceptHeads {
    pub fn new<R: Rng>(
        schema: ConceptSchema,
        input_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let numeric_dims = |out: usize| -> Vec<usize> {
            std::iter::once(input_dim)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect()
        };
        let numeric_heads = (0..schema.ordinals.len() + 1)
            .map(|_| MicroNet::new(&numeric_dims(1), OutputActivation::Sigmoid, rng))
            .collect();
        let categorical_heads = schema
            .categoricals
            .iter()
            .map(|c| MicroNet::new(&numeric_dims(c.class_count()), OutputActivation::Softmax, rng))
            .collect();
        ConceptHeads {
            schema,
            input_dim,
            numeric_heads,
            categorical_heads,
        }
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn numeric_head_count(&self) -> usize {
        self.numeric_heads.len()
    }

    pub fn categorical_head_count(&self) -> usize {
        self.categorical_heads.len()
    }

    pub fn param_count(&self) -> usize {
        self.numeric_heads
            .iter()
            .chain(&self.categorical_heads)
            .map(MicroNet::param_count)
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in self.numeric_heads.iter().chain(&self.categorical_heads) {
            net.push_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) -> Result<(), NnError> {
        if src.len() != self.param_count() {
            return Err(NnError::ShapeMismatch {
                expected: self.param_count(),
                got: src.len(),
            });
        }
        let mut pos = 0;
        for net in self
            .numeric_heads
            .iter_mut()
            .chain(&mut self.categorical_heads)
        {
            net.pull_params(src, &mut pos)?;
        }
        Ok(())
    }

    /// Predicts every concept from one embedding.
    pub fn predict(&self, embedding: &[f64]) -> Result<ConceptPrediction, HeadsError> {
        if embedding.len() != self.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim,
                got: embedding.len(),
            }
            .into());
        }
        let mut numeric = Vec::with_capacity(self.numeric_heads.len());
        for head in &self.numeric_heads {
            numeric.push(head.forward(embedding)?[0]);
        }
        let malignancy = numeric.pop().expect("malignancy head present");
        let categorical = self
            .categorical_heads
            .iter()
            .map(|head| head.forward(embedding))
            .collect::<Result<_, _>>()?;
        Ok(ConceptPrediction {
            numeric,
            malignancy,
            categorical,
        })
    }

    /// Converts head outputs into a concept vector shaped like a consensus
    /// row (categorical distributions collapse to their argmax one-hot).
    /// `n_raters` is zero to mark model-predicted rows.
    pub fn predict_vector(
        &self,
        nodule_id: &str,
        embedding: &[f64],
    ) -> Result<ConceptVector, HeadsError> {
        let pred = self.predict(embedding)?;
        let categorical_onehots = pred
            .categorical
            .iter()
            .map(|dist| {
                let mut onehot = vec![0.0; dist.len()];
                onehot[argmax(dist)] = 1.0;
                onehot
            })
            .collect();
        Ok(ConceptVector {
            nodule_id: nodule_id.to_string(),
            ordinal_values: pred.numeric,
            categorical_onehots,
            malignancy_target: pred.malignancy,
            n_raters: 0,
        })
    }

    /// Joint loss over a batch: batch-mean of the numeric MSE (all ordinal
    /// concepts plus malignancy stacked) plus the batch-mean of the summed
    /// categorical cross-entropies. Returns the loss and its gradient with
    /// respect to [`params_flat`](Self::params_flat).
    pub fn joint_loss(
        &self,
        batch: &[(&[f64], &ConceptVector)],
    ) -> Result<(f64, Vec<f64>), HeadsError> {
        if batch.is_empty() {
            return Err(HeadsError::EmptyBatch);
        }
        let inv_batch = 1.0 / batch.len() as f64;
        let mut numeric_tapes: Vec<GradTape> =
            self.numeric_heads.iter().map(GradTape::for_net).collect();
        let mut categorical_tapes: Vec<GradTape> =
            self.categorical_heads.iter().map(GradTape::for_net).collect();

        let mut total = 0.0;
        for &(embedding, row) in batch {
            let mut preds = Vec::with_capacity(self.numeric_heads.len());
            for (head, tape) in self.numeric_heads.iter().zip(&mut numeric_tapes) {
                preds.push(head.forward_tape(tape, embedding)?[0]);
            }
            let mut targets = row.ordinal_values.clone();
            targets.push(row.malignancy_target);
            let (mse, dpred) = mse_loss(&preds, &targets)?;
            for ((head, tape), &g) in self
                .numeric_heads
                .iter()
                .zip(&mut numeric_tapes)
                .zip(&dpred)
            {
                head.backward(tape, &[g * inv_batch])?;
            }
            total += mse * inv_batch;

            for ((head, tape), onehot) in self
                .categorical_heads
                .iter()
                .zip(&mut categorical_tapes)
                .zip(&row.categorical_onehots)
            {
                let probs = head.forward_tape(tape, embedding)?;
                let (ce, mut dlogits) = ce_loss(&probs, onehot)?;
                dlogits.iter_mut().for_each(|g| *g *= inv_batch);
                head.backward(tape, &dlogits)?;
                total += ce * inv_batch;
            }
        }

        let mut grads = Vec::with_capacity(self.param_count());
        for tape in numeric_tapes.iter().chain(&categorical_tapes) {
            tape.push_grads(&mut grads);
        }
        Ok((total, grads))
    }

    /// Loss value only, over pure forward passes.
    fn eval_loss(&self, batch: &[(&[f64], &ConceptVector)]) -> Result<f64, HeadsError> {
        if batch.is_empty() {
            return Err(HeadsError::EmptyBatch);
        }
        let inv_batch = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &(embedding, row) in batch {
            let pred = self.predict(embedding)?;
            let mut preds = pred.numeric.clone();
            preds.push(pred.malignancy);
            let mut targets = row.ordinal_values.clone();
            targets.push(row.malignancy_target);
            total += mse_loss(&preds, &targets)?.0 * inv_batch;
            for (dist, onehot) in pred.categorical.iter().zip(&row.categorical_onehots) {
                total += ce_loss(dist, onehot)?.0 * inv_batch;
            }
        }
        Ok(total)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Pairs every dataset row with its embedding; fails on any gap.
fn embedded_rows<'a>(dataset: &'a Dataset) -> Result<Vec<(&'a [f64], &'a ConceptVector)>, HeadsError> {
    if dataset.embeddings.is_none() {
        return Err(HeadsError::NoEmbeddings);
    }
    dataset
        .rows
        .iter()
        .map(|row| {
            dataset
                .embedding_of(&row.nodule_id)
                .map(|e| (e, row))
                .ok_or_else(|| HeadsError::MissingEmbeddings {
                    nodule_id: row.nodule_id.clone(),
                })
        })
        .collect()
}

/// Trains the concept heads with mini-batch Adam and the plateau schedule.
/// The validation subset for the scheduler is the trailing tenth of the rows
/// as given (fold order is already shuffled).
pub fn train_heads(
    dataset: &Dataset,
    config: &HeadsConfig,
) -> Result<TrainOutcome<ConceptHeads>, HeadsError> {
    let pairs = embedded_rows(dataset)?;
    if pairs.is_empty() {
        return Err(HeadsError::EmptyBatch);
    }
    let input_dim = pairs[0].0.len();
    let mut init_rng = seeded_rng(config.seed, streams::MODEL_INIT);
    let mut model = ConceptHeads::new(dataset.schema.clone(), input_dim, &config.hidden, &mut init_rng);

    let val_len = ((pairs.len() as f64) * VAL_FRACTION).floor() as usize;
    let split = pairs.len() - val_len;
    let (train, val) = pairs.split_at(split);

    let mut optimizer = AdamState::new(model.param_count(), config.base_lr);
    let mut scheduler = PlateauScheduler::new();
    let mut shuffle_rng = seeded_rng(config.seed, streams::EPOCH_SHUFFLE);
    let mut history = Vec::with_capacity(config.epochs);
    let mut params = model.params_flat();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<(&[f64], &ConceptVector)> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads) = model.joint_loss(&batch)?;
            train_loss += loss * batch.len() as f64;
            optimizer.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
        }
        train_loss /= train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            model.eval_loss(val)?
        };
        optimizer.learning_rate = scheduler.observe(val_loss, optimizer.learning_rate);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            learning_rate: optimizer.learning_rate,
        });
    }

    Ok(TrainOutcome {
        model,
        history,
        optimizer,
    })
}

/// Per-concept evaluation: mean absolute error on the normalized scale for
/// numeric concepts (malignancy included), macro-averaged F1 for categorical
/// concepts with argmax class decisions (lowest index wins ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub numeric_mae: BTreeMap<String, f64>,
    pub categorical_f1: BTreeMap<String, f64>,
}

pub fn eval_heads(heads: &ConceptHeads, dataset: &Dataset) -> Result<HeadMetrics, HeadsError> {
    let pairs = embedded_rows(dataset)?;
    if pairs.is_empty() {
        return Err(HeadsError::EmptyBatch);
    }
    let schema = heads.schema();
    let n = pairs.len() as f64;

    let mut numeric_err = vec![0.0; schema.ordinals.len() + 1];
    let mut truths: Vec<Vec<usize>> = vec![Vec::new(); schema.categoricals.len()];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); schema.categoricals.len()];
    for &(embedding, row) in &pairs {
        let pred = heads.predict(embedding)?;
        for (i, (&p, &t)) in pred.numeric.iter().zip(&row.ordinal_values).enumerate() {
            numeric_err[i] += (p - t).abs();
        }
        numeric_err[schema.ordinals.len()] += (pred.malignancy - row.malignancy_target).abs();
        for (m, (dist, onehot)) in pred
            .categorical
            .iter()
            .zip(&row.categorical_onehots)
            .enumerate()
        {
            preds[m].push(argmax(dist));
            truths[m].push(argmax(onehot));
        }
    }

    let mut numeric_mae = BTreeMap::new();
    for (def, err) in schema.ordinals.iter().zip(&numeric_err) {
        numeric_mae.insert(def.name.clone(), err / n);
    }
    numeric_mae.insert(
        schema.target.name.clone(),
        numeric_err[schema.ordinals.len()] / n,
    );

    let mut categorical_f1 = BTreeMap::new();
    for (m, def) in schema.categoricals.iter().enumerate() {
        categorical_f1.insert(
            def.name.clone(),
            macro_f1(&truths[m], &preds[m], def.class_count()),
        );
    }
    Ok(HeadMetrics {
        numeric_mae,
        categorical_f1,
    })
}

/// Macro-averaged F1 over the classes that occur in the truth or the
/// predictions; classes with no precision/recall support score zero.
pub fn macro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..n_classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

/// Serialized checkpoint: the model (with its schema), the schema digest it
/// was trained under, the final optimizer state, and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadsCheckpoint {
    pub schema_hash: String,
    pub seed: u64,
    pub model: ConceptHeads,
    pub optimizer: Option<AdamState>,
}

impl HeadsCheckpoint {
    pub fn new(model: ConceptHeads, seed: u64, optimizer: Option<AdamState>) -> Self {
        HeadsCheckpoint {
            schema_hash: model.schema.digest(),
            seed,
            model,
            optimizer,
        }
    }

    /// Checks that the stored digest still matches the embedded schema.
    pub fn verify(&self) -> Result<(), HeadsError> {
        let expected = self.model.schema.digest();
        if expected != self.schema_hash {
            return Err(HeadsError::SchemaDigestMismatch {
                expected,
                found: self.schema_hash.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_schema;
    use crate::synthetic::embedding_concept_dataset;
    use crate::testutil::{fd_grad, max_rel_err, seeded_rng as test_rng};

    fn zeroed_heads(input_dim: usize) -> ConceptHeads {
        let mut rng = test_rng(0, 10);
        let mut heads = ConceptHeads::new(default_schema(), input_dim, &[4], &mut rng);
        let zeros = vec![0.0; heads.param_count()];
        heads.set_params_flat(&zeros).unwrap();
        heads
    }

    #[test]
    fn head_counts_match_schema() {
        let mut rng = test_rng(0, 10);
        let heads = ConceptHeads::new(default_schema(), 8, &DEFAULT_HIDDEN, &mut rng);
        assert_eq!(heads.numeric_head_count(), 7);
        assert_eq!(heads.categorical_head_count(), 2);
    }

    #[test]
    fn zero_heads_predict_half_and_uniform() {
        let heads = zeroed_heads(5);
        let pred = heads.predict(&[0.3, -0.2, 0.9, 0.0, 1.4]).unwrap();
        assert_eq!(pred.numeric, vec![0.5; 6]);
        assert_eq!(pred.malignancy, 0.5);
        assert_eq!(pred.categorical[0].len(), 4);
        assert_eq!(pred.categorical[1].len(), 6);
        for dist in &pred.categorical {
            let uniform = 1.0 / dist.len() as f64;
            assert!(dist.iter().all(|&p| (p - uniform).abs() < 1e-12));
        }
    }

    #[test]
    fn prediction_ranges_hold_for_extreme_embeddings() {
        let mut rng = test_rng(3, 10);
        let heads = ConceptHeads::new(default_schema(), 4, &[8], &mut rng);
        let pred = heads.predict(&[1e6, -1e6, 1e6, -1e6]).unwrap();
        for &v in pred.numeric.iter().chain([&pred.malignancy]) {
            assert!(v > 0.0 && v < 1.0);
        }
        for dist in &pred.categorical {
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(dist.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn wrong_embedding_length_is_rejected() {
        let heads = zeroed_heads(5);
        assert!(matches!(
            heads.predict(&[1.0, 2.0]),
            Err(HeadsError::Nn(NnError::DimensionMismatch { .. }))
        ));
    }

    fn example_row() -> ConceptVector {
        ConceptVector {
            nodule_id: "n1".into(),
            ordinal_values: vec![0.5, 0.25, 1.0, 0.0, 0.75, 0.5],
            categorical_onehots: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
            malignancy_target: 0.75,
            n_raters: 3,
        }
    }

    #[test]
    fn joint_loss_decomposes_into_terms() {
        let mut rng = test_rng(4, 10);
        let heads = ConceptHeads::new(default_schema(), 3, &[6], &mut rng);
        let row = example_row();
        let embedding = [0.4, -0.9, 0.2];
        let (joint, _) = heads.joint_loss(&[(&embedding, &row)]).unwrap();

        let pred = heads.predict(&embedding).unwrap();
        let mut preds = pred.numeric.clone();
        preds.push(pred.malignancy);
        let mut targets = row.ordinal_values.clone();
        targets.push(row.malignancy_target);
        let mse = mse_loss(&preds, &targets).unwrap().0;
        let ce: f64 = pred
            .categorical
            .iter()
            .zip(&row.categorical_onehots)
            .map(|(d, y)| ce_loss(d, y).unwrap().0)
            .sum();
        assert!((joint - (mse + ce)).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = test_rng(seed, 11);
            let heads = ConceptHeads::new(default_schema(), 3, &[5], &mut rng);
            let rows = [example_row(), {
                let mut r = example_row();
                r.ordinal_values = vec![0.1, 0.9, 0.3, 0.6, 0.2, 0.8];
                r.malignancy_target = 0.25;
                r.categorical_onehots = vec![
                    vec![0.0, 1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                ];
                r
            }];
            let e0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let batch: Vec<(&[f64], &ConceptVector)> = vec![(&e0, &rows[0]), (&e1, &rows[1])];

            let (_, analytic) = heads.joint_loss(&batch).unwrap();
            let params = heads.params_flat();
            let fd = fd_grad(&params, 1e-4, |p| {
                let mut probe = heads.clone();
                probe.set_params_flat(p).unwrap();
                probe.joint_loss(&batch).unwrap().0
            });
            assert!(max_rel_err(&analytic, &fd) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn training_fits_realizable_task() {
        let dataset = embedding_concept_dataset(200, 6, 7);
        let config = HeadsConfig {
            epochs: 120,
            batch_size: 16,
            base_lr: 3e-3,
            hidden: vec![32, 16],
            seed: 7,
        };
        let outcome = train_heads(&dataset, &config).unwrap();
        // Final numeric fit against the generating functions.
        let mut mse = 0.0;
        for row in &dataset.rows {
            let pred = outcome
                .model
                .predict(dataset.embedding_of(&row.nodule_id).unwrap())
                .unwrap();
            let mut preds = pred.numeric.clone();
            preds.push(pred.malignancy);
            let mut targets = row.ordinal_values.clone();
            targets.push(row.malignancy_target);
            mse += mse_loss(&preds, &targets).unwrap().0;
        }
        mse /= dataset.rows.len() as f64;
        assert!(mse < 0.01, "final training MSE {mse}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let dataset = embedding_concept_dataset(30, 4, 2);
        let config = HeadsConfig {
            epochs: 0,
            seed: 2,
            ..HeadsConfig::default()
        };
        let outcome = train_heads(&dataset, &config).unwrap();
        let mut rng = seeded_rng(2, streams::MODEL_INIT);
        let fresh = ConceptHeads::new(dataset.schema.clone(), 4, &config.hidden, &mut rng);
        assert_eq!(outcome.model, fresh);
        assert!(outcome.history.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let dataset = embedding_concept_dataset(60, 4, 3);
        let config = HeadsConfig {
            epochs: 5,
            batch_size: 8,
            base_lr: 1e-3,
            hidden: vec![8],
            seed: 11,
        };
        let a = train_heads(&dataset, &config).unwrap();
        let b = train_heads(&dataset, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn training_without_embeddings_fails() {
        let mut dataset = embedding_concept_dataset(10, 4, 3);
        dataset.embeddings = None;
        assert!(matches!(
            train_heads(&dataset, &HeadsConfig::default()),
            Err(HeadsError::NoEmbeddings)
        ));
    }

    #[test]
    fn perfect_predictions_score_zero_mae_and_unit_f1() {
        // A dataset the trained model fits essentially exactly is expensive;
        // instead check the metric functions directly on ideal inputs.
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 4), 1.0);
        assert_eq!(macro_f1(&[0, 0, 1], &[1, 1, 0], 2), 0.0);
        // Off-by-constant predictions give MAE equal to the offset.
        let truth = [0.2, 0.4, 0.6];
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.1).collect();
        let mae = truth
            .iter()
            .zip(&shifted)
            .map(|(t, p)| (p - t).abs())
            .sum::<f64>()
            / 3.0;
        assert!((mae - 0.1).abs() < 1e-12);
    }

    #[test]
    fn eval_heads_reports_every_concept() {
        let dataset = embedding_concept_dataset(40, 4, 5);
        let config = HeadsConfig {
            epochs: 1,
            batch_size: 8,
            hidden: vec![8],
            seed: 5,
            ..HeadsConfig::default()
        };
        let outcome = train_heads(&dataset, &config).unwrap();
        let metrics = eval_heads(&outcome.model, &dataset).unwrap();
        assert_eq!(metrics.numeric_mae.len(), 7);
        assert!(metrics.numeric_mae.contains_key("malignancy"));
        assert_eq!(metrics.categorical_f1.len(), 2);
        for v in metrics.numeric_mae.values() {
            assert!(*v >= 0.0);
        }
        for v in metrics.categorical_f1.values() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn checkpoint_digest_round_trip() {
        let heads = zeroed_heads(3);
        let ckpt = HeadsCheckpoint::new(heads, 9, None);
        ckpt.verify().unwrap();
        let json = serde_json::to_string(&ckpt).unwrap();
        let back: HeadsCheckpoint = serde_json::from_str(&json).unwrap();
        back.verify().unwrap();
        assert_eq!(back.model, ckpt.model);

        let mut bad = ckpt;
        bad.schema_hash = "0".repeat(64);
        assert!(matches!(
            bad.verify(),
            Err(HeadsError::SchemaDigestMismatch { .. })
        ));
    }
}
