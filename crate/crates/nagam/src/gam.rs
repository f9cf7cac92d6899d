//! The decision explainer: a neural generalized additive model.
//!
//! Every concept owns a bank of small subnetworks mixed by learned weights;
//! the malignancy score is the sum of the per-concept bank outputs plus a
//! global bias. Because the prediction is literally that sum, each concept's
//! contribution is exact, not an attribution estimate: perturbing one
//! concept's input can change only its own contribution.
//!
//! Ordinal concepts feed their scalar value to width-1 subnets; categorical
//! concepts feed their one-hot block to width-C subnets. There is no output
//! activation, so scores may exit [0, 1] slightly and are reported raw.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ConceptVector;
use crate::nn::{GradTape, MicroNet, NnError, OutputActivation};
use crate::optim::{AdamState, EpochStats, PlateauScheduler, TrainOutcome};
use crate::rng::{seeded_rng, streams};
use crate::schema::ConceptSchema;

/// Fraction of the (already shuffled) training rows held out for the
/// learning-rate scheduler.
const VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum GamError {
    #[error("concept vector does not match the model schema: {0}")]
    SchemaMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown concept '{0}'")]
    UnknownConcept(String),
    #[error("ordinal shape grids need at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint schema digest {found} does not match model schema {expected}")]
    SchemaDigestMismatch { expected: String, found: String },
}

/// Training hyperparameters for the additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub subnets_per_concept: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            epochs: 80,
            batch_size: 16,
            base_lr: 1e-4,
            subnets_per_concept: 4,
            hidden_width: 32,
            seed: 0,
        }
    }
}

/// One concept's bank: S subnetworks and their mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubnetBank {
    subnets: Vec<MicroNet>,
    mix_weights: Vec<f64>,
}

impl SubnetBank {
    fn new<R: Rng>(input_dim: usize, hidden_width: usize, count: usize, rng: &mut R) -> Self {
        let subnets = (0..count)
            .map(|_| {
                let mut net = MicroNet::new(
                    &[input_dim, hidden_width, 1],
                    OutputActivation::Identity,
                    rng,
                );
                // Fresh banks contribute exactly zero, so a new model with
                // bias = mean target is the best constant predictor.
                net.zero_output_layer();
                net
            })
            .collect();
        SubnetBank {
            subnets,
            mix_weights: vec![1.0 / count as f64; count],
        }
    }

    fn contribution(&self, input: &[f64]) -> Result<f64, NnError> {
        let mut total = 0.0;
        for (net, &w) in self.subnets.iter().zip(&self.mix_weights) {
            total += w * net.forward(input)?[0];
        }
        Ok(total)
    }

    fn param_count(&self) -> usize {
        self.subnets.iter().map(MicroNet::param_count).sum::<usize>() + self.mix_weights.len()
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        for net in &self.subnets {
            net.push_params(out);
        }
        out.extend_from_slice(&self.mix_weights);
    }

    fn pull_params(&mut self, src: &[f64], pos: &mut usize) -> Result<(), NnError> {
        for net in &mut self.subnets {
            net.pull_params(src, pos)?;
        }
        let n = self.mix_weights.len();
        if src.len() < *pos + n {
            return Err(NnError::ShapeMismatch {
                expected: *pos + n,
                got: src.len(),
            });
        }
        self.mix_weights.copy_from_slice(&src[*pos..*pos + n]);
        *pos += n;
        Ok(())
    }
}

/// Neural additive model over a concept schema: per-concept subnetwork banks,
/// learned mixing weights, and a global bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    schema: ConceptSchema,
    subnets_per_concept: usize,
    ordinal_banks: Vec<SubnetBank>,
    categorical_banks: Vec<SubnetBank>,
    bias: f64,
}

/// One concept's exact share of a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptContribution {
    pub concept: String,
    pub contribution: f64,
}

/// A prediction decomposed into its additive parts: the contributions plus
/// the bias sum exactly to the predicted score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub nodule_id: String,
    pub predicted_malignancy: f64,
    pub bias: f64,
    pub contributions: Vec<ConceptContribution>,
}

impl Explanation {
    pub fn contribution_of(&self, concept: &str) -> Option<f64> {
        self.contributions
            .iter()
            .find(|c| c.concept == concept)
            .map(|c| c.contribution)
    }
}

/// A shape function sampled for plotting: ordinal concepts over an even grid
/// on [0, 1], categorical concepts one value per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeGrid {
    Ordinal {
        concept: String,
        points: Vec<OrdinalGridPoint>,
    },
    Categorical {
        concept: String,
        classes: Vec<ClassContribution>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalGridPoint {
    pub value: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContribution {
    pub class: String,
    pub contribution: f64,
}

impl ShapeGrid {
    pub fn concept(&self) -> &str {
        match self {
            ShapeGrid::Ordinal { concept, .. } | ShapeGrid::Categorical { concept, .. } => concept,
        }
    }

    /// Plot-ready CSV with a `value,contribution` header. `center` subtracts
    /// the grid mean from every contribution.
    pub fn to_csv(&self, center: bool) -> String {
        let mut out = String::from("value,contribution\n");
        match self {
            ShapeGrid::Ordinal { points, .. } => {
                let mean = if center {
                    points.iter().map(|p| p.contribution).sum::<f64>() / points.len() as f64
                } else {
                    0.0
                };
                for p in points {
                    out.push_str(&format!("{},{}\n", p.value, p.contribution - mean));
                }
            }
            ShapeGrid::Categorical { classes, .. } => {
                let mean = if center {
                    classes.iter().map(|c| c.contribution).sum::<f64>() / classes.len() as f64
                } else {
                    0.0
                };
                for c in classes {
                    out.push_str(&format!("{},{}\n", c.class, c.contribution - mean));
                }
            }
        }
        out
    }
}

/// Signed difference between a concept's extreme contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDelta {
    pub concept: String,
    /// Contribution at value 1.0 minus contribution at value 0.0.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    /// Contribution of this class minus the mean over all classes.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDeltas {
    pub concept: String,
    pub class_deltas: Vec<ClassDelta>,
}

/// Global shape-function summary for auditing learned patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDeltas {
    pub ordinal_deltas: Vec<ConceptDelta>,
    pub categorical_deltas: Vec<CategoricalDeltas>,
}

impl PatternDeltas {
    pub fn ordinal_delta(&self, concept: &str) -> Option<f64> {
        self.ordinal_deltas
            .iter()
            .find(|d| d.concept == concept)
            .map(|d| d.delta)
    }

    pub fn class_delta(&self, concept: &str, class: &str) -> Option<f64> {
        self.categorical_deltas
            .iter()
            .find(|d| d.concept == concept)?
            .class_deltas
            .iter()
            .find(|d| d.class == class)
            .map(|d| d.delta)
    }
}

impl AdditiveModel {
    pub fn new<R: Rng>(
        schema: ConceptSchema,
        subnets_per_concept: usize,
        hidden_width: usize,
        rng: &mut R,
    ) -> Self {
        assert!(subnets_per_concept >= 1);
        let ordinal_banks = schema
            .ordinals
            .iter()
            .map(|_| SubnetBank::new(1, hidden_width, subnets_per_concept, rng))
            .collect();
        let categorical_banks = schema
            .categoricals
            .iter()
            .map(|c| SubnetBank::new(c.class_count(), hidden_width, subnets_per_concept, rng))
            .collect();
        AdditiveModel {
            schema,
            subnets_per_concept,
            ordinal_banks,
            categorical_banks,
            bias: 0.0,
        }
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn subnets_per_concept(&self) -> usize {
        self.subnets_per_concept
    }

    pub fn param_count(&self) -> usize {
        self.ordinal_banks
            .iter()
            .chain(&self.categorical_banks)
            .map(SubnetBank::param_count)
            .sum::<usize>()
            + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for bank in self.ordinal_banks.iter().chain(&self.categorical_banks) {
            bank.push_params(&mut out);
        }
        out.push(self.bias);
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
        for bank in self
            .ordinal_banks
            .iter_mut()
            .chain(&mut self.categorical_banks)
        {
            bank.pull_params(src, &mut pos)?;
        }
        self.bias = src[pos];
        Ok(())
    }

    fn check_row(&self, x: &ConceptVector) -> Result<(), GamError> {
        if x.ordinal_values.len() != self.schema.ordinals.len() {
            return Err(GamError::SchemaMismatch(format!(
                "expected {} ordinal values, got {}",
                self.schema.ordinals.len(),
                x.ordinal_values.len()
            )));
        }
        if x.categorical_onehots.len() != self.schema.categoricals.len() {
            return Err(GamError::SchemaMismatch(format!(
                "expected {} categorical blocks, got {}",
                self.schema.categoricals.len(),
                x.categorical_onehots.len()
            )));
        }
        for (def, block) in self.schema.categoricals.iter().zip(&x.categorical_onehots) {
            if block.len() != def.class_count() {
                return Err(GamError::SchemaMismatch(format!(
                    "concept '{}' expects {} classes, got {}",
                    def.name,
                    def.class_count(),
                    block.len()
                )));
            }
        }
        Ok(())
    }

    /// Predicts the malignancy score as the explicit sum of per-concept
    /// contributions plus the bias.
    pub fn predict(&self, x: &ConceptVector) -> Result<Explanation, GamError> {
        self.check_row(x)?;
        let mut contributions =
            Vec::with_capacity(self.ordinal_banks.len() + self.categorical_banks.len());
        for ((def, bank), &value) in self
            .schema
            .ordinals
            .iter()
            .zip(&self.ordinal_banks)
            .zip(&x.ordinal_values)
        {
            contributions.push(ConceptContribution {
                concept: def.name.clone(),
                contribution: bank.contribution(&[value])?,
            });
        }
        for ((def, bank), block) in self
            .schema
            .categoricals
            .iter()
            .zip(&self.categorical_banks)
            .zip(&x.categorical_onehots)
        {
            contributions.push(ConceptContribution {
                concept: def.name.clone(),
                contribution: bank.contribution(block)?,
            });
        }
        let predicted = contributions.iter().map(|c| c.contribution).sum::<f64>() + self.bias;
        Ok(Explanation {
            nodule_id: x.nodule_id.clone(),
            predicted_malignancy: predicted,
            bias: self.bias,
            contributions,
        })
    }

    /// Mean squared error of the predictions against the malignancy targets.
    pub fn mse_on(&self, rows: &[ConceptVector]) -> Result<f64, GamError> {
        if rows.is_empty() {
            return Err(GamError::EmptyDataset);
        }
        let mut total = 0.0;
        for row in rows {
            let d = self.predict(row)?.predicted_malignancy - row.malignancy_target;
            total += d * d;
        }
        Ok(total / rows.len() as f64)
    }

    /// Mean absolute error of the predictions against the malignancy targets.
    pub fn mae_on(&self, rows: &[ConceptVector]) -> Result<f64, GamError> {
        if rows.is_empty() {
            return Err(GamError::EmptyDataset);
        }
        let mut total = 0.0;
        for row in rows {
            total += (self.predict(row)?.predicted_malignancy - row.malignancy_target).abs();
        }
        Ok(total / rows.len() as f64)
    }

    /// Batch MSE loss against the malignancy targets and its gradient with
    /// respect to [`params_flat`](Self::params_flat).
    pub fn batch_loss_and_grad(&self, rows: &[&ConceptVector]) -> Result<(f64, Vec<f64>), GamError> {
        if rows.is_empty() {
            return Err(GamError::EmptyDataset);
        }
        let inv_batch = 1.0 / rows.len() as f64;
        let banks: Vec<&SubnetBank> = self
            .ordinal_banks
            .iter()
            .chain(&self.categorical_banks)
            .collect();
        let mut tapes: Vec<Vec<GradTape>> = banks
            .iter()
            .map(|b| b.subnets.iter().map(GradTape::for_net).collect())
            .collect();
        let mut mix_grads: Vec<Vec<f64>> = banks
            .iter()
            .map(|b| vec![0.0; b.mix_weights.len()])
            .collect();
        let mut bias_grad = 0.0;
        let mut loss = 0.0;

        let n_ordinals = self.schema.ordinals.len();
        for row in rows {
            self.check_row(row)?;
            // Forward every subnet, remembering outputs for the mix grads.
            let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(banks.len());
            let mut pred = self.bias;
            for (k, bank) in banks.iter().enumerate() {
                let scalar_input;
                let input: &[f64] = if k < n_ordinals {
                    scalar_input = [row.ordinal_values[k]];
                    &scalar_input
                } else {
                    &row.categorical_onehots[k - n_ordinals]
                };
                let mut outs = Vec::with_capacity(bank.subnets.len());
                for (net, tape) in bank.subnets.iter().zip(&mut tapes[k]) {
                    let y = net.forward_tape(tape, input)?[0];
                    pred += bank.mix_weights[outs.len()] * y;
                    outs.push(y);
                }
                outputs.push(outs);
            }

            let diff = pred - row.malignancy_target;
            loss += diff * diff * inv_batch;
            let dpred = 2.0 * diff * inv_batch;
            bias_grad += dpred;
            for (k, bank) in banks.iter().enumerate() {
                for (s, (net, tape)) in bank.subnets.iter().zip(&mut tapes[k]).enumerate() {
                    net.backward(tape, &[dpred * bank.mix_weights[s]])?;
                    mix_grads[k][s] += dpred * outputs[k][s];
                }
            }
        }

        let mut grads = Vec::with_capacity(self.param_count());
        for (k, bank_tapes) in tapes.iter().enumerate() {
            for tape in bank_tapes {
                tape.push_grads(&mut grads);
            }
            grads.extend_from_slice(&mix_grads[k]);
        }
        grads.push(bias_grad);
        Ok((loss, grads))
    }

    fn bank_for(&self, concept: &str) -> Option<(&SubnetBank, Option<&crate::schema::CategoricalConceptDef>)> {
        if let Some(idx) = self.schema.ordinals.iter().position(|c| c.name == concept) {
            return Some((&self.ordinal_banks[idx], None));
        }
        if let Some(idx) = self
            .schema
            .categoricals
            .iter()
            .position(|c| c.name == concept)
        {
            return Some((
                &self.categorical_banks[idx],
                Some(&self.schema.categoricals[idx]),
            ));
        }
        None
    }

    /// Samples one concept's shape function: `n_points` evenly spaced values
    /// spanning [0, 1] for ordinal concepts (endpoints included), or one
    /// contribution per class for categorical concepts (`n_points` ignored).
    pub fn shape_grid(&self, concept: &str, n_points: usize) -> Result<ShapeGrid, GamError> {
        let (bank, categorical) = self
            .bank_for(concept)
            .ok_or_else(|| GamError::UnknownConcept(concept.to_string()))?;
        match categorical {
            None => {
                if n_points < 2 {
                    return Err(GamError::InvalidGrid(n_points));
                }
                let mut points = Vec::with_capacity(n_points);
                for j in 0..n_points {
                    let value = j as f64 / (n_points - 1) as f64;
                    points.push(OrdinalGridPoint {
                        value,
                        contribution: bank.contribution(&[value])?,
                    });
                }
                Ok(ShapeGrid::Ordinal {
                    concept: concept.to_string(),
                    points,
                })
            }
            Some(def) => {
                let mut classes = Vec::with_capacity(def.class_count());
                for (idx, class) in def.classes.iter().enumerate() {
                    let mut onehot = vec![0.0; def.class_count()];
                    onehot[idx] = 1.0;
                    classes.push(ClassContribution {
                        class: class.clone(),
                        contribution: bank.contribution(&onehot)?,
                    });
                }
                Ok(ShapeGrid::Categorical {
                    concept: concept.to_string(),
                    classes,
                })
            }
        }
    }

    /// Shape grids for every concept in schema order.
    pub fn all_shape_grids(&self, n_points: usize) -> Result<Vec<ShapeGrid>, GamError> {
        self.schema
            .concept_names()
            .into_iter()
            .map(|name| self.shape_grid(name, n_points))
            .collect()
    }

    /// Extreme-value contribution deltas per concept: ordinal concepts
    /// compare the shape function at 1.0 and 0.0, categorical concepts
    /// compare each class to the class mean.
    pub fn global_patterns(&self) -> Result<PatternDeltas, GamError> {
        let mut ordinal_deltas = Vec::with_capacity(self.schema.ordinals.len());
        for (def, bank) in self.schema.ordinals.iter().zip(&self.ordinal_banks) {
            let low = bank.contribution(&[0.0])?;
            let high = bank.contribution(&[1.0])?;
            ordinal_deltas.push(ConceptDelta {
                concept: def.name.clone(),
                delta: high - low,
            });
        }
        let mut categorical_deltas = Vec::with_capacity(self.schema.categoricals.len());
        for (def, bank) in self.schema.categoricals.iter().zip(&self.categorical_banks) {
            let mut values = Vec::with_capacity(def.class_count());
            for idx in 0..def.class_count() {
                let mut onehot = vec![0.0; def.class_count()];
                onehot[idx] = 1.0;
                values.push(bank.contribution(&onehot)?);
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            categorical_deltas.push(CategoricalDeltas {
                concept: def.name.clone(),
                class_deltas: def
                    .classes
                    .iter()
                    .zip(&values)
                    .map(|(class, &v)| ClassDelta {
                        class: class.clone(),
                        delta: v - mean,
                    })
                    .collect(),
            });
        }
        Ok(PatternDeltas {
            ordinal_deltas,
            categorical_deltas,
        })
    }
}

/// Trains the additive model with mini-batch Adam and the plateau schedule.
/// The bias starts at the mean target (the best constant predictor); mixing
/// weights start uniform at 1/S.
pub fn train_gam(
    rows: &[ConceptVector],
    schema: &ConceptSchema,
    config: &GamConfig,
) -> Result<TrainOutcome<AdditiveModel>, GamError> {
    if rows.is_empty() {
        return Err(GamError::EmptyDataset);
    }
    let mut init_rng = seeded_rng(config.seed, streams::MODEL_INIT);
    let mut model = AdditiveModel::new(
        schema.clone(),
        config.subnets_per_concept,
        config.hidden_width,
        &mut init_rng,
    );
    let mean_target = rows.iter().map(|r| r.malignancy_target).sum::<f64>() / rows.len() as f64;
    model.set_bias(mean_target);

    let val_len = ((rows.len() as f64) * VAL_FRACTION).floor() as usize;
    let split = rows.len() - val_len;
    let (train, val) = rows.split_at(split);

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
            let batch: Vec<&ConceptVector> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.batch_loss_and_grad(&batch)?;
            train_loss += loss * batch.len() as f64;
            optimizer.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
        }
        train_loss /= train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            model.mse_on(val)?
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

/// Serialized checkpoint: the model (with its schema), the schema digest,
/// the final optimizer state, and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamCheckpoint {
    pub schema_hash: String,
    pub seed: u64,
    pub model: AdditiveModel,
    pub optimizer: Option<AdamState>,
}

impl GamCheckpoint {
    pub fn new(model: AdditiveModel, seed: u64, optimizer: Option<AdamState>) -> Self {
        GamCheckpoint {
            schema_hash: model.schema.digest(),
            seed,
            model,
            optimizer,
        }
    }

    pub fn verify(&self) -> Result<(), GamError> {
        let expected = self.model.schema.digest();
        if expected != self.schema_hash {
            return Err(GamError::SchemaDigestMismatch {
                expected,
                found: self.schema_hash.clone(),
            });
        }
        Ok(())
    }
}
