//! Seeded synthetic data generators.
//!
//! The surrogate annotation generator produces per-rater records with the
//! same schema, rating quantization, and rater-count variability as the real
//! source data, driven by an additive ground-truth malignancy law. It backs
//! experiments and acceptance checks when the real annotation export is not
//! available. The other generators build small task-specific datasets for
//! model tests.

use rand::Rng;

use crate::ingest::{consensus, Dataset, EmbeddingRow, NoduleRecord};
use crate::nn::sigmoid;
use crate::rng::{seeded_rng, streams};
use crate::schema::{default_schema, ConceptSchema, OrdinalConceptDef};

/// Additive contribution of each calcification class to the latent
/// malignancy, indexed like the schema classes (Absent last, positive).
const CALCIFICATION_EFFECT: [f64; 6] = [0.00, 0.00, 0.02, 0.03, 0.01, 0.14];
/// Same for internal structure (Soft Tissue first).
const INTERNAL_STRUCTURE_EFFECT: [f64; 4] = [0.02, 0.00, 0.00, 0.00];

/// Draw weights for categorical classes, roughly matching the observed
/// class imbalance (soft tissue and absent calcification dominate).
const INTERNAL_STRUCTURE_PREVALENCE: [f64; 4] = [0.90, 0.05, 0.03, 0.02];
const CALCIFICATION_PREVALENCE: [f64; 6] = [0.03, 0.04, 0.08, 0.05, 0.05, 0.75];

/// Latent malignancy on [0, 1] as an additive function of the latent concept
/// values: spiculation raises it nonlinearly, solid texture lowers it,
/// absent calcification raises it.
fn latent_malignancy(
    ordinals: &[f64],
    internal_structure: usize,
    calcification: usize,
    noise: f64,
) -> f64 {
    let subtlety = ordinals[0];
    let lobulation = ordinals[3];
    let spiculation = ordinals[4];
    let texture = ordinals[5];
    let m = 0.05
        + 0.32 * spiculation * spiculation
        + 0.22 * (1.0 - texture)
        + 0.12 * subtlety
        + 0.08 * lobulation
        + INTERNAL_STRUCTURE_EFFECT[internal_structure]
        + CALCIFICATION_EFFECT[calcification]
        + noise;
    m.clamp(0.0, 1.0)
}

fn weighted_class<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (idx, &w) in weights.iter().enumerate() {
        if draw < w {
            return idx;
        }
        draw -= w;
    }
    weights.len() - 1
}

fn quantize_rating<R: Rng>(latent: f64, rng: &mut R) -> i64 {
    let jitter = rng.gen_range(-0.45..0.45);
    ((1.0 + 4.0 * latent + jitter).round() as i64).clamp(1, 5)
}

/// Generates per-rater annotation records for `n_nodules` synthetic nodules.
pub fn surrogate_records(n_nodules: usize, seed: u64) -> Vec<NoduleRecord> {
    let schema = default_schema();
    let mut rng = seeded_rng(seed, streams::SURROGATE);
    let mut records = Vec::new();
    for i in 0..n_nodules {
        let nodule_id = format!("syn{i:05}");
        let latents: Vec<f64> = (0..schema.ordinals.len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let internal_structure = weighted_class(&INTERNAL_STRUCTURE_PREVALENCE, &mut rng);
        let calcification = weighted_class(&CALCIFICATION_PREVALENCE, &mut rng);
        let noise = rng.gen_range(-0.03..0.03);
        let malignancy = latent_malignancy(&latents, internal_structure, calcification, noise);

        let n_raters = rng.gen_range(1..=4usize);
        for r in 0..n_raters {
            let ordinal_ratings: Vec<i64> =
                latents.iter().map(|&v| quantize_rating(v, &mut rng)).collect();
            let categorical_ratings: Vec<i64> = [internal_structure, calcification]
                .iter()
                .zip(&schema.categoricals)
                .map(|(&true_class, def)| {
                    let observed = if rng.gen_range(0.0..1.0) < 0.88 {
                        true_class
                    } else {
                        rng.gen_range(0..def.class_count())
                    };
                    def.class_codes[observed]
                })
                .collect();
            records.push(NoduleRecord {
                nodule_id: nodule_id.clone(),
                rater_id: format!("r{r}"),
                ordinal_ratings,
                categorical_ratings,
                malignancy: quantize_rating(malignancy, &mut rng),
            });
        }
    }
    records
}

/// Surrogate records aggregated into a ready dataset.
pub fn surrogate_dataset(n_nodules: usize, seed: u64) -> Dataset {
    let schema = default_schema();
    let records = surrogate_records(n_nodules, seed);
    let rows = consensus(&records, &schema).expect("surrogate ratings are in range");
    Dataset::new(schema, rows)
}

/// A reduced schema with `names.len()` ordinal concepts and no categoricals,
/// for shape-recovery experiments on known generators.
pub fn ordinal_only_schema(names: &[&str]) -> ConceptSchema {
    ConceptSchema {
        ordinals: names
            .iter()
            .map(|n| OrdinalConceptDef {
                name: n.to_string(),
                scale_min: 1,
                scale_max: 5,
                low_label: "Low".into(),
                high_label: "High".into(),
            })
            .collect(),
        categoricals: vec![],
        target: OrdinalConceptDef {
            name: "malignancy".into(),
            scale_min: 1,
            scale_max: 5,
            low_label: "Unlikely".into(),
            high_label: "Suspicious".into(),
        },
    }
}

/// Rows with uniform ordinal values on [0, 1] and target computed by the
/// supplied generator. Categorical blocks follow the schema (first class).
pub fn rows_from_generator(
    schema: &ConceptSchema,
    n: usize,
    seed: u64,
    target_fn: impl Fn(&[f64]) -> f64,
) -> Vec<crate::ingest::ConceptVector> {
    let mut rng = seeded_rng(seed, streams::SURROGATE + 100);
    (0..n)
        .map(|i| {
            let values: Vec<f64> = (0..schema.ordinals.len())
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            let target = target_fn(&values);
            crate::ingest::ConceptVector {
                nodule_id: format!("gen{i:05}"),
                ordinal_values: values.clone(),
                categorical_onehots: schema
                    .categoricals
                    .iter()
                    .map(|c| {
                        let mut onehot = vec![0.0; c.class_count()];
                        onehot[0] = 1.0;
                        onehot
                    })
                    .collect(),
                malignancy_target: target,
                n_raters: 1,
            }
        })
        .collect()
}

/// A dataset whose concept values are monotone link functions of a random
/// embedding, so concept heads can fit them essentially exactly. Returns the
/// dataset with embeddings attached.
pub fn embedding_concept_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    let schema = default_schema();
    let mut rng = seeded_rng(seed, streams::SURROGATE + 200);

    let n_numeric = schema.ordinals.len() + 1;
    let numeric_weights: Vec<Vec<f64>> = (0..n_numeric)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let categorical_weights: Vec<Vec<Vec<f64>>> = schema
        .categoricals
        .iter()
        .map(|c| {
            (0..c.class_count())
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n);
    for i in 0..n {
        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dot = |w: &[f64]| w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();

        let numeric: Vec<f64> = numeric_weights.iter().map(|w| sigmoid(dot(w))).collect();
        let categorical_onehots: Vec<Vec<f64>> = categorical_weights
            .iter()
            .map(|class_ws| {
                let scores: Vec<f64> = class_ws.iter().map(|w| dot(w)).collect();
                let best = scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(idx, _)| idx)
                    .unwrap();
                let mut onehot = vec![0.0; scores.len()];
                onehot[best] = 1.0;
                onehot
            })
            .collect();

        let nodule_id = format!("emb{i:05}");
        rows.push(crate::ingest::ConceptVector {
            nodule_id: nodule_id.clone(),
            ordinal_values: numeric[..schema.ordinals.len()].to_vec(),
            categorical_onehots,
            malignancy_target: numeric[schema.ordinals.len()],
            n_raters: 1,
        });
        embeddings.push(EmbeddingRow {
            nodule_id,
            values: h,
        });
    }

    let mut dataset = Dataset::new(schema, rows);
    dataset
        .attach_embeddings(embeddings)
        .expect("generated embeddings cover all rows");
    dataset
}
