//! Annotation parsing, consensus aggregation, dataset caching, and fold
//! splitting.
//!
//! Annotation files are CSV with one row per (nodule, rater):
//! `nodule_id,rater_id,subtlety,internal_structure,calcification,sphericity,
//! margin,lobulation,spiculation,texture,malignancy`. Ordinal columns carry
//! integer 1-5 ratings, categorical columns the integer class codes declared
//! in the schema. Embedding files are CSV with a `nodule_id` column followed
//! by fixed-width numeric columns.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{seeded_rng, streams};
use crate::schema::{ConceptSchema, SchemaError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("missing column '{name}' in header")]
    MissingColumn { name: String },
    #[error("line {line}: {source}")]
    ScaleViolation {
        line: u64,
        #[source]
        source: SchemaError,
    },
    #[error("line {line}: embedding width {got} differs from first row width {expected}")]
    DimensionMismatch { line: u64, expected: usize, got: usize },
    #[error("duplicate nodule_id '{id}'")]
    DuplicateId { id: String },
    #[error("k-fold split needs 2 <= k <= n, got k={k}, n={n}")]
    InvalidK { k: usize, n: usize },
    #[error("embeddings missing for {} nodules: {}", missing.len(), format_missing(missing))]
    EmbeddingCoverage { missing: Vec<String> },
    #[error("dataset cache is malformed: {0}")]
    MalformedCache(String),
}

fn format_missing(ids: &[String]) -> String {
    const SHOWN: usize = 20;
    let mut out = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        out.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    out
}

/// One rater's scores for one nodule, exactly as read from the file.
#[derive(Debug, Clone, PartialEq)]
pub struct NoduleRecord {
    pub nodule_id: String,
    pub rater_id: String,
    /// Ordinal ratings in schema order (six concepts).
    pub ordinal_ratings: Vec<i64>,
    /// Categorical class codes in schema order (two concepts).
    pub categorical_ratings: Vec<i64>,
    pub malignancy: i64,
}

/// Per-nodule consensus features: normalized ordinal values, one-hot
/// categorical blocks, and the normalized malignancy target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub nodule_id: String,
    pub ordinal_values: Vec<f64>,
    pub categorical_onehots: Vec<Vec<f64>>,
    pub malignancy_target: f64,
    pub n_raters: usize,
}

impl ConceptVector {
    /// Concatenated feature vector: ordinal values then one-hot blocks.
    pub fn features(&self) -> Vec<f64> {
        let mut out = self.ordinal_values.clone();
        for block in &self.categorical_onehots {
            out.extend_from_slice(block);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub nodule_id: String,
    pub values: Vec<f64>,
}

/// The train-ready dataset: schema, consensus rows, and optional embeddings
/// standing in for the image feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ConceptSchema,
    pub rows: Vec<ConceptVector>,
    pub embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

impl Dataset {
    pub fn new(schema: ConceptSchema, rows: Vec<ConceptVector>) -> Self {
        Dataset {
            schema,
            rows,
            embeddings: None,
        }
    }

    /// Attaches embeddings, requiring coverage of every row.
    pub fn attach_embeddings(&mut self, rows: Vec<EmbeddingRow>) -> Result<(), IngestError> {
        let map: BTreeMap<String, Vec<f64>> =
            rows.into_iter().map(|r| (r.nodule_id, r.values)).collect();
        let missing: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !map.contains_key(&r.nodule_id))
            .map(|r| r.nodule_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::EmbeddingCoverage { missing });
        }
        self.embeddings = Some(map);
        Ok(())
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embeddings
            .as_ref()
            .and_then(|m| m.values().next().map(Vec::len))
    }

    pub fn embedding_of(&self, nodule_id: &str) -> Option<&[f64]> {
        self.embeddings
            .as_ref()
            .and_then(|m| m.get(nodule_id).map(Vec::as_slice))
    }

    /// Writes the JSON-lines cache: a header object (schema + embedding
    /// dimension) followed by one row object per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), IngestError> {
        let io_err = |source| IngestError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        let header = CacheHeader {
            schema: self.schema.clone(),
            embedding_dim: self.embedding_dim(),
        };
        let mut write_line = |value: String| -> Result<(), IngestError> {
            file.write_all(value.as_bytes()).map_err(io_err)?;
            file.write_all(b"\n").map_err(io_err)
        };
        write_line(serde_json::to_string(&header).expect("header serializes"))?;
        for row in &self.rows {
            let cached = CacheRow {
                vector: row.clone(),
                embedding: self
                    .embeddings
                    .as_ref()
                    .and_then(|m| m.get(&row.nodule_id).cloned()),
            };
            write_line(serde_json::to_string(&cached).expect("row serializes"))?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, IngestError> {
        let io_err = |source| IngestError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = BufReader::new(std::fs::File::open(path).map_err(io_err)?);
        let mut lines = file.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| IngestError::MalformedCache("empty file".into()))?
            .map_err(io_err)?;
        let header: CacheHeader = serde_json::from_str(&header_line)
            .map_err(|e| IngestError::MalformedCache(format!("header: {e}")))?;
        let mut rows = Vec::new();
        let mut embeddings = BTreeMap::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let cached: CacheRow = serde_json::from_str(&line)
                .map_err(|e| IngestError::MalformedCache(format!("line {}: {e}", idx + 2)))?;
            if let Some(embedding) = cached.embedding {
                embeddings.insert(cached.vector.nodule_id.clone(), embedding);
            }
            rows.push(cached.vector);
        }
        let mut dataset = Dataset::new(header.schema, rows);
        if !embeddings.is_empty() {
            dataset.embeddings = Some(embeddings);
        }
        Ok(dataset)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    schema: ConceptSchema,
    embedding_dim: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    #[serde(flatten)]
    vector: ConceptVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

/// Column layout of an annotation CSV, resolved from its header row.
struct AnnotationColumns {
    nodule_id: usize,
    rater_id: usize,
    ordinals: Vec<usize>,
    categoricals: Vec<usize>,
    malignancy: usize,
}

impl AnnotationColumns {
    fn resolve(header: &csv::StringRecord, schema: &ConceptSchema) -> Result<Self, IngestError> {
        let find = |name: &str| -> Result<usize, IngestError> {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn {
                    name: name.to_string(),
                })
        };
        Ok(AnnotationColumns {
            nodule_id: find("nodule_id")?,
            rater_id: find("rater_id")?,
            ordinals: schema
                .ordinals
                .iter()
                .map(|c| find(&c.name))
                .collect::<Result<_, _>>()?,
            categoricals: schema
                .categoricals
                .iter()
                .map(|c| find(&c.name))
                .collect::<Result<_, _>>()?,
            malignancy: find(&schema.target.name)?,
        })
    }
}

/// Parses an annotation CSV into one record per (nodule, rater) row,
/// validating every rating against the schema.
pub fn parse_annotations(path: &Path, schema: &ConceptSchema) -> Result<Vec<NoduleRecord>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations_reader(file, schema)
}

/// Same as [`parse_annotations`] but over any reader.
pub fn parse_annotations_reader<R: std::io::Read>(
    reader: R,
    schema: &ConceptSchema,
) -> Result<Vec<NoduleRecord>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = csv_reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let columns = AnnotationColumns::resolve(&header, schema)?;

    let mut records = Vec::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line()))
            .unwrap_or(idx as u64 + 2);
        let row = row.map_err(|e| IngestError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize, what: &str| -> Result<&str, IngestError> {
            row.get(col).map(str::trim).ok_or_else(|| IngestError::MalformedRow {
                line,
                message: format!("missing field '{what}'"),
            })
        };
        let int_field = |col: usize, what: &str| -> Result<i64, IngestError> {
            let raw = field(col, what)?;
            raw.parse::<i64>().map_err(|_| IngestError::MalformedRow {
                line,
                message: format!("field '{what}' is not an integer: '{raw}'"),
            })
        };

        let mut ordinal_ratings = Vec::with_capacity(schema.ordinals.len());
        for (def, &col) in schema.ordinals.iter().zip(&columns.ordinals) {
            let value = int_field(col, &def.name)?;
            def.normalize(value as f64)
                .map_err(|source| IngestError::ScaleViolation { line, source })?;
            ordinal_ratings.push(value);
        }
        let mut categorical_ratings = Vec::with_capacity(schema.categoricals.len());
        for (def, &col) in schema.categoricals.iter().zip(&columns.categoricals) {
            let code = int_field(col, &def.name)?;
            def.class_index(code)
                .map_err(|source| IngestError::ScaleViolation { line, source })?;
            categorical_ratings.push(code);
        }
        let malignancy = int_field(columns.malignancy, &schema.target.name)?;
        schema
            .target
            .normalize(malignancy as f64)
            .map_err(|source| IngestError::ScaleViolation { line, source })?;

        records.push(NoduleRecord {
            nodule_id: field(columns.nodule_id, "nodule_id")?.to_string(),
            rater_id: field(columns.rater_id, "rater_id")?.to_string(),
            ordinal_ratings,
            categorical_ratings,
            malignancy,
        });
    }
    Ok(records)
}

/// Aggregates per-rater records into per-nodule consensus vectors: ordinal
/// concepts and malignancy take the rater mean (then normalize), categorical
/// concepts take the majority vote with the lowest class code breaking ties.
/// Nodules appear in first-occurrence order.
pub fn consensus(
    records: &[NoduleRecord],
    schema: &ConceptSchema,
) -> Result<Vec<ConceptVector>, SchemaError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&NoduleRecord>> = BTreeMap::new();
    for record in records {
        let entry = groups.entry(&record.nodule_id).or_default();
        if entry.is_empty() {
            order.push(&record.nodule_id);
        }
        entry.push(record);
    }

    let mut rows = Vec::with_capacity(order.len());
    for id in order {
        let raters = &groups[id];
        let n = raters.len() as f64;

        let mut ordinal_values = Vec::with_capacity(schema.ordinals.len());
        for (i, def) in schema.ordinals.iter().enumerate() {
            let mean = raters.iter().map(|r| r.ordinal_ratings[i] as f64).sum::<f64>() / n;
            ordinal_values.push(def.normalize(mean)?);
        }

        let mut categorical_onehots = Vec::with_capacity(schema.categoricals.len());
        for (i, def) in schema.categoricals.iter().enumerate() {
            let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
            for r in raters.iter() {
                *votes.entry(r.categorical_ratings[i]).or_insert(0) += 1;
            }
            // BTreeMap iterates codes ascending, so on equal counts the
            // lowest code wins.
            let (winner, _) = votes
                .iter()
                .fold((i64::MAX, 0usize), |(best_code, best_count), (&code, &count)| {
                    if count > best_count {
                        (code, count)
                    } else {
                        (best_code, best_count)
                    }
                });
            categorical_onehots.push(def.encode(winner)?);
        }

        let mal_mean = raters.iter().map(|r| r.malignancy as f64).sum::<f64>() / n;
        rows.push(ConceptVector {
            nodule_id: id.to_string(),
            ordinal_values,
            categorical_onehots,
            malignancy_target: schema.target.normalize(mal_mean)?,
            n_raters: raters.len(),
        });
    }
    Ok(rows)
}

/// Loads an embedding CSV: header row with `nodule_id` first, then one row
/// per nodule with a fixed number of numeric columns.
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_embeddings_reader(file)
}

pub fn load_embeddings_reader<R: std::io::Read>(reader: R) -> Result<Vec<EmbeddingRow>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = csv_reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.get(0).map(str::trim) != Some("nodule_id") {
        return Err(IngestError::MissingColumn {
            name: "nodule_id".to_string(),
        });
    }

    let mut rows: Vec<EmbeddingRow> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut width: Option<usize> = None;
    for (idx, row) in csv_reader.records().enumerate() {
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line()))
            .unwrap_or(idx as u64 + 2);
        let row = row.map_err(|e| IngestError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        let id = row
            .get(0)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| IngestError::MalformedRow {
                line,
                message: "empty nodule_id".to_string(),
            })?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { id });
        }
        let values: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| IngestError::MalformedRow {
                    line,
                    message: format!("non-numeric embedding value '{v}'"),
                })
            })
            .collect::<Result<_, _>>()?;
        match width {
            None => width = Some(values.len()),
            Some(expected) if expected != values.len() => {
                return Err(IngestError::DimensionMismatch {
                    line,
                    expected,
                    got: values.len(),
                })
            }
            _ => {}
        }
        rows.push(EmbeddingRow { nodule_id: id, values });
    }
    Ok(rows)
}

/// Deterministic shuffled k-fold partition of `0..n`. Each index lands in
/// exactly one test fold; fold sizes differ by at most one, with the
/// remainder going to the earliest folds. Train indices keep shuffle order.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, IngestError> {
    if k < 2 || n < k {
        return Err(IngestError::InvalidK { k, n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, streams::KFOLD);
    indices.shuffle(&mut rng);

    let base = n / k;
    let remainder = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        let test: Vec<usize> = indices[start..start + size].to_vec();
        let train: Vec<usize> = indices[..start]
            .iter()
            .chain(&indices[start + size..])
            .copied()
            .collect();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_schema;
    use proptest::prelude::*;

    const HEADER: &str = "nodule_id,rater_id,subtlety,internal_structure,calcification,sphericity,margin,lobulation,spiculation,texture,malignancy";

    fn parse(text: &str) -> Result<Vec<NoduleRecord>, IngestError> {
        parse_annotations_reader(text.as_bytes(), &default_schema())
    }

    #[test]
    fn parses_one_record_per_rater_line() {
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,6,4,4,2,1,5,3\n\
             n1,r2,4,1,6,4,4,2,1,5,4\n\
             n1,r3,4,1,5,4,5,2,2,5,4\n"
        );
        let records = parse(&text).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].nodule_id, "n1");
        assert_eq!(records[2].rater_id, "r3");
        assert_eq!(records[0].ordinal_ratings, vec![3, 4, 4, 2, 1, 5]);
        assert_eq!(records[0].malignancy, 3);
    }

    #[test]
    fn empty_file_with_header_gives_empty_list() {
        assert!(parse(&format!("{HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn out_of_scale_rating_is_a_scale_violation() {
        let text = format!("{HEADER}\nn1,r1,3,1,6,4,4,2,7,5,3\n");
        match parse(&text) {
            Err(IngestError::ScaleViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ScaleViolation, got {other:?}"),
        }
    }

    #[test]
    fn unknown_class_code_is_a_scale_violation() {
        let text = format!("{HEADER}\nn1,r1,3,9,6,4,4,2,1,5,3\n");
        assert!(matches!(parse(&text), Err(IngestError::ScaleViolation { .. })));
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let text = "nodule_id,rater_id,subtlety\nn1,r1,3\n";
        match parse(text) {
            Err(IngestError::MissingColumn { name }) => assert_eq!(name, "sphericity"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_rating_is_malformed_with_line() {
        let text = format!("{HEADER}\nn1,r1,3,1,6,4,4,2,1,5,3\nn2,r1,x,1,6,4,4,2,1,5,3\n");
        match parse(&text) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn consensus_means_then_normalizes() {
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,6,4,4,2,1,5,3\n\
             n1,r2,3,1,6,4,4,2,1,5,4\n\
             n1,r3,3,1,6,4,4,2,1,5,4\n\
             n1,r4,3,1,6,4,4,2,1,5,5\n"
        );
        let schema = default_schema();
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        assert_eq!(rows.len(), 1);
        // malignancy mean 4.0 -> (4-1)/4
        assert_eq!(rows[0].malignancy_target, 0.75);
        assert_eq!(rows[0].n_raters, 4);
    }

    #[test]
    fn consensus_of_single_rater_is_verbatim() {
        let text = format!("{HEADER}\nn1,r1,3,1,6,4,4,2,1,5,3\n");
        let schema = default_schema();
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        assert_eq!(rows[0].ordinal_values[0], 0.5); // subtlety 3 -> 0.5
        assert_eq!(rows[0].malignancy_target, 0.5);
        assert_eq!(rows[0].n_raters, 1);
    }

    #[test]
    fn categorical_majority_vote_with_low_code_tiebreak() {
        let schema = default_schema();
        // calcification codes: Absent=6 twice, Central=5 once -> Absent.
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,6,4,4,2,1,5,3\n\
             n1,r2,3,1,6,4,4,2,1,5,3\n\
             n1,r3,3,1,5,4,4,2,1,5,3\n"
        );
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        assert_eq!(rows[0].categorical_onehots[1], vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);

        // Tie between Solid(3) and Absent(6) -> lower code 3 wins.
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,3,4,4,2,1,5,3\n\
             n1,r2,3,1,6,4,4,2,1,5,3\n"
        );
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        assert_eq!(rows[0].categorical_onehots[1], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn consensus_is_permutation_invariant() {
        let schema = default_schema();
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,6,4,4,2,1,5,3\n\
             n1,r2,4,1,5,3,4,2,2,5,4\n\
             n2,r1,2,2,3,4,3,1,1,4,2\n"
        );
        let mut records = parse(&text).unwrap();
        let forward = consensus(&records, &schema).unwrap();
        records.swap(0, 1);
        let swapped = consensus(&records, &schema).unwrap();
        assert_eq!(forward, swapped);
    }

    #[test]
    fn embeddings_fixed_width_and_unique() {
        let rows = load_embeddings_reader("nodule_id,e0,e1\nn1,0.5,1.5\nn2,-1,2\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].values, vec![0.5, 1.5]);

        let err = load_embeddings_reader("nodule_id,e0,e1\nn1,0.5,1.5\nn2,-1,2,3\n".as_bytes());
        assert!(matches!(err, Err(IngestError::DimensionMismatch { .. })));

        let err = load_embeddings_reader("nodule_id,e0\nn1,0.5\nn1,1.5\n".as_bytes());
        assert!(matches!(err, Err(IngestError::DuplicateId { .. })));
    }

    #[test]
    fn kfold_sizes_match_protocol() {
        let folds = kfold_split(2651, 5, 9).unwrap();
        let mut test_sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        assert_eq!(test_sizes.remove(0), 531);
        assert!(test_sizes.iter().all(|&s| s == 530));
        let train_sizes: Vec<usize> = folds.iter().map(|(t, _)| t.len()).collect();
        assert_eq!(train_sizes[0], 2120);
        assert!(train_sizes[1..].iter().all(|&s| s == 2121));
    }

    #[test]
    fn kfold_singleton_folds() {
        let folds = kfold_split(5, 5, 0).unwrap();
        assert!(folds.iter().all(|(_, t)| t.len() == 1));
    }

    #[test]
    fn kfold_is_deterministic_and_rejects_bad_k() {
        assert_eq!(kfold_split(100, 5, 7).unwrap(), kfold_split(100, 5, 7).unwrap());
        assert!(matches!(kfold_split(3, 5, 0), Err(IngestError::InvalidK { .. })));
        assert!(matches!(kfold_split(10, 1, 0), Err(IngestError::InvalidK { .. })));
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let schema = default_schema();
        let text = format!(
            "{HEADER}\n\
             n1,r1,3,1,6,4,4,2,1,5,3\n\
             n1,r2,4,1,6,3,4,2,2,5,4\n\
             n2,r1,2,2,3,4,3,1,1,4,2\n"
        );
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        let mut dataset = Dataset::new(schema, rows);
        dataset
            .attach_embeddings(vec![
                EmbeddingRow { nodule_id: "n1".into(), values: vec![0.25, -1.0] },
                EmbeddingRow { nodule_id: "n2".into(), values: vec![0.5, 2.0] },
            ])
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        dataset.save_jsonl(&path).unwrap();
        let loaded = Dataset::load_jsonl(&path).unwrap();
        assert_eq!(dataset, loaded);

        // Re-serialization is byte-identical.
        let again = dir.path().join("cache2.jsonl");
        loaded.save_jsonl(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn embedding_coverage_gap_is_rejected() {
        let schema = default_schema();
        let text = format!("{HEADER}\nn1,r1,3,1,6,4,4,2,1,5,3\nn2,r1,2,2,3,4,3,1,1,4,2\n");
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        let mut dataset = Dataset::new(schema, rows);
        let err = dataset.attach_embeddings(vec![EmbeddingRow {
            nodule_id: "n1".into(),
            values: vec![0.0],
        }]);
        match err {
            Err(IngestError::EmbeddingCoverage { missing }) => {
                assert_eq!(missing, vec!["n2".to_string()]);
            }
            other => panic!("expected EmbeddingCoverage, got {other:?}"),
        }
    }

    #[test]
    fn feature_vector_is_sixteen_wide() {
        let schema = default_schema();
        let text = format!("{HEADER}\nn1,r1,3,1,6,4,4,2,1,5,3\n");
        let rows = consensus(&parse(&text).unwrap(), &schema).unwrap();
        assert_eq!(rows[0].features().len(), schema.input_dim());
    }

    proptest! {
        #[test]
        fn kfold_partitions_exactly(n in 10usize..400, k in 2usize..8, seed in 0u64..50) {
            prop_assume!(n >= k);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut seen = vec![0usize; n];
            for (train, test) in &folds {
                for &i in test {
                    seen[i] += 1;
                }
                let test_set: BTreeSet<_> = test.iter().collect();
                prop_assert!(train.iter().all(|i| !test_set.contains(i)));
                prop_assert_eq!(train.len() + test.len(), n);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
