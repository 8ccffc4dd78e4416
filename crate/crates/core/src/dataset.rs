//! Flow-record ingestion: CSV loading against a user-supplied schema,
//! min-max / one-hot encoding, binary attack labels and the seeded
//! train/test split.
//!
//! Numeric columns are min-max normalised with the range observed at fit
//! time and clamped to `[0, 1]` afterwards. Categorical columns expand to a
//! one-hot group over the sorted category dictionary; a category that was
//! not seen at fit time encodes as an all-zero group and is counted in
//! [`EncodedDataset::unseen_categories`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Binary label for "no attack".
pub const NORMAL: u8 = 0;
/// Binary label for any attack class.
pub const ATTACK: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column layout of a CSV flow-record file.
///
/// `columns` lists every CSV column in file order, including the label
/// column. The label column never contributes features, whatever its kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
    pub label_column: String,
    pub normal_label: String,
    #[serde(default)]
    pub has_header: bool,
}

impl FeatureSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: FeatureSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for column in &self.columns {
            if !seen.insert(column.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate column name `{}`",
                    column.name
                )));
            }
        }
        if !seen.contains(self.label_column.as_str()) {
            return Err(Error::Schema(format!(
                "unknown label column `{}`",
                self.label_column
            )));
        }
        let features = self
            .columns
            .iter()
            .filter(|c| c.name != self.label_column && c.kind != ColumnKind::Ignored)
            .count();
        if features == 0 {
            return Err(Error::Schema("no feature columns".into()));
        }
        Ok(())
    }

    pub fn label_index(&self) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == self.label_column)
            .ok_or_else(|| Error::Schema(format!("unknown label column `{}`", self.label_column)))
    }

    /// Hex SHA-256 of the schema's canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub values: Vec<String>,
    pub label: String,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV rows from any reader. Row numbers in errors are 1-based and
/// count data rows only (a header line is not counted).
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<RawRecord>> {
    schema.validate()?;
    let label_idx = schema.label_index()?;
    let expected = schema.columns.len();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(reader);

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != expected {
            return Err(Error::Arity {
                row: i + 1,
                expected,
                found: row.len(),
            });
        }
        let values: Vec<String> = row.iter().map(|v| v.trim().to_string()).collect();
        let label = values[label_idx].clone();
        records.push(RawRecord { values, label });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric { name: String, min: f64, max: f64 },
    Categorical { name: String, categories: Vec<String> },
    Ignored { name: String },
    Label { name: String },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name, .. }
            | ColumnEncoding::Categorical { name, .. }
            | ColumnEncoding::Ignored { name }
            | ColumnEncoding::Label { name } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { categories, .. } => categories.len(),
            ColumnEncoding::Ignored { .. } | ColumnEncoding::Label { .. } => 0,
        }
    }
}

/// Per-column normalisation ranges and category dictionaries, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub columns: Vec<ColumnEncoding>,
}

/// One schema column of an encoded vector mapped back to domain units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedColumn {
    pub name: String,
    pub value: String,
    pub normalized: Vec<f64>,
}

impl EncodingMap {
    /// Length of every encoded feature vector.
    pub fn width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// One name per encoded feature; one-hot entries are `column=category`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for column in &self.columns {
            match column {
                ColumnEncoding::Numeric { name, .. } => names.push(name.clone()),
                ColumnEncoding::Categorical { name, categories } => {
                    names.extend(categories.iter().map(|c| format!("{name}={c}")))
                }
                _ => {}
            }
        }
        names
    }

    /// Maps an encoded vector back to per-column values. Numeric columns are
    /// de-normalised (clamped values stay clamped); a zero one-hot group
    /// decodes to `"<unseen>"`.
    pub fn decode(&self, features: &[f64]) -> Result<Vec<DecodedColumn>> {
        if features.len() != self.width() {
            return Err(Error::Dimension {
                expected: self.width(),
                found: features.len(),
            });
        }
        let mut out = Vec::new();
        let mut offset = 0;
        for column in &self.columns {
            match column {
                ColumnEncoding::Numeric { name, min, max } => {
                    let v = features[offset];
                    out.push(DecodedColumn {
                        name: name.clone(),
                        value: format!("{}", min + v * (max - min)),
                        normalized: vec![v],
                    });
                    offset += 1;
                }
                ColumnEncoding::Categorical { name, categories } => {
                    let group = &features[offset..offset + categories.len()];
                    let value = group
                        .iter()
                        .position(|&v| v == 1.0)
                        .map(|i| categories[i].clone())
                        .unwrap_or_else(|| "<unseen>".to_string());
                    out.push(DecodedColumn {
                        name: name.clone(),
                        value,
                        normalized: group.to_vec(),
                    });
                    offset += categories.len();
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn parse_numeric(token: &str, row: usize, column: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            token: token.to_string(),
        }),
    }
}

pub fn fit_encoding(records: &[RawRecord], schema: &FeatureSchema) -> Result<EncodingMap> {
    schema.validate()?;
    if records.is_empty() {
        return Err(Error::Config("cannot fit an encoding on zero records".into()));
    }
    let mut columns = Vec::with_capacity(schema.columns.len());
    for (c, column) in schema.columns.iter().enumerate() {
        let name = column.name.clone();
        if name == schema.label_column {
            columns.push(ColumnEncoding::Label { name });
            continue;
        }
        let encoding = match column.kind {
            ColumnKind::Ignored => ColumnEncoding::Ignored { name },
            ColumnKind::Numeric => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for (r, record) in records.iter().enumerate() {
                    let v = parse_numeric(&record.values[c], r + 1, &name)?;
                    min = min.min(v);
                    max = max.max(v);
                }
                ColumnEncoding::Numeric { name, min, max }
            }
            ColumnKind::Categorical => {
                let mut categories: Vec<String> =
                    records.iter().map(|r| r.values[c].clone()).collect();
                categories.sort();
                categories.dedup();
                ColumnEncoding::Categorical { name, categories }
            }
        };
        columns.push(encoding);
    }
    Ok(EncodingMap { columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub schema_hash: String,
}

/// An encoded dataset. A freshly encoded dataset has ids `0..n`; subsets
/// produced by [`split`] or [`EncodedDataset::subset`] keep the parent ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub instances: Vec<EncodedInstance>,
    /// Raw label strings, parallel to `instances`.
    pub raw_labels: Vec<String>,
    pub encoding_map: EncodingMap,
    pub provenance: Provenance,
    /// Number of (instance, categorical column) cells encoded as an all-zero group.
    pub unseen_categories: usize,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn width(&self) -> usize {
        self.encoding_map.width()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.provenance.source = source.into();
        self
    }

    /// Instances with the given ids, in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<EncodedDataset> {
        let index: HashMap<usize, usize> = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id, i))
            .collect();
        let mut instances = Vec::with_capacity(ids.len());
        let mut raw_labels = Vec::with_capacity(ids.len());
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::Config(format!("id {id} not in dataset")))?;
            instances.push(self.instances[i].clone());
            raw_labels.push(self.raw_labels[i].clone());
        }
        Ok(EncodedDataset {
            instances,
            raw_labels,
            encoding_map: self.encoding_map.clone(),
            provenance: self.provenance.clone(),
            unseen_categories: 0,
        })
    }

    /// Counts of (normal, attack, unlabeled) instances.
    pub fn class_balance(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for inst in &self.instances {
            match inst.label {
                Some(NORMAL) => counts.0 += 1,
                Some(_) => counts.1 += 1,
                None => counts.2 += 1,
            }
        }
        counts
    }
}

pub fn encode(
    records: &[RawRecord],
    encoding_map: &EncodingMap,
    schema: &FeatureSchema,
) -> Result<EncodedDataset> {
    if encoding_map.columns.len() != schema.columns.len() {
        return Err(Error::Schema(format!(
            "encoding map has {} columns, schema has {}",
            encoding_map.columns.len(),
            schema.columns.len()
        )));
    }
    let width = encoding_map.width();
    let mut unseen = 0;
    let mut instances = Vec::with_capacity(records.len());
    for (r, record) in records.iter().enumerate() {
        if record.values.len() != schema.columns.len() {
            return Err(Error::Arity {
                row: r + 1,
                expected: schema.columns.len(),
                found: record.values.len(),
            });
        }
        let mut features = Vec::with_capacity(width);
        for (column, token) in encoding_map.columns.iter().zip(&record.values) {
            match column {
                ColumnEncoding::Numeric { name, min, max } => {
                    let v = parse_numeric(token, r + 1, name)?;
                    let scaled = if max > min {
                        ((v - min) / (max - min)).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    features.push(scaled);
                }
                ColumnEncoding::Categorical { categories, .. } => {
                    let hit = categories.binary_search(token).ok();
                    if hit.is_none() {
                        unseen += 1;
                    }
                    features.extend((0..categories.len()).map(|i| {
                        if Some(i) == hit {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
                ColumnEncoding::Ignored { .. } | ColumnEncoding::Label { .. } => {}
            }
        }
        instances.push(EncodedInstance {
            id: r,
            features,
            label: None,
        });
    }
    Ok(EncodedDataset {
        instances,
        raw_labels: records.iter().map(|r| r.label.clone()).collect(),
        encoding_map: encoding_map.clone(),
        provenance: Provenance {
            source: String::new(),
            schema_hash: schema.hash(),
        },
        unseen_categories: unseen,
    })
}

/// Collapses every raw label to 0 (equal to `normal_label`) or 1 (anything else).
pub fn binarize_labels(mut dataset: EncodedDataset, normal_label: &str) -> Result<EncodedDataset> {
    let missing: Vec<usize> = dataset
        .instances
        .iter()
        .zip(&dataset.raw_labels)
        .filter(|(_, raw)| raw.is_empty())
        .map(|(inst, _)| inst.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    for (inst, raw) in dataset.instances.iter_mut().zip(&dataset.raw_labels) {
        inst.label = Some(if raw == normal_label { NORMAL } else { ATTACK });
    }
    Ok(dataset)
}

/// Fits an encoding on `records`, encodes them and binarizes the labels.
pub fn prepare(records: &[RawRecord], schema: &FeatureSchema) -> Result<EncodedDataset> {
    let map = fit_encoding(records, schema)?;
    binarize_labels(encode(records, &map, schema)?, &schema.normal_label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: EncodedDataset,
    pub test: EncodedDataset,
    /// Set when rounding left either side empty.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_fraction: f64,
    pub stratified: bool,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    Ok(())
}

fn train_size(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64).round() as usize).min(n)
}

/// Seeded shuffle-then-cut split. `|train| = round(train_fraction * n)`;
/// both sides are returned in ascending id order.
pub fn split(dataset: &EncodedDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    let manifest = split_manifest(dataset, train_fraction, seed, false)?;
    materialize(dataset, &manifest)
}

/// Like [`split`], but cuts each binary class separately so both sides keep
/// the class balance. Unlabeled instances form their own stratum.
pub fn split_stratified(dataset: &EncodedDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    let manifest = split_manifest(dataset, train_fraction, seed, true)?;
    materialize(dataset, &manifest)
}

pub fn split_manifest(
    dataset: &EncodedDataset,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitManifest> {
    check_fraction(train_fraction)?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    let strata: Vec<Vec<usize>> = if stratified {
        let mut by_label: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
        for inst in &dataset.instances {
            by_label.entry(inst.label).or_default().push(inst.id);
        }
        by_label.into_values().collect()
    } else {
        vec![dataset.ids()]
    };
    for mut ids in strata {
        ids.shuffle(&mut rng);
        let cut = train_size(ids.len(), train_fraction);
        test_ids.extend_from_slice(&ids[cut..]);
        ids.truncate(cut);
        train_ids.extend(ids);
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(SplitManifest {
        seed,
        train_fraction,
        stratified,
        train_ids,
        test_ids,
    })
}

pub fn materialize(dataset: &EncodedDataset, manifest: &SplitManifest) -> Result<Split> {
    let train = dataset.subset(&manifest.train_ids)?;
    let test = dataset.subset(&manifest.test_ids)?;
    let degenerate = train.is_empty() || test.is_empty();
    Ok(Split {
        train,
        test,
        degenerate,
    })
}

const SNAPSHOT_FORMAT: &str = "alids-encoded";
const SNAPSHOT_VERSION: u32 = 1;

/// On-disk form of an encoded dataset: the schema and encoding map, plus
/// the encoded matrix when cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSnapshot {
    pub format: String,
    pub version: u32,
    pub schema: FeatureSchema,
    pub encoding_map: EncodingMap,
    pub provenance: Provenance,
    pub unseen_categories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<Vec<EncodedInstance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_labels: Option<Vec<String>>,
}

impl EncodedSnapshot {
    pub fn new(schema: &FeatureSchema, dataset: &EncodedDataset, include_matrix: bool) -> Self {
        EncodedSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            schema: schema.clone(),
            encoding_map: dataset.encoding_map.clone(),
            provenance: dataset.provenance.clone(),
            unseen_categories: dataset.unseen_categories,
            instances: include_matrix.then(|| dataset.instances.clone()),
            raw_labels: include_matrix.then(|| dataset.raw_labels.clone()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snapshot: EncodedSnapshot = serde_json::from_str(&text)?;
        if snapshot.format != SNAPSHOT_FORMAT || snapshot.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported encoded snapshot {} v{}",
                snapshot.format, snapshot.version
            )));
        }
        Ok(snapshot)
    }

    /// The cached dataset, if the matrix was included.
    pub fn dataset(&self) -> Option<EncodedDataset> {
        let instances = self.instances.clone()?;
        let raw_labels = self
            .raw_labels
            .clone()
            .unwrap_or_else(|| vec![String::new(); instances.len()]);
        Some(EncodedDataset {
            instances,
            raw_labels,
            encoding_map: self.encoding_map.clone(),
            provenance: self.provenance.clone(),
            unseen_categories: self.unseen_categories,
        })
    }
}
