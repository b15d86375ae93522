//! NetFlow data pipeline: CSV ingestion, flow-identifier removal, per-endpoint
//! min-max scaling, stratified train/test splitting, and the non-IID
//! organisation/endpoint partitioning used by the experiments. Also generates
//! synthetic Gaussian stand-in data so everything runs without the real
//! dataset.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fraction of malformed rows tolerated during ingestion.
const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Column-role mapping for a NetFlow CSV file. Checked in as a config file so
/// alternate NetFlow datasets can be used without code changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetflowSchema {
    pub label_column: String,
    pub attack_class_column: String,
    #[serde(default)]
    pub identifier_columns: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl NetflowSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// Default schema for the NF-BoT-IoT-v2 NetFlow v2 layout.
impl Default for NetflowSchema {
    fn default() -> Self {
        Self {
            label_column: "Label".into(),
            attack_class_column: "Attack".into(),
            identifier_columns: vec![
                "IPV4_SRC_ADDR".into(),
                "L4_SRC_PORT".into(),
                "IPV4_DST_ADDR".into(),
                "L4_DST_PORT".into(),
            ],
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Typed columnar view of an ingested CSV file, before identifier removal.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub column_names: Vec<String>,
    pub columns: Vec<ColumnData>,
    pub labels: Vec<u8>,
    pub attack_classes: Vec<String>,
    pub skipped_rows: usize,
}

impl RawDataset {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

/// Feature matrix plus labels and attack-class tags, before scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub attack_classes: Vec<String>,
}

impl LabeledData {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            attack_classes: indices.iter().map(|&i| self.attack_classes[i].clone()).collect(),
        }
    }

    pub fn concat(parts: &[&LabeledData]) -> Result<LabeledData> {
        let first = parts.first().ok_or_else(|| Error::Argument("empty concat".into()))?;
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.features).collect();
        Ok(LabeledData {
            feature_names: first.feature_names.clone(),
            features: Matrix::vstack(&mats)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            attack_classes: parts
                .iter()
                .flat_map(|p| p.attack_classes.iter().cloned())
                .collect(),
        })
    }
}

/// Scaled features plus labels for one endpoint; the unit handed to trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPartition {
    pub endpoint_id: String,
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub attack_classes: Vec<String>,
}

impl DatasetPartition {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

/// Reads a NetFlow CSV. Identifier columns become text columns, everything
/// else (apart from label and attack class) must parse as numeric. Malformed
/// rows are counted and skipped up to a 1% cap.
pub fn load_netflow_csv(path: &Path, schema: &NetflowSchema) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let label_idx = headers
        .iter()
        .position(|h| *h == schema.label_column)
        .ok_or_else(|| Error::Schema(format!("missing label column '{}'", schema.label_column)))?;
    let class_idx = headers.iter().position(|h| *h == schema.attack_class_column).ok_or_else(
        || Error::Schema(format!("missing attack class column '{}'", schema.attack_class_column)),
    )?;

    let mut column_names = Vec::new();
    let mut column_src = Vec::new();
    let mut columns = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if i == label_idx || i == class_idx {
            continue;
        }
        column_names.push(name.clone());
        column_src.push(i);
        if schema.identifier_columns.contains(name) {
            columns.push(ColumnData::Text(Vec::new()));
        } else {
            columns.push(ColumnData::Numeric(Vec::new()));
        }
    }

    let mut labels = Vec::new();
    let mut attack_classes = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    let mut row_nums: Vec<f64> = Vec::with_capacity(columns.len());
    for record in reader.records() {
        let record = record?;
        total += 1;
        let label = match record.get(label_idx).and_then(|v| v.trim().parse::<u8>().ok()) {
            Some(l @ (0 | 1)) => l,
            _ => {
                skipped += 1;
                continue;
            }
        };
        row_nums.clear();
        let mut ok = true;
        for (ci, &si) in column_src.iter().enumerate() {
            match &columns[ci] {
                ColumnData::Numeric(_) => {
                    match record.get(si).and_then(|v| v.trim().parse::<f64>().ok()) {
                        Some(v) if v.is_finite() => row_nums.push(v),
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                ColumnData::Text(_) => row_nums.push(f64::NAN), // placeholder, filled below
            }
        }
        if !ok {
            skipped += 1;
            continue;
        }
        let mut num_iter = row_nums.iter();
        for (ci, &si) in column_src.iter().enumerate() {
            let v = num_iter.next().unwrap();
            match &mut columns[ci] {
                ColumnData::Numeric(col) => col.push(*v),
                ColumnData::Text(col) => col.push(record.get(si).unwrap_or("").to_string()),
            }
        }
        labels.push(label);
        attack_classes.push(record.get(class_idx).unwrap_or("").trim().to_string());
    }

    if total > 0 && (skipped as f64) / (total as f64) > MAX_MALFORMED_FRACTION {
        return Err(Error::Ingestion(format!(
            "{skipped} of {total} rows malformed (over the {MAX_MALFORMED_FRACTION} cap)"
        )));
    }
    log::info!("loaded {} rows from {} ({} skipped)", labels.len(), path.display(), skipped);
    Ok(RawDataset { column_names, columns, labels, attack_classes, skipped_rows: skipped })
}

/// Removes the configured flow-identifier columns (source/destination
/// addresses and ports), preserving the order of the remaining columns.
pub fn drop_flow_identifiers(raw: &RawDataset, identifier_columns: &[String]) -> Result<RawDataset> {
    for id in identifier_columns {
        if !raw.column_names.contains(id) {
            return Err(Error::Schema(format!("identifier column '{id}' not present")));
        }
    }
    let mut column_names = Vec::new();
    let mut columns = Vec::new();
    for (name, col) in raw.column_names.iter().zip(raw.columns.iter()) {
        if !identifier_columns.contains(name) {
            column_names.push(name.clone());
            columns.push(col.clone());
        }
    }
    Ok(RawDataset {
        column_names,
        columns,
        labels: raw.labels.clone(),
        attack_classes: raw.attack_classes.clone(),
        skipped_rows: raw.skipped_rows,
    })
}

/// Converts a raw dataset into a feature matrix. All remaining columns must
/// be numeric; identifier columns should have been dropped first.
pub fn to_labeled(raw: &RawDataset) -> Result<LabeledData> {
    let rows = raw.rows();
    let mut feature_names = Vec::new();
    let mut numeric: Vec<&Vec<f64>> = Vec::new();
    for (name, col) in raw.column_names.iter().zip(raw.columns.iter()) {
        match col {
            ColumnData::Numeric(v) => {
                debug_assert_eq!(v.len(), rows);
                feature_names.push(name.clone());
                numeric.push(v);
            }
            ColumnData::Text(_) => {
                return Err(Error::Schema(format!(
                    "text column '{name}' remains; drop flow identifiers first"
                )));
            }
        }
    }
    let mut features = Matrix::zeros(rows, numeric.len());
    for (c, col) in numeric.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            features.row_mut(r)[c] = *v;
        }
    }
    Ok(LabeledData {
        feature_names,
        features,
        labels: raw.labels.clone(),
        attack_classes: raw.attack_classes.clone(),
    })
}

/// Per-feature min and max, fitted on one endpoint's training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fits min-max bounds on the given (training) features.
pub fn fit_scaler(train_features: &Matrix) -> Result<ScalerState> {
    if train_features.rows() == 0 {
        return Err(Error::Data("cannot fit scaler on empty feature matrix".into()));
    }
    let cols = train_features.cols();
    let mut min = vec![f64::INFINITY; cols];
    let mut max = vec![f64::NEG_INFINITY; cols];
    for row in train_features.iter_rows() {
        for (c, v) in row.iter().enumerate() {
            min[c] = min[c].min(*v);
            max[c] = max[c].max(*v);
        }
    }
    Ok(ScalerState { min, max })
}

/// `(x - min) / (max - min)`, clipped to [0,1]. Constant features map to 0.
pub fn apply_scaler(state: &ScalerState, features: &Matrix) -> Result<Matrix> {
    if features.cols() != state.min.len() {
        return Err(Error::Shape("scaler/feature column count mismatch".into()));
    }
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for c in 0..row.len() {
            let range = state.max[c] - state.min[c];
            row[c] = if range > 0.0 {
                ((row[c] - state.min[c]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Stratified train/test split by (label, attack class). Deterministic under
/// `seed`; strata with fewer than 2 rows go entirely to train.
pub fn split_train_test(
    data: &LabeledData,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledData, LabeledData)> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Argument(format!("split ratio {ratio} must be in (0,1)")));
    }
    let mut strata: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
    for i in 0..data.rows() {
        strata
            .entry((data.labels[i], data.attack_classes[i].as_str()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for ((label, class), mut indices) in strata {
        if indices.len() < 2 {
            log::warn!("stratum ({label}, {class}) has {} row(s); assigned to train", indices.len());
            train_idx.extend(indices);
            continue;
        }
        indices.shuffle(&mut rng);
        let n_train = ((indices.len() as f64) * ratio).round() as usize;
        let n_train = n_train.clamp(1, indices.len() - 1);
        train_idx.extend_from_slice(&indices[..n_train]);
        test_idx.extend_from_slice(&indices[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.select(&train_idx), data.select(&test_idx)))
}

/// Which classes (and how much of them) each endpoint receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointPlan {
    pub endpoint_id: String,
    pub org_id: String,
    pub classes: Vec<String>,
    #[serde(default = "default_true")]
    pub include_benign: bool,
    #[serde(default)]
    pub cap: Option<usize>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    #[serde(default = "default_benign_class")]
    pub benign_class: String,
    /// Total rows kept per attack class before division across endpoints.
    #[serde(default)]
    pub attack_cap: Option<usize>,
    pub endpoints: Vec<EndpointPlan>,
}

fn default_benign_class() -> String {
    "Benign".into()
}

impl PartitionPlan {
    /// The two-organisation, four-endpoint plan from the experiment setup:
    /// C1/C2 hold DDoS + Reconnaissance, C3/C4 hold DoS + Theft, benign on all.
    pub fn two_org_default(attack_cap: Option<usize>) -> Self {
        let mk = |endpoint: &str, org: &str, classes: &[&str]| EndpointPlan {
            endpoint_id: endpoint.into(),
            org_id: org.into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            include_benign: true,
            cap: None,
        };
        Self {
            benign_class: "Benign".into(),
            attack_cap,
            endpoints: vec![
                mk("C1", "k1", &["DDoS", "Reconnaissance"]),
                mk("C2", "k1", &["DDoS", "Reconnaissance"]),
                mk("C3", "k2", &["DoS", "Theft"]),
                mk("C4", "k2", &["DoS", "Theft"]),
            ],
        }
    }
}

/// Splits the dataset across endpoints. Rows of a class shared by several
/// endpoints are divided disjointly between them, so the resulting partitions
/// are pairwise row-disjoint and their union is the plan-selected subset.
pub fn partition(
    data: &LabeledData,
    plan: &PartitionPlan,
    seed: u64,
) -> Result<Vec<(String, LabeledData)>> {
    let mut present: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, class) in data.attack_classes.iter().enumerate() {
        present.entry(class.as_str()).or_default().push(i);
    }

    let mut requested: Vec<&str> = Vec::new();
    for ep in &plan.endpoints {
        for class in &ep.classes {
            if !present.contains_key(class.as_str()) {
                return Err(Error::Plan(format!(
                    "plan requests class '{class}' which is absent from the dataset"
                )));
            }
            if !requested.contains(&class.as_str()) {
                requested.push(class.as_str());
            }
        }
    }
    if plan.endpoints.iter().any(|ep| ep.include_benign) {
        if !present.contains_key(plan.benign_class.as_str()) {
            return Err(Error::Plan(format!(
                "benign class '{}' absent from the dataset",
                plan.benign_class
            )));
        }
        if !requested.contains(&plan.benign_class.as_str()) {
            requested.push(plan.benign_class.as_str());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_endpoint: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for class in requested {
        let takers: Vec<&EndpointPlan> = plan
            .endpoints
            .iter()
            .filter(|ep| {
                if class == plan.benign_class {
                    ep.include_benign
                } else {
                    ep.classes.iter().any(|c| c == class)
                }
            })
            .collect();
        if takers.is_empty() {
            continue;
        }
        let mut indices = present[class].clone();
        indices.shuffle(&mut rng);
        if class != plan.benign_class {
            if let Some(cap) = plan.attack_cap {
                indices.truncate(cap);
            }
        }
        // even disjoint division across all endpoints that include this class
        let share = indices.len() / takers.len();
        let remainder = indices.len() % takers.len();
        let mut offset = 0;
        for (t, ep) in takers.iter().enumerate() {
            let mut take = share + usize::from(t < remainder);
            if let Some(cap) = ep.cap {
                take = take.min(cap);
            }
            per_endpoint
                .entry(ep.endpoint_id.as_str())
                .or_default()
                .extend_from_slice(&indices[offset..offset + take]);
            offset += take;
        }
    }

    let mut out = Vec::new();
    for ep in &plan.endpoints {
        let mut indices = per_endpoint.remove(ep.endpoint_id.as_str()).unwrap_or_default();
        indices.sort_unstable();
        out.push((ep.endpoint_id.clone(), data.select(&indices)));
    }
    Ok(out)
}

/// 70/30 split plus per-endpoint min-max scaling: the scaler is fitted on the
/// endpoint's own training rows and applied to both sides.
pub fn prepare_endpoint(
    endpoint_id: &str,
    data: &LabeledData,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetPartition, DatasetPartition)> {
    let (train, test) = split_train_test(data, ratio, seed)?;
    let scaler = fit_scaler(&train.features)?;
    let make = |d: &LabeledData, features: Matrix| DatasetPartition {
        endpoint_id: endpoint_id.to_string(),
        features,
        labels: d.labels.clone(),
        attack_classes: d.attack_classes.clone(),
    };
    let train_scaled = apply_scaler(&scaler, &train.features)?;
    let test_scaled = apply_scaler(&scaler, &test.features)?;
    Ok((make(&train, train_scaled), make(&test, test_scaled)))
}

/// One Gaussian cluster of the synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub name: String,
    pub count: usize,
    pub mean: Vec<f64>,
    pub label: u8,
    /// Cluster spread override; the dataset-wide `std_dev` when absent.
    #[serde(default)]
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub std_dev: f64,
    pub classes: Vec<SyntheticClass>,
}

impl SyntheticSpec {
    /// Five-class layout mirroring the experiment's class tags. The last
    /// feature is a shared "activity" axis; the benign bulk sits at the
    /// origin, and each attack class is displaced by `separation` (in units
    /// of the benign spread) along an attack axis while staying at zero
    /// activity. DDoS and DoS share one attack axis — like their real-traffic
    /// counterparts they are near-identical in feature space, so each
    /// organisation's model transfers to the other's volumetric attack —
    /// while Reconnaissance and Theft get axes of their own, which only one
    /// organisation ever trains on. For every attack axis a small benign
    /// "anchor" arm is placed at the same displacement but with high
    /// activity.
    ///
    /// The arms serve two purposes. They give every endpoint the same
    /// per-feature value range no matter which attack classes it holds, so
    /// per-endpoint min-max scaling maps all endpoints into a common space
    /// (without them an axis is stretched only where its attack class is
    /// present and the orgs' scaled distributions contradict each other).
    /// They also make each attack class linearly separable — a class
    /// occupies the (attack axis high, activity low) corner that no benign
    /// cluster touches — while a model trained without that class still sees
    /// its region as benign, since nothing in its training data
    /// distinguishes the corner from the surrounding benign geometry. The
    /// arms are kept small (2% of the benign rows each): they anchor the
    /// min-max extremes regardless of their mass, and a heavier arm lets the
    /// organisation that never sees an axis's attack class erode the other
    /// organisation's detector during aggregation. Attack clusters are drawn
    /// tighter (half the benign spread) so they sit cleanly in their corner.
    ///
    /// Needs `feature_dim >= 2`; with fewer than 4 non-activity axes, the
    /// attack-axis assignment wraps around.
    pub fn five_class(
        feature_dim: usize,
        separation: f64,
        benign_count: usize,
        attack_count: usize,
    ) -> Self {
        assert!(feature_dim >= 2, "five-class layout needs an activity axis");
        let attack_layout = [("DDoS", 0usize), ("Reconnaissance", 1), ("DoS", 0), ("Theft", 2)];
        let activity = feature_dim - 1;
        let axis_of = |slot: usize| slot % activity.max(1);
        let mut arm_axes: Vec<usize> = attack_layout.iter().map(|(_, s)| axis_of(*s)).collect();
        arm_axes.sort_unstable();
        arm_axes.dedup();
        let arm_count = (benign_count / 50).max(1);
        let bulk_count = benign_count.saturating_sub(arm_count * arm_axes.len()).max(1);
        let mut classes = vec![SyntheticClass {
            name: "Benign".into(),
            count: bulk_count,
            mean: vec![0.0; feature_dim],
            label: 0,
            std: None,
        }];
        for &axis in &arm_axes {
            let mut arm_mean = vec![0.0; feature_dim];
            arm_mean[axis] = separation;
            arm_mean[activity] = separation;
            classes.push(SyntheticClass {
                name: "Benign".into(),
                count: arm_count,
                mean: arm_mean,
                label: 0,
                std: None,
            });
        }
        for (name, slot) in attack_layout {
            let mut mean = vec![0.0; feature_dim];
            mean[axis_of(slot)] = separation;
            classes.push(SyntheticClass {
                name: name.to_string(),
                count: attack_count,
                mean,
                label: 1,
                std: Some(0.5),
            });
        }
        Self { feature_dim, std_dev: 1.0, classes }
    }
}

/// Draws Gaussian clusters per class. Deterministic under `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledData> {
    if spec.feature_dim == 0 {
        return Err(Error::Argument("feature dim must be >= 1".into()));
    }
    if spec.std_dev <= 0.0 {
        return Err(Error::Argument("std dev must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut classes = Vec::new();
    for class in &spec.classes {
        if class.count == 0 {
            return Err(Error::Argument(format!("class '{}' has zero rows", class.name)));
        }
        if class.mean.len() != spec.feature_dim {
            return Err(Error::Argument(format!(
                "class '{}' mean has dim {}, expected {}",
                class.name,
                class.mean.len(),
                spec.feature_dim
            )));
        }
        let std = class.std.unwrap_or(spec.std_dev);
        if std <= 0.0 {
            return Err(Error::Argument(format!("class '{}' has std {std}", class.name)));
        }
        let normal =
            Normal::new(0.0, std).map_err(|e| Error::Argument(format!("bad std dev: {e}")))?;
        for _ in 0..class.count {
            let row: Vec<f64> =
                class.mean.iter().map(|m| m + normal.sample(&mut rng)).collect();
            rows.push(row);
            labels.push(class.label);
            classes.push(class.name.clone());
        }
    }
    let feature_names = (0..spec.feature_dim).map(|i| format!("f{i}")).collect();
    Ok(LabeledData {
        feature_names,
        features: Matrix::from_rows(&rows)?,
        labels,
        attack_classes: classes,
    })
}

/// Writes a labeled dataset as a CSV with Label and Attack columns, suitable
/// for re-ingestion through `load_netflow_csv`.
pub fn write_csv(data: &LabeledData, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = data.feature_names.clone();
    header.push("Label".into());
    header.push("Attack".into());
    writer.write_record(&header)?;
    for i in 0..data.rows() {
        let mut record: Vec<String> =
            data.features.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(data.labels[i].to_string());
        record.push(data.attack_classes[i].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
