//! Datasets, Dirichlet label-skew partitioning and per-client splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabeledBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n × in_dim`.
    pub inputs: Vec<f64>,
    pub in_dim: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        in_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if in_dim == 0 || inputs.len() != labels.len() * in_dim {
            return Err(Error::invalid(
                "dataset inputs do not match labels × in_dim",
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if inputs.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("dataset inputs contain NaN"));
        }
        Ok(Dataset {
            inputs,
            in_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }

    /// Rows at `indices`, in that order. Empty selections are allowed here.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.in_dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs,
            in_dim: self.in_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<LabeledBatch> {
        let sub = self.subset(indices);
        LabeledBatch::new(sub.inputs, sub.in_dim, sub.labels)
    }

    pub fn as_batch(&self) -> Result<LabeledBatch> {
        LabeledBatch::new(self.inputs.clone(), self.in_dim, self.labels.clone())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        histogram(&self.labels, self.num_classes)
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            inputs.extend_from_slice(&p.inputs);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(inputs, first.in_dim, labels, first.num_classes)
    }
}

pub fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &y in labels {
        h[y] += 1;
    }
    h
}

/// Total-variation distance between two count histograms, each normalized.
pub fn tv_distance(a: &[usize], b: &[usize]) -> f64 {
    let sa: usize = a.iter().sum();
    let sb: usize = b.iter().sum();
    if sa == 0 || sb == 0 {
        return 1.0;
    }
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / sa as f64 - y as f64 / sb as f64).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianBlobs,
    TwoSpirals,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs),
            "two_spirals" => Ok(SyntheticKind::TwoSpirals),
            other => Err(Error::invalid(format!(
                "unknown synthetic dataset `{other}`"
            ))),
        }
    }
}

/// Per-dimension standard deviation of blob centers, chosen so center norms are about 1.
fn center_scale(in_dim: usize) -> f64 {
    1.0 / (in_dim as f64).sqrt()
}

/// Class centers used by the blob generator for `seed`.
pub fn blob_centers(num_classes: usize, in_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = center_scale(in_dim);
    (0..num_classes)
        .map(|_| {
            (0..in_dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Class-balanced synthetic data: sample `i` belongs to class `i % num_classes`.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    num_classes: usize,
    in_dim: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::invalid(format!(
            "need n >= num_classes >= 1, got n = {n}, num_classes = {num_classes}"
        )));
    }
    if in_dim < 2 {
        return Err(Error::invalid("in_dim must be at least 2"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::invalid("noise must be finite and non-negative"));
    }
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut inputs = Vec::with_capacity(n * in_dim);
    match kind {
        SyntheticKind::GaussianBlobs => {
            let centers = blob_centers(num_classes, in_dim, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            for &y in &labels {
                for &c in &centers[y] {
                    let e: f64 = rng.sample(StandardNormal);
                    inputs.push(c + noise * e);
                }
            }
        }
        SyntheticKind::TwoSpirals => {
            // One arm per class, rotated evenly; extra dimensions carry pure noise.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &y in &labels {
                let t: f64 = rng.random_range(0.0..1.0);
                let radius = 0.2 + 0.8 * t;
                let angle = 3.0 * std::f64::consts::PI * t
                    + 2.0 * std::f64::consts::PI * y as f64 / num_classes as f64;
                let coords = [radius * angle.cos(), radius * angle.sin()];
                for j in 0..in_dim {
                    let base = coords.get(j).copied().unwrap_or(0.0);
                    let e: f64 = rng.sample(StandardNormal);
                    inputs.push(base + noise * e);
                }
            }
        }
    }
    Dataset::new(inputs, in_dim, labels, num_classes)
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Name(s) => f.write_str(s),
        }
    }
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

fn parse_label(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Some(v as i64),
        _ => None,
    }
}

/// Reads numeric features and an integer label column.
///
/// A header row is assumed when any cell of the first row is non-numeric.
/// Labels are remapped to `0..k` in ascending order of their original values.
/// Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(file);
    let csv_err = |row: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(i + 1, e.to_string()))?;
        rows.push((i + 1, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(csv_err(0, "file is empty".into()));
    };
    let has_header = first.iter().any(|c| c.trim().parse::<f64>().is_err());
    let width = first.len();
    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(csv_err(
                1,
                format!("label column {i} out of range ({width} columns)"),
            ))
        }
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(csv_err(
                    1,
                    format!("label column `{name}` given by name but file has no header"),
                ));
            }
            first
                .iter()
                .position(|c| c.trim() == name)
                .ok_or_else(|| csv_err(1, format!("no column named `{name}`")))?
        }
    };
    let data_rows = if has_header { &rows[1..] } else { &rows[..] };
    if data_rows.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }
    if width < 2 {
        return Err(csv_err(
            1,
            "need at least one feature column and a label column".into(),
        ));
    }

    let mut inputs = Vec::with_capacity(data_rows.len() * (width - 1));
    let mut raw_labels = Vec::with_capacity(data_rows.len());
    for (line, rec) in data_rows {
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let y = parse_label(cell)
                    .ok_or_else(|| csv_err(*line, format!("label `{cell}` is not an integer")))?;
                raw_labels.push(y);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| csv_err(*line, format!("column {j}: `{cell}` is not numeric")))?;
                if v.is_nan() {
                    return Err(csv_err(*line, format!("column {j} is NaN")));
                }
                inputs.push(v);
            }
        }
    }
    let mut mapping = BTreeMap::new();
    for &y in &raw_labels {
        mapping.insert(y, 0usize);
    }
    for (dense, v) in mapping.values_mut().enumerate() {
        *v = dense;
    }
    let labels = raw_labels.iter().map(|y| mapping[y]).collect();
    Dataset::new(inputs, width - 1, labels, mapping.len())
}

/// Disjoint per-client index lists into a parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn histograms(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| {
                let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
                histogram(&labels, ds.num_classes)
            })
            .collect()
    }

    /// Mean TV distance between each client's label histogram and the global one.
    pub fn mean_tv_to_global(&self, ds: &Dataset) -> f64 {
        let global = ds.label_histogram();
        let hs = self.histograms(ds);
        hs.iter().map(|h| tv_distance(h, &global)).sum::<f64>() / hs.len() as f64
    }
}

/// Splits `total` into integer parts proportional to `weights` (largest remainder).
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn dirichlet_sample(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|x| x / sum).collect()
    } else {
        // Every gamma draw underflowed; all mass goes to one uniformly chosen client.
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        v
    }
}

/// Per-class Dirichlet(α) allocation of samples to clients.
pub fn dirichlet_partition(
    ds: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be at least 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if ds.len() < n_clients {
        return Err(Error::invalid(format!(
            "dataset has {} samples, fewer than {n_clients} clients",
            ds.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for c in 0..ds.num_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let props = dirichlet_sample(&mut rng, &gamma, n_clients);
        let counts = largest_remainder(idx.len(), &props);
        let mut start = 0;
        for (k, &cnt) in counts.iter().enumerate() {
            clients[k].extend_from_slice(&idx[start..start + cnt]);
            start += cnt;
        }
    }

    // Each client needs a train and a test sample when the data allows it.
    let min_size = if ds.len() >= 2 * n_clients { 2 } else { 1 };
    while let Some(needy) = clients.iter().position(|c| c.len() < min_size) {
        let donor = (0..n_clients)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = clients[donor]
            .pop()
            .expect("donor holds more than min_size samples");
        clients[needy].push(moved);
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(Partition {
        client_indices: clients,
        alpha,
        seed,
    })
}

/// Local train/test sets per client plus the pooled global test set.
#[derive(Debug, Clone)]
pub struct LocalSplits {
    pub clients: Vec<(Dataset, Dataset)>,
    pub global_test: Dataset,
    pub warnings: Vec<String>,
}

fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Stratified per-client split; clients with a singleton class fall back to a random split.
pub fn split_local(
    partition: &Partition,
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<LocalSplits> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 0.5), got {test_fraction}"
        )));
    }
    let mut warnings = Vec::new();
    let mut clients = Vec::with_capacity(partition.n_clients());
    for (k, idx) in partition.client_indices.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "client {k} has {} samples; at least 2 are needed for a train/test split",
                idx.len()
            )));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9)));
        let n_test = test_count(idx.len(), test_fraction);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in idx {
            by_class.entry(ds.labels[i]).or_default().push(i);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        if by_class.values().any(|v| v.len() < 2) {
            warnings.push(format!(
                "client {k}: a present class has fewer than 2 samples; used a random split"
            ));
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng);
            test.extend_from_slice(&shuffled[..n_test]);
            train.extend_from_slice(&shuffled[n_test..]);
        } else {
            let sizes: Vec<f64> = by_class.values().map(|v| v.len() as f64).collect();
            let per_class = largest_remainder(n_test, &sizes);
            for (members, &t) in by_class.values().zip(&per_class) {
                let mut m = members.clone();
                m.shuffle(&mut rng);
                let t = t.min(m.len() - 1);
                test.extend_from_slice(&m[..t]);
                train.extend_from_slice(&m[t..]);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        clients.push((ds.subset(&train), ds.subset(&test)));
    }
    let tests: Vec<&Dataset> = clients.iter().map(|(_, t)| t).collect();
    let global_test = Dataset::concat(&tests)?;
    Ok(LocalSplits {
        clients,
        global_test,
        warnings,
    })
}
