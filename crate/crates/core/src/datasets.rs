//! Labeled tabular data: CSV ingestion, a seeded synthetic generator, the
//! train/reference/test split and shuffled batch streams.
//!
//! # CSV layout
//!
//! One example per line, comma separated, no header. The first column is an
//! integer class label (0-based or 1-based, chosen by [`TabularFormat`]); the
//! remaining columns are features. Purchase100/Texas100 exports in this
//! layout use 1-based labels. Blank lines and lines starting with `#` are
//! ignored.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    /// Stable identifiers of the examples (row index in the source dataset).
    ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(features, labels, class_count, ids)
    }

    pub fn with_ids(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if labels.len() != features.rows() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Validation(format!(
                "label {bad} with {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Validation("features contain NaN or infinity".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            ids,
        })
    }

    /// A dataset with no rows.
    pub fn empty(dim: usize, class_count: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            class_count,
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// The examples at `indices` (positions in this dataset), in order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// First `n` examples.
    pub fn truncated(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Writes the dataset in the canonical CSV layout with 0-based labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            for (row, y) in self.features.row_iter().zip(&self.labels) {
                write!(out, "{y}")?;
                for v in row {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TabularFormat {
    /// Value of the smallest label in the file (0 or 1).
    pub label_base: usize,
    /// Require every feature to be exactly 0 or 1.
    pub binary: bool,
}

impl TabularFormat {
    pub fn purchase100() -> Self {
        Self {
            label_base: 1,
            binary: true,
        }
    }
}

/// Loads a label-first CSV file. `class_count` is the largest label plus one.
pub fn load_tabular(path: &Path, format: TabularFormat) -> Result<LabeledDataset> {
    if format.label_base > 1 {
        return Err(Error::Config(format!(
            "label base must be 0 or 1, got {}",
            format.label_base
        )));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let cols = record.len();
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(parse_err(line, format!("expected {w} columns, found {cols}")));
            }
            _ => {}
        }
        if cols < 2 {
            return Err(parse_err(line, "a row needs a label and at least one feature".into()));
        }
        let raw: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad label {:?}", &record[0])))?;
        if raw < format.label_base {
            return Err(parse_err(
                line,
                format!("label {raw} below base {}", format.label_base),
            ));
        }
        labels.push(raw - format.label_base);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature {field:?}")));
            }
            if format.binary && v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!(
                    "{}:{line}: non-binary feature {field}",
                    path.display()
                )));
            }
            data.push(v);
        }
    }
    let dim = width.map_or(0, |w| w - 1);
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    LabeledDataset::new(features, labels, class_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Probability that a centroid bit is copied from a prototype shared by
    /// all classes rather than drawn independently. Higher values make the
    /// classes overlap more.
    pub cluster_tightness: f64,
    /// Per-bit probability of flipping a centroid bit when drawing an example.
    pub flip_prob: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            classes: 100,
            per_class: 150,
            dim: 600,
            cluster_tightness: 0.5,
            flip_prob: 0.1,
        }
    }
}

/// Clustered binary data: one random centroid per class, examples are noisy
/// copies of their centroid. Examples are ordered class by class.
pub fn synthesize(params: &SyntheticParams, seed: u64) -> Result<LabeledDataset> {
    let SyntheticParams {
        classes,
        per_class,
        dim,
        cluster_tightness,
        flip_prob,
    } = *params;
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config("synthetic counts must be positive".into()));
    }
    if !(0.0..1.0).contains(&cluster_tightness) {
        return Err(Error::Config(format!(
            "cluster_tightness must lie in [0, 1), got {cluster_tightness}"
        )));
    }
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(Error::Config(format!(
            "flip_prob must lie in [0, 0.5), got {flip_prob}"
        )));
    }
    let mut rng = seed::rng(seed);
    let prototype: Vec<bool> = (0..dim).map(|_| rng.random_bool(0.5)).collect();
    let centroids: Vec<Vec<bool>> = (0..classes)
        .map(|_| {
            prototype
                .iter()
                .map(|&bit| {
                    if rng.random_bool(cluster_tightness) {
                        bit
                    } else {
                        rng.random_bool(0.5)
                    }
                })
                .collect()
        })
        .collect();

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, centroid) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            for &bit in centroid {
                let flipped = flip_prob > 0.0 && rng.random_bool(flip_prob);
                data.push(if bit != flipped { 1.0 } else { 0.0 });
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_reference: usize,
    pub n_test: usize,
    /// Extra disjoint slice holding an attacker's known non-members; zero
    /// unless a neural-network attack is configured.
    #[serde(default)]
    pub n_attacker: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_reference + self.n_test + self.n_attacker
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub reference: LabeledDataset,
    pub test: LabeledDataset,
    pub attacker: LabeledDataset,
}

/// Partitions a seeded permutation of the dataset into disjoint blocks.
pub fn split(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<Splits> {
    if spec.n_train == 0 || spec.n_reference == 0 || spec.n_test == 0 {
        return Err(Error::Config("split sizes must be positive".into()));
    }
    if spec.total() > dataset.len() {
        return Err(Error::Size {
            requested: spec.total(),
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(spec.seed, &[seed::stream::SPLIT])));
    let mut rest = order.as_slice();
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        dataset.subset(head)
    };
    Ok(Splits {
        train: take(spec.n_train),
        reference: take(spec.n_reference),
        test: take(spec.n_test),
        attacker: take(spec.n_attacker),
    })
}

/// One mini-batch drawn from a stream.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn gather(data: &LabeledDataset, indices: Vec<usize>) -> Batch {
        Batch {
            features: data.features().select_rows(&indices),
            labels: indices.iter().map(|&i| data.labels()[i]).collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Endless sequence of shuffled mini-batches over `n` indices.
///
/// Epoch `e` visits the permutation determined by `(seed, e)`; the last batch
/// of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    permutation: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut stream = Self {
            n,
            batch_size,
            seed,
            epoch: 0,
            permutation: Vec::new(),
            cursor: 0,
        };
        stream.permutation = stream.permutation_for(0);
        Ok(stream)
    }

    fn permutation_for(&self, epoch: u64) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.n).collect();
        p.shuffle(&mut seed::rng(seed::derive(self.seed, &[epoch])));
        p
    }

    fn roll_epoch(&mut self) {
        self.epoch += 1;
        self.permutation = self.permutation_for(self.epoch);
        self.cursor = 0;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Epoch that the next batch belongs to.
    pub fn epoch(&self) -> u64 {
        if self.n > 0 && self.cursor == self.n {
            self.epoch + 1
        } else {
            self.epoch
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Indices of the next batch; never crosses an epoch boundary.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.n == 0 {
            return Vec::new();
        }
        if self.cursor == self.n {
            self.roll_epoch();
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let out = self.permutation[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }

    /// Next `m` indices, continuing into following epochs when needed.
    pub fn take(&mut self, m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(m);
        if self.n == 0 {
            return out;
        }
        while out.len() < m {
            if self.cursor == self.n {
                self.roll_epoch();
            }
            let want = (m - out.len()).min(self.n - self.cursor);
            out.extend_from_slice(&self.permutation[self.cursor..self.cursor + want]);
            self.cursor += want;
        }
        out
    }

    pub fn next_batch(&mut self, data: &LabeledDataset) -> Batch {
        Batch::gather(data, self.next_indices())
    }
}
