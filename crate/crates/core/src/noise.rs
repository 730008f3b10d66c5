//! Transition matrices, class-conditional label corruption, and conversion of
//! class-labeled data into noisy-similarity-labeled pairs.
//!
//! Class labels are zero-based in memory and one-based in every file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{parse_floats, write_floats};

const ROW_SUM_TOL: f64 = 1e-10;

/// Row-stochastic C×C matrix with entry (i, j) = P(noisy = j | clean = i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::invalid(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for r in 0..m.rows() {
            let row = m.row(r);
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("row {r} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {r} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(classes: usize) -> Self {
        TransitionMatrix(Matrix::identity(classes))
    }

    pub fn num_classes(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes()).map(|r| self.row(r).to_vec()).collect()
    }

    /// Plain-text form: first line C, then C rows of C decimals.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.num_classes());
        for r in 0..self.num_classes() {
            write_floats(&mut s, self.row(r));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, head) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty transition matrix file".into()))?;
        let c: usize = head
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad class count `{}`", head.trim())))?;
        let mut rows = Vec::with_capacity(c);
        for _ in 0..c {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::Parse("transition matrix truncated".into()))?;
            rows.push(parse_floats(line, c, ln + 1)?);
        }
        Self::from_rows(&rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Long-format CSV (`clean,noisy,probability`, one-based classes) for heatmaps.
    pub fn to_heatmap_csv(&self) -> String {
        let mut s = String::from("clean,noisy,probability\n");
        for i in 0..self.num_classes() {
            for j in 0..self.num_classes() {
                let _ = writeln!(s, "{},{},{}", i + 1, j + 1, self.get(i, j));
            }
        }
        s
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.to_rows()
    }
}

/// Symmetric noise: `1 - rho` on the diagonal, `rho / (C - 1)` elsewhere.
pub fn symmetric_transition(classes: usize, rho: f64) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::invalid("symmetric noise needs at least 2 classes"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("noise rate {rho} outside [0, 1)")));
    }
    let off = rho / (classes - 1) as f64;
    let mut m = Matrix::zeros(classes, classes);
    for i in 0..classes {
        for j in 0..classes {
            m.set(i, j, if i == j { 1.0 - rho } else { off });
        }
    }
    TransitionMatrix::new(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    /// Zero-based clean class labels.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} outside 1..={num_classes}",
                bad + 1
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            split,
        })
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

    pub fn subset(&self, indices: &[usize], split: Split) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
        }
    }

    /// Largest Euclidean norm of any feature row.
    pub fn max_feature_norm(&self) -> f64 {
        (0..self.len())
            .map(|r| self.features.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Columnar text: `# split: <name>`, header `n dim C`, then one row per
    /// example with `dim` features followed by the one-based label.
    pub fn to_text(&self) -> String {
        let mut s = format!("# split: {}\n{} {} {}\n", self.split.name(), self.len(), self.dim(), self.num_classes);
        for r in 0..self.len() {
            let mut row = self.features.row(r).to_vec();
            row.push((self.labels[r] + 1) as f64);
            write_floats(&mut s, &row);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut split = Split::Train;
        let mut body = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(c) = t.strip_prefix('#') {
                if let Some(name) = c.trim().strip_prefix("split:") {
                    split = match name.trim() {
                        "train" => Split::Train,
                        "validation" => Split::Validation,
                        "test" => Split::Test,
                        other => return Err(Error::Parse(format!("line {}: unknown split `{other}`", i + 1))),
                    };
                }
                continue;
            }
            body.push((i + 1, t));
        }
        let (hl, header) = body.first().ok_or_else(|| Error::Parse("dataset file is empty".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("line {hl}: header must be `n dim C`")))?;
        let [n, dim, c] = nums[..] else {
            return Err(Error::Parse(format!("line {hl}: header must be `n dim C`")));
        };
        if body.len() - 1 != n {
            return Err(Error::Parse(format!("header declares {n} rows, found {}", body.len() - 1)));
        }
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for &(ln, line) in &body[1..] {
            let vals = parse_floats(line, dim + 1, ln)?;
            let label = vals[dim];
            if label.fract() != 0.0 || label < 1.0 || label > c as f64 {
                return Err(Error::Parse(format!("line {ln}: label {label} outside 1..={c}")));
            }
            labels.push(label as usize - 1);
            data.extend_from_slice(&vals[..dim]);
        }
        LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, c, split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Draw one index from a probability row by inverse CDF.
fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = j;
        }
        acc += p;
        if u < acc {
            return j;
        }
    }
    last_nonzero
}

/// Replace each clean label `i` by `j` with probability `T[i][j]`.
pub fn corrupt_labels(labels: &[usize], t: &TransitionMatrix, seed: u64) -> Result<Vec<usize>> {
    let c = t.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {} outside 1..={c}", bad + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(labels.iter().map(|&y| sample_row(t.row(y), &mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityPair {
    pub first: usize,
    pub second: usize,
    pub similar: bool,
}

impl SimilarityPair {
    pub fn label(&self) -> f64 {
        if self.similar {
            1.0
        } else {
            0.0
        }
    }
}

/// Unordered pairs (`first < second`) over a dataset of `source_len` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPairBatch {
    pairs: Vec<SimilarityPair>,
    source_len: usize,
    /// Latent noisy labels, kept only for diagnostics.
    noisy_labels: Option<Vec<usize>>,
}

impl SimilarityPairBatch {
    pub fn new(pairs: Vec<SimilarityPair>, source_len: usize, noisy_labels: Option<Vec<usize>>) -> Result<Self> {
        for p in &pairs {
            if p.first == p.second {
                return Err(Error::invalid(format!("self-pair at index {}", p.first)));
            }
            if p.first >= source_len || p.second >= source_len {
                return Err(Error::invalid("pair index out of range"));
            }
        }
        if let Some(y) = &noisy_labels {
            if y.len() != source_len {
                return Err(Error::invalid("retained label count differs from dataset size"));
            }
            if pairs.iter().any(|p| p.similar != (y[p.first] == y[p.second])) {
                return Err(Error::invalid("similarity label inconsistent with retained noisy labels"));
            }
        }
        Ok(SimilarityPairBatch {
            pairs,
            source_len,
            noisy_labels,
        })
    }

    pub fn pairs(&self) -> &[SimilarityPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    /// Drops the latent labels, leaving only the similarity view.
    pub fn into_training_view(mut self) -> Self {
        self.noisy_labels = None;
        self
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.similar).count() as f64 / self.pairs.len() as f64
    }

    /// CSV `first,second,similar` with zero-based indices.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("first,second,similar\n");
        for p in &self.pairs {
            let _ = writeln!(s, "{},{},{}", p.first, p.second, u8::from(p.similar));
        }
        s
    }

    pub fn from_csv(text: &str, source_len: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("line {}: expected `first,second,similar`", i + 1));
            let [a, b, s] = f[..] else { return Err(bad()) };
            let similar = match s {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            pairs.push(SimilarityPair {
                first: a.parse().map_err(|_| bad())?,
                second: b.parse().map_err(|_| bad())?,
                similar,
            });
        }
        Self::new(pairs, source_len, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "count")]
pub enum PairStrategy {
    AllPairs,
    Sampled(usize),
}

#[inline]
pub fn unordered_pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index in `0..n(n-1)/2` to the pair `(i, j)`, `i < j`, in
/// row-major order.
fn decode_pair(n: usize, idx: usize) -> (usize, usize) {
    let row_start = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 2);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if row_start(mid) <= idx {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    (lo, lo + 1 + idx - row_start(lo))
}

/// Build noisy similarity pairs from (latent) noisy labels. The returned batch
/// retains the labels for diagnostics; call
/// [`SimilarityPairBatch::into_training_view`] before handing it to a learner.
pub fn make_similarity_pairs(noisy: &[usize], strategy: PairStrategy, seed: u64) -> Result<SimilarityPairBatch> {
    let n = noisy.len();
    if n < 2 {
        return Err(Error::invalid("need at least two examples to form pairs"));
    }
    let total = unordered_pair_count(n);
    let mk = |i: usize, j: usize| SimilarityPair {
        first: i,
        second: j,
        similar: noisy[i] == noisy[j],
    };
    let pairs = match strategy {
        PairStrategy::AllPairs => {
            let mut v = Vec::with_capacity(total);
            for i in 0..n {
                for j in i + 1..n {
                    v.push(mk(i, j));
                }
            }
            v
        }
        PairStrategy::Sampled(k) => {
            if k > total {
                return Err(Error::invalid(format!("requested {k} pairs but only {total} exist")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = index::sample(&mut rng, total, k).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|l| {
                    let (i, j) = decode_pair(n, l);
                    mk(i, j)
                })
                .collect()
        }
    };
    SimilarityPairBatch::new(pairs, n, Some(noisy.to_vec()))
}

/// Isotropic Gaussian clusters centred on the vertices of a regular simplex
/// whose edge length is `separation`.
pub fn gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("class count, class size and dimension must be positive"));
    }
    if !(separation > 0.0) || !(spread >= 0.0) || !separation.is_finite() || !spread.is_finite() {
        return Err(Error::invalid("separation must be positive and spread non-negative"));
    }
    let means = simplex_means(classes, dim, separation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|&m| m + spread * normal.sample(&mut rng)));
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, classes, Split::Train)
}

/// Class means for [`gaussian_blobs`]: pairwise distance exactly `separation`.
pub fn simplex_means(classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if dim + 1 < classes {
        return Err(Error::invalid(format!(
            "simplex placement of {classes} classes needs dim >= {}",
            classes - 1
        )));
    }
    // Orthonormal basis of the sum-zero subspace of R^C via Gram-Schmidt on e_k - e_{k+1}.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes.saturating_sub(1));
    for k in 0..classes.saturating_sub(1) {
        let mut v = vec![0.0; classes];
        v[k] = 1.0;
        v[k + 1] = -1.0;
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    // Centered unit vectors e_i - 1/C have pairwise distance sqrt(2).
    let scale = separation / std::f64::consts::SQRT_2;
    let centroid = 1.0 / classes as f64;
    Ok((0..classes)
        .map(|i| {
            let mut coords = vec![0.0; dim];
            for (k, b) in basis.iter().enumerate() {
                let c: f64 = (0..classes)
                    .map(|j| (if j == i { 1.0 } else { 0.0 } - centroid) * b[j])
                    .sum();
                coords[k] = scale * c;
            }
            coords
        })
        .collect())
}
