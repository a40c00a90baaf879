//! Datasets, non-iid partitioning, per-node noise and train/val/test splits.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};

/// Magic bytes of the binary dataset format.
pub const MAGIC: &[u8; 4] = b"SFD1";

/// Nodes with fewer samples than this trigger partition repair.
pub const MIN_NODE_SAMPLES: usize = 10;
/// Nodes holding fewer well-populated classes than this trigger partition repair.
pub const MIN_NODE_CLASSES: usize = 2;
/// Samples a node needs of a class for it to count toward [`MIN_NODE_CLASSES`]
/// (lowered for classes too small to give every node this many).
pub const MIN_CLASS_SAMPLES: usize = 10;
const MAX_REPAIRS: usize = 100;

/// Labelled feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("dataset has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.as_slice().iter().any(|v| v.is_nan()) {
            return Err(Error::Input("NaN feature".into()));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in order. Unlike [`Dataset::new`] this allows an
    /// empty result.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn to_batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }
}

/// Disjoint per-node index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub node_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_nodes(&self) -> usize {
        self.node_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.node_indices.iter().map(Vec::len).collect()
    }

    /// Stable fingerprint used to check that strategies see identical data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.node_indices.hash(&mut h);
        h.finish()
    }
}

/// K Gaussian blobs with unit-variance features, min-max scaled to [0, 1].
///
/// Centers sit on scaled basis vectors so every pair is exactly `class_sep`
/// apart; when there are more classes than features the directions are
/// random unit vectors instead.
pub fn synthetic_dataset(n: usize, d: usize, k: usize, class_sep: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || d < 2 || n < k {
        return Err(Error::Config(format!(
            "synthetic dataset needs n >= K >= 2 and d >= 2 (got n={n}, d={d}, K={k})"
        )));
    }
    if !(class_sep >= 0.0 && class_sep.is_finite()) {
        return Err(Error::Config(format!("invalid class separation {class_sep}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let radius = class_sep / std::f64::consts::SQRT_2;

    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            if k <= d {
                let mut v = vec![0.0; d];
                v[c] = radius;
                v
            } else {
                let dir: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|x| x / norm * radius).collect()
            }
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for &c in &centers[y] {
            data.push(c + std_normal.sample(&mut rng));
        }
    }
    let mut features = Matrix::from_vec(n, d, data)?;
    min_max_scale(&mut features);
    Dataset::new(features, labels, k)
}

fn min_max_scale(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for j in 0..cols {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..rows {
            let v = m.get(i, j);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        for i in 0..rows {
            let v = &mut m.row_mut(i)[j];
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}

/// One Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if concentration.is_empty() || concentration.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Config("Dirichlet concentration must be positive".into()));
    }
    let gammas: Vec<Gamma<f64>> = concentration
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;
    // Very small shapes can underflow every draw to zero; redraw.
    for _ in 0..1000 {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|x| x / sum).collect());
        }
    }
    Err(Error::Numeric("Dirichlet draw underflowed repeatedly".into()))
}

fn cut_counts(props: &[f64], n: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(props.len());
    let mut cum = 0.0;
    let mut assigned = 0;
    for (i, &p) in props.iter().enumerate() {
        cum += p;
        let end = if i + 1 == props.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(assigned, n)
        };
        counts.push(end - assigned);
        assigned = end;
    }
    counts
}

/// Label-skewed split of `labels` across `n_nodes`.
///
/// For every class a proportion vector `p_c ~ Dirichlet(alpha * s)` is drawn,
/// with `s` the node-size targets (uniform when `None`), and that class's
/// shuffled samples are cut across nodes by `p_c`. A node left with fewer than
/// [`MIN_NODE_SAMPLES`] samples, or with fewer than [`MIN_NODE_CLASSES`] classes
/// of at least [`MIN_CLASS_SAMPLES`] samples each, gets the class where it is
/// weakest redrawn, up to 100 times. The per-class minimum keeps both classes
/// present in the node's validation and test splits.
pub fn dirichlet_partition(
    labels: &[usize],
    n_nodes: usize,
    alpha: f64,
    target_sizes: Option<&[f64]>,
    seed: u64,
) -> Result<Partition> {
    if labels.is_empty() {
        return Err(Error::Config("cannot partition an empty label vector".into()));
    }
    if n_nodes < 2 {
        return Err(Error::Config("need at least two nodes".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("Dirichlet alpha must be > 0, got {alpha}")));
    }
    let base = match target_sizes {
        Some(t) => {
            if t.len() != n_nodes {
                return Err(Error::Config(format!(
                    "{} target sizes for {n_nodes} nodes",
                    t.len()
                )));
            }
            if t.iter().any(|&v| !(v > 0.0)) || (t.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::Config("target sizes must be positive and sum to 1".into()));
            }
            t.to_vec()
        }
        None => vec![1.0 / n_nodes as f64; n_nodes],
    };
    let concentration: Vec<f64> = base.iter().map(|s| alpha * s).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !by_class[c].is_empty()).collect();

    let mut props: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    for &c in &present {
        props[c] = sample_dirichlet(&concentration, &mut rng)?;
    }

    let mut need = vec![0usize; n_classes];
    for &c in &present {
        need[c] = MIN_CLASS_SAMPLES.min(by_class[c].len() / n_nodes).max(1);
    }

    let mut repairs = 0;
    loop {
        // counts[c][k]: samples of class c given to node k
        let mut counts = vec![vec![0usize; n_nodes]; n_classes];
        for &c in &present {
            counts[c] = cut_counts(&props[c], by_class[c].len());
        }
        let deficient = (0..n_nodes).find(|&k| {
            let size: usize = present.iter().map(|&c| counts[c][k]).sum();
            let classes = present.iter().filter(|&&c| counts[c][k] >= need[c]).count();
            size < MIN_NODE_SAMPLES || classes < MIN_NODE_CLASSES
        });
        match deficient {
            None => {
                let mut node_indices = vec![Vec::new(); n_nodes];
                for &c in &present {
                    let mut start = 0;
                    for (k, &cnt) in counts[c].iter().enumerate() {
                        node_indices[k].extend_from_slice(&by_class[c][start..start + cnt]);
                        start += cnt;
                    }
                }
                for idx in &mut node_indices {
                    idx.sort_unstable();
                }
                return Ok(Partition { node_indices });
            }
            Some(k) => {
                if repairs >= MAX_REPAIRS {
                    return Err(Error::Config(format!(
                        "node {k} still under-populated after {MAX_REPAIRS} Dirichlet redraws"
                    )));
                }
                repairs += 1;
                let weakest = *present
                    .iter()
                    .min_by_key(|&&c| counts[c][k])
                    .expect("at least one class");
                props[weakest] = sample_dirichlet(&concentration, &mut rng)?;
            }
        }
    }
}

/// Pre-clipping noise matrix, deterministic per seed.
fn noise_matrix(rows: usize, cols: usize, sigma: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked by caller");
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// `clip(features + N(0, sigma^2), 0, 1)` with a noise stream fixed by `node_seed`.
pub fn add_gaussian_noise(features: &Matrix, sigma: f64, node_seed: u64) -> Result<Matrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(features.clone());
    }
    let noise = noise_matrix(features.rows(), features.cols(), sigma, node_seed);
    let mut out = features.clone();
    for (v, e) in out.as_mut_slice().iter_mut().zip(noise.as_slice()) {
        *v = (*v + e).clamp(0.0, 1.0);
    }
    Ok(out)
}

fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let n_train = ((fractions.0 * n as f64).round() as usize).min(n);
    let n_val = ((fractions.1 * n as f64).round() as usize).min(n - n_train);
    (n_train, n_val, n - n_train - n_val)
}

/// Seeded train/val/test split, stratified by class.
///
/// Each class is shuffled and its samples spread evenly over a unit interval;
/// the merged order is then cut into contiguous pieces of the requested
/// sizes. Classes with fewer than 3 samples cannot reach every split; their
/// samples are placed at random positions instead, with a warning.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|&f| !(f >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if by_class.iter().any(|idx| (1..3).contains(&idx.len())) {
        log::warn!("a class has fewer than 3 samples; it is split without stratification");
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (cls, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let m = idx.len() as f64;
        for (r, &i) in idx.iter().enumerate() {
            let key = if idx.len() < 3 {
                rng.random::<f64>()
            } else {
                (r as f64 + 0.5) / m
            };
            keyed.push((key, cls, i));
        }
    }
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();

    let (n_train, n_val, _) = split_sizes(n, fractions);
    let train = dataset.subset(&order[..n_train]);
    let val = dataset.subset(&order[n_train..n_train + n_val]);
    let test = dataset.subset(&order[n_train + n_val..]);
    Ok((train, val, test))
}

/// Writes the little-endian `SFD1` format. Features are stored as `f32`.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(dataset)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let (n, d, k) = (dataset.len(), dataset.n_features(), dataset.n_classes);
    let too_big = |what: &str| Error::Format(format!("{what} does not fit the format"));
    let n32 = u32::try_from(n).map_err(|_| too_big("sample count"))?;
    let d32 = u32::try_from(d).map_err(|_| too_big("feature count"))?;
    let k32 = u32::try_from(k).map_err(|_| too_big("class count"))?;
    if k > usize::from(u16::MAX) + 1 {
        return Err(too_big("class count"));
    }
    let mut out = Vec::with_capacity(16 + n * d * 4 + n * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.extend_from_slice(&k32.to_le_bytes());
    for &v in dataset.features.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &dataset.labels {
        out.extend_from_slice(&(y as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SFD1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (n, d, k) = (word(4), word(8), word(12));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|f| f.checked_add(n * 2 + 16))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for n={n}, d={d}, got {}",
            bytes.len()
        )));
    }
    let feat_end = 16 + n * d * 4;
    let features: Vec<f64> = bytes[16..feat_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let labels: Vec<usize> = bytes[feat_end..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")) as usize)
        .collect();
    let features = Matrix::from_vec(n, d, features)?;
    Dataset::new(features, labels, k).map_err(|e| Error::Format(e.to_string()))
}
