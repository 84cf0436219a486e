//! Datasets, client partitioning and per-round batch schedules.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled samples stored row-major, one feature row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Logic(format!("label {bad} outside [0, {classes})")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, file: &str, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            field,
            detail: "file truncated".into(),
        })
}

fn read_named(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let images = read_named(images_path)?;
    let labels = read_named(labels_path)?;

    let magic = read_be_u32(&images, 0, &img_name, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: img_name,
            field: "magic",
            detail: format!("expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_be_u32(&images, 4, &img_name, "image count")? as usize;
    let rows = read_be_u32(&images, 8, &img_name, "rows")? as usize;
    let cols = read_be_u32(&images, 12, &img_name, "cols")? as usize;
    let pixels = &images[16..];
    let dim = rows * cols;
    if pixels.len() != count * dim {
        return Err(Error::Format {
            file: img_name,
            field: "pixel data",
            detail: format!(
                "header announces {count}x{rows}x{cols} = {} bytes, found {}",
                count * dim,
                pixels.len()
            ),
        });
    }

    let magic = read_be_u32(&labels, 0, &lbl_name, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: lbl_name,
            field: "magic",
            detail: format!("expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let label_count = read_be_u32(&labels, 4, &lbl_name, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            file: lbl_name,
            field: "label count",
            detail: format!("{label_count} labels for {count} images"),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != label_count {
        return Err(Error::Format {
            file: lbl_name,
            field: "label data",
            detail: format!("expected {label_count} bytes, found {}", label_bytes.len()),
        });
    }
    if let Some(bad) = label_bytes.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            file: lbl_name,
            field: "label value",
            detail: format!("{bad} is not a digit"),
        });
    }

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(features, label_bytes.to_vec(), dim, 10)
}

/// Writes a dataset in IDX format; features are mapped back to bytes with
/// `round(255 * x)`.
pub fn write_mnist_idx(
    ds: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::Dimension {
            expected: ds.dim(),
            found: rows * cols,
        });
    }
    let mut images = Vec::with_capacity(16 + ds.len() * ds.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [ds.len(), rows, cols] {
        images.extend_from_slice(&(v as u32).to_be_bytes());
    }
    images.extend(
        ds.features
            .iter()
            .map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend_from_slice(&ds.labels);
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

/// Parameters of a Gaussian-blob dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::config("synth_classes", self.classes, "2..=256"));
        }
        if self.per_class == 0 {
            return Err(Error::config("synth_per_class", self.per_class, ">= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("synth_dim", self.dim, ">= 1"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::config("synth_spread", self.spread, "finite and > 0"));
        }
        Ok(())
    }

    fn class_means(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, Purpose::ClassMeans, 0, 0).rng();
        (0..self.classes)
            .map(|_| (0..self.dim).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    fn sample(&self, seed: u64, per_class: usize, purpose: Purpose) -> Result<Dataset> {
        self.validate()?;
        if per_class == 0 {
            return Err(Error::config("synth_test_per_class", per_class, ">= 1"));
        }
        let means = self.class_means(seed);
        let mut rng = RngStream::new(seed, purpose, 0, 0).rng();
        let n = self.classes * per_class;
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        // Round-robin over classes so the file order is not label-sorted.
        for j in 0..n {
            let class = j % self.classes;
            for m in &means[class] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + self.spread * z);
            }
            labels.push(class as u8);
        }
        Dataset::new(features, labels, self.dim, self.classes)
    }
}

/// Gaussian blobs around class means drawn uniformly from the unit cube.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.sample(seed, spec.per_class, Purpose::TrainSamples)
}

/// Held-out samples from the same class means as [`synth_dataset`].
pub fn synth_test_dataset(spec: &SynthSpec, per_class: usize, seed: u64) -> Result<Dataset> {
    spec.sample(seed, per_class, Purpose::TestSamples)
}

/// Client data distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionCase {
    /// Case 1: every sample goes to a uniformly random client.
    Iid,
    /// Case 2: label-sorted contiguous slices.
    LabelSorted,
    /// Case 3: lower half of the labels IID over the first half of the
    /// clients, upper half label-sorted over the rest.
    Mixed,
}

impl PartitionCase {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(PartitionCase::Iid),
            2 => Some(PartitionCase::LabelSorted),
            3 => Some(PartitionCase::Mixed),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PartitionCase::Iid => 1,
            PartitionCase::LabelSorted => 2,
            PartitionCase::Mixed => 3,
        }
    }
}

/// One client's share of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetShard {
    /// Zero-based client index.
    pub owner: usize,
    /// Member sample indices, ascending.
    pub indices: Vec<usize>,
    /// Fixed sample order used to cut batches when reshuffling is off.
    pub order: Vec<usize>,
}

impl DatasetShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Splits `items` into `parts` contiguous chunks whose sizes differ by at most one.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let size = base + usize::from(p < extra);
        out.push(items[start..start + size].to_vec());
        start += size;
    }
    out
}

fn iid_split(mut items: Vec<usize>, parts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = RngStream::new(seed, Purpose::Partition, 0, 0).rng();
    items.shuffle(&mut rng);
    split_even(&items, parts)
}

fn sorted_split(ds: &Dataset, mut items: Vec<usize>, parts: usize) -> Vec<Vec<usize>> {
    items.sort_by_key(|&i| (ds.label(i), i));
    split_even(&items, parts)
}

/// Assigns every sample of `ds` to exactly one of `clients` shards.
pub fn partition(
    ds: &Dataset,
    clients: usize,
    case: PartitionCase,
    seed: u64,
) -> Result<Vec<DatasetShard>> {
    if clients == 0 || clients > ds.len() {
        return Err(Error::config(
            "clients",
            clients,
            format!("1..={} (training samples)", ds.len()),
        ));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let groups = if clients == 1 {
        vec![all]
    } else {
        match case {
            PartitionCase::Iid => iid_split(all, clients, seed),
            PartitionCase::LabelSorted => sorted_split(ds, all, clients),
            PartitionCase::Mixed => {
                let iid_clients = clients.div_ceil(2);
                let sorted_clients = clients - iid_clients;
                let (low, high): (Vec<usize>, Vec<usize>) = all
                    .into_iter()
                    .partition(|&i| (ds.label(i) as usize) * 2 < ds.classes());
                if low.len() < iid_clients || high.len() < sorted_clients {
                    return Err(Error::config(
                        "clients",
                        clients,
                        format!(
                            "case 3 needs at least {iid_clients} lower-label and \
                             {sorted_clients} upper-label samples, found {} and {}",
                            low.len(),
                            high.len()
                        ),
                    ));
                }
                let mut groups = iid_split(low, iid_clients, seed);
                groups.extend(sorted_split(ds, high, sorted_clients));
                groups
            }
        }
    };

    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(owner, mut indices)| {
            indices.sort_unstable();
            let mut order = indices.clone();
            let mut rng = RngStream::new(seed, Purpose::BatchOrder, 0, owner as u64).rng();
            order.shuffle(&mut rng);
            DatasetShard {
                owner,
                indices,
                order,
            }
        })
        .collect())
}

/// Number of full batches consumed per round: `floor(E * n / B)`.
pub fn batch_count(samples: usize, batch: usize, epochs: f64) -> usize {
    if batch == 0 {
        return 0;
    }
    // The small offset keeps products like 0.3 * 1000 / 100 from flooring to 2.
    (epochs * samples as f64 / batch as f64 + 1e-9).floor() as usize
}

/// Batches (lists of sample indices) for one round on one client.
///
/// Without reshuffling the fixed shard order is cut into batches and reused
/// every round; with it, each round draws fresh permutations from the
/// `(seed, round, client)` stream. More than one epoch cycles through further
/// permutations, and the ragged tail is dropped.
pub fn make_batches(
    shard: &DatasetShard,
    batch: usize,
    epochs: f64,
    rr: bool,
    seed: u64,
    round: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::config("batch", batch, ">= 1"));
    }
    if !(epochs > 0.0 && epochs.is_finite()) {
        return Err(Error::config("epochs", epochs, "finite and > 0"));
    }
    let tau = batch_count(shard.len(), batch, epochs);
    if tau == 0 {
        return Err(Error::config(
            "batch",
            batch,
            format!(
                "at most E * |D_i| = {} for client {} (use a smaller batch)",
                epochs * shard.len() as f64,
                shard.owner + 1
            ),
        ));
    }
    let needed = tau * batch;
    let mut stream = Vec::with_capacity(needed + shard.len());
    if rr {
        let mut rng =
            RngStream::new(seed, Purpose::Reshuffle, round as u64, shard.owner as u64).rng();
        while stream.len() < needed {
            let mut perm = shard.indices.clone();
            perm.shuffle(&mut rng);
            stream.extend_from_slice(&perm);
        }
    } else {
        while stream.len() < needed {
            stream.extend_from_slice(&shard.order);
        }
    }
    Ok(stream[..needed]
        .chunks(batch)
        .map(<[usize]>::to_vec)
        .collect())
}
