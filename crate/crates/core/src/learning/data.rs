//! Datasets, synthetic generators, loaders and device partitioning.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::config(format!(
                "{} feature values do not form {} rows of width {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::config(format!("label {bad} outside {n_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("dataset contains non-finite features"));
        }
        Ok(Self {
            features,
            labels,
            n_features,
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
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Split off the first `n` rows as a second dataset.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

/// Gaussian mixture: class `c` is centred on `separation · u_c` with unit
/// isotropic noise. Two-class mixtures use antipodal centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
    /// Fraction of labels flipped uniformly at random.
    #[serde(default)]
    pub label_noise: f64,
}

impl GaussianMixture {
    /// Class centres, drawn once per generator seed.
    pub fn centres<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let unit = |rng: &mut R| {
            let v: Vec<f64> = (0..self.features).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        if self.classes == 2 {
            let u = unit(rng);
            vec![
                u.iter().map(|x| -0.5 * self.separation * x).collect(),
                u.iter().map(|x| 0.5 * self.separation * x).collect(),
            ]
        } else {
            (0..self.classes)
                .map(|_| unit(rng).into_iter().map(|x| self.separation * x).collect())
                .collect()
        }
    }

    /// Draw `samples` rows around the given centres, classes balanced.
    pub fn sample_with<R: Rng + ?Sized>(&self, centres: &[Vec<f64>], samples: usize, rng: &mut R) -> Result<Dataset> {
        let mut features = Vec::with_capacity(samples * self.features);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let c = i % self.classes;
            features.extend(centres[c].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            let label = if self.label_noise > 0.0 && rng.gen::<f64>() < self.label_noise {
                rng.gen_range(0..self.classes)
            } else {
                c
            };
            labels.push(label);
        }
        Dataset::new(features, labels, self.features, self.classes)
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        if self.classes < 2 || self.features == 0 {
            return Err(Error::config("mixture needs at least two classes and one feature"));
        }
        let centres = self.centres(rng);
        self.sample_with(&centres, self.samples, rng)
    }
}

/// Parse `f1,f2,...,fn,label` rows. Blank lines and `#` comments are
/// skipped; a first row that does not parse as numbers is taken as a header.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if width.is_none() && labels.is_empty() => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
        };
        if values.len() < 2 {
            return Err(Error::Parse(format!("line {}: need features and a label", lineno + 1)));
        }
        let w = values.len() - 1;
        match width {
            None => width = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::Parse(format!("line {}: expected {prev} features, got {w}", lineno + 1)))
            }
            _ => {}
        }
        let label = values[w];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Parse(format!("line {}: label {label} is not a class index", lineno + 1)));
        }
        features.extend_from_slice(&values[..w]);
        labels.push(label as usize);
    }
    let width = width.ok_or_else(|| Error::Parse("no data rows".into()))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, width, n_classes)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_csv(&fs::read_to_string(path)?)
}

fn idx_payload(bytes: &[u8], expect_dims: usize) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Parse("bad IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Parse(format!("unsupported IDX element type {:#x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims != expect_dims {
        return Err(Error::Parse(format!("expected {expect_dims} IDX dimensions, found {ndims}")));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Parse("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n {
        return Err(Error::Parse(format!("IDX payload has {} bytes, header says {n}", payload.len())));
    }
    Ok((dims, payload))
}

/// Decode an IDX image file and matching label file (MNIST layout).
/// Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (dims, pixels) = idx_payload(images, 3)?;
    let (ldims, lbytes) = idx_payload(labels, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::Parse(format!("{} images but {} labels", dims[0], ldims[0])));
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = lbytes.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(features, labels, dims[1] * dims[2], n_classes)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    parse_idx(&fs::read(images)?, &fs::read(labels)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceShard {
    pub device_id: usize,
    pub data: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionScheme {
    Iid,
    /// Each device receives `per_device` label-homogeneous shards with
    /// distinct labels.
    Shards { per_device: usize },
}

pub fn partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    num_devices: usize,
    scheme: PartitionScheme,
    rng: &mut R,
) -> Result<Vec<DeviceShard>> {
    if num_devices == 0 {
        return Err(Error::config("need at least one device"));
    }
    if dataset.len() < num_devices {
        return Err(Error::config(format!(
            "{} samples cannot cover {num_devices} devices",
            dataset.len()
        )));
    }
    match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(rng);
            let base = dataset.len() / num_devices;
            let extra = dataset.len() % num_devices;
            let mut start = 0;
            Ok((0..num_devices)
                .map(|k| {
                    let len = base + usize::from(k < extra);
                    let idx = &order[start..start + len];
                    start += len;
                    DeviceShard {
                        device_id: k,
                        data: dataset.subset(idx),
                    }
                })
                .collect())
        }
        PartitionScheme::Shards { per_device } => shard_partition(dataset, num_devices, per_device, rng),
    }
}

fn shard_partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    num_devices: usize,
    per_device: usize,
    rng: &mut R,
) -> Result<Vec<DeviceShard>> {
    if per_device == 0 {
        return Err(Error::config("shards per device must be positive"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for i in 0..dataset.len() {
        by_class[dataset.label(i)].push(i);
    }
    let present = by_class.iter().filter(|c| !c.is_empty()).count();
    if present < per_device {
        return Err(Error::config(format!(
            "{per_device} distinct-label shards per device need at least {per_device} classes, found {present}"
        )));
    }
    let wanted = num_devices * per_device;
    // Largest shard size that still yields enough single-class shards.
    let mut size = (dataset.len() / wanted).max(1);
    while size > 1 && by_class.iter().map(|c| c.len() / size).sum::<usize>() < wanted {
        size -= 1;
    }
    let mut pool: Vec<(usize, Vec<usize>)> = Vec::new();
    for (label, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        for chunk in members.chunks_exact(size) {
            pool.push((label, chunk.to_vec()));
        }
    }
    if pool.len() < wanted {
        return Err(Error::config("not enough samples to cut the requested shards"));
    }

    for _attempt in 0..64 {
        pool.shuffle(rng);
        let mut remaining: Vec<usize> = (0..pool.len()).collect();
        let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(num_devices);
        let mut ok = true;
        for _ in 0..num_devices {
            let mut labels_held = Vec::with_capacity(per_device);
            let mut picked = Vec::with_capacity(per_device);
            for _ in 0..per_device {
                let pos = remaining.iter().position(|&s| !labels_held.contains(&pool[s].0));
                match pos {
                    Some(p) => {
                        let s = remaining.remove(p);
                        labels_held.push(pool[s].0);
                        picked.push(s);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
            assignment.push(picked);
        }
        if ok {
            return Ok(assignment
                .into_iter()
                .enumerate()
                .map(|(k, shards)| {
                    let idx: Vec<usize> = shards.iter().flat_map(|&s| pool[s].1.iter().copied()).collect();
                    DeviceShard {
                        device_id: k,
                        data: dataset.subset(&idx),
                    }
                })
                .collect());
        }
    }
    Err(Error::config("could not assign shards with distinct labels to every device"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, classes: usize) -> Dataset {
        let features = (0..n).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(features, labels, 1, classes).unwrap()
    }

    #[test]
    fn iid_split_is_even_and_disjoint() {
        let ds = toy(10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shards = partition(&ds, 2, PartitionScheme::Iid, &mut rng).unwrap();
        assert_eq!(shards.iter().map(|s| s.data.len()).collect::<Vec<_>>(), vec![5, 5]);
        let mut seen: Vec<f64> = shards.iter().flat_map(|s| (0..5).map(|i| s.data.row(i)[0])).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn single_device_gets_everything() {
        let ds = toy(7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shards = partition(&ds, 1, PartitionScheme::Iid, &mut rng).unwrap();
        assert_eq!(shards.len(), 1);
        let mut rows: Vec<f64> = (0..7).map(|i| shards[0].data.row(i)[0]).collect();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, (0..7).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn shards_hold_at_most_two_labels() {
        let ds = toy(600, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shards = partition(&ds, 10, PartitionScheme::Shards { per_device: 2 }, &mut rng).unwrap();
        let mut all = Vec::new();
        for s in &shards {
            let mut labels = s.data.labels().to_vec();
            labels.sort_unstable();
            labels.dedup();
            assert_eq!(labels.len(), 2, "device {} holds {:?}", s.device_id, labels);
            all.extend((0..s.data.len()).map(|i| s.data.row(i)[0] as usize));
        }
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n, "shards overlap");
    }

    #[test]
    fn shard_scheme_needs_enough_classes() {
        let ds = toy(100, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = partition(&ds, 5, PartitionScheme::Shards { per_device: 3 }, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(partition(&toy(3, 2), 4, PartitionScheme::Iid, &mut rng).is_err());
    }

    #[test]
    fn csv_round_trip_with_header_and_comments() {
        let text = "x1,x2,label\n# comment\n0.5,1.0,1\n\n-2,3e-1,0\n";
        let ds = parse_csv(text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.row(1), &[-2.0, 0.3]);
        assert_eq!(ds.labels(), &[1, 0]);
        assert!(parse_csv("1,2,0\n1,0\n").is_err());
        assert!(parse_csv("1,2,0.5\n").is_err());
        assert!(parse_csv("").is_err());
    }

    #[test]
    fn idx_decoding() {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1];
        images.extend([0, 255, 51, 102]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.row(0), &[0.0, 1.0]);
        assert!((ds.row(1)[0] - 0.2).abs() < 1e-12);
        assert_eq!(ds.labels(), &[7, 3]);
        assert!(parse_idx(&images[..10], &labels).is_err());
        let mut bad = labels.clone();
        bad[2] = 9;
        assert!(parse_idx(&images, &bad).is_err());
    }

    #[test]
    fn mixture_is_balanced_and_separated() {
        let gm = GaussianMixture {
            samples: 2000,
            features: 5,
            classes: 2,
            separation: 4.0,
            label_noise: 0.0,
        };
        let ds = gm.generate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(ds.labels().iter().filter(|&&l| l == 1).count(), 1000);
        // class means should be ~separation apart
        let mut m = [[0.0; 5]; 2];
        for i in 0..ds.len() {
            for j in 0..5 {
                m[ds.label(i)][j] += ds.row(i)[j] / 1000.0;
            }
        }
        let dist: f64 = (0..5).map(|j| (m[0][j] - m[1][j]).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 4.0).abs() < 0.2, "{dist}");
    }
}
