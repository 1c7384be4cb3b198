//! Labeled datasets in the `[0,1]^d` domain: synthetic blobs, IDX files,
//! CSV export, and deterministic proxy/target/eval splits.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::arg("dataset inputs must be rank 2"));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::ClassIndex {
                index: *bad,
                n_classes,
            });
        }
        if inputs.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("dataset inputs must lie in [0,1]"));
        }
        Ok(Self {
            inputs,
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

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        Dataset {
            inputs: Tensor::new(vec![indices.len(), d], data).unwrap(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Writes `label,f0,...,f{d-1}`; floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.input(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n_classes: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers()?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::Format(
                "dataset CSV must start with a `label` column".into(),
            ));
        }
        let d = header.len() - 1;
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let parse_err =
                |e: &dyn std::fmt::Display| Error::Format(format!("bad CSV value: {e}"));
            labels.push(rec[0].parse::<usize>().map_err(|e| parse_err(&e))?);
            for field in rec.iter().skip(1) {
                data.push(field.parse::<f64>().map_err(|e| parse_err(&e))?);
            }
        }
        let n = labels.len();
        Dataset::new(Tensor::new(vec![n, d], data)?, labels, n_classes)
    }
}

/// Gaussian clusters around per-class centers drawn in `[0.2, 0.8]^dim`,
/// clipped to `[0,1]`. Samples are stored class-major.
pub fn gen_blobs(
    seed: u64,
    n_classes: usize,
    dim: usize,
    n_per_class: usize,
    sigma: f64,
) -> Result<Dataset> {
    gen_blob_mixture(seed, n_classes, 1, dim, n_per_class, sigma)
}

/// Like [`gen_blobs`] but each class is a mixture of `modes` blobs; example
/// `j` of a class is drawn from mode `j % modes`.
pub fn gen_blob_mixture(
    seed: u64,
    n_classes: usize,
    modes: usize,
    dim: usize,
    n_per_class: usize,
    sigma: f64,
) -> Result<Dataset> {
    if n_classes == 0 || modes == 0 {
        return Err(Error::arg("n_classes and modes must be positive"));
    }
    if dim < 2 {
        return Err(Error::arg("dim must be at least 2"));
    }
    if !(sigma > 0.0) {
        return Err(Error::arg("sigma must be positive"));
    }
    let mut rng = rng::substream(seed, &[rng::DATA]);
    let centers: Vec<Vec<f64>> = (0..n_classes * modes)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.2..=0.8)).collect())
        .collect();
    let mut data = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for c in 0..n_classes {
        for j in 0..n_per_class {
            for &mu in &centers[c * modes + j % modes] {
                let z: f64 = rng.sample(StandardNormal);
                data.push((mu + sigma * z).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, n_classes)
}

/// Coordinatewise clamp to `[0,1]`.
pub fn clip_to_domain(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file (`0x00000803`) into `(count, pixels per image, bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let d = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * d {
        return Err(Error::Format(format!(
            "images: expected {} pixel bytes, found {}",
            n * d,
            body.len()
        )));
    }
    Ok((n, d, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "labels: expected {n} bytes, found {}",
            body.len()
        )));
    }
    Ok(body)
}

pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, d, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, n_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    dataset_from_idx(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Encodes an IDX image file; used for fixtures and exports.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub proxy_fraction: f64,
    pub target_fraction: f64,
    pub eval_fraction: f64,
    pub disjoint: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            proxy_fraction: 0.4,
            target_fraction: 0.4,
            eval_fraction: 0.2,
            disjoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub proxy_train: Vec<usize>,
    pub target_train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [
            self.proxy_fraction,
            self.target_fraction,
            self.eval_fraction,
        ];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::arg("split fractions must lie in [0,1]"));
        }
        if fr.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::arg("split fractions must sum to at most 1"));
        }
        Ok(())
    }

    /// Partitions `0..n` after a seeded shuffle.
    ///
    /// Disjoint: `[proxy | target | eval]` from the shuffled order. Otherwise
    /// proxy and target both draw from the front and may overlap, while eval
    /// stays disjoint from both.
    pub fn split(&self, n: usize) -> Result<Split> {
        self.validate()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::substream(self.seed, &[rng::SPLIT]));
        let count = |f: f64| ((f * n as f64).floor() as usize).min(n);
        let (np, nt, ne) = (
            count(self.proxy_fraction),
            count(self.target_fraction),
            count(self.eval_fraction),
        );
        let (proxy, target, eval_start) = if self.disjoint {
            (&order[..np], &order[np..np + nt], np + nt)
        } else {
            (&order[..np], &order[..nt], np.max(nt))
        };
        let eval_end = (eval_start + ne).min(n);
        Ok(Split {
            proxy_train: proxy.to_vec(),
            target_train: target.to_vec(),
            eval: order[eval_start..eval_end].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_blobs_keep_class_count() {
        let d = gen_blobs(1, 3, 4, 0, 0.1).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.n_classes(), 3);
    }

    #[test]
    fn tiny_sigma_collapses_to_centers() {
        let d = gen_blobs(2, 2, 3, 5, 1e-300).unwrap();
        for c in 0..2 {
            let first = d.input(c * 5).to_vec();
            for i in 0..5 {
                assert_eq!(d.input(c * 5 + i), &first[..]);
            }
            assert!(first.iter().all(|v| (0.2..=0.8).contains(v)));
        }
    }

    #[test]
    fn blobs_reject_bad_arguments() {
        assert!(gen_blobs(1, 0, 4, 3, 0.1).is_err());
        assert!(gen_blobs(1, 3, 1, 3, 0.1).is_err());
        assert!(gen_blobs(1, 3, 4, 3, 0.0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_to_domain(&[-0.1, 0.5, 1.3]), vec![0.0, 0.5, 1.0]);
        assert_eq!(clip_to_domain(&[0.0, 0.25, 1.0]), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn idx_two_by_two() {
        let images = encode_idx_images(2, 2, &[0, 255, 128, 64]);
        let labels = encode_idx_labels(&[3]);
        let d = dataset_from_idx(&images, &labels).unwrap();
        assert_eq!(d.input(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(d.labels(), &[3]);
    }

    #[test]
    fn idx_errors() {
        let images = encode_idx_images(2, 2, &[0, 255, 128, 64]);
        let labels = encode_idx_labels(&[3]);
        assert!(matches!(
            dataset_from_idx(&images[..images.len() - 1], &labels),
            Err(Error::Format(_))
        ));
        let mut wrong = images.clone();
        wrong[3] = 0x01;
        assert!(matches!(
            dataset_from_idx(&wrong, &labels),
            Err(Error::Format(_))
        ));
        let two_labels = encode_idx_labels(&[3, 4]);
        assert!(matches!(
            dataset_from_idx(&images, &two_labels),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let d = gen_blobs(5, 3, 4, 6, 0.2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"label,f0,f1,f2,f3\n"));
        let back = Dataset::read_csv(&buf[..], 3).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn disjoint_split_is_a_partition_prefix() {
        let s = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        }
        .split(100)
        .unwrap();
        assert_eq!(
            (s.proxy_train.len(), s.target_train.len(), s.eval.len()),
            (40, 40, 20)
        );
        let mut all: Vec<usize> = s
            .proxy_train
            .iter()
            .chain(&s.target_train)
            .chain(&s.eval)
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn overlapping_split_keeps_eval_apart() {
        let s = SplitSpec {
            seed: 9,
            disjoint: false,
            ..SplitSpec::default()
        }
        .split(50)
        .unwrap();
        assert_eq!(s.proxy_train, s.target_train);
        assert!(s.eval.iter().all(|i| !s.proxy_train.contains(i)));
    }

    #[test]
    fn fractions_over_one_rejected() {
        let s = SplitSpec {
            proxy_fraction: 0.6,
            target_fraction: 0.6,
            ..SplitSpec::default()
        };
        assert!(s.split(10).is_err());
    }
}
