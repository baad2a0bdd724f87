//! Canonical dataset, checkpoint, and report representations.
//!
//! Datasets hold channels-last images as 32-bit floats in `[0,1]` with
//! integer class labels. Checkpoints are single container files: a JSON
//! header (type, version, buffer table) followed by raw little-endian
//! buffers; see [`container`]. All randomness flows through explicit seeds
//! (see [`crate::seeds`]); loaders are pure functions of their inputs.

use ndarray::{Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seeds;

pub mod container;
pub mod synthetic;

pub use container::{load_checkpoint, save_checkpoint, Buffer, Checkpoint, Container};

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Aux,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Test => write!(f, "test"),
            SplitTag::Aux => write!(f, "aux"),
        }
    }
}

/// An indexed collection of fixed-shape images with integer class labels.
///
/// Invariants, enforced at construction: every intensity in `[0,1]`, every
/// label in `[0, class_count)`, images and labels of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Array4<f32>,
    labels: Vec<usize>,
    class_count: usize,
    pub split_tag: SplitTag,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(
        images: Array4<f32>,
        labels: Vec<usize>,
        class_count: usize,
        split_tag: SplitTag,
        seed: u64,
    ) -> Result<LabeledDataset> {
        if images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", images.shape()[0]),
                got: format!("{}", labels.len()),
            });
        }
        for (i, v) in images.iter().enumerate() {
            if !(0.0..=1.0).contains(v) || !v.is_finite() {
                return Err(Error::IntensityOutOfRange {
                    value: f64::from(*v),
                    index: i / (images.shape()[1] * images.shape()[2] * images.shape()[3]),
                });
            }
        }
        let max_label = labels.iter().copied().max();
        if let Some(m) = max_label {
            if m >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: m as i64,
                    class_count,
                });
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            split_tag,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// (height, width, channels)
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f32> {
        self.images.index_axis(ndarray::Axis(0), i)
    }

    pub fn images(&self) -> &Array4<f32> {
        &self.images
    }

    /// Image `i` as a flat channels-last f64 row for the model stack.
    pub fn image_f64(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// All images as one `(n, h·w·c)` f64 matrix.
    pub fn to_f64_matrix(&self) -> ndarray::Array2<f64> {
        let n = self.len();
        let d = self.images.len() / n.max(1);
        let data: Vec<f64> = self.images.iter().map(|&v| f64::from(v)).collect();
        ndarray::Array2::from_shape_vec((n, d), data).expect("contiguous")
    }

    /// Indices of samples with the given label.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset restricted to `indices` (in the given order).
    pub fn subset(&self, indices: &[usize], split_tag: SplitTag) -> LabeledDataset {
        let (h, w, c) = self.image_shape();
        let mut images = Array4::<f32>::zeros((indices.len(), h, w, c));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            images
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.image(idx));
            labels.push(self.labels[idx]);
        }
        LabeledDataset {
            images,
            labels,
            class_count: self.class_count,
            split_tag,
            seed: self.seed,
        }
    }

    /// Concatenate two datasets over the same label space.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.class_count != other.class_count {
            return Err(Error::Config(format!(
                "class count mismatch: {} vs {}",
                self.class_count, other.class_count
            )));
        }
        if self.image_shape() != other.image_shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.image_shape()),
                got: format!("{:?}", other.image_shape()),
            });
        }
        let images = ndarray::concatenate(
            ndarray::Axis(0),
            &[self.images.view(), other.images.view()],
        )
        .expect("same trailing shape");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledDataset {
            images,
            labels,
            class_count: self.class_count,
            split_tag: self.split_tag,
            seed: self.seed,
        })
    }

    /// Replace image `i` (used by the poisoning pipeline).
    pub(crate) fn set_image(&mut self, i: usize, img: &Array3<f32>) {
        self.images
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(img);
    }

    pub(crate) fn set_label(&mut self, i: usize, label: usize) {
        assert!(label < self.class_count);
        self.labels[i] = label;
    }
}

/// Experiment-wide synthesis hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Loss weights (classification, model-perturbation, feature-consistency,
    /// data-perturbation).
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Latent batch size per class.
    pub batch_syn: usize,
    /// Synthesis iterations.
    pub max_iterations: usize,
    /// Latent learning rate.
    pub alpha1: f64,
    /// Perturbation learning rate.
    pub alpha2: f64,
    /// Samples kept per class after subsampling by final loss.
    pub samples_per_class: usize,
    /// Seeds for multi-run protocols.
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Reference synthesis protocol: weights 1000/10/1000/10, batch 40,
    /// 4500 iterations, rates 2e-3 and 1e-3, 20 samples per class.
    pub fn reference() -> ExperimentConfig {
        ExperimentConfig {
            lambda1: 1000.0,
            lambda2: 10.0,
            lambda3: 1000.0,
            lambda4: 10.0,
            batch_syn: 40,
            max_iterations: 4500,
            alpha1: 2e-3,
            alpha2: 1e-3,
            samples_per_class: 20,
            seeds: vec![0, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.alpha1 <= 0.0 || !self.alpha1.is_finite() {
            return Err(Error::Config(format!(
                "alpha1 must be positive, got {}",
                self.alpha1
            )));
        }
        // alpha2 = 0 is the documented degenerate case that freezes the
        // perturbation and reduces the loop to plain weighted descent
        if self.alpha2 < 0.0 || !self.alpha2.is_finite() {
            return Err(Error::Config(format!(
                "alpha2 must be nonnegative, got {}",
                self.alpha2
            )));
        }
        for (name, v) in [
            ("batch_syn", self.batch_syn),
            ("max_iterations", self.max_iterations),
            ("samples_per_class", self.samples_per_class),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_syn < self.samples_per_class {
            return Err(Error::Config(format!(
                "batch_syn ({}) must be >= samples_per_class ({})",
                self.batch_syn, self.samples_per_class
            )));
        }
        Ok(())
    }
}

/// Directory/file layout of a dataset on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetLayout {
    /// `root/<class_id>/<index>.png`, labels from directory names.
    ClassDirs {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Single packed container file.
    Container,
}

/// Load a dataset from disk; deterministic ordering by `(class, filename)`.
pub fn load_dataset(path: &Path, layout: &DatasetLayout) -> Result<LabeledDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    match layout {
        DatasetLayout::Container => load_checkpoint::<LabeledDataset>(path),
        DatasetLayout::ClassDirs {
            height,
            width,
            channels,
        } => load_class_dirs(path, *height, *width, *channels),
    }
}

fn load_class_dirs(root: &Path, h: usize, w: usize, c: usize) -> Result<LabeledDataset> {
    let mut by_class: BTreeMap<usize, Vec<std::path::PathBuf>> = BTreeMap::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if !p.is_dir() {
            continue;
        }
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Ok(class) = name.parse::<usize>() else {
            continue;
        };
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&p)
            .map_err(|e| Error::io(&p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().and_then(|x| x.to_str()) == Some("png"))
            .collect();
        files.sort();
        by_class.insert(class, files);
    }
    let total: usize = by_class.values().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::NoSamples(root.to_path_buf()));
    }
    let class_count = by_class.keys().copied().max().unwrap() + 1;
    let mut images = Array4::<f32>::zeros((total, h, w, c));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0usize;
    for (class, files) in &by_class {
        for f in files {
            let img = read_png(f, h, w, c)?;
            images.index_axis_mut(ndarray::Axis(0), row).assign(&img);
            labels.push(*class);
            row += 1;
        }
    }
    LabeledDataset::new(images, labels, class_count, SplitTag::Train, 0)
}

fn read_png(path: &Path, h: usize, w: usize, c: usize) -> Result<Array3<f32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    if info.height as usize != h || info.width as usize != w {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w}"),
            got: format!("{}x{}", info.height, info.width),
        });
    }
    let in_c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Format(format!(
                "unsupported png color type {other:?} in {}",
                path.display()
            )))
        }
    };
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "unsupported png bit depth {:?} in {}",
            info.bit_depth,
            path.display()
        )));
    }
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let src_ch = ch.min(in_c - 1);
                let v = buf[(y * w + x) * in_c + src_ch];
                out[[y, x, ch]] = f32::from(v) / 255.0;
            }
        }
    }
    Ok(out)
}

/// Write a dataset in the `root/<class_id>/<index>.png` layout.
pub fn export_png_dir(ds: &LabeledDataset, root: &Path) -> Result<()> {
    let (h, w, c) = ds.image_shape();
    let mut per_class_counter = vec![0usize; ds.class_count()];
    for i in 0..ds.len() {
        let class = ds.labels()[i];
        let dir = root.join(format!("{class}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let idx = per_class_counter[class];
        per_class_counter[class] += 1;
        let path = dir.join(format!("{idx:05}.png"));
        write_png(&path, &ds.image(i).to_owned(), h, w, c)?;
    }
    Ok(())
}

pub(crate) fn write_png(path: &Path, img: &Array3<f32>, h: usize, w: usize, c: usize) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    let mut encoder = png::Encoder::new(writer, w as u32, h as u32);
    encoder.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))?;
    let out_c = if c == 1 { 1 } else { 3 };
    let mut data = vec![0u8; h * w * out_c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..out_c {
                let v = img[[y, x, ch.min(c - 1)]].clamp(0.0, 1.0);
                data[(y * w + x) * out_c + ch] = (v * 255.0).round() as u8;
            }
        }
    }
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))?;
    Ok(())
}

/// Stratified split into `(⌊n·fraction⌋, n - ⌊n·fraction⌋)` samples.
///
/// Each class contributes `⌊n_k·fraction⌋` samples to the first part, then
/// the remaining quota is filled by largest fractional remainder, so
/// per-class counts stay within one of the stratified target. The same seed
/// always produces the identical partition.
pub fn split(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = ds.len();
    let target_first = (n as f64 * fraction).floor() as usize;

    use rand::seq::SliceRandom;
    let mut first: Vec<usize> = Vec::with_capacity(target_first);
    let mut rest: Vec<usize> = Vec::new();
    // per-class shuffled pools
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(ds.class_count());
    for k in 0..ds.class_count() {
        let mut idx = ds.indices_of_class(k);
        let mut rng = seeds::rng(seed, "split", k as u64);
        idx.shuffle(&mut rng);
        pools.push(idx);
    }
    // integral part per class
    let mut taken = vec![0usize; ds.class_count()];
    for (k, pool) in pools.iter().enumerate() {
        taken[k] = (pool.len() as f64 * fraction).floor() as usize;
    }
    // largest-remainder fill to hit the global floor exactly
    let mut deficit = target_first as i64 - taken.iter().sum::<usize>() as i64;
    if deficit > 0 {
        let mut order: Vec<usize> = (0..ds.class_count())
            .filter(|&k| taken[k] < pools[k].len())
            .collect();
        order.sort_by(|&a, &b| {
            let fa = pools[a].len() as f64 * fraction - (pools[a].len() as f64 * fraction).floor();
            let fb = pools[b].len() as f64 * fraction - (pools[b].len() as f64 * fraction).floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut i = 0usize;
        while deficit > 0 && !order.is_empty() {
            let k = order[i % order.len()];
            if taken[k] < pools[k].len() {
                taken[k] += 1;
                deficit -= 1;
            }
            i += 1;
            if i > 10 * n {
                break;
            }
        }
    }
    for (k, pool) in pools.iter().enumerate() {
        first.extend_from_slice(&pool[..taken[k]]);
        rest.extend_from_slice(&pool[taken[k]..]);
    }
    first.sort_unstable();
    rest.sort_unstable();
    Ok((
        ds.subset(&first, ds.split_tag),
        ds.subset(&rest, ds.split_tag),
    ))
}

#[cfg(test)]
mod tests;
