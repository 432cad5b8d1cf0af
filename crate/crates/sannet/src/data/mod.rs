//! Datasets: loading from disk, identity-disjoint splitting, and a synthetic
//! face-like generator for desk-scale experiments.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! <dir>/labels.csv        header `filename,gender,identity`; gender 1=male, 0=female
//! <dir>/img_00000.png     8-bit grayscale PNG (PGM also accepted when loading)
//! ```

mod synth;

pub use synth::{generate_synthetic, SyntheticSpec, NOISE_SIGMA};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One grayscale face image with its labels. `image` is `[1,H,W]` in `[0,1]`.
#[derive(Debug, Clone)]
pub struct FaceRecord {
    pub image: Tensor,
    /// 1 = male, 0 = female.
    pub gender: u8,
    pub identity: u32,
}

/// Aggregate counts of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub n_records: usize,
    pub n_male: usize,
    pub n_female: usize,
    pub n_identities: usize,
}

/// An ordered collection of records. Counts are always derived from the
/// records themselves so they can never drift out of sync.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub records: Vec<FaceRecord>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.identity).collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let n_male = self.records.iter().filter(|r| r.gender == 1).count();
        SplitCounts {
            n_records: self.records.len(),
            n_male,
            n_female: self.records.len() - n_male,
            n_identities: self.identities().len(),
        }
    }

    pub fn image_size(&self) -> Option<usize> {
        self.records.first().map(|r| r.image.shape()[1])
    }
}

/// Stack records into an `[N,1,H,W]` batch tensor.
pub fn stack_images(records: &[&FaceRecord]) -> Tensor {
    assert!(!records.is_empty(), "cannot stack an empty batch");
    let (h, w) = (records[0].image.shape()[1], records[0].image.shape()[2]);
    let mut data = Vec::with_capacity(records.len() * h * w);
    for r in records {
        data.extend_from_slice(r.image.data());
    }
    Tensor::from_vec(&[records.len(), 1, h, w], data).expect("uniform record shapes")
}

/// Result of [`load_dataset`]; `skipped` counts images with no label row.
#[derive(Debug)]
pub struct LoadedDataset {
    pub split: DatasetSplit,
    pub skipped: usize,
}

/// ITU-R BT.601 luminance in [0,1] from 8-bit RGB.
fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Bilinear resample of a `[h0,w0]` grayscale plane to `[s,s]`, pixel-center
/// aligned. Identity when the sizes already match.
fn resize_bilinear(src: &[f64], h0: usize, w0: usize, s: usize) -> Vec<f64> {
    if h0 == s && w0 == s {
        return src.to_vec();
    }
    let mut out = vec![0.0; s * s];
    let sample = |y: usize, x: usize| src[y.min(h0 - 1) * w0 + x.min(w0 - 1)];
    for oy in 0..s {
        let fy = ((oy as f64 + 0.5) * h0 as f64 / s as f64 - 0.5).max(0.0);
        let y0 = fy.floor() as usize;
        let ty = fy - y0 as f64;
        for ox in 0..s {
            let fx = ((ox as f64 + 0.5) * w0 as f64 / s as f64 - 0.5).max(0.0);
            let x0 = fx.floor() as usize;
            let tx = fx - x0 as f64;
            let top = sample(y0, x0) * (1.0 - tx) + sample(y0, x0 + 1) * tx;
            let bot = sample(y0 + 1, x0) * (1.0 - tx) + sample(y0 + 1, x0 + 1) * tx;
            out[oy * s + ox] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn decode_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => {
            g.into_raw().iter().map(|&v| v as f64 / 255.0).collect()
        }
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels().map(|p| luminance(p[0], p[1], p[2])).collect()
        }
    };
    Ok((gray, h, w))
}

/// Load a dataset directory: every labelled PNG/PGM under `root`, converted
/// to grayscale, bilinearly resized to `image_size`, scaled to `[0,1]`.
/// Images without a label row are skipped and counted; an undecodable image
/// aborts with its path.
pub fn load_dataset(root: &Path, labels_file: &Path, image_size: usize) -> Result<LoadedDataset> {
    let mut labels: BTreeMap<String, (u8, u32)> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(labels_file)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", labels_file.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Dataset(format!("bad labels header: {e}")))?;
        let expect = ["filename", "gender", "identity"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Dataset(format!(
                "labels header must be `filename,gender,identity`, got {:?}",
                headers
            )));
        }
    }
    for row in reader.records() {
        let row = row.map_err(|e| Error::Dataset(format!("bad labels row: {e}")))?;
        let gender: u8 = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("gender must be 0 or 1, got `{}`", &row[1])))?;
        if gender > 1 {
            return Err(Error::Dataset(format!("gender must be 0 or 1, got {gender}")));
        }
        let identity: u32 = row[2]
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("identity must be an integer, got `{}`", &row[2])))?;
        labels.insert(row[0].to_string(), (gender, identity));
    }

    let mut files: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase),
                Some(ref ext) if ext == "png" || ext == "pgm"
            )
        })
        .collect();
    files.sort();

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for path in files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let Some(&(gender, identity)) = labels.get(&name) else {
            skipped += 1;
            continue;
        };
        let (gray, h, w) = decode_gray(&path)?;
        let resized = resize_bilinear(&gray, h, w, image_size);
        let image = Tensor::from_vec(&[1, image_size, image_size], resized)?;
        records.push(FaceRecord {
            image,
            gender,
            identity,
        });
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!(
            "no labelled images found under {}",
            root.display()
        )));
    }
    Ok(LoadedDataset {
        split: DatasetSplit { records },
        skipped,
    })
}

/// Write a split in the loadable directory layout (8-bit grayscale PNGs plus
/// `labels.csv`). Returns the labels file path.
pub fn write_dataset(dir: &Path, split: &DatasetSplit) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels_path = dir.join("labels.csv");
    let mut writer = csv::Writer::from_path(&labels_path)
        .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", labels_path.display())))?;
    writer
        .write_record(["filename", "gender", "identity"])
        .map_err(|e| Error::Dataset(e.to_string()))?;
    for (i, record) in split.records.iter().enumerate() {
        let name = format!("img_{i:05}.png");
        let s = record.image.shape()[1];
        let pixels: Vec<u8> = record
            .image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf: image::GrayImage =
            image::ImageBuffer::from_raw(s as u32, s as u32, pixels).expect("sizes agree");
        buf.save(dir.join(&name)).map_err(|e| Error::ImageDecode {
            path: dir.join(&name),
            reason: e.to_string(),
        })?;
        writer
            .write_record([&name, &record.gender.to_string(), &record.identity.to_string()])
            .map_err(|e| Error::Dataset(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(labels_path)
}

/// Identity-disjoint split: no identity ever appears on both sides, which a
/// verification ROC on the held-out side requires. Record order within each
/// side follows the input. Deterministic for a fixed seed.
pub fn split_dataset(
    ds: &DatasetSplit,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let identities: Vec<u32> = ds.identities().into_iter().collect();
    if identities.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 identities to split, got {}",
            identities.len()
        )));
    }
    let mut shuffled = identities.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = ((train_fraction * identities.len() as f64).round() as usize)
        .clamp(1, identities.len() - 1);
    let train_ids: BTreeSet<u32> = shuffled[..n_train].iter().copied().collect();

    let mut train = DatasetSplit::default();
    let mut test = DatasetSplit::default();
    for record in &ds.records {
        if train_ids.contains(&record.identity) {
            train.records.push(record.clone());
        } else {
            test.records.push(record.clone());
        }
    }
    Ok((train, test))
}
