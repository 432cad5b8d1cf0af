//! Gender prototype images.
//!
//! A prototype is the pixel-wise mean face of one gender over the training
//! split, replicated to 3 channels. The neutral prototype is the mixture
//! `alpha_f * P_female + alpha_m * P_male` where the alphas are the gender
//! proportions of the split. The autoencoder concatenates a prototype with
//! its input (always same-gender) and with its decoder output (same-,
//! neutral-, or opposite-gender) to steer the reconstruction.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Which prototype to blend into the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrototypeKind {
    /// Same gender as the input label.
    Same,
    /// Proportion-weighted mixture of both genders.
    Neutral,
    /// Opposite gender to the input label.
    Opposite,
}

impl PrototypeKind {
    pub const ALL: [PrototypeKind; 3] =
        [PrototypeKind::Same, PrototypeKind::Neutral, PrototypeKind::Opposite];

    pub fn tag(&self) -> &'static str {
        match self {
            PrototypeKind::Same => "sm",
            PrototypeKind::Neutral => "nt",
            PrototypeKind::Opposite => "op",
        }
    }
}

impl FromStr for PrototypeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<PrototypeKind> {
        match s.to_ascii_lowercase().as_str() {
            "sm" | "same" => Ok(PrototypeKind::Same),
            "nt" | "neutral" => Ok(PrototypeKind::Neutral),
            "op" | "opposite" => Ok(PrototypeKind::Opposite),
            other => Err(Error::InvalidArgument(format!(
                "unknown prototype kind `{other}` (expected sm, nt or op)"
            ))),
        }
    }
}

/// The two gender means, their mixture, and the mixing proportions.
/// Invariant: `p_nt == alpha_f * p_female + alpha_m * p_male` elementwise
/// (it is stored exactly as computed), and `alpha_m + alpha_f == 1`.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    /// `[3,H,W]` mean male face.
    pub p_male: Tensor,
    /// `[3,H,W]` mean female face.
    pub p_female: Tensor,
    /// `[3,H,W]` neutral mixture.
    pub p_nt: Tensor,
    pub alpha_m: f64,
    pub alpha_f: f64,
}

/// Gender proportions from training counts.
pub fn alpha_from_counts(n_male: usize, n_female: usize) -> (f64, f64) {
    let total = (n_male + n_female) as f64;
    (n_male as f64 / total, n_female as f64 / total)
}

fn mix_neutral(p_female: &Tensor, p_male: &Tensor, alpha_f: f64, alpha_m: f64) -> Tensor {
    let data = p_female
        .data()
        .iter()
        .zip(p_male.data())
        .map(|(f, m)| alpha_f * f + alpha_m * m)
        .collect();
    Tensor::from_vec(p_female.shape(), data).expect("same shapes")
}

/// Pixel mean of the given gender, replicated to 3 channels.
fn gender_mean(train: &DatasetSplit, gender: u8) -> Option<Tensor> {
    let images: Vec<&Tensor> = train
        .records
        .iter()
        .filter(|r| r.gender == gender)
        .map(|r| &r.image)
        .collect();
    if images.is_empty() {
        return None;
    }
    let plane = images[0].numel();
    let mut acc = vec![0.0f64; plane];
    for img in &images {
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    let (h, w) = (images[0].shape()[1], images[0].shape()[2]);
    let mut data = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        data.extend_from_slice(&acc);
    }
    Some(Tensor::from_vec(&[3, h, w], data).expect("sizes agree"))
}

/// Compute the prototype set of a training split. Errors when the split does
/// not contain both genders.
pub fn compute_prototypes(train: &DatasetSplit) -> Result<PrototypeSet> {
    let p_male = gender_mean(train, 1);
    let p_female = gender_mean(train, 0);
    let (p_male, p_female) = match (p_male, p_female) {
        (Some(m), Some(f)) => (m, f),
        _ => {
            return Err(Error::Dataset(
                "prototypes need at least one male and one female record".into(),
            ))
        }
    };
    let counts = train.counts();
    let (alpha_m, alpha_f) = alpha_from_counts(counts.n_male, counts.n_female);
    let p_nt = mix_neutral(&p_female, &p_male, alpha_f, alpha_m);
    Ok(PrototypeSet {
        p_male,
        p_female,
        p_nt,
        alpha_m,
        alpha_f,
    })
}

impl PrototypeSet {
    /// Prototype for a record: `Same` follows the gender label, `Opposite`
    /// flips it, `Neutral` ignores it. `gender` must be 0 or 1.
    pub fn select(&self, gender: u8, kind: PrototypeKind) -> Result<&Tensor> {
        if gender > 1 {
            return Err(Error::InvalidArgument(format!(
                "gender label must be 0 or 1, got {gender}"
            )));
        }
        Ok(match kind {
            PrototypeKind::Same => {
                if gender == 1 {
                    &self.p_male
                } else {
                    &self.p_female
                }
            }
            PrototypeKind::Opposite => {
                if gender == 1 {
                    &self.p_female
                } else {
                    &self.p_male
                }
            }
            PrototypeKind::Neutral => &self.p_nt,
        })
    }

    /// Stack per-record prototypes into an `[N,3,H,W]` batch.
    pub fn batch(&self, genders: &[u8], kind: PrototypeKind) -> Result<Tensor> {
        let shape = self.p_male.shape();
        let (h, w) = (shape[1], shape[2]);
        let mut data = Vec::with_capacity(genders.len() * 3 * h * w);
        for &g in genders {
            data.extend_from_slice(self.select(g, kind)?.data());
        }
        Tensor::from_vec(&[genders.len(), 3, h, w], data)
    }

    pub fn image_size(&self) -> usize {
        self.p_male.shape()[1]
    }
}

#[derive(Serialize, Deserialize)]
struct AlphaSidecar {
    alpha_m: f64,
    alpha_f: f64,
}

fn save_png16(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let plane = h * w;
    let mut pixels: Vec<u16> = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push((t.data()[c * plane + i].clamp(0.0, 1.0) * 65535.0).round() as u16);
        }
    }
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(w as u32, h as u32, pixels).expect("sizes agree");
    buf.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_png16(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0f64; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 65535.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Persist prototypes as 16-bit PNGs plus a JSON sidecar with the alphas.
pub fn save_prototypes(dir: &Path, ps: &PrototypeSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png16(&dir.join("p_male.png"), &ps.p_male)?;
    save_png16(&dir.join("p_female.png"), &ps.p_female)?;
    save_png16(&dir.join("p_nt.png"), &ps.p_nt)?;
    let sidecar = AlphaSidecar {
        alpha_m: ps.alpha_m,
        alpha_f: ps.alpha_f,
    };
    let path = dir.join("alphas.json");
    let json = serde_json::to_string_pretty(&sidecar).expect("plain struct");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Load prototypes saved by [`save_prototypes`]. The neutral prototype is
/// recomputed from the loaded male/female means so its mixture identity holds
/// exactly even after PNG quantization.
pub fn load_prototypes(dir: &Path) -> Result<PrototypeSet> {
    let p_male = load_png16(&dir.join("p_male.png"))?;
    let p_female = load_png16(&dir.join("p_female.png"))?;
    let path = dir.join("alphas.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: AlphaSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("bad alphas.json: {e}")))?;
    let p_nt = mix_neutral(&p_female, &p_male, sidecar.alpha_f, sidecar.alpha_m);
    Ok(PrototypeSet {
        p_male,
        p_female,
        p_nt,
        alpha_m: sidecar.alpha_m,
        alpha_f: sidecar.alpha_f,
    })
}
