//! Synthetic face-like images with controllable, independent identity and
//! gender signals.
//!
//! Each identity carries a fixed low-frequency cosine texture (the identity
//! signal); gender is encoded by brightening (male) or darkening (female) a
//! fixed horizontal band, scaled by `gender_signal_strength`. Per-image
//! Gaussian pixel noise and a small per-image texture gain keep images of the
//! same identity distinct. The two signals come from separate seed streams,
//! so they are statistically independent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::derive_seed;
use crate::data::{DatasetSplit, FaceRecord};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Standard deviation of the per-image Gaussian pixel noise.
pub const NOISE_SIGMA: f64 = 0.05;

/// Brightness offset of the gender band at strength 1.0.
const BAND_DELTA: f64 = 0.18;
/// The band covers rows `[0.35*S, 0.55*S)`.
const BAND_TOP: f64 = 0.35;
const BAND_BOTTOM: f64 = 0.55;
/// Number of cosine modes per identity texture.
const TEXTURE_MODES: usize = 6;
/// Amplitude bound of a single texture mode.
const TEXTURE_AMP: f64 = 0.06;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub image_size: usize,
    /// Strength of the gender band in [0,1]; 0 removes the cue entirely.
    pub gender_signal_strength: f64,
    /// Seed stream for the per-identity textures, separate from the image
    /// noise stream.
    pub identity_texture_seed: u64,
}

/// Rows covered by the gender band at image size `s`.
pub fn gender_band_rows(s: usize) -> std::ops::Range<usize> {
    (BAND_TOP * s as f64) as usize..(BAND_BOTTOM * s as f64) as usize
}

fn identity_texture(spec: &SyntheticSpec, identity: usize) -> Vec<f64> {
    let s = spec.image_size;
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(spec.identity_texture_seed, &format!("texture-{identity}")));
    let mut plane = vec![0.0; s * s];
    for _ in 0..TEXTURE_MODES {
        let amp = rng.gen_range(-TEXTURE_AMP..TEXTURE_AMP);
        let (mut fx, mut fy) = (0usize, 0usize);
        while fx == 0 && fy == 0 {
            fx = rng.gen_range(0..=3);
            fy = rng.gen_range(0..=3);
        }
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for y in 0..s {
            for x in 0..s {
                let arg = std::f64::consts::TAU * (fx as f64 * x as f64 + fy as f64 * y as f64)
                    / s as f64
                    + phase;
                plane[y * s + x] += amp * arg.cos();
            }
        }
    }
    plane
}

/// Generate a synthetic dataset. Identities alternate gender (even = male)
/// so both classes are always present; bit-identical for a fixed spec and
/// seed.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<DatasetSplit> {
    if spec.n_identities == 0 || spec.images_per_identity == 0 {
        return Err(Error::InvalidArgument(
            "synthetic spec needs at least one identity and one image".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.gender_signal_strength) {
        return Err(Error::InvalidArgument(format!(
            "gender_signal_strength must be in [0,1], got {}",
            spec.gender_signal_strength
        )));
    }
    let s = spec.image_size;
    let band = gender_band_rows(s);
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "image-noise"));

    let mut records = Vec::with_capacity(spec.n_identities * spec.images_per_identity);
    for identity in 0..spec.n_identities {
        let gender: u8 = if identity % 2 == 0 { 1 } else { 0 };
        let band_offset = spec.gender_signal_strength
            * BAND_DELTA
            * if gender == 1 { 1.0 } else { -1.0 };
        let texture = identity_texture(spec, identity);

        for _ in 0..spec.images_per_identity {
            let gain = noise_rng.gen_range(0.9..1.1);
            let mut data = Vec::with_capacity(s * s);
            for y in 0..s {
                let in_band = band.contains(&y);
                for x in 0..s {
                    let mut v = 0.5 + gain * texture[y * s + x];
                    if in_band {
                        v += band_offset;
                    }
                    v += normal.sample(&mut noise_rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            records.push(FaceRecord {
                image: Tensor::from_vec(&[1, s, s], data)?,
                gender,
                identity: identity as u32,
            });
        }
    }
    Ok(DatasetSplit { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, per: usize, strength: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_identities: n,
            images_per_identity: per,
            image_size: 16,
            gender_signal_strength: strength,
            identity_texture_seed: 1,
        }
    }

    /// Nearest-centroid classifier on raw pixels — a linear decision rule
    /// independent of everything in `nn`. Returns accuracy on `test`.
    fn centroid_probe_accuracy<L: Eq + std::hash::Hash + Copy>(
        train: &[(&Tensor, L)],
        test: &[(&Tensor, L)],
    ) -> f64 {
        use std::collections::HashMap;
        let dim = train[0].0.numel();
        let mut sums: HashMap<L, (Vec<f64>, usize)> = HashMap::new();
        for (img, label) in train {
            let e = sums.entry(*label).or_insert_with(|| (vec![0.0; dim], 0));
            for (a, b) in e.0.iter_mut().zip(img.data()) {
                *a += b;
            }
            e.1 += 1;
        }
        let centroids: Vec<(L, Vec<f64>)> = sums
            .into_iter()
            .map(|(l, (s, n))| (l, s.iter().map(|v| v / n as f64).collect()))
            .collect();
        let mut correct = 0;
        for (img, label) in test {
            let best = centroids
                .iter()
                .min_by(|a, b| {
                    let da: f64 = a.1.iter().zip(img.data()).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = b.1.iter().zip(img.data()).map(|(c, v)| (c - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best.0 == *label {
                correct += 1;
            }
        }
        correct as f64 / test.len() as f64
    }

    #[test]
    fn record_and_identity_counts() {
        let ds = generate_synthetic(&spec(2, 2, 1.0), 0).unwrap();
        assert_eq!(ds.len(), 4);
        let c = ds.counts();
        assert_eq!(c.n_identities, 2);
        assert_eq!(c.n_male, 2);
        assert_eq!(c.n_female, 2);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&spec(3, 2, 0.7), 5).unwrap();
        let b = generate_synthetic(&spec(3, 2, 0.7), 5).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.image.data(), rb.image.data());
        }
        let c = generate_synthetic(&spec(3, 2, 0.7), 6).unwrap();
        assert_ne!(a.records[0].image.data(), c.records[0].image.data());
    }

    #[test]
    fn pixels_in_range_and_finite() {
        let ds = generate_synthetic(&spec(4, 3, 1.0), 2).unwrap();
        for r in &ds.records {
            assert!(r.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// Identity-disjoint halves, so the gender probe cannot shortcut through
    /// memorized identity textures.
    fn gender_probe_split(ds: &DatasetSplit) -> (Vec<(&Tensor, u8)>, Vec<(&Tensor, u8)>) {
        let cut = ds.counts().n_identities as u32 / 2;
        let train = ds
            .records
            .iter()
            .filter(|r| r.identity < cut)
            .map(|r| (&r.image, r.gender))
            .collect();
        let test = ds
            .records
            .iter()
            .filter(|r| r.identity >= cut)
            .map(|r| (&r.image, r.gender))
            .collect();
        (train, test)
    }

    #[test]
    fn gender_probe_strong_signal() {
        let ds = generate_synthetic(&spec(20, 6, 1.0), 3).unwrap();
        let (train, test) = gender_probe_split(&ds);
        let acc = centroid_probe_accuracy(&train, &test);
        assert!(acc > 0.9, "gender probe accuracy {acc} at strength 1.0");
    }

    #[test]
    fn gender_probe_no_signal_is_chance() {
        // Accuracy concentrates per identity (images share a texture), so a
        // tight tolerance needs many identities, not many images.
        let ds = generate_synthetic(&spec(800, 2, 0.0), 3).unwrap();
        let (train, test) = gender_probe_split(&ds);
        let acc = centroid_probe_accuracy(&train, &test);
        assert!(
            (acc - 0.5).abs() <= 0.05,
            "gender probe accuracy {acc} should be ~50% at strength 0"
        );
    }

    #[test]
    fn identity_probe_strong_signal() {
        let ds = generate_synthetic(&spec(20, 6, 1.0), 3).unwrap();
        let train: Vec<_> = ds.records.iter().step_by(2).map(|r| (&r.image, r.identity)).collect();
        let test: Vec<_> = ds.records.iter().skip(1).step_by(2).map(|r| (&r.image, r.identity)).collect();
        let acc = centroid_probe_accuracy(&train, &test);
        assert!(acc > 0.9, "identity probe accuracy {acc}");
    }

    #[test]
    fn gender_and_texture_are_uncorrelated() {
        // Correlate the gender label with the mean off-band pixel value (the
        // identity texture summary) over 500 records.
        let ds = generate_synthetic(
            &SyntheticSpec {
                n_identities: 100,
                images_per_identity: 5,
                image_size: 16,
                gender_signal_strength: 1.0,
                identity_texture_seed: 9,
            },
            4,
        )
        .unwrap();
        let band = gender_band_rows(16);
        let pairs: Vec<(f64, f64)> = ds
            .records
            .iter()
            .take(500)
            .map(|r| {
                let mut sum = 0.0;
                let mut n = 0;
                for y in 0..16 {
                    if band.contains(&y) {
                        continue;
                    }
                    for x in 0..16 {
                        sum += r.image.data()[y * 16 + x];
                        n += 1;
                    }
                }
                (r.gender as f64, sum / n as f64)
            })
            .collect();
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let sx = (pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n).sqrt();
        let corr = cov / (sx * sy);
        assert!(corr.abs() < 0.1, "gender/texture correlation {corr}");
    }

    #[test]
    fn strength_zero_removes_band_contrast() {
        let with = generate_synthetic(&spec(10, 4, 1.0), 7).unwrap();
        let without = generate_synthetic(&spec(10, 4, 0.0), 7).unwrap();
        let band = gender_band_rows(16);
        let band_gap = |ds: &DatasetSplit| {
            let mean_band = |r: &FaceRecord| {
                let mut sum = 0.0;
                let mut n = 0;
                for y in band.clone() {
                    for x in 0..16 {
                        sum += r.image.data()[y * 16 + x];
                        n += 1;
                    }
                }
                sum / n as f64
            };
            let male: Vec<f64> = ds.records.iter().filter(|r| r.gender == 1).map(mean_band).collect();
            let female: Vec<f64> = ds.records.iter().filter(|r| r.gender == 0).map(mean_band).collect();
            male.iter().sum::<f64>() / male.len() as f64
                - female.iter().sum::<f64>() / female.len() as f64
        };
        assert!(band_gap(&with) > 0.25, "band gap {}", band_gap(&with));
        assert!(band_gap(&without).abs() < 0.05);
    }
}
