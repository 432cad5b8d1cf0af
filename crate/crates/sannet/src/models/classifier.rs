//! Subnetwork II: the CNN gender classifier, and its independently shaped
//! evaluation variant.
//!
//! A classifier is a stack of (conv, leaky ReLU, ceil-mode max-pool) blocks
//! followed by two fully connected layers and a sigmoid. The auxiliary
//! variant pools all the way down to a 4x4 map (six blocks at 224, four at
//! 64); the evaluation variant uses one fewer block and different widths, so
//! no parameter tensor can ever be shape-compatible with the auxiliary's.
//! Dropout (p = 0.5) wraps both FC layers during standalone training only.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::models::{pool_steps, spatial_after};
use crate::nn::{init, ops, ParamStore, Tensor, Var};

/// Architecture of one classifier instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierArch {
    pub image_size: usize,
    /// Channel width per conv block.
    pub widths: Vec<usize>,
    /// Output width of the first FC layer.
    pub fc_width: usize,
    pub leaky_slope: f64,
    /// Dropout probability on the FC layers during standalone training.
    pub dropout: f64,
}

impl ClassifierArch {
    /// Auxiliary classifier: blocks to a 4x4 map, widths from the config.
    pub fn auxiliary(cfg: &Config) -> Result<ClassifierArch> {
        let blocks = pool_steps(cfg.image_size, 4);
        Self::with_widths(cfg.image_size, &cfg.channels.classifier, blocks, 256, cfg.leaky_slope)
    }

    /// Evaluation classifier: one fewer block, independent widths.
    pub fn evaluation(cfg: &Config) -> Result<ClassifierArch> {
        let blocks = pool_steps(cfg.image_size, 4).max(2) - 1;
        Self::with_widths(
            cfg.image_size,
            &cfg.channels.eval_classifier,
            blocks,
            128,
            cfg.leaky_slope,
        )
    }

    fn with_widths(
        image_size: usize,
        available: &[usize],
        blocks: usize,
        fc_width: usize,
        leaky_slope: f64,
    ) -> Result<ClassifierArch> {
        if available.len() < blocks {
            return Err(Error::Config(format!(
                "image size {image_size} needs {blocks} conv blocks but only {} widths are configured",
                available.len()
            )));
        }
        Ok(ClassifierArch {
            image_size,
            widths: available[..blocks].to_vec(),
            fc_width,
            leaky_slope,
            dropout: 0.5,
        })
    }

    /// Spatial edge of the feature map entering the FC layers.
    pub fn final_spatial(&self) -> usize {
        spatial_after(self.image_size, self.widths.len())
    }

    /// Flattened feature count entering the first FC layer.
    pub fn flat_dim(&self) -> usize {
        let s = self.final_spatial();
        s * s * self.widths[self.widths.len() - 1]
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.widths.len() {
            names.push(format!("conv{i}.w"));
            names.push(format!("conv{i}.b"));
        }
        for fc in ["fc1", "fc2"] {
            names.push(format!("{fc}.w"));
            names.push(format!("{fc}.b"));
        }
        names
    }
}

/// Subnetwork II parameters plus architecture.
#[derive(Debug, Clone)]
pub struct GenderClassifier {
    pub params: ParamStore,
    pub arch: ClassifierArch,
}

impl GenderClassifier {
    pub fn init(arch: ClassifierArch, seed: u64) -> Result<GenderClassifier> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c_in = 1;
        for (i, &width) in arch.widths.iter().enumerate() {
            params.insert(
                &format!("conv{}.w", i + 1),
                init::conv_kernel(width, c_in, 3, 3, &mut rng),
                true,
            )?;
            params.insert(&format!("conv{}.b", i + 1), Tensor::zeros(&[width]), true)?;
            c_in = width;
        }
        params.insert(
            "fc1.w",
            init::dense_weight(arch.flat_dim(), arch.fc_width, &mut rng),
            true,
        )?;
        params.insert("fc1.b", Tensor::zeros(&[arch.fc_width]), true)?;
        params.insert("fc2.w", init::dense_weight(arch.fc_width, 1, &mut rng), true)?;
        params.insert("fc2.b", Tensor::zeros(&[1]), true)?;
        Ok(GenderClassifier { params, arch })
    }

    pub fn from_params(params: ParamStore, arch: ClassifierArch) -> Result<GenderClassifier> {
        for name in arch.param_names() {
            params.get(&name)?;
        }
        Ok(GenderClassifier { params, arch })
    }

    pub fn vars(&self, frozen: bool) -> Result<ClassifierVars> {
        let mut leaves = HashMap::new();
        for name in self.arch.param_names() {
            let var = if frozen {
                self.params.frozen_var(&name)?
            } else {
                self.params.var(&name)?
            };
            leaves.insert(name, var);
        }
        Ok(ClassifierVars {
            leaves,
            arch: self.arch.clone(),
        })
    }
}

/// Per-step graph leaves of a classifier.
pub struct ClassifierVars {
    leaves: HashMap<String, Var>,
    arch: ClassifierArch,
}

impl ClassifierVars {
    pub fn leaves(&self) -> &HashMap<String, Var> {
        &self.leaves
    }

    fn leaf(&self, name: &str) -> &Var {
        &self.leaves[name]
    }

    /// Conv trunk: `[N,1,S,S]` down to the `[N,C,4,4]`-ish feature map.
    pub fn trunk(&self, x: &Var) -> Result<Var> {
        let (_n, c, h, w) = x.value().dims4("gender_forward")?;
        if c != 1 || h != self.arch.image_size || w != self.arch.image_size {
            return Err(Error::ShapeMismatch {
                op: "gender_forward",
                detail: format!(
                    "expected [N,1,{s},{s}] input, got {:?}",
                    x.shape(),
                    s = self.arch.image_size
                ),
            });
        }
        let mut h = x.clone();
        for i in 1..=self.arch.widths.len() {
            h = ops::conv2d(&h, self.leaf(&format!("conv{i}.w")), self.leaf(&format!("conv{i}.b")))?;
            h = ops::leaky_relu(&h, self.arch.leaky_slope)?;
            h = ops::max_pool2d(&h, true)?;
        }
        Ok(h)
    }

    /// Head: flatten, FC, leaky ReLU, FC, sigmoid. Dropout masks are applied
    /// around both FC layers when an RNG is supplied (standalone training);
    /// inference passes `None` and is deterministic.
    pub fn head(&self, features: &Var, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let mut h = ops::flatten(features)?;
        let mut rng = dropout_rng;
        if let Some(rng) = rng.as_deref_mut() {
            h = dropout(&h, self.arch.dropout, rng)?;
        }
        h = ops::dense(&h, self.leaf("fc1.w"), self.leaf("fc1.b"))?;
        h = ops::leaky_relu(&h, self.arch.leaky_slope)?;
        if let Some(rng) = rng.as_deref_mut() {
            h = dropout(&h, self.arch.dropout, rng)?;
        }
        h = ops::dense(&h, self.leaf("fc2.w"), self.leaf("fc2.b"))?;
        Ok(ops::sigmoid(&h))
    }
}

/// Male-probability of a batch: `[N,1,S,S]` to `[N,1]` in (0,1). `training`
/// enables the dropout masks and requires the caller's RNG stream.
pub fn gender_forward(
    clf: &ClassifierVars,
    x: &Var,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let features = clf.trunk(x)?;
    clf.head(&features, dropout_rng)
}

/// Inverted-scaling dropout: each element is zeroed with probability `p`,
/// survivors are scaled by `1/(1-p)` so inference needs no rescaling.
fn dropout(x: &Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mask_data: Vec<f64> = (0..x.value().numel())
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data)?;
    ops::mul_mask(x, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::random_tensor;

    fn cfg_with_size(s: usize) -> Config {
        let mut cfg = Config::default();
        cfg.image_size = s;
        cfg
    }

    #[test]
    fn paper_scale_feature_map_is_4x4x256() {
        let arch = ClassifierArch::auxiliary(&cfg_with_size(224)).unwrap();
        assert_eq!(arch.widths, vec![8, 16, 32, 64, 128, 256]);
        assert_eq!(arch.final_spatial(), 4);
        assert_eq!(arch.flat_dim(), 4 * 4 * 256);

        let clf = GenderClassifier::init(arch, 0).unwrap();
        let vars = clf.vars(true).unwrap();
        let x = Var::constant(Tensor::full(&[1, 1, 224, 224], 0.5));
        let features = vars.trunk(&x).unwrap();
        assert_eq!(features.shape(), &[1, 256, 4, 4]);
        let p = vars.head(&features, None).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        let v = p.value().data()[0];
        assert!(0.0 < v && v < 1.0);
    }

    #[test]
    fn desk_scale_uses_four_blocks() {
        let arch = ClassifierArch::auxiliary(&cfg_with_size(64)).unwrap();
        assert_eq!(arch.widths, vec![8, 16, 32, 64]);
        assert_eq!(arch.final_spatial(), 4);
    }

    #[test]
    fn evaluation_arch_shares_no_shapes_with_auxiliary() {
        let cfg = cfg_with_size(64);
        let aux = GenderClassifier::init(ClassifierArch::auxiliary(&cfg).unwrap(), 1).unwrap();
        let eval = GenderClassifier::init(ClassifierArch::evaluation(&cfg).unwrap(), 2).unwrap();
        assert_eq!(eval.arch.widths.len() + 1, aux.arch.widths.len());
        for (name, entry) in eval.params.iter() {
            if name == "fc2.b" {
                continue; // both heads end in a single logit
            }
            if let Ok(aux_entry) = aux.params.get(name) {
                assert_ne!(
                    aux_entry.value.shape(),
                    entry.value.shape(),
                    "parameter {name} must differ in shape between aux and eval"
                );
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_training_dropout_is_not_a_noop() {
        let cfg = cfg_with_size(16);
        let clf = GenderClassifier::init(ClassifierArch::auxiliary(&cfg).unwrap(), 3).unwrap();
        let vars = clf.vars(true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Var::constant(random_tensor(&[2, 1, 16, 16], 0.0, 1.0, &mut rng));

        let a = gender_forward(&vars, &x, None).unwrap();
        let b = gender_forward(&vars, &x, None).unwrap();
        assert_eq!(a.value().data(), b.value().data());

        let mut d1 = ChaCha8Rng::seed_from_u64(5);
        let mut d2 = ChaCha8Rng::seed_from_u64(5);
        let t1 = gender_forward(&vars, &x, Some(&mut d1)).unwrap();
        let t2 = gender_forward(&vars, &x, Some(&mut d2)).unwrap();
        // same dropout stream, same output; the mask itself changes values
        assert_eq!(t1.value().data(), t2.value().data());
        assert_ne!(t1.value().data(), a.value().data());
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let cfg = cfg_with_size(16);
        let clf = GenderClassifier::init(ClassifierArch::auxiliary(&cfg).unwrap(), 6).unwrap();
        let vars = clf.vars(true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let x = Var::constant(random_tensor(&[3, 1, 16, 16], 0.0, 1.0, &mut rng));
            let p = gender_forward(&vars, &x, None).unwrap();
            assert!(p.value().data().iter().all(|&v| 0.0 < v && v < 1.0));
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let cfg = cfg_with_size(16);
        let clf = GenderClassifier::init(ClassifierArch::auxiliary(&cfg).unwrap(), 8).unwrap();
        let vars = clf.vars(true).unwrap();
        let x = Var::constant(Tensor::zeros(&[1, 1, 8, 8]));
        assert!(gender_forward(&vars, &x, None).is_err());
    }
}
