//! Subnetwork III: the face matcher.
//!
//! The desk-scale matcher is a conv trunk (same block structure as the
//! gender classifier) with a dense descriptor layer on top. It is trained as
//! an identity classifier on the synthetic training identities; the
//! classification head is discarded afterwards and the penultimate
//! activations — a fixed-length descriptor vector — are what the matcher
//! exposes. Match scores are (negated squared) distances between
//! descriptors. At the reference configuration (224 input, descriptor 2622)
//! the descriptor length matches the public face-descriptor networks this
//! stands in for; [`crate::models::adapt_rgb_filters_to_gray`] exists for
//! loading externally trained RGB weights.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::models::pool_steps;
use crate::nn::{init, ops, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherArch {
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub descriptor_dim: usize,
    pub leaky_slope: f64,
}

impl MatcherArch {
    /// Auxiliary matcher: same trunk structure and widths as the auxiliary
    /// gender classifier, descriptor length from the config.
    pub fn auxiliary(cfg: &Config) -> Result<MatcherArch> {
        Self::with_widths(cfg.image_size, &cfg.channels.classifier, cfg.descriptor_dim, cfg.leaky_slope)
    }

    /// Evaluation matcher: independent widths and descriptor length so no
    /// parameter shape coincides with the auxiliary's.
    pub fn evaluation(cfg: &Config) -> Result<MatcherArch> {
        Self::with_widths(
            cfg.image_size,
            &cfg.channels.eval_matcher,
            cfg.eval.descriptor_dim,
            cfg.leaky_slope,
        )
    }

    fn with_widths(
        image_size: usize,
        available: &[usize],
        descriptor_dim: usize,
        leaky_slope: f64,
    ) -> Result<MatcherArch> {
        let blocks = pool_steps(image_size, 4);
        if available.len() < blocks {
            return Err(Error::Config(format!(
                "image size {image_size} needs {blocks} conv blocks but only {} widths are configured",
                available.len()
            )));
        }
        Ok(MatcherArch {
            image_size,
            widths: available[..blocks].to_vec(),
            descriptor_dim,
            leaky_slope,
        })
    }

    pub fn flat_dim(&self) -> usize {
        let s = crate::models::spatial_after(self.image_size, self.widths.len());
        s * s * self.widths[self.widths.len() - 1]
    }

    fn param_names(&self, with_head: bool) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.widths.len() {
            names.push(format!("conv{i}.w"));
            names.push(format!("conv{i}.b"));
        }
        names.push("desc.w".into());
        names.push("desc.b".into());
        if with_head {
            names.push("head.w".into());
            names.push("head.b".into());
        }
        names
    }
}

#[derive(Debug, Clone)]
pub struct Matcher {
    pub params: ParamStore,
    pub arch: MatcherArch,
    /// Classes of the identity head, present during training only.
    pub head_classes: Option<usize>,
}

impl Matcher {
    pub fn init(arch: MatcherArch, head_classes: Option<usize>, seed: u64) -> Result<Matcher> {
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
            "desc.w",
            init::dense_weight(arch.flat_dim(), arch.descriptor_dim, &mut rng),
            true,
        )?;
        params.insert("desc.b", Tensor::zeros(&[arch.descriptor_dim]), true)?;
        if let Some(classes) = head_classes {
            params.insert(
                "head.w",
                init::dense_weight(arch.descriptor_dim, classes, &mut rng),
                true,
            )?;
            params.insert("head.b", Tensor::zeros(&[classes]), true)?;
        }
        Ok(Matcher {
            params,
            arch,
            head_classes,
        })
    }

    pub fn from_params(params: ParamStore, arch: MatcherArch) -> Result<Matcher> {
        for name in arch.param_names(false) {
            params.get(&name)?;
        }
        Ok(Matcher {
            params,
            arch,
            head_classes: None,
        })
    }

    /// Drop the identity-classification head, keeping only the descriptor
    /// network. Descriptors are unchanged by this.
    pub fn strip_head(&self) -> Result<Matcher> {
        let mut params = ParamStore::new();
        for (name, entry) in self.params.iter() {
            if !name.starts_with("head.") {
                params.insert(name, entry.value.clone(), entry.trainable)?;
            }
        }
        Ok(Matcher {
            params,
            arch: self.arch.clone(),
            head_classes: None,
        })
    }

    pub fn vars(&self, frozen: bool) -> Result<MatcherVars> {
        let mut leaves = HashMap::new();
        for name in self.arch.param_names(self.head_classes.is_some()) {
            let var = if frozen {
                self.params.frozen_var(&name)?
            } else {
                self.params.var(&name)?
            };
            leaves.insert(name, var);
        }
        Ok(MatcherVars {
            leaves,
            arch: self.arch.clone(),
            has_head: self.head_classes.is_some(),
        })
    }
}

pub struct MatcherVars {
    leaves: HashMap<String, Var>,
    arch: MatcherArch,
    has_head: bool,
}

impl MatcherVars {
    pub fn leaves(&self) -> &HashMap<String, Var> {
        &self.leaves
    }

    fn leaf(&self, name: &str) -> &Var {
        &self.leaves[name]
    }

    /// Descriptor of a batch: `[N,1,S,S]` to `[N,descriptor_dim]`.
    pub fn embed(&self, x: &Var) -> Result<Var> {
        let (_n, c, h, w) = x.value().dims4("matcher_embed")?;
        if c != 1 || h != self.arch.image_size || w != self.arch.image_size {
            return Err(Error::ShapeMismatch {
                op: "matcher_embed",
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
        let flat = ops::flatten(&h)?;
        let desc = ops::dense(&flat, self.leaf("desc.w"), self.leaf("desc.b"))?;
        ops::leaky_relu(&desc, self.arch.leaky_slope)
    }

    /// Identity logits for head training: `[N, classes]`.
    pub fn logits(&self, x: &Var) -> Result<Var> {
        if !self.has_head {
            return Err(Error::InvalidArgument(
                "matcher has no identity head (it was stripped after training)".into(),
            ));
        }
        let desc = self.embed(x)?;
        ops::dense(&desc, self.leaf("head.w"), self.leaf("head.b"))
    }
}

/// Descriptor of a batch with frozen parameters.
pub fn matcher_embed(m: &Matcher, x: &Var) -> Result<Var> {
    m.vars(true)?.embed(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::random_tensor;

    fn small_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.image_size = 16;
        cfg.descriptor_dim = 8;
        cfg
    }

    #[test]
    fn descriptor_length_follows_config() {
        let cfg = small_cfg();
        let m = Matcher::init(MatcherArch::auxiliary(&cfg).unwrap(), None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Var::constant(random_tensor(&[3, 1, 16, 16], 0.0, 1.0, &mut rng));
        let e = matcher_embed(&m, &x).unwrap();
        assert_eq!(e.shape(), &[3, 8]);
    }

    #[test]
    fn paper_scale_descriptor_is_2622() {
        let mut cfg = Config::default();
        cfg.image_size = 224;
        cfg.descriptor_dim = 2622;
        let arch = MatcherArch::auxiliary(&cfg).unwrap();
        assert_eq!(arch.flat_dim(), 4 * 4 * 256);
        assert_eq!(arch.descriptor_dim, 2622);
        let m = Matcher::init(arch, None, 2).unwrap();
        assert_eq!(m.params.get("desc.w").unwrap().value.shape(), &[4096, 2622]);
    }

    #[test]
    fn embedding_is_deterministic() {
        let cfg = small_cfg();
        let m = Matcher::init(MatcherArch::auxiliary(&cfg).unwrap(), None, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Var::constant(random_tensor(&[2, 1, 16, 16], 0.0, 1.0, &mut rng));
        let a = matcher_embed(&m, &x).unwrap();
        let b = matcher_embed(&m, &x).unwrap();
        assert_eq!(a.value().data(), b.value().data());
    }

    #[test]
    fn head_training_shape_and_strip() {
        let cfg = small_cfg();
        let m = Matcher::init(MatcherArch::auxiliary(&cfg).unwrap(), Some(5), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Var::constant(random_tensor(&[2, 1, 16, 16], 0.0, 1.0, &mut rng));
        let logits = m.vars(true).unwrap().logits(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 5]);

        let stripped = m.strip_head().unwrap();
        assert!(stripped.params.get("head.w").is_err());
        let before = matcher_embed(&m, &x).unwrap();
        let after = matcher_embed(&stripped, &x).unwrap();
        assert_eq!(before.value().data(), after.value().data());
        assert!(stripped.vars(true).unwrap().logits(&x).is_err());
    }

    #[test]
    fn eval_arch_differs_from_auxiliary_in_every_shared_name() {
        let cfg = small_cfg();
        let aux = Matcher::init(MatcherArch::auxiliary(&cfg).unwrap(), None, 7).unwrap();
        let eval = Matcher::init(MatcherArch::evaluation(&cfg).unwrap(), None, 8).unwrap();
        for (name, entry) in eval.params.iter() {
            if let Ok(aux_entry) = aux.params.get(name) {
                assert_ne!(aux_entry.value.shape(), entry.value.shape(), "{name}");
            }
        }
    }
}
