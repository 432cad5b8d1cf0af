//! Subnetwork I: the prototype-conditioned convolutional autoencoder.
//!
//! Forward path for an `[N,1,S,S]` batch:
//!
//! ```text
//! concat(x, same-gender prototype)                  [N,4,S,S]
//!   -> conv -> leaky ReLU -> avg pool   (encoder 1) [N,e1,S/2,S/2]
//!   -> conv -> leaky ReLU -> avg pool   (encoder 2) [N,e2,S/4,S/4]
//!   -> conv -> leaky ReLU -> upsample   (decoder 1) [N,d1,S/2,S/2]
//!   -> conv -> leaky ReLU -> upsample   (decoder 2) [N,d2,S,S]
//! concat(decoder output, output prototype)          [N,d2+3,S,S]
//!   -> conv -> sigmoid                  (final)     [N,1,S,S]
//! ```
//!
//! The encoder input prototype is always same-gender; only the prototype
//! blended in before the final convolution varies (same / neutral /
//! opposite), which is what makes the three outputs of one input differ.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Channels;
use crate::error::{Error, Result};
use crate::nn::{init, ops, ParamStore, Tensor, Var};

const PARAM_NAMES: [&str; 10] = [
    "enc1.w", "enc1.b", "enc2.w", "enc2.b", "dec1.w", "dec1.b", "dec2.w", "dec2.b", "final.w",
    "final.b",
];

/// Subnetwork I parameters plus the activation slope.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub params: ParamStore,
    pub leaky_slope: f64,
}

/// The three reconstructions of one input batch, sharing every computation
/// up to and including the decoder output.
pub struct PerturbationTriple {
    pub x_sm: Var,
    pub x_nt: Var,
    pub x_op: Var,
}

/// Per-step graph leaves of the autoencoder.
pub struct AutoencoderVars {
    leaves: HashMap<String, Var>,
    slope: f64,
}

impl Autoencoder {
    /// He-uniform initialization; encoder input has 1+3 channels, the final
    /// convolution sees the decoder channels plus 3 prototype channels.
    pub fn init(channels: &Channels, leaky_slope: f64, seed: u64) -> Result<Autoencoder> {
        let [e1, e2]: [usize; 2] = channels.encoder[..]
            .try_into()
            .map_err(|_| Error::Config("encoder takes exactly two widths".into()))?;
        let [d1, d2]: [usize; 2] = channels.decoder[..]
            .try_into()
            .map_err(|_| Error::Config("decoder takes exactly two widths".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let conv = |params: &mut ParamStore, name: &str, k: usize, c: usize, rng: &mut ChaCha8Rng| -> Result<()> {
            params.insert(&format!("{name}.w"), init::conv_kernel(k, c, 3, 3, rng), true)?;
            params.insert(&format!("{name}.b"), Tensor::zeros(&[k]), true)?;
            Ok(())
        };
        conv(&mut params, "enc1", e1, 4, &mut rng)?;
        conv(&mut params, "enc2", e2, e1, &mut rng)?;
        conv(&mut params, "dec1", d1, e2, &mut rng)?;
        conv(&mut params, "dec2", d2, d1, &mut rng)?;
        conv(&mut params, "final", 1, d2 + 3, &mut rng)?;
        Ok(Autoencoder {
            params,
            leaky_slope,
        })
    }

    pub fn from_params(params: ParamStore, leaky_slope: f64) -> Result<Autoencoder> {
        for name in PARAM_NAMES {
            params.get(name)?;
        }
        Ok(Autoencoder {
            params,
            leaky_slope,
        })
    }

    /// Graph leaves for one training step. With `frozen`, no leaf ever
    /// stores a gradient regardless of trainable flags.
    pub fn vars(&self, frozen: bool) -> Result<AutoencoderVars> {
        let mut leaves = HashMap::new();
        for name in PARAM_NAMES {
            let var = if frozen {
                self.params.frozen_var(name)?
            } else {
                self.params.var(name)?
            };
            leaves.insert(name.to_string(), var);
        }
        Ok(AutoencoderVars {
            leaves,
            slope: self.leaky_slope,
        })
    }
}

impl AutoencoderVars {
    fn leaf(&self, name: &str) -> &Var {
        &self.leaves[name]
    }

    /// Leaf map keyed by parameter name, for gradient absorption.
    pub fn leaves(&self) -> &HashMap<String, Var> {
        &self.leaves
    }

    /// Encoder: `[N,4,S,S]` to `[N,e2,S/4,S/4]`.
    pub fn encode(&self, x_cat: &Var) -> Result<Var> {
        let mut h = x_cat.clone();
        for name in ["enc1", "enc2"] {
            h = ops::conv2d(&h, self.leaf(&format!("{name}.w")), self.leaf(&format!("{name}.b")))?;
            h = ops::leaky_relu(&h, self.slope)?;
            h = ops::avg_pool2d(&h)?;
        }
        Ok(h)
    }

    /// Decoder: `[N,e2,S/4,S/4]` to `[N,d2,S,S]`.
    pub fn decode(&self, z: &Var) -> Result<Var> {
        let mut h = z.clone();
        for name in ["dec1", "dec2"] {
            h = ops::conv2d(&h, self.leaf(&format!("{name}.w")), self.leaf(&format!("{name}.b")))?;
            h = ops::leaky_relu(&h, self.slope)?;
            h = ops::upsample_nearest2d(&h)?;
        }
        Ok(h)
    }

    /// Blend a prototype batch into decoder features and produce the image.
    pub fn proto_combine(&self, decoded: &Var, proto: &Var) -> Result<Var> {
        let cat = ops::concat_channels(&[decoded, proto])?;
        let out = ops::conv2d(&cat, self.leaf("final.w"), self.leaf("final.b"))?;
        Ok(ops::sigmoid(&out))
    }

    /// Full forward pass. `proto_in` is the same-gender prototype batch
    /// (always, regardless of the output kind); `proto_out` selects which
    /// reconstruction is produced.
    pub fn autoencode(&self, x: &Var, proto_in: &Var, proto_out: &Var) -> Result<Var> {
        self.check_input(x, proto_in)?;
        let cat = ops::concat_channels(&[x, proto_in])?;
        let decoded = self.decode(&self.encode(&cat)?)?;
        self.proto_combine(&decoded, proto_out)
    }

    /// All three reconstructions, sharing the encoder/decoder computation.
    pub fn perturb_triple(
        &self,
        x: &Var,
        proto_sm: &Var,
        proto_nt: &Var,
        proto_op: &Var,
    ) -> Result<PerturbationTriple> {
        self.check_input(x, proto_sm)?;
        let cat = ops::concat_channels(&[x, proto_sm])?;
        let decoded = self.decode(&self.encode(&cat)?)?;
        Ok(PerturbationTriple {
            x_sm: self.proto_combine(&decoded, proto_sm)?,
            x_nt: self.proto_combine(&decoded, proto_nt)?,
            x_op: self.proto_combine(&decoded, proto_op)?,
        })
    }

    fn check_input(&self, x: &Var, proto: &Var) -> Result<()> {
        let (n, c, h, w) = x.value().dims4("autoencode")?;
        if c != 1 {
            return Err(Error::ShapeMismatch {
                op: "autoencode",
                detail: format!("input must have 1 channel, got {c}"),
            });
        }
        let (pn, pc, ph, pw) = proto.value().dims4("autoencode")?;
        if (pn, pc, ph, pw) != (n, 3, h, w) {
            return Err(Error::ShapeMismatch {
                op: "autoencode",
                detail: format!(
                    "prototype batch [{pn},{pc},{ph},{pw}] does not match input [{n},1,{h},{w}]"
                ),
            });
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::ShapeMismatch {
                op: "autoencode",
                detail: format!("spatial dims must be divisible by 4, got {h}x{w}"),
            });
        }
        Ok(())
    }
}
