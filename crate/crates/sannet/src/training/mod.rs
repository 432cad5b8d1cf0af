//! The three training procedures and checkpointing.
//!
//! 1. auxiliary training: the gender classifier (cross-entropy on labels,
//!    dropout active) and the matcher (identity classification, head
//!    discarded afterwards);
//! 2. autoencoder pre-training: reconstruction loss `J_D` on the same-gender
//!    output only;
//! 3. semi-adversarial training: `lambda_g*J_G + lambda_m*J_M` updates the
//!    autoencoder alone while both auxiliaries stay frozen — their parameter
//!    bytes are hashed before and after and must be identical.

mod log;

pub use log::{LogRow, TrainLog};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{derive_seed, Config};
use crate::data::{stack_images, DatasetSplit, FaceRecord};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::models::classifier::{gender_forward, ClassifierArch, GenderClassifier};
use crate::models::matcher::{Matcher, MatcherArch};
use crate::models::Autoencoder;
use crate::nn::weights::{self, ContainerMeta};
use crate::nn::{ops, Adam, ParamStore, Tensor, Var};
use crate::prototypes::{PrototypeKind, PrototypeSet};

pub const PHASE_AUX_GENDER: &str = "aux-gender";
pub const PHASE_AUX_MATCHER: &str = "aux-matcher";
pub const PHASE_PRETRAIN: &str = "pretrain";
pub const PHASE_ADVERSARIAL: &str = "adversarial";
pub const PHASE_EVAL_GENDER: &str = "eval-gender";
pub const PHASE_EVAL_MATCHER: &str = "eval-matcher";

/// Which of the three subnetworks a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subnetwork {
    Autoencoder,
    GenderClassifier,
    Matcher,
}

impl Subnetwork {
    pub fn tag(&self) -> &'static str {
        match self {
            Subnetwork::Autoencoder => "I",
            Subnetwork::GenderClassifier => "II",
            Subnetwork::Matcher => "III",
        }
    }
}

/// A trained model plus its per-epoch mean losses and any soft warnings.
#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub model: T,
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Outcome of the semi-adversarial phase.
#[derive(Debug)]
pub struct AdversarialOutcome {
    pub autoencoder: Autoencoder,
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
    /// Per parameter: did a non-zero gradient reach it in at least one step?
    pub grad_coverage: BTreeMap<String, bool>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Shuffled batch index lists for one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn gather<'a>(split: &'a DatasetSplit, batch: &[usize]) -> Vec<&'a FaceRecord> {
    batch.iter().map(|&i| &split.records[i]).collect()
}

fn gender_targets(records: &[&FaceRecord]) -> Tensor {
    let data = records.iter().map(|r| r.gender as f64).collect();
    Tensor::from_vec(&[records.len(), 1], data).expect("sizes agree")
}

fn warn_on_non_decreasing(epoch_losses: &[f64], phase: &str, warnings: &mut Vec<String>) {
    for w in epoch_losses.windows(2) {
        if w[1] >= w[0] {
            warnings.push(format!(
                "{phase}: epoch mean loss did not decrease ({} -> {})",
                w[0], w[1]
            ));
        }
    }
}

/// Train a gender classifier (auxiliary or evaluation variant) with dropout
/// active and per-batch mean cross-entropy.
pub fn train_gender_classifier(
    train: &DatasetSplit,
    cfg: &Config,
    arch: ClassifierArch,
    seed_label: &str,
    phase: &str,
    log: &mut TrainLog,
) -> Result<TrainOutcome<GenderClassifier>> {
    let counts = train.counts();
    if counts.n_male == 0 || counts.n_female == 0 {
        return Err(Error::Dataset(
            "gender classifier training needs both genders".into(),
        ));
    }
    let seed = derive_seed(cfg.seed, seed_label);
    let mut clf = GenderClassifier::init(arch, derive_seed(seed, "init"))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dropout"));
    let mut adam = Adam::new(cfg.lr_aux);
    let mut epoch_losses = Vec::new();
    let mut warnings = Vec::new();
    let mut step = 0u64;

    for _epoch in 0..cfg.epochs_aux {
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let records = gather(train, &batch);
            let n = records.len() as f64;
            let x = Var::constant(stack_images(&records));
            let y = Var::constant(gender_targets(&records));
            let vars = clf.vars(false)?;
            let p = gender_forward(&vars, &x, Some(&mut dropout_rng))?;
            let loss = ops::scale(&ops::binary_cross_entropy(&y, &p)?, 1.0 / n);
            let value = loss.value().item();
            step += 1;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    phase: phase.to_string(),
                    step,
                });
            }
            loss.backward()?;
            clf.params.absorb_grads(vars.leaves())?;
            adam.step(&mut clf.params)?;
            log.push(phase, step, 0.0, value, 0.0, value);
            sum += value;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    warn_on_non_decreasing(&epoch_losses, phase, &mut warnings);
    Ok(TrainOutcome {
        model: clf,
        epoch_losses,
        warnings,
    })
}

/// Auxiliary gender classifier (subnetwork II).
pub fn train_aux_gender(
    train: &DatasetSplit,
    cfg: &Config,
    log: &mut TrainLog,
) -> Result<TrainOutcome<GenderClassifier>> {
    train_gender_classifier(
        train,
        cfg,
        ClassifierArch::auxiliary(cfg)?,
        PHASE_AUX_GENDER,
        PHASE_AUX_GENDER,
        log,
    )
}

/// Train a matcher (auxiliary or evaluation variant) by identity
/// classification; the head is discarded from the returned model.
pub fn train_matcher(
    train: &DatasetSplit,
    cfg: &Config,
    arch: MatcherArch,
    seed_label: &str,
    phase: &str,
    log: &mut TrainLog,
) -> Result<TrainOutcome<Matcher>> {
    let identities: Vec<u32> = train.identities().into_iter().collect();
    if identities.len() < 2 {
        return Err(Error::Dataset(
            "matcher training needs at least 2 identities".into(),
        ));
    }
    for &id in &identities {
        let n = train.records.iter().filter(|r| r.identity == id).count();
        if n < 2 {
            return Err(Error::Dataset(format!(
                "matcher training needs >= 2 images per identity; identity {id} has {n}"
            )));
        }
    }
    let class_of: BTreeMap<u32, usize> = identities
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    let seed = derive_seed(cfg.seed, seed_label);
    let mut matcher = Matcher::init(arch, Some(identities.len()), derive_seed(seed, "init"))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut adam = Adam::new(cfg.lr_aux);
    let mut epoch_losses = Vec::new();
    let mut warnings = Vec::new();
    let mut step = 0u64;

    for _epoch in 0..cfg.epochs_aux {
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let records = gather(train, &batch);
            let n = records.len() as f64;
            let labels: Vec<usize> = records.iter().map(|r| class_of[&r.identity]).collect();
            let x = Var::constant(stack_images(&records));
            let vars = matcher.vars(false)?;
            let logits = vars.logits(&x)?;
            let loss = ops::scale(&ops::softmax_cross_entropy(&logits, &labels)?, 1.0 / n);
            let value = loss.value().item();
            step += 1;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    phase: phase.to_string(),
                    step,
                });
            }
            loss.backward()?;
            matcher.params.absorb_grads(vars.leaves())?;
            adam.step(&mut matcher.params)?;
            log.push(phase, step, 0.0, 0.0, value, value);
            sum += value;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    warn_on_non_decreasing(&epoch_losses, phase, &mut warnings);
    Ok(TrainOutcome {
        model: matcher.strip_head()?,
        epoch_losses,
        warnings,
    })
}

/// Auxiliary matcher (subnetwork III).
pub fn train_aux_matcher(
    train: &DatasetSplit,
    cfg: &Config,
    log: &mut TrainLog,
) -> Result<TrainOutcome<Matcher>> {
    train_matcher(
        train,
        cfg,
        MatcherArch::auxiliary(cfg)?,
        PHASE_AUX_MATCHER,
        PHASE_AUX_MATCHER,
        log,
    )
}

/// Reconstruction pre-training: minimizes `J_D` on the same-gender output
/// only. Prototypes must come from the same training split.
pub fn pretrain_autoencoder(
    train: &DatasetSplit,
    ps: &PrototypeSet,
    cfg: &Config,
    log: &mut TrainLog,
) -> Result<TrainOutcome<Autoencoder>> {
    if train.image_size() != Some(ps.image_size()) {
        return Err(Error::ShapeMismatch {
            op: "pretrain_autoencoder",
            detail: format!(
                "dataset image size {:?} vs prototype size {}",
                train.image_size(),
                ps.image_size()
            ),
        });
    }
    let seed = derive_seed(cfg.seed, PHASE_PRETRAIN);
    let mut ae = Autoencoder::init(&cfg.channels, cfg.leaky_slope, derive_seed(seed, "init"))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut adam = Adam::new(cfg.lr_pretrain);
    let mut epoch_losses = Vec::new();
    let mut warnings = Vec::new();
    let mut step = 0u64;

    for _epoch in 0..cfg.epochs_pretrain {
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let records = gather(train, &batch);
            let genders: Vec<u8> = records.iter().map(|r| r.gender).collect();
            let x = Var::constant(stack_images(&records));
            let proto_sm = Var::constant(ps.batch(&genders, PrototypeKind::Same)?);
            let vars = ae.vars(false)?;
            let x_sm = vars.autoencode(&x, &proto_sm, &proto_sm)?;
            let loss = losses::jd_batch(&x, &x_sm)?;
            let value = loss.value().item();
            step += 1;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    phase: PHASE_PRETRAIN.to_string(),
                    step,
                });
            }
            loss.backward()?;
            ae.params.absorb_grads(vars.leaves())?;
            adam.step(&mut ae.params)?;
            log.push(PHASE_PRETRAIN, step, value, 0.0, 0.0, value);
            sum += value;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    warn_on_non_decreasing(&epoch_losses, PHASE_PRETRAIN, &mut warnings);
    Ok(TrainOutcome {
        model: ae,
        epoch_losses,
        warnings,
    })
}

/// Matcher descriptors of a whole split with frozen parameters, as an
/// `[N, D]` row matrix.
pub fn embed_split(m: &Matcher, split: &DatasetSplit, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(split.len());
    let vars = m.vars(true)?;
    for chunk in split.records.chunks(batch_size.max(1)) {
        let refs: Vec<&FaceRecord> = chunk.iter().collect();
        let x = Var::constant(stack_images(&refs));
        let e = vars.embed(&x)?;
        let d = e.shape()[1];
        for row in 0..refs.len() {
            out.push(e.value().data()[row * d..(row + 1) * d].to_vec());
        }
    }
    Ok(out)
}

/// Semi-adversarial phase: per batch, build the same- and opposite-gender
/// reconstructions, score them with the frozen gender classifier, embed the
/// same-gender one with the frozen matcher, and update only the autoencoder
/// on `lambda_g*J_G + lambda_m*J_M`. Original-image descriptors are embedded
/// once up front and cached. The auxiliaries' parameter bytes are hashed
/// before and after; any difference is an error.
pub fn train_semi_adversarial(
    ae: Autoencoder,
    gender: &GenderClassifier,
    matcher: &Matcher,
    train: &DatasetSplit,
    ps: &PrototypeSet,
    weights: &LossWeights,
    cfg: &Config,
    log: &mut TrainLog,
) -> Result<AdversarialOutcome> {
    let mut ae = ae;
    let gender_hash = sha256_hex(&gender.params.value_bytes());
    let matcher_hash = sha256_hex(&matcher.params.value_bytes());

    let e_x_cache = embed_split(matcher, train, cfg.batch_size)?;
    let desc_dim = e_x_cache.first().map(|r| r.len()).unwrap_or(0);

    let seed = derive_seed(cfg.seed, PHASE_ADVERSARIAL);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut adam = Adam::new(cfg.lr_adversarial);
    let mut epoch_losses = Vec::new();
    let mut warnings = Vec::new();
    let mut grad_coverage: BTreeMap<String, bool> = ae
        .params
        .names()
        .iter()
        .map(|n| (n.clone(), false))
        .collect();
    let mut step = 0u64;

    for _epoch in 0..cfg.epochs_adversarial {
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let records = gather(train, &batch);
            let n = records.len() as f64;
            let genders: Vec<u8> = records.iter().map(|r| r.gender).collect();
            let x = Var::constant(stack_images(&records));
            let proto_sm = Var::constant(ps.batch(&genders, PrototypeKind::Same)?);
            let proto_op = Var::constant(ps.batch(&genders, PrototypeKind::Opposite)?);

            let ae_vars = ae.vars(false)?;
            let cat = ops::concat_channels(&[&x, &proto_sm])?;
            let decoded = ae_vars.decode(&ae_vars.encode(&cat)?)?;
            let x_sm = ae_vars.proto_combine(&decoded, &proto_sm)?;
            let x_op = ae_vars.proto_combine(&decoded, &proto_op)?;

            let g_vars = gender.vars(true)?;
            let p_sm = gender_forward(&g_vars, &x_sm, None)?;
            let p_op = gender_forward(&g_vars, &x_op, None)?;

            let m_vars = matcher.vars(true)?;
            let e_sm = m_vars.embed(&x_sm)?;
            let mut e_x_data = Vec::with_capacity(records.len() * desc_dim);
            for &i in &batch {
                e_x_data.extend_from_slice(&e_x_cache[i]);
            }
            let e_x = Var::constant(Tensor::from_vec(&[records.len(), desc_dim], e_x_data)?);

            let jg = losses::jg_batch(&genders, &p_sm, &p_op)?;
            let jm = losses::jm_batch(&e_x, &e_sm)?;
            let total = losses::total_batch(&jg, &jm, weights)?;
            let (jg_v, jm_v, total_v) = (jg.value().item(), jm.value().item(), total.value().item());
            // reconstruction quality is logged for monitoring only
            let jd_v = losses::loss_jd(x.value(), x_sm.value())? / n;
            step += 1;
            if !total_v.is_finite() {
                return Err(Error::Diverged {
                    phase: PHASE_ADVERSARIAL.to_string(),
                    step,
                });
            }
            total.backward()?;
            ae.params.absorb_grads(ae_vars.leaves())?;
            for (name, covered) in grad_coverage.iter_mut() {
                if !*covered {
                    if let Some(g) = ae.params.get(name)?.grad.as_ref() {
                        *covered = g.data().iter().any(|&v| v != 0.0);
                    }
                }
            }
            adam.step(&mut ae.params)?;
            log.push(PHASE_ADVERSARIAL, step, jd_v, jg_v, jm_v, total_v);
            sum += total_v;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }

    if sha256_hex(&gender.params.value_bytes()) != gender_hash {
        return Err(Error::UnfrozenAuxiliary("gender classifier".into()));
    }
    if sha256_hex(&matcher.params.value_bytes()) != matcher_hash {
        return Err(Error::UnfrozenAuxiliary("matcher".into()));
    }
    warn_on_non_decreasing(&epoch_losses, PHASE_ADVERSARIAL, &mut warnings);
    Ok(AdversarialOutcome {
        autoencoder: ae,
        epoch_losses,
        warnings,
        grad_coverage,
    })
}

/// Save a parameter store with its subnetwork/phase tags.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore,
    subnetwork: Subnetwork,
    phase: &str,
    cfg: &Config,
) -> Result<()> {
    let meta = ContainerMeta {
        subnetwork: subnetwork.tag().to_string(),
        phase: phase.to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    weights::save(path, params, &meta)
}

/// Load a checkpoint, verifying its subnetwork tag.
pub fn load_checkpoint(path: &Path, expect: Subnetwork) -> Result<(ParamStore, ContainerMeta)> {
    let (params, meta) = weights::load(path)?;
    if meta.subnetwork != expect.tag() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!(
                "subnetwork tag mismatch: file holds `{}`, expected `{}`",
                meta.subnetwork,
                expect.tag()
            ),
        });
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset, SyntheticSpec};
    use crate::prototypes::compute_prototypes;
    use tempfile::tempdir;

    fn tiny_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.image_size = 16;
        cfg.batch_size = 8;
        cfg.descriptor_dim = 16;
        cfg.epochs_aux = 2;
        cfg.epochs_pretrain = 3;
        cfg.epochs_adversarial = 2;
        cfg.synthetic.n_identities = 8;
        cfg.synthetic.images_per_identity = 3;
        cfg
    }

    fn tiny_data(cfg: &Config) -> (DatasetSplit, DatasetSplit) {
        let spec = SyntheticSpec {
            n_identities: cfg.synthetic.n_identities,
            images_per_identity: cfg.synthetic.images_per_identity,
            image_size: cfg.image_size,
            gender_signal_strength: cfg.synthetic.gender_signal_strength,
            identity_texture_seed: derive_seed(cfg.seed, "textures"),
        };
        let ds = generate_synthetic(&spec, derive_seed(cfg.seed, "synth")).unwrap();
        split_dataset(&ds, cfg.train_fraction, derive_seed(cfg.seed, "split")).unwrap()
    }

    #[test]
    fn gender_training_is_deterministic() {
        let cfg = tiny_cfg();
        let (train, _) = tiny_data(&cfg);
        let mut log_a = TrainLog::new();
        let a = train_aux_gender(&train, &cfg, &mut log_a).unwrap();
        let mut log_b = TrainLog::new();
        let b = train_aux_gender(&train, &cfg, &mut log_b).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(
            a.model.params.value_bytes(),
            b.model.params.value_bytes()
        );
        assert_eq!(log_a.to_csv_string(), log_b.to_csv_string());
    }

    #[test]
    fn matcher_training_separates_genuine_from_impostor() {
        let cfg = tiny_cfg();
        let (train, test) = tiny_data(&cfg);
        let mut log = TrainLog::new();
        let outcome = train_aux_matcher(&train, &cfg, &mut log).unwrap();
        assert!(outcome.model.params.get("head.w").is_err());

        let embeddings = embed_split(&outcome.model, &test, cfg.batch_size).unwrap();
        assert_eq!(embeddings[0].len(), cfg.descriptor_dim);
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for i in 0..test.len() {
            for j in 0..test.len() {
                if i == j {
                    continue;
                }
                let d: f64 = embeddings[i]
                    .iter()
                    .zip(&embeddings[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if test.records[i].identity == test.records[j].identity {
                    genuine.push(d);
                } else {
                    impostor.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&genuine) < mean(&impostor),
            "genuine {} !< impostor {}",
            mean(&genuine),
            mean(&impostor)
        );
    }

    #[test]
    fn pretrain_reduces_reconstruction_loss() {
        let cfg = tiny_cfg();
        let (train, _) = tiny_data(&cfg);
        let ps = compute_prototypes(&train).unwrap();
        let mut log = TrainLog::new();
        let outcome = pretrain_autoencoder(&train, &ps, &cfg, &mut log).unwrap();
        // Strict per-epoch decrease is asserted at the default configuration
        // in the acceptance suite; at this toy scale just require progress.
        let losses = &outcome.epoch_losses;
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "training made no progress: {losses:?}"
        );

        // reconstructions stay in (0,1)
        let vars = outcome.model.vars(true).unwrap();
        let refs: Vec<&FaceRecord> = train.records.iter().take(4).collect();
        let genders: Vec<u8> = refs.iter().map(|r| r.gender).collect();
        let x = Var::constant(stack_images(&refs));
        let proto = Var::constant(ps.batch(&genders, PrototypeKind::Same).unwrap());
        let out = vars.autoencode(&x, &proto, &proto).unwrap();
        assert!(out.value().data().iter().all(|&v| 0.0 < v && v < 1.0));
    }

    #[test]
    fn adversarial_phase_freezes_auxiliaries_and_reaches_every_param() {
        let cfg = tiny_cfg();
        let (train, _) = tiny_data(&cfg);
        let ps = compute_prototypes(&train).unwrap();
        let mut log = TrainLog::new();
        let gender = train_aux_gender(&train, &cfg, &mut log).unwrap().model;
        let matcher = train_aux_matcher(&train, &cfg, &mut log).unwrap().model;
        let ae = pretrain_autoencoder(&train, &ps, &cfg, &mut log).unwrap().model;

        let g_bytes = gender.params.value_bytes();
        let m_bytes = matcher.params.value_bytes();
        let outcome = train_semi_adversarial(
            ae,
            &gender,
            &matcher,
            &train,
            &ps,
            &LossWeights::default(),
            &cfg,
            &mut log,
        )
        .unwrap();

        assert_eq!(gender.params.value_bytes(), g_bytes);
        assert_eq!(matcher.params.value_bytes(), m_bytes);
        for (name, covered) in &outcome.grad_coverage {
            assert!(covered, "no gradient ever reached {name}");
        }
        assert!(log.phase_rows(PHASE_ADVERSARIAL).count() > 0);
    }

    #[test]
    fn full_pipeline_losses_reproduce_bit_identically() {
        let cfg = tiny_cfg();
        let run = || {
            let (train, _) = tiny_data(&cfg);
            let ps = compute_prototypes(&train).unwrap();
            let mut log = TrainLog::new();
            let gender = train_aux_gender(&train, &cfg, &mut log).unwrap().model;
            let matcher = train_aux_matcher(&train, &cfg, &mut log).unwrap().model;
            let ae = pretrain_autoencoder(&train, &ps, &cfg, &mut log).unwrap().model;
            train_semi_adversarial(
                ae,
                &gender,
                &matcher,
                &train,
                &ps,
                &LossWeights::default(),
                &cfg,
                &mut log,
            )
            .unwrap();
            log.to_csv_string()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip_and_tag_checks() {
        let cfg = tiny_cfg();
        let ae = Autoencoder::init(&cfg.channels, cfg.leaky_slope, 1).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        save_checkpoint(&path, &ae.params, Subnetwork::Autoencoder, PHASE_PRETRAIN, &cfg).unwrap();

        let (loaded, meta) = load_checkpoint(&path, Subnetwork::Autoencoder).unwrap();
        assert_eq!(meta.phase, PHASE_PRETRAIN);
        assert_eq!(meta.config_hash, cfg.hash());
        assert_eq!(loaded.value_bytes(), ae.params.value_bytes());

        match load_checkpoint(&path, Subnetwork::Matcher) {
            Err(Error::Checkpoint { reason, .. }) => {
                assert!(reason.contains("subnetwork tag mismatch"), "{reason}");
            }
            other => panic!("expected tag mismatch, got {other:?}"),
        }
    }

    #[test]
    fn value_bytes_hashing_detects_single_bit_changes() {
        let cfg = tiny_cfg();
        let ae = Autoencoder::init(&cfg.channels, cfg.leaky_slope, 2).unwrap();
        let before = sha256_hex(&ae.params.value_bytes());
        let mut tweaked = ae.clone();
        tweaked.params.get_mut("enc1.w").unwrap().value.data_mut()[0] += 1e-3;
        assert_ne!(before, sha256_hex(&tweaked.params.value_bytes()));
    }
}
