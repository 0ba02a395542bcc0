//! Source pretraining, frozen pseudo-labelling and test-time adaptation.
//!
//! Both training loops accumulate per-image gradients over a batch (every
//! loss is a batch mean) and take one optimizer step per batch. Callers can
//! observe each finished epoch through a callback, which is where checkpoints
//! get written; the callback returns an optional reference to what it saved.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imaging::{
    replace_background, source_augment, tight_bbox, AnnotatedSample, AugmentConfig, BoundingBox, ClassMask,
    Dataset, RasterImage, DISC,
};
use crate::losses::{
    boundary_consistency_loss_grad, feature_consistency_loss_grad, pseudo_label_loss_grad, source_loss,
    total_adaptation_loss, BoundaryLossKind, BoundaryScheduleConfig, LossParts, LossWeights, PrototypeSource,
};
use crate::metrics::{evaluate, evaluate_images, MetricsReport};
use crate::network::{ArchConfig, Gradients, Model, OutputGrads};
use crate::optim::{Adam, AdamConfig};

/// Named optimizer with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamConfig::default();
        OptimizerConfig::Adam {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl OptimizerConfig {
    fn build(&self, model: &Model, lr: f64) -> Adam {
        match *self {
            OptimizerConfig::Adam { beta1, beta2, eps } => Adam::new(
                model,
                AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::Config(format!(
                        "adam needs beta1, beta2 in [0, 1) and eps > 0 (got {beta1}, {beta2}, {eps})"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pretraining

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub schedule: BoundaryScheduleConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Evaluate on the validation set every this many epochs (0: final epoch only).
    pub validate_every: usize,
    pub threshold: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            schedule: BoundaryScheduleConfig::scaled(30),
            lr: 1e-3,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            validate_every: 0,
            threshold: 0.5,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        check_threshold(self.threshold)?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    /// One-based.
    pub epoch: usize,
    pub boundary_kind: BoundaryLossKind,
    pub seg_loss: f64,
    pub boundary_loss: f64,
    pub total: f64,
    pub validation: Option<MetricsReport>,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub config: PretrainConfig,
    pub arch: ArchConfig,
    pub samples: usize,
    pub epochs: Vec<PretrainEpoch>,
    pub wall_seconds: f64,
}

/// Trains a fresh model on labeled source samples. See [`pretrain_with`].
pub fn pretrain(
    arch: &ArchConfig,
    samples: &[AnnotatedSample],
    config: &PretrainConfig,
    validation: Option<&Dataset>,
) -> Result<(Model, PretrainRecord)> {
    pretrain_with(arch, samples, config, validation, |_, _| Ok(None))
}

/// Pretraining with a per-epoch observer, called after each epoch with the
/// current model; whatever it returns is stored as that epoch's checkpoint.
pub fn pretrain_with(
    arch: &ArchConfig,
    samples: &[AnnotatedSample],
    config: &PretrainConfig,
    validation: Option<&Dataset>,
    mut observer: impl FnMut(&Model, &PretrainEpoch) -> Result<Option<String>>,
) -> Result<(Model, PretrainRecord)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Precondition("pretraining needs at least one labeled sample".into()));
    }
    let start = Instant::now();
    let mut model = Model::new(arch.clone())?;
    let mut opt = config.optimizer.build(&model, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let total_epochs = config.schedule.total();
    let mut epochs = Vec::with_capacity(total_epochs);

    for epoch in 0..total_epochs {
        let kind = config.schedule.kind_at(epoch)?;
        log::debug!("pretrain epoch {} uses {kind:?} on the boundary head", epoch + 1);
        order.shuffle(&mut rng);
        let (mut seg_sum, mut bnd_sum) = (0.0, 0.0);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut acc = model.zero_grads();
            for &i in batch {
                let sample = source_augment(&samples[i], &config.augment, rng.gen());
                let (out, tape) = model.forward_train(&sample.image)?;
                let loss = source_loss(
                    &out.seg_probs.to_f64(),
                    &out.boundary_probs.to_f64(),
                    &sample.mask.to_f64(),
                    &sample.boundary.to_f64(),
                    epoch,
                    &config.schedule,
                )?;
                if !loss.total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: epoch + 1,
                        batch: batch_idx,
                        detail: format!("segmentation {} boundary {}", loss.seg, loss.boundary),
                    });
                }
                seg_sum += loss.seg;
                bnd_sum += loss.boundary;
                let grads = OutputGrads {
                    seg_probs: Some(scaled_f32(&loss.grad_seg, scale)),
                    boundary_probs: Some(scaled_f32(&loss.grad_boundary, scale)),
                    features: None,
                };
                model.backward(&tape, &grads, &mut acc);
            }
            check_grads(&acc, epoch + 1, batch_idx)?;
            opt.step(&mut model, &acc);
        }
        let n = samples.len() as f64;
        let last = epoch + 1 == total_epochs;
        let due = config.validate_every > 0 && (epoch + 1) % config.validate_every == 0;
        let validation_report = match validation {
            Some(v) if last || due => Some(evaluate(&model, v, config.threshold as f32)?),
            _ => None,
        };
        let mut entry = PretrainEpoch {
            epoch: epoch + 1,
            boundary_kind: kind,
            seg_loss: seg_sum / n,
            boundary_loss: bnd_sum / n,
            total: (seg_sum + bnd_sum) / n,
            validation: validation_report,
            checkpoint: None,
        };
        log::info!(
            "pretrain epoch {}/{}: seg {:.4} boundary {:.4} ({:?})",
            entry.epoch,
            total_epochs,
            entry.seg_loss,
            entry.boundary_loss,
            kind
        );
        entry.checkpoint = observer(&model, &entry)?;
        epochs.push(entry);
    }
    let record = PretrainRecord {
        config: config.clone(),
        arch: arch.clone(),
        samples: samples.len(),
        epochs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

fn scaled_f32(g: &Grid<f64>, k: f64) -> Grid<f32> {
    g.map(|v| (v * k) as f32)
}

fn add_scaled(dst: &mut Grid<f64>, src: &Grid<f64>, k: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += k * s;
    }
}

fn check_grads(acc: &Gradients, epoch: usize, batch: usize) -> Result<()> {
    if acc.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch,
            batch,
            detail: "non-finite parameter gradient".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Pseudo labels

/// Frozen source-model prediction for one target image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub hard: ClassMask,
    pub soft: Grid<f32>,
    /// Identifier of the generating checkpoint.
    pub source: String,
}

impl PseudoLabel {
    /// Tight box around the disc channel; `None` for an empty prediction, in
    /// which case background replacement is skipped for this image.
    pub fn disc_box(&self) -> Option<BoundingBox> {
        tight_bbox(self.hard.channel(DISC), self.hard.height(), self.hard.width())
    }

    pub fn is_empty(&self) -> bool {
        (0..self.hard.classes()).all(|c| self.hard.is_channel_empty(c))
    }
}

/// One evaluation-mode forward pass of the source model per image;
/// `hard = soft > threshold`.
pub fn generate_pseudo_labels(
    source: &Model,
    source_id: &str,
    images: &[RasterImage],
    threshold: f64,
) -> Result<Vec<PseudoLabel>> {
    check_threshold(threshold)?;
    images
        .iter()
        .map(|img| {
            let out = source.predict(img)?;
            Ok(PseudoLabel {
                hard: ClassMask::from_probs(&out.seg_probs, threshold as f32),
                soft: out.seg_probs,
                source: source_id.to_string(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Test-time adaptation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    /// Passes over the test set.
    pub epochs: usize,
    /// Foreground threshold for prototype masks and evaluation.
    pub seg_threshold: f64,
    pub optimizer: OptimizerConfig,
    /// Use only the positive cross-entropy term for the pseudo-label loss.
    pub tseg_positive_only: bool,
    /// Supervise with the soft source probabilities instead of hard labels.
    pub soft_pseudo_labels: bool,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 1e-3,
            batch_size: 8,
            epochs: 10,
            seg_threshold: 0.5,
            optimizer: OptimizerConfig::default(),
            tseg_positive_only: false,
            soft_pseudo_labels: false,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        check_lr(self.lr)?;
        check_threshold(self.seg_threshold)?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Epoch means of the adaptation loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub tseg: f64,
    pub bc: f64,
    /// `None` when `beta = 0`: the swapped branch is not run at all.
    pub fc: Option<f64>,
    /// `alpha · bc`.
    pub weighted_bc: f64,
    /// `beta · fc`.
    pub weighted_fc: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptEpoch {
    /// One-based.
    pub epoch: usize,
    pub losses: EpochLosses,
    /// Images paired with a background-swapped copy.
    pub swapped: usize,
    /// Images whose swap was skipped because a pseudo label was empty.
    pub swap_skipped: usize,
    pub metrics: Option<MetricsReport>,
    pub checkpoint: Option<String>,
}

/// Log of one adaptation run. Everything except `wall_seconds` is
/// reproducible under a fixed seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: AdaptationConfig,
    pub source: String,
    pub images: usize,
    /// Batch size actually used after clamping to the test-set size.
    pub effective_batch_size: usize,
    /// Metrics of the unadapted source model.
    pub baseline: Option<MetricsReport>,
    pub epochs: Vec<AdaptEpoch>,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Metrics after the last epoch (the baseline when no epoch ran).
    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        match self.epochs.last() {
            Some(e) => e.metrics.as_ref(),
            None => self.baseline.as_ref(),
        }
    }
}

/// The background-swapped partner of image `i` hosted by image `j`.
fn swap_partner(images: &[RasterImage], pseudo: &[PseudoLabel], i: usize, j: usize) -> Result<Option<RasterImage>> {
    match (pseudo[i].disc_box(), pseudo[j].disc_box()) {
        (Some(tbox), Some(hbox)) => replace_background(&images[i], &tbox, &images[j], &hbox).map(Some),
        _ => Ok(None),
    }
}

/// For each batch member, a uniformly drawn other member to host its swapped
/// copy; a batch of one hosts itself.
fn pick_hosts(batch: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let b = batch.len();
    (0..b)
        .map(|p| {
            if b == 1 {
                batch[p]
            } else {
                let q = rng.gen_range(0..b - 1);
                batch[if q >= p { q + 1 } else { q }]
            }
        })
        .collect()
}

/// Adapts a copy of `source` to the unlabeled `images`. See [`adapt_with`].
pub fn adapt(
    source: &Model,
    images: &[RasterImage],
    pseudo: &[PseudoLabel],
    config: &AdaptationConfig,
    labels: Option<&[ClassMask]>,
) -> Result<(Model, RunRecord)> {
    adapt_with(source, images, pseudo, config, labels, |_, _| Ok(None))
}

/// Continual test-time adaptation over the whole test set. `source` is never
/// modified. When `labels` are given, metrics are logged before adaptation
/// and after every epoch (they never influence training).
pub fn adapt_with(
    source: &Model,
    images: &[RasterImage],
    pseudo: &[PseudoLabel],
    config: &AdaptationConfig,
    labels: Option<&[ClassMask]>,
    mut observer: impl FnMut(&Model, &AdaptEpoch) -> Result<Option<String>>,
) -> Result<(Model, RunRecord)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::Precondition("adaptation needs at least one test image".into()));
    }
    if pseudo.len() != images.len() {
        return Err(Error::Precondition(format!(
            "{} pseudo labels for {} images",
            pseudo.len(),
            images.len()
        )));
    }
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(Error::Precondition(format!("{} labels for {} images", l.len(), images.len())));
        }
    }
    let batch_size = if config.batch_size > images.len() {
        log::warn!(
            "batch size {} exceeds the {} test images; using {}",
            config.batch_size,
            images.len(),
            images.len()
        );
        images.len()
    } else {
        config.batch_size
    };
    let start = Instant::now();
    let threshold = config.seg_threshold as f32;
    let eval = |m: &Model| -> Result<Option<MetricsReport>> {
        labels.map(|l| evaluate_images(m, images, l, threshold)).transpose()
    };
    let baseline = eval(source)?;
    let targets: Vec<Grid<f64>> = pseudo
        .iter()
        .map(|p| {
            if config.soft_pseudo_labels {
                p.soft.to_f64()
            } else {
                p.hard.to_f64()
            }
        })
        .collect();
    let LossWeights { alpha, beta } = config.weights;

    let mut model = source.clone();
    let mut opt = config.optimizer.build(&model, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let (mut swapped, mut skipped) = (0, 0);
        for (batch_idx, batch) in order.chunks(batch_size).enumerate() {
            let b = batch.len();
            let scale = 1.0 / b as f64;
            let hosts = pick_hosts(batch, &mut rng);
            let mut acc = model.zero_grads();
            for (&i, &j) in batch.iter().zip(&hosts) {
                let (out, tape) = model.forward_train(&images[i])?;
                let seg = out.seg_probs.to_f64();
                let bnd = out.boundary_probs.to_f64();
                let (tseg, mut seg_grad) =
                    pseudo_label_loss_grad(&seg, &targets[i], config.tseg_positive_only)?;
                let (bc, bc_grad_b, bc_grad_s) = boundary_consistency_loss_grad(&bnd, &seg)?;
                let mut fc = 0.0;
                let mut feat_grad = None;
                let mut swapped_pass = None;
                if beta > 0.0 {
                    match swap_partner(images, pseudo, i, j)? {
                        Some(partner) => {
                            swapped += 1;
                            let (out_s, tape_s) = model.forward_train(&partner)?;
                            let feats = out.features.to_f64();
                            let seg_s = out_s.seg_probs.to_f64();
                            let feats_s = out_s.features.to_f64();
                            let r = feature_consistency_loss_grad(
                                PrototypeSource {
                                    seg_probs: &seg,
                                    features: &feats,
                                },
                                PrototypeSource {
                                    seg_probs: &seg_s,
                                    features: &feats_s,
                                },
                                config.seg_threshold,
                            )?;
                            fc = r.value;
                            if r.cup.is_some() || r.disc.is_some() {
                                feat_grad = Some(scaled_f32(&r.grad_orig, beta * scale));
                                swapped_pass = Some((tape_s, scaled_f32(&r.grad_swapped, beta * scale)));
                            }
                        }
                        None => skipped += 1,
                    }
                }
                if !(tseg.is_finite() && bc.is_finite() && fc.is_finite()) {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: batch_idx,
                        detail: format!("image {i}: L_Tseg {tseg}, L_bc {bc}, L_fc {fc}"),
                    });
                }
                sums.tseg += tseg;
                sums.bc += bc;
                sums.fc += fc;

                let boundary_grad = (alpha > 0.0).then(|| {
                    add_scaled(&mut seg_grad, &bc_grad_s, alpha);
                    scaled_f32(&bc_grad_b, alpha * scale)
                });
                let grads = OutputGrads {
                    seg_probs: Some(scaled_f32(&seg_grad, scale)),
                    boundary_probs: boundary_grad,
                    features: feat_grad,
                };
                model.backward(&tape, &grads, &mut acc);
                if let Some((tape_s, g)) = swapped_pass {
                    let grads = OutputGrads {
                        features: Some(g),
                        ..OutputGrads::default()
                    };
                    model.backward(&tape_s, &grads, &mut acc);
                }
            }
            check_grads(&acc, epoch, batch_idx)?;
            opt.step(&mut model, &acc);
        }
        let n = images.len() as f64;
        let means = LossParts {
            tseg: sums.tseg / n,
            bc: sums.bc / n,
            fc: sums.fc / n,
        };
        let losses = EpochLosses {
            tseg: means.tseg,
            bc: means.bc,
            fc: (beta > 0.0).then_some(means.fc),
            weighted_bc: alpha * means.bc,
            weighted_fc: beta * means.fc,
            total: total_adaptation_loss(&means, &config.weights)?,
        };
        let mut entry = AdaptEpoch {
            epoch,
            losses,
            swapped,
            swap_skipped: skipped,
            metrics: eval(&model)?,
            checkpoint: None,
        };
        log::info!(
            "adapt epoch {epoch}/{}: L_Tseg {:.4} L_bc {:.5} L_fc {} total {:.4}{}",
            config.epochs,
            losses.tseg,
            losses.bc,
            losses.fc.map_or("-".to_string(), |v| format!("{v:.4}")),
            losses.total,
            entry
                .metrics
                .as_ref()
                .map_or(String::new(), |m| format!(", mean Dice {:.2}", m.avg_dice))
        );
        entry.checkpoint = observer(&model, &entry)?;
        epochs.push(entry);
    }
    let record = RunRecord {
        config: config.clone(),
        source: pseudo.first().map(|p| p.source.clone()).unwrap_or_default(),
        images: images.len(),
        effective_batch_size: batch_size,
        baseline,
        epochs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

// ---------------------------------------------------------------------------
// Ablations

/// The four loss combinations of the loss ablation, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossCombination {
    SegOnly,
    SegBoundary,
    SegFeature,
    All,
}

impl LossCombination {
    pub const ALL: [LossCombination; 4] = [
        LossCombination::SegOnly,
        LossCombination::SegBoundary,
        LossCombination::SegFeature,
        LossCombination::All,
    ];

    /// Which of (`L_Tseg`, `L_bc`, `L_fc`) are active.
    pub fn active(self) -> [bool; 3] {
        match self {
            LossCombination::SegOnly => [true, false, false],
            LossCombination::SegBoundary => [true, true, false],
            LossCombination::SegFeature => [true, false, true],
            LossCombination::All => [true, true, true],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LossCombination::SegOnly => "L_Tseg",
            LossCombination::SegBoundary => "L_Tseg + L_bc",
            LossCombination::SegFeature => "L_Tseg + L_fc",
            LossCombination::All => "L_Tseg + L_bc + L_fc",
        }
    }

    /// `base` with the inactive terms' weights zeroed.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        let [_, bc, fc] = self.active();
        LossWeights {
            alpha: if bc { base.alpha } else { 0.0 },
            beta: if fc { base.beta } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Alpha,
    Beta,
}

pub const ALPHA_GRID: [f64; 8] = [0.1, 0.5, 1.0, 10.0, 50.0, 100.0, 150.0, 200.0];
pub const BETA_GRID: [f64; 8] = [0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

impl Sweep {
    pub fn grid(self) -> &'static [f64] {
        match self {
            Sweep::Alpha => &ALPHA_GRID,
            Sweep::Beta => &BETA_GRID,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sweep::Alpha => "α",
            Sweep::Beta => "β",
        }
    }

    fn apply(self, base: LossWeights, value: f64) -> LossWeights {
        match self {
            Sweep::Alpha => LossWeights { alpha: value, ..base },
            Sweep::Beta => LossWeights { beta: value, ..base },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub combination: LossCombination,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep: Sweep,
    /// One record per grid value, in grid order.
    pub points: Vec<(f64, RunRecord)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub baseline: MetricsReport,
    pub rows: Vec<AblationRow>,
    pub sweeps: Vec<SweepResult>,
}

/// Runs the four loss combinations, then each requested weight sweep (the
/// other weight held at its configured value). Needs labels for scoring.
/// Runs are independent and seeded, so they are spread over worker threads
/// without changing any result.
pub fn ablation_suite(
    source: &Model,
    images: &[RasterImage],
    labels: &[ClassMask],
    pseudo: &[PseudoLabel],
    config: &AdaptationConfig,
    sweeps: &[Sweep],
) -> Result<AblationResult> {
    config.validate()?;
    let mut jobs: Vec<(String, LossWeights)> = LossCombination::ALL
        .iter()
        .map(|c| (c.label().to_string(), c.weights(config.weights)))
        .collect();
    for &sweep in sweeps {
        for &value in sweep.grid() {
            jobs.push((format!("{} = {value}", sweep.symbol()), sweep.apply(config.weights, value)));
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunRecord>>>> = jobs.iter().map(|_| Default::default()).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((name, weights)) = jobs.get(i) else { break };
                log::info!("ablation run: {name}");
                let cfg = AdaptationConfig {
                    weights: *weights,
                    ..config.clone()
                };
                let r = adapt(source, images, pseudo, &cfg, Some(labels)).map(|(_, r)| r);
                *slots[i].lock().expect("no worker panics while holding a slot") = Some(r);
            });
        }
    });
    let mut records = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let rows: Vec<AblationRow> = LossCombination::ALL
        .iter()
        .map(|&combination| AblationRow {
            combination,
            record: records.next().expect("one record per job"),
        })
        .collect();
    let results = sweeps
        .iter()
        .map(|&sweep| SweepResult {
            sweep,
            points: sweep
                .grid()
                .iter()
                .map(|&v| (v, records.next().expect("one record per job")))
                .collect(),
        })
        .collect();
    let baseline = rows[0]
        .record
        .baseline
        .clone()
        .expect("labels were supplied");
    Ok(AblationResult {
        baseline,
        rows,
        sweeps: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{synth_dataset, DomainParams};

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            encoder_channels: vec![4, 8],
            decoder_channels: vec![8, 8],
            bottleneck_channels: 8,
            ..ArchConfig::default()
        }
    }

    fn target(n: usize) -> (Vec<RasterImage>, Vec<ClassMask>) {
        synth_dataset(&DomainParams::shifted_target(), n, 5)
            .unwrap()
            .into_iter()
            .map(|s| (s.image, s.mask))
            .unzip()
    }

    #[test]
    fn hosts_exclude_self_and_cover_the_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = [7, 3, 9, 4];
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let hosts = pick_hosts(&batch, &mut rng);
            for (p, &h) in hosts.iter().enumerate() {
                assert_ne!(h, batch[p]);
                assert!(batch.contains(&h));
                seen.insert((batch[p], h));
            }
        }
        assert_eq!(seen.len(), 12);
        assert_eq!(pick_hosts(&[5], &mut rng), vec![5]);
    }

    #[test]
    fn loss_combinations_zero_inactive_weights() {
        let labels: Vec<_> = LossCombination::ALL.iter().map(|c| c.label()).collect();
        assert_eq!(labels.len(), 4);
        let w = LossWeights::default();
        assert_eq!(LossCombination::SegOnly.weights(w), LossWeights { alpha: 0.0, beta: 0.0 });
        assert_eq!(LossCombination::SegFeature.weights(w), LossWeights { alpha: 0.0, beta: 1.0 });
        assert_eq!(LossCombination::All.weights(w), w);
    }

    #[test]
    fn zero_epochs_returns_the_source() {
        let model = Model::new(tiny_arch()).unwrap();
        let (images, labels) = target(3);
        let pseudo = generate_pseudo_labels(&model, "src", &images, 0.5).unwrap();
        let cfg = AdaptationConfig {
            epochs: 0,
            ..AdaptationConfig::default()
        };
        let (adapted, rec) = adapt(&model, &images, &pseudo, &cfg, Some(&labels)).unwrap();
        assert_eq!(adapted, model);
        assert!(rec.epochs.is_empty());
        assert_eq!(rec.final_metrics(), rec.baseline.as_ref());
        assert_eq!(rec.effective_batch_size, 3);
    }

    #[test]
    fn zero_weights_and_rate_change_nothing() {
        let model = Model::new(tiny_arch()).unwrap();
        let (images, _) = target(4);
        let pseudo = generate_pseudo_labels(&model, "src", &images, 0.5).unwrap();
        let cfg = AdaptationConfig {
            weights: LossWeights { alpha: 0.0, beta: 0.0 },
            lr: 0.0,
            epochs: 2,
            batch_size: 2,
            ..AdaptationConfig::default()
        };
        let (adapted, rec) = adapt(&model, &images, &pseudo, &cfg, None).unwrap();
        assert_eq!(adapted, model);
        assert_eq!(rec.epochs.len(), 2);
        assert_eq!(rec.epochs[0].losses.weighted_bc, 0.0);
        assert_eq!(rec.epochs[0].losses.fc, None);
    }

    #[test]
    fn rejects_bad_configs() {
        let model = Model::new(tiny_arch()).unwrap();
        let (images, _) = target(2);
        let pseudo = generate_pseudo_labels(&model, "src", &images, 0.5).unwrap();
        for cfg in [
            AdaptationConfig {
                weights: LossWeights { alpha: -1.0, beta: 1.0 },
                ..AdaptationConfig::default()
            },
            AdaptationConfig {
                batch_size: 0,
                ..AdaptationConfig::default()
            },
            AdaptationConfig {
                seg_threshold: 1.0,
                ..AdaptationConfig::default()
            },
        ] {
            assert!(matches!(adapt(&model, &images, &pseudo, &cfg, None), Err(Error::Config(_))));
        }
        assert!(adapt(&model, &images, &pseudo[..1], &AdaptationConfig::default(), None).is_err());
    }

    #[test]
    fn pretrain_rejects_empty_dataset() {
        let err = pretrain(&tiny_arch(), &[], &PretrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
