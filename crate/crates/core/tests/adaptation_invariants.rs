mod oracles;

use proptest::prelude::*;
use tta_seg::adaptation::{
    ablation_suite, adapt, generate_pseudo_labels, pretrain, AdaptationConfig, LossCombination, PretrainConfig,
    RunRecord, Sweep,
};
use tta_seg::imaging::{replace_background, synth_dataset, tight_bbox, AugmentConfig, ClassMask, DomainParams, RasterImage};
use tta_seg::losses::{BoundaryLossKind, BoundaryScheduleConfig, LossWeights};
use tta_seg::network::{ArchConfig, CheckpointMeta, Model};
use tta_seg::Grid;

fn tiny_arch(seed: u64) -> ArchConfig {
    ArchConfig {
        encoder_channels: vec![4, 8],
        bottleneck_channels: 8,
        decoder_channels: vec![8, 8],
        init_seed: seed,
        ..ArchConfig::default()
    }
}

fn small_params(name: fn() -> DomainParams) -> DomainParams {
    DomainParams {
        size: 32,
        disc_radius: (6.0, 9.0),
        center_jitter: 3.0,
        ..name()
    }
}

fn source_model() -> Model {
    let samples = synth_dataset(&small_params(DomainParams::source), 6, 0).unwrap();
    let cfg = PretrainConfig {
        schedule: BoundaryScheduleConfig::scaled(6),
        batch_size: 3,
        lr: 3e-3,
        ..PretrainConfig::default()
    };
    pretrain(&tiny_arch(0), &samples, &cfg, None).unwrap().0
}

fn target() -> (Vec<RasterImage>, Vec<ClassMask>) {
    synth_dataset(&small_params(DomainParams::shifted_target), 5, 1)
        .unwrap()
        .into_iter()
        .map(|s| (s.image, s.mask))
        .unzip()
}

fn config(epochs: usize) -> AdaptationConfig {
    AdaptationConfig {
        epochs,
        batch_size: 3,
        // A low threshold keeps the barely trained model's pseudo labels
        // non-empty so the swapped branch actually runs.
        seg_threshold: 0.3,
        ..AdaptationConfig::default()
    }
}

fn strip_time(mut r: RunRecord) -> RunRecord {
    r.wall_seconds = 0.0;
    r
}

#[test]
fn source_model_and_pseudo_labels_are_frozen() {
    let source = source_model();
    let (images, masks) = target();
    let meta = CheckpointMeta::default();
    let before = source.to_bytes(&meta);
    let pseudo = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    let pseudo_before = serde_json::to_vec(&pseudo).unwrap();

    let (adapted, record) = adapt(&source, &images, &pseudo, &config(2), Some(&masks)).unwrap();
    assert_eq!(record.epochs.len(), 2);
    assert_ne!(adapted.to_bytes(&meta), before, "adaptation changed nothing");
    assert_eq!(source.to_bytes(&meta), before);
    assert_eq!(serde_json::to_vec(&pseudo).unwrap(), pseudo_before);
    let regenerated = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    assert_eq!(serde_json::to_vec(&regenerated).unwrap(), pseudo_before);
}

#[test]
fn zero_epochs_returns_the_source() {
    let source = source_model();
    let (images, masks) = target();
    let pseudo = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    let (adapted, record) = adapt(&source, &images, &pseudo, &config(0), Some(&masks)).unwrap();
    let meta = CheckpointMeta::default();
    assert_eq!(adapted.to_bytes(&meta), source.to_bytes(&meta));
    assert_eq!(record.final_metrics(), record.baseline.as_ref());
}

#[test]
fn zero_weights_remove_the_consistency_terms() {
    let source = source_model();
    let (images, _) = target();
    let pseudo = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    let cfg = AdaptationConfig {
        weights: LossWeights { alpha: 0.0, beta: 0.0 },
        ..config(1)
    };
    let (_, record) = adapt(&source, &images, &pseudo, &cfg, None).unwrap();
    let l = record.epochs[0].losses;
    assert_eq!(l.weighted_bc, 0.0);
    assert_eq!(l.weighted_fc, 0.0);
    assert_eq!(l.fc, None);
    assert_eq!(l.total, l.tseg);
    assert_eq!(record.epochs[0].swapped, 0);
    assert!(record.baseline.is_none() && record.epochs[0].metrics.is_none());
}

#[test]
fn adaptation_is_deterministic_under_a_seed() {
    let source = source_model();
    let (images, masks) = target();
    let pseudo = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    let (a, ra) = adapt(&source, &images, &pseudo, &config(2), Some(&masks)).unwrap();
    let (b, rb) = adapt(&source, &images, &pseudo, &config(2), Some(&masks)).unwrap();
    let meta = CheckpointMeta::default();
    assert_eq!(a.to_bytes(&meta), b.to_bytes(&meta));
    assert_eq!(strip_time(ra.clone()), strip_time(rb));
    assert!(ra.epochs.iter().all(|e| e.losses.fc.is_some()));
    assert!(ra.epochs.iter().any(|e| e.swapped > 0));
}

#[test]
fn ablation_has_four_rows_and_full_grids() {
    let source = source_model();
    let (images, masks) = target();
    let pseudo = generate_pseudo_labels(&source, "source", &images, 0.3).unwrap();
    let result = ablation_suite(&source, &images, &masks, &pseudo, &config(1), &[Sweep::Beta]).unwrap();
    let order: Vec<_> = result.rows.iter().map(|r| r.combination).collect();
    assert_eq!(order, LossCombination::ALL.to_vec());
    assert_eq!(result.sweeps.len(), 1);
    let grid: Vec<f64> = result.sweeps[0].points.iter().map(|p| p.0).collect();
    assert_eq!(grid, Sweep::Beta.grid());
    for (value, record) in &result.sweeps[0].points {
        assert_eq!(record.config.weights.beta, *value);
        assert_eq!(record.config.weights.alpha, 100.0);
    }
    let seg_only = &result.rows[0].record;
    assert_eq!(seg_only.config.weights, LossWeights { alpha: 0.0, beta: 0.0 });
    // The row runs must match standalone runs of the same configuration.
    let (_, alone) = adapt(&source, &images, &pseudo, &seg_only.config, Some(&masks)).unwrap();
    assert_eq!(strip_time(alone), strip_time(seg_only.clone()));
}

#[test]
fn pretraining_log_follows_the_boundary_schedule() {
    let samples = synth_dataset(&small_params(DomainParams::source), 2, 3).unwrap();
    let cfg = PretrainConfig {
        schedule: BoundaryScheduleConfig::scaled(30),
        batch_size: 2,
        augment: AugmentConfig::identity(),
        ..PretrainConfig::default()
    };
    let arch = ArchConfig {
        encoder_channels: vec![2],
        bottleneck_channels: 2,
        decoder_channels: vec![2],
        ..ArchConfig::default()
    };
    let (_, record) = pretrain(&arch, &samples, &cfg, None).unwrap();
    assert_eq!(record.epochs.len(), 30);
    // Log entries are one-based; index 24 is zero-based epoch 24.
    assert_eq!(record.epochs[24].boundary_kind, BoundaryLossKind::Bce);
    assert_eq!(record.epochs[25].boundary_kind, BoundaryLossKind::Dice);
    assert!(record.epochs[..25].iter().all(|e| e.boundary_kind == BoundaryLossKind::Bce));
    assert!(record.epochs[25..].iter().all(|e| e.boundary_kind == BoundaryLossKind::Dice));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bbox_matches_oracle(
        h in 1usize..20,
        w in 1usize..20,
        bits in prop::collection::vec(prop::bool::weighted(0.1).prop_map(u8::from), 400),
    ) {
        let plane = &bits[..h * w];
        let got = tight_bbox(plane, h, w).map(|b| (b.top, b.left, b.bottom, b.right));
        prop_assert_eq!(got, oracles::bbox(plane, h, w));
    }

    #[test]
    fn swap_only_touches_the_host_box(
        seed in 0u64..1000,
        top in 0usize..10,
        left in 0usize..10,
        bh in 1usize..10,
        bw in 1usize..10,
    ) {
        let img = |s: u64| RasterImage::new(Grid::from_fn(3, 20, 20, |c, y, x| {
            ((c as u64 * 31 + y as u64 * 7 + x as u64 * 13 + s) % 17) as f32 / 16.0
        })).unwrap();
        let (target, host) = (img(seed), img(seed + 1));
        let tbox = tight_bbox(&oracles::rectangle(20, 20, 5, 5, 12, 14), 20, 20).unwrap();
        let hbox = tight_bbox(&oracles::rectangle(20, 20, top, left, top + bh, left + bw), 20, 20).unwrap();
        let out = replace_background(&target, &tbox, &host, &hbox).unwrap();
        for c in 0..3 {
            for y in 0..20 {
                for x in 0..20 {
                    if !hbox.contains(y, x) {
                        prop_assert_eq!(out.grid().get(c, y, x), host.grid().get(c, y, x));
                    }
                }
            }
        }
    }
}
