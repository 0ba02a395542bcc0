//! Multi-task encoder-decoder: one shared trunk, a region head, a boundary
//! head and a full-resolution pixel-feature tap.
//!
//! ```text
//!  image ─ enc0 ─ pool ─ enc1 ─ pool ─ enc2 ─ pool ─ enc3 ─ pool ─ bottleneck
//!            │            │             │             │               │
//!            └──────────┐ └──────────┐  └─────────┐   └───────┐    up ×2
//!                   dec0 ◄─ up ── dec1 ◄─ up ── dec2 ◄─ up ── dec3 ◄──┘
//!                     │
//!                features ─┬─ 1×1 ─ sigmoid ─ region probabilities
//!                          └─ 1×1 ─ sigmoid ─ boundary probabilities
//! ```
//!
//! Both heads are per-class sigmoids: cup pixels are also disc pixels, so the
//! classes are not mutually exclusive.

mod checkpoint;
mod layers;

pub use checkpoint::{CheckpointMeta, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imaging::RasterImage;
use layers::{Conv, ConvCache};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub in_channels: usize,
    /// Channels of each encoder level, shallowest first. Each level after
    /// the first, and the bottleneck, halves the resolution.
    pub encoder_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    /// Output channels of each decoder stage, deepest first; one per encoder level.
    pub decoder_channels: Vec<usize>,
    pub classes: usize,
    /// Decoder stage whose activation is exposed as the feature map, counted
    /// back from the last (full-resolution) stage. Coarser taps are
    /// upsampled to full resolution.
    pub feature_tap: usize,
    pub init_seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: vec![16, 32, 64, 128],
            bottleneck_channels: 128,
            decoder_channels: vec![64, 32, 32, 32],
            classes: 2,
            feature_tap: 0,
            init_seed: 0,
        }
    }
}

impl ArchConfig {
    /// Total downsampling factor at the bottleneck.
    pub fn stride(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        let n = self.decoder_channels.len();
        self.decoder_channels[n - 1 - self.feature_tap]
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.encoder_channels.len();
        if levels == 0 || self.decoder_channels.len() != levels {
            return Err(Error::Config(format!(
                "need one decoder stage per encoder level ({} vs {})",
                levels,
                self.decoder_channels.len()
            )));
        }
        if self.feature_tap >= levels {
            return Err(Error::Config(format!(
                "feature_tap {} but only {levels} decoder stages",
                self.feature_tap
            )));
        }
        let all = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain([&self.bottleneck_channels, &self.in_channels, &self.classes]);
        if all.into_iter().any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Rejects input sizes the encoder cannot pool down to the bottleneck.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let s = self.stride();
        if height % s != 0 || width % s != 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} is not divisible by the encoder stride {s}"
            )));
        }
        Ok(())
    }
}

/// One flat tensor in the parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Gradients, one buffer per parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f32>>);

impl Gradients {
    pub fn scale(&mut self, k: f32) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// The three aligned outputs of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    /// `C × H × W`, per-class sigmoid.
    pub seg_probs: Grid<f32>,
    /// `C × H × W`, per-class sigmoid.
    pub boundary_probs: Grid<f32>,
    /// `C2 × H × W`.
    pub features: Grid<f32>,
}

/// Upstream gradients with respect to the model outputs (post-sigmoid for
/// the two probability maps). Absent entries contribute nothing.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub seg_probs: Option<Grid<f32>>,
    pub boundary_probs: Option<Grid<f32>>,
    pub features: Option<Grid<f32>>,
}

struct Stage {
    a: Conv,
    b: Option<Conv>,
}

/// Everything a backward pass needs from its forward pass.
pub struct Tape {
    input_hw: (usize, usize),
    enc: Vec<EncTape>,
    bottleneck: (ConvCache, Grid<f32>, Vec<u32>, (usize, usize)),
    dec: Vec<(ConvCache, Grid<f32>, usize)>,
    final_act: Grid<f32>,
    seg_cache: ConvCache,
    bnd_cache: ConvCache,
    seg_probs: Grid<f32>,
    bnd_probs: Grid<f32>,
}

struct EncTape {
    pool: Option<(Vec<u32>, (usize, usize))>,
    a: (ConvCache, Grid<f32>),
    b: Option<(ConvCache, Grid<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: ArchConfig,
    params: Vec<Param>,
}

struct Layout {
    enc: Vec<Stage>,
    bottleneck: Conv,
    dec: Vec<Conv>,
    seg_head: Conv,
    bnd_head: Conv,
}

impl ArchConfig {
    fn layout(&self) -> (Layout, Vec<(String, Vec<usize>, usize)>) {
        let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, kernel: usize| -> Conv {
            let param = specs.len();
            specs.push((format!("{name}.weight"), vec![cout, cin, kernel, kernel], cin * kernel * kernel));
            specs.push((format!("{name}.bias"), vec![cout], 0));
            Conv { cin, cout, kernel, param }
        };
        let mut enc = Vec::new();
        let mut cin = self.in_channels;
        for (l, &c) in self.encoder_channels.iter().enumerate() {
            let a = conv(format!("enc{l}.a"), cin, c, 3);
            let b = Some(conv(format!("enc{l}.b"), c, c, 3));
            enc.push(Stage { a, b });
            cin = c;
        }
        let bottleneck = conv("bottleneck".into(), cin, self.bottleneck_channels, 3);
        let mut below = self.bottleneck_channels;
        let levels = self.encoder_channels.len();
        let mut dec = Vec::new();
        for (k, &c) in self.decoder_channels.iter().enumerate() {
            let level = levels - 1 - k;
            dec.push(conv(format!("dec{level}"), below + self.encoder_channels[level], c, 3));
            below = c;
        }
        let seg_head = conv("head.seg".into(), below, self.classes, 1);
        let bnd_head = conv("head.boundary".into(), below, self.classes, 1);
        (
            Layout {
                enc,
                bottleneck,
                dec,
                seg_head,
                bnd_head,
            },
            specs,
        )
    }
}

impl Model {
    /// Fresh model with He-normal weights drawn from `arch.init_seed`.
    pub fn new(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let (_, specs) = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(arch.init_seed);
        let n_specs = specs.len();
        let params = specs
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let len: usize = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![0.0; len]
                } else {
                    // heads (last four tensors) feed a sigmoid, not a ReLU
                    let gain = if i >= n_specs - 4 { 1.0 } else { 2.0 };
                    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                    (0..len).map(|_| normal.sample(&mut rng) as f32).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub(crate) fn from_parts(arch: ArchConfig, params: Vec<Param>) -> Result<Self> {
        arch.validate()?;
        let (_, specs) = arch.layout();
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture expects {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&params) {
            if name != &p.name || shape != &p.shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match architecture tensor {name} {shape:?}",
                    p.name, p.shape
                )));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    fn wb(&self, conv: &Conv) -> (&[f32], &[f32]) {
        (&self.params[conv.param].data, &self.params[conv.param + 1].data)
    }

    fn check(&self, image: &RasterImage) -> Result<()> {
        if image.channels() != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, image has {}",
                self.arch.in_channels,
                image.channels()
            )));
        }
        self.arch.check_input(image.height(), image.width())
    }

    /// Forward pass retaining what [`backward`](Self::backward) needs.
    pub fn forward_train(&self, image: &RasterImage) -> Result<(ModelOutput, Tape)> {
        self.check(image)?;
        let (layout, _) = self.arch.layout();
        let mut x = image.grid().clone();
        let mut enc_tapes = Vec::with_capacity(layout.enc.len());
        let mut skips: Vec<Grid<f32>> = Vec::with_capacity(layout.enc.len());
        for (l, stage) in layout.enc.iter().enumerate() {
            let pool = if l > 0 {
                let hw = (x.height(), x.width());
                let (p, arg) = layers::maxpool2(&x);
                x = p;
                Some((arg, hw))
            } else {
                None
            };
            let (w, b) = self.wb(&stage.a);
            let (mut y, ca) = stage.a.forward(w, b, &x);
            layers::relu_inplace(&mut y);
            let a_tape = (ca, y.clone());
            x = y;
            let b_tape = if let Some(conv_b) = &stage.b {
                let (w, b) = self.wb(conv_b);
                let (mut y, cb) = conv_b.forward(w, b, &x);
                layers::relu_inplace(&mut y);
                x = y;
                Some((cb, x.clone()))
            } else {
                None
            };
            skips.push(x.clone());
            enc_tapes.push(EncTape {
                pool,
                a: a_tape,
                b: b_tape,
            });
        }
        let pre_pool_hw = (x.height(), x.width());
        let (pooled, arg) = layers::maxpool2(&x);
        let (w, b) = self.wb(&layout.bottleneck);
        let (mut h, cbn) = layout.bottleneck.forward(w, b, &pooled);
        layers::relu_inplace(&mut h);
        let bottleneck_tape = (cbn, h.clone(), arg, pre_pool_hw);

        let levels = layout.enc.len();
        let mut dec_tapes = Vec::with_capacity(levels);
        let mut stage_outputs = Vec::with_capacity(levels);
        for (k, conv) in layout.dec.iter().enumerate() {
            let level = levels - 1 - k;
            let up = layers::upsample(&h, 2);
            let below = up.channels();
            let cat = layers::concat(&up, &skips[level]);
            let (w, b) = self.wb(conv);
            let (mut y, c) = conv.forward(w, b, &cat);
            layers::relu_inplace(&mut y);
            dec_tapes.push((c, y.clone(), below));
            stage_outputs.push(y.clone());
            h = y;
        }

        let (w, b) = self.wb(&layout.seg_head);
        let (mut seg, seg_cache) = layout.seg_head.forward(w, b, &h);
        seg.as_mut_slice().iter_mut().for_each(|z| *z = layers::sigmoid(*z));
        let (w, b) = self.wb(&layout.bnd_head);
        let (mut bnd, bnd_cache) = layout.bnd_head.forward(w, b, &h);
        bnd.as_mut_slice().iter_mut().for_each(|z| *z = layers::sigmoid(*z));

        let tap = &stage_outputs[levels - 1 - self.arch.feature_tap];
        let factor = image.height() / tap.height();
        let features = if factor == 1 {
            tap.clone()
        } else {
            layers::upsample(tap, factor)
        };

        let out = ModelOutput {
            seg_probs: seg.clone(),
            boundary_probs: bnd.clone(),
            features,
        };
        let tape = Tape {
            input_hw: (image.height(), image.width()),
            enc: enc_tapes,
            bottleneck: bottleneck_tape,
            dec: dec_tapes,
            final_act: h,
            seg_cache,
            bnd_cache,
            seg_probs: seg,
            bnd_probs: bnd,
        };
        Ok((out, tape))
    }

    /// Evaluation-mode forward pass. Deterministic; no state is kept.
    pub fn predict(&self, image: &RasterImage) -> Result<ModelOutput> {
        self.forward_train(image).map(|(out, _)| out)
    }

    pub fn forward(&self, batch: &[RasterImage]) -> Result<Vec<ModelOutput>> {
        batch.iter().map(|img| self.predict(img)).collect()
    }

    /// Back-propagates `grads` through the tape, accumulating into `acc`.
    pub fn backward(&self, tape: &Tape, grads: &OutputGrads, acc: &mut Gradients) {
        let (layout, _) = self.arch.layout();
        let levels = layout.enc.len();
        let (fc, fh, fw) = tape.final_act.dims();
        let mut dh = Grid::filled(fc, fh, fw, 0.0f32);
        let mut touched = false;

        for (conv, probs, upstream) in [
            (&layout.seg_head, &tape.seg_probs, &grads.seg_probs),
            (&layout.bnd_head, &tape.bnd_probs, &grads.boundary_probs),
        ] {
            let Some(up) = upstream else { continue };
            let cache = if conv.param == layout.seg_head.param {
                &tape.seg_cache
            } else {
                &tape.bnd_cache
            };
            let dz = Grid::new(
                probs.channels(),
                probs.height(),
                probs.width(),
                probs
                    .as_slice()
                    .iter()
                    .zip(up.as_slice())
                    .map(|(&p, &g)| g * p * (1.0 - p))
                    .collect(),
            )
            .expect("head grad size");
            let (w, _) = self.wb(conv);
            let (dw, db) = split_pair(&mut acc.0, conv.param);
            if let Some(dx) = conv.backward(w, &dz, cache, dw, db, true) {
                add_assign(&mut dh, &dx);
                touched = true;
            }
        }

        // Feature gradient enters at the tapped decoder stage.
        let tap_stage = levels - 1 - self.arch.feature_tap;
        let mut tap_grad = grads.features.as_ref().map(|g| {
            let (_, th, _) = tape.dec[tap_stage].1.dims();
            let factor = tape.input_hw.0 / th;
            if factor == 1 {
                g.clone()
            } else {
                layers::upsample_backward(g, factor)
            }
        });
        if tap_grad.is_none() && !touched {
            return;
        }

        let mut skip_grads: Vec<Option<Grid<f32>>> = (0..levels).map(|_| None).collect();
        let mut d_stage: Option<Grid<f32>> = touched.then_some(dh);
        for k in (0..levels).rev() {
            if k == tap_stage {
                if let Some(g) = tap_grad.take() {
                    d_stage = Some(match d_stage {
                        Some(mut d) => {
                            add_assign(&mut d, &g);
                            d
                        }
                        None => g,
                    });
                }
            }
            let Some(mut dy) = d_stage.take() else { continue };
            let (cache, y, below) = &tape.dec[k];
            layers::relu_backward(y, &mut dy);
            let conv = &layout.dec[k];
            let (w, _) = self.wb(conv);
            let (dw, db) = split_pair(&mut acc.0, conv.param);
            let dcat = conv.backward(w, &dy, cache, dw, db, true).expect("input grad");
            let (dup, dskip) = layers::split(&dcat, *below);
            let level = levels - 1 - k;
            skip_grads[level] = Some(dskip);
            d_stage = Some(layers::upsample_backward(&dup, 2));
        }

        // d_stage now holds the gradient of the bottleneck activation.
        let (cache, y, arg, pre_hw) = &tape.bottleneck;
        let mut dy = d_stage.expect("bottleneck grad");
        layers::relu_backward(y, &mut dy);
        let (w, _) = self.wb(&layout.bottleneck);
        let (dw, db) = split_pair(&mut acc.0, layout.bottleneck.param);
        let dpooled = layout
            .bottleneck
            .backward(w, &dy, cache, dw, db, true)
            .expect("input grad");
        let mut dx = Some(layers::maxpool2_backward(&dpooled, arg, pre_hw.0, pre_hw.1));

        for l in (0..levels).rev() {
            let mut d = dx.take().expect("encoder grad");
            if let Some(s) = skip_grads[l].take() {
                add_assign(&mut d, &s);
            }
            let stage = &layout.enc[l];
            let t = &tape.enc[l];
            if let (Some(conv_b), Some((cb, yb))) = (&stage.b, &t.b) {
                layers::relu_backward(yb, &mut d);
                let (w, _) = self.wb(conv_b);
                let (dw, db) = split_pair(&mut acc.0, conv_b.param);
                d = conv_b.backward(w, &d, cb, dw, db, true).expect("input grad");
            }
            let (ca, ya) = &t.a;
            layers::relu_backward(ya, &mut d);
            let (w, _) = self.wb(&stage.a);
            let (dw, db) = split_pair(&mut acc.0, stage.a.param);
            let need_input = l > 0;
            let dinput = stage.a.backward(w, &d, ca, dw, db, need_input);
            if let (Some(dinput), Some((arg, (ph, pw)))) = (dinput, &t.pool) {
                dx = Some(layers::maxpool2_backward(&dinput, arg, *ph, *pw));
            }
        }
    }

    /// Serialises architecture, parameters and `meta` into a checkpoint.
    pub fn to_bytes(&self, meta: &CheckpointMeta) -> Vec<u8> {
        checkpoint::encode(self, meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, CheckpointMeta)> {
        checkpoint::decode(bytes)
    }

    pub fn save(&self, path: &std::path::Path, meta: &CheckpointMeta) -> Result<()> {
        let bytes = self.to_bytes(meta);
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, CheckpointMeta)> {
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_bytes(&bytes).map_err(|e| Error::load(path, e.to_string()))
    }
}

fn split_pair(acc: &mut [Vec<f32>], weight: usize) -> (&mut [f32], &mut [f32]) {
    let (w, rest) = acc[weight..].split_at_mut(1);
    (&mut w[0], &mut rest[0])
}

fn add_assign(a: &mut Grid<f32>, b: &Grid<f32>) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_arch() -> ArchConfig {
        ArchConfig {
            encoder_channels: vec![4, 8],
            bottleneck_channels: 8,
            decoder_channels: vec![8, 6],
            ..ArchConfig::default()
        }
    }

    fn image(seed: u64, h: usize, w: usize) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::new(Grid::from_fn(3, h, w, |_, _, _| rng.gen::<f32>())).unwrap()
    }

    #[test]
    fn output_contract() {
        let model = Model::new(ArchConfig::default()).unwrap();
        let out = model.predict(&image(0, 32, 32)).unwrap();
        assert_eq!(out.seg_probs.dims(), (2, 32, 32));
        assert_eq!(out.boundary_probs.dims(), (2, 32, 32));
        assert_eq!(out.features.dims(), (32, 32, 32));
        assert!(out
            .seg_probs
            .as_slice()
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::new(small_arch()).unwrap();
        let batch = vec![image(1, 16, 16), image(2, 16, 16)];
        assert_eq!(model.forward(&batch).unwrap(), model.forward(&batch).unwrap());
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let model = Model::new(small_arch()).unwrap();
        assert!(matches!(model.predict(&image(0, 18, 16)), Err(Error::Shape(_))));
        assert!(ArchConfig::default().check_input(64, 64).is_ok());
        assert!(ArchConfig::default().check_input(72, 64).is_err());
    }

    #[test]
    fn boundary_head_does_not_feed_region_head() {
        let mut model = Model::new(small_arch()).unwrap();
        let img = image(3, 16, 16);
        let before = model.predict(&img).unwrap();
        for p in model.params_mut() {
            if p.name.starts_with("head.boundary") {
                p.data.fill(0.0);
            }
        }
        let after = model.predict(&img).unwrap();
        assert_eq!(before.seg_probs, after.seg_probs);
        assert_eq!(before.features, after.features);
        assert!(after.boundary_probs.as_slice().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn every_output_reaches_the_encoder() {
        let model = Model::new(small_arch()).unwrap();
        let img = image(4, 16, 16);
        let (out, tape) = model.forward_train(&img).unwrap();
        let ones = |g: &Grid<f32>| Grid::filled(g.channels(), g.height(), g.width(), 1.0f32);
        for which in 0..3 {
            let mut grads = OutputGrads::default();
            match which {
                0 => grads.seg_probs = Some(ones(&out.seg_probs)),
                1 => grads.boundary_probs = Some(ones(&out.boundary_probs)),
                _ => grads.features = Some(ones(&out.features)),
            }
            let mut acc = model.zero_grads();
            model.backward(&tape, &grads, &mut acc);
            let enc0 = model.params().iter().position(|p| p.name == "enc0.a.weight").unwrap();
            assert!(acc.0[enc0].iter().any(|&g| g != 0.0), "output {which}");
        }
    }

    /// Whole-network gradient check on a scalar probe of all three outputs.
    #[test]
    fn backward_matches_finite_differences() {
        let arch = ArchConfig {
            feature_tap: 1,
            ..small_arch()
        };
        let mut model = Model::new(arch).unwrap();
        let img = image(5, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, tape) = model.forward_train(&img).unwrap();
        let probe = |g: &Grid<f32>, rng: &mut ChaCha8Rng| {
            Grid::from_fn(g.channels(), g.height(), g.width(), |_, _, _| rng.gen_range(-1.0f32..1.0))
        };
        let ps = probe(&out.seg_probs, &mut rng);
        let pb = probe(&out.boundary_probs, &mut rng);
        let pf = probe(&out.features, &mut rng);
        let loss = |m: &Model| -> f64 {
            let o = m.predict(&img).unwrap();
            [(&o.seg_probs, &ps), (&o.boundary_probs, &pb), (&o.features, &pf)]
                .iter()
                .map(|(a, p)| {
                    a.as_slice()
                        .iter()
                        .zip(p.as_slice())
                        .map(|(x, y)| f64::from(*x) * f64::from(*y))
                        .sum::<f64>()
                })
                .sum()
        };
        let mut acc = model.zero_grads();
        model.backward(
            &tape,
            &OutputGrads {
                seg_probs: Some(ps.clone()),
                boundary_probs: Some(pb.clone()),
                features: Some(pf.clone()),
            },
            &mut acc,
        );
        let mut checked = 0;
        for pi in 0..model.params().len() {
            for j in [0, model.params()[pi].data.len() / 2] {
                let orig = model.params()[pi].data[j];
                let an = f64::from(acc.0[pi][j]);
                // ReLU and max-pool kinks can sit inside a single step; accept
                // the best of a few step sizes.
                let mut best = (f64::INFINITY, 0.0);
                for eps in [1e-2f32, 3e-3, 1e-3] {
                    model.params_mut()[pi].data[j] = orig + eps;
                    let up = loss(&model);
                    model.params_mut()[pi].data[j] = orig - eps;
                    let dn = loss(&model);
                    model.params_mut()[pi].data[j] = orig;
                    let fd = (up - dn) / (2.0 * f64::from(eps));
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
                    if err < best.0 {
                        best = (err, fd);
                    }
                }
                assert!(
                    best.0 < 2e-2,
                    "{} [{j}]: fd {} vs analytic {an}",
                    model.params()[pi].name,
                    best.1
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn receptive_field_is_local() {
        let arch = ArchConfig::default();
        let model = Model::new(arch).unwrap();
        let a = image(6, 256, 256);
        let mut g = a.grid().clone();
        for c in 0..3 {
            for y in 240..256 {
                for x in 240..256 {
                    g.set(c, y, x, 1.0 - g.get(c, y, x));
                }
            }
        }
        let b = RasterImage::new(g).unwrap();
        let (oa, ob) = (model.predict(&a).unwrap(), model.predict(&b).unwrap());
        for c in 0..oa.features.channels() {
            for (y, x) in [(0, 0), (10, 20), (40, 3)] {
                assert_eq!(oa.features.get(c, y, x), ob.features.get(c, y, x));
            }
        }
        // and a pixel close to the change does move
        assert_ne!(oa.features.plane(0)[250 * 256 + 250..], ob.features.plane(0)[250 * 256 + 250..]);
    }
}
