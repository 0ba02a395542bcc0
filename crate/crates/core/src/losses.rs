//! Training objectives and their gradients.
//!
//! All losses work in `f64` on planar probability/feature maps and are means,
//! not sums, over pixels and channels. Each `*_grad` variant returns the value
//! together with the gradient(s) with respect to its differentiable inputs.

use serde::{Deserialize, Serialize};

use crate::boundary::{soft_boundary, soft_boundary_backward};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imaging::{CUP, DISC};

/// Clamp applied to probabilities inside every logarithm.
pub const PROB_EPS: f64 = 1e-7;
/// Additive smoothing of the Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;
/// Floor on prototype norms inside the cosine distance.
pub const NORM_EPS: f64 = 1e-8;

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, false)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, false)
    } else {
        (p, true)
    }
}

/// Mean binary cross-entropy with its gradient.
pub fn bce_loss_grad(pred: &Grid<f64>, target: &Grid<f64>) -> Result<(f64, Grid<f64>)> {
    pred.check_same_dims(target, "bce")?;
    let n = pred.as_slice().len().max(1) as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for ((g, &p), &t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let (pc, inside) = clamp_prob(p);
        total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        *g = if inside { (-t / pc + (1.0 - t) / (1.0 - pc)) / n } else { 0.0 };
    }
    Ok((total / n, grad))
}

pub fn bce_loss(pred: &Grid<f64>, target: &Grid<f64>) -> Result<f64> {
    bce_loss_grad(pred, target).map(|(v, _)| v)
}

/// `−mean(t · log p)`: the positive term of the cross-entropy only.
pub fn positive_ce_loss_grad(pred: &Grid<f64>, target: &Grid<f64>) -> Result<(f64, Grid<f64>)> {
    pred.check_same_dims(target, "positive cross-entropy")?;
    let n = pred.as_slice().len().max(1) as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for ((g, &p), &t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let (pc, inside) = clamp_prob(p);
        total -= t * pc.ln();
        *g = if inside { -t / pc / n } else { 0.0 };
    }
    Ok((total / n, grad))
}

/// Smoothed soft Dice loss, per channel then averaged.
pub fn dice_loss_grad(pred: &Grid<f64>, target: &Grid<f64>) -> Result<(f64, Grid<f64>)> {
    pred.check_same_dims(target, "dice")?;
    let c = pred.channels();
    let mut grad = Grid::filled(c, pred.height(), pred.width(), 0.0);
    let mut total = 0.0;
    for ch in 0..c {
        let p = pred.plane(ch);
        let t = target.plane(ch);
        let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<f64>() + t.iter().sum::<f64>() + DICE_SMOOTH;
        let num = 2.0 * inter + DICE_SMOOTH;
        total += 1.0 - num / denom;
        for (g, &tv) in grad.plane_mut(ch).iter_mut().zip(t) {
            *g = -(2.0 * tv * denom - num) / (denom * denom) / c as f64;
        }
    }
    Ok((total / c as f64, grad))
}

pub fn dice_loss(pred: &Grid<f64>, target: &Grid<f64>) -> Result<f64> {
    dice_loss_grad(pred, target).map(|(v, _)| v)
}

/// Which loss supervises the boundary head at a given pretraining epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryLossKind {
    Bce,
    Dice,
}

/// Cross-entropy for the first `ce_epochs` epochs, then Dice refinement for
/// `dice_epochs` more.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryScheduleConfig {
    pub ce_epochs: usize,
    pub dice_epochs: usize,
}

impl Default for BoundaryScheduleConfig {
    fn default() -> Self {
        Self {
            ce_epochs: 1000,
            dice_epochs: 200,
        }
    }
}

impl BoundaryScheduleConfig {
    /// Splits `total` epochs 5:1 between the two phases, like the 1000/200 default.
    pub fn scaled(total: usize) -> Self {
        let dice_epochs = (total as f64 / 6.0).round() as usize;
        Self {
            ce_epochs: total - dice_epochs,
            dice_epochs,
        }
    }

    pub fn total(&self) -> usize {
        self.ce_epochs + self.dice_epochs
    }

    /// Zero-based epoch → loss kind.
    pub fn kind_at(&self, epoch: usize) -> Result<BoundaryLossKind> {
        if epoch >= self.total() {
            return Err(Error::Precondition(format!(
                "epoch {epoch} beyond the {}-epoch schedule",
                self.total()
            )));
        }
        Ok(if epoch < self.ce_epochs {
            BoundaryLossKind::Bce
        } else {
            BoundaryLossKind::Dice
        })
    }
}

/// Source-domain loss of one sample and its gradients.
#[derive(Clone, Debug)]
pub struct SourceLoss {
    pub seg: f64,
    pub boundary: f64,
    pub boundary_kind: BoundaryLossKind,
    pub total: f64,
    pub grad_seg: Grid<f64>,
    pub grad_boundary: Grid<f64>,
}

/// Region BCE plus the scheduled boundary loss.
pub fn source_loss(
    seg_probs: &Grid<f64>,
    boundary_probs: &Grid<f64>,
    mask: &Grid<f64>,
    boundary: &Grid<f64>,
    epoch: usize,
    schedule: &BoundaryScheduleConfig,
) -> Result<SourceLoss> {
    let kind = schedule.kind_at(epoch)?;
    let (seg, grad_seg) = bce_loss_grad(seg_probs, mask)?;
    let (bnd, grad_boundary) = match kind {
        BoundaryLossKind::Bce => bce_loss_grad(boundary_probs, boundary)?,
        BoundaryLossKind::Dice => dice_loss_grad(boundary_probs, boundary)?,
    };
    Ok(SourceLoss {
        seg,
        boundary: bnd,
        boundary_kind: kind,
        total: seg + bnd,
        grad_seg,
        grad_boundary,
    })
}

/// Mean squared difference between the boundary head and the Sobel boundary
/// of the region head. Returns `(value, ∂/∂boundary_probs, ∂/∂seg_probs)`.
pub fn boundary_consistency_loss_grad(
    boundary_probs: &Grid<f64>,
    seg_probs: &Grid<f64>,
) -> Result<(f64, Grid<f64>, Grid<f64>)> {
    boundary_probs.check_same_dims(seg_probs, "boundary consistency")?;
    let extracted = soft_boundary(seg_probs);
    let n = boundary_probs.as_slice().len().max(1) as f64;
    let mut grad_b = boundary_probs.clone();
    let mut total = 0.0;
    for (g, (&b, &e)) in grad_b
        .as_mut_slice()
        .iter_mut()
        .zip(boundary_probs.as_slice().iter().zip(extracted.as_slice()))
    {
        let d = b - e;
        total += d * d;
        *g = 2.0 * d / n;
    }
    let upstream = grad_b.map(|g| -g);
    let grad_s = soft_boundary_backward(seg_probs, &upstream);
    Ok((total / n, grad_b, grad_s))
}

pub fn boundary_consistency_loss(boundary_probs: &Grid<f64>, seg_probs: &Grid<f64>) -> Result<f64> {
    boundary_consistency_loss_grad(boundary_probs, seg_probs).map(|(v, _, _)| v)
}

/// Mean feature vector over a mask's foreground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub pixel_count: usize,
}

/// Mask-averaged features; `None` for an empty mask. `mask` is one `H × W` plane.
pub fn compute_prototype(features: &Grid<f64>, mask: &[u8]) -> Option<Prototype> {
    debug_assert_eq!(mask.len(), features.plane_len());
    let count = mask.iter().filter(|&&m| m != 0).count();
    if count == 0 {
        return None;
    }
    let vector = (0..features.channels())
        .map(|c| {
            features
                .plane(c)
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m != 0)
                .map(|(f, _)| f)
                .sum::<f64>()
                / count as f64
        })
        .collect();
    Some(Prototype {
        vector,
        pixel_count: count,
    })
}

/// Scatters a prototype gradient back onto the feature map (mask held constant).
fn prototype_backward(grad: &[f64], mask: &[u8], count: usize, out: &mut Grid<f64>) {
    for (c, &g) in grad.iter().enumerate() {
        let share = g / count as f64;
        for (o, &m) in out.plane_mut(c).iter_mut().zip(mask) {
            if m != 0 {
                *o += share;
            }
        }
    }
}

/// `1 − a·b / (‖a‖‖b‖)` with its gradients in `a` and `b`.
pub fn cosine_distance_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na_raw = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb_raw = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let na = na_raw.max(NORM_EPS);
    let nb = nb_raw.max(NORM_EPS);
    let cos = dot / (na * nb);
    let value = (1.0 - cos).clamp(0.0, 2.0);
    // derivative of -cos; the norm term drops out when the floor is active
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let norm_term = if na_raw > NORM_EPS { cos * x / (na * na) } else { 0.0 };
            -(y / (na * nb) - norm_term)
        })
        .collect();
    let gb = b
        .iter()
        .zip(a)
        .map(|(&y, &x)| {
            let norm_term = if nb_raw > NORM_EPS { cos * y / (nb * nb) } else { 0.0 };
            -(x / (na * nb) - norm_term)
        })
        .collect();
    (value, ga, gb)
}

pub fn cosine_distance(a: &Prototype, b: &Prototype) -> f64 {
    cosine_distance_grad(&a.vector, &b.vector).0
}

/// Region probabilities and pixel features of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PrototypeSource<'a> {
    pub seg_probs: &'a Grid<f64>,
    pub features: &'a Grid<f64>,
}

#[derive(Clone, Debug)]
pub struct FeatureConsistency {
    pub value: f64,
    /// Per-class cosine distance; `None` when either prototype was absent.
    pub cup: Option<f64>,
    pub disc: Option<f64>,
    pub grad_orig: Grid<f64>,
    pub grad_swapped: Grid<f64>,
}

/// Cup + disc cosine distances between the prototypes of an image and of its
/// background-swapped copy. Masks are `seg_probs > threshold`, detached.
pub fn feature_consistency_loss_grad(
    orig: PrototypeSource<'_>,
    swapped: PrototypeSource<'_>,
    threshold: f64,
) -> Result<FeatureConsistency> {
    orig.features.check_same_dims(swapped.features, "feature consistency features")?;
    orig.seg_probs.check_same_dims(swapped.seg_probs, "feature consistency probabilities")?;
    if orig.seg_probs.plane_len() != orig.features.plane_len() {
        return Err(Error::Shape("features and probabilities are not aligned".into()));
    }
    let dims = orig.features.dims();
    let mut grad_orig = Grid::filled(dims.0, dims.1, dims.2, 0.0);
    let mut grad_swapped = grad_orig.clone();
    let mask_of = |p: &Grid<f64>, c: usize| -> Vec<u8> {
        p.plane(c).iter().map(|&v| u8::from(v > threshold)).collect()
    };
    let mut per_class = [None, None];
    for (slot, class) in [(0usize, CUP), (1usize, DISC)] {
        let mo = mask_of(orig.seg_probs, class);
        let ms = mask_of(swapped.seg_probs, class);
        let (Some(po), Some(ps)) = (
            compute_prototype(orig.features, &mo),
            compute_prototype(swapped.features, &ms),
        ) else {
            continue;
        };
        let (d, ga, gb) = cosine_distance_grad(&po.vector, &ps.vector);
        prototype_backward(&ga, &mo, po.pixel_count, &mut grad_orig);
        prototype_backward(&gb, &ms, ps.pixel_count, &mut grad_swapped);
        per_class[slot] = Some(d);
    }
    let [cup, disc] = per_class;
    Ok(FeatureConsistency {
        value: cup.unwrap_or(0.0) + disc.unwrap_or(0.0),
        cup,
        disc,
        grad_orig,
        grad_swapped,
    })
}

pub fn feature_consistency_loss(
    orig: PrototypeSource<'_>,
    swapped: PrototypeSource<'_>,
    threshold: f64,
) -> Result<f64> {
    feature_consistency_loss_grad(orig, swapped, threshold).map(|f| f.value)
}

/// Pseudo-label segmentation loss: full BCE, or the positive term only.
pub fn pseudo_label_loss_grad(
    seg_probs: &Grid<f64>,
    pseudo: &Grid<f64>,
    positive_only: bool,
) -> Result<(f64, Grid<f64>)> {
    if positive_only {
        positive_ce_loss_grad(seg_probs, pseudo)
    } else {
        bce_loss_grad(seg_probs, pseudo)
    }
}

pub fn pseudo_label_loss(seg_probs: &Grid<f64>, pseudo: &Grid<f64>, positive_only: bool) -> Result<f64> {
    pseudo_label_loss_grad(seg_probs, pseudo, positive_only).map(|(v, _)| v)
}

/// Weights of the boundary-consistency (`alpha`) and feature-consistency
/// (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Batch-mean loss components of one adaptation step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub tseg: f64,
    pub bc: f64,
    pub fc: f64,
}

/// `tseg + alpha·bc + beta·fc`.
pub fn total_adaptation_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(parts.tseg + weights.alpha * parts.bc + weights.beta * parts.fc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(c: usize, h: usize, w: usize, v: &[f64]) -> Grid<f64> {
        Grid::new(c, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn bce_values() {
        let t = g(1, 2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(bce_loss(&t, &t).unwrap() <= 1.2e-7);
        let half = Grid::filled(1, 2, 2, 0.5);
        assert!((bce_loss(&half, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = g(1, 2, 2, &[0.9, 0.1, 0.8, 0.2]);
        let expected = -(0.9f64.ln() * 2.0 + 0.8f64.ln() * 2.0) / 4.0;
        assert!((bce_loss(&p, &t).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.1643).abs() < 1e-4);
        assert!(bce_loss(&p, &Grid::filled(1, 2, 3, 0.0)).is_err());
    }

    #[test]
    fn dice_values() {
        let mut t = Grid::filled(1, 4, 4, 0.0);
        for i in 0..3 {
            t.as_mut_slice()[i] = 1.0;
        }
        assert_eq!(dice_loss(&t, &t).unwrap(), 0.0);
        let z = Grid::filled(1, 4, 4, 0.0);
        assert_eq!(dice_loss(&z, &z).unwrap(), 0.0);
        let mut p = Grid::filled(1, 4, 4, 0.0);
        let mut q = Grid::filled(1, 4, 4, 0.0);
        for i in 0..4 {
            p.as_mut_slice()[i] = 1.0;
            q.as_mut_slice()[8 + i] = 1.0;
        }
        assert!((dice_loss(&p, &q).unwrap() - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn schedule_switches_to_dice() {
        let s = BoundaryScheduleConfig {
            ce_epochs: 25,
            dice_epochs: 5,
        };
        assert_eq!(s.kind_at(0).unwrap(), BoundaryLossKind::Bce);
        assert_eq!(s.kind_at(24).unwrap(), BoundaryLossKind::Bce);
        assert_eq!(s.kind_at(25).unwrap(), BoundaryLossKind::Dice);
        assert!(s.kind_at(30).is_err());
        let d = BoundaryScheduleConfig { ce_epochs: 0, dice_epochs: 3 };
        assert_eq!(d.kind_at(0).unwrap(), BoundaryLossKind::Dice);
        assert_eq!(BoundaryScheduleConfig::scaled(30), s);
        assert_eq!(BoundaryScheduleConfig::scaled(1200), BoundaryScheduleConfig::default());
    }

    #[test]
    fn perfect_source_prediction_costs_nothing() {
        let mask = g(1, 2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let bnd = g(1, 2, 2, &[1.0, 1.0, 1.0, 0.0]);
        for epoch in [0, 2] {
            let l = source_loss(&mask, &bnd, &mask, &bnd, epoch, &BoundaryScheduleConfig { ce_epochs: 2, dice_epochs: 1 })
                .unwrap();
            assert!(l.total < 1e-6, "{}", l.total);
        }
    }

    #[test]
    fn boundary_consistency_values() {
        let seg = Grid::filled(2, 6, 6, 0.3);
        let c = 0.4;
        let b = Grid::filled(2, 6, 6, c);
        assert!((boundary_consistency_loss(&b, &seg).unwrap() - c * c).abs() < 1e-12);
        let step = Grid::from_fn(1, 6, 6, |_, _, x| if x >= 3 { 1.0 } else { 0.0 });
        let sb = soft_boundary(&step);
        assert_eq!(boundary_consistency_loss(&sb, &step).unwrap(), 0.0);
    }

    #[test]
    fn prototype_basics() {
        let v = [0.5, -1.0, 2.0];
        let f = Grid::from_fn(3, 3, 3, |c, _, _| v[c]);
        let mut m = vec![0u8; 9];
        m[4] = 1;
        m[7] = 1;
        assert_eq!(compute_prototype(&f, &m).unwrap().vector, v.to_vec());
        assert_eq!(compute_prototype(&f, &[0; 9]), None);
        let f2 = Grid::from_fn(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64);
        let mut one = vec![0u8; 9];
        one[5] = 1;
        let p = compute_prototype(&f2, &one).unwrap();
        assert_eq!(p.vector, vec![5.0, 14.0]);
        assert_eq!(p.pixel_count, 1);
    }

    #[test]
    fn cosine_values() {
        let p = |v: &[f64]| Prototype {
            vector: v.to_vec(),
            pixel_count: 1,
        };
        assert!(cosine_distance(&p(&[1.0, 2.0]), &p(&[1.0, 2.0])).abs() < 1e-15);
        assert!((cosine_distance(&p(&[1.0, 0.0]), &p(&[0.0, 3.0])) - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&p(&[1.0, -2.0]), &p(&[-1.0, 2.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn feature_consistency_cases() {
        let seg = Grid::from_fn(2, 4, 4, |_, y, _| if y < 2 { 0.9 } else { 0.1 });
        let feat = Grid::from_fn(3, 4, 4, |c, y, x| (c + y * 4 + x) as f64 * 0.1);
        let src = PrototypeSource {
            seg_probs: &seg,
            features: &feat,
        };
        assert!(feature_consistency_loss(src, src, 0.5).unwrap().abs() < 1e-12);
        let bg = Grid::filled(2, 4, 4, 0.2);
        let empty = PrototypeSource {
            seg_probs: &bg,
            features: &feat,
        };
        assert_eq!(feature_consistency_loss(empty, empty, 0.5).unwrap(), 0.0);

        // cup (channel 1) covers the top row only, disc (channel 0) the top two rows
        let seg = Grid::from_fn(2, 4, 4, |c, y, _| {
            let on = if c == CUP { y == 0 } else { y < 2 };
            if on { 0.9 } else { 0.1 }
        });
        // original: cup features along e0, swapped: along e1; disc rows identical
        let fo = Grid::from_fn(2, 4, 4, |c, y, _| if y == 0 { [1.0, 0.0][c] } else { [0.0, 2.0][c] });
        let fs = Grid::from_fn(2, 4, 4, |c, y, _| if y == 0 { [0.0, 1.0][c] } else { [1.0, 1.0][c] });
        // disc prototypes: orig mean of rows 0,1 = (0.5, 1.0); swapped = (0.5, 1.0)
        let r = feature_consistency_loss_grad(
            PrototypeSource { seg_probs: &seg, features: &fo },
            PrototypeSource { seg_probs: &seg, features: &fs },
            0.5,
        )
        .unwrap();
        assert!((r.cup.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.disc.unwrap().abs() < 1e-12);
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pseudo_label_values() {
        let t = g(1, 2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let p = g(1, 2, 2, &[0.9, 0.1, 0.8, 0.2]);
        assert!((pseudo_label_loss(&p, &t, false).unwrap() - 0.164_252).abs() < 1e-5);
        assert!(pseudo_label_loss(&t, &t, false).unwrap() < 1e-6);
        let half = Grid::filled(1, 2, 2, 0.5);
        assert!((pseudo_label_loss(&half, &t, false).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // literal positive-only variant ignores background pixels
        let lit = pseudo_label_loss(&p, &t, true).unwrap();
        assert!((lit - (-(0.9f64.ln() + 0.8f64.ln()) / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(total_adaptation_loss(&LossParts::default(), &w).unwrap(), 0.0);
        let parts = LossParts {
            tseg: 0.1,
            bc: 0.02,
            fc: 0.3,
        };
        assert!((total_adaptation_loss(&parts, &w).unwrap() - 2.4).abs() < 1e-12);
        let zero = LossWeights { alpha: 0.0, beta: 0.0 };
        assert_eq!(total_adaptation_loss(&parts, &zero).unwrap(), 0.1);
        assert!(total_adaptation_loss(&parts, &LossWeights { alpha: -1.0, beta: 1.0 }).is_err());
    }
}
