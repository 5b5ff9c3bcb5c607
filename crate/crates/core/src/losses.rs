//! Fusion and detection objectives and their genome-weighted combination.
//!
//! Component order everywhere (breakdowns, genomes, CSV columns) is
//! `ssim, deco, grad, int, cls, box, dfl`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sobel_gradient, Image};
use crate::metrics::metric_ssim;

pub const COMPONENT_COUNT: usize = 7;
pub const COMPONENT_NAMES: [&str; COMPONENT_COUNT] =
    ["ssim", "deco", "grad", "int", "cls", "box", "dfl"];

/// Guard for the CIOU denominators.
pub const CIOU_EPS: f64 = 1e-9;
/// Lower clamp on probabilities inside the DFL logarithms.
pub const DFL_PROB_FLOOR: f64 = 1e-12;

/// Axis-aligned box given by its center and extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::param(
                "bbox",
                format!("box ({cx}, {cy}, {w}, {h}) needs finite values and positive extents"),
            ));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }
}

/// Every loss component plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ssim: f64,
    pub l_deco: f64,
    pub l_grad: f64,
    pub l_int: f64,
    pub l_cls: f64,
    pub l_box: f64,
    pub l_dfl: f64,
    pub combined: f64,
    /// True when the decomposition term came from the default stub.
    pub deco_stubbed: bool,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; COMPONENT_COUNT] {
        [
            self.l_ssim,
            self.l_deco,
            self.l_grad,
            self.l_int,
            self.l_cls,
            self.l_box,
            self.l_dfl,
        ]
    }

    pub fn from_components(
        c: [f64; COMPONENT_COUNT],
        weights: &[f64],
        deco_stubbed: bool,
    ) -> Result<Self> {
        Ok(Self {
            l_ssim: c[0],
            l_deco: c[1],
            l_grad: c[2],
            l_int: c[3],
            l_cls: c[4],
            l_box: c[5],
            l_dfl: c[6],
            combined: combine(&c, weights)?,
            deco_stubbed,
        })
    }
}

/// Weighted sum of loss components.
pub fn combine(components: &[f64], weights: &[f64]) -> Result<f64> {
    if components.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} loss components but {} weights",
            components.len(),
            weights.len()
        )));
    }
    Ok(components.iter().zip(weights).map(|(c, w)| c * w).sum())
}

fn check_triple(fused: &Image, ir: &Image, vis: &Image) -> Result<()> {
    fused.ensure_same_dims(ir, "fused vs infrared")?;
    fused.ensure_same_dims(vis, "fused vs visible")
}

/// `(1 - SSIM(ir, fused)) + (1 - SSIM(vis, fused))`.
pub fn loss_ssim(fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    check_triple(fused, ir, vis)?;
    Ok((1.0 - metric_ssim(ir, fused)?) + (1.0 - metric_ssim(vis, fused)?))
}

/// Mean absolute deviation from the per-pixel maximum of the inputs.
pub fn loss_intensity(fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    check_triple(fused, ir, vis)?;
    let sum: f64 = fused
        .data()
        .iter()
        .zip(ir.data().iter().zip(vis.data()))
        .map(|(f, (a, b))| (f - a.max(*b)).abs())
        .sum();
    Ok(sum / fused.len() as f64)
}

/// Mean absolute deviation of gradient magnitude from the stronger input edge.
pub fn loss_gradient(fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    check_triple(fused, ir, vis)?;
    let gf = sobel_gradient(fused).magnitude;
    let target = max_gradient_target(ir, vis);
    let sum: f64 = gf.iter().zip(&target).map(|(g, t)| (g - t).abs()).sum();
    Ok(sum / fused.len() as f64)
}

/// Per-pixel `max(|grad ir|, |grad vis|)`.
pub fn max_gradient_target(ir: &Image, vis: &Image) -> Vec<f64> {
    let ga = sobel_gradient(ir).magnitude;
    let gb = sobel_gradient(vis).magnitude;
    ga.iter().zip(&gb).map(|(a, b)| a.max(*b)).collect()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy over classes, written with softplus terms.
pub fn loss_cls(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, (z, y)) in logits.iter().zip(labels).enumerate() {
        if *y != 0.0 && *y != 1.0 {
            return Err(Error::param("labels", format!("label {i} is {y}, expected 0 or 1")));
        }
        if !z.is_finite() {
            return Err(Error::param("logits", format!("logit {i} is not finite")));
        }
        total += y * softplus(-z) + (1.0 - y) * softplus(*z);
    }
    Ok(total)
}

/// Complete-IoU box loss.
pub fn loss_ciou(pred: &BBox, gt: &BBox) -> f64 {
    let iw = (pred.x1().min(gt.x1()) - pred.x0().max(gt.x0())).max(0.0);
    let ih = (pred.y1().min(gt.y1()) - pred.y0().max(gt.y0())).max(0.0);
    let inter = iw * ih;
    let union = pred.w * pred.h + gt.w * gt.h - inter;
    let iou = inter / union;

    let d2 = (pred.cx - gt.cx).powi(2) + (pred.cy - gt.cy).powi(2);
    let ew = pred.x1().max(gt.x1()) - pred.x0().min(gt.x0());
    let eh = pred.y1().max(gt.y1()) - pred.y0().min(gt.y0());
    let dc2 = (ew * ew + eh * eh).max(CIOU_EPS);

    let da = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    let v = 4.0 / (std::f64::consts::PI * std::f64::consts::PI) * da * da;
    let aspect = v * v / ((1.0 - iou) + v).max(CIOU_EPS);

    1.0 - (iou - d2 / dc2 - aspect)
}

/// Distribution focal loss on the two integer bins bracketing `target`.
pub fn loss_dfl(bin_probs: &[f64], target: f64) -> Result<f64> {
    let n = bin_probs.len();
    if n < 2 {
        return Err(Error::param("bin_probs", "need at least two bins"));
    }
    let sum: f64 = bin_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || bin_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::param(
            "bin_probs",
            format!("probabilities must lie in [0, 1] and sum to 1, sum is {sum}"),
        ));
    }
    let last = (n - 1) as f64;
    if !(0.0..=last).contains(&target) {
        return Err(Error::param(
            "target",
            format!("target {target} outside bin range [0, {last}]"),
        ));
    }
    let i = (target.floor() as usize).min(n - 2);
    let w_lo = (i + 1) as f64 - target;
    let w_hi = target - i as f64;
    let term = |w: f64, p: f64| if w == 0.0 { 0.0 } else { w * p.max(DFL_PROB_FLOOR).ln() };
    Ok(-(term(w_lo, bin_probs[i]) + term(w_hi, bin_probs[i + 1])))
}

/// A decomposition loss correlating base features of the two modalities.
pub trait DecoLoss: Send + Sync {
    fn evaluate(&self, fused: &Image, ir: &Image, vis: &Image) -> Result<f64>;
}

/// Placeholder decomposition term that always contributes zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubDeco;

impl DecoLoss for StubDeco {
    fn evaluate(&self, _fused: &Image, _ir: &Image, _vis: &Image) -> Result<f64> {
        Ok(0.0)
    }
}

/// Holds the active decomposition loss.
#[derive(Clone)]
pub struct DecoSlot {
    inner: Arc<dyn DecoLoss>,
    stubbed: bool,
}

impl Default for DecoSlot {
    fn default() -> Self {
        Self {
            inner: Arc::new(StubDeco),
            stubbed: true,
        }
    }
}

impl std::fmt::Debug for DecoSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecoSlot").field("stubbed", &self.stubbed).finish()
    }
}

impl DecoSlot {
    /// Registers a plug-in after probing it on random images; it must return
    /// a finite nonnegative value.
    pub fn register(plugin: Arc<dyn DecoLoss>, probe_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let mut img = || Image::from_fn(16, 16, |_, _| rng.gen::<f64>());
        let (f, a, b) = (img()?, img()?, img()?);
        let v = plugin.evaluate(&f, &a, &b)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param(
                "deco",
                format!("decomposition loss returned {v} on the probe, expected finite >= 0"),
            ));
        }
        Ok(Self {
            inner: plugin,
            stubbed: false,
        })
    }

    pub fn is_stubbed(&self) -> bool {
        self.stubbed
    }

    pub fn evaluate(&self, fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
        let v = self.inner.evaluate(fused, ir, vis)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param("deco", format!("decomposition loss returned {v}")));
        }
        Ok(v)
    }
}

/// One externally supplied detection pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSample {
    pub pred: [f64; 4],
    pub gt: [f64; 4],
    #[serde(default)]
    pub logits: Vec<f64>,
    #[serde(default)]
    pub labels: Vec<f64>,
    /// Optional bin distribution and continuous target for DFL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfl: Option<DflSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DflSample {
    pub probs: Vec<f64>,
    pub target: f64,
}

/// Mean `(cls, box, dfl)` over samples; empty input gives zeros.
pub fn detection_losses(samples: &[DetectionSample]) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let (mut cls, mut bx, mut dfl, mut n_dfl) = (0.0, 0.0, 0.0, 0usize);
    for s in samples {
        cls += loss_cls(&s.logits, &s.labels)?;
        bx += loss_ciou(&BBox::from_array(s.pred)?, &BBox::from_array(s.gt)?);
        if let Some(d) = &s.dfl {
            dfl += loss_dfl(&d.probs, d.target)?;
            n_dfl += 1;
        }
    }
    let n = samples.len() as f64;
    let dfl = if n_dfl > 0 { dfl / n_dfl as f64 } else { 0.0 };
    Ok((cls / n, bx / n, dfl))
}

/// Full breakdown for a fused image and optional detection samples.
pub fn evaluate_losses(
    fused: &Image,
    ir: &Image,
    vis: &Image,
    samples: &[DetectionSample],
    deco: &DecoSlot,
    weights: &[f64],
) -> Result<LossBreakdown> {
    let (cls, bx, dfl) = detection_losses(samples)?;
    let c = [
        loss_ssim(fused, ir, vis)?,
        deco.evaluate(fused, ir, vis)?,
        loss_gradient(fused, ir, vis)?,
        loss_intensity(fused, ir, vis)?,
        cls,
        bx,
        dfl,
    ];
    LossBreakdown::from_components(c, weights, deco.is_stubbed())
}
