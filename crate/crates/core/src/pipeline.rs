//! Desk-scale cooperative fusion loop.
//!
//! The fusion "network" is a `g x g` logit grid `W`. It is upsampled to image
//! size and squashed into a blend mask `A`, which mixes the enhanced inputs:
//!
//! ```text
//! P   = A * DE(ir) + (1 - A) * DE(vis)   (evaluated as DE(vis) + A * (DE(ir) - DE(vis)))
//! out = clamp(DE(P), 0, 1)
//! ```
//!
//! An inner gradient-descent loop fits `W` to a genome-weighted loss. The
//! intensity and gradient terms are differentiated analytically; SSIM, the
//! decomposition plug-in and the detection surrogate use central differences.
//! The genetic engine then searches over genomes, scoring each one by the
//! loss its inner loop reaches.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhancer::{enhance_plane, sigmoid};
use crate::error::{Error, Result};
use crate::evo::{self, EvoConfig, EvoOutcome, Genome};
use crate::grid::{correlate_adjoint, sobel_plane, Image, ResizePlan, SOBEL_X, SOBEL_Y};
use crate::losses::{
    combine, loss_cls, max_gradient_target, BBox, DecoSlot, LossBreakdown, COMPONENT_COUNT,
};
use crate::metrics::{self, MetricReport, SsimReference};

/// Logit gain applied to the inside-minus-ring contrast.
pub const SURROGATE_GAIN: f64 = 10.0;

/// Hand-picked coefficients used as the fixed baseline arm.
pub const EXPERIENCE_GENOME: [f64; COMPONENT_COUNT] = [1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
/// Uniform coefficients.
pub const EQUALS_GENOME: [f64; COMPONENT_COUNT] = [1.0; COMPONENT_COUNT];

/// Inner-loop settings; also the on-disk `inner.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    /// Side of the blend-logit grid.
    pub grid: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Seed for the initial grid.
    pub seed: u64,
    /// Initial logits are drawn from `U(-init_scale, init_scale)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Central-difference step.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_init_scale() -> f64 {
    0.5
}

fn default_fd_step() -> f64 {
    1e-5
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            learning_rate: 50.0,
            steps: 8,
            seed: 0,
            init_scale: default_init_scale(),
            fd_step: default_fd_step(),
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.grid) {
            return Err(Error::Config(format!("grid {} outside 1..=8", self.grid)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(format!("init_scale {} must be >= 0", self.init_scale)));
        }
        if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
            return Err(Error::Config(format!("fd_step {} must be positive", self.fd_step)));
        }
        Ok(())
    }
}

/// Blend-logit grid plus its optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub grid: usize,
    pub weights: Vec<f64>,
    pub learning_rate: f64,
    pub steps: usize,
}

impl FusionParams {
    pub fn new(grid: usize, weights: Vec<f64>, learning_rate: f64, steps: usize) -> Result<Self> {
        if grid == 0 || weights.len() != grid * grid {
            return Err(Error::Shape(format!(
                "{} weights for a {grid}x{grid} grid",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::param("weights", format!("non-finite entry {w}")));
        }
        Ok(Self {
            grid,
            weights,
            learning_rate,
            steps,
        })
    }

    /// Seeded initial state for an inner configuration.
    pub fn initial(config: &InnerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let s = config.init_scale;
        let weights = (0..config.grid * config.grid)
            .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
            .collect();
        Self::new(config.grid, weights, config.learning_rate, config.steps)
    }
}

/// An aligned infrared/visible pair with optional labeled boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionPair {
    pub name: String,
    pub ir: Image,
    pub vis: Image,
    pub boxes: Vec<BBox>,
}

impl FusionPair {
    pub fn new(name: impl Into<String>, ir: Image, vis: Image, boxes: Vec<BBox>) -> Result<Self> {
        ir.ensure_same_dims(&vis, "infrared vs visible")?;
        let (h, w) = ir.dims();
        for b in &boxes {
            check_box(b, h, w)?;
        }
        Ok(Self {
            name: name.into(),
            ir,
            vis,
            boxes,
        })
    }
}

fn check_box(b: &BBox, h: usize, w: usize) -> Result<()> {
    if b.x0() < 0.0 || b.y0() < 0.0 || b.x1() > w as f64 || b.y1() > h as f64 {
        return Err(Error::Bounds(format!(
            "box ({}, {}, {}, {}) leaves the {h}x{w} image",
            b.cx, b.cy, b.w, b.h
        )));
    }
    Ok(())
}

/// Mean over boxes of `softplus(-GAIN * (mean inside - mean of ring))`.
///
/// This is the binary cross-entropy of a "target present" label against a
/// confidence of `sigmoid(GAIN * contrast)`. The ring is a band of
/// `max(2, min(w, h) / 2)` pixels around the box, clipped to the image.
pub fn detection_surrogate(fused: &Image, boxes: &[BBox]) -> Result<f64> {
    surrogate_plane(fused.data(), fused.height(), fused.width(), boxes)
}

fn surrogate_plane(plane: &[f64], h: usize, w: usize, boxes: &[BBox]) -> Result<f64> {
    if boxes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for b in boxes {
        check_box(b, h, w)?;
        let span = |lo: f64, hi: f64, n: usize| {
            let a = (lo.round() as usize).min(n - 1);
            let z = (hi.round() as usize).clamp(a + 1, n);
            (a, z)
        };
        let (r0, r1) = span(b.y0(), b.y1(), h);
        let (c0, c1) = span(b.x0(), b.x1(), w);
        let m = ((b.w.min(b.h) / 2.0).round() as usize).max(2);
        let (er0, er1) = (r0.saturating_sub(m), (r1 + m).min(h));
        let (ec0, ec1) = (c0.saturating_sub(m), (c1 + m).min(w));
        let (mut sin, mut nin, mut sring, mut nring) = (0.0, 0usize, 0.0, 0usize);
        for r in er0..er1 {
            for c in ec0..ec1 {
                let v = plane[r * w + c];
                if (r0..r1).contains(&r) && (c0..c1).contains(&c) {
                    sin += v;
                    nin += 1;
                } else {
                    sring += v;
                    nring += 1;
                }
            }
        }
        let contrast = if nring == 0 {
            0.0
        } else {
            sin / nin as f64 - sring / nring as f64
        };
        total += loss_cls(&[SURROGATE_GAIN * contrast], &[1.0])?;
    }
    Ok(total / boxes.len() as f64)
}

/// Per-pair quantities that do not depend on the blend grid.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub pair: FusionPair,
    height: usize,
    width: usize,
    de_ir: Vec<f64>,
    de_vis: Vec<f64>,
    int_target: Vec<f64>,
    grad_target: Vec<f64>,
    ssim_ir: SsimReference,
    ssim_vis: SsimReference,
}

impl PreparedPair {
    pub fn new(pair: FusionPair) -> Result<Self> {
        let (height, width) = pair.ir.dims();
        let int_target = pair
            .ir
            .data()
            .iter()
            .zip(pair.vis.data())
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(Self {
            height,
            width,
            de_ir: enhance_plane(pair.ir.data()),
            de_vis: enhance_plane(pair.vis.data()),
            int_target,
            grad_target: max_gradient_target(&pair.ir, &pair.vis),
            ssim_ir: SsimReference::new(&pair.ir)?,
            ssim_vis: SsimReference::new(&pair.vis)?,
            pair,
        })
    }

    fn plan(&self, grid: usize) -> Result<ResizePlan> {
        ResizePlan::new(grid, grid, self.height, self.width)
    }
}

struct Forward {
    mask: Vec<f64>,
    blend: Vec<f64>,
    out: Vec<f64>,
}

fn forward(prep: &PreparedPair, plan: &ResizePlan, weights: &[f64]) -> Forward {
    let logits = plan.apply(weights);
    let mask: Vec<f64> = logits.iter().map(|v| sigmoid(*v)).collect();
    let blend: Vec<f64> = mask
        .iter()
        .zip(prep.de_ir.iter().zip(&prep.de_vis))
        .map(|(a, (x, y))| y + a * (x - y))
        .collect();
    let out = enhance_plane(&blend)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Forward { mask, blend, out }
}

/// Fused image for a given grid.
pub fn fuse_forward(params: &FusionParams, ir: &Image, vis: &Image) -> Result<Image> {
    ir.ensure_same_dims(vis, "infrared vs visible")?;
    let prep = PreparedPair::new(FusionPair::new("", ir.clone(), vis.clone(), Vec::new())?)?;
    let plan = prep.plan(params.grid)?;
    let f = forward(&prep, &plan, &params.weights);
    Image::new(prep.height, prep.width, f.out)
}

/// Which loss terms a gradient evaluation should include.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub w_int: f64,
    pub w_grad: f64,
}

fn intensity_value(prep: &PreparedPair, out: &[f64]) -> f64 {
    out.iter()
        .zip(&prep.int_target)
        .map(|(o, t)| (o - t).abs())
        .sum::<f64>()
        / out.len() as f64
}

fn gradient_value(prep: &PreparedPair, out: &[f64]) -> f64 {
    let g = sobel_plane(out, prep.height, prep.width);
    g.magnitude
        .iter()
        .zip(&prep.grad_target)
        .map(|(m, t)| (m - t).abs())
        .sum::<f64>()
        / out.len() as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `d(w_int * L_int + w_grad * L_grad) / d(out)`.
fn output_gradient(prep: &PreparedPair, out: &[f64], terms: Terms) -> Vec<f64> {
    let (h, w) = (prep.height, prep.width);
    let n = out.len() as f64;
    let mut g: Vec<f64> = out
        .iter()
        .zip(&prep.int_target)
        .map(|(o, t)| terms.w_int * sign(o - t) / n)
        .collect();
    if terms.w_grad != 0.0 {
        let field = sobel_plane(out, h, w);
        let mut gdx = vec![0.0; out.len()];
        let mut gdy = vec![0.0; out.len()];
        for i in 0..out.len() {
            let m = field.magnitude[i];
            if m > 0.0 {
                let r = terms.w_grad * sign(m - prep.grad_target[i]) / n;
                gdx[i] = r * field.dx[i] / m;
                gdy[i] = r * field.dy[i] / m;
            }
        }
        let bx = correlate_adjoint(&gdx, h, w, &SOBEL_X, 3, 3);
        let by = correlate_adjoint(&gdy, h, w, &SOBEL_Y, 3, 3);
        for i in 0..g.len() {
            g[i] += bx[i] + by[i];
        }
    }
    g
}

/// Back-propagates `dL/d(out)` through the output enhancer, blend, mask and
/// resize to the grid.
fn backward(prep: &PreparedPair, plan: &ResizePlan, fwd: &Forward, g_out: &[f64]) -> Vec<f64> {
    let p = &fwd.blend;
    let n = p.len() as f64;
    let ys: Vec<f64> = p.iter().map(|v| sigmoid(*v)).collect();
    let mu_y = ys.iter().sum::<f64>() / n;

    // out = clamp(p * S(z)), z = y^2 / mu_y, y = S(p)
    let mut g_p = vec![0.0; p.len()];
    let mut shared = 0.0;
    for i in 0..p.len() {
        let pre = p[i] * sigmoid(ys[i] * ys[i] / mu_y);
        let g = if (0.0..=1.0).contains(&pre) { g_out[i] } else { 0.0 };
        let y = ys[i];
        let s = sigmoid(y * y / mu_y);
        let ds = s * (1.0 - s);
        let dy = y * (1.0 - y);
        g_p[i] = g * (s + p[i] * ds * 2.0 * y * dy / mu_y);
        shared += g * p[i] * ds * y * y / (mu_y * mu_y);
    }
    for i in 0..p.len() {
        let dy = ys[i] * (1.0 - ys[i]);
        g_p[i] -= dy / n * shared;
    }

    let g_logit: Vec<f64> = g_p
        .iter()
        .zip(&fwd.mask)
        .zip(prep.de_ir.iter().zip(&prep.de_vis))
        .map(|((g, a), (x, y))| g * (x - y) * a * (1.0 - a))
        .collect();
    plan.adjoint(&g_logit)
}

/// Analytic gradient of `w_int * L_int + w_grad * L_grad` with respect to the grid.
pub fn analytic_gradient(prep: &PreparedPair, weights: &[f64], grid: usize, terms: Terms) -> Result<Vec<f64>> {
    let plan = prep.plan(grid)?;
    let fwd = forward(prep, &plan, weights);
    Ok(backward(prep, &plan, &fwd, &output_gradient(prep, &fwd.out, terms)))
}

/// `w_int * L_int + w_grad * L_grad` at a grid state.
pub fn analytic_objective(prep: &PreparedPair, weights: &[f64], grid: usize, terms: Terms) -> Result<f64> {
    let plan = prep.plan(grid)?;
    let out = forward(prep, &plan, weights).out;
    Ok(terms.w_int * intensity_value(prep, &out) + terms.w_grad * gradient_value(prep, &out))
}

/// Evaluates losses of grid states for one pair under one genome.
struct Objective<'a> {
    prep: &'a PreparedPair,
    plan: ResizePlan,
    genome: &'a [f64],
    deco: &'a DecoSlot,
}

impl Objective<'_> {
    fn components(&self, out: &[f64]) -> Result<[f64; COMPONENT_COUNT]> {
        let (ssim, deco, cls) = self.numeric_terms(out, true)?;
        Ok([
            ssim,
            deco,
            gradient_value(self.prep, out),
            intensity_value(self.prep, out),
            cls,
            0.0,
            0.0,
        ])
    }

    /// `(L_ssim, L_deco, L_surrogate)`; terms with zero weight are skipped
    /// unless `all` is set.
    fn numeric_terms(&self, out: &[f64], all: bool) -> Result<(f64, f64, f64)> {
        let prep = self.prep;
        let g = self.genome;
        let ssim = if all || g[0] != 0.0 {
            let (a, b) = SsimReference::compare_both(&prep.ssim_ir, &prep.ssim_vis, out);
            (1.0 - a) + (1.0 - b)
        } else {
            0.0
        };
        let deco = if !self.deco.is_stubbed() && (all || g[1] != 0.0) {
            let fused = Image::new(prep.height, prep.width, out.to_vec())?;
            self.deco.evaluate(&fused, &prep.pair.ir, &prep.pair.vis)?
        } else {
            0.0
        };
        let cls = if all || g[4] != 0.0 {
            surrogate_plane(out, prep.height, prep.width, &prep.pair.boxes)?
        } else {
            0.0
        };
        Ok((ssim, deco, cls))
    }

    fn numeric_value(&self, weights: &[f64]) -> Result<f64> {
        let out = forward(self.prep, &self.plan, weights).out;
        let (s, d, c) = self.numeric_terms(&out, false)?;
        Ok(self.genome[0] * s + self.genome[1] * d + self.genome[4] * c)
    }

    fn needs_numeric(&self) -> bool {
        let g = self.genome;
        g[0] != 0.0 || (g[1] != 0.0 && !self.deco.is_stubbed()) || g[4] != 0.0
    }

    fn loss(&self, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        let out = forward(self.prep, &self.plan, weights).out;
        let c = self.components(&out)?;
        Ok((combine(&c, self.genome)?, out))
    }

    fn gradient(&self, weights: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        let terms = Terms {
            w_int: self.genome[3],
            w_grad: self.genome[2],
        };
        let fwd = forward(self.prep, &self.plan, weights);
        let mut grad = backward(self.prep, &self.plan, &fwd, &output_gradient(self.prep, &fwd.out, terms));
        if self.needs_numeric() {
            let mut probe = weights.to_vec();
            for k in 0..probe.len() {
                let orig = probe[k];
                probe[k] = orig + fd_step;
                let up = self.numeric_value(&probe)?;
                probe[k] = orig - fd_step;
                let down = self.numeric_value(&probe)?;
                probe[k] = orig;
                grad[k] += (up - down) / (2.0 * fd_step);
            }
        }
        Ok(grad)
    }
}

/// Outcome of one inner optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    /// Lowest-loss state observed.
    pub params: FusionParams,
    pub best_loss: f64,
    /// Combined loss before each update; one entry per step.
    pub curve: Vec<f64>,
}

fn check_genome(genome: &[f64]) -> Result<()> {
    if genome.len() != COMPONENT_COUNT {
        return Err(Error::Shape(format!(
            "genome has {} genes, expected {COMPONENT_COUNT}",
            genome.len()
        )));
    }
    if let Some(g) = genome.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::param("genome", format!("gene {g} must be finite and >= 0")));
    }
    Ok(())
}

/// Gradient descent on the genome-weighted loss with respect to the grid.
pub fn inner_optimize(
    params: &FusionParams,
    prep: &PreparedPair,
    genome: &[f64],
    deco: &DecoSlot,
    fd_step: f64,
) -> Result<InnerResult> {
    check_genome(genome)?;
    if params.steps == 0 {
        return Err(Error::Config("inner optimization needs at least one step".into()));
    }
    if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning_rate {} must be positive",
            params.learning_rate
        )));
    }
    let obj = Objective {
        prep,
        plan: prep.plan(params.grid)?,
        genome,
        deco,
    };
    let mut w = params.weights.clone();
    let mut curve = Vec::with_capacity(params.steps);
    let mut best = (f64::INFINITY, w.clone());
    for step in 0..=params.steps {
        let (loss, _) = obj.loss(&w)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("combined loss became {loss}"),
            });
        }
        if loss < best.0 {
            best = (loss, w.clone());
        }
        if step == params.steps {
            break;
        }
        curve.push(loss);
        let grad = obj.gradient(&w, fd_step)?;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= params.learning_rate * gi;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: "grid weights became non-finite".into(),
            });
        }
    }
    Ok(InnerResult {
        params: FusionParams {
            weights: best.1,
            ..params.clone()
        },
        best_loss: best.0,
        curve,
    })
}

/// Loss breakdown of the fused output of a grid state.
pub fn pair_breakdown(
    params: &FusionParams,
    prep: &PreparedPair,
    genome: &[f64],
    deco: &DecoSlot,
) -> Result<(LossBreakdown, Image)> {
    check_genome(genome)?;
    let obj = Objective {
        prep,
        plan: prep.plan(params.grid)?,
        genome,
        deco,
    };
    let out = forward(prep, &obj.plan, &params.weights).out;
    let c = obj.components(&out)?;
    let breakdown = LossBreakdown::from_components(c, genome, deco.is_stubbed())?;
    Ok((breakdown, Image::new(prep.height, prep.width, out)?))
}

/// Mean best inner loss over all pairs; the fitness signal of the outer loop.
pub fn evaluate_genome(
    pairs: &[PreparedPair],
    inner: &InnerConfig,
    genome: &[f64],
    deco: &DecoSlot,
) -> Result<f64> {
    let init = FusionParams::initial(inner)?;
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            inner_optimize(&init, p, genome, deco, inner.fd_step)
                .map(|r| r.best_loss)
                .map_err(|e| Error::Evaluation {
                    genome: genome.to_vec(),
                    reason: format!("pair {}: {e}", p.pair.name),
                })
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Result of one pair inside an arm.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub name: String,
    pub params: FusionParams,
    pub curve: Vec<f64>,
    pub breakdown: LossBreakdown,
    /// Combined loss of the same output under all-ones coefficients.
    pub reference_loss: f64,
    pub fused: Image,
    pub metrics: Option<MetricReport>,
}

/// One row of the three-way comparison.
#[derive(Debug, Clone)]
pub struct ArmReport {
    pub genome: Vec<f64>,
    pub mean_combined_loss: f64,
    pub mean_reference_loss: f64,
    pub pairs: Vec<PairOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub evolve: Duration,
    pub arms: Duration,
    pub metrics: Duration,
}

#[derive(Debug, Clone)]
pub struct CoopRunReport {
    pub evo: EvoOutcome,
    pub experience: ArmReport,
    pub equals: ArmReport,
    pub evolved: ArmReport,
    pub timings: StageTimings,
}

impl CoopRunReport {
    pub fn arms(&self) -> [(&'static str, &ArmReport); 3] {
        [
            ("experience", &self.experience),
            ("equals", &self.equals),
            ("evolved", &self.evolved),
        ]
    }
}

/// Extra switches for [`cooperative_run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoopOptions {
    /// Score every fused output with the quality metrics.
    pub metrics: bool,
    pub mi_bins: usize,
}

impl Default for CoopOptions {
    fn default() -> Self {
        Self {
            metrics: true,
            mi_bins: metrics::DEFAULT_MI_BINS,
        }
    }
}

fn run_arm(
    pairs: &[PreparedPair],
    inner: &InnerConfig,
    genome: &[f64],
    deco: &DecoSlot,
) -> Result<ArmReport> {
    let init = FusionParams::initial(inner)?;
    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|p| {
            let ctx = |e: Error| Error::Evaluation {
                genome: genome.to_vec(),
                reason: format!("pair {}: {e}", p.pair.name),
            };
            let r = inner_optimize(&init, p, genome, deco, inner.fd_step).map_err(ctx)?;
            let (breakdown, fused) = pair_breakdown(&r.params, p, genome, deco).map_err(ctx)?;
            let reference_loss = combine(&breakdown.components(), &EQUALS_GENOME)?;
            Ok(PairOutcome {
                name: p.pair.name.clone(),
                params: r.params,
                curve: r.curve,
                breakdown,
                reference_loss,
                fused,
                metrics: None,
            })
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    Ok(ArmReport {
        genome: genome.to_vec(),
        mean_combined_loss: outcomes.iter().map(|o| o.breakdown.combined).sum::<f64>() / n,
        mean_reference_loss: outcomes.iter().map(|o| o.reference_loss).sum::<f64>() / n,
        pairs: outcomes,
    })
}

/// Runs the genetic search with inner optimization as its evaluator, then
/// retrains and scores the experience, equals and evolved genomes.
pub fn cooperative_run(
    pairs: &[FusionPair],
    evo_config: &EvoConfig,
    inner: &InnerConfig,
    deco: &DecoSlot,
    options: CoopOptions,
) -> Result<CoopRunReport> {
    if pairs.is_empty() {
        return Err(Error::Config("cooperative run needs at least one image pair".into()));
    }
    inner.validate()?;
    evo_config.validate()?;
    if evo_config.bounds.len() != COMPONENT_COUNT {
        return Err(Error::Config(format!(
            "fusion genomes have {COMPONENT_COUNT} genes, bounds list {}",
            evo_config.bounds.len()
        )));
    }
    let prepared: Vec<PreparedPair> = pairs
        .iter()
        .cloned()
        .map(PreparedPair::new)
        .collect::<Result<_>>()?;

    let t0 = Instant::now();
    let outcome = evo::run(evo_config, |g: &Genome| {
        evaluate_genome(&prepared, inner, &g.weights, deco)
    })?;
    let evolve = t0.elapsed();

    let t1 = Instant::now();
    let mut experience = run_arm(&prepared, inner, &EXPERIENCE_GENOME, deco)?;
    let mut equals = run_arm(&prepared, inner, &EQUALS_GENOME, deco)?;
    let mut evolved = run_arm(&prepared, inner, &outcome.best.genome.weights, deco)?;
    let arms = t1.elapsed();

    let t2 = Instant::now();
    if options.metrics {
        for arm in [&mut experience, &mut equals, &mut evolved] {
            for (o, p) in arm.pairs.iter_mut().zip(&prepared) {
                o.metrics = Some(metrics::evaluate(&o.fused, &p.pair.ir, &p.pair.vis, options.mi_bins)?);
            }
        }
    }
    let metrics = t2.elapsed();

    Ok(CoopRunReport {
        evo: outcome,
        experience,
        equals,
        evolved,
        timings: StageTimings {
            evolve,
            arms,
            metrics,
        },
    })
}
