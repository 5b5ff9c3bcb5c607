//! Fusion quality metrics: mutual information, SSIM, pixel-domain VIF and
//! the Xydeas-Petrovic gradient transfer score (Qabf).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Image};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const DEFAULT_MI_BINS: usize = 256;

/// Noise variance of the VIF channel model, on the 0-255 intensity scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_SCALES: u32 = 4;
pub const VIF_MIN_SIDE: usize = 32;

/// Sigmoid constants of the Qabf strength and orientation preservation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QabfConstants {
    pub gamma_g: f64,
    pub kappa_g: f64,
    pub sigma_g: f64,
    pub gamma_a: f64,
    pub kappa_a: f64,
    pub sigma_a: f64,
}

pub const QABF: QabfConstants = QabfConstants {
    gamma_g: 0.9994,
    kappa_g: -15.0,
    sigma_g: 0.5,
    gamma_a: 0.9879,
    kappa_a: -22.0,
    sigma_a: 0.8,
};

pub const METRIC_VARIANT: &str =
    "mi:natural-log joint histogram; ssim:gaussian 11x11 sigma 1.5 valid windows; \
     vif:pixel-domain 4 scales replicate padding noise var 2.0 on 0-255; \
     qabf:sobel, line-orientation angle";

// ---------------------------------------------------------------------------
// Mutual information

fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|c| *c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Shannon entropy (nats) of the intensity histogram.
pub fn entropy(img: &Image, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::param("bins", format!("{bins} bins requested, need at least 2")));
    }
    let mut counts = vec![0u64; bins];
    for v in img.data() {
        counts[grid::bin_index(*v, bins)] += 1;
    }
    Ok(entropy_of_counts(counts.into_iter(), img.len() as f64))
}

/// `MI(a, b) = H(a) + H(b) - H(a, b)` in nats.
pub fn mutual_information(a: &Image, b: &Image, bins: usize) -> Result<f64> {
    let joint = grid::joint_histogram(a, b, bins)?;
    let total = joint.total() as f64;
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            let c = joint.get(i, j);
            pa[i] += c;
            pb[j] += c;
        }
    }
    let h_ab = entropy_of_counts(joint.counts.iter().copied(), total);
    let h_a = entropy_of_counts(pa.into_iter(), total);
    let h_b = entropy_of_counts(pb.into_iter(), total);
    Ok((h_a + h_b - h_ab).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiScores {
    pub total: f64,
    pub fused_ir: f64,
    pub fused_vis: f64,
}

pub fn metric_mi(fused: &Image, ir: &Image, vis: &Image, bins: usize) -> Result<MiScores> {
    fused.ensure_same_dims(ir, "fused vs infrared")?;
    fused.ensure_same_dims(vis, "fused vs visible")?;
    let fused_ir = mutual_information(fused, ir, bins)?;
    let fused_vis = mutual_information(fused, vis, bins)?;
    Ok(MiScores {
        total: fused_ir + fused_vis,
        fused_ir,
        fused_vis,
    })
}

// ---------------------------------------------------------------------------
// SSIM

/// Precomputed local statistics of one SSIM operand.
///
/// Comparing many candidates against the same reference only filters the
/// candidate-dependent maps.
#[derive(Debug, Clone)]
pub struct SsimReference {
    taps: Vec<f64>,
    height: usize,
    width: usize,
    plane: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

impl SsimReference {
    pub fn new(img: &Image) -> Result<Self> {
        Self::from_plane(img.data(), img.height(), img.width())
    }

    pub fn from_plane(plane: &[f64], height: usize, width: usize) -> Result<Self> {
        if height < SSIM_WINDOW || width < SSIM_WINDOW {
            return Err(Error::Shape(format!(
                "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, image is {height}x{width}"
            )));
        }
        let taps = grid::gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)?;
        let (mu, _, _) = grid::filter_separable_valid(plane, height, width, &taps);
        let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
        let (sq_mu, _, _) = grid::filter_separable_valid(&sq, height, width, &taps);
        let var = sq_mu.iter().zip(&mu).map(|(s, m)| s - m * m).collect();
        Ok(Self {
            taps,
            height,
            width,
            plane: plane.to_vec(),
            mu,
            var,
        })
    }

    /// Mean SSIM between the reference and `other` (same dimensions).
    pub fn compare(&self, other: &[f64]) -> f64 {
        let stats = self.candidate_stats(other);
        self.finish(other, &stats)
    }

    fn candidate_stats(&self, other: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(other.len(), self.plane.len());
        let (h, w) = (self.height, self.width);
        let (mu_b, _, _) = grid::filter_separable_valid(other, h, w, &self.taps);
        let sq: Vec<f64> = other.iter().map(|v| v * v).collect();
        let (sq_b, _, _) = grid::filter_separable_valid(&sq, h, w, &self.taps);
        let var_b = sq_b.iter().zip(&mu_b).map(|(s, m)| s - m * m).collect();
        (mu_b, var_b)
    }

    fn finish(&self, other: &[f64], (mu_b, var_b): &(Vec<f64>, Vec<f64>)) -> f64 {
        let (h, w) = (self.height, self.width);
        let cross: Vec<f64> = other.iter().zip(&self.plane).map(|(a, b)| a * b).collect();
        let (cross_mu, _, _) = grid::filter_separable_valid(&cross, h, w, &self.taps);
        let n = mu_b.len();
        let mut total = 0.0;
        for i in 0..n {
            let (ma, mb) = (self.mu[i], mu_b[i]);
            let (va, vb) = (self.var[i], var_b[i]);
            let cov = cross_mu[i] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total / n as f64
    }

    /// SSIM of `other` against two references of the same size, sharing the
    /// candidate's local statistics.
    pub fn compare_both(first: &Self, second: &Self, other: &[f64]) -> (f64, f64) {
        assert_eq!((first.height, first.width), (second.height, second.width));
        let stats = first.candidate_stats(other);
        (first.finish(other, &stats), second.finish(other, &stats))
    }
}

/// Mean windowed SSIM (11x11 Gaussian, sigma 1.5, unit dynamic range).
pub fn metric_ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b, "SSIM operands")?;
    Ok(SsimReference::new(a)?.compare(b.data()))
}

// ---------------------------------------------------------------------------
// VIF

fn downsample2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for r in (0..h).step_by(2) {
        for c in (0..w).step_by(2) {
            out.push(plane[r * w + c]);
        }
    }
    (out, oh, ow)
}

/// Pixel-domain visual information fidelity of `distorted` against `reference`.
pub fn vif(distorted: &Image, reference: &Image) -> Result<f64> {
    distorted.ensure_same_dims(reference, "VIF operands")?;
    let (mut h, mut w) = reference.dims();
    if h < VIF_MIN_SIDE || w < VIF_MIN_SIDE {
        return Err(Error::Shape(format!(
            "VIF needs at least {VIF_MIN_SIDE}x{VIF_MIN_SIDE}, image is {h}x{w}"
        )));
    }
    let mut rf: Vec<f64> = reference.data().iter().map(|v| v * 255.0).collect();
    let mut ds: Vec<f64> = distorted.data().iter().map(|v| v * 255.0).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=VIF_SCALES {
        let n = (1usize << (VIF_SCALES + 1 - scale)) + 1;
        let taps = grid::gaussian_kernel_1d(n, n as f64 / 5.0)?;
        if scale > 1 {
            let (r2, nh, nw) = downsample2(&grid::filter_separable_same(&rf, h, w, &taps), h, w);
            let (d2, _, _) = downsample2(&grid::filter_separable_same(&ds, h, w, &taps), h, w);
            rf = r2;
            ds = d2;
            h = nh;
            w = nw;
        }
        let mu1 = grid::filter_separable_same(&rf, h, w, &taps);
        let mu2 = grid::filter_separable_same(&ds, h, w, &taps);
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
        let e11 = grid::filter_separable_same(&prod(&rf, &rf), h, w, &taps);
        let e22 = grid::filter_separable_same(&prod(&ds, &ds), h, w, &taps);
        let e12 = grid::filter_separable_same(&prod(&rf, &ds), h, w, &taps);
        for i in 0..h * w {
            let (n_i, d_i) = vif_terms(
                e11[i] - mu1[i] * mu1[i],
                e22[i] - mu2[i] * mu2[i],
                e12[i] - mu1[i] * mu2[i],
            );
            num += n_i;
            den += d_i;
        }
    }
    Ok(vif_ratio(num, den))
}

/// Per-pixel numerator and denominator contributions of the VIF sums.
pub(crate) fn vif_terms(s11: f64, s22: f64, s12: f64) -> (f64, f64) {
    const EPS: f64 = 1e-10;
    let mut s11 = s11.max(0.0);
    let s22 = s22.max(0.0);
    let mut g = s12 / (s11 + EPS);
    let mut sv = s22 - g * s12;
    if s11 < EPS {
        g = 0.0;
        sv = s22;
        s11 = 0.0;
    }
    if s22 < EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s22;
        g = 0.0;
    }
    if sv <= EPS {
        sv = EPS;
    }
    let num = (1.0 + g * g * s11 / (sv + VIF_NOISE_VAR)).log10();
    let den = (1.0 + s11 / VIF_NOISE_VAR).log10();
    (num, den)
}

pub(crate) fn vif_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        // Flat reference: nothing to preserve, nothing lost.
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Qabf

/// Edge strength and line orientation from Sobel responses.
fn edge_strength_orientation(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let g = grid::sobel_gradient(img);
    let angle = g
        .dx
        .iter()
        .zip(&g.dy)
        .map(|(dx, dy)| {
            if *dx == 0.0 {
                std::f64::consts::FRAC_PI_2
            } else {
                (dy / dx).atan()
            }
        })
        .collect();
    (g.magnitude, angle)
}

/// Preservation value of one input pixel's edge in the fused image.
pub(crate) fn qabf_preservation(g_in: f64, a_in: f64, g_f: f64, a_f: f64, k: &QabfConstants) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let strength = if g_in > g_f {
        g_f / g_in
    } else if g_in < g_f {
        g_in / g_f
    } else {
        1.0
    };
    let orientation = ((a_in - a_f).abs() - FRAC_PI_2).abs() / FRAC_PI_2;
    let qg = k.gamma_g / (1.0 + (k.kappa_g * (strength - k.sigma_g)).exp());
    let qa = k.gamma_a / (1.0 + (k.kappa_a * (orientation - k.sigma_a)).exp());
    qg * qa
}

/// Edge-strength weighted gradient transfer from both inputs into `fused`.
pub fn metric_qabf(fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    fused.ensure_same_dims(ir, "fused vs infrared")?;
    fused.ensure_same_dims(vis, "fused vs visible")?;
    let (ga, aa) = edge_strength_orientation(ir);
    let (gb, ab) = edge_strength_orientation(vis);
    let (gf, af) = edge_strength_orientation(fused);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..gf.len() {
        let qa = qabf_preservation(ga[i], aa[i], gf[i], af[i], &QABF);
        let qb = qabf_preservation(gb[i], ab[i], gf[i], af[i], &QABF);
        num += qa * ga[i] + qb * gb[i];
        den += ga[i] + gb[i];
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mi: f64,
    pub mi_fused_ir: f64,
    pub mi_fused_vis: f64,
    /// Mean of the two per-input SSIM scores.
    pub ssim: f64,
    pub ssim_fused_ir: f64,
    pub ssim_fused_vis: f64,
    /// Mean of the two per-input VIF scores.
    pub vif: f64,
    pub vif_fused_ir: f64,
    pub vif_fused_vis: f64,
    pub qabf: f64,
    pub mi_bins: usize,
    pub qabf_constants: QabfConstants,
    pub metric_variant: String,
}

pub fn evaluate(fused: &Image, ir: &Image, vis: &Image, bins: usize) -> Result<MetricReport> {
    let mi = metric_mi(fused, ir, vis, bins)?;
    let ssim_fused_ir = metric_ssim(ir, fused)?;
    let ssim_fused_vis = metric_ssim(vis, fused)?;
    let vif_fused_ir = vif(fused, ir)?;
    let vif_fused_vis = vif(fused, vis)?;
    Ok(MetricReport {
        mi: mi.total,
        mi_fused_ir: mi.fused_ir,
        mi_fused_vis: mi.fused_vis,
        ssim: 0.5 * (ssim_fused_ir + ssim_fused_vis),
        ssim_fused_ir,
        ssim_fused_vis,
        vif: 0.5 * (vif_fused_ir + vif_fused_vis),
        vif_fused_ir,
        vif_fused_vis,
        qabf: metric_qabf(fused, ir, vis)?,
        mi_bins: bins,
        qabf_constants: QABF,
        metric_variant: METRIC_VARIANT.to_string(),
    })
}
