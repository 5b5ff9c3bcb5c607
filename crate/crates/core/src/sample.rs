//! Synthetic "hot blob on textured ground" pairs.
//!
//! The visible image carries texture and shading but shows targets only
//! faintly. The infrared image is smooth and cool except for bright Gaussian
//! blobs at the targets. Each blob gets a labeled box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::Image;
use crate::losses::BBox;
use crate::pipeline::FusionPair;

struct Blob {
    r: f64,
    c: f64,
    sigma: f64,
    heat: f64,
}

/// Deterministic pair of the given size (both sides at least 16).
pub fn synthetic_pair(name: &str, seed: u64, height: usize, width: usize) -> Result<FusionPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let side = hf.min(wf);

    let count = rng.gen_range(1..=3);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let sigma = rng.gen_range(0.05..0.09) * side;
            let margin = 2.0 * sigma + 1.0;
            Blob {
                r: rng.gen_range(margin..hf - margin),
                c: rng.gen_range(margin..wf - margin),
                sigma,
                heat: rng.gen_range(0.55..0.75),
            }
        })
        .collect();

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.03..0.08),
            )
        })
        .collect();
    let grain: Vec<f64> = (0..height * width).map(|_| rng.gen_range(-0.04..0.04)).collect();
    let tilt = rng.gen_range(-0.15..0.15);

    let heat = |r: f64, c: f64| -> f64 {
        blobs
            .iter()
            .map(|b| {
                let d2 = (r - b.r).powi(2) + (c - b.c).powi(2);
                b.heat * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum()
    };

    let vis = Image::clamped(
        height,
        width,
        (0..height * width)
            .map(|i| {
                let (r, c) = ((i / width) as f64, (i % width) as f64);
                let texture: f64 = waves
                    .iter()
                    .map(|(fy, fx, ph, amp)| amp * (fy * r + fx * c + ph).sin())
                    .sum();
                0.5 + tilt * (r / hf - 0.5) + texture + grain[i] - 0.1 * heat(r, c)
            })
            .collect(),
    )?;
    let ir = Image::from_fn(height, width, |r, c| {
        let (r, c) = (r as f64, c as f64);
        let ground = 0.2 + 0.05 * (0.07 * r + 0.05 * c).sin();
        (ground + heat(r, c)).clamp(0.0, 1.0)
    })?;

    let boxes = blobs
        .iter()
        .map(|b| {
            let s = 4.0 * b.sigma;
            BBox::new(b.c + 0.5, b.r + 0.5, s, s)
        })
        .collect::<Result<Vec<_>>>()?;
    FusionPair::new(name, ir, vis, boxes)
}

/// The bundled demo set: `count` pairs named `pair0`, `pair1`, ...
pub fn sample_set(count: usize, side: usize) -> Result<Vec<FusionPair>> {
    (0..count)
        .map(|k| synthetic_pair(&format!("pair{k}"), 1000 + k as u64, side, side))
        .collect()
}
