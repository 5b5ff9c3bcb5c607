//! Discriminative enhancer: a parameter-free gate that boosts activations
//! standing out from their surround.
//!
//! Each channel is mapped through a sigmoid, `y = S(x)`, and every element is
//! rescaled by `S(y^2 / mean(y))`. Elements above the channel's typical
//! response get a larger gate than those below it, which widens the gap
//! between salient objects and background.

use crate::error::{Error, Result};
use crate::grid::FeatureMap;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Surround-modulation statistics of a map with values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerStats {
    /// Mean of the raw values.
    pub mean_mu: f64,
    /// Mean of the sigmoid-mapped values.
    pub mean_mu_y: f64,
    /// `sum |x_i - mu|`
    pub modulation_raw: f64,
    /// `sum |x_i^2 / mu - mu|`
    pub modulation_boosted: f64,
}

/// Gate values `S(S(x_i)^2 / mu_y)` for one plane.
pub fn gate_plane(plane: &[f64]) -> Vec<f64> {
    let ys: Vec<f64> = plane.iter().map(|x| sigmoid(*x)).collect();
    let mu_y = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| sigmoid(y * y / mu_y)).collect()
}

/// Enhances a single plane.
pub fn enhance_plane(plane: &[f64]) -> Vec<f64> {
    plane
        .iter()
        .zip(gate_plane(plane))
        .map(|(x, g)| x * g)
        .collect()
}

/// Applies the enhancer to every channel independently.
pub fn discriminative_enhance(x: &FeatureMap) -> FeatureMap {
    let mut data = Vec::with_capacity(x.data().len());
    for c in 0..x.channels() {
        data.extend(enhance_plane(x.channel(c)));
    }
    let (c, h, w) = x.shape();
    FeatureMap::new(c, h, w, data).expect("enhancement preserves shape and finiteness")
}

/// Computes the modulation statistics over all elements of `x`.
pub fn modulation_stats(x: &FeatureMap) -> Result<EnhancerStats> {
    let data = x.data();
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::param(
            "x",
            format!("value {v} outside [0, 1]; the modulation analysis needs unit-range maps"),
        ));
    }
    let n = data.len() as f64;
    let mu = data.iter().sum::<f64>() / n;
    if mu <= 0.0 {
        return Err(Error::UndefinedStatistic(
            "mean of the map is zero, x^2/mu is undefined".into(),
        ));
    }
    let mean_mu_y = data.iter().map(|v| sigmoid(*v)).sum::<f64>() / n;
    let modulation_raw = data.iter().map(|v| (v - mu).abs()).sum();
    let modulation_boosted = data.iter().map(|v| (v * v / mu - mu).abs()).sum();
    let stats = EnhancerStats {
        mean_mu: mu,
        mean_mu_y,
        modulation_raw,
        modulation_boosted,
    };
    // |x^2/mu - mu| = |x - mu| (x + mu) / mu and (x + mu) / mu >= 1 for x >= 0.
    debug_assert!(stats.modulation_boosted + 1e-12 * n >= stats.modulation_raw);
    Ok(stats)
}
