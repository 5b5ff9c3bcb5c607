//! Cross-dimensional embedding: detection features attend over the two
//! fusion streams, followed by self-attention. Forward pass only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::FeatureMap;

/// Row-major `rows x cols` matrix of tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tokens {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("token matrix {rows}x{cols} is empty")));
        }
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "token matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Width of each token (the model dimension).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Reshapes `H*W` tokens back into a `cols x height x width` feature map.
    pub fn to_feature_map(&self, height: usize, width: usize) -> Result<FeatureMap> {
        if height * width != self.rows {
            return Err(Error::Shape(format!(
                "{} tokens cannot fill a {height}x{width} grid",
                self.rows
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; self.cols * plane];
        for t in 0..self.rows {
            for (d, v) in self.row(t).iter().enumerate() {
                data[d * plane + t] = *v;
            }
        }
        FeatureMap::new(self.cols, height, width, data)
    }
}

/// Location of the fusion patch inside the detection feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Input-image pixels per detection-feature pixel.
    pub stride: usize,
}

impl PatchSpec {
    /// Converts an image-space crop into detection-feature coordinates.
    pub fn from_image_crop(
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("stride", "stride must be a positive integer"));
        }
        Ok(Self {
            top: top / stride,
            left: left / stride,
            height: height / stride,
            width: width / stride,
            stride,
        })
    }

    pub fn validate(&self, det_height: usize, det_width: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::param("stride", "stride must be a positive integer"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Bounds(format!(
                "patch {}x{} is empty",
                self.height, self.width
            )));
        }
        if self.top + self.height > det_height {
            return Err(Error::Bounds(format!(
                "bottom edge {} exceeds detection map height {det_height}",
                self.top + self.height
            )));
        }
        if self.left + self.width > det_width {
            return Err(Error::Bounds(format!(
                "right edge {} exceeds detection map width {det_width}",
                self.left + self.width
            )));
        }
        Ok(())
    }
}

/// Slices the patch out of the detection feature map, copying values exactly.
pub fn patch_align(det: &FeatureMap, spec: &PatchSpec) -> Result<FeatureMap> {
    spec.validate(det.height(), det.width())?;
    let mut data = Vec::with_capacity(det.channels() * spec.height * spec.width);
    for c in 0..det.channels() {
        for r in spec.top..spec.top + spec.height {
            for col in spec.left..spec.left + spec.width {
                data.push(det.get(c, r, col));
            }
        }
    }
    FeatureMap::new(det.channels(), spec.height, spec.width, data)
}

/// A per-token linear map `channels_in -> d_model` (a 1x1 convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "linear {in_dim}->{out_dim} needs {} weights and {out_dim} biases",
                in_dim * out_dim
            )));
        }
        if weight.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::param("weight", "weights must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// Uniform init in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`, zero bias.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }
}

/// Projections for the detection-patch, infrared and visible streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub detection: Linear,
    pub infrared: Linear,
    pub visible: Linear,
    pub d_model: usize,
    pub seed: u64,
}

impl ProjectionWeights {
    pub fn seeded(
        det_channels: usize,
        ir_channels: usize,
        vis_channels: usize,
        d_model: usize,
        seed: u64,
    ) -> Result<Self> {
        if d_model == 0 || det_channels == 0 || ir_channels == 0 || vis_channels == 0 {
            return Err(Error::param("d_model", "all dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            detection: Linear::seeded(det_channels, d_model, &mut rng),
            infrared: Linear::seeded(ir_channels, d_model, &mut rng),
            visible: Linear::seeded(vis_channels, d_model, &mut rng),
            d_model,
            seed,
        })
    }
}

/// Flattens spatial positions into tokens and applies `weights` to each one.
pub fn project(stream: &FeatureMap, weights: &Linear) -> Result<Tokens> {
    if stream.channels() != weights.in_dim {
        return Err(Error::Shape(format!(
            "stream has {} channels but projection expects {}",
            stream.channels(),
            weights.in_dim
        )));
    }
    let n = stream.plane_len();
    let mut data = Vec::with_capacity(n * weights.out_dim);
    for t in 0..n {
        for o in 0..weights.out_dim {
            let w = &weights.weight[o * weights.in_dim..(o + 1) * weights.in_dim];
            let mut acc = weights.bias[o];
            for (c, wc) in w.iter().enumerate() {
                acc += wc * stream.channel(c)[t];
            }
            data.push(acc);
        }
    }
    Tokens::new(n, weights.out_dim, data)
}

/// In-place numerically stable softmax.
fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Row-stochastic attention matrix `softmax(Q K^T / sqrt(d))`, `|Q| x |K|`.
pub fn attention_weights(q: &Tokens, k: &Tokens) -> Result<Vec<f64>> {
    if q.cols != k.cols {
        return Err(Error::Shape(format!(
            "query width {} differs from key width {}",
            q.cols, k.cols
        )));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut scores = vec![0.0; q.rows * k.rows];
    for i in 0..q.rows {
        let qi = q.row(i);
        let row = &mut scores[i * k.rows..(i + 1) * k.rows];
        for (j, s) in row.iter_mut().enumerate() {
            *s = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax(row);
    }
    Ok(scores)
}

/// Scaled dot-product attention with queries from the detection patch,
/// keys from the infrared stream and values from the visible stream.
pub fn cross_dimensional_embed(q: &Tokens, k: &Tokens, v: &Tokens) -> Result<Tokens> {
    if k.rows != v.rows {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            k.rows, v.rows
        )));
    }
    if v.cols != q.cols {
        return Err(Error::Shape(format!(
            "value width {} differs from model width {}",
            v.cols, q.cols
        )));
    }
    let attn = attention_weights(q, k)?;
    let mut out = vec![0.0; q.rows * v.cols];
    for i in 0..q.rows {
        let a = &attn[i * k.rows..(i + 1) * k.rows];
        let o = &mut out[i * v.cols..(i + 1) * v.cols];
        for (j, w) in a.iter().enumerate() {
            for (od, vd) in o.iter_mut().zip(v.row(j)) {
                *od += w * vd;
            }
        }
    }
    Tokens::new(q.rows, v.cols, out)
}

pub fn self_attend(tokens: &Tokens) -> Result<Tokens> {
    cross_dimensional_embed(tokens, tokens, tokens)
}

/// The full block: patch align, three projections, cross-attention and
/// self-attention. Output is `d_model x patch.height x patch.width`.
#[derive(Debug, Clone)]
pub struct CdeBlock {
    pub weights: ProjectionWeights,
}

impl CdeBlock {
    pub fn new(weights: ProjectionWeights) -> Self {
        Self { weights }
    }

    pub fn forward(
        &self,
        det: &FeatureMap,
        patch: &PatchSpec,
        ir: &FeatureMap,
        vis: &FeatureMap,
    ) -> Result<FeatureMap> {
        if ir.plane_len() != vis.plane_len() {
            return Err(Error::Shape(format!(
                "infrared stream has {} positions, visible has {}",
                ir.plane_len(),
                vis.plane_len()
            )));
        }
        let pdet = patch_align(det, patch)?;
        let q = project(&pdet, &self.weights.detection)?;
        let k = project(ir, &self.weights.infrared)?;
        let v = project(vis, &self.weights.visible)?;
        let attended = cross_dimensional_embed(&q, &k, &v)?;
        self_attend(&attended)?.to_feature_map(patch.height, patch.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tokens(rows: usize, cols: usize, seed: u64) -> Tokens {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tokens::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // Scalar-loop oracle for softmax(QK^T/sqrt d) V.
    fn attention_oracle(q: &Tokens, k: &Tokens, v: &Tokens) -> Vec<Vec<f64>> {
        let d = q.cols() as f64;
        (0..q.rows())
            .map(|i| {
                let logits: Vec<f64> = (0..k.rows())
                    .map(|j| {
                        let mut s = 0.0;
                        for t in 0..q.cols() {
                            s += q.row(i)[t] * k.row(j)[t];
                        }
                        s / d.sqrt()
                    })
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let mut out = vec![0.0; v.cols()];
                for j in 0..k.rows() {
                    let p = logits[j].exp() / z;
                    for t in 0..v.cols() {
                        out[t] += p * v.row(j)[t];
                    }
                }
                out
            })
            .collect()
    }

    #[test]
    fn patch_align_cases() {
        let det = random_map(3, 6, 7, 1);
        let full = PatchSpec { top: 0, left: 0, height: 6, width: 7, stride: 1 };
        assert_eq!(patch_align(&det, &full).unwrap(), det);

        let one = PatchSpec { top: 2, left: 5, height: 1, width: 1, stride: 1 };
        let p = patch_align(&det, &one).unwrap();
        for c in 0..3 {
            assert_eq!(p.get(c, 0, 0), det.get(c, 2, 5));
        }

        let spec = PatchSpec { top: 1, left: 2, height: 4, width: 3, stride: 8 };
        let p = patch_align(&det, &spec).unwrap();
        for c in 0..3 {
            for r in 0..4 {
                for col in 0..3 {
                    assert_eq!(p.data()[c * 12 + r * 3 + col], det.data()[c * 42 + (r + 1) * 7 + col + 2]);
                }
            }
        }
    }

    #[test]
    fn patch_align_bounds_errors_name_edge() {
        let det = random_map(1, 4, 4, 2);
        let bottom = PatchSpec { top: 2, left: 0, height: 3, width: 1, stride: 1 };
        let err = patch_align(&det, &bottom).unwrap_err().to_string();
        assert!(err.contains("bottom edge"), "{err}");
        let right = PatchSpec { top: 0, left: 3, height: 1, width: 2, stride: 1 };
        let err = patch_align(&det, &right).unwrap_err().to_string();
        assert!(err.contains("right edge"), "{err}");
    }

    #[test]
    fn patch_from_image_crop() {
        let p = PatchSpec::from_image_crop(16, 8, 32, 24, 8).unwrap();
        assert_eq!((p.top, p.left, p.height, p.width), (2, 1, 4, 3));
        assert!(PatchSpec::from_image_crop(0, 0, 8, 8, 0).is_err());
    }

    #[test]
    fn project_cases() {
        let map = random_map(1, 3, 3, 3);
        let id = Linear::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(project(&map, &id).unwrap().data(), map.data());

        let zero = Linear::new(1, 4, vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(project(&map, &zero).unwrap().data().iter().all(|v| *v == 0.0));

        let two = random_map(2, 4, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lin = Linear::seeded(2, 3, &mut rng);
        let tokens = project(&two, &lin).unwrap();
        for t in 0..16 {
            for o in 0..3 {
                let expect = lin.weight[o * 2] * two.data()[t] + lin.weight[o * 2 + 1] * two.data()[16 + t];
                assert!((tokens.row(t)[o] - expect).abs() < 1e-12);
            }
        }
        assert!(matches!(project(&map, &lin), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_saturates_on_matching_key() {
        let mut kd = vec![0.0; 9];
        kd[0] = 1.0;
        kd[4] = 1.0;
        kd[8] = 1.0;
        let k = Tokens::new(3, 3, kd).unwrap();
        let v = random_tokens(3, 3, 6);
        let q = Tokens::new(1, 3, vec![0.0, 200.0, 0.0]).unwrap();
        let out = cross_dimensional_embed(&q, &k, &v).unwrap();
        for (a, b) in out.row(0).iter().zip(v.row(1)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let k = Tokens::new(4, 2, [0.3, -0.7].repeat(4)).unwrap();
        let v = random_tokens(4, 2, 7);
        let q = random_tokens(3, 2, 8);
        let out = cross_dimensional_embed(&q, &k, &v).unwrap();
        for i in 0..3 {
            for d in 0..2 {
                let mean = (0..4).map(|j| v.row(j)[d]).sum::<f64>() / 4.0;
                assert!((out.row(i)[d] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_attention_matches_oracle() {
        let q = random_tokens(5, 4, 10);
        let k = random_tokens(5, 4, 11);
        let v = random_tokens(5, 4, 12);
        let out = cross_dimensional_embed(&q, &k, &v).unwrap();
        let oracle = attention_oracle(&q, &k, &v);
        for i in 0..5 {
            for d in 0..4 {
                assert!((out.row(i)[d] - oracle[i][d]).abs() < 1e-9);
            }
        }
        let bad = random_tokens(5, 3, 13);
        assert!(matches!(cross_dimensional_embed(&q, &bad, &v), Err(Error::Shape(_))));
    }

    #[test]
    fn self_attention_cases() {
        let one = random_tokens(1, 4, 14);
        assert_eq!(self_attend(&one).unwrap(), one);

        let twin = Tokens::new(2, 3, [0.2, -0.4, 0.9].repeat(2)).unwrap();
        let out = self_attend(&twin).unwrap();
        for i in 0..2 {
            for d in 0..3 {
                assert!((out.row(i)[d] - twin.row(0)[d]).abs() < 1e-15);
            }
        }

        let t = random_tokens(6, 4, 15);
        let out = self_attend(&t).unwrap();
        let oracle = attention_oracle(&t, &t, &t);
        for i in 0..6 {
            for d in 0..4 {
                assert!((out.row(i)[d] - oracle[i][d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn block_output_shape() {
        let det = random_map(5, 8, 8, 20);
        let ir = random_map(1, 6, 6, 21);
        let vis = random_map(1, 6, 6, 22);
        let w = ProjectionWeights::seeded(5, 1, 1, 4, 99).unwrap();
        let block = CdeBlock::new(w);
        let spec = PatchSpec { top: 2, left: 1, height: 3, width: 2, stride: 2 };
        let out = block.forward(&det, &spec, &ir, &vis).unwrap();
        assert_eq!(out.shape(), (4, 3, 2));
        let again = block.forward(&det, &spec, &ir, &vis).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn tokens_reshape_roundtrip() {
        let t = random_tokens(6, 3, 30);
        let fm = t.to_feature_map(2, 3).unwrap();
        for tok in 0..6 {
            for d in 0..3 {
                assert_eq!(fm.channel(d)[tok], t.row(tok)[d]);
            }
        }
        assert!(t.to_feature_map(4, 2).is_err());
    }
}
