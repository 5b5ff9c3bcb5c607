//! Dense image and feature containers plus the shared kernels built on them.
//!
//! All filtering uses replicate border padding. Images are kept in `f64`
//! and only quantized when written to disk.

use crate::error::{Error, Result};

/// A grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Smallest side accepted; windowed SSIM needs at least this much room.
    pub const MIN_SIDE: usize = 8;

    /// Builds an image, rejecting non-finite or out-of-range values.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::param(
                "data",
                format!("pixel {i} has value {v}, expected a finite value in [0, 1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image after clamping every value into `[0, 1]`.
    pub fn clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        for (i, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::param("data", format!("pixel {i} is not finite")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Fails with a shape error naming `what` unless `other` has the same size.
    pub fn ensure_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Mirrors the image left to right.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Views the image as a single-channel feature map.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height < Image::MIN_SIDE || width < Image::MIN_SIDE {
        return Err(Error::Shape(format!(
            "image is {height}x{width}, both sides must be at least {}",
            Image::MIN_SIDE
        )));
    }
    if height * width != len {
        return Err(Error::Shape(format!(
            "image is {height}x{width} but {len} values were supplied"
        )));
    }
    Ok(())
}

/// A `channels x height x width` block of finite activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} has an empty dimension"
            )));
        }
        if channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("data", format!("element {i} is not finite")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }
}

/// Sobel responses and their magnitude for one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Horizontal Sobel kernel, row-major 3x3, applied as a correlation.
pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
/// Vertical Sobel kernel.
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Correlates a plane with an odd-sized kernel using replicate padding.
pub fn correlate(plane: &[f64], h: usize, w: usize, kernel: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    assert_eq!(plane.len(), h * w);
    assert_eq!(kernel.len(), kh * kw);
    assert!(kh % 2 == 1 && kw % 2 == 1, "kernel sides must be odd");
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for u in 0..kh {
                let rr = clamp_index(r as isize + u as isize - ry, h);
                for v in 0..kw {
                    let cc = clamp_index(c as isize + v as isize - rx, w);
                    acc += kernel[u * kw + v] * plane[rr * w + cc];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Adjoint of [`correlate`]: maps an output-space gradient back to the input plane.
pub fn correlate_adjoint(
    grad_out: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    assert_eq!(grad_out.len(), h * w);
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut grad_in = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let g = grad_out[r * w + c];
            if g == 0.0 {
                continue;
            }
            for u in 0..kh {
                let rr = clamp_index(r as isize + u as isize - ry, h);
                for v in 0..kw {
                    let cc = clamp_index(c as isize + v as isize - rx, w);
                    grad_in[rr * w + cc] += kernel[u * kw + v] * g;
                }
            }
        }
    }
    grad_in
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Sobel gradient of an arbitrary real plane (no range restriction).
pub fn sobel_plane(plane: &[f64], h: usize, w: usize) -> GradientField {
    assert_eq!(plane.len(), h * w);
    // Same operator as `correlate` with SOBEL_X / SOBEL_Y, written as
    // differences so that flat regions give exactly zero.
    let at = |r: isize, c: isize| plane[clamp_index(r, h) * w + clamp_index(c, w)];
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            dx[i] = (at(r - 1, c + 1) - at(r - 1, c - 1))
                + 2.0 * (at(r, c + 1) - at(r, c - 1))
                + (at(r + 1, c + 1) - at(r + 1, c - 1));
            dy[i] = (at(r + 1, c - 1) - at(r - 1, c - 1))
                + 2.0 * (at(r + 1, c) - at(r - 1, c))
                + (at(r + 1, c + 1) - at(r - 1, c + 1));
        }
    }
    let magnitude = dx.iter().zip(&dy).map(|(x, y)| x.hypot(*y)).collect();
    GradientField {
        height: h,
        width: w,
        dx,
        dy,
        magnitude,
    }
}

pub fn sobel_gradient(img: &Image) -> GradientField {
    sobel_plane(img.data(), img.height(), img.width())
}

/// Normalized 1-D Gaussian taps of odd length.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::param("size", format!("window size {size} must be odd")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("sigma {sigma} must be positive")));
    }
    let half = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Normalized isotropic 2-D Gaussian window as a `1 x size x size` map.
pub fn gaussian_window(size: usize, sigma: f64) -> Result<FeatureMap> {
    let taps = gaussian_kernel_1d(size, sigma)?;
    let mut data = Vec::with_capacity(size * size);
    for a in &taps {
        for b in &taps {
            data.push(a * b);
        }
    }
    // Renormalize the outer product so the 2-D sum is one to rounding.
    let sum: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= sum);
    FeatureMap::new(1, size, size, data)
}

/// Separable filtering with replicate padding; output has the input size.
pub fn filter_separable_same(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for row in 0..h {
        let src = &plane[row * w..(row + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * src[clamp_index(c as isize + k as isize - r, w)];
            }
            tmp[row * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[clamp_index(row as isize + k as isize - r, h) * w + c];
            }
            out[row * w + c] = acc;
        }
    }
    out
}

/// Separable filtering keeping only fully-covered positions.
///
/// Returns `(values, out_h, out_w)` with `out = in - taps + 1` per side.
pub fn filter_separable_valid(
    plane: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    assert!(h >= k && w >= k, "plane smaller than filter");
    let (oh, ow) = (h - k + 1, w - k + 1);
    // Taps outermost so rows vectorize; each output still sums taps in order.
    let mut tmp = vec![0.0; h * ow];
    for row in 0..h {
        let src = &plane[row * w..(row + 1) * w];
        let dst = &mut tmp[row * ow..(row + 1) * ow];
        for (j, t) in taps.iter().enumerate() {
            for (d, v) in dst.iter_mut().zip(&src[j..j + ow]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; oh * ow];
    for row in 0..oh {
        let dst = &mut out[row * ow..(row + 1) * ow];
        for (j, t) in taps.iter().enumerate() {
            let src = &tmp[(row + j) * ow..(row + j + 1) * ow];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += t * v;
            }
        }
    }
    (out, oh, ow)
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                (i * (n_in - 1)) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                t: pos - lo as f64,
            }
        })
        .collect()
}

/// Precomputed corner-aligned bilinear interpolation between two plane sizes.
///
/// Output samples are placed so that the corner pixels of input and output
/// coincide. The plan exposes its adjoint so gradients can flow back to the
/// low-resolution grid.
#[derive(Debug, Clone)]
pub struct ResizePlan {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl ResizePlan {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 {
            return Err(Error::Shape("resize source is empty".into()));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::param("out", "output height and width must be >= 1"));
        }
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        })
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        assert_eq!(src.len(), self.in_h * self.in_w);
        let w = self.in_w;
        let mut out = Vec::with_capacity(self.out_h * self.out_w);
        for ry in &self.rows {
            for cx in &self.cols {
                let top = (1.0 - cx.t) * src[ry.lo * w + cx.lo] + cx.t * src[ry.lo * w + cx.hi];
                let bot = (1.0 - cx.t) * src[ry.hi * w + cx.lo] + cx.t * src[ry.hi * w + cx.hi];
                out.push((1.0 - ry.t) * top + ry.t * bot);
            }
        }
        out
    }

    /// Transpose of [`ResizePlan::apply`].
    pub fn adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.out_h * self.out_w);
        let w = self.in_w;
        let mut grad = vec![0.0; self.in_h * self.in_w];
        for (i, ry) in self.rows.iter().enumerate() {
            for (j, cx) in self.cols.iter().enumerate() {
                let g = grad_out[i * self.out_w + j];
                grad[ry.lo * w + cx.lo] += (1.0 - ry.t) * (1.0 - cx.t) * g;
                grad[ry.lo * w + cx.hi] += (1.0 - ry.t) * cx.t * g;
                grad[ry.hi * w + cx.lo] += ry.t * (1.0 - cx.t) * g;
                grad[ry.hi * w + cx.hi] += ry.t * cx.t * g;
            }
        }
        grad
    }
}

/// Resizes every channel of `src` to `out_h x out_w` with bilinear interpolation.
pub fn bilinear_resize(src: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    let plan = ResizePlan::new(src.height(), src.width(), out_h, out_w)?;
    let mut data = Vec::with_capacity(src.channels() * out_h * out_w);
    for c in 0..src.channels() {
        data.extend(plan.apply(src.channel(c)));
    }
    FeatureMap::new(src.channels(), out_h, out_w, data)
}

/// Counts of co-occurring intensity bins for two equally sized images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointHistogram {
    pub bins: usize,
    /// Row index is the bin of `a`, column index the bin of `b`.
    pub counts: Vec<u64>,
}

impl JointHistogram {
    pub fn get(&self, a_bin: usize, b_bin: usize) -> u64 {
        self.counts[a_bin * self.bins + b_bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin of an intensity in `[0, 1]`; 1.0 lands in the last bin.
#[inline]
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn joint_histogram(a: &Image, b: &Image, bins: usize) -> Result<JointHistogram> {
    if bins < 2 {
        return Err(Error::param("bins", format!("{bins} bins requested, need at least 2")));
    }
    a.ensure_same_dims(b, "joint histogram inputs")?;
    let mut counts = vec![0u64; bins * bins];
    for (x, y) in a.data().iter().zip(b.data()) {
        counts[bin_index(*x, bins) * bins + bin_index(*y, bins)] += 1;
    }
    Ok(JointHistogram { bins, counts })
}
