//! Dense multi-channel 2-D buffers and the windowed/resampling kernels built
//! on them.
//!
//! Layout is row-major with the channel index innermost, so a pixel's
//! channels are contiguous. Kernels that run per channel (box sums,
//! resampling inside the guided filter) work on planar copies instead; see
//! [`Tensor2D::plane`] and [`Tensor2D::from_planes`].

use crate::error::{Error, Result};

/// H×W×L potentials or probabilities.
pub type ScoreMap = Tensor2D;
/// H×W×3 color image with values in [0, 1].
pub type GuideImage = Tensor2D;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps an existing buffer. Fails if the length does not match or any
    /// entry is NaN/Inf.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{height}x{width}x{channels} ({expected} values)"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Interleaves `channels` planes of `height * width` values each.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Self {
        let channels = planes.len();
        let n = height * width;
        let mut data = vec![0.0; n * channels];
        if channels > 0 {
            for (i, px) in data.chunks_exact_mut(channels).enumerate() {
                for (v, plane) in px.iter_mut().zip(planes) {
                    *v = plane[i];
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// The channel vector at flat pixel index `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Planar copy of channel `c`.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.pixels()); self.channels];
        if self.channels > 0 {
            for px in self.data.chunks_exact(self.channels) {
                for (plane, &v) in out.iter_mut().zip(px) {
                    plane.push(v);
                }
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Tensor2D) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_shape(&self, other: &Tensor2D) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(shape_str(self), shape_str(other)))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn scale(&self, s: f64) -> Tensor2D {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Tensor2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor2D) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel softmax of the negated channel values, `p ∝ exp(-v)`.
    pub fn softmax_neg(&self) -> Tensor2D {
        let mut out = self.clone();
        let l = self.channels;
        for px in out.data.chunks_exact_mut(l) {
            let min = px.iter().copied().fold(f64::INFINITY, f64::min);
            let mut z = 0.0;
            for v in px.iter_mut() {
                *v = (min - *v).exp();
                z += *v;
            }
            for v in px.iter_mut() {
                *v /= z;
            }
        }
        out
    }

    /// Channel index with the smallest value at each pixel (lowest index
    /// on ties). On potentials this is the most probable label.
    pub fn argmin_labels(&self) -> LabelMap {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| {
                let mut best = 0;
                for (c, &v) in px.iter().enumerate() {
                    if v < px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Channel index with the largest value at each pixel.
    pub fn argmax_labels(&self) -> LabelMap {
        self.map(|v| -v).argmin_labels()
    }
}

/// Backward of [`Tensor2D::softmax_neg`]: given `p = softmax(-v)` and
/// `dL/dp`, returns `dL/dv = -p ⊙ (dL/dp - <dL/dp, p>)` per pixel.
pub fn softmax_neg_backward(p: &Tensor2D, grad_p: &Tensor2D) -> Tensor2D {
    let l = p.channels;
    let mut out = Tensor2D::zeros(p.height, p.width, l);
    for ((o, pp), gp) in out
        .data
        .chunks_exact_mut(l)
        .zip(p.data.chunks_exact(l))
        .zip(grad_p.data.chunks_exact(l))
    {
        let inner: f64 = pp.iter().zip(gp).map(|(a, b)| a * b).sum();
        for c in 0..l {
            o[c] = -pp[c] * (gp[c] - inner);
        }
    }
    out
}

fn shape_str(t: &Tensor2D) -> String {
    format!("{}x{}x{}", t.height, t.width, t.channels)
}

/// Integer label map; [`LabelMap::IGNORE`] marks void pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub const IGNORE: u8 = 255;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{} labels", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Fraction of pixels whose labels differ.
    pub fn disagreement(&self, other: &LabelMap) -> f64 {
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count();
        diff as f64 / self.data.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Border {
    /// Windows shrink at the image edge and are normalized by their true
    /// pixel count.
    #[default]
    Clip,
    /// Windows wrap around the image (periodic boundary). Every window has
    /// exactly (2r+1)² members, counted with multiplicity when the window
    /// is wider than the image.
    Wrap,
}

/// Windowed mean over the clipped (2r+1)² square centered at each pixel.
/// Cost is independent of `radius`.
pub fn box_filter(src: &Tensor2D, radius: usize) -> Result<Tensor2D> {
    box_filter_with(src, radius, Border::Clip)
}

pub fn box_filter_with(src: &Tensor2D, radius: usize, border: Border) -> Result<Tensor2D> {
    if src.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if radius == 0 {
        return Err(Error::invalid("box filter radius must be >= 1"));
    }
    match border {
        Border::Clip => Ok(box_filter_clipped(src, radius)),
        Border::Wrap => {
            let planes: Vec<Vec<f64>> = src
                .planes()
                .iter()
                .map(|p| box_mean_wrap(p, src.height, src.width, radius))
                .collect();
            Ok(Tensor2D::from_planes(src.height, src.width, &planes))
        }
    }
}

fn box_filter_clipped(src: &Tensor2D, radius: usize) -> Tensor2D {
    let (h, w, c) = src.shape();
    let sw = w + 1;
    // Summed-area table with a zero row/column in front.
    let mut sat = vec![0.0; (h + 1) * sw * c];
    for y in 0..h {
        let mut row = vec![0.0; c];
        for x in 0..w {
            for k in 0..c {
                row[k] += src.data[(y * w + x) * c + k];
                sat[((y + 1) * sw + x + 1) * c + k] = sat[(y * sw + x + 1) * c + k] + row[k];
            }
        }
    }
    let mut out = Tensor2D::zeros(h, w, c);
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for k in 0..c {
                let s = sat[(y1 * sw + x1) * c + k] - sat[(y0 * sw + x1) * c + k]
                    - sat[(y1 * sw + x0) * c + k]
                    + sat[(y0 * sw + x0) * c + k];
                out.data[(y * w + x) * c + k] = s / count;
            }
        }
    }
    out
}

/// Periodic box mean of one `h × w` plane. Separable prefix sums; the
/// per-pixel cost does not depend on `radius`, including radii larger than
/// the image.
pub(crate) fn box_mean_wrap(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    box_mean_wrap_into(src, h, w, radius, &mut out);
    out
}

pub(crate) fn box_mean_wrap_into(src: &[f64], h: usize, w: usize, radius: usize, out: &mut [f64]) {
    debug_assert_eq!(src.len(), h * w);
    let norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let r = radius as isize;

    // Horizontal pass: row prefix sums.
    let mut tmp = vec![0.0; h * w];
    let mut prefix = vec![0.0; w + 1];
    let wi = w as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x];
        }
        let total = prefix[w];
        let cum = |x: isize| -> f64 {
            x.div_euclid(wi) as f64 * total + prefix[x.rem_euclid(wi) as usize]
        };
        let dst = &mut tmp[y * w..(y + 1) * w];
        if 2 * radius < w {
            // Fast interior; only the first/last `radius` columns wrap.
            for x in radius..w - radius {
                dst[x] = prefix[x + radius + 1] - prefix[x - radius];
            }
            for x in (0..radius).chain(w - radius..w) {
                let xi = x as isize;
                dst[x] = cum(xi + r + 1) - cum(xi - r);
            }
        } else {
            for x in 0..w {
                let xi = x as isize;
                dst[x] = cum(xi + r + 1) - cum(xi - r);
            }
        }
    }

    // Vertical pass: prefix sums over whole rows.
    let mut rows = vec![0.0; (h + 1) * w];
    for y in 0..h {
        let (done, rest) = rows.split_at_mut((y + 1) * w);
        let prev = &done[y * w..];
        let next = &mut rest[..w];
        let cur = &tmp[y * w..(y + 1) * w];
        for x in 0..w {
            next[x] = prev[x] + cur[x];
        }
    }
    let hi = h as isize;
    let total = &rows[h * w..(h + 1) * w];
    for y in 0..h {
        let yi = y as isize;
        let (q1, r1) = ((yi + r + 1).div_euclid(hi), (yi + r + 1).rem_euclid(hi) as usize);
        let (q0, r0) = ((yi - r).div_euclid(hi), (yi - r).rem_euclid(hi) as usize);
        let cycles = (q1 - q0) as f64;
        let hi_row = &rows[r1 * w..(r1 + 1) * w];
        let lo_row = &rows[r0 * w..(r0 + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        if cycles == 0.0 {
            for x in 0..w {
                dst[x] = (hi_row[x] - lo_row[x]) * norm;
            }
        } else {
            for x in 0..w {
                dst[x] = (cycles * total[x] + hi_row[x] - lo_row[x]) * norm;
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    f: f64,
}

/// Half-pixel-aligned linear interpolation taps for resampling an axis of
/// length `n_in` to `n_out`, clamped at the edges.
fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            Tap { i0, i1, f: s - i0 as f64 }
        })
        .collect()
}

/// Bilinear resampling with half-pixel center alignment. Equal dimensions
/// return an exact copy.
pub fn bilinear_resize(src: &Tensor2D, out_h: usize, out_w: usize) -> Result<Tensor2D> {
    if src.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output dimensions must be >= 1"));
    }
    if out_h == src.height && out_w == src.width {
        return Ok(src.clone());
    }
    let planes: Vec<Vec<f64>> = src
        .planes()
        .iter()
        .map(|p| resize_plane(p, src.height, src.width, out_h, out_w))
        .collect();
    Ok(Tensor2D::from_planes(out_h, out_w, &planes))
}

pub(crate) fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    resize_channel(src, 1, 0, (h, w), (out_h, out_w))
}

/// Bilinear resize of channel `offset` of an interleaved buffer with
/// `stride` channels, returned as a plane.
pub(crate) fn resize_channel(
    src: &[f64],
    stride: usize,
    offset: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = vec![0.0; out_h * out_w];
    let mut row = vec![0.0; w];
    let row_len = w * stride;
    for (oy, t) in ty.iter().enumerate() {
        let a = &src[t.i0 * row_len..(t.i0 + 1) * row_len];
        let b = &src[t.i1 * row_len..(t.i1 + 1) * row_len];
        for x in 0..w {
            let (va, vb) = (a[x * stride + offset], b[x * stride + offset]);
            row[x] = va + t.f * (vb - va);
        }
        let dst = &mut out[oy * out_w..(oy + 1) * out_w];
        for (ox, s) in tx.iter().enumerate() {
            dst[ox] = row[s.i0] + s.f * (row[s.i1] - row[s.i0]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

pub fn elementwise(a: &Tensor2D, b: &Tensor2D, op: ElementwiseOp) -> Result<Tensor2D> {
    a.ensure_shape(b)?;
    let f: fn(f64, f64) -> f64 = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul => |x, y| x * y,
    };
    Ok(Tensor2D {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        ..*a
    })
}
