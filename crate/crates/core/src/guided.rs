//! Color-guided edge-preserving filter.
//!
//! The filter is linear in its input: `q = W p` where the weight between
//! pixels `i` and `j` is
//!
//! ```text
//! w_ij = 1/|ω|² Σ_{k : i,j ∈ ω_k} (1 + (I_i - μ_k)ᵀ (Σ_k + εU)⁻¹ (I_j - μ_k))
//! ```
//!
//! with `μ_k`, `Σ_k` the mean and covariance of the guide over window
//! `ω_k`. [`GuidedFilterPlan::filter`] evaluates `W p` without forming `W`:
//! per-window linear coefficients `(a_k, b_k)` are fitted with box sums and
//! then averaged over the windows covering each pixel, so the cost per
//! pixel does not depend on the radius. [`weight_matrix`] forms `W`
//! literally and serves as the reference.
//!
//! Windows are periodic (see [`Border::Wrap`](crate::tensor::Border)): each
//! has exactly `|ω| = (2r+1)²` members. That makes `W` exactly symmetric
//! *and* row-stochastic, so the transpose needed by the backward pass is
//! the filter itself.

use crate::error::{Error, Result};
use crate::tensor::{box_mean_wrap, box_mean_wrap_into, resize_channel, GuideImage, Tensor2D};

/// Largest image the dense oracle accepts.
pub const ORACLE_MAX_PIXELS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidedFilterConfig {
    /// Window half-width in pixels.
    pub radius: usize,
    /// Regularizer added to the window covariance.
    pub epsilon: f64,
    /// 1 selects the exact filter; `s > 1` the down-sampled fast path.
    pub subsample: usize,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        Self {
            radius: 50,
            epsilon: 1.0,
            subsample: 1,
        }
    }
}

impl GuidedFilterConfig {
    pub fn new(radius: usize, epsilon: f64) -> Self {
        Self {
            radius,
            epsilon,
            subsample: 1,
        }
    }

    pub fn with_subsample(mut self, subsample: usize) -> Self {
        self.subsample = subsample;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::invalid("guided filter radius must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "guided filter epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.subsample == 0 {
            return Err(Error::invalid("subsample must be >= 1"));
        }
        Ok(())
    }
}

// Symmetric 3×3 storage order.
const XX: usize = 0;
const XY: usize = 1;
const XZ: usize = 2;
const YY: usize = 3;
const YZ: usize = 4;
const ZZ: usize = 5;
const SYM: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Guide statistics for one guide image and window size. Immutable and
/// reusable for any number of inputs.
#[derive(Clone, Debug)]
pub struct GuidedFilterPlan {
    height: usize,
    width: usize,
    radius: usize,
    epsilon: f64,
    guide: [Vec<f64>; 3],
    mean: [Vec<f64>; 3],
    cov: [Vec<f64>; 6],
    inv: [Vec<f64>; 6],
}

/// Per-window linear model `q = a·I + b` for one filtered channel.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub a: [Vec<f64>; 3],
    pub b: Vec<f64>,
}

fn validate_guide(guide: &GuideImage) -> Result<()> {
    if guide.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if guide.channels() != 3 {
        return Err(Error::shape(
            "3-channel guide",
            format!("{} channels", guide.channels()),
        ));
    }
    if let Some(v) = guide.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("guide value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Closed-form inverse of the symmetric matrix `[[a,b,c],[b,d,e],[c,e,f]]`
/// via its adjugate.
#[inline]
fn inv_sym3(m: [f64; 6]) -> [f64; 6] {
    let [a, b, c, d, e, f] = m;
    let ca = d * f - e * e;
    let cb = c * e - b * f;
    let cc = b * e - c * d;
    let cd = a * f - c * c;
    let ce = b * c - a * e;
    let cf = a * d - b * b;
    let det = a * ca + b * cb + c * cc;
    let s = 1.0 / det;
    [ca * s, cb * s, cc * s, cd * s, ce * s, cf * s]
}

impl GuidedFilterPlan {
    pub fn new(guide: &GuideImage, cfg: &GuidedFilterConfig) -> Result<Self> {
        validate_guide(guide)?;
        cfg.validate()?;
        let dims = (guide.height(), guide.width());
        let [g0, g1, g2]: [Vec<f64>; 3] = guide.planes().try_into().expect("3 planes");
        Ok(Self::from_planes([g0, g1, g2], dims, cfg.radius, cfg.epsilon))
    }

    fn from_planes(guide: [Vec<f64>; 3], dims: (usize, usize), radius: usize, epsilon: f64) -> Self {
        let (h, w) = dims;
        let n = h * w;
        let mean = [
            box_mean_wrap(&guide[0], h, w, radius),
            box_mean_wrap(&guide[1], h, w, radius),
            box_mean_wrap(&guide[2], h, w, radius),
        ];
        let mut cov: [Vec<f64>; 6] = Default::default();
        let mut prod = vec![0.0; n];
        for (s, &(p, q)) in SYM.iter().enumerate() {
            for i in 0..n {
                prod[i] = guide[p][i] * guide[q][i];
            }
            let mut m = vec![0.0; n];
            box_mean_wrap_into(&prod, h, w, radius, &mut m);
            for i in 0..n {
                m[i] -= mean[p][i] * mean[q][i];
            }
            cov[s] = m;
        }
        let mut inv: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let m = [
                cov[XX][i] + epsilon,
                cov[XY][i],
                cov[XZ][i],
                cov[YY][i] + epsilon,
                cov[YZ][i],
                cov[ZZ][i] + epsilon,
            ];
            let r = inv_sym3(m);
            for s in 0..6 {
                inv[s][i] = r[s];
            }
        }
        Self {
            height: h,
            width: w,
            radius,
            epsilon,
            guide,
            mean,
            cov,
            inv,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Window mean `μ_k` of the guide at pixel `k`.
    pub fn mean_at(&self, k: usize) -> [f64; 3] {
        [self.mean[0][k], self.mean[1][k], self.mean[2][k]]
    }

    /// Window covariance `Σ_k` (population convention).
    pub fn covariance_at(&self, k: usize) -> [[f64; 3]; 3] {
        expand_sym(std::array::from_fn(|s| self.cov[s][k]))
    }

    /// `(Σ_k + εU)⁻¹`.
    pub fn inverse_at(&self, k: usize) -> [[f64; 3]; 3] {
        expand_sym(std::array::from_fn(|s| self.inv[s][k]))
    }

    fn check_dims(&self, t: &Tensor2D) -> Result<()> {
        if t.height() != self.height || t.width() != self.width {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", t.height(), t.width()),
            ));
        }
        if t.is_empty() {
            return Err(Error::EmptyTensor);
        }
        Ok(())
    }

    /// Fits the per-window coefficients `(a_k, b_k)` for one input plane.
    pub fn coefficients(&self, p: &[f64]) -> Coefficients {
        let (h, w, r) = (self.height, self.width, self.radius);
        let n = h * w;
        let mean_p = box_mean_wrap(p, h, w, r);
        let mut prod = vec![0.0; n];
        let mut cov_ip: [Vec<f64>; 3] = Default::default();
        for c in 0..3 {
            for i in 0..n {
                prod[i] = self.guide[c][i] * p[i];
            }
            let mut m = vec![0.0; n];
            box_mean_wrap_into(&prod, h, w, r, &mut m);
            for i in 0..n {
                m[i] -= self.mean[c][i] * mean_p[i];
            }
            cov_ip[c] = m;
        }
        let mut a: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
        let mut b = mean_p;
        let inv = &self.inv;
        for i in 0..n {
            let (v0, v1, v2) = (cov_ip[0][i], cov_ip[1][i], cov_ip[2][i]);
            let a0 = inv[XX][i] * v0 + inv[XY][i] * v1 + inv[XZ][i] * v2;
            let a1 = inv[XY][i] * v0 + inv[YY][i] * v1 + inv[YZ][i] * v2;
            let a2 = inv[XZ][i] * v0 + inv[YZ][i] * v1 + inv[ZZ][i] * v2;
            a[0][i] = a0;
            a[1][i] = a1;
            a[2][i] = a2;
            b[i] -= a0 * self.mean[0][i] + a1 * self.mean[1][i] + a2 * self.mean[2][i];
        }
        Coefficients { a, b }
    }

    /// Exact filter of one plane.
    pub fn filter_plane(&self, p: &[f64]) -> Vec<f64> {
        let (h, w, r) = (self.height, self.width, self.radius);
        let Coefficients { a, b } = self.coefficients(p);
        let mut out = box_mean_wrap(&b, h, w, r);
        let mut avg = vec![0.0; h * w];
        for c in 0..3 {
            box_mean_wrap_into(&a[c], h, w, r, &mut avg);
            let g = &self.guide[c];
            for i in 0..h * w {
                out[i] += avg[i] * g[i];
            }
        }
        out
    }

    /// `W · input`, channel by channel.
    pub fn filter(&self, input: &Tensor2D) -> Result<Tensor2D> {
        self.check_dims(input)?;
        let planes: Vec<Vec<f64>> = input
            .planes()
            .iter()
            .map(|p| self.filter_plane(p))
            .collect();
        Ok(Tensor2D::from_planes(self.height, self.width, &planes))
    }

    /// `Wᵀ · grad`. `W` is symmetric, so this is [`Self::filter`]; kept as
    /// its own entry point so backward passes read as such.
    pub fn filter_transpose(&self, grad: &Tensor2D) -> Result<Tensor2D> {
        self.filter(grad)
    }
}

fn expand_sym(m: [f64; 6]) -> [[f64; 3]; 3] {
    [[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]]
}

pub fn plan(guide: &GuideImage, cfg: &GuidedFilterConfig) -> Result<GuidedFilterPlan> {
    GuidedFilterPlan::new(guide, cfg)
}

pub fn filter(plan: &GuidedFilterPlan, input: &Tensor2D) -> Result<Tensor2D> {
    plan.filter(input)
}

pub fn filter_transpose(plan: &GuidedFilterPlan, grad: &Tensor2D) -> Result<Tensor2D> {
    plan.filter_transpose(grad)
}

/// Down-sampled approximation of the filter: coefficients are fitted on a
/// bilinearly reduced guide/input pair, averaged there, bilinearly
/// up-sampled and applied to the full-resolution guide.
///
/// The low-resolution radius is `max(1, round(radius / s))`.
#[derive(Clone, Debug)]
pub struct FastGuidedFilter {
    height: usize,
    width: usize,
    guide: [Vec<f64>; 3],
    low: GuidedFilterPlan,
}

impl FastGuidedFilter {
    pub fn new(guide: &GuideImage, cfg: &GuidedFilterConfig) -> Result<Self> {
        validate_guide(guide)?;
        cfg.validate()?;
        let s = cfg.subsample;
        if s < 2 {
            return Err(Error::invalid(format!(
                "fast guided filter needs subsample >= 2, got {s}"
            )));
        }
        let (h, w) = (guide.height(), guide.width());
        let lh = (h as f64 / s as f64).round() as usize;
        let lw = (w as f64 / s as f64).round() as usize;
        if lh < 2 || lw < 2 {
            return Err(Error::invalid(format!(
                "down-sampled image {lh}x{lw} is smaller than 2x2"
            )));
        }
        let low_radius = ((cfg.radius as f64 / s as f64).round() as usize).max(1);
        let low_guide: [Vec<f64>; 3] =
            std::array::from_fn(|c| resize_channel(guide.data(), 3, c, (h, w), (lh, lw)));
        let planes = guide.planes();
        let low = GuidedFilterPlan::from_planes(low_guide, (lh, lw), low_radius, cfg.epsilon);
        let [g0, g1, g2]: [Vec<f64>; 3] = planes.try_into().expect("3 planes");
        Ok(Self {
            height: h,
            width: w,
            guide: [g0, g1, g2],
            low,
        })
    }

    pub fn low_resolution(&self) -> (usize, usize, usize) {
        (self.low.height, self.low.width, self.low.radius)
    }

    pub fn apply_plane(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.height * self.width, "plane size");
        let mut out = vec![0.0; p.len()];
        self.apply_channel(p, 1, 0, &mut out);
        out
    }

    pub fn apply(&self, input: &Tensor2D) -> Result<Tensor2D> {
        if input.height() != self.height || input.width() != self.width {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", input.height(), input.width()),
            ));
        }
        let c = input.channels();
        let mut out = Tensor2D::zeros(self.height, self.width, c);
        for k in 0..c {
            self.apply_channel(input.data(), c, k, out.data_mut());
        }
        Ok(out)
    }

    // Filters channel `offset` of an interleaved buffer into the same
    // channel of `out`.
    fn apply_channel(&self, src: &[f64], stride: usize, offset: usize, out: &mut [f64]) {
        let (lh, lw, lr) = (self.low.height, self.low.width, self.low.radius);
        let low_p = resize_channel(src, stride, offset, (self.height, self.width), (lh, lw));
        let Coefficients { a, b } = self.low.coefficients(&low_p);
        let avg: [Vec<f64>; 4] = [
            box_mean_wrap(&a[0], lh, lw, lr),
            box_mean_wrap(&a[1], lh, lw, lr),
            box_mean_wrap(&a[2], lh, lw, lr),
            box_mean_wrap(&b, lh, lw, lr),
        ];
        self.upsample_apply(&avg, out, stride, offset);
    }

    // Bilinear up-sampling of (ā, b̄) fused with `q = ā·I + b̄`.
    fn upsample_apply(&self, low: &[Vec<f64>; 4], out: &mut [f64], stride: usize, offset: usize) {
        let (h, w) = (self.height, self.width);
        let (lh, lw) = (self.low.height, self.low.width);
        let ty = axis_taps(lh, h);
        let tx = axis_taps(lw, w);
        let mut rows = [vec![0.0; lw], vec![0.0; lw], vec![0.0; lw], vec![0.0; lw]];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (row, plane) in rows.iter_mut().zip(low) {
                let r0 = &plane[y0 * lw..(y0 + 1) * lw];
                let r1 = &plane[y1 * lw..(y1 + 1) * lw];
                for x in 0..lw {
                    row[x] = r0[x] + fy * (r1[x] - r0[x]);
                }
            }
            let base = y * w;
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let i = base + x;
                let lerp = |r: &[f64]| r[x0] + fx * (r[x1] - r[x0]);
                out[i * stride + offset] = lerp(&rows[0]) * self.guide[0][i]
                    + lerp(&rows[1]) * self.guide[1][i]
                    + lerp(&rows[2]) * self.guide[2][i]
                    + lerp(&rows[3]);
            }
        }
    }
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
        })
        .collect()
}

/// One-shot fast path: builds a [`FastGuidedFilter`] and applies it.
pub fn filter_fast(guide: &GuideImage, input: &Tensor2D, cfg: &GuidedFilterConfig) -> Result<Tensor2D> {
    FastGuidedFilter::new(guide, cfg)?.apply(input)
}

/// Row-major dense matrix returned by [`weight_matrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `M · x` applied to each channel of `x`.
    pub fn apply(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.pixels() != self.n {
            return Err(Error::shape(format!("{} pixels", self.n), x.pixels()));
        }
        let l = x.channels();
        let mut out = Tensor2D::zeros(x.height(), x.width(), l);
        for i in 0..self.n {
            let row = self.row(i);
            let o = out.pixel_mut(i);
            for (j, &wij) in row.iter().enumerate() {
                if wij != 0.0 {
                    for (oc, &xc) in o.iter_mut().zip(x.pixel(j)) {
                        *oc += wij * xc;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        DenseMatrix { n, data }
    }
}

/// Literal N×N evaluation of the filter weights. Window statistics are
/// computed by direct enumeration and the 3×3 systems are inverted by
/// Gauss-Jordan elimination, so nothing is shared with the fast path.
///
/// Cost is `O(N·|ω|²)`; limited to [`ORACLE_MAX_PIXELS`].
pub fn weight_matrix(guide: &GuideImage, cfg: &GuidedFilterConfig) -> Result<DenseMatrix> {
    validate_guide(guide)?;
    cfg.validate()?;
    let (h, w) = (guide.height(), guide.width());
    let n = h * w;
    if n > ORACLE_MAX_PIXELS {
        return Err(Error::OracleSizeExceeded {
            pixels: n,
            limit: ORACLE_MAX_PIXELS,
        });
    }
    let r = cfg.radius as isize;
    let size = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut wm = vec![0.0; n * n];
    let mut members = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for ky in 0..h as isize {
        for kx in 0..w as isize {
            members.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let y = (ky + dy).rem_euclid(h as isize) as usize;
                    let x = (kx + dx).rem_euclid(w as isize) as usize;
                    members.push(y * w + x);
                }
            }
            let mut mu = [0.0; 3];
            for &j in &members {
                for c in 0..3 {
                    mu[c] += guide.pixel(j)[c];
                }
            }
            for m in &mut mu {
                *m /= size;
            }
            let mut sigma = [[0.0; 3]; 3];
            for &j in &members {
                let px = guide.pixel(j);
                for p in 0..3 {
                    for q in 0..3 {
                        sigma[p][q] += (px[p] - mu[p]) * (px[q] - mu[q]);
                    }
                }
            }
            for (p, row) in sigma.iter_mut().enumerate() {
                for v in row.iter_mut() {
                    *v /= size;
                }
                row[p] += cfg.epsilon;
            }
            let inv = gauss_jordan_inverse(sigma);
            let centered: Vec<[f64; 3]> = members
                .iter()
                .map(|&j| {
                    let px = guide.pixel(j);
                    [px[0] - mu[0], px[1] - mu[1], px[2] - mu[2]]
                })
                .collect();
            for (a, &i) in members.iter().enumerate() {
                let ci = centered[a];
                let t = [
                    inv[0][0] * ci[0] + inv[1][0] * ci[1] + inv[2][0] * ci[2],
                    inv[0][1] * ci[0] + inv[1][1] * ci[1] + inv[2][1] * ci[2],
                    inv[0][2] * ci[0] + inv[1][2] * ci[1] + inv[2][2] * ci[2],
                ];
                let row = &mut wm[i * n..(i + 1) * n];
                for (b, &j) in members.iter().enumerate() {
                    let cj = centered[b];
                    row[j] += (1.0 + t[0] * cj[0] + t[1] * cj[1] + t[2] * cj[2]) / (size * size);
                }
            }
        }
    }
    Ok(DenseMatrix { n, data: wm })
}

fn gauss_jordan_inverse(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 6]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3 + i] = 1.0;
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for row in 0..3 {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..6 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        out[i].copy_from_slice(&a[i][3..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_tensor, step_edge_guide};
    use proptest::prelude::*;

    fn wrap_window(h: usize, w: usize, k: usize, r: usize) -> Vec<usize> {
        let (ky, kx) = ((k / w) as isize, (k % w) as isize);
        let r = r as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let y = (ky + dy).rem_euclid(h as isize) as usize;
                let x = (kx + dx).rem_euclid(w as isize) as usize;
                out.push(y * w + x);
            }
        }
        out
    }

    #[test]
    fn constant_guide_has_zero_covariance() {
        let guide = Tensor2D::filled(6, 7, 3, 0.4);
        let cfg = GuidedFilterConfig::new(2, 0.5);
        let plan = plan(&guide, &cfg).unwrap();
        for k in 0..42 {
            let cov = plan.covariance_at(k);
            let inv = plan.inverse_at(k);
            for p in 0..3 {
                for q in 0..3 {
                    assert!(cov[p][q].abs() < 1e-15);
                    let want = if p == q { 2.0 } else { 0.0 };
                    assert!((inv[p][q] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn plan_covariance_matches_direct_enumeration() {
        let guide = random_tensor(8, 8, 3, 21);
        let plan = plan(&guide, &GuidedFilterConfig::new(2, 1.0)).unwrap();
        for k in 0..64 {
            let win = wrap_window(8, 8, k, 2);
            let n = win.len() as f64;
            let mut mu = [0.0; 3];
            for &j in &win {
                for c in 0..3 {
                    mu[c] += guide.pixel(j)[c] / n;
                }
            }
            let cov = plan.covariance_at(k);
            for p in 0..3 {
                assert!((plan.mean_at(k)[p] - mu[p]).abs() < 1e-12);
                for q in 0..3 {
                    let direct: f64 = win
                        .iter()
                        .map(|&j| (guide.pixel(j)[p] - mu[p]) * (guide.pixel(j)[q] - mu[q]))
                        .sum::<f64>()
                        / n;
                    assert!((cov[p][q] - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn default_epsilon_is_one() {
        let cfg = GuidedFilterConfig::default();
        assert_eq!(cfg.epsilon, 1.0);
        assert_eq!(cfg.radius, 50);
        assert_eq!(cfg.subsample, 1);
    }

    #[test]
    fn plan_rejects_bad_guides() {
        let cfg = GuidedFilterConfig::new(1, 1.0);
        assert!(matches!(
            plan(&Tensor2D::zeros(4, 4, 1), &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(plan(&Tensor2D::filled(4, 4, 3, 1.5), &cfg).is_err());
        assert!(plan(&Tensor2D::zeros(4, 4, 3), &GuidedFilterConfig::new(1, 0.0)).is_err());
    }

    #[test]
    fn filter_preserves_constants() {
        let guide = random_tensor(13, 11, 3, 2);
        for r in [1, 3, 8] {
            let plan = plan(&guide, &GuidedFilterConfig::new(r, 0.1)).unwrap();
            let out = plan.filter(&Tensor2D::filled(13, 11, 2, -1.75)).unwrap();
            assert!(out.data().iter().all(|v| (v + 1.75).abs() < 1e-9));
        }
    }

    #[test]
    fn filter_matches_weight_matrix_12x12() {
        let guide = random_tensor(12, 12, 3, 5);
        let input = random_tensor(12, 12, 2, 6);
        let cfg = GuidedFilterConfig::new(2, 1.0);
        let fast = plan(&guide, &cfg).unwrap().filter(&input).unwrap();
        let oracle = weight_matrix(&guide, &cfg).unwrap().apply(&input).unwrap();
        assert!(fast.max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn filter_dimension_mismatch() {
        let guide = random_tensor(6, 6, 3, 1);
        let plan = plan(&guide, &GuidedFilterConfig::new(1, 1.0)).unwrap();
        assert!(plan.filter(&Tensor2D::zeros(6, 5, 1)).is_err());
        assert!(plan.filter_transpose(&Tensor2D::zeros(5, 6, 1)).is_err());
    }

    #[test]
    fn step_edge_smooths_each_side_and_keeps_the_edge() {
        let (h, w, edge) = (24, 32, 16);
        let guide = step_edge_guide(h, w, edge);
        let noise = random_tensor(h, w, 1, 99);
        let input = Tensor2D::from_fn(h, w, 1, |y, x, _| {
            let base = if x < edge { 0.2 } else { 0.8 };
            base + 0.2 * (noise.get(y, x, 0) - 0.5)
        });
        let out = plan(&guide, &GuidedFilterConfig::new(3, 1e-3))
            .unwrap()
            .filter(&input)
            .unwrap();
        let var = |t: &Tensor2D, left: bool| {
            let vals: Vec<f64> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .filter(|&(_, x)| (x < edge) == left)
                .map(|(y, x)| t.get(y, x, 0))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
        };
        for left in [true, false] {
            assert!(var(&out, left) < var(&input, left));
        }
        // Largest horizontal jump per row stays at the guide edge.
        for y in 0..h {
            let jump = (1..w)
                .max_by(|&a, &b| {
                    let da = (out.get(y, a, 0) - out.get(y, a - 1, 0)).abs();
                    let db = (out.get(y, b, 0) - out.get(y, b - 1, 0)).abs();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert!((jump as isize - edge as isize).abs() <= 1, "row {y}: jump at {jump}");
        }
    }

    #[test]
    fn weight_matrix_rows_sum_to_one_and_is_symmetric() {
        for (seed, r) in [(1, 1), (2, 2), (3, 4)] {
            let guide = random_tensor(7, 9, 3, seed);
            let w = weight_matrix(&guide, &GuidedFilterConfig::new(r, 0.2)).unwrap();
            for i in 0..w.n {
                let s: f64 = w.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                for j in 0..w.n {
                    assert!((w.get(i, j) - w.get(j, i)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_guide_weights_count_shared_windows() {
        let (h, w, r) = (9, 10, 2);
        let guide = Tensor2D::filled(h, w, 3, 0.3);
        let wm = weight_matrix(&guide, &GuidedFilterConfig::new(r, 1.0)).unwrap();
        let size = ((2 * r + 1) * (2 * r + 1)) as f64;
        let windows: Vec<Vec<usize>> = (0..h * w).map(|k| wrap_window(h, w, k, r)).collect();
        for i in [0, 11, 44, 89] {
            for j in 0..h * w {
                let shared: usize = windows
                    .iter()
                    .map(|win| {
                        let ci = win.iter().filter(|&&m| m == i).count();
                        let cj = win.iter().filter(|&&m| m == j).count();
                        ci * cj
                    })
                    .sum();
                assert!((wm.get(i, j) - shared as f64 / (size * size)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weight_matrix_size_limit() {
        let guide = Tensor2D::zeros(65, 64, 3);
        assert!(matches!(
            weight_matrix(&guide, &GuidedFilterConfig::new(1, 1.0)),
            Err(Error::OracleSizeExceeded { .. })
        ));
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let guide = random_tensor(12, 12, 3, 8);
        let grad = random_tensor(12, 12, 3, 9).map(|v| 2.0 * v - 1.0);
        let cfg = GuidedFilterConfig::new(2, 1.0);
        let plan = plan(&guide, &cfg).unwrap();
        let wt = weight_matrix(&guide, &cfg).unwrap().transpose();
        let ours = plan.filter_transpose(&grad).unwrap();
        assert!(ours.max_abs_diff(&wt.apply(&grad).unwrap()) < 1e-6);
        assert_eq!(ours, plan.filter(&grad).unwrap());
        let c = plan.filter_transpose(&Tensor2D::filled(12, 12, 1, 0.5)).unwrap();
        assert!(c.data().iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn fast_path_constant_input() {
        let guide = random_tensor(40, 36, 3, 12);
        let cfg = GuidedFilterConfig::new(8, 0.01).with_subsample(4);
        let out = filter_fast(&guide, &Tensor2D::filled(40, 36, 2, 0.625), &cfg).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.625).abs() < 1e-12));
    }

    #[test]
    fn fast_path_errors() {
        let guide = random_tensor(7, 7, 3, 1);
        let input = Tensor2D::zeros(7, 7, 1);
        let cfg = GuidedFilterConfig::new(2, 1.0);
        assert!(filter_fast(&guide, &input, &cfg).is_err());
        assert!(filter_fast(&guide, &input, &cfg.with_subsample(5)).is_err());
        assert!(filter_fast(&guide, &input, &cfg.with_subsample(3)).is_ok());
    }

    #[test]
    fn fast_path_low_resolution_radius() {
        let guide = random_tensor(64, 64, 3, 1);
        let f = FastGuidedFilter::new(&guide, &GuidedFilterConfig::new(20, 1.0).with_subsample(4)).unwrap();
        assert_eq!(f.low_resolution(), (16, 16, 5));
        let f = FastGuidedFilter::new(&guide, &GuidedFilterConfig::new(1, 1.0).with_subsample(4)).unwrap();
        assert_eq!(f.low_resolution().2, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn filter_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, r in 1usize..4) {
            let guide = random_tensor(10, 11, 3, seed);
            let x = random_tensor(10, 11, 2, seed ^ 1);
            let y = random_tensor(10, 11, 2, seed ^ 2);
            let plan = plan(&guide, &GuidedFilterConfig::new(r, 0.3)).unwrap();
            let combo = Tensor2D::from_vec(10, 11, 2,
                x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
            let lhs = plan.filter(&combo).unwrap();
            let fx = plan.filter(&x).unwrap();
            let fy = plan.filter(&y).unwrap();
            let rhs = Tensor2D::from_vec(10, 11, 2,
                fx.data().iter().zip(fy.data()).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }
}
