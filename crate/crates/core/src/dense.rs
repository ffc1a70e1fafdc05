//! Brute-force fully connected message pass with a bilateral Gaussian
//! kernel. `O(N²)` per pass, used only as a timing baseline.

use crate::error::{Error, Result};
use crate::tensor::{GuideImage, ScoreMap};

/// Largest image [`dense_message`] accepts.
pub const DENSE_MAX_PIXELS: usize = 64 * 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilateralKernel {
    /// Spatial standard deviation in pixels.
    pub spatial: f64,
    /// Color standard deviation on the `[0, 1]` scale.
    pub color: f64,
}

impl Default for BilateralKernel {
    fn default() -> Self {
        Self {
            spatial: 10.0,
            color: 0.1,
        }
    }
}

/// `g(i, v) = Σ_{j≠i} k(i, j) q(j, v)` with
/// `k(i, j) = exp(-|p_i - p_j|²/2σ_s² - |I_i - I_j|²/2σ_c²)`.
pub fn dense_message(guide: &GuideImage, q: &ScoreMap, kernel: &BilateralKernel) -> Result<ScoreMap> {
    let (h, w) = (guide.height(), guide.width());
    if (q.height(), q.width()) != (h, w) {
        return Err(Error::shape(format!("{h}x{w}"), format!("{}x{}", q.height(), q.width())));
    }
    if guide.channels() != 3 {
        return Err(Error::shape("3 channels", guide.channels()));
    }
    let n = h * w;
    if n > DENSE_MAX_PIXELS {
        return Err(Error::OracleSizeExceeded {
            pixels: n,
            limit: DENSE_MAX_PIXELS,
        });
    }
    if !(kernel.spatial > 0.0 && kernel.color > 0.0) {
        return Err(Error::invalid("kernel widths must be > 0"));
    }
    let l = q.channels();
    let a = 0.5 / (kernel.spatial * kernel.spatial);
    let b = 0.5 / (kernel.color * kernel.color);
    let mut out = ScoreMap::zeros(h, w, l);
    for i in 0..n {
        let (yi, xi) = ((i / w) as f64, (i % w) as f64);
        let ci = guide.pixel(i);
        let mut acc = vec![0.0; l];
        for j in 0..n {
            if j == i {
                continue;
            }
            let (dy, dx) = (yi - (j / w) as f64, xi - (j % w) as f64);
            let cj = guide.pixel(j);
            let dc = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
            let k = (-(a * (dy * dy + dx * dx) + b * dc)).exp();
            for (s, &v) in acc.iter_mut().zip(q.pixel(j)) {
                *s += k * v;
            }
        }
        out.pixel_mut(i).copy_from_slice(&acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn two_pixels() {
        let guide = GuideImage::from_vec(1, 2, 3, vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0]).unwrap();
        let q = ScoreMap::from_vec(1, 2, 1, vec![2.0, 3.0]).unwrap();
        let k = BilateralKernel { spatial: 1.0, color: 0.1 };
        let out = dense_message(&guide, &q, &k).unwrap();
        let kij = (-0.5f64 - 0.5).exp();
        assert!((out.data()[0] - 3.0 * kij).abs() < 1e-15);
        assert!((out.data()[1] - 2.0 * kij).abs() < 1e-15);
    }

    #[test]
    fn size_cap() {
        let guide = random_tensor(65, 64, 3, 1);
        let q = ScoreMap::zeros(65, 64, 2);
        assert!(matches!(
            dense_message(&guide, &q, &BilateralKernel::default()),
            Err(Error::OracleSizeExceeded { .. })
        ));
    }
}
