//! Pixel-wise negative log-likelihood.

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, ScoreMap};

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: ScoreMap,
}

/// Mean over non-ignored pixels of `-log p̂(label)` with `p̂ = softmax(-φ)`,
/// and its gradient with respect to `φ`.
pub fn cross_entropy_loss(phi: &ScoreMap, labels: &LabelMap) -> Result<LossOutput> {
    let (h, w, l) = phi.shape();
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::shape(
            format!("{h}x{w} labels"),
            format!("{}x{}", labels.height, labels.width),
        ));
    }
    let mut grad = ScoreMap::zeros(h, w, l);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &y) in labels.data.iter().enumerate() {
        if y == LabelMap::IGNORE {
            continue;
        }
        let y = y as usize;
        if y >= l {
            return Err(Error::invalid(format!("label {y} out of range for {l} labels")));
        }
        let px = phi.pixel(i);
        let m = px.iter().copied().fold(f64::INFINITY, f64::min);
        let z: f64 = px.iter().map(|&v| (m - v).exp()).sum();
        // -log p̂_y = φ_y - m + log z
        total += px[y] - m + z.ln();
        count += 1;
        let g = grad.pixel_mut(i);
        for (v, gv) in g.iter_mut().enumerate() {
            *gv = -(m - px[v]).exp() / z;
        }
        g[y] += 1.0;
    }
    if count == 0 {
        return Err(Error::invalid("every pixel carries the ignore label"));
    }
    let inv = 1.0 / count as f64;
    for g in grad.data_mut() {
        *g *= inv;
    }
    Ok(LossOutput {
        loss: total * inv,
        grad,
    })
}
