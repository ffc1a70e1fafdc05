//! Intersection-over-union over whole images and near object boundaries.

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// Half-width of the boundary band used by [`trimap_band`].
pub const TRIMAP_BAND: usize = 3;

/// Accumulates `(truth, prediction)` counts over any number of images.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    labels: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that are present; 0 when none is.
    pub mean: f64,
}

impl ConfusionMatrix {
    pub fn new(labels: usize) -> Self {
        Self {
            labels,
            counts: vec![0; labels * labels],
        }
    }

    /// Adds one image. Pixels whose truth is the ignore label, or outside
    /// `mask` when given, are skipped.
    pub fn add(&mut self, pred: &LabelMap, truth: &LabelMap, mask: Option<&[bool]>) -> Result<()> {
        if (pred.height, pred.width) != (truth.height, truth.width) {
            return Err(Error::shape(
                format!("{}x{}", truth.height, truth.width),
                format!("{}x{}", pred.height, pred.width),
            ));
        }
        if let Some(m) = mask {
            if m.len() != truth.data.len() {
                return Err(Error::shape(truth.data.len(), m.len()));
            }
        }
        for (i, (&p, &t)) in pred.data.iter().zip(&truth.data).enumerate() {
            if t == LabelMap::IGNORE || mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.labels || t >= self.labels {
                return Err(Error::invalid(format!(
                    "label {} out of range for {} labels",
                    p.max(t),
                    self.labels
                )));
            }
            self.counts[t * self.labels + p] += 1;
        }
        Ok(())
    }

    pub fn iou(&self) -> IouReport {
        let l = self.labels;
        let per_class: Vec<Option<f64>> = (0..l)
            .map(|c| {
                let inter = self.counts[c * l + c];
                let truth: u64 = self.counts[c * l..(c + 1) * l].iter().sum();
                let pred: u64 = (0..l).map(|t| self.counts[t * l + c]).sum();
                let union = truth + pred - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, mean }
    }
}

pub fn mean_iou(pred: &LabelMap, truth: &LabelMap, labels: usize) -> Result<IouReport> {
    let mut cm = ConfusionMatrix::new(labels);
    cm.add(pred, truth, None)?;
    Ok(cm.iou())
}

/// Pixels within Chebyshev distance `width` of a true boundary, where a
/// boundary pixel has a 4-neighbour with a different (non-ignored) label.
pub fn trimap_band(truth: &LabelMap, width: usize) -> Vec<bool> {
    let (h, w) = (truth.height, truth.width);
    let mut edge = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let a = truth.get(y, x);
            if a == LabelMap::IGNORE {
                continue;
            }
            let differs = |b: u8| b != LabelMap::IGNORE && b != a;
            if (x + 1 < w && differs(truth.get(y, x + 1))) || (y + 1 < h && differs(truth.get(y + 1, x))) {
                edge[y * w + x] = true;
                if x + 1 < w && differs(truth.get(y, x + 1)) {
                    edge[y * w + x + 1] = true;
                }
                if y + 1 < h && differs(truth.get(y + 1, x)) {
                    edge[(y + 1) * w + x] = true;
                }
            }
        }
    }
    // Separable dilation by a (2·width+1)² square.
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(width);
            let hi = (x + width).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|k| edge[y * w + k]);
        }
    }
    let mut band = vec![false; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(width);
        let hi = (y + width).min(h - 1);
        for x in 0..w {
            band[y * w + x] = (lo..=hi).any(|k| rows[k * w + x]);
        }
    }
    band
}

/// IoU restricted to the [`TRIMAP_BAND`]-pixel band around true boundaries.
pub fn trimap_iou(pred: &LabelMap, truth: &LabelMap, labels: usize) -> Result<IouReport> {
    let mut cm = ConfusionMatrix::new(labels);
    cm.add(pred, truth, Some(&trimap_band(truth, TRIMAP_BAND)))?;
    Ok(cm.iou())
}
