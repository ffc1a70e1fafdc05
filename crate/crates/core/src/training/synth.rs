//! Synthetic segmentation scenes with noisy unaries.
//!
//! Each scene is a textured background (class 0) with one to three
//! ellipses or star-shaped polygons. Every foreground class has its own color.
//! Class co-occurrence and placement follow fixed rules, so context carries
//! information. A scene holds either a single class `k` or an adjacent pair
//! `{k, k+1}`, with `1 <= k <= L-2`; in a pair, class `k` objects sit in the
//! upper half and class `k+1` objects in the lower half. With four labels
//! class 3 therefore only appears below class 2, and classes 1 and 3 never
//! share an image.
//!
//! Unaries are `-onehot(labels')` plus Gaussian noise, where `labels'` is
//! the ground truth with each object shifted by up to `jitter` pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{GuideImage, LabelMap, ScoreMap};

const COLORS: [[f64; 3]; 7] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.75, 0.3],
    [0.25, 0.35, 0.85],
    [0.9, 0.8, 0.2],
    [0.8, 0.3, 0.75],
    [0.2, 0.8, 0.8],
    [0.95, 0.55, 0.15],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub labels: usize,
    /// Standard deviation of the unary noise.
    pub sigma: f64,
    /// Largest per-object displacement of the unary masks, in pixels.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            labels: 4,
            sigma: 1.0,
            jitter: 2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: GuideImage,
    pub labels: LabelMap,
    pub unary: ScoreMap,
    pub unary_noise_seed: u64,
}

enum Shape {
    Ellipse { cy: f64, cx: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, a, b, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut inside = false;
                for k in 0..n {
                    let (y0, x0) = vertices[k];
                    let (y1, x1) = vertices[(k + 1) % n];
                    if (y0 > y) != (y1 > y) && x < x0 + (y - y0) * (x1 - x0) / (y1 - y0) {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, cy: f64, cx: f64, scale: f64) -> Shape {
    if rng.random_bool(0.5) {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Shape::Ellipse {
            cy,
            cx,
            a: rng.random_range(6.0..14.0) * scale,
            b: rng.random_range(6.0..14.0) * scale,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    } else {
        let n = rng.random_range(3..=6);
        let step = std::f64::consts::TAU / n as f64;
        let phase = rng.random_range(0.0..step);
        // Evenly spread angles keep the center inside the polygon.
        let angles: Vec<f64> = (0..n)
            .map(|i| phase + step * (i as f64 + rng.random_range(-0.3..0.3)))
            .collect();
        let vertices = angles
            .iter()
            .map(|&t| {
                let r = rng.random_range(8.0..15.0) * scale;
                (cy + r * t.sin(), cx + r * t.cos())
            })
            .collect();
        Shape::Polygon { vertices }
    }
}

fn make_sample(cfg: &SyntheticConfig, sample_seed: u64) -> SyntheticSample {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let scale = h.min(w) as f64 / 64.0;
    let pixel_noise = Normal::new(0.0, 0.03).expect("valid");
    let tint = Normal::new(0.0, 0.06).expect("valid");

    let mut labels = LabelMap::filled(h, w, 0);
    let mut jittered = LabelMap::filled(h, w, 0);
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut owner = vec![usize::MAX; h * w];

    let k = rng.random_range(1..=(cfg.labels - 2).max(1));
    let pair = cfg.labels > 2 && rng.random_bool(0.5);
    let mut classes = if pair { vec![k, k + 1] } else { vec![k] };
    if rng.random_bool(0.5) {
        classes.push(classes[rng.random_range(0..classes.len())]);
    }
    // Higher classes first, so a pair's class `k` is never fully covered.
    classes.sort_unstable_by(|a, b| b.cmp(a));
    for (obj, &class) in classes.iter().enumerate() {
        let (y_lo, y_hi) = match (pair, class == k) {
            (false, _) => (0.15, 0.85),
            (true, true) => (0.15, 0.5),
            (true, false) => (0.5, 0.85),
        };
        let cy = rng.random_range(y_lo..y_hi) * h as f64;
        let cx = rng.random_range(0.15..0.85) * w as f64;
        let shape = random_shape(&mut rng, cy, cx, scale);
        let j = cfg.jitter as i64;
        let dy = rng.random_range(-j..=j) as isize;
        let dx = rng.random_range(-j..=j) as isize;
        let base = COLORS[(class - 1) % COLORS.len()];
        colors.push(std::array::from_fn(|c| base[c] + tint.sample(&mut rng)));
        for y in 0..h {
            for x in 0..w {
                if !shape.contains(y as f64 + 0.5, x as f64 + 0.5) {
                    continue;
                }
                labels.set(y, x, class as u8);
                owner[y * w + x] = obj;
                let (sy, sx) = (y as isize + dy, x as isize + dx);
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    jittered.set(sy as usize, sx as usize, class as u8);
                }
            }
        }
    }

    let gray = rng.random_range(0.35..0.6);
    let freq = rng.random_range(0.15..0.45);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut image = GuideImage::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let color = match owner[i] {
                usize::MAX => {
                    let stripe = 0.06 * (freq * (x as f64 + 0.6 * y as f64) + phase).sin();
                    [gray + stripe, gray + 0.9 * stripe, gray - 0.03 + stripe]
                }
                o => colors[o],
            };
            for (c, &v) in color.iter().enumerate() {
                let v = v + pixel_noise.sample(&mut rng);
                image.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }

    let unary_noise_seed: u64 = rng.random();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(unary_noise_seed);
    let mut unary = ScoreMap::zeros(h, w, cfg.labels);
    let noise = (cfg.sigma > 0.0).then(|| Normal::new(0.0, cfg.sigma).expect("valid sigma"));
    for i in 0..h * w {
        let truth = jittered.data[i] as usize;
        for (v, p) in unary.pixel_mut(i).iter_mut().enumerate() {
            let base = if v == truth { -1.0 } else { 0.0 };
            *p = base + noise.as_ref().map_or(0.0, |n| n.sample(&mut noise_rng));
        }
    }

    SyntheticSample {
        image,
        labels,
        unary,
        unary_noise_seed,
    }
}

/// `n` scenes, reproducible from `cfg.seed`.
pub fn make_synthetic_dataset(n: usize, cfg: &SyntheticConfig) -> Result<Vec<SyntheticSample>> {
    if !(2..=8).contains(&cfg.labels) {
        return Err(Error::invalid(format!("labels must be in [2, 8], got {}", cfg.labels)));
    }
    for d in [cfg.height, cfg.width] {
        if !(32..=128).contains(&d) {
            return Err(Error::invalid(format!("image side must be in [32, 128], got {d}")));
        }
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {}", cfg.sigma)));
    }
    if cfg.jitter > 3 {
        return Err(Error::invalid(format!("jitter must be <= 3, got {}", cfg.jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..n).map(|_| make_sample(cfg, rng.random())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::metrics::ConfusionMatrix;

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_dataset(5, &cfg).unwrap();
        let b = make_synthetic_dataset(5, &cfg).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(5, &SyntheticConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn clean_unaries_are_exact() {
        let cfg = SyntheticConfig {
            sigma: 0.0,
            jitter: 0,
            ..Default::default()
        };
        let mut cm = ConfusionMatrix::new(4);
        for s in make_synthetic_dataset(10, &cfg).unwrap() {
            assert_eq!(s.unary.argmin_labels(), s.labels);
            cm.add(&s.unary.argmin_labels(), &s.labels, None).unwrap();
        }
        assert_eq!(cm.iou().mean, 1.0);
    }

    #[test]
    fn values_in_range() {
        for s in make_synthetic_dataset(4, &SyntheticConfig::default()).unwrap() {
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.labels.data.iter().all(|&l| l < 4));
        }
    }

    #[test]
    fn layout_rule() {
        let cfg = SyntheticConfig::default();
        let mut both = 0;
        for s in make_synthetic_dataset(60, &cfg).unwrap() {
            let mut rows: [Vec<usize>; 4] = Default::default();
            for y in 0..64 {
                for x in 0..64 {
                    rows[s.labels.get(y, x) as usize].push(y);
                }
            }
            assert!(rows[1].is_empty() || rows[3].is_empty(), "classes 1 and 3 together");
            if !rows[3].is_empty() {
                assert!(!rows[2].is_empty(), "class 3 without class 2");
                let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
                assert!(mean(&rows[2]) < mean(&rows[3]));
                both += 1;
            }
        }
        assert!(both > 5);
    }

    #[test]
    fn two_labels() {
        let cfg = SyntheticConfig { labels: 2, ..Default::default() };
        for s in make_synthetic_dataset(5, &cfg).unwrap() {
            assert!(s.labels.data.iter().all(|&l| l < 2));
            assert!(s.labels.data.contains(&1));
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SyntheticConfig { labels: 1, ..Default::default() },
            SyntheticConfig { labels: 9, ..Default::default() },
            SyntheticConfig { height: 16, ..Default::default() },
            SyntheticConfig { jitter: 4, ..Default::default() },
            SyntheticConfig { sigma: -1.0, ..Default::default() },
        ] {
            assert!(make_synthetic_dataset(1, &cfg).is_err());
        }
    }
}
