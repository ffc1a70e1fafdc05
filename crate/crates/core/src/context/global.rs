//! Image-level category nodes and the messages exchanged with pixel nodes.

use crate::error::{Error, Result};
use crate::tensor::{box_mean_wrap, softmax_neg_backward, ScoreMap, Tensor2D};

/// Per-category binary potentials `φ_g(l, y)`, `y = 1` meaning "present".
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTable {
    labels: usize,
    data: Vec<f64>,
}

impl GlobalTable {
    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            data: vec![0.0; 2 * labels],
        }
    }

    pub fn from_vec(labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * labels {
            return Err(Error::shape(2 * labels, data.len()));
        }
        Ok(Self { labels, data })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, l: usize, y: usize) -> f64 {
        self.data[2 * l + y]
    }

    pub fn set(&mut self, l: usize, y: usize, v: f64) {
        self.data[2 * l + y] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-wise `softmax(-φ)` over the two states.
    pub fn softmax_neg(&self) -> GlobalTable {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(2) {
            let m = row[0].min(row[1]);
            let e0 = (m - row[0]).exp();
            let e1 = (m - row[1]).exp();
            let z = e0 + e1;
            row[0] = e0 / z;
            row[1] = e1 / z;
        }
        out
    }

    pub fn as_tensor(&self) -> Tensor2D {
        Tensor2D::from_vec(1, self.labels, 2, self.data.clone()).expect("sized")
    }
}

/// Compatibility table `μ_g(l, v, y)` between the state `y` of category node
/// `l` and the label `v` of a pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCompatibility {
    labels: usize,
    data: Vec<f64>,
}

impl GlobalCompatibility {
    pub const ABSENCE_PENALTY: f64 = 2.0;

    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            data: vec![0.0; 2 * labels * labels],
        }
    }

    /// `-penalty` where `v = l` and the category is absent, so labels whose
    /// global node is off get their potentials raised.
    pub fn absence(labels: usize, penalty: f64) -> Self {
        let mut m = Self::zeros(labels);
        for l in 0..labels {
            m.set(l, l, 0, -penalty);
        }
        m
    }

    /// `1` where `v = l` and the category is present.
    pub fn indicator(labels: usize) -> Self {
        let mut m = Self::zeros(labels);
        for l in 0..labels {
            m.set(l, l, 1, 1.0);
        }
        m
    }

    pub fn from_vec(labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * labels * labels {
            return Err(Error::shape(2 * labels * labels, data.len()));
        }
        Ok(Self { labels, data })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn get(&self, l: usize, v: usize, y: usize) -> f64 {
        self.data[(l * self.labels + v) * 2 + y]
    }

    pub fn set(&mut self, l: usize, v: usize, y: usize, val: f64) {
        self.data[(l * self.labels + v) * 2 + y] = val;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Message from all global nodes to every pixel: a length-`L` vector
/// `G(v) = Σ_l Σ_y p_g(l, y) μ_g(l, v, y)` shared by all pixels.
pub fn global_message_to_local(p_g: &GlobalTable, mu: &GlobalCompatibility) -> Result<Vec<f64>> {
    check_labels(p_g.labels(), mu.labels())?;
    let labels = mu.labels();
    Ok((0..labels)
        .map(|v| {
            (0..labels)
                .map(|l| p_g.get(l, 0) * mu.get(l, v, 0) + p_g.get(l, 1) * mu.get(l, v, 1))
                .sum()
        })
        .collect())
}

/// Message from all pixels to each global node:
/// `m(l, y) = Σ_i Σ_v p̂(i, v) μ_g(l, v, y)`.
pub fn local_message_to_global(p_hat: &ScoreMap, mu: &GlobalCompatibility) -> Result<GlobalTable> {
    check_labels(p_hat.channels(), mu.labels())?;
    let mass = label_mass(p_hat);
    let labels = mu.labels();
    let mut out = GlobalTable::zeros(labels);
    for l in 0..labels {
        for y in 0..2 {
            out.set(l, y, (0..labels).map(|v| mass[v] * mu.get(l, v, y)).sum());
        }
    }
    Ok(out)
}

/// `Σ_i p̂(i, v)` for each label.
pub(crate) fn label_mass(p: &ScoreMap) -> Vec<f64> {
    let mut mass = vec![0.0; p.channels()];
    for px in p.data().chunks_exact(p.channels()) {
        for (m, &v) in mass.iter_mut().zip(px) {
            *m += v;
        }
    }
    mass
}

fn check_labels(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{b} labels"), format!("{a} labels")));
    }
    Ok(())
}

/// Predicts the initial global potentials from the pixel unaries.
///
/// For each label the descriptor is the peak of the locally averaged
/// probability, `d_l = max_i box(softmax(-φ))(i, l)`, and
/// `φ_g(l, 1) = -(w_l d_l + b_l)`, `φ_g(l, 0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalHead {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub pool_radius: usize,
}

/// Values kept for [`GlobalHead::backward`].
#[derive(Clone, Debug)]
pub struct HeadCache {
    p: ScoreMap,
    descriptor: Vec<f64>,
    argmax: Vec<usize>,
}

/// Gradients of [`GlobalHead`] and of its input.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub phi: ScoreMap,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GlobalHead {
    pub const POOL_RADIUS: usize = 4;
    pub const PRESENCE_WEIGHT: f64 = 20.0;
    pub const PRESENCE_BIAS: f64 = -7.0;

    pub fn zeros(labels: usize) -> Self {
        Self {
            weight: vec![0.0; labels],
            bias: vec![0.0; labels],
            pool_radius: Self::POOL_RADIUS,
        }
    }

    /// Presence probability 0.5 at `d = 0.35`, about 0.12 at `d = 0.25`
    /// and 0.88 at `d = 0.45`.
    pub fn presence(labels: usize) -> Self {
        Self {
            weight: vec![Self::PRESENCE_WEIGHT; labels],
            bias: vec![Self::PRESENCE_BIAS; labels],
            pool_radius: Self::POOL_RADIUS,
        }
    }

    pub fn labels(&self) -> usize {
        self.weight.len()
    }

    pub fn forward(&self, phi: &ScoreMap) -> Result<GlobalTable> {
        Ok(self.forward_cached(phi)?.0)
    }

    pub fn forward_cached(&self, phi: &ScoreMap) -> Result<(GlobalTable, HeadCache)> {
        check_labels(phi.channels(), self.labels())?;
        if phi.is_empty() {
            return Err(Error::EmptyTensor);
        }
        let (h, w) = (phi.height(), phi.width());
        let p = phi.softmax_neg();
        let mut descriptor = Vec::with_capacity(self.labels());
        let mut argmax = Vec::with_capacity(self.labels());
        for plane in p.planes() {
            let pooled = box_mean_wrap(&plane, h, w, self.pool_radius);
            let (idx, best) = pooled
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            descriptor.push(best);
            argmax.push(idx);
        }
        let mut table = GlobalTable::zeros(self.labels());
        for l in 0..self.labels() {
            table.set(l, 1, -(self.weight[l] * descriptor[l] + self.bias[l]));
        }
        Ok((
            table,
            HeadCache {
                p,
                descriptor,
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &HeadCache, grad: &GlobalTable) -> HeadGrads {
        let (h, w, labels) = cache.p.shape();
        let mut weight = vec![0.0; labels];
        let mut bias = vec![0.0; labels];
        let mut planes = vec![vec![0.0; h * w]; labels];
        for l in 0..labels {
            let g = grad.get(l, 1);
            weight[l] = -g * cache.descriptor[l];
            bias[l] = -g;
            let mut seed = vec![0.0; h * w];
            seed[cache.argmax[l]] = -g * self.weight[l];
            // The wrap box mean is symmetric, so it is its own transpose.
            planes[l] = box_mean_wrap(&seed, h, w, self.pool_radius);
        }
        let grad_p = Tensor2D::from_planes(h, w, &planes);
        HeadGrads {
            phi: softmax_neg_backward(&cache.p, &grad_p),
            weight,
            bias,
        }
    }
}
