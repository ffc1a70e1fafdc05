//! Fine-level guidance CRF: mean-field updates whose message passing is the
//! guided filter.
//!
//! One iteration:
//!
//! ```text
//! q = softmax(-φ)
//! g = W q                        (guided filter)
//! m(i,v) = Σ_v' μ(v,v') g(i,v')  (compatibility transform)
//! φ = φ_u + λ m                  (local update)
//! ```
//!
//! `μ` is an energy: with the Potts matrix, probability mass that neighbours
//! assign to other labels raises the potential of `v`, so agreeing
//! neighbours make `v` more likely.

use crate::error::{Error, Result};
use crate::guided::{FastGuidedFilter, GuidedFilterConfig, GuidedFilterPlan};
use crate::tensor::{softmax_neg_backward, GuideImage, ScoreMap, Tensor2D};

/// `L × L` label compatibility `μ(v, v')`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CompatibilityMatrix {
    labels: usize,
    data: Vec<f64>,
}

impl CompatibilityMatrix {
    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            data: vec![0.0; labels * labels],
        }
    }

    pub fn from_vec(labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != labels * labels {
            return Err(Error::shape(labels * labels, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("compatibility matrix has non-finite entries"));
        }
        Ok(Self { labels, data })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.labels + w]
    }

    pub fn set(&mut self, v: usize, w: usize, val: f64) {
        self.data[v * self.labels + w] = val;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.labels).map(|v| self.get(v, v)).sum()
    }

    /// `m(i, v) = Σ_v' μ(v, v') g(i, v')`.
    pub fn transform(&self, g: &ScoreMap) -> ScoreMap {
        let l = self.labels;
        let mut out = ScoreMap::zeros(g.height(), g.width(), l);
        for (o, px) in out.data_mut().chunks_exact_mut(l).zip(g.data().chunks_exact(l)) {
            for v in 0..l {
                let row = &self.data[v * l..(v + 1) * l];
                o[v] = row.iter().zip(px).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// `d(i, v') = Σ_v μ(v, v') m(i, v)`.
    pub fn transform_transpose(&self, m: &ScoreMap) -> ScoreMap {
        let l = self.labels;
        let mut out = ScoreMap::zeros(m.height(), m.width(), l);
        for (o, px) in out.data_mut().chunks_exact_mut(l).zip(m.data().chunks_exact(l)) {
            for v in 0..l {
                let row = &self.data[v * l..(v + 1) * l];
                for (d, &mu) in o.iter_mut().zip(row) {
                    *d += mu * px[v];
                }
            }
        }
        out
    }
}

/// `μ(v, v') = 1[v ≠ v']`.
pub fn potts_init(labels: usize) -> Result<CompatibilityMatrix> {
    if labels < 2 {
        return Err(Error::invalid(format!("Potts model needs >= 2 labels, got {labels}")));
    }
    let mut m = CompatibilityMatrix::zeros(labels);
    for v in 0..labels {
        for w in 0..labels {
            if v != w {
                m.set(v, w, 1.0);
            }
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceParams {
    pub mu: CompatibilityMatrix,
    pub lambda: f64,
    pub filter: GuidedFilterConfig,
    /// Iterations at inference. Training always runs one.
    pub iters: usize,
}

impl GuidanceParams {
    pub const DEFAULT_ITERS: usize = 3;

    /// Potts compatibility, `λ = 1`, default filter, three iterations.
    pub fn potts(labels: usize) -> Result<Self> {
        Ok(Self {
            mu: potts_init(labels)?,
            lambda: 1.0,
            filter: GuidedFilterConfig::default(),
            iters: Self::DEFAULT_ITERS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.iters == 0 {
            return Err(Error::invalid("guidance iterations must be >= 1"));
        }
        if self.mu.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("compatibility matrix has non-finite entries"));
        }
        self.filter.validate()
    }

    fn check(&self, phi_u: &ScoreMap, guide: &GuideImage) -> Result<()> {
        self.validate()?;
        if phi_u.is_empty() {
            return Err(Error::EmptyTensor);
        }
        if phi_u.channels() != self.mu.labels() {
            return Err(Error::shape(
                format!("{} labels", self.mu.labels()),
                format!("{} labels", phi_u.channels()),
            ));
        }
        if (phi_u.height(), phi_u.width()) != (guide.height(), guide.width()) {
            return Err(Error::shape(
                format!("{}x{}", guide.height(), guide.width()),
                format!("{}x{}", phi_u.height(), phi_u.width()),
            ));
        }
        Ok(())
    }
}

/// Activations of a one-iteration training forward pass.
#[derive(Clone, Debug)]
pub struct GuidanceCache {
    plan: GuidedFilterPlan,
    q: ScoreMap,
    g: ScoreMap,
    m: ScoreMap,
    mu: CompatibilityMatrix,
    lambda: f64,
}

#[derive(Clone, Debug)]
pub struct GuidanceGrads {
    pub phi_u: ScoreMap,
    pub mu: CompatibilityMatrix,
    pub lambda: f64,
}

fn local_update(phi_u: &ScoreMap, m: &ScoreMap, lambda: f64) -> ScoreMap {
    let mut out = phi_u.clone();
    for (o, &mv) in out.data_mut().iter_mut().zip(m.data()) {
        *o += lambda * mv;
    }
    out
}

/// One exact iteration with everything kept for [`guidance_backward`].
/// `params.iters` and `params.filter.subsample` are ignored.
pub fn guidance_forward(
    phi_u: &ScoreMap,
    guide: &GuideImage,
    params: &GuidanceParams,
) -> Result<(ScoreMap, GuidanceCache)> {
    params.check(phi_u, guide)?;
    let plan = GuidedFilterPlan::new(guide, &params.filter)?;
    let q = phi_u.softmax_neg();
    let g = plan.filter(&q)?;
    let m = params.mu.transform(&g);
    let phi = local_update(phi_u, &m, params.lambda);
    Ok((
        phi,
        GuidanceCache {
            plan,
            q,
            g,
            m,
            mu: params.mu.clone(),
            lambda: params.lambda,
        },
    ))
}

/// `params.iters` iterations, each re-filtering the updated probabilities.
/// `params.filter.subsample > 1` selects the down-sampled filter.
pub fn guidance_infer(phi_u: &ScoreMap, guide: &GuideImage, params: &GuidanceParams) -> Result<ScoreMap> {
    params.check(phi_u, guide)?;
    if params.filter.subsample > 1 {
        let fast = FastGuidedFilter::new(guide, &params.filter)?;
        iterate(phi_u, params, |q| fast.apply(q))
    } else {
        let plan = GuidedFilterPlan::new(guide, &params.filter)?;
        iterate(phi_u, params, |q| plan.filter(q))
    }
}

fn iterate(
    phi_u: &ScoreMap,
    params: &GuidanceParams,
    filter: impl Fn(&Tensor2D) -> Result<Tensor2D>,
) -> Result<ScoreMap> {
    let mut phi = phi_u.clone();
    for _ in 0..params.iters {
        let g = filter(&phi.softmax_neg())?;
        phi = local_update(phi_u, &params.mu.transform(&g), params.lambda);
    }
    Ok(phi)
}

pub fn guidance_backward(grad_phi: &ScoreMap, cache: &GuidanceCache) -> Result<GuidanceGrads> {
    grad_phi.ensure_shape(&cache.q)?;
    let lambda = cache.lambda;
    let l = cache.mu.labels();
    let d_lambda = grad_phi.dot(&cache.m);
    let dm = grad_phi.scale(lambda);
    let mut d_mu = CompatibilityMatrix::zeros(l);
    for (dpx, gpx) in dm.data().chunks_exact(l).zip(cache.g.data().chunks_exact(l)) {
        for v in 0..l {
            let row = &mut d_mu.data_mut()[v * l..(v + 1) * l];
            for (d, &gv) in row.iter_mut().zip(gpx) {
                *d += dpx[v] * gv;
            }
        }
    }
    let dg = cache.mu.transform_transpose(&dm);
    let dq = cache.plan.filter_transpose(&dg)?;
    let through = softmax_neg_backward(&cache.q, &dq);
    let mut d_phi_u = grad_phi.clone();
    for (a, b) in d_phi_u.data_mut().iter_mut().zip(through.data()) {
        *a += b;
    }
    Ok(GuidanceGrads {
        phi_u: d_phi_u,
        mu: d_mu,
        lambda: d_lambda,
    })
}

#[derive(Clone, Debug, Default)]
enum Slot {
    #[default]
    Empty,
    Inference,
    Consumed,
    Train(Box<GuidanceCache>),
}

/// Guidance CRF with its parameters and the forward cache for training.
#[derive(Clone, Debug)]
pub struct GuidanceCrf {
    pub params: GuidanceParams,
    slot: Slot,
}

impl GuidanceCrf {
    pub fn new(params: GuidanceParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            slot: Slot::Empty,
        })
    }

    pub fn forward_train(&mut self, phi_u: &ScoreMap, guide: &GuideImage) -> Result<ScoreMap> {
        self.slot = Slot::Empty;
        let (phi, cache) = guidance_forward(phi_u, guide, &self.params)?;
        self.slot = Slot::Train(Box::new(cache));
        Ok(phi)
    }

    pub fn infer(&mut self, phi_u: &ScoreMap, guide: &GuideImage) -> Result<ScoreMap> {
        self.slot = Slot::Inference;
        guidance_infer(phi_u, guide, &self.params)
    }

    pub fn backward(&mut self, grad_phi: &ScoreMap) -> Result<GuidanceGrads> {
        match std::mem::replace(&mut self.slot, Slot::Consumed) {
            Slot::Train(cache) => guidance_backward(grad_phi, &cache),
            Slot::Empty => Err(Error::MissingCache),
            Slot::Inference => Err(Error::StaleCache("last forward pass ran in inference mode".into())),
            Slot::Consumed => Err(Error::StaleCache("forward cache already consumed".into())),
        }
    }
}
