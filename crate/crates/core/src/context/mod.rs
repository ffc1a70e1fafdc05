//! Coarse-level context CRF: unary potentials refined by learned high-order
//! clique messages and by image-level category nodes.
//!
//! One iteration:
//!
//! ```text
//! p̂   = softmax(-φ_u)              p_g = softmax(-φ_g)
//! φ_u ← φ  - U[p̂] - G(p_g)         φ_g ← φ_g0 - Σ_i Σ_v p̂(i,v) μ_g(·,v,·)
//! ```

mod global;
mod net;

pub use global::{
    global_message_to_local, local_message_to_global, GlobalCompatibility, GlobalHead, GlobalTable,
    HeadCache, HeadGrads,
};
pub use net::{Conv2d, ContextMessageNet, NetCache, NetGrads};

use crate::error::{Error, Result};
use crate::tensor::{softmax_neg_backward, ScoreMap};

/// Per-pixel softmax of the negated potentials.
pub fn softmax_local(phi_u: &ScoreMap) -> ScoreMap {
    phi_u.softmax_neg()
}

/// `U[p̂]`, the learned high-order message. Takes no image argument.
pub fn high_order_message(p_hat: &ScoreMap, net: &ContextMessageNet) -> Result<ScoreMap> {
    net.forward(p_hat)
}

/// The fixed inputs of the context CRF.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextUnaries {
    pub phi: ScoreMap,
    pub phi_g0: GlobalTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextState {
    pub phi_u: ScoreMap,
    pub phi_g: GlobalTable,
    pub p_hat: ScoreMap,
    pub p_g: GlobalTable,
    pub iteration: usize,
}

impl ContextState {
    pub fn new(unaries: &ContextUnaries) -> Self {
        Self {
            p_hat: unaries.phi.softmax_neg(),
            p_g: unaries.phi_g0.softmax_neg(),
            phi_u: unaries.phi.clone(),
            phi_g: unaries.phi_g0.clone(),
            iteration: 0,
        }
    }
}

fn check_inputs(unaries: &ContextUnaries, net: &ContextMessageNet, mu_g: &GlobalCompatibility) -> Result<()> {
    let l = unaries.phi.channels();
    if unaries.phi.is_empty() {
        return Err(Error::EmptyTensor);
    }
    for (what, n) in [
        ("global unaries", unaries.phi_g0.labels()),
        ("message net", net.labels()),
        ("global compatibility", mu_g.labels()),
    ] {
        if n != l {
            return Err(Error::shape(format!("{l} labels"), format!("{n} labels in {what}")));
        }
    }
    Ok(())
}

struct Step {
    state: ContextState,
    p_hat: ScoreMap,
    p_g: GlobalTable,
    net_cache: NetCache,
}

fn step(state: &ContextState, unaries: &ContextUnaries, net: &ContextMessageNet, mu_g: &GlobalCompatibility) -> Result<Step> {
    let p_hat = state.phi_u.softmax_neg();
    let p_g = state.phi_g.softmax_neg();
    let (u, net_cache) = net.forward_cached(&p_hat)?;
    let g = global_message_to_local(&p_g, mu_g)?;
    let labels = g.len();
    let mut phi_u = unaries.phi.clone();
    for (i, px) in phi_u.data_mut().chunks_exact_mut(labels).enumerate() {
        let ui = u.pixel(i);
        for v in 0..labels {
            px[v] = px[v] - ui[v] - g[v];
        }
    }
    let to_global = local_message_to_global(&p_hat, mu_g)?;
    let mut phi_g = unaries.phi_g0.clone();
    for (a, b) in phi_g.data_mut().iter_mut().zip(to_global.data()) {
        *a -= b;
    }
    let state = ContextState {
        p_hat: phi_u.softmax_neg(),
        p_g: phi_g.softmax_neg(),
        phi_u,
        phi_g,
        iteration: state.iteration + 1,
    };
    Ok(Step {
        state,
        p_hat,
        p_g,
        net_cache,
    })
}

/// Runs exactly `iters` mean-field iterations starting from `state`.
pub fn context_iterate(
    state: &ContextState,
    unaries: &ContextUnaries,
    net: &ContextMessageNet,
    mu_g: &GlobalCompatibility,
    iters: usize,
) -> Result<ContextState> {
    if iters == 0 {
        return Err(Error::invalid("context iterations must be >= 1"));
    }
    check_inputs(unaries, net, mu_g)?;
    state.phi_u.ensure_shape(&unaries.phi)?;
    let mut s = state.clone();
    for _ in 0..iters {
        s = step(&s, unaries, net, mu_g)?.state;
    }
    Ok(s)
}

/// Everything [`context_backward`] needs from a one-iteration forward pass.
#[derive(Clone, Debug)]
pub struct ContextCache {
    p_hat: ScoreMap,
    p_g: GlobalTable,
    net_cache: NetCache,
    mu_g: GlobalCompatibility,
}

/// Single iteration from the fresh state, keeping the activations.
pub fn context_forward(
    unaries: &ContextUnaries,
    net: &ContextMessageNet,
    mu_g: &GlobalCompatibility,
) -> Result<(ContextState, ContextCache)> {
    check_inputs(unaries, net, mu_g)?;
    let s = step(&ContextState::new(unaries), unaries, net, mu_g)?;
    Ok((
        s.state,
        ContextCache {
            p_hat: s.p_hat,
            p_g: s.p_g,
            net_cache: s.net_cache,
            mu_g: mu_g.clone(),
        },
    ))
}

#[derive(Clone, Debug)]
pub struct ContextGrads {
    /// `None` when the input gradient was not requested.
    pub phi: Option<ScoreMap>,
    pub phi_g0: GlobalTable,
    pub net: NetGrads,
    pub mu_g: GlobalCompatibility,
}

/// Reverse pass of one context iteration. `net` must hold the parameters used
/// in the forward pass. `grad_phi_g` is the upstream gradient of the updated
/// global potentials, if anything consumed them.
pub fn context_backward(
    grad_phi_u: &ScoreMap,
    grad_phi_g: Option<&GlobalTable>,
    cache: &ContextCache,
    net: &ContextMessageNet,
) -> Result<ContextGrads> {
    backward_impl(grad_phi_u, grad_phi_g, cache, net, true)
}

fn backward_impl(
    grad: &ScoreMap,
    grad_phi_g: Option<&GlobalTable>,
    cache: &ContextCache,
    net: &ContextMessageNet,
    need_input: bool,
) -> Result<ContextGrads> {
    grad.ensure_shape(&cache.p_hat)?;
    let labels = grad.channels();
    let mu = &cache.mu_g;
    if let Some(gg) = grad_phi_g {
        if gg.labels() != labels {
            return Err(Error::shape(labels, gg.labels()));
        }
    }

    let neg = grad.scale(-1.0);
    let (dp_net, net_grads) = net.backward(&cache.net_cache, &neg, need_input);

    // Global -> local: φ_u -= G(v), G(v) = Σ_l Σ_y p_g(l,y) μ(l,v,y).
    let mut d_g = vec![0.0; labels];
    for px in grad.data().chunks_exact(labels) {
        for (d, &g) in d_g.iter_mut().zip(px) {
            *d -= g;
        }
    }
    let mut d_mu = GlobalCompatibility::zeros(labels);
    let mut dp_g = GlobalTable::zeros(labels);
    for l in 0..labels {
        for y in 0..2 {
            let mut acc = 0.0;
            for v in 0..labels {
                d_mu.set(l, v, y, cache.p_g.get(l, y) * d_g[v]);
                acc += mu.get(l, v, y) * d_g[v];
            }
            dp_g.set(l, y, acc);
        }
    }

    let mut dphi_g0 = GlobalTable::zeros(labels);
    let mut dp_hat_global = vec![0.0; labels];
    if let Some(gg) = grad_phi_g {
        // Local -> global: φ_g = φ_g0 - Σ_i Σ_v p̂(i,v) μ(l,v,y).
        let mass = global::label_mass(&cache.p_hat);
        for l in 0..labels {
            for y in 0..2 {
                let g = gg.get(l, y);
                dphi_g0.set(l, y, g);
                for v in 0..labels {
                    dp_hat_global[v] -= g * mu.get(l, v, y);
                    let cur = d_mu.get(l, v, y);
                    d_mu.set(l, v, y, cur - g * mass[v]);
                }
            }
        }
    }
    for l in 0..labels {
        let (p0, p1) = (cache.p_g.get(l, 0), cache.p_g.get(l, 1));
        let dot = p0 * dp_g.get(l, 0) + p1 * dp_g.get(l, 1);
        let a = dphi_g0.get(l, 0) - p0 * (dp_g.get(l, 0) - dot);
        let b = dphi_g0.get(l, 1) - p1 * (dp_g.get(l, 1) - dot);
        dphi_g0.set(l, 0, a);
        dphi_g0.set(l, 1, b);
    }

    let phi = if need_input {
        let mut dp = dp_net.expect("requested");
        if dp_hat_global.iter().any(|&v| v != 0.0) {
            for px in dp.data_mut().chunks_exact_mut(labels) {
                for (d, &g) in px.iter_mut().zip(&dp_hat_global) {
                    *d += g;
                }
            }
        }
        let through = softmax_neg_backward(&cache.p_hat, &dp);
        let mut out = grad.clone();
        for (o, t) in out.data_mut().iter_mut().zip(through.data()) {
            *o += t;
        }
        Some(out)
    } else {
        None
    };

    Ok(ContextGrads {
        phi,
        phi_g0: dphi_g0,
        net: net_grads,
        mu_g: d_mu,
    })
}

#[derive(Clone, Debug, Default)]
enum Slot {
    #[default]
    Empty,
    Inference,
    Consumed,
    Train(Box<(ContextCache, HeadCache)>),
}

/// Context CRF with its parameters, the global-node head, and the forward
/// cache needed for training.
#[derive(Clone, Debug)]
pub struct ContextCrf {
    pub net: ContextMessageNet,
    pub mu_g: GlobalCompatibility,
    pub head: GlobalHead,
    /// Iterations used by [`ContextCrf::infer`].
    pub iters: usize,
    slot: Slot,
}

/// Gradients of every [`ContextCrf`] parameter.
#[derive(Clone, Debug)]
pub struct ContextCrfGrads {
    pub phi: Option<ScoreMap>,
    pub net: NetGrads,
    pub mu_g: GlobalCompatibility,
    pub head: HeadGrads,
}

impl ContextCrf {
    pub fn new(net: ContextMessageNet, mu_g: GlobalCompatibility, head: GlobalHead) -> Result<Self> {
        let l = net.labels();
        if mu_g.labels() != l || head.labels() != l {
            return Err(Error::shape(
                format!("{l} labels"),
                format!("{} / {} labels", mu_g.labels(), head.labels()),
            ));
        }
        Ok(Self {
            net,
            mu_g,
            head,
            iters: 1,
            slot: Slot::Empty,
        })
    }

    /// All-zero parameters: the identity on the unaries.
    pub fn zeros(labels: usize, channels: usize, k1: usize, k2: usize) -> Result<Self> {
        Self::new(
            ContextMessageNet::zeros(labels, channels, k1, k2)?,
            GlobalCompatibility::zeros(labels),
            GlobalHead::zeros(labels),
        )
    }

    pub fn labels(&self) -> usize {
        self.net.labels()
    }

    pub fn unaries(&self, phi: &ScoreMap) -> Result<ContextUnaries> {
        Ok(ContextUnaries {
            phi: phi.clone(),
            phi_g0: self.head.forward(phi)?,
        })
    }

    /// Runs `self.iters` iterations and returns the full state.
    pub fn infer(&mut self, phi: &ScoreMap) -> Result<ContextState> {
        self.slot = Slot::Inference;
        let unaries = self.unaries(phi)?;
        context_iterate(&ContextState::new(&unaries), &unaries, &self.net, &self.mu_g, self.iters)
    }

    /// One iteration with activations cached for [`ContextCrf::backward`].
    pub fn forward_train(&mut self, phi: &ScoreMap) -> Result<ContextState> {
        self.slot = Slot::Empty;
        let (phi_g0, head_cache) = self.head.forward_cached(phi)?;
        let unaries = ContextUnaries {
            phi: phi.clone(),
            phi_g0,
        };
        let (state, cache) = context_forward(&unaries, &self.net, &self.mu_g)?;
        self.slot = Slot::Train(Box::new((cache, head_cache)));
        Ok(state)
    }

    /// Consumes the cached forward pass. `need_input` controls whether the
    /// gradient with respect to the unaries is computed.
    pub fn backward(&mut self, grad_phi_u: &ScoreMap, need_input: bool) -> Result<ContextCrfGrads> {
        let (cache, head_cache) = match std::mem::replace(&mut self.slot, Slot::Consumed) {
            Slot::Train(b) => *b,
            Slot::Empty => return Err(Error::MissingCache),
            Slot::Inference => {
                return Err(Error::StaleCache("last forward pass ran in inference mode".into()))
            }
            Slot::Consumed => {
                return Err(Error::StaleCache("forward cache already consumed".into()))
            }
        };
        let g = backward_impl(grad_phi_u, None, &cache, &self.net, need_input)?;
        let head = self.head.backward(&head_cache, &g.phi_g0);
        let phi = g.phi.map(|mut p| {
            for (a, b) in p.data_mut().iter_mut().zip(head.phi.data()) {
                *a += b;
            }
            p
        });
        Ok(ContextCrfGrads {
            phi,
            net: g.net,
            mu_g: g.mu_g,
            head,
        })
    }
}
