//! Self-checks: the guided filter against its explicit weight matrix, and
//! every backward pass against central finite differences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextCrf, ContextMessageNet, GlobalCompatibility, GlobalHead};
use crate::error::{Error, Result};
use crate::guidance::{guidance_backward, guidance_forward, CompatibilityMatrix, GuidanceParams};
use crate::guided::{self, GuidedFilterConfig, GuidedFilterPlan};
use crate::tensor::{LabelMap, ScoreMap, Tensor2D};
use crate::training::gradcheck::{central_difference, max_relative_error, STEP};
use crate::training::{cross_entropy_loss, Arch, Model, ModelConfig};

pub const ORACLE_TOLERANCE: f64 = 1e-6;
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const ORACLE_SIZE: usize = 12;
pub const GRAD_SIZE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    All,
    Guided,
    Guidance,
    Context,
    Loss,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Component::All,
            "guided" => Component::Guided,
            "guidance" => Component::Guidance,
            "context" => Component::Context,
            "loss" => Component::Loss,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown component {s:?} (all, guided, guidance, context, loss)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<34} {:>11.3e} {:>9.0e}  {}",
            self.name,
            self.max_error,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// `perturb` is added to every analytic gradient before comparison. Zero
/// for real checks; anything else should make the gradient checks fail.
#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    pub perturb: f64,
}

pub fn run(component: Component, opts: CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let all = component == Component::All;
    if all || component == Component::Guided {
        out.extend(guided_oracle()?);
    }
    if all || component == Component::Guidance {
        out.extend(guidance_gradients(opts, 3)?);
    }
    if all || component == Component::Context {
        out.extend(context_gradients(opts, 3)?);
    }
    if all || component == Component::Loss {
        out.push(loss_gradient(opts)?);
    }
    if all {
        out.push(end_to_end_gradient(opts)?);
    }
    Ok(out)
}

fn uniform(h: usize, w: usize, c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor2D {
    Tensor2D::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

fn fill(v: &mut [f64], scale: f64, rng: &mut ChaCha8Rng) {
    for x in v {
        *x = rng.random_range(-scale..scale);
    }
}

fn shifted(v: &[f64], perturb: f64) -> Vec<f64> {
    v.iter().map(|x| x + perturb).collect()
}

/// Random guides and inputs for every (radius, epsilon) pair.
pub fn oracle_fixtures(per_setting: usize) -> Vec<(Tensor2D, Tensor2D, GuidedFilterConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6163);
    let mut out = Vec::new();
    for radius in [1, 2, 3] {
        for eps in [0.1, 1.0, 10.0] {
            for _ in 0..per_setting {
                let n = ORACLE_SIZE;
                let guide = uniform(n, n, 3, 0.0, 1.0, &mut rng);
                let input = uniform(n, n, 3, -1.0, 1.0, &mut rng);
                out.push((guide, input, GuidedFilterConfig::new(radius, eps)));
            }
        }
    }
    out
}

/// Filter vs explicit weights, transpose vs explicit transpose, constant
/// preservation and symmetry, each as a maximum over all fixtures.
pub fn guided_oracle() -> Result<Vec<CheckResult>> {
    let (mut filt, mut trans, mut stoch, mut sym) = (0f64, 0f64, 0f64, 0f64);
    let fixtures = oracle_fixtures(3);
    for (guide, input, cfg) in &fixtures {
        let plan = GuidedFilterPlan::new(guide, cfg)?;
        let w = guided::weight_matrix(guide, cfg)?;
        filt = filt.max(plan.filter(input)?.max_abs_diff(&w.apply(input)?));
        trans = trans.max(plan.filter_transpose(input)?.max_abs_diff(&w.transpose().apply(input)?));
        let n = guide.pixels();
        for i in 0..n {
            let row = w.row(i);
            stoch = stoch.max((row.iter().sum::<f64>() - 1.0).abs());
            for (j, &v) in row.iter().enumerate() {
                sym = sym.max((v - w.get(j, i)).abs());
            }
        }
    }
    let k = fixtures.len();
    Ok(vec![
        CheckResult::new(format!("guided filter vs weights ({k})"), filt, ORACLE_TOLERANCE),
        CheckResult::new(format!("guided transpose vs weights ({k})"), trans, ORACLE_TOLERANCE),
        CheckResult::new("guided rows sum to one", stoch, STOCHASTIC_TOLERANCE),
        CheckResult::new("guided weights symmetric", sym, SYMMETRY_TOLERANCE),
    ])
}

pub fn guidance_gradients(opts: CheckOptions, seeds: u64) -> Result<Vec<CheckResult>> {
    let n = GRAD_SIZE;
    let (mut e_phi, mut e_mu, mut e_lambda) = (0f64, 0f64, 0f64);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let guide = uniform(n, n, 3, 0.0, 1.0, &mut rng);
        let phi = uniform(n, n, 3, -1.5, 1.5, &mut rng);
        let up = uniform(n, n, 3, -1.0, 1.0, &mut rng);
        let mut mu = CompatibilityMatrix::zeros(3);
        fill(mu.data_mut(), 1.0, &mut rng);
        let p = GuidanceParams {
            mu,
            lambda: 0.7,
            filter: GuidedFilterConfig::new(1, 0.1),
            iters: 1,
        };
        let (_, cache) = guidance_forward(&phi, &guide, &p)?;
        let g = guidance_backward(&up, &cache)?;
        let eval = |phi: &ScoreMap, p: &GuidanceParams| guidance_forward(phi, &guide, p).map(|o| o.0.dot(&up));

        let num = central_difference(
            |x| eval(&ScoreMap::from_vec(n, n, 3, x.to_vec()).unwrap(), &p).unwrap(),
            phi.data(),
            STEP,
        );
        e_phi = e_phi.max(max_relative_error(&shifted(g.phi_u.data(), opts.perturb), &num));

        let num = central_difference(
            |x| {
                let mut q = p.clone();
                q.mu = CompatibilityMatrix::from_vec(3, x.to_vec()).unwrap();
                eval(&phi, &q).unwrap()
            },
            p.mu.data(),
            STEP,
        );
        e_mu = e_mu.max(max_relative_error(&shifted(g.mu.data(), opts.perturb), &num));

        let num = central_difference(
            |x| {
                let mut q = p.clone();
                q.lambda = x[0];
                eval(&phi, &q).unwrap()
            },
            &[p.lambda],
            STEP,
        );
        e_lambda = e_lambda.max(max_relative_error(&[g.lambda + opts.perturb], &num));
    }
    Ok(vec![
        CheckResult::new("guidance d/d unary", e_phi, GRAD_TOLERANCE),
        CheckResult::new("guidance d/d compatibility", e_mu, GRAD_TOLERANCE),
        CheckResult::new("guidance d/d lambda", e_lambda, GRAD_TOLERANCE),
    ])
}

fn random_context(seed: u64) -> Result<ContextCrf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ContextMessageNet::zeros(3, 4, 3, 3)?;
    for v in [
        &mut net.conv1.weight,
        &mut net.conv1.bias,
        &mut net.conv2.weight,
        &mut net.conv2.bias,
    ] {
        fill(v, 0.6, &mut rng);
    }
    let mut mu = GlobalCompatibility::zeros(3);
    fill(mu.data_mut(), 0.5, &mut rng);
    let mut head = GlobalHead::zeros(3);
    fill(&mut head.weight, 1.5, &mut rng);
    fill(&mut head.bias, 0.5, &mut rng);
    ContextCrf::new(net, mu, head)
}

pub fn context_gradients(opts: CheckOptions, seeds: u64) -> Result<Vec<CheckResult>> {
    type Pick = fn(&mut ContextCrf) -> &mut [f64];
    let groups: [(&str, Pick); 7] = [
        ("context d/d conv1 weight", |c| &mut c.net.conv1.weight),
        ("context d/d conv1 bias", |c| &mut c.net.conv1.bias),
        ("context d/d conv2 weight", |c| &mut c.net.conv2.weight),
        ("context d/d conv2 bias", |c| &mut c.net.conv2.bias),
        ("context d/d global compat", |c| c.mu_g.data_mut()),
        ("context d/d head weight", |c| &mut c.head.weight),
        ("context d/d head bias", |c| &mut c.head.bias),
    ];
    let n = GRAD_SIZE;
    let mut errs = [0f64; 8];
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let phi = uniform(n, n, 3, -1.5, 1.5, &mut rng);
        let up = uniform(n, n, 3, -1.0, 1.0, &mut rng);
        let mut crf = random_context(300 + seed)?;
        crf.forward_train(&phi)?;
        let g = crf.backward(&up, true)?;
        let base = crf.clone();
        let eval = |c: &ContextCrf, phi: &ScoreMap| {
            let mut c = c.clone();
            c.forward_train(phi).unwrap().phi_u.dot(&up)
        };

        let num = central_difference(
            |x| eval(&base, &ScoreMap::from_vec(n, n, 3, x.to_vec()).unwrap()),
            phi.data(),
            STEP,
        );
        let analytic = g.phi.as_ref().expect("input gradient requested");
        errs[0] = errs[0].max(max_relative_error(&shifted(analytic.data(), opts.perturb), &num));

        let analytic: [&[f64]; 7] = [
            &g.net.conv1_weight,
            &g.net.conv1_bias,
            &g.net.conv2_weight,
            &g.net.conv2_bias,
            g.mu_g.data(),
            &g.head.weight,
            &g.head.bias,
        ];
        for (k, ((_, pick), a)) in groups.iter().zip(analytic).enumerate() {
            let x = pick(&mut base.clone()).to_vec();
            let num = central_difference(
                |x| {
                    let mut c = base.clone();
                    pick(&mut c).copy_from_slice(x);
                    eval(&c, &phi)
                },
                &x,
                STEP,
            );
            errs[k + 1] = errs[k + 1].max(max_relative_error(&shifted(a, opts.perturb), &num));
        }
    }
    let mut out = vec![CheckResult::new("context d/d unary", errs[0], GRAD_TOLERANCE)];
    for ((name, _), e) in groups.iter().zip(&errs[1..]) {
        out.push(CheckResult::new(*name, *e, GRAD_TOLERANCE));
    }
    Ok(out)
}

pub fn loss_gradient(opts: CheckOptions) -> Result<CheckResult> {
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let phi = uniform(n, n, 3, -2.0, 2.0, &mut rng);
    let data = (0..n * n)
        .map(|i| if i % 7 == 3 { LabelMap::IGNORE } else { rng.random_range(0..3u8) })
        .collect();
    let labels = LabelMap::new(n, n, data)?;
    let out = cross_entropy_loss(&phi, &labels)?;
    let num = central_difference(
        |x| {
            cross_entropy_loss(&ScoreMap::from_vec(n, n, 3, x.to_vec()).unwrap(), &labels)
                .unwrap()
                .loss
        },
        phi.data(),
        STEP,
    );
    let e = max_relative_error(&shifted(out.grad.data(), opts.perturb), &num);
    Ok(CheckResult::new("loss d/d potentials", e, LOSS_TOLERANCE))
}

/// Loss of the full C model against every trainable parameter.
pub fn end_to_end_gradient(opts: CheckOptions) -> Result<CheckResult> {
    let n = GRAD_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let guide = uniform(n, n, 3, 0.0, 1.0, &mut rng);
    let unary = uniform(n, n, 3, -1.5, 1.5, &mut rng);
    let labels = LabelMap::new(n, n, (0..n * n).map(|_| rng.random_range(0..3u8)).collect())?;
    let cfg = ModelConfig {
        labels: 3,
        net_channels: 3,
        k1: 3,
        k2: 3,
        filter: GuidedFilterConfig::new(1, 0.1),
        learn_lambda: true,
        ..ModelConfig::default()
    };
    let mut model = Model::new(Arch::C, &cfg, 4)?;
    fill(&mut model.context.net.conv2.weight, 0.5, &mut rng);
    fill(&mut model.context.net.conv2.bias, 0.2, &mut rng);
    fill(model.context.mu_g.data_mut(), 0.5, &mut rng);
    fill(&mut model.context.head.weight, 1.0, &mut rng);
    fill(model.guidance.params.mu.data_mut(), 1.0, &mut rng);

    let out = model.forward_train(&unary, &guide)?;
    let grads = model.backward(&cross_entropy_loss(&out, &labels)?.grad)?;
    let mut worst = 0f64;
    for (name, analytic) in grads {
        let x = model.clone().param_mut(name).expect("named by backward").to_vec();
        let num = central_difference(
            |x| {
                let mut m = model.clone();
                m.param_mut(name).unwrap().copy_from_slice(x);
                let out = m.forward_train(&unary, &guide).unwrap();
                cross_entropy_loss(&out, &labels).unwrap().loss
            },
            &x,
            STEP,
        );
        worst = worst.max(max_relative_error(&shifted(&analytic, opts.perturb), &num));
    }
    Ok(CheckResult::new("end-to-end d/d parameters", worst, END_TO_END_TOLERANCE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_names() {
        assert_eq!("guided".parse::<Component>().unwrap(), Component::Guided);
        assert!("crf".parse::<Component>().is_err());
    }

    #[test]
    fn all_checks_pass() {
        let r = run(Component::All, CheckOptions::default()).unwrap();
        assert_eq!(r.len(), 4 + 3 + 8 + 1 + 1);
        for c in &r {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn perturbed_backward_fails() {
        let opts = CheckOptions { perturb: 1e-3 };
        for c in guidance_gradients(opts, 1).unwrap() {
            assert!(!c.passed(), "{c}");
        }
        assert!(!loss_gradient(opts).unwrap().passed());
    }
}
