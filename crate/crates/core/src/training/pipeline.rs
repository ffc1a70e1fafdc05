//! The full model (context CRF followed by guidance CRF), its training loop
//! and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextCrf, ContextMessageNet, GlobalCompatibility, GlobalHead};
use crate::error::{Error, Result};
use crate::guidance::{potts_init, GuidanceCrf, GuidanceParams};
use crate::guided::GuidedFilterConfig;
use crate::tensor::{bilinear_resize, GuideImage, LabelMap, ScoreMap};
use crate::training::loss::cross_entropy_loss;
use crate::training::metrics::{trimap_band, ConfusionMatrix, TRIMAP_BAND};
use crate::training::sgd::{Sgd, TrainConfig};
use crate::training::synth::SyntheticSample;

/// Which components are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// Unaries only.
    Unary,
    /// Context CRF with the high-order message net.
    A,
    /// `A` plus global category nodes.
    B,
    /// `B` followed by the guidance CRF.
    C,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Unary, Arch::A, Arch::B, Arch::C];

    pub fn context(self) -> bool {
        self != Arch::Unary
    }

    pub fn global(self) -> bool {
        matches!(self, Arch::B | Arch::C)
    }

    pub fn guidance(self) -> bool {
        self == Arch::C
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unary" | "Unary" => Ok(Arch::Unary),
            "A" | "a" => Ok(Arch::A),
            "B" | "b" => Ok(Arch::B),
            "C" | "c" => Ok(Arch::C),
            _ => Err(Error::invalid(format!("unknown arch {s:?} (expected unary, A, B or C)"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Unary => "unary",
            Arch::A => "A",
            Arch::B => "B",
            Arch::C => "C",
        })
    }
}

/// Sizes and fixed settings of a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub labels: usize,
    pub net_channels: usize,
    pub k1: usize,
    pub k2: usize,
    /// Context iterations at inference. Training always runs one.
    pub context_iters: usize,
    pub filter: GuidedFilterConfig,
    pub lambda: f64,
    /// Guidance iterations at inference. Training always runs one.
    pub guidance_iters: usize,
    pub learn_lambda: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            labels: 4,
            net_channels: 32,
            k1: 15,
            k2: 15,
            context_iters: 1,
            filter: GuidedFilterConfig::default(),
            lambda: 1.0,
            guidance_iters: GuidanceParams::DEFAULT_ITERS,
            learn_lambda: false,
        }
    }
}

/// One labelled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GuideImage,
    pub labels: LabelMap,
    pub unary: ScoreMap,
}

impl From<SyntheticSample> for Sample {
    fn from(s: SyntheticSample) -> Self {
        Self {
            image: s.image,
            labels: s.labels,
            unary: s.unary,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Arch,
    pub learn_lambda: bool,
    pub context: ContextCrf,
    pub guidance: GuidanceCrf,
}

impl Model {
    /// Fresh parameters. Every enabled component starts as the identity.
    pub fn new(arch: Arch, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let l = cfg.labels;
        let net = if arch.context() {
            ContextMessageNet::init(l, cfg.net_channels, cfg.k1, cfg.k2, seed)?
        } else {
            ContextMessageNet::zeros(l, cfg.net_channels, cfg.k1, cfg.k2)?
        };
        let head = if arch.global() {
            GlobalHead::presence(l)
        } else {
            GlobalHead::zeros(l)
        };
        let mu_g = if arch.global() {
            GlobalCompatibility::absence(l, GlobalCompatibility::ABSENCE_PENALTY)
        } else {
            GlobalCompatibility::zeros(l)
        };
        let mut context = ContextCrf::new(net, mu_g, head)?;
        if cfg.context_iters == 0 {
            return Err(Error::invalid("context iterations must be >= 1"));
        }
        context.iters = cfg.context_iters;
        let guidance = GuidanceCrf::new(GuidanceParams {
            mu: potts_init(l)?,
            lambda: cfg.lambda,
            filter: cfg.filter,
            iters: cfg.guidance_iters,
        })?;
        Ok(Self {
            arch,
            learn_lambda: cfg.learn_lambda,
            context,
            guidance,
        })
    }

    pub fn labels(&self) -> usize {
        self.context.labels()
    }

    /// Refined potentials at the guide's resolution. Unaries smaller than
    /// the guide are refined by the context CRF first, then bilinearly
    /// up-sampled.
    pub fn infer(&mut self, unary: &ScoreMap, guide: &GuideImage) -> Result<ScoreMap> {
        let phi = if self.arch.context() {
            self.context.infer(unary)?.phi_u
        } else {
            unary.clone()
        };
        let phi = if (phi.height(), phi.width()) != (guide.height(), guide.width()) {
            bilinear_resize(&phi, guide.height(), guide.width())?
        } else {
            phi
        };
        if self.arch.guidance() {
            self.guidance.infer(&phi, guide)
        } else {
            Ok(phi)
        }
    }

    /// One-iteration forward pass with caches, at a single resolution.
    pub fn forward_train(&mut self, unary: &ScoreMap, guide: &GuideImage) -> Result<ScoreMap> {
        if (unary.height(), unary.width()) != (guide.height(), guide.width()) {
            return Err(Error::shape(
                format!("{}x{} unaries for training", guide.height(), guide.width()),
                format!("{}x{}", unary.height(), unary.width()),
            ));
        }
        let phi = if self.arch.context() {
            self.context.forward_train(unary)?.phi_u
        } else {
            unary.clone()
        };
        if self.arch.guidance() {
            self.guidance.forward_train(&phi, guide)
        } else {
            Ok(phi)
        }
    }

    /// Gradients of the trainable parameters, by bundle name.
    pub fn backward(&mut self, grad: &ScoreMap) -> Result<Vec<(&'static str, Vec<f64>)>> {
        let mut out = Vec::new();
        let grad_ctx = if self.arch.guidance() {
            let g = self.guidance.backward(grad)?;
            out.push(("guidance.mu", g.mu.data().to_vec()));
            if self.learn_lambda {
                out.push(("guidance.lambda", vec![g.lambda]));
            }
            g.phi_u
        } else {
            grad.clone()
        };
        if self.arch.context() {
            let g = self.context.backward(&grad_ctx, false)?;
            out.push(("context.conv1.weight", g.net.conv1_weight));
            out.push(("context.conv1.bias", g.net.conv1_bias));
            out.push(("context.conv2.weight", g.net.conv2_weight));
            out.push(("context.conv2.bias", g.net.conv2_bias));
            if self.arch.global() {
                out.push(("global.mu", g.mu_g.data().to_vec()));
                out.push(("global.head.weight", g.head.weight));
                out.push(("global.head.bias", g.head.bias));
            }
        }
        Ok(out)
    }

    /// Mutable view of a trainable parameter by bundle name.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let c = &mut self.context;
        Some(match name {
            "context.conv1.weight" => &mut c.net.conv1.weight,
            "context.conv1.bias" => &mut c.net.conv1.bias,
            "context.conv2.weight" => &mut c.net.conv2.weight,
            "context.conv2.bias" => &mut c.net.conv2.bias,
            "global.mu" => c.mu_g.data_mut(),
            "global.head.weight" => &mut c.head.weight,
            "global.head.bias" => &mut c.head.bias,
            "guidance.mu" => self.guidance.params.mu.data_mut(),
            "guidance.lambda" => std::slice::from_mut(&mut self.guidance.params.lambda),
            _ => return None,
        })
    }

    /// Squared L2 norm of the message net weights.
    pub fn net_norm_sq(&self) -> f64 {
        let n = &self.context.net;
        [&n.conv1.weight, &n.conv1.bias, &n.conv2.weight, &n.conv2.bias]
            .iter()
            .flat_map(|v| v.iter())
            .map(|v| v * v)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub mean_iou: f64,
    pub trimap_iou: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Dataset-level IoU (one confusion matrix over all images) of the model's
/// inference output.
pub fn evaluate(model: &mut Model, samples: &[Sample]) -> Result<Metrics> {
    let l = model.labels();
    let mut full = ConfusionMatrix::new(l);
    let mut band = ConfusionMatrix::new(l);
    for s in samples {
        let pred = model.infer(&s.unary, &s.image)?.argmin_labels();
        full.add(&pred, &s.labels, None)?;
        band.add(&pred, &s.labels, Some(&trimap_band(&s.labels, TRIMAP_BAND)))?;
    }
    let f = full.iou();
    Ok(Metrics {
        mean_iou: f.mean,
        trimap_iou: band.iou().mean,
        per_class: f.per_class,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub mean_iou: f64,
    pub trimap_iou: f64,
}

pub const LOG_HEADER: &str = "epoch,loss,mean_iou,trimap_iou";

/// CSV text with [`LOG_HEADER`]; values use the shortest exact decimal form.
pub fn format_log(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.mean_iou, e.trimap_iou));
    }
    s
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

pub fn train_pipeline(
    train: &[Sample],
    eval: &[Sample],
    arch: Arch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_pipeline_with(train, eval, arch, model_cfg, cfg, |_| {})
}

/// Single-sample SGD over `train`, shuffled each epoch. Metrics are taken
/// on `eval`, or on `train` when `eval` is empty. `on_epoch` sees each log
/// row as it is produced.
pub fn train_pipeline_with(
    train: &[Sample],
    eval: &[Sample],
    arch: Arch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut model = Model::new(arch, model_cfg, cfg.seed)?;
    let mut opt = Sgd::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let eval = if eval.is_empty() { train } else { eval };
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (k, &i) in order.iter().enumerate() {
            let s = &train[i];
            let out = model.forward_train(&s.unary, &s.image)?;
            let loss = cross_entropy_loss(&out, &s.labels)?;
            if !loss.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    sample: k,
                    loss: loss.loss,
                });
            }
            total += loss.loss;
            for (name, g) in model.backward(&loss.grad)? {
                let p = model.param_mut(name).expect("known parameter");
                opt.step(name, p, &g, cfg)?;
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        sample: k,
                        loss: f64::NAN,
                    });
                }
            }
            if model.learn_lambda {
                let l = &mut model.guidance.params.lambda;
                *l = l.max(0.0);
            }
        }
        let m = evaluate(&mut model, eval)?;
        let row = EpochLog {
            epoch,
            loss: total / train.len() as f64,
            mean_iou: m.mean_iou,
            trimap_iou: m.trimap_iou,
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_signed, random_tensor};
    use crate::training::gradcheck::{central_difference, max_relative_error, STEP};
    use crate::training::synth::{make_synthetic_dataset, SyntheticConfig};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            labels: 3,
            net_channels: 3,
            k1: 3,
            k2: 3,
            filter: GuidedFilterConfig::new(1, 0.1),
            ..Default::default()
        }
    }

    fn dataset(n: usize, sigma: f64, seed: u64) -> Vec<Sample> {
        let cfg = SyntheticConfig {
            height: 32,
            width: 32,
            labels: 4,
            sigma,
            jitter: 1,
            seed,
        };
        make_synthetic_dataset(n, &cfg).unwrap().into_iter().map(Sample::from).collect()
    }

    #[test]
    fn arch_parsing() {
        for a in Arch::ALL {
            assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
        }
        assert!("D".parse::<Arch>().is_err());
    }

    #[test]
    fn fresh_models_are_identity() {
        let guide = random_tensor(8, 8, 3, 1);
        let unary = random_signed(8, 8, 3, 1.0, 2);
        for arch in [Arch::Unary, Arch::A] {
            let mut m = Model::new(arch, &small_cfg(), 3).unwrap();
            assert_eq!(m.infer(&unary, &guide).unwrap(), unary, "{arch}");
        }
        let mut m = Model::new(Arch::B, &small_cfg(), 3).unwrap();
        m.context.mu_g = GlobalCompatibility::zeros(3);
        assert_eq!(m.infer(&unary, &guide).unwrap(), unary);
    }

    #[test]
    fn fresh_global_nodes_raise_absent_labels() {
        let guide = random_tensor(8, 8, 3, 1);
        let unary = random_signed(8, 8, 3, 1.0, 2);
        let mut m = Model::new(Arch::B, &small_cfg(), 3).unwrap();
        let out = m.infer(&unary, &guide).unwrap();
        for l in 0..3 {
            let d = out.get(0, 0, l) - unary.get(0, 0, l);
            assert!(d > 0.0 && d < GlobalCompatibility::ABSENCE_PENALTY);
            for i in 0..64 {
                assert!((out.pixel(i)[l] - unary.pixel(i)[l] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn end_to_end_gradient() {
        let guide = random_tensor(6, 6, 3, 1);
        let unary = random_signed(6, 6, 3, 1.5, 2);
        let labels = LabelMap::new(6, 6, (0..36).map(|i| (i % 3) as u8).collect()).unwrap();
        let mut model = Model::new(Arch::C, &ModelConfig { learn_lambda: true, ..small_cfg() }, 4).unwrap();
        let r = random_signed(1, 1, 200, 0.5, 9);
        for (k, v) in model.context.net.conv2.weight.iter_mut().enumerate() {
            *v = r.data()[k % 200];
        }
        model.context.head.weight = vec![0.8, -1.1, 0.5];
        model.context.mu_g = GlobalCompatibility::from_vec(3, r.data()[..18].to_vec()).unwrap();

        let out = model.forward_train(&unary, &guide).unwrap();
        let grads = model.backward(&cross_entropy_loss(&out, &labels).unwrap().grad).unwrap();
        for (name, analytic) in grads {
            let base = model.clone();
            let x = base.clone().param_mut(name).unwrap().to_vec();
            let num = central_difference(
                |x| {
                    let mut m = base.clone();
                    m.param_mut(name).unwrap().copy_from_slice(x);
                    let out = m.forward_train(&unary, &guide).unwrap();
                    cross_entropy_loss(&out, &labels).unwrap().loss
                },
                &x,
                STEP,
            );
            let e = max_relative_error(&analytic, &num);
            assert!(e <= 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn unary_arch_matches_baseline() {
        let data = dataset(4, 1.0, 3);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let out = train_pipeline(&data, &[], Arch::Unary, &ModelConfig::default(), &cfg).unwrap();
        let mut base = Model::new(Arch::Unary, &ModelConfig::default(), 0).unwrap();
        let m = evaluate(&mut base, &data).unwrap();
        for row in &out.log {
            assert_eq!(row.mean_iou, m.mean_iou);
            assert_eq!(row.trimap_iou, m.trimap_iou);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = dataset(3, 1.0, 4);
        let mc = ModelConfig {
            labels: 4,
            net_channels: 4,
            k1: 5,
            k2: 5,
            filter: GuidedFilterConfig::new(3, 0.01),
            ..Default::default()
        };
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let a = train_pipeline(&data, &[], Arch::C, &mc, &cfg).unwrap();
        let b = train_pipeline(&data, &[], Arch::C, &mc, &cfg).unwrap();
        assert_eq!(format_log(&a.log), format_log(&b.log));
        assert!(format_log(&a.log).starts_with("epoch,loss,mean_iou,trimap_iou\n1,"));
    }

    #[test]
    fn divergence_is_reported() {
        let data = dataset(2, 1.0, 5);
        let mc = ModelConfig { net_channels: 4, k1: 3, k2: 3, ..Default::default() };
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            ..Default::default()
        };
        assert!(matches!(
            train_pipeline(&data, &[], Arch::A, &mc, &cfg),
            Err(Error::Diverged { .. })
        ));
    }
}
