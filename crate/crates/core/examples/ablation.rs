//! Trains every arch setting on the synthetic set and prints the final
//! metrics. Settings come from environment variables for quick sweeps.

use std::time::Instant;

use segcrf::guided::GuidedFilterConfig;
use segcrf::training::{
    evaluate, make_synthetic_dataset, train_pipeline_with, Arch, Model, ModelConfig, Sample, SyntheticConfig,
    TrainConfig,
};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> segcrf::Result<()> {
    let n_train: usize = env("N_TRAIN", 200);
    let n_test: usize = env("N_TEST", 50);
    let data = make_synthetic_dataset(
        n_train + n_test,
        &SyntheticConfig {
            sigma: env("SIGMA", 1.0),
            jitter: env("JITTER", 2),
            seed: env("SEED", 1),
            ..Default::default()
        },
    )?;
    let data: Vec<Sample> = data.into_iter().map(Sample::from).collect();
    let (train, test) = data.split_at(n_train);
    let mc = ModelConfig {
        net_channels: env("CH", 16),
        k1: env("K1", 15),
        k2: env("K2", 15),
        filter: GuidedFilterConfig::new(env("RADIUS", 4), env("EPS", 0.01)),
        lambda: env("LAMBDA", 1.0),
        ..Default::default()
    };
    let tc = TrainConfig {
        learning_rate: env("LR", 0.01),
        weight_decay: env("DECAY", 1e-4),
        momentum: env("MOM", 0.9),
        epochs: env("EPOCHS", 4),
        seed: env("TSEED", 7),
    };
    let archs: String = env("ARCHS", "unary,A,B,C".to_string());
    for a in archs.split(',') {
        let arch: Arch = a.parse()?;
        let t = Instant::now();
        if arch == Arch::Unary {
            let m = evaluate(&mut Model::new(arch, &mc, 0)?, test)?;
            println!("  unary per class {:?}", m.per_class);
            println!("{arch}: miou {:.4} trimap {:.4}", m.mean_iou, m.trimap_iou);
            continue;
        }
        let out = train_pipeline_with(train, test, arch, &mc, &tc, |e| {
            println!(
                "  {arch} epoch {} loss {:.4} miou {:.4} trimap {:.4} ({:.0}s)",
                e.epoch,
                e.loss,
                e.mean_iou,
                e.trimap_iou,
                t.elapsed().as_secs_f64()
            )
        })?;
        let mut model = out.model;
        let m = evaluate(&mut model, test)?;
        println!("  {arch} per class {:?}", m.per_class);
        let last = out.log.last().expect("epochs >= 1");
        println!(
            "{arch}: miou {:.4} trimap {:.4} in {:.1}s",
            last.mean_iou,
            last.trimap_iou,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
