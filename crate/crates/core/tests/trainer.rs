use funcreg_lab::models::{Architecture, NORM_SLACK};
use funcreg_lab::numkit::RngStream;
use funcreg_lab::synthgen::DataSpec;
use funcreg_lab::trainer::*;
use proptest::prelude::*;

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_pretrain: 15,
        epochs_finetune: 20,
        batch_size: 32,
        lr_grid: vec![1e-3, 1e-2],
        lambda_grid: vec![1e-3],
        seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pretraining_trace_non_increasing(seed in 0u64..1000, masked in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let (kind, spec) = if masked {
            (Architecture::MaskedQuad, DataSpec::generate_masked(&mut rng, 13, 3).unwrap())
        } else {
            (Architecture::LinearAe, DataSpec::generate_autoencoder(&mut rng, 12, 3).unwrap())
        };
        let spec = spec.with_zero_mean(true);
        let u = spec.sample(400, &mut rng, false).unwrap();
        // full-batch gradient descent without momentum: a descent method
        let gd = TrainConfig { batch_size: 400, momentum: 0.0, lr_grid: vec![1e-3], ..small(seed) };
        let pre = pretrain_unlabeled(kind, &u, &gd, 3).unwrap();
        prop_assert_eq!(pre.trace.len(), 15);
        for w in pre.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "trace rose: {:?}", pre.trace);
        }
        // mini-batch SGD with momentum only descends on the whole
        let sgd = pretrain_unlabeled(kind, &u, &small(seed), 3).unwrap();
        prop_assert!(sgd.trace.last().unwrap() < sgd.trace.first().unwrap());
    }

    #[test]
    fn trained_models_respect_projection(seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let spec = DataSpec::generate_autoencoder(&mut rng, 10, 2).unwrap().with_zero_mean(true);
        let s = spec.sample(100, &mut rng, true).unwrap();
        let res = train_end_to_end(Architecture::LinearAe, 2, &s, None, &small(seed)).unwrap();
        prop_assert_eq!(res.loss_trace.len(), 20);
        prop_assert!(res.loss_trace.iter().all(|v| v.is_finite()));
        for i in 0..2 {
            let n: f64 = res.model.repr.w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n <= 1.0 + NORM_SLACK);
        }
    }
}

#[test]
fn funcreg_improves_on_end_to_end_with_scarce_labels() {
    let mut rng = RngStream::new(5);
    let spec = DataSpec::generate_autoencoder(&mut rng, 20, 4).unwrap().with_zero_mean(true);
    let u = spec.sample(2000, &mut rng, false).unwrap();
    let s = spec.sample(100, &mut rng, true).unwrap();
    let t = spec.sample(500, &mut rng, true).unwrap();
    let cfg = TrainConfig {
        epochs_pretrain: 30,
        epochs_finetune: 100,
        lr_grid: vec![1e-3, 3e-3, 1e-2],
        lambda_grid: vec![1e-3, 1e-1],
        seed: 5,
        ..TrainConfig::default()
    };
    let pre = pretrain_unlabeled(Architecture::LinearAe, &u, &cfg, 4).unwrap();
    let fr = finetune_labeled(&pre, &s, Some(&u), Some(&t), &cfg).unwrap();
    let e2e = train_end_to_end(Architecture::LinearAe, 4, &s, Some(&t), &cfg).unwrap();
    assert!(
        fr.test_loss.unwrap() < e2e.test_loss.unwrap(),
        "FuncReg {} vs EndToEnd {}",
        fr.test_loss.unwrap(),
        e2e.test_loss.unwrap()
    );
}
