use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::data::DatasetStats;
use crate::gradcheck::{central_difference, relative_error, FD_STEP};
use crate::model::{InputShape, ModelSpec, StageSpec, StemSpec};

fn tiny_model(seed: u64) -> Model {
    let spec = ModelSpec {
        input_shape: InputShape {
            channels: 3,
            height: 8,
            width: 8,
        },
        stem: StemSpec {
            channels: 4,
            stride: 1,
        },
        stages: vec![
            StageSpec {
                channels: 4,
                blocks: 1,
                stride: 1,
            },
            StageSpec {
                channels: 6,
                blocks: 1,
                stride: 2,
            },
            StageSpec {
                channels: 8,
                blocks: 1,
                stride: 2,
            },
            StageSpec {
                channels: 8,
                blocks: 1,
                stride: 2,
            },
        ],
        num_classes: 3,
    };
    let stats = DatasetStats::new([0.45, 0.5, 0.55], [0.25, 0.2, 0.3]).unwrap();
    Model::new(spec, stats, seed).unwrap()
}

fn random_image(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = substream(seed, "actmax-test");
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

fn addr(s: &str) -> LayerAddress {
    s.parse().unwrap()
}

// Direct transcriptions used as oracles.

fn alpha_oracle(x: &[f64], alpha: f64) -> f64 {
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= x.len() as f64;
    let mut total = 0.0;
    for v in x {
        total += (v - mean).abs().powf(alpha);
    }
    total
}

fn tv_oracle(x: &Tensor, beta: f64) -> f64 {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let px = |ch: usize, i: usize, j: usize| x.data()[ch * h * w + i * w + j];
    let mut total = 0.0;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                if j + 1 < w {
                    s += (px(ch, i, j + 1) - px(ch, i, j)).powi(2);
                }
                if i + 1 < h {
                    s += (px(ch, i + 1, j) - px(ch, i, j)).powi(2);
                }
                total += s.powf(beta / 2.0);
            }
        }
    }
    total
}

#[test]
fn presoftmax_objective_is_the_logit() {
    let model = tiny_model(1);
    let x = random_image(1, &[3, 8, 8]);
    let logits = model.logits(&x).unwrap();
    let phi = evaluate_objective(&model, &Objective::single(addr("presoftmax:2")), &x).unwrap();
    assert_eq!(phi, logits.data()[2]);
}

#[test]
fn duplicated_half_terms_equal_the_single_term() {
    let model = tiny_model(2);
    let x = random_image(2, &[3, 8, 8]);
    let single = evaluate_objective(&model, &Objective::single(addr("layer:layer3")), &x).unwrap();
    let halves = Objective::new(vec![
        (addr("layer:layer3"), 0.5),
        (addr("layer:layer3"), 0.5),
    ])
    .unwrap();
    let doubled = evaluate_objective(&model, &halves, &x).unwrap();
    assert!((single - doubled).abs() < 1e-12);
}

#[test]
fn filter_objective_is_the_channel_mean_of_the_activation() {
    let model = tiny_model(3);
    let x = random_image(3, &[3, 8, 8]);
    let (_, acts) = model.forward_with_activations(&x).unwrap();
    let a = &acts["layer1"];
    let hw = a.shape()[2] * a.shape()[3];
    let expected = a.data()[..hw].iter().sum::<f64>() / hw as f64;
    let phi = evaluate_objective(&model, &Objective::single(addr("filter:layer1:0")), &x).unwrap();
    assert!((phi - expected).abs() < 1e-12);
}

#[test]
fn invalid_address_is_an_address_error() {
    let model = tiny_model(0);
    let x = random_image(0, &[3, 8, 8]);
    let err =
        evaluate_objective(&model, &Objective::single(addr("channel:layer2:99")), &x).unwrap_err();
    assert!(matches!(err, Error::Address(_)));
    assert!(Objective::new(vec![]).is_err());
}

#[test]
fn alpha_norm_examples() {
    assert_eq!(regularizer_alpha(&Tensor::full(&[3, 4, 4], 0.3), 6.0), 0.0);
    let two = Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap();
    assert_eq!(regularizer_alpha(&two, 6.0), 2.0);
}

#[test]
fn tv_examples() {
    assert_eq!(
        regularizer_tv(&Tensor::full(&[3, 5, 4], 0.8), 1.3).unwrap(),
        0.0
    );
    let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    assert_eq!(regularizer_tv(&x, 2.0).unwrap(), 2.0);
}

#[test]
fn regularizers_match_naive_oracles_on_random_images() {
    for seed in 0..100 {
        let mut rng = substream(seed, "shape");
        let shape = [3, rng.random_range(1..9), rng.random_range(1..9)];
        let x = random_image(seed, &shape);
        for alpha in [1.5, 2.0, 6.0] {
            let (a, b) = (regularizer_alpha(&x, alpha), alpha_oracle(x.data(), alpha));
            assert!(
                (a - b).abs() <= 1e-12 * b.max(1.0),
                "alpha {alpha}: {a} vs {b}"
            );
        }
        for beta in [1.0, 2.0, 2.5] {
            let (a, b) = (regularizer_tv(&x, beta).unwrap(), tv_oracle(&x, beta));
            assert!(
                (a - b).abs() <= 1e-12 * b.max(1.0),
                "beta {beta}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn alpha_two_is_n_times_the_population_variance() {
    let x = random_image(4, &[3, 6, 5]);
    let n = x.numel() as f64;
    let m = x.mean();
    let var = x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    assert!((regularizer_alpha(&x, 2.0) - n * var).abs() < 1e-12);
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    let x = random_image(5, &[3, 5, 6]);
    let idx: Vec<usize> = (0..x.numel()).collect();
    for alpha in [1.5, 2.0, 6.0] {
        let (_, g) = alpha_norm_with_grad(&x, alpha);
        let mut f = |v: &[f64]| alpha_oracle(v, alpha);
        let num = central_difference(&mut f, x.data(), &idx, FD_STEP);
        assert!(relative_error(&g, &num) < 1e-4, "alpha {alpha}");
    }
    for beta in [1.0, 2.0, 3.0] {
        let (_, g) = total_variation_with_grad(&x, beta).unwrap();
        let shape = x.shape().to_vec();
        let mut f = |v: &[f64]| tv_oracle(&Tensor::new(shape.clone(), v.to_vec()).unwrap(), beta);
        let num = central_difference(&mut f, x.data(), &idx, FD_STEP);
        assert!(relative_error(&g, &num) < 1e-4, "beta {beta}");
    }
}

#[test]
fn zero_lr_leaves_the_image_untouched() {
    let model = tiny_model(6);
    let x = random_image(6, &[3, 8, 8]);
    let cfg = AscentConfig {
        lr: 0.0,
        epochs: 5,
        ..Default::default()
    };
    let trace = ascend(
        &model,
        &Objective::single(addr("presoftmax:1")),
        &RegularizerConfig::default(),
        &cfg,
        &x,
    )
    .unwrap();
    assert_eq!(trace.final_image, x);
    assert_eq!(trace.flip_epoch, None);
    assert_eq!(trace.objective_per_epoch.len(), 5);
    assert_eq!(trace.diff_energy(), 0.0);
}

#[test]
fn one_unit_step_adds_the_gradient() {
    let model = tiny_model(7);
    let x = random_image(7, &[3, 8, 8]);
    let obj = Objective::new(vec![
        (addr("presoftmax:0"), 1.0),
        (addr("channel:layer2:3"), -0.5),
    ])
    .unwrap();
    let cfg = AscentConfig {
        lr: 1.0,
        epochs: 1,
        ..Default::default()
    };
    let trace = ascend(&model, &obj, &RegularizerConfig::default(), &cfg, &x).unwrap();
    let (_, g, _) = objective_gradient(&model, &obj, &x).unwrap();
    let expected: Vec<f64> = x.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
    assert_eq!(trace.final_image.data(), expected.as_slice());
}

#[test]
fn regularized_gradient_matches_finite_differences() {
    let model = tiny_model(8);
    let x = random_image(8, &[3, 8, 8]);
    let obj = Objective::new(vec![(addr("softmax:1"), 2.0), (addr("layer:layer4"), 1.0)]).unwrap();
    let reg = RegularizerConfig {
        lambda_alpha: 0.01,
        alpha: 3.0,
        lambda_tv: 0.05,
        beta: 2.0,
    };
    let (_, g, _) = objective_gradient(&model, &obj, &x).unwrap();
    let (_, pg) = reg.penalty(&x).unwrap();
    let analytic: Vec<f64> = g.data().iter().zip(&pg).map(|(a, b)| a - b).collect();

    let mut rng = substream(8, "pixels");
    let picks: Vec<usize> = (0..20).map(|_| rng.random_range(0..x.numel())).collect();
    let mut f = |v: &[f64]| {
        let t = Tensor::new(vec![3, 8, 8], v.to_vec()).unwrap();
        evaluate_objective(&model, &obj, &t).unwrap() - reg.penalty(&t).unwrap().0
    };
    let num = central_difference(&mut f, x.data(), &picks, FD_STEP);
    let a: Vec<f64> = picks.iter().map(|&i| analytic[i]).collect();
    let err = relative_error(&a, &num);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn scaling_weights_and_dividing_lr_gives_the_same_trajectory() {
    let model = tiny_model(9);
    let x = random_image(9, &[3, 8, 8]);
    let obj = Objective::single(addr("presoftmax:2"));
    let (_, g1, _) = objective_gradient(&model, &obj, &x).unwrap();
    let (_, g4, _) = objective_gradient(&model, &obj.scaled(4.0), &x).unwrap();
    assert!(g1.data().iter().zip(g4.data()).all(|(a, b)| 4.0 * a == *b));

    let cfg = AscentConfig {
        lr: 0.5,
        epochs: 20,
        ..Default::default()
    };
    let reg = RegularizerConfig::default();
    let base = ascend(&model, &obj, &reg, &cfg, &x).unwrap();
    let scaled_cfg = AscentConfig { lr: 0.125, ..cfg };
    let scaled = ascend(&model, &obj.scaled(4.0), &reg, &scaled_cfg, &x).unwrap();
    assert_eq!(base.predictions, scaled.predictions);
    assert_eq!(base.final_image, scaled.final_image);
}

#[test]
fn jittered_ascent_is_seed_deterministic() {
    let model = tiny_model(10);
    let x = random_image(10, &[3, 8, 8]);
    let obj = Objective::single(addr("channel:layer1:1"));
    let cfg = AscentConfig {
        lr: 0.05,
        epochs: 6,
        seed: 3,
        jitter: Some(Jitter::default()),
        clamp_to_data_range: true,
    };
    let reg = RegularizerConfig {
        lambda_tv: 0.01,
        ..Default::default()
    };
    let a = ascend(&model, &obj, &reg, &cfg, &x).unwrap();
    let b = ascend(&model, &obj, &reg, &cfg, &x).unwrap();
    assert_eq!(a, b);
    assert!(a.final_image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let c = ascend(&model, &obj, &reg, &AscentConfig { seed: 4, ..cfg }, &x).unwrap();
    assert_ne!(a.final_image, c.final_image);
}

#[test]
fn flip_epoch_is_within_budget() {
    let model = tiny_model(11);
    let x = random_image(11, &[3, 8, 8]);
    let start = argmax(model.logits(&x).unwrap().data());
    let target = (start + 1) % 3;
    let cfg = AscentConfig {
        lr: 0.5,
        epochs: 40,
        ..Default::default()
    };
    let trace = ascend(
        &model,
        &Objective::single(LayerAddress::Presoftmax { class: target }),
        &RegularizerConfig::default(),
        &cfg,
        &x,
    )
    .unwrap();
    let flip = trace.flip_epoch.expect("a large step flips the prediction");
    assert!((1..=40).contains(&flip));
    assert_ne!(trace.predictions[flip - 1], start);
    assert!(trace.predictions[..flip - 1].iter().all(|&p| p == start));
}

#[test]
fn non_finite_objective_aborts_with_the_partial_trace() {
    let model = tiny_model(12);
    let x = random_image(12, &[3, 8, 8]);
    let reg = RegularizerConfig {
        lambda_alpha: 1.0,
        alpha: 6.0,
        ..Default::default()
    };
    let cfg = AscentConfig {
        lr: 1e200,
        epochs: 10,
        ..Default::default()
    };
    match ascend(
        &model,
        &Objective::single(addr("presoftmax:0")),
        &reg,
        &cfg,
        &x,
    ) {
        Err(Error::Aborted { epoch, trace }) => {
            assert!(epoch >= 1);
            assert_eq!(trace.objective_per_epoch.len(), epoch - 1);
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizers_are_non_negative_and_vanish_on_constants(
        values in prop::collection::vec(-2.0f64..2.0, 12),
        fill in -1.0f64..1.0,
        alpha in 1.1f64..6.0,
        beta in 0.5f64..3.0,
    ) {
        let x = Tensor::new(vec![3, 2, 2], values).unwrap();
        prop_assert!(regularizer_alpha(&x, alpha) >= 0.0);
        prop_assert!(regularizer_tv(&x, beta).unwrap() >= 0.0);
        let c = Tensor::full(&[3, 2, 2], fill);
        prop_assert_eq!(regularizer_alpha(&c, alpha), 0.0);
        prop_assert_eq!(regularizer_tv(&c, beta).unwrap(), 0.0);
    }

    #[test]
    fn non_constant_images_have_positive_penalties(
        values in prop::collection::vec(0.0f64..1.0, 12),
        alpha in 1.1f64..6.0,
        beta in 0.5f64..3.0,
    ) {
        let x = Tensor::new(vec![1, 3, 4], values).unwrap();
        let constant = x.data().iter().all(|v| *v == x.data()[0]);
        prop_assume!(!constant);
        prop_assert!(regularizer_alpha(&x, alpha) > 0.0);
        prop_assert!(regularizer_tv(&x, beta).unwrap() > 0.0);
    }
}
