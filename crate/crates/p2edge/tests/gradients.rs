//! Backpropagation against the central finite-difference oracle.

mod support;

use p2edge::nn::{backward, one_hot, Activation, LayerSpec, LossKind, Model};
use p2edge::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{fd_gradients, max_gradient_error, rows_to_f64, RefNet};

const H: f64 = 1e-3;
const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random_batch(rng: &mut ChaCha8Rng, batch: usize, dim: usize) -> Tensor {
    let data = (0..batch * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(vec![batch, dim], data).unwrap()
}

/// Draws batches until no ReLU pre-activation sits near its kink, where
/// central differences are invalid. Deterministic: the retry count is part
/// of the rng stream.
fn kink_free_batch(model: &Model, rng: &mut ChaCha8Rng, batch: usize, dim: usize) -> Tensor {
    let net = RefNet::from_model(model);
    for _ in 0..100 {
        let candidate = random_batch(rng, batch, dim);
        if net.min_relu_margin(&rows_to_f64(&candidate)) > 10.0 * H {
            return candidate;
        }
    }
    panic!("no kink-free batch found in 100 draws");
}

fn random_labels(rng: &mut ChaCha8Rng, batch: usize, classes: usize) -> Vec<u16> {
    (0..batch).map(|_| rng.gen_range(0..classes) as u16).collect()
}

fn check(model: &Model, inputs: &Tensor, targets: &Tensor, kind: LossKind) {
    let analytic = backward(model, inputs, targets, kind).unwrap();
    let numeric = fd_gradients(model, inputs, targets, kind, H);
    let (worst, failures) = max_gradient_error(model, &analytic, &numeric, REL, FLOOR);
    assert_eq!(
        failures, 0,
        "{kind:?}: {failures} parameters exceed rel {REL} (worst {worst:.3e})"
    );
}

fn two_hidden_net(seed: u64) -> Model {
    Model::new(
        &[
            LayerSpec::new(4, 12, Activation::Relu),
            LayerSpec::new(12, 10, Activation::Relu),
            LayerSpec::new(10, 3, Activation::SoftmaxOutput),
        ],
        seed,
    )
    .unwrap()
}

#[test]
fn crossentropy_gradients_match_finite_differences() {
    for seed in 0..5 {
        let model = two_hidden_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = kink_free_batch(&model, &mut rng, 8, 4);
        let targets = one_hot(&random_labels(&mut rng, 8, 3), 3);
        check(&model, &inputs, &targets, LossKind::CategoricalCrossentropy);
    }
}

#[test]
fn mse_gradients_match_finite_differences() {
    for seed in 0..5 {
        let model = two_hidden_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let inputs = kink_free_batch(&model, &mut rng, 8, 4);
        let targets = one_hot(&random_labels(&mut rng, 8, 3), 3);
        check(&model, &inputs, &targets, LossKind::MeanSquaredError);
    }
}

#[test]
fn mae_gradients_match_finite_differences() {
    for seed in 0..5 {
        let model = two_hidden_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let inputs = kink_free_batch(&model, &mut rng, 8, 4);
        let targets = one_hot(&random_labels(&mut rng, 8, 3), 3);
        check(&model, &inputs, &targets, LossKind::MeanAbsoluteError);
    }
}

#[test]
fn identity_output_gradients_match_finite_differences() {
    for seed in 0..3 {
        let model = Model::new(
            &[
                LayerSpec::new(3, 8, Activation::Relu),
                LayerSpec::new(8, 2, Activation::Identity),
            ],
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let inputs = kink_free_batch(&model, &mut rng, 6, 3);
        let targets = random_batch(&mut rng, 6, 2);
        check(&model, &inputs, &targets, LossKind::MeanSquaredError);
    }
}
