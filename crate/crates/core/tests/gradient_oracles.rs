//! Cross-checks of the network's forward and backward passes against
//! implementations that share no code with the library: straight-line
//! arithmetic for small fixed networks and central finite differences for
//! gradients of the full architecture and of the adaptation loss.

use helioadapt::nn::{
    cross_entropy_hard, cross_entropy_hard_with_grad, cross_entropy_soft,
    cross_entropy_soft_with_grad, grad_check, softmax, ArchConfig, LayerSpec, Mode, Network,
};
use helioadapt::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Conv(1->1, k=3, pad=1) -> Flatten -> Dense(4->2), all weights hand-set,
/// output computed here by explicit arithmetic with no shared helpers.
#[test]
fn small_network_matches_straight_line_arithmetic() {
    let mut net = Network::new(
        vec![
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                padding: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: 4,
                out_features: 2,
            },
        ],
        4,
        0,
    )
    .unwrap();
    let (ka, kb, kc, kbias) = (0.5, -1.0, 2.0, 0.25);
    net.params_mut()[0][0] = Tensor::new(vec![1, 1, 3], vec![ka, kb, kc]).unwrap();
    net.params_mut()[0][1] = Tensor::from_vec(vec![kbias]);
    let w = [[1.0, 0.0, -1.0, 2.0], [0.5, 0.5, 0.5, 0.5]];
    let bias = [0.1, -0.2];
    net.params_mut()[2][0] = Tensor::from_rows(&[w[0].to_vec(), w[1].to_vec()]).unwrap();
    net.params_mut()[2][1] = Tensor::from_vec(bias.to_vec());

    let x = [0.3, -0.7, 1.1, 0.9];
    let logits = net
        .forward_eval(&Tensor::new(vec![1, 4], x.to_vec()).unwrap())
        .unwrap();

    // Convolution with zero padding, written out longhand.
    let padded = [0.0, x[0], x[1], x[2], x[3], 0.0];
    let mut conv = [0.0; 4];
    for (pos, c) in conv.iter_mut().enumerate() {
        *c = kbias + ka * padded[pos] + kb * padded[pos + 1] + kc * padded[pos + 2];
    }
    let expected = [
        bias[0] + w[0][0] * conv[0] + w[0][1] * conv[1] + w[0][2] * conv[2] + w[0][3] * conv[3],
        bias[1] + w[1][0] * conv[0] + w[1][1] * conv[1] + w[1][2] * conv[2] + w[1][3] * conv[3],
    ];
    assert_eq!(logits.shape(), &[1, 2]);
    for (got, want) in logits.data().iter().zip(expected) {
        assert!(
            (got - want).abs() < 1e-14,
            "straight-line oracle: {got} vs {want}"
        );
    }
}

/// The production architecture (conv/bn/relu stack on six features) passes a
/// full central-difference check on every one of its parameters.
#[test]
fn full_architecture_gradients_match_finite_differences() {
    let net = Network::classifier(&ArchConfig::default(), 6, 42).unwrap();
    let mut r = rng(7);
    let batch = Tensor::rand_uniform(vec![8, 6], -1.5, 1.5, &mut r);
    let labels: Vec<usize> = (0..8).map(|_| r.gen_range(0..5)).collect();
    let max_rel = grad_check(&net, &batch, &labels, 1e-5).unwrap();
    assert!(
        max_rel < 1e-4,
        "worst relative gradient error {max_rel:e} exceeds 1e-4"
    );
}

/// The finite-difference comparison has teeth: a gradient off by 1% lands
/// orders of magnitude above the pass threshold.
#[test]
fn finite_differences_catch_a_one_percent_gradient_error() {
    let mut net = Network::classifier(
        &ArchConfig {
            conv_channels: vec![4],
            kernel: 3,
            hidden: vec![8],
            classes: 3,
        },
        4,
        9,
    )
    .unwrap();
    net.set_mode(Mode::Train);
    let mut r = rng(11);
    let batch = Tensor::rand_uniform(vec![6, 4], -1.0, 1.0, &mut r);
    let labels = vec![0, 1, 2, 0, 1, 2];
    let mask = vec![true; 6];

    let logits = net.forward(&batch).unwrap();
    let (_, dlogits) = cross_entropy_hard_with_grad(&logits, &labels, &mask).unwrap();
    let analytic = net.backward(&dlogits).unwrap();

    // Probe the first convolution weight by central differences.
    let eps = 1e-5;
    let saved = net.params()[0][0].data()[0];
    net.params_mut()[0][0].data_mut()[0] = saved + eps;
    let plus = cross_entropy_hard(&net.forward(&batch).unwrap(), &labels, &mask).unwrap();
    net.params_mut()[0][0].data_mut()[0] = saved - eps;
    let minus = cross_entropy_hard(&net.forward(&batch).unwrap(), &labels, &mask).unwrap();
    net.params_mut()[0][0].data_mut()[0] = saved;
    let numeric = (plus - minus) / (2.0 * eps);
    let a = analytic.0[0][0].data()[0];

    let rel = |g: f64| (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-12);
    assert!(rel(a) < 1e-6, "clean gradient should agree: {:e}", rel(a));
    assert!(
        rel(a * 1.01) > 1e-3,
        "corrupted gradient should be flagged: {:e}",
        rel(a * 1.01)
    );
}

/// Gradient of the adaptation loss (consistency + weighted masked CE) with
/// respect to student parameters, with the teacher's probabilities held as
/// detached constants, matches finite differences of the loss value.
#[test]
fn adaptation_loss_gradients_match_finite_differences() {
    let arch = ArchConfig {
        conv_channels: vec![3],
        kernel: 3,
        hidden: vec![6],
        classes: 4,
    };
    let teacher = Network::classifier(&arch, 4, 21).unwrap();
    let mut student = Network::classifier(&arch, 4, 22).unwrap();
    student.set_mode(Mode::Train);

    let mut r = rng(13);
    let batch = Tensor::rand_uniform(vec![6, 4], -1.2, 1.2, &mut r);
    let labels: Vec<usize> = (0..6).map(|_| r.gen_range(0..4)).collect();
    // Half the rows are "annotated".
    let mask = vec![true, false, true, false, true, false];
    let lambda = 0.7;

    // Detached teacher targets: computed once, never recomputed during FD.
    let probs = softmax(&teacher.forward_eval(&batch).unwrap()).unwrap();

    let loss_value = |net: &mut Network| -> f64 {
        let logits = net.forward(&batch).unwrap();
        cross_entropy_soft(&probs, &logits).unwrap()
            + lambda * cross_entropy_hard(&logits, &labels, &mask).unwrap()
    };

    let logits = student.forward(&batch).unwrap();
    let (_, mut upstream) = cross_entropy_soft_with_grad(&probs, &logits).unwrap();
    let (_, grad_ce) = cross_entropy_hard_with_grad(&logits, &labels, &mask).unwrap();
    upstream.add_scaled(&grad_ce, lambda).unwrap();
    let analytic = student.backward(&upstream).unwrap();

    // Probe every 4th parameter to keep runtime modest while visiting every
    // layer kind.
    let eps = 1e-5;
    let mut checked = 0;
    for layer in 0..student.params().len() {
        for pi in 0..student.params()[layer].len() {
            for j in (0..student.params()[layer][pi].len()).step_by(4) {
                let saved = student.params()[layer][pi].data()[j];
                student.params_mut()[layer][pi].data_mut()[j] = saved + eps;
                let plus = loss_value(&mut student);
                student.params_mut()[layer][pi].data_mut()[j] = saved - eps;
                let minus = loss_value(&mut student);
                student.params_mut()[layer][pi].data_mut()[j] = saved;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic.0[layer][pi].data()[j];
                // Conv biases feeding batch norm have exactly-zero gradients;
                // below FD noise resolution the comparison is vacuous.
                if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
                assert!(
                    rel < 1e-4,
                    "layer {layer} tensor {pi} index {j}: analytic {a} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 20, "probe visited only {checked} parameters");
}

/// A network without batch normalization trains on single-sample batches,
/// and the cached-forward contract rejects backward without a prior forward.
#[test]
fn backward_requires_a_cached_forward() {
    let net = Network::new(
        vec![LayerSpec::Dense {
            in_features: 2,
            out_features: 2,
        }],
        2,
        0,
    )
    .unwrap();
    let upstream = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    assert!(net.backward(&upstream).is_err());

    let mut net = net;
    net.set_mode(Mode::Train);
    let x = Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap();
    net.forward(&x).unwrap();
    assert!(net.backward(&upstream).is_ok());
}
