//! Analytic gradients against central finite differences.

use hcvae::cvae::{CvaeModel, ModelConfig};
use hcvae::nn::{Matrix, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

/// `|a - n| <= tol * max(|a|, |n|, floor)`; the floor keeps coordinates whose
/// true gradient is ~0 from failing on finite-difference round-off.
fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() <= REL_TOL * scale
}

fn flat_index(buffers: &[&[f64]], mut flat: usize) -> (usize, usize) {
    for (b, buf) in buffers.iter().enumerate() {
        if flat < buf.len() {
            return (b, flat);
        }
        flat -= buf.len();
    }
    unreachable!()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (trial, hidden) in [vec![5, 4], vec![7], vec![32, 16, 8]].into_iter().enumerate() {
        let mut net = MlpParams::glorot(3, &hidden, 2, &mut rng);
        for l in net.layers_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let input: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let weights = [0.7, -1.3];
        let loss = |net: &MlpParams| {
            let (y, _) = net.forward(&input).unwrap();
            y[0] * weights[0] + y[1] * weights[1] + 0.5 * y[0] * y[0]
        };
        let (y, cache) = net.forward(&input).unwrap();
        let out_grad = [weights[0] + y[0], weights[1]];
        let (grads, _) = net.backward_single(&cache, &out_grad).unwrap();
        let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
        let total = analytic.len();
        for _ in 0..100 {
            let flat = rng.random_range(0..total);
            let (b, i) = flat_index(&net.buffers(), flat);
            let mut plus = net.clone();
            plus.buffers_mut()[b][i] += H;
            let mut minus = net.clone();
            minus.buffers_mut()[b][i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            assert!(
                close(analytic[flat], numeric),
                "trial {trial} coord {flat}: analytic {} numeric {numeric}",
                analytic[flat]
            );
        }
    }
}

#[test]
fn mlp_input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = MlpParams::glorot(4, &[6, 6], 1, &mut rng);
    let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let (_, cache) = net.forward(&x).unwrap();
    let (_, dx) = net.backward_single(&cache, &[1.0]).unwrap();
    for i in 0..4 {
        let mut xp = x.clone();
        xp[i] += H;
        let mut xm = x.clone();
        xm[i] -= H;
        let numeric = (net.forward(&xp).unwrap().0[0] - net.forward(&xm).unwrap().0[0]) / (2.0 * H);
        assert!(close(dx[i], numeric), "input {i}: {} vs {numeric}", dx[i]);
    }
}

fn tiny_model(conditional: bool, seed: u64) -> CvaeModel {
    let cfg = ModelConfig {
        hidden: vec![4],
        latent_dim: 2,
        conditional,
    };
    let mut m = CvaeModel::new(3, 2, &cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for net in [&mut m.encoder, &mut m.decoder] {
        for l in net.layers_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.2..0.2);
            }
        }
    }
    m
}

#[test]
fn cvae_loss_gradients_match_finite_differences() {
    for (conditional, seed) in [(true, 1u64), (false, 2)] {
        let model = tiny_model(conditional, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let k: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let (parts, grads) = model.loss_and_gradients(&x, &k, &noise).unwrap();
        let reference = model.loss(&x, &k, &noise).unwrap();
        assert!((parts.total - reference.total).abs() < 1e-12);

        let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
        assert_eq!(analytic.len(), model.param_count());
        let mut checked = 0;
        for _ in 0..100 {
            let flat = rng.random_range(0..analytic.len());
            let (b, i) = flat_index(&model.buffers(), flat);
            let mut plus = model.clone();
            plus.buffers_mut()[b][i] += H;
            let mut minus = model.clone();
            minus.buffers_mut()[b][i] -= H;
            let numeric = (plus.loss(&x, &k, &noise).unwrap().total
                - minus.loss(&x, &k, &noise).unwrap().total)
                / (2.0 * H);
            assert!(
                close(analytic[flat], numeric),
                "conditional={conditional} coord {flat}: analytic {} numeric {numeric}",
                analytic[flat]
            );
            checked += 1;
        }
        assert_eq!(checked, 100);
    }
}

#[test]
fn batched_gradient_is_mean_of_single_gradients() {
    let model = tiny_model(true, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..4)
        .map(|_| {
            (
                (0..3).map(|_| rng.sample(StandardNormal)).collect(),
                (0..2).map(|_| rng.sample(StandardNormal)).collect(),
                (0..2).map(|_| rng.sample(StandardNormal)).collect(),
            )
        })
        .collect();
    let mut mean = vec![0.0; model.param_count()];
    let mut mean_loss = 0.0;
    for (x, k, e) in &rows {
        let (p, g) = model.loss_and_gradients(x, k, e).unwrap();
        mean_loss += p.total / 4.0;
        for (acc, v) in mean.iter_mut().zip(g.buffers().iter().flat_map(|b| b.iter())) {
            *acc += v / 4.0;
        }
    }
    let xs = Matrix::from_rows(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>()).unwrap();
    let ks = Matrix::from_rows(&rows.iter().map(|r| r.1.clone()).collect::<Vec<_>>()).unwrap();
    let es = Matrix::from_rows(&rows.iter().map(|r| r.2.clone()).collect::<Vec<_>>()).unwrap();
    let (batch_loss, batch_grads) = model.batch_loss_and_gradients(&xs, &ks, &es).unwrap();
    assert!((batch_loss.total - mean_loss).abs() < 1e-12);
    let flat: Vec<f64> = batch_grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
    for (a, b) in mean.iter().zip(flat.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}
