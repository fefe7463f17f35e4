use nvc::losses::{kl_diag_gaussian, recon_bce, reparameterize};
use nvc::model::{MlpVae, ModelConfig, OutputKind};
use nvc::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reparameterized_samples_have_posterior_moments() {
    let mu = [0.5, -1.0, 2.0, 0.0];
    let logvar = [0.0, -2.0, 1.0, 3.0];
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f64>::new();
    let m = tape.constant(Tensor::matrix(draws, 4, mu.repeat(draws)).unwrap());
    let l = tape.constant(Tensor::matrix(draws, 4, logvar.repeat(draws)).unwrap());
    let z = reparameterize(&mut tape, m, l, &mut rng).unwrap();
    let z = tape.value(z);
    for j in 0..4 {
        let col: Vec<f64> = (0..draws).map(|i| z.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / draws as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let want = f64::exp(logvar[j]);
        assert!((var / want - 1.0).abs() < 0.1, "dim {j}: variance {var} vs {want}");
        assert!((mean - mu[j]).abs() < 4.0 * (want / draws as f64).sqrt(), "dim {j}: mean {mean}");
    }
}

fn objective(model: &MlpVae<f64>, x: &Tensor<f64>, seed: u64, grads: bool) -> (f64, Option<MlpVae<f64>>) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, grads);
    let xv = tape.constant(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat = model.encode(&mut tape, &bound, xv, Some(&mut rng)).unwrap();
    let y = model.decode(&mut tape, &bound, lat.z).unwrap();
    let r = recon_bce(&mut tape, y, xv).unwrap();
    let k = kl_diag_gaussian(&mut tape, lat.mu, lat.logvar).unwrap();
    let loss = tape.add(r, k).unwrap();
    let value = tape.value(loss).item();
    if !grads {
        return (value, None);
    }
    tape.backward(loss).unwrap();
    let mut out = model.clone();
    out.collect_grads(&mut tape, &bound).unwrap();
    (value, Some(out))
}

#[test]
fn encode_decode_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        input_dim: 5,
        hidden_dims: vec![6],
        latent_dim: 3,
        output: OutputKind::Sigmoid,
        seed: 9,
    };
    let model: MlpVae<f64> = MlpVae::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::matrix(2, 5, (0..10).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let (_, with_grads) = objective(&model, &x, 4, true);
    let with_grads = with_grads.unwrap();

    let h = 1e-6;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (pi, p) in with_grads.params.iter().enumerate() {
        let g = p.grad.as_ref().unwrap();
        for e in 0..p.value.numel() {
            let mut probe = model.clone();
            probe.params[pi].value.data_mut()[e] += h;
            let (up, _) = objective(&probe, &x, 4, false);
            probe.params[pi].value.data_mut()[e] -= 2.0 * h;
            let (down, _) = objective(&probe, &x, 4, false);
            let fd = (up - down) / (2.0 * h);
            diff += (g.data()[e] - fd).powi(2);
            scale += fd * fd;
        }
    }
    let rel = diff.sqrt() / scale.sqrt();
    assert!(rel < 1e-4, "relative gradient error {rel}");
}
