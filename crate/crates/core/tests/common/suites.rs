//! Gradient and oracle sweeps shared by the unit-level integration tests and
//! the acceptance runner.

use nvc::losses::{
    anchor_mass, assign_anchors, chamfer, gravitational_force, kl_diag_gaussian, log_inv_sq_distance, metric_loss,
    nebula_loss, recon_bce, recon_euclidean, siamese_pair, total_loss, triplet, LossWeights, NebulaMode,
    NebulaOptions,
};
use nvc::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, naive_metric, naive_nebula, rand_tensor, rows, sq, triplet_kink_margin};

/// Worst relative gradient error of one loss over all sampled points.
#[derive(Debug)]
pub struct GradResult {
    pub op: &'static str,
    pub max_rel_err: f64,
}

fn labels<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

/// Random features with labels whose triplets stay clear of the clamp kink.
fn metric_point<R: Rng>(rng: &mut R) -> (Tensor<f64>, Vec<usize>) {
    loop {
        let n = rng.gen_range(3..7);
        let d = rng.gen_range(1..4);
        let z = rand_tensor(rng, &[n, d], -1.5, 1.5);
        let l = labels(rng, n, 2);
        if triplet_kink_margin(&rows(&z), &l) > 1e-3 {
            return (z, l);
        }
    }
}

fn nebula_point<R: Rng>(rng: &mut R) -> (Tensor<f64>, Tensor<f64>) {
    loop {
        let n = rng.gen_range(2..7);
        let m = rng.gen_range(2..5);
        let d = rng.gen_range(1..4);
        let z = rand_tensor(rng, &[n, d], -2.0, 2.0);
        let a = rand_tensor(rng, &[m, d], -2.0, 2.0);
        let ar = rows(&a);
        let separated = (0..m).all(|i| (i + 1..m).all(|j| sq(&ar[i], &ar[j]) > 0.05));
        if separated {
            return (z, a);
        }
    }
}

/// Central-difference check of every loss at `points` random f64 inputs each.
/// BCE targets are data, so only the prediction side is differentiated.
pub fn gradient_suite(points: usize, seed: u64) -> Vec<GradResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut run = |op: &'static str, rng: &mut ChaCha8Rng, sample: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let worst = (0..points).map(|_| sample(rng)).fold(0.0f64, f64::max);
        results.push(GradResult { op, max_rel_err: worst });
    };

    run("recon_euclidean", &mut rng, &mut |rng| {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let p = rand_tensor(rng, &[n, k], -2.0, 2.0);
        let t = rand_tensor(rng, &[n, k], -2.0, 2.0);
        grad_check(&[p, t], |tape, v| recon_euclidean(tape, v[0], v[1]))
    });
    run("recon_bce", &mut rng, &mut |rng| {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let p = rand_tensor(rng, &[n, k], 0.05, 0.95);
        let t = rand_tensor(rng, &[n, k], 0.0, 1.0);
        grad_check(&[p], |tape, v| {
            let t = tape.constant(t.clone());
            recon_bce(tape, v[0], t)
        })
    });
    run("chamfer", &mut rng, &mut |rng| {
        let (na, nb, d) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4));
        let a = rand_tensor(rng, &[na, d], -2.0, 2.0);
        let b = rand_tensor(rng, &[nb, d], -2.0, 2.0);
        grad_check(&[a, b], |tape, v| chamfer(tape, v[0], v[1]))
    });
    run("anchor_mass", &mut rng, &mut |rng| {
        let (z, a) = nebula_point(rng);
        let asg = assign_anchors(&z, &a).unwrap();
        let i = rng.gen_range(0..a.rows());
        grad_check(&[z, a], |tape, v| anchor_mass(tape, v[0], v[1], &asg, i))
    });
    run("log_inv_sq_distance", &mut rng, &mut |rng| {
        let d = rng.gen_range(1..5);
        let (a, b) = loop {
            let a = rand_tensor(rng, &[d], -2.0, 2.0);
            let b = rand_tensor(rng, &[d], -2.0, 2.0);
            if sq(a.data(), b.data()) > 0.05 {
                break (a, b);
            }
        };
        grad_check(&[a, b], |tape, v| log_inv_sq_distance(tape, v[0], v[1]))
    });
    run("gravitational_force", &mut rng, &mut |rng| {
        let (z, a) = nebula_point(rng);
        let asg = assign_anchors(&z, &a).unwrap();
        let i = rng.gen_range(0..a.rows());
        let j = (i + rng.gen_range(1..a.rows())) % a.rows();
        grad_check(&[z, a], |tape, v| gravitational_force(tape, v[0], v[1], &asg, i, j))
    });
    for (op, mode, floor) in [
        ("nebula_loss[mass]", NebulaMode::Mass, None),
        ("nebula_loss[mass, floored]", NebulaMode::Mass, Some(0.1)),
        ("nebula_loss[euclidean]", NebulaMode::Euclidean, None),
    ] {
        run(op, &mut rng, &mut |rng| {
            let (z, a) = nebula_point(rng);
            let asg = assign_anchors(&z, &a).unwrap();
            let opts = NebulaOptions { mode, d_floor: floor };
            grad_check(&[z, a], |tape, v| nebula_loss(tape, v[0], v[1], &asg, opts))
        });
    }
    run("kl_diag_gaussian", &mut rng, &mut |rng| {
        let (n, d) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let mu = rand_tensor(rng, &[n, d], -2.0, 2.0);
        let lv = rand_tensor(rng, &[n, d], -2.0, 2.0);
        grad_check(&[mu, lv], |tape, v| kl_diag_gaussian(tape, v[0], v[1]))
    });
    run("siamese_pair", &mut rng, &mut |rng| {
        let d = rng.gen_range(1..5);
        let a = rand_tensor(rng, &[d], -2.0, 2.0);
        let b = rand_tensor(rng, &[d], -2.0, 2.0);
        grad_check(&[a, b], |tape, v| siamese_pair(tape, v[0], v[1]))
    });
    run("triplet", &mut rng, &mut |rng| {
        let d = rng.gen_range(1..4);
        let (i, p, n) = loop {
            let i = rand_tensor(rng, &[d], -1.0, 1.0);
            let p = rand_tensor(rng, &[d], -1.0, 1.0);
            let n = rand_tensor(rng, &[d], -1.0, 1.0);
            let r = sq(i.data(), n.data()) / (sq(i.data(), p.data()) + 0.01);
            if (r - 1.0).abs() > 1e-3 {
                break (i, p, n);
            }
        };
        grad_check(&[i, p, n], |tape, v| triplet(tape, v[0], v[1], v[2]))
    });
    run("metric_loss", &mut rng, &mut |rng| {
        let (z, l) = metric_point(rng);
        grad_check(&[z], |tape, v| {
            let t = metric_loss(tape, v[0], &l)?;
            tape.add(t.pair, t.triplet)
        })
    });
    run("total_loss", &mut rng, &mut |rng| {
        let (z, l) = metric_point(rng);
        let (n, d) = (z.rows(), z.row_len());
        let a = loop {
            let a = rand_tensor(rng, &[3, d], -1.5, 1.5);
            let ar = rows(&a);
            if (0..3).all(|i| (i + 1..3).all(|j| sq(&ar[i], &ar[j]) > 0.05)) {
                break a;
            }
        };
        let asg = assign_anchors(&z, &a).unwrap();
        let lv = rand_tensor(rng, &[n, d], -1.0, 1.0);
        let pred = rand_tensor(rng, &[n, 4], 0.05, 0.95);
        let target = rand_tensor(rng, &[n, 4], 0.0, 1.0);
        let w = LossWeights {
            recon: rng.gen_range(0.1..2.0),
            kl: rng.gen_range(0.1..2.0),
            nebula: rng.gen_range(0.1..2.0),
            metric: rng.gen_range(0.1..2.0),
        };
        grad_check(&[z, a, lv, pred], |tape, v| {
            let target = tape.constant(target.clone());
            let recon = recon_bce(tape, v[3], target)?;
            let kl = kl_diag_gaussian(tape, v[0], v[2])?;
            let neb = nebula_loss(tape, v[0], v[1], &asg, NebulaOptions::default())?;
            let m = metric_loss(tape, v[0], &l)?;
            let metric = tape.add(m.pair, m.triplet)?;
            total_loss(tape, recon, kl, neb, metric, &w)
        })
    });
    results
}

/// Largest absolute gap between the tape losses and the loop oracles over
/// `instances` random batches with `n ≤ 8`, `m ≤ 5`, `d ≤ 4`.
pub struct OracleResult {
    pub nebula_max_gap: f64,
    pub metric_max_gap: f64,
}

pub fn oracle_suite(instances: usize, seed: u64) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nebula_max_gap = 0.0f64;
    let mut metric_max_gap = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(1..=5);
        let d = rng.gen_range(1..=4);
        let z = rand_tensor(&mut rng, &[n, d], -2.0, 2.0);
        let a = rand_tensor(&mut rng, &[m, d], -2.0, 2.0);
        let asg = assign_anchors(&z, &a).unwrap();
        for (mode, floor) in [(NebulaMode::Mass, None), (NebulaMode::Mass, Some(0.1)), (NebulaMode::Euclidean, None)] {
            let mut tape = Tape::<f64>::new();
            let zv = tape.constant(z.clone());
            let av = tape.constant(a.clone());
            let loss = nebula_loss(&mut tape, zv, av, &asg, NebulaOptions { mode, d_floor: floor }).unwrap();
            let expected = naive_nebula(&rows(&z), &rows(&a), mode == NebulaMode::Euclidean, floor);
            nebula_max_gap = nebula_max_gap.max((tape.value(loss).item() - expected).abs());
        }
        let lab: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m.max(2))).collect();
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(z.clone());
        let t = metric_loss(&mut tape, zv, &lab).unwrap();
        let (pair, trip) = naive_metric(&rows(&z), &lab);
        metric_max_gap = metric_max_gap
            .max((tape.value(t.pair).item() - pair).abs())
            .max((tape.value(t.triplet).item() - trip).abs());
    }
    OracleResult {
        nebula_max_gap,
        metric_max_gap,
    }
}
