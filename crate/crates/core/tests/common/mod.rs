//! Test-only oracles: central finite differences and brute-force loss loops.
#![allow(dead_code)]

use nvc::tensor::{Tape, Tensor, Var};
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rand_tensor<R: Rng>(rng: &mut R, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Relative error between the tape gradient and central differences of `f`
/// over every input, `||g − g_fd|| / max(||g||, ||g_fd||)`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> nvc::Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], |g| g.data().to_vec()))
        .collect();

    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for e in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + FD_STEP;
            let up = eval(&work);
            work[k].data_mut()[e] = x0 - FD_STEP;
            let down = eval(&work);
            work[k].data_mut()[e] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale < 1e-9 {
        return norm(&diff);
    }
    norm(&diff) / scale
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest anchor per feature, lowest index on ties.
pub fn naive_assign(features: &[Vec<f64>], anchors: &[Vec<f64>]) -> Vec<usize> {
    features
        .iter()
        .map(|z| {
            let mut best = 0;
            for i in 1..anchors.len() {
                if sq(z, &anchors[i]) < sq(z, &anchors[best]) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Loop form of the nebula loss.
pub fn naive_nebula(features: &[Vec<f64>], anchors: &[Vec<f64>], euclidean: bool, floor: Option<f64>) -> f64 {
    let labels = naive_assign(features, anchors);
    let m = anchors.len();
    if euclidean || m == 1 {
        return features.iter().zip(&labels).map(|(z, &l)| sq(z, &anchors[l])).sum();
    }
    let mass = |i: usize| -> f64 {
        let mut s = 1.0;
        for (z, &l) in features.iter().zip(&labels) {
            if l == i {
                s += sq(z, &anchors[i]);
            }
        }
        s
    };
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let mut d = -(sq(&anchors[j], &anchors[i]) + 1e-12).ln();
            if let Some(f) = floor {
                d = d.max(f);
            }
            total += mass(i) * mass(j) * d;
        }
    }
    total
}

pub fn naive_triplet(e_i: &[f64], e_p: &[f64], e_n: &[f64]) -> f64 {
    (2.0 - sq(e_i, e_n) / (sq(e_i, e_p) + 0.01)).max(1.0).ln()
}

/// `(pair, triplet)` metric terms by nested loops.
pub fn naive_metric(features: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let n = features.len();
    let (mut pair_sum, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for p in i + 1..n {
            if labels[i] == labels[p] {
                pair_sum += sq(&features[i], &features[p]);
                pairs += 1;
            }
        }
    }
    let (mut trip_sum, mut trips) = (0.0, 0usize);
    for i in 0..n {
        for p in 0..n {
            if p == i || labels[p] != labels[i] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[i] {
                    trip_sum += naive_triplet(&features[i], &features[p], &features[q]);
                    trips += 1;
                }
            }
        }
    }
    let avg = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    (avg(pair_sum, pairs), avg(trip_sum, trips))
}

/// Smallest `|ratio − 1|` over the admissible triplets; small values sit on the clamp kink.
pub fn triplet_kink_margin(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = features.len();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        for p in 0..n {
            if p == i || labels[p] != labels[i] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[i] {
                    let r = sq(&features[i], &features[q]) / (sq(&features[i], &features[p]) + 0.01);
                    margin = margin.min((r - 1.0).abs());
                }
            }
        }
    }
    margin
}
pub mod suites;
