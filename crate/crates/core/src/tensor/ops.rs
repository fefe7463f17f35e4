//! Forward primitives. Each method computes its value eagerly and records
//! the op on the tape when any input requires a gradient.

use crate::error::{NvcError, Result};

use super::tape::Op;
use super::{sq_norm_diff, Real, Tape, Tensor, Var};

/// Additive constant inside the triplet ratio denominator.
pub const TRIPLET_MARGIN: f64 = 0.01;

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NvcError::ShapeMismatch {
                op,
                lhs: sa.dims().to_vec(),
                rhs: sb.dims().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_shape(av.shape().clone(), data)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("div", a, b, |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `a[n, k] + row[k]`, broadcasting the row over the leading axis only.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let av = self.value(a);
        let rv = self.value(row);
        let k = av.row_len();
        let row_ok = av.shape().rank() == 2 && (rv.dims() == [k] || rv.dims() == [1, k]);
        if !row_ok {
            return Err(NvcError::ShapeMismatch {
                op: "add_row",
                lhs: av.dims().to_vec(),
                rhs: rv.dims().to_vec(),
            });
        }
        let r = rv.data();
        let data = av
            .data()
            .chunks(k)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::from_shape(av.shape().clone(), data)?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).shape().matrix("matmul")?;
        let (k2, m) = self.value(b).shape().matrix("matmul")?;
        if k != k2 {
            return Err(NvcError::ShapeMismatch {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let mut out = vec![T::zero(); n * m];
        T::gemm(
            n,
            k,
            m,
            T::one(),
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (m as isize, 1),
            T::zero(),
            &mut out,
        );
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.shape().matrix("transpose")?;
        let src = av.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(dims)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, T::exp, Op::Exp(a))
    }

    /// Natural log; any non-positive input is an error.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.ln_shifted(a, 0.0)
    }

    /// `ln(x + eps)`: the opt-in guarded logarithm. Fails if `x + eps <= 0`.
    pub fn ln_shifted(&mut self, a: Var, eps: f64) -> Result<Var> {
        let e = T::from_f64_lossy(eps);
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| !(x + e > T::zero())) {
            return Err(NvcError::NonPositiveLog {
                op: "ln",
                value: bad.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(self.unary(a, |x| (x + e).ln(), Op::Ln(a, e)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.clamp(a, lo, f64::INFINITY)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().fold(T::zero(), |acc, v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = T::from_usize(av.numel()).unwrap_or_else(T::one);
        let s = av.data().iter().copied().fold(T::zero(), |acc, v| acc + v) / n;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum of a matrix over `axis` (0 → one value per column, 1 → one per row).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.shape().matrix("sum_axis")?;
        let src = av.data();
        let out = match axis {
            0 => (0..c)
                .map(|j| (0..r).fold(T::zero(), |acc, i| acc + src[i * c + j]))
                .collect::<Vec<_>>(),
            1 => src
                .chunks(c)
                .map(|row| row.iter().copied().fold(T::zero(), |acc, v| acc + v))
                .collect(),
            _ => return Err(NvcError::InvalidArgument(format!("axis {axis} out of range"))),
        };
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::SumAxis(a, axis), &[a]))
    }

    /// Minimum of a matrix over `axis`; ties resolve to the lowest index.
    pub fn min_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.shape().matrix("min_axis")?;
        let src = av.data();
        let (outer, inner, pos): (usize, usize, Box<dyn Fn(usize, usize) -> usize>) = match axis {
            0 => (c, r, Box::new(move |o, i| i * c + o)),
            1 => (r, c, Box::new(move |o, i| o * c + i)),
            _ => return Err(NvcError::InvalidArgument(format!("axis {axis} out of range"))),
        };
        let mut values = Vec::with_capacity(outer);
        let mut positions = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = pos(o, 0);
            for i in 1..inner {
                let p = pos(o, i);
                if src[p] < src[best] {
                    best = p;
                }
            }
            values.push(src[best]);
            positions.push(best);
        }
        let value = Tensor::vector(values);
        Ok(self.push(value, Op::MinAxis(a, positions), &[a]))
    }

    /// Copies rows `idx` of `a` (leading axis) into a new tensor.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(idx)?;
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    /// Squared Euclidean distance between each row of `a[n, d]` and each row of `b[m, d]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::sq_dist_matrix(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::SqDist(a, b), &[a, b]))
    }

    /// Mean of `ln(max(1, 2 − D[i,n] / (D[i,p] + 0.01)))` over every triplet with
    /// `label[i] == label[p]`, `i ≠ p`, `label[n] ≠ label[i]`, where `D` is an
    /// `n×n` squared-distance matrix. Zero when no triplet exists.
    pub fn triplet_mean(&mut self, dist: Var, labels: &[usize]) -> Result<Var> {
        let dv = self.value(dist);
        let (r, c) = dv.shape().matrix("triplet_mean")?;
        if r != c || r != labels.len() {
            return Err(NvcError::ShapeMismatch {
                op: "triplet_mean",
                lhs: vec![r, c],
                rhs: vec![labels.len()],
            });
        }
        let v = triplet_value(dv.data(), labels);
        Ok(self.push(Tensor::scalar(v), Op::Triplet(dist, labels.to_vec()), &[dist]))
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn for_each_triplet(labels: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = labels.len();
    for i in 0..n {
        for p in 0..n {
            if p == i || labels[p] != labels[i] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[i] {
                    f(i, p, q);
                }
            }
        }
    }
}

pub(crate) fn triplet_count(labels: &[usize]) -> usize {
    let mut count = 0usize;
    for_each_triplet(labels, |_, _, _| count += 1);
    count
}

fn triplet_value<T: Real>(dist: &[T], labels: &[usize]) -> T {
    let n = labels.len();
    let margin = T::from_f64_lossy(TRIPLET_MARGIN);
    let two = T::one() + T::one();
    let mut total = T::zero();
    let mut count = 0usize;
    for_each_triplet(labels, |i, p, q| {
        let ratio = dist[i * n + q] / (dist[i * n + p] + margin);
        total = total + (two - ratio).max(T::one()).ln();
        count += 1;
    });
    if count == 0 {
        T::zero()
    } else {
        total / T::from_usize(count).unwrap_or_else(T::one)
    }
}

pub(crate) fn triplet_grad<T: Real>(dist: &[T], labels: &[usize], g: T, out: &mut [T]) {
    let n = labels.len();
    let count = triplet_count(labels);
    if count == 0 {
        return;
    }
    let scale = g / T::from_usize(count).unwrap_or_else(T::one);
    let margin = T::from_f64_lossy(TRIPLET_MARGIN);
    let two = T::one() + T::one();
    for_each_triplet(labels, |i, p, q| {
        let denom = dist[i * n + p] + margin;
        let ratio = dist[i * n + q] / denom;
        let inner = two - ratio;
        if inner > T::one() {
            // d ln(2 − r) = −dr / (2 − r)
            let dr = -scale / inner;
            out[i * n + q] = out[i * n + q] + dr / denom;
            out[i * n + p] = out[i * n + p] - dr * dist[i * n + q] / (denom * denom);
        }
    });
}

/// Plain squared distance between two equal-length slices.
pub fn sq_distance<T: Real>(a: &[T], b: &[T]) -> T {
    sq_norm_diff(a, b)
}
