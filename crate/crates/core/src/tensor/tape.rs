use crate::error::{NvcError, Result};

use super::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    /// `ln(x + eps)`
    Ln(Var, T),
    Square(Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    /// Reduction along an axis; the stored indices are the flat positions of the minima.
    MinAxis(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    SqDist(Var, Var),
    /// Mean log-ratio triplet term over a pairwise distance matrix.
    Triplet(Var, Vec<usize>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Define-by-run operation record.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order of the graph.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into a leaf by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Afterwards only leaf gradients are retained and the tape refuses a
    /// second pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(NvcError::TapeConsumed);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(NvcError::NonScalarLoss(loss_value.dims().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
        }

        self.grads = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let g = match (&node.op, node.requires_grad, grads.get_mut(idx)) {
                (Op::Leaf, true, Some(slot)) => {
                    let data = slot.take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                    if data.iter().any(|v| !v.is_finite()) {
                        return Err(NvcError::NonFinite(format!("gradient of leaf {idx}")));
                    }
                    Some(Tensor::from_shape(node.value.shape().clone(), data)?)
                }
                (Op::Leaf, true, None) => Some(Tensor::zeros(node.value.dims().to_vec()).unwrap_or_else(|_| Tensor::scalar(T::zero()))),
                _ => None,
            };
            self.grads.push(g);
        }
        // intermediate values are no longer needed
        for node in self.nodes.iter_mut() {
            if !matches!(node.op, Op::Leaf) {
                node.op = Op::Leaf;
                node.requires_grad = false;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
        contrib(slot);
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s - g)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] / bv[i];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] - g[i] * av[i] / (bv[i] * bv[i]);
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                let k = self.value(*row).numel();
                self.accumulate(grads, *row, |s| {
                    for chunk in g.chunks(k) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).shape().matrix("matmul")?;
                let (_, m) = self.value(*b).shape().matrix("matmul")?;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = G · Bᵀ
                self.accumulate(grads, *a, |s| {
                    T::gemm(n, m, k, T::one(), g, (m as isize, 1), bv, (1, m as isize), T::one(), s)
                });
                // dB = Aᵀ · G
                self.accumulate(grads, *b, |s| {
                    T::gemm(k, n, m, T::one(), av, (1, k as isize), g, (m as isize, 1), T::one(), s)
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).shape().matrix("transpose")?;
                self.accumulate(grads, *a, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] = s[i * c + j] + g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) | Op::AddScalar(a) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        if av[i] > T::zero() {
                            s[i] = s[i] + g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => self.accumulate(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * (T::one() - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * out[i] * (T::one() - out[i]);
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * out[i];
                }
            }),
            Op::Ln(a, eps) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] / (av[i] + *eps);
                    }
                });
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                let two = T::one() + T::one();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + two * g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * *c;
                }
            }),
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        if av[i] >= *lo && av[i] <= *hi {
                            s[i] = s[i] + g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |s| {
                s.iter_mut().for_each(|s| *s = *s + g[0]);
            }),
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).numel()).unwrap_or_else(T::one);
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().for_each(|s| *s = *s + g[0] / n);
                });
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.value(*a).shape().matrix("sum_axis")?;
                let axis = *axis;
                self.accumulate(grads, *a, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            let gi = if axis == 0 { j } else { i };
                            s[i * c + j] = s[i * c + j] + g[gi];
                        }
                    }
                });
            }
            Op::MinAxis(a, positions) => self.accumulate(grads, *a, |s| {
                for (gi, &p) in positions.iter().enumerate() {
                    s[p] = s[p] + g[gi];
                }
            }),
            Op::GatherRows(a, idx) => {
                let w = self.value(*a).row_len();
                self.accumulate(grads, *a, |s| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut s[src * w..(src + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::SqDist(a, b) => self.backprop_sq_dist(*a, *b, g, grads)?,
            Op::Triplet(dist, labels) => {
                let dv = self.value(*dist);
                let n = labels.len();
                let mut local = vec![T::zero(); n * n];
                super::ops::triplet_grad(dv.data(), labels, g[0], &mut local);
                self.accumulate(grads, *dist, |s| add_into(s, &local));
            }
        }
        Ok(())
    }

    fn backprop_sq_dist(
        &self,
        a: Var,
        b: Var,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) -> Result<()> {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, d) = av.shape().matrix("sq_dist")?;
        let (m, _) = bv.shape().matrix("sq_dist")?;
        let two = T::one() + T::one();
        // d/da_i = Σ_j 2 g_ij (a_i - b_j);  d/db_j = -Σ_i 2 g_ij (a_i - b_j)
        let mut ga = vec![T::zero(); n * d];
        let mut gb = vec![T::zero(); m * d];
        for i in 0..n {
            let ai = av.row(i);
            for j in 0..m {
                let gij = g[i * m + j];
                if gij == T::zero() {
                    continue;
                }
                let bj = bv.row(j);
                for k in 0..d {
                    let diff = two * gij * (ai[k] - bj[k]);
                    ga[i * d + k] = ga[i * d + k] + diff;
                    gb[j * d + k] = gb[j * d + k] - diff;
                }
            }
        }
        self.accumulate(grads, a, |s| add_into(s, &ga));
        self.accumulate(grads, b, |s| add_into(s, &gb));
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}
