use rand::Rng;

use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::{transpose_blocks, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op maps onto the left operand.
#[derive(Debug, Clone)]
enum Bcast {
    Same,
    Scalar,
    /// Right operand equals the trailing `n` elements' layout.
    Suffix(usize),
    /// Per-axis strides into the right operand (0 on broadcast axes).
    General {
        lhs_shape: Vec<usize>,
        strides: Vec<usize>,
    },
}

impl Bcast {
    fn new(lhs: &[usize], rhs: &[usize]) -> Option<Self> {
        if lhs == rhs {
            return Some(Self::Same);
        }
        let rhs_numel: usize = rhs.iter().product();
        if rhs_numel == 1 {
            return Some(Self::Scalar);
        }
        if rhs.len() > lhs.len() {
            return None;
        }
        let offset = lhs.len() - rhs.len();
        let mut strides = vec![0; lhs.len()];
        let mut stride = 1;
        for (j, &d) in rhs.iter().enumerate().rev() {
            let l = lhs[offset + j];
            if d == l {
                strides[offset + j] = stride;
            } else if d != 1 {
                return None;
            }
            stride *= d;
        }
        // Strip leading unit axes of the right operand before testing for a suffix.
        let first_real = rhs.iter().position(|&d| d != 1).unwrap_or(rhs.len());
        let trimmed = &rhs[first_real..];
        if lhs.ends_with(trimmed) {
            return Some(Self::Suffix(rhs_numel));
        }
        Some(Self::General {
            lhs_shape: lhs.to_vec(),
            strides,
        })
    }

    fn rhs_index(&self, mut i: usize) -> usize {
        match self {
            Self::Same => i,
            Self::Scalar => 0,
            Self::Suffix(n) => i % n,
            Self::General { lhs_shape, strides } => {
                let mut idx = 0;
                for (&d, &s) in lhs_shape.iter().zip(strides).rev() {
                    idx += (i % d) * s;
                    i /= d;
                }
                idx
            }
        }
    }

    /// Sums a left-shaped buffer down to the right operand's layout.
    fn reduce<S: Scalar>(&self, g: &[S], rhs_numel: usize) -> Vec<S> {
        match self {
            Self::Same => g.to_vec(),
            Self::Scalar => vec![g.iter().copied().sum()],
            Self::Suffix(n) => {
                let mut out = vec![S::zero(); *n];
                for chunk in g.chunks_exact(*n) {
                    for (o, &v) in out.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                out
            }
            Self::General { .. } => {
                let mut out = vec![S::zero(); rhs_numel];
                for (i, &v) in g.iter().enumerate() {
                    out[self.rhs_index(i)] += v;
                }
                out
            }
        }
    }

    fn expand<S: Scalar>(&self, rhs: &[S], lhs_numel: usize) -> Vec<S> {
        match self {
            Self::Same => rhs.to_vec(),
            _ => (0..lhs_numel).map(|i| rhs[self.rhs_index(i)]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MatMulKind {
    /// `[.., m, k] x [k, n]`: right operand shared across the batch.
    Shared { rows: usize, k: usize, n: usize },
    /// `[.., m, k] x [.., k, n]` with identical batch dims.
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

enum Op<S> {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, S),
    MatMul(Var, Var, MatMulKind),
    TransposeLast2(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    MeanLast(Var),
    VarLast(Var),
    Standardize { x: Var, inv_std: Vec<S> },
    Gelu(Var),
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<S> },
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<S> },
    Map { x: Var, df: fn(S) -> S },
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Arena recording a forward computation for reverse-mode differentiation.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn gemm<S: Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[S],
    (rsa, csa): (usize, usize),
    b: &[S],
    (rsb, csb): (usize, usize),
    c: &mut [S],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = S::zero());
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm lhs view out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm rhs view out of bounds");
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of the last backward pass, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<(Tensor<S>, Bcast)> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let plan = Bcast::new(av.shape(), bv.shape()).ok_or_else(|| AutogradError::ShapeMismatch {
            op,
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
        let bd = bv.data();
        let data: Vec<S> = match &plan {
            Bcast::Same => av.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => av.data().iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Suffix(n) => {
                let mut out = Vec::with_capacity(av.numel());
                for chunk in av.data().chunks_exact(*n) {
                    out.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            Bcast::General { .. } => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[plan.rhs_index(i)]))
                .collect(),
        };
        Ok((Tensor::from_vec(av.shape().to_vec(), data)?, plan))
    }

    /// `a + b`, broadcasting `b` over leading or unit axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, plan) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, Op::Add(a, b, plan), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, plan) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, Op::Sub(a, b, plan), rg))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, plan) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, Op::Mul(a, b, plan), rg))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| x * c).collect();
        let value = Tensor::from_vec(av.shape().to_vec(), data).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Matrix product over the two trailing axes.
    ///
    /// `b` is either a rank-2 matrix shared by every leading index of `a`, or
    /// has exactly the same leading (batch) dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ash, bsh) = (av.shape(), bv.shape());
        let mismatch = || AutogradError::ShapeMismatch {
            op: "matmul",
            lhs: ash.to_vec(),
            rhs: bsh.to_vec(),
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let mut shape = ash.to_vec();
        *shape.last_mut().unwrap() = n;
        let kind = if bsh.len() == 2 {
            let rows = ash[..ash.len() - 1].iter().product();
            MatMulKind::Shared { rows, k, n }
        } else if ash[..ash.len() - 2] == bsh[..bsh.len() - 2] {
            let batch = ash[..ash.len() - 2].iter().product();
            MatMulKind::Batched { batch, m, k, n }
        } else {
            return Err(mismatch());
        };
        let numel: usize = shape.iter().product();
        let mut out = vec![S::zero(); numel];
        match kind {
            MatMulKind::Shared { rows, k, n } => {
                gemm((rows, k, n), av.data(), (k, 1), bv.data(), (n, 1), &mut out, false);
            }
            MatMulKind::Batched { batch, m, k, n } => {
                for bi in 0..batch {
                    gemm(
                        (m, k, n),
                        &av.data()[bi * m * k..(bi + 1) * m * k],
                        (k, 1),
                        &bv.data()[bi * k * n..(bi + 1) * k * n],
                        (n, 1),
                        &mut out[bi * m * n..(bi + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let value = Tensor::from_vec(shape, out)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, Op::MatMul(a, b, kind), rg))
    }

    pub fn transpose_last_two(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.transpose_last_two()?;
        let rg = self.req(a);
        Ok(self.push(value, Op::TransposeLast2(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape.to_vec())?;
        let rg = self.req(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| AutogradError::InvalidShape {
            op: "concat_last",
            reason: "no inputs".into(),
        })?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let sh = self.shape(p);
            if sh.is_empty() || sh[..sh.len() - 1] != lead[..] {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.shape(*first).to_vec(),
                    rhs: sh.to_vec(),
                });
            }
            widths.push(last_dim(sh));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::from_vec(shape, data)?;
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    fn keepdim_shape(&self, a: Var) -> Vec<usize> {
        let mut shape = self.shape(a).to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        shape
    }

    /// Mean over the last axis, keeping it with size 1.
    pub fn mean_last(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = last_dim(av.shape());
        let inv = S::one() / S::of(n as f64);
        let data = av.data().chunks_exact(n).map(|r| r.iter().copied().sum::<S>() * inv).collect();
        let value = Tensor::from_vec(self.keepdim_shape(a), data).expect("keepdim");
        let rg = self.req(a);
        self.push(value, Op::MeanLast(a), rg)
    }

    /// Population variance over the last axis, keeping it with size 1.
    pub fn var_last(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = last_dim(av.shape());
        let inv = S::one() / S::of(n as f64);
        let data = av
            .data()
            .chunks_exact(n)
            .map(|r| {
                let mean = r.iter().copied().sum::<S>() * inv;
                r.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() * inv
            })
            .collect();
        let value = Tensor::from_vec(self.keepdim_shape(a), data).expect("keepdim");
        let rg = self.req(a);
        self.push(value, Op::VarLast(a), rg)
    }

    /// `(x - mean) / sqrt(var + eps)` along the last axis (population variance).
    pub fn standardize_last(&mut self, a: Var, eps: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let n = last_dim(av.shape());
        let inv_n = S::one() / S::of(n as f64);
        let eps = S::of(eps);
        let mut out = Vec::with_capacity(av.numel());
        let mut inv_std = Vec::with_capacity(av.numel() / n.max(1));
        for r in av.data().chunks_exact(n) {
            let mean = r.iter().copied().sum::<S>() * inv_n;
            let var = r.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() * inv_n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(r.iter().map(|&x| (x - mean) * is));
        }
        let value = Tensor::from_vec(av.shape().to_vec(), out).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Standardize { x: a, inv_std }, rg)
    }

    /// Layer normalization over the last axis followed by `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let z = self.standardize_last(x, eps);
        let scaled = self.mul(z, gain)?;
        self.add(scaled, bias)
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let half = S::of(0.5);
        let inv_sqrt2 = S::of(std::f64::consts::FRAC_1_SQRT_2);
        let data = av
            .data()
            .iter()
            .map(|&x| x * half * (S::one() + (x * inv_sqrt2).erf()))
            .collect();
        let value = Tensor::from_vec(av.shape().to_vec(), data).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = last_dim(av.shape());
        let mut out = Vec::with_capacity(av.numel());
        for r in av.data().chunks_exact(n) {
            let max = r.iter().copied().fold(S::neg_infinity(), S::max);
            let start = out.len();
            out.extend(r.iter().map(|&x| (x - max).exp()));
            let total: S = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::from_vec(av.shape().to_vec(), out).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let sh = lv.shape();
        if sh.len() != 2 || sh[0] != targets.len() {
            return Err(AutogradError::ShapeMismatch {
                op: "cross_entropy",
                lhs: sh.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (batch, classes) = (sh[0], sh[1]);
        let mut probs = Vec::with_capacity(lv.numel());
        let mut total = 0.0f64;
        for (row, &t) in lv.data().chunks_exact(classes).zip(targets) {
            if t >= classes {
                return Err(AutogradError::TargetOutOfRange { target: t, classes });
            }
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum_exp: S = row.iter().map(|&x| (x - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            total += (log_z - row[t]).as_f64();
            probs.extend(row.iter().map(|&x| (x - log_z).exp()));
        }
        let loss = if batch == 0 { 0.0 } else { total / batch as f64 };
        let rg = self.req(logits);
        Ok(self.push(
            Tensor::scalar(S::of(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.req(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let total: S = av.data().iter().copied().sum();
        let mean = total / S::of(av.numel().max(1) as f64);
        let rg = self.req(a);
        self.push(Tensor::scalar(mean), Op::Mean(a), rg)
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let scale = S::of(1.0 / keep);
        let av = &self.nodes[a.0].value;
        let mask: Vec<S> = (0..av.numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { S::zero() })
            .collect();
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::from_vec(av.shape().to_vec(), data).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Dropout { x: a, mask }, rg)
    }

    /// User-supplied elementwise function with its derivative.
    pub fn map(&mut self, a: Var, f: fn(S) -> S, df: fn(S) -> S) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_vec(av.shape().to_vec(), data).expect("same shape");
        let rg = self.req(a);
        self.push(value, Op::Map { x: a, df }, rg)
    }

    /// Propagates gradients from a scalar `loss` to every node it depends on.
    ///
    /// Gradients add onto whatever earlier passes left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(AutogradError::NonScalarLoss(shape.to_vec()));
        }
        self.accumulate(loss, vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, delta) in contributions {
                self.accumulate(parent, delta);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<S>) {
        let node = &mut self.nodes[v.0];
        debug_assert_eq!(delta.len(), node.value.numel());
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn node_backward(&self, i: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, plan) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    out.push((*b, plan.reduce(g, val(*b).numel())));
                }
            }
            Op::Sub(a, b, plan) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    let mut db = plan.reduce(g, val(*b).numel());
                    db.iter_mut().for_each(|v| *v = -*v);
                    out.push((*b, db));
                }
            }
            Op::Mul(a, b, plan) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if self.req(*a) {
                    let be = plan.expand(bd, ad.len());
                    out.push((*a, g.iter().zip(&be).map(|(&x, &y)| x * y).collect()));
                }
                if self.req(*b) {
                    let prod: Vec<S> = g.iter().zip(ad).map(|(&x, &y)| x * y).collect();
                    out.push((*b, plan.reduce(&prod, bd.len())));
                }
            }
            Op::Scale(a, c) => {
                if self.req(*a) {
                    out.push((*a, g.iter().map(|&x| x * *c).collect()));
                }
            }
            Op::MatMul(a, b, kind) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                match *kind {
                    MatMulKind::Shared { rows, k, n } => {
                        if self.req(*a) {
                            let mut da = vec![S::zero(); rows * k];
                            gemm((rows, n, k), g, (n, 1), bd, (1, n), &mut da, false);
                            out.push((*a, da));
                        }
                        if self.req(*b) {
                            let mut db = vec![S::zero(); k * n];
                            gemm((k, rows, n), ad, (1, k), g, (n, 1), &mut db, false);
                            out.push((*b, db));
                        }
                    }
                    MatMulKind::Batched { batch, m, k, n } => {
                        if self.req(*a) {
                            let mut da = vec![S::zero(); batch * m * k];
                            for bi in 0..batch {
                                gemm(
                                    (m, n, k),
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    (n, 1),
                                    &bd[bi * k * n..(bi + 1) * k * n],
                                    (1, n),
                                    &mut da[bi * m * k..(bi + 1) * m * k],
                                    false,
                                );
                            }
                            out.push((*a, da));
                        }
                        if self.req(*b) {
                            let mut db = vec![S::zero(); batch * k * n];
                            for bi in 0..batch {
                                gemm(
                                    (k, m, n),
                                    &ad[bi * m * k..(bi + 1) * m * k],
                                    (1, k),
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    (n, 1),
                                    &mut db[bi * k * n..(bi + 1) * k * n],
                                    false,
                                );
                            }
                            out.push((*b, db));
                        }
                    }
                }
            }
            Op::TransposeLast2(a) => {
                if self.req(*a) {
                    let sh = node.value.shape();
                    let (m, n) = (sh[sh.len() - 2], sh[sh.len() - 1]);
                    out.push((*a, transpose_blocks(g, m, n)));
                }
            }
            Op::Reshape(a) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
            }
            Op::Concat(parts) => {
                let total = last_dim(node.value.shape());
                let mut offset = 0;
                for &p in parts {
                    let w = last_dim(val(p).shape());
                    if self.req(p) {
                        let mut d = Vec::with_capacity(val(p).numel());
                        for row in g.chunks_exact(total) {
                            d.extend_from_slice(&row[offset..offset + w]);
                        }
                        out.push((p, d));
                    }
                    offset += w;
                }
            }
            Op::MeanLast(a) => {
                if self.req(*a) {
                    let n = last_dim(val(*a).shape());
                    let inv = S::one() / S::of(n as f64);
                    let mut d = Vec::with_capacity(val(*a).numel());
                    for &gi in g {
                        d.extend(std::iter::repeat_n(gi * inv, n));
                    }
                    out.push((*a, d));
                }
            }
            Op::VarLast(a) => {
                if self.req(*a) {
                    let n = last_dim(val(*a).shape());
                    let inv = S::one() / S::of(n as f64);
                    let two_inv = S::of(2.0) * inv;
                    let mut d = Vec::with_capacity(val(*a).numel());
                    for (row, &gi) in val(*a).data().chunks_exact(n).zip(g) {
                        let mean = row.iter().copied().sum::<S>() * inv;
                        d.extend(row.iter().map(|&x| gi * two_inv * (x - mean)));
                    }
                    out.push((*a, d));
                }
            }
            Op::Standardize { x, inv_std } => {
                if self.req(*x) {
                    let n = last_dim(node.value.shape());
                    let inv_n = S::one() / S::of(n as f64);
                    let mut d = Vec::with_capacity(node.value.numel());
                    for ((yr, gr), &is) in node
                        .value
                        .data()
                        .chunks_exact(n)
                        .zip(g.chunks_exact(n))
                        .zip(inv_std)
                    {
                        let g_mean = gr.iter().copied().sum::<S>() * inv_n;
                        let gy_mean = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() * inv_n;
                        d.extend(yr.iter().zip(gr).map(|(&y, &gi)| is * (gi - g_mean - y * gy_mean)));
                    }
                    out.push((*x, d));
                }
            }
            Op::Gelu(a) => {
                if self.req(*a) {
                    let inv_sqrt2 = S::of(std::f64::consts::FRAC_1_SQRT_2);
                    let half = S::of(0.5);
                    let d = val(*a)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| {
                            let cdf = half * (S::one() + (x * inv_sqrt2).erf());
                            let pdf = S::of(std_normal_pdf(x.as_f64()));
                            gi * (cdf + x * pdf)
                        })
                        .collect();
                    out.push((*a, d));
                }
            }
            Op::Softmax(a) => {
                if self.req(*a) {
                    let n = last_dim(node.value.shape());
                    let mut d = Vec::with_capacity(node.value.numel());
                    for (yr, gr) in node.value.data().chunks_exact(n).zip(g.chunks_exact(n)) {
                        let dot: S = yr.iter().zip(gr).map(|(&y, &gi)| y * gi).sum();
                        d.extend(yr.iter().zip(gr).map(|(&y, &gi)| y * (gi - dot)));
                    }
                    out.push((*a, d));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.req(*logits) {
                    let classes = last_dim(val(*logits).shape());
                    let scale = g[0] / S::of(targets.len().max(1) as f64);
                    let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * classes + t] -= scale;
                    }
                    out.push((*logits, d));
                }
            }
            Op::Sum(a) => {
                if self.req(*a) {
                    out.push((*a, vec![g[0]; val(*a).numel()]));
                }
            }
            Op::Mean(a) => {
                if self.req(*a) {
                    let n = val(*a).numel();
                    out.push((*a, vec![g[0] / S::of(n.max(1) as f64); n]));
                }
            }
            Op::Dropout { x, mask } => {
                if self.req(*x) {
                    out.push((*x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect()));
                }
            }
            Op::Map { x, df } => {
                if self.req(*x) {
                    let d = val(*x).data().iter().zip(g).map(|(&v, &gi)| gi * df(v)).collect();
                    out.push((*x, d));
                }
            }
        }
        out
    }
}
