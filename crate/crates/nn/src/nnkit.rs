//! A small reverse-mode autodiff tape over dense f64 tensors.
//!
//! Every op records its inputs on the tape; [`Tape::backward`] walks the tape
//! in reverse and accumulates gradients. Only the ops a small causal
//! transformer needs are provided.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddTiled(Var, Var),
    Act {
        x: Var,
        /// Elementwise derivative saved by the forward pass.
        slope: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
        alpha: f64,
    },
    Softmax {
        x: Var,
        causal: bool,
    },
    Scale(Var, f64),
    Mul(Var, Var),
    Sum(Var),
    CrossEntropyBits {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of the loss with respect to the leaf `v` (zeros if `v` did
    /// not influence the loss). Intermediate gradients are not retained.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor { shape, data: g.clone() },
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(data) => Tensor { shape, data },
            None => Tensor::zeros(shape),
        }
    }
}

/// `C = A·B + beta·C` with A logically `m×k` and B logically `k×n`; either
/// may be stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    gemm_scaled(m, k, n, 1.0, a, a_t, b, b_t, c, beta);
}

/// `C = alpha·A·B + beta·C`.
#[allow(clippy::too_many_arguments)]
fn gemm_scaled(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the logical shapes and strides above, and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

// libm's tanh is several times slower than exp here.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

/// GELU (tanh approximation) and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    let t = fast_tanh(GELU_C * (x + GELU_K * x * x * x));
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    (y, dy)
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !all_finite(&value.data) {
            return Err(NnError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn dims3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            &[g, r, c] => Ok((g, r, c)),
            s => Err(shape_err(op, format!("expected a rank-3 tensor, got shape {s:?}"))),
        }
    }

    fn vec_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            &[n] => Ok(n),
            s => Err(shape_err(op, format!("expected a vector, got shape {s:?}"))),
        }
    }

    /// `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2("matmul", a)?;
        let (k2, m) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dims {k} and {k2} differ")));
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            &self.value(a).data,
            false,
            &self.value(b).data,
            false,
            &mut out,
            0.0,
        );
        self.push(
            "matmul",
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::MatMul(a, b),
        )
    }

    /// `x·w + b` for `x: [n,k]`, `w: [k,m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2("linear", x)?;
        let (k2, m) = self.dims2("linear", w)?;
        if k != k2 {
            return Err(shape_err("linear", format!("inner dims {k} and {k2} differ")));
        }
        if self.vec_len("linear", b)? != m {
            return Err(shape_err("linear", format!("bias length must be {m}")));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(&self.value(b).data);
        }
        gemm(
            n,
            k,
            m,
            &self.value(x).data,
            false,
            &self.value(w).data,
            false,
            &mut out,
            1.0,
        );
        self.push(
            "linear",
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::Linear(x, w, b),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor { shape, data }, Op::Add(a, b))
    }

    /// Adds a length-`m` vector to every row of an `[n,m]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2("add_bias", x)?;
        if self.vec_len("add_bias", b)? != m {
            return Err(shape_err("add_bias", format!("bias length must be {m}")));
        }
        let bias = &self.value(b).data;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_exact_mut(m) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        self.push(
            "add_bias",
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::AddBias(x, b),
        )
    }

    /// `x[r] + p[r mod t]` for `x: [r,m]`, `p: [t,m]`, `t` dividing `r`.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Result<Var> {
        let (r, m) = self.dims2("add_tiled", x)?;
        let (t, m2) = self.dims2("add_tiled", p)?;
        if m != m2 || t == 0 || r % t != 0 {
            return Err(shape_err("add_tiled", format!("[{r},{m}] cannot tile [{t},{m2}]")));
        }
        let pd = &self.value(p).data;
        let mut data = self.value(x).data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += pd[i % (t * m)];
        }
        self.push(
            "add_tiled",
            Tensor {
                shape: vec![r, m],
                data,
            },
            Op::AddTiled(x, p),
        )
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let f: fn(f64) -> (f64, f64) = match act {
            Activation::Gelu => gelu,
            Activation::Relu => |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) },
        };
        let (data, slope) = self.value(x).data.iter().map(|&v| f(v)).unzip();
        let shape = self.shape(x).to_vec();
        self.push("activation", Tensor { shape, data }, Op::Act { x, slope })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Row-wise normalisation to zero mean and unit variance, then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.dims2("layer_norm", x)?;
        if self.vec_len("layer_norm", gamma)? != m || self.vec_len("layer_norm", beta)? != m {
            return Err(shape_err("layer_norm", format!("gamma and beta must have length {m}")));
        }
        let xd = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &xd[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..m {
                let h = (row[j] - mean) * r;
                xhat[i * m + j] = h;
                out[i * m + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Gathers rows of `table: [v,m]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, m) = self.dims2("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding", format!("id {bad} outside table of {v} rows")));
        }
        let td = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * m);
        for &i in ids {
            data.extend_from_slice(&td[i * m..(i + 1) * m]);
        }
        self.push(
            "embedding",
            Tensor {
                shape: vec![ids.len(), m],
                data,
            },
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// `[batch*seq, heads*dh] -> [batch*heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (r, c) = self.dims2("split_heads", x)?;
        if r != batch * seq || heads == 0 || c % heads != 0 {
            return Err(shape_err(
                "split_heads",
                format!("[{r},{c}] is not [{batch}*{seq}, {heads}*dh]"),
            ));
        }
        let dh = c / heads;
        let xd = &self.value(x).data;
        let mut out = vec![0.0; r * c];
        for b in 0..batch {
            for t in 0..seq {
                let src = &xd[(b * seq + t) * c..(b * seq + t + 1) * c];
                for h in 0..heads {
                    let dst = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&src[h * dh..(h + 1) * dh]);
                }
            }
        }
        self.push(
            "split_heads",
            Tensor {
                shape: vec![batch * heads, seq, dh],
                data: out,
            },
            Op::SplitHeads { x, batch, seq, heads },
        )
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (g, t, dh) = self.dims3("merge_heads", x)?;
        if g != batch * heads || t != seq {
            return Err(shape_err(
                "merge_heads",
                format!("[{g},{t},{dh}] is not [{batch}*{heads}, {seq}, dh]"),
            ));
        }
        let c = heads * dh;
        let xd = &self.value(x).data;
        let mut out = vec![0.0; batch * seq * c];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let src = ((b * heads + h) * seq + t) * dh;
                    let dst = (b * seq + t) * c + h * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        self.push(
            "merge_heads",
            Tensor {
                shape: vec![batch * seq, c],
                data: out,
            },
            Op::MergeHeads { x, batch, seq, heads },
        )
    }

    /// Batched matmul `[g,n,k] x [g,k,m] -> [g,n,m]`; with `trans_b`, `b` is
    /// `[g,m,k]` and is used transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        self.bmm_scaled(a, b, trans_b, 1.0)
    }

    /// [`Tape::bmm`] with the product multiplied by `alpha`.
    pub fn bmm_scaled(&mut self, a: Var, b: Var, trans_b: bool, alpha: f64) -> Result<Var> {
        let (g, n, k) = self.dims3("bmm", a)?;
        let (g2, b1, b2) = self.dims3("bmm", b)?;
        let (kb, m) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || k != kb {
            return Err(shape_err(
                "bmm",
                format!(
                    "[{g},{n},{k}] incompatible with {:?} (trans_b={trans_b})",
                    self.shape(b)
                ),
            ));
        }
        let ad = &self.value(a).data;
        let bd = &self.value(b).data;
        let mut out = vec![0.0; g * n * m];
        for i in 0..g {
            gemm_scaled(
                n,
                k,
                m,
                alpha,
                &ad[i * n * k..(i + 1) * n * k],
                false,
                &bd[i * k * m..(i + 1) * k * m],
                trans_b,
                &mut out[i * n * m..(i + 1) * n * m],
                0.0,
            );
        }
        self.push(
            "bmm",
            Tensor {
                shape: vec![g, n, m],
                data: out,
            },
            Op::Bmm { a, b, trans_b, alpha },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().ok_or_else(|| shape_err("softmax", "empty shape".into()))?;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_exact_mut(m) {
            softmax_in_place(row);
        }
        self.push("softmax", Tensor { shape, data }, Op::Softmax { x, causal: false })
    }

    /// Softmax over the last axis of `[g,t,t]` scores where query `i` only
    /// sees keys `0..=i`; masked weights are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (g, t, t2) = self.dims3("causal_softmax", x)?;
        if t != t2 {
            return Err(shape_err(
                "causal_softmax",
                format!("scores must be square, got [{t},{t2}]"),
            ));
        }
        let mut data = self.value(x).data.clone();
        for (r, row) in data.chunks_exact_mut(t).enumerate() {
            let i = r % t;
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(0.0);
        }
        self.push(
            "causal_softmax",
            Tensor {
                shape: vec![g, t, t],
                data,
            },
            Op::Softmax { x, causal: true },
        )
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let data = self.value(x).data.iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", Tensor { shape, data }, Op::Scale(x, s))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor { shape, data }, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean cross-entropy in bits over the rows where `mask` is true.
    pub fn cross_entropy_bits(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (n, v) = self.dims2("cross_entropy_bits", logits)?;
        if targets.len() != n || mask.len() != n {
            return Err(shape_err(
                "cross_entropy_bits",
                format!("{n} rows but {} targets and {} mask entries", targets.len(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NnError::Parameter("cross-entropy mask selects no rows".into()));
        }
        let ld = &self.value(logits).data;
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            if targets[i] >= v {
                return Err(shape_err(
                    "cross_entropy_bits",
                    format!("target {} outside vocabulary of {v}", targets[i]),
                ));
            }
            let row = &mut probs[i * v..(i + 1) * v];
            row.copy_from_slice(&ld[i * v..(i + 1) * v]);
            let lse = log_sum_exp(row);
            total += lse - row[targets[i]];
            for p in row.iter_mut() {
                *p = (*p - lse).exp();
            }
        }
        let loss = total / count as f64 / std::f64::consts::LN_2;
        self.push(
            "cross_entropy_bits",
            Tensor::scalar(loss),
            Op::CrossEntropyBits {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must have one element, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !all_finite(&g) {
                return Err(NnError::NonFinite { op: node.op_name() });
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
            } else {
                self.backprop(node, &g, &mut grads);
            }
        }
        Ok(Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // `f(buf, fresh)`: `fresh` means `buf` was just zero-filled.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64], bool)| match &mut grads[v.0] {
            Some(buf) => f(buf, false),
            slot @ None => {
                let buf = slot.insert(vec![0.0; self.nodes[v.0].value.data.len()]);
                f(buf, true)
            }
        };
        let beta = |fresh: bool| if fresh { 0.0 } else { 1.0 };
        let pass = |d: &mut [f64], fresh: bool| {
            if fresh {
                d.copy_from_slice(g);
            } else {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        };
        let col_sum = |d: &mut [f64]| {
            for row in g.chunks_exact(d.len()) {
                d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) | &Op::Linear(a, b, _) => {
                let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[1];
                let (ad, bd) = (&self.value(a).data, &self.value(b).data);
                acc(a, &mut |da, fresh| gemm(n, m, k, g, false, bd, true, da, beta(fresh)));
                acc(b, &mut |db, fresh| gemm(k, n, m, ad, true, g, false, db, beta(fresh)));
                if let &Op::Linear(_, _, bias) = &node.op {
                    acc(bias, &mut |d, _| col_sum(d));
                }
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d, fresh| pass(d, fresh));
                acc(b, &mut |d, fresh| pass(d, fresh));
            }
            &Op::AddBias(x, b) | &Op::AddTiled(x, b) => {
                acc(x, &mut |d, fresh| pass(d, fresh));
                acc(b, &mut |d, _| col_sum(d));
            }
            Op::Act { x, slope } => {
                acc(*x, &mut |d, _| {
                    for ((dv, s), gv) in d.iter_mut().zip(slope).zip(g) {
                        *dv += gv * s;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let m = self.shape(*gamma)[0];
                let gd = &self.value(*gamma).data;
                acc(*gamma, &mut |d, _| {
                    for (grow, hrow) in g.chunks_exact(m).zip(xhat.chunks_exact(m)) {
                        for j in 0..m {
                            d[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*beta, &mut |d, _| col_sum(d));
                acc(*x, &mut |d, _| {
                    let mut dh = vec![0.0; m];
                    for (i, (grow, hrow)) in g.chunks_exact(m).zip(xhat.chunks_exact(m)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..m {
                            dh[j] = grow[j] * gd[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hrow[j];
                        }
                        mean_dh /= m as f64;
                        mean_dh_h /= m as f64;
                        let drow = &mut d[i * m..(i + 1) * m];
                        for j in 0..m {
                            drow[j] += rstd[i] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let m = self.shape(*table)[1];
                acc(*table, &mut |d, _| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * m..(r + 1) * m];
                        d[id * m..(id + 1) * m].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    }
                });
            }
            &Op::SplitHeads { x, batch, seq, heads } | &Op::MergeHeads { x, batch, seq, heads } => {
                let split = matches!(node.op, Op::SplitHeads { .. });
                let dh = if split {
                    self.shape(x)[1] / heads
                } else {
                    self.shape(x)[2]
                };
                let c = heads * dh;
                acc(x, &mut |d, _| {
                    for b in 0..batch {
                        for t in 0..seq {
                            for h in 0..heads {
                                let headed = ((b * heads + h) * seq + t) * dh;
                                let flat = (b * seq + t) * c + h * dh;
                                let (dst, src) = if split { (flat, headed) } else { (headed, flat) };
                                for j in 0..dh {
                                    d[dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                });
            }
            &Op::Bmm { a, b, trans_b, alpha } => {
                let (gs, n, k) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let m = if trans_b { self.shape(b)[1] } else { self.shape(b)[2] };
                let (ad, bd) = (&self.value(a).data, &self.value(b).data);
                acc(a, &mut |da, fresh| {
                    for i in 0..gs {
                        let gi = &g[i * n * m..(i + 1) * n * m];
                        let bi = &bd[i * k * m..(i + 1) * k * m];
                        // dA = alpha·dC·Bᵀ where B is logically k×m.
                        let dai = &mut da[i * n * k..(i + 1) * n * k];
                        gemm_scaled(n, m, k, alpha, gi, false, bi, !trans_b, dai, beta(fresh));
                    }
                });
                acc(b, &mut |db, fresh| {
                    for i in 0..gs {
                        let gi = &g[i * n * m..(i + 1) * n * m];
                        let ai = &ad[i * n * k..(i + 1) * n * k];
                        let dbi = &mut db[i * k * m..(i + 1) * k * m];
                        if trans_b {
                            gemm_scaled(m, n, k, alpha, gi, true, ai, false, dbi, beta(fresh));
                        } else {
                            gemm_scaled(k, n, m, alpha, ai, true, gi, false, dbi, beta(fresh));
                        }
                    }
                });
            }
            &Op::Softmax { x, causal } => {
                let y = &node.value.data;
                let m = *node.value.shape.last().expect("nonempty shape");
                acc(x, &mut |d, _| {
                    let rows = d.chunks_exact_mut(m).zip(y.chunks_exact(m)).zip(g.chunks_exact(m));
                    for (r, ((drow, yrow), grow)) in rows.enumerate() {
                        // Masked weights are zero and contribute nothing.
                        let w = if causal { r % m + 1 } else { m };
                        let dot: f64 = yrow[..w].iter().zip(&grow[..w]).map(|(a, b)| a * b).sum();
                        for j in 0..w {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            &Op::Scale(x, s) => {
                acc(x, &mut |d, _| d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (&self.value(a).data, &self.value(b).data);
                acc(a, &mut |d, _| {
                    for ((x, gv), bv) in d.iter_mut().zip(g).zip(bd) {
                        *x += gv * bv;
                    }
                });
                acc(b, &mut |d, _| {
                    for ((x, gv), av) in d.iter_mut().zip(g).zip(ad) {
                        *x += gv * av;
                    }
                });
            }
            &Op::Sum(x) => {
                acc(x, &mut |d, _| d.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::CrossEntropyBits {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let v = self.shape(*logits)[1];
                let coef = g[0] / (*count as f64 * std::f64::consts::LN_2);
                acc(*logits, &mut |d, _| {
                    for (i, &m) in mask.iter().enumerate() {
                        if !m {
                            continue;
                        }
                        let drow = &mut d[i * v..(i + 1) * v];
                        let prow = &probs[i * v..(i + 1) * v];
                        for j in 0..v {
                            drow[j] += coef * prow[j];
                        }
                        drow[targets[i]] -= coef;
                    }
                });
            }
        }
    }
}

impl Node {
    fn op_name(&self) -> &'static str {
        match self.op {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::AddTiled(..) => "add_tiled",
            Op::Act { .. } => "activation",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::Bmm { .. } => "bmm",
            Op::Softmax { .. } => "softmax",
            Op::Scale(..) => "scale",
            Op::Mul(..) => "mul",
            Op::Sum(..) => "sum",
            Op::CrossEntropyBits { .. } => "cross_entropy_bits",
        }
    }
}

/// `x * 0` is NaN exactly for infinite or NaN `x`; eight independent lanes
/// let this vectorise.
fn all_finite(v: &[f64]) -> bool {
    let mut lanes = [0.0f64; 8];
    let chunks = v.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            lanes[i] += c[i] * 0.0;
        }
    }
    lanes.iter().chain(tail).all(|x| x.is_finite())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_forward_and_backward() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.leaf(t(&[3, 2], &[1., 0., 0., 1., 1., 1.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4., 5., 10., 11.]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        // d(sum)/dA = 1·Bᵀ row sums.
        assert_eq!(g.get(a).data(), &[1., 1., 2., 1., 1., 2.]);
        assert_eq!(g.get(b).data(), &[5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, NnError::Shape { op: "matmul", .. }));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3, 3], &[0., 5., 5., 1., 1., 9., 0., 0., 0.]));
        let y = tape.causal_softmax(x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..3], &[1.0, 0.0, 0.0]);
        assert!((v[3] - 0.5).abs() < 1e-15 && (v[4] - 0.5).abs() < 1e-15 && v[5] == 0.0);
        assert!(v[6..].iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 4], &[1., 2., 3., 4., -3., 0., 10., 2.]));
        let g = tape.leaf(Tensor::filled(vec![4], 1.0));
        let b = tape.leaf(Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(vec![3, 50]));
        let loss = tape.cross_entropy_bits(l, &[1, 2, 3], &[true, false, true]).unwrap();
        assert!((tape.value(loss).item() - 50f64.log2()).abs() < 1e-12);
        assert!(tape.cross_entropy_bits(l, &[1, 2, 3], &[false; 3]).is_err());
    }

    #[test]
    fn split_and_merge_heads_roundtrip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = tape.leaf(t(&[6, 4], &data));
        let s = tape.split_heads(x, 2, 3, 2).unwrap();
        assert_eq!(tape.shape(s), &[4, 3, 2]);
        // Batch 0, head 1, time 0 holds columns 2..4 of row 0.
        assert_eq!(&tape.value(s).data()[6..8], &[2.0, 3.0]);
        let m = tape.merge_heads(s, 2, 3, 2).unwrap();
        assert_eq!(tape.value(m).data(), &data[..]);
    }

    #[test]
    fn non_finite_output_names_op() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[f64::MAX]));
        let err = tape.scale(x, 10.0).unwrap_err();
        assert_eq!(err, NnError::NonFinite { op: "scale" });
    }

    #[test]
    fn unused_leaf_has_zero_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1., 2.]));
        let b = tape.leaf(t(&[2], &[3., 4.]));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).data(), &[0.0, 0.0]);
    }
}
