use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{matmul_at_into, matmul_bt_into};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Tanh,
    Square,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Normalize(Var, f64),
    Sum(Var),
    RowNorm(Var),
    RowCosine(Var, Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RepeatRow(Var),
    Reshape(Var),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        states: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, which
/// is a topological order, so the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Accumulated adjoints from one backward pass.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient with respect to `v`; zeros when `v` is not on a path to the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn act(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Silu => x * sigmoid(x),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Tanh => x.tanh(),
        Unary::Square => x * x,
    }
}

/// Derivative of the activation given input `x` and output `y`.
fn act_grad(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Tanh => 1.0 - y * y,
        Unary::Square => 2.0 * x,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn conv_out(n: usize, k: usize, stride: usize) -> usize {
    (n - k) / stride + 1
}

impl Graph {
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
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Differentiable leaf that is not backed by a stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated requests return the same node so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    fn row_broadcast(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (r, c) = self.dims2(a)?;
        let rv = self.value(row);
        if rv.len() != c {
            return Err(Error::Dimension(format!(
                "row broadcast: {:?} against rows of width {c}",
                rv.shape()
            )));
        }
        let x = self.value(a).data();
        let w = rv.data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(x[i * c + j], w[j]));
            }
        }
        Tensor::matrix(r, c, out)
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast(a, row, |x, w| x + w)?;
        let ng = self.ng(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// Multiplies every row of an `r×c` matrix elementwise by a length-`c` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast(a, row, |x, w| x * w)?;
        let ng = self.ng(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let ng = self.ng(&[a]);
        self.push(value, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let value = self.value(a).map(|x| act(kind, x));
        let ng = self.ng(&[a]);
        self.push(value, Op::Unary(a, kind), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Elementwise clamp; the gradient passes only where the input is inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(&[a]);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), ng))
    }

    /// Row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Normalize(a, eps), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of every row, as an `r×1` column. The gradient of a zero
    /// row is taken to be zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let out = (0..r)
            .map(|i| {
                x[i * c..(i + 1) * c]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let value = Tensor::matrix(r, 1, out)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::RowNorm(a), ng))
    }

    /// Cosine similarity of matching rows, as an `r×1` column. A row pair in
    /// which either vector has zero length has similarity 1 and no gradient.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_cosine")?;
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let y = self.value(b).data();
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let (xr, yr) = (&x[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
            let nx = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = yr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                out.push(1.0);
            } else {
                let dot: f64 = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
                out.push(dot / (nx * ny));
            }
        }
        let value = Tensor::matrix(r, 1, out)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::RowCosine(a, b), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_rows(start, end)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if start > end || end > c {
            return Err(Error::Dimension(format!(
                "column range {start}..{end} out of bounds for {c} columns"
            )));
        }
        let x = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        let value = Tensor::matrix(r, w, out)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.dims2(*p)?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::Dimension(format!(
                    "concat_cols: row counts differ ({} vs {r})",
                    rows.unwrap_or(0)
                )));
            }
            widths.push(c);
        }
        let r = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::matrix(r, total, out)?;
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Tiles a single row (any tensor of `c` values) into an `n×c` matrix.
    pub fn repeat_row(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a).data().to_vec();
        let c = x.len();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&x);
        }
        let value = Tensor::matrix(n, c, out).expect("tile shape");
        let ng = self.ng(&[a]);
        self.push(value, Op::RepeatRow(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Valid 3-D convolution. `input` is `[c_in, d, h, w]`, `kernel` is
    /// `[c_out, c_in, k, k, k]`, `bias` holds `c_out` values.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Dimension("conv3d stride must be at least 1".into()));
        }
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let (ci, d, h, w) = match xs.as_slice() {
            [c, d, h, w] => (*c, *d, *h, *w),
            s => {
                return Err(Error::Dimension(format!(
                    "conv3d input must be 4-D, got {s:?}"
                )))
            }
        };
        let (co, k) = match ks.as_slice() {
            [co, kc, k1, k2, k3] if *kc == ci && k1 == k2 && k2 == k3 => (*co, *k1),
            s => {
                return Err(Error::Dimension(format!(
                    "conv3d kernel {s:?} incompatible with input {xs:?}"
                )))
            }
        };
        if k > d || k > h || k > w || k == 0 {
            return Err(Error::Dimension(format!(
                "conv3d kernel {ks:?} larger than grid {xs:?}"
            )));
        }
        if self.value(bias).len() != co {
            return Err(Error::Dimension(format!(
                "conv3d bias {:?} does not match {co} output channels",
                self.shape(bias)
            )));
        }
        let (od, oh, ow) = (
            conv_out(d, k, stride),
            conv_out(h, k, stride),
            conv_out(w, k, stride),
        );
        let x = self.value(input).data();
        let kw = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; co * od * oh * ow];
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for i in 0..k {
                                for j in 0..k {
                                    let xbase = ((c * d + z * stride + i) * h + y * stride + j) * w
                                        + xx * stride;
                                    let kbase = (((o * ci + c) * k + i) * k + j) * k;
                                    for l in 0..k {
                                        acc += x[xbase + l] * kw[kbase + l];
                                    }
                                }
                            }
                        }
                        out[((o * od + z) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![co, od, oh, ow], out)?;
        let ng = self.ng(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
            },
            ng,
        ))
    }

    /// Diagonal selective state-space scan over `T` steps and `F` channels with
    /// `N` states per channel:
    ///
    /// `h_t = exp(delta_t * a) * h_{t-1} + delta_t * b_t * u_t`, `y_t = c_t · h_t + d * u_t`, `h_0 = 0`.
    ///
    /// Shapes: `u`, `delta` are `T×F`; `a` is `F×N`; `b`, `c` are `T×N`; `d` holds `F` values.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
    ) -> Result<Var> {
        let (t_len, f) = self.dims2(u)?;
        let (f2, n) = self.dims2(a)?;
        let bad = self.dims2(delta)? != (t_len, f)
            || f2 != f
            || self.dims2(b)? != (t_len, n)
            || self.dims2(c)? != (t_len, n)
            || self.value(d).len() != f;
        if bad {
            return Err(Error::Dimension(format!(
                "selective_scan shapes: u {:?}, delta {:?}, a {:?}, b {:?}, c {:?}, d {:?}",
                self.shape(u),
                self.shape(delta),
                self.shape(a),
                self.shape(b),
                self.shape(c),
                self.shape(d)
            )));
        }
        let (uv, dv, av) = (
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a).data(),
        );
        let (bv, cv, skip) = (
            self.value(b).data(),
            self.value(c).data(),
            self.value(d).data(),
        );
        let mut states = vec![0.0; t_len * f * n];
        let mut y = vec![0.0; t_len * f];
        for t in 0..t_len {
            for ch in 0..f {
                let dt = dv[t * f + ch];
                let ut = uv[t * f + ch];
                let mut acc = skip[ch] * ut;
                for s in 0..n {
                    let prev = if t == 0 {
                        0.0
                    } else {
                        states[((t - 1) * f + ch) * n + s]
                    };
                    let h = (dt * av[ch * n + s]).exp() * prev + dt * bv[t * n + s] * ut;
                    states[(t * f + ch) * n + s] = h;
                    acc += cv[t * n + s] * h;
                }
                y[t * f + ch] = acc;
            }
        }
        let value = Tensor::matrix(t_len, f, y)?;
        let ng = self.ng(&[u, delta, a, b, c, d]);
        Ok(self.push(
            value,
            Op::SelectiveScan {
                u,
                delta,
                a,
                b,
                c,
                d,
                states,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backward_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Grads { grads, shapes })
    }

    /// Gradients for every parameter leaf recorded on this graph, by name.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(name, v)| (name.clone(), grads.wrt(*v)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(*a).expect("2-D");
                let m = node.value.cols();
                if wants(*a) {
                    let ga = slot(grads, *a, n * k);
                    matmul_bt_into(g, val(*b), ga, n, m, k);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * m);
                    matmul_at_into(val(*a), g, gb, n, k, m);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a).expect("2-D");
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v) {
                        add_into(slot(grads, *v, g.len()), g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if wants(*b) {
                    add_into(slot(grads, *b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(a, row) => {
                let c = self.nodes[row.0].value.len();
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if wants(*row) {
                    let gr = slot(grads, *row, c);
                    for (i, gv) in g.iter().enumerate() {
                        gr[i % c] += gv;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let c = self.nodes[row.0].value.len();
                let (av, rv) = (val(*a), val(*row));
                if wants(*a) {
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * rv[i % c];
                    }
                }
                if wants(*row) {
                    let gr = slot(grads, *row, c);
                    for i in 0..g.len() {
                        gr[i % c] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, k) => add_into(slot(grads, *a, g.len()), g, *k),
            Op::AddScalar(a) | Op::Reshape(a) => add_into(slot(grads, *a, g.len()), g, 1.0),
            Op::Unary(a, kind) => {
                let (x, y) = (val(*a), node.value.data());
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * act_grad(*kind, x[i], y[i]);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if x[i] >= *lo && x[i] <= *hi {
                        ga[i] += g[i];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = node.value.dims2().expect("2-D");
                let y = node.value.data();
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Normalize(a, eps) => {
                let (r, c) = node.value.dims2().expect("2-D");
                let (x, y) = (val(*a), node.value.data());
                let ga = slot(grads, *a, r * c);
                let cf = c as f64;
                for i in 0..r {
                    let xr = &x[i * c..(i + 1) * c];
                    let mean = xr.iter().sum::<f64>() / cf;
                    let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let gmean = gr.iter().sum::<f64>() / cf;
                    let gy: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / cf;
                    for j in 0..c {
                        ga[i * c + j] += inv * (gr[j] - gmean - yr[j] * gy);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                let ga = slot(grads, *a, n);
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }
            Op::RowNorm(a) => {
                let (r, c) = self.dims2(*a).expect("2-D");
                let (x, y) = (val(*a), node.value.data());
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    if y[i] > 0.0 {
                        for j in 0..c {
                            ga[i * c + j] += g[i] * x[i * c + j] / y[i];
                        }
                    }
                }
            }
            Op::RowCosine(a, b) => {
                let (r, c) = self.dims2(*a).expect("2-D");
                let (x, z) = (val(*a), val(*b));
                let mut gx = vec![0.0; r * c];
                let mut gz = vec![0.0; r * c];
                for i in 0..r {
                    let (xr, zr) = (&x[i * c..(i + 1) * c], &z[i * c..(i + 1) * c]);
                    let nx = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nz = zr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nx == 0.0 || nz == 0.0 {
                        continue;
                    }
                    let cos = node.value.data()[i];
                    for j in 0..c {
                        gx[i * c + j] = g[i] * (zr[j] / (nx * nz) - cos * xr[j] / (nx * nx));
                        gz[i * c + j] = g[i] * (xr[j] / (nx * nz) - cos * zr[j] / (nz * nz));
                    }
                }
                if wants(*a) {
                    add_into(slot(grads, *a, r * c), &gx, 1.0);
                }
                if wants(*b) {
                    add_into(slot(grads, *b, r * c), &gz, 1.0);
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.value.cols();
                let n = self.nodes[a.0].value.len();
                let ga = slot(grads, *a, n);
                add_into(&mut ga[start * c..start * c + g.len()], g, 1.0);
            }
            Op::SliceCols(a, start) => {
                let (r, w) = node.value.dims2().expect("2-D");
                let c = self.nodes[a.0].value.cols();
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..w {
                        ga[i * c + start + j] += g[i * w + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    if wants(*p) {
                        add_into(slot(grads, *p, n), &g[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2().expect("2-D");
                let mut col = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if wants(*p) {
                        let gp = slot(grads, *p, r * w);
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + col + j];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::RepeatRow(a) => {
                let c = self.nodes[a.0].value.len();
                let ga = slot(grads, *a, c);
                for (i, gv) in g.iter().enumerate() {
                    ga[i % c] += gv;
                }
            }
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
            } => self.conv3d_backward(node, g, grads, *input, *kernel, *bias, *stride),
            Op::SelectiveScan {
                u,
                delta,
                a,
                b,
                c,
                d,
                states,
            } => self.scan_backward(g, grads, [*u, *delta, *a, *b, *c, *d], states),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv3d_backward(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    ) {
        let xs = self.shape(input);
        let (ci, d, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ks = self.shape(kernel);
        let (co, k) = (ks[0], ks[2]);
        let os = node.value.shape();
        let (od, oh, ow) = (os[1], os[2], os[3]);
        let x = self.value(input).data();
        let kw = self.value(kernel).data();
        let mut gx = vec![0.0; x.len()];
        let mut gk = vec![0.0; kw.len()];
        let mut gb = vec![0.0; co];
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let go = g[((o * od + z) * oh + y) * ow + xx];
                        if go == 0.0 {
                            continue;
                        }
                        gb[o] += go;
                        for c in 0..ci {
                            for i in 0..k {
                                for j in 0..k {
                                    let xbase = ((c * d + z * stride + i) * h + y * stride + j) * w
                                        + xx * stride;
                                    let kbase = (((o * ci + c) * k + i) * k + j) * k;
                                    for l in 0..k {
                                        gk[kbase + l] += go * x[xbase + l];
                                        gx[xbase + l] += go * kw[kbase + l];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for (v, gv) in [(input, gx), (kernel, gk), (bias, gb)] {
            if self.nodes[v.0].needs_grad {
                let n = gv.len();
                add_into(slot(grads, v, n), &gv, 1.0);
            }
        }
    }

    fn scan_backward(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        vars: [Var; 6],
        states: &[f64],
    ) {
        let [u, delta, a, b, c, d] = vars;
        let (t_len, f) = self.dims2(u).expect("2-D");
        let n = self.dims2(a).expect("2-D").1;
        let (uv, dv, av) = (
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a).data(),
        );
        let (bv, cv, skip) = (
            self.value(b).data(),
            self.value(c).data(),
            self.value(d).data(),
        );
        let mut gu = vec![0.0; t_len * f];
        let mut gdelta = vec![0.0; t_len * f];
        let mut ga = vec![0.0; f * n];
        let mut gb = vec![0.0; t_len * n];
        let mut gc = vec![0.0; t_len * n];
        let mut gd = vec![0.0; f];
        // carry[ch, s] holds dL/dh_{t} contributions arriving from step t+1.
        let mut carry = vec![0.0; f * n];
        for t in (0..t_len).rev() {
            for ch in 0..f {
                let gy = g[t * f + ch];
                let ut = uv[t * f + ch];
                let dt = dv[t * f + ch];
                gd[ch] += gy * ut;
                gu[t * f + ch] += gy * skip[ch];
                for s in 0..n {
                    let h = states[(t * f + ch) * n + s];
                    gc[t * n + s] += gy * h;
                    let gh = gy * cv[t * n + s] + carry[ch * n + s];
                    let prev = if t == 0 {
                        0.0
                    } else {
                        states[((t - 1) * f + ch) * n + s]
                    };
                    let decay = (dt * av[ch * n + s]).exp();
                    let gdecay = gh * prev * decay;
                    gdelta[t * f + ch] += gdecay * av[ch * n + s] + gh * bv[t * n + s] * ut;
                    ga[ch * n + s] += gdecay * dt;
                    gb[t * n + s] += gh * dt * ut;
                    gu[t * f + ch] += gh * dt * bv[t * n + s];
                    carry[ch * n + s] = gh * decay;
                }
            }
        }
        for (v, gv) in [(u, gu), (delta, gdelta), (a, ga), (b, gb), (c, gc), (d, gd)] {
            if self.nodes[v.0].needs_grad {
                let len = gv.len();
                add_into(slot(grads, v, len), &gv, 1.0);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}
