//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! Tensors are flat row-major buffers behind shared handles. A [`Tape`]
//! records every differentiable operation whose inputs require gradients;
//! [`Tape::backward`] replays the records in reverse, accumulating into each
//! parameter's `grad` buffer. Gradient accumulation is additive; callers
//! zero grads between optimizer steps.
//!
//! Everything runs single-threaded over one tape with a fixed reduction
//! order, so identical seeds and inputs give bitwise-identical results.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

const GELU_COEF: f64 = 0.044715;

struct TensorData {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Shared handle to an n-dimensional f64 array. Cloning a `Tensor` clones
/// the handle, not the storage.
#[derive(Clone)]
pub struct Tensor(Rc<RefCell<TensorData>>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.0.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, numel={})",
            d.shape,
            d.requires_grad,
            d.data.len()
        )
    }
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} must be non-empty with positive dims"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != data_len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} implies {numel} elements, got {data_len}"
        )));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor; does not participate in gradients.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Tensor(Rc::new(RefCell::new(TensorData {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }))))
    }

    /// Trainable tensor; its grad buffer starts at zero.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        let n = data.len();
        Ok(Tensor(Rc::new(RefCell::new(TensorData {
            shape: shape.to_vec(),
            data,
            requires_grad: true,
            grad: Some(vec![0.0; n]),
        }))))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; numel], shape).expect("valid shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[1]).expect("scalar shape")
    }

    fn fresh(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(RefCell::new(TensorData {
            shape,
            data,
            requires_grad,
            grad: None,
        })))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn data(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.borrow();
        assert_eq!(d.data.len(), 1, "item() on non-scalar tensor");
        d.data[0]
    }

    pub fn data_at(&self, i: usize) -> f64 {
        self.0.borrow().data[i]
    }

    pub fn set_data_at(&self, i: usize, v: f64) {
        self.0.borrow_mut().data[i] = v;
    }

    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let mut d = self.0.borrow_mut();
        if data.len() != d.data.len() {
            return Err(Error::Dimension(format!(
                "set_data length {} does not match tensor numel {}",
                data.len(),
                d.data.len()
            )));
        }
        d.data = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    /// Reset the grad buffer to zeros (allocating it for trainable tensors).
    pub fn zero_grad(&self) {
        let mut d = self.0.borrow_mut();
        let n = d.data.len();
        match &mut d.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => {
                if d.requires_grad {
                    d.grad = Some(vec![0.0; n]);
                }
            }
        }
    }

    fn ensure_zero_grad(&self) {
        let mut d = self.0.borrow_mut();
        let n = d.data.len();
        match &mut d.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => d.grad = Some(vec![0.0; n]),
        }
    }

    fn accumulate_grad(&self, contrib: &[f64]) {
        let mut d = self.0.borrow_mut();
        if !d.requires_grad {
            return;
        }
        let n = d.data.len();
        debug_assert_eq!(contrib.len(), n);
        let g = d.grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }

    fn grad_snapshot(&self) -> Vec<f64> {
        let d = self.0.borrow();
        match &d.grad {
            Some(g) => g.clone(),
            None => vec![0.0; d.data.len()],
        }
    }

    pub fn ptr_eq(a: &Tensor, b: &Tensor) -> bool {
        Rc::ptr_eq(&a.0, &b.0)
    }

    pub fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }
}

/// Backward rule of one recorded op: receives the output gradient and
/// accumulates into the inputs it captured.
type BackwardRule = Box<dyn Fn(&[f64])>;

struct Node {
    output: Tensor,
    backward: BackwardRule,
}

/// Records differentiable operations for one forward computation.
///
/// One tape must only be used from one thread; independent tapes are fully
/// independent. A tape built with [`Tape::no_grad`] records nothing, which
/// is the evaluation path.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// A tape that records nothing; all outputs are plain constants.
    pub fn no_grad() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn wants_grad(&self, inputs: &[&Tensor]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    fn record(&self, output: &Tensor, backward: impl Fn(&[f64]) + 'static) {
        self.nodes.borrow_mut().push(Node {
            output: output.clone(),
            backward: Box::new(backward),
        });
    }

    /// Record a custom operation on the tape. `output` must already hold the
    /// forward result; `backward` receives the output gradient and is
    /// responsible for accumulating into the inputs it captured.
    pub fn record_custom(&self, output: &Tensor, backward: impl Fn(&[f64]) + 'static) {
        if self.enabled {
            output.0.borrow_mut().requires_grad = true;
            self.record(output, backward);
        }
    }

    // ── matrix ops ──────────────────────────────────────────────────────

    /// `a [m×k] · b [k×n] -> [m×n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::Dimension(format!(
                "matmul expects [m×k]·[k×n], got {ash:?} and {bsh:?}"
            )));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![0.0; m * n];
        {
            let ad = a.0.borrow();
            let bd = b.0.borrow();
            for i in 0..m {
                let arow = &ad.data[i * k..(i + 1) * k];
                let crow = &mut out[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &bd.data[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        let rg = self.wants_grad(&[a, b]);
        let out = Tensor::fresh(out, vec![m, n], rg);
        if rg {
            let (a, b) = (a.clone(), b.clone());
            self.record(&out, move |g| {
                let (mut da, mut db) = (vec![0.0; m * k], vec![0.0; k * n]);
                {
                    let ad = a.0.borrow();
                    let bd = b.0.borrow();
                    // dA = g · Bᵀ
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd.data[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for (gv, bv) in grow.iter().zip(brow) {
                                s += gv * bv;
                            }
                            da[i * k + p] = s;
                        }
                    }
                    // dB = Aᵀ · g
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &ad.data[i * k..(i + 1) * k];
                        for (p, &av) in arow.iter().enumerate() {
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (dv, &gv) in dbrow.iter_mut().zip(grow) {
                                *dv += av * gv;
                            }
                        }
                    }
                }
                a.accumulate_grad(&da);
                b.accumulate_grad(&db);
            });
        }
        Ok(out)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let ash = a.shape();
        if ash.len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose expects a 2-d tensor, got {ash:?}"
            )));
        }
        let (n, m) = (ash[0], ash[1]);
        let mut out = vec![0.0; n * m];
        {
            let ad = a.0.borrow();
            for i in 0..n {
                for j in 0..m {
                    out[j * n + i] = ad.data[i * m + j];
                }
            }
        }
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, vec![m, n], rg);
        if rg {
            let a = a.clone();
            self.record(&out, move |g| {
                let mut da = vec![0.0; n * m];
                for j in 0..m {
                    for i in 0..n {
                        da[i * m + j] = g[j * n + i];
                    }
                }
                a.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        check_shape(a.numel(), shape)?;
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(a.data(), shape.to_vec(), rg);
        if rg {
            let a = a.clone();
            self.record(&out, move |g| a.accumulate_grad(g));
        }
        Ok(out)
    }

    // ── elementwise ops ─────────────────────────────────────────────────

    fn binary_same_shape(
        &self,
        op_name: &str,
        a: &Tensor,
        b: &Tensor,
        fwd: impl Fn(f64, f64) -> f64,
        dleft: impl Fn(f64, f64, f64) -> f64 + 'static,
        dright: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash != bsh {
            return Err(Error::Dimension(format!(
                "{op_name} expects equal shapes, got {ash:?} and {bsh:?}"
            )));
        }
        let out: Vec<f64> = {
            let ad = a.0.borrow();
            let bd = b.0.borrow();
            ad.data
                .iter()
                .zip(bd.data.iter())
                .map(|(&x, &y)| fwd(x, y))
                .collect()
        };
        let rg = self.wants_grad(&[a, b]);
        let out = Tensor::fresh(out, ash, rg);
        if rg {
            let (a, b) = (a.clone(), b.clone());
            self.record(&out, move |g| {
                let (da, db): (Vec<f64>, Vec<f64>) = {
                    let ad = a.0.borrow();
                    let bd = b.0.borrow();
                    let da = g
                        .iter()
                        .zip(ad.data.iter().zip(bd.data.iter()))
                        .map(|(&gv, (&x, &y))| dleft(gv, x, y))
                        .collect();
                    let db = g
                        .iter()
                        .zip(ad.data.iter().zip(bd.data.iter()))
                        .map(|(&gv, (&x, &y))| dright(gv, x, y))
                        .collect();
                    (da, db)
                };
                a.accumulate_grad(&da);
                b.accumulate_grad(&db);
            });
        }
        Ok(out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("add", a, b, |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    /// Multiply every element by the scalar `c`.
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let out: Vec<f64> = a.0.borrow().data.iter().map(|&x| x * c).collect();
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, a.shape(), rg);
        if rg {
            let a = a.clone();
            self.record(&out, move |g| {
                let da: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                a.accumulate_grad(&da);
            });
        }
        out
    }

    fn unary(
        &self,
        a: &Tensor,
        fwd: impl Fn(f64) -> f64,
        dfn: impl Fn(f64, f64) -> f64 + 'static, // (x, y) -> dy/dx
    ) -> Tensor {
        let out: Vec<f64> = a.0.borrow().data.iter().map(|&x| fwd(x)).collect();
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, a.shape(), rg);
        if rg {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move |g| {
                let da: Vec<f64> = {
                    let ad = a.0.borrow();
                    let od = o.0.borrow();
                    g.iter()
                        .zip(ad.data.iter().zip(od.data.iter()))
                        .map(|(&gv, (&x, &y))| gv * dfn(x, y))
                        .collect()
                };
                a.accumulate_grad(&da);
            });
        }
        out
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// GELU using the tanh approximation
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&self, a: &Tensor) -> Tensor {
        self.unary(a, gelu_scalar, |x, _| gelu_deriv_scalar(x))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = a.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let axis_len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; a.numel()];
        {
            let ad = a.0.borrow();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for s in 0..axis_len {
                        mx = mx.max(ad.data[base + s * inner]);
                    }
                    let mut sum = 0.0;
                    for s in 0..axis_len {
                        let e = (ad.data[base + s * inner] - mx).exp();
                        out[base + s * inner] = e;
                        sum += e;
                    }
                    for s in 0..axis_len {
                        out[base + s * inner] /= sum;
                    }
                }
            }
        }
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, shape, rg);
        if rg {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move |g| {
                let da: Vec<f64> = {
                    let od = o.0.borrow();
                    let y = &od.data;
                    let mut da = vec![0.0; y.len()];
                    for ob in 0..outer {
                        for i in 0..inner {
                            let base = ob * axis_len * inner + i;
                            let mut dot = 0.0;
                            for s in 0..axis_len {
                                let idx = base + s * inner;
                                dot += g[idx] * y[idx];
                            }
                            for s in 0..axis_len {
                                let idx = base + s * inner;
                                da[idx] = y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    da
                };
                a.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    /// Row-wise layer normalization over the last axis of a 2-d tensor,
    /// followed by the `gain`/`bias` affine.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 2 {
            return Err(Error::Dimension(format!(
                "layer_norm expects a 2-d input, got {xs:?}"
            )));
        }
        let (rows, d) = (xs[0], xs[1]);
        if gain.numel() != d || bias.numel() != d {
            return Err(Error::Dimension(format!(
                "layer_norm width {d} does not match gain {} / bias {}",
                gain.numel(),
                bias.numel()
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        {
            let xd = x.0.borrow();
            let gd = gain.0.borrow();
            let bd = bias.0.borrow();
            for r in 0..rows {
                let row = &xd.data[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[r] = inv;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv;
                    xhat[r * d + j] = xh;
                    out[r * d + j] = gd.data[j] * xh + bd.data[j];
                }
            }
        }
        let rg = self.wants_grad(&[x, gain, bias]);
        let out = Tensor::fresh(out, xs, rg);
        if rg {
            let (x, gain, bias) = (x.clone(), gain.clone(), bias.clone());
            self.record(&out, move |g| {
                let (dx, dgain, dbias): (Vec<f64>, Vec<f64>, Vec<f64>) = {
                    let gd = gain.0.borrow();
                    let mut dx = vec![0.0; rows * d];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        let xhrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..d {
                            dgain[j] += grow[j] * xhrow[j];
                            dbias[j] += grow[j];
                            let dxh = grow[j] * gd.data[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xhrow[j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            let dxh = grow[j] * gd.data[j];
                            dx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xhrow[j] * mean_dxh_xh);
                        }
                    }
                    (dx, dgain, dbias)
                };
                x.accumulate_grad(&dx);
                gain.accumulate_grad(&dgain);
                bias.accumulate_grad(&dbias);
            });
        }
        Ok(out)
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dimension(format!(
                    "concat shapes differ outside axis {axis}: {first:?} vs {s:?}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let out_block = axis_total * inner;
        let mut out = vec![0.0; outer * out_block];
        let mut starts = Vec::with_capacity(parts.len());
        {
            let mut offset = 0;
            for p in parts {
                let len = p.shape()[axis];
                starts.push(offset);
                let pd = p.0.borrow();
                let block = len * inner;
                for o in 0..outer {
                    let dst = o * out_block + offset * inner;
                    out[dst..dst + block].copy_from_slice(&pd.data[o * block..(o + 1) * block]);
                }
                offset += len;
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let rg = self.wants_grad(&refs);
        let out = Tensor::fresh(out, out_shape, rg);
        if rg {
            let parts: Vec<Tensor> = parts.to_vec();
            self.record(&out, move |g| {
                for (p, &start) in parts.iter().zip(starts.iter()) {
                    let len = p.shape()[axis];
                    let block = len * inner;
                    let mut dp = vec![0.0; outer * block];
                    for o in 0..outer {
                        let src = o * out_block + start * inner;
                        dp[o * block..(o + 1) * block].copy_from_slice(&g[src..src + block]);
                    }
                    p.accumulate_grad(&dp);
                }
            });
        }
        Ok(out)
    }

    /// Rows `[start, start+len)` of a 2-d tensor.
    pub fn slice_rows(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 || start + len > s[0] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_rows [{start}, {}) out of range for shape {s:?}",
                start + len
            )));
        }
        let d = s[1];
        let out = a.0.borrow().data[start * d..(start + len) * d].to_vec();
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, vec![len, d], rg);
        if rg {
            let a = a.clone();
            let n = s[0];
            self.record(&out, move |g| {
                let mut da = vec![0.0; n * d];
                da[start * d..(start + len) * d].copy_from_slice(g);
                a.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    /// Columns `[start, start+len)` of a 2-d tensor.
    pub fn slice_cols(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) out of range for shape {s:?}",
                start + len
            )));
        }
        let (n, d) = (s[0], s[1]);
        let mut out = vec![0.0; n * len];
        {
            let ad = a.0.borrow();
            for r in 0..n {
                out[r * len..(r + 1) * len]
                    .copy_from_slice(&ad.data[r * d + start..r * d + start + len]);
            }
        }
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(out, vec![n, len], rg);
        if rg {
            let a = a.clone();
            self.record(&out, move |g| {
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    da[r * d + start..r * d + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                a.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    /// Gather rows of `table` at `indices`; the backward pass scatters
    /// gradients back additively, so repeated indices accumulate.
    pub fn gather_rows(&self, table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects a 2-d table, got {s:?}"
            )));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Label(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        let mut out = vec![0.0; indices.len() * d];
        {
            let td = table.0.borrow();
            for (i, &idx) in indices.iter().enumerate() {
                out[i * d..(i + 1) * d].copy_from_slice(&td.data[idx * d..(idx + 1) * d]);
            }
        }
        let rg = self.wants_grad(&[table]);
        let out = Tensor::fresh(out, vec![indices.len(), d], rg);
        if rg {
            let table = table.clone();
            let indices = indices.to_vec();
            self.record(&out, move |g| {
                let mut dt = vec![0.0; rows * d];
                for (i, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += g[i * d + j];
                    }
                }
                table.accumulate_grad(&dt);
            });
        }
        Ok(out)
    }

    /// Add a length-d vector to every row of an `[n×d]` matrix.
    pub fn add_row_vector(&self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let ms = m.shape();
        if ms.len() != 2 || v.numel() != ms[1] {
            return Err(Error::Dimension(format!(
                "add_row_vector expects [n×d] and [d], got {ms:?} and {:?}",
                v.shape()
            )));
        }
        let (n, d) = (ms[0], ms[1]);
        let mut out = vec![0.0; n * d];
        {
            let md = m.0.borrow();
            let vd = v.0.borrow();
            for r in 0..n {
                for j in 0..d {
                    out[r * d + j] = md.data[r * d + j] + vd.data[j];
                }
            }
        }
        let rg = self.wants_grad(&[m, v]);
        let out = Tensor::fresh(out, ms, rg);
        if rg {
            let (m, v) = (m.clone(), v.clone());
            self.record(&out, move |g| {
                m.accumulate_grad(g);
                let mut dv = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        dv[j] += g[r * d + j];
                    }
                }
                v.accumulate_grad(&dv);
            });
        }
        Ok(out)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let s: f64 = a.0.borrow().data.iter().sum();
        let rg = self.wants_grad(&[a]);
        let out = Tensor::fresh(vec![s], vec![1], rg);
        if rg {
            let a = a.clone();
            let n = a.numel();
            self.record(&out, move |g| {
                a.accumulate_grad(&vec![g[0]; n]);
            });
        }
        out
    }

    /// Mean cross-entropy of `logits [batch×K]` against integer class
    /// targets. Backward yields `(softmax − onehot) / batch`.
    pub fn cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let s = logits.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy expects [batch×K] logits, got {s:?}"
            )));
        }
        let (b, k) = (s[0], s[1]);
        if targets.len() != b {
            return Err(Error::Contract(format!(
                "cross_entropy got {b} logit rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Label(format!(
                "target class {bad} out of range for {k} classes"
            )));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        {
            let ld = logits.0.borrow();
            for r in 0..b {
                let row = &ld.data[r * k..(r + 1) * k];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..k {
                    let e = (row[j] - mx).exp();
                    probs[r * k + j] = e;
                    sum += e;
                }
                for j in 0..k {
                    probs[r * k + j] /= sum;
                }
                loss -= row[targets[r]] - mx - sum.ln();
            }
        }
        loss /= b as f64;
        let rg = self.wants_grad(&[logits]);
        let out = Tensor::fresh(vec![loss], vec![1], rg);
        if rg {
            let logits = logits.clone();
            let targets = targets.to_vec();
            self.record(&out, move |g| {
                let mut dl = vec![0.0; b * k];
                let scale = g[0] / b as f64;
                for r in 0..b {
                    for j in 0..k {
                        let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                        dl[r * k + j] = (probs[r * k + j] - onehot) * scale;
                    }
                }
                logits.accumulate_grad(&dl);
            });
        }
        Ok(out)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients of intermediates are
    /// reset per call; trainable leaves accumulate across calls.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        if !nodes.iter().any(|n| Tensor::ptr_eq(&n.output, loss)) {
            return Err(Error::Contract(
                "loss is not connected to this tape".into(),
            ));
        }
        for n in nodes.iter() {
            n.output.ensure_zero_grad();
        }
        loss.0.borrow_mut().grad = Some(vec![1.0]);
        for n in nodes.iter().rev() {
            let g = n.output.grad_snapshot();
            (n.backward)(&g);
        }
        Ok(())
    }
}

pub fn gelu_scalar(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_deriv_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

// ── gradient checking ───────────────────────────────────────────────────

/// One checked coordinate of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compare analytic gradients against central finite differences.
///
/// `f` must rebuild the forward computation on the tape it is given and
/// return the scalar loss; it is invoked once on a recording tape for the
/// analytic pass and twice per checked coordinate (plus twice up front to
/// verify determinism) on non-recording tapes.
pub fn grad_check(
    f: &mut dyn FnMut(&Tape) -> Result<Tensor>,
    params: &[(String, Tensor)],
    picks: &[(usize, usize)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::Contract(format!(
            "grad_check requires h > 0 and tol > 0, got h={h}, tol={tol}"
        )));
    }
    for &(pi, coord) in picks {
        let (name, t) = params
            .get(pi)
            .ok_or_else(|| Error::Contract(format!("grad_check pick references parameter {pi}")))?;
        if coord >= t.numel() {
            return Err(Error::Contract(format!(
                "grad_check coordinate {coord} out of range for parameter {name}"
            )));
        }
    }
    let eval = |f: &mut dyn FnMut(&Tape) -> Result<Tensor>| -> Result<f64> {
        let tape = Tape::no_grad();
        Ok(f(&tape)?.item())
    };
    let l0 = eval(f)?;
    let l1 = eval(f)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Determinism(format!(
            "function is not deterministic: {l0} vs {l1}"
        )));
    }

    for (_, t) in params {
        t.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape)?;
    tape.backward(&loss)?;

    let mut entries = Vec::with_capacity(picks.len());
    for &(pi, coord) in picks {
        let (name, t) = &params[pi];
        let analytic = t
            .grad()
            .map(|g| g[coord])
            .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient")))?;
        let orig = t.data_at(coord);
        t.set_data_at(coord, orig + h);
        let lp = eval(f)?;
        t.set_data_at(coord, orig - h);
        let lm = eval(f)?;
        t.set_data_at(coord, orig);
        let numeric = (lp - lm) / (2.0 * h);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        entries.push(GradCheckEntry {
            param: name.clone(),
            coord,
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let mean_rel_error = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.rel_error).sum::<f64>() / entries.len() as f64
    };
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        mean_rel_error,
        tol,
        pass: max_rel_error < tol,
    })
}
