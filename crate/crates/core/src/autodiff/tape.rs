use super::tensor::{axis_layout, strides, Real, Tensor};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Affine(Var, Var, Option<Var>),
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Conv2dSquare { x: Var, w: Var, b: Option<Var>, side: usize },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, axis: usize, xhat: Vec<F>, inv_std: Vec<F> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp { x: Var, lo: F, hi: F },
    Concat { inputs: Vec<Var>, axis: usize },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Reshape(Var),
    Permute { x: Var, gather: Vec<usize> },
    Slice { x: Var, axis: usize, start: usize },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended in evaluation
/// order, so the node list is always topologically sorted.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

// c[m,n] += a[m,k] * b[k,n]
fn gemm<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
fn gemm_nt<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: F = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + p] = c[i * k + p] + dot;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
fn gemm_tn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

fn add_grad<F: Real>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], v: Var, f: impl FnOnce(&mut [F])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); nodes[v.0].value.numel()]);
    f(slot);
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let value = Tensor::new(self.shape(x).to_vec(), self.data(x).iter().map(|&v| v * c).collect())
            .expect("scale keeps shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// `x[..., n] + b[n]`, the only broadcast the engine supports.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(b) != [n] {
            return Err(mismatch(format!("add_bias: {:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bias = self.data(b);
        let data = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::AddBias(x, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Batched matmul `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch(format!("bmm: {sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for t in 0..bs {
            gemm(
                &da[t * m * k..(t + 1) * m * k],
                &db[t * k * n..(t + 1) * k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![bs, m, n], out)?, Op::BatchMatMul(a, b), rg))
    }

    /// `x[r,in] · w[in,out] + b[out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(mismatch(format!("affine: {sx:?} x {sw:?}")));
        }
        let (r, k, n) = (sx[0], sx[1], sw[1]);
        let mut out = vec![F::zero(); r * n];
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(mismatch(format!("affine bias {:?}, expected [{n}]", self.shape(b))));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(self.data(b));
            }
        }
        gemm(self.data(x), self.data(w), &mut out, r, k, n);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(vec![r, n], out)?, Op::Affine(x, w, b), rg))
    }

    /// Convolution along the token (row) axis. `x` is `[L, C_in]`, `w` is
    /// `[C_out, C_in, k]`; output is `[(L + 2·pad − k)/stride + 1, C_out]`.
    pub fn conv1d_seq(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[1] != sw[1] || stride == 0 {
            return Err(mismatch(format!("conv1d_seq: x {sx:?}, w {sw:?}, stride {stride}")));
        }
        let (len, cin, cout, k) = (sx[0], sx[1], sw[0], sw[2]);
        if len + 2 * pad < k {
            return Err(mismatch(format!("conv1d_seq: kernel {k} longer than padded input {}", len + 2 * pad)));
        }
        let out_len = (len + 2 * pad - k) / stride + 1;
        let mut out = vec![F::zero(); out_len * cout];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(mismatch(format!("conv1d_seq bias {:?}", self.shape(b))));
            }
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(self.data(b));
            }
        }
        let (xd, wd) = (self.data(x), self.data(w));
        for t in 0..out_len {
            for j in 0..k {
                let r = (t * stride + j) as isize - pad as isize;
                if r < 0 || r as usize >= len {
                    continue;
                }
                let xrow = &xd[r as usize * cin..(r as usize + 1) * cin];
                for o in 0..cout {
                    let mut acc = F::zero();
                    let wbase = o * cin * k + j;
                    for c in 0..cin {
                        acc = acc + wd[wbase + c * k] * xrow[c];
                    }
                    out[t * cout + o] = out[t * cout + o] + acc;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(
            Tensor::new(vec![out_len, cout], out)?,
            Op::Conv1d { x, w, b, stride, pad },
            rg,
        ))
    }

    /// 2-D convolution applied independently inside each `side × side`
    /// square. `x` is `[n·side², C_in]` in square-major, row-major order;
    /// `w` is `[C_out, C_in, kh, kw]` with odd kernel sides, stride 1 and
    /// same-padding.
    pub fn conv2d_square(&mut self, x: Var, w: Var, b: Option<Var>, side: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let cell = side * side;
        if sx.len() != 2 || sw.len() != 4 || sx[1] != sw[1] || side == 0 || sx[0] % cell != 0 {
            return Err(mismatch(format!("conv2d_square: x {sx:?}, w {sw:?}, side {side}")));
        }
        let (kh, kw) = (sw[2], sw[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(mismatch(format!("conv2d_square: even kernel {kh}x{kw}")));
        }
        let (rows, cin, cout) = (sx[0], sx[1], sw[0]);
        let mut out = vec![F::zero(); rows * cout];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(mismatch(format!("conv2d_square bias {:?}", self.shape(b))));
            }
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(self.data(b));
            }
        }
        let (xd, wd) = (self.data(x), self.data(w));
        for_each_conv2d_tap(rows / cell, side, kh, kw, |orow, irow, a, bb| {
            let xrow = &xd[irow * cin..(irow + 1) * cin];
            for o in 0..cout {
                let mut acc = F::zero();
                for c in 0..cin {
                    acc = acc + wd[((o * cin + c) * kh + a) * kw + bb] * xrow[c];
                }
                out[orow * cout + o] = out[orow * cout + o] + acc;
            }
        });
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(vec![rows, cout], out)?, Op::Conv2dSquare { x, w, b, side }, rg))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_layout(&shape, axis)?;
        let xd = self.data(x);
        let mut out = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| xd[idx(j)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for j in 0..len {
                    let e = (xd[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z = z + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Layer normalization along `axis` with affine `gamma`/`beta` of
    /// length `shape[axis]`. Uses the biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize, eps: F) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_layout(&shape, axis)?;
        if self.shape(gamma) != [len] || self.shape(beta) != [len] {
            return Err(mismatch(format!(
                "layer_norm: gamma {:?} beta {:?} for axis length {len}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (xd, g, bt) = (self.data(x), self.data(gamma), self.data(beta));
        let n = F::of(len as f64);
        let mut xhat = vec![F::zero(); xd.len()];
        let mut inv_std = vec![F::zero(); outer * inner];
        let mut out = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mean = (0..len).map(|j| xd[idx(j)]).sum::<F>() / n;
                let var = (0..len).map(|j| (xd[idx(j)] - mean).powi(2)).sum::<F>() / n;
                let inv = F::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = inv;
                for j in 0..len {
                    let h = (xd[idx(j)] - mean) * inv;
                    xhat[idx(j)] = h;
                    out[idx(j)] = h * g[j] + bt[j];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, axis, xhat, inv_std },
            rg,
        ))
    }

    fn map(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let value = Tensor::new(self.shape(x).to_vec(), self.data(x).iter().map(|&v| f(v)).collect())
            .expect("map keeps shape");
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > F::zero() { v } else { F::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, F::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| F::one() / (F::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.data(x).iter().find(|&&v| !(v > F::zero())) {
            return Err(AutodiffError::DomainError(format!("log of {bad}")));
        }
        Ok(self.map(x, F::ln, Op::Log(x)))
    }

    /// Elementwise clamp into `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        self.map(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| mismatch("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        axis_layout(&base, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(mismatch(format!("concat: {:?} vs {base:?} on axis {axis}", s)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_layout(&shape, axis)?;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat { inputs: inputs.to_vec(), axis },
            rg,
        ))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_layout(&shape, axis)?;
        let xd = self.data(x);
        let n = F::of(len as f64);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + xd[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v / n);
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Mean { x, axis }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.data(x).to_vec())
            .map_err(|_| mismatch(format!("reshape {:?}", self.shape(x))))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// General axis permutation: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(mismatch(format!("permute {axes:?} of {shape:?}")));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n: usize = shape.iter().product();
        let mut gather = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            gather.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let xd = self.data(x);
        let out = gather.iter().map(|&g| xd[g]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Permute { x, gather }, rg))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(mismatch(format!("transpose of {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, full, inner) = axis_layout(&shape, axis)?;
        if start + len > full {
            return Err(mismatch(format!("slice {start}..{} of axis {axis} in {shape:?}", start + len)));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node reachable
    /// from the loss are stored on the tape; fan-out accumulates additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalarLoss(self.shape(loss).to_vec()));
        }
        let Tape { nodes, grads } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn for_each_conv2d_tap(squares: usize, side: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let s = side as isize;
    for sq in 0..squares {
        let base = sq * side * side;
        for i in 0..s {
            for j in 0..s {
                let orow = base + (i * s + j) as usize;
                for a in 0..kh {
                    let ii = i + a as isize - ph;
                    if ii < 0 || ii >= s {
                        continue;
                    }
                    for bb in 0..kw {
                        let jj = j + bb as isize - pw;
                        if jj < 0 || jj >= s {
                            continue;
                        }
                        f(orow, base + (ii * s + jj) as usize, a, bb);
                    }
                }
            }
        }
    }
}

fn backprop_node<F: Real>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], i: usize, g: &[F]) {
    let val = |v: Var| nodes[v.0].value.data();
    let shp = |v: Var| nodes[v.0].value.shape();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_grad(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
            add_grad(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
        }
        Op::Sub(a, b) => {
            add_grad(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d));
            add_grad(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x = *x - d));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            add_grad(nodes, grads, *a, |ga| {
                for k in 0..ga.len() {
                    ga[k] = ga[k] + g[k] * bv[k];
                }
            });
            add_grad(nodes, grads, *b, |gb| {
                for k in 0..gb.len() {
                    gb[k] = gb[k] + g[k] * av[k];
                }
            });
        }
        Op::Scale(x, c) => {
            add_grad(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &d)| *v = *v + d * *c));
        }
        Op::AddBias(x, b) => {
            add_grad(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &d)| *v = *v + d));
            add_grad(nodes, grads, *b, |gb| {
                let n = gb.len();
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(v, &d)| *v = *v + d);
                }
            });
        }
        Op::MatMul(a, b) | Op::Affine(a, b, _) => {
            let (m, k) = (shp(*a)[0], shp(*a)[1]);
            let n = shp(*b)[1];
            let (av, bv) = (val(*a), val(*b));
            add_grad(nodes, grads, *a, |ga| gemm_nt(g, bv, ga, m, n, k));
            add_grad(nodes, grads, *b, |gb| gemm_tn(av, g, gb, m, k, n));
            if let Op::Affine(_, _, Some(bias)) = &nodes[i].op {
                add_grad(nodes, grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(v, &d)| *v = *v + d);
                    }
                });
            }
        }
        Op::BatchMatMul(a, b) => {
            let (bs, m, k) = (shp(*a)[0], shp(*a)[1], shp(*a)[2]);
            let n = shp(*b)[2];
            let (av, bv) = (val(*a), val(*b));
            add_grad(nodes, grads, *a, |ga| {
                for t in 0..bs {
                    gemm_nt(
                        &g[t * m * n..(t + 1) * m * n],
                        &bv[t * k * n..(t + 1) * k * n],
                        &mut ga[t * m * k..(t + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            });
            add_grad(nodes, grads, *b, |gb| {
                for t in 0..bs {
                    gemm_tn(
                        &av[t * m * k..(t + 1) * m * k],
                        &g[t * m * n..(t + 1) * m * n],
                        &mut gb[t * k * n..(t + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
        Op::Conv1d { x, w, b, stride, pad } => {
            let (len, cin) = (shp(*x)[0], shp(*x)[1]);
            let (cout, k) = (shp(*w)[0], shp(*w)[2]);
            let out_len = g.len() / cout;
            let (xd, wd) = (val(*x), val(*w));
            let taps = |f: &mut dyn FnMut(usize, usize, usize)| {
                for t in 0..out_len {
                    for j in 0..k {
                        let r = (t * stride + j) as isize - *pad as isize;
                        if r >= 0 && (r as usize) < len {
                            f(t, j, r as usize);
                        }
                    }
                }
            };
            add_grad(nodes, grads, *x, |gx| {
                taps(&mut |t, j, r| {
                    for o in 0..cout {
                        let d = g[t * cout + o];
                        let wbase = o * cin * k + j;
                        for c in 0..cin {
                            gx[r * cin + c] = gx[r * cin + c] + d * wd[wbase + c * k];
                        }
                    }
                });
            });
            add_grad(nodes, grads, *w, |gw| {
                taps(&mut |t, j, r| {
                    for o in 0..cout {
                        let d = g[t * cout + o];
                        let wbase = o * cin * k + j;
                        for c in 0..cin {
                            gw[wbase + c * k] = gw[wbase + c * k] + d * xd[r * cin + c];
                        }
                    }
                });
            });
            if let Some(b) = b {
                add_grad(nodes, grads, *b, |gb| {
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(v, &d)| *v = *v + d);
                    }
                });
            }
        }
        Op::Conv2dSquare { x, w, b, side } => {
            let (rows, cin) = (shp(*x)[0], shp(*x)[1]);
            let (cout, kh, kw) = (shp(*w)[0], shp(*w)[2], shp(*w)[3]);
            let squares = rows / (side * side);
            let (xd, wd) = (val(*x), val(*w));
            add_grad(nodes, grads, *x, |gx| {
                for_each_conv2d_tap(squares, *side, kh, kw, |orow, irow, a, bb| {
                    for o in 0..cout {
                        let d = g[orow * cout + o];
                        for c in 0..cin {
                            gx[irow * cin + c] = gx[irow * cin + c] + d * wd[((o * cin + c) * kh + a) * kw + bb];
                        }
                    }
                });
            });
            add_grad(nodes, grads, *w, |gw| {
                for_each_conv2d_tap(squares, *side, kh, kw, |orow, irow, a, bb| {
                    for o in 0..cout {
                        let d = g[orow * cout + o];
                        for c in 0..cin {
                            let wi = ((o * cin + c) * kh + a) * kw + bb;
                            gw[wi] = gw[wi] + d * xd[irow * cin + c];
                        }
                    }
                });
            });
            if let Some(b) = b {
                add_grad(nodes, grads, *b, |gb| {
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(v, &d)| *v = *v + d);
                    }
                });
            }
        }
        Op::Softmax { x, axis } => {
            let y = nodes[i].value.data();
            let (outer, len, inner) = axis_layout(nodes[i].value.shape(), *axis).expect("recorded axis");
            add_grad(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + ii;
                        let dot: F = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            gx[idx(j)] = gx[idx(j)] + y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, axis, xhat, inv_std } => {
            let (outer, len, inner) = axis_layout(nodes[i].value.shape(), *axis).expect("recorded axis");
            let gam = val(*gamma);
            let n = F::of(len as f64);
            add_grad(nodes, grads, *beta, |gb| {
                for o in 0..outer {
                    for j in 0..len {
                        for ii in 0..inner {
                            gb[j] = gb[j] + g[(o * len + j) * inner + ii];
                        }
                    }
                }
            });
            add_grad(nodes, grads, *gamma, |gg| {
                for o in 0..outer {
                    for j in 0..len {
                        for ii in 0..inner {
                            let k = (o * len + j) * inner + ii;
                            gg[j] = gg[j] + g[k] * xhat[k];
                        }
                    }
                }
            });
            add_grad(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + ii;
                        let inv = inv_std[o * inner + ii];
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..len {
                            let dh = g[idx(j)] * gam[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xhat[idx(j)];
                        }
                        for j in 0..len {
                            let dh = g[idx(j)] * gam[j];
                            gx[idx(j)] = gx[idx(j)] + inv / n * (n * dh - s1 - xhat[idx(j)] * s2);
                        }
                    }
                }
            });
        }
        Op::Relu(x) => {
            let xd = val(*x);
            add_grad(nodes, grads, *x, |gx| {
                for k in 0..gx.len() {
                    if xd[k] > F::zero() {
                        gx[k] = gx[k] + g[k];
                    }
                }
            });
        }
        Op::Tanh(x) => {
            let y = nodes[i].value.data();
            add_grad(nodes, grads, *x, |gx| {
                for k in 0..gx.len() {
                    gx[k] = gx[k] + g[k] * (F::one() - y[k] * y[k]);
                }
            });
        }
        Op::Sigmoid(x) => {
            let y = nodes[i].value.data();
            add_grad(nodes, grads, *x, |gx| {
                for k in 0..gx.len() {
                    gx[k] = gx[k] + g[k] * y[k] * (F::one() - y[k]);
                }
            });
        }
        Op::Log(x) => {
            let xd = val(*x);
            add_grad(nodes, grads, *x, |gx| {
                for k in 0..gx.len() {
                    gx[k] = gx[k] + g[k] / xd[k];
                }
            });
        }
        Op::Clamp { x, lo, hi } => {
            let xd = val(*x);
            add_grad(nodes, grads, *x, |gx| {
                for k in 0..gx.len() {
                    if xd[k] > *lo && xd[k] < *hi {
                        gx[k] = gx[k] + g[k];
                    }
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_layout(nodes[i].value.shape(), *axis).expect("recorded axis");
            let mut offset = 0;
            for &v in inputs {
                let len = shp(v)[*axis];
                add_grad(nodes, grads, v, |gv| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        for k in 0..len * inner {
                            gv[dst + k] = gv[dst + k] + g[src + k];
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Mean { x, axis } => {
            let (outer, len, inner) = axis_layout(shp(*x), *axis).expect("recorded axis");
            let n = F::of(len as f64);
            add_grad(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for j in 0..len {
                        for ii in 0..inner {
                            let k = (o * len + j) * inner + ii;
                            gx[k] = gx[k] + g[o * inner + ii] / n;
                        }
                    }
                }
            });
        }
        Op::Sum(x) => {
            add_grad(nodes, grads, *x, |gx| gx.iter_mut().for_each(|v| *v = *v + g[0]));
        }
        Op::Reshape(x) => {
            add_grad(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &d)| *v = *v + d));
        }
        Op::Permute { x, gather } => {
            add_grad(nodes, grads, *x, |gx| {
                for (k, &src) in gather.iter().enumerate() {
                    gx[src] = gx[src] + g[k];
                }
            });
        }
        Op::Slice { x, axis, start } => {
            let (outer, full, inner) = axis_layout(shp(*x), *axis).expect("recorded axis");
            let len = nodes[i].value.shape()[*axis];
            add_grad(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for k in 0..len * inner {
                        gx[dst + k] = gx[dst + k] + g[src + k];
                    }
                }
            });
        }
    }
}
