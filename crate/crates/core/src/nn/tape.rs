//! Reverse-mode gradient tape over dense arrays.
//!
//! Activations use a `(channels, batch, frames)` layout so that a
//! convolution over a whole batch is one GEMM against an im2col matrix of
//! shape `(in_channels * kernel, batch * frames)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayD, Axis, IxDyn};

use super::{NnError, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics used by [`Tape::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a, F> {
    /// Normalize with the statistics of the current batch (training).
    Batch { eps: F },
    /// Normalize with stored running statistics (inference).
    Running { mean: &'a [F], var: &'a [F], eps: F },
}

/// Per-channel batch mean and biased variance observed by a training-mode
/// batch norm.
#[derive(Debug, Clone)]
pub struct BatchMoments<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub count: usize,
}

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        /// Unfolded input of a forward convolution.
        cols: Option<Array2<F>>,
        k: usize,
        transposed: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: ArrayD<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
    },
    Softplus(Var),
    EqNorm(Var),
    SliceBatch {
        x: Var,
        start: usize,
    },
    ConcatBatch(Vec<Var>),
}

struct Node<F> {
    value: ArrayD<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward computation and replays it backwards once.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<ArrayD<F>>>,
    consumed: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
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

    fn push(&mut self, value: ArrayD<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value no gradient is requested for.
    pub fn constant(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained after [`Tape::backward`].
    pub fn leaf(&mut self, value: ArrayD<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Value of a 0-d (or single element) node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0]
            .value
            .iter()
            .next()
            .copied()
            .unwrap_or_else(F::zero)
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&ArrayD<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                op,
                expected: sa.to_vec(),
                actual: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = &self.nodes[a.0].value * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let v = &self.nodes[a.0].value + c;
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(F::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: F = self.nodes[a.0].value.iter().copied().sum();
        let rg = self.rg(a);
        self.push(ArrayD::from_elem(IxDyn(&[]), total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let n = F::from_usize(x.len().max(1)).unwrap();
        let total: F = x.iter().copied().sum();
        let rg = self.rg(a);
        self.push(ArrayD::from_elem(IxDyn(&[]), total / n), Op::Mean(a), rg)
    }

    fn activation_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize), NnError> {
        let shape = self.nodes[x.0].value.shape();
        if shape.len() != 3 || shape.iter().any(|&d| d == 0) {
            return Err(NnError::ShapeMismatch {
                op,
                expected: vec![0, 0, 0],
                actual: shape.to_vec(),
            });
        }
        Ok((shape[0], shape[1], shape[2]))
    }

    /// Stride-1 convolution with `(k - 1) / 2` zero padding per side, so the
    /// frame count is preserved. `kernel` is `(out, in, k)`, `bias` is `(out)`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var, NnError> {
        self.conv_impl(x, kernel, bias, false)
    }

    /// Transposed counterpart of [`Tape::conv1d`] with the same geometry.
    /// `kernel` is `(in, out, k)`; the map is the linear adjoint of
    /// `conv1d` with that kernel (plus bias).
    pub fn conv_transpose1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var, NnError> {
        self.conv_impl(x, kernel, bias, true)
    }

    fn conv_impl(&mut self, x: Var, kernel: Var, bias: Var, transposed: bool) -> Result<Var, NnError> {
        let op_name = if transposed { "conv_transpose1d" } else { "conv1d" };
        let (c, b, t) = self.activation_dims(op_name, x)?;
        let kshape = self.nodes[kernel.0].value.shape().to_vec();
        if kshape.len() != 3 || kshape[2] % 2 == 0 {
            return Err(NnError::ShapeMismatch {
                op: op_name,
                expected: vec![0, 0, 7],
                actual: kshape,
            });
        }
        let (k_in, k_out) = if transposed {
            (kshape[0], kshape[1])
        } else {
            (kshape[1], kshape[0])
        };
        let k = kshape[2];
        if k_in != c {
            return Err(NnError::ChannelMismatch {
                expected: k_in,
                actual: c,
            });
        }
        let bshape = self.nodes[bias.0].value.shape();
        if bshape != [k_out] {
            return Err(NnError::ShapeMismatch {
                op: op_name,
                expected: vec![k_out],
                actual: bshape.to_vec(),
            });
        }
        let ks = self.nodes[kernel.0].value.as_standard_layout();
        let xs = self.nodes[x.0].value.as_standard_layout();
        let (y, cols) = if transposed {
            // y = col2im(W^T x) with W viewed as (in, out * k)
            let w = ks.view().into_shape_with_order((c, k_out * k)).expect("contiguous kernel");
            let xm = xs.view().into_shape_with_order((c, b * t)).expect("contiguous input");
            let mut cols = Array2::<F>::zeros((k_out * k, b * t));
            general_mat_mul(F::one(), &w.t(), &xm, F::zero(), &mut cols);
            let y = col2im(cols.as_slice().expect("owned"), k_out, b, t, k);
            (Array2::from_shape_vec((k_out, b * t), y).expect("col2im shape"), None)
        } else {
            let w = ks.view().into_shape_with_order((k_out, c * k)).expect("contiguous kernel");
            let cols = im2col(xs.as_slice().expect("standard layout"), c, b, t, k);
            let mut y = Array2::<F>::zeros((k_out, b * t));
            general_mat_mul(F::one(), &w, &cols, F::zero(), &mut y);
            (y, Some(cols))
        };
        drop((ks, xs));
        let mut y = y;
        {
            let bv = &self.nodes[bias.0].value;
            for (mut row, &bo) in y.axis_iter_mut(Axis(0)).zip(bv.iter()) {
                row += bo;
            }
        }
        let y = y.into_shape_with_order(IxDyn(&[k_out, b, t])).expect("gemm output");
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            y,
            Op::Conv {
                x,
                kernel,
                bias,
                cols,
                k,
                transposed,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization over all frames of all batch items.
    ///
    /// Returns the batch moments when normalizing with batch statistics so
    /// the caller can update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, F>,
    ) -> Result<(Var, Option<BatchMoments<F>>), NnError> {
        let (c, b, t) = self.activation_dims("batch_norm", x)?;
        for p in [gamma, beta] {
            let sh = self.nodes[p.0].value.shape();
            if sh != [c] {
                return Err(NnError::ShapeMismatch {
                    op: "batch_norm",
                    expected: vec![c],
                    actual: sh.to_vec(),
                });
            }
        }
        let n = b * t;
        let nf = F::from_usize(n).unwrap();
        let xs = self.nodes[x.0].value.as_standard_layout().into_owned();
        let xsl = xs.as_slice().expect("standard layout");
        let gam: Vec<F> = self.nodes[gamma.0].value.iter().copied().collect();
        let bet: Vec<F> = self.nodes[beta.0].value.iter().copied().collect();
        let mut xhat = vec![F::zero(); c * n];
        let mut y = vec![F::zero(); c * n];
        let mut inv_std = Vec::with_capacity(c);
        let mut moments = None;
        match stats {
            NormStats::Batch { eps } => {
                let mut means = Vec::with_capacity(c);
                let mut vars = Vec::with_capacity(c);
                for ch in 0..c {
                    let seg = &xsl[ch * n..(ch + 1) * n];
                    let mean = seg.iter().copied().sum::<F>() / nf;
                    let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
                    let inv = F::one() / (var + eps).sqrt();
                    for j in 0..n {
                        let h = (seg[j] - mean) * inv;
                        xhat[ch * n + j] = h;
                        y[ch * n + j] = gam[ch] * h + bet[ch];
                    }
                    inv_std.push(inv);
                    means.push(mean);
                    vars.push(var);
                }
                moments = Some(BatchMoments {
                    mean: means,
                    var: vars,
                    count: n,
                });
            }
            NormStats::Running { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(NnError::ShapeMismatch {
                        op: "batch_norm",
                        expected: vec![c],
                        actual: vec![mean.len()],
                    });
                }
                for ch in 0..c {
                    let inv = F::one() / (var[ch] + eps).sqrt();
                    for j in 0..n {
                        let h = (xsl[ch * n + j] - mean[ch]) * inv;
                        xhat[ch * n + j] = h;
                        y[ch * n + j] = gam[ch] * h + bet[ch];
                    }
                    inv_std.push(inv);
                }
            }
        }
        let shape = IxDyn(&[c, b, t]);
        let y = ArrayD::from_shape_vec(shape.clone(), y).expect("shape");
        let xhat = ArrayD::from_shape_vec(shape, xhat).expect("shape");
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: moments.is_some(),
            },
            rg,
        );
        Ok((var, moments))
    }

    /// `ln(1 + e^x)`, evaluated as `max(x, 0) + ln(1 + e^-|x|)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    /// Subtracts, per batch item and channel, the mean over frames.
    pub fn eq_norm(&mut self, a: Var) -> Result<Var, NnError> {
        let (c, b, t) = self.activation_dims("eq_norm", a)?;
        let mut v = self.nodes[a.0].value.as_standard_layout().into_owned();
        let tf = F::from_usize(t).unwrap();
        {
            let sl = v.as_slice_mut().expect("standard layout");
            for row in sl.chunks_mut(t).take(c * b) {
                let mean = row.iter().copied().sum::<F>() / tf;
                row.iter_mut().for_each(|e| *e -= mean);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(v, Op::EqNorm(a), rg))
    }

    /// Batch items `start..start + len` of an activation.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (_, b, _) = self.activation_dims("slice_batch", x)?;
        if len == 0 || start + len > b {
            return Err(NnError::ShapeMismatch {
                op: "slice_batch",
                expected: vec![b],
                actual: vec![start + len],
            });
        }
        let v = self.nodes[x.0]
            .value
            .slice_each_axis(|ax| {
                if ax.axis.index() == 1 {
                    ndarray::Slice::from(start..start + len)
                } else {
                    ndarray::Slice::from(..)
                }
            })
            .to_owned();
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceBatch { x, start }, rg))
    }

    /// Concatenates activations along the batch axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let (c, _, t) = self.activation_dims("concat_batch", parts[0])?;
        for &p in parts {
            let (pc, _, pt) = self.activation_dims("concat_batch", p)?;
            if pc != c || pt != t {
                return Err(NnError::ShapeMismatch {
                    op: "concat_batch",
                    expected: vec![c, 0, t],
                    actual: vec![pc, 0, pt],
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatBatch(parts.to_vec()), rg))
    }

    /// Accumulates d(loss)/d(leaf) for every leaf that requires a gradient.
    /// The tape can be replayed only once.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.consumed {
            return Err(NnError::GraphConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::NotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(self.nodes[loss.0].value.raw_dim(), F::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &mut self.nodes[idx];
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            // Release saved buffers as soon as the node has been visited.
            let op = std::mem::replace(&mut node.op, Op::Leaf);
            let nodes = &self.nodes;
            let rg = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, d: ArrayD<F>| accumulate(&mut grads[v.0], d);
            match op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if rg(a) {
                        acc(a, g.clone());
                    }
                    if rg(b) {
                        acc(b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if rg(a) {
                        acc(a, g.clone());
                    }
                    if rg(b) {
                        acc(b, g.mapv(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        acc(a, &g * &nodes[b.0].value);
                    }
                    if rg(b) {
                        acc(b, &g * &nodes[a.0].value);
                    }
                }
                Op::Scale(a, c) => acc(a, g * c),
                Op::AddScalar(a) => acc(a, g),
                Op::Exp(a) => acc(a, g * &nodes[idx].value),
                Op::Square(a) => {
                    let two = F::from_f64_lossy(2.0);
                    let mut d = nodes[a.0].value.mapv(|x| two * x);
                    d *= &g;
                    acc(a, d);
                }
                Op::Sum(a) => {
                    let gs = g.iter().next().copied().unwrap_or_else(F::zero);
                    acc(a, ArrayD::from_elem(nodes[a.0].value.raw_dim(), gs));
                }
                Op::Mean(a) => {
                    let n = F::from_usize(nodes[a.0].value.len().max(1)).unwrap();
                    let gs = g.iter().next().copied().unwrap_or_else(F::zero) / n;
                    acc(a, ArrayD::from_elem(nodes[a.0].value.raw_dim(), gs));
                }
                Op::Conv {
                    x,
                    kernel,
                    bias,
                    cols,
                    k,
                    transposed,
                } => {
                    let gs = g.as_standard_layout();
                    let (o, b, t) = (gs.shape()[0], gs.shape()[1], gs.shape()[2]);
                    let g2 = gs.view().into_shape_with_order((o, b * t)).expect("contiguous grad");
                    let ks = nodes[kernel.0].value.as_standard_layout();
                    let c = nodes[x.0].value.shape()[0];
                    if rg(bias) {
                        acc(bias, g2.sum_axis(Axis(1)).into_dyn());
                    }
                    if transposed {
                        let w = ks.view().into_shape_with_order((c, o * k)).expect("contiguous kernel");
                        let gcols = im2col(gs.as_slice().expect("standard layout"), o, b, t, k);
                        if rg(kernel) {
                            let xs = nodes[x.0].value.as_standard_layout();
                            let xm = xs.view().into_shape_with_order((c, b * t)).expect("contiguous input");
                            let mut dw = Array2::<F>::zeros((c, o * k));
                            general_mat_mul(F::one(), &xm, &gcols.t(), F::zero(), &mut dw);
                            acc(kernel, dw.into_shape_with_order(IxDyn(&[c, o, k])).expect("shape"));
                        }
                        if rg(x) {
                            let mut dx = Array2::<F>::zeros((c, b * t));
                            general_mat_mul(F::one(), &w, &gcols, F::zero(), &mut dx);
                            acc(x, dx.into_shape_with_order(IxDyn(&[c, b, t])).expect("shape"));
                        }
                    } else {
                        let w = ks.view().into_shape_with_order((o, c * k)).expect("contiguous kernel");
                        let cols = cols.expect("saved columns");
                        if rg(kernel) {
                            let mut dw = Array2::<F>::zeros((o, c * k));
                            general_mat_mul(F::one(), &g2, &cols.t(), F::zero(), &mut dw);
                            acc(kernel, dw.into_shape_with_order(IxDyn(&[o, c, k])).expect("shape"));
                        }
                        if rg(x) {
                            let mut dcols = Array2::<F>::zeros((c * k, b * t));
                            general_mat_mul(F::one(), &w.t(), &g2, F::zero(), &mut dcols);
                            let dx = col2im(dcols.as_slice().expect("owned"), c, b, t, k);
                            acc(x, ArrayD::from_shape_vec(IxDyn(&[c, b, t]), dx).expect("shape"));
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gs = g.as_standard_layout();
                    let gsl = gs.as_slice().expect("standard layout");
                    let hsl = xhat.as_slice().expect("owned");
                    let c = inv_std.len();
                    let n = gsl.len() / c;
                    let nf = F::from_usize(n).unwrap();
                    let gam: Vec<F> = nodes[gamma.0].value.iter().copied().collect();
                    let mut dgamma = vec![F::zero(); c];
                    let mut dbeta = vec![F::zero(); c];
                    for ch in 0..c {
                        let gseg = &gsl[ch * n..(ch + 1) * n];
                        let hseg = &hsl[ch * n..(ch + 1) * n];
                        dbeta[ch] = gseg.iter().copied().sum();
                        dgamma[ch] = gseg.iter().zip(hseg).map(|(&a, &b)| a * b).sum();
                    }
                    if rg(x) {
                        let mut dx = vec![F::zero(); c * n];
                        for ch in 0..c {
                            let gseg = &gsl[ch * n..(ch + 1) * n];
                            let hseg = &hsl[ch * n..(ch + 1) * n];
                            let scale = gam[ch] * inv_std[ch];
                            let out = &mut dx[ch * n..(ch + 1) * n];
                            if batch_stats {
                                let mean_g = dbeta[ch] / nf;
                                let mean_gh = dgamma[ch] / nf;
                                for j in 0..n {
                                    out[j] = scale * (gseg[j] - mean_g - hseg[j] * mean_gh);
                                }
                            } else {
                                for j in 0..n {
                                    out[j] = scale * gseg[j];
                                }
                            }
                        }
                        acc(x, ArrayD::from_shape_vec(xhat.raw_dim(), dx).expect("shape"));
                    }
                    if rg(gamma) {
                        acc(gamma, ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).expect("shape"));
                    }
                    if rg(beta) {
                        acc(beta, ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).expect("shape"));
                    }
                }
                Op::Softplus(a) => {
                    let mut d = nodes[a.0].value.mapv(sigmoid);
                    d *= &g;
                    acc(a, d);
                }
                Op::EqNorm(a) => {
                    let mut d = g.as_standard_layout().into_owned();
                    let t = d.shape()[2];
                    let tf = F::from_usize(t).unwrap();
                    for row in d.as_slice_mut().expect("owned").chunks_mut(t) {
                        let mean = row.iter().copied().sum::<F>() / tf;
                        row.iter_mut().for_each(|e| *e -= mean);
                    }
                    acc(a, d);
                }
                Op::SliceBatch { x, start } => {
                    let len = g.shape()[1];
                    let mut d = ArrayD::<F>::zeros(nodes[x.0].value.raw_dim());
                    d.slice_mut(s![.., start..start + len, ..]).assign(&g);
                    acc(x, d);
                }
                Op::ConcatBatch(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.shape()[1];
                        if rg(p) {
                            acc(p, g.slice(s![.., offset..offset + len, ..]).to_owned().into_dyn());
                        }
                        offset += len;
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<F: Real>(slot: &mut Option<ArrayD<F>>, d: ArrayD<F>) {
    match slot {
        Some(existing) => *existing += &d,
        None => *slot = Some(d),
    }
}

pub(crate) fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `cols[(i * k + kk), b * t + tt] = x[i, b, tt + kk - pad]`, zero outside.
fn im2col<F: Real>(x: &[F], c: usize, b: usize, t: usize, k: usize) -> Array2<F> {
    let pad = (k - 1) / 2;
    let bt = b * t;
    let mut cols = vec![F::zero(); c * k * bt];
    for ci in 0..c {
        for kk in 0..k {
            let shift = kk as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (t as isize - shift).min(t as isize).max(0) as usize;
            if lo >= hi {
                continue;
            }
            let row = (ci * k + kk) * bt;
            for bi in 0..b {
                let src = &x[(ci * b + bi) * t..(ci * b + bi + 1) * t];
                let dst = &mut cols[row + bi * t..row + (bi + 1) * t];
                let s0 = (lo as isize + shift) as usize;
                dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            }
        }
    }
    Array2::from_shape_vec((c * k, bt), cols).expect("im2col shape")
}

fn col2im<F: Real>(cols: &[F], c: usize, b: usize, t: usize, k: usize) -> Vec<F> {
    let pad = (k - 1) / 2;
    let bt = b * t;
    let mut x = vec![F::zero(); c * b * t];
    for ci in 0..c {
        for kk in 0..k {
            let shift = kk as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (t as isize - shift).min(t as isize).max(0) as usize;
            if lo >= hi {
                continue;
            }
            let row = (ci * k + kk) * bt;
            for bi in 0..b {
                let src = &cols[row + bi * t..row + (bi + 1) * t];
                let dst = &mut x[(ci * b + bi) * t..(ci * b + bi + 1) * t];
                let d0 = (lo as isize + shift) as usize;
                for (d, &s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                    *d += s;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array3};

    fn act(c: usize, b: usize, t: usize, f: impl Fn(usize) -> f64) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[c, b, t]), (0..c * b * t).map(f).collect()).unwrap()
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr1(&[1.0, 2.0, 3.0]).into_dyn(), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().as_slice().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr1(&[1.0, 2.0]).into_dyn(), true);
        let sq = tape.square(x);
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().as_slice().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn double_backward_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr1(&[1.0]).into_dyn(), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(NnError::GraphConsumed)));
    }

    #[test]
    fn delta_kernel_conv_is_identity() {
        for transposed in [false, true] {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(act(1, 2, 9, |i| (i as f64).sin()));
            let mut kv = Array3::<f64>::zeros((1, 1, 7));
            kv[[0, 0, 3]] = 1.0;
            let k = tape.constant(kv.into_dyn());
            let b = tape.constant(arr1(&[0.0]).into_dyn());
            let y = if transposed {
                tape.conv_transpose1d(x, k, b).unwrap()
            } else {
                tape.conv1d(x, k, b).unwrap()
            };
            assert_eq!(tape.value(y), tape.value(x));
        }
    }

    #[test]
    fn conv_of_zero_input_is_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(ArrayD::zeros(IxDyn(&[3, 2, 5])));
        let k = tape.constant(Array3::from_elem((2, 3, 7), 0.3).into_dyn());
        let b = tape.constant(arr1(&[1.5, -2.0]).into_dyn());
        let y = tape.conv1d(x, k, b).unwrap();
        let y = tape.value(y);
        assert_eq!(y.shape(), &[2, 2, 5]);
        assert!(y.slice(s![0, .., ..]).iter().all(|&v| v == 1.5));
        assert!(y.slice(s![1, .., ..]).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(ArrayD::zeros(IxDyn(&[4, 1, 5])));
        let k = tape.constant(Array3::zeros((2, 3, 7)).into_dyn());
        let b = tape.constant(ArrayD::zeros(IxDyn(&[2])));
        assert!(matches!(
            tape.conv1d(x, k, b),
            Err(NnError::ChannelMismatch { expected: 3, actual: 4 })
        ));
    }

    #[test]
    fn softplus_asymptotes() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0f64);
        assert!(tiny > 0.0 && tiny < 1e-40);
    }

    #[test]
    fn eq_norm_hand_example() {
        let mut tape = Tape::<f64>::new();
        // [[1, 3], [2, 6]] as two channels, one batch item, two frames
        let x = tape.constant(ArrayD::from_shape_vec(IxDyn(&[2, 1, 2]), vec![1.0, 3.0, 2.0, 6.0]).unwrap());
        let y = tape.eq_norm(x).unwrap();
        assert_eq!(tape.value(y).as_slice().unwrap(), &[-1.0, 1.0, -2.0, 2.0]);
    }

    #[test]
    fn eq_norm_of_constant_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(ArrayD::from_elem(IxDyn(&[3, 2, 4]), 7.25));
        let y = tape.eq_norm(x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_running_stats_closed_form() {
        let mut tape = Tape::<f64>::new();
        let xv = act(2, 3, 4, |i| (i as f64 * 0.37).cos() * 3.0);
        let x = tape.constant(xv.clone());
        let g = tape.constant(arr1(&[2.0, 0.5]).into_dyn());
        let b = tape.constant(arr1(&[-1.0, 3.0]).into_dyn());
        let eps = 1e-5;
        let (y, moments) = tape
            .batch_norm(
                x,
                g,
                b,
                NormStats::Running {
                    mean: &[0.0, 0.0],
                    var: &[1.0, 1.0],
                    eps,
                },
            )
            .unwrap();
        assert!(moments.is_none());
        let y = tape.value(y);
        for ((c, bi, t), &v) in xv.into_dimensionality::<ndarray::Ix3>().unwrap().indexed_iter() {
            let (gamma, beta) = if c == 0 { (2.0, -1.0) } else { (0.5, 3.0) };
            let expect = gamma * v / (1.0f64 + eps).sqrt() + beta;
            assert!((y[[c, bi, t]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut tape = Tape::<f64>::new();
        let xv = act(2, 3, 2, |i| i as f64);
        let x = tape.leaf(xv.clone(), true);
        let a = tape.slice_batch(x, 0, 1).unwrap();
        let b = tape.slice_batch(x, 1, 2).unwrap();
        let y = tape.concat_batch(&[a, b]).unwrap();
        assert_eq!(tape.value(y), &xv);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&v| v == 1.0));
    }
}
