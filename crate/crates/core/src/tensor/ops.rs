use super::fft::Sign;
use super::kernels;
use super::{numel_of, DType, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Captured values are whatever the backward rule needs
/// beyond the input and output tensors themselves.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    Permute(Vec<usize>),
    Reshape,
    BroadcastTo,
    SumTo,
    SumAxis,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
    Gelu,
    SoftShrink(f64),
    ClampMin(f64),
    Softmax(usize),
    Concat { axis: usize, sizes: Vec<usize> },
    Slice { axis: usize, start: usize },
    Pad { axis: usize, start: usize },
    Complex,
    Real,
    Imag,
    Fourier { axes: Vec<usize>, sign: Sign, scale: f64 },
    Norm { keep: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::Permute(_) => "permute",
            Op::Reshape => "reshape",
            Op::BroadcastTo => "broadcast_to",
            Op::SumTo => "sum_to",
            Op::SumAxis => "sum_axis",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::SoftShrink(_) => "soft_shrink",
            Op::ClampMin(_) => "clamp_min",
            Op::Softmax(_) => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Complex => "complex",
            Op::Real => "real",
            Op::Imag => "imag",
            Op::Fourier { .. } => "fourier",
            Op::Norm { .. } => "norm",
        }
    }

    /// Whether the backward rule is expressed in recordable ops.
    pub(crate) fn supports_higher_order(&self) -> bool {
        !matches!(self, Op::Gelu)
    }

    /// Gradients with respect to each input (None where not needed).
    pub(crate) fn backward(&self, inputs: &[Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let need = |i: usize| needs.get(i).copied().unwrap_or(false);
        let x = inputs.first();
        let grads = match self {
            Op::Leaf => vec![],
            Op::Add => {
                let (a, b) = (&inputs[0], &inputs[1]);
                vec![
                    opt(need(0), || g.sum_to(a.shape()))?,
                    opt(need(1), || g.sum_to(b.shape()))?,
                ]
            }
            Op::Sub => {
                let (a, b) = (&inputs[0], &inputs[1]);
                vec![
                    opt(need(0), || g.sum_to(a.shape()))?,
                    opt(need(1), || g.neg().sum_to(b.shape()))?,
                ]
            }
            Op::Mul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                vec![
                    opt(need(0), || g.mul(b)?.sum_to(a.shape()))?,
                    opt(need(1), || g.mul(a)?.sum_to(b.shape()))?,
                ]
            }
            Op::Div => {
                let (a, b) = (&inputs[0], &inputs[1]);
                vec![
                    opt(need(0), || g.div(b)?.sum_to(a.shape()))?,
                    opt(need(1), || g.mul(out)?.div(b)?.neg().sum_to(b.shape()))?,
                ]
            }
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::AddScalar => vec![Some(g.clone())],
            Op::MatMul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = opt(need(0), || g.matmul(&b.transpose_last()?)?.sum_to(a.shape()))?;
                let gb = opt(need(1), || {
                    if b.rank() == 2 && a.rank() > 2 {
                        let k = a.dim(a.rank() - 1);
                        let n = g.dim(g.rank() - 1);
                        let rows = a.numel() / k;
                        let a2 = a.reshape(&[rows, k])?;
                        let g2 = g.reshape(&[rows, n])?;
                        a2.transpose_last()?.matmul(&g2)
                    } else {
                        a.transpose_last()?.matmul(g)?.sum_to(b.shape())
                    }
                })?;
                vec![ga, gb]
            }
            Op::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![Some(g.permute(&inv)?)]
            }
            Op::Reshape => vec![Some(g.reshape(x.unwrap().shape())?)],
            Op::BroadcastTo => vec![Some(g.sum_to(x.unwrap().shape())?)],
            Op::SumTo => vec![Some(g.broadcast_to(x.unwrap().shape())?)],
            Op::SumAxis => vec![Some(g.broadcast_to(x.unwrap().shape())?)],
            Op::Exp => vec![Some(g.mul(out)?)],
            Op::Log => vec![Some(g.div(x.unwrap())?)],
            Op::Sqrt => vec![Some(g.div(out)?.scale(0.5))],
            Op::Tanh => {
                let d = out.mul(out)?.neg().add_scalar(1.0);
                vec![Some(g.mul(&d)?)]
            }
            Op::Sigmoid => {
                let d = out.mul(&out.neg().add_scalar(1.0))?;
                vec![Some(g.mul(&d)?)]
            }
            Op::Relu => {
                let mask = x.unwrap().map_const(|v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::SoftShrink(a) => {
                let a = *a;
                let mask = x.unwrap().map_const(|v| if v.abs() > a { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::ClampMin(lo) => {
                let lo = *lo;
                let mask = x.unwrap().map_const(|v| if v > lo { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::Gelu => {
                let d = x.unwrap().map_const(gelu_grad);
                vec![Some(g.mul(&d)?)]
            }
            Op::Softmax(axis) => {
                let gy = g.mul(out)?;
                let s = gy.sum_axis(*axis)?;
                vec![Some(out.mul(&g.sub(&s)?)?)]
            }
            Op::Concat { axis, sizes } => {
                let mut start = 0;
                let mut v = Vec::with_capacity(sizes.len());
                for (i, &len) in sizes.iter().enumerate() {
                    v.push(opt(need(i), || g.slice(*axis, start, len))?);
                    start += len;
                }
                v
            }
            Op::Slice { axis, start } => {
                let total = x.unwrap().dim(*axis);
                vec![Some(g.pad(*axis, *start, total)?)]
            }
            Op::Pad { axis, start } => {
                let len = x.unwrap().dim(*axis);
                vec![Some(g.slice(*axis, *start, len)?)]
            }
            Op::Complex => vec![opt(need(0), || g.real())?, opt(need(1), || g.imag())?],
            Op::Real => vec![Some(Tensor::complex(g, &g.zeros_like())?)],
            Op::Imag => vec![Some(Tensor::complex(&g.zeros_like(), g)?)],
            Op::Fourier { axes, sign, scale } => {
                let adj = g.fourier(axes, sign.flip(), *scale)?;
                if x.unwrap().is_complex() {
                    vec![Some(adj)]
                } else {
                    vec![Some(adj.real()?)]
                }
            }
            Op::Norm { keep } => {
                let x = x.unwrap();
                let mut bshape = out.shape().to_vec();
                bshape.resize(x.rank(), 1);
                let mask = out.map_const(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let safe = out.add(&mask.neg().add_scalar(1.0))?;
                let coef = g.mul(&mask)?.div(&safe)?.reshape(&bshape)?;
                debug_assert_eq!(out.rank(), *keep);
                vec![Some(x.mul(&coef)?)]
            }
        };
        Ok(grads)
    }
}

fn opt(need: bool, f: impl FnOnce() -> Result<Tensor>) -> Result<Option<Tensor>> {
    if need {
        f().map(Some)
    } else {
        Ok(None)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn normalize_axis(axis: isize, rank: usize, op: &'static str) -> Result<usize> {
    let a = if axis < 0 { axis + rank as isize } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(Error::invalid(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

impl Tensor {
    fn require_real(&self, op: &'static str) -> Result<()> {
        if self.is_complex() {
            return Err(Error::invalid(op, "complex input not supported"));
        }
        Ok(())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        assert!(!self.is_complex(), "{} on complex tensor", op.name());
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), DType::Real, op, &[self])
    }

    /// Elementwise map producing an untracked constant.
    pub(crate) fn map_const(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_parts(data, self.shape().to_vec(), self.dtype(), None)
    }

    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let name = op.name();
        if self.is_complex() || other.is_complex() {
            let complex_ok = matches!(op, Op::Add | Op::Sub);
            if !complex_ok || self.dtype() != other.dtype() || self.shape() != other.shape() {
                return Err(Error::invalid(name, "complex operands must match in shape and dtype"));
            }
            let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_op(data, self.shape().to_vec(), DType::Complex, op, &[self, other]));
        }
        let out = kernels::broadcast_shape(self.shape(), other.shape())
            .ok_or_else(|| Error::shape(name, self.shape(), other.shape()))?;
        let data = kernels::binary(self.data(), self.shape(), other.data(), other.shape(), &out, f);
        Ok(Tensor::from_op(data, out, DType::Real, op, &[self, other]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        let data = self.data().iter().map(|v| -v).collect();
        Tensor::from_op(data, self.shape().to_vec(), self.dtype(), Op::Neg, &[self])
    }

    /// Multiplication by a constant scalar (real or complex tensors).
    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), self.dtype(), Op::Scale(c), &[self])
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::AddScalar, |v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |v| if v <= 0.0 { 0.0 } else { v })
    }

    /// Tanh-approximation GELU. First-order only.
    pub fn gelu(&self) -> Tensor {
        self.unary(Op::Gelu, gelu)
    }

    /// `sgn(x) max(|x| - a, 0)` elementwise; the subgradient at `|x| = a` is 0.
    pub fn soft_shrink(&self, a: f64) -> Result<Tensor> {
        if !(a >= 0.0) {
            return Err(Error::Config(format!("soft-shrink level must be >= 0, got {a}")));
        }
        self.require_real("soft_shrink")?;
        Ok(self.unary(Op::SoftShrink(a), |v| if v.abs() <= a { 0.0 } else { v.signum() * (v.abs() - a) }))
    }

    pub fn clamp_min(&self, lo: f64) -> Tensor {
        self.unary(Op::ClampMin(lo), |v| if v < lo { lo } else { v })
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.require_real("matmul")?;
        other.require_real("matmul")?;
        let (data, shape) = kernels::matmul(self.data(), self.shape(), other.data(), other.shape())
            .ok_or_else(|| Error::shape("matmul", self.shape(), other.shape()))?;
        Ok(Tensor::from_op(data, shape, DType::Real, Op::MatMul, &[self, other]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        if perm.len() != self.rank() || perm.iter().any(|&p| p >= self.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of rank {}", self.rank())));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let (data, shape) = kernels::permute(self.data(), self.shape(), perm, self.dtype().width());
        Ok(Tensor::from_op(data, shape, self.dtype(), Op::Permute(perm.to_vec()), &[self]))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::invalid("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        let node = Tensor::make_node(Op::Reshape, &[self]);
        Ok(self.share_buffer(shape.to_vec(), node))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        self.require_real("broadcast_to")?;
        match kernels::broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::shape("broadcast_to", self.shape(), shape)),
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let data = kernels::broadcast_to(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(data, shape.to_vec(), DType::Real, Op::BroadcastTo, &[self]))
    }

    /// Sums over broadcast axes so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        self.require_real("sum_to")?;
        match kernels::broadcast_shape(shape, self.shape()) {
            Some(s) if s == self.shape() => {}
            _ => return Err(Error::shape("sum_to", self.shape(), shape)),
        }
        let data = kernels::sum_to(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(data, shape.to_vec(), DType::Real, Op::SumTo, &[self]))
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel().max(1) as f64;
        Ok(self.sum()?.scale(1.0 / n))
    }

    /// Sum along `axis`, keeping it as a unit axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.require_real("sum_axis")?;
        if axis >= self.rank() {
            return Err(Error::invalid("sum_axis", format!("axis {axis} for rank {}", self.rank())));
        }
        let data = kernels::sum_axis(self.data(), self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(data, shape, DType::Real, Op::SumAxis, &[self]))
    }

    /// Mean along `axis`, keeping it as a unit axis.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.dim(axis) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    pub fn softmax(&self, axis: isize) -> Result<Tensor> {
        self.require_real("softmax")?;
        let axis = normalize_axis(axis, self.rank(), "softmax")?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let data = kernels::softmax(self.data(), self.shape(), axis);
        Ok(Tensor::from_op(data, self.shape().to_vec(), DType::Real, Op::Softmax(axis), &[self]))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::invalid("concat", format!("axis {axis} for rank {}", first.rank())));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.dtype() == first.dtype()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let views: Vec<(&[f64], &[usize])> = parts.iter().map(|p| (p.data(), p.shape())).collect();
        let data = kernels::concat_axis(&views, axis, first.dtype().width());
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let mut shape = first.shape().to_vec();
        shape[axis] = sizes.iter().sum();
        Ok(Tensor::from_op(data, shape, first.dtype(), Op::Concat { axis, sizes }, parts))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.dim(axis) {
            return Err(Error::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        if start == 0 && len == self.dim(axis) {
            return Ok(self.clone());
        }
        let data = kernels::slice_axis(self.data(), self.shape(), axis, start, len, self.dtype().width());
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, self.dtype(), Op::Slice { axis, start }, &[self]))
    }

    /// Zero-embeds along `axis` into length `total` at offset `start`.
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + self.dim(axis) > total {
            return Err(Error::invalid("pad", format!("cannot place {:?} at {start} in {total}", self.shape())));
        }
        let data = kernels::pad_axis(self.data(), self.shape(), axis, start, total, self.dtype().width());
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(data, shape, self.dtype(), Op::Pad { axis, start }, &[self]))
    }

    /// Joins real and imaginary parts into a complex tensor.
    pub fn complex(re: &Tensor, im: &Tensor) -> Result<Tensor> {
        re.require_real("complex")?;
        im.require_real("complex")?;
        if re.shape() != im.shape() {
            return Err(Error::shape("complex", re.shape(), im.shape()));
        }
        let mut data = Vec::with_capacity(2 * re.numel());
        for (&a, &b) in re.data().iter().zip(im.data()) {
            data.push(a);
            data.push(b);
        }
        Ok(Tensor::from_op(data, re.shape().to_vec(), DType::Complex, Op::Complex, &[re, im]))
    }

    pub fn real(&self) -> Result<Tensor> {
        if !self.is_complex() {
            return Err(Error::invalid("real", "tensor is not complex"));
        }
        let data = self.data().iter().step_by(2).copied().collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), DType::Real, Op::Real, &[self]))
    }

    pub fn imag(&self) -> Result<Tensor> {
        if !self.is_complex() {
            return Err(Error::invalid("imag", "tensor is not complex"));
        }
        let data = self.data().iter().skip(1).step_by(2).copied().collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), DType::Real, Op::Imag, &[self]))
    }

    /// Scaled multi-axis DFT; real inputs are promoted to complex.
    pub fn fourier(&self, axes: &[usize], sign: Sign, scale: f64) -> Result<Tensor> {
        if axes.iter().any(|&a| a >= self.rank()) {
            return Err(Error::invalid("fourier", format!("axes {axes:?} for rank {}", self.rank())));
        }
        let promoted;
        let src = if self.is_complex() {
            self.data()
        } else {
            promoted = self.data().iter().flat_map(|&v| [v, 0.0]).collect::<Vec<_>>();
            &promoted[..]
        };
        let data = kernels::fourier(src, self.shape(), axes, sign, scale);
        let op = Op::Fourier {
            axes: axes.to_vec(),
            sign,
            scale,
        };
        Ok(Tensor::from_op(data, self.shape().to_vec(), DType::Complex, op, &[self]))
    }

    fn grid_axes(&self, op: &'static str) -> Result<[usize; 2]> {
        if self.rank() < 3 {
            return Err(Error::invalid(op, format!("need layout (.., N, T, d), got {:?}", self.shape())));
        }
        let r = self.rank();
        Ok([r - 3, r - 2])
    }

    /// Unnormalized 2-D DFT over the (N, T) axes of a (.., N, T, d) tensor.
    pub fn dft2(&self) -> Result<Tensor> {
        let axes = self.grid_axes("dft2")?;
        self.fourier(&axes, Sign::Forward, 1.0)
    }

    /// Inverse of [`Tensor::dft2`], carrying the 1/(N T) factor.
    pub fn idft2(&self) -> Result<Tensor> {
        let axes = self.grid_axes("idft2")?;
        let n = (self.dim(axes[0]) * self.dim(axes[1])) as f64;
        self.fourier(&axes, Sign::Backward, 1.0 / n)
    }

    /// Euclidean norm over all axes from `keep` onward; result has shape `shape[..keep]`.
    pub fn norm_from(&self, keep: usize) -> Result<Tensor> {
        self.require_real("norm")?;
        if keep > self.rank() {
            return Err(Error::invalid("norm", format!("keep {keep} > rank {}", self.rank())));
        }
        let lead: usize = self.shape()[..keep].iter().product();
        let chunk = self.numel() / lead.max(1);
        let data = if chunk == 0 {
            vec![0.0; lead]
        } else {
            self.data()
                .chunks(chunk)
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect()
        };
        Ok(Tensor::from_op(data, self.shape()[..keep].to_vec(), DType::Real, Op::Norm { keep }, &[self]))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(Error::shape("mse", self.shape(), target.shape()));
        }
        let d = self.sub(target)?;
        d.mul(&d)?.mean()
    }
}
