use super::kernels::{self, ConvGeom, Dims};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Reflect,
    Zero,
}

/// Elementwise nonlinearity. At a kink the subgradient is the negative-side
/// slope (0 for ReLU, 0.2 for leaky ReLU).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Negative slope fixed at [`Activation::LEAKY_SLOPE`].
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.2;

    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64_lossy(Self::LEAKY_SLOPE)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(Self::LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Pad { input: Var, pad: usize, mode: PadMode },
    Conv { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Upsample { input: Var, factor: usize },
    InstanceNorm { input: Var, gain: Var, shift: Var, normalized: Vec<T>, inv_std: Vec<T> },
    Act { input: Var, kind: Activation },
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    L1 { a: Var, b: Var },
    Bce { logits: Var, target: T },
    Sum(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed operations. Nodes are appended in execution order, which
/// is a topological order; [`Graph::backward`] walks it once in reverse.
///
/// `backward` may run once per graph. A second call is an error rather than
/// an accumulation, so stale gradients never leak between steps.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backpropagated: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backpropagated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad;
        let value = Tensor { grad: None, ..tensor };
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let value = Tensor { requires_grad: false, grad: None, ..tensor };
        self.push_node(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a new gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor { shape: self.nodes[v.0].value.shape.clone(), data: g.clone(), requires_grad: false, grad: None })
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        let value = Tensor { shape, data, requires_grad: false, grad: None };
        Ok(self.push_node(value, op, requires_grad))
    }

    fn dims(&self, v: Var) -> Result<Dims> {
        let (n, c, h, w) = self.value(v).dims4()?;
        Ok(Dims { n, c, h, w })
    }

    pub fn pad(&mut self, input: Var, pad: usize, mode: PadMode) -> Result<Var> {
        let d = self.dims(input)?;
        if pad == 0 {
            return Ok(input);
        }
        if mode == PadMode::Reflect && (pad >= d.h || pad >= d.w) {
            return Err(Error::arg(format!("reflect padding {pad} needs spatial size > {pad}, got {}×{}", d.h, d.w)));
        }
        let data = kernels::pad_forward(self.value(input).data(), d, pad, mode);
        let shape = vec![d.n, d.c, d.h + 2 * pad, d.w + 2 * pad];
        self.push(shape, data, Op::Pad { input, pad, mode }, &[input], "pad")
    }

    /// 2-D cross-correlation with square kernels.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let d = self.dims(input)?;
        let (c_out, c_in, kh, kw) = self.value(weight).dims4()?;
        if c_in != d.c {
            return Err(Error::dim(format!("conv2d: input has {} channels, weight expects {c_in}", d.c)));
        }
        if kh != kw {
            return Err(Error::dim(format!("conv2d: non-square kernel {kh}×{kw}")));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(Error::dim(format!("conv2d: bias shape {:?}, expected [{c_out}]", self.value(bias).shape())));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d: stride must be ≥ 1"));
        }
        if kh > d.h + 2 * padding || kw > d.w + 2 * padding {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh} larger than padded input {}×{}",
                d.h + 2 * padding,
                d.w + 2 * padding
            )));
        }
        let padded = self.pad(input, padding, mode)?;
        let pd = self.dims(padded)?;
        let geom = ConvGeom { input: pd, c_out, k: kh, stride };
        let data =
            kernels::conv_forward(self.value(padded).data(), self.value(weight).data(), self.value(bias).data(), &geom);
        let shape = vec![d.n, c_out, geom.out_h(), geom.out_w()];
        self.push(shape, data, Op::Conv { input: padded, weight, bias, geom }, &[padded, weight, bias], "conv2d")
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::arg("upsample factor must be ≥ 1"));
        }
        let d = self.dims(input)?;
        let data = kernels::upsample_forward(self.value(input).data(), d, factor);
        let shape = vec![d.n, d.c, d.h * factor, d.w * factor];
        self.push(shape, data, Op::Upsample { input, factor }, &[input], "upsample")
    }

    /// Per-plane normalization followed by a per-channel affine map.
    pub fn instance_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let d = self.dims(input)?;
        let m = d.plane();
        if m < 2 {
            return Err(Error::arg(format!("instance_norm needs H·W ≥ 2, got {m}")));
        }
        for (name, v) in [("gain", gain), ("shift", shift)] {
            if self.value(v).shape() != [d.c] {
                return Err(Error::dim(format!(
                    "instance_norm: {name} shape {:?}, expected [{}]",
                    self.value(v).shape(),
                    d.c
                )));
            }
        }
        let x = self.value(input).data();
        let (g, s) = (self.value(gain).data(), self.value(shift).data());
        let eps = T::from_f64_lossy(eps);
        let mf = T::from_usize(m).unwrap();
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(d.n * d.c);
        let mut out = vec![T::zero(); x.len()];
        for (p, ((xp, np), op)) in
            x.chunks_exact(m).zip(normalized.chunks_exact_mut(m)).zip(out.chunks_exact_mut(m)).enumerate()
        {
            let c = p % d.c;
            let mean = xp.iter().fold(T::zero(), |a, &v| a + v) / mf;
            let var = xp.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / mf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for ((&xv, nv), ov) in xp.iter().zip(np.iter_mut()).zip(op.iter_mut()) {
                *nv = (xv - mean) * is;
                *ov = g[c] * *nv + s[c];
            }
        }
        let shape = self.value(input).shape().to_vec();
        self.push(
            shape,
            out,
            Op::InstanceNorm { input, gain, shift, normalized, inv_std },
            &[input, gain, shift],
            "instance_norm",
        )
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let t = self.value(input);
        let data = t.data().iter().map(|&v| kind.apply(v)).collect();
        let shape = t.shape().to_vec();
        self.push(shape, data, Op::Act { input, kind }, &[input], "activation")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T, name: &str) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, data, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y, "sub")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, data, Op::Scale(a, s), &[a], "scale")
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, weights: &Tensor<T>) -> Result<Var> {
        if self.value(a).shape() != weights.shape() {
            return Err(Error::dim(format!(
                "mul_const: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                weights.shape()
            )));
        }
        let data = self.value(a).data().iter().zip(weights.data()).map(|(&x, &w)| x * w).collect();
        let shape = weights.shape().to_vec();
        self.push(shape, data, Op::MulConst(a, weights.data().to_vec()), &[a], "mul_const")
    }

    /// Concatenation along the channel axis of two N×C×H×W tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a)?, self.dims(b)?);
        if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
            return Err(Error::dim(format!(
                "concat: {:?} and {:?} disagree outside the channel axis",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let m = da.plane();
        let mut data = Vec::with_capacity((da.c + db.c) * m * da.n);
        for n in 0..da.n {
            data.extend_from_slice(&self.value(a).data()[n * da.c * m..(n + 1) * da.c * m]);
            data.extend_from_slice(&self.value(b).data()[n * db.c * m..(n + 1) * db.c * m]);
        }
        let shape = vec![da.n, da.c + db.c, da.h, da.w];
        self.push(shape, data, Op::Concat(a, b), &[a, b], "concat")
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let total = x.iter().zip(y).fold(T::zero(), |acc, (&p, &q)| acc + (p - q).abs());
        let v = total / T::from_usize(x.len()).unwrap();
        self.push(vec![1], vec![v], Op::L1 { a, b }, &[a, b], "l1_loss")
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against a constant
    /// real/fake target, in the overflow-free logit form.
    pub fn gan_bce(&mut self, logits: Var, target_is_real: bool) -> Result<Var> {
        let t = if target_is_real { T::one() } else { T::zero() };
        let z = self.value(logits).data();
        let total = z.iter().fold(T::zero(), |acc, &v| acc + bce_with_logits(v, t));
        let v = total / T::from_usize(z.len()).unwrap();
        self.push(vec![1], vec![v], Op::Bce { logits, target: t }, &[logits], "gan_bce")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(vec![1], vec![v], Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = t.data().iter().fold(T::zero(), |acc, &x| acc + x) / T::from_usize(t.numel()).unwrap();
        self.push(vec![1], vec![v], Op::Mean(a), &[a], "mean")
    }

    /// `Σ wᵢ·termᵢ` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut v = T::zero();
        for &(t, w) in terms {
            if !self.value(t).is_scalar() {
                return Err(Error::dim("weighted_sum terms must be scalars"));
            }
            v = v + w * self.value(t).item();
        }
        let inputs: Vec<Var> = terms.iter().map(|&(t, _)| t).collect();
        self.push(vec![1], vec![v], Op::WeightedSum(terms.to_vec()), &inputs, "weighted_sum")
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar `loss`, filling gradients for every node
    /// that requires one and is reachable.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(Error::Backward("backward already ran on this graph".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::arg(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())));
        }
        self.backpropagated = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_node(idx, &op, &g);
            self.nodes[idx].op = op;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, idx: usize, op: &Op<T>, g: &[T]) {
        let rg = |s: &Self, v: Var| s.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            &Op::Pad { input, pad, mode } => {
                let d = self.dims(input).expect("validated in forward");
                let gx = kernels::pad_backward(g, d, pad, mode);
                self.accumulate(input, gx);
            }
            &Op::Conv { input, weight, bias, geom } => {
                let need = (rg(self, input), rg(self, weight), rg(self, bias));
                let grads = kernels::conv_backward(self.value(input).data(), self.value(weight).data(), g, &geom, need);
                if let Some(gx) = grads.input {
                    self.accumulate(input, gx);
                }
                if let Some(gw) = grads.weight {
                    self.accumulate(weight, gw);
                }
                if let Some(gb) = grads.bias {
                    self.accumulate(bias, gb);
                }
            }
            &Op::Upsample { input, factor } => {
                let d = self.dims(input).expect("validated in forward");
                let gx = kernels::upsample_backward(g, d, factor);
                self.accumulate(input, gx);
            }
            Op::InstanceNorm { input, gain, shift, normalized, inv_std } => {
                let (input, gain, shift) = (*input, *gain, *shift);
                let d = self.dims(input).expect("validated in forward");
                let m = d.plane();
                let mf = T::from_usize(m).unwrap();
                let gains = self.value(gain).data();
                let mut gx = vec![T::zero(); g.len()];
                let mut g_gain = vec![T::zero(); d.c];
                let mut g_shift = vec![T::zero(); d.c];
                for (p, ((gp, np), xp)) in
                    g.chunks_exact(m).zip(normalized.chunks_exact(m)).zip(gx.chunks_exact_mut(m)).enumerate()
                {
                    let c = p % d.c;
                    let (mut sum_g, mut sum_gn) = (T::zero(), T::zero());
                    for (&gv, &nv) in gp.iter().zip(np) {
                        sum_g = sum_g + gv;
                        sum_gn = sum_gn + gv * nv;
                    }
                    g_shift[c] = g_shift[c] + sum_g;
                    g_gain[c] = g_gain[c] + sum_gn;
                    let scale = gains[c] * inv_std[p] / mf;
                    for ((&gv, &nv), xv) in gp.iter().zip(np).zip(xp.iter_mut()) {
                        *xv = scale * (mf * gv - sum_g - nv * sum_gn);
                    }
                }
                self.accumulate(input, gx);
                self.accumulate(gain, g_gain);
                self.accumulate(shift, g_shift);
            }
            &Op::Act { input, kind } => {
                let x = self.value(input).data();
                let y = self.nodes[idx].value.data();
                let gx = g.iter().zip(x.iter().zip(y)).map(|(&gv, (&xv, &yv))| gv * kind.derivative(xv, yv)).collect();
                self.accumulate(input, gx);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|&v| -v).collect());
            }
            &Op::Concat(a, b) => {
                let (da, db) = (self.dims(a).unwrap(), self.dims(b).unwrap());
                let m = da.plane();
                let (mut ga, mut gb) = (Vec::with_capacity(da.n * da.c * m), Vec::with_capacity(db.n * db.c * m));
                for chunk in g.chunks_exact((da.c + db.c) * m) {
                    ga.extend_from_slice(&chunk[..da.c * m]);
                    gb.extend_from_slice(&chunk[da.c * m..]);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Scale(a, s) => {
                self.accumulate(a, g.iter().map(|&v| v * s).collect());
            }
            Op::MulConst(a, w) => {
                self.accumulate(*a, g.iter().zip(w).map(|(&v, &wi)| v * wi).collect());
            }
            &Op::L1 { a, b } => {
                let n = T::from_usize(self.value(a).numel()).unwrap();
                let scale = g[0] / n;
                let ga: Vec<T> =
                    self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| scale * sign(x - y)).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Bce { logits, target } => {
                let z = self.value(logits).data();
                let scale = g[0] / T::from_usize(z.len()).unwrap();
                let gz = z.iter().map(|&v| scale * (sigmoid(v) - target)).collect();
                self.accumulate(logits, gz);
            }
            &Op::Sum(a) => {
                let n = self.value(a).numel();
                self.accumulate(a, vec![g[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.value(a).numel();
                self.accumulate(a, vec![g[0] / T::from_usize(n).unwrap(); n]);
            }
            Op::WeightedSum(terms) => {
                for &(t, w) in terms {
                    self.accumulate(t, vec![g[0] * w]);
                }
            }
        }
    }
}

fn sign<T: Element>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `max(z,0) − z·t + log(1 + e^{−|z|})`
pub(crate) fn bce_with_logits<T: Element>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()
}
