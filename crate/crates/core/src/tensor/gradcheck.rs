//! Central finite-difference gradient checks.
//!
//! The function under test maps inputs to an output tensor `y`; the checked
//! scalar is `Σ rᵢ·yᵢ` for fixed random weights `r`. The finite-difference
//! side evaluates that sum in `f64`, so outputs untouched by a perturbation
//! cancel exactly even when the graph runs in `f32`.
//!
//! Per-element error is `|analytic − numeric| / max(|analytic|, |numeric|, τ)`
//! with `τ = 1e-2 · max(1, maxⱼ |numericⱼ|)`, so entries that are tiny
//! relative to the gradient's scale are judged on absolute error. The
//! aggregate error is `‖analytic − numeric‖₂ / max(‖numeric‖₂, τ·√n)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Element, Graph, PadMode, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_element_error: f64,
    pub aggregate_error: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, element_tol: f64, aggregate_tol: f64) -> bool {
        self.max_element_error < element_tol && self.aggregate_error < aggregate_tol
    }
}

/// Compares graph gradients of `Σ rᵢ·f(inputs)ᵢ` with central differences of
/// step `eps`, for every input. Returns one report per input.
pub fn check<T, F>(inputs: &[Tensor<T>], eps: f64, f: F) -> Result<Vec<GradReport>>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let out = f(&mut g, &vars)?;
    let weights = random_tensor::<f64>(g.value(out).shape(), -1.0, 1.0, 0x9e37_79b9);
    let head = g.mul_const(out, &weights.cast())?;
    let loss = g.sum(head)?;
    g.backward(loss)?;

    let eval = |vals: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(weights.data()).map(|(y, r)| y.to_f64().unwrap() * r).sum())
    };

    let step = T::from_f64_lossy(eps);
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(*v) {
            Some(t) => t.data().iter().map(|x| x.to_f64().unwrap()).collect(),
            None => vec![0.0; inputs[i].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut work = inputs.to_vec();
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            // Divide by the step actually representable in T.
            let h = (orig + step).to_f64().unwrap() - (orig - step).to_f64().unwrap();
            numeric.push((plus - minus) / h);
        }
        reports.push(compare(&analytic, &numeric));
    }
    Ok(reports)
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradReport {
    let scale = numeric.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-2 * scale;
    let mut max_el = 0.0f64;
    let (mut diff2, mut norm2) = (0.0f64, 0.0f64);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let d = (a - n).abs();
        max_el = max_el.max(d / a.abs().max(n.abs()).max(floor));
        diff2 += d * d;
        norm2 += n * n;
    }
    let denom = norm2.sqrt().max(floor * (numeric.len() as f64).sqrt());
    let aggregate = diff2.sqrt() / denom;
    GradReport { max_element_error: max_el, aggregate_error: aggregate, checked: numeric.len() }
}

/// Uniform values in `[lo, hi)`.
pub fn random_tensor<T: Element>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.random_range(lo..hi)))
}

pub type Builder<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var> + Send + Sync>;

/// One differentiable op (or short chain) with its input shapes.
pub struct GradCase<T> {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub range: (f64, f64),
    /// Inputs are pushed at least this far from zero, for ops with a kink there.
    pub avoid_zero: f64,
    /// Chains of several ops; their single-precision differences are
    /// dominated by rounding, so only the double-precision sweep runs them.
    pub composite: bool,
    pub build: Builder<T>,
}

impl<T: Element> GradCase<T> {
    fn new(name: &'static str, shapes: &[&[usize]], range: (f64, f64), build: Builder<T>) -> Self {
        GradCase {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            range,
            avoid_zero: 0.0,
            composite: false,
            build,
        }
    }

    pub fn inputs(&self, seed: u64) -> Vec<Tensor<T>> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = random_tensor::<f64>(s, self.range.0, self.range.1, seed + i as u64);
                t.map(|v| if v.abs() < self.avoid_zero { self.avoid_zero.copysign(v) } else { v }).cast()
            })
            .collect()
    }

    /// Reports for every input of this case.
    pub fn run(&self, seed: u64, eps: f64) -> Result<Vec<GradReport>> {
        check(&self.inputs(seed), eps, &self.build)
    }
}

/// Every differentiable graph op, on shapes no larger than 2×4×8×8.
pub fn suite<T: Element>() -> Vec<GradCase<T>> {
    let t = T::from_f64_lossy;
    let mut cases = vec![
        GradCase::new(
            "conv2d reflect stride 1",
            &[&[2, 3, 6, 6], &[4, 3, 3, 3], &[4]],
            (-1.0, 1.0),
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1, PadMode::Reflect)),
        ),
        GradCase::new(
            "conv2d zero stride 2",
            &[&[1, 2, 8, 8], &[3, 2, 4, 4], &[3]],
            (-1.0, 1.0),
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1, PadMode::Zero)),
        ),
        GradCase::new(
            "conv2d pointwise",
            &[&[2, 4, 3, 5], &[2, 4, 1, 1], &[2]],
            (-1.0, 1.0),
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 0, PadMode::Zero)),
        ),
        GradCase::new("reflect pad", &[&[1, 2, 5, 6]], (-1.0, 1.0), Box::new(|g, v| g.pad(v[0], 2, PadMode::Reflect))),
        GradCase::new("zero pad", &[&[1, 2, 5, 6]], (-1.0, 1.0), Box::new(|g, v| g.pad(v[0], 1, PadMode::Zero))),
        GradCase::new("nearest upsample", &[&[2, 2, 3, 4]], (-1.0, 1.0), Box::new(|g, v| g.upsample_nearest(v[0], 2))),
        GradCase::new(
            "instance norm",
            &[&[2, 3, 4, 4], &[3], &[3]],
            (-1.0, 1.0),
            Box::new(|g, v| g.instance_norm(v[0], v[1], v[2], 1e-5)),
        ),
        GradCase::new("tanh", &[&[2, 4, 8, 8]], (-2.0, 2.0), Box::new(|g, v| g.activation(v[0], Activation::Tanh))),
        GradCase::new(
            "sigmoid",
            &[&[1, 2, 4, 4]],
            (-3.0, 3.0),
            Box::new(|g, v| g.activation(v[0], Activation::Sigmoid)),
        ),
        GradCase::new("relu", &[&[2, 2, 4, 4]], (-1.0, 1.0), Box::new(|g, v| g.activation(v[0], Activation::Relu))),
        GradCase::new(
            "leaky relu",
            &[&[2, 2, 4, 4]],
            (-1.0, 1.0),
            Box::new(|g, v| g.activation(v[0], Activation::LeakyRelu)),
        ),
        GradCase::new(
            "concat, sub, add, scale",
            &[&[1, 2, 4, 4], &[1, 3, 4, 4], &[1, 5, 4, 4]],
            (-1.0, 1.0),
            Box::new(move |g, v| {
                let c = g.concat_channels(v[0], v[1])?;
                let d = g.sub(c, v[2])?;
                let e = g.add(d, c)?;
                g.scale(e, t(0.7))
            }),
        ),
        GradCase::new("l1 loss", &[&[2, 3, 4, 4], &[2, 3, 4, 4]], (-1.0, 1.0), Box::new(|g, v| g.l1_loss(v[0], v[1]))),
        GradCase::new(
            "sum and mean",
            &[&[2, 3, 4, 4]],
            (-1.0, 1.0),
            Box::new(move |g, v| {
                let s = g.sum(v[0])?;
                let m = g.mean(v[0])?;
                g.weighted_sum(&[(s, t(0.3)), (m, t(2.0))])
            }),
        ),
        GradCase::new(
            "gan bce real and fake",
            &[&[1, 1, 2, 2]],
            (-4.0, 4.0),
            Box::new(move |g, v| {
                let a = g.gan_bce(v[0], true)?;
                let b = g.gan_bce(v[0], false)?;
                g.weighted_sum(&[(a, T::one()), (b, t(0.5))])
            }),
        ),
        GradCase::new(
            "conv, norm, tanh, upsample, strided conv",
            &[&[1, 2, 8, 8], &[4, 2, 3, 3], &[4], &[4], &[4], &[1, 4, 5, 5], &[1]],
            (-1.0, 1.0),
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 1, PadMode::Reflect)?;
                let y = g.instance_norm(y, v[3], v[4], 1e-5)?;
                let y = g.activation(y, Activation::Tanh)?;
                let y = g.upsample_nearest(y, 2)?;
                g.conv2d(y, v[5], v[6], 2, 2, PadMode::Zero)
            }),
        ),
    ];
    for c in &mut cases {
        c.avoid_zero = if c.name.contains("relu") { 0.05 } else { 0.0 };
        c.composite = c.shapes.len() > 5;
    }
    cases
}
