//! The artifact disentanglement network.
//!
//! Seven networks share one named parameter collection: the clean encoder
//! `E_I`, the content and artifact encoders `E_c`/`E_a` of the
//! artifact-affected domain, the decoders `G_I`/`G_a`, and the patch
//! discriminators `D_I`/`D_a`. A [`Session`] binds parameters into a
//! [`Graph`] on first use, so one graph can run any combination of paths and
//! shared networks receive accumulated gradients.

mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Element, Graph, PadMode, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// Network prefixes, in parameter-name order.
pub const NETWORKS: [&str; 7] = ["D_I", "D_a", "E_I", "E_a", "E_c", "G_I", "G_a"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdnConfig {
    /// Channels of the first block; later blocks use 2× and 4×.
    pub width: usize,
    pub res_blocks: usize,
}

impl Default for AdnConfig {
    fn default() -> Self {
        AdnConfig { width: 64, res_blocks: 4 }
    }
}

impl AdnConfig {
    pub fn code_channels(&self) -> usize {
        4 * self.width
    }

    pub fn pyramid_channels(&self) -> [usize; 3] {
        [self.width, 2 * self.width, 4 * self.width]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    k: usize,
}

fn conv_specs(cfg: AdnConfig) -> Vec<(String, ConvSpec, bool)> {
    let w = cfg.width;
    let mut out = Vec::new();
    let mut conv = |name: String, c_in, c_out, k, norm| out.push((name, ConvSpec { c_in, c_out, k }, norm));
    for net in ["E_I", "E_c"] {
        conv(format!("{net}/down0"), 1, w, 7, true);
        conv(format!("{net}/down1"), w, 2 * w, 4, true);
        conv(format!("{net}/down2"), 2 * w, 4 * w, 4, true);
        for r in 0..cfg.res_blocks {
            conv(format!("{net}/res{r}/conv0"), 4 * w, 4 * w, 3, true);
            conv(format!("{net}/res{r}/conv1"), 4 * w, 4 * w, 3, true);
        }
    }
    conv("E_a/down0".into(), 1, w, 7, true);
    conv("E_a/down1".into(), w, 2 * w, 4, true);
    conv("E_a/down2".into(), 2 * w, 4 * w, 4, true);
    for net in ["G_I", "G_a"] {
        for r in 0..cfg.res_blocks {
            conv(format!("{net}/res{r}/conv0"), 4 * w, 4 * w, 3, true);
            conv(format!("{net}/res{r}/conv1"), 4 * w, 4 * w, 3, true);
        }
        conv(format!("{net}/up0"), 4 * w, 2 * w, 5, true);
        conv(format!("{net}/up1"), 2 * w, w, 5, true);
        conv(format!("{net}/final"), w, 1, 7, false);
    }
    conv("G_a/merge0".into(), 8 * w, 4 * w, 1, true);
    conv("G_a/merge1".into(), 4 * w, 2 * w, 1, true);
    conv("G_a/merge2".into(), 2 * w, w, 1, true);
    for net in ["D_I", "D_a"] {
        conv(format!("{net}/conv0"), 1, w, 4, false);
        conv(format!("{net}/down0"), w, 2 * w, 4, false);
        conv(format!("{net}/down1"), 2 * w, 4 * w, 4, false);
        conv(format!("{net}/conv1"), 4 * w, 1, 4, false);
    }
    out
}

/// Named parameters of all seven networks, sorted by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: AdnConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ModelParams<T> {
    /// Convolution weights `~ N(0, 0.02)`, biases and norm shifts 0, norm gains 1.
    pub fn init(config: AdnConfig, seed: u64) -> Result<Self> {
        if config.width == 0 {
            return Err(Error::arg("network width must be positive"));
        }
        let mut tensors = BTreeMap::new();
        for (name, s, norm) in conv_specs(config) {
            tensors.insert(format!("{name}.w"), Tensor::zeros([s.c_out, s.c_in, s.k, s.k]));
            tensors.insert(format!("{name}.b"), Tensor::zeros([s.c_out]));
            if norm {
                tensors.insert(format!("{name}.gain"), Tensor::full([s.c_out], T::one()));
                tensors.insert(format!("{name}.shift"), Tensor::zeros([s.c_out]));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, t) in tensors.iter_mut() {
            if name.ends_with(".w") {
                t.data_mut().iter_mut().for_each(|v| *v = T::from_f64_lossy(normal.sample(&mut rng)));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    /// Rebuilds from named tensors, checking them against the architecture.
    pub fn from_tensors(config: AdnConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        if reference.tensors.len() != tensors.len() {
            return Err(Error::dim(format!(
                "expected {} parameter tensors, got {}",
                reference.tensors.len(),
                tensors.len()
            )));
        }
        for (name, t) in &reference.tensors {
            match tensors.get(name) {
                Some(u) if u.shape() == t.shape() => {}
                Some(u) => return Err(Error::dim(format!("{name}: shape {:?}, expected {:?}", u.shape(), t.shape()))),
                None => return Err(Error::dim(format!("missing parameter {name}"))),
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    /// Parameters whose name starts with one of `prefixes`.
    pub fn select_mut<'a>(
        &'a mut self,
        prefixes: &'a [&'a str],
    ) -> impl Iterator<Item = (&'a String, &'a mut Tensor<T>)> + 'a {
        self.tensors.iter_mut().filter(move |(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn count_for(&self, network: &str) -> usize {
        self.tensors.iter().filter(|(n, _)| n.starts_with(&format!("{network}/"))).map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams { config: self.config, tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}

/// Which parameters a [`Session`] binds as gradient-carrying leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    /// Encoders and decoders.
    Generators,
    Discriminators,
    Everything,
}

impl Trainable {
    fn includes(self, name: &str) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::Generators => name.starts_with('E') || name.starts_with('G'),
            Trainable::Discriminators => name.starts_with('D'),
            Trainable::Everything => true,
        }
    }
}

/// How often each network ran in a session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub e_i: usize,
    pub e_c: usize,
    pub e_a: usize,
    pub g_i: usize,
    pub g_a: usize,
    pub d_i: usize,
    pub d_a: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Artifact-free images.
    Clean,
    Artifact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodes {
    pub c_x: Var,
    pub c_y: Var,
    /// Artifact features at strides 1, 2, 4.
    pub a: [Var; 3],
}

/// The outputs of one unpaired `(x^a, y)` pass.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationBundle {
    /// `x^a` with artifacts removed.
    pub x_hat: Var,
    /// `x^a` reconstructed.
    pub xa_hat: Var,
    /// `y` reconstructed.
    pub y_hat: Var,
    /// `y` with the artifacts of `x^a` added.
    pub ya_hat: Var,
    /// `ya_hat` with artifacts removed again.
    pub y_tilde: Var,
    pub codes: LatentCodes,
}

/// One autodiff graph plus the parameters bound into it.
pub struct Session<T: Element = f32> {
    pub graph: Graph<T>,
    trainable: Trainable,
    bound: BTreeMap<String, Var>,
    pub calls: CallCounts,
}

impl<T: Element> Session<T> {
    pub fn new(trainable: Trainable) -> Self {
        Session { graph: Graph::new(), trainable, bound: BTreeMap::new(), calls: CallCounts::default() }
    }

    /// Adds an image batch `N×1×H×W` as a constant input.
    pub fn input(&mut self, image: &Tensor<T>) -> Result<Var> {
        let (_, c, _, _) = image.dims4()?;
        if c != 1 {
            return Err(Error::dim(format!("expected single-channel images, got {c} channels")));
        }
        Ok(self.graph.constant(image.clone()))
    }

    fn param(&mut self, p: &ModelParams<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = p.get(name).ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        let v = if self.trainable.includes(name) {
            self.graph.leaf(t.clone().with_grad())
        } else {
            self.graph.constant(t.clone())
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every trainable bound parameter after `graph.backward`.
    pub fn gradients(&self) -> Vec<(String, Tensor<T>)> {
        self.bound
            .iter()
            .filter(|(n, _)| self.trainable.includes(n))
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g)))
            .collect()
    }

    /// Stores the gradients into the matching parameters' `grad` fields.
    pub fn export_gradients(&self, p: &mut ModelParams<T>) -> Result<()> {
        for (name, g) in self.gradients() {
            let t = p.get_mut(&name).ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
            t.accumulate_grad(g.data())?;
        }
        Ok(())
    }

    fn conv(
        &mut self,
        p: &ModelParams<T>,
        name: &str,
        x: Var,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let w = self.param(p, &format!("{name}.w"))?;
        let b = self.param(p, &format!("{name}.b"))?;
        self.graph.conv2d(x, w, b, stride, pad, mode)
    }

    fn norm(&mut self, p: &ModelParams<T>, name: &str, x: Var) -> Result<Var> {
        let g = self.param(p, &format!("{name}.gain"))?;
        let s = self.param(p, &format!("{name}.shift"))?;
        self.graph.instance_norm(x, g, s, NORM_EPS)
    }

    /// Reflect-padded conv, instance norm, ReLU.
    fn block(&mut self, p: &ModelParams<T>, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = self.conv(p, name, x, stride, pad, PadMode::Reflect)?;
        let y = self.norm(p, name, y)?;
        self.graph.activation(y, Activation::Relu)
    }

    fn residual(&mut self, p: &ModelParams<T>, name: &str, x: Var) -> Result<Var> {
        let y = self.block(p, &format!("{name}/conv0"), x, 1, 1)?;
        let c1 = format!("{name}/conv1");
        let y = self.conv(p, &c1, y, 1, 1, PadMode::Reflect)?;
        let y = self.norm(p, &c1, y)?;
        self.graph.add(x, y)
    }

    fn up(&mut self, p: &ModelParams<T>, name: &str, x: Var) -> Result<Var> {
        let y = self.graph.upsample_nearest(x, 2)?;
        self.block(p, name, y, 1, 2)
    }

    fn final_block(&mut self, p: &ModelParams<T>, name: &str, x: Var) -> Result<Var> {
        let y = self.conv(p, name, x, 1, 3, PadMode::Reflect)?;
        self.graph.activation(y, Activation::Tanh)
    }

    fn merge(&mut self, p: &ModelParams<T>, name: &str, content: Var, artifact: Var) -> Result<Var> {
        let (cc, ca) = (self.graph.value(content).shape(), self.graph.value(artifact).shape());
        if cc != ca {
            return Err(Error::dim(format!("merge {name}: content {cc:?} vs artifact {ca:?}")));
        }
        let y = self.graph.concat_channels(content, artifact)?;
        self.block(p, name, y, 1, 0)
    }

    fn check_image(&self, x: Var) -> Result<()> {
        let (_, c, h, w) = self.graph.value(x).dims4()?;
        if c != 1 {
            return Err(Error::dim(format!("expected single-channel images, got {c} channels")));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::arg(format!("image size {h}×{w} must be a multiple of 4 and at least 8")));
        }
        Ok(())
    }

    fn downs(&mut self, p: &ModelParams<T>, net: &str, x: Var) -> Result<[Var; 3]> {
        self.check_image(x)?;
        let d0 = self.block(p, &format!("{net}/down0"), x, 1, 3)?;
        let d1 = self.block(p, &format!("{net}/down1"), d0, 2, 1)?;
        let d2 = self.block(p, &format!("{net}/down2"), d1, 2, 1)?;
        Ok([d0, d1, d2])
    }

    fn content_encoder(&mut self, p: &ModelParams<T>, net: &str, x: Var) -> Result<Var> {
        let mut h = self.downs(p, net, x)?[2];
        for r in 0..p.config.res_blocks {
            h = self.residual(p, &format!("{net}/res{r}"), h)?;
        }
        Ok(h)
    }

    /// `E_I`: content code `4w × H/4 × W/4` of an artifact-free image.
    pub fn encode_clean(&mut self, p: &ModelParams<T>, y: Var) -> Result<Var> {
        self.calls.e_i += 1;
        self.content_encoder(p, "E_I", y)
    }

    /// `E_c`: content code of an artifact-affected image.
    pub fn encode_content(&mut self, p: &ModelParams<T>, xa: Var) -> Result<Var> {
        self.calls.e_c += 1;
        self.content_encoder(p, "E_c", xa)
    }

    /// `E_a`: artifact pyramid at strides 1, 2 and 4.
    pub fn encode_artifact(&mut self, p: &ModelParams<T>, xa: Var) -> Result<[Var; 3]> {
        self.calls.e_a += 1;
        self.downs(p, "E_a", xa)
    }

    fn check_code(&self, p: &ModelParams<T>, c: Var) -> Result<()> {
        let (_, ch, _, _) = self.graph.value(c).dims4()?;
        if ch != p.config.code_channels() {
            return Err(Error::dim(format!("content code has {ch} channels, expected {}", p.config.code_channels())));
        }
        Ok(())
    }

    /// `G_I`: artifact-free image from a content code.
    pub fn decode_clean(&mut self, p: &ModelParams<T>, c: Var) -> Result<Var> {
        self.check_code(p, c)?;
        self.calls.g_i += 1;
        let mut h = c;
        for r in 0..p.config.res_blocks {
            h = self.residual(p, &format!("G_I/res{r}"), h)?;
        }
        let h = self.up(p, "G_I/up0", h)?;
        let h = self.up(p, "G_I/up1", h)?;
        self.final_block(p, "G_I/final", h)
    }

    /// `G_a`: artifact-affected image from a content code and an artifact
    /// pyramid, merged at every scale.
    pub fn decode_artifact(&mut self, p: &ModelParams<T>, c: Var, a: &[Var; 3]) -> Result<Var> {
        self.check_code(p, c)?;
        self.calls.g_a += 1;
        let mut h = c;
        for r in 0..p.config.res_blocks {
            h = self.residual(p, &format!("G_a/res{r}"), h)?;
        }
        let h = self.merge(p, "G_a/merge0", h, a[2])?;
        let h = self.up(p, "G_a/up0", h)?;
        let h = self.merge(p, "G_a/merge1", h, a[1])?;
        let h = self.up(p, "G_a/up1", h)?;
        let h = self.merge(p, "G_a/merge2", h, a[0])?;
        self.final_block(p, "G_a/final", h)
    }

    /// Patch logits of `D_I` or `D_a`; 30×30 for a 128×128 input.
    pub fn discriminate(&mut self, p: &ModelParams<T>, img: Var, which: Domain) -> Result<Var> {
        let (_, _, h, w) = self.graph.value(img).dims4()?;
        if h < 16 || w < 16 {
            return Err(Error::arg(format!("discriminator input {h}×{w} is smaller than 16×16")));
        }
        let net = match which {
            Domain::Clean => {
                self.calls.d_i += 1;
                "D_I"
            }
            Domain::Artifact => {
                self.calls.d_a += 1;
                "D_a"
            }
        };
        let mut h = img;
        for (layer, stride, act) in [("conv0", 2, true), ("down0", 2, true), ("down1", 1, true), ("conv1", 1, false)] {
            h = self.conv(p, &format!("{net}/{layer}"), h, stride, 1, PadMode::Zero)?;
            if act {
                h = self.graph.activation(h, Activation::LeakyRelu)?;
            }
        }
        Ok(h)
    }

    /// All four translation paths for an unpaired pair.
    pub fn forward_translations(&mut self, p: &ModelParams<T>, xa: Var, y: Var) -> Result<TranslationBundle> {
        let (sx, sy) = (self.graph.value(xa).shape(), self.graph.value(y).shape());
        if sx != sy {
            return Err(Error::dim(format!("x^a {sx:?} and y {sy:?} differ in shape")));
        }
        let c_x = self.encode_content(p, xa)?;
        let a = self.encode_artifact(p, xa)?;
        let c_y = self.encode_clean(p, y)?;
        let xa_hat = self.decode_artifact(p, c_x, &a)?;
        let ya_hat = self.decode_artifact(p, c_y, &a)?;
        let x_hat = self.decode_clean(p, c_x)?;
        let y_hat = self.decode_clean(p, c_y)?;
        let c_ya = self.encode_content(p, ya_hat)?;
        let y_tilde = self.decode_clean(p, c_ya)?;
        Ok(TranslationBundle { x_hat, xa_hat, y_hat, ya_hat, y_tilde, codes: LatentCodes { c_x, c_y, a } })
    }
}

/// `G_I(E_c(x^a))` on an `N×1×H×W` batch, without gradients.
pub fn remove_artifacts<T: Element>(p: &ModelParams<T>, xa: &Tensor<T>) -> Result<Tensor<T>> {
    let mut s = Session::new(Trainable::Nothing);
    let x = s.input(xa)?;
    let c = s.encode_content(p, x)?;
    let out = s.decode_clean(p, c)?;
    Ok(s.graph.value(out).clone())
}

/// `G_a(E_I(y), E_a(x^a))`: the artifacts of `xa` applied to `y`.
pub fn transfer_artifacts<T: Element>(p: &ModelParams<T>, xa: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if xa.shape() != y.shape() {
        return Err(Error::dim(format!("x^a {:?} and y {:?} differ in shape", xa.shape(), y.shape())));
    }
    let mut s = Session::new(Trainable::Nothing);
    let (xv, yv) = (s.input(xa)?, s.input(y)?);
    let c = s.encode_clean(p, yv)?;
    let a = s.encode_artifact(p, xv)?;
    let out = s.decode_artifact(p, c, &a)?;
    Ok(s.graph.value(out).clone())
}

/// Tensor values of a [`TranslationBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct Translations<T = f32> {
    pub x_hat: Tensor<T>,
    pub xa_hat: Tensor<T>,
    pub y_hat: Tensor<T>,
    pub ya_hat: Tensor<T>,
    pub y_tilde: Tensor<T>,
    pub c_x: Tensor<T>,
    pub c_y: Tensor<T>,
    pub a: [Tensor<T>; 3],
}

pub fn forward_translations<T: Element>(p: &ModelParams<T>, xa: &Tensor<T>, y: &Tensor<T>) -> Result<Translations<T>> {
    let mut s = Session::new(Trainable::Nothing);
    let (xv, yv) = (s.input(xa)?, s.input(y)?);
    let b = s.forward_translations(p, xv, yv)?;
    let v = |x: Var| s.graph.value(x).clone();
    Ok(Translations {
        x_hat: v(b.x_hat),
        xa_hat: v(b.xa_hat),
        y_hat: v(b.y_hat),
        ya_hat: v(b.ya_hat),
        y_tilde: v(b.y_tilde),
        c_x: v(b.codes.c_x),
        c_y: v(b.codes.c_y),
        a: b.codes.a.map(v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_sorted_and_grouped() {
        let p = ModelParams::<f32>::init(AdnConfig { width: 2, res_blocks: 1 }, 0).unwrap();
        let names: Vec<_> = p.names().collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(names.iter().all(|n| NETWORKS.iter().any(|net| n.starts_with(net))));
        let total: usize = NETWORKS.iter().map(|n| p.count_for(n)).sum();
        assert_eq!(total, p.count());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = AdnConfig { width: 2, res_blocks: 1 };
        let a = ModelParams::<f32>::init(cfg, 1).unwrap();
        assert_eq!(a, ModelParams::init(cfg, 1).unwrap());
        assert_ne!(a, ModelParams::init(cfg, 2).unwrap());
        assert!(a.get("G_a/merge0.gain").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn from_tensors_rejects_wrong_shapes() {
        let cfg = AdnConfig { width: 2, res_blocks: 1 };
        let p = ModelParams::<f32>::init(cfg, 1).unwrap();
        let mut t: BTreeMap<_, _> = p.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
        assert!(ModelParams::from_tensors(cfg, t.clone()).is_ok());
        t.insert("E_I/down0.b".into(), Tensor::zeros([3]));
        assert!(ModelParams::from_tensors(cfg, t).is_err());
    }
}
