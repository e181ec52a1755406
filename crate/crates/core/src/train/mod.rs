//! Unsupervised training: alternating discriminator and generator Adam
//! updates on unpaired batches, loss logging and checkpoints.

mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use losses::{
    artifact_consistency_loss, discriminator_adversarial, generator_adversarial, generator_parts, reconstruction_loss,
    self_reduction_loss, total_loss, total_value, LossParts, LossWeights, Variant,
};

use crate::adn::{AdnConfig, Checkpoint, ModelParams, Session, Trainable, TranslationBundle};
use crate::ctsim::{hu_to_unit, splitmix64};
use crate::error::{Error, Result};
use crate::tensor::{io, Adam, Tensor, Var};

const GENERATORS: [&str; 5] = ["E_I/", "E_a/", "E_c/", "G_I/", "G_a/"];
const DISCRIMINATORS: [&str; 2] = ["D_I/", "D_a/"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Images per step, half artifact-affected and half clean.
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub variant: Variant,
    pub data: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub width: usize,
    pub res_blocks: usize,
    /// Global gradient-norm bound for each update; 0 disables clipping.
    pub clip: f64,
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lambda_art: f64,
    pub lambda_self: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let a = AdnConfig::default();
        TrainConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 2,
            steps: 2000,
            seed: 0,
            variant: Variant::M4,
            data: None,
            checkpoint_every: 0,
            width: a.width,
            res_blocks: a.res_blocks,
            clip: 0.0,
            lambda_adv: w.adv,
            lambda_rec: w.rec,
            lambda_art: w.art,
            lambda_self: w.self_,
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| err(format!("{key}: {e}")))?
                };
            }
            match key {
                "lr" => c.lr = num!(),
                "beta1" => c.beta1 = num!(),
                "beta2" => c.beta2 = num!(),
                "batch_size" => c.batch_size = num!(),
                "steps" => c.steps = num!(),
                "seed" => c.seed = num!(),
                "variant" => c.variant = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "data" => c.data = Some(PathBuf::from(value)),
                "checkpoint_every" => c.checkpoint_every = num!(),
                "width" => c.width = num!(),
                "res_blocks" => c.res_blocks = num!(),
                "clip" => c.clip = num!(),
                "lambda_adv" => c.lambda_adv = num!(),
                "lambda_rec" => c.lambda_rec = num!(),
                "lambda_art" => c.lambda_art = num!(),
                "lambda_self" => c.lambda_self = num!(),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "variant = {}", self.variant);
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "res_blocks = {}", self.res_blocks);
        let _ = writeln!(s, "clip = {}", self.clip);
        let _ = writeln!(s, "lambda_adv = {}", self.lambda_adv);
        let _ = writeln!(s, "lambda_rec = {}", self.lambda_rec);
        let _ = writeln!(s, "lambda_art = {}", self.lambda_art);
        let _ = writeln!(s, "lambda_self = {}", self.lambda_self);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::arg(m.to_string()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return bad("batch_size must be a positive even number");
        }
        if self.width == 0 {
            return bad("width must be positive");
        }
        if !(self.clip >= 0.0) {
            return bad("clip must be ≥ 0");
        }
        self.weights().validate()
    }

    /// Configured λ values with the variant's exclusions applied.
    pub fn weights(&self) -> LossWeights {
        LossWeights { adv: self.lambda_adv, rec: self.lambda_rec, art: self.lambda_art, self_: self.lambda_self }
            .masked(self.variant)
    }

    pub fn model(&self) -> AdnConfig {
        AdnConfig { width: self.width, res_blocks: self.res_blocks }
    }
}

/// Scalar losses of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub adv_clean: f32,
    pub adv_artifact: f32,
    pub rec: f32,
    pub art: f32,
    pub self_: f32,
    /// Weighted generator objective.
    pub total: f32,
    pub disc_clean: f32,
    pub disc_artifact: f32,
}

impl LossReport {
    pub fn entries(&self) -> [(&'static str, f32); 8] {
        [
            ("adv_clean", self.adv_clean),
            ("adv_artifact", self.adv_artifact),
            ("rec", self.rec),
            ("art", self.art),
            ("self", self.self_),
            ("total", self.total),
            ("disc_clean", self.disc_clean),
            ("disc_artifact", self.disc_artifact),
        ]
    }

    /// `step\tname\tvalue` lines.
    pub fn to_tsv(&self) -> String {
        self.entries().iter().map(|(n, v)| format!("{}\t{n}\t{v:?}\n", self.step)).collect()
    }
}

/// Artifact-affected and clean images, with no pairing between them.
#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    artifact: Vec<Tensor<f32>>,
    clean: Vec<Tensor<f32>>,
}

impl UnpairedSampler {
    /// Images already mapped to `[-1, 1]`, each `H×W`.
    pub fn new(artifact: Vec<Tensor<f32>>, clean: Vec<Tensor<f32>>) -> Result<Self> {
        if artifact.is_empty() || clean.is_empty() {
            return Err(Error::arg("both training groups need at least one image"));
        }
        let shape = artifact[0].shape().to_vec();
        if shape.len() != 2 || artifact.iter().chain(&clean).any(|t| t.shape() != shape) {
            return Err(Error::dim("training images must all share one H×W shape"));
        }
        Ok(UnpairedSampler { artifact, clean })
    }

    /// Reads `trainA/*_xa.adnt` and `trainB/*_x.adnt` under `root`, in name
    /// order. Nothing else in the dataset is consulted.
    pub fn from_dataset(root: &Path) -> Result<Self> {
        let load = |dir: &str, suffix: &str| -> Result<Vec<Tensor<f32>>> {
            let dir = root.join(dir);
            let mut names: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
                .collect();
            names.sort();
            names.iter().map(|p| Ok(hu_to_unit(&io::read(p)?))).collect()
        };
        Self::new(load("trainA", "_xa.adnt")?, load("trainB", "_x.adnt")?)
    }

    pub fn len(&self) -> (usize, usize) {
        (self.artifact.len(), self.clean.len())
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.artifact[0].shape()[0], self.artifact[0].shape()[1])
    }

    /// `pairs` independent draws from each group; a pure function of
    /// `(seed, step)`.
    pub fn batch(&self, seed: u64, step: u64, pairs: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(step)));
        let (h, w) = self.image_shape();
        let stack = |group: &[Tensor<f32>], rng: &mut ChaCha8Rng| {
            let mut data = Vec::with_capacity(pairs * h * w);
            for _ in 0..pairs {
                data.extend_from_slice(group[rng.random_range(0..group.len())].data());
            }
            Tensor::new([pairs, 1, h, w], data).expect("consistent image shapes")
        };
        let xa = stack(&self.artifact, &mut rng);
        let y = stack(&self.clean, &mut rng);
        (xa, y)
    }
}

fn clip_gradients<'a>(params: impl Iterator<Item = (&'a String, &'a mut Tensor<f32>)>, bound: f64) {
    let mut grads: Vec<&mut Vec<f32>> = params.filter_map(|(_, t)| t.grad.as_mut()).collect();
    let norm: f64 = grads.iter().flat_map(|g| g.iter()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if norm > bound {
        let s = (bound / norm) as f32;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
}

fn adam_to_tensors(prefix: &str, opt: &Adam<f32>, out: &mut BTreeMap<String, Tensor<f32>>) {
    out.insert(format!("{prefix}/step"), Tensor::scalar(opt.steps_taken() as f32));
    for (name, m, v) in opt.moments() {
        let t = |d: &[f32]| Tensor::new([d.len()], d.to_vec()).expect("non-empty moment");
        out.insert(format!("{prefix}/m/{name}"), t(m));
        out.insert(format!("{prefix}/v/{name}"), t(v));
    }
}

fn adam_from_tensors(prefix: &str, opt: &mut Adam<f32>, state: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    let bad = |m: String| Error::Format { offset: 0, message: m };
    let step = state.get(&format!("{prefix}/step")).ok_or_else(|| bad(format!("missing {prefix}/step")))?.data()[0];
    let m_prefix = format!("{prefix}/m/");
    let mut moments = Vec::new();
    for (key, m) in state.range(m_prefix.clone()..) {
        let Some(name) = key.strip_prefix(&m_prefix) else { break };
        let v =
            state.get(&format!("{prefix}/v/{name}")).ok_or_else(|| bad(format!("missing second moment of {name}")))?;
        moments.push((name.to_string(), m.data().to_vec(), v.data().to_vec()));
    }
    opt.restore(step as u64, moments)
}

/// Parameters, both optimizers and the step counter.
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    /// Completed steps.
    pub step: u64,
    last_failed: Option<(Tensor<f32>, Tensor<f32>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(config.model(), splitmix64(config.seed))?;
        let adam = || Adam::new(config.lr as f32, (config.beta1 as f32, config.beta2 as f32), 1e-8);
        Ok(Trainer { opt_g: adam(), opt_d: adam(), params, config, step: 0, last_failed: None })
    }

    pub fn from_checkpoint(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(config)?;
        if ck.params.config != t.config.model() {
            return Err(Error::arg(format!(
                "checkpoint architecture {:?} differs from configured {:?}",
                ck.params.config,
                t.config.model()
            )));
        }
        t.params = ck.params;
        adam_from_tensors("g", &mut t.opt_g, &ck.optimizer)?;
        adam_from_tensors("d", &mut t.opt_d, &ck.optimizer)?;
        t.step = t.opt_g.steps_taken();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut optimizer = BTreeMap::new();
        adam_to_tensors("g", &self.opt_g, &mut optimizer);
        adam_to_tensors("d", &self.opt_d, &mut optimizer);
        Checkpoint { params: self.params.clone(), optimizer }
    }

    fn diverged(&self, e: Error) -> Error {
        match e {
            Error::NonFinite(what) => Error::Diverged {
                step: self.step + 1,
                seed: self.config.seed,
                message: format!("non-finite value in {what}"),
            },
            other => other,
        }
    }

    /// Updates `D_I` and `D_a` on real images and the given translations,
    /// which enter as constants. Returns `(disc_clean, disc_artifact)`.
    /// Encoder and decoder parameters are not touched.
    pub fn discriminator_update(
        &mut self,
        xa: &Tensor<f32>,
        y: &Tensor<f32>,
        x_hat: &Tensor<f32>,
        ya_hat: &Tensor<f32>,
    ) -> Result<(f32, f32)> {
        let mut ds = Session::new(Trainable::Discriminators);
        let (dxa, dy) = (ds.input(xa)?, ds.input(y)?);
        let fake_x = ds.graph.constant(x_hat.clone());
        let fake_ya = ds.graph.constant(ya_hat.clone());
        let (clean, artifact) =
            discriminator_adversarial(&mut ds, &self.params, dxa, dy, fake_x, fake_ya).map_err(|e| self.diverged(e))?;
        let d_loss = ds.graph.add(clean, artifact).map_err(|e| self.diverged(e))?;
        ds.graph.backward(d_loss)?;
        ds.export_gradients(&mut self.params)?;
        if self.config.clip > 0.0 {
            clip_gradients(self.params.select_mut(&DISCRIMINATORS), self.config.clip);
        }
        self.opt_d.step(self.params.select_mut(&DISCRIMINATORS))?;
        Ok((ds.graph.value(clean).item(), ds.graph.value(artifact).item()))
    }

    /// Generator half on an existing forward pass; discriminators are read
    /// but not updated.
    fn generator_half(
        &mut self,
        mut gs: Session<f32>,
        bundle: &TranslationBundle,
        xv: Var,
        yv: Var,
    ) -> Result<(LossParts<f32>, f32)> {
        let parts = generator_parts(&mut gs, &self.params, bundle, xv, yv).map_err(|e| self.diverged(e))?;
        let total = total_loss(&mut gs.graph, &parts, &self.config.weights()).map_err(|e| self.diverged(e))?;
        gs.graph.backward(total)?;
        gs.export_gradients(&mut self.params)?;
        if self.config.clip > 0.0 {
            clip_gradients(self.params.select_mut(&GENERATORS), self.config.clip);
        }
        self.opt_g.step(self.params.select_mut(&GENERATORS))?;
        let v = |x: Var| gs.graph.value(x).item();
        let values = LossParts {
            adv_clean: v(parts.adv_clean),
            adv_artifact: v(parts.adv_artifact),
            rec: v(parts.rec),
            art: v(parts.art),
            self_: v(parts.self_),
        };
        Ok((values, v(total)))
    }

    /// Updates every encoder and decoder against the current
    /// discriminators. Returns the loss parts and the weighted total.
    pub fn generator_update(&mut self, xa: &Tensor<f32>, y: &Tensor<f32>) -> Result<(LossParts<f32>, f32)> {
        let mut gs = Session::new(Trainable::Generators);
        let (xv, yv) = (gs.input(xa)?, gs.input(y)?);
        let bundle = gs.forward_translations(&self.params, xv, yv).map_err(|e| self.diverged(e))?;
        self.generator_half(gs, &bundle, xv, yv)
    }

    /// One discriminator update on detached translations, then one
    /// generator update against the updated discriminators. Both use the
    /// same forward pass.
    pub fn train_step(&mut self, xa: &Tensor<f32>, y: &Tensor<f32>) -> Result<LossReport> {
        let mut gs = Session::new(Trainable::Generators);
        let (xv, yv) = (gs.input(xa)?, gs.input(y)?);
        let bundle = gs.forward_translations(&self.params, xv, yv).map_err(|e| self.diverged(e))?;
        let (x_hat, ya_hat) = (gs.graph.value(bundle.x_hat).clone(), gs.graph.value(bundle.ya_hat).clone());
        let (disc_clean, disc_artifact) = self.discriminator_update(xa, y, &x_hat, &ya_hat)?;
        let (parts, total) = self.generator_half(gs, &bundle, xv, yv)?;
        let step = self.step + 1;
        if self.params.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::Diverged {
                step,
                seed: self.config.seed,
                message: "parameters became non-finite".into(),
            });
        }
        self.step = step;
        Ok(LossReport {
            step,
            adv_clean: parts.adv_clean,
            adv_artifact: parts.adv_artifact,
            rec: parts.rec,
            art: parts.art,
            self_: parts.self_,
            total,
            disc_clean,
            disc_artifact,
        })
    }

    /// Draws the batch for the next step from `sampler` and trains on it.
    pub fn step_with(&mut self, sampler: &UnpairedSampler) -> Result<LossReport> {
        let (xa, y) = sampler.batch(self.config.seed, self.step + 1, self.config.batch_size / 2);
        self.train_step(&xa, &y).inspect_err(|_| self.last_failed = Some((xa.clone(), y.clone())))
    }
}

/// Trains until `config.steps`, writing `loss.tsv`, periodic
/// `ckpt_<step>.adnc` files and `final.adnc` into `out`. A divergence
/// writes the offending batch as `diverged_xa.adnt`/`diverged_y.adnt`.
pub fn run_training(
    config: TrainConfig,
    sampler: &UnpairedSampler,
    out: &Path,
    resume: Option<Checkpoint>,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Trainer> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = match resume {
        Some(ck) => Trainer::from_checkpoint(config, ck)?,
        None => Trainer::new(config)?,
    };
    let log_path = out.join("loss.tsv");
    let mut log =
        fs::OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    while trainer.step < trainer.config.steps {
        let report = match trainer.step_with(sampler) {
            Ok(r) => r,
            Err(e) => {
                if let (Error::Diverged { .. }, Some((xa, y))) = (&e, trainer.last_failed.take()) {
                    io::write(out.join("diverged_xa.adnt"), &xa)?;
                    io::write(out.join("diverged_y.adnt"), &y)?;
                }
                return Err(e);
            }
        };
        log.write_all(report.to_tsv().as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        on_step(&report);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.step % every == 0 {
            crate::adn::write_checkpoint(out.join(format!("ckpt_{:06}.adnc", trainer.step)), &trainer.checkpoint())?;
        }
    }
    crate::adn::write_checkpoint(out.join("final.adnc"), &trainer.checkpoint())?;
    Ok(trainer)
}
