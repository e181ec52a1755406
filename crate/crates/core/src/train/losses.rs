//! The five training losses, built on a [`Session`] graph.

use crate::adn::{Domain, ModelParams, Session, TranslationBundle};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub rec: f64,
    pub art: f64,
    pub self_: f64,
}

impl Default for LossWeights {
    /// 1 for the adversarial terms and 20 for the others.
    fn default() -> Self {
        LossWeights { adv: 1.0, rec: 20.0, art: 20.0, self_: 20.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.adv, self.rec, self.art, self.self_].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::arg(format!("loss weights must be finite and ≥ 0: {self:?}")));
        }
        Ok(())
    }

    /// Zeroes the weights a variant leaves out.
    pub fn masked(self, variant: Variant) -> Self {
        let (rec, art, self_) = match variant {
            Variant::M1 => (false, false, false),
            Variant::M2 => (true, false, false),
            Variant::M3 => (true, true, false),
            Variant::M4 => (true, true, true),
        };
        let keep = |on: bool, w: f64| if on { w } else { 0.0 };
        LossWeights {
            adv: self.adv,
            rec: keep(rec, self.rec),
            art: keep(art, self.art),
            self_: keep(self_, self.self_),
        }
    }
}

/// Ablation variants: adversarial only, then adding the reconstruction,
/// artifact-consistency and self-reduction losses in turn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variant {
    M1,
    M2,
    M3,
    #[default]
    M4,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M1" => Ok(Variant::M1),
            "M2" => Ok(Variant::M2),
            "M3" => Ok(Variant::M3),
            "M4" => Ok(Variant::M4),
            _ => Err(Error::arg(format!("unknown variant {s:?}; expected M1, M2, M3 or M4"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Generator-side loss terms as scalar graph nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<V> {
    pub adv_clean: V,
    pub adv_artifact: V,
    pub rec: V,
    pub art: V,
    pub self_: V,
}

/// `λ_adv·(adv_clean + adv_artifact) + λ_art·art + λ_rec·rec + λ_self·self`.
pub fn total_value(parts: &LossParts<f64>, w: &LossWeights) -> f64 {
    w.adv * (parts.adv_clean + parts.adv_artifact) + w.art * parts.art + w.rec * parts.rec + w.self_ * parts.self_
}

/// Graph form of [`total_value`]; zero-weight terms contribute no gradient.
pub fn total_loss<T: Element>(g: &mut Graph<T>, parts: &LossParts<Var>, w: &LossWeights) -> Result<Var> {
    let t = T::from_f64_lossy;
    g.weighted_sum(&[
        (parts.adv_clean, t(w.adv)),
        (parts.adv_artifact, t(w.adv)),
        (parts.art, t(w.art)),
        (parts.rec, t(w.rec)),
        (parts.self_, t(w.self_)),
    ])
}

/// `L1(x̂ᵃ, xᵃ) + L1(ŷ, y)`.
pub fn reconstruction_loss<T: Element>(g: &mut Graph<T>, b: &TranslationBundle, xa: Var, y: Var) -> Result<Var> {
    let l1 = g.l1_loss(b.xa_hat, xa)?;
    let l2 = g.l1_loss(b.y_hat, y)?;
    g.add(l1, l2)
}

/// Mean of `|(xᵃ − x̂) − (ŷᵃ − y)|`: the artifact removed from `xᵃ` should
/// equal the artifact added to `y`.
pub fn artifact_consistency_loss<T: Element>(g: &mut Graph<T>, b: &TranslationBundle, xa: Var, y: Var) -> Result<Var> {
    let removed = g.sub(xa, b.x_hat)?;
    let added = g.sub(b.ya_hat, y)?;
    g.l1_loss(removed, added)
}

/// `L1(ỹ, y)`.
pub fn self_reduction_loss<T: Element>(g: &mut Graph<T>, b: &TranslationBundle, y: Var) -> Result<Var> {
    g.l1_loss(b.y_tilde, y)
}

/// Generator side: both discriminators should call the translated images real.
pub fn generator_adversarial<T: Element>(
    s: &mut Session<T>,
    p: &ModelParams<T>,
    b: &TranslationBundle,
) -> Result<(Var, Var)> {
    let d_clean = s.discriminate(p, b.x_hat, Domain::Clean)?;
    let adv_clean = s.graph.gan_bce(d_clean, true)?;
    let d_art = s.discriminate(p, b.ya_hat, Domain::Artifact)?;
    let adv_artifact = s.graph.gan_bce(d_art, true)?;
    Ok((adv_clean, adv_artifact))
}

/// Discriminator side, on detached translations: `(loss_D_I, loss_D_a)`,
/// each the sum of a real and a fake term.
pub fn discriminator_adversarial<T: Element>(
    s: &mut Session<T>,
    p: &ModelParams<T>,
    xa: Var,
    y: Var,
    x_hat: Var,
    ya_hat: Var,
) -> Result<(Var, Var)> {
    let x_hat = s.graph.detach(x_hat);
    let ya_hat = s.graph.detach(ya_hat);
    let side = |s: &mut Session<T>, real: Var, fake: Var, d: Domain| -> Result<Var> {
        let lr = s.discriminate(p, real, d)?;
        let lr = s.graph.gan_bce(lr, true)?;
        let lf = s.discriminate(p, fake, d)?;
        let lf = s.graph.gan_bce(lf, false)?;
        s.graph.add(lr, lf)
    };
    let clean = side(s, y, x_hat, Domain::Clean)?;
    let artifact = side(s, xa, ya_hat, Domain::Artifact)?;
    Ok((clean, artifact))
}

pub fn generator_parts<T: Element>(
    s: &mut Session<T>,
    p: &ModelParams<T>,
    b: &TranslationBundle,
    xa: Var,
    y: Var,
) -> Result<LossParts<Var>> {
    let (adv_clean, adv_artifact) = generator_adversarial(s, p, b)?;
    Ok(LossParts {
        adv_clean,
        adv_artifact,
        rec: reconstruction_loss(&mut s.graph, b, xa, y)?,
        art: artifact_consistency_loss(&mut s.graph, b, xa, y)?,
        self_: self_reduction_loss(&mut s.graph, b, y)?,
    })
}
