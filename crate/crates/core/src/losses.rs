//! Adversarial, Lab L1 and staining losses on the autodiff tape.
//!
//! Every loss is a mean, so the weights do not depend on patch size.

use crate::nn::color;
use crate::nn::{Graph, Unary, Var};
use crate::stain::{OdParams, StainMatrix};
use crate::{Error, Result};

/// Discriminator scores are clamped to `[SCORE_EPS, 1 − SCORE_EPS]` before the log.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gan: f64,
    pub l1: f64,
    pub staining: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gan: 0.1, l1: 1.0, staining: 1.0 }
    }
}

impl LossWeights {
    pub fn new(gan: f64, l1: f64, staining: f64) -> Result<Self> {
        for (name, w) in [("gan", gan), ("l1", l1), ("staining", staining)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParam(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(Self { gan, l1, staining })
    }

    pub fn total(&self, gan_g: f64, l1: f64, staining: f64) -> f64 {
        self.gan * gan_g + self.l1 * l1 + self.staining * staining
    }
}

fn ln_score(g: &mut Graph, x: Var) -> Result<Var> {
    g.unary(x, Unary::LnClamped(SCORE_EPS, 1.0 - SCORE_EPS))
}

/// `−mean(ln real) − mean(ln(1 − fake))`.
pub fn gan_loss_d(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    let lr = ln_score(g, real)?;
    let mr = g.mean(lr)?;
    let one_minus = g.affine(fake, -1.0, 1.0)?;
    let lf = ln_score(g, one_minus)?;
    let mf = g.mean(lf)?;
    let s = g.add(mr, mf)?;
    g.affine(s, -1.0, 0.0)
}

/// Non-saturating generator loss `−mean(ln fake)`.
pub fn gan_loss_g(g: &mut Graph, fake: Var) -> Result<Var> {
    let lf = ln_score(g, fake)?;
    let m = g.mean(lf)?;
    g.affine(m, -1.0, 0.0)
}

fn mean_abs_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!("{:?} vs {:?}", g.shape(a).dims(), g.shape(b).dims())));
    }
    let d = g.sub(a, b)?;
    let ad = g.abs(d)?;
    g.mean(ad)
}

/// Mean absolute difference over all pixels and the three Lab channels.
pub fn l1_lab_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    mean_abs_diff(g, pred, target)
}

/// Mean L1 between the dye planes recovered from `pred_rgb` and the
/// input planes `h`, `e`, each `(N, 1, H, W)`.
pub fn staining_loss(
    g: &mut Graph,
    pred_rgb: Var,
    h: Var,
    e: Var,
    sm: &StainMatrix,
    odp: &OdParams,
) -> Result<Var> {
    let (ph, pe) = color::rgb_to_he(g, pred_rgb, sm, odp)?;
    let lh = mean_abs_diff(g, ph, h)?;
    let le = mean_abs_diff(g, pe, e)?;
    let s = g.add(lh, le)?;
    g.affine(s, 0.5, 0.0)
}

pub fn total_loss(g: &mut Graph, gan_g: Var, l1: Var, staining: Var, w: &LossWeights) -> Result<Var> {
    let a = g.affine(gan_g, w.gan, 0.0)?;
    let b = g.affine(l1, w.l1, 0.0)?;
    let c = g.affine(staining, w.staining, 0.0)?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
