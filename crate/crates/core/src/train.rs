//! Self-supervised re-staining training on one target style.
//!
//! Each patch is reduced to `(L, H, E)` and the generator learns to rebuild
//! its Lab colour. One discriminator step and one generator step run per batch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{rgb_to_lab, LabImage};
use crate::image::{extract_patches, load_png, PlaneImage, RgbImage};
use crate::losses::{gan_loss_d, gan_loss_g, l1_lab_loss, staining_loss, total_loss, LossWeights};
use crate::nn::color;
use crate::nn::models::{generator_input, lab_tensor, plane_tensor, AB_SCALE, L_SCALE};
use crate::nn::{Graph, RestainModel, Tensor, Var};
use crate::stain::{extract_he, OdParams, StainMatrix};
use crate::synth::{read_manifest, MANIFEST_NAME};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// A manifest file, or a directory holding one named `manifest.tsv`.
    pub data: PathBuf,
    pub style_label: String,
    pub epochs: u32,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub od_params: OdParams,
    pub stain_matrix: StainMatrix,
    pub checkpoint_path: PathBuf,
    /// Batches per epoch; one pass over the patches when `None`.
    pub steps_per_epoch: Option<usize>,
    /// Continue from `checkpoint_path` when it exists.
    pub resume: bool,
}

impl TrainConfig {
    pub fn new(data: impl Into<PathBuf>, checkpoint_path: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            style_label: "A".into(),
            epochs: 1,
            batch_size: 4,
            patch_size: 256,
            seed: 0,
            weights: LossWeights::default(),
            od_params: OdParams::default(),
            stain_matrix: StainMatrix::default(),
            checkpoint_path: checkpoint_path.into(),
            steps_per_epoch: None,
            resume: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patch_size % 4 != 0 || self.patch_size < 16 {
            return Err(Error::Config(format!(
                "patch size must be a multiple of 4 and at least 16, got {}",
                self.patch_size
            )));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps per epoch must be at least 1".into()));
        }
        Ok(())
    }

    fn manifest_path(&self) -> PathBuf {
        if self.data.is_dir() {
            self.data.join(MANIFEST_NAME)
        } else {
            self.data.clone()
        }
    }
}

/// One training patch: target Lab and the network's dye inputs.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub lab: LabImage,
    pub h: PlaneImage,
    pub e: PlaneImage,
}

impl TrainSample {
    pub fn from_rgb(img: &RgbImage, sm: &StainMatrix, odp: &OdParams) -> Self {
        let (h, e) = extract_he(img, sm, odp);
        Self { lab: rgb_to_lab(img), h, e }
    }
}

/// Tiles every image into `patch × patch` samples, dropping remainders.
pub fn prepare_samples(images: &[RgbImage], patch: usize, sm: &StainMatrix, odp: &OdParams) -> Result<Vec<TrainSample>> {
    let samples: Vec<_> = images
        .iter()
        .flat_map(|img| extract_patches(img, patch))
        .map(|p| TrainSample::from_rgb(&p, sm, odp))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config(format!("no {patch}x{patch} patch fits in the training images")));
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: u32,
    pub disc: f64,
    pub gan: f64,
    pub l1: f64,
    pub staining: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepLoss>,
}

impl TrainReport {
    /// Mean generator total over steps `from..to` (0-based, clipped).
    pub fn mean_total(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.steps.len());
        let s = &self.steps[from.min(to)..to];
        s.iter().map(|l| l.total).sum::<f64>() / s.len().max(1) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tepoch\td_loss\tg_gan\tl1\tstaining\ttotal\n");
        for l in &self.steps {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                l.step, l.epoch, l.disc, l.gan, l.l1, l.staining, l.total
            )
            .unwrap();
        }
        out
    }
}

/// Lab → `(L/100, a/127, b/127)` as seen by the discriminator.
const D_INPUT_SCALE: [f64; 3] = [1.0 / L_SCALE, 1.0 / AB_SCALE, 1.0 / AB_SCALE];

fn scale_for_disc(g: &mut Graph, lab: Var) -> Result<Var> {
    let m: Vec<Vec<f64>> = (0..3)
        .map(|r| (0..3).map(|c| if r == c { D_INPUT_SCALE[r] } else { 0.0 }).collect())
        .collect();
    g.channel_mix(lab, &m, &[0.0; 3])
}

fn batch_order(n: usize, steps: usize, batch: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(epoch));
    let mut order = Vec::with_capacity(steps * batch);
    while order.len() < steps * batch {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        order.extend(perm);
    }
    order.truncate(steps * batch);
    order
}

fn nonfinite_as_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss { step },
        other => other,
    }
}

/// One discriminator update followed by one generator update.
pub fn train_step(
    model: &mut RestainModel,
    batch: &[&TrainSample],
    weights: &LossWeights,
    sm: &StainMatrix,
    odp: &OdParams,
    step: usize,
) -> Result<StepLoss> {
    let inputs: Vec<_> = batch.iter().map(|s| (&s.lab.l, &s.h, &s.e)).collect();
    let labs: Vec<_> = batch.iter().map(|s| &s.lab).collect();
    let hs: Vec<_> = batch.iter().map(|s| &s.h).collect();
    let es: Vec<_> = batch.iter().map(|s| &s.e).collect();
    let x = generator_input(&inputs)?;
    let target = lab_tensor(&labs)?;

    let mut gg = Graph::new();
    let xv = gg.input(x)?;
    let fake = model.generator.forward(&mut gg, xv)?;
    let fake_values = gg.value(fake).clone();

    let mut gd = Graph::new();
    let real_in = gd.input(target.clone())?;
    let real_in = scale_for_disc(&mut gd, real_in)?;
    let fake_in = gd.input(Tensor::new(fake_values.shape(), fake_values.into_values())?)?;
    let fake_in = scale_for_disc(&mut gd, fake_in)?;
    let real_s = model.discriminator.forward(&mut gd, real_in)?;
    let fake_s = model.discriminator.forward(&mut gd, fake_in)?;
    let d_loss = gan_loss_d(&mut gd, real_s, fake_s)?;
    let disc = gd.value(d_loss).item();
    if !disc.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    gd.backward(d_loss)?;
    model.discriminator.params.zero_grad();
    gd.accumulate_into(&mut model.discriminator.params);
    model.adam_d.step(&mut model.discriminator.params)?;

    let d_in = scale_for_disc(&mut gg, fake)?;
    let scores = model.discriminator.forward(&mut gg, d_in)?;
    let gan = gan_loss_g(&mut gg, scores)?;
    let tv = gg.input(target)?;
    let l1 = l1_lab_loss(&mut gg, fake, tv)?;
    let rgb = color::lab_to_rgb(&mut gg, fake)?;
    let hv = gg.input(plane_tensor(&hs)?)?;
    let ev = gg.input(plane_tensor(&es)?)?;
    let st = staining_loss(&mut gg, rgb, hv, ev, sm, odp)?;
    let total = total_loss(&mut gg, gan, l1, st, weights)?;
    let loss = StepLoss {
        step,
        epoch: 0,
        disc,
        gan: gg.value(gan).item(),
        l1: gg.value(l1).item(),
        staining: gg.value(st).item(),
        total: gg.value(total).item(),
    };
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    gg.backward(total)?;
    model.generator.params.zero_grad();
    gg.accumulate_into(&mut model.generator.params);
    model.adam_g.step(&mut model.generator.params)?;
    Ok(loss)
}

/// Trains `cfg.epochs` further epochs from `model.epoch`, calling
/// `on_epoch` after each one.
pub fn train_on_samples(
    model: &mut RestainModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&RestainModel) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| samples.len().div_ceil(cfg.batch_size));
    let mut report = TrainReport::default();
    let mut global = model.adam_g.step as usize;
    let first = model.epoch;
    for epoch in first..first + cfg.epochs {
        model.adam_g.lr_decay(epoch);
        model.adam_d.lr_decay(epoch);
        info!("epoch {epoch}: {steps} steps, lr {:.3e}", model.adam_g.lr);
        let order = batch_order(samples.len(), steps, cfg.batch_size, cfg.seed, epoch);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| &samples[i]).collect();
            let mut loss = train_step(model, &batch, &cfg.weights, &cfg.stain_matrix, &cfg.od_params, global)
                .map_err(nonfinite_as_step(global))?;
            loss.epoch = epoch;
            debug!(
                "step {global}: d {:.4} gan {:.4} l1 {:.4} staining {:.4} total {:.4}",
                loss.disc, loss.gan, loss.l1, loss.staining, loss.total
            );
            report.steps.push(loss);
            global += 1;
        }
        model.epoch = epoch + 1;
        on_epoch(model)?;
        if let Some(last) = report.steps.last() {
            info!("epoch {epoch} done: total {:.4}", last.total);
        }
    }
    Ok(report)
}

/// Loads every image of `label` from a manifest.
pub fn load_domain(manifest: &Path, label: &str) -> Result<Vec<RgbImage>> {
    let entries = read_manifest(manifest)?;
    let images: Vec<_> = entries
        .iter()
        .filter(|e| e.label == label)
        .map(|e| load_png(&e.path))
        .collect::<Result<_>>()?;
    if images.is_empty() {
        return Err(Error::Config(format!("manifest {} has no images labelled {label:?}", manifest.display())));
    }
    Ok(images)
}

/// Full training run: loads the target domain, trains, and writes the
/// checkpoint atomically after every epoch.
pub fn train(cfg: &TrainConfig) -> Result<(RestainModel, TrainReport)> {
    cfg.validate()?;
    let images = load_domain(&cfg.manifest_path(), &cfg.style_label)?;
    let samples = prepare_samples(&images, cfg.patch_size, &cfg.stain_matrix, &cfg.od_params)?;
    info!("{} images, {} patches of {}px", images.len(), samples.len(), cfg.patch_size);
    let mut model = if cfg.resume && cfg.checkpoint_path.exists() {
        let m = RestainModel::load(&cfg.checkpoint_path)?;
        info!("resuming from epoch {}", m.epoch);
        m
    } else {
        RestainModel::new(cfg.seed)
    };
    let path = cfg.checkpoint_path.clone();
    let report = train_on_samples(&mut model, &samples, cfg, |m| m.save(&path))?;
    Ok((model, report))
}
