//! Inference-time workflows: normalization, the dye-intensity stability
//! sweep and dye histogram comparison.

use std::fmt::Write as _;

use log::warn;

use crate::baselines::{macenko_normalize, reinhard_normalize, LabStats, MacenkoParams};
use crate::colorspace::{lab_to_rgb, rgb_to_lab, LabImage};
use crate::image::{PlaneImage, RgbImage};
use crate::nn::Generator;
use crate::stain::{extract_he, OdParams, StainMatrix};
use crate::{Error, Result};

pub const STABILITY_COEFFICIENTS: [f64; 5] = [0.6, 0.9, 1.0, 1.1, 1.2];
pub const HIST_BINS: usize = 64;
pub const HIST_OD_MAX: f64 = 3.0;

/// Crops to the largest centred region with sides divisible by 4, warning when pixels are lost.
pub fn crop_for_generator(img: &RgbImage) -> Result<RgbImage> {
    let out = img.center_crop_to_multiple(4)?;
    if out.width() != img.width() || out.height() != img.height() {
        warn!(
            "{}x{} is not divisible by 4; centre-cropping to {}x{}",
            img.width(),
            img.height(),
            out.width(),
            out.height()
        );
    }
    Ok(out)
}

/// Generator output for `(L, kH·H, kE·E)` of `img`, which must have sides divisible by 4.
pub fn restain_lab(gen: &Generator, img: &RgbImage, dye_scale: f64, keep_l: bool, sm: &StainMatrix, odp: &OdParams) -> Result<LabImage> {
    let lab = rgb_to_lab(img);
    let (h, e) = extract_he(img, sm, odp);
    let (h, e) = (h.map(|v| v * dye_scale)?, e.map(|v| v * dye_scale)?);
    let mut out = gen.infer(&lab.l, &h, &e)?;
    if keep_l {
        out.l = lab.l;
    }
    Ok(out)
}

/// Re-stains `img` with the generator. With `keep_l` the output keeps the input luminance.
pub fn restain_image(gen: &Generator, img: &RgbImage, keep_l: bool, sm: &StainMatrix, odp: &OdParams) -> Result<RgbImage> {
    let img = crop_for_generator(img)?;
    Ok(lab_to_rgb(&restain_lab(gen, &img, 1.0, keep_l, sm, odp)?))
}

/// A normalization method with its target artifact.
#[derive(Clone, Debug)]
pub enum Normalizer {
    Restain { generator: Box<Generator>, keep_l: bool },
    Reinhard(LabStats),
    Macenko { stain_matrix: StainMatrix, max_concentrations: (f64, f64), params: MacenkoParams },
}

impl Normalizer {
    pub fn apply(&self, img: &RgbImage, sm: &StainMatrix, odp: &OdParams) -> Result<RgbImage> {
        match self {
            Normalizer::Restain { generator, keep_l } => restain_image(generator, img, *keep_l, sm, odp),
            Normalizer::Reinhard(stats) => Ok(reinhard_normalize(img, stats)),
            Normalizer::Macenko { stain_matrix, max_concentrations, params } => {
                macenko_normalize(img, stain_matrix, *max_concentrations, params, odp)
            }
        }
    }
}

/// Mean per-pixel Euclidean distance in Lab.
pub fn mean_lab_distance(a: &LabImage, b: &LabImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Shape("Lab images differ in size".into()));
    }
    let n = a.width() * a.height();
    let sum: f64 = (0..n)
        .map(|i| {
            let (p, q) = (a.pixel(i), b.pixel(i));
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / n as f64)
}

#[derive(Clone, Debug)]
pub struct StabilityRow {
    pub coefficient: f64,
    pub image: RgbImage,
    /// Mean Lab distance to the output at coefficient 1.
    pub distance: f64,
}

/// Runs the generator with both dye planes scaled by each coefficient.
/// `coefficients` must contain 1.0, the reference output.
pub fn stability(
    gen: &Generator,
    img: &RgbImage,
    coefficients: &[f64],
    keep_l: bool,
    sm: &StainMatrix,
    odp: &OdParams,
) -> Result<Vec<StabilityRow>> {
    if !coefficients.contains(&1.0) {
        return Err(Error::InvalidParam("stability coefficients must include 1.0".into()));
    }
    if let Some(c) = coefficients.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::InvalidParam(format!("coefficient {c} must be finite and >= 0")));
    }
    let img = crop_for_generator(img)?;
    let images: Vec<RgbImage> = coefficients
        .iter()
        .map(|&c| restain_lab(gen, &img, c, keep_l, sm, odp).map(|l| lab_to_rgb(&l)))
        .collect::<Result<_>>()?;
    let reference = rgb_to_lab(&images[coefficients.iter().position(|&c| c == 1.0).expect("checked")]);
    coefficients
        .iter()
        .zip(images)
        .map(|(&coefficient, image)| {
            let distance = mean_lab_distance(&rgb_to_lab(&image), &reference)?;
            Ok(StabilityRow { coefficient, image, distance })
        })
        .collect()
}

pub fn stability_tsv(rows: &[StabilityRow]) -> String {
    let mut out = String::from("coefficient\tmean_lab_distance\n");
    for r in rows {
        writeln!(out, "{}\t{:.6}", r.coefficient, r.distance).unwrap();
    }
    out
}

/// Normalized histogram of `values` over `[0, max)` with out-of-range values
/// counted in the edge bins.
pub fn histogram(values: &[f64], bins: usize, max: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() || bins == 0 {
        return h;
    }
    for &v in values {
        let k = ((v / max) * bins as f64).floor();
        h[(k.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// Earth mover's distance between two normalized 1-D histograms with equal bins.
pub fn wasserstein1(p: &[f64], q: &[f64], bin_width: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut cdf = 0.0;
    let mut sum = 0.0;
    for (a, b) in p.iter().zip(q) {
        cdf += a - b;
        sum += cdf.abs();
    }
    sum * bin_width
}

#[derive(Clone, Debug, PartialEq)]
pub struct DyeHistograms {
    pub h: Vec<f64>,
    pub e: Vec<f64>,
}

impl DyeHistograms {
    pub fn of_planes(h: &PlaneImage, e: &PlaneImage, bins: usize) -> Self {
        Self { h: histogram(h.data(), bins, HIST_OD_MAX), e: histogram(e.data(), bins, HIST_OD_MAX) }
    }

    pub fn of_image(img: &RgbImage, bins: usize, sm: &StainMatrix, odp: &OdParams) -> Self {
        let (h, e) = extract_he(img, sm, odp);
        Self::of_planes(&h, &e, bins)
    }

    /// Pools every pixel of every image into one pair of histograms.
    pub fn pooled(images: &[RgbImage], bins: usize, sm: &StainMatrix, odp: &OdParams) -> Self {
        let (mut hv, mut ev) = (Vec::new(), Vec::new());
        for img in images {
            let (h, e) = extract_he(img, sm, odp);
            hv.extend_from_slice(h.data());
            ev.extend_from_slice(e.data());
        }
        Self { h: histogram(&hv, bins, HIST_OD_MAX), e: histogram(&ev, bins, HIST_OD_MAX) }
    }

    pub fn bin_width(&self) -> f64 {
        HIST_OD_MAX / self.h.len() as f64
    }

    /// `(W1 on H, W1 on E)`.
    pub fn distance(&self, other: &Self) -> (f64, f64) {
        let w = self.bin_width();
        (wasserstein1(&self.h, &other.h, w), wasserstein1(&self.e, &other.e, w))
    }
}

/// Per-bin table of both images' dye histograms followed by the two distances.
pub fn histcmp_tsv(a: &DyeHistograms, b: &DyeHistograms) -> String {
    let w = a.bin_width();
    let mut out = String::from("bin_start\th_a\th_b\te_a\te_b\n");
    for k in 0..a.h.len() {
        writeln!(out, "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", k as f64 * w, a.h[k], b.h[k], a.e[k], b.e[k]).unwrap();
    }
    let (dh, de) = a.distance(b);
    writeln!(out, "w1_h\t{dh:.6}").unwrap();
    writeln!(out, "w1_e\t{de:.6}").unwrap();
    out
}
