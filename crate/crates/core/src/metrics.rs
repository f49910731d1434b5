//! Full-reference image quality metrics.
//!
//! The first argument is always the reference. SSIM, MS-SSIM and UQI work on
//! ITU-R 601 luma with valid-mode windows; the rest use the RGB channels.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::image::{load_png, PlaneImage, RgbImage};
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const UQI_WINDOW: usize = 8;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

fn check_dims(x: &RgbImage, y: &RgbImage) -> Result<()> {
    if x.width() != y.width() || x.height() != y.height() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    Ok(())
}

pub fn mse(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_dims(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sum / x.data().len() as f64)
}

pub fn rmse(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    mse(x, y).map(f64::sqrt)
}

/// `10·log10(255² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    let peak = DYNAMIC_RANGE * DYNAMIC_RANGE;
    if mse < peak * 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (peak / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    mse(x, y).map(psnr_from_mse)
}

/// `0.299 R + 0.587 G + 0.114 B`, unrounded.
pub fn luma(img: &RgbImage) -> PlaneImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .collect();
    PlaneImage::new(img.width(), img.height(), data).expect("luma of a valid image")
}

/// Normalized `size × size` Gaussian weights, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g1: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mut w: Vec<f64> = g1.iter().flat_map(|&a| g1.iter().map(move |&b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Weighted first and second moments of one window.
struct Moments {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

fn window_moments(a: &PlaneImage, b: &PlaneImage, x0: usize, y0: usize, win: &[f64], size: usize) -> Moments {
    let (mut mx, mut my) = (0.0, 0.0);
    for j in 0..size {
        for i in 0..size {
            let w = win[j * size + i];
            mx += w * a.get(x0 + i, y0 + j);
            my += w * b.get(x0 + i, y0 + j);
        }
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for j in 0..size {
        for i in 0..size {
            let w = win[j * size + i];
            let dx = a.get(x0 + i, y0 + j) - mx;
            let dy = b.get(x0 + i, y0 + j) - my;
            vx += w * dx * dx;
            vy += w * dy * dy;
            cxy += w * dx * dy;
        }
    }
    Moments { mx, my, vx, vy, cxy }
}

fn check_planes(a: &PlaneImage, b: &PlaneImage, min: usize) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width().min(a.height()) < min {
        return Err(Error::TooSmall(format!(
            "{}x{} is below the {min}-pixel window",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Mean SSIM and mean contrast-structure term over all valid windows.
pub fn ssim_components(a: &PlaneImage, b: &PlaneImage) -> Result<(f64, f64)> {
    check_planes(a, b, SSIM_WINDOW)?;
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let nx = a.width() - SSIM_WINDOW + 1;
    let ny = a.height() - SSIM_WINDOW + 1;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for y0 in 0..ny {
        for x0 in 0..nx {
            let m = window_moments(a, b, x0, y0, &win, SSIM_WINDOW);
            let cs = (2.0 * m.cxy + c2) / (m.vx + m.vy + c2);
            let l = (2.0 * m.mx * m.my + c1) / (m.mx * m.mx + m.my * m.my + c1);
            ssim_sum += l * cs;
            cs_sum += cs;
        }
    }
    let n = (nx * ny) as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

pub fn ssim_plane(a: &PlaneImage, b: &PlaneImage) -> Result<f64> {
    ssim_components(a, b).map(|(s, _)| s)
}

pub fn ssim(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_dims(x, y)?;
    ssim_plane(&luma(x), &luma(y))
}

/// 2×2 mean pooling; an odd trailing row or column is dropped.
pub fn downsample2(p: &PlaneImage) -> PlaneImage {
    let (w, h) = (p.width() / 2, p.height() / 2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = p.get(2 * x, 2 * y) + p.get(2 * x + 1, 2 * y) + p.get(2 * x, 2 * y + 1) + p.get(2 * x + 1, 2 * y + 1);
            data.push(s / 4.0);
        }
    }
    PlaneImage::new(w, h, data).expect("pooled plane is finite")
}

/// Scales usable for a `min_dim` image: while the scale stays ≥ the SSIM window, at most 5.
pub fn ms_ssim_scales(min_dim: usize) -> usize {
    let mut n = 0;
    let mut d = min_dim;
    while n < MS_SSIM_WEIGHTS.len() && d >= SSIM_WINDOW {
        n += 1;
        d /= 2;
    }
    n
}

/// Multi-scale SSIM. With fewer than five usable scales the leading weights
/// are renormalized to sum to one. Negative per-scale terms are clamped to 0.
pub fn ms_ssim_plane(a: &PlaneImage, b: &PlaneImage) -> Result<f64> {
    check_planes(a, b, SSIM_WINDOW)?;
    let scales = ms_ssim_scales(a.width().min(a.height()));
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut out = 1.0;
    for (k, w) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (s, cs) = ssim_components(&a, &b)?;
        let term = if k + 1 == scales { s } else { cs };
        out *= term.max(0.0).powf(w / wsum);
        if k + 1 < scales {
            a = downsample2(&a);
            b = downsample2(&b);
        }
    }
    Ok(out)
}

pub fn ms_ssim(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_dims(x, y)?;
    ms_ssim_plane(&luma(x), &luma(y))
}

/// Universal quality index of one window. Flat, zero-mean windows give 1;
/// zero spread leaves the luminance term; zero means leave the correlation term.
pub fn uqi_window(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
        cxy += (x - mx) * (y - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let d_spread = vx + vy;
    let d_mean = mx * mx + my * my;
    match (d_spread == 0.0, d_mean == 0.0) {
        (true, true) => 1.0,
        (true, false) => 2.0 * mx * my / d_mean,
        (false, true) => 2.0 * cxy / d_spread,
        (false, false) => 4.0 * cxy * mx * my / (d_spread * d_mean),
    }
}

pub fn uqi_plane(a: &PlaneImage, b: &PlaneImage) -> Result<f64> {
    check_planes(a, b, UQI_WINDOW)?;
    let nx = a.width() - UQI_WINDOW + 1;
    let ny = a.height() - UQI_WINDOW + 1;
    let mut xs = Vec::with_capacity(UQI_WINDOW * UQI_WINDOW);
    let mut ys = Vec::with_capacity(UQI_WINDOW * UQI_WINDOW);
    let mut sum = 0.0;
    for y0 in 0..ny {
        for x0 in 0..nx {
            xs.clear();
            ys.clear();
            for j in 0..UQI_WINDOW {
                for i in 0..UQI_WINDOW {
                    xs.push(a.get(x0 + i, y0 + j));
                    ys.push(b.get(x0 + i, y0 + j));
                }
            }
            sum += uqi_window(&xs, &ys);
        }
    }
    Ok(sum / (nx * ny) as f64)
}

pub fn uqi(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_dims(x, y)?;
    uqi_plane(&luma(x), &luma(y))
}

/// Per-band `(RMSE_b, μ_b)` with `μ_b` the reference mean.
fn band_stats(x: &RgbImage, y: &RgbImage) -> Result<[(f64, f64); 3]> {
    check_dims(x, y)?;
    let n = x.pixel_count() as f64;
    let mut out = [(0.0, 0.0); 3];
    for (px, py) in x.pixels().zip(y.pixels()) {
        for b in 0..3 {
            let d = f64::from(px[b]) - f64::from(py[b]);
            out[b].0 += d * d;
            out[b].1 += f64::from(px[b]);
        }
    }
    for (b, (se, mu)) in out.iter_mut().enumerate() {
        *se = (*se / n).sqrt();
        *mu /= n;
        if *mu == 0.0 {
            return Err(Error::ZeroMeanBand(b));
        }
    }
    Ok(out)
}

pub fn ergas_with_ratio(x: &RgbImage, y: &RgbImage, ratio: f64) -> Result<f64> {
    let s = band_stats(x, y)?;
    let m = s.iter().map(|(r, mu)| (r / mu).powi(2)).sum::<f64>() / 3.0;
    Ok(100.0 * ratio * m.sqrt())
}

pub fn ergas(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    ergas_with_ratio(x, y, 1.0)
}

pub fn rase(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    let s = band_stats(x, y)?;
    let mu = s.iter().map(|(_, mu)| mu).sum::<f64>() / 3.0;
    let m = s.iter().map(|(r, _)| r * r).sum::<f64>() / 3.0;
    Ok(100.0 / mu * m.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    Rmse,
    Psnr,
    Ssim,
    MsSsim,
    Uqi,
    Ergas,
    Rase,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Mse,
        Metric::Rmse,
        Metric::Psnr,
        Metric::Ssim,
        Metric::MsSsim,
        Metric::Uqi,
        Metric::Ergas,
        Metric::Rase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Rmse => "rmse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms-ssim",
            Metric::Uqi => "uqi",
            Metric::Ergas => "ergas",
            Metric::Rase => "rase",
        }
    }

    pub fn compute(self, reference: &RgbImage, test: &RgbImage) -> Result<f64> {
        match self {
            Metric::Mse => mse(reference, test),
            Metric::Rmse => rmse(reference, test),
            Metric::Psnr => psnr(reference, test),
            Metric::Ssim => ssim(reference, test),
            Metric::MsSsim => ms_ssim(reference, test),
            Metric::Uqi => uqi(reference, test),
            Metric::Ergas => ergas(reference, test),
            Metric::Rase => rase(reference, test),
        }
    }

    /// Parses a comma-separated list; `all` selects every metric.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        if s.trim() == "all" {
            return Ok(Metric::ALL.to_vec());
        }
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Metric::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| {
            let valid: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::Usage(format!("unknown metric {s:?}; valid metrics: {}", valid.join(", ")))
        })
    }
}

/// Formats with six significant digits, switching to exponent form outside `[1e-4, 1e6)`.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        format!("{v:.5e}")
    } else {
        format!("{v:.*}", (5 - exp).max(0) as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub reference: String,
    pub test: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<PairRow>,
}

impl MetricReport {
    /// Mean and population standard deviation per metric.
    pub fn aggregates(&self) -> Vec<(f64, f64)> {
        let n = self.rows.len() as f64;
        (0..self.metrics.len())
            .map(|k| {
                let mean = self.rows.iter().map(|r| r.values[k]).sum::<f64>() / n;
                let var = self.rows.iter().map(|r| (r.values[k] - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Header, one row per pair, then `metric<TAB>mean<TAB>std` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("reference\ttest");
        for m in &self.metrics {
            write!(out, "\t{m}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}\t{}", r.reference, r.test).unwrap();
            for v in &r.values {
                write!(out, "\t{}", format_sig6(*v)).unwrap();
            }
            out.push('\n');
        }
        for (m, (mean, std)) in self.metrics.iter().zip(self.aggregates()) {
            writeln!(out, "{m}\t{}\t{}", format_sig6(mean), format_sig6(std)).unwrap();
        }
        out
    }
}

/// Scores named `(reference, test)` pairs in input order.
pub fn evaluate_pairs(pairs: &[(String, String, RgbImage, RgbImage)], metrics: &[Metric]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidParam("no image pairs to evaluate".into()));
    }
    if metrics.is_empty() {
        return Err(Error::Usage("no metrics selected".into()));
    }
    let rows = pairs
        .iter()
        .map(|(rn, tn, r, t)| {
            let values = metrics.iter().map(|m| m.compute(r, t)).collect::<Result<_>>()?;
            Ok(PairRow { reference: rn.clone(), test: tn.clone(), values })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { metrics: metrics.to_vec(), rows })
}

/// Reads a pairs manifest of `reference<TAB>test` lines (paths relative to
/// the manifest; blank lines and `#` comments skipped) and scores each pair.
pub fn evaluate_set(manifest: impl AsRef<Path>, metrics: &[Metric]) -> Result<MetricReport> {
    let manifest = manifest.as_ref();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let (Some(r), Some(t), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("{}:{}: expected reference<TAB>test", manifest.display(), ln + 1)));
        };
        let ri = load_png(base.join(r))?;
        let ti = load_png(base.join(t))?;
        pairs.push((r.to_string(), t.to_string(), ri, ti));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParam(format!("pairs manifest {} is empty", manifest.display())));
    }
    evaluate_pairs(&pairs, metrics)
}
