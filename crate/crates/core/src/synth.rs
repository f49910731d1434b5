//! Synthetic two-style H&E corpus.
//!
//! Tissue is drawn as stain concentration maps (elliptical hematoxylin nuclei
//! over a diffuse eosin cytoplasm field) and rendered through Beer–Lambert
//! with a per-style stain matrix, dye intensity and background illuminant.
//! Two styles rendered from the same concentration seed stand in for one
//! section scanned on two different scanners.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::quantize;
use crate::image::{save_png, RgbImage};
use crate::stain::StainMatrix;
use crate::{Error, Result};

/// Upper bound on synthetic concentrations, in OD units.
pub const MAX_CONCENTRATION: f64 = 2.5;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthStyle {
    pub stain_matrix: StainMatrix,
    /// Dye intensity multipliers `(s_H, s_E)`, each in `(0, 4]`.
    pub intensity_scale: (f64, f64),
    pub background: [u8; 3],
    pub seed: u64,
}

impl SynthStyle {
    pub fn new(stain_matrix: StainMatrix, intensity_scale: (f64, f64), background: [u8; 3], seed: u64) -> Result<Self> {
        let ok = |s: f64| s > 0.0 && s <= 4.0;
        if !ok(intensity_scale.0) || !ok(intensity_scale.1) {
            return Err(Error::InvalidParam(format!("intensity scale {intensity_scale:?} outside (0, 4]")));
        }
        for (i, row) in stain_matrix.matrix().iter().enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParam(format!("style stain matrix row {i} has norm {n}")));
            }
        }
        Ok(Self { stain_matrix, intensity_scale, background, seed })
    }

    /// Target-domain style: the standard H&E vectors, neutral dye intensity.
    pub fn style_a(seed: u64) -> Self {
        let sm = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).expect("default rows");
        Self::new(sm, (1.0, 1.0), [244, 242, 248], seed).expect("valid style")
    }

    /// Source-domain style: rotated dye vectors, heavier hematoxylin, lighter
    /// eosin and a warmer illuminant.
    pub fn style_b(seed: u64) -> Self {
        let sm = StainMatrix::from_he([0.50, 0.78, 0.38], [0.20, 0.93, 0.30]).expect("style B rows");
        Self::new(sm, (1.4, 0.7), [238, 236, 228], seed).expect("valid style")
    }
}

/// Stain concentration maps for one synthetic field of view.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationMaps {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub e: Vec<f64>,
}

impl ConcentrationMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, h: vec![0.0; width * height], e: vec![0.0; width * height] }
    }

    /// Random tissue: 5–20 nuclei over a cytoplasm field with lumen gaps.
    pub fn sample(style_seed: u64, rng_seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(style_seed);
        rng.set_stream(rng_seed);
        let mut maps = Self::zeros(width, height);
        let (wf, hf) = (width as f64, height as f64);
        let size = wf.min(hf);

        // cytoplasm: broad gaussian bumps, thresholded so lumen stays empty
        let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(0.0..wf),
                    rng.gen_range(0.0..hf),
                    rng.gen_range(0.15..0.35) * size,
                    rng.gen_range(0.5..1.0),
                )
            })
            .collect();
        let gain = rng.gen_range(0.9..1.4);
        let (fx, fy, phase) = (rng.gen_range(2.0..6.0) / wf, rng.gen_range(2.0..6.0) / hf, rng.gen_range(0.0..6.3));
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                let field: f64 = bumps
                    .iter()
                    .map(|&(cx, cy, s, a)| a * (-((xf - cx).powi(2) + (yf - cy).powi(2)) / (2.0 * s * s)).exp())
                    .sum();
                let fibre = 0.85 + 0.15 * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).sin();
                let grain = 0.9 + 0.2 * rng.gen::<f64>();
                let v = ((field - 0.3) * gain).max(0.0) * fibre * grain;
                maps.e[y * width + x] = v.min(MAX_CONCENTRATION);
            }
        }

        let nuclei = rng.gen_range(5..=20);
        for _ in 0..nuclei {
            let cx = rng.gen_range(0.0..wf);
            let cy = rng.gen_range(0.0..hf);
            let ra = rng.gen_range(0.03..0.07) * size;
            let rb = ra * rng.gen_range(0.55..1.0);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let peak = rng.gen_range(0.8..2.0);
            let (s, c) = theta.sin_cos();
            let reach = ra.ceil() as isize + 1;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (px, py) = (cx as isize + dx, cy as isize + dy);
                    if px < 0 || py < 0 || px >= width as isize || py >= height as isize {
                        continue;
                    }
                    let (ox, oy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                    let u = (ox * c + oy * s) / ra;
                    let v = (-ox * s + oy * c) / rb;
                    let d2 = u * u + v * v;
                    if d2 >= 1.0 {
                        continue;
                    }
                    let i = py as usize * width + px as usize;
                    let chromatin = 0.8 + 0.4 * rng.gen::<f64>();
                    let val = peak * (1.0 - d2).sqrt() * chromatin;
                    maps.h[i] = (maps.h[i] + val).min(MAX_CONCENTRATION);
                    maps.e[i] *= 0.3;
                }
            }
        }
        maps
    }
}

/// Beer–Lambert rendering with the style background as incident light.
pub fn render(style: &SynthStyle, maps: &ConcentrationMaps) -> RgbImage {
    let m = style.stain_matrix.matrix();
    let (sh, se) = style.intensity_scale;
    let bg = style.background.map(f64::from);
    let mut data = Vec::with_capacity(maps.width * maps.height * 3);
    for (&ah, &ae) in maps.h.iter().zip(&maps.e) {
        for c in 0..3 {
            let od = sh * ah * m[0][c] + se * ae * m[1][c];
            data.push(quantize(bg[c] * (-od).exp()));
        }
    }
    RgbImage::new(maps.width, maps.height, data).expect("dims carried from maps")
}

pub fn synth_image(style: &SynthStyle, width: usize, height: usize, rng_seed: u64) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParam(format!("synthetic image needs positive size, got {width}x{height}")));
    }
    Ok(render(style, &ConcentrationMaps::sample(style.seed, rng_seed, width, height)))
}

/// Writes `count` images per style and a `path<TAB>label` manifest into `out_dir`.
/// Returns the manifest path.
pub fn synth_corpus(
    style_a: &SynthStyle,
    style_b: &SynthStyle,
    count: usize,
    size: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    if count == 0 {
        return Err(Error::InvalidParam("corpus count must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    for (label, style) in [("A", style_a), ("B", style_b)] {
        for i in 0..count {
            let name = format!("{label}_{i:04}.png");
            let img = synth_image(style, size, size, i as u64)?;
            save_png(&img, out_dir.join(&name))?;
            writeln!(manifest, "{name}\t{label}").expect("string write");
        }
    }
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Reads a `relative_path<TAB>label` manifest; paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (p, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("{}:{}: expected path<TAB>label", path.display(), n + 1)))?;
            Ok(ManifestEntry { path: base.join(p), label: label.trim_end().to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::{extract_he, OdParams};

    fn white_style(scale: (f64, f64)) -> SynthStyle {
        SynthStyle::new(
            StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap(),
            scale,
            [255, 255, 255],
            9,
        )
        .unwrap()
    }

    #[test]
    fn style_validation() {
        let sm = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        assert!(SynthStyle::new(sm.clone(), (0.0, 1.0), [255; 3], 0).is_err());
        assert!(SynthStyle::new(sm.clone(), (1.0, 4.5), [255; 3], 0).is_err());
        assert!(SynthStyle::new(StainMatrix::default(), (1.0, 1.0), [255; 3], 0).is_err());
        assert!(SynthStyle::new(sm, (4.0, 0.1), [255; 3], 0).is_ok());
    }

    #[test]
    fn empty_tissue_is_background() {
        let style = SynthStyle::style_b(1);
        let img = render(&style, &ConcentrationMaps::zeros(8, 5));
        assert!(img.pixels().all(|p| p == style.background));
    }

    #[test]
    fn unit_hematoxylin_pixel() {
        // white illuminant and the literal default rows
        let style = SynthStyle { stain_matrix: StainMatrix::default(), intensity_scale: (1.0, 1.0), background: [255; 3], seed: 0 };
        let mut maps = ConcentrationMaps::zeros(4, 4);
        maps.h[5] = 1.0;
        let img = render(&style, &maps);
        assert_eq!(img.pixel(1, 1), [133, 127, 191]);
        assert_eq!(img.pixel(0, 0), [255; 3]);
    }

    #[test]
    fn deterministic_and_bounded() {
        let style = SynthStyle::style_a(4);
        let a = synth_image(&style, 48, 40, 3).unwrap();
        assert_eq!(a, synth_image(&style, 48, 40, 3).unwrap());
        assert_ne!(a, synth_image(&style, 48, 40, 4).unwrap());
        let maps = ConcentrationMaps::sample(4, 3, 48, 40);
        assert!(maps.h.iter().chain(&maps.e).all(|&v| (0.0..=MAX_CONCENTRATION).contains(&v)));
        assert!(maps.h.iter().any(|&v| v > 0.0) && maps.e.iter().any(|&v| v > 0.0));
        // lumen pixels render as the background exactly
        let img = render(&style, &maps);
        for (i, p) in img.pixels().enumerate() {
            if maps.h[i] == 0.0 && maps.e[i] == 0.0 {
                assert_eq!(p, style.background);
            }
        }
    }

    #[test]
    fn recovered_hematoxylin_scales_with_intensity() {
        let maps = ConcentrationMaps::sample(21, 0, 96, 96);
        let p = OdParams::default();
        let sm = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        let (h1, _) = extract_he(&render(&white_style((1.0, 1.0)), &maps), &sm, &p);
        let (h2, _) = extract_he(&render(&white_style((1.5, 1.0)), &maps), &sm, &p);
        let (mut s1, mut s2) = (0.0, 0.0);
        for (a, b) in h1.data().iter().zip(h2.data()) {
            if *a > 0.1 {
                s1 += a;
                s2 += b;
            }
        }
        let ratio = s2 / s1;
        assert!((ratio - 1.5).abs() < 0.02 * 1.5, "ratio {ratio}");
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/corpus");
        let manifest = synth_corpus(&SynthStyle::style_a(7), &SynthStyle::style_b(7), 3, 16, &out).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 6);
        assert_eq!(entries.iter().filter(|e| e.label == "A").count(), 3);
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.starts_with("A_0000.png\tA\n"));
        assert_eq!(fs::read_dir(&out).unwrap().count(), 7);
        assert!(synth_corpus(&SynthStyle::style_a(7), &SynthStyle::style_b(7), 0, 16, &out).is_err());
    }

    #[test]
    fn same_seed_shares_tissue() {
        let a = SynthStyle::style_a(5);
        let b = SynthStyle::style_b(5);
        let ma = ConcentrationMaps::sample(a.seed, 0, 32, 32);
        let mb = ConcentrationMaps::sample(b.seed, 0, 32, 32);
        assert_eq!(ma, mb);
        assert_eq!(synth_image(&b, 32, 32, 0).unwrap(), render(&b, &mb));
    }
}
