use std::fmt;
use std::path::Path;

use crate::colorspace::{lab_to_rgb, rgb_to_lab, LabImage};
use crate::image::{PlaneImage, RgbImage};
use crate::{Error, Result};

/// Per-channel Lab mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

const LABELS: [&str; 6] = ["mean_l", "mean_a", "mean_b", "std_l", "std_a", "std_b"];

impl LabStats {
    pub fn of_lab(lab: &LabImage) -> Self {
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for (c, plane) in [&lab.l, &lab.a, &lab.b].into_iter().enumerate() {
            let (m, s) = mean_std(plane.data());
            mean[c] = m;
            std[c] = s;
        }
        Self { mean, std }
    }

    /// Parses six `label value` lines; order is free, all six are required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 6];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut it = line.split_whitespace();
            let (Some(key), Some(val), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("expected `label value`, got {line:?}")));
            };
            let idx = LABELS
                .iter()
                .position(|l| *l == key)
                .ok_or_else(|| Error::Parse(format!("unknown Lab statistic {key:?}")))?;
            vals[idx] = Some(val.parse::<f64>().map_err(|e| Error::Parse(format!("{key}: {e}")))?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::Parse(format!("missing {}", LABELS[i])));
        let stats = Self { mean: [get(0)?, get(1)?, get(2)?], std: [get(3)?, get(4)?, get(5)?] };
        if stats.std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::Parse("standard deviations must be finite and non-negative".into()));
        }
        Ok(stats)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl fmt::Display for LabStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals = [self.mean[0], self.mean[1], self.mean[2], self.std[0], self.std[1], self.std[2]];
        for (label, v) in LABELS.iter().zip(vals) {
            writeln!(f, "{label} {v:?}")?;
        }
        Ok(())
    }
}

/// Shifted two-moment pass; exact zero spread for constant input.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let shift = v[0];
    let (s1, s2) = v.iter().fold((0.0, 0.0), |(a, b), x| (a + (x - shift), b + (x - shift) * (x - shift)));
    let d = s1 / n;
    (shift + d, (s2 / n - d * d).max(0.0).sqrt())
}

pub fn lab_stats(img: &RgbImage) -> LabStats {
    LabStats::of_lab(&rgb_to_lab(img))
}

/// Affine per-channel matching in Lab, before any gamut clamping.
pub fn reinhard_lab(src: &LabImage, target: &LabStats) -> LabImage {
    let s = LabStats::of_lab(src);
    let map = |plane: &PlaneImage, c: usize| {
        let (mu, sd) = (s.mean[c], s.std[c]);
        let gain = if sd < 1e-6 { 1.0 } else { target.std[c] / sd };
        plane.map(|v| (v - mu) * gain + target.mean[c]).expect("finite affine map")
    };
    LabImage { l: map(&src.l, 0), a: map(&src.a, 1), b: map(&src.b, 2) }
}

pub fn reinhard_normalize(src: &RgbImage, target: &LabStats) -> RgbImage {
    lab_to_rgb(&reinhard_lab(&rgb_to_lab(src), target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn lab_with_l(l: Vec<f64>) -> LabImage {
        let n = l.len();
        LabImage::new(
            PlaneImage::new(n, 1, l).unwrap(),
            PlaneImage::filled(n, 1, 0.0).unwrap(),
            PlaneImage::filled(n, 1, 0.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_image_has_zero_spread() {
        let s = lab_stats(&RgbImage::filled(5, 5, [200, 100, 50]).unwrap());
        assert_eq!(s.std, [0.0; 3]);
    }

    #[test]
    fn two_pixel_statistics_and_mapping() {
        let lab = lab_with_l(vec![40.0, 60.0]);
        let s = LabStats::of_lab(&lab);
        assert!((s.mean[0] - 50.0).abs() < 1e-12 && (s.std[0] - 10.0).abs() < 1e-12);
        let out = reinhard_lab(&lab, &LabStats { mean: [30.0, 0.0, 0.0], std: [5.0, 0.0, 0.0] });
        assert!((out.l.data()[0] - 25.0).abs() < 1e-12);
        assert!((out.l.data()[1] - 35.0).abs() < 1e-12);
    }

    #[test]
    fn stats_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let img = RgbImage::from_fn(9, 7, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap();
        let s = lab_stats(&img);
        let labs: Vec<[f64; 3]> = img.pixels().map(crate::colorspace::rgb_pixel_to_lab).collect();
        for c in 0..3 {
            let mean = labs.iter().map(|p| p[c]).sum::<f64>() / labs.len() as f64;
            let var = labs.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>() / labs.len() as f64;
            assert!((s.mean[c] - mean).abs() < 1e-9);
            assert!((s.std[c] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn self_statistics_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let img = RgbImage::from_fn(20, 20, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap();
        let out = reinhard_normalize(&img, &lab_stats(&img));
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn constant_image_takes_target_means() {
        let target = LabStats { mean: [70.0, 12.0, -8.0], std: [9.0, 4.0, 3.0] };
        let out = reinhard_lab(&rgb_to_lab(&RgbImage::filled(3, 3, [90, 120, 30]).unwrap()), &target);
        for c in 0..3 {
            let plane = [&out.l, &out.a, &out.b][c];
            assert!(plane.data().iter().all(|v| (v - target.mean[c]).abs() < 1e-9));
        }
        let rgb = reinhard_normalize(&RgbImage::filled(3, 3, [90, 120, 30]).unwrap(), &target);
        assert!(rgb.pixels().all(|p| p == rgb.pixel(0, 0)));
    }

    #[test]
    fn output_means_hit_target() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let img = RgbImage::from_fn(24, 24, |_, _| [rng.gen_range(100..255), rng.gen_range(50..200), rng.gen_range(120..255)]).unwrap();
        let target = LabStats { mean: [65.0, 20.0, -15.0], std: [12.0, 6.0, 7.0] };
        let out = reinhard_lab(&rgb_to_lab(&img), &target);
        let got = out.means();
        for c in 0..3 {
            assert!((got[c] - target.mean[c]).abs() < 0.5);
        }
    }

    #[test]
    fn text_round_trip() {
        let s = LabStats { mean: [61.5, 18.25, -9.0], std: [11.0, 4.5, 0.0] };
        assert_eq!(LabStats::parse(&s.to_string()).unwrap(), s);
        assert!(LabStats::parse("mean_l 1\nmean_a 2").is_err());
        assert!(LabStats::parse("mean_q 1").is_err());
    }
}
