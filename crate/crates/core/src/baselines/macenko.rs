use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::percentile_nearest_rank;
use crate::image::{PlaneImage, RgbImage};
use crate::stain::{deconvolve, restain, rgb_to_od, OdParams, StainImage, StainMatrix};
use crate::{Error, Result};

/// Tissue pixels required before a stain plane is fitted.
pub const MIN_TISSUE_PIXELS: usize = 100;

/// Second-to-first eigenvalue ratio below which the OD cloud is treated as
/// a single line.
const MIN_EIGEN_RATIO: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacenkoParams {
    /// Angle percentile for the extreme stain directions, in percent.
    pub alpha_percentile: f64,
    /// Minimum OD magnitude for a pixel to count as tissue.
    pub beta_od_threshold: f64,
    /// Concentration percentile used as the per-dye maximum, in percent.
    pub conc_percentile: f64,
}

impl Default for MacenkoParams {
    fn default() -> Self {
        Self { alpha_percentile: 1.0, beta_od_threshold: 0.15, conc_percentile: 99.0 }
    }
}

impl MacenkoParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha_percentile > 0.0 && self.alpha_percentile < 50.0) {
            return Err(Error::InvalidParam(format!("alpha percentile {} outside (0, 50)", self.alpha_percentile)));
        }
        if !(self.beta_od_threshold > 0.0) {
            return Err(Error::InvalidParam(format!("OD threshold {} must be positive", self.beta_od_threshold)));
        }
        if !(self.conc_percentile > 0.0 && self.conc_percentile <= 100.0) {
            return Err(Error::InvalidParam(format!("concentration percentile {} outside (0, 100]", self.conc_percentile)));
        }
        Ok(())
    }
}

fn positive(v: Vector3<f64>) -> Vector3<f64> {
    if v.sum() < 0.0 {
        -v
    } else {
        v
    }
}

/// Fits H and E directions to the OD cloud of `img`: the plane of the two
/// dominant covariance eigenvectors, the extreme angle percentiles within it,
/// and the residual as their cross product.
pub fn macenko_estimate(img: &RgbImage, p: &MacenkoParams, odp: &OdParams) -> Result<StainMatrix> {
    p.validate()?;
    let tissue: Vec<Vector3<f64>> = rgb_to_od(img, odp)
        .data
        .into_iter()
        .map(Vector3::from)
        .filter(|y| y.norm() > p.beta_od_threshold)
        .collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::InsufficientTissue { found: tissue.len(), required: MIN_TISSUE_PIXELS });
    }

    let n = tissue.len() as f64;
    let mean = tissue.iter().sum::<Vector3<f64>>() / n;
    let cov = tissue
        .iter()
        .map(|y| (y - mean) * (y - mean).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let ratio = if l1 > 0.0 { l2 / l1 } else { 0.0 };
    if ratio < MIN_EIGEN_RATIO {
        return Err(Error::DegenerateCovariance(ratio));
    }
    let e1 = positive(eig.eigenvectors.column(order[0]).into_owned());
    let e2 = positive(eig.eigenvectors.column(order[1]).into_owned());

    let mut angles: Vec<f64> = tissue.iter().map(|y| y.dot(&e2).atan2(y.dot(&e1))).collect();
    let lo = percentile_nearest_rank(&mut angles, p.alpha_percentile).expect("non-empty");
    let hi = percentile_nearest_rank(&mut angles, 100.0 - p.alpha_percentile).expect("non-empty");
    let dir = |phi: f64| positive(e1 * phi.cos() + e2 * phi.sin()).normalize();
    let (va, vb) = (dir(lo), dir(hi));
    let (h, e) = if va[0] >= vb[0] { (va, vb) } else { (vb, va) };
    StainMatrix::from_he(h.into(), e.into())
}

fn max_concentrations(stain: &StainImage, pct: f64) -> (f64, f64) {
    let mut h = stain.h.data().to_vec();
    let mut e = stain.e.data().to_vec();
    (
        percentile_nearest_rank(&mut h, pct).expect("non-empty"),
        percentile_nearest_rank(&mut e, pct).expect("non-empty"),
    )
}

/// Target stain matrix and its reference maximum concentrations `(cH, cE)`.
pub fn macenko_target(img: &RgbImage, p: &MacenkoParams, odp: &OdParams) -> Result<(StainMatrix, (f64, f64))> {
    let sm = macenko_estimate(img, p, odp)?;
    let c = max_concentrations(&deconvolve(img, &sm, odp), p.conc_percentile);
    Ok((sm, c))
}

/// Deconvolves `src` with its own estimated stains, rescales each dye so its
/// percentile maximum matches `target_max_c`, and re-renders with `target_sm`.
/// The residual channel is discarded.
pub fn macenko_normalize(
    src: &RgbImage,
    target_sm: &StainMatrix,
    target_max_c: (f64, f64),
    p: &MacenkoParams,
    odp: &OdParams,
) -> Result<RgbImage> {
    let sm = macenko_estimate(src, p, odp)?;
    let stain = deconvolve(src, &sm, odp);
    let (ch, ce) = max_concentrations(&stain, p.conc_percentile);
    if ch <= 1e-12 || ce <= 1e-12 {
        return Err(Error::InsufficientTissue { found: 0, required: MIN_TISSUE_PIXELS });
    }
    let (gh, ge) = (target_max_c.0 / ch, target_max_c.1 / ce);
    let (w, h) = (src.width(), src.height());
    let scaled = StainImage::new(
        stain.h.map(|v| v * gh)?,
        stain.e.map(|v| v * ge)?,
        PlaneImage::filled(w, h, 0.0)?,
    )?;
    Ok(restain(&scaled, target_sm, odp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::concentrations;
    use crate::synth::{render, ConcentrationMaps, SynthStyle};

    fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
        let (va, vb) = (Vector3::from(a).normalize(), Vector3::from(b).normalize());
        va.dot(&vb).clamp(-1.0, 1.0).acos()
    }

    /// Three vertical bands: pure H ramp, pure E ramp, and a mixture.
    fn two_dye_maps(w: usize, h: usize) -> ConcentrationMaps {
        two_dye_maps_from(w, h, 0.2)
    }

    fn two_dye_maps_from(w: usize, h: usize, lo: f64) -> ConcentrationMaps {
        let mut m = ConcentrationMaps::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let t = lo + (1.8 - lo) * (y as f64 / h as f64);
                let i = y * w + x;
                match 3 * x / w {
                    0 => m.h[i] = t,
                    1 => m.e[i] = t,
                    _ => {
                        m.h[i] = 0.5 * t;
                        m.e[i] = 0.2 + 0.8 * (x as f64 / w as f64);
                    }
                }
            }
        }
        m
    }

    fn white(sm: StainMatrix) -> SynthStyle {
        SynthStyle { stain_matrix: sm, intensity_scale: (1.0, 1.0), background: [255; 3], seed: 0 }
    }

    #[test]
    fn recovers_known_vectors() {
        let truth = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        let img = render(&white(truth.clone()), &two_dye_maps(90, 60));
        let est = macenko_estimate(&img, &MacenkoParams::default(), &OdParams::default()).unwrap();
        assert!(angle(est.row(0), truth.row(0)) < 0.05, "{:?}", est);
        assert!(angle(est.row(1), truth.row(1)) < 0.05, "{:?}", est);
        for r in 0..3 {
            let n: f64 = est.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_rotated_vectors() {
        let truth = SynthStyle::style_b(0).stain_matrix;
        let img = render(&white(truth.clone()), &two_dye_maps(90, 60));
        let est = macenko_estimate(&img, &MacenkoParams::default(), &OdParams::default()).unwrap();
        assert!(angle(est.row(0), truth.row(0)) < 0.05);
        assert!(angle(est.row(1), truth.row(1)) < 0.05);
    }

    #[test]
    fn blank_image_has_no_tissue() {
        let img = RgbImage::filled(50, 50, [255; 3]).unwrap();
        let err = macenko_estimate(&img, &MacenkoParams::default(), &OdParams::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientTissue { found: 0, .. }));
        let t = StainMatrix::default();
        assert!(macenko_normalize(&img, &t, (1.0, 1.0), &MacenkoParams::default(), &OdParams::default()).is_err());
    }

    #[test]
    fn single_dye_is_degenerate() {
        let mut maps = ConcentrationMaps::zeros(40, 40);
        for (i, v) in maps.h.iter_mut().enumerate() {
            *v = 0.3 + 2.0 * (i as f64 / 1600.0);
        }
        let img = render(&white(StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap()), &maps);
        let err = macenko_estimate(&img, &MacenkoParams::default(), &OdParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance(_)), "{err}");
    }

    #[test]
    fn brightness_scaling_keeps_the_stain_plane() {
        // A uniform gain on transmitted light shifts every OD vector by
        // −ln κ·(1,1,1). The centred covariance, and with it the fitted plane,
        // is unchanged as long as no channel clips; the in-plane extreme
        // angles do move, so only the plane normal is compared.
        let truth = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        let maps = two_dye_maps_from(90, 60, 0.5);
        let style = SynthStyle { stain_matrix: truth, intensity_scale: (1.0, 1.0), background: [200; 3], seed: 0 };
        let img = render(&style, &maps);
        let p = MacenkoParams::default();
        let odp = OdParams::default();
        let base = macenko_estimate(&img, &p, &odp).unwrap();
        for kappa in [0.8, 0.9, 1.1, 1.25] {
            let scaled = RgbImage::from_fn(img.width(), img.height(), |x, y| {
                img.pixel(x, y).map(|c| crate::colorspace::quantize(c as f64 * kappa))
            })
            .unwrap();
            let est = macenko_estimate(&scaled, &p, &odp).unwrap();
            let a = angle(est.row(2), base.row(2));
            assert!(a < 0.05, "kappa {kappa}: plane normal moved {a}");
        }
    }

    #[test]
    fn self_target_is_a_no_op() {
        let truth = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        let img = render(&white(truth), &two_dye_maps(90, 60));
        let p = MacenkoParams::default();
        let odp = OdParams::default();
        let (sm, c) = macenko_target(&img, &p, &odp).unwrap();
        let out = macenko_normalize(&img, &sm, c, &p, &odp).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 2, "{a} vs {b}");
        }
    }

    #[test]
    fn doubling_target_h_doubles_output_h() {
        let truth = StainMatrix::from_rows_normalized(StainMatrix::DEFAULT_HE).unwrap();
        let img = render(&white(truth), &two_dye_maps(90, 60));
        let p = MacenkoParams::default();
        let odp = OdParams::default();
        let (sm, (ch, ce)) = macenko_target(&img, &p, &odp).unwrap();
        let once = macenko_normalize(&img, &sm, (ch * 0.5, ce), &p, &odp).unwrap();
        let twice = macenko_normalize(&img, &sm, (ch, ce), &p, &odp).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        for (a, b) in once.pixels().zip(twice.pixels()) {
            let h1 = concentrations(a.map(|c| odp.od(c as f64)), &sm)[0];
            let h2 = concentrations(b.map(|c| odp.od(c as f64)), &sm)[0];
            if h1 > 0.1 && b.iter().all(|&c| c > 5) {
                s1 += h1;
                s2 += h2;
            }
        }
        let ratio = s2 / s1;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn parameter_validation() {
        let img = RgbImage::filled(20, 20, [100; 3]).unwrap();
        let bad = MacenkoParams { alpha_percentile: 60.0, ..Default::default() };
        assert!(matches!(macenko_estimate(&img, &bad, &OdParams::default()), Err(Error::InvalidParam(_))));
    }
}
