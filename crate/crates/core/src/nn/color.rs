//! Differentiable Lab → sRGB → optical density → dye concentration chain.
//!
//! Built from tape primitives and the same constants as the plain
//! conversions, with linear RGB floored at [`LINEAR_FLOOR`] so the transfer
//! curve and the logarithm keep finite slopes.

use super::graph::{Graph, Unary, Var};
use crate::colorspace::{white_point, xyz_to_srgb};
use crate::stain::{OdParams, StainMatrix};
use crate::Result;

pub const LINEAR_FLOOR: f64 = 1e-6;

/// `(N, 3, H, W)` Lab → sRGB on the 0–255 scale, unclamped above.
pub fn lab_to_rgb(g: &mut Graph, lab: Var) -> Result<Var> {
    let k = 1.0 / 116.0;
    let off = 16.0 / 116.0;
    let f = g.channel_mix(
        lab,
        &[vec![k, 1.0 / 500.0, 0.0], vec![k, 0.0, 0.0], vec![k, 0.0, -1.0 / 200.0]],
        &[off, off, off],
    )?;
    let t = g.unary(f, Unary::LabFInv)?;
    let inv = xyz_to_srgb();
    let wp = white_point();
    let m: Vec<Vec<f64>> = (0..3).map(|r| (0..3).map(|c| inv[r][c] * wp[c]).collect()).collect();
    let linear = g.channel_mix(t, &m, &[0.0; 3])?;
    let linear = g.unary(linear, Unary::Floor(LINEAR_FLOOR))?;
    let encoded = g.unary(linear, Unary::SrgbEncode)?;
    g.affine(encoded, 255.0, 0.0)
}

/// sRGB (0–255) → natural-log optical density.
pub fn rgb_to_od(g: &mut Graph, rgb: Var, odp: &OdParams) -> Result<Var> {
    let v = g.unary(rgb, Unary::Floor(odp.floor))?;
    let ln = g.unary(v, Unary::Ln)?;
    g.affine(ln, -1.0, odp.i0.ln())
}

/// OD → `(H, E)` planes, each `(N, 1, H, W)`, clamped at zero.
pub fn od_to_he(g: &mut Graph, od: Var, sm: &StainMatrix) -> Result<(Var, Var)> {
    let inv = sm.inverse();
    // row-vector product: A_k = Σ_c y_c · inv[c][k]
    let m: Vec<Vec<f64>> = (0..2).map(|k| (0..3).map(|c| inv[c][k]).collect()).collect();
    let a = g.channel_mix(od, &m, &[0.0; 2])?;
    let h = g.slice_channels(a, 0, 1)?;
    let e = g.slice_channels(a, 1, 1)?;
    Ok((g.relu(h)?, g.relu(e)?))
}

pub fn rgb_to_he(g: &mut Graph, rgb: Var, sm: &StainMatrix, odp: &OdParams) -> Result<(Var, Var)> {
    let od = rgb_to_od(g, rgb, odp)?;
    od_to_he(g, od, sm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::{lab_pixel_to_rgb_f64, rgb_pixel_to_lab};
    use crate::nn::tensor::{Shape, Tensor};
    use crate::stain::concentrations;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_plain_conversion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 64;
        let labs: Vec<[f64; 3]> = (0..n)
            .map(|_| rgb_pixel_to_lab([rng.gen_range(5..=255), rng.gen_range(5..=255), rng.gen_range(5..=255)]))
            .collect();
        let mut vals = vec![0.0; 3 * n];
        for (i, lab) in labs.iter().enumerate() {
            for c in 0..3 {
                vals[c * n + i] = lab[c];
            }
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(Shape::new(1, 3, 1, n), vals).unwrap()).unwrap();
        let rgb = lab_to_rgb(&mut g, x).unwrap();
        let out = g.value(rgb);
        for (i, lab) in labs.iter().enumerate() {
            let want = lab_pixel_to_rgb_f64(*lab);
            for c in 0..3 {
                assert!((out.channel(0, c)[i] - want[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dye_planes_match_plain_deconvolution() {
        let sm = StainMatrix::default();
        let odp = OdParams::default();
        let px = [[120.0, 80.0, 160.0], [240.0, 200.0, 230.0], [30.0, 60.0, 90.0], [255.0, 255.0, 255.0]];
        let mut vals = vec![0.0; 12];
        for (i, p) in px.iter().enumerate() {
            for c in 0..3 {
                vals[c * 4 + i] = p[c];
            }
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(Shape::new(1, 3, 2, 2), vals).unwrap()).unwrap();
        let (h, e) = rgb_to_he(&mut g, x, &sm, &odp).unwrap();
        for (i, p) in px.iter().enumerate() {
            let a = concentrations(p.map(|v| odp.od(v)), &sm);
            assert!((g.value(h).values()[i] - a[0].max(0.0)).abs() < 1e-12);
            assert!((g.value(e).values()[i] - a[1].max(0.0)).abs() < 1e-12);
        }
    }
}
