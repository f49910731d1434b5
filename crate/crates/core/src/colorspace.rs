//! sRGB ↔ CIE Lab (D65) conversion and luminance extraction.
//!
//! All colour constants live here; the differentiable variant in
//! [`crate::nn::color`] reuses them so training and evaluation agree.

use std::sync::OnceLock;

use crate::image::{PlaneImage, RgbImage};
use crate::mat3::{self, Mat3};
use crate::{Error, Result};

/// Linear sRGB → XYZ, D65.
pub const SRGB_TO_XYZ: Mat3 = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white: the XYZ of linear (1, 1, 1), so sRGB white maps to
/// L = 100, a = b = 0 without residue.
pub fn white_point() -> [f64; 3] {
    mat3::mul_vec(&SRGB_TO_XYZ, [1.0, 1.0, 1.0])
}

pub fn xyz_to_srgb() -> &'static Mat3 {
    static INV: OnceLock<Mat3> = OnceLock::new();
    INV.get_or_init(|| mat3::inverse(&SRGB_TO_XYZ))
}

const DELTA: f64 = 6.0 / 29.0;

#[inline]
pub fn srgb_decode(u: f64) -> f64 {
    if u <= 0.04045 {
        u / 12.92
    } else {
        ((u + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
pub fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// One 8-bit sRGB pixel to `(L, a, b)`.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_decode(f64::from(c) / 255.0));
    let xyz = mat3::mul_vec(&SRGB_TO_XYZ, lin);
    let wp = white_point();
    let fx = lab_f(xyz[0] / wp[0]);
    let fy = lab_f(xyz[1] / wp[1]);
    let fz = lab_f(xyz[2] / wp[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// `(L, a, b)` to sRGB on the 0–255 scale, before clamping and rounding.
pub fn lab_pixel_to_rgb_f64(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white_point();
    let xyz = [wp[0] * lab_f_inv(fx), wp[1] * lab_f_inv(fy), wp[2] * lab_f_inv(fz)];
    mat3::mul_vec(xyz_to_srgb(), xyz).map(|v| 255.0 * srgb_encode(v))
}

/// Clamps to [0, 255] then rounds half away from zero.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}

pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    lab_pixel_to_rgb_f64(lab).map(quantize)
}

/// Planar Lab image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub l: PlaneImage,
    pub a: PlaneImage,
    pub b: PlaneImage,
}

impl LabImage {
    pub fn new(l: PlaneImage, a: PlaneImage, b: PlaneImage) -> Result<Self> {
        if !l.same_dims(&a) || !l.same_dims(&b) {
            return Err(Error::Shape("Lab planes differ in size".into()));
        }
        Ok(Self { l, a, b })
    }

    pub fn width(&self) -> usize {
        self.l.width()
    }

    pub fn height(&self) -> usize {
        self.l.height()
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.l.data()[i], self.a.data()[i], self.b.data()[i]]
    }

    /// Channel means `(L, a, b)`.
    pub fn means(&self) -> [f64; 3] {
        [self.l.mean(), self.a.mean(), self.b.mean()]
    }
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.pixel_count();
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for p in img.pixels() {
        let lab = rgb_pixel_to_lab(p);
        l.push(lab[0]);
        a.push(lab[1]);
        b.push(lab[2]);
    }
    let (w, h) = (img.width(), img.height());
    LabImage {
        l: PlaneImage::new(w, h, l).expect("finite L"),
        a: PlaneImage::new(w, h, a).expect("finite a"),
        b: PlaneImage::new(w, h, b).expect("finite b"),
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let n = img.width() * img.height();
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        data.extend_from_slice(&lab_pixel_to_rgb(img.pixel(i)));
    }
    RgbImage::new(img.width(), img.height(), data).expect("dims carried from Lab")
}

/// The de-stained luminance plane.
pub fn extract_l(img: &RgbImage) -> PlaneImage {
    let data = img.pixels().map(|p| rgb_pixel_to_lab(p)[0]).collect();
    PlaneImage::new(img.width(), img.height(), data).expect("finite L")
}
