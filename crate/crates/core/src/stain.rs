//! Beer–Lambert optical density and colour deconvolution.
//!
//! Transmitted light follows `I = I0 · exp(−OD)`, and a pixel's OD row vector
//! is a stain-concentration row vector times the stain matrix: `y = A · M`.
//! Optical density here is natural-log based.

use std::path::Path;

use crate::image::{PlaneImage, RgbImage};
use crate::mat3::{self, Mat3};
use crate::{Error, Result};

/// Pure-stain OD matrix, rows = hematoxylin, eosin, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct StainMatrix {
    m: Mat3,
    inv: Mat3,
}

impl StainMatrix {
    /// Hematoxylin / eosin / residual unit OD vectors used by default.
    pub const DEFAULT_HE: Mat3 = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];

    pub fn new(m: Mat3) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("stain matrix has non-finite entries".into()));
        }
        let d = mat3::det(&m);
        if d.abs() <= 1e-6 {
            return Err(Error::SingularMatrix(d));
        }
        Ok(Self { m, inv: mat3::inverse(&m) })
    }

    /// Like [`StainMatrix::new`] with every row scaled to unit length.
    pub fn from_rows_normalized(rows: Mat3) -> Result<Self> {
        let mut m = rows;
        for row in m.iter_mut() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::SingularMatrix(0.0));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Self::new(m)
    }

    /// H and E rows with the residual completed as their normalized cross product.
    pub fn from_he(h: [f64; 3], e: [f64; 3]) -> Result<Self> {
        let r = [h[1] * e[2] - h[2] * e[1], h[2] * e[0] - h[0] * e[2], h[0] * e[1] - h[1] * e[0]];
        Self::from_rows_normalized([h, e, r])
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.inv
    }

    pub fn row(&self, i: usize) -> [f64; 3] {
        self.m[i]
    }

    /// Parses nine whitespace-separated floats, row-major.
    pub fn parse(text: &str) -> Result<Self> {
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("stain matrix entry {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 9 {
            return Err(Error::Parse(format!("stain matrix needs 9 values, found {}", vals.len())));
        }
        Self::new([
            [vals[0], vals[1], vals[2]],
            [vals[3], vals[4], vals[5]],
            [vals[6], vals[7], vals[8]],
        ])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Three lines of three values; `{:?}` keeps the text round trip exact.
    pub fn to_text(&self) -> String {
        self.m
            .iter()
            .map(|r| format!("{:?} {:?} {:?}\n", r[0], r[1], r[2]))
            .collect()
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::new(Self::DEFAULT_HE).expect("default matrix is invertible")
    }
}

/// Incident light and transmitted-light floor, on the 8-bit scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdParams {
    pub i0: f64,
    pub floor: f64,
}

impl OdParams {
    pub fn new(i0: f64, floor: f64) -> Result<Self> {
        if !(1.0 <= floor && floor < i0 && i0 <= 255.0) {
            return Err(Error::InvalidParam(format!(
                "OD parameters need 1 <= floor < i0 <= 255, got floor={floor}, i0={i0}"
            )));
        }
        Ok(Self { i0, floor })
    }

    #[inline]
    pub fn od(&self, v: f64) -> f64 {
        -(v.max(self.floor) / self.i0).ln()
    }

    #[inline]
    pub fn transmit(&self, od: f64) -> u8 {
        crate::colorspace::quantize(self.i0 * (-od).exp())
    }
}

impl Default for OdParams {
    fn default() -> Self {
        Self { i0: 255.0, floor: 1.0 }
    }
}

/// Per-pixel OD triples.
#[derive(Clone, Debug, PartialEq)]
pub struct OdImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

/// Stain concentration planes.
#[derive(Clone, Debug, PartialEq)]
pub struct StainImage {
    pub h: PlaneImage,
    pub e: PlaneImage,
    pub residual: PlaneImage,
}

impl StainImage {
    pub fn new(h: PlaneImage, e: PlaneImage, residual: PlaneImage) -> Result<Self> {
        if !h.same_dims(&e) || !h.same_dims(&residual) {
            return Err(Error::Shape("stain planes differ in size".into()));
        }
        Ok(Self { h, e, residual })
    }

    pub fn width(&self) -> usize {
        self.h.width()
    }

    pub fn height(&self) -> usize {
        self.h.height()
    }
}

pub fn rgb_to_od(img: &RgbImage, p: &OdParams) -> OdImage {
    OdImage {
        width: img.width(),
        height: img.height(),
        data: img.pixels().map(|px| px.map(|c| p.od(f64::from(c)))).collect(),
    }
}

pub fn od_to_rgb(od: &OdImage, p: &OdParams) -> RgbImage {
    let data = od.data.iter().flat_map(|y| y.map(|v| p.transmit(v))).collect();
    RgbImage::new(od.width, od.height, data).expect("dims carried from OD image")
}

/// Concentrations of one OD row vector, unclamped.
#[inline]
pub fn concentrations(y: [f64; 3], sm: &StainMatrix) -> [f64; 3] {
    mat3::vec_mul(y, &sm.inv)
}

pub fn deconvolve(img: &RgbImage, sm: &StainMatrix, p: &OdParams) -> StainImage {
    let n = img.pixel_count();
    let (mut h, mut e, mut r) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.pixels() {
        let a = concentrations(px.map(|c| p.od(f64::from(c))), sm);
        h.push(a[0].max(0.0));
        e.push(a[1].max(0.0));
        r.push(a[2]);
    }
    let (w, ht) = (img.width(), img.height());
    StainImage {
        h: PlaneImage::new(w, ht, h).expect("finite H"),
        e: PlaneImage::new(w, ht, e).expect("finite E"),
        residual: PlaneImage::new(w, ht, r).expect("finite residual"),
    }
}

pub fn restain(stain: &StainImage, sm: &StainMatrix, p: &OdParams) -> RgbImage {
    let n = stain.width() * stain.height();
    let data = (0..n)
        .map(|i| [stain.h.data()[i], stain.e.data()[i], stain.residual.data()[i]])
        .map(|a| mat3::vec_mul(a, &sm.m))
        .collect();
    od_to_rgb(&OdImage { width: stain.width(), height: stain.height(), data }, p)
}

/// The hematoxylin and eosin planes fed to the re-stainer.
pub fn extract_he(img: &RgbImage, sm: &StainMatrix, p: &OdParams) -> (PlaneImage, PlaneImage) {
    let s = deconvolve(img, sm, p);
    (s.h, s.e)
}
