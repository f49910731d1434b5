//! Image containers, PNG I/O and patch tiling.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::{Error, Result};

/// 8-bit interleaved RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Uniformly coloured image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    /// Builds an image from a per-pixel function `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Self::new(w, h, data)
    }

    /// Largest centred crop whose sides are multiples of `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Self> {
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        if w == 0 || h == 0 {
            return Err(Error::TooSmall(format!(
                "{}x{} has no {multiple}-aligned crop",
                self.width, self.height
            )));
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }
}

/// Single-channel floating-point plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PlaneImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "plane length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("plane element {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &PlaneImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Elementwise map, keeping the finiteness invariant.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| decode_error(path, e))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u8));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::UnsupportedColorType(format!("{other:?}"))),
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_error(path, e))?;
    buf.truncate(frame.buffer_size());
    let data = if channels == 4 {
        buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    } else {
        buf
    };
    RgbImage::new(width, height, data)
}

fn decode_error(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::PngDecode(format!("{}: {other}", path.display())),
    }
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::PngEncode(other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&img.data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Non-overlapping `size`×`size` tiles in row-major tile order. Remainders at
/// the right and bottom edges are dropped.
pub fn extract_patches(img: &RgbImage, size: usize) -> Vec<RgbImage> {
    if size == 0 {
        return Vec::new();
    }
    let (nx, ny) = (img.width / size, img.height / size);
    let mut out = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            out.push(img.crop(tx * size, ty * size, size, size).expect("tile inside image"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]).unwrap()
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RgbImage::new(0, 2, vec![]).is_err());
        assert!(PlaneImage::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn png_round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(2, 2, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 250, 251, 252]).unwrap();
        let p = dir.path().join("a.png");
        save_png(&img, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), img);

        let one = RgbImage::filled(1, 1, [9, 8, 7]).unwrap();
        save_png(&one, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!((back.width(), back.height()), (1, 1));
        assert_eq!(back, one);
    }

    #[test]
    fn rgba_alpha_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgba.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[10, 20, 30, 0, 40, 50, 60, 255]).unwrap();
        w.finish().unwrap();
        let img = load_png(&p).unwrap();
        assert_eq!(img.data(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn sixteen_bit_and_gray_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0; 6]).unwrap();
        w.finish().unwrap();
        let err = load_png(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported bit depth"), "{err}");

        let p = dir.path().join("gray.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0]).unwrap();
        w.finish().unwrap();
        assert!(matches!(load_png(&p), Err(Error::UnsupportedColorType(_))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_png(&gradient(32, 32), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_png(&p).is_err());
        assert!(matches!(load_png(dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let img = gradient(2, 2);
        assert!(save_png(&img, "/nonexistent-dir/xyz/out.png").is_err());
    }

    #[test]
    fn patch_counts() {
        assert_eq!(extract_patches(&gradient(512, 512), 256).len(), 4);
        let p = extract_patches(&gradient(300, 300), 256);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], gradient(300, 300).crop(0, 0, 256, 256).unwrap());
        assert!(extract_patches(&gradient(100, 100), 256).is_empty());
    }

    #[test]
    fn patches_are_row_major_and_disjoint() {
        let img = gradient(7, 5);
        let tiles = extract_patches(&img, 2);
        assert_eq!(tiles.len(), 3 * 2);
        // second tile of the first row starts at x = 2
        assert_eq!(tiles[1].pixel(0, 0), img.pixel(2, 0));
        // first tile of the second row starts at y = 2
        assert_eq!(tiles[3].pixel(0, 0), img.pixel(0, 2));
    }

    #[test]
    fn center_crop() {
        let img = gradient(10, 7);
        let c = img.center_crop_to_multiple(4).unwrap();
        assert_eq!((c.width(), c.height()), (8, 4));
        assert_eq!(c.pixel(0, 0), img.pixel(1, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn png_round_trip_is_lossless(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
            let img = RgbImage::new(w, h, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.png");
            save_png(&img, &p).unwrap();
            prop_assert_eq!(load_png(&p).unwrap(), img);
        }

        #[test]
        fn patch_tiling_count(w in 1usize..70, h in 1usize..70, s in 1usize..20) {
            let img = gradient(w, h);
            let tiles = extract_patches(&img, s);
            prop_assert_eq!(tiles.len(), (w / s) * (h / s));
            for t in &tiles {
                prop_assert_eq!((t.width(), t.height()), (s, s));
            }
        }
    }
}
