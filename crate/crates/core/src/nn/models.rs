//! The re-stainer (generator) and patch discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::tensor::{Shape, Tensor};
use crate::colorspace::LabImage;
use crate::image::PlaneImage;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
/// H and E are clamped to this OD before scaling to `[0, 1]`.
pub const DYE_INPUT_MAX: f64 = 3.0;
pub const L_SCALE: f64 = 100.0;
pub const AB_SCALE: f64 = 127.0;

/// A convolution whose weights live in an owning [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub name: String,
    weight: usize,
    bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    fn new(
        set: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let weight = set.push_uniform(format!("{name}.weight"), Shape::new(cout, cin, k, k), cin * k * k, rng);
        let bias = set.push(format!("{name}.bias"), Tensor::zeros(Shape::new(1, 1, 1, cout)));
        Self { name: name.to_string(), weight, bias, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(set, self.weight)?;
        let b = g.param(set, self.bias)?;
        let y = g.conv2d(x, w, Some(b), self.stride, self.pad)?;
        g.set_label(y, &self.name);
        Ok(y)
    }

    /// Sets weights and bias to zero.
    pub fn zero(&self, set: &mut ParamSet) {
        for i in [self.weight, self.bias] {
            set.get_mut(i).tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// U-net style re-stainer with two stride-2 stages.
///
/// Input channels are `(L/100, H/3, E/3)`; output is Lab with L from a
/// sigmoid head scaled to `[0, 100]` and a, b from tanh heads scaled by 127.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub params: ParamSet,
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    out: Conv2d,
}

impl Generator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let enc1 = Conv2d::new(&mut p, &mut rng, "gen.enc1", 3, 16, 3, 1, 1);
        let enc2 = Conv2d::new(&mut p, &mut rng, "gen.enc2", 16, 32, 3, 2, 1);
        let enc3 = Conv2d::new(&mut p, &mut rng, "gen.enc3", 32, 64, 3, 2, 1);
        let dec1 = Conv2d::new(&mut p, &mut rng, "gen.dec1", 64, 32, 3, 1, 1);
        let dec2 = Conv2d::new(&mut p, &mut rng, "gen.dec2", 64, 16, 3, 1, 1);
        let out = Conv2d::new(&mut p, &mut rng, "gen.out", 32, 3, 3, 1, 1);
        Self { params: p, enc1, enc2, enc3, dec1, dec2, out }
    }

    /// Zeroes the final convolution so every output pixel is `(50, 0, 0)`.
    pub fn zero_output_layer(&mut self) {
        self.out.zero(&mut self.params);
    }

    /// Records the forward pass for an `(N, 3, H, W)` normalized input.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.c != 3 {
            return Err(Error::Shape(format!("generator expects 3 input channels, got {}", s.c)));
        }
        check_divisible(s.h, s.w)?;
        let p = &self.params;
        let e1 = self.enc1.forward(g, p, x)?;
        let e1 = g.leaky_relu(e1, LEAKY_SLOPE)?;
        let e2 = self.enc2.forward(g, p, e1)?;
        let e2 = g.leaky_relu(e2, LEAKY_SLOPE)?;
        let e3 = self.enc3.forward(g, p, e2)?;
        let e3 = g.leaky_relu(e3, LEAKY_SLOPE)?;

        let u1 = g.upsample2(e3)?;
        let d1 = self.dec1.forward(g, p, u1)?;
        let d1 = g.leaky_relu(d1, LEAKY_SLOPE)?;
        let d1 = g.concat(d1, e2)?;
        let u2 = g.upsample2(d1)?;
        let d2 = self.dec2.forward(g, p, u2)?;
        let d2 = g.leaky_relu(d2, LEAKY_SLOPE)?;
        let d2 = g.concat(d2, e1)?;
        let raw = self.out.forward(g, p, d2)?;

        let l = g.slice_channels(raw, 0, 1)?;
        let l = g.sigmoid(l)?;
        let l = g.affine(l, L_SCALE, 0.0)?;
        let ab = g.slice_channels(raw, 1, 2)?;
        let ab = g.tanh(ab)?;
        let ab = g.affine(ab, AB_SCALE, 0.0)?;
        g.concat(l, ab)
    }

    /// Re-stains one image given its luminance and dye planes.
    pub fn infer(&self, l: &PlaneImage, h: &PlaneImage, e: &PlaneImage) -> Result<LabImage> {
        let x = generator_input(&[(l, h, e)])?;
        let mut g = Graph::new();
        let xv = g.input(x)?;
        let y = self.forward(&mut g, xv)?;
        let mut labs = lab_images_from_tensor(g.value(y))?;
        Ok(labs.remove(0))
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "generator input {w}x{h} must have both sides divisible by 4; pad or crop the image"
        )));
    }
    Ok(())
}

/// Stacks `(L/100, clamp(H,0,3)/3, clamp(E,0,3)/3)` into an `(N, 3, H, W)` tensor.
pub fn generator_input(items: &[(&PlaneImage, &PlaneImage, &PlaneImage)]) -> Result<Tensor> {
    let Some(first) = items.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let (w, h) = (first.0.width(), first.0.height());
    check_divisible(h, w)?;
    let mut values = Vec::with_capacity(items.len() * 3 * w * h);
    for (l, hp, ep) in items {
        if [l, hp, ep].iter().any(|p| p.width() != w || p.height() != h) {
            return Err(Error::Shape("generator input planes differ in size".into()));
        }
        values.extend(l.data().iter().map(|v| v / L_SCALE));
        values.extend(hp.data().iter().map(|v| v.clamp(0.0, DYE_INPUT_MAX) / DYE_INPUT_MAX));
        values.extend(ep.data().iter().map(|v| v.clamp(0.0, DYE_INPUT_MAX) / DYE_INPUT_MAX));
    }
    Tensor::new(Shape::new(items.len(), 3, h, w), values)
}

/// Splits an `(N, 3, H, W)` Lab tensor into images.
pub fn lab_images_from_tensor(t: &Tensor) -> Result<Vec<LabImage>> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::Shape(format!("Lab tensor needs 3 channels, got {}", s.c)));
    }
    (0..s.n)
        .map(|n| {
            let plane = |c| PlaneImage::new(s.w, s.h, t.channel(n, c).to_vec());
            LabImage::new(plane(0)?, plane(1)?, plane(2)?)
        })
        .collect()
}

/// Packs Lab images into an `(N, 3, H, W)` tensor in raw Lab units.
pub fn lab_tensor(images: &[&LabImage]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let (w, h) = (first.width(), first.height());
    let mut values = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::Shape("Lab batch images differ in size".into()));
        }
        for p in [&img.l, &img.a, &img.b] {
            values.extend_from_slice(p.data());
        }
    }
    Tensor::new(Shape::new(images.len(), 3, h, w), values)
}

/// Stacks single planes into an `(N, 1, H, W)` tensor.
pub fn plane_tensor(planes: &[&PlaneImage]) -> Result<Tensor> {
    let Some(first) = planes.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let (w, h) = (first.width(), first.height());
    let mut values = Vec::with_capacity(planes.len() * w * h);
    for p in planes {
        if p.width() != w || p.height() != h {
            return Err(Error::Shape("plane batch differs in size".into()));
        }
        values.extend_from_slice(p.data());
    }
    Tensor::new(Shape::new(planes.len(), 1, h, w), values)
}

/// Four-stage convolutional patch discriminator with sigmoid scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub params: ParamSet,
    layers: [Conv2d; 4],
}

impl Discriminator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let layers = [
            Conv2d::new(&mut p, &mut rng, "disc.c1", 3, 16, 4, 2, 1),
            Conv2d::new(&mut p, &mut rng, "disc.c2", 16, 32, 4, 2, 1),
            Conv2d::new(&mut p, &mut rng, "disc.c3", 32, 64, 4, 2, 1),
            Conv2d::new(&mut p, &mut rng, "disc.c4", 64, 1, 4, 1, 1),
        ];
        Self { params: p, layers }
    }

    /// Patch scores in `(0, 1)` for a 3-channel input of side ≥ 16.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.h < 16 || s.w < 16 {
            return Err(Error::Shape(format!("discriminator needs at least 16x16 input, got {}x{}", s.w, s.h)));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, &self.params, h)?;
            if i < 3 {
                h = g.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        g.sigmoid(h)
    }
}
