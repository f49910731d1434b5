//! Central finite-difference gradient checks shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restain::losses::{gan_loss_d, gan_loss_g, l1_lab_loss, staining_loss, total_loss, LossWeights};
use restain::nn::color;
use restain::nn::models::{Discriminator, Generator};
use restain::nn::{Graph, ParamSet, Shape, Tensor, Unary, Var};
use restain::{OdParams, Result, StainMatrix};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-3;
/// Differences below this are float noise, not gradient error.
pub const NOISE_FLOOR: f64 = 1e-11;
/// Elements sampled per tensor.
pub const SAMPLES: usize = 24;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub tol: f64,
    pub max_rel: f64,
    pub checked: usize,
    /// Largest analytic gradient magnitude seen.
    pub max_grad: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel <= self.tol && self.checked > 0 && self.max_grad > 0.0
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= NOISE_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

pub fn random_tensor(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random values with magnitude in `[lo, hi]` and random sign, clear of a kink at 0.
pub fn signed_tensor(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..shape.len())
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// `mean(y ⊙ R)` with a fixed random `R`, so every output element matters.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let r = g.input(random_tensor(g.shape(y), -1.0, 1.0, seed))?;
    let p = g.mul(y, r)?;
    g.mean(p)
}

fn sample_indices(n: usize) -> Vec<usize> {
    if n <= SAMPLES {
        (0..n).collect()
    } else {
        (0..SAMPLES).map(|k| k * (n - 1) / (SAMPLES - 1)).collect()
    }
}

/// Checks `∂f/∂input` for every input tensor.
pub fn check_inputs(
    name: &'static str,
    tol: f64,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> GradReport {
    let eval = |ts: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        (g, vars, out)
    };
    let (mut g, vars, out) = eval(&inputs);
    g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).to_vec()).collect();
    let mut report = GradReport { name, tol, max_rel: 0.0, checked: 0, max_grad: 0.0 };
    for k in 0..inputs.len() {
        for i in sample_indices(inputs[k].values().len()) {
            let mut ts = inputs.clone();
            ts[k].values_mut()[i] += STEP;
            let (gp, _, op) = eval(&ts);
            ts[k].values_mut()[i] -= 2.0 * STEP;
            let (gm, _, om) = eval(&ts);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * STEP);
            report.max_rel = report.max_rel.max(rel_err(analytic[k][i], numeric));
            report.max_grad = report.max_grad.max(analytic[k][i].abs());
            report.checked += 1;
        }
    }
    report
}

/// Checks `∂f/∂θ` for every parameter tensor of a model.
pub fn check_params<M>(
    name: &'static str,
    tol: f64,
    model: &mut M,
    params: fn(&mut M) -> &mut ParamSet,
    f: impl Fn(&mut Graph, &M) -> Result<Var>,
) -> GradReport {
    let mut g = Graph::new();
    let out = f(&mut g, model).unwrap();
    g.backward(out).unwrap();
    params(model).zero_grad();
    g.accumulate_into(params(model));
    let analytic: Vec<Vec<f64>> = params(model).iter().map(|p| p.tensor.grad().to_vec()).collect();
    let value = |m: &M| {
        let mut g = Graph::new();
        let o = f(&mut g, m).unwrap();
        g.value(o).item()
    };
    let mut report = GradReport { name, tol, max_rel: 0.0, checked: 0, max_grad: 0.0 };
    for k in 0..analytic.len() {
        for i in sample_indices(analytic[k].len()) {
            let orig = params(model).get(k).tensor.values()[i];
            params(model).get_mut(k).tensor.values_mut()[i] = orig + STEP;
            let fp = value(model);
            params(model).get_mut(k).tensor.values_mut()[i] = orig - STEP;
            let fm = value(model);
            params(model).get_mut(k).tensor.values_mut()[i] = orig;
            report.max_rel = report.max_rel.max(rel_err(analytic[k][i], (fp - fm) / (2.0 * STEP)));
            report.max_grad = report.max_grad.max(analytic[k][i].abs());
            report.checked += 1;
        }
    }
    report
}

fn unary_case(name: &'static str, f: Unary, t: Tensor) -> GradReport {
    check_inputs(name, LAYER_TOL, vec![t], move |g, v| {
        let y = g.unary(v[0], f)?;
        project(g, y, 99)
    })
}

/// Every differentiable layer, on seeded inputs kept clear of kinks.
pub fn layer_suite() -> Vec<GradReport> {
    let s = Shape::new(2, 3, 5, 4);
    let mut out = vec![
        check_inputs(
            "conv2d 3x3 stride 1 pad 1",
            LAYER_TOL,
            vec![
                random_tensor(Shape::new(2, 3, 6, 5), -1.0, 1.0, 1),
                random_tensor(Shape::new(4, 3, 3, 3), -0.5, 0.5, 2),
                random_tensor(Shape::new(1, 1, 1, 4), -0.5, 0.5, 3),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                project(g, y, 4)
            },
        ),
        check_inputs(
            "conv2d 4x4 stride 2 pad 1",
            LAYER_TOL,
            vec![
                random_tensor(Shape::new(1, 2, 8, 8), -1.0, 1.0, 5),
                random_tensor(Shape::new(3, 2, 4, 4), -0.5, 0.5, 6),
                random_tensor(Shape::new(1, 1, 1, 3), -0.5, 0.5, 7),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                project(g, y, 8)
            },
        ),
        unary_case("leaky_relu", Unary::LeakyRelu(0.2), signed_tensor(s, 0.01, 2.0, 9)),
        unary_case("relu", Unary::Relu, signed_tensor(s, 0.01, 2.0, 10)),
        unary_case("sigmoid", Unary::Sigmoid, random_tensor(s, -4.0, 4.0, 11)),
        unary_case("tanh", Unary::Tanh, random_tensor(s, -3.0, 3.0, 12)),
        unary_case("abs", Unary::Abs, signed_tensor(s, 0.01, 2.0, 13)),
        unary_case("ln", Unary::Ln, random_tensor(s, 0.1, 5.0, 14)),
        unary_case("ln_clamped", Unary::LnClamped(0.05, 0.95), random_tensor(s, 0.06, 0.94, 15)),
        unary_case("floor", Unary::Floor(0.0), signed_tensor(s, 0.01, 2.0, 16)),
        unary_case("lab_f_inv", Unary::LabFInv, random_tensor(s, 0.0, 1.2, 17)),
        unary_case("srgb_encode", Unary::SrgbEncode, random_tensor(s, 1e-4, 1.0, 18)),
        check_inputs("upsample2", LAYER_TOL, vec![random_tensor(s, -1.0, 1.0, 19)], |g, v| {
            let y = g.upsample2(v[0])?;
            project(g, y, 20)
        }),
        check_inputs(
            "concat + slice_channels",
            LAYER_TOL,
            vec![random_tensor(s, -1.0, 1.0, 21), random_tensor(Shape::new(2, 2, 5, 4), -1.0, 1.0, 22)],
            |g, v| {
                let c = g.concat(v[0], v[1])?;
                let y = g.slice_channels(c, 2, 2)?;
                project(g, y, 23)
            },
        ),
        check_inputs("channel_mix", LAYER_TOL, vec![random_tensor(s, -1.0, 1.0, 24)], |g, v| {
            let y = g.channel_mix(v[0], &[vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.7]], &[0.1, -0.2])?;
            project(g, y, 25)
        }),
        check_inputs(
            "add, sub, mul, affine",
            LAYER_TOL,
            vec![random_tensor(s, -1.0, 1.0, 26), random_tensor(s, -1.0, 1.0, 27)],
            |g, v| {
                let a = g.add(v[0], v[1])?;
                let b = g.sub(v[0], v[1])?;
                let m = g.mul(a, b)?;
                let y = g.affine(m, -1.7, 0.4)?;
                project(g, y, 28)
            },
        ),
    ];
    let gen_in = random_tensor(Shape::new(1, 3, 8, 8), 0.0, 1.0, 30);
    let mut gen = Generator::new(31);
    out.push(check_params("generator parameters", LAYER_TOL, &mut gen, |m| &mut m.params, move |g, m| {
        let x = g.input(gen_in.clone())?;
        let y = m.forward(g, x)?;
        project(g, y, 32)
    }));
    let gen = Generator::new(33);
    out.push(check_inputs(
        "generator input",
        LAYER_TOL,
        vec![random_tensor(Shape::new(1, 3, 8, 8), 0.0, 1.0, 34)],
        move |g, v| {
            let y = gen.forward(g, v[0])?;
            project(g, y, 35)
        },
    ));
    let disc_in = random_tensor(Shape::new(1, 3, 16, 16), -1.0, 1.0, 36);
    let mut disc = Discriminator::new(37);
    out.push(check_params("discriminator parameters", LAYER_TOL, &mut disc, |m| &mut m.params, move |g, m| {
        let x = g.input(disc_in.clone())?;
        let y = m.forward(g, x)?;
        project(g, y, 38)
    }));
    out
}

/// Lab tensor of in-gamut colours.
pub fn lab_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(n, 3, h, w);
    let p = s.plane();
    let mut v = vec![0.0; s.len()];
    for b in 0..n {
        for i in 0..p {
            v[(b * 3) * p + i] = rng.gen_range(35.0..85.0);
            v[(b * 3 + 1) * p + i] = rng.gen_range(-5.0..30.0);
            v[(b * 3 + 2) * p + i] = rng.gen_range(-30.0..5.0);
        }
    }
    Tensor::new(s, v).unwrap()
}

/// Every loss and the full Lab → RGB → OD → dye chain.
pub fn loss_suite() -> Vec<GradReport> {
    let sm = StainMatrix::default();
    let odp = OdParams::default();
    let scores = Shape::new(2, 1, 3, 3);
    let lab = lab_batch(2, 4, 4, 40);
    let planes = Shape::new(2, 1, 4, 4);
    let (sm2, odp2) = (sm.clone(), odp);
    let (sm3, odp3) = (sm.clone(), odp);
    vec![
        check_inputs(
            "gan_loss_d",
            LOSS_TOL,
            vec![random_tensor(scores, 0.05, 0.95, 41), random_tensor(scores, 0.05, 0.95, 42)],
            |g, v| gan_loss_d(g, v[0], v[1]),
        ),
        check_inputs("gan_loss_g", LOSS_TOL, vec![random_tensor(scores, 0.05, 0.95, 43)], |g, v| gan_loss_g(g, v[0])),
        check_inputs(
            "l1_lab_loss",
            LOSS_TOL,
            vec![lab.clone(), lab_batch(2, 4, 4, 44)],
            |g, v| l1_lab_loss(g, v[0], v[1]),
        ),
        check_inputs("lab_to_rgb", LAYER_TOL, vec![lab.clone()], |g, v| {
            let y = color::lab_to_rgb(g, v[0])?;
            project(g, y, 45)
        }),
        check_inputs(
            "staining_loss through Lab, RGB and OD",
            LOSS_TOL,
            vec![lab.clone(), random_tensor(planes, 0.0, 1.5, 46), random_tensor(planes, 0.0, 1.5, 47)],
            move |g, v| {
                let rgb = color::lab_to_rgb(g, v[0])?;
                staining_loss(g, rgb, v[1], v[2], &sm2, &odp2)
            },
        ),
        check_inputs(
            "total_loss through generator and discriminator",
            LOSS_TOL,
            vec![random_tensor(Shape::new(1, 3, 16, 16), 0.0, 1.0, 48)],
            move |g, v| {
                let gen = Generator::new(49);
                let disc = Discriminator::new(50);
                let fake = gen.forward(g, v[0])?;
                let d_in = g.channel_mix(
                    fake,
                    &[vec![0.01, 0.0, 0.0], vec![0.0, 1.0 / 127.0, 0.0], vec![0.0, 0.0, 1.0 / 127.0]],
                    &[0.0; 3],
                )?;
                let s = disc.forward(g, d_in)?;
                let gan = gan_loss_g(g, s)?;
                let target = g.input(lab_batch(1, 16, 16, 51))?;
                let l1 = l1_lab_loss(g, fake, target)?;
                let rgb = color::lab_to_rgb(g, fake)?;
                let h = g.input(random_tensor(Shape::new(1, 1, 16, 16), 0.0, 1.5, 52))?;
                let e = g.input(random_tensor(Shape::new(1, 1, 16, 16), 0.0, 1.5, 53))?;
                let st = staining_loss(g, rgb, h, e, &sm3, &odp3)?;
                total_loss(g, gan, l1, st, &LossWeights::default())
            },
        ),
    ]
}
