//! im2col convolution kernels over contiguous NCHW buffers.

use matrixmultiply::dgemm;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(n: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self { n, cin, h, w, cout, k, stride, pad, oh, ow })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.k {
            for v in 0..g.k {
                let row = &mut cols[((c * g.k + u) * g.k + v) * p..][..p];
                for i in 0..g.oh {
                    let yy = (i * g.stride + u) as isize - g.pad as isize;
                    let out = &mut row[i * g.ow..(i + 1) * g.ow];
                    if yy < 0 || yy >= g.h as isize {
                        out.iter_mut().for_each(|o| *o = 0.0);
                        continue;
                    }
                    let src = &plane[yy as usize * g.w..(yy as usize + 1) * g.w];
                    for (j, o) in out.iter_mut().enumerate() {
                        let xx = (j * g.stride + v) as isize - g.pad as isize;
                        *o = if xx < 0 || xx >= g.w as isize { 0.0 } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.k {
            for v in 0..g.k {
                let row = &cols[((c * g.k + u) * g.k + v) * p..][..p];
                for i in 0..g.oh {
                    let yy = (i * g.stride + u) as isize - g.pad as isize;
                    if yy < 0 || yy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[yy as usize * g.w..(yy as usize + 1) * g.w];
                    for (j, &val) in row[i * g.ow..(i + 1) * g.ow].iter().enumerate() {
                        let xx = (j * g.stride + v) as isize - g.pad as isize;
                        if xx >= 0 && (xx as usize) < g.w {
                            dst[xx as usize] += val;
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,o,i,j] = b[o] + Σ w[o,c,u,v] · x_pad[n,c,i·s+u,j·s+v]`.
pub(crate) fn forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (kr, p) = (g.rows(), g.cols());
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut cols = vec![0.0; kr * p];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w], g, &mut cols);
        let dst = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(b) = b {
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        // SAFETY: all slices cover the full m×k, k×n and m×n extents given
        // with unit column strides and row strides equal to the row length.
        unsafe {
            dgemm(
                g.cout, kr, p,
                1.0,
                w.as_ptr(), kr as isize, 1,
                cols.as_ptr(), p as isize, 1,
                1.0,
                dst.as_mut_ptr(), p as isize, 1,
            );
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for an upstream `gout`.
pub(crate) fn backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let (kr, p) = (g.rows(), g.cols());
    let mut cols = vec![0.0; kr * p];
    for n in 0..g.n {
        let go = &gout[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(db) = db.as_deref_mut() {
            for (o, row) in go.chunks_exact(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w], g, &mut cols);
            // dW (cout×kr) += gout (cout×p) · colsᵀ (p×kr)
            unsafe {
                dgemm(
                    g.cout, p, kr,
                    1.0,
                    go.as_ptr(), p as isize, 1,
                    cols.as_ptr(), 1, p as isize,
                    1.0,
                    dw.as_mut_ptr(), kr as isize, 1,
                );
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (kr×p) = Wᵀ (kr×cout) · gout (cout×p)
            unsafe {
                dgemm(
                    kr, g.cout, p,
                    1.0,
                    w.as_ptr(), 1, kr as isize,
                    go.as_ptr(), p as isize, 1,
                    0.0,
                    cols.as_mut_ptr(), p as isize, 1,
                );
            }
            col2im(&cols, g, &mut dx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w]);
        }
    }
}
