//! Primitive layers over planar `Grid<f32>` activations, each with an explicit
//! backward pass. Convolutions lower to a single sgemm through im2col.

use crate::grid::Grid;

/// `c[m×n] (+)= a[m×k] · b[k×n]`, with arbitrary row/column strides so
/// transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that stay inside the slices: every
    // call site passes dense row- or column-major matrices of the stated sizes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A 2-D convolution with "same" zero padding, stride 1, odd square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// Index of the weight tensor in the parameter store; the bias follows it.
    pub param: usize,
}

/// Cached input columns of a convolution (the input itself for 1×1 kernels).
pub struct ConvCache {
    cols: Vec<f32>,
    h: usize,
    w: usize,
}

impl Conv {
    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    fn k_dim(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Grid<f32>) -> Vec<f32> {
        let (cin, h, w) = x.dims();
        if self.kernel == 1 {
            return x.as_slice().to_vec();
        }
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0f32; cin * k * k * hw];
        for ci in 0..cin {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * hw;
                    let dx = kx as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut cols[row + y * w..row + (y + 1) * w];
                        let s0 = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize) -> Grid<f32> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut dx_grid = Grid::filled(self.cin, h, w, 0.0f32);
        for ci in 0..self.cin {
            let plane = dx_grid.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * hw;
                    let dx = kx as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let s0 = (x_lo as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                        let src = &cols[row + y * w + x_lo..row + y * w + x_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        dx_grid
    }

    pub fn forward(&self, weight: &[f32], bias: &[f32], x: &Grid<f32>) -> (Grid<f32>, ConvCache) {
        let (cin, h, w) = x.dims();
        assert_eq!(cin, self.cin, "conv input channels");
        let hw = h * w;
        let cols = self.im2col(x);
        let mut out = vec![0.0f32; self.cout * hw];
        for (co, &b) in bias.iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(b);
        }
        let kd = self.k_dim();
        sgemm(self.cout, kd, hw, weight, kd as isize, 1, &cols, hw as isize, 1, 1.0, &mut out);
        let y = Grid::new(self.cout, h, w, out).expect("conv output size");
        (y, ConvCache { cols, h, w })
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        weight: &[f32],
        dy: &Grid<f32>,
        cache: &ConvCache,
        dweight: &mut [f32],
        dbias: &mut [f32],
        need_input_grad: bool,
    ) -> Option<Grid<f32>> {
        let hw = cache.h * cache.w;
        let kd = self.k_dim();
        let g = dy.as_slice();
        // dW += dY · colsᵀ
        sgemm(
            self.cout,
            hw,
            kd,
            g,
            hw as isize,
            1,
            &cache.cols,
            1,
            hw as isize,
            1.0,
            dweight,
        );
        for (co, db) in dbias.iter_mut().enumerate() {
            *db += g[co * hw..(co + 1) * hw].iter().sum::<f32>();
        }
        if !need_input_grad {
            return None;
        }
        // dcols = Wᵀ · dY
        let mut dcols = vec![0.0f32; kd * hw];
        sgemm(kd, self.cout, hw, weight, 1, kd as isize, g, hw as isize, 1, 0.0, &mut dcols);
        if self.kernel == 1 {
            return Some(Grid::new(self.cin, cache.h, cache.w, dcols).expect("1x1 grad size"));
        }
        Some(self.col2im(&dcols, cache.h, cache.w))
    }
}

pub fn relu_inplace(x: &mut Grid<f32>) {
    for v in x.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `dy` masked by `y > 0`, where `y` is the ReLU output.
pub fn relu_backward(y: &Grid<f32>, dy: &mut Grid<f32>) {
    for (g, &v) in dy.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling; returns the pooled map and the flat argmax of every output.
pub fn maxpool2(x: &Grid<f32>) -> (Grid<f32>, Vec<u32>) {
    let (c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Grid::filled(c, oh, ow, 0.0f32);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let p = x.plane(ch);
        let o = out.plane_mut(ch);
        for y in 0..oh {
            for xx in 0..ow {
                let base = 2 * y * w + 2 * xx;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if p[idx] > p[best] {
                        best = idx;
                    }
                }
                o[y * ow + xx] = p[best];
                arg[(ch * oh + y) * ow + xx] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(dy: &Grid<f32>, arg: &[u32], h: usize, w: usize) -> Grid<f32> {
    let (c, oh, ow) = dy.dims();
    let mut dx = Grid::filled(c, h, w, 0.0f32);
    for ch in 0..c {
        let g = dy.plane(ch);
        let d = dx.plane_mut(ch);
        for i in 0..oh * ow {
            d[arg[ch * oh * ow + i] as usize] += g[i];
        }
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample(x: &Grid<f32>, factor: usize) -> Grid<f32> {
    let (c, h, w) = x.dims();
    Grid::from_fn(c, h * factor, w * factor, |ch, y, xx| x.get(ch, y / factor, xx / factor))
}

pub fn upsample_backward(dy: &Grid<f32>, factor: usize) -> Grid<f32> {
    let (c, h, w) = dy.dims();
    let (oh, ow) = (h / factor, w / factor);
    let mut dx = Grid::filled(c, oh, ow, 0.0f32);
    for ch in 0..c {
        let g = dy.plane(ch);
        let d = dx.plane_mut(ch);
        for y in 0..h {
            for xx in 0..w {
                d[(y / factor) * ow + xx / factor] += g[y * w + xx];
            }
        }
    }
    dx
}

/// Channel concatenation; planar storage makes this an append.
pub fn concat(a: &Grid<f32>, b: &Grid<f32>) -> Grid<f32> {
    assert_eq!((a.height(), a.width()), (b.height(), b.width()), "concat dims");
    let mut data = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Grid::new(a.channels() + b.channels(), a.height(), a.width(), data).expect("concat size")
}

pub fn split(g: &Grid<f32>, first: usize) -> (Grid<f32>, Grid<f32>) {
    let (c, h, w) = g.dims();
    let n = first * h * w;
    let (a, b) = g.as_slice().split_at(n);
    (
        Grid::new(first, h, w, a.to_vec()).expect("split size"),
        Grid::new(c - first, h, w, b.to_vec()).expect("split size"),
    )
}

#[inline]
pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
