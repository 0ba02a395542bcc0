//! Sobel boundary extraction.
//!
//! Three flavours share one 3×3 correlation under replicate padding:
//!
//! * [`sobel_magnitude`]: the raw gradient magnitude of a real field;
//! * [`hard_boundary`]: binary boundary labels of a class mask, computed with
//!   exact integer arithmetic (`magnitude > 0`);
//! * [`soft_boundary`]: a differentiable boundary map of a probability map,
//!   `clamp(magnitude / 4, 0, 1)`, with its vector-Jacobian product in
//!   [`soft_boundary_backward`].
//!
//! The normalisation by 4 is the largest single-axis response a `[0, 1]`
//! field can produce, so a clean unit step lands exactly on 1.0.

use crate::grid::Grid;
use crate::imaging::ClassMask;

/// The fixed horizontal/vertical Sobel kernels, indexed `[row][col]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SobelKernels {
    pub dx: [[i32; 3]; 3],
    pub dy: [[i32; 3]; 3],
}

pub const SOBEL: SobelKernels = SobelKernels {
    dx: [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
    dy: [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
};

/// Largest single-axis Sobel response on a field bounded in `[0, 1]`.
pub const SOFT_BOUNDARY_SCALE: f64 = 4.0;

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Correlates one plane with both kernels. Returns `(gx, gy)`.
fn gradients<T, A>(plane: &[T], h: usize, w: usize, cast: impl Fn(T) -> A) -> (Vec<A>, Vec<A>)
where
    T: Copy,
    A: Copy + Default + std::ops::Add<Output = A> + std::ops::Mul<Output = A> + From<i32>,
{
    let mut gx = vec![A::default(); h * w];
    let mut gy = vec![A::default(); h * w];
    let at = |y: usize, x: usize, dy: usize, dx: usize| {
        let yy = clamp_index(y as isize + dy as isize - 1, h);
        let xx = clamp_index(x as isize + dx as isize - 1, w);
        cast(plane[yy * w + xx])
    };
    for y in 0..h {
        for x in 0..w {
            // Sum each kernel row (dx) / column (dy) first so that the two
            // antisymmetric taps cancel exactly on flat regions.
            let mut sx = A::default();
            let mut sy = A::default();
            for i in 0..3 {
                let mut rx = A::default();
                let mut cy = A::default();
                for j in 0..3 {
                    if SOBEL.dx[i][j] != 0 {
                        rx = rx + A::from(SOBEL.dx[i][j]) * at(y, x, i, j);
                    }
                    if SOBEL.dy[j][i] != 0 {
                        cy = cy + A::from(SOBEL.dy[j][i]) * at(y, x, j, i);
                    }
                }
                sx = sx + rx;
                sy = sy + cy;
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// Per-pixel `sqrt(gx² + gy²)` for every channel of `field`. Output dims equal input dims.
pub fn sobel_magnitude(field: &Grid<f64>) -> Grid<f64> {
    let (c, h, w) = field.dims();
    let mut out = Grid::filled(c, h, w, 0.0);
    for ch in 0..c {
        let (gx, gy) = gradients(field.plane(ch), h, w, |v| v);
        for ((o, a), b) in out.plane_mut(ch).iter_mut().zip(&gx).zip(&gy) {
            *o = (a * a + b * b).sqrt();
        }
    }
    out
}

/// Binary boundary labels: 1 where the Sobel response of the channel is nonzero.
pub fn hard_boundary(mask: &ClassMask) -> ClassMask {
    let grid = mask.grid();
    let (c, h, w) = grid.dims();
    let mut out = Grid::filled(c, h, w, 0u8);
    for ch in 0..c {
        let (gx, gy) = gradients(grid.plane(ch), h, w, i32::from);
        for ((o, a), b) in out.plane_mut(ch).iter_mut().zip(&gx).zip(&gy) {
            *o = u8::from(*a != 0 || *b != 0);
        }
    }
    ClassMask::from_grid_unchecked(out)
}

/// Differentiable boundary map of a probability map: `clamp(|∇p| / 4, 0, 1)` per channel.
pub fn soft_boundary(probs: &Grid<f64>) -> Grid<f64> {
    let mut out = sobel_magnitude(probs);
    for v in out.as_mut_slice() {
        *v = (*v / SOFT_BOUNDARY_SCALE).clamp(0.0, 1.0);
    }
    out
}

/// Vector-Jacobian product of [`soft_boundary`]: given `upstream = ∂L/∂soft`,
/// returns `∂L/∂probs`.
///
/// The derivative is taken as zero where the magnitude is zero (the cone tip
/// of the square root) and inside the clamp's saturated region.
pub fn soft_boundary_backward(probs: &Grid<f64>, upstream: &Grid<f64>) -> Grid<f64> {
    let (c, h, w) = probs.dims();
    debug_assert!(probs.same_dims(upstream));
    let mut grad = Grid::filled(c, h, w, 0.0);
    for ch in 0..c {
        let (gx, gy) = gradients(probs.plane(ch), h, w, |v| v);
        let up = upstream.plane(ch);
        let g = grad.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                if m == 0.0 || m / SOFT_BOUNDARY_SCALE >= 1.0 {
                    continue;
                }
                let scale = up[i] / (SOFT_BOUNDARY_SCALE * m);
                let cx = scale * gx[i];
                let cy = scale * gy[i];
                for ky in 0..3 {
                    let yy = clamp_index(y as isize + ky as isize - 1, h);
                    for kx in 0..3 {
                        let xx = clamp_index(x as isize + kx as isize - 1, w);
                        let wx = SOBEL.dx[ky][kx];
                        let wy = SOBEL.dy[ky][kx];
                        if wx != 0 || wy != 0 {
                            g[yy * w + xx] += f64::from(wx) * cx + f64::from(wy) * cy;
                        }
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(h: usize, w: usize, edge: usize) -> Grid<f64> {
        Grid::from_fn(1, h, w, |_, _, x| if x >= edge { 1.0 } else { 0.0 })
    }

    /// Direct correlation with the kernels, written out without the shared helper.
    fn correlate_oracle(f: &Grid<f64>, y: usize, x: usize) -> f64 {
        let (_, h, w) = f.dims();
        let at = |dy: isize, dx: isize| {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            f.get(0, yy, xx)
        };
        let gx = -at(-1, -1) + at(-1, 1) - 2.0 * at(0, -1) + 2.0 * at(0, 1) - at(1, -1) + at(1, 1);
        let gy = -at(-1, -1) - 2.0 * at(-1, 0) - at(-1, 1) + at(1, -1) + 2.0 * at(1, 0) + at(1, 1);
        (gx * gx + gy * gy).sqrt()
    }

    #[test]
    fn kernels_sum_to_zero_and_are_transposed() {
        let sx: i32 = SOBEL.dx.iter().flatten().sum();
        let sy: i32 = SOBEL.dy.iter().flatten().sum();
        assert_eq!((sx, sy), (0, 0));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(SOBEL.dx[i][j], SOBEL.dy[j][i]);
            }
        }
    }

    #[test]
    fn constant_field_has_zero_magnitude() {
        let m = sobel_magnitude(&Grid::filled(1, 9, 9, 0.37));
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_responds_with_four() {
        let m = sobel_magnitude(&step(8, 8, 4));
        for y in 1..7 {
            assert_eq!(m.get(0, y, 3), 4.0);
            assert_eq!(m.get(0, y, 4), 4.0);
            assert_eq!(m.get(0, y, 1), 0.0);
        }
    }

    #[test]
    fn impulse_matches_direct_correlation() {
        let mut f = Grid::filled(1, 7, 7, 0.0);
        f.set(0, 3, 3, 1.0);
        let m = sobel_magnitude(&f);
        for y in 2..5 {
            for x in 2..5 {
                assert_eq!(m.get(0, y, x), correlate_oracle(&f, y, x));
            }
        }
        // horizontal neighbour sees gx = 2, gy = 0
        assert_eq!(m.get(0, 3, 2), 2.0);
        assert_eq!(m.get(0, 2, 2), 2f64.sqrt());
    }

    #[test]
    fn soft_boundary_of_unit_step_is_one_on_edge() {
        let s = soft_boundary(&step(8, 8, 4));
        for y in 0..8 {
            assert_eq!(s.get(0, y, 3), 1.0);
            assert_eq!(s.get(0, y, 4), 1.0);
            assert_eq!(s.get(0, y, 0), 0.0);
        }
    }

    #[test]
    fn soft_boundary_of_constant_half_is_zero() {
        let s = soft_boundary(&Grid::filled(2, 6, 6, 0.5));
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
    }
}
