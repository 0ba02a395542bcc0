//! Brute-force reference implementations shared by the property suites and
//! the acceptance harness. Each one is written for obviousness, not speed.

#![allow(dead_code)]

/// Dice by pixel counting; both-empty is perfect agreement.
pub fn dice(pred: &[u8], truth: &[u8]) -> f64 {
    let a = pred.iter().filter(|&&v| v != 0).count();
    let b = truth.iter().filter(|&&v| v != 0).count();
    let both = pred.iter().zip(truth).filter(|(&p, &t)| p != 0 && t != 0).count();
    if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    }
}

/// Foreground pixels with a background (or out-of-image) 4-neighbour.
pub fn surface(mask: &[u8], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            let neighbours = [
                (y as isize - 1, x as isize),
                (y as isize + 1, x as isize),
                (y as isize, x as isize - 1),
                (y as isize, x as isize + 1),
            ];
            let exposed = neighbours.iter().any(|&(ny, nx)| {
                ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize || mask[ny as usize * w + nx as usize] == 0
            });
            if exposed {
                out.push((y, x));
            }
        }
    }
    out
}

fn nearest(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
    set.iter()
        .map(|&q| {
            let dy = p.0 as f64 - q.0 as f64;
            let dx = p.1 as f64 - q.1 as f64;
            (dy * dy + dx * dx).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric average surface distance by exhaustive nearest-point search.
pub fn asd(pred: &[u8], truth: &[u8], h: usize, w: usize) -> Option<f64> {
    let sp = surface(pred, h, w);
    let st = surface(truth, h, w);
    if sp.is_empty() || st.is_empty() {
        return None;
    }
    let total: f64 = sp.iter().map(|&p| nearest(p, &st)).sum::<f64>() + st.iter().map(|&q| nearest(q, &sp)).sum::<f64>();
    Some(total / (sp.len() + st.len()) as f64)
}

/// 1 where any pixel under the 3×3 footprint (replicate padding) differs
/// from the centre.
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<u8> {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let centre = mask[y * w + x];
            let differs = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| mask[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)] != centre)
            });
            out[y * w + x] = u8::from(differs);
        }
    }
    out
}

/// Direct 3×3 correlation with replicate padding, kernel indexed `[row][col]`.
pub fn correlate(field: &[f64], h: usize, w: usize, kernel: [[f64; 3]; 3]) -> Vec<f64> {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    let yy = clamp(y as isize + ky as isize - 1, h);
                    let xx = clamp(x as isize + kx as isize - 1, w);
                    s += k * field[yy * w + xx];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Filled axis-aligned rectangle `[top, bottom) × [left, right)`.
pub fn rectangle(h: usize, w: usize, top: usize, left: usize, bottom: usize, right: usize) -> Vec<u8> {
    (0..h * w)
        .map(|i| u8::from((top..bottom).contains(&(i / w)) && (left..right).contains(&(i % w))))
        .collect()
}

/// Filled rotated ellipse sampled at pixel centres.
pub fn ellipse(h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Vec<u8> {
    let (s, c) = angle.sin_cos();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
            let u = c * x + s * y;
            let v = -s * x + c * y;
            u8::from((u / rx).powi(2) + (v / ry).powi(2) <= 1.0)
        })
        .collect()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += step;
    let mut xm = x.to_vec();
    xm[i] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

/// Relative error with an absolute floor so that two vanishing numbers agree.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Smallest box `(top, left, bottom, right)` holding every nonzero pixel.
pub fn bbox(plane: &[u8], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let pts: Vec<(usize, usize)> = (0..h * w).filter(|&i| plane[i] != 0).map(|i| (i / w, i % w)).collect();
    if pts.is_empty() {
        return None;
    }
    Some((
        pts.iter().map(|p| p.0).min().unwrap(),
        pts.iter().map(|p| p.1).min().unwrap(),
        pts.iter().map(|p| p.0).max().unwrap() + 1,
        pts.iter().map(|p| p.1).max().unwrap() + 1,
    ))
}
