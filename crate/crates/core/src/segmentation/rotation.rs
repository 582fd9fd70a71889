//! Automatic tier rotation: find the angle that makes the divider mask's
//! edges most horizontal/vertical relative to diagonal.

use serde::{Deserialize, Serialize};

use super::SegError;
use crate::volume_io::{rotate_image, Image2D};

pub const ANGLE_LIMIT_DEG: f64 = 10.0;
pub const ANGLE_STEP_DEG: f64 = 0.1;
/// Moving-average window, in samples.
pub const SMOOTH_WINDOW: usize = 5;
pub const FIT_HALF_WIDTH_DEG: f64 = 1.5;

/// Responses are only summed over 2×2 windows whose center lies this far
/// inside the image's inscribed circle. Pixels there stay interior under any
/// rotation, so the zero fill of the frame corners never registers as an edge.
const DISC_MARGIN: f64 = 1.5;

fn disc_windows(w: usize, h: usize) -> Vec<usize> {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let r = w.min(h) as f64 / 2.0 - DISC_MARGIN;
    let mut out = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let (dx, dy) = (x as f64 + 1.0 - cx, y as f64 + 1.0 - cy);
            if dx * dx + dy * dy <= r * r {
                out.push(y * w + x);
            }
        }
    }
    out
}

/// Sums of absolute 2×2 responses `(vertical + horizontal, diagonal)`.
fn detail_sums(img: &Image2D<f64>, windows: &[usize]) -> (f64, f64) {
    let w = img.width;
    let d = &img.data;
    let (mut hv, mut diag) = (0.0, 0.0);
    for &k in windows {
        let (a, b, c, e) = (d[k], d[k + 1], d[k + w], d[k + w + 1]);
        hv += (a - b + c - e).abs() + (a + b - c - e).abs();
        diag += (a - b - c + e).abs();
    }
    (hv, diag)
}

fn check_mask(b: &Image2D<f64>) -> Result<f64, SegError> {
    let total: f64 = b.data.iter().sum();
    if b.width < 2 || b.height < 2 || !(total > 0.0) {
        return Err(SegError::DegenerateMask);
    }
    Ok(total)
}

/// Gaussian blur (in proxy pixels) applied to the mask before `J` is evaluated.
///
/// Bilinear resampling blurs by an amount that depends on the sub-pixel
/// phase, and that phase pattern changes with the angle. On a sharp mask
/// this adds diagonal response growing with |a| and drags the optimum
/// toward zero (about 40% of the true angle unsmoothed). Pre-blurring makes
/// the resampling blur negligible.
pub const PRESMOOTH_SIGMA: f64 = 3.0;

fn presmooth(b: &Image2D<f64>) -> Image2D<f64> {
    let sigma = PRESMOOTH_SIGMA;
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / norm).collect();
    let (w, h) = (b.width as isize, b.height as isize);
    let pass = |src: &Image2D<f64>, dx: isize, dy: isize| {
        Image2D::from_fn(src.width, src.height, |x, y| {
            let mut acc = 0.0;
            for (i, wk) in k.iter().enumerate() {
                let o = i as isize - r;
                // replicate edges so a constant mask stays constant
                let sx = (x as isize + o * dx).clamp(0, w - 1);
                let sy = (y as isize + o * dy).clamp(0, h - 1);
                acc += wk * src.get(sx as usize, sy as usize);
            }
            acc
        })
    };
    pass(&pass(b, 1, 0), 0, 1)
}

fn objective(b: &Image2D<f64>, a: f64, windows: &[usize], eps: f64) -> f64 {
    let rotated = rotate_image(b, a);
    let (hv, diag) = detail_sums(&rotated, windows);
    hv / (diag + eps)
}

/// `J(a)`: horizontal plus vertical detail over diagonal detail of `B`
/// rotated by `a` degrees.
pub fn rotation_objective(b: &Image2D<f64>, a: f64) -> Result<f64, SegError> {
    let total = check_mask(b)?;
    Ok(objective(&presmooth(b), a, &disc_windows(b.width, b.height), 1e-9 * total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationFit {
    /// Correction: rotating the mask by this angle aligns its grid with the axes.
    pub angle_deg: f64,
    /// Sample angle with the largest smoothed objective.
    pub argmax_deg: f64,
    pub angles: Vec<f64>,
    pub objective: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// `c0 + c1·t + c2·t²` with `t` relative to `argmax_deg`, when a concave fit exists.
    pub quadratic: Option<[f64; 3]>,
}

pub fn auto_rotate(b: &Image2D<f64>) -> Result<RotationFit, SegError> {
    let total = check_mask(b)?;
    let windows = disc_windows(b.width, b.height);
    let eps = 1e-9 * total;
    let smooth_b = presmooth(b);
    let steps = (ANGLE_LIMIT_DEG / ANGLE_STEP_DEG).round() as i64;
    let angles: Vec<f64> = (-steps..=steps).map(|k| k as f64 / 10.0).collect();
    let objective: Vec<f64> = angles.iter().map(|&a| self::objective(&smooth_b, a, &windows, eps)).collect();
    let smoothed = moving_average(&objective, SMOOTH_WINDOW);

    let (lo, hi) = smoothed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi - lo > 1e-9 * hi.abs().max(lo.abs())) {
        return Err(SegError::FlatObjective);
    }
    let best = smoothed
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > smoothed[best] { k } else { best });
    let argmax_deg = angles[best];

    let in_window: Vec<(f64, f64)> = angles
        .iter()
        .zip(&smoothed)
        .map(|(&a, &j)| (a - argmax_deg, j))
        .filter(|(t, _)| t.abs() <= FIT_HALF_WIDTH_DEG + 1e-9)
        .collect();
    let quadratic = fit_quadratic(&in_window).filter(|c| c[2] < 0.0);
    let angle_deg = match quadratic {
        Some([_, c1, c2]) => {
            let t = (-c1 / (2.0 * c2)).clamp(-FIT_HALF_WIDTH_DEG, FIT_HALF_WIDTH_DEG);
            (argmax_deg + t).clamp(-ANGLE_LIMIT_DEG, ANGLE_LIMIT_DEG)
        }
        None => argmax_deg,
    };
    Ok(RotationFit { angle_deg, argmax_deg, angles, objective, smoothed, quadratic })
}

/// Centered moving average; the window shrinks at the ends.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Least-squares `c0 + c1·t + c2·t²` via the 3×3 normal equations.
fn fit_quadratic(points: &[(f64, f64)]) -> Option<[f64; 3]> {
    if points.len() < 3 {
        return None;
    }
    let mut m = [[0.0; 4]; 3];
    for &(t, y) in points {
        let p = [1.0, t, t * t];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += p[r] * p[c];
            }
            m[r][3] += p[r] * y;
        }
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Axis-aligned grid of 3-pixel lines, 4 rows × 5 cols of cells, inside walls.
    fn grid_mask(n: usize) -> Image2D<f64> {
        let lines = |v: usize, count: usize| {
            (0..=count).any(|k| {
                let pos = 20 + k * (n - 40) / count;
                v + 1 >= pos && v <= pos + 1
            })
        };
        Image2D::from_fn(n, n, |x, y| {
            let inside = (19..=n - 19).contains(&x) && (19..=n - 19).contains(&y);
            if inside && (lines(x, 5) || lines(y, 4)) {
                10.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn aligned_grid_peaks_at_zero() {
        let b = grid_mask(225);
        let j0 = rotation_objective(&b, 0.0).unwrap();
        for a in [-10.0, -5.0, -2.0, -1.0, 1.0, 1.5, 3.0, 8.0] {
            assert!(j0 > rotation_objective(&b, a).unwrap(), "J(0) <= J({a})");
        }
        let fit = auto_rotate(&b).unwrap();
        assert!(fit.angle_deg.abs() <= 0.2, "{}", fit.angle_deg);
        assert_eq!(fit.angles.len(), 201);
    }

    #[test]
    fn half_turn_leaves_objective_unchanged() {
        let b = rotate_image(&grid_mask(101), 3.3);
        let flipped = b.rotate180();
        for a in [-4.0, 0.0, 2.7] {
            let p = rotation_objective(&b, a).unwrap();
            let q = rotation_objective(&flipped, a).unwrap();
            assert!((p - q).abs() <= 1e-9 * p, "{p} vs {q}");
        }
    }

    #[test]
    fn objective_ignores_positive_scale() {
        let b = rotate_image(&grid_mask(101), -2.0);
        let scaled = b.map(|v| v * 37.5);
        let p = rotation_objective(&b, 1.0).unwrap();
        let q = rotation_objective(&scaled, 1.0).unwrap();
        assert!((p - q).abs() <= 1e-9 * p);
    }

    #[test]
    fn recovers_applied_rotation() {
        let base = grid_mask(225);
        for theta in [-8.0, -1.9, 0.35, 4.0, 7.0] {
            let fit = auto_rotate(&rotate_image(&base, theta)).unwrap();
            assert!((fit.angle_deg + theta).abs() <= 0.2, "theta {theta}: got {}", fit.angle_deg);
        }
    }

    #[test]
    fn constant_mask_is_flat() {
        let b = Image2D::from_vec(64, 64, vec![5.0; 64 * 64]);
        assert_eq!(auto_rotate(&b).unwrap_err(), SegError::FlatObjective);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let b = Image2D::from_vec(16, 16, vec![0.0; 256]);
        assert_eq!(auto_rotate(&b).unwrap_err(), SegError::DegenerateMask);
    }

    #[test]
    fn quadratic_fit_recovers_parabola() {
        let pts: Vec<(f64, f64)> = (-15..=15)
            .map(|k| {
                let t = k as f64 / 10.0;
                (t, 4.0 + 0.3 * t - 2.0 * t * t)
            })
            .collect();
        let c = fit_quadratic(&pts).unwrap();
        assert!((c[0] - 4.0).abs() < 1e-9 && (c[1] - 0.3).abs() < 1e-9 && (c[2] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn moving_average_truncates_at_ends() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5);
        assert_eq!(m, vec![2.0, 2.5, 3.0, 4.0, 4.5, 5.0]);
    }
}
