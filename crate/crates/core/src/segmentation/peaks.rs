//! 1-D peak detection with prominence and half-prominence width.
//!
//! Follows the usual definitions: a peak is a sample (or the middle of a flat
//! run) strictly higher than both neighbours; its prominence is the drop to
//! the higher of the two lowest points reached before meeting higher ground
//! on either side; its width is measured halfway down that drop with linear
//! interpolation between samples.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
    pub left_base: usize,
    pub right_base: usize,
    pub width: f64,
    /// Interpolated half-prominence crossings.
    pub left_ip: f64,
    pub right_ip: f64,
}

impl Peak {
    /// Midpoint of the half-prominence crossings (index coordinates).
    pub fn center(&self) -> f64 {
        0.5 * (self.left_ip + self.right_ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub min_width: f64,
    /// Minimum prominence as a fraction of the signal's range (max − min).
    pub rel_prominence: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self { min_width: 1.0, rel_prominence: 0.1 }
    }
}

/// Indices of local maxima; flat tops report their middle (rounded down).
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    if x.len() < 3 {
        return out;
    }
    let mut i = 1;
    let last = x.len() - 1;
    while i < last {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < last && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

fn prominence(x: &[f64], peak: usize) -> (f64, usize, usize) {
    let h = x[peak];
    let (mut left_min, mut left_base) = (h, peak);
    let mut i = peak;
    while i > 0 && x[i - 1] <= h {
        i -= 1;
        if x[i] < left_min {
            left_min = x[i];
            left_base = i;
        }
    }
    let (mut right_min, mut right_base) = (h, peak);
    let mut i = peak;
    while i + 1 < x.len() && x[i + 1] <= h {
        i += 1;
        if x[i] < right_min {
            right_min = x[i];
            right_base = i;
        }
    }
    (h - left_min.max(right_min), left_base, right_base)
}

fn half_width(x: &[f64], peak: usize, prom: f64, left_base: usize, right_base: usize) -> (f64, f64) {
    let level = x[peak] - 0.5 * prom;
    let mut i = peak;
    while left_base < i && level < x[i] {
        i -= 1;
    }
    let mut left_ip = i as f64;
    if x[i] < level {
        left_ip += (level - x[i]) / (x[i + 1] - x[i]);
    }
    let mut i = peak;
    while i < right_base && level < x[i] {
        i += 1;
    }
    let mut right_ip = i as f64;
    if x[i] < level {
        right_ip -= (level - x[i]) / (x[i - 1] - x[i]);
    }
    (left_ip, right_ip)
}

/// All peaks passing both filters, in index order.
pub fn find_peaks(x: &[f64], params: PeakParams) -> Vec<Peak> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let min_prom = params.rel_prominence * (hi - lo);
    local_maxima(x)
        .into_iter()
        .filter_map(|p| {
            let (prom, lb, rb) = prominence(x, p);
            let (left_ip, right_ip) = half_width(x, p, prom, lb, rb);
            let peak = Peak {
                index: p,
                height: x[p],
                prominence: prom,
                left_base: lb,
                right_base: rb,
                width: right_ip - left_ip,
                left_ip,
                right_ip,
            };
            (prom > 0.0 && prom >= min_prom && peak.width >= params.min_width).then_some(peak)
        })
        .collect()
}

/// The `n` most prominent peaks (ties go to the leftmost), returned in index order.
pub fn strongest(peaks: &[Peak], n: usize) -> Vec<Peak> {
    let mut order: Vec<&Peak> = peaks.iter().collect();
    order.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.index.cmp(&b.index)));
    let mut picked: Vec<Peak> = order.into_iter().take(n).copied().collect();
    picked.sort_by_key(|p| p.index);
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SIGNAL: [f64; 20] = [
        0., 1., 3., 2., 2., 5., 5., 5., 1., 0., 4., 0., 2., 2., 1., 7., 3., 3., 6., 0.,
    ];

    // reference values computed once with a standard signal-processing library
    #[test]
    fn matches_reference_detector() {
        let peaks = find_peaks(&SIGNAL, PeakParams { min_width: 0.0, rel_prominence: 0.0 });
        let idx: Vec<usize> = peaks.iter().map(|p| p.index).collect();
        assert_eq!(idx, [2, 6, 10, 12, 15, 18]);
        let prom: Vec<f64> = peaks.iter().map(|p| p.prominence).collect();
        assert_eq!(prom, [1.0, 5.0, 4.0, 1.0, 7.0, 3.0]);
        let bases: Vec<(usize, usize)> = peaks.iter().map(|p| (p.left_base, p.right_base)).collect();
        assert_eq!(bases, [(0, 3), (0, 9), (9, 11), (11, 14), (11, 19), (17, 19)]);
        let widths = [0.75, 3.458333, 1.0, 1.75, 1.458333, 0.75];
        let lefts = [1.75, 4.166667, 9.5, 11.75, 14.416667, 17.5];
        let rights = [2.5, 7.625, 10.5, 13.5, 15.875, 18.25];
        for (k, p) in peaks.iter().enumerate() {
            assert!((p.width - widths[k]).abs() < 1e-6, "width {k}");
            assert!((p.left_ip - lefts[k]).abs() < 1e-6, "left {k}");
            assert!((p.right_ip - rights[k]).abs() < 1e-6, "right {k}");
        }
    }

    #[test]
    fn filters_and_selection() {
        // range is 7, so 10% means prominence >= 0.7: all pass; width >= 1 drops two
        let peaks = find_peaks(&SIGNAL, PeakParams { min_width: 1.0, rel_prominence: 0.1 });
        let idx: Vec<usize> = peaks.iter().map(|p| p.index).collect();
        assert_eq!(idx, [6, 10, 12, 15]);
        let top = strongest(&peaks, 2);
        assert_eq!(top.iter().map(|p| p.index).collect::<Vec<_>>(), [6, 15]);
        let strict = find_peaks(&SIGNAL, PeakParams { min_width: 0.0, rel_prominence: 0.5 });
        assert_eq!(strict.iter().map(|p| p.index).collect::<Vec<_>>(), [6, 10, 15]);
    }

    #[test]
    fn ties_go_left() {
        let x = [0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0];
        let peaks = find_peaks(&x, PeakParams::default());
        assert_eq!(strongest(&peaks, 2).iter().map(|p| p.index).collect::<Vec<_>>(), [1, 3]);
    }

    #[test]
    fn edges_are_never_peaks() {
        assert!(local_maxima(&[5.0, 1.0, 0.0, 1.0, 5.0]).is_empty());
        assert!(local_maxima(&[1.0, 3.0, 3.0]).is_empty());
        assert!(local_maxima(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn shift_and_scale_invariant(x in prop::collection::vec(0i32..50, 3..60), c in -10000i32..10000, k in 0i32..4) {
            // exact arithmetic so only the detector itself is under test
            let base: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let moved: Vec<f64> = base.iter().map(|v| v * 2f64.powi(k) + c as f64).collect();
            let params = PeakParams { min_width: 1.0, rel_prominence: 0.1 };
            let a: Vec<usize> = find_peaks(&base, params).iter().map(|p| p.index).collect();
            let b: Vec<usize> = find_peaks(&moved, params).iter().map(|p| p.index).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn crossings_bracket_peak(x in prop::collection::vec(-20.0f64..20.0, 3..60)) {
            for p in find_peaks(&x, PeakParams { min_width: 0.0, rel_prominence: 0.0 }) {
                prop_assert!(p.left_ip <= p.index as f64 && p.index as f64 <= p.right_ip);
                prop_assert!(p.left_base as f64 <= p.left_ip && p.right_ip <= p.right_base as f64);
                prop_assert!(p.prominence > 0.0);
            }
        }
    }
}
