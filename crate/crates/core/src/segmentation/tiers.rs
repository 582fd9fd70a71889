use serde::{Deserialize, Serialize};

use super::peaks::{find_peaks, strongest, Peak, PeakParams};
use super::SegError;

/// Minimum width, in subsampled slices, of a tier-gap valley.
pub const Z_MIN_WIDTH: f64 = 10.0;

/// Half-open range of subsampled z indices belonging to one tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierSlab {
    pub z_start: usize,
    pub z_stop: usize,
}

impl TierSlab {
    pub fn depth(&self) -> usize {
        self.z_stop - self.z_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierDetection {
    /// Every valley that passed the filters.
    pub candidates: Vec<Peak>,
    /// Cut points derived from the strongest candidates.
    pub detected_cuts: Vec<usize>,
    /// Cut points in force (detected or overridden).
    pub cuts: Vec<usize>,
    pub slabs: Vec<TierSlab>,
    /// True when `cuts` came from an override.
    pub ratified: bool,
}

/// Splits the z-profile into `n_tiers` slabs at the deepest valleys.
///
/// A cut sits at the midpoint of the valley's half-depth crossings, expressed
/// as a slice boundary: slabs are `[0, c1), [c1, c2), …, [c_last, depth)`.
/// `overrides` replaces the detected cuts; without it, too few valleys is an
/// error.
pub fn detect_tier_boundaries(
    profile: &[f64],
    n_tiers: usize,
    min_width: f64,
    overrides: Option<&[usize]>,
) -> Result<TierDetection, SegError> {
    if n_tiers == 0 {
        return Err(SegError::InvalidOverride("n_tiers must be at least 1".into()));
    }
    if profile.is_empty() {
        return Err(SegError::EmptyVolume);
    }
    let needed = n_tiers - 1;
    let inverted: Vec<f64> = profile.iter().map(|d| -d).collect();
    let candidates = if needed == 0 {
        Vec::new()
    } else {
        merge_shared_valleys(find_peaks(&inverted, PeakParams { min_width, rel_prominence: 0.1 }))
    };
    let detected_cuts: Vec<usize> = strongest(&candidates, needed)
        .iter()
        .map(|p| (p.center() + 0.5).round() as usize)
        .collect();
    let (cuts, ratified) = match overrides {
        Some(o) => (o.to_vec(), true),
        None => {
            if detected_cuts.len() < needed {
                return Err(SegError::InsufficientPeaks { found: detected_cuts.len(), needed });
            }
            (detected_cuts.clone(), false)
        }
    };
    let slabs = slabs_from_cuts(&cuts, profile.len(), n_tiers)?;
    Ok(TierDetection { candidates, detected_cuts, cuts, slabs, ratified })
}

/// Keeps one candidate per valley. A thin sheet inside a gap splits it into
/// two minima with identical half-depth crossings; the weaker (then later)
/// of any overlapping pair is dropped.
fn merge_shared_valleys(peaks: Vec<Peak>) -> Vec<Peak> {
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| peaks[b].prominence.total_cmp(&peaks[a].prominence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let p = &peaks[i];
        if kept.iter().all(|&k| p.right_ip < peaks[k].left_ip || p.left_ip > peaks[k].right_ip) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| peaks[i]).collect()
}

pub fn slabs_from_cuts(cuts: &[usize], depth: usize, n_tiers: usize) -> Result<Vec<TierSlab>, SegError> {
    if cuts.len() + 1 != n_tiers {
        return Err(SegError::InvalidOverride(format!(
            "{} cuts given for {n_tiers} tiers",
            cuts.len()
        )));
    }
    let mut bounds = Vec::with_capacity(n_tiers + 1);
    bounds.push(0);
    bounds.extend_from_slice(cuts);
    bounds.push(depth);
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SegError::InvalidOverride(format!(
            "cuts {cuts:?} must increase strictly inside (0, {depth})"
        )));
    }
    Ok(bounds
        .windows(2)
        .map(|w| TierSlab { z_start: w[0], z_stop: w[1] })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bright tiers separated by smooth dark gaps at the given centers.
    fn tiered(depth: usize, gaps: &[f64], half_width: f64) -> Vec<f64> {
        (0..depth)
            .map(|z| {
                let zc = z as f64 + 0.5;
                let mut v = 5000.0;
                for g in gaps {
                    let d = ((zc - g) / half_width).abs();
                    if d < 1.0 {
                        v -= 3000.0 * (1.0 - d * d);
                    }
                }
                v
            })
            .collect()
    }

    #[test]
    fn one_tier_has_no_cuts() {
        let t = detect_tier_boundaries(&tiered(50, &[20.0], 12.0), 1, Z_MIN_WIDTH, None).unwrap();
        assert!(t.cuts.is_empty());
        assert_eq!(t.slabs, vec![TierSlab { z_start: 0, z_stop: 50 }]);
    }

    #[test]
    fn four_tiers_cut_at_gaps() {
        let gaps = [27.5, 55.0, 83.5];
        let t = detect_tier_boundaries(&tiered(110, &gaps, 12.0), 4, Z_MIN_WIDTH, None).unwrap();
        assert_eq!(t.cuts.len(), 3);
        for (c, g) in t.cuts.iter().zip(gaps) {
            assert!((*c as f64 - g).abs() <= 1.0, "cut {c} gap {g}");
        }
        assert_eq!(t.slabs.len(), 4);
        assert_eq!(t.slabs[0].z_start, 0);
        assert_eq!(t.slabs[3].z_stop, 110);
        assert!(!t.ratified);
    }

    #[test]
    fn narrow_valleys_are_ignored() {
        // a 4-slice dip cannot be a tier gap
        let t = detect_tier_boundaries(&tiered(80, &[40.0], 2.0), 2, Z_MIN_WIDTH, None);
        assert!(matches!(t, Err(SegError::InsufficientPeaks { found: 0, needed: 1 })));
    }

    #[test]
    fn one_valley_three_tiers_is_insufficient() {
        let t = detect_tier_boundaries(&tiered(100, &[50.0], 12.0), 3, Z_MIN_WIDTH, None);
        assert_eq!(t.unwrap_err(), SegError::InsufficientPeaks { found: 1, needed: 2 });
    }

    #[test]
    fn override_replaces_detection() {
        let profile = tiered(100, &[50.0], 12.0);
        let t = detect_tier_boundaries(&profile, 3, Z_MIN_WIDTH, Some(&[30, 60])).unwrap();
        assert_eq!(t.cuts, vec![30, 60]);
        assert_eq!(t.detected_cuts.len(), 1);
        assert!(t.ratified);
        assert!(detect_tier_boundaries(&profile, 3, Z_MIN_WIDTH, Some(&[60, 30])).is_err());
        assert!(detect_tier_boundaries(&profile, 3, Z_MIN_WIDTH, Some(&[0, 30])).is_err());
        assert!(detect_tier_boundaries(&profile, 3, Z_MIN_WIDTH, Some(&[30, 100])).is_err());
        assert!(detect_tier_boundaries(&profile, 3, Z_MIN_WIDTH, Some(&[30])).is_err());
    }

    #[test]
    fn slabs_partition_depth() {
        let s = slabs_from_cuts(&[3, 9], 12, 3).unwrap();
        assert_eq!(s.iter().map(TierSlab::depth).sum::<usize>(), 12);
        assert!(s.windows(2).all(|w| w[0].z_stop == w[1].z_start));
    }

    #[test]
    fn sheet_in_gap_yields_one_cut_per_gap() {
        // each gap floor is split by a one-slice bump; the shallower gap must
        // still get its own cut
        let mut p = tiered(120, &[40.5, 80.5], 12.0);
        p[40] += 400.0;
        p[80] += 400.0;
        for v in &mut p[70..91] {
            *v += 600.0;
        }
        let t = detect_tier_boundaries(&p, 3, Z_MIN_WIDTH, None).unwrap();
        assert!((t.cuts[0] as f64 - 40.5).abs() <= 1.0, "{:?}", t.cuts);
        assert!((t.cuts[1] as f64 - 80.5).abs() <= 2.0, "{:?}", t.cuts);
        assert_eq!(t.candidates.len(), 2);
    }
}
