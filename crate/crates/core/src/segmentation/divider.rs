use serde::{Deserialize, Serialize};

use super::{SegError, ThresholdSet, TierSlab};
use crate::volume_io::{Image2D, Volume3D};

/// Fraction of `max(I)` a pixel must exceed to stay in `B`.
pub const MASK_FRACTION: f64 = 0.75;

/// Per-column divider score of one tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DividerImage {
    /// Divider-range count minus object-range count along z.
    pub i: Image2D<i32>,
    /// `I` where it exceeds `0.75 · max(I)`, zero elsewhere.
    pub b: Image2D<f64>,
}

impl DividerImage {
    pub fn max_score(&self) -> i32 {
        self.i.data.iter().copied().max().unwrap_or(0)
    }
}

pub fn divider_image(
    vol: &Volume3D<f64>,
    slab: TierSlab,
    t: &ThresholdSet,
) -> Result<DividerImage, SegError> {
    let [nx, ny, nz] = vol.dims;
    if slab.z_start >= slab.z_stop || slab.z_stop > nz {
        return Err(SegError::InvalidOverride(format!(
            "slab {}..{} outside depth {nz}",
            slab.z_start, slab.z_stop
        )));
    }
    let mut score = vec![0i32; nx * ny];
    for z in slab.z_start..slab.z_stop {
        for (s, &v) in score.iter_mut().zip(vol.z_slice(z)) {
            *s += t.is_divider(v) as i32 - t.is_object(v) as i32;
        }
    }
    let i = Image2D::from_vec(nx, ny, score);
    let max = i.data.iter().copied().max().unwrap_or(0);
    if max <= 0 {
        return Err(SegError::DegenerateMask);
    }
    let cut = MASK_FRACTION * max as f64;
    let b = i.map(|v| if v as f64 > cut { v as f64 } else { 0.0 });
    Ok(DividerImage { i, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> ThresholdSet {
        ThresholdSet::from_divider_range(10.0, 20.0).unwrap()
    }

    #[test]
    fn column_score_is_count_difference() {
        // one column: 5 divider voxels, 2 object voxels, 3 air
        let column = [15.0, 15.0, 15.0, 15.0, 15.0, 30.0, 30.0, 1.0, 1.0, 1.0];
        let vol = Volume3D::from_fn([2, 1, 10], |x, _, z| if x == 0 { column[z] } else { 1.0 });
        let d = divider_image(&vol, TierSlab { z_start: 0, z_stop: 10 }, &t()).unwrap();
        assert_eq!(d.i.get(0, 0), 3);
        assert_eq!(d.i.get(1, 0), 0);
        assert_eq!(d.b.get(0, 0), 3.0);
        assert_eq!(d.b.get(1, 0), 0.0);
    }

    #[test]
    fn mask_keeps_only_strong_scores() {
        let vol = Volume3D::from_fn([4, 1, 8], |x, _, z| if z < 2 * x { 15.0 } else { 1.0 });
        let d = divider_image(&vol, TierSlab { z_start: 0, z_stop: 8 }, &t()).unwrap();
        assert_eq!(d.i.data, vec![0, 2, 4, 6]);
        // 0.75 · 6 = 4.5
        assert_eq!(d.b.data, vec![0.0, 0.0, 0.0, 6.0]);
    }

    #[test]
    fn boundaries_are_inclusive() {
        let vol = Volume3D::from_vec([3, 1, 1], vec![10.0, 20.0, 9.999]);
        let d = divider_image(&vol, TierSlab { z_start: 0, z_stop: 1 }, &t()).unwrap();
        // 20 is both the top of the divider range and the bottom of the object range
        assert_eq!(d.i.data, vec![1, 0, 0]);
    }

    #[test]
    fn all_air_is_degenerate() {
        let vol = Volume3D::from_vec([3, 3, 4], vec![1.0; 36]);
        let r = divider_image(&vol, TierSlab { z_start: 0, z_stop: 4 }, &t());
        assert_eq!(r.unwrap_err(), SegError::DegenerateMask);
    }

    #[test]
    fn widening_object_range_never_raises_score() {
        let vol = Volume3D::from_fn([5, 5, 6], |x, y, z| ((x * 7 + y * 3 + z * 5) % 40) as f64);
        let slab = TierSlab { z_start: 0, z_stop: 6 };
        let narrow = ThresholdSet::new(10.0, 20.0, 25.0, 30.0).unwrap();
        let wide = ThresholdSet::new(10.0, 20.0, 21.0, 39.0).unwrap();
        let a = divider_image(&vol, slab, &narrow).unwrap();
        let b = divider_image(&vol, slab, &wide).unwrap();
        assert!(a.i.data.iter().zip(&b.i.data).all(|(p, q)| q <= p));
    }
}
