use serde::{Deserialize, Serialize};

use super::{rotate_row_into, Box3, SliceStack, SubvolumeHeader, SubvolumeStore, SubvolumeTransform, VolumeError, ZChunk};

/// One box to cut out of the aligned scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractTarget {
    pub id: String,
    /// Aligned-frame voxel box; must lie inside the scan.
    pub bbox: Box3,
}

/// Streams the scan once, rotating each needed slice by `angle_deg` only
/// inside the active boxes and appending one plane per box per slice.
///
/// Slices no box needs are not decoded. Values are the rotated samples
/// rounded to the nearest integer. Every box is finalized when its last
/// plane is written.
pub fn extract_subvolumes(
    stack: &SliceStack,
    angle_deg: f64,
    targets: &[ExtractTarget],
    store: &SubvolumeStore,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<SubvolumeHeader>, VolumeError> {
    let dims = [stack.width, stack.height, stack.depth()];
    for t in targets {
        let b = &t.bbox;
        if b.is_empty() || b.x.1 > dims[0] || b.y.1 > dims[1] || b.z.1 > dims[2] {
            return Err(VolumeError::RangeOutOfBounds {
                what: "extraction box",
                range: (b.z.0, b.z.1),
                limit: dims[2],
            });
        }
    }
    let transform = SubvolumeTransform { angle_deg, voxel_pitch_um: stack.voxel_pitch_um };
    for t in targets {
        store.register(&t.id, t.bbox, transform)?;
    }
    let z_lo = targets.iter().map(|t| t.bbox.z.0).min().unwrap_or(0);
    let z_hi = targets.iter().map(|t| t.bbox.z.1).max().unwrap_or(0);
    let mut headers = Vec::with_capacity(targets.len());
    for z in z_lo..z_hi {
        let active: Vec<&ExtractTarget> =
            targets.iter().filter(|t| (t.bbox.z.0..t.bbox.z.1).contains(&z)).collect();
        if active.is_empty() {
            continue;
        }
        let raw = stack.read_slice(z + 1)?;
        for t in active {
            let [nx, ny, _] = t.bbox.dims();
            let _charge = stack.tracker().charge((nx * ny * 2 + nx * 8) as u64);
            let mut row = vec![0.0; nx];
            let mut data = Vec::with_capacity(nx * ny);
            for y in t.bbox.y.0..t.bbox.y.1 {
                rotate_row_into(raw.image(), angle_deg, y, t.bbox.x.0..t.bbox.x.1, &mut row);
                data.extend(row.iter().map(|v| v.round().clamp(0.0, u16::MAX as f64) as u16));
            }
            store.append(&t.id, &ZChunk { z_start: z, nx, ny, data })?;
            if z + 1 == t.bbox.z.1 {
                headers.push(store.finalize(&t.id)?);
            }
        }
        progress(z + 1 - z_lo, z_hi - z_lo);
    }
    // report in target order
    headers.sort_by_key(|h| targets.iter().position(|t| t.id == h.id));
    Ok(headers)
}
