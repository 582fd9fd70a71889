use std::collections::HashMap;

use super::tables::{EDGE_TABLE, TRI_TABLE};
use super::{Mesh, SurfError};
use crate::volume_io::Volume3D;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Keeps vertices off the grid points so no triangle collapses.
const T_MIN: f64 = 1e-3;

/// Isosurface of `{v = iso}` with linear edge interpolation; the object is
/// the region `v ≥ iso`.
///
/// The volume is treated as if surrounded by one voxel of value 0 (or below
/// `iso` if `iso ≤ 0`) so surfaces touching the box edge close. Vertices are
/// in voxel index units; triangles wind counterclockwise seen from outside.
pub fn marching_cubes<T: Copy + Into<f64>>(vol: &Volume3D<T>, iso: f64) -> Result<Mesh, SurfError> {
    let [nx, ny, nz] = vol.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(SurfError::TooSmall(vol.dims));
    }
    let border = if iso > 0.0 { 0.0 } else { iso - 1.0 };
    // padded sample grid: index p ↔ voxel p − 1
    let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
    let sample = |x: usize, y: usize, z: usize| -> f64 {
        if x == 0 || y == 0 || z == 0 || x > nx || y > ny || z > nz {
            border
        } else {
            vol.get(x - 1, y - 1, z - 1).into()
        }
    };

    let mut vertices: Vec<[f32; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<u64, u32> = HashMap::new();

    let mut values = [0.0f64; 8];
    for z in 0..pz - 1 {
        for y in 0..py - 1 {
            for x in 0..px - 1 {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = sample(x + off[0], y + off[1], z + off[2]);
                    if values[c] < iso {
                        case |= 1 << c;
                    }
                }
                let crossing = EDGE_TABLE[case];
                if crossing == 0 {
                    continue;
                }
                let mut ids = [0u32; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if crossing & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (CORNERS[*a], CORNERS[*b]);
                    let lo = [x + ca[0].min(cb[0]), y + ca[1].min(cb[1]), z + ca[2].min(cb[2])];
                    let axis = (0..3).find(|&i| ca[i] != cb[i]).unwrap();
                    let key = (((lo[2] * py + lo[1]) * px + lo[0]) * 3 + axis) as u64;
                    ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (values[*a], values[*b]);
                        let t = ((iso - va) / (vb - va)).clamp(T_MIN, 1.0 - T_MIN);
                        let p = |ci: usize, cj: usize, base: usize| {
                            let pa = (base + ci) as f64 - 1.0;
                            let pb = (base + cj) as f64 - 1.0;
                            (pa + t * (pb - pa)) as f32
                        };
                        vertices.push([p(ca[0], cb[0], x), p(ca[1], cb[1], y), p(ca[2], cb[2], z)]);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let (a, b, c) = (ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]);
                    faces.push([a, b, c]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(SurfError::EmptyMesh(iso));
    }
    Ok(Mesh { vertices, faces })
}
