use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Triangle mesh. Units depend on the stage: voxel indices straight out of
/// marching cubes, millimeters once scaled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: &[u32; 3]) -> [[f64; 3]; 3] {
        f.map(|i| self.vertices[i as usize].map(f64::from))
    }

    pub fn face_area(&self, f: &[u32; 3]) -> f64 {
        let [a, b, c] = self.corners(f);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }

    pub fn area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Positive for a closed, outward-wound surface.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = self.corners(f);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Centroid of the enclosed solid; falls back to the vertex mean when
    /// the enclosed volume vanishes.
    pub fn centroid(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut vol = 0.0;
        for f in &self.faces {
            let [a, b, c] = self.corners(f);
            let v = dot(a, cross(b, c)) / 6.0;
            vol += v;
            for i in 0..3 {
                acc[i] += v * (a[i] + b[i] + c[i]) / 4.0;
            }
        }
        if vol.abs() > 1e-12 {
            acc.map(|s| s / vol)
        } else {
            let n = self.vertices.len().max(1) as f64;
            let mut m = [0.0; 3];
            for v in &self.vertices {
                for i in 0..3 {
                    m[i] += v[i] as f64 / n;
                }
            }
            m
        }
    }

    /// `(min, max)` corners; zeros for an empty mesh.
    pub fn bounds(&self) -> ([f32; 3], [f32; 3]) {
        if self.vertices.is_empty() {
            return ([0.0; 3], [0.0; 3]);
        }
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Number of faces on each undirected edge.
    pub fn edge_faces(&self) -> HashMap<(u32, u32), u32> {
        let mut m = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge borders exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_faces().values().all(|&n| n == 2)
    }

    /// `V − E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_faces().len() as i64 + self.faces.len() as i64
    }

    /// Applies `p ↦ (p + offset) · scale` to every vertex.
    pub fn transformed(&self, offset: [f64; 3], scale: f64) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [0, 1, 2].map(|i| ((v[i] as f64 + offset[i]) * scale) as f32))
                .collect(),
            faces: self.faces.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetra() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn tetrahedron_measures() {
        let t = tetra();
        assert!(t.is_watertight());
        assert_eq!(t.euler_characteristic(), 2);
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
        let c = t.centroid();
        assert!(c.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let area = 1.5 + 3f64.sqrt() / 2.0;
        assert!((t.area() - area).abs() < 1e-6);
    }

    #[test]
    fn open_patch_is_not_watertight() {
        let mut t = tetra();
        t.faces.pop();
        assert!(!t.is_watertight());
    }

    #[test]
    fn scaling_to_millimeters() {
        let m = Mesh { vertices: vec![[10.0, 0.0, 0.0]], faces: vec![] };
        // 50 µm pitch
        assert_eq!(m.transformed([0.0; 3], 50.0 / 1000.0).vertices[0], [0.5, 0.0, 0.0]);
    }
}
