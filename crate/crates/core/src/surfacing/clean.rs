use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Mesh, SurfError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub components: usize,
    pub watertight_components: usize,
    pub degenerate_faces: usize,
    /// Whether the kept component is closed.
    pub watertight: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Keeps the largest closed edge-connected component (largest open one if
/// none is closed) after dropping zero-area faces.
pub fn clean_mesh(mesh: &Mesh) -> Result<(Mesh, CleanReport), SurfError> {
    let faces: Vec<[u32; 3]> = mesh
        .faces
        .iter()
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2] && mesh.face_area(f) > 0.0)
        .copied()
        .collect();
    let degenerate_faces = mesh.faces.len() - faces.len();
    if faces.is_empty() {
        return Err(SurfError::EmptyAfterClean);
    }

    let mut parent: Vec<usize> = (0..faces.len()).collect();
    let mut first_on_edge: HashMap<(u32, u32), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
    let mut edge_count: HashMap<(u32, u32), u32> = HashMap::with_capacity(faces.len() * 3 / 2);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let e = (a.min(b), a.max(b));
            *edge_count.entry(e).or_insert(0) += 1;
            match first_on_edge.get(&e) {
                Some(&other) => {
                    let (ra, rb) = (find(&mut parent, fi), find(&mut parent, other));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    first_on_edge.insert(e, fi);
                }
            }
        }
    }

    // root → (face count, closed)
    let mut comps: HashMap<usize, (usize, bool)> = HashMap::new();
    for fi in 0..faces.len() {
        let r = find(&mut parent, fi);
        comps.entry(r).or_insert((0, true)).0 += 1;
    }
    for (e, &n) in &edge_count {
        if n != 2 {
            let r = find(&mut parent, first_on_edge[e]);
            comps.get_mut(&r).unwrap().1 = false;
        }
    }
    let watertight_components = comps.values().filter(|c| c.1).count();
    let best = |closed_only: bool| {
        comps
            .iter()
            .filter(|(_, c)| !closed_only || c.1)
            .max_by(|(ra, a), (rb, b)| a.0.cmp(&b.0).then(rb.cmp(ra)))
            .map(|(&r, &c)| (r, c.1))
    };
    let (root, watertight) = best(true).or_else(|| best(false)).unwrap();

    let kept: Vec<[u32; 3]> = faces
        .iter()
        .enumerate()
        .filter(|(fi, _)| find(&mut parent, *fi) == root)
        .map(|(_, f)| *f)
        .collect();
    // compact vertices, keeping their original order
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    for f in &kept {
        for &v in f {
            remap[v as usize] = 0;
        }
    }
    let mut out = Mesh::default();
    for (v, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = out.vertices.len() as u32;
            out.vertices.push(mesh.vertices[v]);
        }
    }
    out.faces = kept.iter().map(|f| f.map(|v| remap[v as usize])).collect();
    let report = CleanReport {
        components: comps.len(),
        watertight_components,
        degenerate_faces,
        watertight,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfacing::marching_cubes;
    use crate::volume_io::Volume3D;

    fn ball(c: [f64; 3], r: f64) -> impl Fn(usize, usize, usize) -> f64 {
        move |x, y, z| {
            let d = ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2)).sqrt();
            r - d
        }
    }

    #[test]
    fn single_sphere_unchanged() {
        let vol = Volume3D::from_fn([24, 24, 24], ball([11.5; 3], 8.0));
        let m = marching_cubes(&vol, 0.0).unwrap();
        let (c, rep) = clean_mesh(&m).unwrap();
        assert_eq!(c, m);
        assert!(rep.watertight);
        assert_eq!(rep.components, 1);
    }

    #[test]
    fn open_patch_dropped() {
        let vol = Volume3D::from_fn([24, 24, 24], ball([11.5; 3], 8.0));
        let mut m = marching_cubes(&vol, 0.0).unwrap();
        let sphere_faces = m.faces.len();
        let base = m.vertices.len() as u32;
        m.vertices.extend([[40.0, 0.0, 0.0], [41.0, 0.0, 0.0], [40.0, 1.0, 0.0], [41.0, 1.0, 0.0]]);
        m.faces.extend([[base, base + 1, base + 2], [base + 1, base + 3, base + 2]]);
        let (c, rep) = clean_mesh(&m).unwrap();
        assert_eq!(c.faces.len(), sphere_faces);
        assert!(rep.watertight && c.is_watertight());
        assert_eq!(rep.components, 2);
    }

    #[test]
    fn blob_kept_over_edge_sliver() {
        // a blob plus a thin slab of object-range material along one face of
        // the box, as when a neighbour pokes into the padded region
        let f = ball([15.0, 15.0, 15.0], 9.0);
        let vol = Volume3D::from_fn([30, 30, 30], |x, y, z| if x < 2 && y < 6 { 5.0 } else { f(x, y, z) });
        let m = marching_cubes(&vol, 0.0).unwrap();
        let (c, rep) = clean_mesh(&m).unwrap();
        assert_eq!(rep.components, 2);
        let (lo, _) = c.bounds();
        assert!(lo[0] > 4.0, "kept the sliver: {lo:?}");
        assert!(rep.watertight);
    }

    #[test]
    fn largest_open_component_when_none_closed() {
        let m = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [5.0, 5.0, 5.0], [6.0, 5.0, 5.0], [5.0, 6.0, 5.0]],
            faces: vec![[0, 1, 2], [1, 3, 2], [4, 5, 6], [0, 0, 1]],
        };
        let (c, rep) = clean_mesh(&m).unwrap();
        assert_eq!(c.faces.len(), 2);
        assert!(!rep.watertight);
        assert_eq!(rep.degenerate_faces, 1);
        assert!(matches!(clean_mesh(&Mesh::default()), Err(SurfError::EmptyAfterClean)));
    }
}
