use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Mesh, SurfError};

/// Binary little-endian PLY: `float x, y, z` per vertex and
/// `list uchar uint vertex_indices` per face.
pub fn write_ply(path: &Path, mesh: &Mesh) -> Result<(), SurfError> {
    let io = |source| SurfError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    let mut body = Vec::with_capacity(mesh.vertices.len() * 12 + mesh.faces.len() * 13);
    for v in &mesh.vertices {
        for c in v {
            body.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in &mesh.faces {
        body.push(3u8);
        for i in f {
            body.extend_from_slice(&i.to_le_bytes());
        }
    }
    w.write_all(header.as_bytes()).map_err(io)?;
    w.write_all(&body).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads the subset of PLY written by [`write_ply`] (face indices may be
/// `int` or `uint`).
pub fn read_ply(path: &Path) -> Result<Mesh, SurfError> {
    let io = |source| SurfError::Io { path: path.to_path_buf(), source };
    let bad = |reason: String| SurfError::Parse { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let (mut n_vert, mut n_face) = (None, None);
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(bad("header not terminated".into()));
        }
        let l = line.trim_end();
        if first {
            if l != "ply" {
                return Err(bad("missing ply magic".into()));
            }
            first = false;
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(bad(format!("unsupported format {fmt}")))
            }
            ["element", "vertex", n] => n_vert = n.parse::<usize>().ok(),
            ["element", "face", n] => n_face = n.parse::<usize>().ok(),
            ["property", "float", _] | ["format", ..] | ["comment", ..] => {}
            ["property", "list", "uchar", "uint" | "int", _] => {}
            _ => return Err(bad(format!("unsupported header line {l:?}"))),
        }
    }
    let (nv, nf) = match (n_vert, n_face) {
        (Some(v), Some(f)) => (v, f),
        _ => return Err(bad("missing element counts".into())),
    };
    let mut mesh = Mesh { vertices: Vec::with_capacity(nv), faces: Vec::with_capacity(nf) };
    let mut buf = [0u8; 12];
    for _ in 0..nv {
        r.read_exact(&mut buf).map_err(io)?;
        let c = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap());
        mesh.vertices.push([c(0), c(1), c(2)]);
    }
    let mut face = [0u8; 13];
    for _ in 0..nf {
        r.read_exact(&mut face).map_err(io)?;
        if face[0] != 3 {
            return Err(bad(format!("face with {} vertices", face[0])));
        }
        let idx = |k: usize| u32::from_le_bytes(face[1 + 4 * k..5 + 4 * k].try_into().unwrap());
        let f = [idx(0), idx(1), idx(2)];
        if f.iter().any(|&i| i as usize >= nv) {
            return Err(bad(format!("face index out of range in {f:?}")));
        }
        mesh.faces.push(f);
    }
    Ok(mesh)
}
