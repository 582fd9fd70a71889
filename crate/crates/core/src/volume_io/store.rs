use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{Volume3D, VolumeError};

/// Half-open voxel box `[x0,x1) × [y0,y1) × [z0,z1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Box3 {
    pub x: (usize, usize),
    pub y: (usize, usize),
    pub z: (usize, usize),
}

impl Box3 {
    pub fn new(x: (usize, usize), y: (usize, usize), z: (usize, usize)) -> Self {
        Self { x, y, z }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.x.1.saturating_sub(self.x.0),
            self.y.1.saturating_sub(self.y.0),
            self.z.1.saturating_sub(self.z.0),
        ]
    }

    pub fn voxels(&self) -> u64 {
        self.dims().iter().map(|&d| d as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels() == 0
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (self.x.0..self.x.1).contains(&p[0])
            && (self.y.0..self.y.1).contains(&p[1])
            && (self.z.0..self.z.1).contains(&p[2])
    }

    /// True when `other` lies entirely inside `self`.
    pub fn encloses(&self, other: &Box3) -> bool {
        self.x.0 <= other.x.0
            && other.x.1 <= self.x.1
            && self.y.0 <= other.y.0
            && other.y.1 <= self.y.1
            && self.z.0 <= other.z.0
            && other.z.1 <= self.z.1
    }
}

/// A run of consecutive z-planes for one sub-volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ZChunk {
    /// Global (full-resolution) z of the first plane.
    pub z_start: usize,
    pub nx: usize,
    pub ny: usize,
    /// `nx · ny · nz` samples, x fastest.
    pub data: Vec<u16>,
}

impl ZChunk {
    pub fn nz(&self) -> usize {
        self.data.len().checked_div(self.nx * self.ny).unwrap_or(0)
    }
}

/// How a sub-volume sits in the aligned full-resolution frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubvolumeTransform {
    /// Rotation applied to the raw slices before the box was cut.
    pub angle_deg: f64,
    /// Voxel pitch in micrometers, if known.
    pub voxel_pitch_um: Option<f64>,
}

/// The `<id>.json` sidecar of a stored sub-volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubvolumeHeader {
    pub id: String,
    pub dims: [usize; 3],
    pub dtype: String,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub transform: SubvolumeTransform,
    pub z_written: usize,
    pub finalized: bool,
}

impl SubvolumeHeader {
    pub fn bytes(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product::<u64>() * 2
    }
}

#[derive(Debug)]
struct Entry {
    header: SubvolumeHeader,
    writer: Option<BufWriter<File>>,
}

/// On-disk sub-volumes written incrementally during extraction.
///
/// Each object gets `<id>.raw` (little-endian `u16`, x fastest) and
/// `<id>.json`. Different ids may be appended from different threads.
#[derive(Debug)]
pub struct SubvolumeStore {
    root: PathBuf,
    entries: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl SubvolumeStore {
    /// Opens `root`, creating it if needed and picking up existing headers.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, VolumeError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(VolumeError::io(&root))?;
        let mut entries = HashMap::new();
        for e in fs::read_dir(&root).map_err(VolumeError::io(&root))? {
            let path = e.map_err(VolumeError::io(&root))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(VolumeError::io(&path))?;
            let header: SubvolumeHeader = serde_json::from_str(&text)
                .map_err(|e| VolumeError::Corrupt { file: path.clone(), reason: e.to_string() })?;
            entries.insert(
                header.id.clone(),
                Arc::new(Mutex::new(Entry { header, writer: None })),
            );
        }
        Ok(Self { root, entries: RwLock::new(entries) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn raw_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.raw"))
    }

    pub fn header_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    /// Starts (or restarts) a sub-volume, truncating any previous data.
    pub fn register(
        &self,
        id: &str,
        bbox: Box3,
        transform: SubvolumeTransform,
    ) -> Result<(), VolumeError> {
        let raw = self.raw_path(id);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&raw)
            .map_err(VolumeError::io(&raw))?;
        let header = SubvolumeHeader {
            id: id.to_string(),
            dims: bbox.dims(),
            dtype: "u16".into(),
            bbox,
            transform,
            z_written: 0,
            finalized: false,
        };
        self.write_header(&header)?;
        self.entries.write().unwrap().insert(
            id.to_string(),
            Arc::new(Mutex::new(Entry { header, writer: Some(BufWriter::new(file)) })),
        );
        Ok(())
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, VolumeError> {
        self.entries
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| VolumeError::NotRegistered(id.to_string()))
    }

    /// Appends planes; `chunk.z_start` must continue where the last append ended.
    pub fn append(&self, id: &str, chunk: &ZChunk) -> Result<(), VolumeError> {
        let entry = self.entry(id)?;
        let mut e = entry.lock().unwrap();
        let [nx, ny, nz] = e.header.dims;
        if (chunk.nx, chunk.ny) != (nx, ny) || chunk.data.len() != chunk.nx * chunk.ny * chunk.nz() {
            return Err(VolumeError::DimsMismatch {
                id: id.to_string(),
                expected: (nx, ny),
                found: (chunk.nx, chunk.ny),
            });
        }
        let expected = e.header.bbox.z.0 + e.header.z_written;
        if chunk.z_start != expected || e.header.z_written + chunk.nz() > nz || e.header.finalized {
            return Err(VolumeError::NonContiguousAppend {
                id: id.to_string(),
                expected,
                found: chunk.z_start,
            });
        }
        let raw = self.raw_path(id);
        let w = e.writer.as_mut().ok_or_else(|| VolumeError::NotRegistered(id.to_string()))?;
        let mut bytes = Vec::with_capacity(chunk.data.len() * 2);
        for v in &chunk.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes).map_err(VolumeError::io(&raw))?;
        e.header.z_written += chunk.nz();
        Ok(())
    }

    /// Flushes and marks the sub-volume complete.
    pub fn finalize(&self, id: &str) -> Result<SubvolumeHeader, VolumeError> {
        let entry = self.entry(id)?;
        let mut e = entry.lock().unwrap();
        if e.header.z_written != e.header.dims[2] {
            return Err(VolumeError::Corrupt {
                file: self.raw_path(id),
                reason: format!("{} of {} planes written", e.header.z_written, e.header.dims[2]),
            });
        }
        if let Some(mut w) = e.writer.take() {
            let raw = self.raw_path(id);
            w.flush().map_err(VolumeError::io(&raw))?;
        }
        e.header.finalized = true;
        self.write_header(&e.header)?;
        Ok(e.header.clone())
    }

    fn write_header(&self, header: &SubvolumeHeader) -> Result<(), VolumeError> {
        let path = self.header_path(&header.id);
        let text = serde_json::to_string_pretty(header).expect("header serializes");
        fs::write(&path, text).map_err(VolumeError::io(&path))
    }

    pub fn header(&self, id: &str) -> Result<SubvolumeHeader, VolumeError> {
        Ok(self.entry(id)?.lock().unwrap().header.clone())
    }

    /// Registered ids, sorted.
    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Reads a finalized sub-volume if it fits in `budget` bytes.
    pub fn load(&self, id: &str, budget: u64) -> Result<(SubvolumeHeader, Volume3D<u16>), VolumeError> {
        let header = self.header(id)?;
        if !header.finalized {
            return Err(VolumeError::NotFinalized(id.to_string()));
        }
        let needed = header.bytes();
        if needed > budget {
            return Err(VolumeError::ExceedsMemoryBudget { needed, budget });
        }
        let raw = self.raw_path(id);
        let mut bytes = Vec::with_capacity(needed as usize);
        File::open(&raw)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(VolumeError::io(&raw))?;
        if bytes.len() as u64 != needed {
            return Err(VolumeError::Corrupt {
                file: raw,
                reason: format!("expected {needed} bytes, found {}", bytes.len()),
            });
        }
        let data = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok((header.clone(), Volume3D::from_vec(header.dims, data)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transform() -> SubvolumeTransform {
        SubvolumeTransform { angle_deg: 0.0, voxel_pitch_um: Some(20.0) }
    }

    fn planes(nx: usize, ny: usize, z0: usize, nz: usize) -> ZChunk {
        let data = (0..nx * ny * nz).map(|i| (i * 37 + z0 * 1000) as u16).collect();
        ZChunk { z_start: z0, nx, ny, data }
    }

    #[test]
    fn append_split_does_not_matter() {
        let dir = tempfile::tempdir().unwrap();
        let b = Box3::new((0, 4), (2, 5), (10, 16));
        let whole = {
            let mut d = Vec::new();
            for z in 10..16 {
                d.extend(planes(4, 3, z, 1).data);
            }
            d
        };
        let a = SubvolumeStore::open(dir.path().join("a")).unwrap();
        a.register("o", b, transform()).unwrap();
        for z in 10..16 {
            a.append("o", &planes(4, 3, z, 1)).unwrap();
        }
        a.finalize("o").unwrap();
        let c = SubvolumeStore::open(dir.path().join("c")).unwrap();
        c.register("o", b, transform()).unwrap();
        c.append("o", &ZChunk { z_start: 10, nx: 4, ny: 3, data: whole[..2 * 12].to_vec() }).unwrap();
        c.append("o", &ZChunk { z_start: 12, nx: 4, ny: 3, data: whole[2 * 12..].to_vec() }).unwrap();
        c.finalize("o").unwrap();
        let ra = fs::read(a.raw_path("o")).unwrap();
        let rc = fs::read(c.raw_path("o")).unwrap();
        assert_eq!(ra, rc);
        let (_, vol) = c.load("o", u64::MAX).unwrap();
        assert_eq!(vol.data, whole);
        assert_eq!(vol.dims, [4, 3, 6]);
    }

    #[test]
    fn rejects_bad_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let s = SubvolumeStore::open(dir.path()).unwrap();
        assert!(matches!(s.append("nope", &planes(1, 1, 0, 1)), Err(VolumeError::NotRegistered(_))));
        s.register("o", Box3::new((0, 4), (0, 3), (5, 8)), transform()).unwrap();
        assert!(matches!(s.append("o", &planes(3, 3, 5, 1)), Err(VolumeError::DimsMismatch { .. })));
        assert!(matches!(
            s.append("o", &planes(4, 3, 6, 1)),
            Err(VolumeError::NonContiguousAppend { expected: 5, found: 6, .. })
        ));
        s.append("o", &planes(4, 3, 5, 2)).unwrap();
        assert!(matches!(s.load("o", u64::MAX), Err(VolumeError::NotFinalized(_))));
        assert!(s.finalize("o").is_err());
        s.append("o", &planes(4, 3, 7, 1)).unwrap();
        s.finalize("o").unwrap();
    }

    #[test]
    fn load_respects_budget() {
        let dir = tempfile::tempdir().unwrap();
        let s = SubvolumeStore::open(dir.path()).unwrap();
        s.register("o", Box3::new((0, 10), (0, 10), (0, 10)), transform()).unwrap();
        s.append("o", &planes(10, 10, 0, 10)).unwrap();
        s.finalize("o").unwrap();
        assert!(matches!(
            s.load("o", 1999),
            Err(VolumeError::ExceedsMemoryBudget { needed: 2000, budget: 1999 })
        ));
        assert!(s.load("o", 2000).is_ok());
    }

    #[test]
    fn reopen_sees_finalized_headers() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = SubvolumeStore::open(dir.path()).unwrap();
            s.register("b", Box3::new((0, 2), (0, 2), (0, 1)), transform()).unwrap();
            s.append("b", &planes(2, 2, 0, 1)).unwrap();
            s.finalize("b").unwrap();
        }
        let s = SubvolumeStore::open(dir.path()).unwrap();
        assert_eq!(s.ids(), vec!["b".to_string()]);
        let h = s.header("b").unwrap();
        assert!(h.finalized);
        let (_, v) = s.load("b", 100).unwrap();
        assert_eq!(v.data, planes(2, 2, 0, 1).data);
    }

    #[test]
    fn concurrent_appends_to_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let s = SubvolumeStore::open(dir.path()).unwrap();
        let ids: Vec<String> = (0..8).map(|i| format!("o{i}")).collect();
        for id in &ids {
            s.register(id, Box3::new((0, 3), (0, 3), (0, 20)), transform()).unwrap();
        }
        std::thread::scope(|scope| {
            for id in &ids {
                let s = &s;
                scope.spawn(move || {
                    for z in 0..20 {
                        s.append(id, &planes(3, 3, z, 1)).unwrap();
                    }
                    s.finalize(id).unwrap();
                });
            }
        });
        for id in &ids {
            assert_eq!(s.load(id, u64::MAX).unwrap().1.dims, [3, 3, 20]);
        }
    }
}
