use std::fs;
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};

use image::{DynamicImage, ImageDecoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::{Image2D, MemoryTracker, VolumeError};
use super::memory::Charge;

/// Decoded slices allowed in memory at once unless configured otherwise.
pub const DEFAULT_RESIDENT_SLICES: usize = 2;

/// Optional `scan.json` next to the slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    /// Isotropic voxel pitch in micrometers.
    pub voxel_pitch_um: Option<f64>,
}

impl ScanMetadata {
    pub const FILE_NAME: &'static str = "scan.json";
}

/// A directory of single-image 16-bit z-slices. Holds no pixel data.
#[derive(Debug, Clone)]
pub struct SliceStack {
    pub dir: PathBuf,
    /// Slice files in z order (lexicographic file name order).
    pub files: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub voxel_pitch_um: Option<f64>,
    gate: Arc<ResidentGate>,
    tracker: MemoryTracker,
}

impl SliceStack {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, VolumeError> {
        Self::open_with(dir, DEFAULT_RESIDENT_SLICES, MemoryTracker::new())
    }

    /// Opens a stack whose reads never keep more than `max_resident`
    /// decoded slices alive; further reads block until one is dropped.
    pub fn open_with(
        dir: impl AsRef<Path>,
        max_resident: usize,
        tracker: MemoryTracker,
    ) -> Result<Self, VolumeError> {
        let dir = dir.as_ref().to_path_buf();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(VolumeError::io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_slice_file(p))
            .collect();
        files.sort();
        let Some(first) = files.first() else {
            return Err(VolumeError::NoSlices(dir));
        };
        let (width, height) = probe(first)?;
        for f in &files[1..] {
            let dims = probe(f)?;
            if dims != (width, height) {
                return Err(VolumeError::InconsistentDimensions {
                    file: f.clone(),
                    expected: (width, height),
                    found: dims,
                });
            }
        }
        let meta_path = dir.join(ScanMetadata::FILE_NAME);
        let voxel_pitch_um = if meta_path.is_file() {
            let text = fs::read_to_string(&meta_path).map_err(VolumeError::io(&meta_path))?;
            let meta: ScanMetadata =
                serde_json::from_str(&text).map_err(|e| VolumeError::Corrupt {
                    file: meta_path.clone(),
                    reason: e.to_string(),
                })?;
            meta.voxel_pitch_um
        } else {
            None
        };
        Ok(Self {
            dir,
            files,
            width,
            height,
            voxel_pitch_um,
            gate: Arc::new(ResidentGate::new(max_resident.max(1))),
            tracker,
        })
    }

    /// Number of slices `h`.
    pub fn depth(&self) -> usize {
        self.files.len()
    }

    pub fn slice_bytes(&self) -> u64 {
        (self.width * self.height * std::mem::size_of::<u16>()) as u64
    }

    pub fn max_resident(&self) -> usize {
        self.gate.limit
    }

    pub fn tracker(&self) -> &MemoryTracker {
        &self.tracker
    }

    /// Decodes slice `k` (1-based).
    pub fn read_slice(&self, k: usize) -> Result<ResidentSlice, VolumeError> {
        let h = self.depth();
        if k == 0 || k > h {
            return Err(VolumeError::OutOfRange { k, h });
        }
        let permit = self.gate.acquire();
        let file = &self.files[k - 1];
        let charge = self.tracker.charge(self.slice_bytes());
        let decoded = ImageReader::open(file)
            .map_err(VolumeError::io(file))?
            .with_guessed_format()
            .map_err(VolumeError::io(file))?
            .decode()
            .map_err(|source| VolumeError::Decode { file: file.clone(), source })?;
        let image = match decoded {
            DynamicImage::ImageLuma16(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                if (w, h) != (self.width, self.height) {
                    return Err(VolumeError::InconsistentDimensions {
                        file: file.clone(),
                        expected: (self.width, self.height),
                        found: (w, h),
                    });
                }
                Image2D::from_vec(w, h, buf.into_raw())
            }
            other => {
                return Err(VolumeError::UnsupportedSampleType {
                    file: file.clone(),
                    found: format!("{:?}", other.color()),
                })
            }
        };
        Ok(ResidentSlice {
            image,
            _charge: charge,
            _permit: permit,
        })
    }
}

fn is_slice_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "tif" | "tiff" | "png"))
        .unwrap_or(false)
}

fn probe(file: &Path) -> Result<(usize, usize), VolumeError> {
    let reader = ImageReader::open(file)
        .map_err(VolumeError::io(file))?
        .with_guessed_format()
        .map_err(VolumeError::io(file))?;
    let decoder = reader
        .into_decoder()
        .map_err(|source| VolumeError::Decode { file: file.to_path_buf(), source })?;
    let color = decoder.color_type();
    if color != image::ColorType::L16 {
        return Err(VolumeError::UnsupportedSampleType {
            file: file.to_path_buf(),
            found: format!("{color:?}"),
        });
    }
    let (w, h) = decoder.dimensions();
    Ok((w as usize, h as usize))
}

/// Writes a 16-bit grayscale slice; the format follows the extension
/// (`.tif`/`.tiff` or `.png`).
pub fn write_slice(path: &Path, img: &Image2D<u16>) -> Result<(), VolumeError> {
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .expect("buffer matches dimensions");
    buf.save(path)
        .map_err(|source| VolumeError::Decode { file: path.to_path_buf(), source })
}

/// A decoded slice counted against the stack's residency limit until dropped.
#[derive(Debug)]
pub struct ResidentSlice {
    image: Image2D<u16>,
    _charge: Charge,
    _permit: Permit,
}

impl ResidentSlice {
    pub fn image(&self) -> &Image2D<u16> {
        &self.image
    }
}

impl Deref for ResidentSlice {
    type Target = Image2D<u16>;

    fn deref(&self) -> &Image2D<u16> {
        &self.image
    }
}

#[derive(Debug)]
struct ResidentGate {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

impl ResidentGate {
    fn new(limit: usize) -> Self {
        Self {
            limit,
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> Permit {
        let mut count = self.count.lock().unwrap();
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        Permit { gate: Arc::clone(self) }
    }
}

#[derive(Debug)]
struct Permit {
    gate: Arc<ResidentGate>,
}

impl Drop for Permit {
    fn drop(&mut self) {
        *self.gate.count.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, w: usize, h: usize, seed: u16) -> Image2D<u16> {
        let img = Image2D::from_fn(w, h, |x, y| seed.wrapping_mul(31).wrapping_add((x * 7 + y * 1000) as u16));
        write_slice(&dir.join(name), &img).unwrap();
        img
    }

    #[test]
    fn single_slice_stack() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "s_0001.tif", 8, 8, 3);
        let stack = SliceStack::open(dir.path()).unwrap();
        assert_eq!(stack.depth(), 1);
        assert_eq!((stack.width, stack.height), (8, 8));
        let s = stack.read_slice(1).unwrap();
        assert_eq!(s.image(), &img);
        assert!(matches!(stack.read_slice(2), Err(VolumeError::OutOfRange { k: 2, h: 1 })));
        assert!(matches!(stack.read_slice(0), Err(VolumeError::OutOfRange { .. })));
    }

    #[test]
    fn reads_are_pure_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "s_0002.png", 5, 4, 2);
        let b = write(dir.path(), "s_0001.png", 5, 4, 1);
        let stack = SliceStack::open(dir.path()).unwrap();
        assert_eq!(stack.read_slice(1).unwrap().image(), &b);
        assert_eq!(stack.read_slice(2).unwrap().image(), &a);
        let first = stack.read_slice(1).unwrap().image().clone();
        assert_eq!(stack.read_slice(1).unwrap().image(), &first);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s_0001.tif", 8, 8, 1);
        write(dir.path(), "s_0002.tif", 9, 8, 1);
        assert!(matches!(
            SliceStack::open(dir.path()),
            Err(VolumeError::InconsistentDimensions { .. })
        ));
    }

    #[test]
    fn eight_bit_and_empty_dirs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(SliceStack::open(dir.path()), Err(VolumeError::NoSlices(_))));
        let buf = image::GrayImage::from_raw(4, 4, vec![7u8; 16]).unwrap();
        buf.save(dir.path().join("s_0001.png")).unwrap();
        assert!(matches!(
            SliceStack::open(dir.path()),
            Err(VolumeError::UnsupportedSampleType { .. })
        ));
    }

    #[test]
    fn residency_is_tracked() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s_0001.tif", 10, 10, 1);
        let tracker = MemoryTracker::new();
        let stack = SliceStack::open_with(dir.path(), 1, tracker.clone()).unwrap();
        let s = stack.read_slice(1).unwrap();
        assert_eq!(tracker.current(), 200);
        drop(s);
        assert_eq!(tracker.current(), 0);
        // a second read succeeds once the first permit is released
        let _again = stack.read_slice(1).unwrap();
    }
}
