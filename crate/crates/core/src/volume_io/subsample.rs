use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rotate_row_into, AlignmentParams, Image2D, SliceStack, Volume3D, VolumeError};

/// In-plane size of the proxy volume.
pub const SUBSAMPLE_XY: usize = 225;
/// Slices averaged into one proxy slice.
pub const Z_FACTOR: usize = 10;

/// The low-resolution proxy of an aligned scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampledVolume {
    pub volume: Volume3D<f64>,
    /// Full-resolution pixels per proxy pixel along x and y.
    pub xy_scale: (f64, f64),
    pub z_factor: usize,
    /// Number of full-resolution slices that went in.
    pub source_depth: usize,
    pub alignment: AlignmentParams,
}

impl SubsampledVolume {
    pub fn dims(&self) -> [usize; 3] {
        self.volume.dims
    }
}

/// Per-output-sample weights for box resampling of one axis.
#[derive(Debug, Clone)]
struct AxisWeights {
    taps: Vec<(usize, Vec<f64>)>,
}

impl AxisWeights {
    /// Output sample `u` averages the input over `[u·s, (u+1)·s)`,
    /// `s = n_in / n_out`, weighting each input pixel by its overlap.
    fn new(n_in: usize, n_out: usize) -> Self {
        let s = n_in as f64 / n_out as f64;
        let taps = (0..n_out)
            .map(|u| {
                let lo = u as f64 * s;
                let hi = (u + 1) as f64 * s;
                let first = (lo.floor() as usize).min(n_in - 1);
                let last = ((hi.ceil() as usize).max(first + 1)).min(n_in);
                let w: Vec<f64> = (first..last)
                    .map(|i| {
                        let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                        overlap / s
                    })
                    .collect();
                (first, w)
            })
            .collect();
        Self { taps }
    }
}

/// Area-weighted resize of a whole image; works for both shrinking and growing.
pub fn resize_area(img: &Image2D<f64>, out_w: usize, out_h: usize) -> Image2D<f64> {
    Resizer::new(img.width, img.height, out_w, out_h).apply(img)
}

#[derive(Debug, Clone)]
struct Resizer {
    in_w: usize,
    in_h: usize,
    wx: AxisWeights,
    wy: AxisWeights,
}

impl Resizer {
    fn new(in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> Self {
        assert!(in_w > 0 && in_h > 0 && out_w > 0 && out_h > 0);
        Self {
            in_w,
            in_h,
            wx: AxisWeights::new(in_w, out_w),
            wy: AxisWeights::new(in_h, out_h),
        }
    }

    fn apply(&self, img: &Image2D<f64>) -> Image2D<f64> {
        assert_eq!((img.width, img.height), (self.in_w, self.in_h));
        let out_w = self.wx.taps.len();
        let out_h = self.wy.taps.len();
        // rows first: in_h × out_w
        let mut tmp = vec![0.0; self.in_h * out_w];
        for y in 0..self.in_h {
            let row = img.row(y);
            let dst = &mut tmp[y * out_w..(y + 1) * out_w];
            for (u, (first, w)) in self.wx.taps.iter().enumerate() {
                dst[u] = w.iter().zip(&row[*first..]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; out_w * out_h];
        for (v, (first, w)) in self.wy.taps.iter().enumerate() {
            let dst = &mut out[v * out_w..(v + 1) * out_w];
            for (k, wk) in w.iter().enumerate() {
                let src = &tmp[(first + k) * out_w..(first + k + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
        Image2D::from_vec(out_w, out_h, out)
    }
}

/// Streaming accumulator: feed aligned full-resolution slices bottom-up,
/// get the proxy volume at the end. Holds one accumulator slice.
#[derive(Debug)]
pub struct Subsampler {
    resizer: Resizer,
    out_w: usize,
    out_h: usize,
    z_factor: usize,
    acc: Vec<f64>,
    /// For each input row, the output rows it feeds and with what weight.
    row_taps: Vec<Vec<(usize, f64)>>,
    in_group: usize,
    pushed: usize,
    data: Vec<f64>,
}

impl Subsampler {
    pub fn new(in_w: usize, in_h: usize, out_w: usize, out_h: usize, z_factor: usize) -> Self {
        assert!(z_factor > 0);
        let resizer = Resizer::new(in_w, in_h, out_w, out_h);
        let mut row_taps = vec![Vec::new(); in_h];
        for (v, (first, w)) in resizer.wy.taps.iter().enumerate() {
            for (k, &wk) in w.iter().enumerate() {
                row_taps[first + k].push((v, wk));
            }
        }
        Self {
            resizer,
            row_taps,
            out_w,
            out_h,
            z_factor,
            acc: vec![0.0; out_w * out_h],
            in_group: 0,
            pushed: 0,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, slice: &Image2D<f64>) {
        assert_eq!((slice.width, slice.height), (self.resizer.in_w, self.resizer.in_h));
        self.push_rows(|y, buf| buf.copy_from_slice(slice.row(y)));
    }

    /// Pushes one slice supplied row by row: `row(y, buf)` fills input row
    /// `y` (bottom-up order is not required, rows are requested ascending).
    /// Only one input row is held at a time.
    pub fn push_rows(&mut self, mut row: impl FnMut(usize, &mut [f64])) {
        let (in_w, in_h) = (self.resizer.in_w, self.resizer.in_h);
        let out_w = self.out_w;
        let mut buf = vec![0.0; in_w];
        let mut xrow = vec![0.0; out_w];
        let mut small = vec![0.0; out_w * self.out_h];
        for y in 0..in_h {
            row(y, &mut buf);
            for (u, (first, w)) in self.resizer.wx.taps.iter().enumerate() {
                xrow[u] = w.iter().zip(&buf[*first..]).map(|(a, b)| a * b).sum();
            }
            for &(v, wk) in &self.row_taps[y] {
                let dst = &mut small[v * out_w..(v + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(&xrow) {
                    *d += wk * s;
                }
            }
        }
        for (a, s) in self.acc.iter_mut().zip(&small) {
            *a += s;
        }
        self.in_group += 1;
        self.pushed += 1;
        if self.in_group == self.z_factor {
            self.flush();
        }
    }

    /// Bytes of working buffers used by one push besides the output.
    pub fn push_bytes(&self) -> u64 {
        ((self.resizer.in_w + self.out_w + self.out_w * self.out_h) * 8) as u64
    }

    fn flush(&mut self) {
        let n = self.in_group as f64;
        self.data.extend(self.acc.iter().map(|a| a / n));
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        self.in_group = 0;
    }

    /// Reserves the output for `n` input slices so it never reallocates.
    pub fn reserve_slices(&mut self, n: usize) {
        let groups = (self.pushed + n).div_ceil(self.z_factor);
        let want = groups * self.out_w * self.out_h;
        self.data.reserve_exact(want.saturating_sub(self.data.len()));
    }

    pub fn pushed(&self) -> usize {
        self.pushed
    }

    /// The trailing partial group is averaged over the slices it actually has.
    pub fn finish(mut self) -> Volume3D<f64> {
        if self.in_group > 0 {
            self.flush();
        }
        let nz = self.data.len() / (self.out_w * self.out_h);
        Volume3D::from_vec([self.out_w, self.out_h, nz], self.data)
    }
}

/// Aligns every slice and reduces the stack to a
/// `225 × 225 × ⌈h/10⌉` proxy volume, one slice at a time.
pub fn subsample(
    stack: &SliceStack,
    params: &AlignmentParams,
) -> Result<SubsampledVolume, VolumeError> {
    subsample_with(stack, params, |_, _| {})
}

/// Like [`subsample`], reporting `(slices done, total)` after each slice.
pub fn subsample_with(
    stack: &SliceStack,
    params: &AlignmentParams,
    mut progress: impl FnMut(usize, usize),
) -> Result<SubsampledVolume, VolumeError> {
    params.validate(stack.width, stack.height)?;
    let (cw, ch) = params.cropped_dims();
    let mut sub = Subsampler::new(cw, ch, SUBSAMPLE_XY, SUBSAMPLE_XY, Z_FACTOR);
    let h = stack.depth();
    sub.reserve_slices(h);
    let cols = params.col_range.0..params.col_range.1;
    for k in 1..=h {
        let raw = stack.read_slice(k)?;
        let _charge = stack.tracker().charge(sub.push_bytes());
        sub.push_rows(|y, buf| {
            rotate_row_into(raw.image(), params.angle_deg, params.row_range.0 + y, cols.clone(), buf)
        });
        drop(raw);
        progress(k, h);
    }
    Ok(SubsampledVolume {
        volume: sub.finish(),
        xy_scale: (cw as f64 / SUBSAMPLE_XY as f64, ch as f64 / SUBSAMPLE_XY as f64),
        z_factor: Z_FACTOR,
        source_depth: h,
        alignment: *params,
    })
}

const MAGIC: &[u8; 8] = b"CTSUBV1\n";

#[derive(Serialize, Deserialize)]
struct SavedHeader {
    dims: [usize; 3],
    xy_scale: (f64, f64),
    z_factor: usize,
    source_depth: usize,
    alignment: AlignmentParams,
}

/// Binary form: magic, little-endian `u32` header length, JSON header,
/// then the voxels as little-endian `f64`.
pub fn save_subsampled(path: &Path, sv: &SubsampledVolume) -> Result<(), VolumeError> {
    let header = serde_json::to_vec(&SavedHeader {
        dims: sv.volume.dims,
        xy_scale: sv.xy_scale,
        z_factor: sv.z_factor,
        source_depth: sv.source_depth,
        alignment: sv.alignment,
    })
    .expect("header serializes");
    let file = File::create(path).map_err(VolumeError::io(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &sv.volume.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(VolumeError::io(path))
}

pub fn load_subsampled(path: &Path) -> Result<SubsampledVolume, VolumeError> {
    let corrupt = |reason: &str| VolumeError::Corrupt { file: path.to_path_buf(), reason: reason.into() };
    let file = File::open(path).map_err(VolumeError::io(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(VolumeError::io(path))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(VolumeError::io(path))?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header).map_err(VolumeError::io(path))?;
    let header: SavedHeader = serde_json::from_slice(&header).map_err(|e| corrupt(&e.to_string()))?;
    let n: usize = header.dims.iter().product();
    // decoded in place: the payload is never held twice
    let mut data = Vec::with_capacity(n);
    let mut word = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut word).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => corrupt("voxel payload is too short"),
            _ => VolumeError::io(path)(e),
        })?;
        data.push(f64::from_le_bytes(word));
    }
    if r.read(&mut word).map_err(VolumeError::io(path))? != 0 {
        return Err(corrupt("voxel payload is too long"));
    }
    Ok(SubsampledVolume {
        volume: Volume3D::from_vec(header.dims, data),
        xy_scale: header.xy_scale,
        z_factor: header.z_factor,
        source_depth: header.source_depth,
        alignment: header.alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 2-D overlap integral, independent of the separable weights.
    fn brute_resize(img: &Image2D<f64>, ow: usize, oh: usize) -> Image2D<f64> {
        let sx = img.width as f64 / ow as f64;
        let sy = img.height as f64 / oh as f64;
        Image2D::from_fn(ow, oh, |u, v| {
            let (x0, x1) = (u as f64 * sx, (u + 1) as f64 * sx);
            let (y0, y1) = (v as f64 * sy, (v + 1) as f64 * sy);
            let mut total = 0.0;
            for y in 0..img.height {
                let oy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                if oy == 0.0 {
                    continue;
                }
                for x in 0..img.width {
                    let ox = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                    total += ox * oy * img.get(x, y);
                }
            }
            total / (sx * sy)
        })
    }

    fn pseudo(w: usize, h: usize, seed: u64) -> Image2D<f64> {
        Image2D::from_fn(w, h, |x, y| {
            let v = (x as u64 * 2654435761 + y as u64 * 40503 + seed * 977) % 65536;
            v as f64
        })
    }

    #[test]
    fn matches_brute_force_integral() {
        for (w, h, ow, oh) in [(450, 450, 225, 225), (500, 377, 225, 225), (31, 17, 7, 5), (5, 3, 9, 8)] {
            let img = pseudo(w, h, 3);
            let a = resize_area(&img, ow, oh);
            let b = brute_resize(&img, ow, oh);
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p - q).abs() <= 1e-6, "{w}x{h}->{ow}x{oh}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image2D::from_vec(301, 299, vec![1234.5; 301 * 299]);
        let out = resize_area(&img, 225, 225);
        assert!(out.data.iter().all(|v| (v - 1234.5).abs() < 1e-9));
    }

    #[test]
    fn depth_groups_of_ten_with_partial_tail() {
        let mut sub = Subsampler::new(4, 4, 2, 2, Z_FACTOR);
        for k in 0..3813 {
            sub.push(&Image2D::from_vec(4, 4, vec![k as f64; 16]));
        }
        let vol = sub.finish();
        assert_eq!(vol.dims, [2, 2, 382]);
        // group j averages slices 10j..10j+9
        assert_eq!(vol.get(0, 0, 0), 4.5);
        assert_eq!(vol.get(1, 1, 100), 1004.5);
        // tail is 3810, 3811, 3812
        assert_eq!(vol.get(0, 1, 381), 3811.0);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sv = SubsampledVolume {
            volume: Volume3D::from_fn([3, 2, 4], |x, y, z| x as f64 * 0.5 + y as f64 * 10.0 - z as f64),
            xy_scale: (2.0, 2.5),
            z_factor: 10,
            source_depth: 37,
            alignment: AlignmentParams { angle_deg: 1.25, row_range: (1, 6), col_range: (0, 6) },
        };
        let p = dir.path().join("sub.bin");
        save_subsampled(&p, &sv).unwrap();
        assert_eq!(load_subsampled(&p).unwrap(), sv);
    }

    #[test]
    fn wrong_payload_length_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let sv = SubsampledVolume {
            volume: Volume3D::from_fn([2, 2, 2], |x, y, z| (x + y + z) as f64),
            xy_scale: (1.0, 1.0),
            z_factor: 10,
            source_depth: 11,
            alignment: AlignmentParams::identity(2, 2),
        };
        let p = dir.path().join("sub.bin");
        save_subsampled(&p, &sv).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_subsampled(&p), Err(VolumeError::Corrupt { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        std::fs::write(&p, longer).unwrap();
        assert!(matches!(load_subsampled(&p), Err(VolumeError::Corrupt { .. })));
    }

    #[test]
    fn reserved_output_never_grows() {
        let mut sub = Subsampler::new(4, 4, 2, 2, Z_FACTOR);
        sub.reserve_slices(23);
        let cap = sub.data.capacity();
        assert_eq!(cap, 3 * 4);
        for k in 0..23 {
            sub.push(&Image2D::from_vec(4, 4, vec![k as f64; 16]));
        }
        assert_eq!(sub.data.capacity(), cap);
        assert_eq!(sub.finish().dims, [2, 2, 3]);
    }

    proptest! {
        #[test]
        fn resize_is_shift_equivariant(w in 1usize..40, h in 1usize..40, ow in 1usize..20, oh in 1usize..20,
                                       c in 0.0f64..30000.0, seed in 0u64..1000) {
            let img = pseudo(w, h, seed);
            let shifted = img.map(|v| v + c);
            let a = resize_area(&img, ow, oh);
            let b = resize_area(&shifted, ow, oh);
            for (p, q) in a.data.iter().zip(&b.data) {
                prop_assert!((p + c - q).abs() < 1e-6);
            }
        }

        #[test]
        fn resize_preserves_mean(w in 1usize..40, h in 1usize..40, ow in 1usize..20, oh in 1usize..20, seed in 0u64..1000) {
            let img = pseudo(w, h, seed);
            let out = resize_area(&img, ow, oh);
            let m_in = img.data.iter().sum::<f64>() / img.data.len() as f64;
            let m_out = out.data.iter().sum::<f64>() / out.data.len() as f64;
            prop_assert!((m_in - m_out).abs() < 1e-6 * m_in.abs().max(1.0));
        }
    }
}
