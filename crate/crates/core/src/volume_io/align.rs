use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Image2D, VolumeError};

/// Manual alignment of a scan's overhead view with its layout CSV.
///
/// The slice is first rotated by `angle_deg` (counterclockwise as displayed,
/// about the image center, same output size, zero fill) and then cropped to
/// `row_range × col_range`, both half-open pixel ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub angle_deg: f64,
    pub row_range: (usize, usize),
    pub col_range: (usize, usize),
}

impl AlignmentParams {
    /// No rotation, full frame.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            angle_deg: 0.0,
            row_range: (0, height),
            col_range: (0, width),
        }
    }

    /// Parses the five-value text form `angle row_start row_stop col_start col_stop`.
    pub fn parse(text: &str) -> Result<Self, VolumeError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(VolumeError::InvalidAlignment(format!(
                "expected 5 values, found {}",
                fields.len()
            )));
        }
        let angle_deg: f64 = fields[0]
            .parse()
            .map_err(|_| VolumeError::InvalidAlignment(format!("bad angle {:?}", fields[0])))?;
        if !angle_deg.is_finite() {
            return Err(VolumeError::InvalidAlignment("angle must be finite".into()));
        }
        let mut idx = [0usize; 4];
        for (slot, f) in idx.iter_mut().zip(&fields[1..]) {
            *slot = parse_index(f)?;
        }
        let params = Self {
            angle_deg,
            row_range: (idx[0], idx[1]),
            col_range: (idx[2], idx[3]),
        };
        if params.row_range.0 >= params.row_range.1 || params.col_range.0 >= params.col_range.1 {
            return Err(VolumeError::InvalidAlignment("ranges must have start < stop".into()));
        }
        Ok(params)
    }

    pub fn to_text(&self) -> String {
        format!(
            "{} {} {} {} {}\n",
            self.angle_deg, self.row_range.0, self.row_range.1, self.col_range.0, self.col_range.1
        )
    }

    /// Checks the crop against a `width × height` slice.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), VolumeError> {
        check_range("row range", self.row_range, height)?;
        check_range("column range", self.col_range, width)
    }

    /// `(width, height)` after cropping.
    pub fn cropped_dims(&self) -> (usize, usize) {
        (
            self.col_range.1 - self.col_range.0,
            self.row_range.1 - self.row_range.0,
        )
    }
}

fn parse_index(s: &str) -> Result<usize, VolumeError> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    // tolerate "120.0" written by other tools
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
        _ => Err(VolumeError::InvalidAlignment(format!("bad index {s:?}"))),
    }
}

fn check_range(what: &'static str, range: (usize, usize), limit: usize) -> Result<(), VolumeError> {
    if range.0 < range.1 && range.1 <= limit {
        Ok(())
    } else {
        Err(VolumeError::RangeOutOfBounds { what, range, limit })
    }
}

/// Where content at `p` ends up after rotating by `angle_deg` about `center`.
///
/// Coordinates are continuous with `y` pointing down; pixel `i` covers
/// `[i, i+1)`. Positive angles turn counterclockwise as displayed.
pub fn rotate_point(p: (f64, f64), center: (f64, f64), angle_deg: f64) -> (f64, f64) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    (center.0 + dx * c + dy * s, center.1 - dx * s + dy * c)
}

/// Bilinear rotation about the image center, evaluated only on the output
/// window `rows × cols`; samples falling outside the source read as 0.
pub fn rotate_region<T: Copy + Into<f64>>(
    img: &Image2D<T>,
    angle_deg: f64,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Image2D<f64> {
    let (w, h) = (cols.len(), rows.len());
    let mut out = vec![0.0; w * h];
    if w > 0 {
        for (y, dst) in rows.zip(out.chunks_exact_mut(w)) {
            rotate_row_into(img, angle_deg, y, cols.clone(), dst);
        }
    }
    Image2D::from_vec(w, h, out)
}

/// One output row `y` of [`rotate_region`], written into `out` (length
/// `cols.len()`).
pub fn rotate_row_into<T: Copy + Into<f64>>(
    img: &Image2D<T>,
    angle_deg: f64,
    y: usize,
    cols: Range<usize>,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), cols.len());
    if angle_deg == 0.0 {
        for (x, o) in cols.zip(out.iter_mut()) {
            *o = if x < img.width && y < img.height { img.get(x, y).into() } else { 0.0 };
        }
        return;
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (img.width as f64 / 2.0, img.height as f64 / 2.0);
    let dy = y as f64 + 0.5 - cy;
    for (x, o) in cols.zip(out.iter_mut()) {
        let dx = x as f64 + 0.5 - cx;
        // inverse of rotate_point
        let sx = cx + dx * c - dy * s - 0.5;
        let sy = cy + dx * s + dy * c - 0.5;
        *o = bilinear(img, sx, sy);
    }
}

#[inline]
fn bilinear<T: Copy + Into<f64>>(img: &Image2D<T>, sx: f64, sy: f64) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let (w, h) = (img.width as isize, img.height as isize);
    if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
        return 0.0;
    }
    let at = |x: isize, y: isize| -> f64 {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.data[(y * w + x) as usize].into()
        } else {
            0.0
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Full-frame rotation.
pub fn rotate_image<T: Copy + Into<f64>>(img: &Image2D<T>, angle_deg: f64) -> Image2D<f64> {
    rotate_region(img, angle_deg, 0..img.height, 0..img.width)
}

/// Applies an alignment: rotate, then crop.
pub fn rotate_crop<T: Copy + Into<f64>>(
    img: &Image2D<T>,
    params: &AlignmentParams,
) -> Result<Image2D<f64>, VolumeError> {
    params.validate(img.width, img.height)?;
    Ok(rotate_region(
        img,
        params.angle_deg,
        params.row_range.0..params.row_range.1,
        params.col_range.0..params.col_range.1,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image2D<u16> {
        Image2D::from_fn(w, h, |x, y| (x * 13 + y * 101 + (x * y) % 7) as u16)
    }

    #[test]
    fn zero_angle_full_range_is_identity() {
        let img = ramp(17, 11);
        let out = rotate_crop(&img, &AlignmentParams::identity(17, 11)).unwrap();
        assert_eq!(out, img.to_f64());
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let n = 16;
        let img = ramp(n, n);
        let out = rotate_crop(
            &img,
            &AlignmentParams { angle_deg: 90.0, row_range: (0, n), col_range: (0, n) },
        )
        .unwrap();
        // counterclockwise on screen: the right edge moves to the top
        for y in 0..n {
            for x in 0..n {
                let expect = img.get(n - 1 - y, x) as f64;
                assert!((out.get(x, y) - expect).abs() <= 1.0, "({x},{y})");
            }
        }
    }

    #[test]
    fn crop_dimensions_follow_ranges() {
        let img = Image2D::<u16>::new(2952, 2971);
        let params = AlignmentParams { angle_deg: 1.5, row_range: (230, 2730), col_range: (226, 2726) };
        let out = rotate_crop(&img, &params).unwrap();
        assert_eq!((out.width, out.height), (2500, 2500));
        assert_eq!(params.cropped_dims(), (2500, 2500));
    }

    #[test]
    fn out_of_frame_crop_rejected() {
        let img = ramp(10, 10);
        let bad = AlignmentParams { angle_deg: 0.0, row_range: (0, 11), col_range: (0, 10) };
        assert!(matches!(rotate_crop(&img, &bad), Err(VolumeError::RangeOutOfBounds { .. })));
    }

    #[test]
    fn text_round_trip() {
        let p = AlignmentParams::parse("  -3.7 40 560\n 38 562 ").unwrap();
        assert_eq!(p, AlignmentParams { angle_deg: -3.7, row_range: (40, 560), col_range: (38, 562) });
        assert_eq!(AlignmentParams::parse(&p.to_text()).unwrap(), p);
        assert!(AlignmentParams::parse("1 2 3 4").is_err());
        assert!(AlignmentParams::parse("1 5 3 4 9").is_err());
    }

    #[test]
    fn rotate_point_inverts_rotation() {
        let c = (50.0, 40.0);
        let p = (71.25, 12.5);
        let q = rotate_point(p, c, 13.0);
        let back = rotate_point(q, c, -13.0);
        assert!((back.0 - p.0).abs() < 1e-9 && (back.1 - p.1).abs() < 1e-9);
        // a point right of center rotates upward for positive angles
        let up = rotate_point((60.0, 40.0), c, 90.0);
        assert!((up.0 - 50.0).abs() < 1e-9 && (up.1 - 30.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_image_follows_rotate_point() {
        // a single bright pixel lands where rotate_point sends its center
        let mut img = Image2D::<f64>::new(41, 41);
        img.set(30, 20, 1000.0);
        let out = rotate_image(&img, 30.0);
        let (tx, ty) = rotate_point((30.5, 20.5), (20.5, 20.5), 30.0);
        let mut best = (0, 0);
        for y in 0..41 {
            for x in 0..41 {
                if out.get(x, y) > out.get(best.0, best.1) {
                    best = (x, y);
                }
            }
        }
        assert!((best.0 as f64 + 0.5 - tx).abs() <= 1.0);
        assert!((best.1 as f64 + 0.5 - ty).abs() <= 1.0);
    }
}
