use serde::{Deserialize, Serialize};

/// Row-major 2-D image; `x` indexes columns, `y` rows (top row first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image2D<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Image2D<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }
}

impl<T: Copy> Image2D<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image2D<U> {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Half-turn about the image center.
    pub fn rotate180(&self) -> Self {
        let mut data = self.data.clone();
        data.reverse();
        Self { width: self.width, height: self.height, data }
    }
}

impl<T: Copy + Into<f64>> Image2D<T> {
    pub fn to_f64(&self) -> Image2D<f64> {
        self.map(Into::into)
    }
}

/// Dense 3-D array, `x` fastest, then `y`, then `z` (one z-slice after another).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume3D<T> {
    /// `[nx, ny, nz]`.
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Copy + Default> Volume3D<T> {
    pub fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![T::default(); dims[0] * dims[1] * dims[2]],
        }
    }
}

impl<T: Copy> Volume3D<T> {
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2], "volume buffer size");
        Self { dims, data }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// The `z`-th xy-plane.
    pub fn z_slice(&self, z: usize) -> &[T] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn z_image(&self, z: usize) -> Image2D<T> {
        Image2D::from_vec(self.dims[0], self.dims[1], self.z_slice(z).to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
