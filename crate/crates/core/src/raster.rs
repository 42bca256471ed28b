//! Dense row-major rasters used for images, depth maps, masks and count maps.

/// A `width × height` grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// RGB image with channels in `[0, 1]`.
pub type Image = Raster<[f32; 3]>;

/// Depth raster in scene units. A value is a valid depth iff it is finite and `> 0`;
/// invalid pixels are stored as `0.0`.
pub type DepthMap = Raster<f32>;

pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Wraps `data`, returning `None` when its length is not `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.width.max(1))
    }
}

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

impl DepthMap {
    pub fn valid_mask(&self) -> Mask {
        self.map(|&d| is_valid_depth(d))
    }

    pub fn valid_count(&self) -> usize {
        self.as_slice().iter().filter(|&&d| is_valid_depth(d)).count()
    }

    /// Largest valid depth, or `None` when no pixel is valid.
    pub fn max_valid(&self) -> Option<f32> {
        self.as_slice()
            .iter()
            .copied()
            .filter(|&d| is_valid_depth(d))
            .reduce(f32::max)
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.as_slice().iter().filter(|&&b| b).count()
    }
}

/// Quantizes a `[0, 1]` channel to 8 bits (round half up, clamped).
#[inline]
pub fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[inline]
pub fn from_u8(c: u8) -> f32 {
    c as f32 / 255.0
}
