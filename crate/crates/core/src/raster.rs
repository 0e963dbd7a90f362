use image::{GrayImage, Luma};

/// Binary raster, row-major, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Number of pixels strictly between the boxes along the more separated
    /// axis; 0 when they touch or overlap.
    pub fn gap(&self, other: &BBox) -> u32 {
        let gx = axis_gap(self.x0, self.x1, other.x0, other.x1);
        let gy = axis_gap(self.y0, self.y1, other.y0, other.y1);
        gx.max(gy)
    }
}

fn axis_gap(a0: u32, a1: u32, b0: u32, b1: u32) -> u32 {
    if b0 > a1 {
        b0 - a1 - 1
    } else if a0 > b1 {
        a0 - b1 - 1
    } else {
        0
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Nonzero pixels are foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] != 0)
    }

    /// Foreground as 255, background as 0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Like [`Mask::get`] but `false` outside the raster.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[(y as usize) * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.pixels();
        let (x, y) = it.next()?;
        let mut b = BBox { x0: x, y0: y, x1: x, y1: y };
        for (x, y) in it {
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y1 = b.y1.max(y);
        }
        Some(b)
    }

    /// Copies the `bbox` window into a new mask.
    pub fn crop(&self, bbox: &BBox) -> Mask {
        Mask::from_fn(bbox.width(), bbox.height(), |x, y| self.get(bbox.x0 + x, bbox.y0 + y))
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale(&self, factor: u32) -> Mask {
        Mask::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// Copy shifted by `(dx, dy)` into a `width`×`height` canvas.
    pub fn translate(&self, dx: i64, dy: i64, width: u32, height: u32) -> Mask {
        Mask::from_fn(width, height, |x, y| self.get_signed(x as i64 - dx, y as i64 - dy))
    }
}
