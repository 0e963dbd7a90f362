//! sRGB to the HSV / CIE Luv / CIE Lab coordinates used by the pixel model.
//! All CIE conversions assume the D65 reference white.

/// Pixel descriptor `[H, S, u, v, a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFeature {
    /// Hue in degrees, `[0, 360)`.
    pub h: f64,
    /// HSV saturation, `[0, 1]`.
    pub s: f64,
    pub u: f64,
    pub v: f64,
    pub a: f64,
    pub b: f64,
}

impl PixelFeature {
    pub fn to_array(&self) -> [f64; 6] {
        [self.h, self.s, self.u, self.v, self.a, self.b]
    }
}

const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Hue (degrees) and saturation of an sRGB triple.
pub fn rgb_to_hs(r: u8, g: u8, b: u8) -> (f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h.rem_euclid(360.0), s)
}

/// CIE XYZ (D65, Y of white = 1).
pub fn rgb_to_xyz(r: u8, g: u8, b: u8) -> [f64; 3] {
    let (r, g, b) = (linearize(r), linearize(g), linearize(b));
    [
        0.4124564 * r + 0.3575761 * g + 0.1804375 * b,
        0.2126729 * r + 0.7151522 * g + 0.0721750 * b,
        0.0193339 * r + 0.1191920 * g + 0.9503041 * b,
    ]
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lightness(y: f64) -> f64 {
    let yr = y / WHITE[1];
    if yr > EPSILON {
        116.0 * yr.cbrt() - 16.0
    } else {
        KAPPA * yr
    }
}

/// CIE L*a*b*.
pub fn xyz_to_lab([x, y, z]: [f64; 3]) -> [f64; 3] {
    let (fx, fy, fz) = (lab_f(x / WHITE[0]), lab_f(y / WHITE[1]), lab_f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn chromaticity([x, y, z]: [f64; 3]) -> (f64, f64) {
    let d = x + 15.0 * y + 3.0 * z;
    if d == 0.0 {
        (0.0, 0.0)
    } else {
        (4.0 * x / d, 9.0 * y / d)
    }
}

/// CIE L*u*v*.
pub fn xyz_to_luv(xyz: [f64; 3]) -> [f64; 3] {
    let l = lightness(xyz[1]);
    if xyz.iter().sum::<f64>() == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let (up, vp) = chromaticity(xyz);
    let (un, vn) = chromaticity(WHITE);
    [l, 13.0 * l * (up - un), 13.0 * l * (vp - vn)]
}

pub fn rgb_to_pixel_feature(r: u8, g: u8, b: u8) -> PixelFeature {
    let (h, s) = rgb_to_hs(r, g, b);
    let xyz = rgb_to_xyz(r, g, b);
    let [_, u, v] = xyz_to_luv(xyz);
    let [_, a, lb] = xyz_to_lab(xyz);
    PixelFeature { h, s, u, v, a, b: lb }
}
