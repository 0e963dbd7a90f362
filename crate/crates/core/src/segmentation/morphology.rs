use crate::raster::Mask;

// `all = true` keeps a pixel when every in-raster neighbour is set
// (erosion), otherwise when any is (dilation).
fn neighbourhood(mask: &Mask, all: bool) -> Mask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let mut it = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
            .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
            .map(|(nx, ny)| mask.get(nx as u32, ny as u32));
        if all {
            it.all(|b| b)
        } else {
            it.any(|b| b)
        }
    })
}

/// Erosion by a 3×3 square; pixels outside the raster are ignored.
pub fn erode(mask: &Mask) -> Mask {
    neighbourhood(mask, true)
}

/// Dilation by a 3×3 square; pixels outside the raster are ignored.
pub fn dilate(mask: &Mask) -> Mask {
    neighbourhood(mask, false)
}

/// `n_erode` erosions followed by `n_dilate` dilations.
pub fn open(mask: &Mask, n_erode: usize, n_dilate: usize) -> Mask {
    let mut m = mask.clone();
    for _ in 0..n_erode {
        m = erode(&m);
    }
    for _ in 0..n_dilate {
        m = dilate(&m);
    }
    m
}
