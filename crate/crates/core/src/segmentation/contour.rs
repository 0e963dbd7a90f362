//! Connected components and outer-border following.

use std::collections::VecDeque;

use crate::raster::{BBox, Mask};

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    /// Component pixels only, cropped to `bbox`.
    pub mask: Mask,
    /// Outer border in absolute coordinates, counter-clockwise on screen,
    /// starting from the component's first pixel in raster order.
    pub contour: Vec<(u32, u32)>,
    pub area: usize,
}

// Clockwise on screen (y grows downward), starting east.
const RING: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn ring_index(dx: i64, dy: i64) -> usize {
    RING.iter().position(|&d| d == (dx, dy)).expect("unit neighbour offset")
}

/// Follows the outer border of the component containing `start`, which must
/// be its first foreground pixel in raster order (so its west neighbour is
/// background). Returns the border pixels in traversal order.
pub fn trace_outer_border(mask: &Mask, start: (u32, u32)) -> Vec<(u32, u32)> {
    let p0 = (start.0 as i64, start.1 as i64);
    let at = |p: (i64, i64), k: usize| (p.0 + RING[k].0, p.1 + RING[k].1);

    // Clockwise search from the west neighbour for the first foreground pixel.
    let west = ring_index(-1, 0);
    let Some(p1) = (0..8)
        .map(|i| at(p0, (west + i) % 8))
        .find(|&q| mask.get_signed(q.0, q.1))
    else {
        return vec![start];
    };

    let mut border = Vec::new();
    let (mut prev, mut cur) = (p1, p0);
    loop {
        // Counter-clockwise from the element after `prev` around `cur`.
        let from = ring_index(prev.0 - cur.0, prev.1 - cur.1);
        let next = (1..=8)
            .map(|i| at(cur, (from + 8 - i) % 8))
            .find(|&q| mask.get_signed(q.0, q.1))
            .expect("cur has at least one foreground neighbour");
        border.push((cur.0 as u32, cur.1 as u32));
        if next == p0 && cur == p1 {
            break;
        }
        prev = cur;
        cur = next;
    }
    border
}

/// Length of a closed 8-connected chain: unit axis steps, √2 diagonals.
pub fn contour_length(contour: &[(u32, u32)]) -> f64 {
    if contour.len() < 2 {
        return 0.0;
    }
    let step = |a: (u32, u32), b: (u32, u32)| {
        if a.0 != b.0 && a.1 != b.1 {
            std::f64::consts::SQRT_2
        } else if a == b {
            0.0
        } else {
            1.0
        }
    };
    let closing = step(contour[contour.len() - 1], contour[0]);
    contour.windows(2).map(|w| step(w[0], w[1])).sum::<f64>() + closing
}

/// 8-connected components in raster order of their first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; (w as usize) * (h as usize)];
    let idx = |x: u32, y: u32| (y as usize) * (w as usize) + x as usize;
    let mut out = Vec::new();
    for (sx, sy) in mask.pixels() {
        if seen[idx(sx, sy)] {
            continue;
        }
        seen[idx(sx, sy)] = true;
        let mut pixels = Vec::new();
        let mut queue = VecDeque::from([(sx, sy)]);
        while let Some((x, y)) = queue.pop_front() {
            pixels.push((x, y));
            for &(dx, dy) in &RING {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if mask.get_signed(nx, ny) && !seen[idx(nx as u32, ny as u32)] {
                    seen[idx(nx as u32, ny as u32)] = true;
                    queue.push_back((nx as u32, ny as u32));
                }
            }
        }
        let mut bbox = BBox { x0: sx, y0: sy, x1: sx, y1: sy };
        for &(x, y) in &pixels {
            bbox.x0 = bbox.x0.min(x);
            bbox.x1 = bbox.x1.max(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.y1 = bbox.y1.max(y);
        }
        let mut local = Mask::new(bbox.width(), bbox.height());
        for &(x, y) in &pixels {
            local.set(x - bbox.x0, y - bbox.y0, true);
        }
        let contour = trace_outer_border(&local, (sx - bbox.x0, sy - bbox.y0))
            .into_iter()
            .map(|(x, y)| (x + bbox.x0, y + bbox.y0))
            .collect();
        out.push(Component {
            bbox,
            mask: local,
            contour,
            area: pixels.len(),
        });
    }
    out
}
