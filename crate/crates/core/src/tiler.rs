//! Splitting images into fixed-size detector blocks and mapping block
//! detections back to ROI coordinates.
//!
//! Tiles advance by `block - overlap`. The last tile on each axis is clamped
//! to the image edge, so it may overlap its neighbour more than requested.
//! Images smaller than one block get a single tile that is zero-padded on the
//! right/bottom.

use serde::{Deserialize, Serialize};

use crate::geo::PixelBox;

pub const DEFAULT_BLOCK: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub block: usize,
    pub overlap: usize,
    pub scale: f64,
}

impl TileSpec {
    pub fn new(block: usize, overlap: usize, scale: f64) -> Option<Self> {
        (block > 0 && overlap < block && scale.is_finite() && scale > 0.0).then_some(Self { block, overlap, scale })
    }

    pub fn stride(&self) -> usize {
        self.block - self.overlap
    }
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            block: DEFAULT_BLOCK,
            overlap: 0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub x: usize,
    pub y: usize,
    /// The block extends past the image and is zero-padded.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub block: usize,
    /// Row-major: all tiles of the first row, then the next row.
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Offsets along one axis. `block` must be positive and `overlap < block`.
pub fn plan_axis(dim: usize, block: usize, overlap: usize) -> Vec<usize> {
    assert!(block > 0 && overlap < block, "invalid block {block} / overlap {overlap}");
    let stride = block - overlap;
    let mut offsets: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + block < dim).collect();
    let last = dim.saturating_sub(block);
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets.sort_unstable();
    offsets.dedup();
    offsets
}

/// Tile grid over an image that has already been resized by `spec.scale`.
pub fn plan_tiles(width: usize, height: usize, spec: &TileSpec) -> TilePlan {
    let xs = plan_axis(width, spec.block, spec.overlap);
    let ys = plan_axis(height, spec.block, spec.overlap);
    let tiles = ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| Tile {
                x,
                y,
                padded: x + spec.block > width || y + spec.block > height,
            })
        })
        .collect();
    TilePlan {
        width,
        height,
        block: spec.block,
        tiles,
    }
}

/// Tile coordinates to original ROI coordinates: `(c + offset) / scale`.
pub fn map_to_roi(b: &PixelBox, offset: (usize, usize), scale: f64) -> PixelBox {
    let (ox, oy) = (offset.0 as f64, offset.1 as f64);
    PixelBox {
        x1: (b.x1 + ox) / scale,
        y1: (b.y1 + oy) / scale,
        x2: (b.x2 + ox) / scale,
        y2: (b.y2 + oy) / scale,
    }
}

/// Inverse of [`map_to_roi`].
pub fn map_to_tile(b: &PixelBox, offset: (usize, usize), scale: f64) -> PixelBox {
    let (ox, oy) = (offset.0 as f64, offset.1 as f64);
    PixelBox {
        x1: b.x1 * scale - ox,
        y1: b.y1 * scale - oy,
        x2: b.x2 * scale - ox,
        y2: b.y2 * scale - oy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn axis_fixtures() {
        assert_eq!(plan_axis(650, 300, 0), vec![0, 300, 350]);
        assert_eq!(plan_axis(650, 300, 100), vec![0, 200, 350]);
        assert_eq!(plan_axis(300, 300, 0), vec![0]);
        assert_eq!(plan_axis(300, 300, 100), vec![0]);
        assert_eq!(plan_axis(600, 300, 0), vec![0, 300]);
        assert_eq!(plan_axis(1, 300, 0), vec![0]);
        assert_eq!(plan_axis(301, 300, 0), vec![0, 1]);
    }

    #[test]
    fn tile_fixtures() {
        let spec = TileSpec::default();
        let plan = plan_tiles(650, 300, &spec);
        assert_eq!(plan.len(), 3);
        assert!(plan.tiles.iter().all(|t| t.y == 0 && !t.padded));

        let plan = plan_tiles(250, 250, &spec);
        assert_eq!(plan.tiles, vec![Tile { x: 0, y: 0, padded: true }]);

        let plan = plan_tiles(300, 300, &spec);
        assert_eq!(plan.tiles, vec![Tile { x: 0, y: 0, padded: false }]);

        let plan = plan_tiles(650, 650, &TileSpec::new(300, 100, 1.0).unwrap());
        assert_eq!(plan.len(), 9);
        assert_eq!(plan.tiles[1], Tile { x: 200, y: 0, padded: false });
        assert_eq!(plan.tiles[3], Tile { x: 0, y: 200, padded: false });
    }

    #[test]
    fn spec_validation() {
        assert!(TileSpec::new(300, 300, 1.0).is_none());
        assert!(TileSpec::new(300, 0, 0.0).is_none());
        assert!(TileSpec::new(0, 0, 1.0).is_none());
        assert_eq!(TileSpec::new(300, 100, 1.3).unwrap().stride(), 200);
    }

    #[test]
    fn mapping_examples() {
        let b = PixelBox::new(10.0, 20.0, 50.0, 60.0).unwrap();
        assert_eq!(map_to_roi(&b, (0, 0), 1.0), b);
        let m = map_to_roi(&b, (300, 0), 1.3);
        assert_abs_diff_eq!(m.x1, 238.4615, epsilon = 1e-4);
        assert_abs_diff_eq!(m.y1, 15.3846, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x2, 269.2308, epsilon = 1e-4);
        assert_abs_diff_eq!(m.y2, 46.1538, epsilon = 1e-4);
        let back = map_to_tile(&m, (300, 0), 1.3);
        for (p, q) in back.coords().iter().zip(b.coords()) {
            assert_abs_diff_eq!(*p, q, epsilon = 1e-9);
        }
    }
}
