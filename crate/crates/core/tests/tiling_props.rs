mod common;

use proptest::prelude::*;

use common::axis_cover;
use roicount::tiler::{map_to_roi, map_to_tile, plan_axis, plan_tiles, TileSpec};
use roicount::PixelBox;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_pixel_is_covered(dim in 1usize..3000, block in 1usize..700, frac in 0.0f64..1.0) {
        let overlap = ((block as f64) * frac) as usize % block;
        let offsets = plan_axis(dim, block, overlap);
        prop_assert!(axis_cover(dim, block, &offsets).iter().all(|&c| c > 0));
        prop_assert_eq!(offsets[0], 0);
        prop_assert_eq!(*offsets.last().unwrap(), dim.saturating_sub(block));
    }

    #[test]
    fn consecutive_tiles_share_at_least_the_overlap(dim in 1usize..3000, block in 2usize..700, frac in 0.0f64..1.0) {
        let overlap = ((block as f64) * frac) as usize % block;
        for w in plan_axis(dim, block, overlap).windows(2) {
            prop_assert!(w[1] - w[0] <= block - overlap);
        }
    }

    #[test]
    fn padded_flag_marks_tiles_past_the_edge(w in 1usize..1200, h in 1usize..1200, block in 50usize..400) {
        let plan = plan_tiles(w, h, &TileSpec::new(block, 0, 1.0).unwrap());
        for t in &plan.tiles {
            prop_assert_eq!(t.padded, t.x + block > w || t.y + block > h);
        }
        prop_assert_eq!(plan.tiles.iter().any(|t| t.padded), w < block || h < block);
    }

    #[test]
    fn coordinate_mapping_round_trips(
        x in 0.0f64..300.0, y in 0.0f64..300.0, bw in 0.5f64..50.0, bh in 0.5f64..50.0,
        ox in 0usize..5000, oy in 0usize..5000, scale in 0.25f64..4.0,
    ) {
        let b = PixelBox::new(x, y, x + bw, y + bh).unwrap();
        let back = map_to_tile(&map_to_roi(&b, (ox, oy), scale), (ox, oy), scale);
        for (p, q) in b.coords().iter().zip(back.coords()) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }
}

#[test]
fn short_axis_gets_one_padded_tile() {
    assert_eq!(plan_axis(120, 300, 0), vec![0]);
    assert_eq!(plan_axis(300, 300, 100), vec![0]);
    let plan = plan_tiles(120, 640, &TileSpec::new(300, 0, 1.0).unwrap());
    assert_eq!(plan.len(), 3);
    assert!(plan.tiles.iter().all(|t| t.padded));
}

#[test]
fn mapping_example() {
    // 1.3x pass, tile at (300, 0)
    let b = PixelBox::new(13.0, 26.0, 39.0, 52.0).unwrap();
    let m = map_to_roi(&b, (300, 0), 1.3);
    let want = [313.0 / 1.3, 20.0, 339.0 / 1.3, 40.0];
    for (p, q) in m.coords().iter().zip(want) {
        assert!((p - q).abs() < 1e-9);
    }
}
