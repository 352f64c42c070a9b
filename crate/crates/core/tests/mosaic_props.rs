use ndarray::Array2;
use proptest::prelude::*;

use turbdip::mosaic::{grid_for_block_size, shuffle_block, unshuffle_mosaic, MosaicGrid};

fn block() -> impl Strategy<Value = (MosaicGrid, Vec<Array2<i32>>)> {
    (1usize..=4, 1usize..=4, 1usize..=12, 1usize..=12).prop_flat_map(|(gy, gx, h, w)| {
        let frame = proptest::collection::vec(any::<i32>(), h * w)
            .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap());
        (
            Just(MosaicGrid { g_y: gy, g_x: gx }),
            proptest::collection::vec(frame, gy * gx),
        )
    })
}

proptest! {
    #[test]
    fn unshuffle_inverts_shuffle((grid, frames) in block()) {
        let m = shuffle_block(&frames, grid).unwrap();
        prop_assert_eq!(unshuffle_mosaic(&m).unwrap(), frames);
    }

    #[test]
    fn values_are_preserved((grid, frames) in block()) {
        let m = shuffle_block(&frames, grid).unwrap();
        let mut a: Vec<i32> = frames.iter().flat_map(|f| f.iter().copied()).collect();
        let mut b: Vec<i32> = m.data.iter().copied().collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pixels_land_in_their_tile((grid, frames) in block()) {
        let m = shuffle_block(&frames, grid).unwrap();
        let (h, w) = frames[0].dim();
        for i in 0..h {
            for j in 0..w {
                let mut tile: Vec<i32> = (0..grid.g_y)
                    .flat_map(|dy| (0..grid.g_x).map(move |dx| (dy, dx)))
                    .map(|(dy, dx)| m.data[[i * grid.g_y + dy, j * grid.g_x + dx]])
                    .collect();
                let mut own: Vec<i32> = frames.iter().map(|f| f[[i, j]]).collect();
                tile.sort_unstable();
                own.sort_unstable();
                prop_assert_eq!(tile, own);
            }
        }
    }

    #[test]
    fn default_grid_holds_block(t in 1usize..=64) {
        let g = grid_for_block_size(t);
        prop_assert_eq!(g.g_y * g.g_x, t);
        prop_assert!(g.g_y >= g.g_x);
    }
}
