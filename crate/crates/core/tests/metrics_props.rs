use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use turbdip::metrics::{background_variance, psnr, ssim};
use turbdip::{Frame, FrameSequence, MaskSequence};

fn permute(x: &Array2<f32>, perm: &[usize]) -> Array2<f32> {
    let w = x.ncols();
    Array2::from_shape_fn(x.dim(), |(i, j)| {
        let p = perm[i * w + j];
        x[[p / w, p % w]]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn background_variance_ignores_pixel_order(
        values in proptest::collection::vec(0u8..=255, 4 * 6 * 5),
        mask_bits in proptest::collection::vec(any::<bool>(), 4 * 6 * 5),
        seed in any::<u64>(),
    ) {
        let mut perm: Vec<usize> = (0..30).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let planes: Vec<Array2<f32>> = values.chunks(30).map(|c| Array2::from_shape_fn((6, 5), |(i, j)| c[i * 5 + j] as f32 / 255.0)).collect();
        let masks: Vec<Array2<bool>> = mask_bits.chunks(30).map(|c| Array2::from_shape_fn((6, 5), |(i, j)| c[i * 5 + j])).collect();
        let seq = FrameSequence::from_luma(planes.clone()).unwrap();
        let m = MaskSequence::new(masks.clone(), 4).unwrap();
        let pseq = FrameSequence::from_luma(planes.iter().map(|p| permute(p, &perm)).collect()).unwrap();
        let pmasks: Vec<Array2<bool>> = masks
            .iter()
            .map(|b| {
                let f = permute(&b.mapv(|v| if v { 1.0 } else { 0.0 }), &perm);
                f.mapv(|v| v > 0.5)
            })
            .collect();
        let pm = MaskSequence::new(pmasks, 4).unwrap();
        match (background_variance(&seq, &m), background_variance(&pseq, &pm)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn psnr_and_ssim_symmetric_and_maximal(a in proptest::collection::vec(0.0f32..=1.0, 144), b in proptest::collection::vec(0.0f32..=1.0, 144)) {
        let fa = Frame::gray(Array2::from_shape_vec((12, 12), a).unwrap());
        let fb = Frame::gray(Array2::from_shape_vec((12, 12), b).unwrap());
        prop_assert_eq!(psnr(&fa, &fb).unwrap(), psnr(&fb, &fa).unwrap());
        prop_assert!((ssim(&fa, &fb).unwrap() - ssim(&fb, &fa).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&fa, &fa).unwrap(), f64::INFINITY);
        prop_assert!((ssim(&fa, &fa).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(ssim(&fa, &fb).unwrap() <= 1.0 + 1e-9);
    }
}

#[test]
fn noise_variance_is_recovered() {
    // sigma 8 on the 0-255 scale around a mid-gray background
    let sigma = 8.0 / 255.0;
    let normal = Normal::new(0.0f32, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames: Vec<Array2<f32>> = (0..120)
        .map(|_| Array2::from_shape_simple_fn((16, 16), || 0.5 + normal.sample(&mut rng)))
        .collect();
    let seq = FrameSequence::from_luma(frames).unwrap();
    let v = background_variance(&seq, &MaskSequence::all_background(120, (16, 16))).unwrap();
    assert!((v - 64.0).abs() <= 0.15 * 64.0, "variance {v}");
}
