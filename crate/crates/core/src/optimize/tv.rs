use ndarray::Array2;

use crate::scalar::Scalar;

/// Anisotropic total variation: sum of absolute vertical and horizontal
/// neighbor differences over in-bounds pairs (no wraparound).
pub fn tv<S: Scalar>(x: &Array2<S>) -> S {
    let (h, w) = x.dim();
    let mut acc = S::zero();
    for i in 0..h {
        for j in 0..w {
            let v = x[[i, j]];
            if i + 1 < h {
                acc += (x[[i + 1, j]] - v).abs();
            }
            if j + 1 < w {
                acc += (x[[i, j + 1]] - v).abs();
            }
        }
    }
    acc
}

#[inline]
fn sign<S: Scalar>(d: S) -> S {
    if d > S::zero() {
        S::one()
    } else if d < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Adds `weight * d tv / d x` into `grad` (row-major `h x w`), with the
/// subgradient at zero difference taken as 0.
pub fn tv_accumulate_grad<S: Scalar>(x: &[S], h: usize, w: usize, weight: S, grad: &mut [S]) {
    debug_assert_eq!(x.len(), h * w);
    for i in 0..h {
        for j in 0..w {
            let o = i * w + j;
            if i + 1 < h {
                let s = weight * sign(x[o + w] - x[o]);
                grad[o + w] += s;
                grad[o] -= s;
            }
            if j + 1 < w {
                let s = weight * sign(x[o + 1] - x[o]);
                grad[o + 1] += s;
                grad[o] -= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        assert_eq!(tv(&array![[0.0, 1.0], [2.0, 3.0]]), 6.0);
    }

    #[test]
    fn constant_and_single_pixel_are_zero() {
        assert_eq!(tv(&Array2::from_elem((4, 5), 0.3f32)), 0.0);
        assert_eq!(tv(&array![[0.9f64]]), 0.0);
    }

    #[test]
    fn gradient_of_step() {
        let x = [0.0, 1.0];
        let mut g = [0.0; 2];
        tv_accumulate_grad(&x, 1, 2, 0.5, &mut g);
        assert_eq!(g, [-0.5, 0.5]);
        let mut g = [0.0; 2];
        tv_accumulate_grad(&[0.2, 0.2], 1, 2, 1.0, &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn nonnegative_and_symmetric(
            h in 1usize..7, w in 1usize..7,
            seed in proptest::collection::vec(-1.0f64..1.0, 49),
        ) {
            let x = Array2::from_shape_fn((h, w), |(i, j)| seed[i * 7 + j]);
            let t = tv(&x);
            prop_assert!(t >= 0.0);
            prop_assert!((tv(&x.mapv(|v| -v)) - t).abs() < 1e-12);
            prop_assert!((tv(&x.t().to_owned()) - t).abs() < 1e-12);
        }
    }
}
