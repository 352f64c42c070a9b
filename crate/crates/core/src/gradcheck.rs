//! Central finite-difference checks of the analytic gradients.
//!
//! Every check compares a backward pass against `(f(x + h) - f(x - h)) / 2h`
//! evaluated through forward passes only. Checks run in `f64`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::generator::layers::{
    batch_norm_backward, batch_norm_forward, leaky_relu_backward_inplace, leaky_relu_inplace, sigmoid,
    upsample_bilinear2x, upsample_bilinear2x_backward, Conv, FeatureMap,
};
use crate::generator::{init_generator, GeneratorState, HourglassConfig, ParamVector};
use crate::optimize::tv::{tv, tv_accumulate_grad};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// Outcome of checking one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    /// Candidates dropped because `x +- h` straddles a kink of the loss.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Relative error, with an absolute floor so that exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn central_difference<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

fn shuffled(rng: &mut ChaCha8Rng, mut v: Vec<usize>) -> Vec<usize> {
    v.shuffle(rng);
    v
}

fn sample_coords(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = rand::seq::index::sample(rng, n, count).into_vec();
    v.sort();
    v
}

fn check<F: FnMut(&[f64]) -> f64>(name: &str, x: &[f64], analytic: &[f64], coords: &[usize], mut f: F) -> GradCheck {
    let max_rel_error = coords
        .iter()
        .map(|&i| relative_error(analytic[i], central_difference(&mut f, x, i, STEP)))
        .fold(0.0, f64::max);
    GradCheck {
        name: name.to_string(),
        coords: coords.len(),
        max_rel_error,
        skipped: 0,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Each layer type in isolation under the objective `<r, layer(x)>` with random `r`.
pub fn check_layers(seed: u64, coords: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (c, h, w) = (3, 8, 8);
    let n = c * h * w;

    for (stride, label) in [(1, "conv3x3 input"), (2, "conv3x3 stride2 input")] {
        let conv = Conv::<f64>::he_init(c, 4, 3, stride, &mut rng);
        let x = random_vec(&mut rng, n, -1.0, 1.0);
        let (oh, ow) = conv.out_dims(h, w);
        let r = random_vec(&mut rng, 4 * oh * ow, -1.0, 1.0);
        let g = conv.backward_input(&FeatureMap::from_vec(4, oh, ow, r.clone()), h, w);
        let cs = sample_coords(&mut rng, n, coords);
        out.push(check(label, &x, &g.data, &cs, |v| {
            dot(&r, &conv.forward(&FeatureMap::from_vec(c, h, w, v.to_vec())).data)
        }));
    }

    {
        // enough channels to sample `coords` scales and shifts
        let (c, h, w) = (coords.max(c), 4, 4);
        let n = c * h * w;
        let x = random_vec(&mut rng, n, -1.0, 1.0);
        let gamma = random_vec(&mut rng, c, 0.5, 1.5);
        let beta = random_vec(&mut rng, c, -0.5, 0.5);
        let r = random_vec(&mut rng, n, -1.0, 1.0);
        let fm = FeatureMap::from_vec(c, h, w, x.clone());
        let (_, cache) = batch_norm_forward(&fm, &gamma, &beta);
        let (dx, dg, db) = batch_norm_backward(&FeatureMap::from_vec(c, h, w, r.clone()), &cache, &gamma);
        let cs = sample_coords(&mut rng, n, coords);
        out.push(check("batchnorm input", &x, &dx.data, &cs, |v| {
            dot(
                &r,
                &batch_norm_forward(&FeatureMap::from_vec(c, h, w, v.to_vec()), &gamma, &beta)
                    .0
                    .data,
            )
        }));
        let cs = sample_coords(&mut rng, c, coords);
        out.push(check("batchnorm gamma", &gamma, &dg, &cs, |v| {
            dot(&r, &batch_norm_forward(&fm, v, &beta).0.data)
        }));
        out.push(check("batchnorm beta", &beta, &db, &cs, |v| {
            dot(&r, &batch_norm_forward(&fm, &gamma, v).0.data)
        }));
    }

    {
        let slope = 0.1;
        // keep inputs away from the kink
        let x: Vec<f64> = random_vec(&mut rng, n, 0.05, 1.0)
            .into_iter()
            .map(|v| if rng.random_bool(0.5) { v } else { -v })
            .collect();
        let r = random_vec(&mut rng, n, -1.0, 1.0);
        let mut y = FeatureMap::from_vec(c, h, w, x.clone());
        leaky_relu_inplace(&mut y, slope);
        let mut g = FeatureMap::from_vec(c, h, w, r.clone());
        leaky_relu_backward_inplace(&mut g, &y, slope);
        let cs = sample_coords(&mut rng, n, coords);
        out.push(check("leaky relu", &x, &g.data, &cs, |v| {
            let mut y = FeatureMap::from_vec(c, h, w, v.to_vec());
            leaky_relu_inplace(&mut y, slope);
            dot(&r, &y.data)
        }));
    }

    {
        let x = random_vec(&mut rng, n, -1.0, 1.0);
        let r = random_vec(&mut rng, 4 * n, -1.0, 1.0);
        let g = upsample_bilinear2x_backward(&FeatureMap::from_vec(c, 2 * h, 2 * w, r.clone()), h, w);
        let cs = sample_coords(&mut rng, n, coords);
        out.push(check("bilinear upsample", &x, &g.data, &cs, |v| {
            dot(
                &r,
                &upsample_bilinear2x(&FeatureMap::from_vec(c, h, w, v.to_vec())).data,
            )
        }));
    }

    {
        let x = random_vec(&mut rng, n, -3.0, 3.0);
        let r = random_vec(&mut rng, n, -1.0, 1.0);
        let g: Vec<f64> = x
            .iter()
            .zip(&r)
            .map(|(&v, &r)| {
                let s = sigmoid(v);
                r * s * (1.0 - s)
            })
            .collect();
        let cs = sample_coords(&mut rng, n, coords);
        out.push(check("sigmoid", &x, &g, &cs, |v| {
            v.iter().zip(&r).map(|(&v, &r)| r * sigmoid(v)).sum()
        }));
    }

    {
        let (h, w) = (9, 7);
        let x = random_vec(&mut rng, h * w, 0.0, 1.0);
        let mut g = vec![0.0; h * w];
        tv_accumulate_grad(&x, h, w, 0.1, &mut g);
        let cs = sample_coords(&mut rng, h * w, coords);
        out.push(check("tv (lambda 0.1)", &x, &g, &cs, |v| {
            0.1 * tv(&Array2::from_shape_vec((h, w), v.to_vec()).expect("dims"))
        }));
    }
    out
}

/// Probe configuration for whole-network checks: `scales` levels, 8 channels.
pub fn probe_config(scales: usize) -> HourglassConfig {
    HourglassConfig {
        scales,
        channels: 8,
        skip_channels: 8,
        latent_channels: 4,
        ..Default::default()
    }
}

/// Whole-network gradient of the composite loss on a 16x16 probe, split into
/// latent, scale and shift coordinates.
///
/// Candidates are visited in random order until `coords` of them are checked.
/// A candidate is skipped when the loss is not smooth on `[x - h, x + h]`,
/// i.e. when [`GeneratorState::kink_signature`] differs at either end.
pub fn check_network(scales: usize, lambda: f64, seed: u64, coords: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = init_generator::<f64>(probe_config(scales), (16, 16), seed).expect("probe dims");
    let mut p = g.get_params();
    // move gamma/beta off their init so every path is exercised
    for slot in g.layout.bn.clone() {
        for i in slot.gamma.clone() {
            p.as_mut_slice()[i] = rng.random_range(0.5..1.5);
        }
        for i in slot.beta.clone() {
            p.as_mut_slice()[i] = rng.random_range(-0.3..0.3);
        }
    }
    g.set_params(&p).expect("same layout");
    let target = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0));
    let analytic = g.loss_and_gradients(&target, lambda).expect("finite").grad;
    let x = p.as_slice().to_vec();

    let layout = g.layout.clone();
    let gammas: Vec<usize> = layout.bn.iter().flat_map(|s| s.gamma.clone()).collect();
    let betas: Vec<usize> = layout.bn.iter().flat_map(|s| s.beta.clone()).collect();
    let groups: [(&str, Vec<usize>); 3] = [
        ("network latent z", shuffled(&mut rng, layout.z.clone().collect())),
        ("network bn gamma", shuffled(&mut rng, gammas)),
        ("network bn beta", shuffled(&mut rng, betas)),
    ];
    let probe = |g: &mut GeneratorState<f64>, v: &[f64]| {
        g.set_params(&ParamVector::new(v.to_vec())).expect("same layout");
        (
            g.loss_and_gradients(&target, lambda).expect("finite").loss,
            g.kink_signature(),
        )
    };
    let base_sig = g.kink_signature();
    groups
        .into_iter()
        .map(|(name, candidates)| {
            let mut max_rel_error: f64 = 0.0;
            let (mut used, mut skipped) = (0, 0);
            for i in candidates {
                if used == coords {
                    break;
                }
                let mut v = x.clone();
                v[i] = x[i] + STEP;
                let (fp, sp) = probe(&mut g, &v);
                v[i] = x[i] - STEP;
                let (fm, sm) = probe(&mut g, &v);
                // a difference quotient across a kink measures no derivative
                if sp != base_sig || sm != base_sig {
                    skipped += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * STEP);
                max_rel_error = max_rel_error.max(relative_error(analytic.as_slice()[i], numeric));
                used += 1;
            }
            GradCheck {
                name: format!("{name} (scales={scales}, lambda={lambda})"),
                coords: used,
                max_rel_error,
                skipped,
            }
        })
        .collect()
}
