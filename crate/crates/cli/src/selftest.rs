use anyhow::Result;
use ndarray::{array, Array2};

use turbdip::gradcheck::{check_layers, check_network};
use turbdip::metrics::{background_variance, psnr};
use turbdip::mosaic::{shuffle_block, unshuffle_mosaic, MosaicGrid};
use turbdip::optimize::early_stop::EsDecision;
use turbdip::optimize::{tv, EsConfig, EsState};
use turbdip::seqio::{Frame, FrameSequence, MaskSequence};

use crate::args::SelftestArgs;

#[derive(Debug)]
pub struct ChecksFailed(pub usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} self-test check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

struct Outcome {
    name: String,
    passed: bool,
    detail: String,
}

fn gradient_checks(seed: u64) -> Vec<Outcome> {
    let mut all = check_layers(seed, 20);
    for scales in [1, 2] {
        for mut c in check_network(scales, 0.1, seed, 20) {
            c.name = c.name.replace("network ", "");
            all.push(c);
        }
    }
    all.into_iter()
        .map(|c| Outcome {
            name: format!("gradient {}", c.name),
            passed: c.passed() && c.coords >= 20,
            detail: format!(
                "{} coords ({} skipped at kinks), max rel err {:.2e}",
                c.coords, c.skipped, c.max_rel_error
            ),
        })
        .collect()
}

fn shuffle_check(seed: u64) -> Outcome {
    // small linear congruential walk over shapes; no need for a full RNG here
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = |m: u64| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) % m) as usize
    };
    let mut ok = true;
    let cases = 200;
    for _ in 0..cases {
        let (gy, gx) = (1 + next(3), 1 + next(3));
        let (h, w) = (1 + next(16), 1 + next(16));
        let grid = MosaicGrid { g_y: gy, g_x: gx };
        let frames: Vec<Array2<f32>> = (0..gy * gx)
            .map(|_| Array2::from_shape_simple_fn((h, w), || next(1000) as f32))
            .collect();
        let m = shuffle_block(&frames, grid).expect("matching count");
        ok &= unshuffle_mosaic(&m).expect("divisible") == frames;
    }
    Outcome {
        name: "mosaic roundtrip".into(),
        passed: ok,
        detail: format!("{cases} random blocks"),
    }
}

fn tv_check() -> Outcome {
    let v = tv(&array![[0.0f64, 1.0], [2.0, 3.0]]);
    let c = tv(&Array2::from_elem((4, 5), 0.7f64));
    Outcome {
        name: "total variation oracle".into(),
        passed: v == 6.0 && c == 0.0,
        detail: format!("tv = {v}, constant = {c}"),
    }
}

fn es_check() -> Outcome {
    let cfg = EsConfig::default();
    let mut es = EsState::<f64>::new();
    let mut stop = None;
    for t in 0..200 {
        let v = (t as f64 - 100.0).powi(2);
        if es.track(v, t, &cfg).0 == EsDecision::Stop {
            stop = Some(t);
            break;
        }
    }
    Outcome {
        name: "early stopping rule".into(),
        passed: stop == Some(150) && es.best_iter == Some(100),
        detail: format!("stop {stop:?}, best {:?}", es.best_iter),
    }
}

fn metrics_check() -> Outcome {
    let s = FrameSequence::from_luma(vec![array![[0.0f32]], array![[2.0 / 255.0]]]).expect("valid");
    let v = background_variance(&s, &MaskSequence::all_background(2, (1, 1))).unwrap_or(f64::NAN);
    let a = Frame::gray(Array2::from_elem((4, 4), 0.2));
    let b = Frame::gray(Array2::from_elem((4, 4), 0.3));
    let p = psnr(&a, &b).unwrap_or(f64::NAN);
    Outcome {
        name: "metric oracles".into(),
        passed: v == 1.0 && (p - 20.0).abs() < 1e-5,
        detail: format!("background var {v}, psnr {p:.6} dB"),
    }
}

pub fn run(a: &SelftestArgs) -> Result<()> {
    let mut outcomes = gradient_checks(a.seed);
    outcomes.push(shuffle_check(a.seed));
    outcomes.push(tv_check());
    outcomes.push(es_check());
    outcomes.push(metrics_check());
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {:<44} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
