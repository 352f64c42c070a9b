use ndarray::Array2;
use proptest::prelude::*;

use turbdip::optimize::early_stop::EsDecision;
use turbdip::pipeline::{run, schedule_blocks};
use turbdip::turbsim::{synthesize_sequence, test_scene, TurbulenceParams};
use turbdip::{
    fit_block, EsConfig, EsState, FrameSequence, GeneratorState, HourglassConfig, Init, OptimizerConfig, PipelineConfig,
};

fn small() -> PipelineConfig {
    PipelineConfig {
        block_size: 4,
        gen_cfg: HourglassConfig {
            scales: 2,
            channels: 8,
            latent_channels: 4,
            ..HourglassConfig::default()
        },
        opt_cfg: OptimizerConfig {
            max_epoch: 40,
            ..OptimizerConfig::default()
        },
        es_cfg: EsConfig {
            window: 5,
            patience: 10,
            patience_start: 10,
            ..EsConfig::default()
        },
        seed: 11,
        ..PipelineConfig::default()
    }
}

fn distorted(n: usize, h: usize, w: usize) -> FrameSequence {
    let scene = FrameSequence::from_luma(vec![test_scene(h, w)]).unwrap();
    synthesize_sequence(&scene, n, &TurbulenceParams::default(), 2)
        .unwrap()
        .0
}

proptest! {
    #[test]
    fn schedule_covers_each_frame_once(t in 1usize..10, s_off in 0usize..10, extra in 0usize..30) {
        let s = 1 + s_off % t;
        let n = t + extra;
        let blocks = schedule_blocks(n, t, s).unwrap();
        let mut seen = vec![0; n];
        for b in &blocks {
            prop_assert!(b.start + t <= n);
            prop_assert!(b.emit.start >= b.start && b.emit.end <= b.start + t);
            for k in b.emit.clone() {
                seen[k] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        if s == t && n % t == 0 {
            prop_assert!(blocks.iter().all(|b| b.emit == (b.start..b.start + t)));
        }
    }
}

#[test]
fn restore_keeps_shape_and_is_deterministic() {
    let seq = distorted(10, 12, 10);
    let cfg = small();
    let (a, ra) = run(&seq, &cfg).unwrap();
    let (b, rb) = run(&seq, &cfg).unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a.dims(), (12, 10));
    assert_eq!(a, b);
    assert_eq!(ra.to_kv(), rb.to_kv());
    for f in a.frames() {
        assert!(f.luma.iter().all(|&v| v > 0.0 && v < 1.0));
    }
    // n = 10, T = 4: starts 0, 4, 6
    let starts: Vec<usize> = ra.blocks.iter().map(|b| b.start).collect();
    assert_eq!(starts, vec![0, 4, 6]);
    let kinds: Vec<&str> = ra.blocks.iter().map(|b| b.init).collect();
    assert_eq!(kinds, vec!["fresh", "fresh", "predicted"]);
}

#[test]
fn seed_changes_output() {
    let seq = distorted(4, 8, 8);
    let (a, _) = run(&seq, &small()).unwrap();
    let (b, _) = run(&seq, &PipelineConfig { seed: 12, ..small() }).unwrap();
    assert_ne!(a, b);
}

#[test]
fn fitting_never_touches_frozen_weights() {
    let cfg = small().gen_cfg;
    let mut gen = GeneratorState::<f32>::new(cfg, (16, 16), 3).unwrap();
    let before = gen.frozen_checksum();
    let target = test_scene(16, 16);
    let fit = fit_block(
        &mut gen,
        Init::Fresh { seed: 4 },
        &target,
        &small().opt_cfg,
        &small().es_cfg,
    )
    .unwrap();
    assert_eq!(gen.frozen_checksum(), before);
    assert!(fit.loss_trace.iter().all(|l| l.is_finite()));
}

#[test]
fn stop_comes_exactly_patience_after_best() {
    let cfg = EsConfig::default();
    let mut es = EsState::<f64>::new();
    let mut best_seen = f64::INFINITY;
    for t in 0..400 {
        let v = ((t as f64) / 17.0).sin() + 0.002 * (t as f64 - 120.0).powi(2);
        let (d, _) = es.track(v, t, &cfg);
        if let Some(b) = es.best_iter {
            assert!(es.best_var <= best_seen);
            best_seen = es.best_var;
            if d == EsDecision::Stop {
                assert_eq!(t - b, cfg.patience);
                return;
            }
        }
    }
    panic!("curve with a single minimum should stop");
}

#[test]
fn constant_target_stays_in_open_interval() {
    let mut gen = GeneratorState::<f32>::new(small().gen_cfg, (8, 8), 1).unwrap();
    let fit = fit_block(
        &mut gen,
        Init::Fresh { seed: 1 },
        &Array2::from_elem((8, 8), 1.0f32),
        &small().opt_cfg,
        &small().es_cfg,
    )
    .unwrap();
    assert!(fit.restored_mosaic.iter().all(|&v| v > 0.0 && v < 1.0));
}
