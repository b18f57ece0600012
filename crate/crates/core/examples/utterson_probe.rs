//! Focused probe for the supervised baseline: trains it alone on the desk
//! scenario and reports output statistics at target vs background pixels,
//! plus rescaled-sweep sensitivity.

use jht_core::model::{build_hourglass, Head, HourglassConfig};
use jht_core::pipeline::{collect_outputs, train_supervised};
use jht_core::presets;
use jht_core::scene::split_dataset;

fn main() {
    let arg = |i: usize, default: f64| -> f64 {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let epochs = arg(1, 20.0) as usize;
    let lr = arg(2, 5.0e-4) as f32;
    let batch = arg(3, 2.0) as usize;
    let base = arg(4, 8.0) as usize;

    let spec = presets::desk_scene(presets::DESK_SCENE_SEED);
    let cube = jht_core::scene::generate_cube(&spec).unwrap();
    let scaled = cube.gaussian_scale().unwrap();
    let samples = scaled.carve_samples(&presets::desk_carve()).unwrap();
    let (train, val, test) = split_dataset(
        samples,
        presets::DESK_SPLIT_FRACTIONS,
        presets::DESK_SPLIT_SEED,
    )
    .unwrap();

    let mut cfg = presets::desk_train(presets::DESK_TRAIN_SEED);
    cfg.epochs = epochs;
    cfg.lr_utterson = lr;
    cfg.batch_size = batch;
    println!("epochs {epochs}, lr {lr:.1e}, batch {batch}, base {base}");

    let model = build_hourglass(&HourglassConfig::with_scale(2, base), Head::Sigmoid, cfg.seed + 2)
        .unwrap();
    let record = train_supervised(&model, &train, &val, &cfg).unwrap();
    for e in record.epochs.iter().step_by(4) {
        println!("  epoch {}: train {:.5}, val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }

    let (out, lab) = collect_outputs(&model, &test, 4).unwrap();
    let (o, l) = (out.to_vec(), lab.to_vec());
    let mut t_stats = (0.0f64, f32::NEG_INFINITY, 0usize);
    let mut b_stats = (0.0f64, f32::NEG_INFINITY, 0usize);
    for (&p, &y) in o.iter().zip(&l) {
        if y == 1.0 {
            t_stats.0 += p as f64;
            t_stats.1 = t_stats.1.max(p);
            t_stats.2 += 1;
        } else {
            b_stats.0 += p as f64;
            b_stats.1 = b_stats.1.max(p);
            b_stats.2 += 1;
        }
    }
    println!(
        "targets: mean {:.6} max {:.6} ({} px)",
        t_stats.0 / t_stats.2 as f64,
        t_stats.1,
        t_stats.2
    );
    println!(
        "background: mean {:.6} max {:.6} ({} px)",
        b_stats.0 / b_stats.2 as f64,
        b_stats.1,
        b_stats.2
    );

    let rescaled = jht_core::eval::rescale_unit(&out).unwrap();
    let table = jht_core::eval::sweep(&rescaled, &lab, &[0.1, 0.2, 0.3]).unwrap();
    for r in &table.rows {
        println!(
            "t={:.1}: sens {:?} spec {:?}",
            r.threshold, r.metrics.sensitivity, r.metrics.specificity
        );
    }
}
