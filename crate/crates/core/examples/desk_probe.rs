//! Timing probe for the bundled desk scenario: generates the cube, runs a
//! few epochs of both training modes, and prints per-epoch wall times.

use std::time::Instant;

use jht_core::model::{build_hourglass, Head};
use jht_core::pipeline::{train_supervised, train_unsupervised};
use jht_core::presets;
use jht_core::scene::split_dataset;

fn main() {
    let arg = |i: usize, default: f64| -> f64 {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let epochs = arg(1, 2.0) as usize;
    let lrj_scale = arg(2, 1.0) as f32;
    let lrh_scale = arg(3, 1.0) as f32;
    let batch = arg(4, 0.0) as usize;
    let base = arg(5, 0.0) as usize;
    let noise = arg(6, -1.0) as f32;

    let t0 = Instant::now();
    let mut spec = presets::desk_scene(presets::DESK_SCENE_SEED);
    if noise >= 0.0 {
        spec.noise_sigma = noise;
    }
    let cube = jht_core::scene::generate_cube(&spec).unwrap();
    let scaled = cube.gaussian_scale().unwrap();
    println!("generate+scale: {:.2}s", t0.elapsed().as_secs_f64());
    let stats = scaled.scaling.unwrap();
    println!("scaling stats: mean {:.2}, std {:.2}", stats.mean, stats.std);

    let samples = scaled.carve_samples(&presets::desk_carve()).unwrap();
    println!("samples: {}", samples.len());
    let (train, val, test) = split_dataset(
        samples,
        presets::DESK_SPLIT_FRACTIONS,
        presets::DESK_SPLIT_SEED,
    )
    .unwrap();
    println!("split: {}/{}/{}", train.len(), val.len(), test.len());

    let mut cfg_model = presets::desk_model();
    if base > 0 {
        cfg_model = jht_core::model::HourglassConfig::with_scale(2, base);
    }
    let mut cfg = presets::desk_train(presets::DESK_TRAIN_SEED);
    cfg.epochs = epochs;
    cfg.lr_jekyll *= lrj_scale;
    cfg.lr_hyde *= lrh_scale;
    cfg.lr_utterson *= lrh_scale;
    if batch > 0 {
        cfg.batch_size = batch;
    }
    println!(
        "config: epochs {}, batch {}, base {}, lr_j {:.1e}, lr_h {:.1e}, noise {}",
        cfg.epochs,
        cfg.batch_size,
        cfg_model.base_channels,
        cfg.lr_jekyll,
        cfg.lr_hyde,
        spec.noise_sigma
    );

    let jekyll = build_hourglass(&cfg_model, Head::Sigmoid, cfg.seed).unwrap();
    let hyde = build_hourglass(&cfg_model, Head::FrameMean, cfg.seed + 1).unwrap();
    let t1 = Instant::now();
    let record = train_unsupervised(&jekyll, &hyde, &train, &val, &cfg).unwrap();
    let unsup_s = t1.elapsed().as_secs_f64();
    println!(
        "unsupervised: {:.2}s total, {:.2}s/epoch",
        unsup_s,
        unsup_s / epochs as f64
    );
    for e in record.epochs.iter().step_by(4) {
        println!(
            "  epoch {}: train {:.4}, val {:.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }
    if let (Some(first), Some(last)) = (record.epochs.first(), record.epochs.last()) {
        println!(
            "loss ratio epoch{}/epoch1: {:.3}",
            last.epoch,
            last.train_loss / first.train_loss
        );
    }

    let utterson = build_hourglass(&cfg_model, Head::Sigmoid, cfg.seed + 2).unwrap();
    let t2 = Instant::now();
    let record = train_supervised(&utterson, &train, &val, &cfg).unwrap();
    let sup_s = t2.elapsed().as_secs_f64();
    println!(
        "supervised: {:.2}s total, {:.2}s/epoch",
        sup_s,
        sup_s / epochs as f64
    );
    for e in record.epochs.iter().step_by(4) {
        println!(
            "  epoch {}: train {:.4}, val {:.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }

    let t3 = Instant::now();
    let report = jht_core::pipeline::evaluate(
        Some(&jekyll),
        Some(&utterson),
        &test,
        &jht_core::eval::default_thresholds(),
        4,
    )
    .unwrap();
    println!("eval: {:.2}s over {} samples", t3.elapsed().as_secs_f64(), test.len());
    let jt = report.jekyll.unwrap();
    let ut = report.utterson.unwrap();
    for t in [0.1, 0.2, 0.3, 0.5] {
        let jr = jt.row_at(t).unwrap();
        let ur = ut.row_at(t).unwrap();
        println!(
            "t={t:.2}  jekyll sens {:?} spec {:?} ppv {:?} | utterson sens {:?} spec {:?}",
            jr.metrics.sensitivity,
            jr.metrics.specificity,
            jr.metrics.ppv,
            ur.metrics.sensitivity,
            ur.metrics.specificity,
        );
    }

    // where the mask mass sits, and how clean the background residual is
    jht_core::no_grad(|| {
        let mut j_target = (0.0f64, 0usize);
        let mut j_bg = (0.0f64, 0usize);
        let mut dsq_bg = (0.0f64, 0usize);
        for s in &test {
            let x = jht_core::pipeline::stack_inputs(&[s]).unwrap();
            let mask = jekyll.forward_mask(&x).unwrap();
            let bg = hyde.forward_background(&x).unwrap();
            let delta = jht_core::loss::frame_differential(&x, &bg).unwrap();
            let labels = s.label.to_vec();
            let m = mask.to_vec();
            let d = delta.to_vec();
            let mut dsq_target = (0.0f64, 0usize);
            for i in 0..labels.len() {
                if labels[i] == 1.0 {
                    j_target.0 += m[i] as f64;
                    j_target.1 += 1;
                    dsq_target.0 += (d[i] as f64) * (d[i] as f64);
                    dsq_target.1 += 1;
                } else {
                    j_bg.0 += m[i] as f64;
                    j_bg.1 += 1;
                    dsq_bg.0 += (d[i] as f64) * (d[i] as f64);
                    dsq_bg.1 += 1;
                }
            }
            if dsq_target.1 > 0 {
                print!(
                    "sample dsq@targets {:.2}  ",
                    dsq_target.0 / dsq_target.1 as f64
                );
            }
        }
        println!();
        println!(
            "mask mean at targets {:.4} ({} px), at background {:.4}; bg delta^2 mean {:.4}",
            j_target.0 / j_target.1 as f64,
            j_target.1,
            j_bg.0 / j_bg.1 as f64,
            dsq_bg.0 / dsq_bg.1 as f64
        );
    });
}
