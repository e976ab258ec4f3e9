//! One benchmark run on the seed-7 dataset, printing the loss curve and the
//! test report.
//!
//! `cargo run --release --example calibrate -- [channels] [epochs] [steps] [batch] [lambda] [lr]`

use std::time::Instant;

use tabgraph::experiments::{run, RunConfig};
use tabgraph::model::{ArchConfig, TrainConfig, TrainingData};
use tabgraph::synthgen::{gen_dataset, GenConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let channels: usize = arg(1, 16);
    let epochs: usize = arg(2, 30);
    let steps: usize = arg(3, 40);
    let batch: usize = arg(4, 16);
    let lambda: f64 = arg(5, 0.3);
    let lr: f64 = arg(6, 0.01);

    let data = gen_dataset(&GenConfig::default(), 200, 7).expect("default config is valid");
    let cfg = RunConfig {
        arch: ArchConfig {
            channels,
            lambda,
            ..ArchConfig::default()
        },
        train: TrainConfig {
            epochs,
            steps_per_epoch: Some(steps),
            batch_size: batch,
            lr,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let td = TrainingData::from_tables(data.train.clone(), &cfg.pairs).expect("generated tables are labelled");
    println!("train pairs {:?} cells {:?}", td.tsr_counts(), td.ctc_counts());

    let t0 = Instant::now();
    let out = run(&data, &cfg, |e| {
        println!(
            "epoch {:>2} lr {:.4} tsr {:.4} ctc {:.4} total {:.4} [{:.0}s]",
            e.epoch,
            e.lr,
            e.tsr_loss,
            e.ctc_loss,
            e.total_loss,
            t0.elapsed().as_secs_f64()
        )
    })
    .expect("training succeeds");
    println!("{}", out.report.to_text());
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
