//! Fits the link objective on a generated periodic log and prints per-epoch
//! validation AP.
//!
//! `cargo run --release --example synthetic_fit -- [batch] [epochs] [run] [d_e] [patience] [onehot]`

use apan::synthetic::{periodic_log, shuffled_control, Features, SyntheticConfig};
use apan::train::{fit, TrainConfig};

fn main() -> apan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let synth = SyntheticConfig {
        run: arg(2, 1),
        d_e: arg(3, 16),
        features: if arg(5, 0) == 1 { Features::OneHotItem } else { Features::Random },
        ..SyntheticConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: arg(0, 200),
        max_epochs: arg(1, 20),
        patience: arg(4, 5),
        ..TrainConfig::default()
    };
    let log = periodic_log(&synth)?;
    for (name, log) in [("periodic", log.clone()), ("control", shuffled_control(&log, 99)?)] {
        let started = std::time::Instant::now();
        let report = fit(&log, &cfg)?;
        for row in report.rows.iter().filter(|r| r.split.as_str() != "train") {
            let m = row.metrics.unwrap();
            println!("{name} epoch {} {} loss {:.4} ap {:.4} auc {:.4}", row.epoch, row.split.as_str(), row.loss, m.ap, m.auc);
        }
        println!(
            "{name}: best epoch {} val ap {:.4} ({:.1}s)",
            report.best_epoch,
            report.best_val.metrics.ap,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
