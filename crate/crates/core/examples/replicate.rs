//! Runs the synthetic domain-adaptation experiment and prints one line per
//! seed. Usage: `cargo run --release --example replicate -- [seeds]`.

use std::time::Instant;

use damf_core::replication::{run_seed, ReplicationSetup};

fn main() -> damf_core::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut setup = ReplicationSetup::default();
    let env = |k: &str| std::env::var(k).ok();
    if let Some(v) = env("EPOCHS") {
        setup.damf_epochs = v.parse().unwrap();
        setup.baseline_epochs = setup.damf_epochs;
    }
    if let Some(v) = env("WARMUP") {
        setup.warmup_epochs = v.parse().unwrap();
    }
    if let Some(v) = env("LR") {
        setup.lr = v.parse().unwrap();
    }
    if let Some(v) = env("GAMMA") {
        setup.hp.gamma = v.parse().unwrap();
    }
    if let Some(v) = env("HIDDEN") {
        setup.encoder.hidden_size = v.parse().unwrap();
        setup.encoder.ffn_size = 2 * setup.encoder.hidden_size;
    }
    if let Some(v) = env("BATCH") {
        setup.batch_size = v.parse().unwrap();
    }
    let data = setup.generate()?;
    println!("minority classes: {:?}", setup.minority_classes(&data));
    for seed in 1..=seeds {
        let t = Instant::now();
        let r = run_seed(&setup, &data, seed)?;
        println!(
            "seed {seed}: damf {:.3} baseline {:.3} unweighted {:.3} | minority recall {:.3} vs {:.3} | probe warmup {:.3} final {:.3} | val {:.3} {:.3} | {:.1}s",
            r.damf_f1,
            r.baseline_f1,
            r.unweighted_f1,
            r.damf_minority_recall,
            r.unweighted_minority_recall,
            r.probe_warmup,
            r.probe_final,
            r.damf_val_f1,
            r.baseline_val_f1,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
