//! Prints the per-epoch training log of one synthetic DAMF run.

use damf_core::replication::{target_probe, ReplicationSetup};
use damf_core::training::train_damf;

fn main() -> damf_core::Result<()> {
    let mut setup = ReplicationSetup::default();
    let env = |k: &str| std::env::var(k).ok();
    if let Some(v) = env("EPOCHS") {
        setup.damf_epochs = v.parse().unwrap();
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
    if let Some(v) = env("LREC") {
        setup.hp.lambda_rec = v.parse().unwrap();
    }
    if let Some(v) = env("LTRANS") {
        setup.hp.lambda_trans = v.parse().ok();
    }
    if let Some(v) = env("MARKER") {
        setup.marker_strength = v.parse().unwrap();
    }
    if let Some(v) = env("LAYERS") {
        setup.encoder.num_layers = v.parse().unwrap();
    }
    if let Some(v) = env("BATCH") {
        setup.batch_size = v.parse().unwrap();
    }
    if let Some(v) = env("HEAD_HIDDEN") {
        setup.head_hidden = Some(v.parse().unwrap());
    }
    if env("NOSHIFT").is_some() {
        setup.target_prior = setup.source_priors[0];
    }
    let seed: u64 = env("SEED").map_or(1, |v| v.parse().unwrap());
    let drop: Option<f64> = env("DROPOUT").map(|v| v.parse().unwrap());
    let data = setup.generate()?;
    let mut print = |r: &damf_core::training::EpochRecord| {
        println!(
            "{:>3} {:<11} mf {:.4} d {:.4} rec {:.4} lam {:.3} lr {:.2e} val {:.3} dacc {:.3}",
            r.epoch, r.phase, r.loss_mf, r.loss_domain, r.loss_rec, r.lambda_d, r.lr, r.val_weighted_f1,
            r.domain_accuracy.unwrap_or(f64::NAN)
        );
        Ok(())
    };
    let mut cfg = setup.damf_config(true);
    if let Some(d) = drop {
        cfg.dropout = d;
    }
    let out = train_damf(&cfg, &data.sources, &data.target_unlabeled, seed, &mut print)?;
    println!("best epoch {} val {:.3}", out.best_epoch, out.best_val_f1);
    println!("probe warmup {:.3}", target_probe(out.warmup_model.as_ref().unwrap(), &data, seed)?);
    println!("probe final {:.3}", target_probe(&out.model, &data, seed)?);
    Ok(())
}
