//! Forge a small labelled corpus of clean and poisoned models.
//!
//! ```text
//! cargo run --release --example forge_corpus -- <out_dir> [models_per_arch] [seed] [config.cfg]
//! ```

use std::time::Instant;

use trojan_prune::cli::cmd_forge;
use trojan_prune::config::RunConfig;

fn main() -> trojan_prune::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or("corpus", String::as_str);
    let mut config = match args.get(3) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.get(1) {
        config.forge.models_per_arch = n.parse().expect("models_per_arch");
    }
    if let Some(s) = args.get(2) {
        config.forge.seed = s.parse().expect("seed");
    }
    let start = Instant::now();
    let corpus = cmd_forge(&config, out.as_ref())?;
    println!("{:<14} {:<10} {:>5} {:>9} {:>11}  status", "id", "arch", "label", "clean_acc", "trigger_acc");
    for e in &corpus.entries {
        let trig = e.trigger_acc.map_or("NA".to_string(), |t| format!("{t:.3}"));
        println!(
            "{:<14} {:<10} {:>5} {:>9.3} {:>11}  {:?}",
            e.id, e.architecture_id, e.label, e.clean_acc, trig, e.status
        );
    }
    println!("forged {} models in {:.1}s", corpus.entries.len(), start.elapsed().as_secs_f64());
    Ok(())
}
