//! Train one small model, then show what each pruning method does to it and
//! measure its accuracy vector under a configuration.
//!
//! ```text
//! cargo run --release --example prune_and_measure -- [arch] [seed]
//! ```

use trojan_prune::fingerprint::fingerprint;
use trojan_prune::forge::arch;
use trojan_prune::forge::gen_dataset;
use trojan_prune::forge::train::{train, TrainParams};
use trojan_prune::pruning::{plan_samples, prune, rank_filters};
use trojan_prune::signal::measure;
use trojan_prune::{nn, PruneMethod, PruningConfig, RankMethod, SampleMethod};

fn main() -> trojan_prune::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch_id = args.first().map_or("toycnn-a", String::as_str);
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));

    let train_set = gen_dataset(5, 60, 16, 16, seed)?;
    let eval = gen_dataset(5, 20, 16, 16, seed + 1000)?;
    let mut model = arch::build(arch_id, 5, seed)?;
    let loss = train(&mut model, &train_set.images, &train_set.labels, &TrainParams { epochs: 5, seed, ..TrainParams::default() })?;
    println!(
        "{arch_id}: {} parameters, filters {:?}, final loss {loss:.4}, clean accuracy {:.3}",
        model.param_count(),
        model.filter_counts(),
        nn::accuracy(&model, &eval.images, &eval.labels)?
    );

    let ranking = rank_filters(&model, RankMethod::L1)?;
    let plan = plan_samples(&ranking, 0.25, 2, SampleMethod::Targeted, 0)?;
    let base = fingerprint(&model).short_hash();
    for (s, sample) in plan.samples.iter().enumerate() {
        println!("sample {s}: filters per layer {sample:?}");
        for pm in PruneMethod::ALL {
            let pruned = prune(&model, sample, *pm, 0.5)?;
            let fp = fingerprint(&pruned).short_hash();
            println!(
                "  {:<6} params {:>6}  graph {}  accuracy {:.3}",
                pm.as_str(),
                pruned.param_count(),
                if fp == base { "unchanged" } else { "changed" },
                nn::accuracy(&pruned, &eval.images, &eval.labels)?
            );
        }
    }

    let config = PruningConfig { p: 0.25, num_samples: 4, num_images: 50, sm: SampleMethod::Uniform, ..PruningConfig::default() };
    let signal = measure(&model, arch_id, &config, &eval.images, &eval.labels)?;
    println!("{}", config.canonical());
    println!("accuracy vector {:?} in {:.4}s", signal.values, signal.elapsed_seconds);
    Ok(())
}
