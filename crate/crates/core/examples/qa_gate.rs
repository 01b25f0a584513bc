//! Check a forged corpus against its reference table, then show how the gate
//! reacts to an architecture tamper and to weight-only edits.
//!
//! ```text
//! cargo run --release --example qa_gate -- <corpus_dir>
//! ```

use trojan_prune::forge::Corpus;
use trojan_prune::nn::{Dense, Layer};
use trojan_prune::qa::{build_reference_table, qa_check};
use trojan_prune::{store, Tensor};

fn main() -> trojan_prune::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "corpus".into());
    let corpus = Corpus::open(&dir)?;
    let table = build_reference_table(&corpus)?;
    print!("{}", table.to_tsv());

    let mut passed = 0;
    for e in corpus.accepted() {
        let report = qa_check(corpus.model_path(&e.id), &table)?;
        passed += usize::from(report.passed());
    }
    println!("{passed}/{} corpus models pass", corpus.accepted().count());

    let first = corpus.accepted().next().expect("empty corpus");
    let model = corpus.load_model(&first.id)?;
    let scratch = std::env::temp_dir().join(format!("qa_gate_{}", std::process::id()));
    std::fs::create_dir_all(&scratch).map_err(|e| trojan_prune::Error::io(&scratch, e))?;

    let mut perturbed = model.clone();
    if let Some(Layer::Conv2d(c)) = perturbed.layers.first_mut() {
        c.weight.data_mut()[0] += 0.5;
    }
    let path = scratch.join("perturbed.prnt");
    store::save(&perturbed, &path)?;
    println!("weight edit:     {}", qa_check(&path, &table)?.summary());

    let mut tampered = model.clone();
    let c = tampered.num_classes;
    tampered.layers.push(Layer::Dense(Dense { weight: Tensor::zeros(vec![c, c]), bias: Tensor::zeros(vec![c]) }));
    let path = scratch.join("tampered.prnt");
    store::save(&tampered, &path)?;
    println!("appended layer:  {}", qa_check(&path, &table)?.summary());

    let _ = std::fs::remove_dir_all(&scratch);
    Ok(())
}
