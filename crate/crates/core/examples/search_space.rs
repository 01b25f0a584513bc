//! Print the size of the filter-subset search space and the derived sampling
//! probabilities for the registered architectures.
//!
//! ```text
//! cargo run --example search_space
//! ```

use trojan_prune::forge::arch::{build, ARCHITECTURES};
use trojan_prune::pruning::{derive_p_coverage, derive_p_min_layer, search_space_size};

fn main() -> trojan_prune::Result<()> {
    for id in ARCHITECTURES {
        let model = build(id, 5, 0)?;
        let (full, reduced) = search_space_size(&model)?;
        println!("{id}: filters {:?}", model.filter_counts());
        println!("  all non-empty subsets per layer: {full}");
        println!("  one filter per layer:            {reduced}");
        println!("  p = 1/min|F_j|:                  {}", derive_p_min_layer(&model)?);
        for s in [2, 4, 5] {
            println!("  p = 1/|S| for |S| = {s}:           {}", derive_p_coverage(1, s)?);
        }
    }
    Ok(())
}
