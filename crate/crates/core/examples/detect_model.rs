//! Classify one model with a fitted mapping and a winning configuration.
//!
//! ```text
//! cargo run --release --example detect_model -- <model.prnt> <mapping.map> <detect.cfg> <reference_table.tsv> <eval_dir>
//! ```
//!
//! The shipped demo fixture works out of the box:
//!
//! ```text
//! cargo run --release --example detect_model -- $(cat crates/core/fixtures/demo/args.txt)
//! ```

use std::path::PathBuf;

use trojan_prune::cli::cmd_detect;

fn main() -> trojan_prune::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if args.len() != 5 {
        eprintln!("usage: detect_model <model> <mapping> <config> <table> <eval_dir>");
        std::process::exit(2);
    }
    let verdict = cmd_detect(&args[0], &args[1], &args[2], &args[3], &args[4])?;
    print!("{}", verdict.to_text());
    Ok(())
}
