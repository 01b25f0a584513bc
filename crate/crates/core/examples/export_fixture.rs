//! Package one clean model from a search run as a self-contained detection
//! fixture: model, clean images, mapping, winning config, reference table and
//! the expected stable output.
//!
//! ```text
//! cargo run --release --example export_fixture -- <corpus_dir> <run_dir> <arch> <out_dir>
//! ```

use std::fs;
use std::path::Path;

use trojan_prune::cli::{cmd_detect, REFERENCE_TABLE};
use trojan_prune::forge::{read_eval_slice, write_eval_slice, Corpus};
use trojan_prune::{Error, Result};

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [corpus_dir, run_dir, arch, out] = args.as_slice() else {
        eprintln!("usage: export_fixture <corpus_dir> <run_dir> <arch> <out_dir>");
        std::process::exit(2);
    };
    let corpus = Corpus::open(corpus_dir)?;
    let run = Path::new(run_dir);
    let out = Path::new(out);
    let mapping = run.join("mappings").join(format!("{arch}.map"));
    let config = run.join("winners").join(format!("{arch}.cfg"));
    let table = Path::new(corpus_dir).join(REFERENCE_TABLE);

    for e in corpus.accepted().filter(|e| e.architecture_id == *arch && e.label == 0) {
        let eval_dir = Path::new(corpus_dir).join("eval").join(&e.id);
        let verdict = cmd_detect(&corpus.model_path(&e.id), &mapping, &config, &table, &eval_dir)?;
        if verdict.poisoned {
            continue;
        }
        fs::create_dir_all(out).map_err(|err| Error::io(out, err))?;
        copy(&corpus.model_path(&e.id), &out.join("model.prnt"))?;
        copy(&mapping, &out.join("mapping.map"))?;
        copy(&config, &out.join("detect.cfg"))?;
        copy(&table, &out.join(REFERENCE_TABLE))?;
        let (images, labels) = read_eval_slice(&eval_dir)?;
        write_eval_slice(&out.join("eval"), &images, &labels)?;
        let check = cmd_detect(&out.join("model.prnt"), &out.join("mapping.map"), &out.join("detect.cfg"), &out.join(REFERENCE_TABLE), &out.join("eval"))?;
        let expected = out.join("expected.txt");
        fs::write(&expected, check.stable_text()).map_err(|err| Error::io(&expected, err))?;
        println!("exported {} ({}) to {}", e.id, check.label(), out.display());
        print!("{}", check.stable_text());
        return Ok(());
    }
    Err(Error::InvalidConfig(format!("no clean {arch} model is classified clean by the mapping")))
}
