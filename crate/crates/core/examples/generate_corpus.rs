//! Generates a small synthetic corpus and writes it to a directory.
//!
//! cargo run --example generate_corpus -- /tmp/corpus

use std::collections::BTreeMap;

use triage::corpus::{generate, write_corpus, Catalog, CorpusSpec};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-corpus".into());
    let catalog = Catalog::builtin();
    let spec = CorpusSpec { size: 1500, context_size: 600, ..CorpusSpec::default() };

    let corpus = generate(&catalog, &spec)?;
    let mut per_department: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &corpus.tickets {
        *per_department.entry(t.department.as_str()).or_default() += 1;
    }
    println!("{} tickets, {} context annotations", corpus.tickets.len(), corpus.annotations.len());
    for (d, n) in &per_department {
        println!("  {d:<12} {n}");
    }
    for t in corpus.tickets.iter().take(3) {
        println!("[{}] {} -> {}", t.reason, t.message, t.department);
    }

    let files = write_corpus(&catalog, &spec, std::path::Path::new(&out))?;
    println!("written to {}", files.dir.display());
    Ok(())
}
