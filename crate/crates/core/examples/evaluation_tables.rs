//! Every comparison on one generated corpus, printed as tables.
//!
//! cargo run --release --example evaluation_tables -- 5000

use triage::corpus::Catalog;
use triage::evalsim::{render_report, Baselines};
use triage::experiment::{run_all, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let mut config = ExperimentConfig::default();
    if let Some(size) = std::env::args().nth(1) {
        config.corpus.size = size.parse()?;
    } else {
        config.corpus.size = 2000;
    }
    let (report, routing) = run_all(Catalog::builtin(), &config)?;
    print!("{}", render_report(&report, Baselines { published: false }));
    println!(
        "\nthreshold {:.4} covers {:.3} of {} validation chats",
        routing.policy.threshold, routing.calibration_coverage, routing.calibration_size
    );
    Ok(())
}
