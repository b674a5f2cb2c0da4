//! Calibrates the auto-routing threshold for several coverage targets and
//! compares the transfer rate with the heuristic router.

use triage::corpus::{Catalog, CorpusSpec};
use triage::experiment::{model_decisions, run_routing, ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::reason::{train_reason_model, Head, ReasonTrainOptions};
use triage::routing::RoutingPolicy;

fn main() -> anyhow::Result<()> {
    let config = ExperimentConfig { corpus: CorpusSpec { size: 3000, ..CorpusSpec::default() }, ..Default::default() };
    let data = Prepared::new(Catalog::builtin(), &config)?;
    let options = ReasonTrainOptions {
        schema: Some(data.schema.clone()),
        head: Head::Linear { penalty: Penalty::L2, c: 1.0 },
        ..ReasonTrainOptions::default()
    };
    let clf = train_reason_model(&Prepared::examples(&data.train), &Prepared::examples(&data.validation), &options)?
        .classifier;

    let rate = |r: Option<f64>| r.map_or("-".to_owned(), |x| format!("{:.3}", x));
    for coverage in [0.5, 0.8, 0.95, 1.0] {
        let r = run_routing(&data, &clf, coverage)?;
        println!(
            "target {coverage:.2}: threshold {:.4}, validation coverage {:.3}, test coverage {:.3}, transfer {}",
            r.policy.threshold,
            r.calibration_coverage,
            r.model.coverage,
            rate(r.model.rate)
        );
        if coverage == 1.0 {
            println!("heuristic transfer {}, perfect router {}", rate(r.heuristic.rate), rate(r.perfect.rate));
        }
    }

    let d = &model_decisions(&clf, &data.test[..1], &data.map, &RoutingPolicy::always_auto())?[0];
    println!("\nfirst test ticket: {}", serde_json::to_string_pretty(d)?);
    Ok(())
}
