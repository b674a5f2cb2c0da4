//! Bag-of-words alone against bag-of-words plus the user profile.

use triage::corpus::{Catalog, CorpusSpec};
use triage::experiment::{reason_metrics, ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::reason::{train_reason_model, BowSettings, Head, ReasonTrainOptions, TextFeatures};

fn main() -> anyhow::Result<()> {
    let config = ExperimentConfig { corpus: CorpusSpec { size: 3000, ..CorpusSpec::default() }, ..Default::default() };
    let data = Prepared::new(Catalog::builtin(), &config)?;
    let (train, val) = (Prepared::examples(&data.train), Prepared::examples(&data.validation));

    for (name, schema) in [("text only", None), ("text + profile", Some(data.schema.clone()))] {
        let options = ReasonTrainOptions {
            text: TextFeatures::Bow(BowSettings::default()),
            schema,
            head: Head::Linear { penalty: Penalty::L2, c: 1.0 },
            ..ReasonTrainOptions::default()
        };
        let t = train_reason_model(&train, &val, &options)?;
        let m = reason_metrics(&t.classifier, &data.test, &data.map)?;
        println!(
            "{name:<16} reason top-1 {:.3}  top-3 {:.3}  department top-1 {:.3}",
            m.reason_top1, m.reason_top3, m.department_top1
        );
    }
    Ok(())
}
