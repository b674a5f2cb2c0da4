//! Two tickets with the same words from different users. The text alone
//! cannot tell them apart; the profile does.

use triage::corpus::{Catalog, CorpusSpec};
use triage::experiment::{ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::reason::{train_reason_model, Head, ReasonTrainOptions};
use triage::routing::department_scores;

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

    let routed_right = |t: &triage::corpus::Ticket| -> bool {
        clf.probabilities(None, &t.message, &t.profile)
            .ok()
            .and_then(|p| department_scores(&p, clf.classes(), &data.map).ok())
            .is_some_and(|s| s.best_department() == t.department)
    };
    let pairs: Vec<_> = data
        .test
        .iter()
        .enumerate()
        .flat_map(|(i, a)| data.test[i + 1..].iter().map(move |b| (a, b)))
        .filter(|(a, b)| a.message == b.message && a.department != b.department)
        .collect();
    // prefer a pair the model gets right
    let pair = pairs.iter().find(|(a, b)| routed_right(a) && routed_right(b)).or(pairs.first()).copied();
    let Some((a, b)) = pair else {
        println!("no shared message with different departments in this test split");
        return Ok(());
    };
    println!("message: {:?}\n", a.message);
    for t in [a, b] {
        let p = clf.predict(None, &t.message, &t.profile, 3)?;
        let scores = department_scores(&p.probabilities, clf.classes(), &data.map)?;
        println!("profile {}", serde_json::to_string(&t.profile)?);
        println!("  true reason {} ({})", t.reason, data.map.display_name(&t.department));
        for r in &p.top {
            println!("  {:<22} {:.3}", r.reason, r.probability);
        }
        println!("  -> {} ({:.3})\n", data.map.display_name(scores.best_department()), scores.max_score());
    }
    Ok(())
}
