//! Trains the context gate and asks it about a few opening messages.

use triage::context::{evaluate_context, train_context_model, ContextTrainOptions};
use triage::corpus::{generate, Catalog, CorpusSpec};
use triage::text::StopWords;

fn main() -> anyhow::Result<()> {
    let corpus = generate(&Catalog::builtin(), &CorpusSpec { size: 200, context_size: 2000, ..CorpusSpec::default() })?;
    let options = ContextTrainOptions { budget: 5, ..ContextTrainOptions::default() };
    let t = train_context_model(&corpus.annotations, &options, &StopWords::portuguese())?;
    println!(
        "trained on {} messages, test accuracy {:.3} (threshold {:.2})",
        t.report.train_size, t.report.test_accuracy, t.model.threshold
    );

    for text in [
        "oi",
        "bom dia, tudo bem?",
        "preciso da segunda via do boleto do aluguel",
        "quero remarcar a visita de amanhã",
        "ajuda",
    ] {
        let v = evaluate_context(&t.model, text);
        let verdict = if v.has_context { "has context" } else { "ask again" };
        println!("{:<48} p={:.3}  {verdict}", text, v.p_positive);
    }
    Ok(())
}
