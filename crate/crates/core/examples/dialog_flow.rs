//! Drives one conversation through the bundled flow with trained models,
//! printing every action and the final slots.

use serde_json::json;
use triage::context::{train_context_model, ContextTrainOptions};
use triage::corpus::{Catalog, CorpusSpec};
use triage::dialog::{Action, Event};
use triage::experiment::{max_scores, ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::pipeline::Triage;
use triage::reason::{train_reason_model, Head, ReasonTrainOptions};
use triage::routing::RoutingPolicy;
use triage::text::StopWords;

fn main() -> anyhow::Result<()> {
    let config = ExperimentConfig {
        corpus: CorpusSpec { size: 2000, context_size: 1500, ..CorpusSpec::default() },
        ..Default::default()
    };
    let data = Prepared::new(Catalog::builtin(), &config)?;
    let context = train_context_model(
        &data.corpus.annotations,
        &ContextTrainOptions { budget: 3, ..Default::default() },
        &StopWords::portuguese(),
    )?
    .model;
    let options = ReasonTrainOptions {
        schema: Some(data.schema.clone()),
        head: Head::Linear { penalty: Penalty::L2, c: 1.0 },
        ..ReasonTrainOptions::default()
    };
    let reason = train_reason_model(&Prepared::examples(&data.train), &Prepared::examples(&data.validation), &options)?
        .classifier;
    let policy = RoutingPolicy::calibrate(&max_scores(&reason, &data.validation, &data.map)?, 0.8)?;

    let triage = Triage::new(context, reason, data.map.clone(), policy)?;
    let engine = triage.engine(0)?;
    let mut memory = engine.new_session("demo");

    let profile =
        json!({"n_active_contracts_as_tenant": 1, "last_auto_msg_type": "invoice_issued", "hours_since_auto_msg": 3});
    let events = [
        Event::session_start(0, profile),
        Event::user_message(1, "oi"),
        Event::user_message(2, "o boleto do aluguel veio com o valor errado"),
        Event::user_message(3, "Carla"),
    ];
    for event in &events {
        let step = engine.process(&memory, event)?;
        for action in &step.actions {
            match action {
                Action::Message { template, text } => println!("bot [{template}] {text}"),
                Action::Directive { kind, payload } => println!("directive {kind}: {payload}"),
            }
        }
        memory = step.memory;
        println!("   state = {}", memory.state);
    }
    println!("finished: {}", engine.is_finished(&memory));
    println!("slots: {}", serde_json::to_string_pretty(&memory.slots)?);
    Ok(())
}
