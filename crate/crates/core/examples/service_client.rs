//! Starts the TCP chat service in-process and talks to it as a client
//! would, one JSON object per line.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use serde_json::json;
use triage::context::{train_context_model, ContextTrainOptions};
use triage::corpus::{profile_presets, Catalog, CorpusSpec};
use triage::experiment::{max_scores, ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::pipeline::Triage;
use triage::reason::{train_reason_model, Head, ReasonTrainOptions};
use triage::routing::RoutingPolicy;
use triage::service::{Envelope, Server, Service, ServiceConfig};
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

    let service = Service::new(triage.engine(0)?, ServiceConfig::default());
    let server = Server::bind(Arc::new(service), "127.0.0.1:0")?;
    println!("service on {}", server.address());

    let stream = TcpStream::connect(server.address())?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let owner = profile_presets().into_iter().find(|p| p.id == "owner").expect("owner preset");
    let script = [
        json!({"type": "session_start", "session_id": "c1", "profile": owner.profile, "identity": {"customer_name": "Rui"}}),
        json!({"type": "user_message", "session_id": "c1", "text": "quando cai o repasse do aluguel do meu apartamento?"}),
    ];
    for msg in script {
        println!(">> {msg}");
        writeln!(writer, "{msg}")?;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            print!("<< {line}");
            let env: Envelope = serde_json::from_str(&line)?;
            // a session_start is answered by one greeting; the description
            // by everything up to session_end
            if matches!(env, Envelope::SessionEnd { .. }) || msg["type"] == "session_start" {
                break;
            }
        }
    }
    server.shutdown();
    Ok(())
}
