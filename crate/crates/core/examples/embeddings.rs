//! Text features from precomputed embeddings: first from a file, then
//! from the same table served over TCP.

use std::sync::Arc;

use triage::corpus::{planted_embeddings, Catalog, CorpusSpec};
use triage::experiment::{reason_metrics, ExperimentConfig, Prepared};
use triage::models::Penalty;
use triage::reason::{
    train_reason_model, EmbeddingProvider, EmbeddingServer, FileProvider, Head, ReasonTrainOptions, RemoteConfig,
    RemoteProvider, TextFeatures,
};

fn main() -> anyhow::Result<()> {
    let config = ExperimentConfig { corpus: CorpusSpec { size: 2000, ..CorpusSpec::default() }, ..Default::default() };
    let data = Prepared::new(Catalog::builtin(), &config)?;

    let dir = std::env::temp_dir().join("triage-embeddings-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tickets.emb");
    let table = planted_embeddings(&data.corpus, 32, 0.5, 7)?;
    table.save_binary(&path)?;
    println!("{} vectors of dimension {} in {}", table.len(), table.dimension(), path.display());

    let file: Arc<dyn EmbeddingProvider> = Arc::new(FileProvider::open(path)?);
    let server = EmbeddingServer::spawn("127.0.0.1:0", file.clone())?;
    let remote = RemoteProvider::new(RemoteConfig {
        address: server.address().to_string(),
        timeout_ms: 2000,
        dimension: file.dimension(),
        truncation: 64,
    });

    for (name, provider) in [("file", file), ("remote", Arc::new(remote) as Arc<dyn EmbeddingProvider>)] {
        let options = ReasonTrainOptions {
            text: TextFeatures::Provider(provider),
            schema: Some(data.schema.clone()),
            head: Head::Linear { penalty: Penalty::L2, c: 1.0 },
            ..ReasonTrainOptions::default()
        };
        let t = train_reason_model(&Prepared::examples(&data.train), &Prepared::examples(&data.validation), &options)?;
        let m = reason_metrics(&t.classifier, &data.test, &data.map)?;
        println!("{name:<7} reason top-1 {:.3}", m.reason_top1);
    }
    server.shutdown();
    Ok(())
}
