//! Starts the HTTP service in-process, uploads a WAV and requests keys the way
//! the browser front end does.
//!
//! ```text
//! cargo run --example service_client -- <checkpoint_dir> <audio.wav>
//! ```

use std::sync::Arc;

use rigsync::inference::ModelSet;
use rigsync::service::{serve, ServiceConfig, SessionState};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(ckpts), Some(wav)) = (args.next(), args.next()) else {
        eprintln!("usage: service_client <checkpoint_dir> <audio.wav>");
        std::process::exit(2);
    };
    let models = ModelSet::load_dir(&ckpts)?;
    let state = Arc::new(SessionState::new(models, ServiceConfig::default()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(listener, state));

    let client = reqwest::Client::new();
    let info: Value = client.get(format!("{base}/models")).send().await?.json().await?;
    println!("models: {info}");

    let uploaded: Value = client
        .post(format!("{base}/audio"))
        .body(std::fs::read(&wav)?)
        .send()
        .await?
        .json()
        .await?;
    println!("uploaded: {uploaded}");

    let n = info["emotion_names"].as_array().map_or(0, Vec::len);
    let mut weights = vec![0.0; n];
    if n > 1 {
        weights[1] = 1.0;
    }
    let response: Value = client
        .post(format!("{base}/infer"))
        .json(&json!({
            "audio_id": uploaded["audio_id"],
            "emotion_weights": weights,
            "settings": {"rate": 2},
        }))
        .send()
        .await?
        .json()
        .await?;
    if let Some(err) = response.get("error") {
        println!("request failed: {err}: {}", response["message"]);
    }
    for cfg in response["configurations"].as_array().into_iter().flatten() {
        for ctrl in cfg["controllers"].as_array().into_iter().flatten() {
            println!("{}/{}: {} keys", cfg["name"].as_str().unwrap_or("?"), ctrl["name"].as_str().unwrap_or("?"), ctrl["keys"].as_array().map_or(0, Vec::len));
        }
    }
    Ok(())
}
