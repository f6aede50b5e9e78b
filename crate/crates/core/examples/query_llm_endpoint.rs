//! Sends one prompt to a chat endpoint and prints the parsed record.
//!
//! Without `LLM_ENDPOINT` a local stub answers on a loopback port, first with
//! a rate-limit response so the retry path is visible.
//!
//! `LLM_ENDPOINT=http://host/v1/chat LLM_API_KEY=... cargo run --example query_llm_endpoint`

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use motion_context::context::ContextVocabulary;
use motion_context::llm::{EndpointConfig, LlmClient, PromptPayload, ResponseCache, UreqTransport};
use motion_context::prompt::{build_tcgp, PromptTemplate};
use motion_context::raster::encode_png;
use motion_context::render::RenderConfig;
use motion_context::synth::synth_fixtures;

const STUB_ANSWER: &str = "INTENTIONS: [Straight, Left-Turn]\nAFFORDANCES: [Slow-Allow, Speed-up-Allow]\nSCENARIO: [Intersection]\nREASONING: Straight lane, clear road ahead.";

fn stub_endpoint() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/v1/chat", listener.local_addr()?);
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(&mut stream);
            let mut length = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 2 {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let (status, reply) = if i == 0 {
                ("429 Too Many Requests", "{}".to_string())
            } else {
                ("200 OK", serde_json::json!({"choices": [{"message": {"content": STUB_ANSWER}}]}).to_string())
            };
            let _ = write!(stream, "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len());
        }
    });
    Ok(url)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint_url = match std::env::var("LLM_ENDPOINT") {
        Ok(url) => url,
        Err(_) => stub_endpoint()?,
    };
    let cfg = EndpointConfig { endpoint_url, backoff_base_ms: 100, ..EndpointConfig::default() };
    let cache = std::env::temp_dir().join("motion-context-examples/cache");
    let client = LlmClient::new(cfg, ContextVocabulary::default(), Box::new(UreqTransport::new()))
        .with_cache(ResponseCache::new(&cache));

    let s = &synth_fixtures(1, 2)?[0];
    let tcgp = build_tcgp(s, &PromptTemplate::default(), &RenderConfig::default())?;
    let png = encode_png(&tcgp.image)?;
    let record = client.query(&s.scenario_id, PromptPayload { text: &tcgp.text, png: &png })?;

    println!("status {:?} after {} attempt(s), {} network call(s)", record.status, record.attempts, client.network_calls());
    println!("request hash {}", record.request_hash);
    println!("cost {} (ledger total {})", record.estimated_cost, client.ledger().total());
    if let Some(ctx) = &record.parsed {
        let words: Vec<&str> = ctx.intentions.iter().map(|l| l.word()).collect();
        println!("intentions {words:?}, affordances {:?}, scenario {:?}", ctx.affordances, ctx.scenario_types);
    }
    println!("cached under {}", cache.display());
    Ok(())
}
