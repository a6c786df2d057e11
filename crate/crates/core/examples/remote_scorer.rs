//! HTTP scoring client against a stand-in server speaking the /score, /attention and
//! /health protocol. Pass a base URL to talk to a real scorer instead.
//!
//! cargo run --example remote_scorer -- [http://host:port]

use std::thread;

use funnelrag::rank::protocol::{AttentionResponse, ScoreRequest, ScoreResponse, WireScore, WireTensor};
use funnelrag::rank::{
    aggregate_attention, builtin_lexical_score, AggregationScheme, AttentionSource, Candidate, LexicalAttention,
    RelevanceScorer, RemoteScorer,
};

fn serve_builtin() -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
    let url = format!("http://{}", server.server_addr().to_ip().expect("tcp address"));
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let path = req.url().to_string();
            let body = match path.as_str() {
                "/health" => r#"{"status":"ok","model":"builtin-lexical"}"#.to_string(),
                path => {
                    let r: ScoreRequest = serde_json::from_reader(req.as_reader()).expect("request body");
                    let cands: Vec<Candidate<'_>> =
                        r.candidates.iter().map(|c| Candidate { id: &c.id, text: &c.text }).collect();
                    if path == "/score" {
                        let scores = cands
                            .iter()
                            .map(|c| WireScore {
                                id: c.id.to_string(),
                                score: builtin_lexical_score(&r.query, c.text),
                            })
                            .collect();
                        serde_json::to_string(&ScoreResponse { scores }).expect("serialize")
                    } else {
                        let tensors = LexicalAttention::default().attention(&r.query, &cands).expect("tensors");
                        let tensors = cands
                            .iter()
                            .zip(&tensors)
                            .map(|(c, t)| WireTensor::from_tensor(c.id, t))
                            .collect();
                        serde_json::to_string(&AttentionResponse { tensors }).expect("serialize")
                    }
                }
            };
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    url
}

fn main() -> funnelrag::Result<()> {
    let url = std::env::args().nth(1).unwrap_or_else(serve_builtin);
    // The stand-in normalizes attention jointly per request, so all candidates go in one batch.
    let scorer = RemoteScorer::new(&url, 8, std::time::Duration::from_secs(10)).with_max_in_flight(2);
    let health = scorer.health()?;
    println!("{url}: {} ({})", health.status, health.model);

    let texts = [
        ("p1", "the eiffel tower is in paris"),
        ("p2", "big ben is in london"),
        ("p3", "paris is the capital of france"),
    ];
    let cands: Vec<Candidate<'_>> = texts.iter().map(|(id, text)| Candidate { id, text }).collect();
    let query = "where is the eiffel tower";

    let scores = scorer.score(query, &cands)?;
    let tensors = scorer.attention(query, &cands)?;
    for ((c, s), t) in cands.iter().zip(scores).zip(tensors) {
        let post = aggregate_attention(&t, &AggregationScheme::default())?;
        println!("{} score {:.3} attention {:.5} ({} tokens)", c.id, s, post, t.tokens());
    }
    Ok(())
}
