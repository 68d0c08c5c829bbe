//! Sidecar client against an in-process stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use sumgd_core::backend::{Backend, BackendError, GenerationContext, HttpBackend, ImageHandle};
use sumgd_core::decoding::{decode, DecodeConfig, NoObserver, SumgdParts, SumgdSpec, SummarizerKind};
use sumgd_core::linguistics::Linguistics;
use sumgd_core::summarizer::{PromptSummarizer, RemoteSummarizer, Summarizer, SummaryVariant};

type Log = Arc<Mutex<Vec<(String, Value)>>>;
type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

struct Stub {
    url: String,
    log: Log,
}

impl Stub {
    fn start(handler: Box<Handler>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log: Log = Arc::default();
        let seen = log.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let body: Value = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap() };
                seen.lock().unwrap().push((path.clone(), body.clone()));
                let (status, reply) = handler(&path, &body);
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        Stub { url, log }
    }

    fn requests(&self, path: &str) -> Vec<Value> {
        self.log.lock().unwrap().iter().filter(|(p, _)| p == path).map(|(_, b)| b.clone()).collect()
    }
}

const VOCAB: usize = 256;
const EOS: u32 = 0;

/// Byte-level tokenizer: token = byte + 1, with 0 as end of sequence.
fn tokenize(text: &str) -> Vec<u32> {
    text.bytes().map(|b| u32::from(b) + 1).collect()
}

fn detokenize(tokens: &[Value]) -> String {
    let bytes: Vec<u8> = tokens.iter().map(|t| t.as_u64().unwrap()).filter(|&t| t != 0).map(|t| (t - 1) as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn capabilities(supports_image: bool, supports_attention: bool) -> Value {
    json!({
        "supports_attention": supports_attention,
        "supports_image": supports_image,
        "vocab_size": VOCAB,
        "max_context": 4096,
        "eos_token_id": EOS,
    })
}

/// A sidecar that spells out `reply` one byte per step, then ends. The
/// top entry gets 0.7, a runner-up 0.2 and `residual` the rest.
fn model(reply: &'static str, mass_error: f64, supports_image: bool, attention: bool) -> Box<Handler> {
    Box::new(move |path, body| match path {
        "/v1/capabilities" => (200, capabilities(supports_image, attention)),
        "/v1/tokenize" => (200, json!({ "tokens": tokenize(body["text"].as_str().unwrap()) })),
        "/v1/detokenize" => (200, json!({ "text": detokenize(body["tokens"].as_array().unwrap()) })),
        "/v1/summarize" => (200, json!({ "summary": format!("short {}", body["variant"].as_str().unwrap()) })),
        "/v1/distribution" => {
            let step = body["tokens"].as_array().unwrap().len();
            let top = reply.as_bytes().get(step).map_or(EOS, |&b| u32::from(b) + 1);
            let other = if top == 2 { 3 } else { 2 };
            let mut reply = json!({
                "entries": [
                    {"token_id": top, "logprob": 0.7f64.ln()},
                    {"token_id": other, "logprob": 0.2f64.ln()},
                ],
                "residual_logprob": (0.1 + mass_error).ln(),
            });
            if attention {
                reply["attention"] = json!({"image_mass": 0.25, "text_mass": 0.75});
            }
            (200, reply)
        }
        _ => (404, json!({"error": "not found"})),
    })
}

fn ctx(client: &HttpBackend, image: bool) -> GenerationContext {
    let prompt = Backend::<f64>::tokenize(client, "USER: <image>\nDescribe. ASSISTANT:").unwrap();
    GenerationContext::new(image.then(|| ImageHandle::new("img-1")), prompt)
}

#[test]
fn distributions_are_normalized_within_tolerance() {
    let stub = Stub::start(model("ab", 5e-5, true, false));
    let client = HttpBackend::connect(&stub.url).unwrap();
    let step = Backend::<f64>::next_distribution(&client, &ctx(&client, true), 2).unwrap();
    assert!((step.distribution.total_mass() - 1.0).abs() < 1e-12);
    assert_eq!(step.distribution.vocab_size(), VOCAB);
    assert!(step.distribution.is_truncated());
    let sent = &stub.requests("/v1/distribution")[0];
    assert_eq!(sent["image"], "img-1");
    assert_eq!(sent["top_k"], 2);
    assert_eq!(sent["prompt"], "USER: <image>\nDescribe. ASSISTANT:");

    let off = Stub::start(model("ab", 1e-3, true, false));
    let client = HttpBackend::connect(&off.url).unwrap();
    let err = Backend::<f64>::next_distribution(&client, &ctx(&client, true), 2).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
}

#[test]
fn tokenize_round_trips() {
    let stub = Stub::start(model("", 0.0, true, false));
    let client = HttpBackend::connect(&stub.url).unwrap();
    for text in ["A dog catches a frisbee.", "", "two  spaces\nand a newline"] {
        let tokens = Backend::<f64>::tokenize(&client, text).unwrap();
        assert_eq!(Backend::<f64>::detokenize(&client, &tokens).unwrap(), text);
    }
    assert_eq!(Backend::<f64>::eos_token(&client), Some(EOS));
}

#[test]
fn capabilities_gate_images_and_attention() {
    let stub = Stub::start(model("a", 0.0, false, false));
    let client = HttpBackend::connect(&stub.url).unwrap();
    let caps = Backend::<f64>::capabilities(&client);
    assert!(!caps.supports_image && !caps.supports_attention);
    let err = Backend::<f64>::next_distribution(&client, &ctx(&client, true), 5).unwrap_err();
    assert!(matches!(err, BackendError::ImageUnsupported));
    assert!(stub.requests("/v1/distribution").is_empty());
    let step = Backend::<f64>::next_distribution(&client, &ctx(&client, false), 5).unwrap();
    assert!(step.attention.is_none());
    assert!(stub.requests("/v1/distribution")[0].get("image").is_none());

    let with = Stub::start(model("a", 0.0, true, true));
    let client = HttpBackend::connect(&with.url).unwrap();
    let step = Backend::<f64>::next_distribution(&client, &ctx(&client, true), 5).unwrap();
    assert_eq!(step.attention.unwrap().image_mass, 0.25);
}

#[test]
fn status_codes_map_to_errors() {
    let stub = Stub::start(Box::new(|path, _| match path {
        "/v1/capabilities" => (200, capabilities(true, false)),
        "/v1/tokenize" => (503, json!({})),
        "/v1/detokenize" => (200, json!({"text": "p"})),
        _ => (413, json!({})),
    }));
    let client = HttpBackend::connect(&stub.url).unwrap();
    let err = Backend::<f64>::tokenize(&client, "x").unwrap_err();
    assert!(matches!(err, BackendError::BackendUnavailable(_)));
    let ctx = GenerationContext::new(None, vec![5, 6, 7]);
    let err = Backend::<f64>::next_distribution(&client, &ctx, 5).unwrap_err();
    assert!(matches!(err, BackendError::ContextOverflow { len: 3, max: 4096 }));

    let empty = Stub::start(Box::new(|_, _| (200, json!({"supports_attention": false, "supports_image": true, "vocab_size": 0, "max_context": 10}))));
    assert!(matches!(HttpBackend::connect(&empty.url), Err(BackendError::Protocol(_))));
}

#[test]
fn self_summary_prompt_is_byte_exact() {
    let stub = Stub::start(model("a dog.", 0.0, true, false));
    let client = HttpBackend::connect(&stub.url).unwrap();
    let summarizer = PromptSummarizer::new(&client as &dyn Backend<f64>, SummaryVariant::SelfSummary);
    let summary = summarizer.summarize("A brown dog runs on the grass.").unwrap();
    assert_eq!(summary.text, "a dog.");
    assert_eq!(summary.backend_calls, 7);
    let sent = stub.requests("/v1/tokenize");
    assert_eq!(
        sent[0]["text"],
        "USER: Summarize the following caption in briefly.\nCaption: A brown dog runs on the grass. ASSISTANT:"
    );
    assert!(stub.requests("/v1/distribution").iter().all(|r| r.get("image").is_none()));
}

#[test]
fn distilled_summary_prompt_is_byte_exact() {
    let stub = Stub::start(model("a dog.", 0.0, true, false));
    let client = HttpBackend::connect(&stub.url).unwrap();
    let summarizer = PromptSummarizer::new(&client as &dyn Backend<f64>, SummaryVariant::Distilled);
    summarizer.summarize("A brown dog runs on the grass.").unwrap();
    assert_eq!(stub.requests("/v1/tokenize")[0]["text"], "A brown dog runs on the grass. \nWhat is a summary of this text?");
}

#[test]
fn remote_summaries_name_their_variant() {
    let stub = Stub::start(model("", 0.0, true, false));
    let client = Arc::new(HttpBackend::connect(&stub.url).unwrap());
    for (variant, name) in [(SummaryVariant::SelfSummary, "self"), (SummaryVariant::Distilled, "distilled")] {
        let s = RemoteSummarizer::new(client.clone(), variant).summarize("A dog runs.").unwrap();
        assert_eq!(s.text, format!("short {name}"));
        assert_eq!(s.backend_calls, 1);
    }
    let sent = stub.requests("/v1/summarize");
    assert_eq!(sent[0], json!({"text": "A dog runs.", "variant": "self"}));
    assert_eq!(sent[1], json!({"text": "A dog runs.", "variant": "distilled"}));
}

#[test]
fn summary_guided_decode_over_http_counts_every_call() {
    let stub = Stub::start(model("a dog. a cat.", 0.0, true, false));
    let client = Arc::new(HttpBackend::connect(&stub.url).unwrap());
    let linguistics = Linguistics::default();
    let summarizer = RemoteSummarizer::new(client.clone(), SummaryVariant::SelfSummary);
    let parts = SumgdParts { summarizer: &summarizer, linguistics: &linguistics };
    let cfg = DecodeConfig::greedy()
        .with_sumgd(SumgdSpec::with_summarizer(SummarizerKind::SelfSummary))
        .with_max_new_tokens(40);
    let cfg = DecodeConfig { strategy: sumgd_core::decoding::Strategy::Sumgd, ..cfg };
    let out = decode::<f64, _>(client.as_ref(), &ctx(&client, true), &cfg, Some(parts), &mut NoObserver).unwrap();
    let trace = &out.trace;
    assert!(trace.is_consistent());
    assert_eq!(trace.calls.summarization, stub.requests("/v1/summarize").len());
    assert_eq!(trace.calls.generation + trace.calls.lookahead, stub.requests("/v1/distribution").len());
    assert_eq!(trace.total_backend_calls, trace.calls.total());
}
