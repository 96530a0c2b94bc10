//! In-process stand-in for the embedding service.
//!
//! Serves the same JSON contract as the real service with canned, fully
//! deterministic answers: `/embed` returns the hashing embedding of the
//! truncated input, `/tokenize` counts four characters per token and
//! `/score` returns fixture values or a hash-derived pair. Fault injection
//! covers the client's retry and integrity paths.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use ehrtext_core::embed::hashing_embed;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::remote::{EmbedRequest, EmbedResponse, HealthResponse, ScoreRequest, ScoreResponse, TokenizeRequest, TokenizeResponse};

pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubConfig {
    pub embedders: BTreeMap<String, StubEmbedder>,
    pub decoders: Vec<String>,
    /// Prompt to `(p_yes, p_no)`.
    pub score_fixtures: HashMap<String, (f64, f64)>,
    /// Answer the first this-many requests with 503.
    pub fail_first: usize,
    pub delay: Duration,
    /// Return one value more than the model's dimension.
    pub wrong_dim: bool,
    pub workers: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        let mut embedders = BTreeMap::new();
        embedders.insert("stub-embed".to_string(), StubEmbedder { dim: 64, max_tokens: 512, seed: 0 });
        StubConfig {
            embedders,
            decoders: vec!["stub-decoder".to_string()],
            score_fixtures: HashMap::new(),
            fail_first: 0,
            delay: Duration::ZERO,
            wrong_dim: false,
            workers: 4,
        }
    }
}

struct State {
    config: StubConfig,
    requests: AtomicUsize,
    stopping: AtomicBool,
}

pub struct StubServer {
    server: Arc<Server>,
    state: Arc<State>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server.server_addr().to_ip().ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let server = Arc::new(server);
        let n = config.workers.max(1);
        let state = Arc::new(State { config, requests: AtomicUsize::new(0), stopping: AtomicBool::new(false) });
        let workers = (0..n)
            .map(|_| {
                let (server, state) = (server.clone(), state.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        if state.stopping.load(Ordering::Acquire) {
                            break;
                        }
                        handle(&state, req);
                    }
                })
            })
            .collect();
        Ok(StubServer { server, state, addr, workers })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, including failed ones.
    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.stopping.store(true, Ordering::Release);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_data(serde_json::to_vec(body).expect("stub bodies serialize")).with_status_code(status).with_header(header)
}

fn error(status: u16, message: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json(status, &serde_json::json!({ "error": message }))
}

/// Deterministic `(p_yes, p_no)` with total mass below one.
pub fn default_score(prompt: &str) -> (f64, f64) {
    let h = prompt.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    let yes = (h % 1000) as f64 / 1000.0 * 0.9;
    (yes, 0.9 - yes)
}

pub fn token_count(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

fn respond(state: &State, method: &Method, path: &str, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let cfg = &state.config;
    match (method, path) {
        (Method::Get, "/health") => {
            let models = cfg.embedders.keys().chain(&cfg.decoders).cloned().collect();
            json(200, &HealthResponse { status: "ok".into(), models })
        }
        (Method::Post, "/embed") => {
            let req: EmbedRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, &e.to_string()),
            };
            let Some(m) = cfg.embedders.get(&req.model) else {
                return error(404, &format!("unknown model {}", req.model));
            };
            let keep = m.max_tokens * CHARS_PER_TOKEN;
            let text: String = req.text.chars().take(keep).collect();
            let mut vector: Vec<f64> = hashing_embed(&req.instruction, &text, m.dim, m.seed).into_iter().map(f64::from).collect();
            if cfg.wrong_dim {
                vector.push(0.0);
            }
            json(200, &EmbedResponse { dim: vector.len(), vector })
        }
        (Method::Post, "/score") => {
            let req: ScoreRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, &e.to_string()),
            };
            if !cfg.decoders.contains(&req.model) {
                return error(404, &format!("unknown model {}", req.model));
            }
            let (p_yes, p_no) = cfg.score_fixtures.get(&req.prompt).copied().unwrap_or_else(|| default_score(&req.prompt));
            json(200, &ScoreResponse { p_yes, p_no })
        }
        (Method::Post, "/tokenize") => {
            let req: TokenizeRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, &e.to_string()),
            };
            if !cfg.embedders.contains_key(&req.model) && !cfg.decoders.contains(&req.model) {
                return error(404, &format!("unknown model {}", req.model));
            }
            json(200, &TokenizeResponse { n_tokens: token_count(&req.text) })
        }
        _ => error(404, "no such endpoint"),
    }
}

fn handle(state: &State, mut req: Request) {
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    if !state.config.delay.is_zero() {
        std::thread::sleep(state.config.delay);
    }
    let mut body = String::new();
    let response = if n < state.config.fail_first {
        error(503, "injected failure")
    } else if req.as_reader().read_to_string(&mut body).is_err() {
        error(400, "body is not UTF-8")
    } else {
        let path = req.url().split('?').next().unwrap_or("").to_string();
        respond(state, req.method(), &path, &body)
    };
    let _ = req.respond(response);
}
