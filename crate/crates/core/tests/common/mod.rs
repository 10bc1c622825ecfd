#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use edgehar::classifier::{bucket_vector, mean_pixel_bucket, to_line, Request, Response};
use edgehar::synth::{self, SynthSpec};

/// Behaviour of the test model server.
#[derive(Clone, Debug)]
pub enum StubModel {
    Echo(Vec<f64>),
    MeanPixelBucket(usize),
    /// Reads requests but never answers.
    Stall,
    /// Answers with a line that is not JSON.
    Garbage,
    ErrorReply,
    /// Sends a stale response with the previous id before the real one.
    StaleFirst(Vec<f64>),
    /// Answers one request per connection, then hangs up.
    OneShot(Vec<f64>),
}

pub struct StubServer {
    pub addr: String,
    pub connections: Arc<AtomicUsize>,
}

fn respond(model: &StubModel, req: &Request) -> Option<String> {
    let probs = |p: Vec<f64>| to_line(&Response::Probs { id: req.id, probs: p });
    match model {
        StubModel::Echo(v) | StubModel::OneShot(v) => Some(probs(v.clone())),
        StubModel::MeanPixelBucket(classes) => Some(match req.decode_window() {
            Ok(w) => probs(bucket_vector(mean_pixel_bucket(w.data(), *classes), *classes)),
            Err(e) => to_line(&Response::Error {
                id: req.id,
                error: e.to_string(),
            }),
        }),
        StubModel::Stall => None,
        StubModel::Garbage => Some("this is not json\n".into()),
        StubModel::ErrorReply => Some(to_line(&Response::Error {
            id: req.id,
            error: "model exploded".into(),
        })),
        StubModel::StaleFirst(v) => Some(format!(
            "{}{}",
            to_line(&Response::Probs {
                id: req.id - 1,
                probs: vec![1.0; v.len()],
            }),
            probs(v.clone())
        )),
    }
}

fn serve_connection(stream: TcpStream, model: StubModel) {
    let mut writer = stream.try_clone().unwrap();
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => respond(&model, &req),
            Err(e) => Some(to_line(&Response::Error {
                id: -1,
                error: e.to_string(),
            })),
        };
        if let Some(reply) = reply {
            if writer.write_all(reply.as_bytes()).is_err() {
                return;
            }
            if matches!(model, StubModel::OneShot(_)) {
                return;
            }
        }
    }
}

pub fn spawn_stub(model: StubModel) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let connections = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&connections);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let model = model.clone();
            thread::spawn(move || serve_connection(stream, model));
        }
    });
    StubServer { addr, connections }
}

/// A port that refuses connections.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    thread::sleep(Duration::from_millis(10));
    addr
}

pub fn short_spec(seconds: f64) -> SynthSpec {
    SynthSpec {
        seconds,
        ..SynthSpec::default()
    }
}

pub fn make_stream(dir: &Path, spec: &SynthSpec) {
    synth::generate(dir, spec).unwrap();
}
