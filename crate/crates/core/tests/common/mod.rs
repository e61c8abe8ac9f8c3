#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use cleaneval::corpus::{preset, write_dataset, Dataset, FieldMap, Sample};

const SUBJECTS: &[&str] = &[
    "The movie",
    "This film",
    "The story",
    "The performance",
    "The whole show",
];
const VERBS: &[&str] = &["is", "was", "felt"];
const POSITIVE: &[&str] = &["great", "good", "funny", "beautiful", "smart", "cool"];
const NEGATIVE: &[&str] = &["boring", "bad", "terrible", "dull", "awful"];
const INTENSIFIERS: &[&str] = &["very ", "really ", ""];
const TAILS: &[&str] = &[
    "and many people loved it",
    "from start to finish",
    "for the children in the house",
    "about a man in a big city",
];

/// `n` distinct SST2-style sentences built from a mixed-radix walk over the
/// word lists above; `offset` shifts the walk so pools do not overlap.
pub fn sst2_samples(n: usize, offset: usize) -> Vec<Sample> {
    let adjectives: Vec<(&str, &str)> = POSITIVE
        .iter()
        .map(|a| (*a, "positive"))
        .chain(NEGATIVE.iter().map(|a| (*a, "negative")))
        .collect();
    (0..n)
        .map(|k| {
            let i = k + offset;
            let mut r = i;
            let mut pick = |len: usize| {
                let v = r % len;
                r /= len;
                v
            };
            let (adj, label) = adjectives[pick(adjectives.len())];
            let subject = SUBJECTS[pick(SUBJECTS.len())];
            let verb = VERBS[pick(VERBS.len())];
            let int = INTENSIFIERS[pick(INTENSIFIERS.len())];
            let tail = TAILS[pick(TAILS.len())];
            let text = format!("{subject} {verb} {int}{adj} {tail}.");
            Sample {
                id: format!("sst2-{i}"),
                fields: [("sentence".to_string(), text)]
                    .into_iter()
                    .collect::<FieldMap>(),
                label: label.to_string(),
                benchmark: "sst2".into(),
                split: None,
            }
        })
        .collect()
}

pub fn sst2_dataset(n: usize, offset: usize) -> Dataset {
    Dataset {
        spec: preset("sst2").unwrap(),
        samples: sst2_samples(n, offset),
    }
}

pub fn sst2_train_pool(n: usize) -> Dataset {
    let mut d = sst2_dataset(n, 1000);
    d.mark_split("train");
    d
}

/// Writes a test set of `n` samples and a 40-sample training pool plus a
/// config file into `dir`; returns the config path.
pub fn write_fixture(dir: &Path, n: usize, extra_toml: &str) -> std::path::PathBuf {
    write_dataset(&dir.join("test.jsonl"), &sst2_samples(n, 0)).unwrap();
    let mut pool = sst2_samples(40, 1000);
    for s in &mut pool {
        s.split = Some("train".into());
    }
    write_dataset(&dir.join("train.jsonl"), &pool).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "benchmark = \"sst2\"\ndataset = \"test.jsonl\"\ntrain_pool = \"train.jsonl\"\noutput_dir = \"out\"\n{extra_toml}"
        ),
    )
    .unwrap();
    cfg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, answered by `handler`.
pub struct StubServer {
    pub base: String,
    pub requests: Arc<Mutex<Vec<Request>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&Request) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        StubServer { base, requests }
    }

    pub fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Request>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 {
            break;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok();
    let req = Request {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let (status, body) = handler(&req);
    log.lock().unwrap().push(req);
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = out.flush();
}
