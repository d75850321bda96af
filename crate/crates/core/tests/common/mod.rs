#![allow(dead_code)]

use promptopt::evaluator::GoldWord;
use promptopt::{ClassList, RunConfig, SplitRole, SplitSpec, SyntheticEvaluator, SyntheticWorld};

pub fn classes(names: &[&str], role: SplitRole) -> ClassList {
    ClassList::new(names.iter().map(|s| s.to_string()).collect(), role).unwrap()
}

pub fn gold() -> Vec<GoldWord> {
    [("flower", 0.3), ("petals", 0.25), ("bloom", 0.2), ("garden", 0.2)]
        .into_iter()
        .map(|(w, weight)| GoldWord { word: w.into(), weight })
        .collect()
}

pub fn world(seed: u64, role: SplitRole, noise: f64) -> SyntheticWorld {
    let names: &[&str] = match role {
        SplitRole::Base => &["rose", "tulip", "daisy", "poppy"],
        SplitRole::Novel => &["lily", "orchid", "iris", "lotus"],
    };
    SyntheticWorld {
        seed,
        classes: classes(names, role),
        gold_keywords: gold(),
        images_per_class: 4,
        noise_amplitude: noise,
    }
}

pub fn evaluator(seed: u64) -> SyntheticEvaluator {
    SyntheticEvaluator::new("flowers", world(seed, SplitRole::Base, 0.05), world(seed + 1, SplitRole::Novel, 0.05))
        .unwrap()
}

pub fn run_config(max_steps: usize, patience: usize) -> RunConfig {
    let mut c = RunConfig::new(SplitSpec::base("flowers").with_shots(2), SplitSpec::novel("flowers").with_shots(2));
    c.max_steps = max_steps;
    c.patience = patience;
    c.llm.max_retries = 0;
    c.llm.retry_backoff_secs = 0.0;
    c
}

/// Candidate pool drawn from gold and filler words.
pub const POOL: [&str; 16] = [
    "a photo of a <CLASS>.",
    "a flower called <CLASS>.",
    "petals of the <CLASS>.",
    "a <CLASS> in bloom.",
    "a garden with <CLASS>.",
    "a flower with petals, <CLASS>.",
    "a <CLASS> flower in bloom.",
    "garden flower <CLASS>.",
    "an image of <CLASS>.",
    "a picture showing the <CLASS>.",
    "bloom of petals on a <CLASS>.",
    "a close-up of <CLASS>.",
    "a flower garden full of <CLASS> in bloom.",
    "a <CLASS> with petals.",
    "a blurry shot of a <CLASS>.",
    "the <CLASS>.",
];

/// One scripted reply per pool entry, each proposing a single bracketed template.
pub fn pool_replies(pool: &[&str]) -> Vec<String> {
    pool.iter().map(|t| format!("[{t}]")).collect()
}

pub mod stub {
    use std::sync::{Arc, Mutex};
    use std::thread;

    #[derive(Debug, Clone)]
    pub struct Seen {
        pub method: String,
        pub url: String,
        pub headers: Vec<(String, String)>,
        pub body: String,
    }

    pub struct Stub {
        pub url: String,
        pub seen: Arc<Mutex<Vec<Seen>>>,
    }

    impl Stub {
        pub fn requests(&self) -> Vec<Seen> {
            self.seen.lock().unwrap().clone()
        }
    }

    /// Serves requests on a loopback port with `handler(request) -> (status, json body)`.
    pub fn serve<F>(handler: F) -> Stub
    where
        F: Fn(&Seen) -> (u16, String) + Send + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for mut request in server.incoming_requests() {
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let entry = Seen {
                    method: request.method().to_string(),
                    url: request.url().to_string(),
                    headers: request
                        .headers()
                        .iter()
                        .map(|h| (h.field.to_string(), h.value.to_string()))
                        .collect(),
                    body,
                };
                let (status, reply) = handler(&entry);
                log.lock().unwrap().push(entry);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let response = tiny_http::Response::from_string(reply).with_status_code(status).with_header(header);
                let _ = request.respond(response);
            }
        });
        Stub { url, seen }
    }

    /// A loopback address with nothing listening on it.
    pub fn dead_url() -> String {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        format!("http://{addr}")
    }
}
