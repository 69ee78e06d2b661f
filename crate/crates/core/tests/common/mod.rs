#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotaug::corpus::{Dataset, Utterance};
use slotaug::generator::wire::GenerateRequest;
use slotaug::generator::Lexicon;

pub const SLOT_TYPES: &[&str] = &[
    "city",
    "time_range",
    "restaurant_type",
    "artist",
    "playlist",
    "condition_description",
];

pub const INTENTS: &[&str] = &["BookRestaurant", "GetWeather", "PlayMusic", "AddToPlaylist"];

/// A value for slot type `ty`: 1-3 tokens unique to this (type, index) pair,
/// so no value is ever a sub-sequence of another value or of the context.
fn value(ty: usize, k: usize, len: usize) -> Vec<String> {
    (0..len).map(|m| format!("v{ty}x{k}x{m}")).collect()
}

/// Random corpus over disjoint context and value vocabularies.
pub fn random_corpus(seed: u64, n: usize, min_slots: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utterances = Vec::with_capacity(n);
    for _ in 0..n {
        let slots = rng.gen_range(min_slots..=3);
        let mut tokens: Vec<String> = Vec::new();
        let mut tags: Vec<String> = Vec::new();
        let push_context = |rng: &mut ChaCha8Rng,
                            tokens: &mut Vec<String>,
                            tags: &mut Vec<String>,
                            at_least: usize| {
            for _ in 0..rng.gen_range(at_least..=3) {
                tokens.push(format!("c{}", rng.gen_range(0..60)));
                tags.push("O".into());
            }
        };
        push_context(&mut rng, &mut tokens, &mut tags, 0);
        for s in 0..slots {
            let ty = rng.gen_range(0..SLOT_TYPES.len());
            let k = rng.gen_range(0..8);
            let len = 1 + (k % 3);
            for (m, tok) in value(ty, k, len).into_iter().enumerate() {
                tokens.push(tok);
                tags.push(format!(
                    "{}-{}",
                    if m == 0 { "B" } else { "I" },
                    SLOT_TYPES[ty]
                ));
            }
            push_context(&mut rng, &mut tokens, &mut tags, usize::from(s + 1 < slots));
        }
        if tokens.is_empty() {
            tokens.push("c0".into());
            tags.push("O".into());
        }
        let intent = INTENTS.choose(&mut rng).unwrap();
        utterances.push(Utterance::new(tokens, tags, *intent).unwrap());
    }
    Dataset::new(format!("random-{seed}"), utterances)
}

/// Small restaurant/weather corpus in plain English, every utterance distinct
/// and carrying at least one slot.
pub fn toy_corpus(n: usize) -> Dataset {
    let cities = [
        "new york city",
        "boston",
        "san diego",
        "paris",
        "chicago",
        "austin",
        "denver",
    ];
    let times = [
        "tomorrow",
        "this evening",
        "tonight",
        "next friday",
        "at noon",
    ];
    let kinds = ["pizzeria", "diner", "sushi bar", "brasserie"];
    let mut utterances = Vec::with_capacity(n);
    for i in 0..n {
        let city = cities[i % cities.len()];
        let time = times[(i / cities.len()) % times.len()];
        let kind = kinds[(i / 3) % kinds.len()];
        let (text, tags, intent): (Vec<&str>, Vec<String>, &str) = match i % 3 {
            0 => {
                let mut t = vec!["book", "a", "table", "somewhere", "in"];
                let mut g = vec!["O".to_string(); 5];
                push_value(&mut t, &mut g, city, "city");
                t.push("for");
                g.push("O".into());
                push_value(&mut t, &mut g, time, "time_range");
                (t, g, "BookRestaurant")
            }
            1 => {
                let mut t = vec!["will", "it", "rain", "in"];
                let mut g = vec!["O".to_string(); 4];
                push_value(&mut t, &mut g, city, "city");
                push_value(&mut t, &mut g, time, "time_range");
                (t, g, "GetWeather")
            }
            _ => {
                let mut t = vec!["find", "me", "a"];
                let mut g = vec!["O".to_string(); 3];
                push_value(&mut t, &mut g, kind, "restaurant_type");
                t.push("near");
                g.push("O".into());
                push_value(&mut t, &mut g, city, "city");
                (t, g, "BookRestaurant")
            }
        };
        // a counter word keeps every sentence distinct
        let mut text: Vec<String> = text.into_iter().map(str::to_string).collect();
        let mut tags = tags;
        text.push(format!("please{i}"));
        tags.push("O".into());
        utterances.push(Utterance::new(text, tags, intent).unwrap());
    }
    Dataset::new("toy", utterances)
}

fn push_value<'a>(t: &mut Vec<&'a str>, g: &mut Vec<String>, value: &'a str, ty: &str) {
    for (m, w) in value.split(' ').enumerate() {
        t.push(w);
        g.push(format!("{}-{ty}", if m == 0 { "B" } else { "I" }));
    }
}

/// Values built from tokens that occur nowhere in `d`.
pub fn disjoint_lexicon(d: &Dataset, per_type: usize) -> Lexicon {
    let dict = slotaug::corpus::build_slot_dictionary(d);
    let mut lex = Lexicon::default();
    for (ty, _) in dict.iter() {
        for k in 0..per_type {
            lex.insert(
                ty.clone(),
                &format!("novel{k}{} place{k}", ty.replace('_', "")),
            );
        }
    }
    lex
}

pub type Handler = dyn Fn(&GenerateRequest, usize) -> (u16, String) + Send + Sync;

/// A `POST /generate` stub answering each call on its own thread.
pub struct StubServer {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        Self::start_with_delay(handler, std::time::Duration::ZERO)
    }

    pub fn start_with_delay(handler: Arc<Handler>, delay: std::time::Duration) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let calls = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let calls = Arc::clone(&calls);
            let max_in_flight = Arc::clone(&max_in_flight);
            thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let handler = Arc::clone(&handler);
                    let call = calls.fetch_add(1, Ordering::SeqCst);
                    let in_flight = Arc::clone(&in_flight);
                    let max_in_flight = Arc::clone(&max_in_flight);
                    thread::spawn(move || {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let mut body = String::new();
                        request.as_reader().read_to_string(&mut body).unwrap();
                        let (status, reply) = if request.url() != "/generate" {
                            (404, String::new())
                        } else {
                            match serde_json::from_str::<GenerateRequest>(&body) {
                                Ok(req) => handler(&req, call),
                                Err(e) => (400, e.to_string()),
                            }
                        };
                        thread::sleep(delay);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let _ = request.respond(
                            tiny_http::Response::from_string(reply).with_status_code(status),
                        );
                    });
                }
            })
        };
        StubServer {
            url: format!("http://127.0.0.1:{port}"),
            calls,
            max_in_flight,
            server,
            handle: Some(handle),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Replies with each input repeated `num_return_sequences` times.
pub fn echo_handler() -> Arc<Handler> {
    Arc::new(|req: &GenerateRequest, _| {
        let outputs: Vec<Vec<String>> = req
            .inputs
            .iter()
            .map(|s| vec![s.clone(); req.num_return_sequences])
            .collect();
        (200, serde_json::json!({ "outputs": outputs }).to_string())
    })
}
