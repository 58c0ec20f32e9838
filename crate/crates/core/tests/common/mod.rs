#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use discourse_core::dataset::{Dataset, Passage, QaKind, QaPair};
use discourse_core::gateway::{Client, ClockMode, Gateway, GatewayConfig, RunningGateway};
use discourse_core::provider::{ScriptedProvider, SharedProvider};
use discourse_core::{ClientEvent, EngineConfig, Envelope};

pub const WAIT: Duration = Duration::from_secs(10);

pub fn passage(id: &str, questions: usize) -> Passage {
    Passage {
        passage_id: id.into(),
        title: format!("Story {id}"),
        body: "A cat asked an old buck to carry her to the fair, and sang to him on the way.".into(),
        qa_pairs: (0..questions)
            .map(|i| QaPair {
                question: format!("Question {i}?"),
                answer: format!("Answer {i}."),
                kind: if i % 2 == 0 { QaKind::Explicit } else { QaKind::Implicit },
            })
            .collect(),
    }
}

pub fn dataset() -> Arc<Dataset> {
    Arc::new(Dataset {
        name: "fixture".into(),
        source_digest: String::new(),
        passages: vec![passage("p1", 3)],
        load_warnings: Vec::new(),
    })
}

pub fn scripted() -> SharedProvider {
    Arc::new(ScriptedProvider::demo_moderator())
}

pub fn config(capacity: usize, max_questions: usize, turn_timeout: Duration) -> GatewayConfig {
    GatewayConfig {
        engine: EngineConfig {
            capacity,
            max_questions,
            turn_timeout,
            ..EngineConfig::default()
        },
        clock: ClockMode::Logical,
        ..GatewayConfig::default()
    }
}

pub async fn start(provider: SharedProvider, config: GatewayConfig) -> RunningGateway {
    Gateway::new(dataset(), provider, config)
        .unwrap()
        .bind("127.0.0.1:0")
        .await
        .unwrap()
}

pub async fn create(url: &str, name: &str) -> (Client, String) {
    let mut c = Client::connect(url).await.unwrap();
    c.send(&ClientEvent::CreateRoom {
        display_name: name.into(),
    })
    .unwrap();
    let env = c.recv_until(WAIT, |e| e.kind == "room_created").await.unwrap();
    let room = env.payload["room_id"].as_str().unwrap().to_string();
    c.set_identity(name, &room);
    (c, room)
}

/// Joins and returns the client without consuming anything it received.
pub async fn join(url: &str, room: &str, name: &str, backfill_from: Option<u64>) -> Client {
    let mut c = Client::connect(url).await.unwrap();
    c.set_identity(name, room);
    c.send(&ClientEvent::JoinRoom {
        room_id: room.into(),
        display_name: name.into(),
        backfill_from,
    })
    .unwrap();
    c
}

/// Collects envelopes until one satisfies `stop` (inclusive).
pub async fn collect_until<F: Fn(&Envelope) -> bool>(c: &mut Client, stop: F) -> Vec<Envelope> {
    let mut out = Vec::new();
    loop {
        let env = c.recv_timeout(WAIT).await.expect("envelope before timeout");
        let done = stop(&env);
        out.push(env);
        if done {
            return out;
        }
    }
}

pub fn is_action(env: &Envelope, kind: &str) -> bool {
    env.kind == "moderator_message" && env.payload["action"]["kind"] == kind
}
