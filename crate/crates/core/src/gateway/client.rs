//! Minimal protocol client, used by the simulator and the tests.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

use super::protocol::{ClientEvent, Envelope};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("cannot connect to {url}: {message}")]
    Connect { url: String, message: String },
    #[error("connection closed")]
    Closed,
    #[error("no message within {0:?}")]
    Timeout(Duration),
}

pub struct Client {
    outgoing: mpsc::UnboundedSender<Message>,
    incoming: mpsc::UnboundedReceiver<Envelope>,
    sender: String,
    room_id: String,
}

impl Client {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url)
            .await
            .map_err(|e| ClientError::Connect {
                url: url.to_string(),
                message: e.to_string(),
            })?;
        let (mut sink, mut source) = ws.split();
        let (outgoing, mut out_rx) = mpsc::unbounded_channel::<Message>();
        let (in_tx, incoming) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    msg = out_rx.recv() => match msg {
                        Some(m) => {
                            let close = matches!(m, Message::Close(_));
                            if sink.send(m).await.is_err() || close {
                                break;
                            }
                        }
                        None => {
                            let _ = sink.send(Message::Close(None)).await;
                            break;
                        }
                    },
                    frame = source.next() => match frame {
                        Some(Ok(Message::Text(text))) => match Envelope::parse(text.as_str()) {
                            Ok(env) => {
                                if in_tx.send(env).is_err() {
                                    break;
                                }
                            }
                            Err(e) => tracing::warn!(error = %e, "dropping unparseable frame"),
                        },
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                        Some(Ok(_)) => {
                            // Pings are answered by the websocket layer; flush
                            // the queued pong.
                            let _ = sink.flush().await;
                        }
                    },
                }
            }
        });
        Ok(Client {
            outgoing,
            incoming,
            sender: String::new(),
            room_id: String::new(),
        })
    }

    /// Name and room stamped on outgoing envelopes.
    pub fn set_identity(&mut self, sender: &str, room_id: &str) {
        self.sender = sender.to_string();
        self.room_id = room_id.to_string();
    }

    pub fn send(&self, event: &ClientEvent) -> Result<(), ClientError> {
        let env = event.to_envelope(&self.room_id, &self.sender);
        self.send_raw(env.to_json())
    }

    /// Sends `text` as one frame, unchecked.
    pub fn send_raw(&self, text: String) -> Result<(), ClientError> {
        self.outgoing.send(Message::text(text)).map_err(|_| ClientError::Closed)
    }

    pub async fn recv(&mut self) -> Option<Envelope> {
        self.incoming.recv().await
    }

    pub async fn recv_timeout(&mut self, timeout: Duration) -> Result<Envelope, ClientError> {
        match tokio::time::timeout(timeout, self.incoming.recv()).await {
            Ok(Some(env)) => Ok(env),
            Ok(None) => Err(ClientError::Closed),
            Err(_) => Err(ClientError::Timeout(timeout)),
        }
    }

    /// Waits for the first envelope satisfying `pred`, discarding others.
    pub async fn recv_until<F>(&mut self, timeout: Duration, mut pred: F) -> Result<Envelope, ClientError>
    where
        F: FnMut(&Envelope) -> bool,
    {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let env = self.recv_timeout(left).await.map_err(|e| match e {
                ClientError::Timeout(_) => ClientError::Timeout(timeout),
                other => other,
            })?;
            if pred(&env) {
                return Ok(env);
            }
        }
    }

    /// Envelopes already received, without waiting.
    pub fn drain(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        while let Ok(env) = self.incoming.try_recv() {
            out.push(env);
        }
        out
    }

    /// Closes the socket.
    pub fn close(self) {
        let _ = self.outgoing.send(Message::Close(None));
    }
}
