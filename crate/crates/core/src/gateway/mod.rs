//! Realtime websocket gateway: wire protocol, per-room actors, the server
//! and a client.

pub mod client;
pub mod protocol;
mod room;
mod server;

pub use client::{Client, ClientError};
pub use server::{ClockMode, Gateway, GatewayConfig, RunningGateway};
