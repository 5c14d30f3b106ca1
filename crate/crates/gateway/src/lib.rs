//! Network front end for the simulated microscope: newline-delimited JSON
//! over TCP, or WebSocket text frames on the same port.

pub mod client;
pub mod protocol;
pub mod server;

pub use client::{Client, ClientError};
pub use protocol::{decode_request, Envelope, Event, Request, Response, RpcError};
pub use server::{Gateway, GatewayConfig, GatewayError, Session};
