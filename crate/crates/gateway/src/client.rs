//! Blocking newline-delimited JSON client.

use crate::protocol::{Envelope, Event, Request, RpcError};
use serde_json::{Map, Value as Json};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server closed the connection")]
    Closed,
    #[error("undecodable frame from server: {0}")]
    Frame(String),
    #[error(transparent)]
    Rpc(#[from] RpcError),
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: i64,
    /// Events received while waiting for responses, oldest first.
    pub events: Vec<Event>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let writer = TcpStream::connect(addr)?;
        let reader = BufReader::new(writer.try_clone()?);
        Ok(Self { reader, writer, next_id: 1, events: Vec::new() })
    }

    /// Writes one raw line; the caller supplies no newline.
    pub fn send_raw(&mut self, frame: &str) -> io::Result<()> {
        self.writer.write_all(frame.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    /// Next frame of any kind.
    pub fn read_envelope(&mut self) -> Result<Envelope, ClientError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Closed);
        }
        serde_json::from_str(line.trim_end()).map_err(|e| ClientError::Frame(format!("{e}: {line}")))
    }

    /// Next response, stashing events on the way.
    pub fn read_response(&mut self) -> Result<crate::protocol::Response, ClientError> {
        loop {
            match self.read_envelope()? {
                Envelope::Response(r) => return Ok(r),
                Envelope::Event(e) => self.events.push(e),
            }
        }
    }

    pub fn send(&mut self, method: &str, params: Json) -> Result<i64, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let params = match params {
            Json::Object(m) => m,
            Json::Null => Map::new(),
            other => return Err(ClientError::Frame(format!("params must be an object, got {other}"))),
        };
        let req = Request { id, method: method.to_string(), params };
        self.send_raw(&serde_json::to_string(&req).expect("request serializes"))?;
        Ok(id)
    }

    /// Sends a request and waits for its response; responses to other ids
    /// arriving first are dropped.
    pub fn call(&mut self, method: &str, params: Json) -> Result<Json, ClientError> {
        let id = self.send(method, params)?;
        loop {
            let r = self.read_response()?;
            if r.id == Some(id) {
                return r.into_result().map_err(ClientError::Rpc);
            }
        }
    }
}
