//! Wire envelopes. Requests `{id, method, params}`, responses
//! `{id, ok, result | error}`, events `{event, data}`; one JSON document per
//! frame.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

pub const PARSE_ERROR: i64 = -32700;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const OP_ERROR: i64 = -32000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: i64,
    pub method: String,
    #[serde(default)]
    pub params: Map<String, Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message} ({code})")]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Json>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), data: None }
    }

    pub fn with_data(mut self, data: Json) -> Self {
        self.data = Some(data);
        self
    }

    /// Domain failure carrying its short code in `data.code`.
    pub fn op(code: &str, message: impl Into<String>) -> Self {
        Self::new(OP_ERROR, message).with_data(serde_json::json!({ "code": code }))
    }

    /// The short domain code, when there is one.
    pub fn op_code(&self) -> Option<&str> {
        self.data.as_ref()?.get("code")?.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<i64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl Response {
    pub fn success(id: i64, result: Json) -> Self {
        Self { id: Some(id), ok: true, result: Some(result), error: None }
    }

    pub fn failure(id: Option<i64>, error: RpcError) -> Self {
        Self { id, ok: false, result: None, error: Some(error) }
    }

    pub fn into_result(self) -> Result<Json, RpcError> {
        match (self.ok, self.result, self.error) {
            (true, r, _) => Ok(r.unwrap_or(Json::Null)),
            (false, _, Some(e)) => Err(e),
            (false, _, None) => Err(RpcError::new(OP_ERROR, "error response without error object")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event: String,
    pub data: Json,
}

/// Anything a server may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Envelope {
    Response(Response),
    Event(Event),
}

impl Envelope {
    pub fn to_frame(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

/// Splits a frame into a request, or the response that rejects it.
pub fn decode_request(frame: &str) -> Result<Request, Response> {
    let v: Json = serde_json::from_str(frame)
        .map_err(|e| Response::failure(None, RpcError::new(PARSE_ERROR, format!("parse error: {e}"))))?;
    let Json::Object(mut obj) = v else {
        return Err(Response::failure(None, RpcError::new(INVALID_PARAMS, "request must be a JSON object")));
    };
    let id = match obj.remove("id") {
        Some(Json::Number(n)) if n.is_i64() => n.as_i64().expect("checked"),
        _ => return Err(Response::failure(None, RpcError::new(INVALID_PARAMS, "request id must be an integer"))),
    };
    let bad = |m: String| Err(Response::failure(Some(id), RpcError::new(INVALID_PARAMS, m)));
    let method = match obj.remove("method") {
        Some(Json::String(m)) => m,
        _ => return bad("method must be a string".into()),
    };
    let params = match obj.remove("params") {
        None | Some(Json::Null) => Map::new(),
        Some(Json::Object(p)) => p,
        Some(_) => return bad("params must be an object".into()),
    };
    if let Some(k) = obj.keys().next() {
        return bad(format!("unexpected request field {k}"));
    }
    Ok(Request { id, method, params })
}
