use crate::protocol::{decode_request, Envelope, Event, Request, Response, RpcError, INVALID_PARAMS, METHOD_NOT_FOUND};
use aescope_core::assistant::{extract_protocol, propose_plan, AssistantError, AssistantExchange, LlmClient, LlmClientConfig};
use aescope_core::dataset::StoreError;
use aescope_core::experiment_log::{reconstruct_plan, summarize_log};
use aescope_core::tools::{build_tool_registry, invoke, invoke_readonly, Args, ToolError, ToolKind, Value};
use aescope_core::workflow::{execute_plan, parse_plan, plan_fingerprint, validate_plan, Approval, ExecError};
use aescope_core::{ApiError, CancelToken, DatasetStore, ExperimentLog, Microscope, MicroscopeConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};
use std::collections::HashSet;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, RwLock, TryLockError};
use std::thread;
use std::time::Duration;
use thiserror::Error;
use tungstenite::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub microscope: MicroscopeConfig,
    pub data_dir: PathBuf,
    /// Experiment log appended to by every instrument call.
    pub log_path: Option<PathBuf>,
    /// Shared secret clients must present through `authenticate`.
    pub token: Option<String>,
    pub llm: LlmClientConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            microscope: MicroscopeConfig::default(),
            data_dir: PathBuf::from("aescope-data"),
            log_path: None,
            token: None,
            llm: LlmClientConfig::Mock,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("instrument: {0}")]
    Instrument(#[from] ApiError),
    #[error("dataset store: {0}")]
    Store(#[from] StoreError),
    #[error("experiment log: {0}")]
    Log(#[from] aescope_core::experiment_log::LogError),
    #[error("network: {0}")]
    Io(#[from] io::Error),
}

type Subscribers = Mutex<Vec<(u64, Sender<String>)>>;

struct Shared {
    scope: RwLock<Microscope>,
    cancel: CancelToken,
    plan_lock: Mutex<()>,
    store: Arc<DatasetStore>,
    token: Option<String>,
    llm: Box<dyn LlmClient>,
    subscribers: Arc<Subscribers>,
    next_conn: AtomicU64,
}

/// Per-connection state.
#[derive(Default)]
pub struct Session {
    authenticated: AtomicBool,
    ids: Mutex<HashSet<i64>>,
}

/// The request handler shared by every connection.
#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

fn broadcast(subs: &Subscribers, frame: &str) {
    let mut subs = subs.lock().expect("subscriber lock");
    subs.retain(|(_, tx)| tx.send(frame.to_string()).is_ok());
}

fn lock_poisoned() -> RpcError {
    RpcError::op("internal", "instrument lock poisoned by an earlier panic")
}

fn tool_error(e: ToolError) -> RpcError {
    match e {
        ToolError::UnknownOp(op) => RpcError::new(METHOD_NOT_FOUND, format!("unknown method {op}")),
        ToolError::InvalidParams(d) => RpcError::new(INVALID_PARAMS, "invalid parameters").with_data(json!({ "diagnostics": d })),
        ToolError::Api(e) => {
            let mut data = json!({ "code": e.code() });
            if let Some(extra) = e.data() {
                data["violations"] = extra;
            }
            RpcError::new(crate::protocol::OP_ERROR, e.to_string()).with_data(data)
        }
        ToolError::Analysis { code, message } => RpcError::op(code, message),
    }
}

fn assistant_error(e: AssistantError) -> RpcError {
    let code = e.code();
    let msg = e.to_string();
    match e {
        AssistantError::UnparseableReply(ex) | AssistantError::ValidationFailed(ex) => {
            RpcError::op(code, msg).with_data(json!({ "code": code, "exchange": *ex }))
        }
        _ => RpcError::op(code, msg),
    }
}

/// Wire form of tool outputs: datasets are referred to by `dataset_id`.
pub fn outputs_json(out: &aescope_core::tools::Outputs) -> Json {
    Json::Object(
        out.iter()
            .filter(|(_, v)| !matches!(v, Value::Dataset(_)))
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect(),
    )
}

fn params_args(params: &Map<String, Json>) -> Args {
    params.iter().map(|(k, v)| (k.clone(), Value::Json(v.clone()))).collect()
}

fn take<T: serde::de::DeserializeOwned>(params: &Map<String, Json>, key: &str) -> Result<T, RpcError> {
    let v = params.get(key).cloned().unwrap_or(Json::Null);
    serde_json::from_value(v).map_err(|e| RpcError::new(INVALID_PARAMS, format!("{key}: {e}")))
}

fn plan_param(params: &Map<String, Json>) -> Result<aescope_core::WorkflowPlan, RpcError> {
    let text = match params.get("plan") {
        Some(Json::String(s)) => s.clone(),
        Some(v @ Json::Object(_)) => v.to_string(),
        _ => return Err(RpcError::new(INVALID_PARAMS, "plan must be a plan document or its text")),
    };
    parse_plan(&text).map_err(|e| RpcError::new(INVALID_PARAMS, e.to_string()))
}

impl Gateway {
    pub fn new(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let mut scope = Microscope::new(&cfg.microscope)?;
        let store = Arc::new(DatasetStore::open(&cfg.data_dir)?);
        scope.set_store(Some(store.clone()));
        if let Some(p) = &cfg.log_path {
            scope.set_log(ExperimentLog::open(p)?);
        }
        let subscribers: Arc<Subscribers> = Arc::default();
        let subs = subscribers.clone();
        scope.set_event_sink(Some(Arc::new(move |event: &str, data: Json| {
            let frame = Envelope::Event(Event { event: event.to_string(), data }).to_frame();
            broadcast(&subs, &frame);
        })));
        let cancel = scope.cancel_token();
        Ok(Self {
            shared: Arc::new(Shared {
                scope: RwLock::new(scope),
                cancel,
                plan_lock: Mutex::new(()),
                store,
                token: cfg.token.clone(),
                llm: cfg.llm.build(),
                subscribers,
                next_conn: AtomicU64::new(1),
            }),
        })
    }

    pub fn store(&self) -> &Arc<DatasetStore> {
        &self.shared.store
    }

    /// Registers a receiver for event frames; returns its handle.
    pub fn subscribe(&self, tx: Sender<String>) -> u64 {
        let id = self.shared.next_conn.fetch_add(1, Ordering::Relaxed);
        self.shared.subscribers.lock().expect("subscriber lock").push((id, tx));
        id
    }

    pub fn unsubscribe(&self, id: u64) {
        self.shared.subscribers.lock().expect("subscriber lock").retain(|(i, _)| *i != id);
    }

    /// Answers one frame. Every frame gets exactly one response.
    pub fn handle_frame(&self, session: &Session, frame: &str) -> Response {
        match decode_request(frame) {
            Err(resp) => resp,
            Ok(req) => self.handle_request(session, req),
        }
    }

    pub fn handle_request(&self, session: &Session, req: Request) -> Response {
        if !session.ids.lock().expect("id lock").insert(req.id) {
            return Response::failure(
                None,
                RpcError::new(INVALID_PARAMS, format!("request id {} was already used on this connection", req.id)),
            );
        }
        match self.dispatch(session, &req.method, &req.params) {
            Ok(v) => Response::success(req.id, v),
            Err(e) => Response::failure(Some(req.id), e),
        }
    }

    fn dispatch(&self, session: &Session, method: &str, params: &Map<String, Json>) -> Result<Json, RpcError> {
        let sh = &self.shared;
        if method == "authenticate" {
            let token: String = take(params, "token")?;
            if sh.token.as_deref().is_some_and(|t| t != token) {
                return Err(RpcError::op("unauthorized", "token rejected"));
            }
            session.authenticated.store(true, Ordering::SeqCst);
            return Ok(json!({ "authenticated": true }));
        }
        if sh.token.is_some() && !session.authenticated.load(Ordering::SeqCst) {
            return Err(RpcError::op("unauthorized", "call authenticate first"));
        }
        match method {
            "cancel" => {
                sh.cancel.cancel();
                Ok(json!({ "cancelled": true }))
            }
            "status" => {
                let busy = matches!(sh.plan_lock.try_lock(), Err(TryLockError::WouldBlock));
                let scope = sh.scope.try_read();
                let state = match &scope {
                    Ok(s) => serde_json::to_value(s.state()).expect("state serializes"),
                    Err(_) => Json::Null,
                };
                Ok(json!({ "plan_running": busy, "acquiring": scope.is_err(), "state": state }))
            }
            "list_tools" => Ok(serde_json::to_value(build_tool_registry().tools()).expect("registry serializes")),
            "validate_plan" => {
                let plan = plan_param(params)?;
                let diagnostics = validate_plan(&plan, build_tool_registry()).err().unwrap_or_default();
                Ok(json!({
                    "ok": diagnostics.is_empty(),
                    "diagnostics": diagnostics,
                    "fingerprint": plan_fingerprint(&plan),
                }))
            }
            "run_plan" => self.run_plan(params),
            "load_dataset" => {
                let id: String = take(params, "id")?;
                let with_data = params.get("include_data").and_then(Json::as_bool).unwrap_or(false);
                let ds = sh.store.load(&id).map_err(|e| match &e {
                    StoreError::NotFound(_) => RpcError::op("not-found", e.to_string()),
                    _ => RpcError::op("corrupt-channel", e.to_string()),
                })?;
                let channels: Map<String, Json> = ds
                    .channels
                    .iter()
                    .map(|(name, ch)| {
                        let mut d = json!({ "shape": ch.shape, "units": ch.units, "dtype": ch.data.dtype() });
                        if with_data {
                            d["data"] = json!(ch.data.to_f64());
                        }
                        (name.clone(), d)
                    })
                    .collect();
                Ok(json!({ "id": id, "name": ds.name, "metadata": ds.metadata, "channels": channels }))
            }
            "log_records" => {
                let since = params.get("since").and_then(Json::as_u64).unwrap_or(0);
                let scope = sh.scope.read().map_err(|_| lock_poisoned())?;
                let recs: Vec<_> = scope.log().records().iter().filter(|r| r.seq > since).collect();
                Ok(serde_json::to_value(recs).expect("records serialize"))
            }
            "summarize_log" => {
                let scope = sh.scope.read().map_err(|_| lock_poisoned())?;
                Ok(json!({ "summary": summarize_log(scope.log().records()) }))
            }
            "reconstruct_plan" => {
                let scope = sh.scope.read().map_err(|_| lock_poisoned())?;
                let r = reconstruct_plan(scope.log().records());
                Ok(json!({ "plan": r.plan, "skipped": r.skipped, "fingerprint": plan_fingerprint(&r.plan) }))
            }
            "propose_plan" => {
                let instruction: String = take(params, "instruction")?;
                let _quiet = sh.scope.read().map_err(|_| lock_poisoned())?;
                let ex = propose_plan(&instruction, AssistantExchange::default(), sh.llm.as_ref()).map_err(assistant_error)?;
                let fingerprint = ex.approve().ok().map(|a| a.fingerprint().to_string());
                Ok(json!({ "exchange": ex, "executable": ex.is_executable(), "fingerprint": fingerprint }))
            }
            "extract_protocol" => {
                let text: String = take(params, "text")?;
                let _quiet = sh.scope.read().map_err(|_| lock_poisoned())?;
                let x = extract_protocol(&text, sh.llm.as_ref()).map_err(assistant_error)?;
                Ok(serde_json::to_value(x).expect("extraction serializes"))
            }
            op => {
                let tool = build_tool_registry()
                    .get(op)
                    .ok_or_else(|| RpcError::new(METHOD_NOT_FOUND, format!("unknown method {op}")))?;
                let args = params_args(params);
                let out = if tool.kind == ToolKind::Instrument {
                    let mut scope = sh.scope.write().map_err(|_| lock_poisoned())?;
                    invoke(&mut scope, op, &args)
                } else {
                    let scope = sh.scope.read().map_err(|_| lock_poisoned())?;
                    invoke_readonly(&scope, op, &args)
                };
                out.map(|o| outputs_json(&o)).map_err(tool_error)
            }
        }
    }

    fn run_plan(&self, params: &Map<String, Json>) -> Result<Json, RpcError> {
        let sh = &self.shared;
        let plan = plan_param(params)?;
        let approval: String = take(params, "approval")?;
        let queue = params.get("queue").and_then(Json::as_bool).unwrap_or(false);
        let _running = if queue {
            sh.plan_lock.lock().map_err(|_| lock_poisoned())?
        } else {
            match sh.plan_lock.try_lock() {
                Ok(g) => g,
                Err(TryLockError::WouldBlock) => {
                    return Err(RpcError::op("busy", "a plan is already running; pass queue: true to wait"))
                }
                Err(TryLockError::Poisoned(_)) => return Err(lock_poisoned()),
            }
        };
        let mut scope = sh.scope.write().map_err(|_| lock_poisoned())?;
        match execute_plan(&plan, &Approval::from_fingerprint(&approval), &mut scope) {
            Ok(report) => Ok(serde_json::to_value(&report).expect("report serializes")),
            Err(ExecError::NotApproved) => Err(RpcError::op("not-approved", "approval does not match this plan")),
            Err(ExecError::Invalid(d)) => {
                Err(RpcError::new(INVALID_PARAMS, "plan failed validation").with_data(json!({ "diagnostics": d })))
            }
        }
    }

    /// Binds and serves on a background thread; returns the bound address.
    pub fn spawn(&self, addr: impl ToSocketAddrs) -> io::Result<SocketAddr> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let gw = self.clone();
        thread::spawn(move || gw.serve(listener));
        Ok(local)
    }

    /// Accept loop; each connection gets its own thread.
    pub fn serve(&self, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let gw = self.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = gw.connection(stream) {
                    log::debug!("connection {peer:?} ended: {e}");
                }
            });
        }
        Ok(())
    }

    fn connection(&self, stream: TcpStream) -> io::Result<()> {
        let mut buf = [0u8; 4];
        loop {
            let n = stream.peek(&mut buf)?;
            if n == 0 {
                return Ok(());
            }
            if buf[..n] != b"GET "[..n] {
                return self.ndjson(stream);
            }
            if n == 4 {
                return self.websocket(stream);
            }
            thread::sleep(Duration::from_millis(2));
        }
    }

    /// Answers a frame inline when it cannot be a valid request, otherwise
    /// on its own thread so long calls do not hold up `cancel`.
    fn submit(&self, session: &Arc<Session>, frame: String, tx: &Sender<String>) {
        match decode_request(&frame) {
            Err(resp) => {
                let _ = tx.send(Envelope::Response(resp).to_frame());
            }
            Ok(req) => {
                let (gw, session, tx) = (self.clone(), session.clone(), tx.clone());
                thread::spawn(move || {
                    let resp = gw.handle_request(&session, req);
                    let _ = tx.send(Envelope::Response(resp).to_frame());
                });
            }
        }
    }

    fn ndjson(&self, stream: TcpStream) -> io::Result<()> {
        let (tx, rx) = channel::<String>();
        let mut out = stream.try_clone()?;
        let writer = thread::spawn(move || {
            for frame in rx {
                if out.write_all(frame.as_bytes()).and_then(|_| out.write_all(b"\n")).is_err() {
                    break;
                }
            }
        });
        let sub = self.subscribe(tx.clone());
        let session = Arc::new(Session::default());
        let mut reader = BufReader::new(stream);
        let mut line = Vec::new();
        let result = loop {
            line.clear();
            match reader.read_until(b'\n', &mut line) {
                Ok(0) => break Ok(()),
                Ok(_) => {}
                Err(e) => break Err(e),
            }
            if line.last() == Some(&b'\n') {
                line.pop();
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
            }
            let frame = String::from_utf8_lossy(&line).into_owned();
            self.submit(&session, frame, &tx);
        };
        self.unsubscribe(sub);
        drop(tx);
        let _ = writer.join();
        result
    }

    fn websocket(&self, stream: TcpStream) -> io::Result<()> {
        let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
        let (tx, rx) = channel::<String>();
        let sub = self.subscribe(tx.clone());
        let session = Arc::new(Session::default());
        let result = loop {
            match ws.read() {
                Ok(Message::Text(t)) => self.submit(&session, t.to_string(), &tx),
                Ok(Message::Binary(b)) => self.submit(&session, String::from_utf8_lossy(&b).into_owned(), &tx),
                Ok(Message::Close(_)) => break Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break Ok(()),
                Err(e) => break Err(io::Error::other(e.to_string())),
            }
            let mut failed = None;
            while let Ok(frame) = rx.try_recv() {
                if let Err(e) = ws.send(Message::text(frame)) {
                    failed = Some(e);
                    break;
                }
            }
            if let Some(e) = failed {
                break Err(io::Error::other(e.to_string()));
            }
        };
        self.unsubscribe(sub);
        result
    }
}
