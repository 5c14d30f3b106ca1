use aescope_core::workflow::{plan_fingerprint, PlanSource, Step, WorkflowPlan};
use aescope_gateway::protocol::{INVALID_PARAMS, METHOD_NOT_FOUND, OP_ERROR, PARSE_ERROR};
use aescope_gateway::{decode_request, Client, ClientError, Envelope, Gateway, GatewayConfig, Response, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};
use tungstenite::Message;

fn config(dir: &Path) -> GatewayConfig {
    let mut cfg = GatewayConfig { data_dir: dir.join("data"), ..Default::default() };
    cfg.microscope.seed = 11;
    cfg
}

fn serve(cfg: &GatewayConfig) -> (Gateway, SocketAddr) {
    let gw = Gateway::new(cfg).unwrap();
    let addr = gw.spawn("127.0.0.1:0").unwrap();
    (gw, addr)
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(root).unwrap() {
        let dir = entry.unwrap().path();
        for f in std::fs::read_dir(&dir).unwrap() {
            let f = f.unwrap().path();
            out.insert(f.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap());
        }
    }
    out
}

fn session_calls() -> Vec<(&'static str, Json)> {
    vec![
        ("define_be_parms", json!({ "center_frequency_khz": 352.0, "num_bins": 32 })),
        ("tip_control", json!({ "x_um": 1.0, "y_um": 2.0 })),
        ("do_line_scan", json!({ "start": [0.5, 0.5], "end": [4.5, 2.5], "num_points": 9 })),
        ("raster_scan", json!({ "region": [0.0, 0.0, 5.0, 5.0], "ny": 6, "nx": 5 })),
        ("tip_control", json!({ "x_um": 9.0, "y_um": 2.0 })),
        ("apply_pulse", json!({ "v": 6.0 })),
        ("spiral_waveform", json!({ "center": [2.5, 2.5], "r_max_um": 1.0 })),
        ("roughness", json!({ "image": [[0.0, 1.0], [0.0, 1.0]] })),
        ("mean_spectrum", json!({ "dataset": "ds-000002" })),
        ("fit_sho", json!({ "spectrum": { "frequency_hz": [1.0], "amplitude": [1.0], "phase_rad": [0.0] } })),
        ("do_beps_specific", json!({ "locations": [[1.0, 1.0]], "bias_waveform": [0.0, 4.0, -4.0, 0.0] })),
        ("frobnicate", json!({})),
        ("log_records", json!({})),
        ("summarize_log", json!({})),
        ("reconstruct_plan", json!({})),
    ]
}

#[test]
fn in_process_and_wire_agree_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();

    let local = Gateway::new(&config(a.path())).unwrap();
    let session = Session::default();
    let mut direct = Vec::new();
    for (i, (m, p)) in session_calls().into_iter().enumerate() {
        let frame = json!({ "id": i as i64 + 1, "method": m, "params": p }).to_string();
        direct.push(Envelope::Response(local.handle_frame(&session, &frame)).to_frame());
    }

    let (_gw, addr) = serve(&config(b.path()));
    let mut c = Client::connect(addr).unwrap();
    let mut wire = Vec::new();
    for (m, p) in session_calls() {
        let id = c.send(m, p).unwrap();
        let r = c.read_response().unwrap();
        assert_eq!(r.id, Some(id));
        wire.push(Envelope::Response(r).to_frame());
    }
    assert_eq!(direct, wire);

    let ta = tree(&a.path().join("data"));
    assert_eq!(ta.keys().filter(|k| k.ends_with("manifest.json")).count(), 3);
    assert_eq!(ta, tree(&b.path().join("data")));

    // spot checks on the shared transcript
    let resp: Vec<Response> = wire.iter().map(|f| serde_json::from_str(f).unwrap()).collect();
    assert_eq!(resp[4].error.as_ref().unwrap().op_code(), Some("out-of-window"));
    assert_eq!(resp[7].result.as_ref().unwrap()["roughness_um"], json!(0.5));
    assert_eq!(resp[11].error.as_ref().unwrap().code, METHOD_NOT_FOUND);
    assert!(resp[3].result.as_ref().unwrap()["dataset_id"].as_str().unwrap().starts_with("ds-"));
    let steps = resp[14].result.as_ref().unwrap()["plan"]["steps"].as_array().unwrap().len();
    assert_eq!(steps, 6, "six ok instrument calls");
}

/// Frames that cannot be a valid request, by construction.
fn malformed(rng: &mut ChaCha8Rng) -> String {
    let valid = json!({ "id": rng.gen_range(-5i64..1000), "method": "status", "params": {} }).to_string();
    match rng.gen_range(0..8) {
        0 => {
            let n = rng.gen_range(0..40);
            (0..n).map(|_| rng.gen_range(0x20u8..0x7f) as char).collect()
        }
        1 => {
            let cut = rng.gen_range(0..valid.len());
            valid[..cut].to_string()
        }
        2 => {
            let mut bytes = valid.into_bytes();
            let i = rng.gen_range(0..bytes.len());
            bytes[i] = *b"{}[]\":,x\\".get(rng.gen_range(0..9)).unwrap();
            let s = String::from_utf8(bytes).unwrap();
            // a flip that still decodes is not malformed
            if decode_request(&s).is_ok() { "][".into() } else { s }
        }
        3 => ["1", "\"s\"", "null", "true", "[]", "[{\"id\":1}]", "-0.5"][rng.gen_range(0..7)].to_string(),
        4 => {
            let id = [json!(null), json!("7"), json!(1.5), json!([1]), json!({}), json!(true)][rng.gen_range(0..6)].clone();
            json!({ "id": id, "method": "status" }).to_string()
        }
        5 => json!({ "id": rng.gen_range(0i64..100), "method": rng.gen_range(0..9) }).to_string(),
        6 => json!({ "id": rng.gen_range(0i64..100), "method": "status", "params": [rng.gen_range(0..9)] }).to_string(),
        _ => json!({ "id": rng.gen_range(0i64..100), "method": "status", "junk": rng.gen::<u32>() }).to_string(),
    }
}

#[test]
fn ten_thousand_malformed_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (_gw, addr) = serve(&config(dir.path()));
    let stream = TcpStream::connect(addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let frames: Vec<String> = (0..10_000).map(|_| malformed(&mut rng)).collect();
    let writer = std::thread::spawn(move || {
        for f in &frames {
            w.write_all(f.as_bytes()).unwrap();
            w.write_all(b"\n").unwrap();
        }
        w
    });
    let mut r = BufReader::new(stream);
    let mut counts = BTreeMap::new();
    let mut line = String::new();
    for _ in 0..10_000 {
        line.clear();
        assert!(r.read_line(&mut line).unwrap() > 0, "server hung up");
        let resp: Response = serde_json::from_str(line.trim_end()).unwrap();
        assert!(!resp.ok);
        let code = resp.error.unwrap().code;
        assert!(code == PARSE_ERROR || code == INVALID_PARAMS, "{line}");
        *counts.entry(code).or_insert(0) += 1;
    }
    assert!(counts[&PARSE_ERROR] > 1000 && counts[&INVALID_PARAMS] > 1000, "{counts:?}");
    let mut w = writer.join().unwrap();
    // still serving on the same connection
    w.write_all(b"{\"id\":100000,\"method\":\"status\"}\n").unwrap();
    line.clear();
    r.read_line(&mut line).unwrap();
    let resp: Response = serde_json::from_str(&line).unwrap();
    assert!(resp.ok && resp.id == Some(100_000));
}

#[test]
fn errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (_gw, addr) = serve(&config(dir.path()));
    let mut c = Client::connect(addr).unwrap();
    let code = |r: Result<Json, ClientError>| match r {
        Err(ClientError::Rpc(e)) => (e.code, e.op_code().map(str::to_string)),
        other => panic!("expected an rpc error, got {other:?}"),
    };
    assert_eq!(code(c.call("no_such_method", json!({}))), (METHOD_NOT_FOUND, None));
    assert_eq!(code(c.call("do_line_scan", json!({ "start": [1, 1] }))).0, INVALID_PARAMS);
    assert_eq!(code(c.call("do_line_scan", json!({ "start": [1, 1], "end": [2, 2] }))), (OP_ERROR, Some("be-undefined".into())));
    assert_eq!(code(c.call("load_dataset", json!({ "id": "ds-999999" }))), (OP_ERROR, Some("not-found".into())));

    // reusing an id is rejected without executing anything
    c.send_raw(r#"{"id":1,"method":"status"}"#).unwrap();
    let r = c.read_response().unwrap();
    assert_eq!((r.id, r.error.unwrap().code), (None, INVALID_PARAMS));

    let mut plan = WorkflowPlan::new("p", PlanSource::Human);
    plan.push(Step::new("be", "define_be_parms"));
    let doc = plan.to_document();
    let v = c.call("validate_plan", json!({ "plan": doc })).unwrap();
    assert_eq!(v["ok"], json!(true));
    assert_eq!(v["fingerprint"], json!(plan_fingerprint(&plan)));
    assert_eq!(code(c.call("run_plan", json!({ "plan": doc, "approval": "0-0" }))), (OP_ERROR, Some("not-approved".into())));
    let report = c.call("run_plan", json!({ "plan": doc, "approval": plan_fingerprint(&plan) })).unwrap();
    assert_eq!(report["steps"][0]["status"], json!("ok"));
    assert_eq!(c.events.iter().filter(|e| e.event == "step_done").count(), 1);
}

#[test]
fn token_gates_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GatewayConfig { token: Some("s3cret".into()), ..config(dir.path()) };
    let (_gw, addr) = serve(&cfg);
    let mut c = Client::connect(addr).unwrap();
    for (m, p) in [("status", json!({})), ("authenticate", json!({ "token": "nope" })), ("list_tools", json!({}))] {
        match c.call(m, p) {
            Err(ClientError::Rpc(e)) => assert_eq!(e.op_code(), Some("unauthorized")),
            other => panic!("{m}: {other:?}"),
        }
    }
    c.call("authenticate", json!({ "token": "s3cret" })).unwrap();
    assert!(c.call("list_tools", json!({})).unwrap().as_array().unwrap().len() > 15);
    // a second connection starts unauthenticated
    let mut d = Client::connect(addr).unwrap();
    assert!(d.call("status", json!({})).is_err());
}

fn raster_plan(n: usize) -> (String, String) {
    let mut plan = WorkflowPlan::new("big", PlanSource::Human);
    plan.push(Step::new("be", "define_be_parms").param("num_bins", 16));
    plan.push(Step::new("img", "raster_scan").param("region", vec![0.0, 0.0, 5.0, 5.0]).param("ny", n).param("nx", n));
    (plan.to_document(), plan_fingerprint(&plan))
}

#[test]
fn concurrent_plans_are_busy_unless_queued() {
    let dir = tempfile::tempdir().unwrap();
    let (_gw, addr) = serve(&config(dir.path()));
    let (doc, fp) = raster_plan(24);
    let mut a = Client::connect(addr).unwrap();
    let mut b = Client::connect(addr).unwrap();
    let first = a.send("run_plan", json!({ "plan": doc, "approval": fp })).unwrap();
    // wait until the first plan is demonstrably running
    loop {
        match a.read_envelope().unwrap() {
            Envelope::Event(e) if e.event == "scan_line" => break,
            Envelope::Event(_) => {}
            Envelope::Response(r) => panic!("plan finished before it could be observed: {r:?}"),
        }
    }
    match b.call("run_plan", json!({ "plan": doc, "approval": fp })) {
        Err(ClientError::Rpc(e)) => assert_eq!(e.op_code(), Some("busy")),
        other => panic!("{other:?}"),
    }
    let status = b.call("status", json!({})).unwrap();
    assert_eq!(status["plan_running"], json!(true));
    let queued = b.call("run_plan", json!({ "plan": doc, "approval": fp, "queue": true })).unwrap();
    assert_eq!(queued["steps"][1]["status"], json!("ok"));
    let r = a.read_response().unwrap();
    assert_eq!(r.id, Some(first));
    assert!(r.ok);
}

type Ws = tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>;

fn ws_call(ws: &mut Ws, id: i64, method: &str, params: Json) {
    let frame = json!({ "id": id, "method": method, "params": params }).to_string();
    ws.send(Message::text(frame)).unwrap();
}

fn ws_next(ws: &mut Ws) -> Envelope {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("unexpected frame {other:?}"),
        }
    }
}

#[test]
fn websocket_streams_lines_and_cancels_mid_raster() {
    let dir = tempfile::tempdir().unwrap();
    let (_gw, addr) = serve(&config(dir.path()));
    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}/")).unwrap();

    ws_call(&mut ws, 1, "define_be_parms", json!({ "num_bins": 16 }));
    assert!(matches!(ws_next(&mut ws), Envelope::Response(r) if r.ok && r.id == Some(1)));

    ws_call(&mut ws, 2, "raster_scan", json!({ "region": [0, 0, 5, 5], "ny": 40, "nx": 40 }));
    let mut lines = Vec::new();
    let resp = loop {
        match ws_next(&mut ws) {
            Envelope::Event(e) => {
                assert_eq!(e.event, "scan_line");
                assert_eq!(e.data["phase"].as_array().unwrap().len(), 40);
                if lines.is_empty() {
                    ws_call(&mut ws, 3, "cancel", json!({}));
                }
                lines.push(e.data["line"].as_u64().unwrap());
            }
            Envelope::Response(r) if r.id == Some(3) => assert!(r.ok),
            Envelope::Response(r) => break r,
        }
    };
    assert_eq!(resp.id, Some(2));
    let result = resp.into_result().unwrap();
    let rows = result["shape"][0].as_u64().unwrap();
    assert!(rows >= 1 && rows < 40, "cancel should stop the raster early, got {rows} lines");
    assert_eq!(lines, (0..rows).collect::<Vec<_>>());

    let id = result["dataset_id"].as_str().unwrap().to_string();
    ws_call(&mut ws, 4, "load_dataset", json!({ "id": id }));
    let Envelope::Response(r) = ws_next(&mut ws) else { panic!("expected response") };
    let ds = r.into_result().unwrap();
    assert_eq!(ds["metadata"]["aborted"], json!(true));
    assert_eq!(ds["channels"]["phase"]["shape"], json!([rows, 40]));

    // step events reach the browser transport too
    let (doc, fp) = raster_plan(3);
    ws_call(&mut ws, 5, "run_plan", json!({ "plan": doc, "approval": fp }));
    let mut steps = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        assert!(Instant::now() < deadline);
        match ws_next(&mut ws) {
            Envelope::Event(e) if e.event == "step_done" => steps.push(e.data["step"].as_str().unwrap().to_string()),
            Envelope::Event(_) => {}
            Envelope::Response(r) => {
                assert!(r.ok && r.id == Some(5));
                break;
            }
        }
    }
    assert_eq!(steps, ["be", "img"]);
    ws.close(None).unwrap();
}

#[test]
fn assistant_methods_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let (_gw, addr) = serve(&config(dir.path()));
    let mut c = Client::connect(addr).unwrap();
    let be = c.call("define_be_parms", json!({ "center_frequency_khz": 380 })).unwrap();
    assert_eq!(be["be"].as_object().unwrap().len(), 7);
    assert_eq!(be["be"]["center_frequency_khz"], json!(380.0));

    let r = c.call("propose_plan", json!({ "instruction": "conduct a spiral scan with 5 V on the tip" })).unwrap();
    assert_eq!(r["executable"], json!(true));
    assert_eq!(r["exchange"]["repair_turns"], json!(1));
    let plan = r["exchange"]["proposed"].clone();
    let fp = r["fingerprint"].as_str().unwrap().to_string();
    let report = c.call("run_plan", json!({ "plan": plan, "approval": fp })).unwrap();
    assert!(report["steps"].as_array().unwrap().iter().all(|s| s["status"] == "ok"), "{report}");

    match c.call("propose_plan", json!({ "instruction": "sing me a song" })) {
        Err(ClientError::Rpc(e)) => assert_eq!(e.op_code(), Some("unparseable-reply")),
        other => panic!("{other:?}"),
    }
    let x = c.call("extract_protocol", json!({ "text": "a 1 V ac drive at a center frequency of 350 kHz" })).unwrap();
    assert_eq!(x["params"]["center_frequency_khz"], json!(350.0));
}
