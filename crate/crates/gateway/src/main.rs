use aescope_core::analysis::export::{write_heatmap_png, write_spectrum_png};
use aescope_core::assistant::{propose_plan, AssistantExchange, LiveConfig, LlmClientConfig};
use aescope_core::dataset::{self, read_container};
use aescope_core::experiment_log::{parse_log, reconstruct_plan, summarize_log};
use aescope_core::tools::{build_tool_registry, invoke_readonly, Args, Value};
use aescope_core::workflow::{execute_plan, plan_fingerprint, validate_plan, Approval, WorkflowPlan};
use aescope_core::{BeSpectrum, DatasetStore, ExperimentLog, Grid, Microscope, ScanTrajectory};
use aescope_gateway::server::outputs_json;
use aescope_gateway::{Gateway, GatewayConfig};
use clap::{Args as ClapArgs, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "aescope", version, about = "Simulated BE-PFM microscope with a workflow engine and gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapArgs, Clone)]
struct Instrument {
    /// JSON gateway config (microscope, data_dir, log_path, llm)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the simulation seed
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Experiment log to append to
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Serve NDJSON and WebSocket clients on one port
    Serve {
        #[arg(long, default_value_t = 7350)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        inst: Instrument,
    },
    /// Validate a plan file; with --approve, execute it
    Run {
        plan: PathBuf,
        #[arg(long)]
        approve: bool,
        #[command(flatten)]
        inst: Instrument,
    },
    /// Rebuild a plan from a log and execute it
    Replay {
        logfile: PathBuf,
        #[command(flatten)]
        inst: Instrument,
    },
    /// Print a text summary of a log
    Summarize { logfile: PathBuf },
    /// Run an analysis on a stored dataset container
    Analyze {
        dataset_dir: PathBuf,
        #[arg(long, value_enum)]
        op: AnalysisOp,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Generate a scan trajectory
    Trajectory {
        #[arg(long, value_enum)]
        shape: Shape,
        /// x,y in µm
        #[arg(long, value_delimiter = ',')]
        center: Option<Vec<f64>>,
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long)]
        amp: Option<f64>,
        #[arg(long)]
        petals: Option<u64>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        pitch: Option<f64>,
        /// constant-angular-velocity or constant-linear-velocity
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        points_per_turn: Option<u64>,
        /// x0,y0,x1,y1 in µm
        #[arg(long, value_delimiter = ',')]
        region: Option<Vec<f64>>,
        #[arg(long)]
        lines: Option<u64>,
        #[arg(long)]
        pts_per_line: Option<u64>,
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Output file; stdout when omitted
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Turn an instruction into a plan; with --approve, execute it
    Assist {
        instruction: String,
        #[arg(long, value_enum, default_value_t = ClientKind::Mock)]
        client: ClientKind,
        #[arg(long, default_value = "http://127.0.0.1:8080/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "gpt-4")]
        model: String,
        #[arg(long)]
        approve: bool,
        #[command(flatten)]
        inst: Instrument,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisOp {
    Roughness,
    MeanSpectrum,
    Strongest,
    Walls,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Flower,
    Spiral,
    Raster,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ClientKind {
    Mock,
    Live,
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(inst: &Instrument) -> Result<GatewayConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &inst.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => GatewayConfig::default(),
    };
    if let Some(s) = inst.sample_seed {
        cfg.microscope.seed = s;
    }
    if let Some(d) = &inst.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(l) = &inst.log {
        cfg.log_path = Some(l.clone());
    }
    Ok(cfg)
}

fn microscope(cfg: &GatewayConfig) -> Result<Microscope, Box<dyn std::error::Error>> {
    let mut m = Microscope::new(&cfg.microscope)?;
    m.set_store(Some(Arc::new(DatasetStore::open(&cfg.data_dir)?)));
    if let Some(p) = &cfg.log_path {
        m.set_log(ExperimentLog::open(p)?);
    }
    Ok(m)
}

/// Writes to stdout; a closed pipe (`aescope ... | head`) ends the process quietly.
fn out(text: &str) {
    let mut w = std::io::stdout().lock();
    if let Err(e) = w.write_all(text.as_bytes()).and_then(|_| w.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn print_json(v: &Json) {
    out(&format!("{}\n", serde_json::to_string_pretty(v).expect("json serializes")));
}

/// Validates, then executes when approved. Returns the exit code.
fn validate_and_maybe_run(plan: &WorkflowPlan, approve: bool, cfg: &GatewayConfig) -> CliResult {
    if let Err(diags) = validate_plan(plan, build_tool_registry()) {
        for d in &diags {
            eprintln!("{d}");
        }
        return Ok(ExitCode::from(2));
    }
    if !approve {
        out(&format!("plan is valid; fingerprint {}\nrerun with --approve to execute\n", plan_fingerprint(plan)));
        return Ok(ExitCode::SUCCESS);
    }
    let mut scope = microscope(cfg)?;
    let report = execute_plan(plan, &Approval::grant(plan), &mut scope)?;
    print_json(&serde_json::to_value(&report)?);
    Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Serve { port, host, inst } => {
            let mut cfg = load_config(&inst)?;
            if let Ok(t) = std::env::var("AESCOPE_TOKEN") {
                cfg.token = Some(t);
            }
            let gw = Gateway::new(&cfg)?;
            let listener = TcpListener::bind((host.as_str(), port))?;
            log::info!("listening on {}", listener.local_addr()?);
            gw.serve(listener)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { plan, approve, inst } => {
            let plan = aescope_core::parse_plan(&std::fs::read_to_string(&plan)?)?;
            validate_and_maybe_run(&plan, approve, &load_config(&inst)?)
        }
        Command::Replay { logfile, inst } => {
            let records = parse_log(&logfile)?;
            let rec = reconstruct_plan(&records);
            if !rec.skipped.is_empty() {
                log::info!("skipping failed records {:?}", rec.skipped);
            }
            validate_and_maybe_run(&rec.plan, true, &load_config(&inst)?)
        }
        Command::Summarize { logfile } => {
            out(&summarize_log(&parse_log(&logfile)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { dataset_dir, op, png } => analyze(&dataset_dir, op, png.as_deref()),
        Command::Trajectory {
            shape,
            center,
            r0,
            amp,
            petals,
            samples,
            r_max,
            pitch,
            mode,
            points_per_turn,
            region,
            lines,
            pts_per_line,
            sample_rate,
            csv,
        } => {
            let mut args = Args::new();
            let mut put = |k: &str, v: Option<Json>| {
                if let Some(v) = v {
                    args.insert(k.to_string(), Value::Json(v));
                }
            };
            put("sample_rate_hz", sample_rate.map(Json::from));
            let op = match shape {
                Shape::Flower | Shape::Spiral => {
                    put("center", Some(json!(center.unwrap_or_else(|| vec![2.5, 2.5]))));
                    if matches!(shape, Shape::Flower) {
                        put("r0_um", r0.map(Json::from));
                        put("amp_um", amp.map(Json::from));
                        put("petals", petals.map(Json::from));
                        put("n_samples", samples.map(Json::from));
                        "flower_waveform"
                    } else {
                        put("r_max_um", r_max.map(Json::from));
                        put("pitch_um", pitch.map(Json::from));
                        put("mode", mode.map(Json::from));
                        put("points_per_turn", points_per_turn.map(Json::from));
                        "spiral_waveform"
                    }
                }
                Shape::Raster => {
                    put("region", Some(json!(region.unwrap_or_else(|| vec![0.0, 0.0, 5.0, 5.0]))));
                    put("lines", lines.map(Json::from));
                    put("pts_per_line", pts_per_line.map(Json::from));
                    "raster_waveform"
                }
            };
            let scope = Microscope::new(&Default::default())?;
            let out = invoke_readonly(&scope, op, &args)?;
            let t: ScanTrajectory = serde_json::from_value(out["trajectory"].to_json())?;
            match csv {
                Some(p) => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&p)?);
                    t.write_csv(&mut f)?;
                    f.flush()?;
                    eprintln!("wrote {} samples to {}", t.len(), p.display());
                }
                None => t.write_csv(std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Assist { instruction, client, endpoint, model, approve, inst } => {
            let mut cfg = load_config(&inst)?;
            if client == ClientKind::Live {
                cfg.llm = LlmClientConfig::Live(LiveConfig::new(endpoint, model));
            }
            let llm = cfg.llm.build();
            let ex = match propose_plan(&instruction, AssistantExchange::default(), llm.as_ref()) {
                Ok(ex) => ex,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let plan = ex.proposed.as_ref().expect("executable exchanges carry a plan");
            out(&format!("{}\n", plan.to_document()));
            if ex.repair_turns > 0 {
                eprintln!("accepted after {} repair turn(s)", ex.repair_turns);
            }
            validate_and_maybe_run(plan, approve, &cfg)
        }
    }
}

fn analyze(dir: &Path, op: AnalysisOp, png: Option<&Path>) -> CliResult {
    let (_, ds) = read_container(dir)?;
    let ds = Arc::new(ds);
    let scope = Microscope::new(&Default::default())?;
    let image_of = |channel: &str| -> Result<Grid<f64>, Box<dyn std::error::Error>> {
        let ch = ds.channel(channel)?;
        let (rows, cols) = match ch.shape[..] {
            [r, c] => (r, c),
            _ => return Err(format!("channel {channel} is not an image (shape {:?})", ch.shape).into()),
        };
        Ok(ds.channel_image(channel, rows, cols)?)
    };
    let mut args = Args::new();
    let (name, heatmap) = match op {
        AnalysisOp::Roughness => {
            let g = image_of(dataset::TOPOGRAPHY)?;
            args.insert("image".into(), Value::Image(Arc::new(g.clone())));
            ("roughness", Some(g))
        }
        AnalysisOp::Walls => {
            args.insert("image".into(), Value::Image(Arc::new(image_of(dataset::PHASE)?)));
            ("detect_domain_walls", None)
        }
        AnalysisOp::MeanSpectrum => {
            args.insert("dataset".into(), Value::Dataset(ds.clone()));
            ("mean_spectrum", None)
        }
        AnalysisOp::Strongest => {
            args.insert("dataset".into(), Value::Dataset(ds.clone()));
            ("strongest_spectrum", None)
        }
    };
    let out = invoke_readonly(&scope, name, &args)?;
    let mut shown = outputs_json(&out);
    if let Some(m) = shown.as_object_mut() {
        m.remove("mask");
    }
    print_json(&shown);
    if let Some(p) = png {
        match (out.get("spectrum"), out.get("mask"), heatmap) {
            (Some(s), _, _) => write_spectrum_png(&serde_json::from_value::<BeSpectrum>(s.to_json())?, p)?,
            (_, Some(Value::Image(mask)), _) => write_heatmap_png(mask, p)?,
            (_, _, Some(g)) => write_heatmap_png(&g, p)?,
            _ => return Err("nothing to plot".into()),
        }
        eprintln!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}
