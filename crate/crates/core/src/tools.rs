//! Tool registry: a typed schema for every callable operation, parameter
//! resolution against those schemas, and a dispatcher that runs a resolved
//! call on a [`Microscope`].

use crate::analysis::{self, detect_domain_walls, mean_spectrum, roughness, strongest_spectrum, CannyParams, Cube};
use crate::be::PartialBeParams;
use crate::control::{ApiError, Microscope};
use crate::dataset::{self, Dataset};
use crate::field::Grid;
use crate::fit::fit_sho;
use crate::instrument::IoConfig;
use crate::sho::BeSpectrum;
use crate::trajectory::{
    flower_waveform, raster_waveform, spiral_waveform, validate_trajectory, FlowerParams, Region, ScanTrajectory,
    SpiralMode, SpiralParams,
};
use serde::Serialize;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamType {
    Number,
    Integer,
    Bool,
    String,
    Enum,
    /// `[x, y]` in µm.
    Point,
    /// `[x0, y0, x1, y1]` in µm.
    Region,
    /// `[rows, cols]`.
    Shape,
    NumberList,
    StringList,
    PointList,
    /// `[[row, col], ...]`.
    PixelList,
    Trajectory,
    Spectrum,
    Image,
    /// A dataset value, or a dataset id string.
    Dataset,
    Json,
}

impl ParamType {
    /// Whether an output of type `self` may feed a parameter of type `target`.
    pub fn feeds(self, target: ParamType) -> bool {
        self == target || (self == ParamType::Integer && target == ParamType::Number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolKind {
    /// Drives the instrument and writes one log record per call.
    Instrument,
    Generator,
    Analysis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<Json>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub choices: &'static [&'static str],
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    /// A trailing `_#` marks an indexed family (`x_0`, `x_1`, ...).
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub name: &'static str,
    pub kind: ToolKind,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
    pub outputs: Vec<OutputSpec>,
    /// At least one of these ops must run earlier in the same plan.
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub requires_prior: &'static [&'static str],
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutputSpec> {
        self.outputs.iter().find(|o| match o.name.strip_suffix('#') {
            Some(prefix) => name
                .strip_prefix(prefix)
                .is_some_and(|i| !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit())),
            None => o.name == name,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Registry {
    tools: Vec<ToolSpec>,
}

impl Registry {
    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.tools.iter().map(|t| t.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    UnknownOp,
    UnknownParameter,
    MissingParameter,
    TypeMismatch,
    UnknownBindingStep,
    UnknownOutput,
    BindingTypeMismatch,
    OrderingViolation,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub step: String,
    pub code: DiagnosticCode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let code = serde_json::to_value(self.code).expect("code serializes");
        write!(f, "step {}: {}: {}", self.step, code.as_str().unwrap_or_default(), self.message)
    }
}

/// Runtime value flowing between plan steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Json(Json),
    Image(Arc<Grid<f64>>),
    Dataset(Arc<Dataset>),
}

impl Value {
    /// JSON view for reports and the wire; images become nested row arrays,
    /// datasets a short descriptor.
    pub fn to_json(&self) -> Json {
        match self {
            Value::Json(j) => j.clone(),
            Value::Image(g) => Json::Array((0..g.rows).map(|r| json!(g.row(r))).collect()),
            Value::Dataset(d) => json!({ "dataset": d.name, "channels": d.channels.keys().collect::<Vec<_>>() }),
        }
    }
}

impl From<Json> for Value {
    fn from(j: Json) -> Self {
        Value::Json(j)
    }
}

pub type Args = BTreeMap<String, Value>;
pub type Outputs = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown operation {0}")]
    UnknownOp(String),
    #[error("invalid parameters: {}", .0.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("; "))]
    InvalidParams(Vec<Diagnostic>),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("{message}")]
    Analysis { code: &'static str, message: String },
}

impl ToolError {
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::UnknownOp(_) => "unknown-op",
            ToolError::InvalidParams(_) => "invalid-params",
            ToolError::Api(e) => e.code(),
            ToolError::Analysis { code, .. } => code,
        }
    }

    fn analysis(code: &'static str, e: impl std::fmt::Display) -> Self {
        ToolError::Analysis { code, message: e.to_string() }
    }
}

fn number_of(v: &Json) -> Option<f64> {
    v.as_f64().filter(|f| f.is_finite())
}

fn integer_of(v: &Json) -> Option<u64> {
    v.as_u64().or_else(|| v.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0 && *f < 9.0e15).map(|f| f as u64))
}

fn numbers(v: &Json, len: Option<usize>) -> Option<Vec<f64>> {
    let a = v.as_array()?;
    if len.is_some_and(|n| n != a.len()) {
        return None;
    }
    a.iter().map(number_of).collect()
}

fn integers(v: &Json, len: usize) -> Option<Vec<u64>> {
    let a = v.as_array().filter(|a| a.len() == len)?;
    a.iter().map(integer_of).collect()
}

fn image_from_json(v: &Json) -> Option<Grid<f64>> {
    let rows = v.as_array()?;
    let cols = rows.first()?.as_array()?.len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend(numbers(r, Some(cols))?);
    }
    Grid::from_vec(rows.len(), cols, data)
}

/// Type-checks a literal and returns its canonical JSON form.
pub fn coerce(spec: &ParamSpec, v: &Json) -> Result<Json, String> {
    let fail = || format!("{} expects {}, got {}", spec.name, type_name(spec.ty), short(v));
    let ok = match spec.ty {
        ParamType::Number => number_of(v).map(|f| json!(f)),
        ParamType::Integer => integer_of(v).map(|i| json!(i)),
        ParamType::Bool => v.as_bool().map(Json::Bool),
        ParamType::String => v.as_str().map(|s| json!(s)),
        ParamType::Enum => v.as_str().filter(|s| spec.choices.contains(s)).map(|s| json!(s)),
        ParamType::Point => numbers(v, Some(2)).map(|p| json!(p)),
        ParamType::Region => numbers(v, Some(4)).map(|p| json!(p)),
        ParamType::Shape => integers(v, 2).map(|p| json!(p)),
        ParamType::NumberList => numbers(v, None).map(|p| json!(p)),
        ParamType::StringList => v
            .as_array()
            .and_then(|a| a.iter().map(|s| s.as_str().map(String::from)).collect::<Option<Vec<_>>>())
            .map(|p| json!(p)),
        ParamType::PointList => v
            .as_array()
            .and_then(|a| a.iter().map(|p| numbers(p, Some(2))).collect::<Option<Vec<_>>>())
            .map(|p| json!(p)),
        ParamType::PixelList => v
            .as_array()
            .and_then(|a| a.iter().map(|p| integers(p, 2)).collect::<Option<Vec<_>>>())
            .map(|p| json!(p)),
        ParamType::Trajectory => serde_json::from_value::<ScanTrajectory<f64>>(v.clone())
            .ok()
            .map(|t| serde_json::to_value(t).expect("trajectory serializes")),
        ParamType::Spectrum => serde_json::from_value::<BeSpectrum<f64>>(v.clone())
            .ok()
            .filter(|s| s.is_consistent())
            .map(|s| serde_json::to_value(s).expect("spectrum serializes")),
        ParamType::Image => image_from_json(v).map(|_| v.clone()),
        ParamType::Dataset => v.as_str().map(|s| json!(s)),
        ParamType::Json => Some(v.clone()),
    };
    ok.ok_or_else(fail)
}

fn short(v: &Json) -> String {
    let s = v.to_string();
    if s.len() > 40 {
        format!("{}...", &s[..s.char_indices().take_while(|(i, _)| *i < 37).last().map_or(0, |(i, c)| i + c.len_utf8())])
    } else {
        s
    }
}

pub fn type_name(t: ParamType) -> &'static str {
    match t {
        ParamType::Number => "a number",
        ParamType::Integer => "a non-negative integer",
        ParamType::Bool => "a boolean",
        ParamType::String => "a string",
        ParamType::Enum => "one of the listed choices",
        ParamType::Point => "a point [x, y]",
        ParamType::Region => "a region [x0, y0, x1, y1]",
        ParamType::Shape => "a shape [rows, cols]",
        ParamType::NumberList => "a list of numbers",
        ParamType::StringList => "a list of strings",
        ParamType::PointList => "a list of points",
        ParamType::PixelList => "a list of [row, col] pixels",
        ParamType::Trajectory => "a trajectory object",
        ParamType::Spectrum => "a spectrum object",
        ParamType::Image => "an image",
        ParamType::Dataset => "a dataset or dataset id",
        ParamType::Json => "any JSON value",
    }
}

fn check_value(spec: &ParamSpec, v: &Value) -> Result<Value, String> {
    match (spec.ty, v) {
        (_, Value::Json(j)) => coerce(spec, j).map(Value::Json),
        (ParamType::Image, Value::Image(_)) | (ParamType::Dataset, Value::Dataset(_)) => Ok(v.clone()),
        _ => Err(format!("{} expects {}", spec.name, type_name(spec.ty))),
    }
}

/// Checks names and types and fills defaults. Diagnostics carry `step`.
pub fn resolve_args(tool: &ToolSpec, given: &Args, step: &str) -> Result<Args, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let diag = |code, param: &str, message: String| Diagnostic { step: step.into(), code, param: Some(param.into()), message };
    for name in given.keys() {
        if tool.param(name).is_none() {
            diags.push(diag(
                DiagnosticCode::UnknownParameter,
                name,
                format!("{} has no parameter {name}", tool.name),
            ));
        }
    }
    let mut out = Args::new();
    for p in &tool.params {
        match given.get(p.name) {
            Some(v) => match check_value(p, v) {
                Ok(v) => {
                    out.insert(p.name.into(), v);
                }
                Err(m) => diags.push(diag(DiagnosticCode::TypeMismatch, p.name, m)),
            },
            None => match (&p.default, p.required) {
                (Some(d), _) => {
                    out.insert(p.name.into(), Value::Json(d.clone()));
                }
                (None, true) => diags.push(diag(
                    DiagnosticCode::MissingParameter,
                    p.name,
                    format!("{} requires {}", tool.name, p.name),
                )),
                (None, false) => {}
            },
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}

fn p(name: &'static str, ty: ParamType, description: &'static str) -> ParamSpec {
    ParamSpec { name, ty, required: true, default: None, choices: &[], description }
}

fn opt(name: &'static str, ty: ParamType, default: Json, description: &'static str) -> ParamSpec {
    ParamSpec { name, ty, required: false, default: Some(default), choices: &[], description }
}

fn out(name: &'static str, ty: ParamType, description: &'static str) -> OutputSpec {
    OutputSpec { name, ty, description }
}

pub fn default_bias_waveform() -> Vec<f64> {
    let up = [0.0, 1.5, 3.0, 4.5, 6.0, 4.5, 3.0, 1.5];
    up.iter().copied().chain(up.iter().map(|v| -v)).chain([0.0]).collect()
}

const NEEDS_BE: &[&str] = &["define_be_parms"];

fn dataset_outputs() -> Vec<OutputSpec> {
    vec![
        out("dataset", ParamType::Dataset, "the acquired dataset"),
        out("dataset_id", ParamType::String, "store id of the saved dataset, null without a store"),
    ]
}

/// Schemas for every operation, built once.
pub fn build_tool_registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(|| Registry { tools: tool_specs() })
}

fn tool_specs() -> Vec<ToolSpec> {
    use ParamType::*;
    let be = crate::be::BeParams::default();
    let io = IoConfig::default();
    let bias = json!(default_bias_waveform());
    let mut waveform = opt("waveform", Enum, json!("sinc"), "excitation shape");
    waveform.choices = &["sinc", "chirp"];
    let mut mode = opt("mode", Enum, json!("constant-angular-velocity"), "sampling mode");
    mode.choices = &["constant-angular-velocity", "constant-linear-velocity"];
    let mut tools = vec![
        ToolSpec {
            name: "define_be_parms",
            kind: ToolKind::Instrument,
            description: "Set the band-excitation parameters. Any subset of the seven fields may be given; the rest take defaults. Must run before any scan or spectroscopy step.",
            params: vec![
                opt("center_frequency_khz", Number, json!(be.center_frequency_khz), "centre of the excitation band in kHz"),
                opt("band_width_khz", Number, json!(be.band_width_khz), "width of the excitation band in kHz"),
                opt("amplitude_v", Number, json!(be.amplitude_v), "drive amplitude in V"),
                opt("num_bins", Integer, json!(be.num_bins), "frequency bins per spectrum, at least 8"),
                opt("repeats", Integer, json!(be.repeats), "averaged repetitions per pixel"),
                opt("duration_ms", Number, json!(be.duration_ms), "excitation duration in ms"),
                waveform,
            ],
            outputs: vec![out("be", Json, "the resolved seven-field parameter set")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "set_io_config",
            kind: ToolKind::Instrument,
            description: "Configure the IO cluster: DAQ sample rate, output voltage range and recorded channels.",
            params: vec![
                opt("sample_rate_hz", Number, json!(io.sample_rate_hz), "DAQ sample rate in Hz"),
                opt("output_range_v", Number, json!(io.output_range_v), "maximum absolute output voltage"),
                opt("channels", StringList, json!(io.channels), "recorded channel names"),
            ],
            outputs: vec![out("io", Json, "the applied configuration")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "set_tip_bias",
            kind: ToolKind::Instrument,
            description: "Set the DC bias applied to the tip during subsequent scans. This is the only way to put a voltage on the tip for a scan; trajectory generators take no voltage.",
            params: vec![p("bias_v", Number, "tip bias in V, within the output range")],
            outputs: vec![out("bias_v", Number, "the applied bias")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "tip_control",
            kind: ToolKind::Instrument,
            description: "Move the tip to (x_um, y_um) inside the scan window.",
            params: vec![
                p("x_um", Number, "target x in µm"),
                p("y_um", Number, "target y in µm"),
                opt("speed_um_s", Number, json!(10.0), "travel speed in µm/s"),
            ],
            outputs: vec![out("duration_s", Number, "travel time in s")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "do_line_scan",
            kind: ToolKind::Instrument,
            description: "BE line scan: one spectrum at each of num_points positions evenly spaced from start to end. Requires define_be_parms first.",
            params: vec![
                p("start", Point, "first point [x, y] in µm"),
                p("end", Point, "last point [x, y] in µm"),
                opt("num_points", Integer, json!(64), "number of positions, at least 2"),
            ],
            outputs: dataset_outputs(),
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "raster_scan",
            kind: ToolKind::Instrument,
            description: "BE raster scan of a region with ny lines of nx pixels, serpentine order. Fits every pixel and returns amplitude, phase and topography images. Requires define_be_parms first.",
            params: vec![
                p("region", Region, "[x0, y0, x1, y1] in µm"),
                opt("ny", Integer, json!(64), "lines"),
                opt("nx", Integer, json!(64), "pixels per line"),
            ],
            outputs: {
                let mut o = dataset_outputs();
                o.extend([
                    out("phase", Image, "fitted phase map in rad"),
                    out("amplitude", Image, "fitted amplitude map"),
                    out("topography", Image, "height map in µm"),
                    out("shape", Shape, "[rows, cols] of the maps"),
                ]);
                o
            },
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "do_beps_grid",
            kind: ToolKind::Instrument,
            description: "BEPS hysteresis loops on an ny x nx grid of locations covering a region. Requires define_be_parms first.",
            params: vec![
                p("region", Region, "[x0, y0, x1, y1] in µm"),
                opt("ny", Integer, json!(4), "grid rows"),
                opt("nx", Integer, json!(4), "grid columns"),
                opt("bias_waveform", NumberList, bias.clone(), "DC bias steps in V"),
            ],
            outputs: dataset_outputs(),
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "do_beps_specific",
            kind: ToolKind::Instrument,
            description: "BEPS hysteresis loops at listed locations, in order. Requires define_be_parms first.",
            params: vec![
                p("locations", PointList, "[[x, y], ...] in µm"),
                opt("bias_waveform", NumberList, bias, "DC bias steps in V"),
            ],
            outputs: dataset_outputs(),
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "apply_pulse",
            kind: ToolKind::Instrument,
            description: "Apply a DC voltage pulse at the current tip position. Takes no coordinates: move the tip with tip_control first.",
            params: vec![
                p("v", Number, "pulse voltage in V"),
                opt("duration_ms", Number, json!(10.0), "pulse length in ms"),
            ],
            outputs: vec![
                out("flipped", Integer, "pixels whose polarization switched"),
                out("radius_um", Number, "switching radius in µm"),
            ],
            requires_prior: &["tip_control"],
        },
        ToolSpec {
            name: "do_trajectory_scan",
            kind: ToolKind::Instrument,
            description: "Drive the tip along a generated trajectory and record a BE spectrum at every measure_every-th sample. Requires define_be_parms first.",
            params: vec![
                p("trajectory", Trajectory, "output of a waveform generator"),
                opt("measure_every", Integer, json!(1), "sample stride between spectra"),
            ],
            outputs: {
                let mut o = dataset_outputs();
                o.push(out("count", Integer, "number of spectra"));
                o
            },
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "flower_waveform",
            kind: ToolKind::Generator,
            description: "Closed flower path r = r0 + amp sin(petals theta) around a centre.",
            params: vec![
                p("center", Point, "[x, y] in µm"),
                opt("r0_um", Number, json!(1.0), "base radius in µm"),
                opt("amp_um", Number, json!(0.25), "petal amplitude in µm"),
                opt("petals", Integer, json!(6), "number of petals"),
                opt("n_samples", Integer, json!(720), "samples, at least 16"),
                opt("sample_rate_hz", Number, json!(1000.0), "waveform sample rate"),
            ],
            outputs: vec![out("trajectory", Trajectory, "the path"), out("samples", Integer, "sample count")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "spiral_waveform",
            kind: ToolKind::Generator,
            description: "Archimedean spiral from the centre out to r_max_um. Only geometry and timing: set a tip voltage with set_tip_bias, not here.",
            params: vec![
                p("center", Point, "[x, y] in µm"),
                opt("r_max_um", Number, json!(2.0), "outer radius in µm"),
                opt("pitch_um", Number, json!(0.25), "radial spacing between turns in µm"),
                mode,
                opt("sample_rate_hz", Number, json!(1000.0), "waveform sample rate"),
                opt("points_per_turn", Integer, json!(64), "samples per turn"),
            ],
            outputs: vec![out("trajectory", Trajectory, "the path"), out("samples", Integer, "sample count")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "raster_waveform",
            kind: ToolKind::Generator,
            description: "Serpentine raster path over a region.",
            params: vec![
                p("region", Region, "[x0, y0, x1, y1] in µm"),
                opt("lines", Integer, json!(16), "lines"),
                opt("pts_per_line", Integer, json!(64), "samples per line"),
                opt("sample_rate_hz", Number, json!(1000.0), "waveform sample rate"),
            ],
            outputs: vec![out("trajectory", Trajectory, "the path"), out("samples", Integer, "sample count")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "validate_trajectory",
            kind: ToolKind::Analysis,
            description: "Check a trajectory against the scan window and a speed limit.",
            params: vec![
                p("trajectory", Trajectory, "path to check"),
                opt("max_speed_um_s", Number, json!(crate::control::DEFAULT_MAX_SPEED_UM_S), "speed limit in µm/s"),
            ],
            outputs: vec![out("ok", Bool, "no violations"), out("violations", Json, "violation list")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "detect_domain_walls",
            kind: ToolKind::Analysis,
            description: "Canny edge detection on an image, typically the phase map of a raster scan.",
            params: vec![
                p("image", Image, "input image"),
                opt("gaussian_sigma_px", Number, json!(1.0), "blur sigma in pixels"),
                opt("low_ratio", Number, json!(0.1), "low threshold relative to the strongest gradient"),
                opt("high_ratio", Number, json!(0.3), "high threshold relative to the strongest gradient"),
            ],
            outputs: vec![
                out("coordinates", PixelList, "wall pixels [[row, col], ...] in row-major order"),
                out("count", Integer, "number of wall pixels"),
                out("shape", Shape, "[rows, cols] of the image"),
                out("mask", Image, "1 on walls, 0 elsewhere"),
            ],
            requires_prior: &[],
        },
        ToolSpec {
            name: "select_wall_points",
            kind: ToolKind::Analysis,
            description: "Pick max_walls wall pixels with a uniform stride and convert them to µm positions in the scanned region. When fewer walls exist the picks repeat.",
            params: vec![
                p("coordinates", PixelList, "wall pixels from detect_domain_walls"),
                p("shape", Shape, "[rows, cols] of the source image"),
                p("region", Region, "scanned region [x0, y0, x1, y1] in µm"),
                opt("max_walls", Integer, json!(3), "number of points"),
            ],
            outputs: vec![
                out("points_um", PointList, "selected positions"),
                out("count", Integer, "number of positions"),
                out("x_#", Number, "x of point #"),
                out("y_#", Number, "y of point #"),
            ],
            requires_prior: &[],
        },
        ToolSpec {
            name: "fit_sho",
            kind: ToolKind::Analysis,
            description: "Fit the simple harmonic oscillator model to a BE spectrum.",
            params: vec![p("spectrum", Spectrum, "{frequency_hz, amplitude, phase_rad}")],
            outputs: vec![
                out("a0", Number, "fitted drive-normalised amplitude"),
                out("f0_hz", Number, "resonance frequency"),
                out("q_factor", Number, "quality factor"),
                out("phase_rad", Number, "phase at resonance"),
                out("residual_rms", Number, "root-mean-square residual"),
                out("converged", Bool, "tolerance reached before the iteration cap"),
            ],
            requires_prior: &[],
        },
        ToolSpec {
            name: "mean_spectrum",
            kind: ToolKind::Analysis,
            description: "Average the raw spectra of a dataset over all pixels.",
            params: vec![p("dataset", Dataset, "dataset with raw_spectra")],
            outputs: vec![out("spectrum", Spectrum, "mean spectrum")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "strongest_spectrum",
            kind: ToolKind::Analysis,
            description: "Spectrum of the pixel with the highest peak amplitude.",
            params: vec![p("dataset", Dataset, "dataset with raw_spectra")],
            outputs: vec![out("pixel", Integer, "row-major pixel index"), out("spectrum", Spectrum, "its spectrum")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "roughness",
            kind: ToolKind::Analysis,
            description: "RMS roughness of a topography image in µm.",
            params: vec![p("image", Image, "height map in µm")],
            outputs: vec![out("roughness_um", Number, "standard deviation of heights")],
            requires_prior: &[],
        },
        ToolSpec {
            name: "excitation_waveform",
            kind: ToolKind::Analysis,
            description: "Time-domain drive signal for the current BE parameters.",
            params: vec![ParamSpec {
                name: "sample_rate_hz",
                ty: Number,
                required: false,
                default: None,
                choices: &[],
                description: "sample rate in Hz; the IO cluster rate when omitted",
            }],
            outputs: vec![out("t_s", NumberList, "sample times"), out("volts", NumberList, "drive voltage")],
            requires_prior: NEEDS_BE,
        },
        ToolSpec {
            name: "extract_channel_image",
            kind: ToolKind::Analysis,
            description: "Reshape a dataset channel into a rows x cols image.",
            params: vec![
                p("dataset", Dataset, "source dataset"),
                opt("channel", String, json!(dataset::TOPOGRAPHY), "channel name"),
                p("shape", Shape, "[rows, cols]"),
            ],
            outputs: vec![out("image", Image, "the image")],
            requires_prior: &[],
        },
    ];
    tools.sort_by_key(|t| t.kind == ToolKind::Analysis);
    tools
}

struct A<'a>(&'a Args);

impl A<'_> {
    fn json(&self, name: &str) -> Result<&Json, ToolError> {
        match self.0.get(name) {
            Some(Value::Json(j)) => Ok(j),
            _ => Err(ToolError::Analysis { code: "invalid-params", message: format!("missing {name}") }),
        }
    }

    fn f64(&self, name: &str) -> Result<f64, ToolError> {
        self.json(name).map(|j| j.as_f64().unwrap_or(f64::NAN))
    }

    fn opt_f64(&self, name: &str) -> Option<f64> {
        self.json(name).ok().and_then(Json::as_f64)
    }

    fn usize(&self, name: &str) -> Result<usize, ToolError> {
        self.json(name).map(|j| integer_of(j).unwrap_or(0) as usize)
    }

    fn parse<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, ToolError> {
        serde_json::from_value(self.json(name)?.clone())
            .map_err(|e| ToolError::Analysis { code: "invalid-params", message: format!("{name}: {e}") })
    }

    fn point(&self, name: &str) -> Result<[f64; 2], ToolError> {
        self.parse(name)
    }

    fn region(&self, name: &str) -> Result<Region<f64>, ToolError> {
        let [x0, y0, x1, y1]: [f64; 4] = self.parse(name)?;
        Ok(Region::new(x0, y0, x1, y1))
    }

    fn image(&self, name: &str) -> Result<Arc<Grid<f64>>, ToolError> {
        match self.0.get(name) {
            Some(Value::Image(g)) => Ok(g.clone()),
            Some(Value::Json(j)) => image_from_json(j)
                .map(Arc::new)
                .ok_or_else(|| ToolError::Analysis { code: "invalid-params", message: format!("{name} is not an image") }),
            _ => Err(ToolError::Analysis { code: "invalid-params", message: format!("missing {name}") }),
        }
    }

    fn dataset(&self, name: &str, scope: &Microscope) -> Result<Arc<Dataset>, ToolError> {
        match self.0.get(name) {
            Some(Value::Dataset(d)) => Ok(d.clone()),
            Some(Value::Json(Json::String(id))) => {
                let store = scope.store().ok_or_else(|| ToolError::analysis("not-found", format!("no dataset store to load {id} from")))?;
                store.load(id).map(Arc::new).map_err(|e| match e {
                    dataset::StoreError::NotFound(_) => ToolError::analysis("not-found", e),
                    _ => ToolError::analysis("corrupt-channel", e),
                })
            }
            _ => Err(ToolError::Analysis { code: "invalid-params", message: format!("missing {name}") }),
        }
    }
}

fn j(v: impl Serialize) -> Value {
    Value::Json(serde_json::to_value(v).expect("output serializes"))
}

fn acquisition_outputs(a: crate::control::Acquisition) -> Outputs {
    let mut o = Outputs::new();
    o.insert("dataset_id".into(), j(&a.dataset_id));
    o.insert("dataset".into(), Value::Dataset(Arc::new(a.dataset)));
    o
}

fn spectral_cube(ds: &Dataset) -> Result<(Vec<f64>, Option<Vec<f64>>, Vec<f64>, usize), ToolError> {
    let raw = ds.channel(dataset::RAW_SPECTRA).map_err(|e| ToolError::analysis("missing-channel", e))?;
    let freq = ds.channel(dataset::FREQUENCY).map_err(|e| ToolError::analysis("missing-channel", e))?.data.to_f64();
    let bins = *raw.shape.last().unwrap_or(&0);
    let phase = ds.channel(dataset::RAW_PHASE).ok().map(|c| c.data.to_f64());
    Ok((raw.data.to_f64(), phase, freq, bins))
}

/// Pixel `(row, col)` of a `rows x cols` image to the µm centre of that cell
/// within `region`.
pub fn pixel_to_um(region: &Region<f64>, rows: usize, cols: usize, row: usize, col: usize) -> [f64; 2] {
    [
        region.x0 + (col as f64 + 0.5) * (region.x1 - region.x0) / cols as f64,
        region.y0 + (row as f64 + 0.5) * (region.y1 - region.y0) / rows as f64,
    ]
}

/// Uniform-stride pick of `k` items from `n`; indices repeat cyclically when `n < k`.
pub fn stride_pick(n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if n >= k {
        (0..k).map(|i| i * n / k).collect()
    } else {
        (0..k).map(|i| i % n).collect()
    }
}

/// Resolves and runs one call. Instrument tools log through the microscope.
pub fn invoke(scope: &mut Microscope, op: &str, given: &Args) -> Result<Outputs, ToolError> {
    let tool = build_tool_registry().get(op).ok_or_else(|| ToolError::UnknownOp(op.to_string()))?;
    let args = resolve_args(tool, given, "").map_err(ToolError::InvalidParams)?;
    run(scope, tool, &args)
}

/// Like [`invoke`] for generator and analysis tools, which never touch the
/// instrument; instrument tools are refused with `UnknownOp`.
pub fn invoke_readonly(scope: &Microscope, op: &str, given: &Args) -> Result<Outputs, ToolError> {
    let tool = build_tool_registry()
        .get(op)
        .filter(|t| t.kind != ToolKind::Instrument)
        .ok_or_else(|| ToolError::UnknownOp(op.to_string()))?;
    let args = resolve_args(tool, given, "").map_err(ToolError::InvalidParams)?;
    run_pure(scope, tool.name, &args)
}

fn run(scope: &mut Microscope, tool: &ToolSpec, args: &Args) -> Result<Outputs, ToolError> {
    let a = A(args);
    let mut o = Outputs::new();
    match tool.name {
        "define_be_parms" => {
            let partial: PartialBeParams = serde_json::from_value(Json::Object(
                args.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ))
            .map_err(|e| ToolError::analysis("invalid-params", e))?;
            let be = scope.define_be_parms(&partial)?;
            o.insert("be".into(), j(be));
        }
        "set_io_config" => {
            let io = IoConfig {
                sample_rate_hz: a.f64("sample_rate_hz")?,
                output_range_v: a.f64("output_range_v")?,
                channels: a.parse("channels")?,
            };
            o.insert("io".into(), j(scope.set_io_config(&io)?));
        }
        "set_tip_bias" => {
            o.insert("bias_v".into(), j(scope.set_tip_bias(a.f64("bias_v")?)?));
        }
        "tip_control" => {
            let r = scope.tip_control(a.f64("x_um")?, a.f64("y_um")?, a.f64("speed_um_s")?)?;
            o.insert("duration_s".into(), j(r.duration_s));
        }
        "do_line_scan" => {
            o = acquisition_outputs(scope.do_line_scan(a.point("start")?, a.point("end")?, a.usize("num_points")?)?);
        }
        "raster_scan" => {
            let acq = scope.raster_scan(a.region("region")?, a.usize("ny")?, a.usize("nx")?)?;
            let ds = &acq.dataset;
            let shape = ds.channel(dataset::PHASE).map_err(|e| ToolError::analysis("missing-channel", e))?.shape.clone();
            let (rows, cols) = (shape[0], shape[1]);
            for (key, ch) in [("phase", dataset::PHASE), ("amplitude", dataset::AMPLITUDE), ("topography", dataset::TOPOGRAPHY)] {
                let g = ds.channel_image(ch, rows, cols).map_err(|e| ToolError::analysis("missing-channel", e))?;
                o.insert(key.into(), Value::Image(Arc::new(g)));
            }
            o.insert("shape".into(), j([rows, cols]));
            o.extend(acquisition_outputs(acq));
        }
        "do_beps_grid" => {
            let bias: Vec<f64> = a.parse("bias_waveform")?;
            o = acquisition_outputs(scope.do_beps_grid(a.region("region")?, a.usize("ny")?, a.usize("nx")?, &bias)?);
        }
        "do_beps_specific" => {
            let locs: Vec<[f64; 2]> = a.parse("locations")?;
            let bias: Vec<f64> = a.parse("bias_waveform")?;
            o = acquisition_outputs(scope.do_beps_specific(&locs, &bias)?);
        }
        "apply_pulse" => {
            let r = scope.apply_pulse(a.f64("v")?, a.f64("duration_ms")?)?;
            o.insert("flipped".into(), j(r.flipped));
            o.insert("radius_um".into(), j(r.radius_um));
        }
        "do_trajectory_scan" => {
            let t: ScanTrajectory<f64> = a.parse("trajectory")?;
            let acq = scope.do_trajectory_scan(&t, a.usize("measure_every")?)?;
            let n = acq.dataset.channel(dataset::POSITIONS).map(|c| c.shape[0]).unwrap_or(0);
            o = acquisition_outputs(acq);
            o.insert("count".into(), j(n));
        }
        other => return run_pure(scope, other, args),
    }
    Ok(o)
}

fn run_pure(scope: &Microscope, name: &str, args: &Args) -> Result<Outputs, ToolError> {
    let a = A(args);
    let mut o = Outputs::new();
    match name {
        "flower_waveform" => {
            let params = FlowerParams {
                center: a.point("center")?,
                r0_um: a.f64("r0_um")?,
                amp_um: a.f64("amp_um")?,
                petals: a.usize("petals")?,
                n_samples: a.usize("n_samples")?,
                sample_rate_hz: a.f64("sample_rate_hz")?,
            };
            let t = flower_waveform(&params).map_err(|e| ToolError::analysis("invalid-value", e))?;
            o.insert("samples".into(), j(t.len()));
            o.insert("trajectory".into(), j(t));
        }
        "spiral_waveform" => {
            let params = SpiralParams {
                center: a.point("center")?,
                r_max_um: a.f64("r_max_um")?,
                pitch_um: a.f64("pitch_um")?,
                mode: a.parse::<SpiralMode>("mode")?,
                sample_rate_hz: a.f64("sample_rate_hz")?,
                points_per_turn: a.usize("points_per_turn")?,
            };
            let t = spiral_waveform(&params).map_err(|e| ToolError::analysis("invalid-value", e))?;
            o.insert("samples".into(), j(t.len()));
            o.insert("trajectory".into(), j(t));
        }
        "raster_waveform" => {
            let window = scope.instrument().sample().window();
            let t = raster_waveform(a.region("region")?, a.usize("lines")?, a.usize("pts_per_line")?, a.f64("sample_rate_hz")?, window)
                .map_err(|e| ToolError::analysis("invalid-value", e))?;
            o.insert("samples".into(), j(t.len()));
            o.insert("trajectory".into(), j(t));
        }
        "validate_trajectory" => {
            let t: ScanTrajectory<f64> = a.parse("trajectory")?;
            let v = validate_trajectory(&t, &scope.instrument().sample().window(), a.f64("max_speed_um_s")?);
            o.insert("ok".into(), j(v.is_empty()));
            o.insert("violations".into(), j(v));
        }
        "detect_domain_walls" => {
            let img = a.image("image")?;
            let params = CannyParams {
                gaussian_sigma_px: a.f64("gaussian_sigma_px")?,
                low_ratio: a.f64("low_ratio")?,
                high_ratio: a.f64("high_ratio")?,
            };
            let w = detect_domain_walls(&img, &params).map_err(|e| ToolError::analysis("invalid-value", e))?;
            o.insert("count".into(), j(w.coordinates.len()));
            o.insert("coordinates".into(), j(&w.coordinates));
            o.insert("shape".into(), j([img.rows, img.cols]));
            o.insert("mask".into(), Value::Image(Arc::new(w.mask.map(|&b| if b { 1.0 } else { 0.0 }))));
        }
        "select_wall_points" => {
            let coords: Vec<[usize; 2]> = a.parse("coordinates")?;
            let [rows, cols]: [usize; 2] = a.parse("shape")?;
            let region = a.region("region")?;
            let k = a.usize("max_walls")?;
            if rows == 0 || cols == 0 {
                return Err(ToolError::analysis("invalid-value", "shape must be non-empty"));
            }
            if coords.is_empty() && k > 0 {
                return Err(ToolError::analysis("no-walls", "no wall pixels to select from"));
            }
            let picks: Vec<[f64; 2]> = stride_pick(coords.len(), k)
                .into_iter()
                .map(|i| pixel_to_um(&region, rows, cols, coords[i][0], coords[i][1]))
                .collect();
            for (i, pt) in picks.iter().enumerate() {
                o.insert(format!("x_{i}"), j(pt[0]));
                o.insert(format!("y_{i}"), j(pt[1]));
            }
            o.insert("count".into(), j(picks.len()));
            o.insert("points_um".into(), j(picks));
        }
        "fit_sho" => {
            let s: BeSpectrum<f64> = a.parse("spectrum")?;
            let f = fit_sho(&s).map_err(|e| ToolError::analysis("fit-failed", e))?;
            o.insert("a0".into(), j(f.params.a0));
            o.insert("f0_hz".into(), j(f.params.f0_hz));
            o.insert("q_factor".into(), j(f.params.q_factor));
            o.insert("phase_rad".into(), j(f.phase_rad));
            o.insert("residual_rms".into(), j(f.residual_rms));
            o.insert("converged".into(), j(f.converged));
        }
        "mean_spectrum" => {
            let ds = a.dataset("dataset", scope)?;
            let (amp, phase, freq, bins) = spectral_cube(&ds)?;
            let pixels = if bins == 0 { 0 } else { amp.len() / bins };
            let cube = Cube::new(&amp, pixels, bins).map_err(|e| ToolError::analysis("shape-mismatch", e))?;
            let pc = match &phase {
                Some(p) => Some(Cube::new(p, pixels, bins).map_err(|e| ToolError::analysis("shape-mismatch", e))?),
                None => None,
            };
            let s = mean_spectrum(cube, pc, &freq).map_err(|e| ToolError::analysis("shape-mismatch", e))?;
            o.insert("spectrum".into(), j(s));
        }
        "strongest_spectrum" => {
            let ds = a.dataset("dataset", scope)?;
            let (amp, phase, freq, bins) = spectral_cube(&ds)?;
            let pixels = if bins == 0 { 0 } else { amp.len() / bins };
            let cube = Cube::new(&amp, pixels, bins).map_err(|e| ToolError::analysis("shape-mismatch", e))?;
            let (px, amplitude) = strongest_spectrum(cube).map_err(|e| ToolError::analysis("shape-mismatch", e))?;
            let phase_rad = phase.map_or_else(|| vec![0.0; bins], |p| p[px * bins..(px + 1) * bins].to_vec());
            o.insert("pixel".into(), j(px));
            o.insert("spectrum".into(), j(BeSpectrum { frequency_hz: freq, amplitude, phase_rad }));
        }
        "roughness" => {
            let img = a.image("image")?;
            o.insert("roughness_um".into(), j(roughness(&img.data)));
        }
        "excitation_waveform" => {
            let be = scope.state().be.ok_or(ApiError::BeUndefined)?;
            let rate = a.opt_f64("sample_rate_hz").unwrap_or(scope.state().io.sample_rate_hz);
            if !(rate.is_finite() && rate > 0.0) {
                return Err(ToolError::analysis("invalid-value", "sample_rate_hz must be positive"));
            }
            let ts = analysis::excitation_waveform(&be, rate);
            o.insert("t_s".into(), j(ts.t_s));
            o.insert("volts".into(), j(ts.volts));
        }
        "extract_channel_image" => {
            let ds = a.dataset("dataset", scope)?;
            let [rows, cols]: [usize; 2] = a.parse("shape")?;
            let ch: String = a.parse("channel")?;
            let g = analysis::extract_channel_image(&ds, &ch, rows, cols).map_err(|e| ToolError::analysis("shape-mismatch", e))?;
            o.insert("image".into(), Value::Image(Arc::new(g)));
        }
        other => return Err(ToolError::UnknownOp(other.to_string())),
    }
    Ok(o)
}

/// Runs an already-resolved call; used by the plan executor.
pub fn run_resolved(scope: &mut Microscope, tool: &ToolSpec, args: &Args) -> Result<Outputs, ToolError> {
    run(scope, tool, args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{DomainPattern, SampleConfig};

    fn scope() -> Microscope {
        let cfg = SampleConfig { pattern: DomainPattern::TwoDomain, noise_rel: 0.0, ..Default::default() };
        Microscope::with_seed(7, &cfg).unwrap()
    }

    fn args(v: Json) -> Args {
        v.as_object().unwrap().iter().map(|(k, v)| (k.clone(), Value::Json(v.clone()))).collect()
    }

    #[test]
    fn registry_names_unique_and_all_dispatch() {
        let reg = build_tool_registry();
        let mut names: Vec<_> = reg.names().collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), reg.tools().len());
        let mut m = scope();
        for t in reg.tools() {
            // Empty args: either a parameter diagnostic or a domain error, never unknown-op.
            if let Err(e) = invoke(&mut m, t.name, &Args::new()) {
                assert_ne!(e.code(), "unknown-op", "{}", t.name);
            }
        }
    }

    #[test]
    fn indexed_outputs_match() {
        let t = build_tool_registry().get("select_wall_points").unwrap();
        assert!(t.output("x_0").is_some() && t.output("y_12").is_some());
        assert!(t.output("x_").is_none() && t.output("x_a").is_none() && t.output("z_0").is_none());
    }

    #[test]
    fn resolution_reports_each_problem() {
        let t = build_tool_registry().get("spiral_waveform").unwrap();
        let e = resolve_args(t, &args(json!({"tip_voltage_v": 5, "r_max_um": "big"})), "s").unwrap_err();
        let codes: Vec<_> = e.iter().map(|d| d.code).collect();
        assert!(codes.contains(&DiagnosticCode::UnknownParameter));
        assert!(codes.contains(&DiagnosticCode::TypeMismatch));
        assert!(codes.contains(&DiagnosticCode::MissingParameter));
    }

    #[test]
    fn defaults_filled_and_canonical() {
        let t = build_tool_registry().get("do_line_scan").unwrap();
        let r = resolve_args(t, &args(json!({"start": [1, 1], "end": [5, 5]})), "").unwrap();
        assert_eq!(r["num_points"], Value::Json(json!(64)));
        assert_eq!(r["start"], Value::Json(json!([1.0, 1.0])));
    }

    #[test]
    fn select_points_converts_pixels() {
        let mut m = scope();
        let o = invoke(
            &mut m,
            "select_wall_points",
            &args(json!({"coordinates": [[0, 0], [1, 3], [2, 1]], "shape": [4, 4], "region": [0, 0, 4, 8], "max_walls": 2})),
        )
        .unwrap();
        assert_eq!(o["points_um"], Value::Json(json!([[0.5, 1.0], [3.5, 3.0]])));
        assert_eq!(o["x_1"], Value::Json(json!(3.5)));
        assert_eq!(stride_pick(2, 5), vec![0, 1, 0, 1, 0]);
        assert_eq!(stride_pick(10, 3), vec![0, 3, 6]);
    }

    #[test]
    fn invoke_logs_only_instrument_calls() {
        let mut m = scope();
        invoke(&mut m, "define_be_parms", &args(json!({"num_bins": 32}))).unwrap();
        invoke(&mut m, "spiral_waveform", &args(json!({"center": [2.5, 2.5]}))).unwrap();
        assert_eq!(m.log().len(), 1);
        let e = invoke(&mut m, "tip_control", &args(json!({"x_um": 1.0}))).unwrap_err();
        assert_eq!(e.code(), "invalid-params");
        assert_eq!(m.log().len(), 1);
    }
}
