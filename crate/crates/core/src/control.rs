//! Operation surface of the microscope. Each public operation validates its
//! arguments before touching the instrument and appends exactly one record
//! to the experiment log, ok or error, before returning.

use crate::be::{BeParams, PartialBeParams};
use crate::dataset::{self, Channel, Dataset, DatasetMetadata, DatasetStore};
use crate::experiment_log::{ExperimentLog, LogError, LogRecord, RecordStatus};
use crate::fit::fit_sho;
use crate::instrument::{
    default_epoch, InstrumentError, InstrumentState, IoConfig, SampleConfig, SwitchReport, VirtualInstrument,
};
use crate::scalar::linspace;
use crate::sho::{frequency_axis, BeSpectrum};
use crate::trajectory::{validate_trajectory, Region, ScanTrajectory, Violation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_MAX_SPEED_UM_S: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    #[error("BE parameters have not been defined")]
    BeUndefined,
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("region {0:?} is empty or outside the scan window")]
    InvalidRegion([f64; 4]),
    #[error("no locations given")]
    EmptyLocations,
    #[error("trajectory has {} violation(s)", .0.len())]
    TrajectoryInvalid(Vec<Violation>),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error("dataset storage failed: {0}")]
    Storage(String),
    #[error("experiment log failed: {0}")]
    Log(String),
}

impl ApiError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ApiError::InvalidValue { field: field.into(), reason: reason.into() }
    }

    /// Short kebab-case code used in log records and wire errors.
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BeUndefined => "be-undefined",
            ApiError::InvalidValue { .. } => "invalid-value",
            ApiError::InvalidRegion(_) => "invalid-region",
            ApiError::EmptyLocations => "empty-locations",
            ApiError::TrajectoryInvalid(_) => "trajectory-invalid",
            ApiError::Instrument(e) => match e {
                InstrumentError::InvalidConfig(_) => "invalid-config",
                InstrumentError::OutOfWindow { .. } => "out-of-window",
                InstrumentError::RangeExceeded { .. } => "range-exceeded",
                InstrumentError::EmptyBias => "empty-bias",
                InstrumentError::InvalidArgument(_) => "invalid-value",
            },
            ApiError::Storage(_) => "storage",
            ApiError::Log(_) => "log",
        }
    }

    /// Machine-readable detail, currently the violation list of a rejected trajectory.
    pub fn data(&self) -> Option<Json> {
        match self {
            ApiError::TrajectoryInvalid(v) => Some(serde_json::to_value(v).expect("violations serialize")),
            _ => None,
        }
    }
}

impl From<LogError> for ApiError {
    fn from(e: LogError) -> Self {
        ApiError::Log(e.to_string())
    }
}

/// Shared flag checked between pixels of long acquisitions.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Receiver for progress events such as `scan_line`.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: &str, data: Json);
}

impl<F: Fn(&str, Json) + Send + Sync> EventSink for F {
    fn emit(&self, event: &str, data: Json) {
        self(event, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroscopeConfig {
    pub seed: u64,
    pub sample: SampleConfig,
    pub io: IoConfig,
    pub max_speed_um_s: f64,
    /// RFC 3339 start time of the simulated clock.
    pub epoch: String,
}

impl Default for MicroscopeConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            sample: SampleConfig::default(),
            io: IoConfig::default(),
            max_speed_um_s: DEFAULT_MAX_SPEED_UM_S,
            epoch: "2024-01-01T00:00:00Z".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveReport {
    pub duration_s: f64,
    pub x_um: f64,
    pub y_um: f64,
}

/// A dataset produced by an operation, with its store id when persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub dataset: Dataset,
    pub dataset_id: Option<String>,
}

pub struct Microscope {
    inst: VirtualInstrument,
    seed: u64,
    max_speed_um_s: f64,
    log: ExperimentLog,
    store: Option<Arc<DatasetStore>>,
    cancel: CancelToken,
    events: Option<Arc<dyn EventSink>>,
}

type Params = BTreeMap<String, Json>;

fn params(v: Json) -> Params {
    match v {
        Json::Object(m) => m.into_iter().collect(),
        _ => unreachable!("params are built from object literals"),
    }
}

fn finite(field: &str, v: f64) -> Result<(), ApiError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ApiError::invalid(field, format!("{v} is not finite")))
    }
}

fn cell_centers(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (i as f64 + 0.5) * (b - a) / n as f64).collect()
}

impl Microscope {
    pub fn new(cfg: &MicroscopeConfig) -> Result<Self, ApiError> {
        let epoch = chrono::DateTime::parse_from_rfc3339(&cfg.epoch)
            .map_err(|e| ApiError::invalid("epoch", e.to_string()))?
            .with_timezone(&chrono::Utc);
        if !(cfg.max_speed_um_s.is_finite() && cfg.max_speed_um_s > 0.0) {
            return Err(ApiError::invalid("max_speed_um_s", "must be positive"));
        }
        let inst = VirtualInstrument::with_io(cfg.seed, &cfg.sample, cfg.io.clone(), epoch)?;
        Ok(Self::from_instrument(inst, cfg.seed, cfg.max_speed_um_s))
    }

    pub fn from_instrument(inst: VirtualInstrument, seed: u64, max_speed_um_s: f64) -> Self {
        Self {
            inst,
            seed,
            max_speed_um_s,
            log: ExperimentLog::new(),
            store: None,
            cancel: CancelToken::default(),
            events: None,
        }
    }

    /// Instrument with default configuration and clock epoch.
    pub fn with_seed(seed: u64, sample: &SampleConfig) -> Result<Self, ApiError> {
        let inst = VirtualInstrument::with_io(seed, sample, IoConfig::default(), default_epoch())?;
        Ok(Self::from_instrument(inst, seed, DEFAULT_MAX_SPEED_UM_S))
    }

    pub fn set_log(&mut self, log: ExperimentLog) {
        self.log = log;
    }

    pub fn set_store(&mut self, store: Option<Arc<DatasetStore>>) {
        self.store = store;
    }

    pub fn set_event_sink(&mut self, sink: Option<Arc<dyn EventSink>>) {
        self.events = sink;
    }

    pub fn cancel_token(&self) -> CancelToken {
        self.cancel.clone()
    }

    pub fn instrument(&self) -> &VirtualInstrument {
        &self.inst
    }

    pub fn state(&self) -> &InstrumentState {
        self.inst.state()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_speed_um_s(&self) -> f64 {
        self.max_speed_um_s
    }

    pub fn log(&self) -> &ExperimentLog {
        &self.log
    }

    pub fn store(&self) -> Option<&Arc<DatasetStore>> {
        self.store.as_ref()
    }

    pub fn emit(&self, event: &str, data: Json) {
        if let Some(sink) = &self.events {
            sink.emit(event, data);
        }
    }

    fn record(&mut self, op: &str, params: Params, status: RecordStatus, dataset_ref: Option<String>) -> Result<(), ApiError> {
        let r = LogRecord {
            seq: self.log.next_seq(),
            ts: self.inst.clock().timestamp(),
            op: op.to_string(),
            params,
            status,
            dataset_ref,
        };
        self.log.write_record(r)?;
        Ok(())
    }

    fn finish<T>(&mut self, op: &str, params: Params, result: Result<T, ApiError>) -> Result<T, ApiError> {
        match result {
            Ok(v) => {
                self.record(op, params, RecordStatus::Ok, None)?;
                Ok(v)
            }
            Err(e) => {
                self.record(op, params, RecordStatus::Error(e.code().into()), None)?;
                Err(e)
            }
        }
    }

    fn finish_dataset(&mut self, op: &str, params: Params, result: Result<Dataset, ApiError>) -> Result<Acquisition, ApiError> {
        let saved = result.and_then(|ds| {
            let id = match &self.store {
                Some(store) => Some(store.save(&ds).map_err(|e| ApiError::Storage(e.to_string()))?),
                None => None,
            };
            Ok(Acquisition { dataset: ds, dataset_id: id })
        });
        match saved {
            Ok(acq) => {
                self.record(op, params, RecordStatus::Ok, acq.dataset_id.clone())?;
                Ok(acq)
            }
            Err(e) => {
                self.record(op, params, RecordStatus::Error(e.code().into()), None)?;
                Err(e)
            }
        }
    }

    fn require_be(&self) -> Result<BeParams, ApiError> {
        self.inst.state().be.ok_or(ApiError::BeUndefined)
    }

    fn check_region(&self, region: &Region<f64>) -> Result<(), ApiError> {
        let finite = region.as_array().iter().all(|v| v.is_finite());
        if finite && self.inst.sample().window().contains_region(region) {
            Ok(())
        } else {
            Err(ApiError::InvalidRegion(region.as_array()))
        }
    }

    fn metadata(&self, op: &str, be: Option<BeParams>, region: Option<[f64; 4]>, started: String) -> DatasetMetadata {
        DatasetMetadata {
            producing_op: op.into(),
            be,
            region,
            seed: self.seed,
            started,
            finished: self.inst.clock().timestamp(),
            tip_bias_v: self.inst.state().tip_bias_v,
            aborted: false,
            extra: BTreeMap::new(),
        }
    }

    fn move_tip(&mut self, x: f64, y: f64) {
        let s = self.inst.state_mut();
        s.tip_x_um = x;
        s.tip_y_um = y;
    }

    pub fn define_be_parms(&mut self, partial: &PartialBeParams) -> Result<BeParams, ApiError> {
        let be = partial.resolve();
        let p = params(serde_json::to_value(be).expect("BE params serialize"));
        let r = be.validate().map_err(|e| ApiError::invalid(e.field, e.reason)).map(|_| {
            self.inst.state_mut().be = Some(be);
            be
        });
        self.finish("define_be_parms", p, r)
    }

    pub fn set_io_config(&mut self, io: &IoConfig) -> Result<IoConfig, ApiError> {
        let p = params(serde_json::to_value(io).expect("IO config serializes"));
        let r = io.validate().map_err(ApiError::from).and_then(|_| {
            let bias = self.inst.state().tip_bias_v;
            if bias.abs() > io.output_range_v {
                return Err(ApiError::invalid("output_range_v", format!("current tip bias {bias} V exceeds ±{} V", io.output_range_v)));
            }
            self.inst.state_mut().io = io.clone();
            Ok(io.clone())
        });
        self.finish("set_io_config", p, r)
    }

    pub fn set_tip_bias(&mut self, bias_v: f64) -> Result<f64, ApiError> {
        let p = params(json!({ "bias_v": bias_v }));
        let r = self.inst.check_voltage(bias_v).map_err(ApiError::from).map(|_| {
            self.inst.state_mut().tip_bias_v = bias_v;
            bias_v
        });
        self.finish("set_tip_bias", p, r)
    }

    pub fn tip_control(&mut self, x_um: f64, y_um: f64, speed_um_s: f64) -> Result<MoveReport, ApiError> {
        let p = params(json!({ "x_um": x_um, "y_um": y_um, "speed_um_s": speed_um_s }));
        let r = (|| {
            if !(speed_um_s.is_finite() && speed_um_s > 0.0) {
                return Err(ApiError::invalid("speed_um_s", format!("must be positive, got {speed_um_s}")));
            }
            self.inst.check_position(x_um, y_um)?;
            let s = self.inst.state();
            let duration_s = (x_um - s.tip_x_um).hypot(y_um - s.tip_y_um) / speed_um_s;
            self.move_tip(x_um, y_um);
            self.inst.clock_mut().advance_s(duration_s);
            Ok(MoveReport { duration_s, x_um, y_um })
        })();
        self.finish("tip_control", p, r)
    }

    pub fn do_line_scan(&mut self, start: [f64; 2], end: [f64; 2], num_points: usize) -> Result<Acquisition, ApiError> {
        let p = params(json!({ "start": start, "end": end, "num_points": num_points }));
        let r = self.line_scan(start, end, num_points);
        self.finish_dataset("do_line_scan", p, r)
    }

    fn line_scan(&mut self, start: [f64; 2], end: [f64; 2], n: usize) -> Result<Dataset, ApiError> {
        let be = self.require_be()?;
        if n < 2 {
            return Err(ApiError::invalid("num_points", format!("at least 2 required, got {n}")));
        }
        self.inst.check_position(start[0], start[1])?;
        self.inst.check_position(end[0], end[1])?;
        let started = self.inst.clock().timestamp();
        let xs = linspace(start[0], end[0], n);
        let ys = linspace(start[1], end[1], n);
        let mut positions = Vec::with_capacity(2 * n);
        let mut amp = Vec::with_capacity(n * be.num_bins);
        let mut phase = Vec::with_capacity(n * be.num_bins);
        for (&x, &y) in xs.iter().zip(&ys) {
            self.move_tip(x, y);
            let s = self.inst.measure_be_spectrum(x, y, &be)?;
            positions.extend([x, y]);
            amp.extend(s.amplitude);
            phase.extend(s.phase_rad);
        }
        let mut ds = Dataset::new("do_line_scan", self.metadata("do_line_scan", Some(be), None, started));
        ds.insert(dataset::POSITIONS, Channel::f64(vec![n, 2], "um", positions));
        ds.insert(dataset::RAW_SPECTRA, Channel::f64(vec![n, be.num_bins], "a.u.", amp));
        ds.insert(dataset::RAW_PHASE, Channel::f64(vec![n, be.num_bins], "rad", phase));
        ds.insert(dataset::FREQUENCY, frequency_channel(&be));
        Ok(ds)
    }

    pub fn raster_scan(&mut self, region: Region<f64>, ny: usize, nx: usize) -> Result<Acquisition, ApiError> {
        let p = params(json!({ "region": region.as_array(), "ny": ny, "nx": nx }));
        let r = self.raster(region, ny, nx);
        self.finish_dataset("raster_scan", p, r)
    }

    fn raster(&mut self, region: Region<f64>, ny: usize, nx: usize) -> Result<Dataset, ApiError> {
        let be = self.require_be()?;
        self.check_region(&region)?;
        if ny < 2 || nx < 2 {
            return Err(ApiError::invalid("ny/nx", format!("at least 2x2 required, got {ny}x{nx}")));
        }
        self.cancel.reset();
        let started = self.inst.clock().timestamp();
        let bins = be.num_bins;
        let xs = cell_centers(region.x0, region.x1, nx);
        let ys = cell_centers(region.y0, region.y1, ny);
        let mut topo = vec![0.0; ny * nx];
        let mut amp_raw = vec![0.0; ny * nx * bins];
        let mut phase_raw = vec![0.0; ny * nx * bins];
        let mut amp = vec![0.0; ny * nx];
        let mut phase = vec![0.0; ny * nx];
        let mut resonance = vec![0.0; ny * nx];
        let mut quality = vec![0.0; ny * nx];
        let mut fit_failures = 0u64;
        let mut lines_done = 0;
        'lines: for r in 0..ny {
            let cols: Vec<usize> = if r % 2 == 0 { (0..nx).collect() } else { (0..nx).rev().collect() };
            for c in cols {
                if self.cancel.is_cancelled() {
                    break 'lines;
                }
                let (x, y) = (xs[c], ys[r]);
                self.move_tip(x, y);
                let i = r * nx + c;
                topo[i] = self.inst.topography_at(x, y);
                let s = self.inst.measure_be_spectrum(x, y, &be)?;
                match fit_sho(&s) {
                    Ok(f) => {
                        amp[i] = f.params.a0;
                        phase[i] = f.phase_rad;
                        resonance[i] = f.params.f0_hz;
                        quality[i] = f.params.q_factor;
                    }
                    Err(_) => {
                        fit_failures += 1;
                        let (k, _) = s.amplitude.iter().enumerate().fold((0, f64::MIN), |m, (k, &a)| if a > m.1 { (k, a) } else { m });
                        phase[i] = s.phase_rad[k];
                        resonance[i] = s.frequency_hz[k];
                    }
                }
                amp_raw[i * bins..(i + 1) * bins].copy_from_slice(&s.amplitude);
                phase_raw[i * bins..(i + 1) * bins].copy_from_slice(&s.phase_rad);
            }
            lines_done = r + 1;
            let row = r * nx..(r + 1) * nx;
            self.emit(
                "scan_line",
                json!({
                    "op": "raster_scan",
                    "line": r,
                    "total": ny,
                    "amplitude": &amp[row.clone()],
                    "phase": &phase[row.clone()],
                    "topography": &topo[row],
                }),
            );
        }
        let aborted = lines_done < ny;
        let n = lines_done * nx;
        let mut meta = self.metadata("raster_scan", Some(be), Some(region.as_array()), started);
        meta.aborted = aborted;
        if fit_failures > 0 {
            meta.extra.insert("fit_failures".into(), json!(fit_failures));
        }
        if aborted {
            meta.extra.insert("lines_requested".into(), json!(ny));
        }
        let mut ds = Dataset::new("raster_scan", meta);
        let shape = vec![lines_done, nx];
        let cube = vec![lines_done, nx, bins];
        topo.truncate(n);
        amp.truncate(n);
        phase.truncate(n);
        resonance.truncate(n);
        quality.truncate(n);
        amp_raw.truncate(n * bins);
        phase_raw.truncate(n * bins);
        ds.insert(dataset::TOPOGRAPHY, Channel::f64(shape.clone(), "um", topo));
        ds.insert(dataset::AMPLITUDE, Channel::f64(shape.clone(), "a.u.", amp));
        ds.insert(dataset::PHASE, Channel::f64(shape.clone(), "rad", phase));
        ds.insert(dataset::RESONANCE, Channel::f64(shape.clone(), "Hz", resonance));
        ds.insert(dataset::QUALITY, Channel::f64(shape, "", quality));
        ds.insert(dataset::RAW_SPECTRA, Channel::f64(cube.clone(), "a.u.", amp_raw));
        ds.insert(dataset::RAW_PHASE, Channel::f64(cube, "rad", phase_raw));
        ds.insert(dataset::FREQUENCY, frequency_channel(&be));
        Ok(ds)
    }

    pub fn do_beps_grid(&mut self, region: Region<f64>, ny: usize, nx: usize, bias_waveform: &[f64]) -> Result<Acquisition, ApiError> {
        let p = params(json!({ "region": region.as_array(), "ny": ny, "nx": nx, "bias_waveform": bias_waveform }));
        let r = (|| {
            self.check_region(&region)?;
            if ny == 0 || nx == 0 {
                return Err(ApiError::invalid("ny/nx", "grid must have at least one point"));
            }
            let xs = cell_centers(region.x0, region.x1, nx);
            let ys = cell_centers(region.y0, region.y1, ny);
            let points: Vec<[f64; 2]> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
            let mut ds = self.beps(&points, bias_waveform, "do_beps_grid", vec![ny, nx], Some(region.as_array()))?;
            ds.name = "do_beps_grid".into();
            Ok(ds)
        })();
        self.finish_dataset("do_beps_grid", p, r)
    }

    pub fn do_beps_specific(&mut self, locations: &[[f64; 2]], bias_waveform: &[f64]) -> Result<Acquisition, ApiError> {
        let p = params(json!({ "locations": locations, "bias_waveform": bias_waveform }));
        let r = (|| {
            if locations.is_empty() {
                return Err(ApiError::EmptyLocations);
            }
            self.beps(locations, bias_waveform, "do_beps_specific", vec![locations.len()], None)
        })();
        self.finish_dataset("do_beps_specific", p, r)
    }

    fn beps(&mut self, points: &[[f64; 2]], bias: &[f64], op: &str, lead: Vec<usize>, region: Option<[f64; 4]>) -> Result<Dataset, ApiError> {
        let be = self.require_be()?;
        for &[x, y] in points {
            self.inst.check_beps(x, y, bias)?;
        }
        self.cancel.reset();
        let started = self.inst.clock().timestamp();
        let (steps, bins) = (bias.len(), be.num_bins);
        let mut amp = Vec::with_capacity(points.len() * steps * bins);
        let mut phase = Vec::with_capacity(amp.capacity());
        let mut pol = Vec::with_capacity(points.len() * steps);
        let mut positions = Vec::with_capacity(points.len() * 2);
        let mut done = 0;
        for (k, &[x, y]) in points.iter().enumerate() {
            if self.cancel.is_cancelled() {
                break;
            }
            self.move_tip(x, y);
            let l = self.inst.beps_at(x, y, bias, &be)?;
            for s in l.spectra {
                amp.extend(s.amplitude);
                phase.extend(s.phase_rad);
            }
            pol.extend(l.states.iter().map(|p| f64::from(p.sign())));
            positions.extend([x, y]);
            done = k + 1;
            self.emit("beps_point", json!({ "op": op, "index": k, "total": points.len(), "x_um": x, "y_um": y }));
        }
        let aborted = done < points.len();
        let mut meta = self.metadata(op, Some(be), region, started);
        meta.aborted = aborted;
        let lead = if aborted { vec![done] } else { lead };
        let with = |tail: &[usize]| lead.iter().chain(tail).copied().collect::<Vec<_>>();
        let mut ds = Dataset::new(op, meta);
        ds.insert(dataset::LOOP_AMPLITUDE, Channel::f64(with(&[steps, bins]), "a.u.", amp));
        ds.insert(dataset::LOOP_PHASE, Channel::f64(with(&[steps, bins]), "rad", phase));
        ds.insert(dataset::LOOP_POLARIZATION, Channel::f64(with(&[steps]), "", pol));
        ds.insert(dataset::BIAS, Channel::f64(vec![steps], "V", bias.to_vec()));
        ds.insert(dataset::POSITIONS, Channel::f64(vec![done, 2], "um", positions));
        ds.insert(dataset::FREQUENCY, frequency_channel(&be));
        Ok(ds)
    }

    pub fn apply_pulse(&mut self, v: f64, duration_ms: f64) -> Result<SwitchReport, ApiError> {
        let p = params(json!({ "v": v, "duration_ms": duration_ms }));
        let r = (|| {
            finite("v", v)?;
            let s = self.inst.state();
            let (x, y) = (s.tip_x_um, s.tip_y_um);
            Ok(self.inst.apply_dc_pulse_at(x, y, v, duration_ms)?)
        })();
        self.finish("apply_pulse", p, r)
    }

    pub fn do_trajectory_scan(&mut self, t: &ScanTrajectory<f64>, measure_every: usize) -> Result<Acquisition, ApiError> {
        let p = params(json!({ "trajectory": t, "measure_every": measure_every }));
        let r = self.trajectory_scan(t, measure_every);
        self.finish_dataset("do_trajectory_scan", p, r)
    }

    fn trajectory_scan(&mut self, t: &ScanTrajectory<f64>, every: usize) -> Result<Dataset, ApiError> {
        let be = self.require_be()?;
        if every == 0 {
            return Err(ApiError::invalid("measure_every", "must be at least 1"));
        }
        if t.is_empty() {
            return Err(ApiError::invalid("trajectory", "no samples"));
        }
        if !(t.sample_rate_hz.is_finite() && t.sample_rate_hz > 0.0) {
            return Err(ApiError::invalid("trajectory", "sample rate must be positive"));
        }
        let violations = validate_trajectory(t, &self.inst.sample().window(), self.max_speed_um_s);
        if !violations.is_empty() {
            return Err(ApiError::TrajectoryInvalid(violations));
        }
        self.cancel.reset();
        let started = self.inst.clock().timestamp();
        let mut positions = Vec::new();
        let mut amp = Vec::new();
        let mut phase = Vec::new();
        let mut aborted = false;
        let dt = 1.0 / t.sample_rate_hz;
        for (i, &[x, y]) in t.samples.iter().enumerate() {
            if self.cancel.is_cancelled() {
                aborted = true;
                break;
            }
            if i > 0 {
                self.inst.clock_mut().advance_s(dt);
            }
            self.move_tip(x, y);
            if i % every == 0 {
                let s = self.inst.measure_be_spectrum(x, y, &be)?;
                positions.extend([x, y]);
                amp.extend(s.amplitude);
                phase.extend(s.phase_rad);
            }
        }
        let n = positions.len() / 2;
        let mut meta = self.metadata("do_trajectory_scan", Some(be), None, started);
        meta.aborted = aborted;
        let mut ds = Dataset::new("do_trajectory_scan", meta);
        ds.insert(dataset::POSITIONS, Channel::f64(vec![n, 2], "um", positions));
        ds.insert(dataset::RAW_SPECTRA, Channel::f64(vec![n, be.num_bins], "a.u.", amp));
        ds.insert(dataset::RAW_PHASE, Channel::f64(vec![n, be.num_bins], "rad", phase));
        ds.insert(dataset::FREQUENCY, frequency_channel(&be));
        Ok(ds)
    }

    /// Single spectrum at the current tip position; not a logged operation.
    pub fn peek_spectrum(&self, x_um: f64, y_um: f64) -> Result<BeSpectrum<f64>, ApiError> {
        let be = self.require_be()?;
        let mut probe = self.inst.clone();
        Ok(probe.measure_be_spectrum(x_um, y_um, &be)?)
    }
}

fn frequency_channel(be: &BeParams) -> Channel {
    Channel::f64(vec![be.num_bins], "Hz", frequency_axis(be.center_hz(), be.band_width_hz(), be.num_bins))
}
