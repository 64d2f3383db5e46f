//! Configuration-driven runs.
//!
//! A scenario is a JSON document describing ground stations, the Qlients
//! hanging off them, device parameters, the satellite or balloon backbone
//! and an optional parameter sweep. [`run_scenario`] turns it into
//! [`ResultRow`]s (the CSV contract) plus a human-readable [`Summary`].
//!
//! Parsing is strict: unknown keys, missing required keys and references
//! to undefined nodes are all errors that name the offending path.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atmosphere::Aerosol;
use crate::channel::{SlantChannel, DEFAULT_WAVELENGTH_M};
use crate::error::{Error, Result};
use crate::orbit::{
    elevation_range, great_circle_midpoint, load_ephemeris, pass_windows, CircularOrbit, EphemerisSample,
    GroundStation, PassWindow, StationView, DEFAULT_MASK_DEG,
};
use crate::protocols::{
    balloon_chain, chain_rate, key_per_pass, limiting_link, run_bb84_downlink, run_bb84_fiber, run_bbm92, sifted,
    throughput, BalloonScenario, Bbm92Arm, ChainEnds, DeviceParams, LinkRate, TrialPlan,
};
use crate::sim::{stream_id, RateEstimate};

/// Keys every scenario must define.
pub const REQUIRED_KEYS: [&str; 5] = ["name", "seed", "n_trials", "n_photons", "stations"];

/// Exact header of every results CSV.
pub const CSV_HEADER: &str = "t_s,elev_A_deg,range_A_km,elev_B_deg,range_B_km,param,rate_mean,rate_std,qber";

/// Names of the presets compiled into the library.
pub const PRESET_NAMES: [&str; 4] = [
    "paris-delft-micius",
    "paris-delft-bbm92",
    "balloon-trusted",
    "param-sweeps",
];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "paris-delft-micius" => include_str!("../presets/paris-delft-micius.json"),
        "paris-delft-bbm92" => include_str!("../presets/paris-delft-bbm92.json"),
        "balloon-trusted" => include_str!("../presets/balloon-trusted.json"),
        "param-sweeps" => include_str!("../presets/param-sweeps.json"),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Geometry only.
    Pass,
    Downlink,
    Chain,
    Bbm92,
    Balloon,
    Sweep,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Pass,
        Mode::Downlink,
        Mode::Chain,
        Mode::Bbm92,
        Mode::Balloon,
        Mode::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Pass => "pass",
            Mode::Downlink => "downlink",
            Mode::Chain => "chain",
            Mode::Bbm92 => "bbm92",
            Mode::Balloon => "balloon",
            Mode::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qlient {
    pub name: String,
    /// Name of the station acting as this Qlient's Qonnector.
    pub qonnector: String,
    pub fiber_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircularSpec {
    pub alt_km: f64,
    pub inclination_deg: f64,
    #[serde(default)]
    pub raan_phase_deg: f64,
    pub t0_s: f64,
    pub t1_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OrbitSource {
    /// Synthetic orbit through the zenith of the first station at `t = 0`.
    Circular(CircularSpec),
    /// CSV file; relative paths resolve against the scenario file.
    Ephemeris { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteSpec {
    pub orbit: OrbitSource,
    pub divergence_rad: f64,
    pub pointing_rad: f64,
    pub aperture_m: f64,
    #[serde(default)]
    pub aerosol: Aerosol,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
    #[serde(default = "default_mask")]
    pub mask_deg: f64,
    #[serde(default = "one")]
    pub calibration: f64,
    /// Overrides the table's zenith transmittance.
    #[serde(default)]
    pub t_zenith: Option<f64>,
}

fn default_wavelength() -> f64 {
    DEFAULT_WAVELENGTH_M
}

fn default_mask() -> f64 {
    DEFAULT_MASK_DEG
}

fn one() -> f64 {
    1.0
}

impl SatelliteSpec {
    pub fn channel(&self, view: &StationView) -> SlantChannel {
        SlantChannel {
            divergence_rad: self.divergence_rad,
            pointing_rad: self.pointing_rad,
            aperture_m: self.aperture_m,
            range_m: view.range_km * 1e3,
            zenith_rad: (90.0 - view.elevation_deg).to_radians(),
            aerosol: self.aerosol,
            wavelength_m: self.wavelength_m,
            t_zenith_override: self.t_zenith,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bbm92Geometry {
    /// Satellite above the great-circle midpoint of the two Qonnectors.
    #[default]
    Midpoint,
    /// Every orbit point where both Qonnectors see the satellite.
    Pass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bbm92Spec {
    pub pairs: Vec<[String; 2]>,
    #[serde(default)]
    pub geometry: Bbm92Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalloonSpec {
    pub left: String,
    pub right: String,
    #[serde(default)]
    pub link: BalloonScenario,
}

/// The closed set of parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Receiver aperture radius (ground telescope, or balloon receiver).
    ApertureM,
    DivergenceRad,
    PointingRad,
    Aerosol,
    WavelengthM,
    /// Turbulence strength of the balloon-to-balloon hop.
    Cn2,
    /// Balloon altitude.
    AltitudeKm,
}

impl SweepParameter {
    /// Whether the parameter only makes sense for the balloon backbone.
    pub fn balloon_only(self) -> bool {
        matches!(self, SweepParameter::Cn2 | SweepParameter::AltitudeKm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Name(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x:?}"),
            SweepValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSpec {
    /// Effective source success probability used for throughput figures.
    pub p_source: f64,
    /// Halve rates to account for basis sifting.
    pub sifting: bool,
    /// Calibration factor applied to Qlient fiber links.
    pub fiber_calibration: f64,
}

impl Default for ReportSpec {
    fn default() -> Self {
        ReportSpec {
            p_source: 0.1,
            sifting: false,
            fiber_calibration: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub n_trials: usize,
    /// States (or pairs) sent per orbit point and trial.
    pub n_photons: u64,
    pub stations: Vec<GroundStation>,
    #[serde(default)]
    pub qlients: Vec<Qlient>,
    #[serde(default)]
    pub devices: DeviceParams,
    #[serde(default)]
    pub satellite: Option<SatelliteSpec>,
    /// Qlient pairs joined through trusted nodes.
    #[serde(default)]
    pub chains: Vec<[String; 2]>,
    #[serde(default)]
    pub bbm92: Option<Bbm92Spec>,
    #[serde(default)]
    pub balloon: Option<BalloonSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub report: ReportSpec,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    /// Loads a scenario from a file, or a built-in preset when `spec` is not
    /// an existing path but names one.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            return parse_scenario(path);
        }
        match preset_text(spec) {
            Some(text) => Scenario::from_json(text),
            None => Err(Error::config(
                spec,
                format!("no such file, and not a preset (known: {})", PRESET_NAMES.join(", ")),
            )),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| Error::config(name, format!("unknown preset `{name}`")))?;
        Scenario::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(missing_keys(&REQUIRED_KEYS));
        }
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<root>", format!("malformed JSON at line {}: {e}", e.line())))?;
        let Some(object) = value.as_object() else {
            return Err(Error::config("<root>", "a scenario must be a JSON object"));
        };
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !object.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(missing_keys(&missing));
        }
        let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    fn station_index(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.name == name)
    }

    fn qlient(&self, name: &str) -> Option<&Qlient> {
        self.qlients.iter().find(|q| q.name == name)
    }

    /// Checks everything serde cannot: ranges, uniqueness and references.
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::config("n_trials", "must be at least 1"));
        }
        if self.n_photons == 0 {
            return Err(Error::config("n_photons", "must be at least 1"));
        }
        if self.stations.is_empty() {
            return Err(Error::config("stations", "at least one station is required"));
        }
        let mut names = HashSet::new();
        for (i, s) in self.stations.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::config(format!("stations[{i}]"), e.to_string()))?;
            if !names.insert(s.name.as_str()) {
                return Err(Error::config(
                    format!("stations[{i}].name"),
                    format!("duplicate station `{}`", s.name),
                ));
            }
        }
        let mut qnames = HashSet::new();
        for (i, q) in self.qlients.iter().enumerate() {
            if !qnames.insert(q.name.as_str()) {
                return Err(Error::config(
                    format!("qlients[{i}].name"),
                    format!("duplicate Qlient `{}`", q.name),
                ));
            }
            if self.station_index(&q.qonnector).is_none() {
                return Err(Error::config(
                    format!("qlients[{i}].qonnector"),
                    format!("undefined station `{}`", q.qonnector),
                ));
            }
            if !(q.fiber_km >= 0.0) {
                return Err(Error::config(format!("qlients[{i}].fiber_km"), "must be nonnegative"));
            }
        }
        let check_qlient = |path: String, name: &str| {
            if self.qlient(name).is_some() {
                Ok(())
            } else {
                Err(Error::config(path, format!("undefined Qlient `{name}`")))
            }
        };
        for (i, [l, r]) in self.chains.iter().enumerate() {
            check_qlient(format!("chains[{i}][0]"), l)?;
            check_qlient(format!("chains[{i}][1]"), r)?;
        }
        if let Some(b) = &self.bbm92 {
            for (i, [l, r]) in b.pairs.iter().enumerate() {
                check_qlient(format!("bbm92.pairs[{i}][0]"), l)?;
                check_qlient(format!("bbm92.pairs[{i}][1]"), r)?;
            }
        }
        if let Some(b) = &self.balloon {
            check_qlient("balloon.left".into(), &b.left)?;
            check_qlient("balloon.right".into(), &b.right)?;
            if !(b.link.altitude_km > 0.0) {
                return Err(Error::config("balloon.link.altitude_km", "must be positive"));
            }
        }
        self.devices
            .validate()
            .map_err(|e| Error::config("devices", e.to_string()))?;
        if let Some(sat) = &self.satellite {
            if let OrbitSource::Circular(c) = &sat.orbit {
                if !(c.alt_km > 0.0) {
                    return Err(Error::config("satellite.orbit.circular.alt_km", "must be positive"));
                }
                if !(c.t1_s > c.t0_s) {
                    return Err(Error::config(
                        "satellite.orbit.circular.t1_s",
                        "must be later than t0_s",
                    ));
                }
            }
            if !(-90.0..=90.0).contains(&sat.mask_deg) {
                return Err(Error::config("satellite.mask_deg", "must lie in [-90, 90]"));
            }
            if !(sat.calibration >= 0.0) {
                return Err(Error::config("satellite.calibration", "must be nonnegative"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values", "at least one value is required"));
            }
            for (i, v) in sweep.values.iter().enumerate() {
                let path = format!("sweep.values[{i}]");
                match (sweep.parameter, v) {
                    (SweepParameter::Aerosol, SweepValue::Name(n)) => {
                        n.parse::<Aerosol>().map_err(|e| Error::config(path, e.to_string()))?;
                    }
                    (SweepParameter::Aerosol, SweepValue::Number(_)) => {
                        return Err(Error::config(path, "aerosol sweeps take model names"));
                    }
                    (_, SweepValue::Name(n)) => {
                        return Err(Error::config(path, format!("expected a number, found `{n}`")));
                    }
                    (_, SweepValue::Number(x)) if !x.is_finite() || *x < 0.0 => {
                        return Err(Error::config(path, "must be a finite nonnegative number"));
                    }
                    _ => {}
                }
            }
        }
        if !(self.report.p_source >= 0.0 && self.report.p_source <= 1.0) {
            return Err(Error::config("report.p_source", "must be a probability"));
        }
        Ok(())
    }

    fn satellite(&self, mode: Mode) -> Result<&SatelliteSpec> {
        self.satellite
            .as_ref()
            .ok_or_else(|| Error::config("satellite", format!("required for {mode} runs")))
    }

    /// Orbit samples for every station.
    pub fn ephemeris(&self, sat: &SatelliteSpec) -> Result<Vec<EphemerisSample>> {
        match &sat.orbit {
            OrbitSource::Circular(c) => {
                let orbit =
                    CircularOrbit::through_zenith(c.alt_km, c.inclination_deg, c.raan_phase_deg, &self.stations[0])
                        .map_err(|e| Error::config("satellite.orbit.circular", e.to_string()))?;
                Ok(orbit.sample(&self.stations, c.t0_s, c.t1_s))
            }
            OrbitSource::Ephemeris { path } => {
                let resolved = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                load_ephemeris(resolved, &self.stations)
            }
        }
    }
}

fn missing_keys(keys: &[&str]) -> Error {
    Error::config("<root>", format!("missing required keys: {}", keys.join(", ")))
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read scenario: {e}")))?;
    let mut scenario = Scenario::from_json(&text).map_err(|e| match e {
        Error::Config { path: key, message } => Error::config(format!("{}: {key}", path.display()), message),
        other => other,
    })?;
    scenario.base_dir = path.parent().map(Path::to_path_buf);
    Ok(scenario)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub t_s: f64,
    #[serde(rename = "elev_A_deg")]
    pub elev_a_deg: Option<f64>,
    #[serde(rename = "range_A_km")]
    pub range_a_km: Option<f64>,
    #[serde(rename = "elev_B_deg")]
    pub elev_b_deg: Option<f64>,
    #[serde(rename = "range_B_km")]
    pub range_b_km: Option<f64>,
    /// Swept value, or a pair label for chain and BBM92 runs.
    pub param: Option<String>,
    pub rate_mean: Option<f64>,
    pub rate_std: Option<f64>,
    pub qber: Option<f64>,
}

impl ResultRow {
    fn at(t_s: f64, a: Option<StationView>, b: Option<StationView>) -> Self {
        ResultRow {
            t_s,
            elev_a_deg: a.map(|v| v.elevation_deg),
            range_a_km: a.map(|v| v.range_km),
            elev_b_deg: b.map(|v| v.elevation_deg),
            range_b_km: b.map(|v| v.range_km),
            param: None,
            rate_mean: None,
            rate_std: None,
            qber: None,
        }
    }

    fn with_rate(mut self, estimate: &RateEstimate, qber: f64) -> Self {
        self.rate_mean = Some(estimate.mean);
        self.rate_std = Some(estimate.std);
        self.qber = Some(qber);
        self
    }

    fn with_param(mut self, param: impl Into<String>) -> Self {
        self.param = Some(param.into());
        self
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer
        .write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::Runtime(format!("writing CSV: {e}")))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Runtime(format!("writing CSV: {e}")))?;
    }
    writer.flush().map_err(|e| Error::Runtime(format!("writing CSV: {e}")))
}

pub fn read_csv<R: Read>(input: R, origin: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Data {
            file: origin.into(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::Data {
            file: origin.into(),
            line: 1,
            message: format!("expected header `{CSV_HEADER}`"),
        });
    }
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Data {
                file: origin.into(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub link: String,
    pub rate: f64,
    pub std: f64,
    pub qber: f64,
    /// Orbit time of the best point, when the link depends on geometry.
    pub at_t_s: Option<f64>,
    pub throughput_bps: f64,
    /// Per-arm click rates of an entanglement link.
    pub marginals: Option<[RateEstimate; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub left: String,
    pub right: String,
    pub rate: f64,
    pub limiting: String,
    pub throughput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub value: String,
    pub max_rate: f64,
    /// Raw key bits over the pass, or the chain rate for balloon sweeps.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: Option<Mode>,
    /// False when no orbit point clears the elevation mask.
    pub usable: bool,
    pub windows: Vec<(f64, f64)>,
    pub links: Vec<LinkSummary>,
    pub chains: Vec<ChainSummary>,
    pub key_bits: Option<f64>,
    pub sweep: Vec<SweepSummary>,
    pub notes: Vec<String>,
}

impl Summary {
    fn new(s: &Scenario, mode: Mode) -> Self {
        Summary {
            scenario: s.name.clone(),
            mode: Some(mode),
            usable: true,
            ..Default::default()
        }
    }

    fn unusable(mut self, mask: f64) -> Self {
        self.usable = false;
        self.notes
            .push(format!("no usable pass: no orbit point clears the {mask}° mask"));
        self
    }

    /// Highest rate among the links whose name contains `needle`.
    pub fn link(&self, needle: &str) -> Option<&LinkSummary> {
        self.links.iter().find(|l| l.link.contains(needle))
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = self.mode.map_or("-", Mode::name);
        writeln!(f, "scenario {} ({mode})", self.scenario)?;
        for (a, b) in &self.windows {
            writeln!(f, "pass window {a} s .. {b} s")?;
        }
        for l in &self.links {
            write!(
                f,
                "link {}: rate {:.6} ± {:.6}, qber {:.3e}",
                l.link, l.rate, l.std, l.qber
            )?;
            if let Some(t) = l.at_t_s {
                write!(f, " at t = {t} s")?;
            }
            writeln!(f, ", {:.4e} bit/s", l.throughput_bps)?;
        }
        for c in &self.chains {
            writeln!(
                f,
                "chain {} - {}: rate {:.6} limited by {}, {:.4e} bit/s",
                c.left, c.right, c.rate, c.limiting, c.throughput_bps
            )?;
        }
        if let Some(bits) = self.key_bits {
            writeln!(f, "raw key per pass: {bits:.0} bits")?;
        }
        for s in &self.sweep {
            writeln!(f, "sweep {}: max rate {:.6}, total {:.6}", s.value, s.max_rate, s.total)?;
        }
        for n in &self.notes {
            writeln!(f, "{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

// Stream namespaces, so that links never share random numbers.
const TAG_DOWNLINK: u64 = 1;
const TAG_FIBER: u64 = 2;
const TAG_BBM92: u64 = 3;
const TAG_BALLOON: u64 = 4;

/// Runs one mode of a scenario.
pub fn run_scenario(s: &Scenario, mode: Mode) -> Result<RunOutput> {
    s.validate()?;
    match mode {
        Mode::Pass => run_pass(s),
        Mode::Downlink => run_downlink(s, None),
        Mode::Chain => run_chain(s),
        Mode::Bbm92 => run_bbm92_mode(s),
        Mode::Balloon => run_balloon(s, s.sweep.as_ref()),
        Mode::Sweep => {
            let sweep = s
                .sweep
                .as_ref()
                .ok_or_else(|| Error::config("sweep", "required for sweep runs"))?;
            if sweep.parameter.balloon_only() || s.satellite.is_none() {
                run_balloon(s, Some(sweep))
            } else {
                run_downlink(s, Some(sweep))
            }
        }
    }
}

fn view(sample: &EphemerisSample, i: usize) -> Option<StationView> {
    sample.views.get(i).copied()
}

fn windows_summary(windows: &[PassWindow]) -> Vec<(f64, f64)> {
    windows.iter().map(|w| (w.start_s, w.end_s)).collect()
}

fn run_pass(s: &Scenario) -> Result<RunOutput> {
    let sat = s.satellite(Mode::Pass)?;
    let samples = s.ephemeris(sat)?;
    let windows = pass_windows(&samples, sat.mask_deg, &[0]);
    let mut summary = Summary::new(s, Mode::Pass);
    if windows.is_empty() {
        return Ok(RunOutput {
            rows: vec![],
            summary: summary.unusable(sat.mask_deg),
        });
    }
    summary.windows = windows_summary(&windows);
    for (i, st) in s.stations.iter().enumerate() {
        let best = samples
            .iter()
            .filter_map(|x| x.views.get(i))
            .map(|v| v.elevation_deg)
            .fold(f64::NEG_INFINITY, f64::max);
        summary.notes.push(format!("{}: peak elevation {best:.2}°", st.name));
    }
    let rows = windows
        .iter()
        .flat_map(|w| &w.samples)
        .map(|x| ResultRow::at(x.t_s, view(x, 0), view(x, 1)))
        .collect();
    Ok(RunOutput { rows, summary })
}

fn apply_sat(sat: &SatelliteSpec, param: SweepParameter, value: &SweepValue) -> Result<SatelliteSpec> {
    let mut out = sat.clone();
    match (param, value) {
        (SweepParameter::ApertureM, SweepValue::Number(x)) => out.aperture_m = *x,
        (SweepParameter::DivergenceRad, SweepValue::Number(x)) => out.divergence_rad = *x,
        (SweepParameter::PointingRad, SweepValue::Number(x)) => out.pointing_rad = *x,
        (SweepParameter::WavelengthM, SweepValue::Number(x)) => out.wavelength_m = *x,
        (SweepParameter::Aerosol, SweepValue::Name(n)) => out.aerosol = n.parse()?,
        (p, v) => {
            return Err(Error::config(
                "sweep",
                format!("cannot apply {p:?} = {v} to a satellite link"),
            ));
        }
    }
    Ok(out)
}

fn apply_balloon(link: &BalloonScenario, param: SweepParameter, value: &SweepValue) -> Result<BalloonScenario> {
    let mut out = link.clone();
    match (param, value) {
        (SweepParameter::ApertureM, SweepValue::Number(x)) => out.balloon_aperture_m = *x,
        (SweepParameter::DivergenceRad, SweepValue::Number(x)) => out.divergence_rad = *x,
        (SweepParameter::PointingRad, SweepValue::Number(x)) => out.pointing_rad = *x,
        (SweepParameter::WavelengthM, SweepValue::Number(x)) => out.wavelength_m = *x,
        (SweepParameter::Cn2, SweepValue::Number(x)) => out.cn2_link = *x,
        (SweepParameter::AltitudeKm, SweepValue::Number(x)) => out.altitude_km = *x,
        (SweepParameter::Aerosol, SweepValue::Name(n)) => out.aerosol = n.parse()?,
        (p, v) => {
            return Err(Error::config(
                "sweep",
                format!("cannot apply {p:?} = {v} to a balloon link"),
            ));
        }
    }
    Ok(out)
}

fn maybe_sift(s: &Scenario, link: LinkRate) -> LinkRate {
    if s.report.sifting {
        LinkRate {
            estimate: sifted(link.estimate),
            ..link
        }
    } else {
        link
    }
}

fn trial_plan(s: &Scenario, path: &[u64]) -> TrialPlan {
    TrialPlan::new(s.seed, stream_id(path)).with_trials(s.n_trials)
}

/// BB84 downlinks to station A over its pass, once per sweep value.
fn run_downlink(s: &Scenario, sweep: Option<&SweepSpec>) -> Result<RunOutput> {
    let mode = if sweep.is_some() { Mode::Sweep } else { Mode::Downlink };
    let base = s.satellite(mode)?;
    let samples = s.ephemeris(base)?;
    let windows = pass_windows(&samples, base.mask_deg, &[0]);
    let summary = Summary::new(s, mode);
    if windows.is_empty() {
        return Ok(RunOutput {
            rows: vec![],
            summary: summary.unusable(base.mask_deg),
        });
    }
    let values: Vec<Option<&SweepValue>> = match sweep {
        Some(sw) => sw.values.iter().map(Some).collect(),
        None => vec![None],
    };
    let points: Vec<&EphemerisSample> = windows.iter().flat_map(|w| &w.samples).collect();
    let det = &s.devices.detector;
    let src = &s.devices.source;

    let mut per_value: Vec<Vec<LinkRate>> = Vec::with_capacity(values.len());
    for (j, value) in values.iter().enumerate() {
        let sat = match (sweep, value) {
            (Some(sw), Some(v)) => apply_sat(base, sw.parameter, v)?,
            _ => base.clone(),
        };
        let rates = points
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let ch = sat.channel(&x.views[0]);
                let plan = trial_plan(s, &[TAG_DOWNLINK, 0, j as u64, k as u64]);
                run_bb84_downlink(&ch, src, det, sat.calibration, s.n_photons, plan).map(|r| maybe_sift(s, r))
            })
            .collect::<Result<Vec<_>>>()?;
        per_value.push(rates);
    }

    let mut rows = Vec::with_capacity(points.len() * values.len());
    for (k, x) in points.iter().enumerate() {
        for (j, value) in values.iter().enumerate() {
            let r = &per_value[j][k];
            let mut row = ResultRow::at(x.t_s, view(x, 0), view(x, 1)).with_rate(&r.estimate, r.qber);
            if let Some(v) = value {
                row = row.with_param(v.to_string());
            }
            rows.push(row);
        }
    }

    let mut summary = summary;
    summary.windows = windows_summary(&windows);
    let f = s.devices.source.f_qubit_hz;
    for (j, value) in values.iter().enumerate() {
        let rates = &per_value[j];
        let (k_best, best) = rates
            .iter()
            .enumerate()
            .reduce(|a, b| if b.1.rate() > a.1.rate() { b } else { a })
            .expect("windows are nonempty");
        let mut next = rates.iter();
        let mut bits = 0.0;
        for w in &windows {
            bits += key_per_pass(w, s.n_photons, |_| Ok(next.next().map_or(0.0, LinkRate::rate)))?;
        }
        match value {
            None => {
                summary.links.push(LinkSummary {
                    link: format!("satellite -> {}", s.stations[0].name),
                    rate: best.rate(),
                    std: best.estimate.std,
                    qber: best.qber,
                    at_t_s: Some(points[k_best].t_s),
                    throughput_bps: throughput(best.rate(), f, s.report.p_source),
                    marginals: None,
                });
                summary.key_bits = Some(bits);
            }
            Some(v) => summary.sweep.push(SweepSummary {
                value: v.to_string(),
                max_rate: best.rate(),
                total: bits,
            }),
        }
    }
    Ok(RunOutput { rows, summary })
}

/// BB84 rate of every Qlient's fiber to its Qonnector, in Qlient order.
pub fn fiber_rates(s: &Scenario) -> Result<Vec<LinkRate>> {
    s.qlients
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let plan = trial_plan(s, &[TAG_FIBER, i as u64]);
            let mut r = run_bb84_fiber(
                &s.devices.fiber(q.fiber_km),
                &s.devices.source,
                &s.devices.detector,
                s.report.fiber_calibration,
                s.n_photons,
                plan,
            )?;
            r.link_id = format!("{} -> {}", q.name, q.qonnector);
            Ok(maybe_sift(s, r))
        })
        .collect()
}

/// Trusted-node chains: Qlient fiber, satellite downlinks to both
/// Qonnectors, Qlient fiber. Rows carry the instantaneous chain rate at
/// every point where both Qonnectors see the satellite; the summary uses
/// the point where station A sees it highest.
fn run_chain(s: &Scenario) -> Result<RunOutput> {
    let sat = s.satellite(Mode::Chain)?;
    if s.chains.is_empty() {
        return Err(Error::config("chains", "required for chain runs"));
    }
    let fibers = fiber_rates(s)?;
    let fiber_of = |name: &str| {
        let i = s.qlients.iter().position(|q| q.name == name).expect("validated");
        (&s.qlients[i], &fibers[i])
    };
    let samples = s.ephemeris(sat)?;
    let all: Vec<usize> = (0..s.stations.len()).collect();
    let windows = pass_windows(&samples, sat.mask_deg, &all);
    let mut summary = Summary::new(s, Mode::Chain);
    if windows.is_empty() {
        return Ok(RunOutput {
            rows: vec![],
            summary: summary.unusable(sat.mask_deg),
        });
    }
    summary.windows = windows_summary(&windows);
    let points: Vec<&EphemerisSample> = windows.iter().flat_map(|w| &w.samples).collect();

    // Downlink rate to every station at every point.
    let downlinks = points
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            (0..s.stations.len())
                .map(|i| {
                    let plan = trial_plan(s, &[TAG_DOWNLINK, i as u64, 0, k as u64]);
                    let mut r = run_bb84_downlink(
                        &sat.channel(&x.views[i]),
                        &s.devices.source,
                        &s.devices.detector,
                        sat.calibration,
                        s.n_photons,
                        plan,
                    )?;
                    r.link_id = format!("satellite -> {}", s.stations[i].name);
                    Ok(maybe_sift(s, r))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let sublinks_at = |k: usize, left: &str, right: &str| -> Vec<LinkRate> {
        let (ql, fl) = fiber_of(left);
        let (qr, fr) = fiber_of(right);
        let sl = s.station_index(&ql.qonnector).expect("validated");
        let sr = s.station_index(&qr.qonnector).expect("validated");
        let mut links = vec![fl.clone()];
        if sl != sr {
            links.push(downlinks[k][sl].clone());
            links.push(downlinks[k][sr].clone());
        }
        links.push(fr.clone());
        links
    };

    let mut rows = Vec::new();
    for (k, x) in points.iter().enumerate() {
        for [l, r] in &s.chains {
            let (ql, _) = fiber_of(l);
            let (qr, _) = fiber_of(r);
            let a = view(x, s.station_index(&ql.qonnector).expect("validated"));
            let b = view(x, s.station_index(&qr.qonnector).expect("validated"));
            let links = sublinks_at(k, l, r);
            let worst = limiting_link(&links)?;
            rows.push(
                ResultRow::at(x.t_s, a, b)
                    .with_rate(&worst.estimate, worst.qber)
                    .with_param(format!("{l}-{r}")),
            );
        }
    }

    let k_best = (0..points.len())
        .reduce(|a, b| {
            if points[b].views[0].elevation_deg > points[a].views[0].elevation_deg {
                b
            } else {
                a
            }
        })
        .expect("windows are nonempty");
    let f = s.devices.source.f_qubit_hz;
    let p = s.report.p_source;
    let link_summary = |l: &LinkRate, at: Option<f64>| LinkSummary {
        link: l.link_id.clone(),
        rate: l.rate(),
        std: l.estimate.std,
        qber: l.qber,
        at_t_s: at,
        throughput_bps: throughput(l.rate(), f, p),
        marginals: None,
    };
    for d in &downlinks[k_best] {
        summary.links.push(link_summary(d, Some(points[k_best].t_s)));
    }
    for fl in &fibers {
        summary.links.push(link_summary(fl, None));
    }
    for [l, r] in &s.chains {
        let links = sublinks_at(k_best, l, r);
        let rate = chain_rate(&links)?;
        summary.chains.push(ChainSummary {
            left: l.clone(),
            right: r.clone(),
            rate,
            limiting: limiting_link(&links)?.link_id.clone(),
            throughput_bps: throughput(rate, f, p),
        });
    }
    Ok(RunOutput { rows, summary })
}

fn run_bbm92_mode(s: &Scenario) -> Result<RunOutput> {
    let sat = s.satellite(Mode::Bbm92)?;
    let spec = s
        .bbm92
        .as_ref()
        .ok_or_else(|| Error::config("bbm92", "required for bbm92 runs"))?;
    let station_of = |name: &str| {
        let q = s.qlient(name).expect("validated");
        (q, s.station_index(&q.qonnector).expect("validated"))
    };
    let arms = |l: &str, r: &str, va: &StationView, vb: &StationView| -> [Bbm92Arm; 2] {
        let (ql, _) = station_of(l);
        let (qr, _) = station_of(r);
        [
            Bbm92Arm {
                downlink: sat.channel(va),
                fiber: s.devices.fiber(ql.fiber_km),
                detector: s.devices.detector,
            },
            Bbm92Arm {
                downlink: sat.channel(vb),
                fiber: s.devices.fiber(qr.fiber_km),
                detector: s.devices.detector,
            },
        ]
    };
    let mut summary = Summary::new(s, Mode::Bbm92);

    // (t, view A, view B) per pair and point.
    let mut points: Vec<(usize, f64, StationView, StationView)> = Vec::new();
    match spec.geometry {
        Bbm92Geometry::Midpoint => {
            let OrbitSource::Circular(c) = &sat.orbit else {
                return Err(Error::config(
                    "bbm92.geometry",
                    "the midpoint geometry needs a circular orbit for its altitude",
                ));
            };
            for (p, [l, r]) in spec.pairs.iter().enumerate() {
                let (_, a) = station_of(l);
                let (_, b) = station_of(r);
                let sat_pos = great_circle_midpoint(&s.stations[a], &s.stations[b], c.alt_km);
                let va = elevation_range(sat_pos, &s.stations[a]);
                let vb = elevation_range(sat_pos, &s.stations[b]);
                if va.elevation_deg < sat.mask_deg || vb.elevation_deg < sat.mask_deg {
                    continue;
                }
                points.push((p, 0.0, va, vb));
            }
        }
        Bbm92Geometry::Pass => {
            let samples = s.ephemeris(sat)?;
            for x in &samples {
                for (p, [l, r]) in spec.pairs.iter().enumerate() {
                    let (_, a) = station_of(l);
                    let (_, b) = station_of(r);
                    let (va, vb) = (x.views[a], x.views[b]);
                    if va.elevation_deg >= sat.mask_deg && vb.elevation_deg >= sat.mask_deg {
                        points.push((p, x.t_s, va, vb));
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Ok(RunOutput {
            rows: vec![],
            summary: summary.unusable(sat.mask_deg),
        });
    }

    let results = points
        .par_iter()
        .enumerate()
        .map(|(k, (p, _, va, vb))| {
            let [l, r] = &spec.pairs[*p];
            let plan = trial_plan(s, &[TAG_BBM92, *p as u64, k as u64]);
            let mut res = run_bbm92(
                &arms(l, r, va, vb),
                &s.devices.source,
                &s.devices.node,
                s.n_photons,
                plan,
            )?;
            res.pair.link_id = format!("{l} & {r}");
            res.pair = maybe_sift(s, res.pair);
            Ok(res)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(points.len());
    for ((p, t, va, vb), res) in points.iter().zip(&results) {
        let [l, r] = &spec.pairs[*p];
        rows.push(
            ResultRow::at(*t, Some(*va), Some(*vb))
                .with_rate(&res.pair.estimate, res.pair.qber)
                .with_param(format!("{l}-{r}")),
        );
    }

    let f = s.devices.source.f_epr_hz;
    for (p, _) in spec.pairs.iter().enumerate() {
        let best = points
            .iter()
            .zip(&results)
            .filter(|((q, ..), _)| *q == p)
            .reduce(|a, b| if b.1.pair.rate() > a.1.pair.rate() { b } else { a });
        if let Some(((_, t, ..), res)) = best {
            summary.links.push(LinkSummary {
                link: res.pair.link_id.clone(),
                rate: res.pair.rate(),
                std: res.pair.estimate.std,
                qber: res.pair.qber,
                at_t_s: Some(*t),
                throughput_bps: throughput(res.pair.rate(), f, s.report.p_source),
                marginals: None,
            });
            let [ml, mr] = &res.marginals;
            summary.links.last_mut().expect("just pushed").marginals = Some(res.marginals);
            summary.notes.push(format!(
                "{}: arm marginals {:.6} and {:.6}, product {:.6}",
                res.pair.link_id,
                ml.mean,
                mr.mean,
                ml.mean * mr.mean
            ));
        }
    }
    Ok(RunOutput { rows, summary })
}

fn run_balloon(s: &Scenario, sweep: Option<&SweepSpec>) -> Result<RunOutput> {
    let mode = if sweep.is_some() { Mode::Sweep } else { Mode::Balloon };
    let spec = s
        .balloon
        .as_ref()
        .ok_or_else(|| Error::config("balloon", format!("required for {mode} runs")))?;
    let left = s.qlient(&spec.left).expect("validated");
    let right = s.qlient(&spec.right).expect("validated");
    let ends = ChainEnds {
        left_name: left.name.clone(),
        left_fiber_km: left.fiber_km,
        right_name: right.name.clone(),
        right_fiber_km: right.fiber_km,
        fiber_calibration: s.report.fiber_calibration,
    };
    let values: Vec<Option<&SweepValue>> = match sweep {
        Some(sw) => sw.values.iter().map(Some).collect(),
        None => vec![None],
    };
    let chains = values
        .par_iter()
        .enumerate()
        .map(|(j, value)| {
            let link = match (sweep, value) {
                (Some(sw), Some(v)) => apply_balloon(&spec.link, sw.parameter, v)?,
                _ => spec.link.clone(),
            };
            let mut chain = balloon_chain(
                &link,
                &ends,
                &s.devices,
                s.n_photons,
                trial_plan(s, &[TAG_BALLOON, j as u64]),
            )?;
            if s.report.sifting {
                for l in &mut chain.sublinks {
                    l.estimate = sifted(l.estimate);
                }
                chain.rate *= 0.5;
            }
            Ok((link, chain))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = Summary::new(s, mode);
    let f = s.devices.source.f_qubit_hz;
    let p = s.report.p_source;
    let mut rows = Vec::with_capacity(values.len());
    for (value, (link, chain)) in values.iter().zip(&chains) {
        let hop = &chain.sublinks[2];
        let mut row = ResultRow::at(0.0, None, None).with_rate(&hop.estimate, hop.qber);
        row.range_a_km = Some(link.separation_km);
        if let Some(v) = value {
            row = row.with_param(v.to_string());
            summary.sweep.push(SweepSummary {
                value: v.to_string(),
                max_rate: hop.rate(),
                total: chain.rate,
            });
        }
        rows.push(row);
    }
    // Breakdown of the unswept (or first) configuration.
    let (_, first) = &chains[0];
    for l in &first.sublinks {
        summary.links.push(LinkSummary {
            link: l.link_id.clone(),
            rate: l.rate(),
            std: l.estimate.std,
            qber: l.qber,
            at_t_s: None,
            throughput_bps: throughput(l.rate(), f, p),
            marginals: None,
        });
    }
    summary.chains.push(ChainSummary {
        left: ends.left_name.clone(),
        right: ends.right_name.clone(),
        rate: first.rate,
        limiting: first.limiting.clone(),
        throughput_bps: throughput(first.rate, f, p),
    });
    Ok(RunOutput { rows, summary })
}
