//! Satellite/ground-station geometry on a spherical, rotating Earth.
//!
//! Produces time series of elevation and slant range either from ingested
//! ephemerides or from a two-body circular orbit, and cuts them into pass
//! windows above an elevation mask.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of the Earth, km³/s².
pub const MU_EARTH: f64 = 398_600.441_8;
/// Sidereal rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;
/// Orbit discretisation step; the satellite is held fixed within a step.
pub const SAMPLE_STEP_S: f64 = 10.0;
/// Default elevation mask for quantum links, degrees.
pub const DEFAULT_MASK_DEG: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStation {
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub alt_m: f64,
}

impl GroundStation {
    pub fn new(name: impl Into<String>, lat_deg: f64, lon_deg: f64, alt_m: f64) -> Result<Self> {
        let station = GroundStation {
            name: name.into(),
            lat_deg,
            lon_deg,
            alt_m,
        };
        station.validate()?;
        Ok(station)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat_deg.abs() <= 90.0) {
            return Err(Error::invalid("lat_deg", format!("{} outside [-90, 90]", self.lat_deg)));
        }
        if !(self.lon_deg.abs() <= 180.0) {
            return Err(Error::invalid(
                "lon_deg",
                format!("{} outside [-180, 180]", self.lon_deg),
            ));
        }
        Ok(())
    }

    fn ecef_km(&self) -> [f64; 3] {
        ecef(self.lat_deg, self.lon_deg, EARTH_RADIUS_KM + self.alt_m / 1000.0)
    }
}

/// Spherical-Earth geodetic position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_km: f64,
}

/// What one station sees of the satellite at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationView {
    pub elevation_deg: f64,
    pub range_km: f64,
}

/// One time step; `views[i]` belongs to the i-th station of the station
/// list the series was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EphemerisSample {
    pub t_s: f64,
    pub views: Vec<StationView>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub samples: Vec<EphemerisSample>,
}

fn ecef(lat_deg: f64, lon_deg: f64, radius_km: f64) -> [f64; 3] {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    [
        radius_km * lat.cos() * lon.cos(),
        radius_km * lat.cos() * lon.sin(),
        radius_km * lat.sin(),
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn view_from(station: [f64; 3], sat: [f64; 3]) -> StationView {
    let d = [sat[0] - station[0], sat[1] - station[1], sat[2] - station[2]];
    let range = norm(d);
    let r = norm(station);
    let up = [station[0] / r, station[1] / r, station[2] / r];
    let vertical = dot(d, up);
    let horizontal = norm([
        d[0] - vertical * up[0],
        d[1] - vertical * up[1],
        d[2] - vertical * up[2],
    ]);
    StationView {
        elevation_deg: vertical.atan2(horizontal).to_degrees(),
        range_km: range,
    }
}

/// Topocentric elevation and line-of-sight distance from `station` to a
/// satellite at `sat`.
///
/// ```
/// use qloud_core::orbit::{elevation_range, Geodetic, GroundStation};
///
/// let paris = GroundStation::new("Paris", 48.85, 2.35, 0.0).unwrap();
/// let above = Geodetic { lat_deg: 48.85, lon_deg: 2.35, alt_km: 550.0 };
/// let view = elevation_range(above, &paris);
/// assert!((view.elevation_deg - 90.0).abs() < 1e-9);
/// assert!((view.range_km - 550.0).abs() < 1e-9);
/// ```
pub fn elevation_range(sat: Geodetic, station: &GroundStation) -> StationView {
    view_from(
        station.ecef_km(),
        ecef(sat.lat_deg, sat.lon_deg, EARTH_RADIUS_KM + sat.alt_km),
    )
}

fn geodetic_from_ecef(p: [f64; 3]) -> Geodetic {
    let r = norm(p);
    Geodetic {
        lat_deg: (p[2] / r).asin().to_degrees(),
        lon_deg: p[1].atan2(p[0]).to_degrees(),
        alt_km: r - EARTH_RADIUS_KM,
    }
}

/// Great-circle midpoint of two stations, lifted to `alt_km`.
pub fn great_circle_midpoint(a: &GroundStation, b: &GroundStation, alt_km: f64) -> Geodetic {
    let pa = ecef(a.lat_deg, a.lon_deg, 1.0);
    let pb = ecef(b.lat_deg, b.lon_deg, 1.0);
    let m = [pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]];
    let mut g = geodetic_from_ecef(m);
    g.alt_km = alt_km;
    g
}

/// Maximum separation of two bodies at heights `h1_km` and `h2_km` that can
/// still see each other over a smooth spherical Earth.
pub fn horizon_distance(h1_km: f64, h2_km: f64) -> f64 {
    (2.0 * EARTH_RADIUS_KM * h1_km).sqrt() + (2.0 * EARTH_RADIUS_KM * h2_km).sqrt()
}

/// Two-body circular orbit over a rotating Earth.
///
/// The inertial frame coincides with the Earth-fixed frame at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularOrbit {
    pub alt_km: f64,
    pub inclination_rad: f64,
    /// Longitude of the ascending node at `t = 0`.
    pub node_rad: f64,
    /// Argument of latitude at `t = 0`.
    pub arg_lat0_rad: f64,
}

impl CircularOrbit {
    pub fn new(alt_km: f64, inclination_deg: f64, node_deg: f64, arg_lat0_deg: f64) -> Result<Self> {
        if !(alt_km > 0.0) {
            return Err(Error::invalid("alt_km", "orbit altitude must be positive"));
        }
        Ok(CircularOrbit {
            alt_km,
            inclination_rad: inclination_deg.to_radians(),
            node_rad: node_deg.to_radians(),
            arg_lat0_rad: arg_lat0_deg.to_radians(),
        })
    }

    /// Orbit that is directly above `station` at `t = 0`, on an ascending
    /// pass. `raan_phase_deg` then shifts the node in longitude, moving the
    /// ground track away from the station.
    pub fn through_zenith(
        alt_km: f64,
        inclination_deg: f64,
        raan_phase_deg: f64,
        station: &GroundStation,
    ) -> Result<Self> {
        let inc = inclination_deg.to_radians();
        let lat = station.lat_deg.to_radians();
        let s = lat.sin() / inc.sin();
        if !(s.abs() <= 1.0) {
            return Err(Error::invalid(
                "inclination_deg",
                format!(
                    "an orbit inclined {inclination_deg}° never reaches latitude {}°",
                    station.lat_deg
                ),
            ));
        }
        let u0 = s.asin();
        let node = station.lon_deg.to_radians() - (inc.cos() * u0.sin()).atan2(u0.cos());
        CircularOrbit::new(
            alt_km,
            inclination_deg,
            node.to_degrees() + raan_phase_deg,
            u0.to_degrees(),
        )
    }

    pub fn radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.alt_km
    }

    pub fn period_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * (self.radius_km().powi(3) / MU_EARTH).sqrt()
    }

    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH / self.radius_km().powi(3)).sqrt()
    }

    /// Earth-fixed position at time `t_s`, km.
    pub fn position_ecef(&self, t_s: f64) -> [f64; 3] {
        let r = self.radius_km();
        let u = self.arg_lat0_rad + self.mean_motion() * t_s;
        let (su, cu) = u.sin_cos();
        let (sn, cn) = self.node_rad.sin_cos();
        let (si, ci) = self.inclination_rad.sin_cos();
        let xi = r * (cn * cu - sn * su * ci);
        let yi = r * (sn * cu + cn * su * ci);
        let zi = r * su * si;
        let (sw, cw) = (EARTH_ROTATION_RAD_S * t_s).sin_cos();
        [xi * cw + yi * sw, -xi * sw + yi * cw, zi]
    }

    pub fn geodetic_at(&self, t_s: f64) -> Geodetic {
        geodetic_from_ecef(self.position_ecef(t_s))
    }

    /// Samples every [`SAMPLE_STEP_S`] seconds over `[t0_s, t1_s]`.
    pub fn sample(&self, stations: &[GroundStation], t0_s: f64, t1_s: f64) -> Vec<EphemerisSample> {
        let anchors: Vec<[f64; 3]> = stations.iter().map(GroundStation::ecef_km).collect();
        let steps = ((t1_s - t0_s) / SAMPLE_STEP_S + 1e-9).floor() as usize;
        (0..=steps)
            .map(|k| {
                let t_s = t0_s + k as f64 * SAMPLE_STEP_S;
                let sat = self.position_ecef(t_s);
                EphemerisSample {
                    t_s,
                    views: anchors.iter().map(|&s| view_from(s, sat)).collect(),
                }
            })
            .collect()
    }
}

/// Synthetic pass: a circular orbit through the zenith of `stations[0]`
/// (shifted by `raan_phase_deg`), sampled every 10 s from `t0_s` to `t1_s`
/// for every station.
pub fn circular_pass(
    alt_km: f64,
    inclination_deg: f64,
    raan_phase_deg: f64,
    stations: &[GroundStation],
    t0_s: f64,
    t1_s: f64,
) -> Result<Vec<EphemerisSample>> {
    let anchor = stations
        .first()
        .ok_or_else(|| Error::invalid("stations", "at least one station is required"))?;
    if !(t1_s > t0_s) {
        return Err(Error::invalid("t1_s", "must be later than t0_s"));
    }
    let orbit = CircularOrbit::through_zenith(alt_km, inclination_deg, raan_phase_deg, anchor)?;
    Ok(orbit.sample(stations, t0_s, t1_s))
}

/// Maximal runs of consecutive samples where every station in `required`
/// (indices into the sample views) sits at or above `mask_deg`.
pub fn pass_windows(samples: &[EphemerisSample], mask_deg: f64, required: &[usize]) -> Vec<PassWindow> {
    let usable = |s: &EphemerisSample| {
        required
            .iter()
            .all(|&i| s.views.get(i).is_some_and(|v| v.elevation_deg >= mask_deg))
    };
    let mut windows = Vec::new();
    let mut current: Vec<EphemerisSample> = Vec::new();
    for sample in samples {
        if usable(sample) {
            current.push(sample.clone());
        } else if !current.is_empty() {
            windows.push(close_window(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        windows.push(close_window(current));
    }
    windows
}

fn close_window(samples: Vec<EphemerisSample>) -> PassWindow {
    PassWindow {
        start_s: samples[0].t_s,
        end_s: samples[samples.len() - 1].t_s,
        samples,
    }
}

const GEODETIC_HEADER: [&str; 4] = ["t_s", "sat_lat_deg", "sat_lon_deg", "sat_alt_km"];
const TOPOCENTRIC_HEADER: [&str; 4] = ["t_s", "station", "elevation_deg", "range_km"];

/// Reads an ephemeris CSV for `stations`.
///
/// Two layouts are accepted, told apart by the header: satellite geodetic
/// positions (elevation and range are derived per station) or precomputed
/// topocentric rows, one per station per time step. `#` lines are comments.
pub fn load_ephemeris(path: impl AsRef<Path>, stations: &[GroundStation]) -> Result<Vec<EphemerisSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ephemeris(&text, &path.display().to_string(), stations)
}

pub fn parse_ephemeris(text: &str, origin: &str, stations: &[GroundStation]) -> Result<Vec<EphemerisSample>> {
    let err = |line: u64, message: String| Error::Data {
        file: origin.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let header_line = reader.position().line();
    let geodetic = header == GEODETIC_HEADER;
    if !geodetic && header != TOPOCENTRIC_HEADER {
        return Err(err(
            header_line,
            format!(
                "unrecognised header `{}`; expected `{}` or `{}`",
                header.join(","),
                GEODETIC_HEADER.join(","),
                TOPOCENTRIC_HEADER.join(",")
            ),
        ));
    }

    let index: HashMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut samples: Vec<EphemerisSample> = Vec::new();
    let mut pending: Option<(f64, Vec<Option<StationView>>, u64)> = None;

    let finish = |(t_s, views, line): (f64, Vec<Option<StationView>>, u64)| -> Result<EphemerisSample> {
        let views = views
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    err(
                        line,
                        format!("time {t_s} has no row for station `{}`", stations[i].name),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EphemerisSample { t_s, views })
    };

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(err(line, format!("expected 4 fields, got {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = record[i].parse().map_err(|_| {
                err(
                    line,
                    format!("`{}` is not a number in column `{}`", &record[i], header[i]),
                )
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("non-finite value in column `{}`", header[i])))
            }
        };
        let t_s = num(0)?;
        let last_t = pending.as_ref().map(|p| p.0).or_else(|| samples.last().map(|s| s.t_s));

        if geodetic {
            if last_t.is_some_and(|prev| t_s <= prev) {
                return Err(err(line, format!("timestamp {t_s} does not increase")));
            }
            let sat = Geodetic {
                lat_deg: num(1)?,
                lon_deg: num(2)?,
                alt_km: num(3)?,
            };
            if sat.lat_deg.abs() > 90.0 || sat.lon_deg.abs() > 180.0 {
                return Err(err(line, "satellite latitude/longitude out of range".into()));
            }
            if !(sat.alt_km > 0.0) {
                return Err(err(line, "satellite altitude must be positive".into()));
            }
            samples.push(EphemerisSample {
                t_s,
                views: stations.iter().map(|s| elevation_range(sat, s)).collect(),
            });
        } else {
            let name = &record[1];
            let station = *index
                .get(name)
                .ok_or_else(|| err(line, format!("unknown station `{name}`")))?;
            let elevation_deg = num(2)?;
            let range_km = num(3)?;
            if elevation_deg.abs() > 90.0 {
                return Err(err(line, format!("elevation {elevation_deg} outside [-90, 90]")));
            }
            if !(range_km > 0.0) {
                return Err(err(line, format!("range {range_km} must be positive")));
            }
            match &mut pending {
                Some((t, views, _)) if *t == t_s => {
                    if views[station].is_some() {
                        return Err(err(line, format!("duplicate row for station `{name}` at {t_s}")));
                    }
                    views[station] = Some(StationView {
                        elevation_deg,
                        range_km,
                    });
                }
                _ => {
                    if last_t.is_some_and(|prev| t_s <= prev) {
                        return Err(err(line, format!("timestamp {t_s} does not increase")));
                    }
                    if let Some(done) = pending.take() {
                        samples.push(finish(done)?);
                    }
                    let mut views = vec![None; stations.len()];
                    views[station] = Some(StationView {
                        elevation_deg,
                        range_km,
                    });
                    pending = Some((t_s, views, line));
                }
            }
        }
    }
    if let Some(done) = pending.take() {
        samples.push(finish(done)?);
    }
    Ok(samples)
}

/// Writes samples in the geodetic layout accepted by [`load_ephemeris`].
pub fn write_geodetic_ephemeris<W: std::io::Write>(out: W, orbit: &CircularOrbit, times: &[f64]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Runtime(format!("writing ephemeris: {e}"));
    writer.write_record(GEODETIC_HEADER).map_err(io)?;
    for &t in times {
        let g = orbit.geodetic_at(t);
        writer
            .write_record([
                t.to_string(),
                g.lat_deg.to_string(),
                g.lon_deg.to_string(),
                g.alt_km.to_string(),
            ])
            .map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Runtime(format!("writing ephemeris: {e}")))?;
    Ok(())
}
