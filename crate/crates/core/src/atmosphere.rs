//! Atmospheric transmittance from a tabulated set of altitude/aerosol
//! values, with airmass scaling for slant paths.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thickness of the atmosphere a downlink photon crosses, km.
pub const SLANT_LAYER_KM: f64 = 10.0;

const BUILTIN_TABLE: &str = include_str!("../data/atmosphere.csv");

static BUILTIN: LazyLock<AtmosphereTable> =
    LazyLock::new(|| AtmosphereTable::parse(BUILTIN_TABLE, "atmosphere.csv").expect("built-in atmosphere table"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aerosol {
    #[default]
    None,
    Rural5,
    Rural23,
    Urban5,
    Navy,
}

impl Aerosol {
    pub const ALL: [Aerosol; 5] = [
        Aerosol::None,
        Aerosol::Rural5,
        Aerosol::Rural23,
        Aerosol::Urban5,
        Aerosol::Navy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aerosol::None => "none",
            Aerosol::Rural5 => "rural5",
            Aerosol::Rural23 => "rural23",
            Aerosol::Urban5 => "urban5",
            Aerosol::Navy => "navy",
        }
    }
}

impl fmt::Display for Aerosol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aerosol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aerosol::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Atmosphere(format!("unknown aerosol model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    altitude_km: f64,
    aerosol: Aerosol,
    /// `None` when the model has no published value.
    t_vertical: Option<f64>,
}

/// Lookup table of vertical transmittances.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmosphereTable {
    entries: Vec<Entry>,
}

impl AtmosphereTable {
    /// The table shipped with the crate.
    pub fn builtin() -> &'static AtmosphereTable {
        &BUILTIN
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let data_err = |line: usize, message: String| Error::Data {
            file: origin.to_string(),
            line: line as u64,
            message,
        };
        let mut entries = Vec::new();
        let mut seen_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !seen_header {
                if fields != ["altitude_km", "aerosol", "t_vertical"] {
                    return Err(data_err(
                        line_no,
                        format!("expected header `altitude_km,aerosol,t_vertical`, got `{line}`"),
                    ));
                }
                seen_header = true;
                continue;
            }
            if fields.len() != 3 {
                return Err(data_err(line_no, format!("expected 3 fields, got {}", fields.len())));
            }
            let altitude_km: f64 = fields[0]
                .parse()
                .map_err(|_| data_err(line_no, format!("bad altitude `{}`", fields[0])))?;
            let aerosol: Aerosol = fields[1].parse().map_err(|e: Error| data_err(line_no, e.to_string()))?;
            let t_vertical = if fields[2] == "unavailable" {
                None
            } else {
                let t: f64 = fields[2]
                    .parse()
                    .map_err(|_| data_err(line_no, format!("bad transmittance `{}`", fields[2])))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(data_err(line_no, format!("transmittance {t} outside [0, 1]")));
                }
                Some(t)
            };
            entries.push(Entry {
                altitude_km,
                aerosol,
                t_vertical,
            });
        }
        if !seen_header {
            return Err(data_err(0, "empty atmosphere table".into()));
        }
        Ok(AtmosphereTable { entries })
    }

    /// Sets (or replaces) the value for one `(altitude, aerosol)` cell.
    pub fn with_value(mut self, altitude_km: f64, aerosol: Aerosol, t_vertical: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_vertical) {
            return Err(Error::Atmosphere(format!("transmittance {t_vertical} outside [0, 1]")));
        }
        self.entries
            .retain(|e| !(e.altitude_km == altitude_km && e.aerosol == aerosol));
        self.entries.push(Entry {
            altitude_km,
            aerosol,
            t_vertical: Some(t_vertical),
        });
        Ok(self)
    }

    /// Vertical transmittance at a tabulated altitude.
    pub fn vertical(&self, aerosol: Aerosol, altitude_km: f64) -> Result<f64> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.aerosol == aerosol && e.altitude_km == altitude_km)
            .ok_or_else(|| {
                Error::Atmosphere(format!(
                    "no tabulated transmittance for aerosol `{aerosol}` at {altitude_km} km"
                ))
            })?;
        entry.t_vertical.ok_or_else(|| {
            Error::Atmosphere(format!(
                "aerosol model `{aerosol}` has no value at {altitude_km} km; supply an override"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    Vertical,
    /// Downlink through the last [`SLANT_LAYER_KM`] at zenith angle `zenith_rad`.
    Slant {
        zenith_rad: f64,
    },
    /// Path entirely within one atmospheric layer, with its transmittance
    /// supplied by the caller.
    Horizontal {
        t_atm: f64,
    },
}

/// Transmittance of one path through the atmosphere.
///
/// Slant paths scale the zenith value by airmass: `T_zenith^(sec zeta)`.
///
/// ```
/// use qloud_core::atmosphere::{atmospheric_transmittance, Aerosol, AtmosphereTable, PathKind};
///
/// let table = AtmosphereTable::builtin();
/// let t = atmospheric_transmittance(table, PathKind::Vertical, Aerosol::None, 10.0).unwrap();
/// assert_eq!(t, 0.96753);
/// ```
pub fn atmospheric_transmittance(
    table: &AtmosphereTable,
    kind: PathKind,
    aerosol: Aerosol,
    altitude_km: f64,
) -> Result<f64> {
    match kind {
        PathKind::Vertical => table.vertical(aerosol, altitude_km),
        PathKind::Slant { zenith_rad } => {
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&zenith_rad) {
                return Err(Error::Atmosphere(format!(
                    "zenith angle {zenith_rad} rad outside [0, pi/2)"
                )));
            }
            let zenith = table.vertical(aerosol, altitude_km)?;
            Ok(zenith.powf(1.0 / zenith_rad.cos()))
        }
        PathKind::Horizontal { t_atm } => {
            if (0.0..=1.0).contains(&t_atm) {
                Ok(t_atm)
            } else {
                Err(Error::Atmosphere(format!(
                    "horizontal transmittance {t_atm} outside [0, 1]"
                )))
            }
        }
    }
}

/// Default transmittance for a path that stays at `altitude_km`: the
/// tabulated value for that altitude.
pub fn horizontal_default(table: &AtmosphereTable, aerosol: Aerosol, altitude_km: f64) -> Result<f64> {
    table.vertical(aerosol, altitude_km)
}
