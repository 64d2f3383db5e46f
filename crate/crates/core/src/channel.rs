//! Per-photon loss and noise models for free-space and fiber links.
//!
//! A free-space link is reduced to a [`PdtcParams`]: the Gaussian beam of
//! spot radius `W` lands on a receiver aperture of radius `a`, its centroid
//! displaced by a Rayleigh-distributed distance of scale `sigma` (pointing
//! jitter, plus turbulence for paths inside the atmosphere). The transmitted
//! fraction at displacement `r` is
//!
//! ```text
//! eta(r) = eta0 * exp(-(r / R)^shape)
//! eta0   = 1 - exp(-2 a^2 / W^2)
//! ```
//!
//! with `shape` and `R` fixed by matching the exact overlap integral at
//! `r = 0` and `r = a`, which gives closed forms in `I_0` and `I_1` of
//! `4 a^2 / W^2`.

use serde::{Deserialize, Serialize};

use crate::atmosphere::{atmospheric_transmittance, Aerosol, AtmosphereTable, PathKind};
use crate::bessel::{i0_minus_one, i0e, i1e};
use crate::error::{Error, Result};
use crate::sim::RngStream;

/// Default telecom wavelength used throughout.
pub const DEFAULT_WAVELENGTH_M: f64 = 1550e-9;

/// Far-field spot radius `W = theta_d * L` of a slant link.
pub fn beam_spot_slant(divergence_rad: f64, range_m: f64) -> f64 {
    divergence_rad * range_m
}

/// Gaussian beam radius after propagating `range_m` from a waist `waist_m`.
pub fn beam_spot_horizontal(waist_m: f64, wavelength_m: f64, range_m: f64) -> f64 {
    let rayleigh = std::f64::consts::PI * waist_m * waist_m / wavelength_m;
    let z = range_m / rayleigh;
    waist_m * (1.0 + z * z).sqrt()
}

/// Waist that produces the far-field half-angle `divergence_rad`.
pub fn waist_from_divergence(divergence_rad: f64, wavelength_m: f64) -> f64 {
    wavelength_m / (std::f64::consts::PI * divergence_rad)
}

pub fn divergence_from_waist(waist_m: f64, wavelength_m: f64) -> f64 {
    wavelength_m / (std::f64::consts::PI * waist_m)
}

/// Shape of the wandering-beam transmissivity distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdtcParams {
    /// Transmissivity of a perfectly centred beam.
    pub eta0: f64,
    pub shape: f64,
    /// Scale `R` of the Weibull exponent, metres.
    pub scale: f64,
    /// Rayleigh scale of the centroid displacement, metres.
    pub wander_std: f64,
    pub beam_spot: f64,
    pub aperture: f64,
}

/// `(eta0, shape, scale)` for an aperture of radius `aperture` and a spot of
/// radius `spot`.
///
/// Fails when the Bessel-based terms lose all significance, which happens
/// only for `aperture / spot` below roughly `1e-7`.
pub fn weibull_pdtc_params(aperture: f64, spot: f64) -> Result<(f64, f64, f64)> {
    if !(aperture > 0.0) || !(spot > 0.0) {
        return Err(Error::invalid(
            "aperture/spot",
            format!("both must be positive (a = {aperture}, W = {spot})"),
        ));
    }
    let ratio2 = aperture * aperture / (spot * spot);
    let x = 4.0 * ratio2;
    let eta0 = -(-2.0 * ratio2).exp_m1();
    // Q = 1 - e^{-x} I0(x), assembled so that small x keeps its digits.
    let q = if x < 1.0 {
        -(-x).exp_m1() - (-x).exp() * i0_minus_one(x)
    } else {
        1.0 - i0e(x)
    };
    let log_arg = 2.0 * eta0 / q;
    if !(q > 0.0) || !(log_arg > 1.0) || !log_arg.is_finite() {
        return Err(Error::invalid(
            "aperture/spot",
            format!("a/W = {} is too small for a stable beam-wander model", (ratio2).sqrt()),
        ));
    }
    let log = log_arg.ln();
    let shape = 2.0 * x * i1e(x) / q / log;
    let scale = aperture * log.powf(-1.0 / shape);
    Ok((eta0, shape, scale))
}

impl PdtcParams {
    pub fn new(aperture: f64, spot: f64, wander_std: f64) -> Result<Self> {
        if !(wander_std >= 0.0) {
            return Err(Error::invalid("wander_std", format!("{wander_std} < 0")));
        }
        let (eta0, shape, scale) = weibull_pdtc_params(aperture, spot)?;
        Ok(PdtcParams {
            eta0,
            shape,
            scale,
            wander_std,
            beam_spot: spot,
            aperture,
        })
    }

    /// Transmissivity for a centroid displaced by `r` metres.
    #[inline]
    pub fn transmissivity_at(&self, r: f64) -> f64 {
        self.eta0 * (-(r / self.scale).powf(self.shape)).exp()
    }

    /// Draws one transmissivity. Never exceeds `eta0`.
    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        if self.wander_std == 0.0 {
            return self.eta0;
        }
        let u = rng.uniform_open_zero();
        let r = self.wander_std * (-2.0 * u.ln()).sqrt();
        // Far tails underflow; the true value is positive, so keep it so.
        self.transmissivity_at(r).max(f64::MIN_POSITIVE)
    }
}

/// Free function form of [`PdtcParams::sample`].
pub fn sample_transmissivity(params: &PdtcParams, rng: &mut RngStream) -> f64 {
    params.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WanderKind {
    Slant,
    Horizontal,
}

/// Rayleigh scale of the beam centroid displacement at the receiver.
///
/// Slant paths only see pointing jitter. Horizontal paths add the turbulence
/// term `1.919 Cn² L³ (2 w0)^(-1/3)`.
pub fn wander_sigma(pointing_rad: f64, range_m: f64, cn2: f64, waist_m: f64, kind: WanderKind) -> f64 {
    let pointing = pointing_rad * range_m;
    match kind {
        WanderKind::Slant => pointing,
        WanderKind::Horizontal => {
            let turbulence = if cn2 > 0.0 {
                1.919 * cn2 * range_m.powi(3) * (2.0 * waist_m).powf(-1.0 / 3.0)
            } else {
                0.0
            };
            (pointing * pointing + turbulence).sqrt()
        }
    }
}

/// `10^(-loss * length / 10)`.
pub fn fiber_transmittance(length_km: f64, loss_db_per_km: f64) -> f64 {
    10f64.powf(-loss_db_per_km * length_km / 10.0)
}

/// Probability of a dark click inside one detection gate.
pub fn dark_count_prob(dark_rate_hz: f64, gate_s: f64) -> f64 {
    dark_rate_hz * gate_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub gate_s: f64,
    pub crosstalk: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            efficiency: 0.95,
            dark_rate_hz: 100.0,
            gate_s: 100e-12,
            crosstalk: 1e-5,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("detector.efficiency", self.efficiency)?;
        check_prob("detector.crosstalk", self.crosstalk)?;
        if !(self.dark_rate_hz >= 0.0) || !(self.gate_s >= 0.0) {
            return Err(Error::invalid("detector", "dark rate and gate must be nonnegative"));
        }
        if !(self.dark_prob() < 1.0) {
            return Err(Error::invalid("detector", "dark_rate * gate must be below 1"));
        }
        Ok(())
    }

    pub fn dark_prob(&self) -> f64 {
        dark_count_prob(self.dark_rate_hz, self.gate_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    ClickCorrect,
    ClickFlipped,
    NoClick,
    DarkClick,
}

impl Detection {
    /// A photon (not a dark count) was registered.
    pub fn is_photon(self) -> bool {
        matches!(self, Detection::ClickCorrect | Detection::ClickFlipped)
    }
}

/// One detection gate given the probability that a photon reaches the
/// detector.
#[inline]
pub fn detect(arrival_prob: f64, det: &DetectorParams, rng: &mut RngStream) -> Detection {
    let p = arrival_prob * det.efficiency;
    if p > 0.0 && rng.uniform() < p {
        if det.crosstalk > 0.0 && rng.uniform() < det.crosstalk {
            Detection::ClickFlipped
        } else {
            Detection::ClickCorrect
        }
    } else {
        let dark = det.dark_prob();
        if dark > 0.0 && rng.uniform() < dark {
            Detection::DarkClick
        } else {
            Detection::NoClick
        }
    }
}

pub(crate) fn check_prob(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{p} is not a probability")))
    }
}

/// Space-to-ground link; only the final stretch crosses the atmosphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlantChannel {
    pub divergence_rad: f64,
    pub pointing_rad: f64,
    pub aperture_m: f64,
    pub range_m: f64,
    pub zenith_rad: f64,
    pub aerosol: Aerosol,
    pub wavelength_m: f64,
    /// Replaces the table's zenith transmittance when set.
    #[serde(default)]
    pub t_zenith_override: Option<f64>,
}

impl SlantChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.divergence_rad > 0.0) {
            return Err(Error::invalid("divergence_rad", "must be positive"));
        }
        if !(self.aperture_m > 0.0) {
            return Err(Error::invalid("aperture_m", "must be positive"));
        }
        if !(self.range_m > 0.0) {
            return Err(Error::invalid("range_m", "must be positive"));
        }
        if !(self.pointing_rad >= 0.0) {
            return Err(Error::invalid("pointing_rad", "must be nonnegative"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.zenith_rad) {
            return Err(Error::invalid("zenith_rad", "must lie in [0, pi/2)"));
        }
        Ok(())
    }

    pub fn beam_spot(&self) -> f64 {
        beam_spot_slant(self.divergence_rad, self.range_m)
    }

    pub fn pdtc(&self) -> Result<PdtcParams> {
        self.validate()?;
        let sigma = wander_sigma(self.pointing_rad, self.range_m, 0.0, 0.0, WanderKind::Slant);
        PdtcParams::new(self.aperture_m, self.beam_spot(), sigma)
    }

    pub fn atmosphere(&self, table: &AtmosphereTable) -> Result<f64> {
        match self.t_zenith_override {
            Some(t) => Ok(t.powf(1.0 / self.zenith_rad.cos())),
            None => atmospheric_transmittance(
                table,
                PathKind::Slant {
                    zenith_rad: self.zenith_rad,
                },
                self.aerosol,
                crate::atmosphere::SLANT_LAYER_KM,
            ),
        }
    }
}

/// Link whose whole path lies inside the atmosphere (ground to ground,
/// balloon to balloon, balloon to ground).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalChannel {
    pub waist_m: f64,
    pub wavelength_m: f64,
    pub cn2: f64,
    pub pointing_rad: f64,
    pub aperture_m: f64,
    pub range_m: f64,
    pub altitude_m: f64,
    pub t_atm: f64,
}

impl HorizontalChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.waist_m > 0.0) || !(self.wavelength_m > 0.0) {
            return Err(Error::invalid("waist_m", "waist and wavelength must be positive"));
        }
        if !(self.cn2 >= 0.0) {
            return Err(Error::invalid("cn2", "must be nonnegative"));
        }
        if !(self.aperture_m > 0.0) || !(self.range_m > 0.0) {
            return Err(Error::invalid("aperture_m", "aperture and range must be positive"));
        }
        check_prob("t_atm", self.t_atm)
    }

    pub fn beam_spot(&self) -> f64 {
        beam_spot_horizontal(self.waist_m, self.wavelength_m, self.range_m)
    }

    pub fn pdtc(&self) -> Result<PdtcParams> {
        self.validate()?;
        let sigma = wander_sigma(
            self.pointing_rad,
            self.range_m,
            self.cn2,
            self.waist_m,
            WanderKind::Horizontal,
        );
        PdtcParams::new(self.aperture_m, self.beam_spot(), sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberChannel {
    pub length_km: f64,
    pub loss_db_per_km: f64,
    pub p_coupling: f64,
    pub p_dephase: f64,
}

impl FiberChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0) {
            return Err(Error::invalid("length_km", "must be nonnegative"));
        }
        check_prob("p_coupling", self.p_coupling)?;
        check_prob("p_dephase", self.p_dephase)
    }

    pub fn transmittance(&self) -> f64 {
        fiber_transmittance(self.length_km, self.loss_db_per_km)
    }
}
