//! QKD pipelines built from the channel models: BB84 over a downlink,
//! BB84 over fiber or an in-atmosphere free-space link, BBM92 with the
//! source on the satellite, and the trusted-node chain.
//!
//! Rates are raw: states registered at the receiver over states sent, with
//! no sifting. Dark counts are tallied separately and only feed the QBER.

use serde::{Deserialize, Serialize};

use crate::atmosphere::{horizontal_default, Aerosol, AtmosphereTable};
use crate::channel::{
    check_prob, detect, waist_from_divergence, Detection, DetectorParams, FiberChannel, HorizontalChannel,
    SlantChannel, DEFAULT_WAVELENGTH_M,
};
use crate::error::{Error, Result};
use crate::orbit::{horizon_distance, EphemerisSample, PassWindow};
use crate::sim::{
    run_trial_batch, run_trials_counted, stream_id, summarize, RateEstimate, TrialCounts, DEFAULT_TRIALS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub f_qubit_hz: f64,
    pub p_qubit: f64,
    pub p_flip: f64,
    pub f_epr_hz: f64,
    pub p_epr: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            f_qubit_hz: 80e6,
            p_qubit: 8e-3,
            p_flip: 0.0,
            f_epr_hz: 80e6,
            p_epr: 1e-2,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("source.p_qubit", self.p_qubit)?;
        check_prob("source.p_flip", self.p_flip)?;
        check_prob("source.p_epr", self.p_epr)?;
        if !(self.f_qubit_hz > 0.0) || !(self.f_epr_hz > 0.0) {
            return Err(Error::invalid("source", "frequencies must be positive"));
        }
        Ok(())
    }
}

/// Qonnector capabilities. `p_bsm` and `t_gate_s` are carried for
/// completeness; none of the pipelines here performs Bell measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeParams {
    pub p_bsm: f64,
    pub p_transmit: f64,
    pub t_gate_s: f64,
    pub p_coupling: f64,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            p_bsm: 0.36,
            p_transmit: 0.81,
            t_gate_s: 1e-9,
            p_coupling: 0.81,
        }
    }
}

impl NodeParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("node.p_bsm", self.p_bsm)?;
        check_prob("node.p_transmit", self.p_transmit)?;
        check_prob("node.p_coupling", self.p_coupling)
    }
}

/// Every hardware parameter a scenario needs besides link geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub node: NodeParams,
    pub fiber_loss_db_per_km: f64,
    pub p_dephase: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            source: SourceParams::default(),
            detector: DetectorParams::default(),
            node: NodeParams::default(),
            fiber_loss_db_per_km: 0.18,
            p_dephase: 0.02,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        self.node.validate()?;
        check_prob("p_dephase", self.p_dephase)?;
        if !(self.fiber_loss_db_per_km >= 0.0) {
            return Err(Error::invalid("fiber_loss_db_per_km", "must be nonnegative"));
        }
        Ok(())
    }

    /// Qlient-to-Qonnector fiber of the given length.
    pub fn fiber(&self, length_km: f64) -> FiberChannel {
        FiberChannel {
            length_km,
            loss_db_per_km: self.fiber_loss_db_per_km,
            p_coupling: self.node.p_coupling,
            p_dephase: self.p_dephase,
        }
    }
}

/// Where a run draws its randomness from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialPlan {
    pub seed: u64,
    pub stream: u64,
    pub n_trials: usize,
}

impl TrialPlan {
    pub fn new(seed: u64, stream: u64) -> Self {
        TrialPlan {
            seed,
            stream,
            n_trials: DEFAULT_TRIALS,
        }
    }

    pub fn with_trials(mut self, n_trials: usize) -> Self {
        self.n_trials = n_trials;
        self
    }

    /// Plan for a sub-run, on a stream derived from this one.
    pub fn child(&self, index: u64) -> Self {
        TrialPlan {
            stream: stream_id(&[self.stream, index]),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRate {
    pub link_id: String,
    pub estimate: RateEstimate,
    pub qber: f64,
}

impl LinkRate {
    pub fn rate(&self) -> f64 {
        self.estimate.mean
    }
}

fn check_cal(cal: f64) -> Result<()> {
    if cal >= 0.0 && cal.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "calibration",
            format!("{cal} must be a finite nonnegative factor"),
        ))
    }
}

fn check_photons(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("n_photons", "at least one state must be sent"))
    } else {
        Ok(())
    }
}

fn tally(outcome: Detection, counts: &mut TrialCounts) {
    match outcome {
        Detection::ClickCorrect | Detection::ClickFlipped => counts.arrived += 1,
        Detection::DarkClick => counts.dark += 1,
        Detection::NoClick => {}
    }
}

/// Error probability of a sifted bit.
///
/// Independent flips compose as `e = a(1-b) + b(1-a)`; dephasing only hits
/// the conjugate basis, so it enters as `p_dephase / 2`. A dark click carries
/// a random bit and is mixed in with weight `dark_fraction`.
pub fn qber_estimate(p_flip: f64, p_crosstalk: f64, p_dephase: f64, dark_fraction: f64) -> f64 {
    let xor = |a: f64, b: f64| a * (1.0 - b) + b * (1.0 - a);
    let e = xor(xor(p_flip, p_crosstalk), 0.5 * p_dephase);
    (1.0 - dark_fraction) * e + 0.5 * dark_fraction
}

/// BB84 from a satellite to a ground station at one orbit point.
pub fn run_bb84_downlink(
    ch: &SlantChannel,
    src: &SourceParams,
    det: &DetectorParams,
    cal: f64,
    n_photons: u64,
    plan: TrialPlan,
) -> Result<LinkRate> {
    check_cal(cal)?;
    check_photons(n_photons)?;
    let pdtc = ch.pdtc()?;
    let t_atm = ch.atmosphere(AtmosphereTable::builtin())?;
    let scale = t_atm * cal;
    let summary = run_trials_counted(plan.seed, plan.stream, plan.n_trials, |rng| {
        let mut counts = TrialCounts {
            sent: n_photons,
            ..Default::default()
        };
        for _ in 0..n_photons {
            let eta = pdtc.sample(rng);
            tally(detect((eta * scale).min(1.0), det, rng), &mut counts);
        }
        counts
    })?;
    Ok(LinkRate {
        link_id: "satellite-downlink".into(),
        estimate: summary.estimate,
        qber: qber_estimate(src.p_flip, det.crosstalk, 0.0, summary.dark_fraction()),
    })
}

/// BB84 from a Qlient to its Qonnector over fiber.
pub fn run_bb84_fiber(
    ch: &FiberChannel,
    src: &SourceParams,
    det: &DetectorParams,
    cal: f64,
    n_photons: u64,
    plan: TrialPlan,
) -> Result<LinkRate> {
    check_cal(cal)?;
    check_photons(n_photons)?;
    ch.validate()?;
    let arrival = (ch.p_coupling * ch.transmittance() * cal).min(1.0);
    let summary = run_trials_counted(plan.seed, plan.stream, plan.n_trials, |rng| {
        let mut counts = TrialCounts {
            sent: n_photons,
            ..Default::default()
        };
        for _ in 0..n_photons {
            tally(detect(arrival, det, rng), &mut counts);
        }
        counts
    })?;
    Ok(LinkRate {
        link_id: "fiber".into(),
        estimate: summary.estimate,
        qber: qber_estimate(src.p_flip, det.crosstalk, ch.p_dephase, summary.dark_fraction()),
    })
}

/// BB84 over a link that stays inside the atmosphere.
pub fn run_bb84_free_space(
    ch: &HorizontalChannel,
    src: &SourceParams,
    det: &DetectorParams,
    cal: f64,
    n_photons: u64,
    plan: TrialPlan,
) -> Result<LinkRate> {
    check_cal(cal)?;
    check_photons(n_photons)?;
    let pdtc = ch.pdtc()?;
    let scale = ch.t_atm * cal;
    let summary = run_trials_counted(plan.seed, plan.stream, plan.n_trials, |rng| {
        let mut counts = TrialCounts {
            sent: n_photons,
            ..Default::default()
        };
        for _ in 0..n_photons {
            let eta = pdtc.sample(rng);
            tally(detect((eta * scale).min(1.0), det, rng), &mut counts);
        }
        counts
    })?;
    Ok(LinkRate {
        link_id: "free-space".into(),
        estimate: summary.estimate,
        qber: qber_estimate(src.p_flip, det.crosstalk, 0.0, summary.dark_fraction()),
    })
}

/// Rate of a trusted-node chain: the slowest sublink sets the pace.
///
/// ```
/// # use qloud_core::protocols::{chain_rate, LinkRate};
/// # use qloud_core::sim::RateEstimate;
/// let link = |id: &str, r: f64| LinkRate {
///     link_id: id.into(),
///     estimate: RateEstimate { mean: r, std: 0.0, n_trials: 1, n_sent_per_trial: 1 },
///     qber: 0.0,
/// };
/// let chain = [link("Bob", 0.374), link("Paris", 0.238), link("Delft", 0.228), link("Hadi", 0.253)];
/// assert_eq!(chain_rate(&chain).unwrap(), 0.228);
/// ```
pub fn chain_rate(sublinks: &[LinkRate]) -> Result<f64> {
    limiting_link(sublinks).map(LinkRate::rate)
}

/// The sublink with the lowest rate (the first one on ties).
pub fn limiting_link(sublinks: &[LinkRate]) -> Result<&LinkRate> {
    sublinks
        .iter()
        .reduce(|best, l| if l.rate() < best.rate() { l } else { best })
        .ok_or_else(|| Error::invalid("sublinks", "a chain needs at least one sublink"))
}

/// One arm of an entanglement distribution: satellite downlink, coupling
/// into fiber at the Qonnector, fiber to the Qlient, detection there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbm92Arm {
    pub downlink: SlantChannel,
    pub fiber: FiberChannel,
    pub detector: DetectorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bbm92Result {
    /// Coincidences over pairs sent.
    pub pair: LinkRate,
    /// Photon clicks on each side over pairs sent.
    pub marginals: [RateEstimate; 2],
}

#[derive(Debug, Clone, Copy, Default)]
struct PairCounts {
    left: TrialCounts,
    right: TrialCounts,
    joint: TrialCounts,
}

/// BBM92 with the pair source on the satellite.
///
/// Both photons carry the emission timestamp; a pair counts when both
/// Qlients register a photon for the same timestamp.
pub fn run_bbm92(
    arms: &[Bbm92Arm; 2],
    src: &SourceParams,
    node: &NodeParams,
    n_pairs: u64,
    plan: TrialPlan,
) -> Result<Bbm92Result> {
    check_photons(n_pairs)?;
    node.validate()?;
    let table = AtmosphereTable::builtin();
    let mut prepared = Vec::with_capacity(2);
    for arm in arms {
        arm.fiber.validate()?;
        arm.detector.validate()?;
        let pdtc = arm.downlink.pdtc()?;
        let scale = arm.downlink.atmosphere(table)? * node.p_transmit * arm.fiber.transmittance();
        prepared.push((pdtc, scale, arm.detector));
    }

    let per_trial = run_trial_batch(plan.seed, plan.stream, plan.n_trials, |rng| {
        let mut c = PairCounts::default();
        c.left.sent = n_pairs;
        c.right.sent = n_pairs;
        c.joint.sent = n_pairs;
        for _ in 0..n_pairs {
            let mut outcome = [Detection::NoClick; 2];
            for (slot, (pdtc, scale, det)) in outcome.iter_mut().zip(&prepared) {
                let eta = pdtc.sample(rng);
                *slot = detect((eta * scale).min(1.0), det, rng);
            }
            tally(outcome[0], &mut c.left);
            tally(outcome[1], &mut c.right);
            let clicked = |d: Detection| d != Detection::NoClick;
            if outcome[0].is_photon() && outcome[1].is_photon() {
                c.joint.arrived += 1;
            } else if clicked(outcome[0]) && clicked(outcome[1]) {
                c.joint.dark += 1;
            }
        }
        c
    })?;

    let joint = summarize(&per_trial.iter().map(|c| c.joint).collect::<Vec<_>>())?;
    let left = summarize(&per_trial.iter().map(|c| c.left).collect::<Vec<_>>())?;
    let right = summarize(&per_trial.iter().map(|c| c.right).collect::<Vec<_>>())?;

    let xor = |a: f64, b: f64| a * (1.0 - b) + b * (1.0 - a);
    let crosstalk = xor(arms[0].detector.crosstalk, arms[1].detector.crosstalk);
    let dephase = xor(arms[0].fiber.p_dephase, arms[1].fiber.p_dephase);
    Ok(Bbm92Result {
        pair: LinkRate {
            link_id: "bbm92".into(),
            estimate: joint.estimate,
            qber: qber_estimate(src.p_flip, crosstalk, dephase, joint.dark_fraction()),
        },
        marginals: [left.estimate, right.estimate],
    })
}

/// Basis sifting applied after the fact: half of the raw states survive.
pub fn sifted(estimate: RateEstimate) -> RateEstimate {
    RateEstimate {
        mean: 0.5 * estimate.mean,
        std: 0.5 * estimate.std,
        ..estimate
    }
}

/// Raw key throughput in bits per second.
pub fn throughput(rate: f64, f_source_hz: f64, p_source: f64) -> f64 {
    rate * f_source_hz * p_source
}

/// Raw key accumulated over one pass: each 10 s point contributes
/// `batch * rate(point)` bits.
pub fn key_per_pass<F>(pass: &PassWindow, batch: u64, mut link_fn: F) -> Result<f64>
where
    F: FnMut(&EphemerisSample) -> Result<f64>,
{
    if pass.samples.is_empty() {
        return Err(Error::invalid("pass", "pass window has no samples"));
    }
    let mut bits = Vec::with_capacity(pass.samples.len());
    for sample in &pass.samples {
        bits.push(batch as f64 * link_fn(sample)?);
    }
    Ok(crate::sim::compensated_sum(bits))
}

/// Two stationary balloons above two Qonnectors, linked by a horizontal
/// free-space hop, each talking down to its Qonnector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalloonScenario {
    pub altitude_km: f64,
    pub separation_km: f64,
    pub divergence_rad: f64,
    pub pointing_rad: f64,
    pub wavelength_m: f64,
    pub balloon_aperture_m: f64,
    pub ground_aperture_m: f64,
    pub cn2_link: f64,
    pub cn2_vertical: f64,
    pub aerosol: Aerosol,
    /// Balloon-to-balloon transmittance; defaults to the table value at the
    /// balloon altitude.
    pub t_atm_link: Option<f64>,
    /// Balloon-to-ground transmittance; defaults to the table value at the
    /// balloon altitude.
    pub t_atm_vertical: Option<f64>,
    pub calibration: f64,
}

impl Default for BalloonScenario {
    fn default() -> Self {
        BalloonScenario {
            altitude_km: 10.0,
            separation_km: 377.0,
            divergence_rad: 5e-6,
            pointing_rad: 0.5e-6,
            wavelength_m: DEFAULT_WAVELENGTH_M,
            balloon_aperture_m: 0.4,
            ground_aperture_m: 1.0,
            cn2_link: 1e-17,
            cn2_vertical: 1e-15,
            aerosol: Aerosol::None,
            t_atm_link: None,
            t_atm_vertical: None,
            calibration: 1.0,
        }
    }
}

impl BalloonScenario {
    pub fn waist_m(&self) -> f64 {
        waist_from_divergence(self.divergence_rad, self.wavelength_m)
    }

    /// The balloon-to-balloon hop.
    pub fn link_channel(&self) -> Result<HorizontalChannel> {
        let horizon = horizon_distance(self.altitude_km, self.altitude_km);
        if self.separation_km > horizon {
            return Err(Error::invalid(
                "separation_km",
                format!(
                    "{} km is beyond the {:.1} km horizon distance for balloons at {} km",
                    self.separation_km, horizon, self.altitude_km
                ),
            ));
        }
        let t_atm = match self.t_atm_link {
            Some(t) => t,
            None => horizontal_default(AtmosphereTable::builtin(), self.aerosol, self.altitude_km)?,
        };
        let ch = HorizontalChannel {
            waist_m: self.waist_m(),
            wavelength_m: self.wavelength_m,
            cn2: self.cn2_link,
            pointing_rad: self.pointing_rad,
            aperture_m: self.balloon_aperture_m,
            range_m: self.separation_km * 1e3,
            altitude_m: self.altitude_km * 1e3,
            t_atm,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Balloon down to the Qonnector directly below it.
    pub fn vertical_channel(&self) -> Result<HorizontalChannel> {
        let t_atm = match self.t_atm_vertical {
            Some(t) => t,
            None => AtmosphereTable::builtin().vertical(self.aerosol, self.altitude_km)?,
        };
        let ch = HorizontalChannel {
            waist_m: self.waist_m(),
            wavelength_m: self.wavelength_m,
            cn2: self.cn2_vertical,
            pointing_rad: self.pointing_rad,
            aperture_m: self.ground_aperture_m,
            range_m: self.altitude_km * 1e3,
            altitude_m: 0.5 * self.altitude_km * 1e3,
            t_atm,
        };
        ch.validate()?;
        Ok(ch)
    }
}

/// The Qlients at either end of a balloon chain and their fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEnds {
    pub left_name: String,
    pub left_fiber_km: f64,
    pub right_name: String,
    pub right_fiber_km: f64,
    pub fiber_calibration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalloonChain {
    /// Left fiber, left vertical, balloon hop, right vertical, right fiber.
    pub sublinks: Vec<LinkRate>,
    pub rate: f64,
    pub limiting: String,
}

/// Runs the five BB84 sublinks of the balloon backbone and reduces them
/// with [`chain_rate`].
pub fn balloon_chain(
    scenario: &BalloonScenario,
    ends: &ChainEnds,
    devices: &DeviceParams,
    n_photons: u64,
    plan: TrialPlan,
) -> Result<BalloonChain> {
    devices.validate()?;
    let link = scenario.link_channel()?;
    let vertical = scenario.vertical_channel()?;
    let src = &devices.source;
    let det = &devices.detector;
    let fs_cal = scenario.calibration;
    let fiber_cal = ends.fiber_calibration;

    let named = |mut l: LinkRate, id: String| {
        l.link_id = id;
        l
    };
    let (left, right) = (&ends.left_name, &ends.right_name);
    let sublinks = vec![
        named(
            run_bb84_fiber(
                &devices.fiber(ends.left_fiber_km),
                src,
                det,
                fiber_cal,
                n_photons,
                plan.child(0),
            )?,
            format!("{left} -> left Qonnector"),
        ),
        named(
            run_bb84_free_space(&vertical, src, det, fs_cal, n_photons, plan.child(1))?,
            "left balloon -> left Qonnector".into(),
        ),
        named(
            run_bb84_free_space(&link, src, det, fs_cal, n_photons, plan.child(2))?,
            "left balloon -> right balloon".into(),
        ),
        named(
            run_bb84_free_space(&vertical, src, det, fs_cal, n_photons, plan.child(3))?,
            "right balloon -> right Qonnector".into(),
        ),
        named(
            run_bb84_fiber(
                &devices.fiber(ends.right_fiber_km),
                src,
                det,
                fiber_cal,
                n_photons,
                plan.child(4),
            )?,
            format!("right Qonnector -> {right}"),
        ),
    ];
    let limiting = limiting_link(&sublinks)?;
    Ok(BalloonChain {
        rate: limiting.rate(),
        limiting: limiting.link_id.clone(),
        sublinks,
    })
}
