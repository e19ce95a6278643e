//! Physical scenario: room, LEDs, photodetectors and device parameters.
//!
//! Everything is stored in SI units. The scenario file uses the more familiar
//! engineering units (degrees, cm², pA/√Hz, dBm) and [`parse_scenario`] converts
//! on the way in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Elementary charge in coulombs.
pub const ELECTRON_CHARGE: f64 = 1.602176634e-19;

const CEILING_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    Schema(String),
    #[error("invalid {field} = {value}: {reason}")]
    Invalid {
        field: String,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(field: impl Into<String>, value: f64, reason: &'static str) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        value,
        reason,
    }
}

/// Converts a power level from dBm to watts.
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// Room extent in meters. The floor sits at z = 0 and the ceiling at z = `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Room {
    fn contains_footprint(&self, p: [f64; 3]) -> bool {
        (0.0..=self.x).contains(&p[0]) && (0.0..=self.y).contains(&p[1])
    }
}

/// LED and photodetector parameters, in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Lambertian emission order `m`.
    pub lambertian_order: f64,
    /// Photodetector responsivity (A/W).
    pub responsivity: f64,
    /// Photodetector area (m²).
    pub pd_area: f64,
    /// Receiver field-of-view half angle (rad).
    pub fov: f64,
    /// Refractive index of the optical concentrator.
    pub concentrator_index: f64,
    /// Preamplifier noise current density (A/√Hz).
    pub preamp_noise_density: f64,
    /// Ambient light photocurrent, used as printed in the noise model.
    pub ambient_photocurrent: f64,
    /// Receiver bandwidth (Hz).
    pub bandwidth: f64,
    /// Elementary charge (C). Only overridden in tests.
    pub electron_charge: f64,
}

impl PhysicalParams {
    /// Parameters of the reference indoor setup: m = 1, ρ = 0.4 A/W,
    /// A_PD = 1 cm², 60° FOV, q = 1.5, 5 pA/√Hz, ξ = 10.93, B = 100 MHz.
    pub fn reference() -> Self {
        Self {
            lambertian_order: 1.0,
            responsivity: 0.4,
            pd_area: 1e-4,
            fov: 60f64.to_radians(),
            concentrator_index: 1.5,
            preamp_noise_density: 5e-12,
            ambient_photocurrent: 10.93,
            bandwidth: 1e8,
            electron_charge: ELECTRON_CHARGE,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("physics.{field}"), v, "must be finite"))
            }
        };
        finite("m", self.lambertian_order)?;
        finite("responsivity_a_per_w", self.responsivity)?;
        finite("pd_area_cm2", self.pd_area)?;
        finite("fov_deg", self.fov)?;
        finite("concentrator_index", self.concentrator_index)?;
        finite("preamp_noise_pa_sqrthz", self.preamp_noise_density)?;
        finite("ambient_photocurrent", self.ambient_photocurrent)?;
        finite("bandwidth_hz", self.bandwidth)?;
        if self.lambertian_order < 1.0 {
            return Err(invalid("physics.m", self.lambertian_order, "must be >= 1"));
        }
        if self.responsivity <= 0.0 {
            return Err(invalid(
                "physics.responsivity_a_per_w",
                self.responsivity,
                "must be > 0",
            ));
        }
        if self.pd_area <= 0.0 {
            return Err(invalid(
                "physics.pd_area_cm2",
                self.pd_area * 1e4,
                "must be > 0",
            ));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::FRAC_PI_2) {
            return Err(invalid(
                "physics.fov_deg",
                self.fov.to_degrees(),
                "must lie strictly between 0 and 90 degrees",
            ));
        }
        if self.concentrator_index < 1.0 {
            return Err(invalid(
                "physics.concentrator_index",
                self.concentrator_index,
                "must be >= 1",
            ));
        }
        if self.preamp_noise_density < 0.0 {
            return Err(invalid(
                "physics.preamp_noise_pa_sqrthz",
                self.preamp_noise_density * 1e12,
                "must be >= 0",
            ));
        }
        if self.ambient_photocurrent < 0.0 {
            return Err(invalid(
                "physics.ambient_photocurrent",
                self.ambient_photocurrent,
                "must be >= 0",
            ));
        }
        if self.bandwidth <= 0.0 {
            return Err(invalid(
                "physics.bandwidth_hz",
                self.bandwidth,
                "must be > 0",
            ));
        }
        if !(self.electron_charge > 0.0) {
            return Err(invalid(
                "electron_charge",
                self.electron_charge,
                "must be > 0",
            ));
        }
        Ok(())
    }
}

/// A ceiling-mounted LED pointing straight down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub position: [f64; 3],
    /// DC illumination level `p_n` (dBm).
    pub avg_power_dbm: f64,
    /// Upper edge of the LED's linear range `p_max` (dBm).
    pub max_power_dbm: f64,
}

impl Transmitter {
    pub fn avg_power(&self) -> f64 {
        dbm_to_watts(self.avg_power_dbm)
    }

    pub fn max_power(&self) -> f64 {
        dbm_to_watts(self.max_power_dbm)
    }

    /// Largest symmetric swing around the DC offset, `min(p_n, p_max - p_n)`,
    /// that keeps the drive signal nonnegative and inside the linear range.
    pub fn amplitude_budget(&self) -> Result<f64, ScenarioError> {
        amplitude_budget(self)
    }
}

/// See [`Transmitter::amplitude_budget`].
pub fn amplitude_budget(tx: &Transmitter) -> Result<f64, ScenarioError> {
    let p = tx.avg_power();
    let budget = p.min(tx.max_power() - p);
    if budget > 0.0 {
        Ok(budget)
    } else {
        Err(invalid(
            "transmitter.p_max_dbm",
            tx.max_power_dbm,
            "must exceed p_dbm, the amplitude budget is not positive",
        ))
    }
}

/// A photodetector facing straight up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receiver {
    pub position: [f64; 3],
}

/// A validated scenario. Immutable once built; use the `with_*` methods to
/// derive modified copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    room: Room,
    params: PhysicalParams,
    transmitters: Vec<Transmitter>,
    receivers: Vec<Receiver>,
}

impl Scenario {
    pub fn new(
        room: Room,
        params: PhysicalParams,
        transmitters: Vec<Transmitter>,
        receivers: Vec<Receiver>,
    ) -> Result<Self, ScenarioError> {
        for (field, v) in [
            ("room.x_m", room.x),
            ("room.y_m", room.y),
            ("room.z_m", room.z),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, v, "room dimensions must be positive"));
            }
        }
        params.validate()?;
        if receivers.is_empty() {
            return Err(invalid(
                "receivers",
                0.0,
                "at least one receiver is required",
            ));
        }
        if transmitters.len() <= receivers.len() {
            return Err(invalid(
                "transmitters",
                transmitters.len() as f64,
                "need more transmitters than receivers",
            ));
        }
        for (n, tx) in transmitters.iter().enumerate() {
            let p = tx.position;
            for (i, v) in p.iter().enumerate() {
                if !v.is_finite() {
                    return Err(invalid(
                        format!("transmitters[{n}].pos_m[{i}]"),
                        *v,
                        "must be finite",
                    ));
                }
            }
            if !room.contains_footprint(p) {
                let (i, v) = if (0.0..=room.x).contains(&p[0]) {
                    (1, p[1])
                } else {
                    (0, p[0])
                };
                return Err(invalid(
                    format!("transmitters[{n}].pos_m[{i}]"),
                    v,
                    "outside the room footprint",
                ));
            }
            if (p[2] - room.z).abs() > CEILING_TOL * room.z.max(1.0) {
                return Err(invalid(
                    format!("transmitters[{n}].pos_m[2]"),
                    p[2],
                    "transmitters must be mounted at ceiling height",
                ));
            }
            if !(tx.avg_power_dbm.is_finite() && tx.max_power_dbm.is_finite()) {
                return Err(invalid(
                    format!("transmitters[{n}].p_dbm"),
                    tx.avg_power_dbm,
                    "power levels must be finite",
                ));
            }
            if tx.avg_power_dbm >= tx.max_power_dbm {
                return Err(invalid(
                    format!("transmitters[{n}].p_max_dbm"),
                    tx.max_power_dbm,
                    "must exceed p_dbm",
                ));
            }
        }
        for (k, rx) in receivers.iter().enumerate() {
            let p = rx.position;
            for (i, v) in p.iter().enumerate() {
                if !v.is_finite() {
                    return Err(invalid(
                        format!("receivers[{k}].pos_m[{i}]"),
                        *v,
                        "must be finite",
                    ));
                }
            }
            if !room.contains_footprint(p) {
                let (i, v) = if (0.0..=room.x).contains(&p[0]) {
                    (1, p[1])
                } else {
                    (0, p[0])
                };
                return Err(invalid(
                    format!("receivers[{k}].pos_m[{i}]"),
                    v,
                    "outside the room footprint",
                ));
            }
            if !(p[2] >= 0.0 && p[2] < room.z) {
                return Err(invalid(
                    format!("receivers[{k}].pos_m[2]"),
                    p[2],
                    "must satisfy 0 <= z < ceiling height",
                ));
            }
        }
        Ok(Self {
            room,
            params,
            transmitters,
            receivers,
        })
    }

    pub fn room(&self) -> Room {
        self.room
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn transmitters(&self) -> &[Transmitter] {
        &self.transmitters
    }

    pub fn receivers(&self) -> &[Receiver] {
        &self.receivers
    }

    /// Every LED driven at the same DC level `p_dbm` with linear-range edge
    /// `p_max_dbm`.
    pub fn with_uniform_power(&self, p_dbm: f64, p_max_dbm: f64) -> Result<Self, ScenarioError> {
        let transmitters = self
            .transmitters
            .iter()
            .map(|tx| Transmitter {
                avg_power_dbm: p_dbm,
                max_power_dbm: p_max_dbm,
                ..*tx
            })
            .collect();
        Self::new(
            self.room,
            self.params.clone(),
            transmitters,
            self.receivers.clone(),
        )
    }

    pub fn with_receivers(&self, receivers: Vec<Receiver>) -> Result<Self, ScenarioError> {
        Self::new(
            self.room,
            self.params.clone(),
            self.transmitters.clone(),
            receivers,
        )
    }

    pub fn with_params(&self, params: PhysicalParams) -> Result<Self, ScenarioError> {
        Self::new(
            self.room,
            params,
            self.transmitters.clone(),
            self.receivers.clone(),
        )
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            room: RoomSpec {
                x_m: self.room.x,
                y_m: self.room.y,
                z_m: self.room.z,
            },
            physics: PhysicsSpec {
                m: self.params.lambertian_order,
                responsivity_a_per_w: self.params.responsivity,
                pd_area_cm2: self.params.pd_area * 1e4,
                fov_deg: self.params.fov.to_degrees(),
                concentrator_index: self.params.concentrator_index,
                preamp_noise_pa_sqrthz: self.params.preamp_noise_density * 1e12,
                ambient_photocurrent: self.params.ambient_photocurrent,
                bandwidth_hz: self.params.bandwidth,
            },
            transmitters: self
                .transmitters
                .iter()
                .map(|tx| TransmitterSpec {
                    pos_m: tx.position,
                    p_dbm: tx.avg_power_dbm,
                    p_max_dbm: tx.max_power_dbm,
                })
                .collect(),
            receivers: self
                .receivers
                .iter()
                .map(|rx| ReceiverSpec { pos_m: rx.position })
                .collect(),
        }
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub room: RoomSpec,
    pub physics: PhysicsSpec,
    pub transmitters: Vec<TransmitterSpec>,
    pub receivers: Vec<ReceiverSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSpec {
    pub m: f64,
    pub responsivity_a_per_w: f64,
    pub pd_area_cm2: f64,
    pub fov_deg: f64,
    pub concentrator_index: f64,
    pub preamp_noise_pa_sqrthz: f64,
    pub ambient_photocurrent: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterSpec {
    pub pos_m: [f64; 3],
    pub p_dbm: f64,
    pub p_max_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    pub pos_m: [f64; 3],
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = ScenarioError;

    fn try_from(file: ScenarioFile) -> Result<Self, Self::Error> {
        let ph = &file.physics;
        let params = PhysicalParams {
            lambertian_order: ph.m,
            responsivity: ph.responsivity_a_per_w,
            pd_area: ph.pd_area_cm2 * 1e-4,
            fov: ph.fov_deg.to_radians(),
            concentrator_index: ph.concentrator_index,
            preamp_noise_density: ph.preamp_noise_pa_sqrthz * 1e-12,
            ambient_photocurrent: ph.ambient_photocurrent,
            bandwidth: ph.bandwidth_hz,
            electron_charge: ELECTRON_CHARGE,
        };
        let room = Room {
            x: file.room.x_m,
            y: file.room.y_m,
            z: file.room.z_m,
        };
        let transmitters = file
            .transmitters
            .iter()
            .map(|t| Transmitter {
                position: t.pos_m,
                avg_power_dbm: t.p_dbm,
                max_power_dbm: t.p_max_dbm,
            })
            .collect();
        let receivers = file
            .receivers
            .iter()
            .map(|r| Receiver { position: r.pos_m })
            .collect();
        Scenario::new(room, params, transmitters, receivers)
    }
}

/// Parses and validates a JSON scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    Scenario::try_from(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = r#"{
        "room": {"x_m": 5.0, "y_m": 5.0, "z_m": 3.0},
        "physics": {"m": 1, "responsivity_a_per_w": 0.4, "pd_area_cm2": 1.0, "fov_deg": 60,
                    "concentrator_index": 1.5, "preamp_noise_pa_sqrthz": 5.0,
                    "ambient_photocurrent": 10.93, "bandwidth_hz": 1e8},
        "transmitters": [
            {"pos_m": [1.5, 1.25, 3.0], "p_dbm": 20, "p_max_dbm": 40},
            {"pos_m": [2.75, 3.75, 3.0], "p_dbm": 20, "p_max_dbm": 40}
        ],
        "receivers": [{"pos_m": [2.05, 1.60, 2.15]}]
    }"#;

    #[test]
    fn table1_units_are_converted() {
        let s = parse_scenario(TABLE1).unwrap();
        let p = s.params();
        assert!((p.pd_area - 1e-4).abs() < 1e-18);
        assert!((p.fov - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
        assert_eq!(p.bandwidth, 1e8);
        assert!((p.preamp_noise_density - 5e-12).abs() < 1e-24);
        assert_eq!(p.electron_charge, ELECTRON_CHARGE);
        assert_eq!(s.receivers()[0].position, [2.05, 1.60, 2.15]);
    }

    #[test]
    fn receiver_above_ceiling_is_rejected() {
        let text = TABLE1.replace("[2.05, 1.60, 2.15]", "[2.05, 1.60, 3.5]");
        match parse_scenario(&text) {
            Err(ScenarioError::Invalid { field, value, .. }) => {
                assert_eq!(field, "receivers[0].pos_m[2]");
                assert_eq!(value, 3.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = TABLE1.replace("\"m\": 1,", "\"m\": 1, \"tilt_deg\": 4,");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Schema(_))
        ));
    }

    #[test]
    fn needs_more_transmitters_than_receivers() {
        let text = TABLE1.replace(
            r#"[{"pos_m": [2.05, 1.60, 2.15]}]"#,
            r#"[{"pos_m": [2.05, 1.60, 2.15]}, {"pos_m": [3.0, 3.0, 2.0]}]"#,
        );
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Invalid { ref field, .. }) if field == "transmitters"
        ));
    }

    #[test]
    fn fov_out_of_range() {
        let text = TABLE1.replace("\"fov_deg\": 60", "\"fov_deg\": 90");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Invalid { ref field, .. }) if field == "physics.fov_deg"
        ));
    }

    #[test]
    fn transmitter_below_ceiling() {
        let text = TABLE1.replace("[1.5, 1.25, 3.0]", "[1.5, 1.25, 2.9]");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Invalid { ref field, .. }) if field == "transmitters[0].pos_m[2]"
        ));
    }

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_watts(30.0), 1.0);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        // 10^-1.5 evaluated at 30 digits: 0.0316227766016837933...
        assert!((dbm_to_watts(15.0) - 0.031_622_776_601_683_79).abs() < 1e-7);
        assert!((dbm_to_watts(15.0) - 0.031_622_776_601_683_79).abs() < 1e-16);
    }

    fn tx_watts(p: f64, pmax: f64) -> Transmitter {
        Transmitter {
            position: [0.0, 0.0, 3.0],
            avg_power_dbm: 30.0 + 10.0 * p.log10(),
            max_power_dbm: 30.0 + 10.0 * pmax.log10(),
        }
    }

    #[test]
    fn amplitude_budget_branches() {
        assert!((amplitude_budget(&tx_watts(1.0, 3.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((amplitude_budget(&tx_watts(2.0, 3.0)).unwrap() - 1.0).abs() < 1e-12);
        // p_max 20 dB above p: the budget is the DC level itself.
        let tx = Transmitter {
            position: [0.0, 0.0, 3.0],
            avg_power_dbm: 15.0,
            max_power_dbm: 35.0,
        };
        assert_eq!(amplitude_budget(&tx).unwrap(), tx.avg_power());
        let bad = Transmitter {
            max_power_dbm: 15.0,
            ..tx
        };
        assert!(amplitude_budget(&bad).is_err());
    }

    #[test]
    fn parse_is_deterministic() {
        assert_eq!(
            parse_scenario(TABLE1).unwrap(),
            parse_scenario(TABLE1).unwrap()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dbm_shift(p in -40.0f64..60.0, delta in -20.0f64..20.0) {
                let lhs = dbm_to_watts(p) * 10f64.powf(delta / 10.0);
                let rhs = dbm_to_watts(p + delta);
                prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
                if delta > 0.0 {
                    prop_assert!(dbm_to_watts(p + delta) > dbm_to_watts(p));
                }
            }

            #[test]
            fn budget_is_the_smaller_side(p in -10.0f64..40.0, gap in 0.01f64..30.0) {
                let tx = Transmitter { position: [0.0; 3], avg_power_dbm: p, max_power_dbm: p + gap };
                let b = amplitude_budget(&tx).unwrap();
                let (pn, headroom) = (tx.avg_power(), tx.max_power() - tx.avg_power());
                prop_assert!(b <= pn && b <= headroom);
                prop_assert!(b == pn || b == headroom);
            }

            #[test]
            fn file_round_trip(x in 0.0f64..5.0, y in 0.0f64..5.0, z in 0.0f64..2.9) {
                let text = TABLE1.replace("[2.05, 1.60, 2.15]", &format!("[{x}, {y}, {z}]"));
                let s = parse_scenario(&text).unwrap();
                let again = Scenario::try_from(s.to_file()).unwrap();
                prop_assert_eq!(s.receivers(), again.receivers());
                prop_assert_eq!(s.transmitters(), again.transmitters());
            }
        }
    }
}
