//! Power sweep: rebuild the channel at every DC level, run the requested
//! precoders and tabulate min-SINR, rate per UE and per-UE SINRs.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{build_channel, ChannelError};
use crate::metrics::{audit, evaluate};
use crate::olp::{optimal_precoder, OlpSettings};
use crate::scenario::{Receiver, Room, Scenario, ScenarioError};
use crate::zf::zf_precoder;

/// Default gap between the DC level and the linear-range edge, in dB. At
/// +20 dB the amplitude budget is the DC level itself.
pub const DEFAULT_P_MAX_OFFSET_DB: f64 = 20.0;

/// Height of randomly placed receivers, matching the desk-level UEs of the
/// reference cases.
pub const RANDOM_UE_HEIGHT: f64 = 2.15;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("receiver {ue} has an all-zero channel row at p = {p_dbm} dBm")]
    DegenerateUe { ue: usize, p_dbm: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl SweepError {
    /// Process exit code: 2 for invalid input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SweepError::Usage(_) | SweepError::Scenario(_) => 2,
            SweepError::DegenerateUe { .. } | SweepError::Channel(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    Zf,
    Olp,
}

impl PrecoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrecoderKind::Zf => "zf",
            PrecoderKind::Olp => "olp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub p_start: f64,
    pub p_end: f64,
    pub p_step: f64,
    pub precoders: Vec<PrecoderKind>,
    pub olp: OlpSettings,
    /// `p_max = p + p_max_offset_db` at every sweep point.
    pub p_max_offset_db: f64,
    /// Fill the `wall_ms` column. Off by default so output is reproducible.
    pub timing: bool,
}

impl SweepSpec {
    pub fn new(p_start: f64, p_end: f64, p_step: f64, precoders: Vec<PrecoderKind>) -> Self {
        Self {
            p_start,
            p_end,
            p_step,
            precoders,
            olp: OlpSettings::default(),
            p_max_offset_db: DEFAULT_P_MAX_OFFSET_DB,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.precoders.is_empty() {
            return Err(SweepError::Usage("no precoder requested".into()));
        }
        if !(self.p_start.is_finite() && self.p_end.is_finite()) || self.p_start > self.p_end {
            return Err(SweepError::Usage(format!(
                "need p_start <= p_end, got {} and {}",
                self.p_start, self.p_end
            )));
        }
        if !(self.p_step > 0.0 && self.p_step.is_finite()) {
            return Err(SweepError::Usage(format!(
                "p_step must be positive, got {}",
                self.p_step
            )));
        }
        if !(self.p_max_offset_db > 0.0 && self.p_max_offset_db.is_finite()) {
            return Err(SweepError::Usage(format!(
                "p_max offset must be positive, got {} dB",
                self.p_max_offset_db
            )));
        }
        if !(self.olp.alpha > 1.0 && self.olp.alpha.is_finite()) {
            return Err(SweepError::Usage(format!(
                "alpha must exceed 1, got {}",
                self.olp.alpha
            )));
        }
        if !(self.olp.relative_epsilon > 0.0 && self.olp.relative_epsilon.is_finite()) {
            return Err(SweepError::Usage(format!(
                "epsilon must be positive, got {}",
                self.olp.relative_epsilon
            )));
        }
        self.olp
            .solver
            .validate()
            .map_err(|e| SweepError::Usage(e.to_string()))
    }

    /// `p_start, p_start + p_step, ...` up to and including `p_end`.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.p_end - self.p_start) / self.p_step + GRID_TOL).floor() as usize + 1;
        (0..n)
            .map(|i| self.p_start + i as f64 * self.p_step)
            .collect()
    }
}

/// Numbers reported for one precoder at one power level.
#[derive(Debug, Clone, PartialEq)]
pub struct RowData {
    pub min_sinr: f64,
    pub rate_per_ue: f64,
    pub sinr: Vec<f64>,
    /// Cone programs solved (0 for zero-forcing).
    pub probes: usize,
    /// Bisection halvings (0 for zero-forcing).
    pub iterations: usize,
    pub wall_ms: f64,
    pub precoder: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p_dbm: f64,
    pub precoder: PrecoderKind,
    /// The failure message when the precoder could not be computed.
    pub outcome: Result<RowData, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub users: usize,
    pub rows: Vec<SweepRow>,
    /// Tab-separated probe trace: `p_dbm phase t margin iterations verdict`.
    pub trace: Vec<String>,
}

impl SweepOutcome {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["p_dbm", "precoder", "min_sinr", "rate_per_ue_bps"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=self.users).map(|k| format!("sinr_{k}")));
        h.extend(["probes", "iters", "wall_ms"].iter().map(|s| s.to_string()));
        h
    }

    /// The results table. Failed rows keep their `p_dbm` and `precoder` and
    /// leave every numeric field blank.
    pub fn to_csv(&self, timing: bool) -> Result<String, csv::Error> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![format!("{}", row.p_dbm), row.precoder.as_str().to_string()];
            match &row.outcome {
                Ok(d) => {
                    rec.push(format!("{:e}", d.min_sinr));
                    rec.push(format!("{:e}", d.rate_per_ue));
                    rec.extend(d.sinr.iter().map(|s| format!("{s:e}")));
                    rec.push(d.probes.to_string());
                    rec.push(d.iterations.to_string());
                    rec.push(if timing {
                        format!("{:.3}", d.wall_ms)
                    } else {
                        String::new()
                    });
                }
                Err(_) => rec.extend(std::iter::repeat_n(String::new(), self.users + 5)),
            }
            wtr.write_record(&rec)?;
        }
        let bytes = wtr.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// The assumed 2×3 LED grid for the 5×5×3 m reference room: x at 1.5, 2.75
/// and 4.0 m, y at 1.25 and 3.75 m, on the ceiling.
pub fn default_layout() -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(6);
    for y in [1.25, 3.75] {
        for x in [1.5, 2.75, 4.0] {
            out.push([x, y, 3.0]);
        }
    }
    out
}

/// Whether the scenario uses the assumed [`default_layout`].
pub fn uses_default_layout(scenario: &Scenario) -> bool {
    let layout = default_layout();
    scenario.transmitters().len() == layout.len()
        && scenario
            .transmitters()
            .iter()
            .zip(&layout)
            .all(|(tx, p)| tx.position.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-9))
}

/// `k` receivers drawn uniformly over the room footprint at
/// [`RANDOM_UE_HEIGHT`] (or just under the ceiling in low rooms). Draws that
/// would leave a receiver without any LED in view are repeated.
pub fn random_receivers(
    scenario: &Scenario,
    k: usize,
    seed: u64,
) -> Result<Vec<Receiver>, SweepError> {
    if k == 0 || k >= scenario.transmitters().len() {
        return Err(SweepError::Usage(format!(
            "random UE count must be between 1 and {}, got {k}",
            scenario.transmitters().len() - 1
        )));
    }
    let Room { x, y, z } = scenario.room();
    let height = RANDOM_UE_HEIGHT.min(0.5 * z);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    let mut attempts = 0;
    while out.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SweepError::Usage(
                "could not place random receivers inside any LED's field of view".into(),
            ));
        }
        let rx = Receiver {
            position: [rng.random_range(0.0..=x), rng.random_range(0.0..=y), height],
        };
        let sees_led = scenario.transmitters().iter().any(|tx| {
            crate::channel::channel_gain(tx, &rx, scenario.params()).is_ok_and(|h| h > 0.0)
        });
        if sees_led {
            out.push(rx);
        }
    }
    Ok(out)
}

fn run_precoder(
    ch: &crate::channel::ChannelState,
    kind: PrecoderKind,
    spec: &SweepSpec,
    p_dbm: f64,
    trace: &mut Vec<String>,
) -> Result<RowData, String> {
    let start = Instant::now();
    let (w, probes, iterations) = match kind {
        PrecoderKind::Zf => {
            let d = zf_precoder(ch).map_err(|e| e.to_string())?;
            (d.precoder, 0, 0)
        }
        PrecoderKind::Olp => {
            let r = optimal_precoder(ch, &spec.olp).map_err(|e| e.to_string())?;
            trace.extend(r.probes.iter().map(|p| format!("{p_dbm}\t{}", p.tsv())));
            (r.precoder, r.solves, r.iterations)
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let check = audit(ch, &w);
    if !check.passed() {
        return Err(format!(
            "budget audit failed on LEDs {:?}",
            check.violations
        ));
    }
    let ev = evaluate(ch, &w);
    Ok(RowData {
        min_sinr: ev.min_sinr,
        rate_per_ue: ev.rate_per_ue,
        sinr: ev.sinr.iter().copied().collect(),
        probes,
        iterations,
        wall_ms,
        precoder: w,
    })
}

type PointResult = Result<(Vec<SweepRow>, Vec<String>), SweepError>;

fn run_point(base: &Scenario, p_dbm: f64, spec: &SweepSpec) -> PointResult {
    let sc = base.with_uniform_power(p_dbm, p_dbm + spec.p_max_offset_db)?;
    let ch = build_channel(&sc).map_err(|e| match e {
        ChannelError::DegenerateUe(ue) => SweepError::DegenerateUe { ue, p_dbm },
        e => e.into(),
    })?;
    let mut trace = Vec::new();
    let rows = spec
        .precoders
        .iter()
        .map(|&kind| {
            let outcome = run_precoder(&ch, kind, spec, p_dbm, &mut trace);
            if let Err(e) = &outcome {
                log::warn!("{} failed at p = {p_dbm} dBm: {e}", kind.as_str());
            }
            SweepRow {
                p_dbm,
                precoder: kind,
                outcome,
            }
        })
        .collect();
    Ok((rows, trace))
}

/// Runs the sweep. Grid points are independent and evaluated in parallel;
/// rows come back ordered by power, then by the requested precoder order.
pub fn run_sweep(scenario: &Scenario, spec: &SweepSpec) -> Result<SweepOutcome, SweepError> {
    spec.validate()?;
    let points: Vec<PointResult> = spec
        .grid()
        .into_par_iter()
        .map(|p| run_point(scenario, p, spec))
        .collect();
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for point in points {
        let (r, t) = point?;
        rows.extend(r);
        trace.extend(t);
    }
    warn_on_rate_drops(&rows, &spec.precoders);
    Ok(SweepOutcome {
        users: scenario.receivers().len(),
        rows,
        trace,
    })
}

fn warn_on_rate_drops(rows: &[SweepRow], kinds: &[PrecoderKind]) {
    for &kind in kinds {
        let rates: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.precoder == kind)
            .filter_map(|r| r.outcome.as_ref().ok().map(|d| (r.p_dbm, d.rate_per_ue)))
            .collect();
        for pair in rates.windows(2) {
            if pair[1].1 < pair[0].1 {
                log::warn!(
                    "{} rate per UE drops from {:e} to {:e} between {} and {} dBm",
                    kind.as_str(),
                    pair[0].1,
                    pair[1].1,
                    pair[0].0,
                    pair[1].0
                );
            }
        }
    }
}

/// Sidecar metadata written next to the results table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepMetadata {
    pub tool_version: &'static str,
    /// `"ASSUMED"` when the scenario uses [`default_layout`], else `"USER"`.
    pub led_layout: &'static str,
    pub precoders: Vec<PrecoderKind>,
    pub p_start_dbm: f64,
    pub p_end_dbm: f64,
    pub p_step_db: f64,
    pub p_max_offset_db: f64,
    pub alpha: f64,
    pub relative_epsilon: f64,
    pub fidelity_algorithms: bool,
    pub random_ue_seed: Option<u64>,
    pub receivers: Vec<[f64; 3]>,
    pub failed_rows: usize,
}

impl SweepMetadata {
    pub fn new(
        scenario: &Scenario,
        spec: &SweepSpec,
        seed: Option<u64>,
        outcome: &SweepOutcome,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            led_layout: if uses_default_layout(scenario) {
                "ASSUMED"
            } else {
                "USER"
            },
            precoders: spec.precoders.clone(),
            p_start_dbm: spec.p_start,
            p_end_dbm: spec.p_end,
            p_step_db: spec.p_step,
            p_max_offset_db: spec.p_max_offset_db,
            alpha: spec.olp.alpha,
            relative_epsilon: spec.olp.relative_epsilon,
            fidelity_algorithms: spec.olp.fidelity,
            random_ue_seed: seed,
            receivers: scenario.receivers().iter().map(|r| r.position).collect(),
            failed_rows: outcome.failed_rows(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{PhysicalParams, Transmitter};

    fn scenario(receivers: &[[f64; 3]]) -> Scenario {
        let txs = default_layout()
            .into_iter()
            .map(|position| Transmitter {
                position,
                avg_power_dbm: 20.0,
                max_power_dbm: 40.0,
            })
            .collect();
        let rxs = receivers
            .iter()
            .map(|&position| Receiver { position })
            .collect();
        Scenario::new(
            Room {
                x: 5.0,
                y: 5.0,
                z: 3.0,
            },
            PhysicalParams::reference(),
            txs,
            rxs,
        )
        .unwrap()
    }

    #[test]
    fn layout_is_on_the_ceiling_and_symmetric_in_y() {
        let l = default_layout();
        assert_eq!(l.len(), 6);
        assert!(l.iter().all(|p| p[2] == 3.0));
        let cy: f64 = l.iter().map(|p| p[1]).sum::<f64>() / 6.0;
        assert!((cy - 2.5).abs() < 1e-12);
        for p in &l {
            assert!(l
                .iter()
                .any(|q| q[0] == p[0] && (q[1] - (5.0 - p[1])).abs() < 1e-12));
        }
    }

    #[test]
    fn grid_includes_end_point() {
        let s = SweepSpec::new(15.0, 30.0, 2.0, vec![PrecoderKind::Zf]);
        assert_eq!(
            s.grid(),
            vec![15.0, 17.0, 19.0, 21.0, 23.0, 25.0, 27.0, 29.0]
        );
        let s = SweepSpec::new(15.0, 16.0, 0.5, vec![PrecoderKind::Zf]);
        assert_eq!(s.grid(), vec![15.0, 15.5, 16.0]);
        let s = SweepSpec::new(20.0, 20.0, 1.0, vec![PrecoderKind::Zf]);
        assert_eq!(s.grid(), vec![20.0]);
    }

    #[test]
    fn empty_precoder_set_is_a_usage_error() {
        let sc = scenario(&[[2.0, 2.0, 2.15]]);
        let err = run_sweep(&sc, &SweepSpec::new(15.0, 16.0, 1.0, vec![])).unwrap_err();
        assert!(matches!(err, SweepError::Usage(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let bad = [
            SweepSpec::new(20.0, 15.0, 1.0, vec![PrecoderKind::Zf]),
            SweepSpec::new(15.0, 20.0, 0.0, vec![PrecoderKind::Zf]),
            SweepSpec::new(15.0, 20.0, -1.0, vec![PrecoderKind::Zf]),
        ];
        for s in bad {
            assert!(matches!(s.validate(), Err(SweepError::Usage(_))));
        }
    }

    #[test]
    fn degenerate_receiver_is_named() {
        // Far corner, outside every LED's field of view.
        let sc = scenario(&[[2.0, 2.0, 2.15], [0.0, 0.0, 2.9]]);
        let err = run_sweep(
            &sc,
            &SweepSpec::new(15.0, 15.0, 1.0, vec![PrecoderKind::Zf]),
        )
        .unwrap_err();
        assert_eq!(err, SweepError::DegenerateUe { ue: 1, p_dbm: 15.0 });
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn csv_layout_and_blank_failed_rows() {
        let sc = scenario(&[[2.05, 1.6, 2.15], [2.15, 4.1, 2.15]]);
        let spec = SweepSpec::new(15.0, 17.0, 2.0, vec![PrecoderKind::Zf, PrecoderKind::Olp]);
        let mut out = run_sweep(&sc, &spec).unwrap();
        assert_eq!(out.rows.len(), 4);
        out.rows[1].outcome = Err("boom".into());
        let csv = out.to_csv(false).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "p_dbm,precoder,min_sinr,rate_per_ue_bps,sinr_1,sinr_2,probes,iters,wall_ms"
        );
        assert!(lines[1].starts_with("15,zf,"));
        assert!(lines[1].ends_with(",0,0,"));
        assert_eq!(lines[2], "15,olp,,,,,,,");
        assert!(lines[4].starts_with("17,olp,"));
        assert!(!out.trace.is_empty());
        assert!(out.trace.iter().all(|l| l.split('\t').count() == 6));
    }

    #[test]
    fn random_receivers_are_reproducible() {
        let sc = scenario(&[[2.0, 2.0, 2.15]]);
        let a = random_receivers(&sc, 4, 7).unwrap();
        let b = random_receivers(&sc, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_receivers(&sc, 4, 8).unwrap());
        assert!(random_receivers(&sc, 6, 7).is_err());
        assert!(random_receivers(&sc, 0, 7).is_err());
    }
}
