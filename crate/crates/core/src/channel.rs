//! Line-of-sight Lambertian channel and receiver noise.
//!
//! LEDs face straight down and photodetectors straight up, so the emission
//! angle and the incidence angle coincide: `cos φ = cos θ = Δz / d`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scenario::{PhysicalParams, Receiver, Scenario, ScenarioError, Transmitter};

/// Gains below this are flushed to zero.
const GAIN_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("transmitter at {tx:?} and receiver at {rx:?}: {reason}")]
    Geometry {
        tx: [f64; 3],
        rx: [f64; 3],
        reason: &'static str,
    },
    #[error("noise model is degenerate: every noise term is zero")]
    DegenerateNoise,
    #[error("receiver {0} has an all-zero channel row and can never reach a positive SINR")]
    DegenerateUe(usize),
    #[error("inconsistent channel data: {0}")]
    Shape(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Effective collection area of the photodetector behind its concentrator,
/// `q² / sin²(θ_c) · A_PD`.
pub fn collection_area(params: &PhysicalParams) -> f64 {
    let s = params.fov.sin();
    params.concentrator_index.powi(2) / (s * s) * params.pd_area
}

/// Lambertian radiant intensity `(m + 1) cos^m(φ) / 2π`.
pub fn lambertian_intensity(phi: f64, order: f64) -> f64 {
    radiant_from_cos(phi.cos().max(0.0), order)
}

fn radiant_from_cos(cos_phi: f64, order: f64) -> f64 {
    (order + 1.0) * cos_phi.powf(order) / (2.0 * PI)
}

/// DC gain from `tx` to `rx` (A/W). Zero outside the receiver's field of view.
pub fn channel_gain(
    tx: &Transmitter,
    rx: &Receiver,
    params: &PhysicalParams,
) -> Result<f64, ChannelError> {
    let [tx_x, tx_y, tx_z] = tx.position;
    let [rx_x, rx_y, rx_z] = rx.position;
    let drop = tx_z - rx_z;
    let d = ((tx_x - rx_x).powi(2) + (tx_y - rx_y).powi(2) + drop * drop).sqrt();
    if d == 0.0 {
        return Err(ChannelError::Geometry {
            tx: tx.position,
            rx: rx.position,
            reason: "coincident positions",
        });
    }
    if drop <= 0.0 {
        return Err(ChannelError::Geometry {
            tx: tx.position,
            rx: rx.position,
            reason: "transmitter must be above the receiver",
        });
    }
    let cos_angle = drop / d;
    if cos_angle < params.fov.cos() {
        return Ok(0.0);
    }
    let radiant = radiant_from_cos(cos_angle, params.lambertian_order);
    let gain = params.responsivity * collection_area(params) / (d * d) * radiant * cos_angle;
    Ok(if gain < GAIN_FLOOR { 0.0 } else { gain })
}

/// Receiver noise standard deviation (A) for a received DC level `dc_power`:
/// shot noise from the signal, shot noise from ambient light and the
/// preamplifier thermal term.
pub fn noise_std(params: &PhysicalParams, dc_power: f64) -> Result<f64, ChannelError> {
    let e = params.electron_charge;
    let b = params.bandwidth;
    let shot = 2.0 * e * dc_power * b;
    // Ambient factor enters exactly as in the reference model, unit aside.
    let ambient = 2.0
        * e
        * params.responsivity
        * params.ambient_photocurrent
        * collection_area(params)
        * 2.0
        * PI
        * (1.0 - params.fov.cos())
        * b;
    let thermal = params.preamp_noise_density.powi(2) * b;
    let var = shot + ambient + thermal;
    if var > 0.0 {
        Ok(var.sqrt())
    } else {
        Err(ChannelError::DegenerateNoise)
    }
}

/// Channel matrix, noise levels and amplitude budgets for one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    gains: DMatrix<f64>,
    sigma: DVector<f64>,
    budgets: DVector<f64>,
    dc_power: DVector<f64>,
    bandwidth: f64,
}

impl ChannelState {
    /// Builds a state from raw parts. `gains` is K×M with row k holding `h_k^T`.
    /// The received DC levels are unknown in this path and recorded as zero.
    pub fn from_parts(
        gains: DMatrix<f64>,
        sigma: DVector<f64>,
        budgets: DVector<f64>,
        bandwidth: f64,
    ) -> Result<Self, ChannelError> {
        let (k, m) = gains.shape();
        if k == 0 || m == 0 {
            return Err(ChannelError::Shape("empty channel matrix".into()));
        }
        if sigma.len() != k || budgets.len() != m {
            return Err(ChannelError::Shape(format!(
                "H is {k}x{m} but sigma has {} entries and budgets {}",
                sigma.len(),
                budgets.len()
            )));
        }
        if gains.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
            return Err(ChannelError::Shape(
                "channel gains must be finite and >= 0".into(),
            ));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ChannelError::Shape("noise levels must be positive".into()));
        }
        if budgets.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(ChannelError::Shape(
                "amplitude budgets must be positive".into(),
            ));
        }
        if !(bandwidth > 0.0) {
            return Err(ChannelError::Shape("bandwidth must be positive".into()));
        }
        if let Some(row) = (0..k).find(|&r| gains.row(r).iter().all(|&h| h == 0.0)) {
            return Err(ChannelError::DegenerateUe(row));
        }
        Ok(Self {
            gains,
            sigma,
            budgets,
            dc_power: DVector::zeros(k),
            bandwidth,
        })
    }

    /// K×M channel matrix `H`; row k is `h_k^T`.
    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }

    /// Per-UE noise standard deviations.
    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Per-LED amplitude budgets `p̃_n`.
    pub fn budgets(&self) -> &DVector<f64> {
        &self.budgets
    }

    /// Received DC level `P_s,k = Σ_n p_n h_nk` per UE.
    pub fn dc_power(&self) -> &DVector<f64> {
        &self.dc_power
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn num_users(&self) -> usize {
        self.gains.nrows()
    }

    pub fn num_transmitters(&self) -> usize {
        self.gains.ncols()
    }

    /// Same channel with noise levels scaled by `noise_factor` and budgets by
    /// `budget_factor`.
    pub fn scaled(&self, noise_factor: f64, budget_factor: f64) -> Self {
        Self {
            sigma: &self.sigma * noise_factor,
            budgets: &self.budgets * budget_factor,
            ..self.clone()
        }
    }

    /// Plain CSV dump used by `vlc-precode check`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let m = self.num_transmitters();
        out.push_str("quantity,index");
        for n in 0..m {
            let _ = write!(out, ",led_{}", n + 1);
        }
        out.push('\n');
        for k in 0..self.num_users() {
            let _ = write!(out, "gain,ue_{}", k + 1);
            for n in 0..m {
                let _ = write!(out, ",{:e}", self.gains[(k, n)]);
            }
            out.push('\n');
        }
        out.push_str("budget_w,all");
        for p in self.budgets.iter() {
            let _ = write!(out, ",{p:e}");
        }
        out.push('\n');
        out.push_str("\nue,dc_power,noise_std_a,noise_var_a2\n");
        for k in 0..self.num_users() {
            let s = self.sigma[k];
            let _ = writeln!(
                out,
                "ue_{},{:e},{:e},{:e}",
                k + 1,
                self.dc_power[k],
                s,
                s * s
            );
        }
        out
    }
}

/// Builds the channel state of a scenario at its configured power levels.
pub fn build_channel(scenario: &Scenario) -> Result<ChannelState, ChannelError> {
    let params = scenario.params();
    let txs = scenario.transmitters();
    let rxs = scenario.receivers();
    let (k, m) = (rxs.len(), txs.len());

    let mut gains = DMatrix::zeros(k, m);
    for (r, rx) in rxs.iter().enumerate() {
        for (n, tx) in txs.iter().enumerate() {
            gains[(r, n)] = channel_gain(tx, rx, params)?;
        }
        if gains.row(r).iter().all(|&h| h == 0.0) {
            return Err(ChannelError::DegenerateUe(r));
        }
    }

    let dc_levels = DVector::from_iterator(m, txs.iter().map(Transmitter::avg_power));
    let dc_power = &gains * &dc_levels;
    let sigma = dc_power
        .iter()
        .map(|&ps| noise_std(params, ps))
        .collect::<Result<Vec<_>, _>>()?;
    let budgets = txs
        .iter()
        .map(Transmitter::amplitude_budget)
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ChannelState {
        gains,
        sigma: DVector::from_vec(sigma),
        budgets: DVector::from_vec(budgets),
        dc_power,
        bandwidth: params.bandwidth,
    })
}
