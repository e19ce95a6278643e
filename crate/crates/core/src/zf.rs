//! Zero-forcing precoder with max-min optimal symbol gains.
//!
//! `W = H'(HH')^-1 diag(γ)` nulls all inter-user interference, so UE k sees
//! `r_k = γ_k s_k + z_k`. Writing `P = H'(HH')^-1`, row n of `W` uses
//! `Σ_k |P_nk| γ_k` of its amplitude budget. Choosing `γ_k = σ_k μ` equalizes
//! the SINRs at `μ²`, and the largest admissible `μ` is
//! `min_n p̃_n / (|P| σ)_n`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::channel::ChannelState;

/// Channels with a larger 2-norm condition number are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum ZfError {
    #[error(
        "channel matrix is ill-conditioned (condition number {0:e}); zero-forcing is undefined"
    )]
    IllConditioned(f64),
    #[error("zero-forcing needs at least as many LEDs as UEs ({users} UEs, {leds} LEDs)")]
    TooFewTransmitters { users: usize, leds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfDesign {
    /// M×K precoding matrix.
    pub precoder: DMatrix<f64>,
    /// Optimal symbol gains `γ_k = σ_k μ`.
    pub gains: DVector<f64>,
    /// Common SINR amplitude `μ`. The gain factor does not depend on k.
    pub mu: f64,
    /// LED whose budget is met with equality.
    pub binding_row: usize,
}

impl ZfDesign {
    /// Every UE ends at SINR `μ²`.
    pub fn min_sinr(&self) -> f64 {
        zf_min_sinr(self)
    }
}

pub fn zf_min_sinr(design: &ZfDesign) -> f64 {
    design.mu * design.mu
}

/// Right inverse `H'(HH')^-1`, through a Cholesky factorization of `HH'`.
pub fn right_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>, ZfError> {
    let (k, m) = h.shape();
    if m < k {
        return Err(ZfError::TooFewTransmitters { users: k, leds: m });
    }
    let sv = h.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(cond <= MAX_CONDITION) {
        return Err(ZfError::IllConditioned(cond));
    }
    let gram = h * h.transpose();
    let chol = Cholesky::new(gram).ok_or(ZfError::IllConditioned(cond))?;
    // (HH')^-1 H, transposed.
    Ok(chol.solve(h).transpose())
}

pub fn zf_precoder(ch: &ChannelState) -> Result<ZfDesign, ZfError> {
    let pinv = right_inverse(ch.gains())?;
    let sigma = ch.sigma();
    let budgets = ch.budgets();
    let row_cost = pinv.abs() * sigma;

    let (binding_row, mu) = row_cost
        .iter()
        .zip(budgets.iter())
        .map(|(&cost, &p)| p / cost)
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (n, r)| if r < best.1 { (n, r) } else { best },
        );

    let gains = sigma * mu;
    let mut precoder = pinv;
    for (k, mut col) in precoder.column_iter_mut().enumerate() {
        col *= gains[k];
    }
    Ok(ZfDesign {
        precoder,
        gains,
        mu,
        binding_row,
    })
}
