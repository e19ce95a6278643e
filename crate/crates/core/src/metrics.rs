//! Per-UE SINR, rate per UE and amplitude-budget audits for any precoder.

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelState;

/// Relative slack allowed on `Σ_k |w_nk| <= p̃_n` before a row is flagged.
pub const AUDIT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sinr: DVector<f64>,
    pub min_sinr: f64,
    /// `(1/K) Σ_k B log2(1 + SINR_k)` in bit/s.
    pub rate_per_ue: f64,
    /// `Σ_k |w_nk|` per LED.
    pub row_usage: DVector<f64>,
    /// `row_usage / p̃`, unclamped.
    pub budget_ratio: DVector<f64>,
    /// Entry `(k, j)` is `|h_k' w_j|`.
    pub interference: DMatrix<f64>,
}

/// Evaluates precoder `w` (M×K, column k feeds UE k) on the channel.
///
/// # Panics
/// If `w` is not M×K for the channel's K×M gain matrix.
pub fn evaluate(ch: &ChannelState, w: &DMatrix<f64>) -> Evaluation {
    let h = ch.gains();
    let (k, m) = h.shape();
    assert_eq!(w.shape(), (m, k), "precoder must be {m}x{k}");

    let coupling = h * w;
    let sigma = ch.sigma();
    let sinr = DVector::from_iterator(
        k,
        (0..k).map(|u| {
            let useful = coupling[(u, u)].powi(2);
            let leak: f64 = (0..k)
                .filter(|&j| j != u)
                .map(|j| coupling[(u, j)].powi(2))
                .sum();
            useful / (leak + sigma[u] * sigma[u])
        }),
    );
    let min_sinr = sinr.min();
    let rate_per_ue =
        ch.bandwidth() * sinr.iter().map(|s| (1.0 + s).log2()).sum::<f64>() / k as f64;
    let row_usage = DVector::from_iterator(m, w.row_iter().map(|r| r.abs().sum()));
    let budget_ratio = row_usage.component_div(ch.budgets());
    Evaluation {
        sinr,
        min_sinr,
        rate_per_ue,
        row_usage,
        budget_ratio,
        interference: coupling.abs(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowViolation {
    pub row: usize,
    pub usage: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub ratios: DVector<f64>,
    pub violations: Vec<RowViolation>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the per-LED amplitude budgets with relative tolerance
/// [`AUDIT_TOLERANCE`].
pub fn audit(ch: &ChannelState, w: &DMatrix<f64>) -> Audit {
    let budgets = ch.budgets();
    assert_eq!(
        w.nrows(),
        budgets.len(),
        "precoder must have one row per LED"
    );
    let mut violations = Vec::new();
    let ratios = DVector::from_iterator(
        w.nrows(),
        w.row_iter().enumerate().map(|(n, r)| {
            let usage = r.abs().sum();
            if usage > budgets[n] * (1.0 + AUDIT_TOLERANCE) {
                violations.push(RowViolation {
                    row: n,
                    usage,
                    budget: budgets[n],
                });
            }
            usage / budgets[n]
        }),
    );
    Audit { ratios, violations }
}
