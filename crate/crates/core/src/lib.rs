//! Linear precoding for the downlink of a multi-LED indoor visible light
//! communication (VLC) system.
//!
//! The crate covers the whole pipeline from a physical room description to a
//! precoding matrix:
//!
//! - [`scenario`]: room geometry, LED and photodetector parameters, power levels.
//! - [`channel`]: line-of-sight Lambertian channel matrix and receiver noise.
//! - [`zf`]: zero-forcing precoder with the max-min optimal symbol gains.
//! - [`olp`]: the optimal max-min SINR linear precoder, found by bisection over
//!   second-order cone feasibility problems.
//! - [`conic`]: the small dense interior-point cone solver used by [`olp`].
//! - [`metrics`]: SINR, rate per UE and amplitude-budget audits.
//! - [`sweep`]: the power sweep driving the `vlc-precode` binary.
//!
//! Transmitted signals are real and intensity-modulated around a DC offset, so
//! each LED carries an L1 amplitude budget `sum_k |w[n][k]| <= min(p_n, p_max - p_n)`
//! instead of the usual RF sum-power constraint.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod conic;
pub mod metrics;
pub mod olp;
pub mod scenario;
pub mod sweep;
pub mod zf;

pub use channel::{build_channel, ChannelState};
pub use olp::{optimal_precoder, BisectionReport, OlpSettings};
pub use scenario::{parse_scenario, Scenario};
pub use zf::{zf_precoder, ZfDesign};
