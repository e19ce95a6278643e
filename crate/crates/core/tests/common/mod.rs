//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use vlc_precoding::channel::ChannelState;
use vlc_precoding::scenario::parse_scenario;
use vlc_precoding::Scenario;

pub const CASE1: &str = include_str!("../../scenarios/case1.json");
pub const CASE2: &str = include_str!("../../scenarios/case2.json");

pub fn case(text: &str) -> Scenario {
    parse_scenario(text).expect("shipped scenario parses")
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn condition(h: &DMatrix<f64>) -> f64 {
    let sv = h.singular_values();
    sv.max() / sv.min()
}

/// K×M channel with entries in [0.05, 1], condition number below `max_cond`,
/// noise in [0.05, 0.5] and budgets in [0.5, 2].
pub fn random_channel(rng: &mut StdRng, k: usize, m: usize, max_cond: f64) -> ChannelState {
    loop {
        let h = DMatrix::from_fn(k, m, |_, _| rng.random_range(0.05..1.0));
        if k > 1 && condition(&h) > max_cond {
            continue;
        }
        let sigma = DVector::from_fn(k, |_, _| rng.random_range(0.05..0.5));
        let budgets = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
        return ChannelState::from_parts(h, sigma, budgets, 1e8).expect("valid random channel");
    }
}

/// Single-UE channel with a few blocked LEDs.
pub fn random_single_ue(rng: &mut StdRng) -> ChannelState {
    let m = rng.random_range(2..=6);
    let mut h = DMatrix::from_fn(1, m, |_, _| rng.random_range(0.0..1.0));
    if rng.random_range(0.0..1.0) < 0.3 {
        h[(0, rng.random_range(0..m))] = 0.0;
    }
    if h.iter().all(|&v| v == 0.0) {
        h[(0, 0)] = 0.5;
    }
    let sigma = DVector::from_element(1, rng.random_range(0.05..0.5));
    let budgets = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
    ChannelState::from_parts(h, sigma, budgets, 1e8).expect("valid single-UE channel")
}

/// Closed-form single-UE optimum: every LED at full budget with the sign of
/// its gain.
pub fn single_ue_optimum(ch: &ChannelState) -> f64 {
    let reach: f64 = ch
        .gains()
        .row(0)
        .iter()
        .zip(ch.budgets().iter())
        .map(|(h, p)| h.abs() * p)
        .sum();
    (reach / ch.sigma()[0]).powi(2)
}
