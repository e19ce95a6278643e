//! Optimal max-min SINR linear precoder.
//!
//! The design problem
//!
//! ```text
//!     maximize  t
//!     s.t.      SINR_k(W) >= t          for every UE k
//!               Σ_k |w_nk| <= p̃_n       for every LED n
//! ```
//!
//! is quasi-convex: for a fixed target `t` the SINR constraints are
//! second-order cones in `w = vec(W')`,
//!
//! ```text
//!     || B_k w + σ_k e_{K+1} ||  <=  h̃_k' w / sqrt(t),
//!     B_k = [h_k' ⊗ I_K^k ; 0],    h̃_k' = h_k' (I_M ⊗ e_k'),
//! ```
//!
//! and the L1 budgets become linear through `-a <= w <= a`, `U a <= p̃` with
//! `U = I_M ⊗ 1_K'`. The optimum is found by bracketing `t` geometrically and
//! then bisecting.
//!
//! Each feasibility question is answered with a margin program
//!
//! ```text
//!     maximize λ  s.t.  || B_k w + σ_k e_{K+1} || + λ <= h̃_k' w / sqrt(t),  box, budget
//! ```
//!
//! which is always strictly feasible (take `w = 0`, `λ` very negative), so the
//! cone solver never has to certify infeasibility: the target is feasible iff
//! the optimal margin is nonnegative.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::ChannelState;
use crate::conic::{self, Cone, ConicError, ConicProgram, SolveStatus, SolverSettings};
use crate::metrics::evaluate;
use crate::zf::zf_precoder;

/// Starting target of the blind bracketing search.
pub const BRACKET_START: f64 = 1e-5;
/// Upper bound on geometric growth steps while bracketing.
pub const MAX_GROWTH_STEPS: usize = 200;
/// Margin threshold, relative to `max_k σ_k`, below which a target counts as
/// infeasible.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OlpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("UE {0} has an all-zero channel row; refusing to design a precoder")]
    DegenerateUe(usize),
    #[error("initial SINR target {t:e} is already infeasible; the channel is degenerate")]
    DegenerateChannel { t: f64 },
    #[error(
        "bracketing did not find an infeasible target after {steps} growth steps (last t = {t:e})"
    )]
    BracketOverflow { steps: usize, t: f64 },
    #[error("cone solver failed at t = {t:e} ({status:?})")]
    Solver { t: f64, status: SolveStatus },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Stacks `W` (M×K) into `vec(W')`: entry `n K + k` is `W[n][k]`.
pub fn stack_precoder(w: &DMatrix<f64>) -> DVector<f64> {
    let (m, k) = w.shape();
    DVector::from_iterator(m * k, (0..m).flat_map(|n| (0..k).map(move |j| w[(n, j)])))
}

/// Inverse of [`stack_precoder`].
pub fn unstack_precoder(w: &DVector<f64>, leds: usize, users: usize) -> DMatrix<f64> {
    assert_eq!(w.len(), leds * users);
    DMatrix::from_row_slice(leds, users, w.as_slice())
}

/// The max-min problem written over `w = vec(W')`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedProblem {
    leds: usize,
    users: usize,
    selectors: Vec<DVector<f64>>,
    interference: Vec<DMatrix<f64>>,
    noise: Vec<DVector<f64>>,
    budget_map: DMatrix<f64>,
    budgets: DVector<f64>,
    sigma: DVector<f64>,
}

impl VectorizedProblem {
    pub fn leds(&self) -> usize {
        self.leds
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// `h̃_k`, with `h̃_k' w = h_k' w_k`.
    pub fn selector(&self, k: usize) -> &DVector<f64> {
        &self.selectors[k]
    }

    /// `B_k`, (K+1)×MK. Row k and the last row are zero.
    pub fn interference_map(&self, k: usize) -> &DMatrix<f64> {
        &self.interference[k]
    }

    /// `(0, ..., 0, σ_k)`, length K+1.
    pub fn noise_embedding(&self, k: usize) -> &DVector<f64> {
        &self.noise[k]
    }

    /// `U = I_M ⊗ 1_K'`.
    pub fn budget_map(&self) -> &DMatrix<f64> {
        &self.budget_map
    }

    pub fn budgets(&self) -> &DVector<f64> {
        &self.budgets
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// SINRs of a stacked precoder, evaluated through the vectorized maps.
    pub fn sinr(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.users,
            (0..self.users).map(|k| {
                let useful = self.selectors[k].dot(w).powi(2);
                let leak = (&self.interference[k] * w + &self.noise[k]).norm_squared();
                useful / leak
            }),
        )
    }
}

/// Builds the Kronecker-structured maps from the channel state.
pub fn vectorize(ch: &ChannelState) -> VectorizedProblem {
    let h = ch.gains();
    let (users, leds) = h.shape();
    let eye_m = DMatrix::<f64>::identity(leds, leds);

    let mut selectors = Vec::with_capacity(users);
    let mut interference = Vec::with_capacity(users);
    let mut noise = Vec::with_capacity(users);
    for k in 0..users {
        let h_row = h.rows(k, 1).into_owned();

        let mut masked = DMatrix::<f64>::identity(users, users);
        masked[(k, k)] = 0.0;
        let leak = h_row.kronecker(&masked);
        let mut b = DMatrix::zeros(users + 1, leds * users);
        b.rows_mut(0, users).copy_from(&leak);
        interference.push(b);

        let mut e_k = DMatrix::<f64>::zeros(1, users);
        e_k[(0, k)] = 1.0;
        let pick = eye_m.kronecker(&e_k);
        selectors.push((h_row * pick).transpose().column(0).into_owned());

        let mut s = DVector::zeros(users + 1);
        s[users] = ch.sigma()[k];
        noise.push(s);
    }

    VectorizedProblem {
        leds,
        users,
        selectors,
        interference,
        noise,
        budget_map: eye_m.kronecker(&DMatrix::<f64>::from_element(1, users, 1.0)),
        budgets: ch.budgets().clone(),
        sigma: ch.sigma().clone(),
    }
}

/// Cone program for the margin at a fixed target, in normalized units.
///
/// Variables are `x = (w / w_scale, a / w_scale, λ / margin_scale)` with
/// `w_scale = max p̃` and `margin_scale = max σ`, so the data is O(1) whatever
/// the physical units. Layout: one orthant block with the `2MK` box rows and
/// `M` budget rows, then K second-order blocks of dimension K+2.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginProgram {
    program: ConicProgram,
    target: f64,
    w_scale: f64,
    margin_scale: f64,
    stacked_len: usize,
}

impl MarginProgram {
    pub fn program(&self) -> &ConicProgram {
        &self.program
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Stacked precoder `w` (physical units) from a solver point.
    pub fn precoder_of(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.stacked_len) * self.w_scale
    }

    /// Margin `λ` (physical units) from a solver point.
    pub fn margin_of(&self, x: &DVector<f64>) -> f64 {
        x[x.len() - 1] * self.margin_scale
    }

    /// Solver point for a given precoder and margin, with `a = |w|`.
    pub fn point(&self, w: &DVector<f64>, margin: f64) -> DVector<f64> {
        let n = self.stacked_len;
        let mut x = DVector::zeros(2 * n + 1);
        for i in 0..n {
            x[i] = w[i] / self.w_scale;
            x[n + i] = w[i].abs() / self.w_scale;
        }
        x[2 * n] = margin / self.margin_scale;
        x
    }
}

pub fn margin_program(vp: &VectorizedProblem, t: f64) -> Result<MarginProgram, OlpError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(OlpError::InvalidParameter(format!(
            "SINR target must be positive, got {t}"
        )));
    }
    let (m, k) = (vp.leds, vp.users);
    let mk = m * k;
    let vars = 2 * mk + 1;
    let lam = 2 * mk;
    let w_scale = vp.budgets.max();
    let margin_scale = vp.sigma.max();
    let gain = w_scale / margin_scale;
    let inv_sqrt_t = 1.0 / t.sqrt();

    let orthant_rows = 2 * mk + m;
    let rows = orthant_rows + k * (k + 2);
    let mut a = DMatrix::zeros(rows, vars);
    let mut b = DVector::zeros(rows);

    for i in 0..mk {
        // a - w >= 0
        a[(i, i)] = 1.0;
        a[(i, mk + i)] = -1.0;
        // a + w >= 0
        a[(mk + i, i)] = -1.0;
        a[(mk + i, mk + i)] = -1.0;
    }
    for n in 0..m {
        let r = 2 * mk + n;
        b[r] = vp.budgets[n] / w_scale;
        for j in 0..mk {
            a[(r, mk + j)] = vp.budget_map[(n, j)];
        }
    }

    let mut cones = vec![Cone::NonNegative(orthant_rows)];
    for u in 0..k {
        let off = orthant_rows + u * (k + 2);
        // radius: h̃'w / sqrt(t) - λ
        for j in 0..mk {
            a[(off, j)] = -inv_sqrt_t * gain * vp.selectors[u][j];
        }
        a[(off, lam)] = 1.0;
        // norm part: B_k w + σ_k e
        let bk = &vp.interference[u];
        for r in 0..=k {
            for j in 0..mk {
                a[(off + 1 + r, j)] = -gain * bk[(r, j)];
            }
            b[off + 1 + r] = vp.noise[u][r] / margin_scale;
        }
        cones.push(Cone::SecondOrder(k + 2));
    }

    let mut c = DVector::zeros(vars);
    c[lam] = -1.0;
    Ok(MarginProgram {
        program: ConicProgram::new(c, a, b, cones)?,
        target: t,
        w_scale,
        margin_scale,
        stacked_len: mk,
    })
}

/// Outcome of one feasibility question.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProbe {
    pub t: f64,
    pub feasible: bool,
    /// Optimal margin λ* (NaN when the solver stopped early).
    pub margin: f64,
    pub solver_iterations: usize,
    /// Stacked precoder reaching `t`, present when feasible.
    pub witness: Option<DVector<f64>>,
}

/// Whether SINR target `t` is reachable within the budgets.
///
/// A solver run that hits its iteration cap is conservatively reported as
/// infeasible.
pub fn is_feasible(
    vp: &VectorizedProblem,
    t: f64,
    settings: &SolverSettings,
) -> Result<FeasibilityProbe, OlpError> {
    let mp = margin_program(vp, t)?;
    let sol = conic::solve(&mp.program, settings)?;
    match sol.status {
        SolveStatus::Optimal => {
            let scaled_margin = sol.x[sol.x.len() - 1];
            let feasible = scaled_margin >= -FEASIBILITY_MARGIN;
            Ok(FeasibilityProbe {
                t,
                feasible,
                margin: mp.margin_of(&sol.x),
                solver_iterations: sol.iterations,
                witness: feasible.then(|| mp.precoder_of(&sol.x)),
            })
        }
        SolveStatus::MaxIterations => {
            log::warn!("cone solver hit its iteration cap at t = {t:e}; treating as infeasible");
            Ok(FeasibilityProbe {
                t,
                feasible: false,
                margin: f64::NAN,
                solver_iterations: sol.iterations,
                witness: None,
            })
        }
        status => Err(OlpError::Solver { t, status }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bracket,
    Bisect,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Bracket => "bracket",
            Phase::Bisect => "bisect",
        }
    }
}

/// One line of the probe trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub phase: Phase,
    pub t: f64,
    pub margin: f64,
    pub solver_iterations: usize,
    pub feasible: bool,
}

impl ProbeRecord {
    fn new(phase: Phase, p: &FeasibilityProbe) -> Self {
        let rec = Self {
            phase,
            t: p.t,
            margin: p.margin,
            solver_iterations: p.solver_iterations,
            feasible: p.feasible,
        };
        log::debug!("{}", rec.tsv());
        rec
    }

    /// `phase  t  margin  solver_iterations  feasible`, tab separated.
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:e}\t{:e}\t{}\t{}",
            self.phase.as_str(),
            self.t,
            self.margin,
            self.solver_iterations,
            if self.feasible {
                "feasible"
            } else {
                "infeasible"
            }
        )
    }
}

/// Result of the geometric bracketing search.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    /// Largest target found feasible.
    pub t1: f64,
    /// `alpha * t1`, found infeasible.
    pub t2: f64,
    /// Witness at `t1`.
    pub witness: Option<DVector<f64>>,
    /// Number of grown targets probed (the start itself excluded).
    pub growth_probes: usize,
    pub probes: Vec<ProbeRecord>,
}

/// Grows `t_upper = alpha * t_lower` from `start` until the first infeasible
/// probe. When `start_witness` is given, `start` is known feasible and not
/// probed.
pub fn bracket_search<F>(
    start: f64,
    alpha: f64,
    start_witness: Option<DVector<f64>>,
    mut probe: F,
) -> Result<Bracket, OlpError>
where
    F: FnMut(f64) -> Result<FeasibilityProbe, OlpError>,
{
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(OlpError::InvalidParameter(format!(
            "alpha must exceed 1, got {alpha}"
        )));
    }
    if !(start > 0.0 && start.is_finite()) {
        return Err(OlpError::InvalidParameter(format!(
            "start target must be positive, got {start}"
        )));
    }
    let mut probes = Vec::new();
    let mut witness = start_witness;
    if witness.is_none() {
        let p = probe(start)?;
        probes.push(ProbeRecord::new(Phase::Bracket, &p));
        if !p.feasible {
            return Err(OlpError::DegenerateChannel { t: start });
        }
        witness = p.witness;
    }
    let mut lower = start;
    for step in 1..=MAX_GROWTH_STEPS {
        let upper = alpha * lower;
        let p = probe(upper)?;
        probes.push(ProbeRecord::new(Phase::Bracket, &p));
        if p.feasible {
            lower = upper;
            witness = p.witness;
        } else {
            return Ok(Bracket {
                t1: lower,
                t2: upper,
                witness,
                growth_probes: step,
                probes,
            });
        }
    }
    Err(OlpError::BracketOverflow {
        steps: MAX_GROWTH_STEPS,
        t: lower,
    })
}

/// Result of the bisection phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    pub t1: f64,
    pub t2: f64,
    pub iterations: usize,
    /// `(t1, t2)` before the first and after every halving.
    pub history: Vec<(f64, f64)>,
    /// Last feasible stacked precoder.
    pub witness: DVector<f64>,
    pub probes: Vec<ProbeRecord>,
}

/// Halves `[t1, t2]` until its width is at most `eps`. `t1` must be feasible
/// and `t2` infeasible. If no midpoint turns out feasible and no witness at
/// `t1` was supplied, `t1` is solved once more to recover one.
pub fn bisect_search<F>(
    t1: f64,
    t2: f64,
    eps: f64,
    witness: Option<DVector<f64>>,
    mut probe: F,
) -> Result<Bisection, OlpError>
where
    F: FnMut(f64) -> Result<FeasibilityProbe, OlpError>,
{
    if !(eps > 0.0) {
        return Err(OlpError::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if !(t1 > 0.0 && t2 > t1) {
        return Err(OlpError::InvalidParameter(format!(
            "need 0 < t1 < t2, got ({t1}, {t2})"
        )));
    }
    let (mut lo, mut hi) = (t1, t2);
    let mut witness = witness;
    let mut history = vec![(lo, hi)];
    let mut probes = Vec::new();
    let mut iterations = 0;
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        let p = probe(mid)?;
        probes.push(ProbeRecord::new(Phase::Bisect, &p));
        if p.feasible {
            lo = mid;
            witness = p.witness;
        } else {
            hi = mid;
        }
        iterations += 1;
        history.push((lo, hi));
    }
    let witness = match witness {
        Some(w) => w,
        None => {
            let p = probe(lo)?;
            probes.push(ProbeRecord::new(Phase::Bisect, &p));
            match p.witness {
                Some(w) if p.feasible => w,
                _ => return Err(OlpError::DegenerateChannel { t: lo }),
            }
        }
    };
    Ok(Bisection {
        t1: lo,
        t2: hi,
        iterations,
        history,
        witness,
        probes,
    })
}

/// Blind bracketing from [`BRACKET_START`] on the real feasibility oracle.
pub fn bracket(
    vp: &VectorizedProblem,
    settings: &SolverSettings,
    alpha: f64,
) -> Result<Bracket, OlpError> {
    bracket_search(BRACKET_START, alpha, None, |t| is_feasible(vp, t, settings))
}

/// Bisection on the real feasibility oracle.
pub fn bisect(
    vp: &VectorizedProblem,
    t1: f64,
    t2: f64,
    eps: f64,
    settings: &SolverSettings,
) -> Result<Bisection, OlpError> {
    bisect_search(t1, t2, eps, None, |t| is_feasible(vp, t, settings))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlpSettings {
    /// Bracket growth factor.
    pub alpha: f64,
    /// Bisection tolerance as a fraction of the bracket's lower end.
    pub relative_epsilon: f64,
    /// Start the bracket blindly at [`BRACKET_START`] instead of from the
    /// zero-forcing design.
    pub fidelity: bool,
    pub solver: SolverSettings,
}

impl Default for OlpSettings {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            relative_epsilon: 1e-3,
            fidelity: false,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionReport {
    /// Bracket handed to the bisection.
    pub initial_bracket: (f64, f64),
    /// `(t1, t2)` after every bisection step, starting with the initial bracket.
    pub bracket_history: Vec<(f64, f64)>,
    pub iterations: usize,
    pub t1: f64,
    pub t2: f64,
    pub epsilon: f64,
    /// Last feasible stacked precoder.
    pub witness: DVector<f64>,
    /// M×K precoder, columns sign-normalized so that `h_k' w_k >= 0`.
    pub precoder: DMatrix<f64>,
    pub sinr: DVector<f64>,
    pub growth_probes: usize,
    /// Every cone program solved.
    pub solves: usize,
    pub probes: Vec<ProbeRecord>,
    /// Zero-forcing min-SINR used for the warm start, if any.
    pub zf_bound: Option<f64>,
}

impl BisectionReport {
    pub fn min_sinr(&self) -> f64 {
        self.sinr.min()
    }
}

/// Unstacks a witness, flips columns with `h_k' w_k < 0` and, if solver
/// round-off left any LED above budget, shrinks the whole matrix onto the
/// budget boundary.
fn extract_precoder(ch: &ChannelState, witness: &DVector<f64>) -> DMatrix<f64> {
    let (k, m) = ch.gains().shape();
    let mut w = unstack_precoder(witness, m, k);
    for j in 0..k {
        if ch.gains().row(j).dot(&w.column(j).transpose()) < 0.0 {
            w.column_mut(j).neg_mut();
        }
    }
    let worst = w
        .row_iter()
        .zip(ch.budgets().iter())
        .map(|(r, p)| r.abs().sum() / p)
        .fold(0.0, f64::max);
    if worst > 1.0 {
        w /= worst;
    }
    w
}

/// Designs the max-min SINR precoder for `ch`.
pub fn optimal_precoder(
    ch: &ChannelState,
    settings: &OlpSettings,
) -> Result<BisectionReport, OlpError> {
    if let Some(k) = (0..ch.num_users()).find(|&k| ch.gains().row(k).iter().all(|&h| h == 0.0)) {
        return Err(OlpError::DegenerateUe(k));
    }
    if !(settings.relative_epsilon > 0.0) {
        return Err(OlpError::InvalidParameter(format!(
            "relative epsilon must be positive, got {}",
            settings.relative_epsilon
        )));
    }
    let vp = vectorize(ch);
    let mut solves = 0usize;
    let mut probe = |t: f64| {
        solves += 1;
        is_feasible(&vp, t, &settings.solver)
    };

    let mut zf_bound = None;
    let mut start = (BRACKET_START, None);
    if !settings.fidelity {
        match zf_precoder(ch) {
            Ok(design) => {
                let bound = design.min_sinr();
                zf_bound = Some(bound);
                let warm = 0.99 * bound;
                if warm >= BRACKET_START {
                    start = (warm, Some(stack_precoder(&design.precoder)));
                }
            }
            Err(e) => {
                log::info!("no zero-forcing warm start ({e}); bracketing from {BRACKET_START:e}")
            }
        }
    }
    let br = bracket_search(start.0, settings.alpha, start.1, &mut probe)?;
    let epsilon = settings.relative_epsilon * br.t1;
    let bis = bisect_search(br.t1, br.t2, epsilon, br.witness, &mut probe)?;

    let precoder = extract_precoder(ch, &bis.witness);
    let sinr = evaluate(ch, &precoder).sinr;
    let spread = (sinr.max() - sinr.min()) / sinr.min();
    if spread > 0.01 {
        // Legitimate when some UE is decoupled from the binding ones.
        log::info!("max-min SINRs not balanced: spread {spread:.3e} relative to the minimum");
    }
    let mut probes = br.probes;
    probes.extend(bis.probes);
    Ok(BisectionReport {
        initial_bracket: (br.t1, br.t2),
        bracket_history: bis.history,
        iterations: bis.iterations,
        t1: bis.t1,
        t2: bis.t2,
        epsilon,
        witness: bis.witness,
        precoder,
        sinr,
        growth_probes: br.growth_probes,
        solves,
        probes,
        zf_bound,
    })
}
