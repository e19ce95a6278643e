//! Small dense cone programs with nonnegative-orthant and second-order-cone
//! constraints.
//!
//! The standard form is
//!
//! ```text
//!     minimize    c'x
//!     subject to  s = b - A x,   s ∈ K = K_1 × ... × K_p
//! ```
//!
//! and the dual is `maximize -b'z  s.t.  A'z + c = 0,  z ∈ K`. For a
//! second-order block of dimension `d + 1` the first slack entry is the radius
//! and the remaining `d` entries the norm part: `s_0 >= ||s_1..d||`.
//!
//! The solver is an infeasible-start primal-dual path-following method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step. The scaled
//! Newton system is reduced to the normal equations `A' W^-2 A` and factored
//! densely, which is fine for the few hundred variables this crate produces.
//!
//! There is no homogeneous self-dual embedding, hence no infeasibility
//! certificates. Callers must pose programs that are primal and dual strictly
//! feasible; anything else ends in `MaxIterations` or `NumericalFailure`.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("invalid cone program: {0}")]
    InvalidProgram(String),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

/// One block of the product cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    NonNegative(usize),
    /// Second-order cone of the given total dimension (radius included).
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNegative(d) | Cone::SecondOrder(d) => d,
        }
    }

    fn degree(&self) -> usize {
        match *self {
            Cone::NonNegative(d) => d,
            Cone::SecondOrder(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    cones: Vec<Cone>,
}

impl ConicProgram {
    /// Validates dimensions. Rows of `a` that are identically zero are only
    /// accepted inside second-order blocks (constant entries of the norm part);
    /// every block must involve at least one variable.
    pub fn new(
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let (rows, cols) = a.shape();
        if c.len() != cols {
            return Err(ConicError::InvalidProgram(format!(
                "objective has {} entries, constraint map has {cols} columns",
                c.len()
            )));
        }
        if b.len() != rows {
            return Err(ConicError::InvalidProgram(format!(
                "offset has {} entries, constraint map has {rows} rows",
                b.len()
            )));
        }
        let total: usize = cones.iter().map(Cone::dim).sum();
        if total != rows {
            return Err(ConicError::InvalidProgram(format!(
                "cone dimensions sum to {total}, expected {rows}"
            )));
        }
        if c.iter()
            .chain(b.iter())
            .chain(a.iter())
            .any(|v| !v.is_finite())
        {
            return Err(ConicError::InvalidProgram("non-finite data".into()));
        }
        let zero_row = |r: usize| a.row(r).iter().all(|&v| v == 0.0);
        let mut offset = 0;
        for (i, cone) in cones.iter().enumerate() {
            let d = cone.dim();
            match cone {
                Cone::NonNegative(0) => {
                    return Err(ConicError::InvalidProgram(format!("block {i} is empty")))
                }
                Cone::SecondOrder(d) if *d < 2 => {
                    return Err(ConicError::InvalidProgram(format!(
                        "second-order block {i} has dimension {d} < 2"
                    )))
                }
                Cone::NonNegative(_) => {
                    if let Some(r) = (offset..offset + d).find(|&r| zero_row(r)) {
                        return Err(ConicError::InvalidProgram(format!(
                            "row {r} of the constraint map is zero"
                        )));
                    }
                }
                Cone::SecondOrder(_) => {
                    if (offset..offset + d).all(zero_row) {
                        return Err(ConicError::InvalidProgram(format!(
                            "second-order block {i} does not involve any variable"
                        )));
                    }
                }
            }
            offset += d;
        }
        Ok(Self { c, a, b, cones })
    }

    pub fn objective(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn constraint_map(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Writes `(c, b, cones, A)` as plain text for cross-checking with an
    /// external solver.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# minimize c'x  s.t.  b - A x in K")?;
        writeln!(out, "vars {} rows {}", self.num_vars(), self.num_rows())?;
        write!(out, "cones")?;
        for cone in &self.cones {
            match cone {
                Cone::NonNegative(d) => write!(out, " l:{d}")?,
                Cone::SecondOrder(d) => write!(out, " q:{d}")?,
            }
        }
        writeln!(out)?;
        let line = |out: &mut W, tag: &str, v: &mut dyn Iterator<Item = f64>| -> io::Result<()> {
            write!(out, "{tag}")?;
            for x in v {
                write!(out, " {x:e}")?;
            }
            writeln!(out)
        };
        line(&mut out, "c", &mut self.c.iter().copied())?;
        line(&mut out, "b", &mut self.b.iter().copied())?;
        for r in 0..self.num_rows() {
            line(&mut out, "A", &mut self.a.row(r).iter().copied())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative primal and dual residual tolerance.
    pub feas_tol: f64,
    /// Duality gap tolerance, relative to `max(1, |c'x|)`.
    pub gap_tol: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iterations: 200,
            step_fraction: 0.99,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), ConicError> {
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) {
            return Err(ConicError::InvalidSettings(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(ConicError::InvalidSettings(format!(
                "step fraction {} outside (0, 1)",
                self.step_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    /// Primal slack `s` (in the interior of the cone).
    pub s: DVector<f64>,
    /// Dual variable `z`.
    pub z: DVector<f64>,
    /// `c'x`
    pub objective: f64,
    /// `||A x + s - b|| / max(1, ||b||)`
    pub primal_residual: f64,
    /// `||A'z + c|| / max(1, ||c||)`
    pub dual_residual: f64,
    /// `s'z / max(1, |c'x|)`
    pub gap: f64,
    pub iterations: usize,
}

/// Cone membership of the slack `b - A x` for a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub slack: DVector<f64>,
    /// Per block: `max(0, -min s_i)` for orthants, `max(0, ||s_1..|| - s_0)`
    /// for second-order cones.
    pub violations: Vec<f64>,
}

impl Residuals {
    /// Euclidean norm of the per-block violations.
    pub fn primal(&self) -> f64 {
        self.violations.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

pub fn residuals(prog: &ConicProgram, x: &DVector<f64>) -> Residuals {
    let slack = &prog.b - &prog.a * x;
    let mut violations = Vec::with_capacity(prog.cones.len());
    let mut off = 0;
    for cone in &prog.cones {
        let d = cone.dim();
        let blk = &slack.as_slice()[off..off + d];
        let v = match cone {
            Cone::NonNegative(_) => blk.iter().fold(0.0f64, |acc, &s| acc.max(-s)),
            Cone::SecondOrder(_) => (norm(&blk[1..]) - blk[0]).max(0.0),
        };
        violations.push(v);
        off += d;
    }
    Residuals { slack, violations }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v_0² - ||v_1..||²`, factored for accuracy near the boundary.
fn soc_det(v: &[f64]) -> f64 {
    let r = norm(&v[1..]);
    (v[0] - r) * (v[0] + r)
}

/// Per-block Nesterov-Todd scaling `W`, symmetric, with `W z = W^-1 s`.
#[derive(Debug, Clone)]
enum Scale {
    /// `sqrt(s_i / z_i)`
    Orthant(Vec<f64>),
    /// `W = beta [[w0, w1'], [w1, I + w1 w1' / (1 + w0)]]`, `w'Jw = 1`.
    Soc { beta: f64, w: Vec<f64> },
}

struct Layout {
    blocks: Vec<(Cone, usize)>,
    degree: usize,
}

impl Layout {
    fn new(cones: &[Cone]) -> Self {
        let mut off = 0;
        let blocks = cones
            .iter()
            .map(|&c| {
                let b = (c, off);
                off += c.dim();
                b
            })
            .collect();
        Self {
            blocks,
            degree: cones.iter().map(Cone::degree).sum(),
        }
    }

    fn identity(&self, rows: usize) -> DVector<f64> {
        let mut e = DVector::zeros(rows);
        for &(cone, off) in &self.blocks {
            match cone {
                Cone::NonNegative(d) => e.rows_mut(off, d).fill(1.0),
                Cone::SecondOrder(_) => e[off] = 1.0,
            }
        }
        e
    }

    fn scaling(&self, s: &DVector<f64>, z: &DVector<f64>) -> Option<Vec<Scale>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for &(cone, off) in &self.blocks {
            let d = cone.dim();
            let sb = &s.as_slice()[off..off + d];
            let zb = &z.as_slice()[off..off + d];
            match cone {
                Cone::NonNegative(_) => {
                    if sb.iter().chain(zb).any(|&v| !(v > 0.0)) {
                        return None;
                    }
                    out.push(Scale::Orthant(
                        sb.iter().zip(zb).map(|(a, b)| (a / b).sqrt()).collect(),
                    ));
                }
                Cone::SecondOrder(_) => {
                    let (sd, zd) = (soc_det(sb), soc_det(zb));
                    if !(sd > 0.0 && zd > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (sd.sqrt(), zd.sqrt());
                    let sh: Vec<f64> = sb.iter().map(|v| v / sn).collect();
                    let zh: Vec<f64> = zb.iter().map(|v| v / zn).collect();
                    let gamma = ((1.0 + dot(&sh, &zh)) / 2.0).sqrt();
                    let mut w = Vec::with_capacity(d);
                    w.push((sh[0] + zh[0]) / (2.0 * gamma));
                    w.extend((1..d).map(|i| (sh[i] - zh[i]) / (2.0 * gamma)));
                    out.push(Scale::Soc {
                        beta: (sn / zn).sqrt(),
                        w,
                    });
                }
            }
        }
        Some(out)
    }

    /// Applies `W` (or `W^-1` when `inverse`) to `v` in place.
    fn apply(&self, scales: &[Scale], v: &mut [f64], inverse: bool) {
        for (&(cone, off), scale) in self.blocks.iter().zip(scales) {
            let blk = &mut v[off..off + cone.dim()];
            match scale {
                Scale::Orthant(d) => {
                    for (x, di) in blk.iter_mut().zip(d) {
                        if inverse {
                            *x /= di;
                        } else {
                            *x *= di;
                        }
                    }
                }
                Scale::Soc { beta, w } => {
                    let sign = if inverse { -1.0 } else { 1.0 };
                    let x0 = blk[0];
                    let wx1 = dot(&w[1..], &blk[1..]);
                    let head = w[0] * x0 + sign * wx1;
                    let coef = sign * x0 + wx1 / (1.0 + w[0]);
                    let factor = if inverse { 1.0 / beta } else { *beta };
                    blk[0] = factor * head;
                    for (xi, wi) in blk[1..].iter_mut().zip(&w[1..]) {
                        *xi = factor * (*xi + coef * wi);
                    }
                }
            }
        }
    }

    /// Jordan product `u ∘ v`.
    fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for &(cone, off) in &self.blocks {
            let d = cone.dim();
            let (ub, vb) = (&u.as_slice()[off..off + d], &v.as_slice()[off..off + d]);
            let ob = &mut out.as_mut_slice()[off..off + d];
            match cone {
                Cone::NonNegative(_) => {
                    for i in 0..d {
                        ob[i] = ub[i] * vb[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    ob[0] = dot(ub, vb);
                    for i in 1..d {
                        ob[i] = ub[0] * vb[i] + vb[0] * ub[i];
                    }
                }
            }
        }
        out
    }

    /// Solves `lambda ∘ u = r` for `u`.
    fn jordan_div(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(r.len());
        for &(cone, off) in &self.blocks {
            let d = cone.dim();
            let (lb, rb) = (
                &lambda.as_slice()[off..off + d],
                &r.as_slice()[off..off + d],
            );
            let ob = &mut out.as_mut_slice()[off..off + d];
            match cone {
                Cone::NonNegative(_) => {
                    for i in 0..d {
                        ob[i] = rb[i] / lb[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let det = soc_det(lb);
                    let u0 = (lb[0] * rb[0] - dot(&lb[1..], &rb[1..])) / det;
                    ob[0] = u0;
                    for i in 1..d {
                        ob[i] = (rb[i] - lb[i] * u0) / lb[0];
                    }
                }
            }
        }
        out
    }

    /// Largest `alpha >= 0` with `v + alpha dv` in the cone (may be infinite).
    fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for &(cone, off) in &self.blocks {
            let d = cone.dim();
            let (vb, db) = (&v.as_slice()[off..off + d], &dv.as_slice()[off..off + d]);
            let a = match cone {
                Cone::NonNegative(_) => vb
                    .iter()
                    .zip(db)
                    .filter(|(_, &dx)| dx < 0.0)
                    .map(|(&x, &dx)| -x / dx)
                    .fold(f64::INFINITY, f64::min),
                Cone::SecondOrder(_) => soc_max_step(vb, db),
            };
            alpha = alpha.min(a);
        }
        alpha
    }
}

/// Boundary crossing of `v + a d` for `v` interior to a second-order cone.
fn soc_max_step(v: &[f64], d: &[f64]) -> f64 {
    let qa = soc_det(d);
    let qb = 2.0 * (v[0] * d[0] - dot(&v[1..], &d[1..]));
    let qc = soc_det(v);
    // The radius itself must stay nonnegative.
    let radius_limit = if d[0] < 0.0 {
        -v[0] / d[0]
    } else {
        f64::INFINITY
    };
    let root = if qa.abs() <= f64::EPSILON * (qb.abs() + qc.abs()) {
        if qb < 0.0 {
            -qc / qb
        } else {
            f64::INFINITY
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            // No real root: the quadratic keeps the sign of qc > 0.
            f64::INFINITY
        } else {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            let (r1, r2) = (q / qa, if q != 0.0 { qc / q } else { f64::INFINITY });
            [r1, r2]
                .into_iter()
                .filter(|r| *r > 0.0)
                .fold(f64::INFINITY, f64::min)
        }
    };
    root.min(radius_limit)
}

struct Factored<'a> {
    layout: &'a Layout,
    a: &'a DMatrix<f64>,
    scales: Vec<Scale>,
    lambda: DVector<f64>,
    g: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Factored<'_> {
    fn w(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.layout.apply(&self.scales, out.as_mut_slice(), false);
        out
    }

    fn w_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.layout.apply(&self.scales, out.as_mut_slice(), true);
        out
    }

    /// Solves
    ///   A'dz = -rx,  A dx + ds = -rz,  lambda ∘ (W dz + W^-1 ds) = rc.
    fn newton(
        &self,
        rx: &DVector<f64>,
        rz: &DVector<f64>,
        rc: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let u = self.layout.jordan_div(&self.lambda, rc);
        let wu = self.w(&u);
        let q = rz + &wu;
        let winv_q = self.w_inv(&q);
        let rhs = -rx - self.g.tr_mul(&winv_q);
        let mut dx = self.chol.solve(&rhs);
        // One round of iterative refinement against the unfactored product.
        let resid = &rhs - self.g.tr_mul(&(&self.g * &dx));
        dx += self.chol.solve(&resid);
        let dz = self.w_inv(&(&self.g * &dx + &winv_q));
        // Equal to W(u - W dz) in exact arithmetic, but keeps the primal
        // equation exact when the scaling is badly conditioned.
        let ds = -rz - self.a * &dx;
        (dx, ds, dz)
    }
}

fn factor_normal(g: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let m = g.tr_mul(g);
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch);
    }
    let scale = m.diagonal().max().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    [1e-14, 1e-12, 1e-10]
        .into_iter()
        .find_map(|eps| Cholesky::new(&m + DMatrix::identity(n, n) * (eps * scale)))
}

/// Minimizes `c'x` subject to `b - A x ∈ K`.
pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution, ConicError> {
    settings.validate()?;
    let layout = Layout::new(&prog.cones);
    let (rows, cols) = prog.a.shape();
    let nu = layout.degree as f64;
    let e = layout.identity(rows);
    let b_scale = prog.b.norm().max(1.0);
    let c_scale = prog.c.norm().max(1.0);

    let mut x = DVector::zeros(cols);
    let mut s = e.clone();
    let mut z = e.clone();

    let finish = |status, x: DVector<f64>, s: DVector<f64>, z: DVector<f64>, it| {
        let rz = &prog.a * &x + &s - &prog.b;
        let rx = prog.a.tr_mul(&z) + &prog.c;
        let objective = prog.c.dot(&x);
        ConicSolution {
            status,
            objective,
            primal_residual: rz.norm() / b_scale,
            dual_residual: rx.norm() / c_scale,
            gap: s.dot(&z) / objective.abs().max(1.0),
            iterations: it,
            x,
            s,
            z,
        }
    };

    for it in 0..=settings.max_iterations {
        let rx = prog.a.tr_mul(&z) + &prog.c;
        let rz = &prog.a * &x + &s - &prog.b;
        let gap = s.dot(&z);
        let pres = rz.norm() / b_scale;
        let dres = rx.norm() / c_scale;
        let rel_gap = gap / prog.c.dot(&x).abs().max(1.0);
        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return Ok(finish(SolveStatus::NumericalFailure, x, s, z, it));
        }
        log::trace!("ipm it={it} pres={pres:.3e} dres={dres:.3e} gap={gap:.3e}");
        if pres <= settings.feas_tol && dres <= settings.feas_tol && rel_gap <= settings.gap_tol {
            return Ok(finish(SolveStatus::Optimal, x, s, z, it));
        }
        if it == settings.max_iterations {
            break;
        }

        let Some(scales) = layout.scaling(&s, &z) else {
            return Ok(finish(SolveStatus::NumericalFailure, x, s, z, it));
        };
        let mut lambda = z.clone();
        layout.apply(&scales, lambda.as_mut_slice(), false);
        let mut g = prog.a.clone();
        for mut col in g.column_iter_mut() {
            layout.apply(&scales, col.as_mut_slice(), true);
        }
        let Some(chol) = factor_normal(&g) else {
            return Ok(finish(SolveStatus::NumericalFailure, x, s, z, it));
        };
        let kkt = Factored {
            layout: &layout,
            a: &prog.a,
            scales,
            lambda,
            g,
            chol,
        };
        let mu = gap / nu;
        let lambda_sq = layout.jordan(&kkt.lambda, &kkt.lambda);

        // Predictor.
        let (_, ds_a, dz_a) = kkt.newton(&rx, &rz, &(-&lambda_sq));
        let alpha_a = 1f64
            .min(layout.max_step(&s, &ds_a))
            .min(layout.max_step(&z, &dz_a));
        let mu_a = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / nu;
        let sigma = (mu_a / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let cross = layout.jordan(&kkt.w_inv(&ds_a), &kkt.w(&dz_a));
        let rc = -&lambda_sq - cross + &e * (sigma * mu);
        let (dx, ds, dz) = kkt.newton(&rx, &rz, &rc);
        let reach = layout.max_step(&s, &ds).min(layout.max_step(&z, &dz));
        let alpha = (settings.step_fraction * reach).min(1.0);
        if !(alpha.is_finite() && alpha > 1e-12) {
            return Ok(finish(SolveStatus::NumericalFailure, x, s, z, it));
        }
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }
    Ok(finish(
        SolveStatus::MaxIterations,
        x,
        s,
        z,
        settings.max_iterations,
    ))
}
