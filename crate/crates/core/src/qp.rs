//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimise    1/2 x'Qx + c'x
//! subject to  A_eq x  = b_eq
//!             A_in x <= b_in
//!             lb <= x <= ub
//! ```
//!
//! with the Goldfarb-Idnani dual active-set method. The solver starts from the
//! unconstrained minimiser and adds violated constraints one at a time while
//! keeping dual feasibility, maintaining the factorisation `J = L^-T Q_r` and
//! the upper-triangular `R` with Givens rotations. Positive semidefinite `Q`
//! falls back to proximal-point outer iterations.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

const SYMMETRY_TOL: f64 = 1e-9;
const VIOLATION_REL: f64 = 1e-11;
const NULL_STEP: f64 = 1e-13;
const PROXIMAL_MAX_OUTER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with infinite bounds.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        QpProblem {
            q,
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let bad = |what: &str| Err(Error::InvalidArgument(format!("qp: {what}")));
        if self.q.nrows() != n || self.q.ncols() != n {
            return bad("Q must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality dimensions mismatch");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return bad("inequality dimensions mismatch");
        }
        if self.lb.len() != n || self.ub.len() != n {
            return bad("bound dimensions mismatch");
        }
        if (&self.q - self.q.transpose()).abs().max() > SYMMETRY_TOL * (1.0 + self.q.abs().max()) {
            return bad("Q is not symmetric");
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return bad("lower bound exceeds upper bound");
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.q)
            || !self.c.iter().all(|v| v.is_finite())
            || !finite(&self.a_eq)
            || !finite(&self.a_in)
            || !self.b_eq.iter().all(|v| v.is_finite())
            || !self.b_in.iter().all(|v| v.is_finite())
        {
            return bad("non-finite data");
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for v in (&self.a_eq * x - &self.b_eq).iter() {
            worst = worst.max(v.abs());
        }
        for v in (&self.a_in * x - &self.b_in).iter() {
            worst = worst.max(*v);
        }
        for i in 0..self.dim() {
            worst = worst.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Lagrange multipliers with `Qx + c + A_eq'nu + A_in'lambda - mu_lb + mu_ub = 0`.
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub primal_residual: f64,
    /// Infinity norm of the stationarity condition.
    pub dual_residual: f64,
    /// Number of active inequality and bound constraints.
    pub active_inequalities: usize,
}

#[derive(Clone, Copy)]
enum Source {
    Eq(usize),
    In(usize),
    Lower(usize),
    Upper(usize),
}

/// Constraints normalised to `n'x >= b`.
struct Constraints {
    normals: DMatrix<f64>,
    rhs: Vec<f64>,
    source: Vec<Source>,
    n_eq: usize,
}

impl Constraints {
    fn from_problem(p: &QpProblem) -> Self {
        let n = p.dim();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut source = Vec::new();
        for i in 0..p.a_eq.nrows() {
            cols.push(p.a_eq.row(i).transpose());
            rhs.push(p.b_eq[i]);
            source.push(Source::Eq(i));
        }
        let n_eq = cols.len();
        for i in 0..p.a_in.nrows() {
            cols.push(-p.a_in.row(i).transpose());
            rhs.push(-p.b_in[i]);
            source.push(Source::In(i));
        }
        for i in 0..n {
            if p.lb[i].is_finite() {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                cols.push(e);
                rhs.push(p.lb[i]);
                source.push(Source::Lower(i));
            }
            if p.ub[i].is_finite() {
                let mut e = DVector::zeros(n);
                e[i] = -1.0;
                cols.push(e);
                rhs.push(-p.ub[i]);
                source.push(Source::Upper(i));
            }
        }
        let normals = if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Constraints {
            normals,
            rhs,
            source,
            n_eq,
        }
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn slack(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.normals.column(i).dot(x) - self.rhs[i]
    }

    fn threshold(&self, i: usize) -> f64 {
        VIOLATION_REL * (1.0 + self.rhs[i].abs())
    }
}

struct ActiveSet {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
    index: Vec<usize>,
    u: Vec<f64>,
}

impl ActiveSet {
    fn new(j: DMatrix<f64>) -> Self {
        let n = j.nrows();
        ActiveSet {
            j,
            r: DMatrix::zeros(n, n),
            q: 0,
            index: Vec::new(),
            u: Vec::new(),
        }
    }

    /// Returns `(z, r, d)`: primal step direction, dual step and `J'n`.
    fn directions(&self, normal: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.j.nrows();
        let d = self.j.tr_mul(normal);
        let mut z = DVector::zeros(n);
        for k in self.q..n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        let mut r = DVector::zeros(self.q);
        for i in (0..self.q).rev() {
            let mut s = d[i];
            for k in i + 1..self.q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (z, r, d)
    }

    fn null_space_is_empty(&self, d: &DVector<f64>) -> bool {
        let tail: f64 = d.iter().skip(self.q).map(|v| v * v).sum();
        tail <= NULL_STEP * d.norm_squared()
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for k in 0..self.j.nrows() {
            let (x, y) = (self.j[(k, a)], self.j[(k, b)]);
            self.j[(k, a)] = c * x + s * y;
            self.j[(k, b)] = -s * x + c * y;
        }
    }

    fn add(&mut self, mut d: DVector<f64>, constraint: usize, multiplier: f64) {
        let n = self.j.nrows();
        for jj in (self.q + 1..n).rev() {
            if d[jj] == 0.0 {
                continue;
            }
            let h = d[jj - 1].hypot(d[jj]);
            let (c, s) = (d[jj - 1] / h, d[jj] / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            self.rotate_columns(jj - 1, jj, c, s);
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
        self.index.push(constraint);
        self.u.push(multiplier);
    }

    fn drop(&mut self, l: usize) {
        self.index.remove(l);
        self.u.remove(l);
        for col in l..self.q - 1 {
            for row in 0..self.q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.q {
            self.r[(row, self.q - 1)] = 0.0;
        }
        for jj in l..self.q - 1 {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for k in jj..self.q - 1 {
                let (x, y) = (self.r[(jj, k)], self.r[(jj + 1, k)]);
                self.r[(jj, k)] = c * x + s * y;
                self.r[(jj + 1, k)] = -s * x + c * y;
            }
            self.r[(jj + 1, jj)] = 0.0;
            self.rotate_columns(jj, jj + 1, c, s);
        }
        self.q -= 1;
    }
}

struct Outcome {
    x: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    active: Vec<(usize, f64)>,
}

fn goldfarb_idnani(
    l_factor: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &Constraints,
    max_iter: usize,
) -> Outcome {
    let n = c.len();
    // J = L^-T, upper triangular.
    let l_inv = l_factor
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("cholesky factor has a positive diagonal");
    let mut set = ActiveSet::new(l_inv.transpose());
    let mut x = -(&set.j * set.j.tr_mul(c));
    let mut iterations = 0;
    let finish = |x: DVector<f64>, status, iterations, set: &ActiveSet| Outcome {
        x,
        status,
        iterations,
        active: set.index.iter().copied().zip(set.u.iter().copied()).collect(),
    };

    for p in 0..cons.n_eq {
        let normal = cons.normals.column(p).into_owned();
        let (z, r, d) = set.directions(&normal);
        let slack = cons.slack(p, &x);
        if set.null_space_is_empty(&d) {
            if slack.abs() <= cons.threshold(p).max(1e3 * VIOLATION_REL * normal.norm()) {
                continue;
            }
            return finish(x, QpStatus::Infeasible, iterations, &set);
        }
        let t = -slack / z.dot(&normal);
        x.axpy(t, &z, 1.0);
        for (k, rk) in r.iter().enumerate() {
            set.u[k] -= t * rk;
        }
        set.add(d, p, t);
        iterations += 1;
    }

    let mut is_active = vec![false; cons.len()];
    for &i in &set.index {
        is_active[i] = true;
    }

    loop {
        let mut worst: Option<(usize, f64)> = None;
        for i in cons.n_eq..cons.len() {
            if is_active[i] {
                continue;
            }
            let s = cons.slack(i, &x);
            if s < -cons.threshold(i) && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, mut slack)) = worst else {
            return finish(x, QpStatus::Optimal, iterations, &set);
        };
        let normal = cons.normals.column(p).into_owned();
        let mut u_plus = 0.0;
        loop {
            if iterations >= max_iter {
                return finish(x, QpStatus::MaxIter, iterations, &set);
            }
            iterations += 1;
            let (z, r, d) = set.directions(&normal);
            let mut partial: Option<(usize, f64)> = None;
            for k in 0..set.q {
                if set.index[k] < cons.n_eq || r[k] <= 0.0 {
                    continue;
                }
                let ratio = set.u[k] / r[k];
                if partial.is_none_or(|(_, t)| ratio < t) {
                    partial = Some((k, ratio));
                }
            }
            let full = if set.null_space_is_empty(&d) {
                None
            } else {
                Some(-slack / z.dot(&normal))
            };
            match (full, partial) {
                (None, None) => return finish(x, QpStatus::Infeasible, iterations, &set),
                (None, Some((l, t))) => {
                    for (k, rk) in r.iter().enumerate() {
                        set.u[k] -= t * rk;
                    }
                    u_plus += t;
                    is_active[set.index[l]] = false;
                    set.drop(l);
                }
                (Some(t2), partial) => {
                    let t = partial.map_or(t2, |(_, t1)| t1.min(t2));
                    x.axpy(t, &z, 1.0);
                    for (k, rk) in r.iter().enumerate() {
                        set.u[k] -= t * rk;
                    }
                    u_plus += t;
                    match partial {
                        Some((l, t1)) if t1 < t2 => {
                            is_active[set.index[l]] = false;
                            set.drop(l);
                            slack = cons.slack(p, &x);
                            if slack >= 0.0 {
                                // Became feasible while dropping; treat as added-inactive.
                                break;
                            }
                        }
                        _ => {
                            set.add(d, p, u_plus);
                            is_active[p] = true;
                            break;
                        }
                    }
                }
            }
        }
    }
}

fn finalise(p: &QpProblem, cons: &Constraints, out: Outcome) -> QpSolution {
    let n = p.dim();
    let mut eq = DVector::zeros(p.a_eq.nrows());
    let mut ineq = DVector::zeros(p.a_in.nrows());
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut active_inequalities = 0;
    for &(i, u) in &out.active {
        match cons.source[i] {
            Source::Eq(k) => eq[k] = -u,
            Source::In(k) => {
                ineq[k] = u;
                active_inequalities += 1;
            }
            Source::Lower(k) => {
                lower[k] = u;
                active_inequalities += 1;
            }
            Source::Upper(k) => {
                upper[k] = u;
                active_inequalities += 1;
            }
        }
    }
    let x = out.x;
    let stationarity =
        &p.q * &x + &p.c + p.a_eq.tr_mul(&eq) + p.a_in.tr_mul(&ineq) - &lower + &upper;
    QpSolution {
        objective: p.objective(&x),
        primal_residual: p.primal_residual(&x),
        dual_residual: stationarity.amax(),
        x,
        status: out.status,
        iterations: out.iterations,
        eq_multipliers: eq,
        ineq_multipliers: ineq,
        lower_multipliers: lower,
        upper_multipliers: upper,
        active_inequalities,
    }
}

/// Solves a convex QP. Returns an error only for malformed problems;
/// infeasibility and the iteration cap are reported through the status.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("qp: tolerance must be positive".into()));
    }
    let cons = Constraints::from_problem(p);
    if let Some(chol) = p.q.clone().cholesky() {
        let out = goldfarb_idnani(&chol.l(), &p.c, &cons, max_iter);
        return Ok(finalise(p, &cons, out));
    }
    solve_proximal(p, &cons, tol, max_iter)
}

/// Proximal-point iterations for semidefinite `Q`.
fn solve_proximal(p: &QpProblem, cons: &Constraints, tol: f64, max_iter: usize) -> Result<QpSolution> {
    let n = p.dim();
    let scale = p.q.diagonal().amax().max(1.0);
    let rho = 1e-2 * scale;
    let regularised = &p.q + DMatrix::identity(n, n) * rho;
    let l = regularised
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("qp: Q is not positive semidefinite".into()))?
        .l();
    let mut x = DVector::zeros(n);
    let mut iterations = 0;
    for _ in 0..PROXIMAL_MAX_OUTER {
        let shifted = &p.c - &x * rho;
        let out = goldfarb_idnani(&l, &shifted, cons, max_iter);
        iterations += out.iterations;
        if out.status != QpStatus::Optimal {
            return Ok(finalise(p, cons, Outcome { iterations, ..out }));
        }
        let step = (&out.x - &x).amax();
        x = out.x.clone();
        let mut sol = finalise(p, cons, Outcome { iterations, ..out });
        if sol.dual_residual <= tol && step <= tol {
            return Ok(sol);
        }
        if iterations >= max_iter * PROXIMAL_MAX_OUTER {
            sol.status = QpStatus::MaxIter;
            return Ok(sol);
        }
    }
    let out = goldfarb_idnani(&l, &(&p.c - &x * rho), cons, max_iter);
    let mut sol = finalise(p, cons, Outcome { iterations, ..out });
    if sol.status == QpStatus::Optimal {
        sol.status = QpStatus::MaxIter;
    }
    Ok(sol)
}
