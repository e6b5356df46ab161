#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splatreach_core::qp::{solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

pub struct Fuzzed {
    pub problem: QpProblem,
    pub anchor: DVector<f64>,
}

pub fn fuzz_problem(rng: &mut ChaCha8Rng) -> Fuzzed {
    let n = rng.random_range(1..=20);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = &m * m.transpose() + DMatrix::identity(n, n) * rng.random_range(0.01..1.0);
    let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let anchor = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let n_eq = rng.random_range(0..=n.saturating_sub(1).min(3));
    let a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &anchor;
    let n_in = rng.random_range(0..=2 * n);
    let a_in = DMatrix::from_fn(n_in, n, |_, _| rng.random_range(-1.0..1.0));
    let b_in = &a_in * &anchor + DVector::from_fn(n_in, |_, _| rng.random_range(0.0..0.5));
    let lb = DVector::from_fn(n, |i, _| anchor[i] - rng.random_range(0.2..1.5));
    let ub = DVector::from_fn(n, |i, _| anchor[i] + rng.random_range(0.2..1.5));
    Fuzzed {
        problem: QpProblem::new(q, c)
            .with_equalities(a_eq, b_eq)
            .with_inequalities(a_in, b_in)
            .with_bounds(lb, ub),
        anchor,
    }
}

/// Orthonormal basis of the null space of `a` by Gram-Schmidt.
pub fn null_space(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..a.nrows() {
        let mut v = a.row(i).transpose();
        for b in &rows {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-10 {
            rows.push(v.normalize());
        }
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for b in rows.iter().chain(cols.iter()) {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-8 {
            cols.push(v.normalize());
        }
    }
    DMatrix::from_columns(&cols)
}

/// Checks KKT residuals, multiplier signs and that no feasible sample
/// beats the solution. Returns the worst residual.
pub fn check_fuzzed(f: &Fuzzed, rng: &mut ChaCha8Rng, samples: usize) -> Result<f64, String> {
    let p = &f.problem;
    let sol = solve_qp(p, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    if sol.status != QpStatus::Optimal {
        return Err(format!("status {:?}", sol.status));
    }
    let residual = sol.primal_residual.max(sol.dual_residual);
    if residual > DEFAULT_TOL {
        return Err(format!("residual {residual}"));
    }
    let multipliers = [&sol.ineq_multipliers, &sol.lower_multipliers, &sol.upper_multipliers];
    if multipliers.iter().any(|m| m.iter().any(|&l| l < 0.0)) {
        return Err("negative multiplier".into());
    }
    let basis = null_space(&p.a_eq, p.dim());
    let best = p.objective(&sol.x);
    let mut accepted = 0;
    for _ in 0..samples {
        let y = DVector::from_fn(basis.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let scale = rng.random_range(0.0..1.0f64).powi(2);
        let x = &f.anchor + &basis * y * scale;
        if p.primal_residual(&x) > 1e-12 {
            continue;
        }
        accepted += 1;
        if p.objective(&x) < best - 1e-9 {
            return Err(format!("sample beats solution by {}", best - p.objective(&x)));
        }
    }
    if accepted == 0 {
        return Err("no feasible samples".into());
    }
    Ok(residual)
}
