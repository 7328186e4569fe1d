//! Regularized Newton with backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::max_abs;
use crate::sparse::{SparseCholesky, TripletMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSettings {
    pub max_iterations: usize,
    /// Converged when `max |g_i| < tolerance * n_dofs`.
    pub tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub max_regularizations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_halvings: 30,
            max_regularizations: 30,
        }
    }
}

/// A function minimized by [`newton_minimize`].
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> Result<f64>;
    /// Value, gradient and full (both triangles) Hessian.
    fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>, TripletMatrix)>;
    /// Per-DoF scale of the regularization added on indefiniteness.
    fn regularization_scale(&self) -> Vec<f64>;
    /// DoFs held at their current values.
    fn fixed(&self) -> &[bool];
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub gradient_norm: f64,
    pub line_search_failed: bool,
    /// Largest regularization weight used.
    pub regularization: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// Removes fixed rows and columns and puts 1 on their diagonal.
pub fn apply_dirichlet(h: &mut TripletMatrix, fixed: &[bool]) {
    h.entries.retain(|&(r, c, _)| !fixed[r] && !fixed[c]);
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            h.entries.push((i, i, 1.0));
        }
    }
}

fn regularized_factor(
    h: &TripletMatrix,
    scale: &[f64],
    fixed: &[bool],
    settings: &NewtonSettings,
) -> Result<(SparseCholesky, f64)> {
    if let Ok(f) = SparseCholesky::factor(h) {
        return Ok((f, 0.0));
    }
    let diag = h.diagonal();
    let max_h = max_abs(&diag).max(1e-300);
    let max_s = scale.iter().cloned().fold(0.0_f64, f64::max);
    let floor = if max_s > 0.0 { 1e-8 * max_s } else { 1.0 };
    let scale: Vec<f64> = scale
        .iter()
        .map(|&s| if max_s > 0.0 { s.max(floor) } else { 1.0 })
        .collect();
    let mut lambda = 1e-6 * max_h / scale.iter().cloned().fold(0.0_f64, f64::max);
    for _ in 0..settings.max_regularizations {
        let mut reg = h.clone();
        for (i, s) in scale.iter().enumerate() {
            if !fixed[i] {
                reg.entries.push((i, i, lambda * s));
            }
        }
        if let Ok(f) = SparseCholesky::factor(&reg) {
            return Ok((f, lambda));
        }
        lambda *= 10.0;
    }
    Err(Error::Singular(format!(
        "Hessian stayed indefinite after {} regularizations",
        settings.max_regularizations
    )))
}

/// Minimizes `obj` starting from `q`, which is overwritten by the best
/// iterate. Fixed DoFs never move.
pub fn newton_minimize(obj: &dyn Objective, q: &mut [f64], settings: &NewtonSettings) -> Result<SolveReport> {
    let n = obj.dim();
    crate::error::check_len("newton initial state", n, q.len())?;
    let fixed = obj.fixed().to_vec();
    let scale = obj.regularization_scale();
    let tol = settings.tolerance * n.max(1) as f64;
    let mut report = SolveReport::default();

    let (mut f, mut g, mut h) = obj.evaluate(q)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { term: "objective".into() });
    }
    report.objective_trace.push(f);
    loop {
        for (gi, &fx) in g.iter_mut().zip(&fixed) {
            if fx {
                *gi = 0.0;
            }
        }
        report.gradient_norm = max_abs(&g);
        if report.gradient_norm < tol {
            report.converged = true;
            break;
        }
        if report.iterations >= settings.max_iterations {
            break;
        }
        apply_dirichlet(&mut h, &fixed);
        let (factor, lambda) = regularized_factor(&h, &scale, &fixed, settings)?;
        report.regularization = report.regularization.max(lambda);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut d = factor.solve(&neg);
        for (di, &fx) in d.iter_mut().zip(&fixed) {
            if fx {
                *di = 0.0;
            }
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            report.line_search_failed = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut trial = q.to_vec();
        for _ in 0..=settings.max_halvings {
            for i in 0..n {
                trial[i] = q[i] + alpha * d[i];
            }
            let ft = obj.value(&trial).unwrap_or(f64::INFINITY);
            if ft.is_finite() && ft <= f + settings.armijo * alpha * slope {
                accepted = Some(ft);
                break;
            }
            alpha *= settings.backtrack;
        }
        report.iterations += 1;
        match accepted {
            Some(_) => {
                q.copy_from_slice(&trial);
                let (f2, g2, h2) = obj.evaluate(q)?;
                f = f2;
                g = g2;
                h = h2;
                report.objective_trace.push(f);
            }
            None => {
                // A full step below round-off of q means q is stationary to
                // working precision.
                let qn = max_abs(q);
                if max_abs(&d) <= 1e-10 * (1.0 + qn) {
                    report.converged = true;
                } else {
                    report.line_search_failed = true;
                }
                break;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x) = sum_i c_i (x_i - a_i)^4 + (x_i - a_i)^2 / 2` with one fixed DoF.
    struct Quartic {
        a: Vec<f64>,
        fixed: Vec<bool>,
    }

    impl Objective for Quartic {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn value(&self, q: &[f64]) -> Result<f64> {
            Ok(q.iter().zip(&self.a).map(|(x, a)| (x - a).powi(4) + 0.5 * (x - a).powi(2)).sum())
        }
        fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>, TripletMatrix)> {
            let g = q.iter().zip(&self.a).map(|(x, a)| 4.0 * (x - a).powi(3) + (x - a)).collect();
            let mut h = TripletMatrix::square(q.len());
            for (i, (x, a)) in q.iter().zip(&self.a).enumerate() {
                h.push(i, i, 12.0 * (x - a).powi(2) + 1.0);
            }
            Ok((self.value(q)?, g, h))
        }
        fn regularization_scale(&self) -> Vec<f64> {
            vec![1.0; self.a.len()]
        }
        fn fixed(&self) -> &[bool] {
            &self.fixed
        }
    }

    #[test]
    fn converges_and_respects_fixed() {
        let obj = Quartic {
            a: vec![1.0, -2.0, 3.0],
            fixed: vec![false, true, false],
        };
        let mut q = vec![0.0; 3];
        let r = newton_minimize(&obj, &mut q, &NewtonSettings::default()).unwrap();
        assert!(r.converged);
        assert!((q[0] - 1.0).abs() < 1e-6 && (q[2] - 3.0).abs() < 1e-6);
        assert_eq!(q[1], 0.0);
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    /// Concave-up in x, concave-down in y near the start: needs regularization.
    struct Saddle;

    impl Objective for Saddle {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, q: &[f64]) -> Result<f64> {
            Ok(q[0] * q[0] + q[1].powi(4) - q[1] * q[1])
        }
        fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>, TripletMatrix)> {
            let mut h = TripletMatrix::square(2);
            h.push(0, 0, 2.0);
            h.push(1, 1, 12.0 * q[1] * q[1] - 2.0);
            Ok((self.value(q)?, vec![2.0 * q[0], 4.0 * q[1].powi(3) - 2.0 * q[1]], h))
        }
        fn regularization_scale(&self) -> Vec<f64> {
            vec![1.0, 1.0]
        }
        fn fixed(&self) -> &[bool] {
            &[false, false]
        }
    }

    #[test]
    fn indefinite_hessian_is_regularized() {
        let mut q = vec![0.5, 0.1];
        let r = newton_minimize(&Saddle, &mut q, &NewtonSettings::default()).unwrap();
        assert!(r.converged);
        assert!(r.regularization > 0.0);
        assert!((q[1].abs() - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn dirichlet_rows_become_identity() {
        let mut h = TripletMatrix::square(3);
        for r in 0..3 {
            for c in 0..3 {
                h.push(r, c, 1.0 + (r * 3 + c) as f64);
            }
        }
        apply_dirichlet(&mut h, &[false, true, false]);
        let d = h.to_dense();
        assert_eq!(d[(1, 1)], 1.0);
        assert_eq!(d[(1, 0)], 0.0);
        assert_eq!(d[(2, 1)], 0.0);
        assert_eq!(d[(0, 2)], 3.0);
    }
}
