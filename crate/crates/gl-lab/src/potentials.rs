//! Interaction potentials `V = φ + ψ`: a uniformly convex part plus a bounded
//! C² perturbation, with probe-grid validation of that decomposition.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the bounded perturbation in the perturbed-quadratic family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sine,
    Tanh,
}

/// User-supplied potential: a single evaluator for V and its first two
/// derivatives. Treated as opaque; admissibility is checked on a probe grid.
pub type UserEval = Arc<dyn Fn(f64, u8) -> f64 + Send + Sync>;

/// Single-site interaction potential.
///
/// Built-in families cover both regimes of interest: `Quadratic` gives exact
/// Gaussian analytics (m₃ = 0, the Burgers nonlinearity vanishes), while
/// `Perturbed` adds a bounded odd perturbation `b·s(u)` producing skewed
/// tilted measures with m₃ ≠ 0.
#[derive(Clone)]
pub enum Potential {
    /// V(u) = a u²/2
    Quadratic { a: f64 },
    /// V(u) = a u²/2 + b s(u) with s ∈ {sin, tanh}
    Perturbed { a: f64, b: f64, shape: Shape },
    /// Opaque user evaluator; `f(u, order)` for order 0, 1, 2.
    User(UserEval),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Quadratic { a } => write!(f, "Quadratic {{ a: {a} }}"),
            Potential::Perturbed { a, b, shape } => {
                write!(f, "Perturbed {{ a: {a}, b: {b}, shape: {shape:?} }}")
            }
            Potential::User(_) => write!(f, "User(..)"),
        }
    }
}

impl Potential {
    pub fn quadratic(a: f64) -> Self {
        Potential::Quadratic { a }
    }

    pub fn perturbed(a: f64, b: f64, shape: Shape) -> Self {
        Potential::Perturbed { a, b, shape }
    }

    /// V(u)
    #[inline]
    pub fn v0(&self, u: f64) -> f64 {
        match self {
            Potential::Quadratic { a } => 0.5 * a * u * u,
            Potential::Perturbed { a, b, shape } => {
                0.5 * a * u * u
                    + b * match shape {
                        Shape::Sine => u.sin(),
                        Shape::Tanh => u.tanh(),
                    }
            }
            Potential::User(f) => f(u, 0),
        }
    }

    /// V'(u)
    #[inline]
    pub fn v1(&self, u: f64) -> f64 {
        match self {
            Potential::Quadratic { a } => a * u,
            Potential::Perturbed { a, b, shape } => {
                a * u
                    + b * match shape {
                        Shape::Sine => u.cos(),
                        Shape::Tanh => {
                            let c = u.cosh();
                            1.0 / (c * c)
                        }
                    }
            }
            Potential::User(f) => f(u, 1),
        }
    }

    /// V''(u)
    #[inline]
    pub fn v2(&self, u: f64) -> f64 {
        match self {
            Potential::Quadratic { a } => *a,
            Potential::Perturbed { a, b, shape } => {
                a + b * match shape {
                    Shape::Sine => -u.sin(),
                    Shape::Tanh => {
                        let t = u.tanh();
                        let c = u.cosh();
                        -2.0 * t / (c * c)
                    }
                }
            }
            Potential::User(f) => f(u, 2),
        }
    }

    /// Checked evaluator for V, V' or V''.
    pub fn eval(&self, u: f64, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.v0(u)),
            1 => Ok(self.v1(u)),
            2 => Ok(self.v2(u)),
            _ => Err(Error::usage(format!(
                "potential derivative order {order} unsupported (expected 0, 1 or 2)"
            ))),
        }
    }

    /// Third derivative of the built-in families; exposed read-only for
    /// diagnostics. `None` for user potentials.
    pub fn v3(&self, u: f64) -> Option<f64> {
        match self {
            Potential::Quadratic { .. } => Some(0.0),
            Potential::Perturbed { b, shape, .. } => Some(
                b * match shape {
                    Shape::Sine => -u.cos(),
                    Shape::Tanh => {
                        let t = u.tanh();
                        let c = u.cosh();
                        (4.0 * t * t - 2.0 / (c * c)) / (c * c)
                    }
                },
            ),
            Potential::User(_) => None,
        }
    }

    /// Curvature of the convex part on the probe point. For the built-in
    /// families this is exact; user potentials are treated as φ = V, ψ = 0.
    fn phi_curvature(&self, u: f64) -> f64 {
        match self {
            Potential::Quadratic { a } => *a,
            Potential::Perturbed { a, .. } => *a,
            Potential::User(f) => f(u, 2),
        }
    }

    fn psi_parts(&self, u: f64) -> (f64, f64, f64) {
        match self {
            Potential::Quadratic { .. } | Potential::User(_) => (0.0, 0.0, 0.0),
            Potential::Perturbed { b, shape, .. } => match shape {
                Shape::Sine => (b * u.sin(), b * u.cos(), -b * u.sin()),
                Shape::Tanh => {
                    let t = u.tanh();
                    let c2 = u.cosh().powi(2);
                    (b * t, b / c2, -2.0 * b * t / c2)
                }
            },
        }
    }
}

/// Caps used when validating an opaque potential on a probe grid.
#[derive(Debug, Clone, Copy)]
pub struct ValidationCaps {
    /// φ'' must lie in [1/curvature_cap, curvature_cap].
    pub curvature_cap: f64,
    /// |ψ|, |ψ'|, |ψ''| must stay below this.
    pub perturbation_cap: f64,
}

impl Default for ValidationCaps {
    fn default() -> Self {
        ValidationCaps {
            curvature_cap: 1e3,
            perturbation_cap: 1e3,
        }
    }
}

/// Outcome of probing the decomposition V = φ + ψ on a finite grid.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub phi_curvature_min: f64,
    pub phi_curvature_max: f64,
    pub psi_sup: f64,
    pub psi_prime_sup: f64,
    pub psi_second_sup: f64,
    /// Reported Lipschitz constant of V' (sup |V''| over the probe).
    pub lipschitz_v_prime: f64,
    pub pass: bool,
    /// First probe point at which validation failed, with a reason.
    pub failure: Option<(f64, String)>,
}

/// Probe-based check of the admissibility assumption: convex part with
/// curvature bounded away from 0 and ∞, perturbation bounded in C².
///
/// The probe grid must be non-empty and cover at least [-20, 20].
pub fn validate_assumption_v(potential: &Potential, probe: &[f64]) -> Result<ValidationReport> {
    validate_assumption_v_with(potential, probe, ValidationCaps::default())
}

pub fn validate_assumption_v_with(
    potential: &Potential,
    probe: &[f64],
    caps: ValidationCaps,
) -> Result<ValidationReport> {
    if probe.is_empty() {
        return Err(Error::usage("probe grid is empty"));
    }
    let lo = probe.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = probe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > -20.0 || hi < 20.0 {
        return Err(Error::usage(format!(
            "probe grid [{lo}, {hi}] must cover at least [-20, 20]"
        )));
    }

    let mut report = ValidationReport {
        phi_curvature_min: f64::INFINITY,
        phi_curvature_max: f64::NEG_INFINITY,
        psi_sup: 0.0,
        psi_prime_sup: 0.0,
        psi_second_sup: 0.0,
        lipschitz_v_prime: 0.0,
        pass: true,
        failure: None,
    };

    for &u in probe {
        let curv = potential.phi_curvature(u);
        let (p0, p1, p2) = potential.psi_parts(u);
        let vals = [curv, p0, p1, p2, potential.v1(u)];
        if let Some(bad) = vals.iter().find(|x| !x.is_finite()) {
            report.pass = false;
            report.failure = Some((u, format!("non-finite derivative value {bad}")));
            return Ok(report);
        }
        report.phi_curvature_min = report.phi_curvature_min.min(curv);
        report.phi_curvature_max = report.phi_curvature_max.max(curv);
        report.psi_sup = report.psi_sup.max(p0.abs());
        report.psi_prime_sup = report.psi_prime_sup.max(p1.abs());
        report.psi_second_sup = report.psi_second_sup.max(p2.abs());
    }
    report.lipschitz_v_prime = report.phi_curvature_max + report.psi_second_sup;

    if report.phi_curvature_min <= 1.0 / caps.curvature_cap {
        report.pass = false;
        report.failure = Some((
            lo,
            format!(
                "convex-part curvature {} not bounded away from zero",
                report.phi_curvature_min
            ),
        ));
    } else if report.phi_curvature_max >= caps.curvature_cap {
        report.pass = false;
        report.failure = Some((
            hi,
            format!(
                "convex-part curvature {} exceeds cap {}",
                report.phi_curvature_max, caps.curvature_cap
            ),
        ));
    } else if report.psi_sup >= caps.perturbation_cap
        || report.psi_prime_sup >= caps.perturbation_cap
        || report.psi_second_sup >= caps.perturbation_cap
    {
        report.pass = false;
        report.failure = Some((hi, "perturbation part exceeds cap".to_string()));
    }
    Ok(report)
}

/// Default probe grid: uniform over [-25, 25].
pub fn default_probe_grid() -> Vec<f64> {
    let n = 2001;
    (0..n)
        .map(|i| -25.0 + 50.0 * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_eval_orders() {
        let p = Potential::quadratic(1.0);
        assert_relative_eq!(p.eval(2.0, 0).unwrap(), 2.0);
        assert_relative_eq!(p.eval(2.0, 1).unwrap(), 2.0);
        assert_relative_eq!(p.eval(2.0, 2).unwrap(), 1.0);
        assert!(p.eval(2.0, 3).is_err());
    }

    #[test]
    fn perturbed_eval_at_zero() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        assert_relative_eq!(p.eval(0.0, 1).unwrap(), 0.3);
    }

    #[test]
    fn quadratic_odd_first_derivative() {
        let p = Potential::quadratic(1.7);
        for u in [-3.0, -0.5, 0.25, 2.0, 9.0] {
            assert_relative_eq!(p.v1(-u), -p.v1(u));
        }
    }

    #[test]
    fn finite_difference_consistency_all_families() {
        let h = 1e-5;
        let pots = [
            Potential::quadratic(1.0),
            Potential::quadratic(0.5),
            Potential::perturbed(1.0, 0.3, Shape::Sine),
            Potential::perturbed(2.0, 0.7, Shape::Tanh),
        ];
        for p in &pots {
            let mut u = -10.0;
            while u <= 10.0 {
                let fd1 = (p.v0(u + h) - p.v0(u - h)) / (2.0 * h);
                let fd2 = (p.v1(u + h) - p.v1(u - h)) / (2.0 * h);
                let scale1 = p.v1(u).abs().max(1e-3);
                let scale2 = p.v2(u).abs().max(1e-3);
                assert!(
                    (fd1 - p.v1(u)).abs() / scale1 < 1e-6,
                    "V' mismatch at u={u}"
                );
                assert!(
                    (fd2 - p.v2(u)).abs() / scale2 < 1e-6,
                    "V'' mismatch at u={u}"
                );
                u += 0.37;
            }
        }
    }

    #[test]
    fn validation_quadratic_passes() {
        let p = Potential::quadratic(1.0);
        let r = validate_assumption_v(&p, &default_probe_grid()).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.phi_curvature_min, 1.0);
        assert_relative_eq!(r.phi_curvature_max, 1.0);
        assert_relative_eq!(r.lipschitz_v_prime, 1.0);
    }

    #[test]
    fn validation_perturbed_reports_constants() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let r = validate_assumption_v(&p, &default_probe_grid()).unwrap();
        assert!(r.pass);
        // Sup over the finite probe grid, so accuracy is limited by spacing.
        assert_relative_eq!(r.psi_second_sup, 0.3, epsilon = 1e-4);
        assert_relative_eq!(r.lipschitz_v_prime, 1.3, epsilon = 1e-4);
    }

    #[test]
    fn validation_quartic_fails() {
        let p = Potential::User(Arc::new(|u: f64, order: u8| match order {
            0 => u.powi(4),
            1 => 4.0 * u.powi(3),
            _ => 12.0 * u * u,
        }));
        let r = validate_assumption_v(&p, &default_probe_grid()).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn validation_deterministic() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let grid = default_probe_grid();
        let a = validate_assumption_v(&p, &grid).unwrap();
        let b = validate_assumption_v(&p, &grid).unwrap();
        assert_eq!(a.lipschitz_v_prime.to_bits(), b.lipschitz_v_prime.to_bits());
        assert_eq!(a.psi_sup.to_bits(), b.psi_sup.to_bits());
    }

    #[test]
    fn probe_must_cover_window() {
        let p = Potential::quadratic(1.0);
        assert!(validate_assumption_v(&p, &[0.0, 1.0]).is_err());
        assert!(validate_assumption_v(&p, &[]).is_err());
    }
}
