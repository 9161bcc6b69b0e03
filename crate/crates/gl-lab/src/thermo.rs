//! Thermodynamics of the tilted single-site measures
//! p_λ(u) = exp(λu − V(u)) / Z(λ): partition function, cumulants, the
//! Legendre inverse λ(ρ), the limiting Burgers coefficients, and the
//! Edgeworth expansion of standardized sums.

use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Relative tail threshold for truncating the integration window.
const TAIL_LOG: f64 = -64.0;
/// Adaptive quadrature tolerance (relative).
const QUAD_TOL: f64 = 1e-12;

fn simpson(_f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(f, a, fa, m, fm, flm);
    let right = simpson(f, m, fm, b, fb, frm);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of a smooth function on [a, b].
///
/// The interval is first split into 32 uniform panels so that narrow
/// features (the integrands here are sharply peaked densities) cannot be
/// missed by the coarse initial Simpson estimate; each panel is then
/// refined adaptively.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let g: &dyn Fn(f64) -> f64 = &f;
    let panels = 32;
    let tol = tol.max(1e-300) / panels as f64;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let pa = a + i as f64 * h;
        let pb = a + (i + 1) as f64 * h;
        let fa = g(pa);
        let fb = g(pb);
        let fm = g(0.5 * (pa + pb));
        let whole = simpson(g, pa, fa, pb, fb, fm);
        total += adaptive(g, pa, fa, pb, fb, fm, whole, tol, 42);
    }
    total
}

/// A tilted single-site measure p_λ(u) ∝ exp(λu − V(u)) with its integration
/// window [lo, hi] (chosen so the discarded tails are below e^-64 of the
/// peak) and normalization.
#[derive(Clone, Debug)]
pub struct TiltedMeasure {
    pub potential: Potential,
    pub lambda: f64,
    /// log Z(λ) = ρ(λ)
    pub log_z: f64,
    /// Location of the density maximum (solves V'(u) = λ).
    pub mode: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TiltedMeasure {
    pub fn new(potential: &Potential, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::usage(format!("non-finite tilt {lambda}")));
        }
        let mode = find_mode(potential, lambda)?;
        let log_peak = lambda * mode - potential.v0(mode);
        let cutoff = log_peak + TAIL_LOG;
        let exponent = |u: f64| lambda * u - potential.v0(u);
        let mut step = 1.0;
        let mut lo = mode - step;
        while exponent(lo) > cutoff {
            step *= 2.0;
            lo = mode - step;
            if step > 1e8 {
                return Err(Error::numeric("tilted measure has no integrable left tail"));
            }
        }
        step = 1.0;
        let mut hi = mode + step;
        while exponent(hi) > cutoff {
            step *= 2.0;
            hi = mode + step;
            if step > 1e8 {
                return Err(Error::numeric(
                    "tilted measure has no integrable right tail",
                ));
            }
        }
        // Integrate with the peak factored out for conditioning.
        let z_scaled = integrate(|u| (exponent(u) - log_peak).exp(), lo, hi, QUAD_TOL);
        if !(z_scaled.is_finite() && z_scaled > 0.0) {
            return Err(Error::numeric("partition function integration failed"));
        }
        Ok(TiltedMeasure {
            potential: potential.clone(),
            lambda,
            log_z: z_scaled.ln() + log_peak,
            mode,
            lo,
            hi,
        })
    }

    /// Normalized density p_λ(u).
    pub fn density(&self, u: f64) -> f64 {
        (self.lambda * u - self.potential.v0(u) - self.log_z).exp()
    }

    /// E_λ[f(u)] by adaptive quadrature over the truncated window.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        integrate(|u| f(u) * self.density(u), self.lo, self.hi, QUAD_TOL)
    }
}

fn find_mode(potential: &Potential, lambda: f64) -> Result<f64> {
    // V' is strictly increasing for admissible potentials; bracket the root
    // of V'(u) - λ by interval doubling, then bisect.
    let g = |u: f64| potential.v1(u) - lambda;
    let mut a = -1.0;
    let mut b = 1.0;
    let mut k = 0;
    while g(a) > 0.0 {
        a *= 2.0;
        k += 1;
        if k > 60 {
            return Err(Error::numeric("mode bracket failed on the left"));
        }
    }
    k = 0;
    while g(b) < 0.0 {
        b *= 2.0;
        k += 1;
        if k > 60 {
            return Err(Error::numeric("mode bracket failed on the right"));
        }
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if g(m) <= 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-14 * (1.0 + m.abs()) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// log Z(λ) = ρ(λ), the cumulant generating function of p₀ at λ.
pub fn log_partition(potential: &Potential, lambda: f64) -> Result<f64> {
    Ok(TiltedMeasure::new(potential, lambda)?.log_z)
}

/// Full moment profile of a tilted measure: the mean ρ'(λ), centered moments
/// m₂..m₆, and the statistics of V' and V'' under p_λ.
#[derive(Clone, Debug)]
pub struct ThermoProfile {
    pub lambda: f64,
    pub log_z: f64,
    /// ρ'(λ) = E_λ[u]
    pub mean: f64,
    /// m₂ = σ²_λ = ρ''(λ)
    pub variance: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub m6: f64,
    pub mean_v1: f64,
    pub var_v1: f64,
    pub mean_v2: f64,
}

impl ThermoProfile {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Skewness m₃/σ³.
    pub fn skewness(&self) -> f64 {
        self.m3 / self.variance.powf(1.5)
    }

    /// Excess kurtosis m₄/σ⁴ − 3.
    pub fn excess_kurtosis(&self) -> f64 {
        self.m4 / (self.variance * self.variance) - 3.0
    }
}

/// Compute the moment profile of p_λ. `k_max` centered moments are checked
/// to be requestable up to 6; the profile always carries all of m₂..m₆.
pub fn moments(potential: &Potential, lambda: f64, k_max: usize) -> Result<ThermoProfile> {
    if k_max > 6 {
        return Err(Error::usage(format!(
            "centered moments available up to order 6, requested {k_max}"
        )));
    }
    let tm = TiltedMeasure::new(potential, lambda)?;
    let mean = tm.expect(|u| u);
    let m2 = tm.expect(|u| (u - mean).powi(2));
    let m3 = tm.expect(|u| (u - mean).powi(3));
    let m4 = tm.expect(|u| (u - mean).powi(4));
    let m5 = tm.expect(|u| (u - mean).powi(5));
    let m6 = tm.expect(|u| (u - mean).powi(6));
    let mean_v1 = tm.expect(|u| tm.potential.v1(u));
    let var_v1 = tm.expect(|u| (tm.potential.v1(u) - mean_v1).powi(2));
    let mean_v2 = tm.expect(|u| tm.potential.v2(u));
    if !(m2.is_finite() && m2 > 0.0) {
        return Err(Error::numeric("tilted measure has non-positive variance"));
    }
    Ok(ThermoProfile {
        lambda,
        log_z: tm.log_z,
        mean,
        variance: m2,
        m3,
        m4,
        m5,
        m6,
        mean_v1,
        var_v1,
        mean_v2,
    })
}

/// Invert the Legendre relation: find λ with ρ'(λ) = target, i.e. h'(target).
///
/// Safeguarded Newton using ρ''(λ) = σ²_λ, with a bisection bracket as
/// fallback; converges to |ρ'(λ) − target| ≤ 1e-10.
pub fn tilt_for_mean(potential: &Potential, target: f64) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::usage(format!("non-finite target mean {target}")));
    }
    let mean_at = |lambda: f64| -> Result<(f64, f64)> {
        let tm = TiltedMeasure::new(potential, lambda)?;
        let m = tm.expect(|u| u);
        let v = tm.expect(|u| (u - m).powi(2));
        Ok((m, v))
    };
    // Bracket: ρ' is strictly increasing in λ.
    let mut a = -1.0;
    let mut b = 1.0;
    let mut k = 0;
    while mean_at(a)?.0 > target {
        a *= 2.0;
        k += 1;
        if k > 40 {
            return Err(Error::numeric("tilt bracket failed on the left"));
        }
    }
    k = 0;
    while mean_at(b)?.0 < target {
        b *= 2.0;
        k += 1;
        if k > 40 {
            return Err(Error::numeric("tilt bracket failed on the right"));
        }
    }
    let mut lambda = 0.5 * (a + b);
    for _ in 0..100 {
        let (m, v) = mean_at(lambda)?;
        let err = m - target;
        if err.abs() <= 1e-10 {
            return Ok(lambda);
        }
        if err < 0.0 {
            a = lambda;
        } else {
            b = lambda;
        }
        let newton = lambda - err / v;
        lambda = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Err(Error::numeric(format!(
        "tilt_for_mean did not reach 1e-10 for target {target}"
    )))
}

/// Coefficients of the limiting stochastic Burgers equation
/// ∂_t u = ν Δu − b ∇(u²) + ∇ξ for the model tilted at λ₀, together with the
/// moving-frame speed and the first two density derivatives of the averaged
/// current φ_{V'}(ρ).
#[derive(Clone, Copy, Debug)]
pub struct BurgersCoefficients {
    /// ν = 1 / (2 σ²)
    pub nu: f64,
    /// b = m₃ / (2 σ⁶)
    pub b: f64,
    /// ∂ρ φ_{V'} = σ⁻²
    pub d_phi: f64,
    /// ∂ρρ φ_{V'} = −m₃ / σ⁶
    pub d2_phi: f64,
}

impl BurgersCoefficients {
    /// Frame speed c_n = n^{1/2} ∂ρφ_{V'} for lattice parameter n.
    pub fn frame_speed(&self, n: usize) -> f64 {
        (n as f64).sqrt() * self.d_phi
    }
}

pub fn burgers_coefficients(profile: &ThermoProfile) -> BurgersCoefficients {
    let s2 = profile.variance;
    let s6 = s2 * s2 * s2;
    BurgersCoefficients {
        nu: 0.5 / s2,
        b: 0.5 * profile.m3 / s6,
        d_phi: 1.0 / s2,
        d2_phi: -profile.m3 / s6,
    }
}

/// Probabilists' Hermite polynomial He_k(x), k ≤ 6.
pub fn hermite(k: usize, x: f64) -> Result<f64> {
    if k > 6 {
        return Err(Error::usage(format!("hermite order {k} exceeds 6")));
    }
    let mut h0 = 1.0;
    if k == 0 {
        return Ok(h0);
    }
    let mut h1 = x;
    for j in 1..k {
        let h2 = x * h1 - j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    Ok(h1)
}

/// Second-order Edgeworth expansion of the density of the standardized sum
/// (u₁ + … + u_N − Nρ')/(√N σ) under p_λ^⊗N:
///
/// ```text
/// r_{λ,N} = r⁰ + N^{-1/2} r¹ + N^{-1} r²
/// r⁰(x)  = φ(x)                        (standard normal)
/// r¹(x)  = φ(x) (m₃ / 6σ³) He₃(x)
/// r²(x)  = φ(x) [ (m₄−3σ⁴)/(24σ⁴) He₄(x) + m₃²/(72σ⁶) He₆(x) ]
/// ```
#[derive(Clone, Debug)]
pub struct EdgeworthExpansion {
    pub profile: ThermoProfile,
    c3: f64,
    c4: f64,
    c6: f64,
}

impl EdgeworthExpansion {
    pub fn new(profile: ThermoProfile) -> Self {
        let s2 = profile.variance;
        let s3 = s2 * profile.sigma();
        let c3 = profile.m3 / (6.0 * s3);
        let c4 = (profile.m4 - 3.0 * s2 * s2) / (24.0 * s2 * s2);
        let c6 = profile.m3 * profile.m3 / (72.0 * s2 * s2 * s2);
        EdgeworthExpansion {
            profile,
            c3,
            c4,
            c6,
        }
    }

    /// Gaussian leading term r⁰.
    pub fn r0(&self, x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// Skewness correction r¹.
    pub fn r1(&self, x: f64) -> f64 {
        self.r0(x) * self.c3 * hermite(3, x).expect("order 3")
    }

    /// Kurtosis + squared-skewness correction r².
    pub fn r2(&self, x: f64) -> f64 {
        self.r0(x) * (self.c4 * hermite(4, x).expect("order 4") + self.c6 * hermite(6, x).expect("order 6"))
    }

    /// r⁰(x) + N^{-1/2} r¹(x) + N^{-1} r²(x).
    pub fn density(&self, n_sum: usize, x: f64) -> f64 {
        let nf = n_sum as f64;
        self.r0(x) + self.r1(x) / nf.sqrt() + self.r2(x) / nf
    }
}

/// Edgeworth density of the standardized N-fold sum at standardized
/// coordinate `x`, for the measure tilted at `lambda`.
pub fn edgeworth_density(potential: &Potential, lambda: f64, n_sum: usize, x: f64) -> Result<f64> {
    if n_sum == 0 {
        return Err(Error::usage("edgeworth_density requires N >= 1"));
    }
    let profile = moments(potential, lambda, 6)?;
    Ok(EdgeworthExpansion::new(profile).density(n_sum, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Shape;
    use approx::assert_relative_eq;

    fn perturbed() -> Potential {
        Potential::perturbed(1.0, 0.3, Shape::Sine)
    }

    #[test]
    fn gaussian_partition_function() {
        let p = Potential::quadratic(1.0);
        let z = log_partition(&p, 0.0).unwrap().exp();
        assert_relative_eq!(z, 2.5066282746310005, epsilon = 1e-12);
        // ρ(λ) = λ²/2 + log √(2π) for the standard quadratic potential
        let rho = log_partition(&p, 0.7).unwrap();
        assert_relative_eq!(rho, 0.245 + 2.5066282746310005f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_moments_closed_form() {
        let p = Potential::quadratic(2.0);
        let t = moments(&p, 0.5, 6).unwrap();
        // u ~ N(λ/a, 1/a)
        assert_relative_eq!(t.mean, 0.25, epsilon = 1e-10);
        assert_relative_eq!(t.variance, 0.5, epsilon = 1e-10);
        assert_relative_eq!(t.m3, 0.0, epsilon = 1e-10);
        assert_relative_eq!(t.m4, 3.0 * 0.25, epsilon = 1e-10);
        assert_relative_eq!(t.m5, 0.0, epsilon = 1e-9);
        assert_relative_eq!(t.m6, 15.0 * 0.125, epsilon = 1e-9);
        // E[V'] = λ and var(V') = E[V''] hold for every tilted measure.
        assert_relative_eq!(t.mean_v1, 0.5, epsilon = 1e-10);
        assert_relative_eq!(t.var_v1, t.mean_v2, epsilon = 1e-10);
    }

    #[test]
    fn perturbed_partition_frozen_values() {
        let p = perturbed();
        let rho = log_partition(&p, 0.5).unwrap();
        assert_relative_eq!(rho.exp(), 2.6493969824519034, epsilon = 1e-11);
        assert_relative_eq!(rho, 0.9743320603121039, epsilon = 1e-11);
    }

    #[test]
    fn perturbed_moments_frozen_values() {
        let t = moments(&perturbed(), 0.0, 6).unwrap();
        assert_relative_eq!(t.mean, -0.1804468745388233, epsilon = 1e-10);
        assert_relative_eq!(t.variance, 0.9794750678524060, epsilon = 1e-10);
        assert_relative_eq!(t.m3, 0.1749155922362101, epsilon = 1e-10);
        assert_relative_eq!(t.m4, 2.9579100619231476, epsilon = 1e-9);
    }

    #[test]
    fn tilted_identities_hold_uniformly() {
        // E_λ[V'(u)] = λ and var_λ(V') = E_λ[V''] across tilts and families.
        for p in [perturbed(), Potential::perturbed(2.0, 0.7, Shape::Tanh)] {
            for lambda in [-5.0, -1.3, 0.0, 0.8, 5.0] {
                let t = moments(&p, lambda, 2).unwrap();
                assert_relative_eq!(t.mean_v1, lambda, epsilon = 1e-9);
                assert_relative_eq!(t.var_v1, t.mean_v2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mean_is_monotone_in_tilt() {
        let p = perturbed();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..21 {
            let lambda = -5.0 + 0.5 * i as f64;
            let m = moments(&p, lambda, 2).unwrap().mean;
            assert!(m > prev, "mean not increasing at λ={lambda}");
            prev = m;
        }
    }

    #[test]
    fn tilt_for_mean_frozen_value_and_round_trip() {
        let p = perturbed();
        let lambda = tilt_for_mean(&p, 0.25).unwrap();
        assert_relative_eq!(lambda, 0.4226939801515443, epsilon = 1e-9);
        let back = moments(&p, lambda, 2).unwrap().mean;
        assert!((back - 0.25).abs() <= 1e-10);
    }

    #[test]
    fn log_partition_derivative_matches_mean() {
        let p = perturbed();
        let h = 1e-5;
        let d = (log_partition(&p, 0.3 + h).unwrap() - log_partition(&p, 0.3 - h).unwrap())
            / (2.0 * h);
        let t = moments(&p, 0.3, 2).unwrap();
        assert_relative_eq!(d, t.mean, epsilon = 1e-8);
        let d2 = (log_partition(&p, 0.3 + h).unwrap() + log_partition(&p, 0.3 - h).unwrap()
            - 2.0 * log_partition(&p, 0.3).unwrap())
            / (h * h);
        assert_relative_eq!(d2, t.variance, epsilon = 1e-4);
    }

    #[test]
    fn hermite_values() {
        assert_relative_eq!(hermite(0, 0.7).unwrap(), 1.0);
        assert_relative_eq!(hermite(1, 0.7).unwrap(), 0.7);
        assert_relative_eq!(hermite(3, 0.5).unwrap(), 0.5f64.powi(3) - 1.5);
        let x = 0.5;
        assert_relative_eq!(hermite(4, x).unwrap(), x.powi(4) - 6.0 * x * x + 3.0);
        assert_relative_eq!(
            hermite(6, x).unwrap(),
            x.powi(6) - 15.0 * x.powi(4) + 45.0 * x * x - 15.0
        );
        assert!(hermite(7, 0.0).is_err());
    }

    #[test]
    fn edgeworth_frozen_value() {
        let d = edgeworth_density(&perturbed(), 0.0, 16, 0.5).unwrap();
        assert_relative_eq!(d, 0.3484983962962476, epsilon = 1e-10);
    }

    #[test]
    fn edgeworth_corrections_integrate_to_zero() {
        let profile = moments(&perturbed(), 0.0, 6).unwrap();
        let e = EdgeworthExpansion::new(profile);
        let i0 = integrate(|x| e.r0(x), -12.0, 12.0, 1e-12);
        let i1 = integrate(|x| e.r1(x), -12.0, 12.0, 1e-12);
        let i2 = integrate(|x| e.r2(x), -12.0, 12.0, 1e-12);
        assert_relative_eq!(i0, 1.0, epsilon = 1e-10);
        assert!(i1.abs() < 1e-10);
        assert!(i2.abs() < 1e-10);
    }

    #[test]
    fn edgeworth_gaussian_case_is_pure_normal() {
        let d = edgeworth_density(&Potential::quadratic(1.0), 0.2, 8, 0.5).unwrap();
        let phi = (-0.125f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(d, phi, epsilon = 1e-10);
    }

    #[test]
    fn burgers_coefficients_consistency() {
        let t = moments(&perturbed(), 0.0, 4).unwrap();
        let c = burgers_coefficients(&t);
        assert_relative_eq!(c.nu, 0.5 / t.variance);
        assert_relative_eq!(c.d2_phi, -2.0 * c.b);
        assert_relative_eq!(c.frame_speed(64), 8.0 / t.variance);
        // Quadratic potential: no skewness, no nonlinearity.
        let tq = moments(&Potential::quadratic(1.0), 0.4, 4).unwrap();
        let cq = burgers_coefficients(&tq);
        assert!(cq.b.abs() < 1e-10);
        assert_relative_eq!(cq.nu, 0.5, epsilon = 1e-9);
    }
}
