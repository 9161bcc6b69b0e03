//! Single-site thermodynamics of the tilted measure μ_λ ∝ exp(−V(u) + λu):
//! moments, the λ ↔ ρ Legendre duality, and the hydrodynamic coefficients
//! (viscosity, Burgers nonlinearity, frame speed) they determine.

use gl_lab::thermo::{burgers_coefficients, moments, tilt_for_mean};
use gl_lab::{Potential, Shape};

fn main() -> gl_lab::Result<()> {
    let potential = Potential::perturbed(1.0, 0.3, Shape::Sine);

    println!("tilt λ -> mean ρ'(λ), variance σ²(λ), skewness, E[V'] (= λ):");
    for lambda in [-1.0, 0.0, 0.5, 2.0] {
        let p = moments(&potential, lambda, 6)?;
        println!(
            "  λ = {lambda:5.2}: ρ' = {:9.6}  σ² = {:.6}  skew = {:9.6}  E[V'] = {:9.6}",
            p.mean,
            p.variance,
            p.skewness(),
            p.mean_v1
        );
        assert!((p.mean_v1 - lambda).abs() < 1e-8, "tilt identity E_λ[V'] = λ");
    }

    // Legendre round trip: λ -> ρ'(λ) -> λ(ρ) recovers the tilt.
    let lambda = 0.7;
    let rho = moments(&potential, lambda, 2)?.mean;
    let back = tilt_for_mean(&potential, rho)?;
    println!("\nLegendre round trip: λ = {lambda} -> ρ = {rho:.6} -> λ = {back:.12}");
    assert!((back - lambda).abs() < 1e-9);

    // Coefficients of the limiting stochastic Burgers equation
    // ∂_t v = ν Δv − b ∇v² + ∇ξ at the reference tilt λ₀ = 0.
    let p0 = moments(&potential, 0.0, 6)?;
    let coeff = burgers_coefficients(&p0);
    println!(
        "\nat λ₀ = 0:  ν = 1/(2σ²) = {:.6}   b = m₃/(2σ⁶) = {:.6}",
        coeff.nu, coeff.b
    );
    println!(
        "frame speed c_n = √n/σ²:  n=64 -> {:.6},  n=1024 -> {:.6}",
        coeff.frame_speed(64),
        coeff.frame_speed(1024)
    );

    // The quadratic potential has zero third moment: no nonlinearity.
    let q = moments(&Potential::quadratic(1.0), 0.0, 6)?;
    let cq = burgers_coefficients(&q);
    println!("quadratic potential: b = {:.3e} (vanishes exactly)", cq.b);
    assert!(cq.b.abs() < 1e-12);
    Ok(())
}
