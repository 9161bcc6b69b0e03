//! Spectral solver for the mollified stochastic Burgers equation on a
//! periodic domain:
//!
//!   ∂_t v = ν Δv − b ∇(v_δ²) + ∇ξ,
//!
//! where v_δ = v * i_δ is the top-hat mollified field and ξ is space-time
//! white noise scaled so the stationary spectrum is E|v̂_k|² = σ²/L.
//! Integration is exponential Euler with the Ornstein–Uhlenbeck part exact
//! per mode; the zero mode is conserved exactly.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::harness::seed::SeedStream;

/// Parameters of an SBE run.
#[derive(Clone, Copy, Debug)]
pub struct SbeParams {
    /// Domain length.
    pub l: f64,
    /// Highest resolved mode; wavenumbers q_k = 2πk/L for |k| ≤ K.
    pub k_max: usize,
    /// Viscosity ν.
    pub nu: f64,
    /// Nonlinearity coefficient b.
    pub b: f64,
    /// Single-site variance σ² of the matching lattice model; sets the
    /// stationary spectrum σ²/L.
    pub sigma_sq: f64,
    /// Mollification scale of the nonlinearity.
    pub delta: f64,
    /// Time step.
    pub dt: f64,
}

impl SbeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.nu > 0.0 && self.sigma_sq > 0.0 && self.dt > 0.0) {
            return Err(Error::usage("sbe parameters must be positive"));
        }
        if self.k_max < 2 {
            return Err(Error::usage("sbe needs at least two modes"));
        }
        if self.delta < self.l / (2.0 * self.k_max as f64) {
            return Err(Error::usage(format!(
                "mollifier width {} below the resolved scale L/(2K) = {}",
                self.delta,
                self.l / (2.0 * self.k_max as f64)
            )));
        }
        Ok(())
    }

    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.l
    }
}

/// Fourier coefficients v̂_k for 0 ≤ k ≤ K of a real field
/// v(x) = Σ_{|k|≤K} v̂_k e^{i q_k x}, with v̂_{−k} = conj(v̂_k) implicit.
#[derive(Clone, Debug)]
pub struct SpectralState {
    pub modes: Vec<Complex<f64>>,
    pub time: f64,
}

impl SpectralState {
    pub fn zero(params: &SbeParams) -> Self {
        SpectralState {
            modes: vec![Complex::new(0.0, 0.0); params.k_max + 1],
            time: 0.0,
        }
    }

    /// Point evaluation by direct mode summation.
    pub fn eval(&self, params: &SbeParams, x: f64) -> f64 {
        let mut s = self.modes[0].re;
        for k in 1..self.modes.len() {
            let q = params.wavenumber(k);
            let e = Complex::new(0.0, q * x).exp();
            s += 2.0 * (self.modes[k] * e).re;
        }
        s
    }

    /// Top-hat mollified field (v * i_δ)(x) with i_δ = δ^{-1} 1_{[0,δ)}.
    pub fn eval_mollified(&self, params: &SbeParams, x: f64) -> f64 {
        let mut s = self.modes[0].re;
        for k in 1..self.modes.len() {
            let q = params.wavenumber(k);
            let m = tophat_multiplier(q, params.delta);
            let e = Complex::new(0.0, q * x).exp();
            s += 2.0 * (self.modes[k] * m * e).re;
        }
        s
    }

    /// L Σ_{|k|≤K} |v̂_k|² = ∫ v² dx (Parseval).
    pub fn energy(&self, params: &SbeParams) -> f64 {
        let mut s = self.modes[0].norm_sqr();
        for m in &self.modes[1..] {
            s += 2.0 * m.norm_sqr();
        }
        params.l * s
    }
}

/// Fourier multiplier of the one-sided top-hat δ^{-1}1_{[0,δ)}:
/// (e^{iqδ} − 1)/(iqδ), matching the lattice block-average convention.
pub fn tophat_multiplier(q: f64, delta: f64) -> Complex<f64> {
    let s = q * delta;
    if s.abs() < 1e-12 {
        return Complex::new(1.0, 0.0);
    }
    (Complex::new(0.0, s).exp() - 1.0) / Complex::new(0.0, s)
}

/// Stationary white-noise initial condition: independent complex Gaussian
/// modes with E|v̂_k|² = σ²/L; the mean (zero mode) is set to `mean`.
pub fn sample_white_initial(params: &SbeParams, mean: f64, rng: &mut SeedStream) -> SpectralState {
    let var = params.sigma_sq / params.l;
    let half = (0.5 * var).sqrt();
    let mut modes = Vec::with_capacity(params.k_max + 1);
    modes.push(Complex::new(mean, 0.0));
    for _ in 1..=params.k_max {
        modes.push(Complex::new(half * rng.normal(), half * rng.normal()));
    }
    SpectralState { modes, time: 0.0 }
}

/// Workspace holding FFT plans and padded buffers for the quadratic term.
pub struct SbeSolver {
    pub params: SbeParams,
    m: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl SbeSolver {
    pub fn new(params: SbeParams) -> Result<Self> {
        params.validate()?;
        // Padding ≥ 3K+1 removes all aliasing from the quadratic product.
        let m = (4 * params.k_max).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        Ok(SbeSolver {
            params,
            m,
            fwd,
            inv,
            buf: vec![Complex::new(0.0, 0.0); m],
        })
    }

    /// Spectral coefficients of (v_δ)² up to mode K, alias-free.
    fn squared_mollified(&mut self, state: &SpectralState) -> Vec<Complex<f64>> {
        let p = &self.params;
        let m = self.m;
        for c in self.buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        self.buf[0] = state.modes[0];
        for k in 1..=p.k_max {
            let q = p.wavenumber(k);
            let v = state.modes[k] * tophat_multiplier(q, p.delta);
            self.buf[k] = v;
            self.buf[m - k] = v.conj();
        }
        self.inv.process(&mut self.buf);
        for c in self.buf.iter_mut() {
            *c = *c * *c;
        }
        self.fwd.process(&mut self.buf);
        let scale = 1.0 / m as f64;
        (0..=p.k_max).map(|k| self.buf[k] * scale).collect()
    }

    /// One exponential-Euler step; the linear OU part (decay and noise) is
    /// exact per mode, the zero mode is untouched. Pass a zeroed-out noise
    /// amplitude via `with_noise = false` for deterministic runs.
    pub fn step(
        &mut self,
        state: &mut SpectralState,
        rng: &mut SeedStream,
        with_noise: bool,
    ) -> Result<()> {
        let p = self.params;
        let sq = self.squared_mollified(state);
        for k in 1..=p.k_max {
            let q = p.wavenumber(k);
            let lam = p.nu * q * q;
            let decay = (-lam * p.dt).exp();
            let phi1 = (1.0 - decay) / lam;
            // −b ∇(v_δ²) in Fourier: −b · iq · (v_δ²)^_k
            let nonlin = Complex::new(0.0, -b_times_q(p.b, q)) * sq[k];
            let mut next = state.modes[k] * decay + nonlin * phi1;
            if with_noise {
                // E|ζ|² = (q²/L)(1 − e^{−2λdt})/(2λ) keeps the stationary
                // spectrum at σ²/L for b = 0.
                let var = (q * q / p.l) * (1.0 - decay * decay) / (2.0 * lam);
                let half = (0.5 * var).sqrt();
                next += Complex::new(half * rng.normal(), half * rng.normal());
            }
            if !next.re.is_finite() || !next.im.is_finite() {
                return Err(Error::numeric(format!(
                    "sbe mode {k} blew up at time {}",
                    state.time
                )));
            }
            state.modes[k] = next;
        }
        state.time += p.dt;
        Ok(())
    }
}

fn b_times_q(b: f64, q: f64) -> f64 {
    b * q
}

/// Averaged spectrum E|v̂_k|² over replicas at a fixed time, against the
/// stationary target σ²/L.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub target: f64,
    pub spectrum: Vec<f64>,
    pub spectrum_se: Vec<f64>,
    /// Max over modes of |spectrum/target − 1| in SE units.
    pub worst_z: f64,
}

pub fn stationary_spectrum_check(
    params: &SbeParams,
    t_end: f64,
    replicas: usize,
    master_seed: u64,
) -> Result<SpectrumReport> {
    use rayon::prelude::*;
    let per_rep: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut init = SeedStream::derive(master_seed, r as u64, "sbe-init");
            let mut noise = SeedStream::derive(master_seed, r as u64, "sbe-noise");
            let mut state = sample_white_initial(params, 0.0, &mut init);
            let mut solver = SbeSolver::new(*params)?;
            let steps = (t_end / params.dt).round() as usize;
            for _ in 0..steps {
                solver.step(&mut state, &mut noise, true)?;
            }
            Ok((1..=params.k_max).map(|k| state.modes[k].norm_sqr()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = replicas as f64;
    let k_max = params.k_max;
    let mut spectrum = vec![0.0; k_max];
    let mut se = vec![0.0; k_max];
    for k in 0..k_max {
        let mean = per_rep.iter().map(|v| v[k]).sum::<f64>() / nf;
        let var = per_rep.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        spectrum[k] = mean;
        se[k] = (var / nf).sqrt();
    }
    let target = params.sigma_sq / params.l;
    let worst_z = spectrum
        .iter()
        .zip(&se)
        .map(|(&m, &s)| (m - target).abs() / s.max(1e-300))
        .fold(0.0f64, f64::max);
    Ok(SpectrumReport {
        target,
        spectrum,
        spectrum_se: se,
        worst_z,
    })
}

/// Mean and standard error of probe products across replicas: given per
/// replica the probe values [u(x_0), u(x_1), …], returns the covariance of
/// column 0 with each column.
pub fn lag_covariances(probes: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if probes.len() < 2 {
        return Err(Error::usage("lag covariances need at least 2 replicas"));
    }
    let cols = probes[0].len();
    if probes.iter().any(|p| p.len() != cols) || cols == 0 {
        return Err(Error::usage("probe rows must be non-empty and equal length"));
    }
    let base: Vec<f64> = probes.iter().map(|p| p[0]).collect();
    let mut cov = Vec::with_capacity(cols);
    let mut se = Vec::with_capacity(cols);
    for j in 0..cols {
        let col: Vec<f64> = probes.iter().map(|p| p[j]).collect();
        let (c, s) = crate::fluctuation::cross_covariance(&base, &col)?;
        cov.push(c);
        se.push(s);
    }
    Ok((cov, se))
}
