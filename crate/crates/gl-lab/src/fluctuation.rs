//! The rescaled fluctuation field v^n in the moving frame, its
//! symmetric/antisymmetric/martingale decomposition, Boltzmann–Gibbs
//! residuals, the quadratic corrector field, and the energy-solution
//! residual.
//!
//! All statistics work through pairings v^n_t(η) = Σ_k n^{-1/2}
//! (u(k) − ρ') η(k/n + c_n t) with smooth test functions η; the frame speed
//! is c_n = n^{1/2} σ^{-2}.

use rayon::prelude::*;

use crate::dynamics::{sample_stationary, LatticeState, Stepper};
use crate::error::{Error, Result};
use crate::harness::seed::SeedStream;
use crate::potentials::Potential;
use crate::thermo::{moments, ThermoProfile};

const SQRT_PI: f64 = 1.7724538509055160273;

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Rapidly decaying test function with closed-form derivatives and L² norms.
#[derive(Clone, Debug)]
pub enum TestFunction {
    /// exp(−(x−c)²/(2w²))
    GaussianBump { center: f64, width: f64 },
    /// H_k((x−c)/w) exp(−(x−c)²/(2w²)) with physicists' Hermite H_k, k ≤ 6.
    HermiteFunction { order: usize, center: f64, width: f64 },
}

fn hermite_phys(k: usize, y: f64) -> f64 {
    // H_0 = 1, H_1 = 2y, H_{k+1} = 2y H_k − 2k H_{k-1}
    let mut h0 = 1.0;
    if k == 0 {
        return h0;
    }
    let mut h1 = 2.0 * y;
    for j in 1..k {
        let h2 = 2.0 * y * h1 - 2.0 * j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl TestFunction {
    pub fn bump(center: f64, width: f64) -> Self {
        TestFunction::GaussianBump { center, width }
    }

    pub fn hermite_fn(order: usize, center: f64, width: f64) -> Result<Self> {
        if order > 6 {
            return Err(Error::usage("hermite test functions limited to order 6"));
        }
        Ok(TestFunction::HermiteFunction {
            order,
            center,
            width,
        })
    }

    /// η(x)
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::GaussianBump { center, width } => {
                let y = (x - center) / width;
                (-0.5 * y * y).exp()
            }
            TestFunction::HermiteFunction {
                order,
                center,
                width,
            } => {
                let y = (x - center) / width;
                hermite_phys(order, y) * (-0.5 * y * y).exp()
            }
        }
    }

    /// η'(x)
    pub fn grad(&self, x: f64) -> f64 {
        match *self {
            TestFunction::GaussianBump { center, width } => {
                let y = (x - center) / width;
                -y / width * (-0.5 * y * y).exp()
            }
            TestFunction::HermiteFunction {
                order,
                center,
                width,
            } => {
                let y = (x - center) / width;
                let h = hermite_phys(order, y);
                let hp = if order == 0 {
                    0.0
                } else {
                    2.0 * order as f64 * hermite_phys(order - 1, y)
                };
                (hp - y * h) / width * (-0.5 * y * y).exp()
            }
        }
    }

    /// η''(x)
    pub fn lap(&self, x: f64) -> f64 {
        match *self {
            TestFunction::GaussianBump { center, width } => {
                let y = (x - center) / width;
                (y * y - 1.0) / (width * width) * (-0.5 * y * y).exp()
            }
            TestFunction::HermiteFunction {
                order,
                center,
                width,
            } => {
                let y = (x - center) / width;
                let h = hermite_phys(order, y);
                let hp = if order == 0 {
                    0.0
                } else {
                    2.0 * order as f64 * hermite_phys(order - 1, y)
                };
                // H'' = 2k H' in terms of the same order: H_k'' = 4k(k-1)H_{k-2}
                let hpp = if order < 2 {
                    0.0
                } else {
                    4.0 * (order * (order - 1)) as f64 * hermite_phys(order - 2, y)
                };
                (hpp - 2.0 * y * hp + (y * y - 1.0) * h) / (width * width)
                    * (-0.5 * y * y).exp()
            }
        }
    }

    /// ∫ η² dx (closed form).
    pub fn l2_sq(&self) -> f64 {
        match *self {
            TestFunction::GaussianBump { width, .. } => width * SQRT_PI,
            TestFunction::HermiteFunction { order, width, .. } => {
                width * 2.0f64.powi(order as i32) * factorial(order) * SQRT_PI
            }
        }
    }

    /// ‖∇η‖²_{L²} (closed form).
    pub fn grad_l2_sq(&self) -> f64 {
        match *self {
            TestFunction::GaussianBump { width, .. } => 0.5 * SQRT_PI / width,
            TestFunction::HermiteFunction { order, width, .. } => {
                let k = order;
                let term = if k == 0 {
                    // H_0' − y H_0 = −y = −½H_1: ∫¼H_1²e^{-y²} = ¼·2·√π
                    0.5
                } else {
                    (k * k) as f64 * 2.0f64.powi(k as i32 - 1) * factorial(k - 1)
                        + 2.0f64.powi(k as i32 - 1) * factorial(k + 1)
                };
                term * SQRT_PI / width
            }
        }
    }

    /// Interval outside which |η| < tol (conservative closed-form bound).
    pub fn support(&self, tol: f64) -> (f64, f64) {
        let (center, width, order) = match *self {
            TestFunction::GaussianBump { center, width } => (center, width, 0),
            TestFunction::HermiteFunction {
                order,
                center,
                width,
            } => (center, width, order),
        };
        let y = (2.0 * (1.0 / tol).ln()).sqrt() + 2.0 * order as f64 + 4.0;
        (center - width * y, center + width * y)
    }

    /// Smallest K with |η(x)| ≤ K (1+|x|)^{-4} on a probe grid.
    pub fn decay_constant(&self) -> f64 {
        let (lo, hi) = self.support(1e-300);
        let mut k: f64 = 0.0;
        let steps = 4000;
        for i in 0..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            k = k.max(self.eval(x).abs() * (1.0 + x.abs()).powi(4));
        }
        k
    }
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

/// Moving-frame parameters of a scaling run.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub n: usize,
    /// c_n = n^{1/2} σ^{-2}
    pub c_n: f64,
    /// ρ'(λ₀)
    pub rho: f64,
    /// σ²_{λ₀}
    pub sigma_sq: f64,
}

impl Frame {
    pub fn new(n: usize, profile: &ThermoProfile) -> Self {
        Frame {
            n,
            c_n: (n as f64).sqrt() / profile.variance,
            rho: profile.mean,
            sigma_sq: profile.variance,
        }
    }

    /// Spatial coordinate of lattice coordinate k at macroscopic time t.
    pub fn x(&self, k: i64, t_macro: f64) -> f64 {
        k as f64 / self.n as f64 + self.c_n * t_macro
    }
}

/// v^n_t(η) = Σ_k n^{-1/2} (u(k) − ρ') η(k/n + c_n t), Kahan-compensated.
///
/// Errors if the effective support of η in the frame at time t is not
/// covered by the lattice window.
pub fn field_eval(
    state: &LatticeState,
    eta: &TestFunction,
    frame: &Frame,
    t_macro: f64,
) -> Result<f64> {
    let n_sites = state.n_sites() as i64;
    let (lo, hi) = eta.support(1e-14);
    let x_first = frame.x(state.k0, t_macro);
    let x_last = frame.x(state.k0 + n_sites - 1, t_macro);
    if lo < x_first || hi > x_last {
        return Err(Error::config(format!(
            "test-function support [{lo:.3}, {hi:.3}] exceeds lattice window [{x_first:.3}, {x_last:.3}]"
        )));
    }
    let scale = 1.0 / (frame.n as f64).sqrt();
    let mut s = 0.0;
    let mut c = 0.0;
    for (i, &u) in state.u.iter().enumerate() {
        let x = frame.x(state.k0 + i as i64, t_macro);
        let term = scale * (u - frame.rho) * eta.eval(x);
        let t = s + term;
        if s.abs() >= term.abs() {
            c += (s - t) + term;
        } else {
            c += (term - t) + s;
        }
        s = t;
    }
    Ok(s + c)
}

/// Mollified field v^n_t(i_δ(x)): the pairing of the fluctuation field with
/// the top-hat δ^{-1}1_{[x,x+δ)} in frame coordinates, which equals
/// n^{1/2}(ū^{δn} − ρ') over the block of sites covering [x, x+δ).
pub fn mollified_field(
    state: &LatticeState,
    frame: &Frame,
    delta: f64,
    x: f64,
    t_macro: f64,
) -> f64 {
    let scale = 1.0 / (frame.n as f64).sqrt() / delta;
    let mut s = 0.0;
    for (i, &u) in state.u.iter().enumerate() {
        let xi = frame.x(state.k0 + i as i64, t_macro);
        if xi >= x && xi < x + delta {
            s += (u - frame.rho) * scale;
        }
    }
    s
}

/// Exact finite-n variance of v^n_t(η) under the stationary product measure:
/// σ² n^{-1} Σ_k η(k/n + c_n t)².
pub fn field_variance_exact(
    state: &LatticeState,
    eta: &TestFunction,
    frame: &Frame,
    t_macro: f64,
) -> f64 {
    let mut s = 0.0;
    for i in 0..state.n_sites() {
        let x = frame.x(state.k0 + i as i64, t_macro);
        let e = eta.eval(x);
        s += e * e;
    }
    frame.sigma_sq * s / frame.n as f64
}

// ---------------------------------------------------------------------------
// Scaling run: trace with S/A/M split, corrector series, BG integrals
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ScalingConfig {
    pub potential: Potential,
    pub lambda0: f64,
    pub n: usize,
    /// Macroscopic horizon; microscopic horizon is n²·t_macro.
    pub t_macro: f64,
    /// Microscopic step size.
    pub dt_micro: f64,
    pub eta: TestFunction,
    /// Mollification scale of the quadratic corrector; δn rounded to ≥ 1.
    pub delta: f64,
    /// Block length for the first-order BG residual; default ⌊n√T⌋.
    pub bg_ell: Option<usize>,
    /// Record the series every this many micro steps.
    pub record_every: usize,
    pub master_seed: u64,
    pub replica: u64,
}

/// Time series of one replica: the field, its decomposition, the running
/// deterministic martingale QV, and the quadratic-corrector integral
/// computed by two algebraically identical routes.
#[derive(Clone, Debug)]
pub struct FluctuationTrace {
    pub n: usize,
    pub lambda0: f64,
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub m: Vec<f64>,
    pub qv: Vec<f64>,
    /// ∫₀ᵗ Σ_k n^{-1}[v^n(i_δ)² − σ²/δ] ∇²_nη dr via block averages.
    pub nonlin_block: Vec<f64>,
    /// Same integral via the mollified field v^n(i_δ(·)).
    pub nonlin_mollified: Vec<f64>,
    pub v0: f64,
    /// Effective δ = round(δn)/n actually used.
    pub delta_eff: f64,
}

impl FluctuationTrace {
    /// Max |v_t − v_0 − (S_t + A_t + M_t)| over the grid, relative to the
    /// scale of the decomposition.
    pub fn decomposition_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            let lhs = self.v[i] - self.v0;
            let rhs = self.s[i] + self.a[i] + self.m[i];
            // Normalize by the size of the terms entering the identity, not by
            // the residual sum itself, which can pass through zero.
            let scale = lhs
                .abs()
                .max(self.s[i].abs())
                .max(self.a[i].abs())
                .max(self.m[i].abs())
                .max(1e-12);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
        worst
    }

    /// Max relative gap between the two corrector routes.
    pub fn corrector_route_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            let (a, b) = (self.nonlin_block[i], self.nonlin_mollified[i]);
            let scale = a.abs().max(b.abs()).max(1e-12);
            worst = worst.max((a - b).abs() / scale);
        }
        worst
    }
}

/// Everything one replica produces: the trace plus the BG residual
/// integrals and the squared L² norm of the weight g_s(k) = ∇²_nη.
#[derive(Clone, Debug)]
pub struct ReplicaOutput {
    pub trace: FluctuationTrace,
    /// ∫₀ᵀ Σ_k τ_k(V'(u) − λ₀ − σ^{-2}(u(k) − ρ')) g_s(k) ds
    pub bg1: f64,
    /// Same with the second-order corrector subtracted, ℓ = δn.
    pub bg2: f64,
    /// ∫₀ᵀ Σ_k g_s(k)² ds
    pub g_norm_sq: f64,
    pub bg1_ell: usize,
    pub profile: ThermoProfile,
    /// Lattice configuration at the end of the run (for cross-model probes).
    pub final_state: LatticeState,
}

/// Run one replica of the scaling experiment: stationary start, weak
/// asymmetry α = n^{-1/2}, Euler–Maruyama in microscopic time, with all
/// fluctuation statistics accumulated in one pass.
pub fn run_scaling_replica(cfg: &ScalingConfig) -> Result<ReplicaOutput> {
    let n = cfg.n;
    let nf = n as f64;
    let profile = moments(&cfg.potential, cfg.lambda0, 4)?;
    let frame = Frame::new(n, &profile);
    let rho = profile.mean;
    let sigma_sq = profile.variance;
    let alpha = 1.0 / nf.sqrt();
    let inv_sqrt_n = 1.0 / nf.sqrt();
    let dt = cfg.dt_micro;
    let dt_macro = dt / (nf * nf);
    let steps = (cfg.t_macro / dt_macro).round() as usize;

    // Lattice window: cover the support of η over the whole frame sweep,
    // with margin, rounded up to a power of two.
    let (sup_lo, sup_hi) = cfg.eta.support(1e-16);
    let k_lo = (nf * (sup_lo - frame.c_n * cfg.t_macro)).floor() as i64 - 8;
    let k_hi = (nf * sup_hi).ceil() as i64 + 8;
    let n_sites = ((k_hi - k_lo + 1) as usize).next_power_of_two();

    let mut init = SeedStream::derive(cfg.master_seed, cfg.replica, "scaling-init");
    let mut noise = SeedStream::derive(cfg.master_seed, cfg.replica, "scaling-noise");
    let mut state = sample_stationary(&cfg.potential, n_sites, cfg.lambda0, alpha, &mut init)?;
    state.k0 = k_lo;

    let ell2 = (cfg.delta * nf).round().max(1.0) as usize;
    if ell2 >= n_sites {
        return Err(Error::usage("corrector block exceeds the lattice"));
    }
    let delta_eff = ell2 as f64 / nf;
    let ell1 = cfg.bg_ell.unwrap_or(((nf * cfg.t_macro.sqrt()).floor() as usize).max(1));
    let d2_phi = -profile.m3 / (sigma_sq * sigma_sq * sigma_sq);

    let mut eta_now: Vec<f64> = (0..n_sites)
        .map(|i| cfg.eta.eval(frame.x(k_lo + i as i64, 0.0)))
        .collect();
    let mut eta_next = vec![0.0; n_sites];
    let mut prefix = vec![0.0; n_sites + 1];

    let mut stepper = Stepper::new(n_sites);
    let (mut s_acc, mut a_acc, mut m_acc, mut qv_acc) = (0.0, 0.0, 0.0, 0.0);
    let (mut jb_acc, mut jm_acc) = (0.0, 0.0);
    let (mut bg1_acc, mut bg2_acc, mut g_acc) = (0.0, 0.0, 0.0);

    let v0 = field_eval(&state, &cfg.eta, &frame, 0.0)?;
    let mut trace = FluctuationTrace {
        n,
        lambda0: cfg.lambda0,
        times: vec![0.0],
        v: vec![v0],
        s: vec![0.0],
        a: vec![0.0],
        m: vec![0.0],
        qv: vec![0.0],
        nonlin_block: vec![0.0],
        nonlin_mollified: vec![0.0],
        v0,
        delta_eff,
    };

    let wrap = |i: usize| i % n_sites;
    for step in 0..steps {
        let t = step as f64 * dt_macro;

        // Left-point quantities on the current state.
        prefix[0] = 0.0;
        for i in 0..n_sites {
            prefix[i + 1] = prefix[i] + state.u[i];
        }
        let total = prefix[n_sites];
        let block_sum = |k: usize, ell: usize| -> f64 {
            if k + ell <= n_sites {
                prefix[k + ell] - prefix[k]
            } else {
                total - prefix[k] + prefix[k + ell - n_sites]
            }
        };
        let mut dj_block = 0.0;
        let mut dj_moll = 0.0;
        let mut dbg1 = 0.0;
        let mut dbg2 = 0.0;
        let mut dg = 0.0;
        for i in 0..n_sites {
            let g = 0.5 * nf * (eta_now[wrap(i + 1)] - eta_now[wrap(i + n_sites - 1)]);
            if g == 0.0 {
                continue;
            }
            dg += g * g;
            let u_i = state.u[i];
            let h = state.potential.v1(u_i) - cfg.lambda0 - (u_i - rho) / sigma_sq;
            // First-order BG integrand (the block length ℓ₁ enters only the
            // reported bound; the one-block average of h is h itself here).
            dbg1 += h * g;
            // Corrector over blocks of ℓ₂ = δn sites.
            let bar = block_sum(i, ell2) / ell2 as f64;
            let q_block = (bar - rho) * (bar - rho) - sigma_sq / ell2 as f64;
            dbg2 += (h - 0.5 * d2_phi * q_block) * g;
            dj_block += q_block * g;
            // Mollified route: v^n paired with i_δ = δ^{-1} 1_{[x, x+δ)}.
            let v_moll = inv_sqrt_n * (block_sum(i, ell2) - ell2 as f64 * rho) / delta_eff;
            dj_moll += (v_moll * v_moll - sigma_sq / delta_eff) / nf * g;
        }
        jb_acc += dt_macro * dj_block;
        jm_acc += dt_macro * dj_moll;
        bg1_acc += dt_macro * dbg1;
        bg2_acc += dt_macro * dbg2;
        g_acc += dt_macro * dg;

        // Advance the lattice.
        stepper.step(&mut state, dt, &mut noise)?;

        // Decomposition increments: drift terms against the pre-step V',
        // noise term against the realized ξ, frame motion assigned to A.
        let vp = &stepper.vp;
        let mut ds = 0.0;
        let mut da = 0.0;
        let mut dm = 0.0;
        let mut dqv = 0.0;
        for i in 0..n_sites {
            let e = eta_now[i];
            let e_up = eta_now[wrap(i + 1)];
            let vp_up = vp[wrap(i + 1)];
            let vp_dn = vp[wrap(i + n_sites - 1)];
            ds += e * 0.5 * (vp_up + vp_dn - 2.0 * vp[i]);
            da += e * alpha * 0.5 * (vp_up - vp_dn);
            dm += e * stepper.noise_increment(i, dt);
            let de = e_up - e;
            dqv += de * de;
        }
        s_acc += dt * inv_sqrt_n * ds;
        a_acc += dt * inv_sqrt_n * da;
        m_acc += inv_sqrt_n * dm;
        qv_acc += dt_macro * nf * dqv; // dt_macro · n⁻¹ Σ |n Δη|²

        let t_new = t + dt_macro;
        let mut dframe = 0.0;
        for i in 0..n_sites {
            eta_next[i] = cfg.eta.eval(frame.x(k_lo + i as i64, t_new));
            dframe += (state.u[i] - rho) * (eta_next[i] - eta_now[i]);
        }
        a_acc += inv_sqrt_n * dframe;
        std::mem::swap(&mut eta_now, &mut eta_next);

        if (step + 1) % cfg.record_every == 0 || step + 1 == steps {
            let v = {
                let scale = inv_sqrt_n;
                let mut acc = 0.0;
                for i in 0..n_sites {
                    acc += scale * (state.u[i] - rho) * eta_now[i];
                }
                acc
            };
            trace.times.push(t_new);
            trace.v.push(v);
            trace.s.push(s_acc);
            trace.a.push(a_acc);
            trace.m.push(m_acc);
            trace.qv.push(qv_acc);
            trace.nonlin_block.push(jb_acc);
            trace.nonlin_mollified.push(jm_acc);
        }
    }

    Ok(ReplicaOutput {
        trace,
        bg1: bg1_acc,
        bg2: bg2_acc,
        g_norm_sq: g_acc,
        bg1_ell: ell1,
        profile,
        final_state: state,
    })
}

// ---------------------------------------------------------------------------
// White-noise statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct WhiteNoiseReport {
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub target_variance: f64,
    /// variance / target
    pub ratio: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Jarque–Bera normality p-value.
    pub normality_p: f64,
}

pub fn white_noise_stats(samples: &[f64], target_variance: f64) -> Result<WhiteNoiseReport> {
    let n = samples.len();
    if n < 1000 {
        return Err(Error::usage("white-noise statistics need at least 1000 replicas"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let variance = m2 * nf / (nf - 1.0);
    let variance_se = ((m4 - m2 * m2).max(0.0) / nf).sqrt();
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let jb = nf / 6.0 * (skewness * skewness + 0.25 * excess_kurtosis * excess_kurtosis);
    Ok(WhiteNoiseReport {
        mean,
        variance,
        variance_se,
        target_variance,
        ratio: variance / target_variance,
        skewness,
        excess_kurtosis,
        normality_p: (-0.5 * jb).exp(),
    })
}

/// Sample covariance of paired field values with its standard error.
pub fn cross_covariance(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::usage("paired samples of equal length >= 2 required"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)).collect();
    let cov = prods.iter().sum::<f64>() / (n - 1.0);
    let mp = prods.iter().sum::<f64>() / n;
    let var_p = prods.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((cov, (var_p / n).sqrt()))
}

// ---------------------------------------------------------------------------
// Boltzmann–Gibbs residual aggregation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BgReport {
    pub n: usize,
    /// MC estimate of E[I²] with its standard error.
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// (ℓ/n² + T/ℓ^p)·‖g‖²·var(F) with p = 1 (first order) or 2 (second).
    pub bound: f64,
    pub ratio: f64,
    pub ell: usize,
}

fn aggregate_bg(
    cfg: &ScalingConfig,
    replicas: usize,
    second_order: bool,
) -> Result<BgReport> {
    let outs: Vec<ReplicaOutput> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.replica = r as u64;
            run_scaling_replica(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let vals: Vec<f64> = outs
        .iter()
        .map(|o| if second_order { o.bg2 } else { o.bg1 })
        .map(|x| x * x)
        .collect();
    let nf = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let first = &outs[0];
    let prof = &first.profile;
    let var_f = prof.var_v1.max({
        // F has its linear part removed; var(F) under the tilt bounds both.
        prof.var_v1
    });
    let nf2 = (cfg.n * cfg.n) as f64;
    let ell = if second_order {
        (cfg.delta * cfg.n as f64).round().max(1.0) as usize
    } else {
        first.bg1_ell
    };
    let ell_f = ell as f64;
    let t = cfg.t_macro;
    let decay = if second_order {
        ell_f / nf2 + t / (ell_f * ell_f)
    } else {
        ell_f / nf2 + t / ell_f
    };
    let bound = decay * first.g_norm_sq * var_f;
    Ok(BgReport {
        n: cfg.n,
        second_moment: mean,
        second_moment_se: se,
        bound,
        ratio: if bound > 0.0 { mean / bound } else { 0.0 },
        ell,
    })
}

/// First-order Boltzmann–Gibbs residual: E[I²] for the time-integrated,
/// g-weighted fluctuation of V'(u) − λ₀ − σ^{-2}(u − ρ').
pub fn bg1_residual(cfg: &ScalingConfig, replicas: usize) -> Result<BgReport> {
    aggregate_bg(cfg, replicas, false)
}

/// Second-order residual with the quadratic corrector subtracted (ℓ = δn).
pub fn bg2_residual(cfg: &ScalingConfig, replicas: usize) -> Result<BgReport> {
    aggregate_bg(cfg, replicas, true)
}

// ---------------------------------------------------------------------------
// Energy residual and Russo–Vallois quadratic variation
// ---------------------------------------------------------------------------

/// R(t; η) = A^n_t(η) − b · ∫₀ᵗ Σ_k n^{-1}[v^n(i_δ)² − σ²/δ] ∇²_nη dr with
/// the Burgers coefficient b = m₃/(2σ⁶); for an energy solution of
/// ∂_t u = νΔu − b∇u² + ∇ξ this combination vanishes as n → ∞.
pub fn energy_residual(trace: &FluctuationTrace, b: f64) -> Vec<f64> {
    trace
        .a
        .iter()
        .zip(&trace.nonlin_block)
        .map(|(&a, &j)| a - b * j)
        .collect()
}

/// Russo–Vallois-style quadratic-variation estimates
/// ∫₀^{t_end − δ} (A_{s+δ} − A_s)²/δ ds for each probe δ.
pub fn russo_vallois_qv(series: &[f64], dt_grid: f64, deltas: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::usage("series too short"));
    }
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let m = (delta / dt_grid).round() as usize;
        if m < 1 || (delta - m as f64 * dt_grid).abs() > 1e-9 * delta {
            return Err(Error::usage(format!(
                "qv window {delta} is below or incommensurate with the grid resolution {dt_grid}"
            )));
        }
        if m >= series.len() {
            return Err(Error::usage("qv window exceeds the series length"));
        }
        let mut acc = 0.0;
        for i in 0..series.len() - m {
            let d = series[i + m] - series[i];
            acc += d * d;
        }
        out.push(acc * dt_grid / delta);
    }
    Ok(out)
}

/// Ordinary-least-squares slope of log y vs log x with a 95% confidence
/// half-width; used for decay-rate verdicts.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::usage("slope needs at least 3 points"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = (resid / (n - 2.0) / sxx).sqrt();
    Ok((slope, 1.96 * se))
}
