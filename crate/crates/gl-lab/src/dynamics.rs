//! Euler–Maruyama integration of the periodic weakly asymmetric
//! Ginzburg–Landau dynamics in height-difference variables,
//!
//! ```text
//! du(i) = { 1/2 Δ_D[V'(u)](i) + α ∇²_D[V'(u)](i) } dt + dW(i+1) − dW(i),
//! ```
//!
//! with stationarity, time-reversal, and coupled-noise refinement
//! diagnostics. The update is applied in flux form, so the total Σu changes
//! only by floating-point rounding of the per-site flux differences.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::ensembles::single_site_grid;
use crate::error::{Error, Result};
use crate::harness::seed::SeedStream;
use crate::potentials::Potential;

/// Periodic lattice configuration with its dynamical parameters.
#[derive(Clone, Debug)]
pub struct LatticeState {
    pub u: Vec<f64>,
    /// Lattice coordinate of site 0 (site i sits at coordinate k0 + i);
    /// used by scaling experiments whose window does not start at 0.
    pub k0: i64,
    /// Asymmetry α (√ε = n^{-1/2} in scaling runs; arbitrary in diagnostics).
    pub alpha: f64,
    /// Reference tilt of the stationary product measure.
    pub lambda0: f64,
    pub potential: Potential,
    /// Elapsed microscopic time.
    pub time: f64,
}

impl LatticeState {
    pub fn new(u: Vec<f64>, alpha: f64, lambda0: f64, potential: Potential) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::usage("lattice needs at least one site"));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite lattice entry"));
        }
        Ok(LatticeState {
            u,
            k0: 0,
            alpha,
            lambda0,
            potential,
            time: 0.0,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.u.len()
    }
}

/// Neumaier-compensated sum, for conserved-quantity diagnostics.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

// ---------------------------------------------------------------------------
// Discrete operators
// ---------------------------------------------------------------------------

/// Δ_D f(i) = f(i+1) + f(i−1) − 2 f(i) on the periodic lattice.
pub fn lap_d(f: &[f64], i: usize) -> f64 {
    let n = f.len();
    f[(i + 1) % n] + f[(i + n - 1) % n] - 2.0 * f[i]
}

/// ∇¹_D f(i) = f(i+1) − f(i).
pub fn grad1_d(f: &[f64], i: usize) -> f64 {
    let n = f.len();
    f[(i + 1) % n] - f[i]
}

/// ∇²_D f(i) = ½(f(i+1) − f(i−1)).
pub fn grad2_d(f: &[f64], i: usize) -> f64 {
    let n = f.len();
    0.5 * (f[(i + 1) % n] - f[(i + n - 1) % n])
}

/// Non-periodic diagnostic variants on integer-indexed functions.
pub fn lap_d_fn(f: &dyn Fn(i64) -> f64, i: i64) -> f64 {
    f(i + 1) + f(i - 1) - 2.0 * f(i)
}
pub fn grad1_d_fn(f: &dyn Fn(i64) -> f64, i: i64) -> f64 {
    f(i + 1) - f(i)
}
pub fn grad2_d_fn(f: &dyn Fn(i64) -> f64, i: i64) -> f64 {
    0.5 * (f(i + 1) - f(i - 1))
}

/// Scaled operators on real functions with mesh 1/n.
pub fn lap_n(eta: &dyn Fn(f64) -> f64, n: usize, x: f64) -> f64 {
    let h = 1.0 / n as f64;
    (n * n) as f64 * (eta(x + h) + eta(x - h) - 2.0 * eta(x))
}
pub fn grad1_n(eta: &dyn Fn(f64) -> f64, n: usize, x: f64) -> f64 {
    let h = 1.0 / n as f64;
    n as f64 * (eta(x + h) - eta(x))
}
pub fn grad2_n(eta: &dyn Fn(f64) -> f64, n: usize, x: f64) -> f64 {
    let h = 1.0 / n as f64;
    0.5 * n as f64 * (eta(x + h) - eta(x - h))
}

// ---------------------------------------------------------------------------
// Integrator
// ---------------------------------------------------------------------------

/// Per-site drift ½ Δ_D[V'(u)] + α ∇²_D[V'(u)].
pub fn drift(state: &LatticeState) -> Vec<f64> {
    let vp: Vec<f64> = state.u.iter().map(|&x| state.potential.v1(x)).collect();
    (0..vp.len())
        .map(|i| 0.5 * lap_d(&vp, i) + state.alpha * grad2_d(&vp, i))
        .collect()
}

/// Reusable step buffers. After a step, `vp` holds V'(u) evaluated on the
/// pre-step configuration and `xi` the per-site standard normals, so
/// downstream accumulators can reconstruct each term of the update exactly.
pub struct Stepper {
    pub vp: Vec<f64>,
    pub xi: Vec<f64>,
    flux: Vec<f64>,
    pub with_noise: bool,
    steps: u64,
}

impl Stepper {
    pub fn new(n_sites: usize) -> Self {
        Stepper {
            vp: vec![0.0; n_sites],
            xi: vec![0.0; n_sites],
            flux: vec![0.0; n_sites],
            with_noise: true,
            steps: 0,
        }
    }

    pub fn deterministic(n_sites: usize) -> Self {
        let mut s = Self::new(n_sites);
        s.with_noise = false;
        s
    }

    /// The noise increment √dt (ξ_{i+1} − ξ_i) applied to site i this step.
    pub fn noise_increment(&self, i: usize, dt: f64) -> f64 {
        if !self.with_noise {
            return 0.0;
        }
        let n = self.xi.len();
        dt.sqrt() * (self.xi[(i + 1) % n] - self.xi[i])
    }

    /// One Euler–Maruyama step in flux form: with
    /// F_i = dt (½(V'(u_i) − V'(u_{i-1})) + α ½(V'(u_i) + V'(u_{i-1}))) + √dt ξ_i,
    /// the update u_i += F_{i+1} − F_i reproduces the drift
    /// ½Δ_D V' + α∇²_D V' and the gradient noise exactly, and conserves Σu
    /// up to the rounding of the two flux additions per site.
    pub fn step(&mut self, state: &mut LatticeState, dt: f64, rng: &mut SeedStream) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::usage("step size must be positive"));
        }
        let n = state.u.len();
        for (v, &x) in self.vp.iter_mut().zip(&state.u) {
            *v = state.potential.v1(x);
        }
        if self.with_noise {
            rng.fill_normal(&mut self.xi);
        }
        let sdt = dt.sqrt();
        let alpha = state.alpha;
        for i in 0..n {
            let prev = self.vp[(i + n - 1) % n];
            let here = self.vp[i];
            let mut f = dt * (0.5 * (here - prev) + alpha * 0.5 * (here + prev));
            if self.with_noise {
                f += sdt * self.xi[i];
            }
            self.flux[i] = f;
        }
        let mut ok = true;
        for i in 0..n {
            let x = state.u[i] + (self.flux[(i + 1) % n] - self.flux[i]);
            ok &= x.is_finite();
            state.u[i] = x;
        }
        self.steps += 1;
        state.time += dt;
        if !ok {
            return Err(Error::numeric(format!(
                "integrator blow-up at step {}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Single Euler–Maruyama step with a fresh buffer set (convenience wrapper;
/// long runs should reuse a `Stepper`).
pub fn em_step(state: &mut LatticeState, dt: f64, rng: &mut SeedStream) -> Result<()> {
    Stepper::new(state.n_sites()).step(state, dt, rng)
}

// ---------------------------------------------------------------------------
// Stationary sampling
// ---------------------------------------------------------------------------

/// Inverse-CDF sampler for the tilted single-site measure, built on the
/// quadrature grid (piecewise-linear CDF inversion).
pub struct StationarySampler {
    origin: f64,
    h: f64,
    cdf: Vec<f64>,
}

impl StationarySampler {
    pub fn new(potential: &Potential, lambda: f64) -> Result<Self> {
        let (grid, _) = single_site_grid(potential, lambda)?;
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for j in 1..grid.len() {
            acc += 0.5 * (grid.values[j - 1] + grid.values[j]) * grid.h;
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        for c in &mut cdf {
            *c /= total;
        }
        Ok(StationarySampler {
            origin: grid.origin,
            h: grid.h,
            cdf,
        })
    }

    pub fn draw(&self, rng: &mut SeedStream) -> f64 {
        let p = rng.uniform();
        let j = self.cdf.partition_point(|&c| c <= p).min(self.cdf.len() - 1);
        // p lies in [cdf[j-1], cdf[j]); invert linearly inside the cell.
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
        self.origin + ((j - 1) as f64 + frac) * self.h
    }

    /// CDF value at x (piecewise linear on the grid), for goodness-of-fit.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let t = (x - self.origin) / self.h;
        if t <= 0.0 {
            return 0.0;
        }
        let j = t.floor() as usize;
        if j + 1 >= self.cdf.len() {
            return 1.0;
        }
        let frac = t - j as f64;
        self.cdf[j] + frac * (self.cdf[j + 1] - self.cdf[j])
    }
}

/// Fresh stationary product-measure state: i.i.d. tilted draws per site.
pub fn sample_stationary(
    potential: &Potential,
    n_sites: usize,
    lambda: f64,
    alpha: f64,
    rng: &mut SeedStream,
) -> Result<LatticeState> {
    let sampler = StationarySampler::new(potential, lambda)?;
    let u: Vec<f64> = (0..n_sites).map(|_| sampler.draw(rng)).collect();
    LatticeState::new(u, alpha, lambda, potential.clone())
}

// ---------------------------------------------------------------------------
// Stationarity diagnostics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct StationarityConfig {
    pub potential: Potential,
    pub lambda: f64,
    pub alpha: f64,
    pub n_sites: usize,
    pub t: f64,
    pub dt: f64,
    pub replicas: usize,
    pub master_seed: u64,
    /// Also run at dt/2 for a weak-order refinement comparison.
    pub refine: bool,
}

#[derive(Clone, Debug)]
pub struct StationarityReport {
    /// z-scores of the paired time-0 vs time-T differences of the site-
    /// averaged moments of orders 1–4.
    pub z: [f64; 4],
    /// z-score of the nearest-neighbor covariance difference (target 0).
    pub z_neighbor_cov: f64,
    /// Mean paired moment differences at dt (bias estimates).
    pub moment_diff: [f64; 4],
    pub moment_se: [f64; 4],
    /// Same at dt/2 when `refine` is set.
    pub moment_diff_half: Option<[f64; 4]>,
}

fn site_moments(u: &[f64]) -> ([f64; 4], f64) {
    let n = u.len() as f64;
    let mut m = [0.0; 4];
    for &x in u {
        let x2 = x * x;
        m[0] += x;
        m[1] += x2;
        m[2] += x2 * x;
        m[3] += x2 * x2;
    }
    for v in &mut m {
        *v /= n;
    }
    let mean = m[0];
    let mut cov = 0.0;
    for i in 0..u.len() {
        cov += (u[i] - mean) * (u[(i + 1) % u.len()] - mean);
    }
    (m, cov / n)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn stationarity_pass(
    cfg: &StationarityConfig,
    dt: f64,
    tag: &str,
) -> Result<Vec<([f64; 4], f64, [f64; 4])>> {
    let steps = (cfg.t / dt).round() as usize;
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut init = SeedStream::derive(cfg.master_seed, r as u64, "stationarity-init");
            let mut noise =
                SeedStream::derive(cfg.master_seed, r as u64, &format!("stationarity-{tag}"));
            let mut state =
                sample_stationary(&cfg.potential, cfg.n_sites, cfg.lambda, cfg.alpha, &mut init)?;
            let (m0, c0) = site_moments(&state.u);
            let mut stepper = Stepper::new(cfg.n_sites);
            for _ in 0..steps {
                stepper.step(&mut state, dt, &mut noise)?;
            }
            let (mt, ct) = site_moments(&state.u);
            Ok((
                [mt[0] - m0[0], mt[1] - m0[1], mt[2] - m0[2], mt[3] - m0[3]],
                ct - c0,
                m0,
            ))
        })
        .collect()
}

pub fn stationarity_report(cfg: &StationarityConfig) -> Result<StationarityReport> {
    let diffs = stationarity_pass(cfg, cfg.dt, "full")?;
    let mut z = [0.0; 4];
    let mut moment_diff = [0.0; 4];
    let mut moment_se = [0.0; 4];
    for k in 0..4 {
        let xs: Vec<f64> = diffs.iter().map(|(m, _, _)| m[k]).collect();
        let (m, se) = mean_se(&xs);
        moment_diff[k] = m;
        moment_se[k] = se;
        // A moment preserved to floating-point rounding (e.g. the mean,
        // which is exactly conserved) carries no statistical information;
        // flag it as exact rather than forming a noise/noise ratio.
        let scale: f64 = diffs.iter().map(|(_, _, m0)| m0[k].abs()).sum::<f64>()
            / diffs.len() as f64;
        z[k] = if m.abs() <= 1e-12 * (1.0 + scale) {
            0.0
        } else if se > 0.0 {
            m / se
        } else {
            0.0
        };
    }
    let cs: Vec<f64> = diffs.iter().map(|(_, c, _)| *c).collect();
    let (cm, cse) = mean_se(&cs);
    let z_neighbor_cov = if cse > 0.0 { cm / cse } else { 0.0 };
    let moment_diff_half = if cfg.refine {
        let half = stationarity_pass(cfg, 0.5 * cfg.dt, "half")?;
        let mut md = [0.0; 4];
        for k in 0..4 {
            let xs: Vec<f64> = half.iter().map(|(m, _, _)| m[k]).collect();
            md[k] = mean_se(&xs).0;
        }
        Some(md)
    } else {
        None
    };
    Ok(StationarityReport {
        z,
        z_neighbor_cov,
        moment_diff,
        moment_se,
        moment_diff_half,
    })
}

// ---------------------------------------------------------------------------
// Time-reversal diagnostics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ReversalConfig {
    pub potential: Potential,
    pub lambda: f64,
    pub alpha: f64,
    pub n_sites: usize,
    pub t: f64,
    pub dt: f64,
    pub replicas: usize,
    pub master_seed: u64,
    /// Observables F = u(site_f), G = u(site_g).
    pub site_f: usize,
    pub site_g: usize,
}

#[derive(Clone, Debug)]
pub struct ReversalReport {
    /// E[F(u_0) G(u_T)] under drift asymmetry +α.
    pub forward: f64,
    pub forward_se: f64,
    /// E[G(u_0) F(u_T)] under drift asymmetry −α (the reversed process).
    pub reversed: f64,
    pub reversed_se: f64,
    pub diff: f64,
    pub diff_se: f64,
}

pub fn reversal_report(cfg: &ReversalConfig) -> Result<ReversalReport> {
    let steps = (cfg.t / cfg.dt).round() as usize;
    let run = |alpha: f64, first: usize, second: usize, tag: &str| -> Result<Vec<f64>> {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut init = SeedStream::derive(cfg.master_seed, r as u64, "reversal-init");
                let mut noise =
                    SeedStream::derive(cfg.master_seed, r as u64, &format!("reversal-{tag}"));
                let mut state =
                    sample_stationary(&cfg.potential, cfg.n_sites, cfg.lambda, alpha, &mut init)?;
                let f0 = state.u[first];
                let mut stepper = Stepper::new(cfg.n_sites);
                for _ in 0..steps {
                    stepper.step(&mut state, cfg.dt, &mut noise)?;
                }
                Ok(f0 * state.u[second])
            })
            .collect()
    };
    let fw = run(cfg.alpha, cfg.site_f, cfg.site_g, "fw")?;
    let bw = run(-cfg.alpha, cfg.site_g, cfg.site_f, "bw")?;
    let (fm, fse) = mean_se(&fw);
    let (bm, bse) = mean_se(&bw);
    Ok(ReversalReport {
        forward: fm,
        forward_se: fse,
        reversed: bm,
        reversed_se: bse,
        diff: fm - bm,
        diff_se: (fse * fse + bse * bse).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Weighted norms and coupled-noise refinement
// ---------------------------------------------------------------------------

/// ‖u‖_r = (Σ_j |u(j)|² w_r(j − center))^{1/2} with w_r(0) = 1 and
/// w_r(j) = |j|^{−r}.
pub fn weighted_norm(u: &[f64], center: usize, r: f64) -> f64 {
    let mut s = 0.0;
    for (i, &x) in u.iter().enumerate() {
        let j = i as i64 - center as i64;
        let w = if j == 0 {
            1.0
        } else {
            (j.abs() as f64).powf(-r)
        };
        s += x * x * w;
    }
    s.sqrt()
}

#[derive(Clone, Debug)]
pub struct RefinementConfig {
    pub potential: Potential,
    pub lambda: f64,
    pub alpha: f64,
    /// Smallest lattice size; levels double it.
    pub base_n: usize,
    pub levels: usize,
    pub t: f64,
    pub dt: f64,
    pub r_prime: f64,
    pub master_seed: u64,
}

#[derive(Clone, Debug)]
pub struct RefinementReport {
    pub sizes: Vec<usize>,
    /// sup_{t≤T} ‖u^{(N)} − u^{(2N)}‖_{r'} on the N-window, per adjacent pair.
    pub sup_diff: Vec<f64>,
}

/// Couple lattices of sizes N, 2N, …, 2^{levels-1} N through one shared
/// noise array (each lattice sees the restriction to its own sites, with its
/// periodic wrap supplying the extension) and a shared i.i.d. initial draw,
/// then track how fast adjacent resolutions agree in the weighted norm.
pub fn periodic_refinement_test(cfg: &RefinementConfig) -> Result<RefinementReport> {
    if cfg.levels < 2 {
        return Err(Error::usage("refinement needs at least two lattice sizes"));
    }
    if cfg.r_prime <= 1.0 {
        return Err(Error::usage("refinement weight needs r' > 1 for summability"));
    }
    let sizes: Vec<usize> = (0..cfg.levels).map(|l| cfg.base_n << l).collect();
    let biggest = *sizes.last().unwrap();
    let mut init = SeedStream::derive(cfg.master_seed, 0, "refinement-init");
    let sampler = StationarySampler::new(&cfg.potential, cfg.lambda)?;
    let shared_init: Vec<f64> = (0..biggest).map(|_| sampler.draw(&mut init)).collect();
    let mut states: Vec<LatticeState> = sizes
        .iter()
        .map(|&n| {
            LatticeState::new(
                shared_init[..n].to_vec(),
                cfg.alpha,
                cfg.lambda,
                cfg.potential.clone(),
            )
        })
        .collect::<Result<_>>()?;
    let mut steppers: Vec<Stepper> = sizes.iter().map(|&n| Stepper::new(n)).collect();
    let mut noise = SeedStream::derive(cfg.master_seed, 0, "refinement-noise");
    let mut xi = vec![0.0; biggest];
    let steps = (cfg.t / cfg.dt).round() as usize;
    let mut sup = vec![0.0f64; cfg.levels - 1];
    let mut diff_buf: Vec<Vec<f64>> = sizes[..cfg.levels - 1]
        .iter()
        .map(|&n| vec![0.0; n])
        .collect();
    for _ in 0..steps {
        noise.fill_normal(&mut xi);
        for (state, stepper) in states.iter_mut().zip(&mut steppers) {
            let n = state.n_sites();
            stepper.with_noise = false;
            stepper.step(state, cfg.dt, &mut noise)?;
            // Apply the shared noise restricted to this lattice, in the same
            // gradient (flux) form as the integrator.
            let sdt = cfg.dt.sqrt();
            for i in 0..n {
                state.u[i] += sdt * (xi[(i + 1) % n] - xi[i]);
            }
        }
        for l in 0..cfg.levels - 1 {
            let n = sizes[l];
            for i in 0..n {
                diff_buf[l][i] = states[l].u[i] - states[l + 1].u[i];
            }
            let norm = weighted_norm(&diff_buf[l], n / 2, cfg.r_prime);
            if norm > sup[l] {
                sup[l] = norm;
            }
        }
    }
    Ok(RefinementReport {
        sizes,
        sup_diff: sup,
    })
}

// ---------------------------------------------------------------------------
// Trajectory checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"GLLAT001";

/// Write a flat binary checkpoint: magic, header (N_sites, dt, α, λ₀,
/// elapsed time, k0, potential tag), then raw per-site doubles.
pub fn save_checkpoint(state: &LatticeState, dt: f64, tag: &str, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + tag.len() + 8 * state.u.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(state.u.len() as u64).to_le_bytes());
    buf.extend_from_slice(&dt.to_le_bytes());
    buf.extend_from_slice(&state.alpha.to_le_bytes());
    buf.extend_from_slice(&state.lambda0.to_le_bytes());
    buf.extend_from_slice(&state.time.to_le_bytes());
    buf.extend_from_slice(&state.k0.to_le_bytes());
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for &x in &state.u {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a checkpoint back; the potential is supplied by the caller and the
/// stored tag is returned for validation.
pub fn load_checkpoint(
    path: &std::path::Path,
    potential: Potential,
) -> Result<(LatticeState, f64, String)> {
    let buf = std::fs::read(path)?;
    let fail = || Error::usage("malformed checkpoint file");
    if buf.len() < 8 + 8 * 6 + 4 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(fail());
    }
    let mut off = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        if off + n > buf.len() {
            return Err(fail());
        }
        let s = &buf[off..off + n];
        off += n;
        Ok(s)
    };
    let n_sites = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let alpha = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let lambda0 = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let time = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let k0 = i64::from_le_bytes(take(8)?.try_into().unwrap());
    let tag_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let tag = String::from_utf8(take(tag_len)?.to_vec()).map_err(|_| fail())?;
    let mut u = Vec::with_capacity(n_sites);
    for _ in 0..n_sites {
        u.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let mut state = LatticeState::new(u, alpha, lambda0, potential)?;
    state.time = time;
    state.k0 = k0;
    Ok((state, dt, tag))
}

// ---------------------------------------------------------------------------
// Spectral helpers (used by diagnostics and tests)
// ---------------------------------------------------------------------------

/// Discrete Fourier transform of the lattice configuration.
pub fn lattice_fft(u: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = u.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(u.len()).process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Shape;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn rng(tag: &str) -> SeedStream {
        SeedStream::derive(20260826, 0, tag)
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut r = rng("ckpt");
        let pot = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let mut state = sample_stationary(&pot, 64, 0.25, 0.1, &mut r).unwrap();
        state.time = 1.5;
        state.k0 = -17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&state, 1e-3, "perturbed(1,0.3,sine)", &path).unwrap();
        let (back, dt, tag) = load_checkpoint(&path, pot).unwrap();
        assert_eq!(dt, 1e-3);
        assert_eq!(tag, "perturbed(1,0.3,sine)");
        assert_eq!(back.time, 1.5);
        assert_eq!(back.k0, -17);
        assert_eq!(back.alpha, 0.1);
        assert_eq!(back.lambda0, 0.25);
        for (a, b) in state.u.iter().zip(&back.u) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(load_checkpoint(dir.path().join("missing.ckpt").as_path(),
            Potential::quadratic(1.0)).is_err());
    }

    fn free_potential() -> Potential {
        // V' ≡ 0: pure gradient noise, for diagnostic runs.
        Potential::User(Arc::new(|_u: f64, _order: u8| 0.0))
    }

    #[test]
    fn discrete_op_values() {
        let f = |i: i64| i as f64;
        assert_eq!(grad2_d_fn(&f, 5), 1.0);
        assert_eq!(lap_d_fn(&f, 5), 0.0);
        assert_eq!(grad1_d_fn(&f, -3), 1.0);
        let c = [2.5; 7];
        for i in 0..7 {
            assert_eq!(lap_d(&c, i), 0.0);
        }
        let sq = |x: f64| x * x;
        for n in [4usize, 64, 1000] {
            for x in [-1.5, 0.0, 0.33] {
                assert_relative_eq!(lap_n(&sq, n, x), 2.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn discrete_op_identity_random() {
        let mut r = rng("ops");
        let f: Vec<f64> = (0..33).map(|_| r.normal()).collect();
        for i in 0..f.len() {
            let n = f.len();
            assert_relative_eq!(
                lap_d(&f, i),
                grad1_d(&f, i) - grad1_d(&f, (i + n - 1) % n),
                epsilon = 1e-14
            );
            // Same value up to one rounding of the regrouped sum.
            assert_relative_eq!(
                grad2_d(&f, i),
                0.5 * (grad1_d(&f, i) + grad1_d(&f, (i + n - 1) % n)),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn drift_constant_and_telescoping() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let s = LatticeState::new(vec![0.7; 16], 0.3, 0.0, p.clone()).unwrap();
        assert!(drift(&s).iter().all(|&d| d == 0.0));
        let mut r = rng("drift");
        let u: Vec<f64> = (0..64).map(|_| r.normal()).collect();
        let s = LatticeState::new(u, 0.25, 0.0, p).unwrap();
        let d = drift(&s);
        let total = compensated_sum(&d);
        let scale: f64 = d.iter().map(|x| x.abs()).sum();
        assert!(total.abs() <= 1e-12 * scale.max(1.0), "sum {total}");
    }

    #[test]
    fn drift_matches_dense_circulant_oracle() {
        // Quadratic V'(u) = u: drift is a circulant linear map; compare with
        // an explicit dense matrix apply.
        let n = 32;
        let alpha = 0.37;
        let mut r = rng("circulant");
        let u: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let s = LatticeState::new(u.clone(), alpha, 0.0, Potential::quadratic(1.0)).unwrap();
        let d = drift(&s);
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][(i + 1) % n] += 0.5 + 0.5 * alpha;
            m[i][(i + n - 1) % n] += 0.5 - 0.5 * alpha;
            m[i][i] -= 1.0;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m[i][j] * u[j];
            }
            assert!((acc - d[i]).abs() < 1e-12, "site {i}: {acc} vs {}", d[i]);
        }
    }

    #[test]
    fn em_step_conserves_sum() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let mut r = rng("conserve-init");
        let mut noise = rng("conserve-noise");
        let mut s = sample_stationary(&p, 256, 0.2, 0.1, &mut r).unwrap();
        let before = compensated_sum(&s.u);
        let mut stepper = Stepper::new(256);
        for _ in 0..2000 {
            stepper.step(&mut s, 1e-3, &mut noise).unwrap();
        }
        let after = compensated_sum(&s.u);
        assert!(
            (after - before).abs() <= 1e-10 * before.abs().max(1.0),
            "sum drift {}",
            after - before
        );
    }

    #[test]
    fn em_step_determinism() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let run = || {
            let mut init = SeedStream::derive(5, 1, "det-init");
            let mut noise = SeedStream::derive(5, 1, "det-noise");
            let mut s = sample_stationary(&p, 64, 0.0, 0.2, &mut init).unwrap();
            let mut st = Stepper::new(64);
            for _ in 0..500 {
                st.step(&mut s, 1e-3, &mut noise).unwrap();
            }
            s.u
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gradient_noise_covariance_structure() {
        let n = 65536;
        let dt = 1e-3;
        let mut s = LatticeState::new(vec![0.0; n], 0.0, 0.0, free_potential()).unwrap();
        let mut stepper = Stepper::new(n);
        let mut noise = rng("noise-struct");
        stepper.step(&mut s, dt, &mut noise).unwrap();
        let var: f64 = s.u.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let cov: f64 = (0..n).map(|i| s.u[i] * s.u[(i + 1) % n]).sum::<f64>() / n as f64;
        assert!((var - 2.0 * dt).abs() < 0.05 * 2.0 * dt, "var {var}");
        assert!((cov + dt).abs() < 0.1 * dt, "cov {cov}");
    }

    #[test]
    fn free_dynamics_brownian_difference_law() {
        // V' ≡ 0, α = 0: u_t(i) − u_0(i) = W(i+1)_t − W(i)_t.
        let n = 16384;
        let t: f64 = 0.05;
        let dt = 1e-3;
        let mut s = LatticeState::new(vec![0.0; n], 0.0, 0.0, free_potential()).unwrap();
        let mut stepper = Stepper::new(n);
        let mut noise = rng("free");
        for _ in 0..(t / dt).round() as usize {
            stepper.step(&mut s, dt, &mut noise).unwrap();
        }
        let var: f64 = s.u.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let cov: f64 = (0..n).map(|i| s.u[i] * s.u[(i + 1) % n]).sum::<f64>() / n as f64;
        assert!((var - 2.0 * t).abs() < 0.08 * 2.0 * t, "var {var} vs {}", 2.0 * t);
        assert!((cov + t).abs() < 0.15 * t, "cov {cov} vs {}", -t);
    }

    #[test]
    fn deterministic_fourier_decay_matches_exponential() {
        // Quadratic V, no noise: each Fourier mode decays with rate
        // (cos θ − 1) + iα sin θ.
        let n = 64;
        let alpha = 0.25;
        let dt = 1e-3;
        let t: f64 = 1.0;
        let mut init = rng("fourier-init");
        let mut s = sample_stationary(&Potential::quadratic(1.0), n, 0.0, alpha, &mut init).unwrap();
        let hat0 = lattice_fft(&s.u);
        let mut stepper = Stepper::deterministic(n);
        let mut unused = rng("fourier-none");
        for _ in 0..(t / dt).round() as usize {
            stepper.step(&mut s, dt, &mut unused).unwrap();
        }
        let hat_t = lattice_fft(&s.u);
        for k in 1..8 {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let lam = Complex::new(theta.cos() - 1.0, alpha * theta.sin());
            let expected = hat0[k] * (lam * t).exp();
            let err = (hat_t[k] - expected).norm() / hat0[k].norm().max(1e-12);
            assert!(err < 5.0 * dt, "mode {k}: rel err {err}");
        }
    }

    #[test]
    fn stationary_sampler_quadratic_gaussian() {
        let p = Potential::quadratic(1.0);
        let mut r = rng("gauss-draws");
        let n = 100_000;
        let sampler = StationarySampler::new(&p, 0.8).unwrap();
        let draws: Vec<f64> = (0..n).map(|_| sampler.draw(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.8).abs() < 3.0 / (n as f64).sqrt());
        // Kolmogorov–Smirnov against the sampler's own grid CDF, 1% level.
        let mut sorted = draws;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in sorted.iter().enumerate() {
            let c = sampler.cdf_at(x);
            ks = ks.max((c - i as f64 / n as f64).abs());
            ks = ks.max((c - (i + 1) as f64 / n as f64).abs());
        }
        let critical = 1.628 / (n as f64).sqrt();
        assert!(ks < critical, "KS {ks} vs {critical}");
    }

    #[test]
    fn stationary_sampler_mean_matches_thermo() {
        let p = Potential::perturbed(1.0, 0.3, Shape::Sine);
        let prof = crate::thermo::moments(&p, 0.4, 2).unwrap();
        let mut r = rng("pert-draws");
        let s = sample_stationary(&p, 50_000, 0.4, 0.0, &mut r).unwrap();
        let mean = s.u.iter().sum::<f64>() / s.u.len() as f64;
        let se = prof.sigma() / (s.u.len() as f64).sqrt();
        assert!((mean - prof.mean).abs() < 3.0 * se);
    }

    #[test]
    fn stationarity_zscores_reasonable() {
        for (p, alpha) in [
            (Potential::quadratic(1.0), 0.0),
            (Potential::perturbed(1.0, 0.3, Shape::Sine), 0.2),
        ] {
            let cfg = StationarityConfig {
                potential: p,
                lambda: 0.0,
                alpha,
                n_sites: 128,
                t: 0.5,
                dt: 2e-3,
                replicas: 48,
                master_seed: 11,
                refine: false,
            };
            let rep = stationarity_report(&cfg).unwrap();
            for (k, z) in rep.z.iter().enumerate() {
                assert!(z.abs() < 4.0, "moment {} z {}", k + 1, z);
            }
            assert!(rep.z_neighbor_cov.abs() < 4.0);
        }
    }

    #[test]
    fn reversal_zero_time_is_exact() {
        let cfg = ReversalConfig {
            potential: Potential::quadratic(1.0),
            lambda: 0.0,
            alpha: 0.3,
            n_sites: 32,
            t: 0.0,
            dt: 1e-3,
            replicas: 64,
            master_seed: 3,
            site_f: 0,
            site_g: 1,
        };
        let rep = reversal_report(&cfg).unwrap();
        assert_eq!(rep.diff, 0.0);
    }

    #[test]
    fn reversal_symmetric_case() {
        let cfg = ReversalConfig {
            potential: Potential::quadratic(1.0),
            lambda: 0.0,
            alpha: 0.0,
            n_sites: 64,
            t: 0.2,
            dt: 1e-3,
            replicas: 3000,
            master_seed: 17,
            site_f: 0,
            site_g: 1,
        };
        let rep = reversal_report(&cfg).unwrap();
        assert!(
            rep.diff.abs() < 3.0 * rep.diff_se,
            "diff {} se {}",
            rep.diff,
            rep.diff_se
        );
    }

    #[test]
    fn weighted_norm_values() {
        let mut u = vec![0.0; 9];
        u[4] = 1.0;
        assert_eq!(weighted_norm(&u, 4, 2.0), 1.0);
        let mut e3 = vec![0.0; 9];
        e3[7] = 1.0;
        assert_relative_eq!(weighted_norm(&e3, 4, 2.0), 3.0f64.powf(-1.0));
        assert_relative_eq!(weighted_norm(&e3, 4, 1.5), 3.0f64.powf(-0.75));
    }

    #[test]
    fn refinement_differences_shrink() {
        let cfg = RefinementConfig {
            potential: Potential::quadratic(1.0),
            lambda: 0.0,
            alpha: 0.1,
            base_n: 128,
            levels: 3,
            t: 2.0,
            dt: 1e-3,
            r_prime: 2.0,
            master_seed: 29,
        };
        let rep = periodic_refinement_test(&cfg).unwrap();
        assert_eq!(rep.sizes, vec![128, 256, 512]);
        assert!(
            rep.sup_diff[1] < rep.sup_diff[0],
            "sup diffs {:?}",
            rep.sup_diff
        );
    }
}
