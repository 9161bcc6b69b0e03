//! Local limit theorem for block sums under the tilted product measure:
//! the density of the standardized N-site sum approaches a Gaussian at rate
//! N^{-1/2}, and the Edgeworth expansion captures the first corrections.

use gl_lab::ensembles::{llt_gap, ConvolutionTable};
use gl_lab::thermo::{edgeworth_density, moments};
use gl_lab::{Potential, Shape};

fn main() -> gl_lab::Result<()> {
    let potential = Potential::perturbed(1.0, 0.3, Shape::Sine);
    let lambda = 0.0;

    println!("sup-norm gap between the standardized N-sum density and its");
    println!("second-order Edgeworth expansion:");
    let mut gaps = Vec::new();
    for n in [4usize, 8, 16, 32, 64] {
        let gap = llt_gap(&potential, lambda, n)?;
        println!("  N = {n:3}: gap = {gap:.6e}");
        gaps.push((n as f64, gap));
    }
    // After the N^{-1/2} and N^{-1} corrections the remainder decays like
    // N^{-3/2} (slope −1.5 on log-log axes).
    let slope = {
        let k = gaps.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(n, g) in &gaps {
            let (x, y) = (n.ln(), g.ln());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        (k * sxy - sx * sy) / (k * sxx - sx * sx)
    };
    println!("  log-log slope = {slope:.3} (theory: −1.5)");
    assert!(slope < -1.2, "gap must decay");

    // Edgeworth expansion vs the exact FFT-convolved density at N = 16.
    let n = 16;
    let table = ConvolutionTable::new(&potential, lambda)?;
    let prof = moments(&potential, lambda, 6)?;
    let sd_sum = (n as f64 * prof.variance).sqrt();
    println!("\nexact vs Edgeworth density of the standardized {n}-sum:");
    let mut worst = 0.0f64;
    for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let s = n as f64 * prof.mean + x * sd_sum;
        let exact = table.eval_power(n, s)? * sd_sum;
        let edge = edgeworth_density(&potential, lambda, n, x)?;
        worst = worst.max((exact - edge).abs());
        println!("  x = {x:4.1}: exact = {exact:.8}  edgeworth = {edge:.8}");
    }
    println!("  worst abs gap = {worst:.3e}");
    assert!(worst < 1e-2);
    Ok(())
}
