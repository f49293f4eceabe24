// Ideal HBT / Mach-Zehnder correlation functions and what a 428 ps
// detection system makes of them.

use qd_hom::correlations::{g2_parallel, g2_perp, g2_source};
use qd_hom::response::{convolve, gaussian_kernel, v_hom_measured, DEFAULT_STEP, DEFAULT_TRUNCATION_SIGMAS};
use qd_hom::{InterferometerSpec, SampledCurve, SourceSpec};

pub fn run() -> qd_hom::Result<()> {
    let source = SourceSpec::new(800.0, 325.0, 0.0)?;
    let interf = InterferometerSpec::balanced(10_000.0, 1.0);
    let kernel = gaussian_kernel(428.0, DEFAULT_STEP, DEFAULT_TRUNCATION_SIGMAS)?;

    let perp = SampledCurve::from_fn(15_000.0, DEFAULT_STEP, |t| g2_perp(t, &source, &interf))?;
    let par = SampledCurve::from_fn(15_000.0, DEFAULT_STEP, |t| g2_parallel(t, &source, &interf))?;
    let (perp_c, par_c) = (convolve(&perp, &kernel)?, convolve(&par, &kernel)?);

    println!("{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "tau", "g2", "perp", "par", "perp*R", "par*R");
    for tau in [-10_000.0, -2000.0, -500.0, 0.0, 500.0, 2000.0, 10_000.0] {
        let i = perp.nearest_index(tau).expect("on grid");
        println!(
            "{:>8.0} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            tau,
            g2_source(tau, &source),
            perp.values[i],
            par.values[i],
            perp_c.values[i],
            par_c.values[i]
        );
    }
    println!("V_HOM through the detectors: {:.3}", v_hom_measured(&source, &interf, &kernel)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> qd_hom::Result<()> {
    run()
}
