// Recovering model parameters from noisy synthetic measurements.

use qd_hom::dephasing::{coherence_time, michelson_visibility};
use qd_hom::estimation::{fit_coherence_curve, fit_visibility_decay, FitSpec, MeasuredSeries};
use qd_hom::TrapModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run() -> qd_hom::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");

    let truth = TrapModelParams::line_b();
    let currents: Vec<f64> = (0..12).map(|k| 10.0 + 45.0 * k as f64).collect();
    let tau_c = currents
        .iter()
        .map(|&i| Ok(coherence_time(&truth, i)?.tau_c * (1.0 + noise.sample(&mut rng))))
        .collect::<qd_hom::Result<Vec<f64>>>()?;
    let fit = fit_coherence_curve(&MeasuredSeries::new(currents, tau_c, None)?, &FitSpec::coherence_default())?;
    println!("trap model, 2% noise (truth tau3 = 550, I0 = 200, Sigma_s = 285):");
    print!("{}", fit.summary());

    let delays: Vec<f64> = (0..15).map(|k| 60.0 * k as f64).collect();
    let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
    let vis = delays.iter().map(|&d| michelson_visibility(d, 400.0) + jitter.sample(&mut rng)).collect();
    let fit = fit_visibility_decay(&MeasuredSeries::new(delays, vis, None)?)?;
    println!("\nfirst-order visibility (truth tau_c = 400):");
    print!("{}", fit.summary());
    Ok(())
}

#[allow(dead_code)]
fn main() -> qd_hom::Result<()> {
    run()
}
