// Coherence time and linewidth versus injection current for both lines.

use qd_hom::dephasing::{coherence_sweep, linewidth_from_coherence};
use qd_hom::TrapModelParams;

pub fn run() -> qd_hom::Result<()> {
    let currents: Vec<f64> = (1..=10).map(|k| 50.0 * k as f64).collect();
    for (name, params) in [("line A", TrapModelParams::line_a()), ("line B", TrapModelParams::line_b())] {
        println!("{name}");
        println!("{:>8} {:>10} {:>10} {:>10} {:>8}", "I (uA)", "tau_up", "tau_c", "2hbar/tc", "S*tf/h");
        for p in coherence_sweep(&params, &currents)? {
            println!(
                "{:>8.0} {:>10.1} {:>10.1} {:>10.2} {:>8.3}",
                p.current,
                p.tau_up,
                p.tau_c,
                linewidth_from_coherence(p.tau_c)?,
                p.narrowing_ratio
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> qd_hom::Result<()> {
    run()
}
