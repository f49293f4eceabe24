// How much of the ideal HOM dip survives finite timing resolution.

use qd_hom::response::visibility_map;
use qd_hom::{InterferometerSpec, SourceSpec};

pub fn run() -> qd_hom::Result<()> {
    let delta_t = [50.0, 100.0, 200.0, 428.0, 800.0];
    let tau_c = [100.0, 200.0, 325.0, 400.0, 800.0];
    let map = visibility_map(&delta_t, &tau_c, &SourceSpec::default(), &InterferometerSpec::default())?;

    print!("{:>8}", "dt\\tc");
    for t in tau_c {
        print!(" {t:>6.0}");
    }
    println!();
    for (d, row) in delta_t.iter().zip(&map) {
        print!("{d:>8.0}");
        for v in row {
            print!(" {v:>6.3}");
        }
        println!();
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> qd_hom::Result<()> {
    run()
}
