//! Multi-start scan for equal masses on the 2-sphere, one summary per seed.
//!
//! cargo run --release --example bound_scan -- 3 100

use curved_nbody::equilibria::verify_orbit;
use curved_nbody::probe::scan_bound;
use curved_nbody::{Problem, Rotation};

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(3);
    let starts = args.next().unwrap_or(100);
    let problem = Problem::new(vec![1.0; n], Rotation::new(vec![2f64.sqrt()], 3).unwrap()).unwrap();
    for seed in 1..=5 {
        let scan = scan_bound(&problem, starts, seed).unwrap();
        println!(
            "seed {seed}: {}/{} converged, {} distinct, empirical c = {:?}",
            scan.converged,
            scan.attempted,
            scan.solutions.len(),
            scan.empirical_c
        );
        for (s, d) in scan.solutions.iter().zip(&scan.min_distances) {
            let v = verify_orbit(s, &problem, 1.0, 1e-6).unwrap();
            println!(
                "  {:<40} min distance {:.9}  residual {:.1e}  orbit deviation {:.1e}",
                s.classification.to_string(),
                d.unwrap_or(f64::NAN),
                s.residual_norm,
                v.max_deviation
            );
        }
    }
}
