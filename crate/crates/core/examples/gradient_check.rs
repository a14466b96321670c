//! Finite-difference checks of every differentiable operation.
//!
//!     cargo run --release --example gradient_check -- 5

use sfv::gradcheck::run_suite;

fn main() -> sfv::Result<()> {
    let seeds = std::env::args().nth(1).map_or(5, |s| s.parse().expect("seed count"));
    for r in run_suite(seeds, 1e-5)? {
        println!(
            "{:<26} {:>6} elements  max rel err {:.2e}  {}",
            r.name,
            r.checked,
            r.max_rel_err,
            if r.passed(1e-4) { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
