//! Central-difference check of every loss pathway through the mask branch.

fn main() -> cpmask::Result<()> {
    let seed = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    for (name, r) in cpmask::cli::gradcheck_all(seed, 100)? {
        println!(
            "{name:<17} max rel err {:.2e}  {}",
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
