use std::io::Write;

use super::{derive_rng, SeedPart};
use crate::blr::{generate_auxiliary, Dataset};
use crate::error::{Error, Result};

/// Draws `n` rows from the auxiliary model and writes them as headerless CSV.
pub fn generate_synthetic<W: Write>(
    n: usize,
    d: usize,
    lambda0: f64,
    lambda: f64,
    seed: u64,
    out: W,
) -> Result<Dataset> {
    if d == 0 || !(lambda0 > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need d >= 1 and positive lambdas (d={d}, lambda0={lambda0}, lambda={lambda})"
        )));
    }
    let mut rng = derive_rng(seed, &[SeedPart::Str("gen-data")]);
    let (data, _) = generate_auxiliary(n, d, lambda0, lambda, &mut rng);
    data.write_csv(out)?;
    Ok(data)
}
