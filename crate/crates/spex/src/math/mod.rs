//! Numerical building blocks: normal special functions, root finding,
//! and small statistics utilities.

pub mod brent;
pub mod normal;
pub mod stats;

/// Unit-rate exponential draw as −ln U with U strictly inside (0,1).
#[inline]
pub fn exp1<R: rand::Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -u.ln();
        }
    }
}
