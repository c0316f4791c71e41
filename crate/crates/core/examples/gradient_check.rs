//! Compares tape gradients with central differences: first for a small
//! hand-built expression, then for every parameter of a small captioner.
//!
//! Usage: `cargo run --release --example gradient_check -- [seed]`

use act_core::cli_io::{cmd_gradcheck, RunConfig};
use act_core::numerics::{finite_diff_check, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> act_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn(&[4, 3], 0.5, &mut rng);
    let x = Tensor::randn(&[2, 4], 1.0, &mut rng);

    // mean(softmax(gelu(x W)))^2 style expression
    let err = finite_diff_check(
        |g: &mut Graph, xv| {
            let wv = g.constant(w.clone());
            let h = g.matmul(xv, wv)?;
            let h = g.gelu(h);
            let p = g.softmax(h, 1)?;
            let sq = g.mul(p, p)?;
            Ok(g.mean(sq))
        },
        &x,
        1e-5,
    )?;
    println!("expression: max relative error {err:.2e}");

    let cfg = RunConfig::default();
    let r = cmd_gradcheck(&cfg, seed, false)?;
    println!(
        "captioner: max relative error {:.2e} over {} coordinates (worst {}), passed {}",
        r.max_relative_error,
        r.coordinates,
        r.worst_parameter.as_deref().unwrap_or("-"),
        r.passed
    );
    Ok(())
}
