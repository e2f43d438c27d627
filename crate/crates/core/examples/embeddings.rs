//! Two classes that sit inside the quasiseparable family: a low-rank `q kᵀ`
//! matrix and the sum of a forward and a backward scan. The second is strict:
//! the quasiseparable diagonal is free, the sum's is not.
//!
//! `cargo run --release --example embeddings -- [L]`

use mixerkit::ssm::{embed_addition_bidir_as_quasi, embed_lowrank_as_quasi, qs_materialize_coeffs, SsmHeadParams};
use mixerkit::tensor::{matmul_nt, rel_error};
use mixerkit::RngState;

fn main() -> mixerkit::Result<()> {
    let l: usize = std::env::args().nth(1).map_or(12, |s| s.parse().expect("L"));
    let mut rng = RngState::new(5);

    let (q, k) = (rng.normal_tensor(&[l, 3], 1.0), rng.normal_tensor(&[l, 3], 1.0));
    let qc = embed_lowrank_as_quasi(&q, &k)?;
    let err = rel_error(&qs_materialize_coeffs(&qc).per_head[0], &matmul_nt(&q, &k)?);
    println!("low-rank (d = 3) as quasiseparable with N = 3: max rel err {err:.2e}");

    let x = rng.normal_tensor(&[l, 4], 1.0);
    let fwd = SsmHeadParams::new(4, 1, 3, &mut rng);
    let bwd = SsmHeadParams::new(4, 1, 3, &mut rng);
    print!("{}", embed_addition_bidir_as_quasi(&fwd, &bwd, &x)?);
    Ok(())
}
