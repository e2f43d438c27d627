//! The quasiseparable matrix as two shifted semiseparable scans plus a free
//! diagonal: prints a small instance, its pieces, and the off-diagonal ranks.
//!
//! `cargo run --release --example quasiseparable -- [L] [N]`

use mixerkit::ssm::{block_ranks, qs_apply_coeffs, qs_materialize_coeffs, ss_materialize, QuasiCoeffs};
use mixerkit::tensor::rel_error;
use mixerkit::{mixer::apply_mixer, RngState, Tensor};

fn show(title: &str, m: &Tensor) {
    println!("{title}");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> mixerkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let l: usize = args.next().map_or(6, |s| s.parse().expect("L"));
    let n: usize = args.next().map_or(2, |s| s.parse().expect("N"));
    let mut rng = RngState::new(3);
    let qc = QuasiCoeffs::random(l, 1, n, &mut rng);

    let m = qs_materialize_coeffs(&qc);
    let fwd = ss_materialize(&qc.fwd);
    let bwd = ss_materialize(&qc.bwd);
    show("forward scan matrix (lower, diagonal included)", &fwd.per_head[0]);
    show("backward scan matrix, reversed coordinates", &bwd.per_head[0]);
    show("quasiseparable matrix: shifted forward below, flipped shifted backward above", &m.per_head[0]);

    // Entry (i, j) below the diagonal is forward entry (i-1, j); above it is
    // backward entry (L-2-i, L-1-j).
    let mut worst = 0.0f64;
    for i in 0..l {
        for j in 0..l {
            let want = if i > j {
                fwd.per_head[0].at2(i - 1, j)
            } else if i < j {
                bwd.per_head[0].at2(l - 2 - i, l - 1 - j)
            } else {
                qc.delta.at2(i, 0)
            };
            worst = worst.max((m.per_head[0].at2(i, j) - want).abs());
        }
    }
    println!("max |entry − shifted scan entry| = {worst:.2e}");

    let v = rng.normal_tensor(&[l, 3], 1.0);
    let err = rel_error(&qs_apply_coeffs(&qc, &v)?, &apply_mixer(&m, &v)?);
    println!("scan-based apply vs matrix apply: {err:.2e}");

    let (lower, upper) = block_ranks(&m.per_head[0])?;
    println!("strictly-lower block ranks {lower:?}");
    println!("strictly-upper block ranks {upper:?}  (bound N = {n})");
    Ok(())
}
