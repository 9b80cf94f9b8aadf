//! Finite-difference check of the reverse-mode gradients of a small
//! attention block.

use netmae_autograd::{check_gradients, Tensor};

fn main() -> netmae_autograd::Result<()> {
    let t =
        |r: usize, c: usize, s: f64| Tensor::new(&[r, c], (0..r * c).map(|i| ((i as f64 + s) * 1.7).sin()).collect());
    let inputs = vec![
        t(4, 6, 0.0)?,
        t(6, 6, 1.0)?,
        t(6, 6, 2.0)?,
        t(1, 6, 3.0)?,
        t(1, 6, 4.0)?,
    ];
    let report = check_gradients(&inputs, 1e-5, |g, v| {
        let x = g.layer_norm(v[0], v[3], v[4], 1e-5)?;
        let q = g.matmul(x, v[1])?;
        let k = g.matmul(x, v[2])?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, 1.0 / 6f64.sqrt())?;
        let a = g.softmax_rows(s)?;
        let y = g.matmul(a, x)?;
        let y = g.gelu(y)?;
        let m = g.mean_rows(y)?;
        g.cross_entropy(m, 2)
    })?;
    println!(
        "{} partial derivatives checked, max relative error {:.2e}, max absolute error {:.2e}",
        report.checked, report.max_rel_err, report.max_abs_err
    );
    Ok(())
}
