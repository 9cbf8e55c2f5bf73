//! Constant-velocity hand baseline.

use crate::error::Result;
use crate::numerics::Tensor;

/// Extrapolates the last observed displacement: `v = H_0 - H_{-1}`,
/// `Ĥ_t = H_0 + t·v` for `t = 1..=n_f`. With a single past frame there is no
/// velocity and the prediction is stationary.
pub fn cvh_baseline(past: &Tensor, n_f: usize) -> Result<Tensor> {
    let (n_p, d) = past.dims2()?;
    let last = past.row(n_p - 1);
    let v: Vec<f64> = if n_p >= 2 {
        last.iter()
            .zip(past.row(n_p - 2))
            .map(|(a, b)| a - b)
            .collect()
    } else {
        vec![0.0; d]
    };
    let data = (1..=n_f)
        .flat_map(|t| last.iter().zip(&v).map(move |(p, dv)| p + t as f64 * dv))
        .collect();
    Tensor::matrix(n_f, d, data)
}
