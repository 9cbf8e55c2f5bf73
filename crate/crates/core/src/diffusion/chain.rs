use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

pub fn normal_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("noise shape")
}

/// Noises rows `n_p..` of `z0` to step `s`; rows `..n_p` are returned as is.
pub fn q_sample(
    z0: &Tensor,
    n_p: usize,
    s: usize,
    noise: &Tensor,
    sc: &Schedule,
) -> Result<Tensor> {
    let (t, f) = z0.dims2()?;
    if n_p > t || noise.dims2()? != (t - n_p, f) {
        return Err(Error::Dimension(format!(
            "noise {:?} does not match the {} future rows of {:?}",
            noise.shape(),
            t.saturating_sub(n_p),
            z0.shape()
        )));
    }
    let ab = sc.alpha_bar[s];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    for (o, n) in out.data_mut()[n_p * f..].iter_mut().zip(noise.data()) {
        *o = a * *o + b * n;
    }
    Ok(out)
}

/// Differentiable [`q_sample`]: gradients reach `z0` through both the anchor
/// and the scaled future rows.
pub fn q_sample_var(
    g: &mut Graph,
    z0: Var,
    n_p: usize,
    s: usize,
    noise: &Tensor,
    sc: &Schedule,
) -> Result<Var> {
    let t = g.shape(z0)[0];
    let past = g.slice_rows(z0, 0, n_p)?;
    let fut = g.slice_rows(z0, n_p, t)?;
    let ab = sc.alpha_bar[s];
    let fut = g.scale(fut, ab.sqrt());
    let n = g.constant(noise.map(|v| v * (1.0 - ab).sqrt()));
    let fut = g.add(fut, n)?;
    g.concat_rows(&[past, fut])
}

/// One reverse step from `s` to `s_prev < s` given the predicted clean
/// latents. Uses the Gaussian posterior `q(z_prev | z_s, ẑ_0)` of the
/// two-level transition; `s_prev = 0` returns `ẑ_0` without noise. Past rows
/// are overwritten by `anchor` afterwards.
pub fn denoise_step(
    z_s: &Tensor,
    z0_hat: &Tensor,
    anchor: &Tensor,
    s: usize,
    s_prev: usize,
    sc: &Schedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if !z0_hat.all_finite() {
        return Err(Error::Runtime(format!(
            "non-finite prediction at diffusion step {s}"
        )));
    }
    if z0_hat.shape() != z_s.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs state {:?}",
            z0_hat.shape(),
            z_s.shape()
        )));
    }
    if s_prev >= s {
        return Err(Error::Range(format!(
            "reverse step must decrease the step ({s} -> {s_prev})"
        )));
    }
    let (n_p, f) = anchor.dims2()?;
    let mut out = if s_prev == 0 {
        z0_hat.clone()
    } else {
        let (ab, ab_prev) = (sc.alpha_bar[s], sc.alpha_bar[s_prev]);
        let beta = 1.0 - ab / ab_prev;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let c1 = (ab / ab_prev).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        let data = z0_hat
            .data()
            .iter()
            .zip(z_s.data())
            .map(|(x0, zs)| c0 * x0 + c1 * zs + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(z_s.shape().to_vec(), data)?
    };
    out.data_mut()[..n_p * f].copy_from_slice(anchor.data());
    Ok(out)
}

/// `k` uniformly strided steps from `S` down to `S/k` (rounded up).
pub fn stride_steps(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return Err(Error::Config(format!(
            "cannot take {k} reverse steps out of {total}"
        )));
    }
    Ok((0..k).map(|i| (total * (k - i)).div_ceil(k)).collect())
}

/// Runs the reverse chain from pure noise on the future rows. `predict`
/// maps `(z_s, s)` to `ẑ_0`; `observe` sees every intermediate state.
pub fn reverse_chain(
    anchor: &Tensor,
    n_f: usize,
    sc: &Schedule,
    steps: usize,
    mut predict: impl FnMut(&Tensor, usize) -> Result<Tensor>,
    mut observe: impl FnMut(usize, &Tensor),
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (n_p, f) = anchor.dims2()?;
    let noise = normal_tensor(n_f, f, rng);
    let mut z = Tensor::concat_rows(&[anchor, &noise])?;
    observe(sc.steps, &z);
    let seq = stride_steps(sc.steps, steps)?;
    for (i, &s) in seq.iter().enumerate() {
        let s_prev = seq.get(i + 1).copied().unwrap_or(0);
        let z0_hat = predict(&z, s)?;
        z = denoise_step(&z, &z0_hat, anchor, s, s_prev, sc, rng)?;
        debug_assert_eq!(&z.data()[..n_p * f], anchor.data());
        observe(s_prev, &z);
    }
    Ok(z)
}

/// Single-step egomotion forecast from pure noise at `S`.
pub fn sample_emf(
    em_past: &Tensor,
    n_f: usize,
    sc: &Schedule,
    predict: impl FnMut(&Tensor, usize) -> Result<Tensor>,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    reverse_chain(em_past, n_f, sc, 1, predict, |_, _| {}, rng)
}
