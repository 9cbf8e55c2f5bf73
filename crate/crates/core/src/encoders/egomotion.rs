use crate::data::geometry::{det3, mat3_mul, normalize_homography, Mat3};
use crate::error::{Error, Result};
use crate::numerics::nn::mlp_forward;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Re-expresses a pixel homography in image-size-normalized coordinates and
/// subtracts the identity, so a still camera maps to the zero vector.
pub fn homography_features(h: &Mat3, image_size: (usize, usize)) -> Result<[f64; 9]> {
    let d = det3(h);
    if !(d.is_finite() && d.abs() > 1e-9) {
        return Err(Error::Validation(format!(
            "singular homography (det {d:e})"
        )));
    }
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let s = [[1.0 / iw, 0.0, 0.0], [0.0, 1.0 / ih, 0.0], [0.0, 0.0, 1.0]];
    let s_inv = [[iw, 0.0, 0.0], [0.0, ih, 0.0], [0.0, 0.0, 1.0]];
    let n = normalize_homography(&mat3_mul(&mat3_mul(&s, h), &s_inv));
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = n[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// `T×9` encoder input for a homography sequence.
pub fn egomotion_inputs(homs: &[Mat3], image_size: (usize, usize)) -> Result<Tensor> {
    let mut data = Vec::with_capacity(homs.len() * 9);
    for (t, h) in homs.iter().enumerate() {
        let feats = homography_features(h, image_size).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("frame {t}: {m}")),
            other => other,
        })?;
        data.extend_from_slice(&feats);
    }
    Tensor::matrix(homs.len(), 9, data)
}

/// Shared two-layer MLP applied to each frame's 9-vector, rows standardized.
pub fn encode_egomotion(g: &mut Graph, store: &ParamStore, inputs: Var) -> Result<Var> {
    let h = mlp_forward(g, store, "enc.ego", 2, inputs)?;
    g.normalize_rows(h, super::fusion::LATENT_EPS)
}
