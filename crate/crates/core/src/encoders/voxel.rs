use crate::config::GridMeta;
use crate::data::geometry::{mat4_mul, rigid_inverse, rigidity_error, transform_point, Mat4};
use crate::data::Clip;
use crate::error::{Error, Result};
use crate::numerics::nn::mlp_forward;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Drops arm points and moves the rest by `pose`, keeping their order.
pub fn preprocess_pointcloud(points: &Tensor, arm_mask: &[bool], pose: &Mat4) -> Result<Tensor> {
    let (n, c) = points.dims2()?;
    if c != 3 || arm_mask.len() != n {
        return Err(Error::Dimension(format!(
            "point cloud {:?} with {} mask entries",
            points.shape(),
            arm_mask.len()
        )));
    }
    let err = rigidity_error(pose);
    if err.is_nan() || err > 1e-6 {
        return Err(Error::Validation(format!(
            "pose is not rigid (deviation {err:e})"
        )));
    }
    let mut out = Vec::new();
    for (r, masked) in arm_mask.iter().enumerate() {
        if !masked {
            let p = points.row(r);
            out.extend_from_slice(&transform_point(pose, &[p[0], p[1], p[2]]));
        }
    }
    Tensor::matrix(out.len() / 3, 3, out)
}

/// Per-cell point counts scaled by the largest count, shaped `[1, dx, dy, dz]`.
/// Cell index is `floor((p - origin) / resolution)`; points outside the grid
/// are dropped.
pub fn voxelize(points: &Tensor, grid: &GridMeta) -> Result<Tensor> {
    let [dx, dy, dz] = grid.dims;
    let mut counts = vec![0.0; dx * dy * dz];
    if !points.is_empty() {
        let (n, c) = points.dims2()?;
        if c != 3 {
            return Err(Error::Dimension(format!(
                "points must be n×3, got {:?}",
                points.shape()
            )));
        }
        for r in 0..n {
            let p = points.row(r);
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let k = ((p[a] - grid.origin[a]) / grid.resolution).floor();
                if !(k >= 0.0 && k < grid.dims[a] as f64) {
                    inside = false;
                    break;
                }
                idx[a] = k as usize;
            }
            if inside {
                counts[(idx[0] * dy + idx[1]) * dz + idx[2]] += 1.0;
            }
        }
    }
    let max = counts.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut counts {
            *v /= max;
        }
    }
    Tensor::new(vec![1, dx, dy, dz], counts)
}

/// Voxel grid of the first `frames` point clouds, in first-camera coordinates.
pub fn scene_grid(clip: &Clip, frames: usize, grid: &GridMeta) -> Result<Tensor> {
    let clouds = clip.point_clouds.as_ref().ok_or_else(|| {
        Error::Validation(format!(
            "clip {}: point clouds are required for voxel context",
            clip.id
        ))
    })?;
    let poses = clip.poses.as_ref().ok_or_else(|| {
        Error::Validation(format!(
            "clip {}: poses are required for voxel context",
            clip.id
        ))
    })?;
    let first_inv = rigid_inverse(&poses[0]);
    let mut all = Vec::new();
    for t in 0..frames.min(clouds.len()) {
        let rel = mat4_mul(&first_inv, &poses[t]);
        let pts = preprocess_pointcloud(&clouds[t].points, &clouds[t].arm_mask, &rel)?;
        all.extend_from_slice(pts.data());
    }
    voxelize(&Tensor::matrix(all.len() / 3, 3, all)?, grid)
}

/// Two strided 3D convolutions (20³ → 6³ → 3³) and a channel MLP: 27 patches × f.
pub fn encode_voxels(g: &mut Graph, store: &ParamStore, grid: Var) -> Result<Var> {
    if g.shape(grid) != [1, 20, 20, 20] {
        return Err(Error::Dimension(format!(
            "voxel encoder expects a [1, 20, 20, 20] grid, got {:?}",
            g.shape(grid)
        )));
    }
    let k1 = g.param(store, "enc.vox.conv1.k")?;
    let b1 = g.param(store, "enc.vox.conv1.b")?;
    let h = g.conv3d(grid, k1, b1, 3)?;
    let h = g.silu(h);
    let k2 = g.param(store, "enc.vox.conv2.k")?;
    let b2 = g.param(store, "enc.vox.conv2.b")?;
    let h = g.conv3d(h, k2, b2, 2)?;
    let h = g.silu(h);
    let h = g.reshape(h, &[16, 27])?;
    let h = g.transpose(h)?;
    mlp_forward(g, store, "enc.vox.mlp", 2, h)
}
