//! Feature extraction: egomotion latents from homographies, hand-motion
//! latents from fused VL/waypoint/task/target features, and voxel patches from
//! arm-free point clouds.

pub mod egomotion;
pub mod fusion;
pub mod voxel;

use rand::Rng;

pub use egomotion::{egomotion_inputs, encode_egomotion, homography_features};
pub use fusion::{
    encode_waypoints, make_target_indicator, provide_task_embedding, provide_vl_features,
    stub_embedding, vl_fuse, FeatureBundle, FusionMode,
};
pub use voxel::{encode_voxels, preprocess_pointcloud, scene_grid, voxelize};

use crate::config::ModelConfig;
use crate::numerics::nn::{init_linear, init_mlp, init_projection};
use crate::numerics::ParamStore;

/// Registers every encoder parameter under `enc.*`.
pub fn init_encoders(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    let (f, x) = (cfg.latent_dim, cfg.feature_dim);
    init_mlp(store, "enc.ego", &[9, f, f], rng);
    init_mlp(store, "enc.wp", &[cfg.mode.width(), x, x], rng);
    init_projection(store, "enc.vl", cfg.vl_width(), x, rng);
    init_mlp(store, "enc.fuse", &[3 * x + cfg.targets(), f, f], rng);
    if cfg.voxels {
        store.init_uniform("enc.vox.conv1.k", &[8, 1, 4, 4, 4], 64, rng);
        store.init_uniform("enc.vox.conv1.b", &[8], 64, rng);
        store.init_uniform("enc.vox.conv2.k", &[16, 8, 2, 2, 2], 64, rng);
        store.init_uniform("enc.vox.conv2.b", &[16], 64, rng);
        init_linear(store, "enc.vox.mlp.0", 16, f, rng);
        init_linear(store, "enc.vox.mlp.1", f, f, rng);
    }
}
