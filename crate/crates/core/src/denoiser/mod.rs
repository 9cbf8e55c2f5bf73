//! Denoising networks of both diffusion branches and the latent decoders.

pub mod attention;
pub mod decoders;
pub mod hmtm;
pub mod scan;

pub use attention::{attention, init_attention, mhca, mhsa};
pub use decoders::{decode_states, decode_trajectory, init_decoders};
pub use hmtm::{
    block_prefix, emf_denoiser, hmtm_forward, init_emf, init_hmtm, init_transformer_block,
    sat_block, step_embedding, tat_block, transformer_block, zero_block_outputs, Conditioning,
};
pub use scan::{eam_block, init_scan_block, mdss_scan, scan_block, selective_scan};
