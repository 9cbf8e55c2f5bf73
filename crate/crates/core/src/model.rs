//! A model is its configuration plus a parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::denoiser::{init_decoders, init_emf, init_hmtm};
use crate::encoders::init_encoders;
use crate::error::Result;
use crate::numerics::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_encoders(&mut params, &config, &mut rng);
        init_emf(&mut params, &config, &mut rng);
        init_hmtm(&mut params, &config, &mut rng);
        init_decoders(&mut params, &config, &mut rng);
        Ok(Self { config, params })
    }
}
