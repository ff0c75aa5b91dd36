//! Conditioned field generators: voxel-conditioned feature grid with stuff head,
//! object head, sky dome, and the neural renderer's parameters.

pub mod arch;
pub mod checks;
pub mod encoding;
pub mod fields;
pub mod latent;
pub mod layers;
pub mod render_net;
pub mod trilerp;
pub mod volume;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use arch::ArchConfig;
pub use encoding::positional_encoding;
pub use fields::{FieldNodes, FieldSample};
pub use latent::LatentCode;

use crate::error::{Error, Result};
use crate::optim::ParamStore;

/// All generator parameters θ for a fixed architecture and label count.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub arch: ArchConfig,
    pub num_labels: usize,
    pub params: ParamStore,
}

impl Generator {
    pub fn init(arch: &ArchConfig, num_labels: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        volume::init(&mut params, arch, num_labels, &mut rng);
        fields::init_stuff(&mut params, arch, &mut rng);
        fields::init_object(&mut params, arch, &mut rng);
        fields::init_sky(&mut params, arch, &mut rng);
        render_net::init(&mut params, arch, &mut rng);
        Ok(Self { arch: arch.clone(), num_labels, params })
    }

    /// Wraps loaded parameters after checking they match a fresh initialization's layout.
    pub fn from_params(arch: &ArchConfig, num_labels: usize, params: ParamStore) -> Result<Self> {
        let reference = Self::init(arch, num_labels, 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape("generator", format!("{name}: {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        Ok(Self { arch: arch.clone(), num_labels, params })
    }
}
