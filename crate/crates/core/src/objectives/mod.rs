//! Reconstruction and adversarial objectives, per-scene fitting, and a toy GAN loop.

pub mod checks;
pub mod discriminator;
pub mod fit;
pub mod gan;
pub mod recon;
pub mod toy;

pub use discriminator::Discriminator;
pub use fit::{fit_scene, FitConfig, FitReport, LossRow, PosedImage};
pub use gan::{gan_loss_d, gan_loss_g, DLoss};
pub use recon::{build_stuff_mask, masked_recon_loss, FeatureDistance, PyramidDistance, ReconLoss};
pub use toy::{train_toy, ToyConfig, ToyReport, ToyRow};
