//! Conditional denoising diffusion for point clouds: variance schedule,
//! latent encoder, forward noising, reverse denoising (discrete chain and
//! SDE), and joint training.

pub mod forward;
pub mod model;
pub mod reverse;
pub mod schedule;
#[cfg(test)]
mod tests;
pub mod train;

pub use forward::{diffuse_closed_form, forward_step};
pub use model::{DiffusionConfig, DiffusionModel, LatentCode};
pub use reverse::{
    reverse_step, reverse_step_with_eps, score_from_eps, score_from_eps_array,
    sde_reverse_integrate,
};
pub use schedule::NoiseSchedule;
pub use train::{train_diffusion, DiffusionTrainConfig, DiffusionTrainReport};
