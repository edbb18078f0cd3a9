//! Manifests, image I/O, toy textures, augmentation, and the latent store.

pub mod augment;
pub mod image_io;
pub mod latent_store;
pub mod manifest;
pub mod minc;
pub mod toy;

pub use manifest::{DatasetManifest, Record, Split};
pub use toy::{render_texture, synth_toy_textures};
