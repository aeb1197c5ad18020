//! Deterministic input encodings: multiresolution hash grid for positions,
//! sinusoidal frequency embedding, and a spherical-harmonics basis for view
//! directions.

mod frequency;
mod hash_grid;
mod spherical;

pub use frequency::{frequency_encode, frequency_encode_backward, FrequencyConfig};
pub use hash_grid::{hash_encode, hash_encode_backward, HashGridConfig};
pub use spherical::{sh_encode, ShConfig};
