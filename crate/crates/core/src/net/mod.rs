//! Forward passes of the descriptor networks.

mod attention;
mod decoder;
mod embed;
mod linear;
mod pool;
mod weights;

pub use attention::{mhca_forward, rasa_forward, relative_angle_deg, tasa_forward, AttentionWeights, LayerKind, NormKind};
pub use decoder::{decode_local_view, interact};
pub use embed::{sinusoidal_embed, GeomEmbeddingParams};
pub use linear::{Activation, Linear};
pub use pool::{global_pool, Pooling};
pub use weights::{DecoderWeights, Mlp, NetConfig, ARCHIVE_FORMAT, ARCHIVE_VERSION};
