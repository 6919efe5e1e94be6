//! Domain diversification of jigsaw tiles.
//!
//! Shuffled tiles are pushed toward randomly drawn texture exemplars by
//! matching per-channel mean and std (AdaIN), interpolated by γ. By default
//! the transfer happens on pixel channels; a small learned encoder/decoder
//! can be trained to do it in feature space instead.
//!
//! The shift uses the *target* mean, `σ_t·(x − μ_s)/σ_s + μ_t`, as in the
//! standard AdaIN formulation.

mod adain;
mod coder;
mod controller;
mod losses;
mod pool;
mod train;

pub use adain::{adain, adain_to, stylize, ChannelMoments, Stylizer};
pub use coder::CoderPair;
pub use controller::{decision_log, diversify_batch, diversify_grid, Decision, DiversifierConfig, Mode, TileDecision};
pub use losses::{adjacent_diversity, adjacent_diversity_seq, content_loss, style_loss, Phi};
pub use pool::{DomainPool, Exemplar, POOL_MANIFEST};
pub use train::{train_decoder, DecoderHistory, DecoderTraining};
