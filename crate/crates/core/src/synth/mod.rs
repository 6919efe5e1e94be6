//! Procedural shape/texture benchmark.
//!
//! Six shape classes are painted over a background in one of several
//! texture domains. In the source domains the object colour is correlated
//! with the class, which gives a texture shortcut; the held-out target
//! domain paints objects in random colours, and cue-conflict images pair
//! one class's shape with another class's signature colour.

mod dataset;
mod io;
mod shapes;
mod texture;

pub use dataset::{
    build_cue_conflict, build_dataset, build_pool, build_splits, render_sample, signature_color, DatasetSplit,
    SampleRecord, SynthConfig,
};
pub use io::{
    manifest_line, read_config, read_dataset, read_pool, read_split, write_dataset, write_split, POOL_DIR, SPLITS,
};
pub use shapes::{ShapeClass, ShapeKind, MAX_AREA, MIN_AREA};
pub use texture::{hsv, Texture, TextureDomain, TextureKind};
