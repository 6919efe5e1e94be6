//! Shape-biased jigsaw pretext training.
//!
//! Images are cut into an n×n tile grid, shuffled by one of a fixed set of
//! maximally distant permutations, and each tile of a shuffled image may be
//! pushed toward a random texture domain by channel-statistics transfer. A
//! small convnet learns the object class from ordered images and the
//! permutation index from all images, so texture is no help for the pretext
//! task and the shared features lean on shape.

pub mod archive;
pub mod autodiff;
pub mod config;
pub mod diversify;
pub mod error;
pub mod eval;
pub mod jigsaw;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};

/// Asks the C allocator to keep freed memory in the heap instead of returning
/// it to the OS. Every training step allocates and frees the same handful of
/// multi-megabyte activation buffers; without this, glibc hands them back via
/// `munmap` and the next step pays the page faults again (roughly a third of
/// step time at the default model size). No-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables; it is safe to call at
    // any time, and a rejected setting just leaves the default in place.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
