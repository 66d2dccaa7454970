//! Region-guided scribble matting.
//!
//! The pipeline over-segments an image into superpixels, repeatedly suggests
//! the most informative grid region for user scribbles, spreads the sparse
//! labels with an absorbing Markov chain, refines them with a small per-image
//! CNN, synthesizes a trimap and solves a closed-form alpha matte.

pub mod cnnprop;
pub mod error;
pub mod image;
pub mod imagegraph;
pub mod infoselect;
pub mod labelstate;
pub mod markovprop;
pub mod mattesolver;
pub mod session;
pub mod sparse;
pub mod synthetic;

pub use error::{Error, Result};
pub use image::{load_image, Image};
