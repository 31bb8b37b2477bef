//! Core pipeline for optimizing an adversarial logo texture against a
//! differentiable object detector.
//!
//! A 2D logo texture is mapped onto a selected submesh of a 3D host mesh
//! (one constant-color texture cube per face), the scene is rendered with a
//! software perspective rasterizer, composited over a background, and fed to
//! a small single-class grid detector. Because geometry stays fixed, the
//! pixel-to-face assignment is constant and the whole chain is exactly
//! differentiable with respect to the logo texture, which is optimized with
//! Adam to suppress the detector's confidence.
//!
//! The crate is `no_std` + `alloc`; everything that touches files (PNG, CSV,
//! JSON, OBJ on disk) lives in the companion CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod detector;
pub mod error;
pub mod harness;
pub mod logo;
mod math;
pub mod mesh;
pub mod render;
pub mod rng;
pub mod tensor;

pub use error::Error;
