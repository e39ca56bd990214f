#![allow(dead_code)]

use std::path::PathBuf;

use canon_lattice::{ModelSpec, Potential};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn config_text(name: &str) -> String {
    std::fs::read_to_string(config_path(name)).expect("config file")
}

/// Gaussian part of the reference model.
pub fn reference_band(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Zero, &[-0.15, -0.1], 0.5, n).unwrap()
}

/// Range-2 double-well reference model.
pub fn reference(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15, -0.1], 0.5, n).unwrap()
}

/// Nearest-neighbour double-well model used with the transfer engine.
pub fn reference_nn(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15], 0.5, n).unwrap()
}

pub fn gaussian_nn(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Zero, &[-0.15], 0.5, n).unwrap()
}

pub fn identity(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, n).unwrap()
}
