//! Numerical toolkit for quasiconvexity of matrix energies: power-kernel
//! inequalities, periodic spectral fields, Korn ratios, symmetric-to-full
//! extensions of energies, and deficit searches over periodic test fields.

pub mod cli;
pub mod energies;
pub mod fields;
pub mod kernels;
pub mod korn;
pub mod matrix;
pub mod quadrature;
pub mod qctest;
pub mod rng;

pub use matrix::Matrix;
