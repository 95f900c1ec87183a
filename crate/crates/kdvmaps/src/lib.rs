pub mod algebra;
pub mod cli;
pub mod error;
pub mod hamiltonian;
pub mod maps;
pub mod models;
pub mod riemann;
pub mod spectral;
pub mod verify;
