pub mod cli;
pub mod cpmap;
pub mod ergodic;
pub mod error;
pub mod fock;
pub mod invariants;
pub mod numerics;
pub mod poisson;
pub mod random;
pub mod similarity;
