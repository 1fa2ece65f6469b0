//! Leveled homomorphic encryption on power-of-two cyclotomic rings, with
//! residue-system plaintext decomposition, slot batching, an interval-checked
//! computation graph, and automatic parameter selection.

pub mod bfv;
pub mod encode;
pub mod exec;
pub mod graph;
pub mod modring;
pub mod params;
