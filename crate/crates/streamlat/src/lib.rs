pub mod compensation;
pub mod eval;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod prediction;
pub mod propagation;
pub mod rng;
pub mod stream;
pub mod worldgen;
