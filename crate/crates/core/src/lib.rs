pub mod eval;
pub mod ltl;
pub mod model;
pub mod numerics;
pub mod simgen;
pub mod train;
