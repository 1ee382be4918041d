pub mod cli;
pub mod multiindex;
pub mod polys;
pub mod potential;
pub mod quadrature;
pub mod residue;
pub mod rhs_dsl;
pub mod solver;
pub mod specfun;
