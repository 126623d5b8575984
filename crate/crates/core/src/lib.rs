pub mod adelic;
pub mod berkovich;
pub mod cli;
pub mod degree;
pub mod energy;
pub mod hessian;
pub mod psh1d;
pub mod rational;
