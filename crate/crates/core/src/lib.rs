//! Finite-element solver for elliptic optimal control problems whose
//! objective measures the state at a finite set of points.
//!
//! The control is discretised implicitly: only the state and adjoint live in
//! the P1 space, and the control is recovered as the pointwise projection
//! `u_h = P_[a,b](-p_h / nu)`. The resulting nonsmooth optimality system is
//! solved with a semismooth Newton method.
//!
//! Modules, bottom-up:
//! - [`mesh`]: conforming simplicial meshes of the unit square, disk and ball
//! - [`quadrature`]: Gauss rules on reference simplices
//! - [`sparse`]: CSR storage, BiCGStab with ILU(0)/Gauss-Seidel, dense oracle
//! - [`assembly`]: P1 operators, point functionals, evaluation and norms
//! - [`optctl`]: the semismooth Newton solver
//! - [`bench`]: exact benchmarks and convergence studies
//! - [`vtk`]: legacy VTK output

pub mod assembly;
pub mod bench;
pub mod error;
pub mod mesh;
pub mod optctl;
pub mod quadrature;
pub mod sparse;
pub mod vtk;

pub use error::{Error, Result};
