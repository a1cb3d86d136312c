//! Real-time dynamics of true-vacuum bubbles in the 2D Ising model with
//! transverse and longitudinal fields, simulated with binary tree tensor
//! networks and single-site TDVP, plus an exact-evolution oracle for small
//! lattices.

pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod lattice;
pub mod oracle;
pub mod shapes;
pub mod tdvp;
pub mod tensor;
pub mod ttn;

pub use error::{Error, Result};
pub use hamiltonian::{build_terms, classical_energy, dense_hamiltonian, IsingParams, Pauli, TermList};
pub use oracle::{evolve_exact, evolve_exact_with, DenseState, ExactMethod, ExactOptions};
pub use lattice::{hilbert_ordering, Coord, LatticeGeometry, SiteOrdering};
pub use shapes::{make_shape, ShapeKind, ShapeMask, ShapeSpec, ShapeStats};
pub use ttn::{Observable, TreeState};
pub use tdvp::{TdvpConfig, TdvpEngine};
