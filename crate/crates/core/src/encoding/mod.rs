//! Position and direction encoders.

mod hashgrid;
mod sh;

pub use hashgrid::{hash_index, GridCache, HashGrid, HashGridConfig, SparseGridGrad, HASH_PRIMES};
pub use sh::{checked_direction, sh_basis, sh_basis_into, sh_dim, MAX_SH_DEGREE};
