//! Embedded discrete fracture model: a Cartesian matrix grid with fracture
//! cells attached through non-neighbouring connections.

mod embed;
pub mod geometry;
mod grid;

pub use embed::{build_edfm_grid, embed_fractures};
pub use grid::{
    grid_pore_volume, tpfa_mm_transmissibility, CartesianSpec, Cell, CellKind, Connection, ConnectionKind, EdfmGrid,
    WellTag,
};
