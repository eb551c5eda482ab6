use serde::{Deserialize, Serialize};

use crate::edfm::EdfmGrid;
use crate::error::{Error, Result};

/// Rate-controlled water injector plus BHP-controlled producer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub injector: usize,
    /// Water injection rate at surface conditions (m³/s).
    pub q_inj: f64,
    pub producer: usize,
    /// Producer bottom-hole pressure (Pa).
    pub bhp: f64,
    /// Producer well index (md·m).
    pub wi_md_m: f64,
}

impl WellSpec {
    pub fn validate(&self, n_cells: usize) -> Result<()> {
        if self.injector == self.producer {
            return Err(Error::Config("injector and producer share a cell".into()));
        }
        if self.injector >= n_cells || self.producer >= n_cells {
            return Err(Error::Config("well cell index out of range".into()));
        }
        if !(self.q_inj >= 0.0 && self.bhp > 0.0 && self.wi_md_m > 0.0) {
            return Err(Error::Config(format!("invalid well controls {self:?}")));
        }
        Ok(())
    }
}

/// Peaceman well index (md·m) for a vertical well in a Cartesian cell.
pub fn peaceman_index(perm_md: f64, dx: f64, dy: f64, height: f64, well_radius: f64, skin: f64) -> f64 {
    let r_eq = 0.14 * (dx * dx + dy * dy).sqrt();
    2.0 * std::f64::consts::PI * perm_md * height / ((r_eq / well_radius).ln() + skin)
}

/// Wells at the grid's tagged source/sink cells.
pub fn wells_for_grid(grid: &EdfmGrid, q_inj: f64, bhp: f64, well_radius: f64, skin: f64) -> Result<WellSpec> {
    let injector = grid
        .injector()
        .ok_or_else(|| Error::Config("grid has no source cell".into()))?;
    let producer = grid
        .producer()
        .ok_or_else(|| Error::Config("grid has no sink cell".into()))?;
    let spec = &grid.spec;
    let wi = peaceman_index(
        grid.cells[producer].perm_md,
        spec.dx(),
        spec.dy(),
        spec.extent[2],
        well_radius,
        skin,
    );
    let wells = WellSpec {
        injector,
        q_inj,
        producer,
        bhp,
        wi_md_m: wi,
    };
    wells.validate(grid.n_cells())?;
    Ok(wells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaceman_reference_value() {
        // r_eq = 0.14·√200 ≈ 1.9799 m for 10 m cells.
        let wi = peaceman_index(50.0, 10.0, 10.0, 5.0, 0.1, 0.0);
        let expected = 2.0 * std::f64::consts::PI * 250.0 / (0.14 * 200f64.sqrt() / 0.1).ln();
        assert!((wi - expected).abs() < 1e-12);
        assert!(wi > 0.0);
    }
}
