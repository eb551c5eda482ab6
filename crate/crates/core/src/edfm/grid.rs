use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Matrix,
    Fracture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellTag {
    Source,
    Sink,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    /// Bulk volume (m³).
    pub volume: f64,
    pub porosity: f64,
    pub perm_md: f64,
    /// Centroid (m).
    pub centroid: [f64; 3],
    pub well: WellTag,
}

impl Cell {
    pub fn pore_volume(&self) -> f64 {
        self.porosity * self.volume
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionKind {
    #[serde(rename = "MM")]
    MatrixMatrix,
    #[serde(rename = "MF")]
    MatrixFracture,
    #[serde(rename = "FF")]
    FractureFracture,
}

/// Undirected flux connection, stored once with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub i: usize,
    pub j: usize,
    pub kind: ConnectionKind,
    /// Static transmissibility (md·m).
    #[serde(rename = "T_md_m")]
    pub trans_md_m: f64,
}

/// Single-layer Cartesian matrix grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianSpec {
    pub nx: usize,
    pub ny: usize,
    /// Domain extent `[lx, ly, lz]` (m).
    pub extent: [f64; 3],
    pub porosity: f64,
    pub perm_md: f64,
}

impl CartesianSpec {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dx(&self) -> f64 {
        self.extent[0] / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.extent[1] / self.ny as f64
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        ix + self.nx * iy
    }

    /// Matrix cell containing the horizontal point `p`; points on the far
    /// boundary belong to the last cell.
    pub fn locate(&self, p: [f64; 2]) -> (usize, usize) {
        let ix = ((p[0] / self.dx()).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((p[1] / self.dy()).floor().max(0.0) as usize).min(self.ny - 1);
        (ix, iy)
    }

    pub fn cell_bounds(&self, ix: usize, iy: usize) -> [[f64; 2]; 2] {
        let (dx, dy) = (self.dx(), self.dy());
        [
            [ix as f64 * dx, (ix + 1) as f64 * dx],
            [iy as f64 * dy, (iy + 1) as f64 * dy],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config("grid resolution must be at least 1×1".into()));
        }
        if self.extent.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config(format!("non-positive extent {:?}", self.extent)));
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0 && self.perm_md > 0.0) {
            return Err(Error::Config("matrix porosity/permeability out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfmGrid {
    pub spec: CartesianSpec,
    pub cells: Vec<Cell>,
    pub connections: Vec<Connection>,
}

/// Harmonic combination of two TPFA half-transmissibilities across a shared
/// face. Returns 0 for an impermeable side or a degenerate face.
pub fn tpfa_mm_transmissibility(k_i: f64, k_j: f64, area: f64, d_i: f64, d_j: f64) -> f64 {
    if !(area > 0.0 && k_i > 0.0 && k_j > 0.0) {
        return 0.0;
    }
    1.0 / (d_i / (k_i * area) + d_j / (k_j * area))
}

/// Total pore volume (m³) over matrix and fracture cells.
pub fn grid_pore_volume(grid: &EdfmGrid) -> f64 {
    grid.cells.iter().map(Cell::pore_volume).sum()
}

impl EdfmGrid {
    /// Pure Cartesian TPFA grid with the injector in the lower-left cell and
    /// the producer in the upper-right cell.
    pub fn cartesian(spec: CartesianSpec) -> Result<Self> {
        spec.validate()?;
        let (dx, dy, lz) = (spec.dx(), spec.dy(), spec.extent[2]);
        let mut cells = Vec::with_capacity(spec.n_cells());
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                cells.push(Cell {
                    kind: CellKind::Matrix,
                    volume: dx * dy * lz,
                    porosity: spec.porosity,
                    perm_md: spec.perm_md,
                    centroid: [(ix as f64 + 0.5) * dx, (iy as f64 + 0.5) * dy, 0.5 * lz],
                    well: WellTag::None,
                });
            }
        }
        let injector = spec.cell_index(0, 0);
        let producer = spec.cell_index(spec.nx - 1, spec.ny - 1);
        if injector != producer {
            cells[injector].well = WellTag::Source;
            cells[producer].well = WellTag::Sink;
        }

        let mut connections = Vec::new();
        let mut push = |i: usize, j: usize, t: f64| {
            if t > 0.0 {
                connections.push(Connection {
                    i,
                    j,
                    kind: ConnectionKind::MatrixMatrix,
                    trans_md_m: t,
                });
            }
        };
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let i = spec.cell_index(ix, iy);
                if ix + 1 < spec.nx {
                    let j = spec.cell_index(ix + 1, iy);
                    let t = tpfa_mm_transmissibility(cells[i].perm_md, cells[j].perm_md, dy * lz, 0.5 * dx, 0.5 * dx);
                    push(i, j, t);
                }
                if iy + 1 < spec.ny {
                    let j = spec.cell_index(ix, iy + 1);
                    let t = tpfa_mm_transmissibility(cells[i].perm_md, cells[j].perm_md, dx * lz, 0.5 * dy, 0.5 * dy);
                    push(i, j, t);
                }
            }
        }
        Ok(Self {
            spec,
            cells,
            connections,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_matrix(&self) -> usize {
        self.spec.n_cells()
    }

    pub fn n_fracture(&self) -> usize {
        self.cells.len() - self.n_matrix()
    }

    pub fn injector(&self) -> Option<usize> {
        self.cells.iter().position(|c| c.well == WellTag::Source)
    }

    pub fn producer(&self) -> Option<usize> {
        self.cells.iter().position(|c| c.well == WellTag::Sink)
    }

    /// Write `grid.json`; floats carry 17 significant digits.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        jsonfmt::write_file(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        jsonfmt::read_file(path)
    }

    /// Check the structural invariants of an assembled grid.
    pub fn validate(&self) -> Result<()> {
        for (idx, c) in self.cells.iter().enumerate() {
            if !(c.volume > 0.0 && c.porosity > 0.0 && c.porosity <= 1.0 && c.perm_md > 0.0) {
                return Err(Error::Geometry(format!("cell {idx} has invalid properties {c:?}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut has_mf = vec![false; self.cells.len()];
        for c in &self.connections {
            if c.i >= c.j || c.j >= self.cells.len() {
                return Err(Error::Geometry(format!("bad connection indices {c:?}")));
            }
            if !(c.trans_md_m > 0.0 && c.trans_md_m.is_finite()) {
                return Err(Error::Geometry(format!("non-positive transmissibility {c:?}")));
            }
            if !seen.insert((c.i, c.j)) {
                return Err(Error::Geometry(format!("duplicate connection {c:?}")));
            }
            if c.kind == ConnectionKind::MatrixFracture {
                has_mf[c.j] = true;
            }
        }
        for (idx, cell) in self.cells.iter().enumerate() {
            if cell.kind == CellKind::Fracture && !has_mf[idx] {
                return Err(Error::Geometry(format!("fracture cell {idx} has no MF connection")));
            }
        }
        Ok(())
    }
}
