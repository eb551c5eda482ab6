use super::geometry::{mean_distance_to_line, segment_intersection};
use super::grid::{CartesianSpec, Cell, CellKind, Connection, ConnectionKind, EdfmGrid, WellTag};
use crate::dfn::{clip_segment_to_box, FractureNetwork, FracturePlane};
use crate::error::{Error, Result};

/// Piece of a fracture plane inside one matrix cell.
#[derive(Debug, Clone, Copy)]
struct Segment {
    /// Parameter interval along the plane's trace.
    t0: f64,
    t1: f64,
    /// Trace length inside the host cell (m).
    length: f64,
    host: usize,
    cell: usize,
}

/// Split a trace at every grid line it crosses.
fn split_trace(plane: &FracturePlane, spec: &CartesianSpec) -> Vec<(f64, f64, usize)> {
    let (dx, dy) = (spec.dx(), spec.dy());
    let (a, b) = (plane.start, plane.end);
    let total = plane.trace_length();
    let mut ts = vec![0.0, 1.0];
    for (axis, n, h) in [(0usize, spec.nx, dx), (1usize, spec.ny, dy)] {
        let delta = b[axis] - a[axis];
        if delta == 0.0 {
            continue;
        }
        for k in 1..n {
            let t = (k as f64 * h - a[axis]) / delta;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let min_len = 1e-9 * dx.min(dy);
    let mut pieces = Vec::new();
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if (t1 - t0) * total <= min_len {
            continue;
        }
        let mid = plane.point_at(0.5 * (t0 + t1));
        let (ix, iy) = spec.locate(mid);
        pieces.push((t0, t1, spec.cell_index(ix, iy)));
    }
    pieces
}

/// Harmonic (star–delta for two branches) combination.
fn series(t1: f64, t2: f64) -> f64 {
    t1 * t2 / (t1 + t2)
}

/// Embed a fracture network into a pure matrix grid, appending one fracture
/// cell per (plane, intersected matrix cell) and the MF / FF connections.
pub fn embed_fractures(grid: &EdfmGrid, network: &FractureNetwork) -> Result<EdfmGrid> {
    if grid.n_fracture() != 0 {
        return Err(Error::Geometry("grid already contains fracture cells".into()));
    }
    let spec = grid.spec;
    let [lx, ly, lz] = spec.extent;
    let mut out = grid.clone();

    let mut planes: Vec<FracturePlane> = Vec::new();
    for plane in &network.planes {
        if !(plane.aperture > 0.0 && plane.perm_md > 0.0) {
            return Err(Error::Geometry(format!(
                "fracture with non-positive aperture or permeability: {plane:?}"
            )));
        }
        let Some((t0, t1)) = clip_segment_to_box(plane.start, plane.end, lx, ly) else {
            continue;
        };
        let mut clipped = *plane;
        clipped.start = plane.point_at(t0);
        clipped.end = plane.point_at(t1);
        clipped.z_extent = [plane.z_extent[0].max(0.0), plane.z_extent[1].min(lz)];
        if clipped.trace_length() > 0.0 && clipped.height() > 0.0 {
            planes.push(clipped);
        }
    }

    let mut segments: Vec<Vec<Segment>> = Vec::with_capacity(planes.len());
    for plane in &planes {
        let height = plane.height();
        let total = plane.trace_length();
        let zc = 0.5 * (plane.z_extent[0] + plane.z_extent[1]);
        let mut segs = Vec::new();
        for (t0, t1, host) in split_trace(plane, &spec) {
            let length = (t1 - t0) * total;
            let mid = plane.point_at(0.5 * (t0 + t1));
            let cell = out.cells.len();
            out.cells.push(Cell {
                kind: CellKind::Fracture,
                volume: length * height * plane.aperture,
                porosity: plane.porosity,
                perm_md: plane.perm_md,
                centroid: [mid[0], mid[1], zc],
                well: WellTag::None,
            });
            let host_cell = grid.cells[host];
            let (ix, iy) = (host % spec.nx, host / spec.nx);
            let mean_d = mean_distance_to_line(spec.cell_bounds(ix, iy), plane.start, plane.direction());
            let area = length * height;
            let t_mf = area / (mean_d / host_cell.perm_md + 0.5 * plane.aperture / plane.perm_md);
            out.connections.push(Connection {
                i: host,
                j: cell,
                kind: ConnectionKind::MatrixFracture,
                trans_md_m: t_mf,
            });
            segs.push(Segment {
                t0,
                t1,
                length,
                host,
                cell,
            });
        }
        // Neighbouring pieces of the same plane share an edge of length `height`.
        let half = |s: &Segment| plane.perm_md * plane.aperture * height / (0.5 * s.length);
        for w in segs.windows(2) {
            out.connections.push(Connection {
                i: w[0].cell,
                j: w[1].cell,
                kind: ConnectionKind::FractureFracture,
                trans_md_m: series(half(&w[0]), half(&w[1])),
            });
        }
        segments.push(segs);
    }

    for p in 0..planes.len() {
        for q in (p + 1)..planes.len() {
            let (fp, fq) = (&planes[p], &planes[q]);
            let Some((sp, sq)) = segment_intersection(fp.start, fp.end, fq.start, fq.end) else {
                continue;
            };
            let (Some(seg_p), Some(seg_q)) = (locate_segment(&segments[p], sp), locate_segment(&segments[q], sq))
            else {
                continue;
            };
            let shared = fp.z_extent[1].min(fq.z_extent[1]) - fp.z_extent[0].max(fq.z_extent[0]);
            if shared <= 0.0 {
                continue;
            }
            let half = |plane: &FracturePlane, seg: &Segment, t: f64| {
                let a = ((t - seg.t0) * plane.trace_length()).clamp(0.0, seg.length);
                let b = seg.length - a;
                let mean_d = (a * a + b * b) / (2.0 * seg.length);
                plane.perm_md * plane.aperture * shared / mean_d
            };
            let t = series(half(fp, seg_p, sp), half(fq, seg_q, sq));
            let (i, j) = if seg_p.cell < seg_q.cell {
                (seg_p.cell, seg_q.cell)
            } else {
                (seg_q.cell, seg_p.cell)
            };
            out.connections.push(Connection {
                i,
                j,
                kind: ConnectionKind::FractureFracture,
                trans_md_m: t,
            });
        }
    }
    debug_assert!(segments.iter().flatten().all(|s| s.host < grid.n_cells()));
    Ok(out)
}

/// Segment whose parameter interval contains `t` (nearest one when `t` falls
/// into a dropped sliver).
fn locate_segment(segs: &[Segment], t: f64) -> Option<&Segment> {
    segs.iter().find(|s| t >= s.t0 && t <= s.t1).or_else(|| {
        segs.iter().min_by(|a, b| {
            let da = (a.t0 - t).abs().min((a.t1 - t).abs());
            let db = (b.t0 - t).abs().min((b.t1 - t).abs());
            da.total_cmp(&db)
        })
    })
}

/// Cartesian grid plus embedded fractures.
pub fn build_edfm_grid(spec: CartesianSpec, network: &FractureNetwork) -> Result<EdfmGrid> {
    let grid = EdfmGrid::cartesian(spec)?;
    embed_fractures(&grid, network)
}
