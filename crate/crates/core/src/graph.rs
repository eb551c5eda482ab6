//! Graph view of a reservoir state: one node per cell, two directed edges per
//! connection, plus the feature normalization fitted on the training split.

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::edfm::{EdfmGrid, WellTag};
use crate::error::{Error, Result};
use crate::sim::ReservoirState;

/// Node features: volume, porosity, log10 k, 3-slot well one-hot, field.
pub const NODE_WIDTH: usize = 7;
/// Edge features: log10 T, displacement (3), distance.
pub const EDGE_WIDTH: usize = 5;
/// Column of the dynamic field in the node feature matrix.
pub const FIELD_COLUMN: usize = 6;
const ONE_HOT: std::ops::Range<usize> = 3..6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Pressure,
    Saturation,
}

impl Target {
    pub fn field<'a>(&self, state: &'a ReservoirState) -> &'a [f64] {
        match self {
            Target::Pressure => &state.pressure,
            Target::Saturation => &state.saturation,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Pressure => "pressure",
            Target::Saturation => "saturation",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pressure" => Ok(Target::Pressure),
            "saturation" => Ok(Target::Saturation),
            _ => Err(Error::Config(format!("unknown target field '{s}'"))),
        }
    }
}

/// Edge `k` runs from `senders[k]` to `receivers[k]` and is aggregated at
/// the receiver. Connection `c` yields edges `2c` (i→j) and `2c + 1` (j→i).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: Array2<f64>,
    pub edges: Array2<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub step: usize,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.nrows()
    }

    pub fn field(&self) -> ArrayView1<'_, f64> {
        self.nodes.column(FIELD_COLUMN)
    }

    pub fn set_field(&mut self, y: &[f64]) {
        for (dst, &v) in self.nodes.column_mut(FIELD_COLUMN).iter_mut().zip(y) {
            *dst = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.ncols() != NODE_WIDTH {
            return Err(Error::shape("node features", NODE_WIDTH, self.nodes.ncols()));
        }
        if self.edges.ncols() != EDGE_WIDTH {
            return Err(Error::shape("edge features", EDGE_WIDTH, self.edges.ncols()));
        }
        let m = self.n_edges();
        if self.senders.len() != m || self.receivers.len() != m {
            return Err(Error::shape("edge index", m, self.senders.len()));
        }
        let n = self.n_nodes();
        if self.senders.iter().chain(&self.receivers).any(|&v| v >= n) {
            return Err(Error::Geometry("edge endpoint out of range".into()));
        }
        if self.nodes.iter().chain(self.edges.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph feature".into()));
        }
        Ok(())
    }

    /// Relabel nodes so that old node `i` becomes `perm[i]`; edges keep
    /// their order.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut nodes = Array2::zeros(self.nodes.dim());
        for (i, &p) in perm.iter().enumerate() {
            nodes.row_mut(p).assign(&self.nodes.row(i));
        }
        Graph {
            nodes,
            edges: self.edges.clone(),
            senders: self.senders.iter().map(|&s| perm[s]).collect(),
            receivers: self.receivers.iter().map(|&r| perm[r]).collect(),
            step: self.step,
        }
    }
}

/// Static part of the graph of a realization; only the field column changes
/// from step to step.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTemplate {
    graph: Graph,
}

impl GraphTemplate {
    pub fn new(grid: &EdfmGrid) -> Result<Self> {
        let n = grid.n_cells();
        let mut nodes = Array2::zeros((n, NODE_WIDTH));
        for (i, cell) in grid.cells.iter().enumerate() {
            if !(cell.perm_md > 0.0) {
                return Err(Error::Geometry(format!("cell {i} has non-positive permeability")));
            }
            let slot = match cell.well {
                WellTag::Source => 0,
                WellTag::Sink => 1,
                WellTag::None => 2,
            };
            let mut row = nodes.row_mut(i);
            row[0] = cell.volume;
            row[1] = cell.porosity;
            row[2] = cell.perm_md.log10();
            row[3 + slot] = 1.0;
        }
        let m = 2 * grid.connections.len();
        let mut edges = Array2::zeros((m, EDGE_WIDTH));
        let mut senders = Vec::with_capacity(m);
        let mut receivers = Vec::with_capacity(m);
        for (c, conn) in grid.connections.iter().enumerate() {
            if !(conn.trans_md_m > 0.0) {
                return Err(Error::Geometry(format!(
                    "connection {c} has non-positive transmissibility"
                )));
            }
            let log_t = conn.trans_md_m.log10();
            let (a, b) = (grid.cells[conn.i].centroid, grid.cells[conn.j].centroid);
            let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            for (k, sign, s, r) in [(2 * c, 1.0, conn.i, conn.j), (2 * c + 1, -1.0, conn.j, conn.i)] {
                let mut row = edges.row_mut(k);
                row[0] = log_t;
                row[1] = sign * d[0];
                row[2] = sign * d[1];
                row[3] = sign * d[2];
                row[4] = dist;
                senders.push(s);
                receivers.push(r);
            }
        }
        Ok(Self {
            graph: Graph {
                nodes,
                edges,
                senders,
                receivers,
                step: 0,
            },
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn graph(&self, state: &ReservoirState, target: Target) -> Result<Graph> {
        let y = target.field(state);
        if y.len() != self.n_nodes() {
            return Err(Error::shape("state vs grid", self.n_nodes(), y.len()));
        }
        let mut g = self.graph.clone();
        g.set_field(y);
        g.step = state.step;
        Ok(g)
    }

    /// The static graph with a zero field column.
    pub fn base(&self) -> &Graph {
        &self.graph
    }
}

/// Graph of `state` on `grid` carrying the `target` field.
pub fn build_graph(grid: &EdfmGrid, state: &ReservoirState, target: Target) -> Result<Graph> {
    GraphTemplate::new(grid)?.graph(state, target)
}

/// Per-channel affine normalization. Passthrough channels have mean 0 and
/// std 1; constant channels are centred only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub passthrough: Vec<bool>,
}

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            passthrough: vec![true; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
    }

    pub fn unapply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
    }
}

/// Streaming per-channel moments (Welford), merged in insertion order.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(width: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    fn push(&mut self, row: ArrayView1<'_, f64>) {
        self.count += 1.0;
        for (k, &x) in row.iter().enumerate() {
            let d = x - self.mean[k];
            self.mean[k] += d / self.count;
            self.m2[k] += d * (x - self.mean[k]);
        }
    }

    fn finish(&self, passthrough: &[usize]) -> ChannelStats {
        let width = self.mean.len();
        let mut stats = ChannelStats::identity(width);
        for k in 0..width {
            if passthrough.contains(&k) {
                continue;
            }
            stats.passthrough[k] = false;
            stats.mean[k] = self.mean[k];
            let std = (self.m2[k] / self.count).sqrt();
            if std > 1e-12 * self.mean[k].abs().max(1.0) {
                stats.std[k] = std;
            }
        }
        stats
    }
}

/// Normalization of one model: node and edge channels, and the scale of the
/// one-step field increment the decoder predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub target: Target,
    pub node: ChannelStats,
    pub edge: ChannelStats,
    /// Root-mean-square of the training increments `y^{n+1} - y^n`. The
    /// increment is scaled but not centred, so a zero decoder output keeps
    /// the field unchanged.
    pub delta_scale: f64,
}

/// Accumulates training graphs and increments for [`NormStats`].
#[derive(Debug, Clone)]
pub struct NormFitter {
    target: Target,
    node_static: Moments,
    field: Moments,
    edge: Moments,
    delta_sq: f64,
    delta_count: f64,
}

impl NormFitter {
    pub fn new(target: Target) -> Self {
        Self {
            target,
            node_static: Moments::new(FIELD_COLUMN),
            field: Moments::new(1),
            edge: Moments::new(EDGE_WIDTH),
            delta_sq: 0.0,
            delta_count: 0.0,
        }
    }

    /// Add the static features of one realization, once.
    pub fn add_static(&mut self, template: &GraphTemplate) {
        let base = template.base();
        for row in base.nodes.rows() {
            self.node_static.push(row.slice(s![..FIELD_COLUMN]));
        }
        for row in base.edges.rows() {
            self.edge.push(row);
        }
    }

    /// Add one field snapshot used as a network input.
    pub fn add_field(&mut self, y: &[f64]) {
        for v in y {
            self.field.push(ndarray::aview1(std::slice::from_ref(v)));
        }
    }

    /// Add one training increment `y^{n+1} - y^n`.
    pub fn add_delta(&mut self, from: &[f64], to: &[f64]) {
        for (a, b) in from.iter().zip(to) {
            self.delta_sq += (b - a) * (b - a);
            self.delta_count += 1.0;
        }
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.node_static.count == 0.0 || self.field.count == 0.0 {
            return Err(Error::Config("normalization needs at least one training sample".into()));
        }
        let one_hot: Vec<usize> = ONE_HOT.collect();
        let stat = self.node_static.finish(&one_hot);
        let field = self.field.finish(&[]);
        let mut node = ChannelStats::identity(NODE_WIDTH);
        for k in 0..FIELD_COLUMN {
            node.mean[k] = stat.mean[k];
            node.std[k] = stat.std[k];
            node.passthrough[k] = stat.passthrough[k];
        }
        node.mean[FIELD_COLUMN] = field.mean[0];
        node.std[FIELD_COLUMN] = field.std[0];
        node.passthrough[FIELD_COLUMN] = false;
        let rms = if self.delta_count > 0.0 {
            (self.delta_sq / self.delta_count).sqrt()
        } else {
            0.0
        };
        Ok(NormStats {
            target: self.target,
            node,
            edge: self.edge.finish(&[]),
            delta_scale: if rms > 0.0 { rms } else { 1.0 },
        })
    }
}

impl NormStats {
    pub fn normalize(&self, graph: &Graph) -> Graph {
        let mut g = graph.clone();
        self.node.apply(&mut g.nodes);
        self.edge.apply(&mut g.edges);
        g
    }

    pub fn denormalize(&self, graph: &Graph) -> Graph {
        let mut g = graph.clone();
        self.node.unapply(&mut g.nodes);
        self.edge.unapply(&mut g.edges);
        g
    }

    /// Normalized network input for a raw field value.
    pub fn field_in(&self, y: f64) -> f64 {
        (y - self.node.mean[FIELD_COLUMN]) / self.node.std[FIELD_COLUMN]
    }

    /// Field spread used as the unit of training errors.
    pub fn loss_unit(&self) -> f64 {
        self.node.std[FIELD_COLUMN]
    }

    /// `d field_in / d y`.
    pub fn field_in_slope(&self) -> f64 {
        1.0 / self.node.std[FIELD_COLUMN]
    }

    pub fn validate(&self) -> Result<()> {
        if self.node.width() != NODE_WIDTH || self.edge.width() != EDGE_WIDTH {
            return Err(Error::shape("normalization widths", NODE_WIDTH, self.node.width()));
        }
        let ok = |c: &ChannelStats| {
            c.std.len() == c.mean.len()
                && c.passthrough.len() == c.mean.len()
                && c.std.iter().all(|s| s.is_finite() && *s > 0.0)
                && c.mean.iter().all(|m| m.is_finite())
        };
        if !ok(&self.node) || !ok(&self.edge) || !(self.delta_scale.is_finite() && self.delta_scale > 0.0) {
            return Err(Error::Config("invalid normalization statistics".into()));
        }
        Ok(())
    }

    /// Static node and edge features of `template`, normalized.
    pub fn normalized_base(&self, template: &GraphTemplate) -> Graph {
        self.normalize(template.base())
    }

    /// Overwrite the field column of a normalized graph from raw values.
    pub fn set_field(&self, graph: &mut Graph, y: &[f64]) {
        for (dst, &v) in graph.nodes.slice_mut(s![.., FIELD_COLUMN]).iter_mut().zip(y) {
            *dst = self.field_in(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfn::{generate_dfn, CountRange, DfnConfig};
    use crate::edfm::{build_edfm_grid, CartesianSpec, Connection};
    use proptest::prelude::*;

    fn small_grid(seed: u64) -> EdfmGrid {
        let spec = CartesianSpec {
            nx: 6,
            ny: 5,
            extent: [60.0, 50.0, 5.0],
            porosity: 0.25,
            perm_md: 50.0,
        };
        let cfg = DfnConfig {
            domain: [60.0, 50.0, 5.0],
            count_per_set: CountRange { min: 1, max: 2 },
            length_range: [10.0, 40.0],
            ..Default::default()
        };
        build_edfm_grid(spec, &generate_dfn(seed, &cfg).unwrap()).unwrap()
    }

    fn state_for(grid: &EdfmGrid, step: usize) -> ReservoirState {
        let n = grid.n_cells();
        ReservoirState {
            pressure: (0..n).map(|i| 1e7 + 1e3 * i as f64).collect(),
            saturation: (0..n).map(|i| 0.2 + 0.01 * (i % 50) as f64).collect(),
            step,
        }
    }

    #[test]
    fn widths_edges_and_one_hot() {
        let grid = small_grid(4);
        let g = build_graph(&grid, &state_for(&grid, 3), Target::Saturation).unwrap();
        g.validate().unwrap();
        assert_eq!(g.nodes.ncols(), 7);
        assert_eq!(g.edges.ncols(), 5);
        assert_eq!(g.n_edges(), 2 * grid.connections.len());
        assert_eq!(g.n_nodes(), 30 + grid.n_fracture());
        assert_eq!(g.step, 3);
        let inj = grid.injector().unwrap();
        let prod = grid.producer().unwrap();
        assert_eq!(g.nodes.row(inj).slice(s![3..6]).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(g.nodes.row(prod).slice(s![3..6]).to_vec(), vec![0.0, 1.0, 0.0]);
        for row in g.nodes.rows() {
            assert_eq!(row[3] + row[4] + row[5], 1.0);
        }
        assert_eq!(g.nodes[[7, FIELD_COLUMN]], 0.27);
        assert!((g.nodes[[0, 2]] - 50f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn reverse_edges_are_antisymmetric() {
        let grid = small_grid(5);
        let g = build_graph(&grid, &state_for(&grid, 0), Target::Pressure).unwrap();
        for c in 0..grid.connections.len() {
            let (a, b) = (g.edges.row(2 * c), g.edges.row(2 * c + 1));
            assert_eq!(a[0], b[0]);
            assert_eq!(a[4], b[4]);
            for k in 1..4 {
                assert_eq!(a[k], -b[k]);
            }
            let norm = (a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
            assert!((norm - a[4]).abs() <= 1e-12 * a[4].max(1.0));
            assert_eq!(
                (g.senders[2 * c], g.receivers[2 * c]),
                (g.receivers[2 * c + 1], g.senders[2 * c + 1])
            );
        }
    }

    #[test]
    fn construction_is_pure() {
        let grid = small_grid(6);
        let st = state_for(&grid, 1);
        assert_eq!(
            build_graph(&grid, &st, Target::Pressure).unwrap(),
            build_graph(&grid, &st, Target::Pressure).unwrap()
        );
    }

    #[test]
    fn full_size_node_count() {
        let spec = CartesianSpec {
            nx: 50,
            ny: 50,
            extent: [500.0, 500.0, 5.0],
            porosity: 0.25,
            perm_md: 50.0,
        };
        let grid = build_edfm_grid(spec, &generate_dfn(2, &DfnConfig::default()).unwrap()).unwrap();
        let g = GraphTemplate::new(&grid).unwrap();
        assert_eq!(g.n_nodes(), 2500 + grid.n_fracture());
    }

    #[test]
    fn non_positive_transmissibility_is_rejected() {
        let mut grid = small_grid(1);
        grid.connections.push(Connection {
            i: 0,
            j: 2,
            kind: crate::edfm::ConnectionKind::MatrixMatrix,
            trans_md_m: 0.0,
        });
        assert!(GraphTemplate::new(&grid).is_err());
        let mut grid = small_grid(1);
        grid.cells[3].perm_md = -1.0;
        assert!(GraphTemplate::new(&grid).is_err());
    }

    #[test]
    fn state_length_mismatch_is_rejected() {
        let grid = small_grid(1);
        let st = ReservoirState::uniform(3, 1e7, 0.2);
        assert!(build_graph(&grid, &st, Target::Pressure).is_err());
    }

    fn fitted(seeds: &[u64]) -> (NormStats, Vec<Graph>) {
        let mut fitter = NormFitter::new(Target::Pressure);
        let mut graphs = Vec::new();
        for &seed in seeds {
            let grid = small_grid(seed);
            let t = GraphTemplate::new(&grid).unwrap();
            fitter.add_static(&t);
            let st = state_for(&grid, 0);
            fitter.add_field(&st.pressure);
            let mut next = st.clone();
            next.pressure.iter_mut().for_each(|p| *p += 2.0);
            fitter.add_delta(&st.pressure, &next.pressure);
            graphs.push(t.graph(&st, Target::Pressure).unwrap());
        }
        (fitter.finish().unwrap(), graphs)
    }

    #[test]
    fn single_sample_normalizes_to_zero() {
        let mut fitter = NormFitter::new(Target::Saturation);
        let grid = EdfmGrid::cartesian(CartesianSpec {
            nx: 1,
            ny: 1,
            extent: [10.0, 10.0, 1.0],
            porosity: 0.2,
            perm_md: 10.0,
        })
        .unwrap();
        let t = GraphTemplate::new(&grid).unwrap();
        fitter.add_static(&t);
        fitter.add_field(&[0.3]);
        let stats = fitter.finish().unwrap();
        let g = stats.normalize(
            &t.graph(&ReservoirState::uniform(1, 1e7, 0.3), Target::Saturation)
                .unwrap(),
        );
        for k in [0, 1, 2, FIELD_COLUMN] {
            assert_eq!(g.nodes[[0, k]], 0.0, "channel {k}");
        }
        assert!(stats.node.std.iter().all(|&s| s == 1.0));
        assert_eq!(stats.delta_scale, 1.0);
    }

    #[test]
    fn one_hot_channels_pass_through() {
        let (stats, graphs) = fitted(&[1, 2, 3]);
        for k in 3..6 {
            assert!(stats.node.passthrough[k]);
            assert_eq!((stats.node.mean[k], stats.node.std[k]), (0.0, 1.0));
        }
        let g = stats.normalize(&graphs[0]);
        for row in g.nodes.rows() {
            assert_eq!(row[3] + row[4] + row[5], 1.0);
        }
        assert!((stats.delta_scale - 2.0).abs() < 1e-12);
        stats.validate().unwrap();
    }

    #[test]
    fn training_channels_are_standardized() {
        let (stats, graphs) = fitted(&[1, 2, 3, 4]);
        let mut edge_rows = Vec::new();
        for g in &graphs {
            let n = stats.normalize(g);
            edge_rows.extend(n.edges.rows().into_iter().map(|r| r.to_vec()));
        }
        for k in [0, 1, 2, 4] {
            let col: Vec<f64> = edge_rows.iter().map(|r| r[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "edge channel {k} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "edge channel {k} var {var}");
        }
        // Vertical displacement is identically zero on a single layer.
        assert_eq!(stats.edge.std[3], 1.0);
    }

    proptest! {
        #[test]
        fn normalization_round_trips(seed in 0u64..20, scale in 1e-3f64..1e3) {
            let (stats, graphs) = fitted(&[seed, seed + 1]);
            let mut g = graphs[0].clone();
            g.nodes.mapv_inplace(|v| v * scale);
            let back = stats.denormalize(&stats.normalize(&g));
            for (a, b) in back.nodes.iter().zip(g.nodes.iter()).chain(back.edges.iter().zip(g.edges.iter())) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
