//! Encoder–processor–decoder graph network and its recurrent variant with a
//! two-layer per-node LSTM between the processors and the decoder.

mod rollout;

pub use rollout::{ar_step, rgnn_step, rollout_ar, rollout_rgnn, Rollout};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Target, EDGE_WIDTH, FIELD_COLUMN, NODE_WIDTH};
use crate::nn::{LstmCache, LstmLayer, Mlp, MlpCache, MlpSpec, ParamStore};

pub const LSTM_LAYERS: usize = 2;
const MLP_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnSpec {
    pub hidden: usize,
    pub processors: usize,
    pub node_in: usize,
    pub edge_in: usize,
    pub output: usize,
    pub target: Target,
    pub recurrent: bool,
}

impl GnnSpec {
    pub fn new(target: Target, hidden: usize, processors: usize, recurrent: bool) -> Self {
        Self {
            hidden,
            processors,
            node_in: NODE_WIDTH,
            edge_in: EDGE_WIDTH,
            output: 1,
            target,
            recurrent,
        }
    }

    /// Full-size widths: 40 wide with 12 processors for pressure, 48 wide
    /// with 8 processors for saturation.
    pub fn full_size(target: Target, recurrent: bool) -> Self {
        match target {
            Target::Pressure => Self::new(target, 40, 12, recurrent),
            Target::Saturation => Self::new(target, 48, 8, recurrent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.processors == 0 {
            return Err(Error::Config(format!(
                "hidden size and processor count must be positive: {self:?}"
            )));
        }
        if self.node_in != NODE_WIDTH || self.edge_in != EDGE_WIDTH || self.output != 1 {
            return Err(Error::Config(format!("unsupported feature widths: {self:?}")));
        }
        Ok(())
    }

    fn mlp(&self, input: usize, output: usize, layer_norm: bool) -> MlpSpec {
        MlpSpec {
            input,
            hidden: self.hidden,
            output,
            layers: MLP_LAYERS,
            layer_norm,
        }
    }

    fn node_encoder(&self) -> MlpSpec {
        self.mlp(self.node_in, self.hidden, true)
    }

    fn edge_encoder(&self) -> MlpSpec {
        self.mlp(self.edge_in, self.hidden, true)
    }

    fn edge_block(&self) -> MlpSpec {
        self.mlp(3 * self.hidden, self.hidden, true)
    }

    fn node_block(&self) -> MlpSpec {
        self.mlp(2 * self.hidden, self.hidden, true)
    }

    fn decoder(&self) -> MlpSpec {
        self.mlp(self.hidden, self.output, false)
    }
}

/// Closed-form number of scalars of a model.
pub fn count_params(spec: &GnnSpec) -> usize {
    let mut n = spec.node_encoder().param_count() + spec.edge_encoder().param_count();
    n += spec.processors * (spec.edge_block().param_count() + spec.node_block().param_count());
    n += spec.decoder().param_count();
    if spec.recurrent {
        n += LSTM_LAYERS * LstmLayer::param_count(spec.hidden, spec.hidden);
    }
    n
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Processor {
    pub edge: Mlp,
    pub node: Mlp,
}

/// Layout of a model inside its [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnnModel {
    pub spec: GnnSpec,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub processors: Vec<Processor>,
    pub lstm: Vec<LstmLayer>,
    pub decoder: Mlp,
}

/// Per-node LSTM memory, zero at the start of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl RecurrentState {
    pub fn zeros(n_nodes: usize, hidden: usize) -> Self {
        Self {
            h: vec![Array2::zeros((n_nodes, hidden)); LSTM_LAYERS],
            c: vec![Array2::zeros((n_nodes, hidden)); LSTM_LAYERS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|a| a.iter().all(|v| v.is_finite()))
    }
}

struct BlockCache {
    edge: MlpCache,
    node: MlpCache,
}

pub struct EmbedCache {
    node_encoder: MlpCache,
    edge_encoder: MlpCache,
    blocks: Vec<BlockCache>,
    senders: Vec<usize>,
    receivers: Vec<usize>,
}

pub struct StepCache {
    embed: EmbedCache,
    lstm: Vec<LstmCache>,
    decoder: MlpCache,
}

fn scatter_add(dst: &mut Array2<f64>, src: ArrayView2<'_, f64>, idx: &[usize]) {
    for (row, &i) in src.rows().into_iter().zip(idx) {
        let mut d = dst.row_mut(i);
        d += &row;
    }
}

impl GnnModel {
    /// Model layout with all parameters zero.
    pub fn new(spec: GnnSpec) -> Result<(Self, ParamStore)> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let node_encoder = Mlp::new(&mut store, "encoder.node", spec.node_encoder())?;
        let edge_encoder = Mlp::new(&mut store, "encoder.edge", spec.edge_encoder())?;
        let mut processors = Vec::with_capacity(spec.processors);
        for l in 0..spec.processors {
            processors.push(Processor {
                edge: Mlp::new(&mut store, &format!("processor.{l}.edge"), spec.edge_block())?,
                node: Mlp::new(&mut store, &format!("processor.{l}.node"), spec.node_block())?,
            });
        }
        let lstm = if spec.recurrent {
            (0..LSTM_LAYERS)
                .map(|l| LstmLayer::new(&mut store, &format!("lstm.{l}"), spec.hidden, spec.hidden))
                .collect()
        } else {
            Vec::new()
        };
        let decoder = Mlp::new(&mut store, "decoder", spec.decoder())?;
        let model = Self {
            spec,
            node_encoder,
            edge_encoder,
            processors,
            lstm,
            decoder,
        };
        debug_assert_eq!(store.len(), count_params(&spec));
        Ok((model, store))
    }

    /// Model with parameters drawn from `seed`.
    pub fn initialized(spec: GnnSpec, seed: u64) -> Result<(Self, ParamStore)> {
        let (model, mut store) = Self::new(spec)?;
        model.init(&mut store, seed);
        Ok((model, store))
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.node_encoder.init(store, &mut rng);
        self.edge_encoder.init(store, &mut rng);
        for b in &self.processors {
            b.edge.init(store, &mut rng);
            b.node.init(store, &mut rng);
        }
        for l in &self.lstm {
            l.init(store, &mut rng);
        }
        self.decoder.init(store, &mut rng);
    }

    fn check_graph(&self, graph: &Graph) -> Result<()> {
        if graph.nodes.ncols() != self.spec.node_in || graph.edges.ncols() != self.spec.edge_in {
            return Err(Error::shape(
                "graph feature widths",
                format!("{}/{}", self.spec.node_in, self.spec.edge_in),
                format!("{}/{}", graph.nodes.ncols(), graph.edges.ncols()),
            ));
        }
        if graph.senders.len() != graph.n_edges() || graph.receivers.len() != graph.n_edges() {
            return Err(Error::shape("edge index", graph.n_edges(), graph.senders.len()));
        }
        Ok(())
    }

    /// Node embeddings after the last processor block.
    pub fn embed(&self, p: &[f64], graph: &Graph) -> Result<(Array2<f64>, EmbedCache)> {
        self.check_graph(graph)?;
        let h = self.spec.hidden;
        let (n, m) = (graph.n_nodes(), graph.n_edges());
        let (mut v, node_encoder) = self.node_encoder.forward(p, graph.nodes.clone());
        let (mut e, edge_encoder) = self.edge_encoder.forward(p, graph.edges.clone());
        let mut blocks = Vec::with_capacity(self.processors.len());
        for block in &self.processors {
            let mut edge_in = Array2::zeros((m, 3 * h));
            edge_in.slice_mut(s![.., 0..h]).assign(&e);
            for (k, mut row) in edge_in.rows_mut().into_iter().enumerate() {
                row.slice_mut(s![h..2 * h]).assign(&v.row(graph.receivers[k]));
                row.slice_mut(s![2 * h..]).assign(&v.row(graph.senders[k]));
            }
            let (de, edge_cache) = block.edge.forward(p, edge_in);
            e += &de;
            let mut node_in = Array2::zeros((n, 2 * h));
            node_in.slice_mut(s![.., 0..h]).assign(&v);
            {
                let mut agg = node_in.slice_mut(s![.., h..]);
                for (row, &r) in e.rows().into_iter().zip(&graph.receivers) {
                    let mut d = agg.row_mut(r);
                    d += &row;
                }
            }
            let (dv, node_cache) = block.node.forward(p, node_in);
            v += &dv;
            blocks.push(BlockCache {
                edge: edge_cache,
                node: node_cache,
            });
        }
        let cache = EmbedCache {
            node_encoder,
            edge_encoder,
            blocks,
            senders: graph.senders.clone(),
            receivers: graph.receivers.clone(),
        };
        Ok((v, cache))
    }

    /// Back-propagate `dv` (gradient on the final embeddings); returns the
    /// gradient on the node input features.
    pub fn embed_backward(&self, p: &[f64], cache: &EmbedCache, dv: Array2<f64>, g: &mut [f64]) -> Array2<f64> {
        let h = self.spec.hidden;
        let m = cache.receivers.len();
        let mut dv = dv;
        let mut de = Array2::<f64>::zeros((m, h));
        for (block, bc) in self.processors.iter().zip(&cache.blocks).rev() {
            let d_node_in = block
                .node
                .backward(p, &bc.node, dv.clone(), g, true)
                .expect("input gradient");
            dv += &d_node_in.slice(s![.., 0..h]);
            let d_agg = d_node_in.slice(s![.., h..]);
            for (mut row, &r) in de.rows_mut().into_iter().zip(&cache.receivers) {
                row += &d_agg.row(r);
            }
            let d_edge_in = block
                .edge
                .backward(p, &bc.edge, de.clone(), g, true)
                .expect("input gradient");
            de += &d_edge_in.slice(s![.., 0..h]);
            scatter_add(&mut dv, d_edge_in.slice(s![.., h..2 * h]), &cache.receivers);
            scatter_add(&mut dv, d_edge_in.slice(s![.., 2 * h..]), &cache.senders);
        }
        self.edge_encoder.backward(p, &cache.edge_encoder, de, g, false);
        self.node_encoder
            .backward(p, &cache.node_encoder, dv, g, true)
            .expect("input gradient")
    }

    /// One evaluation: normalized increment per node and, for the recurrent
    /// model, the updated memory.
    pub fn step(
        &self,
        p: &[f64],
        graph: &Graph,
        memory: Option<&RecurrentState>,
    ) -> Result<(Vec<f64>, Option<RecurrentState>, StepCache)> {
        let (v, embed) = self.embed(p, graph)?;
        let mut lstm_caches = Vec::new();
        let (dec_in, memory) = if self.spec.recurrent {
            let n = graph.n_nodes();
            let zero;
            let prev = match memory {
                Some(m) => m,
                None => {
                    zero = RecurrentState::zeros(n, self.spec.hidden);
                    &zero
                }
            };
            if prev.h[0].nrows() != n {
                return Err(Error::shape("recurrent state rows", n, prev.h[0].nrows()));
            }
            let mut next = RecurrentState {
                h: Vec::with_capacity(LSTM_LAYERS),
                c: Vec::with_capacity(LSTM_LAYERS),
            };
            let mut x = v;
            for (l, layer) in self.lstm.iter().enumerate() {
                let (h_new, c_new, cache) = layer.forward(p, x, prev.h[l].clone(), prev.c[l].clone());
                lstm_caches.push(cache);
                x = h_new.clone();
                next.h.push(h_new);
                next.c.push(c_new);
            }
            (x, Some(next))
        } else {
            (v, None)
        };
        let (out, decoder) = self.decoder.forward(p, dec_in);
        let delta = out.column(0).to_vec();
        Ok((
            delta,
            memory,
            StepCache {
                embed,
                lstm: lstm_caches,
                decoder,
            },
        ))
    }

    /// Reverse of [`GnnModel::step`]. `d_delta` is the gradient on the
    /// increment, `d_memory` the gradient on the returned memory (if any).
    /// Returns the gradient on the normalized field input and on the
    /// incoming memory.
    pub fn step_backward(
        &self,
        p: &[f64],
        cache: &StepCache,
        d_delta: &[f64],
        d_memory: Option<&RecurrentState>,
        g: &mut [f64],
    ) -> (Vec<f64>, Option<RecurrentState>) {
        let n = d_delta.len();
        let dy = Array2::from_shape_vec((n, 1), d_delta.to_vec()).expect("column");
        let mut d = self
            .decoder
            .backward(p, &cache.decoder, dy, g, true)
            .expect("input gradient");
        let d_memory_in = if self.spec.recurrent {
            let h = self.spec.hidden;
            let zero = RecurrentState::zeros(n, h);
            let dm = d_memory.unwrap_or(&zero);
            let mut d_in = RecurrentState::zeros(n, h);
            for l in (0..self.lstm.len()).rev() {
                let dh = &d + &dm.h[l];
                let (dx, dh_prev, dc_prev) = self.lstm[l].backward(p, &cache.lstm[l], dh.view(), dm.c[l].view(), g);
                d_in.h[l] = dh_prev;
                d_in.c[l] = dc_prev;
                d = dx;
            }
            Some(d_in)
        } else {
            None
        };
        let d_nodes = self.embed_backward(p, &cache.embed, d, g);
        (d_nodes.column(FIELD_COLUMN).to_vec(), d_memory_in)
    }

    /// Final-layer slots of every processor MLP; zeroing them makes each
    /// block the identity.
    pub fn processor_output_layers(&self) -> Vec<crate::nn::Dense> {
        self.processors
            .iter()
            .flat_map(|b| [b.edge.last(), b.node.last()])
            .collect()
    }

    pub fn decoder_output_layer(&self) -> crate::nn::Dense {
        self.decoder.last()
    }

    /// Decoder output for embeddings of width `hidden`.
    pub fn decode(&self, p: &[f64], embeddings: &Array2<f64>) -> Vec<f64> {
        self.decoder
            .apply(p, embeddings.clone())
            .index_axis(Axis(1), 0)
            .to_vec()
    }
}
