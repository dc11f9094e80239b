//! Attentional message passing over the entity/relation graph.
//!
//! Nodes are the M entities followed by one node per relation cell; every
//! relation node `(i, j)` is linked to entity nodes `i` and `j`. A layer computes
//!
//! ```text
//! h'_u = FFN(W^O · concat_heads Σ_{v ∈ N(u)} α_{u,v} h_v)
//! α_{u,v} = softmax_v((W^Q h_v) · (W^K h_u))     per head
//! ```
//!
//! with no self-loop, no residual and no score scaling. Heads read contiguous
//! `d/heads` blocks of the projections and of `h_v`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::layers::{ffn, Dropout};
use crate::numerics::params::Bound;
use crate::numerics::{init, Neighborhoods, NumericsError, ParamStore, Scalar, Tape, Var};

/// Which node the query projection applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QkPlacement {
    /// `W^Q` projects the neighbor and `W^K` the center node.
    NeighborQuery,
    /// `W^Q` projects the center and `W^K` the neighbor.
    CenterQuery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub qk: QkPlacement,
    /// Add `u` to its own neighborhood.
    pub self_loops: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            ffn_hidden: 1024,
            qk: QkPlacement::NeighborQuery,
            self_loops: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelGraph {
    pub m: usize,
    /// Relation node `k` (graph node `m + k`) stands for cell `cells[k]`.
    pub cells: Vec<(usize, usize)>,
    pub neighbors: Arc<Neighborhoods>,
}

impl RelGraph {
    pub fn num_nodes(&self) -> usize {
        self.m + self.cells.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors.lists[node].len()
    }
}

pub fn build_graph(m: usize, include_diagonal: bool, self_loops: bool) -> RelGraph {
    let cells = crate::corpus::relation_pairs(m, include_diagonal);
    let mut lists = vec![Vec::new(); m + cells.len()];
    for (k, &(i, j)) in cells.iter().enumerate() {
        let node = m + k;
        lists[node].push(i);
        lists[i].push(node);
        if j != i {
            lists[node].push(j);
            lists[j].push(node);
        }
    }
    if self_loops {
        for (u, l) in lists.iter_mut().enumerate() {
            l.push(u);
        }
    }
    RelGraph {
        m,
        cells,
        neighbors: Arc::new(Neighborhoods { lists }),
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &GnnConfig, d: usize, rng: &mut R) {
    for l in 0..cfg.layers {
        let p = format!("gnn.layer{l}");
        store.insert(format!("{p}.wq"), init::xavier_uniform(d, d, rng));
        store.insert(format!("{p}.wk"), init::xavier_uniform(d, d, rng));
        store.insert(format!("{p}.wo"), init::xavier_uniform(d, d, rng));
        store.insert(format!("{p}.ffn1.w"), init::xavier_uniform(d, cfg.ffn_hidden, rng));
        store.insert(format!("{p}.ffn1.b"), init::zeros(&[cfg.ffn_hidden]));
        store.insert(format!("{p}.ffn2.w"), init::xavier_uniform(cfg.ffn_hidden, d, rng));
        store.insert(format!("{p}.ffn2.b"), init::zeros(&[d]));
    }
}

/// Attention weights of node `u` over its neighbors for one head, computed
/// directly from the printed formula. `states` is `N × d` row-major.
pub fn gnn_attention<T: Scalar>(
    center: &[T],
    neighbors: &[&[T]],
    wq: &[T],
    wk: &[T],
    d: usize,
    heads: usize,
    head: usize,
) -> Vec<T> {
    let dh = d / heads;
    let project = |w: &[T], h: &[T]| -> Vec<T> {
        (head * dh..(head + 1) * dh)
            .map(|c| (0..d).map(|r| h[r] * w[r * d + c]).sum())
            .collect()
    };
    let k = project(wk, center);
    let scores: Vec<T> = neighbors
        .iter()
        .map(|h| project(wq, h).iter().zip(&k).map(|(a, b)| *a * *b).sum())
        .collect();
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = scores.iter().map(|s| (*s - max).exp()).collect();
    let z: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// One layer over all nodes; rows of `h` follow the graph's node order.
/// Nodes without neighbors keep their state.
pub fn gnn_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &GnnConfig,
    layer: usize,
    graph: &RelGraph,
    h: Var,
    dropout: &mut Dropout,
) -> Result<Var, NumericsError> {
    let p = format!("gnn.layer{layer}");
    let q = tape.matmul(h, params.var(&format!("{p}.wq"))?)?;
    let k = tape.matmul(h, params.var(&format!("{p}.wk"))?)?;
    let (center, neighbor) = match cfg.qk {
        QkPlacement::NeighborQuery => (k, q),
        QkPlacement::CenterQuery => (q, k),
    };
    let agg = tape.graph_attention(center, neighbor, h, graph.neighbors.clone(), cfg.heads)?;
    let o = tape.matmul(agg, params.var(&format!("{p}.wo"))?)?;
    let out = ffn(tape, params, &p, o)?;
    let out = dropout.apply(tape, out)?;
    let connected: Vec<bool> = graph.neighbors.lists.iter().map(|l| !l.is_empty()).collect();
    if connected.iter().all(|&c| c) {
        Ok(out)
    } else {
        tape.where_rows(&connected, out, h)
    }
}

/// Runs the configured layers and returns relation states for all `M²` cells
/// in row-major order (`M² × d`). Cells that are not graph nodes (the diagonal
/// when excluded) keep their value from `rels`.
pub fn run_biror<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &GnnConfig,
    graph: &RelGraph,
    ents: Var,
    rels: Var,
    dropout: &mut Dropout,
) -> Result<Var, NumericsError> {
    let m = graph.m;
    if cfg.layers == 0 || graph.cells.is_empty() {
        return Ok(rels);
    }
    let cell_rows: Vec<usize> = graph.cells.iter().map(|&(i, j)| i * m + j).collect();
    let rel_nodes = tape.gather_rows(rels, &cell_rows)?;
    let mut h = tape.concat(&[ents, rel_nodes], 0)?;
    for l in 0..cfg.layers {
        h = gnn_layer(tape, params, cfg, l, graph, h, dropout)?;
    }
    let states = tape.slice(h, 0, m, graph.cells.len())?;
    if graph.cells.len() == m * m {
        return Ok(states);
    }
    let mut pick: Vec<usize> = (0..m * m).collect();
    for (k, &c) in cell_rows.iter().enumerate() {
        pick[c] = m * m + k;
    }
    let pool = tape.concat(&[rels, states], 0)?;
    tape.gather_rows(pool, &pick)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_shapes() {
        let g = build_graph(2, false, false);
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.cells, vec![(0, 1), (1, 0)]);
        assert_eq!(g.neighbors.lists[2], vec![0, 1]);
        assert_eq!(build_graph(7, true, false).num_nodes(), 56);
        let g = build_graph(3, false, false);
        for e in 0..3 {
            assert_eq!(g.degree(e), 4);
        }
        for r in 3..g.num_nodes() {
            assert_eq!(g.degree(r), 2);
        }
        let g = build_graph(2, true, false);
        assert_eq!(g.degree(2), 1);
        assert_eq!(g.degree(0), 3);
        let g = build_graph(1, false, false);
        assert_eq!(g.num_nodes(), 1);
        assert!(g.neighbors.lists[0].is_empty());
    }

    #[test]
    fn self_loops_extend_neighborhoods() {
        let g = build_graph(2, false, true);
        assert!(g.neighbors.lists.iter().enumerate().all(|(u, l)| l.contains(&u)));
    }
}
