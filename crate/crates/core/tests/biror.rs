use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ror::biror::{build_graph, gnn_attention, gnn_layer, init_params, run_biror, GnnConfig, QkPlacement};
use ror::encoder::init_relations;
use ror::numerics::{grad_check, init, Dropout, Neighborhoods, ParamStore, Tape};
use ror::Tensor;

fn cfg(layers: usize, heads: usize, ffn_hidden: usize) -> GnnConfig {
    GnnConfig {
        layers,
        heads,
        ffn_hidden,
        ..GnnConfig::default()
    }
}

fn eye(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

#[test]
fn graph_sizes_and_degrees() {
    let g = build_graph(7, true, false);
    assert_eq!(g.num_nodes(), 56);
    let g = build_graph(7, false, false);
    assert_eq!(g.num_nodes(), 49);
    let g = build_graph(3, false, false);
    for e in 0..3 {
        assert_eq!(g.degree(e), 4);
    }
    for r in 3..g.num_nodes() {
        assert_eq!(g.degree(r), 2);
    }
    let g = build_graph(3, true, false);
    let diag = 3 + g.cells.iter().position(|&c| c == (1, 1)).unwrap();
    assert_eq!(g.neighbors.lists[diag], vec![1]);
    let g = build_graph(3, false, true);
    assert_eq!(g.degree(0), 5);
    assert!(g.neighbors.lists[0].contains(&0));
}

#[test]
fn single_neighbor_gets_all_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 4;
    let wq: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let wk: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let a = gnn_attention(&[0.3, -1.0, 2.0, 0.1], &[&[1.0, 2.0, 3.0, 4.0]], wq.data(), wk.data(), d, 2, 1);
    assert_eq!(a, vec![1.0]);
}

#[test]
fn identical_neighbors_split_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 4;
    let wq: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let wk: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let h = [0.5, -0.5, 1.5, 2.0];
    let a = gnn_attention(&[1.0, 0.0, -1.0, 0.5], &[&h, &h], wq.data(), wk.data(), d, 1, 0);
    assert_eq!(a, vec![0.5, 0.5]);
}

#[test]
fn tape_attention_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, heads) = (4, 6, 3);
    let h: Tensor<f64> = init::normal(&[n, d], 1.0, &mut rng);
    let wq: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let wk: Tensor<f64> = init::normal(&[d, d], 1.0, &mut rng);
    let graph = Arc::new(Neighborhoods {
        lists: vec![vec![1, 2, 3], vec![0], vec![0], vec![0]],
    });
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let q = tape.constant(wq.clone());
    let k = tape.constant(wk.clone());
    let hq = tape.matmul(hv, q).unwrap();
    let hk = tape.matmul(hv, k).unwrap();
    // Printed placement: the center is projected with W^K, neighbors with W^Q.
    let out = tape.graph_attention(hk, hq, hv, graph, heads).unwrap();
    let alpha = &tape.graph_attention_weights(out).unwrap()[0];
    for head in 0..heads {
        let nb: Vec<&[f64]> = (1..4).map(|v| h.row(v)).collect();
        let want = gnn_attention(h.row(0), &nb, wq.data(), wk.data(), d, heads, head);
        for (v, w) in want.iter().enumerate() {
            assert!((alpha[v * heads + head] - w).abs() < 1e-12);
        }
        let sum: f64 = (0..3).map(|v| alpha[v * heads + head]).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

/// W^Q = 0 gives uniform attention; W^O = I and a ±identity FFN make the layer
/// an exact neighbor mean.
fn mean_layer_params(d: usize) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("gnn.layer0.wq", init::zeros(&[d, d]));
    p.insert("gnn.layer0.wk", init::normal(&[d, d], 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
    p.insert("gnn.layer0.wo", Tensor::new(&[d, d], eye(d)).unwrap());
    let mut w1 = vec![0.0; d * 2 * d];
    let mut w2 = vec![0.0; 2 * d * d];
    for i in 0..d {
        w1[i * 2 * d + i] = 1.0;
        w1[i * 2 * d + d + i] = -1.0;
        w2[i * d + i] = 1.0;
        w2[(d + i) * d + i] = -1.0;
    }
    p.insert("gnn.layer0.ffn1.w", Tensor::new(&[d, 2 * d], w1).unwrap());
    p.insert("gnn.layer0.ffn1.b", init::zeros(&[2 * d]));
    p.insert("gnn.layer0.ffn2.w", Tensor::new(&[2 * d, d], w2).unwrap());
    p.insert("gnn.layer0.ffn2.b", init::zeros(&[d]));
    p
}

#[test]
fn uniform_attention_layer_is_a_neighbor_mean() {
    let d = 4;
    let params = mean_layer_params(d);
    let graph = build_graph(3, false, false);
    let h: Tensor<f64> = init::normal(&[graph.num_nodes(), d], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let hv = tape.constant(h.clone());
    let out = gnn_layer(&mut tape, &b, &cfg(1, 2, 2 * d), 0, &graph, hv, &mut Dropout::off()).unwrap();
    let out = tape.value(out);
    for (u, nb) in graph.neighbors.lists.iter().enumerate() {
        for c in 0..d {
            let mean = nb.iter().map(|&v| h.row(v)[c]).sum::<f64>() / nb.len() as f64;
            assert!((out.row(u)[c] - mean).abs() < 1e-12, "node {u}");
        }
    }
}

fn random_params(c: &GnnConfig, d: usize, seed: u64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    init_params(&mut p, c, d, &mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn biror_out(params: &ParamStore<f64>, c: &GnnConfig, m: usize, ents: &Tensor<f64>, rels: &Tensor<f64>) -> Tensor<f64> {
    let graph = build_graph(m, false, c.self_loops);
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let e = tape.constant(ents.clone());
    let r = tape.constant(rels.clone());
    let out = run_biror(&mut tape, &b, c, &graph, e, r, &mut Dropout::off()).unwrap();
    tape.value(out).clone()
}

#[test]
fn relabeling_entities_permutes_the_output() {
    let (m, d) = (4, 8);
    let c = cfg(2, 2, 16);
    let params = random_params(&c, d, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ents: Tensor<f64> = init::normal(&[m, d], 1.0, &mut rng);
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    let perm = [2, 0, 3, 1];
    let mut pe = vec![0.0; m * d];
    let mut pr = vec![0.0; m * m * d];
    for i in 0..m {
        pe[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(ents.row(i));
        for j in 0..m {
            let to = perm[i] * m + perm[j];
            pr[to * d..(to + 1) * d].copy_from_slice(rels.row(i * m + j));
        }
    }
    let out = biror_out(&params, &c, m, &ents, &rels);
    let pout = biror_out(
        &params,
        &c,
        m,
        &Tensor::new(&[m, d], pe).unwrap(),
        &Tensor::new(&[m * m, d], pr).unwrap(),
    );
    for i in 0..m {
        for j in 0..m {
            let (a, b) = (out.row(i * m + j), pout.row(perm[i] * m + perm[j]));
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "cell ({i},{j})");
            }
        }
    }
}

#[test]
fn query_projection_gradient_checks() {
    let d = 4;
    let c = cfg(1, 2, 8);
    let graph = build_graph(3, false, false);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = random_params(&c, d, 8);
    params.insert("gnn.layer0.wq", init::normal(&[d, d], 0.7, &mut rng));
    let h: Tensor<f64> = init::normal(&[graph.num_nodes(), d], 1.0, &mut rng);
    let wq = params.get("gnn.layer0.wq").unwrap().clone();
    let report = grad_check(
        |tape: &mut Tape<f64>, vars| {
            let bound: ror::numerics::params::Bound = params
                .iter()
                .map(|(n, t)| {
                    let v = if n == "gnn.layer0.wq" { vars[0] } else { tape.constant(t.clone()) };
                    (n.to_string(), v)
                })
                .collect();
            let hv = tape.constant(h.clone());
            let out = gnn_layer(tape, &bound, &c, 0, &graph, hv, &mut Dropout::off())?;
            let sq = tape.mul(out, out)?;
            Ok(tape.sum_all(sq))
        },
        &[wq],
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn zero_layers_return_relations_unchanged() {
    let (m, d) = (3, 4);
    let c = cfg(0, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ents: Tensor<f64> = init::normal(&[m, d], 1.0, &mut rng);
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    assert_eq!(biror_out(&ParamStore::new(), &c, m, &ents, &rels), rels);
}

#[test]
fn single_entity_without_diagonal_passes_through() {
    let c = cfg(2, 2, 8);
    let params = random_params(&c, 4, 1);
    let ents = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let rels = Tensor::new(&[1, 4], vec![0.5; 4]).unwrap();
    assert_eq!(biror_out(&params, &c, 1, &ents, &rels), rels);
}

#[test]
fn excluded_diagonal_keeps_its_input() {
    let (m, d) = (3, 4);
    let c = cfg(2, 2, 8);
    let params = random_params(&c, d, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ents: Tensor<f64> = init::normal(&[m, d], 1.0, &mut rng);
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    let out = biror_out(&params, &c, m, &ents, &rels);
    for i in 0..m {
        assert_eq!(out.row(i * m + i), rels.row(i * m + i));
    }
    assert_ne!(out.row(1), rels.row(1));
}

#[test]
fn entity_reaches_unrelated_cell_after_two_layers() {
    // rel(0, 1) with e_3 perturbed: rels come from the entities, so layer 1
    // sees only e_0 and e_1, and layer 2 sees rel(0, 3) through entity 0.
    let (m, d) = (4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ents: Tensor<f64> = init::normal(&[m, d], 1.0, &mut rng);
    let mut bumped = ents.clone();
    for (k, v) in bumped.data_mut()[3 * d..].iter_mut().enumerate() {
        *v += 0.3 * (k as f64 + 1.0);
    }
    let mut enc = ParamStore::new();
    ror::encoder::init_params(
        &mut enc,
        &ror::encoder::EncoderConfig {
            embed_dim: d,
            ..Default::default()
        },
        1,
        &mut rng,
    );
    let probe = |layers: usize, e: &Tensor<f64>| {
        let c = cfg(layers, 2, 12);
        let mut params = random_params(&c, d, 11);
        for (n, t) in enc.iter() {
            params.insert(n, t.clone());
        }
        let graph = build_graph(m, false, false);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let ev = tape.constant(e.clone());
        let rels = init_relations(&mut tape, &b, ev).unwrap();
        let out = run_biror(&mut tape, &b, &c, &graph, ev, rels, &mut Dropout::off()).unwrap();
        tape.value(out).row(1).to_vec()
    };
    let change = |layers| {
        probe(layers, &ents)
            .iter()
            .zip(probe(layers, &bumped))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    assert_eq!(change(1), 0.0);
    assert!(change(2) > 1e-8);
}

#[test]
fn center_query_placement_changes_the_weights() {
    let (m, d) = (3, 4);
    let mut c = cfg(1, 2, 8);
    let params = random_params(&c, d, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ents: Tensor<f64> = init::normal(&[m, d], 1.0, &mut rng);
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    let printed = biror_out(&params, &c, m, &ents, &rels);
    c.qk = QkPlacement::CenterQuery;
    let swapped = biror_out(&params, &c, m, &ents, &rels);
    assert_ne!(printed, swapped);
}
