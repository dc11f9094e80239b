use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ror::multiror::{add_position, init_params, run_multiror, MtConfig, MultirorError};
use ror::numerics::params::Bound;
use ror::numerics::{grad_check, init, Dropout, ParamStore, Tape};
use ror::Tensor;

fn cfg(layers: usize) -> MtConfig {
    MtConfig {
        layers,
        heads: 2,
        ffn_hidden: 16,
        max_m: 8,
        ..MtConfig::default()
    }
}

fn params(c: &MtConfig, d: usize, seed: u64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    init_params(&mut p, c, d, &mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn run(p: &ParamStore<f64>, c: &MtConfig, rels: &Tensor<f64>, m: usize) -> Result<Tensor<f64>, MultirorError> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let r = tape.constant(rels.clone());
    let out = run_multiror(&mut tape, &b, c, r, m, &mut Dropout::off())?;
    Ok(tape.value(out).clone())
}

fn positioned(p: &ParamStore<f64>, c: &MtConfig, rels: &Tensor<f64>, m: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let r = tape.constant(rels.clone());
    let out = add_position(&mut tape, &b, c, r, m).unwrap();
    tape.value(out).clone()
}

#[test]
fn zero_position_tables_are_the_identity() {
    let (m, d) = (3, 4);
    let c = cfg(1);
    let mut p = params(&c, d, 0);
    p.insert("mt.row", init::zeros(&[c.max_m, d]));
    p.insert("mt.col", init::zeros(&[c.max_m, d]));
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(positioned(&p, &c, &rels, m), rels);
}

#[test]
fn position_offset_is_row_plus_column() {
    let (m, d) = (6, 4);
    let c = cfg(1);
    let p = params(&c, d, 2);
    let rels = Tensor::zeros(&[m * m, d]);
    let out = positioned(&p, &c, &rels, m);
    let (row, col) = (p.get("mt.row").unwrap(), p.get("mt.col").unwrap());
    for k in 0..d {
        assert_eq!(out.row(2 * m + 5)[k], row.row(2)[k] + col.row(5)[k]);
    }
    assert_ne!(out.row(2 * m + 5), out.row(5 * m + 2));
}

#[test]
fn single_cell_matrix_runs() {
    let c = cfg(2);
    let p = params(&c, 4, 3);
    let out = run(&p, &c, &Tensor::new(&[1, 4], vec![0.1, -0.2, 0.3, 0.4]).unwrap(), 1).unwrap();
    assert_eq!(out.shape(), &[1, 4]);
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn identical_cells_without_positions_stay_identical() {
    let (m, d) = (4, 8);
    let c = cfg(2);
    let mut p = params(&c, d, 4);
    p.insert("mt.row", init::zeros(&[c.max_m, d]));
    p.insert("mt.col", init::zeros(&[c.max_m, d]));
    let cell = [0.3, -1.2, 0.8, 0.1, 2.0, -0.4, 0.0, 0.6];
    let rels = Tensor::new(&[m * m, d], cell.repeat(m * m)).unwrap();
    let out = run(&p, &c, &rels, m).unwrap();
    for r in 1..m * m {
        for (a, b) in out.row(r).iter().zip(out.row(0)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn one_layer_connects_every_cell() {
    let (m, d) = (4, 8);
    let c = cfg(1);
    let p = params(&c, d, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    let noise: Tensor<f64> = init::normal(&[d], 0.5, &mut rng);
    let mut bumped = rels.clone();
    for (v, n) in bumped.data_mut()[d..2 * d].iter_mut().zip(noise.data()) {
        *v += n;
    }
    let a = run(&p, &c, &rels, m).unwrap();
    let b = run(&p, &c, &bumped, m).unwrap();
    let last = m * m - 1;
    let change = a.row(last).iter().zip(b.row(last)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(change > 1e-8, "{change}");
}

#[test]
fn too_many_entities_is_an_error() {
    let c = cfg(1);
    let p = params(&c, 4, 7);
    let m = c.max_m + 1;
    let err = run(&p, &c, &Tensor::zeros(&[m * m, 4]), m).unwrap_err();
    assert!(matches!(err, MultirorError::TooManyEntities { m: 9, max_m: 8 }));
}

#[test]
fn position_tables_gradient_checks() {
    let (m, d) = (3, 4);
    let c = cfg(1);
    let mut p = params(&c, d, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (_, t) in p.iter_mut() {
        *t = init::normal(t.shape(), 0.5, &mut rng);
    }
    let rels: Tensor<f64> = init::normal(&[m * m, d], 1.0, &mut rng);
    let names = ["mt.row", "mt.col", "mt.layer0.attn.wq", "mt.layer0.ffn1.w", "mt.out.w"];
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| p.get(n).unwrap().clone()).collect();
    let report = grad_check(
        |tape: &mut Tape<f64>, vars| {
            let bound: Bound = p
                .iter()
                .map(|(n, t)| {
                    let v = match names.iter().position(|k| *k == n) {
                        Some(i) => vars[i],
                        None => tape.constant(t.clone()),
                    };
                    (n.to_string(), v)
                })
                .collect();
            let r = tape.constant(rels.clone());
            let out = run_multiror(tape, &bound, &c, r, m, &mut Dropout::off()).expect("forward");
            let sq = tape.mul(out, out)?;
            Ok(tape.sum_all(sq))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}
