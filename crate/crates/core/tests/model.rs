use ror::analysis::score;
use ror::corpus::{generate_synthetic, Corpus, Document, SynthConfig, TypeSchema};
use ror::encoder::Vocab;
use ror::model::{
    argmax_rows, average_probabilities, predict_corpus, train, train_two_stage, train_with_validation, Detector,
    Ensemble, Model, ModelConfig, ModelError, Task, TwoStage, Variant,
};
use ror::numerics::{init, Dropout, ParamStore};
use ror::DType;

fn corpus(docs: usize, max_entities: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig {
        docs,
        min_entities: 3,
        max_entities,
        density: 0.6,
        ..SynthConfig::default()
    };
    generate_synthetic(&TypeSchema::ace05(), &cfg, seed).unwrap()
}

fn small_cfg(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::desk();
    cfg.variant = variant;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.context_window = 16;
    cfg.gnn.layers = 2;
    cfg.mt.layers = 2;
    cfg
}

fn fresh(cfg: ModelConfig, c: &Corpus, task: Task) -> Model<f64> {
    Model::new(cfg, c.schema.clone(), Vocab::build(&c.documents, 1), task).unwrap()
}

#[test]
fn zeroed_transformer_output_reduces_full_to_bi_only() {
    let c = corpus(3, 5, 1);
    let mut full = fresh(small_cfg(Variant::Full), &c, Task::Relations);
    full.params.insert("mt.out.w", init::zeros(&[16, 16]));
    full.params.insert("mt.out.b", init::zeros(&[16]));
    let mut bi = fresh(small_cfg(Variant::BiOnly), &c, Task::Relations);
    let mut shared = ParamStore::new();
    for (name, t) in full.params.iter().filter(|(n, _)| !n.starts_with("mt.")) {
        shared.insert(name, t.clone());
    }
    assert!(bi.params.same_layout(&shared));
    bi.params = shared;
    for d in &c.documents {
        assert_eq!(full.raw_logits(d, None).unwrap(), bi.raw_logits(d, None).unwrap());
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let c = corpus(20, 6, 2);
    for (base, variants) in [
        (ModelConfig::desk(), &[Variant::Base, Variant::BiOnly, Variant::MultiOnly, Variant::Full][..]),
        (ModelConfig::default(), &[Variant::Full][..]),
    ] {
        for &v in variants {
            let mut cfg = base.clone();
            cfg.variant = v;
            let model = fresh(cfg, &c, Task::Relations);
            let mut total = 0.0;
            for d in &c.documents {
                total += model.loss_and_grads(d, None, 1.0, &mut Dropout::off()).unwrap().0;
            }
            let mean = total / c.len() as f64;
            assert!((mean - 7f64.ln()).abs() <= 0.3, "{v:?} d={}: initial loss {mean}", model.cfg.d());
        }
    }
}

#[test]
fn loss_decreases_over_the_first_fifty_steps() {
    let c = corpus(100, 6, 3);
    let mut cfg = small_cfg(Variant::Full);
    cfg.epochs = 4;
    cfg.peak_lr = 1e-3;
    let out = train_with_validation::<f32>(&c, &c.select(&[0, 1]), &cfg, Task::Relations, None).unwrap();
    let losses: Vec<f64> = out.log.steps.iter().map(|s| s.loss).take(50).collect();
    assert_eq!(losses.len(), 50);
    let head = losses[..5].iter().sum::<f64>() / 5.0;
    let tail = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.7 * head, "loss {head:.3} -> {tail:.3}");
}

#[test]
fn parallel_gradients_match_serial_bit_for_bit() {
    let c = corpus(12, 5, 4);
    let mut cfg = small_cfg(Variant::Full);
    cfg.epochs = 2;
    cfg.batch_size = 6;
    let serial = train_with_validation::<f64>(&c, &c, &cfg, Task::Relations, None).unwrap();
    cfg.workers = 3;
    let parallel = train_with_validation::<f64>(&c, &c, &cfg, Task::Relations, None).unwrap();
    assert_eq!(serial.log, parallel.log);
    assert_eq!(serial.model.params, parallel.model.params);
}

#[test]
fn held_out_split_follows_val_fraction() {
    let c = corpus(20, 4, 5);
    let mut cfg = small_cfg(Variant::Base);
    cfg.epochs = 1;
    cfg.val_fraction = 0.25;
    let out = train::<f32>(&c, &cfg, Task::Relations, None).unwrap();
    assert_eq!((out.log.train_docs, out.log.val_docs), (15, 5));
    cfg.val_fraction = 0.0;
    let out = train::<f32>(&c, &cfg, Task::Relations, None).unwrap();
    assert_eq!((out.log.train_docs, out.log.val_docs), (20, 20));
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let c = corpus(16, 5, 6);
    let mut cfg = small_cfg(Variant::Base);
    cfg.epochs = 5;
    cfg.peak_lr = 1e38;
    cfg.warmup = 0.0;
    cfg.grad_clip = 0.0;
    match train_with_validation::<f32>(&c, &c, &cfg, Task::Relations, None) {
        Err(ModelError::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.steps.len())),
    }
}

#[test]
fn documents_beyond_max_m_are_rejected_for_every_variant() {
    let c = corpus(2, 6, 7);
    for v in [Variant::Base, Variant::BiOnly] {
        let mut cfg = small_cfg(v);
        cfg.mt.max_m = 2;
        let m = fresh(cfg, &c, Task::Relations);
        assert!(matches!(m.forward(&c.documents[0], None), Err(ModelError::Multiror(_))));
    }
}

#[test]
fn predictions_keep_documents_and_exclude_the_diagonal() {
    let c = corpus(5, 6, 8);
    let model = fresh(small_cfg(Variant::Full), &c, Task::Relations);
    let pred = predict_corpus(&model, &c, None).unwrap();
    for (p, g) in pred.iter().zip(&c.documents) {
        assert_eq!((&p.doc_id, &p.tokens, &p.entities), (&g.doc_id, &g.tokens, &g.entities));
        for i in 0..p.m() {
            assert!(p.gold.get(i, i).is_none());
        }
    }
    let fwd = model.forward(&c.documents[0], None).unwrap();
    let m = c.documents[0].m();
    assert_eq!(fwd.logits.shape(), &[m, m, 7]);
}

#[test]
fn checkpoints_restore_models_and_reject_mismatches() {
    let c = corpus(4, 5, 9);
    let model = fresh(small_cfg(Variant::MultiOnly), &c, Task::Relations);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path, DType::F64).unwrap();
    let back = Model::<f64>::load(&path).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.cfg, model.cfg);
    assert_eq!(back.vocab, model.vocab);

    let mut wrong = model.params.clone();
    wrong.insert("cls.b", init::zeros(&[3]));
    assert!(matches!(Model::<f64>::from_parts(wrong, &model.metadata()), Err(ModelError::Checkpoint(_))));
    let other = ror::numerics::save_checkpoint(&path, &model.params, &serde_json::json!({}), DType::F64);
    other.unwrap();
    assert!(matches!(Model::<f64>::load(&path), Err(ModelError::Checkpoint(_))));
}

#[test]
fn two_stage_with_oracle_detector_overfits() {
    let c = corpus(5, 5, 10);
    let mut cfg = small_cfg(Variant::Full);
    cfg.dropout = 0.0;
    cfg.peak_lr = 3e-3;
    cfg.batch_size = 5;
    cfg.epochs = 150;
    let (two, logs) = train_two_stage::<f32>(&c, &c, &cfg, None, true).unwrap();
    assert_eq!(logs.len(), 1);
    assert!(matches!(two.detector, Detector::Oracle));
    let report = two.evaluate(&c, None).unwrap();
    assert_eq!(report.macro_f1, 100.0, "{report:?}");
}

#[test]
fn silent_detector_gives_all_negative_predictions() {
    let c = corpus(4, 5, 11);
    let cfg = small_cfg(Variant::Base);
    let mut detector = fresh(cfg.clone(), &c, Task::Detection);
    detector.params.insert(
        "cls.b",
        ror::Tensor::new(&[2], vec![1e3, -1e3]).unwrap(),
    );
    let two = TwoStage {
        detector: Detector::Model(detector),
        classifier: fresh(cfg, &c, Task::Typing),
    };
    let pred = two.predict_corpus(&c, None).unwrap();
    assert!(pred.iter().all(|d| d.gold.positives().next().is_none()));
    assert_eq!(two.evaluate(&c, None).unwrap().macro_f1, 0.0);
}

#[test]
fn typing_head_never_predicts_no_relation() {
    let c = corpus(3, 5, 12);
    let model = fresh(small_cfg(Variant::Base), &c, Task::Typing);
    for d in &c.documents {
        let labels = model.forward(d, None).unwrap().labels;
        for i in 0..d.m() {
            for j in 0..d.m() {
                assert_eq!(labels.get(i, j).is_none(), i == j);
            }
        }
    }
}

fn labels(docs: &[Document]) -> Vec<Vec<usize>> {
    docs.iter().map(|d| d.gold.cells().iter().map(|l| l.class()).collect()).collect()
}

#[test]
fn ensemble_of_one_or_identical_copies_equals_the_member() {
    let c = corpus(4, 6, 13);
    let model = fresh(small_cfg(Variant::Full), &c, Task::Relations);
    let single = predict_corpus(&model, &c, None).unwrap();
    let one = Ensemble::new(vec![model.clone()]).unwrap();
    assert_eq!(labels(&one.predict_corpus(&c, None).unwrap()), labels(&single));
    let three = Ensemble::new(vec![model.clone(), model.clone(), model.clone()]).unwrap();
    assert_eq!(labels(&three.predict_corpus(&c, None).unwrap()), labels(&single));
    let d = &c.documents[0];
    let p = model.probabilities(d, None).unwrap();
    for (a, b) in three.probabilities(d, None).unwrap().iter().zip(p.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ensemble_averages_probabilities_before_the_argmax() {
    let avg = average_probabilities::<f64>(&[vec![0.6, 0.4], vec![0.3, 0.7]]);
    assert!((avg[0] - 0.45).abs() < 1e-15 && (avg[1] - 0.55).abs() < 1e-15);
    assert_eq!(argmax_rows(&avg, 2, 0), vec![1]);
}

#[test]
fn ensemble_rejects_members_of_another_task() {
    let c = corpus(2, 4, 14);
    let a = fresh(small_cfg(Variant::Base), &c, Task::Relations);
    let b = fresh(small_cfg(Variant::Base), &c, Task::Detection);
    assert!(Ensemble::new(vec![a, b]).is_err());
    assert!(Ensemble::<f64>::new(Vec::new()).is_err());
}

#[test]
fn variants_parse_by_name() {
    for v in [Variant::Base, Variant::BiOnly, Variant::MultiOnly, Variant::Full] {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("both".parse::<Variant>().is_err());
}

#[test]
fn perfect_predictions_score_one_hundred() {
    let c = corpus(10, 6, 15);
    let r = score(&c.schema, &c.documents, &c.documents, false).unwrap();
    assert_eq!((r.macro_f1, r.micro_f1), (100.0, 100.0));
}
