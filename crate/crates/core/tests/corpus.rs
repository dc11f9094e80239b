use std::io::Cursor;

use ror::analysis::count_correlation;
use ror::corpus::{
    generate_synthetic, load_corpus, parse_corpus, relation_pairs, save_corpus, write_corpus, Corpus, CountCorrelation,
    SynthConfig, TypeSchema,
};

fn jsonl(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    write_corpus(&mut out, corpus).unwrap();
    out
}

fn corr(a: &str, b: &str, r: f64) -> CountCorrelation {
    CountCorrelation {
        a: a.into(),
        b: b.into(),
        r,
    }
}

#[test]
fn generator_is_byte_identical_per_seed() {
    let schema = TypeSchema::ace05();
    let cfg = SynthConfig {
        docs: 40,
        ..SynthConfig::default()
    };
    let a = jsonl(&generate_synthetic(&schema, &cfg, 7).unwrap());
    let b = jsonl(&generate_synthetic(&schema, &cfg, 7).unwrap());
    let c = jsonl(&generate_synthetic(&schema, &cfg, 8).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn documents_do_not_depend_on_corpus_size() {
    let schema = TypeSchema::ace05();
    let small = generate_synthetic(&schema, &SynthConfig { docs: 5, ..SynthConfig::default() }, 3).unwrap();
    let large = generate_synthetic(&schema, &SynthConfig { docs: 20, ..SynthConfig::default() }, 3).unwrap();
    assert_eq!(small.documents[..], large.documents[..5]);
}

#[test]
fn symmetric_relations_fill_both_cells() {
    let schema = TypeSchema::ace05();
    let per_soc = schema.relation_id("Per-Soc").unwrap();
    let cfg = SynthConfig {
        docs: 300,
        density: 1.5,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&schema, &cfg, 1).unwrap();
    let mut seen = 0;
    for d in &corpus.documents {
        for (i, j, r) in d.gold.positives() {
            if r == per_soc {
                seen += 1;
                assert_eq!(d.gold.get(j, i), d.gold.get(i, j), "{} ({i},{j})", d.doc_id);
            }
        }
    }
    assert!(seen > 100, "only {seen} Per-Soc cells");
}

#[test]
fn generated_corpora_satisfy_the_schema() {
    let schema = TypeSchema::ace05();
    let cfg = SynthConfig {
        docs: 200,
        density: 1.2,
        cue_prob: 0.3,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&schema, &cfg, 4).unwrap();
    for d in &corpus.documents {
        assert!(d.schema_violations(&schema).is_empty(), "{}", d.doc_id);
        assert!((cfg.min_entities..=cfg.max_entities).contains(&d.m()));
        for i in 0..d.m() {
            assert!(d.gold.get(i, i).is_none());
        }
    }
    let (back, report) = parse_corpus(Cursor::new(jsonl(&corpus)), &schema, true).unwrap();
    assert_eq!(back.documents, corpus.documents);
    assert_eq!(report.violations, 0);
}

#[test]
fn planted_correlation_is_recovered() {
    let schema = TypeSchema::ace05();
    let cfg = SynthConfig {
        docs: 600,
        max_entities: 14,
        density: 1.5,
        correlations: vec![corr("Phys", "Org-Aff", 0.8)],
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&schema, &cfg, 21).unwrap();
    let m = count_correlation(&corpus).unwrap();
    let (a, b) = (
        schema.relation_id("Phys").unwrap().index(),
        schema.relation_id("Org-Aff").unwrap().index(),
    );
    let r = m.r[a][b].unwrap();
    assert!((r - 0.8).abs() <= 0.1, "recovered r = {r}");
    assert_eq!(m.r[a][b], m.r[b][a]);
}

#[test]
fn independent_counts_are_uncorrelated() {
    let schema = TypeSchema::ace05();
    let cfg = SynthConfig {
        docs: 1000,
        max_entities: 14,
        density: 1.5,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&schema, &cfg, 22).unwrap();
    let m = count_correlation(&corpus).unwrap();
    for a in 0..m.r.len() {
        for b in 0..m.r.len() {
            if a != b {
                let r = m.r[a][b].unwrap();
                assert!(r.abs() < 0.1, "{} ~ {}: {r}", m.labels[a], m.labels[b]);
            }
        }
    }
}

#[test]
fn corpus_round_trips_through_a_file() {
    let schema = TypeSchema::ace05();
    let corpus = generate_synthetic(&schema, &SynthConfig { docs: 25, ..SynthConfig::default() }, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    save_corpus(&path, &corpus).unwrap();
    let (back, _) = load_corpus(&path, &schema, true).unwrap();
    assert_eq!(back.documents, corpus.documents);
    assert_eq!(std::fs::read(&path).unwrap(), jsonl(&back));
}

#[test]
fn schema_round_trips_through_json() {
    let schema = TypeSchema::ace05();
    let back = TypeSchema::from_json_str(&schema.to_json_string()).unwrap();
    assert_eq!(back, schema);
    assert_eq!(schema.num_classes(), 7);
}

#[test]
fn relation_pair_counts() {
    assert_eq!(relation_pairs(7, true).len(), 49);
    assert_eq!(relation_pairs(7, false).len(), 42);
    assert_eq!(relation_pairs(1, false).len(), 0);
    assert_eq!(relation_pairs(3, false), vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
}

#[test]
fn split_and_select_preserve_order() {
    let schema = TypeSchema::ace05();
    let corpus = generate_synthetic(&schema, &SynthConfig { docs: 10, ..SynthConfig::default() }, 2).unwrap();
    let (a, b) = corpus.split_at(7);
    assert_eq!((a.len(), b.len()), (7, 3));
    assert_eq!(b.documents[0], corpus.documents[7]);
    let picked = corpus.select(&[9, 0]);
    assert_eq!(picked.documents[0], corpus.documents[9]);
}
