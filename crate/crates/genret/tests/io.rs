use std::fs;

use genret::io;
use genret::synth::{synth_corpus, SynthConfig};
use genret_core::corpus::{Corpus, ManifestSource};
use genret_core::decode::{Ranked, RankedList};
use genret_core::docid::{naive_ids, EmbeddingMatrix};
use genret_core::model::{init_model, Adam, LrSchedule, ModelConfig};
use genret_core::tasks::SyntheticQuerySet;

fn small_corpus() -> Corpus {
    let cfg = SynthConfig { num_docs: 30, dev_queries: 10, ..Default::default() };
    Corpus::build(synth_corpus(&cfg), 400, ManifestSource::default()).unwrap()
}

#[test]
fn corpus_round_trip_keeps_manifest_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus();
    io::write_corpus(dir.path(), &corpus).unwrap();
    let before = fs::read(dir.path().join(io::MANIFEST_FILE)).unwrap();
    let back = io::read_corpus(dir.path()).unwrap();
    assert_eq!(back.documents, corpus.documents);
    assert_eq!(back.dev_qrels, corpus.dev_qrels);
    let again = tempfile::tempdir().unwrap();
    io::write_corpus(again.path(), &back).unwrap();
    assert_eq!(fs::read(again.path().join(io::MANIFEST_FILE)).unwrap(), before);
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("docs.jsonl");
    fs::write(&p, "{\"doc_id\":\"1\",\"text\":\"a\"}\n{\"doc_id\":\"2\"\n").unwrap();
    let err = io::read_docs(&p).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("docs.jsonl:2"), "{err}");
}

#[test]
fn duplicate_and_dangling_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (d, q, r) = (dir.path().join("d.jsonl"), dir.path().join("q.jsonl"), dir.path().join("r.tsv"));
    fs::write(&d, "{\"doc_id\":\"7\",\"text\":\"x y\"}\n{\"doc_id\":\"7\",\"text\":\"z\"}\n").unwrap();
    fs::write(&q, "{\"query_id\":\"a\",\"text\":\"x\",\"split\":\"train\"}\n").unwrap();
    fs::write(&r, "a\t7\n").unwrap();
    let err = io::load_corpus(&d, &q, &r, 300).unwrap_err();
    assert!(err.to_string().contains('7'), "{err}");

    fs::write(&d, "{\"doc_id\":\"7\",\"text\":\"x y\"}\n").unwrap();
    fs::write(&r, "a\t8\n").unwrap();
    assert!(io::load_corpus(&d, &q, &r, 300).is_err());
}

#[test]
fn scheme_embeddings_and_queries_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus();
    let scheme = naive_ids(corpus.documents.keys().map(String::as_str)).unwrap();
    io::write_scheme(dir.path(), &scheme).unwrap();
    assert_eq!(io::read_scheme(dir.path()).unwrap(), scheme);

    let emb = EmbeddingMatrix::new(vec!["b".into(), "a".into()], 3, vec![1.0, -2.5, 0.0, 3.25, 1e-7, -0.0]).unwrap();
    let (bin, order) = (dir.path().join("e.bin"), dir.path().join("e.txt"));
    io::write_embeddings(&bin, &order, &emb).unwrap();
    assert_eq!(io::read_embeddings(&bin, &order).unwrap(), emb);

    let mut queries = std::collections::BTreeMap::new();
    for d in corpus.documents.keys().take(3) {
        queries.insert(d.clone(), vec![format!("about {d}"), "second query".into()]);
    }
    let qset = SyntheticQuerySet { generator: "test".into(), config: None, queries, warnings: vec![] };
    let p = dir.path().join("s.jsonl");
    io::write_synthetic_queries(&p, &qset).unwrap();
    assert_eq!(io::read_synthetic_queries(&p, &corpus).unwrap().queries, qset.queries);
}

#[test]
fn run_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let runs = vec![
        RankedList { query_id: "q1".into(), results: vec![Ranked { doc_id: "d1".into(), score: -0.25 }, Ranked { doc_id: "d2".into(), score: -1.5 }], warnings: vec![] },
        RankedList { query_id: "q2".into(), results: vec![Ranked { doc_id: "d3".into(), score: -2.0 }], warnings: vec![] },
    ];
    let p = dir.path().join("run.tsv");
    io::write_run(&p, &runs).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("q1\td1\t1\t-0.250000"));
    assert_eq!(io::read_run(&p).unwrap(), runs);
}

#[test]
fn checkpoint_round_trip_is_f32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ModelConfig::desk(genret_core::docid::SchemeKind::Semantic, 262, 10, 3);
    (c.num_layers, c.d_model, c.num_heads, c.d_ff) = (1, 8, 2, 8);
    let params = init_model(&c, 3).unwrap();
    let opt = Adam::new(&params, LrSchedule::new(1e-3, 100));
    io::write_checkpoint(dir.path(), &params, Some(&opt)).unwrap();
    let (back, back_opt) = io::read_checkpoint(dir.path()).unwrap();
    for ((n1, a), (n2, b)) in params.tensors().zip(back.tensors()) {
        assert_eq!(n1, n2);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (*x as f32) as f64 == *y));
    }
    let back_opt = back_opt.unwrap();
    assert_eq!(back_opt.step, opt.step);
    assert_eq!(back_opt.schedule, opt.schedule);

    let mut bytes = fs::read(dir.path().join("weights.bin")).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(dir.path().join("weights.bin"), bytes).unwrap();
    assert!(io::read_checkpoint(dir.path()).is_err());
}

#[test]
fn lock_is_exclusive_and_released() {
    let dir = tempfile::tempdir().unwrap();
    let lock = io::DirLock::acquire(dir.path()).unwrap();
    assert!(matches!(io::DirLock::acquire(dir.path()), Err(genret::Error::Locked(_))));
    drop(lock);
    assert!(io::DirLock::acquire(dir.path()).is_ok());
}
