use std::collections::{BTreeMap, BTreeSet};

use genret_core::decode::{atomic_rank, beam_search, BeamConfig};
use genret_core::docid::{atomic_ids, build_trie, naive_ids, DocIdScheme, SchemeKind};
use genret_core::model::*;
use genret_core::seed;
use rand::Rng;

fn tiny(scheme: SchemeKind, id_vocab: usize, max_len: usize, seed_: u64) -> ModelParams {
    let mut c = ModelConfig::desk(scheme, 270, id_vocab, max_len);
    c.num_layers = 1;
    c.d_model = 8;
    c.num_heads = 2;
    c.d_ff = 16;
    init_model(&c, seed_).unwrap()
}

fn random_scheme(rng: &mut seed::Rng, docs: usize, vocab: u32, depth: usize) -> DocIdScheme {
    let mut seen = BTreeSet::new();
    let mut map = BTreeMap::new();
    while map.len() < docs {
        let len = rng.random_range(1..=depth);
        let id: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        if seen.insert(id.clone()) {
            map.insert(format!("doc{:03}", map.len()), id);
        }
    }
    DocIdScheme::from_map(SchemeKind::Semantic, vocab as usize, 0, map).unwrap()
}

/// Full sequence log-probability through teacher forcing, one id at a time.
fn exhaustive(params: &ModelParams, scheme: &DocIdScheme, query: &[u32]) -> Vec<(String, f64, Vec<u32>)> {
    let mut all: Vec<(String, f64, Vec<u32>)> = scheme
        .iter()
        .map(|(d, id)| {
            let target = target_tokens(scheme.kind(), id);
            let logits = forward(params, query, &target[..target.len() - 1], None).unwrap();
            let probs = softmax_rows(&logits);
            let lp: f64 = target.iter().enumerate().map(|(r, &t)| probs.get(r, t as usize).ln()).sum();
            (d.to_string(), lp, id.to_vec())
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
    all
}

#[test]
fn wide_beam_matches_exhaustive_enumeration() {
    let mut rng = seed::rng(7);
    for trial in 0..30 {
        let docs = rng.random_range(2..=64);
        let scheme = random_scheme(&mut rng, docs, 6, 4);
        let params = tiny(SchemeKind::Semantic, 6, 4, trial);
        let trie = build_trie(&scheme).unwrap();
        let query: Vec<u32> = (0..5).map(|_| rng.random_range(3..270)).collect();
        let cfg = BeamConfig { beam_width: docs, ..Default::default() };
        let got = beam_search(&params, &scheme, &trie, "q", &query, &cfg).unwrap();
        let want = exhaustive(&params, &scheme, &query);
        assert_eq!(got.results.len(), docs);
        for (g, w) in got.results.iter().zip(&want).take(10) {
            assert_eq!(g.doc_id, w.0, "trial {trial}");
            assert!((g.score - w.1).abs() < 1e-9);
        }
    }
}

#[test]
fn greedy_beam_follows_argmax_chain() {
    // Fixed depth, so no identifier is a prefix of another.
    let map = (0..27u32).map(|i| (format!("doc{i:02}"), vec![i / 9, (i / 3) % 3, i % 3])).collect();
    let scheme = DocIdScheme::from_map(SchemeKind::Semantic, 5, 0, map).unwrap();
    let params = tiny(SchemeKind::Semantic, 5, 3, 1);
    let trie = build_trie(&scheme).unwrap();
    let query = [10, 11, 12];
    let got = beam_search(&params, &scheme, &trie, "q", &query, &BeamConfig { beam_width: 1, ..Default::default() }).unwrap();
    assert_eq!(got.results.len(), 1);
    let mut prefix: Vec<u32> = Vec::new();
    loop {
        let logits = forward(&params, &query, &prefix.iter().map(|t| t + 3).collect::<Vec<_>>(), None).unwrap();
        let row = logits.row(logits.rows - 1);
        let best = trie
            .valid_next(&prefix)
            .into_iter()
            .map(|n| match n {
                genret_core::docid::Next::End => (2, n),
                genret_core::docid::Next::Token(t) => (t + 3, n),
            })
            .max_by(|a, b| row[a.0 as usize].total_cmp(&row[b.0 as usize]))
            .unwrap();
        match best.1 {
            genret_core::docid::Next::End => break,
            genret_core::docid::Next::Token(t) => prefix.push(t),
        }
    }
    assert_eq!(got.results[0].doc_id, trie.lookup(&prefix).unwrap());
}

#[test]
fn constrained_results_are_always_valid() {
    let mut rng = seed::rng(11);
    for trial in 0..20 {
        let scheme = random_scheme(&mut rng, 30, 8, 3);
        let params = tiny(SchemeKind::Semantic, 8, 3, 100 + trial);
        let trie = build_trie(&scheme).unwrap();
        let query: Vec<u32> = (0..4).map(|_| rng.random_range(3..270)).collect();
        let cfg = BeamConfig { beam_width: 5, ..Default::default() };
        let got = beam_search(&params, &scheme, &trie, "q", &query, &cfg).unwrap();
        assert!(!got.results.is_empty() && got.results.len() <= 5);
        for w in got.results.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for r in &got.results {
            assert!(scheme.encode(&r.doc_id).is_some());
        }
    }
}

#[test]
fn wider_beam_never_lowers_best_score() {
    let mut rng = seed::rng(5);
    let mut violations = 0;
    for trial in 0..100 {
        let scheme = random_scheme(&mut rng, 40, 6, 4);
        let params = tiny(SchemeKind::Semantic, 6, 4, 200 + trial);
        let trie = build_trie(&scheme).unwrap();
        let query: Vec<u32> = (0..4).map(|_| rng.random_range(3..270)).collect();
        let mut last = f64::NEG_INFINITY;
        for w in [1, 2, 4, 8] {
            let r = beam_search(&params, &scheme, &trie, "q", &query, &BeamConfig { beam_width: w, ..Default::default() }).unwrap();
            let s = r.results[0].score;
            if s < last - 1e-12 {
                violations += 1;
            }
            last = last.max(s);
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn unconstrained_drops_invalid_sequences() {
    let scheme = naive_ids(["12", "13", "2"]).unwrap();
    let mut c = ModelConfig::desk(SchemeKind::Naive, 270, 256, 3);
    c.num_layers = 1;
    c.d_model = 8;
    c.num_heads = 2;
    let params = init_model(&c, 9).unwrap();
    let trie = build_trie(&scheme).unwrap();
    let cfg = BeamConfig { beam_width: 10, constrained: false, ..Default::default() };
    let got = beam_search(&params, &scheme, &trie, "q", &[40, 41], &cfg).unwrap();
    for r in &got.results {
        assert!(["12", "13", "2"].contains(&r.doc_id.as_str()));
    }
    assert!(got.results.len() < 10);
}

#[test]
fn beam_search_is_deterministic() {
    let mut rng = seed::rng(1);
    let scheme = random_scheme(&mut rng, 25, 6, 3);
    let params = tiny(SchemeKind::Semantic, 6, 3, 2);
    let trie = build_trie(&scheme).unwrap();
    let a = beam_search(&params, &scheme, &trie, "q", &[5, 6], &BeamConfig::default()).unwrap();
    let b = beam_search(&params, &scheme, &trie, "q", &[5, 6], &BeamConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn atomic_ranking_sorts_logits_with_doc_id_ties() {
    let ids: Vec<String> = (0..12).map(|i| format!("d{i:02}")).collect();
    let scheme = atomic_ids(ids.iter().map(String::as_str)).unwrap();
    let mut c = ModelConfig::desk(SchemeKind::Atomic, 270, 12, 1);
    c.num_layers = 1;
    c.d_model = 8;
    c.num_heads = 2;
    let mut params = init_model(&c, 4).unwrap();
    let full = atomic_rank(&params, &scheme, "q", &[7, 8], 100).unwrap();
    assert_eq!(full.results.len(), 12);
    assert_eq!(full.doc_ids().collect::<BTreeSet<_>>().len(), 12);
    let logits = forward(&params, &[7, 8], &[], None).unwrap();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| logits.get(0, b).total_cmp(&logits.get(0, a)));
    let top = atomic_rank(&params, &scheme, "q", &[7, 8], 10).unwrap();
    assert_eq!(top.doc_ids().collect::<Vec<_>>(), order[..10].iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>());

    let mut head = params.tensor("head.atomic").unwrap().clone();
    let row = head.row(3).to_vec();
    head.row_mut(9).copy_from_slice(&row);
    params.set_tensor("head.atomic", head).unwrap();
    let r = atomic_rank(&params, &scheme, "q", &[7, 8], 12).unwrap();
    let p3 = r.rank_of("d03").unwrap();
    assert_eq!(r.rank_of("d09").unwrap(), p3 + 1);
}
