use genret_core::docid::SchemeKind;
use genret_core::model::*;
use genret_core::seed;
use rand::Rng;

fn tiny(scheme: SchemeKind, pawa: bool) -> ModelConfig {
    let vocab = if scheme == SchemeKind::Atomic { 12 } else { 10 };
    let mut c = ModelConfig::desk(scheme, 262, vocab, 3);
    c.num_layers = 1;
    c.d_model = 8;
    c.num_heads = 2;
    c.d_ff = 8;
    c.max_input_len = 16;
    c.dropout_rate = 0.0;
    if pawa {
        c = c.with_pawa();
    }
    c
}

fn batch(c: &ModelConfig, n: usize, seed: u64) -> Vec<Seq2Seq> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| {
            let input = (0..rng.random_range(2..6)).map(|_| rng.random_range(3..c.input_vocab_size as u32)).collect();
            let target = if c.head_kind == HeadKind::Atomic {
                vec![rng.random_range(0..c.target_vocab_size as u32)]
            } else {
                let id: Vec<u32> = (0..rng.random_range(1..c.max_target_len)).map(|_| rng.random_range(0..10)).collect();
                let mut t = target_tokens(c.scheme, &id);
                if c.shared_embeddings {
                    t = id.iter().map(|x| x + 3).chain([2]).collect();
                }
                t
            };
            Seq2Seq { input, target }
        })
        .collect()
}

fn grad_check(c: &ModelConfig, consistency: Consistency) {
    grad_check_dropout(c, consistency, 0.0);
    if consistency != Consistency::Off {
        grad_check_dropout(c, consistency, 0.2);
    }
}

/// Dropout masks are fixed by the seed, so the loss stays a smooth function
/// of the weights and finite differences still apply.
fn grad_check_dropout(c: &ModelConfig, consistency: Consistency, rate: f64) {
    let c = &ModelConfig { dropout_rate: rate, ..c.clone() };
    let params = init_model(c, 11).unwrap();
    assert!(params.num_params() <= 5_000, "{}", params.num_params());
    let data = batch(c, 3, 5);
    let opts = TrainOptions { consistency, clip: None };
    let (_, grads) = loss_and_grads(&params, &data, &opts, 0).unwrap();
    let names: Vec<String> = params.tensors().map(|(n, _)| n.to_string()).collect();
    let mut rng = seed::rng(99);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let ti = rng.random_range(0..names.len());
        let base = params.tensor(&names[ti]).unwrap().clone();
        let k = rng.random_range(0..base.len());
        let h = 1e-5;
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut m = base.clone();
            m.data[k] += delta;
            p.set_tensor(&names[ti], m).unwrap();
            loss_and_grads(&p, &data, &opts, 0).unwrap().0.total
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads[ti].data[k];
        let denom = (analytic.abs() + numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
        checked += 1;
    }
    eprintln!("{:?}/{consistency:?}/p={rate}: worst relative error {worst:.2e}", c.head_kind);
    assert!(worst < 1e-4, "{:?}/{consistency:?}: worst relative error {worst}", c.head_kind);
}

#[test]
fn gradients_match_finite_differences() {
    grad_check(&tiny(SchemeKind::Naive, false), Consistency::Off);
    grad_check(&tiny(SchemeKind::Semantic, false), Consistency::Kl);
    grad_check(&tiny(SchemeKind::Semantic, false), Consistency::Softmax);
    grad_check(&tiny(SchemeKind::Atomic, false), Consistency::Off);
    grad_check(&tiny(SchemeKind::Semantic2D, true), Consistency::Off);
}

#[test]
fn forward_is_deterministic_without_dropout() {
    let mut c = tiny(SchemeKind::Semantic, false);
    c.dropout_rate = 0.1;
    let p = init_model(&c, 1).unwrap();
    let a = forward(&p, &[5, 6, 7], &[4, 5], None).unwrap();
    assert_eq!(a, forward(&p, &[5, 6, 7], &[4, 5], None).unwrap());
    assert_eq!(a.rows, 3);
    assert_eq!(a.cols, c.target_vocab_size);
    let d1 = forward(&p, &[5, 6, 7], &[4, 5], Some(1)).unwrap();
    let d2 = forward(&p, &[5, 6, 7], &[4, 5], Some(2)).unwrap();
    assert_ne!(d1, d2);
    assert_eq!(d1, forward(&p, &[5, 6, 7], &[4, 5], Some(1)).unwrap());
}

#[test]
fn out_of_vocab_is_rejected() {
    let c = tiny(SchemeKind::Semantic, false);
    let p = init_model(&c, 1).unwrap();
    assert!(forward(&p, &[5, 9999], &[], None).is_err());
    assert!(forward(&p, &[5], &[c.target_vocab_size as u32], None).is_err());
}

#[test]
fn softmax_normalized_and_shift_invariant() {
    let c = tiny(SchemeKind::Naive, false);
    let p = init_model(&c, 2).unwrap();
    let l = forward(&p, &[10, 20, 30], &[5, 6], None).unwrap();
    let s = softmax_rows(&l);
    for r in 0..s.rows {
        assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let mut shifted = l.clone();
    shifted.data.iter_mut().for_each(|v| *v += 37.5);
    let s2 = softmax_rows(&shifted);
    for (a, b) in s.data.iter().zip(&s2.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn atomic_head_shape_and_delta() {
    let mut c = tiny(SchemeKind::Atomic, false);
    c.target_vocab_size = 100;
    let p = init_model(&c, 1).unwrap();
    let l = forward(&p, &[4, 5], &[], None).unwrap();
    assert_eq!((l.rows, l.cols), (1, 100));
    assert!(forward(&p, &[4, 5], &[1], None).is_err());
    let mut std = c.clone();
    std.head_kind = HeadKind::Standard;
    std.scheme = SchemeKind::Naive;
    std.target_vocab_size = std.input_vocab_size;
    std.max_target_len = 4;
    assert_eq!(p.num_params() - init_model(&std, 1).unwrap().num_params(), 100 * c.d_model as u64);
}

#[test]
fn pawa_reduces_to_standard_head_with_zero_adaptation() {
    let c = tiny(SchemeKind::Semantic2D, true);
    let mut p = init_model(&c, 4).unwrap();
    let w = p.tensor("pawa.adapt.w").unwrap().clone();
    let b = p.tensor("pawa.adapt.b").unwrap().clone();
    p.set_tensor("pawa.adapt.w", Matrix::zeros(w.rows, w.cols)).unwrap();
    p.set_tensor("pawa.adapt.b", Matrix::zeros(b.rows, b.cols)).unwrap();
    let prefix = [4, 7];
    let h = decoder_hidden(&p, &[9, 10, 11], &prefix).unwrap();
    let got = pawa_logits(&p, &h, &prefix).unwrap();
    let table = p.tensor("embed.target").unwrap();
    let scale = 1.0 / (c.d_model as f64).sqrt();
    for r in 0..h.rows {
        let want: Vec<f64> = (0..table.rows).map(|v| scale * table.row(v).iter().zip(h.row(r)).map(|(a, b)| a * b).sum::<f64>()).collect();
        for (a, b) in got.row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        let direct = pawa_project(table, h.row(r), &vec![0.0; 64], scale);
        assert_eq!(direct.len(), want.len());
    }
}

#[test]
fn pawa_prefix_changes_projection() {
    let c = tiny(SchemeKind::Semantic2D, true);
    let p = init_model(&c, 4).unwrap();
    let h = decoder_hidden(&p, &[9, 10], &[4]).unwrap();
    let a = pawa_logits(&p, &h, &[4]).unwrap();
    let b = pawa_logits(&p, &h, &[8]).unwrap();
    assert_eq!(a.row(0), b.row(0), "position 0 sees BOS only");
    assert_ne!(a.row(1), b.row(1));
    let h0 = decoder_hidden(&p, &[9, 10], &[]).unwrap();
    assert!(pawa_logits(&p, &h0, &[]).unwrap().is_finite());
    let plain = init_model(&tiny(SchemeKind::Semantic, false), 4).unwrap();
    assert!(pawa_logits(&plain, &h0, &[]).is_err());
}

#[test]
fn loss_decreases_on_one_example() {
    let c = tiny(SchemeKind::Semantic, false);
    let mut p = init_model(&c, 3).unwrap();
    let mut opt = Adam::new(&p, LrSchedule::new(1e-2, 1));
    let data = batch(&c, 1, 8);
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let r = train_step(&mut p, &mut opt, &data, &TrainOptions::default(), step).unwrap();
        assert!(r.total < last, "step {step}: {} !< {last}", r.total);
        last = r.total;
    }
}

#[test]
fn kl_consistency_is_zero_without_dropout() {
    let c = tiny(SchemeKind::Semantic, false);
    let mut p = init_model(&c, 3).unwrap();
    let mut opt = Adam::new(&p, LrSchedule::new(1e-3, 10));
    let data = batch(&c, 4, 8);
    let opts = TrainOptions { consistency: Consistency::Kl, clip: None };
    for step in 0..5 {
        let r = train_step(&mut p, &mut opt, &data, &opts, step).unwrap();
        assert_eq!(r.consistency, 0.0);
        assert!((r.total - (r.cross_entropy + KL_WEIGHT * r.consistency)).abs() < 1e-12);
    }
}

#[test]
fn consistency_with_dropout_is_positive() {
    let mut c = tiny(SchemeKind::Semantic, false);
    c.dropout_rate = 0.3;
    let p = init_model(&c, 3).unwrap();
    let data = batch(&c, 4, 8);
    let (r, _) = loss_and_grads(&p, &data, &TrainOptions { consistency: Consistency::Kl, clip: None }, 7).unwrap();
    assert!(r.consistency > 0.0);
    let (s, _) = loss_and_grads(&p, &data, &TrainOptions { consistency: Consistency::Softmax, clip: None }, 7).unwrap();
    assert!((s.total - (s.cross_entropy + SOFTMAX_WEIGHT * s.consistency)).abs() < 1e-12);
    let one = batch(&c, 1, 8);
    assert!(loss_and_grads(&p, &one, &TrainOptions { consistency: Consistency::Softmax, clip: None }, 7).is_err());
}

#[test]
fn nan_guard_skips_update() {
    let c = tiny(SchemeKind::Semantic, false);
    let mut p = init_model(&c, 3).unwrap();
    let mut g = p.tensor("decoder.norm.gain").unwrap().clone();
    g.data[0] = f64::INFINITY;
    p.set_tensor("decoder.norm.gain", g).unwrap();
    let before = p.clone();
    let mut opt = Adam::new(&p, LrSchedule::default());
    let opt_before = opt.clone();
    let r = train_step(&mut p, &mut opt, &batch(&c, 2, 1), &TrainOptions::default(), 0).unwrap();
    assert!(r.nan_detected);
    assert_eq!(p, before);
    assert_eq!(opt, opt_before);
}
