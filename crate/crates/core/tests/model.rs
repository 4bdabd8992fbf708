use metaseq::episodes::{gen_me_episode, gen_perm_episode, Experiment};
use metaseq::numerics::{adam_step, AdamState, Init};
use metaseq::model::*;
use metaseq::numerics::{Graph, ParameterStore};
use metaseq::scan::{Instruction, Pair};
use rand::seq::SliceRandom;
use metaseq::training::experiment_vocabs;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn me_model(m: usize, variant: Variant, seed: u64) -> MetaSeq2Seq<f64> {
    let (iv, ov) = experiment_vocabs(Experiment::Me);
    let cfg = ModelConfig { m, variant, dropout: 0.0, ..Default::default() };
    MetaSeq2Seq::new(cfg, iv, ov, seed).unwrap()
}

fn loss_of(model: &MetaSeq2Seq<f64>, params: &ParameterStore<f64>, support: &[Pair], query: &[Pair], sl: bool) -> f64 {
    let mut probe = model.clone();
    *probe.params_mut() = params.clone();
    let mut g = Graph::new(probe.params(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = probe.episode_loss(&mut g, support, query, sl, &mut rng).unwrap();
    g.scalar(out.loss)
}

/// Central differences on a sample of entries from every parameter.
fn check_model_gradient(model: &MetaSeq2Seq<f64>, support: &[Pair], query: &[Pair], sl: bool) -> f64 {
    let mut analytic = model.params().clone();
    analytic.zero_grad();
    {
        let mut g = Graph::new(model.params(), false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.episode_loss(&mut g, support, query, sl, &mut rng).unwrap();
        g.backward(out.loss).accumulate_into(&mut analytic);
    }
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = model.params().clone();
    for id in model.params().ids().collect::<Vec<_>>() {
        let n = probe.value(id).len();
        for k in (0..n).step_by((n / 7).max(1)) {
            let orig = probe.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + eps;
            let up = loss_of(model, &probe, support, query, sl);
            probe.value_mut(id).data_mut()[k] = orig - eps;
            let down = loss_of(model, &probe, support, query, sl);
            probe.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.grad(id).data()[k];
            // Entries with near-zero gradients are compared absolutely.
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4);
            assert!(err < 1e-4, "{}[{k}]: analytic {a} numeric {numeric}", model.params().name(id));
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for variant in Variant::ALL {
        let model = me_model(6, variant, 3);
        let ep = gen_me_episode(&[2, 0, 3, 1], &mut rng);
        let q = &ep.query[..3];
        check_model_gradient(&model, &ep.support, q, variant.support_loss());
    }
}

#[test]
fn query_logits_ignore_support_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = {
        let (iv, ov) = experiment_vocabs(Experiment::AddJumpPerm);
        let cfg = ModelConfig { m: 12, dropout: 0.0, ..Default::default() };
        MetaSeq2Seq::<f64>::new(cfg, iv, ov, 2).unwrap()
    };
    for _ in 0..5 {
        let ep = gen_perm_episode(&mut rng);
        let q = &ep.query[..4];
        let base = model.query_logits(&ep.support, q).unwrap();
        let mut shuffled = ep.support.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(model.query_logits(&shuffled, q).unwrap(), base);

        let m32: MetaSeq2Seq<f32> = model.cast();
        let a = m32.query_logits(&ep.support, q).unwrap();
        let b = m32.query_logits(&shuffled, q).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn attention_rows_are_normalized() {
    let model = me_model(10, Variant::Full, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ep = gen_me_episode(&[1, 2, 3, 0], &mut rng);
    let queries: Vec<Instruction> = ep.query.iter().map(|p| p.instruction.clone()).collect();
    for p in model.predict(&ep.support, &queries, true).unwrap() {
        let t = p.trace.unwrap();
        assert_eq!(t.memory_attention.len(), t.query.len());
        assert!(t.memory_attention.iter().all(|r| r.len() == 3));
        assert!(!t.decoder_attention.is_empty());
        assert!(t.decoder_attention.iter().all(|r| r.len() == t.query.len()));
        assert!(t.max_row_error() < 1e-6);
    }
}

#[test]
fn me_query_trace_shape() {
    let model = me_model(10, Variant::Full, 5);
    let support = [Pair::from_strs("wif", "red"), Pair::from_strs("lug", "yellow"), Pair::from_strs("zup", "green")];
    let q = Instruction::parse_str("lug zup lug wif dax zup");
    let p = model.predict(&support, &[q], true).unwrap().remove(0);
    let t = p.trace.unwrap();
    assert_eq!((t.memory_attention.len(), t.memory_attention[0].len()), (7, 3));
    assert_eq!(t.query.last().map(String::as_str), Some("<eos>"));
}

/// Parameter count from layer shapes, independent of the registration code.
fn expected_params(m: usize, vin: usize, vout: usize, variant: Variant) -> usize {
    let lstm = |input: usize| input * 4 * m + m * 4 * m + 4 * m;
    let bilstm = 2 * lstm(m) + 2 * lstm(2 * m) + 2 * m * m + m;
    let mut n = vin * m + vout * m + bilstm;
    if variant.uses_memory() {
        n += bilstm;
    }
    n += 2 * m * m + m;
    n += 2 * lstm(m);
    if variant.decoder_attention() {
        n += 2 * m * m + m;
    }
    n + m * vout + vout
}

#[test]
fn parameter_count_at_full_size() {
    let (iv, ov) = experiment_vocabs(Experiment::AddJumpPerm);
    assert_eq!((iv.len(), ov.len()), (16, 9));
    for variant in Variant::ALL {
        let cfg = ModelConfig { variant, ..Default::default() };
        let model = MetaSeq2Seq::<f32>::new(cfg, iv.clone(), ov.clone(), 1).unwrap();
        let total: usize = model.params().ids().map(|id| model.params().value(id).len()).sum();
        assert_eq!(total, expected_params(200, 16, 9, variant), "{variant}");
    }
    assert_eq!(expected_params(200, 16, 9, Variant::Full), 4_175_609);
}

#[test]
fn without_decoder_attention_only_the_last_context_row_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ep = gen_me_episode(&[3, 1, 0, 2], &mut rng);
    let lesioned = me_model(8, Variant::NoDecoderAttention, 1);
    for rows in lesioned.context_gradient_norms(&ep.support, &ep.query[..5]).unwrap() {
        let (last, rest) = rows.split_last().unwrap();
        assert!(*last > 0.0, "{rows:?}");
        assert!(rest.iter().all(|&g| g == 0.0), "{rows:?}");
    }
    assert!(lesioned.params().id("attn.w").is_none());

    let full = me_model(8, Variant::Full, 1);
    for rows in full.context_gradient_norms(&ep.support, &ep.query[..5]).unwrap() {
        assert!(rows.iter().all(|&g| g > 0.0), "{rows:?}");
    }
}

#[test]
fn greedy_decoding_is_deterministic() {
    let model = me_model(10, Variant::Full, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ep = gen_me_episode(&[0, 2, 1, 3], &mut rng);
    let queries: Vec<Instruction> = ep.query.iter().map(|p| p.instruction.clone()).collect();
    let a = model.predict(&ep.support, &queries, true).unwrap();
    let b = model.predict(&ep.support, &queries, true).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|p| p.overflow == (p.output.len() == model.config().max_decode_len)));
}

#[test]
fn support_and_vocabulary_errors() {
    let model = me_model(6, Variant::Full, 1);
    let q = [Instruction::parse_str("dax")];
    assert_eq!(model.predict(&[], &q, false).unwrap_err(), ModelError::EmptySupport);
    let support = [Pair::from_strs("dax", "red")];
    let err = model.predict(&support, &[Instruction::parse_str("dax blick")], false).unwrap_err();
    assert_eq!(err, ModelError::VocabMismatch { symbol: "blick".into(), side: "input" });
    let err = model.predict(&[Pair::from_strs("dax", "mauve")], &q, false).unwrap_err();
    assert_eq!(err, ModelError::VocabMismatch { symbol: "mauve".into(), side: "output" });

    let baseline = me_model(6, Variant::StandardSeq2Seq, 1);
    assert!(baseline.predict(&[], &q, false).is_ok());
}

#[test]
fn fixed_init_respects_its_range() {
    let (iv, ov) = experiment_vocabs(Experiment::Me);
    let cfg = ModelConfig { m: 16, init: Init::Fixed, ..Default::default() };
    let model = MetaSeq2Seq::<f64>::new(cfg, iv, ov, 3).unwrap();
    for id in model.params().ids() {
        let v = model.params().value(id);
        assert!(v.data().iter().all(|x| x.abs() <= 0.08));
    }
}

/// A query identical to one support input is answered with that item's
/// output once the model has been fitted to a single episode.
#[test]
fn overfits_a_single_episode() {
    let support = vec![
        Pair::from_strs("dax", "red"),
        Pair::from_strs("wif", "green"),
        Pair::from_strs("lug", "blue"),
    ];
    let query = vec![Pair::from_strs("wif", "green"), Pair::from_strs("dax lug", "red blue")];
    let (iv, ov) = experiment_vocabs(Experiment::Me);
    let cfg = ModelConfig { m: 16, dropout: 0.0, ..Default::default() };
    let mut model = MetaSeq2Seq::<f64>::new(cfg, iv, ov, 4).unwrap();
    let mut adam = AdamState::new(model.params(), 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut first = None;
    for _ in 0..150 {
        let (loss, grads) = {
            let mut g = Graph::new(model.params(), true);
            let out = model.episode_loss(&mut g, &support, &query, true, &mut rng).unwrap();
            (g.scalar(out.loss), g.backward(out.loss))
        };
        first.get_or_insert(loss);
        let p = model.params_mut();
        p.zero_grad();
        grads.accumulate_into(p);
        adam_step(p, &mut adam);
    }
    let queries: Vec<Instruction> = query.iter().map(|p| p.instruction.clone()).collect();
    let preds = model.predict(&support, &queries, false).unwrap();
    for (p, q) in preds.iter().zip(&query) {
        assert!(p.matches(q.actions.actions()), "{:?} vs {}", p.output, q.actions);
    }
    assert!(first.unwrap() > 1.0);
}

#[test]
fn memorizes_one_support_set_at_m50() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ep = gen_me_episode(&[0, 1, 2, 3], &mut rng);
    let (iv, ov) = experiment_vocabs(Experiment::Me);
    let cfg = ModelConfig { m: 50, dropout: 0.0, ..Default::default() };
    let mut model = MetaSeq2Seq::<f32>::new(cfg, iv, ov, 6).unwrap();
    let mut adam = AdamState::new(model.params(), 0.001);
    let mut reached = None;
    for step in 1..=500 {
        let (loss, grads) = {
            let mut g = Graph::new(model.params(), true);
            let out = model.episode_loss(&mut g, &ep.support, &ep.query, true, &mut rng).unwrap();
            (g.scalar(out.loss), g.backward(out.loss))
        };
        if loss < 0.01 {
            reached = Some(step);
            break;
        }
        let p = model.params_mut();
        p.zero_grad();
        grads.accumulate_into(p);
        adam_step(p, &mut adam);
    }
    assert!(reached.is_some(), "loss never fell below 0.01");
}
