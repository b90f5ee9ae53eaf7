use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::InterleavePreset;
use crate::textproc::{random_encoded, Limits, PAD};

fn small_limits() -> Limits {
    Limits {
        max_posts: 4,
        post_len: 5,
        summary_len: 4,
        max_threads: 3,
        flat_len: 300,
    }
}

fn config(variant: Variant, d: usize) -> ModelConfig {
    ModelConfig::new(variant, d, 20, small_limits())
}

fn instance(seed: u64, threads: usize) -> EncodedInstance {
    random_encoded(&mut ChaCha8Rng::seed_from_u64(seed), 20, &small_limits(), threads)
}

fn zero_params(model: &mut Model, prefix: &str) {
    for id in model.params.ids().collect::<Vec<_>>() {
        if model.params.name(id).starts_with(prefix) {
            model.params.get_mut(id).data.fill(0.0);
        }
    }
}

#[test]
fn encoder_shapes_at_full_scale() {
    let limits = Limits::for_preset(&InterleavePreset::new(3, 3, 5, 5));
    let inst = random_encoded(&mut ChaCha8Rng::seed_from_u64(1), 40, &Limits { post_len: 20, ..limits }, 3);
    let full: Vec<Vec<usize>> = inst.post_ids.iter().map(|r| r.iter().map(|&x| if x == PAD { 7 } else { x }).collect()).collect();
    let inst = EncodedInstance {
        word_mask: vec![vec![true; 20]; 15],
        post_ids: full,
        ..inst
    };
    let model = Model::new(ModelConfig::new(Variant::Hier2hier, 100, 40, limits), 0).unwrap();
    let mut g = Graph::new(&model.params);
    let ch = model.forward().encode(&mut g, &inst).unwrap();
    assert_eq!(g.shape(ch.words), [15 * 20, 200]);
    assert_eq!(g.shape(ch.gamma_items), [15, 200]);
    let grid = to_grid(g.value(ch.words), &ch.tokens, 15, 20);
    assert_eq!((grid.len(), grid[0].len()), (15, 20));
}

#[test]
fn single_post_channel_vector_is_that_post() {
    let model = Model::new(config(Variant::Hier2hier, 6), 3).unwrap();
    let mut inst = instance(2, 1);
    for i in 1..4 {
        inst.post_ids[i].fill(PAD);
        inst.word_mask[i].fill(false);
        inst.post_mask[i] = false;
    }
    let mut g = Graph::new(&model.params);
    let ch = model.forward().encode(&mut g, &inst).unwrap();
    assert_eq!(g.value(ch.c_prime), g.value(ch.post_rows[0]));
}

#[test]
fn trailing_empty_posts_do_not_change_encoding() {
    let model = Model::new(config(Variant::Hier2hier, 6), 3).unwrap();
    let inst = instance(4, 2);
    let mut padded = inst.clone();
    for _ in 0..2 {
        padded.post_ids.push(vec![PAD; 5]);
        padded.word_mask.push(vec![false; 5]);
        padded.post_mask.push(false);
    }
    let mut g1 = Graph::new(&model.params);
    let a = model.forward().encode(&mut g1, &inst).unwrap();
    let mut g2 = Graph::new(&model.params);
    let b = model.forward().encode(&mut g2, &padded).unwrap();
    assert_eq!(g1.value(a.words), g2.value(b.words));
    assert_eq!(g1.value(a.gamma_items), g2.value(b.gamma_items));
}

#[test]
fn all_pad_channel_is_invalid() {
    let model = Model::new(config(Variant::Hier2hier, 4), 0).unwrap();
    let mut inst = instance(1, 1);
    for i in 0..4 {
        inst.post_ids[i].fill(PAD);
        inst.word_mask[i].fill(false);
        inst.post_mask[i] = false;
    }
    let mut g = Graph::new(&model.params);
    assert!(matches!(
        model.forward().encode(&mut g, &inst),
        Err(crate::Error::InvalidInput(_))
    ));
}

#[test]
fn zeroed_attention_gives_halves_and_quarter_sum() {
    let mut model = Model::new(config(Variant::Hier2hier, 5), 1).unwrap();
    zero_params(&mut model, "attn_gamma");
    zero_params(&mut model, "attn_beta");
    let inst = instance(3, 2);
    let mut g = Graph::new(&model.params);
    let f = model.forward();
    let ch = f.encode(&mut g, &inst).unwrap();
    let proj = f.project(&mut g, &ch).unwrap();
    let h = g.vector(vec![0.3, -0.2, 0.1, 0.7, -0.5]);
    let pa = f.phrase_attention(&mut g, &ch, &proj, h).unwrap();
    assert!(g.value(pa.gamma.unwrap()).iter().all(|&x| x == 0.5));
    assert!(g.value(pa.beta.unwrap()).iter().all(|&x| x == 0.5));
    assert!(g.value(pa.beta_hat.unwrap()).iter().all(|&x| x == 0.25));
    let s = f.sum_weighted_words(&mut g, &ch, pa.beta_hat).unwrap();
    let total = f.sum_weighted_words(&mut g, &ch, None).unwrap();
    for (a, b) in g.value(s).iter().zip(g.value(total)) {
        assert!((a - 0.25 * b).abs() < 1e-15);
    }
}

#[test]
fn softmax_gamma_with_uniform_scores_is_a_quarter_each() {
    let mut cfg = config(Variant::Hier2hier, 5);
    cfg.gamma_mode = GammaMode::Softmax;
    let mut model = Model::new(cfg, 1).unwrap();
    zero_params(&mut model, "attn_gamma");
    let inst = instance(3, 2);
    let mut g = Graph::new(&model.params);
    let f = model.forward();
    let ch = f.encode(&mut g, &inst).unwrap();
    let proj = f.project(&mut g, &ch).unwrap();
    let h = g.zeros(&[5]);
    let pa = f.phrase_attention(&mut g, &ch, &proj, h).unwrap();
    assert_eq!(g.value(pa.gamma.unwrap()), [0.25; 4]);
}

#[test]
fn disabled_gamma_and_beta_leave_alpha_untouched() {
    let mut cfg = config(Variant::Hier2hier, 5);
    cfg.gamma_enabled = false;
    cfg.beta_enabled = false;
    let model = Model::new(cfg, 2).unwrap();
    let mut g = Graph::new(&model.params);
    let tf = model.forward().teacher_forced(&mut g, &instance(5, 3), None, true).unwrap();
    for step in &tf.trace {
        assert!(step.beta_hat.is_none());
        for w in &step.words {
            assert_eq!(
                w.alpha.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                w.alpha_hat.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn rescaling_identities_hold_exactly() {
    let model = Model::new(config(Variant::Hier2hier, 5), 7).unwrap();
    let inst = instance(8, 3);
    let mut g = Graph::new(&model.params);
    let f = model.forward();
    let tf = f.teacher_forced(&mut g, &inst, None, true).unwrap();
    let ch = f.encode(&mut g, &inst).unwrap();
    for step in &tf.trace {
        let gm = step.gamma.as_ref().unwrap();
        let b = step.beta.as_ref().unwrap();
        let bh = step.beta_hat.as_ref().unwrap();
        for t in 0..b.len() {
            assert_eq!(bh[t], b[t] * gm[ch.token_item[t]]);
        }
        for w in &step.words {
            let total: f64 = w.alpha.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            for ((ah, a), bt) in w.alpha_hat.iter().zip(&w.alpha).zip(bh.iter()) {
                assert_eq!(*ah, bt * a);
                assert!(ah < a);
            }
        }
    }
}

#[test]
fn gradient_reaches_every_attention_network() {
    let model = Model::new(config(Variant::Hier2hier, 5), 9).unwrap();
    let mut g = Graph::new(&model.params);
    let tf = model.forward().teacher_forced(&mut g, &instance(10, 2), None, false).unwrap();
    let loss = g.sum_all(&tf.word_losses);
    let grads = g.backward(loss).unwrap();
    for net in ["attn_gamma", "attn_beta", "attn_alpha"] {
        let norm: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with(net) && !n.ends_with(".c"))
            .map(|(_, t)| t.sum_sq())
            .sum();
        assert!(norm > 0.0, "{net}");
    }
}

#[test]
fn forced_stop_gives_one_summary_and_cap_bounds_threads() {
    let mut model = Model::new(config(Variant::Hier2hier, 5), 4).unwrap();
    zero_params(&mut model, "stop.weight");
    let id = model.params.id("stop.bias").unwrap();
    model.params.get_mut(id).data[0] = (0.9f64 / 0.1).ln();
    let gen = model.generate(&instance(1, 2)).unwrap();
    assert_eq!(gen.threads.len(), 1);
    assert!((gen.threads[0].attention.p_stop.unwrap() - 0.9).abs() < 1e-12);

    model.params.get_mut(id).data[0] = -50.0;
    model.config.limits.max_threads = 5;
    let gen = model.generate(&instance(1, 2)).unwrap();
    assert_eq!(gen.threads.len(), 5);
    assert!(gen.forced_stop);
}

#[test]
fn every_variant_accepts_the_same_instance_and_decodes_deterministically() {
    let inst = instance(11, 2);
    for v in Variant::ALL {
        let model = Model::new(config(v, 4), 5).unwrap();
        let mut g = Graph::new(&model.params);
        let tf = model.forward().teacher_forced(&mut g, &inst, None, false).unwrap();
        assert!(!tf.word_losses.is_empty(), "{v}");
        assert_eq!(tf.stop_losses.is_empty(), !v.hierarchical_decoder());
        let a = model.generate(&inst).unwrap();
        let b = model.generate(&inst).unwrap();
        let ids = |g: &Generation| g.threads.iter().map(|t| t.ids.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b), "{v}");
        assert!(a.threads.len() <= 3);
    }
}

#[test]
fn argmax_prefers_lowest_id_on_ties() {
    assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
    assert_eq!(argmax(&[1.0, 1.0]), 0);
}

#[test]
fn loaded_parameters_must_match_layout() {
    let a = Model::new(config(Variant::Hier2hier, 4), 1).unwrap();
    let b = Model::from_params(a.config.clone(), a.params.clone()).unwrap();
    assert_eq!(b.params.by_name("out.weight"), a.params.by_name("out.weight"));
    let other = Model::new(config(Variant::Seq2seq, 4), 1).unwrap();
    assert!(Model::from_params(a.config.clone(), other.params).is_err());
}
