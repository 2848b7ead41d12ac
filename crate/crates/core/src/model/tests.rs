use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::obs::{LOCAL_CHANNELS, VIEW};

fn tiny() -> ArchDims {
    ArchDims {
        dim: 8,
        heads: 2,
        cond_layers: 1,
        local_layers: 1,
        ff_mult: 2,
        head_hidden: 16,
        n_cos: 8,
        train_quantiles: 4,
        eval_quantiles: 32,
        baseline_hidden: vec![16, 8],
        ..ArchDims::default()
    }
}

fn model(variant: Variant, cond: &[CondKind], seed: u64) -> Model<f64> {
    Model::new(ModelConfig::build(variant, cond, 9, 9, &tiny()).unwrap(), seed).unwrap()
}

fn random_local(rng: &mut impl Rng) -> Tensor<f64> {
    let n = LOCAL_CHANNELS * VIEW * VIEW;
    let data = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![LOCAL_CHANNELS, VIEW, VIEW], data).unwrap()
}

fn g_pos(x: usize, y: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(vec![1, 9, 9]);
    t.data_mut()[y * 9 + x] = 1.0;
    t
}

fn input(local: Tensor<f64>, x: usize, y: usize) -> PolicyInput<f64> {
    PolicyInput::new(local, vec![g_pos(x, y)], Pos::new(x as i32, y as i32)).unwrap()
}

fn zero(model: &mut Model<f64>, id: ParamId) {
    model.params_mut().get_mut(id).data_mut().fill(0.0);
}

#[test]
fn every_variant_produces_four_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = input(random_local(&mut rng), 2, 3);
    for variant in Variant::ALL {
        let m = model(variant, &[CondKind::GPos], 1);
        let out = m.forward_policy(&x, true).unwrap();
        assert_eq!(out.scores.len(), 4, "{variant:?}");
        assert!(out.scores.iter().all(|v| v.is_finite()));
        if variant.uses_attention() {
            let rec = out.local.unwrap();
            assert_eq!(rec.tokens, 50);
            assert_eq!(rec.layers.len(), 1);
            assert_eq!(rec.layers[0].len(), 2);
        } else {
            assert!(out.local.is_none() && out.cm.is_empty());
        }
        assert_eq!(out.cm.len(), usize::from(variant.has_conditional_module()));
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = input(random_local(&mut rng), 4, 4);
    let a = model(Variant::Da6Iqn, &[CondKind::GPos], 9);
    let b = model(Variant::Da6Iqn, &[CondKind::GPos], 9);
    assert_eq!(a.forward_policy(&x, true).unwrap(), b.forward_policy(&x, true).unwrap());
}

#[test]
fn zero_head_weights_output_the_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = input(random_local(&mut rng), 1, 1);
    for variant in [Variant::Da6Dqn, Variant::Dqn] {
        let mut m = model(variant, &[CondKind::GPos], 2);
        let head = m.head().clone();
        zero(&mut m, head.out.weight);
        m.params_mut()
            .get_mut(head.out.bias)
            .data_mut()
            .copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
        assert_eq!(m.forward_policy(&x, false).unwrap().scores, vec![0.5, -1.0, 2.0, 0.25]);
    }
}

#[test]
fn embedding_with_zero_projection_keeps_only_the_saliency_token() {
    let mut m = model(Variant::Da6Dqn, &[CondKind::GPos], 4);
    let Body::Attention { submodules, .. } = m.body().clone() else { unreachable!() };
    let sub = &submodules[0];
    zero(&mut m, sub.embed);
    zero(&mut m, sub.positional);
    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let tokens = tape.constant(patchify(&g_pos(5, 6), sub.config.patch).unwrap());
    let g = m.embed_conditional_state(&mut tape, &mut binder, sub, tokens).unwrap();
    let out = tape.value(g);
    assert_eq!(out.shape(), [10, 8]);
    assert_eq!(out.row(0), m.params().get(sub.saliency).data());
    assert!(out.data()[8..].iter().all(|&v| v == 0.0));

    let bad = tape.constant(Tensor::zeros(vec![9, 4]));
    assert!(m.embed_conditional_state(&mut tape, &mut binder, sub, bad).is_err());
}

#[test]
fn without_submodules_the_local_saliency_token_is_returned() {
    let m = model(Variant::Da6Dqn, &[], 5);
    let Body::Attention { local_saliency, .. } = m.body() else { unreachable!() };
    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let (v, records) = m.run_conditional_module(&mut tape, &mut binder, &[]).unwrap();
    assert!(records.is_empty());
    assert_eq!(tape.value(v).data(), m.params().get(local_saliency.unwrap()).data());
}

#[test]
fn identity_integration_passes_the_submodule_token_through() {
    let mut m = model(Variant::Da6Dqn, &[CondKind::GPos], 6);
    let Body::Attention { integration, .. } = m.body().clone() else { unreachable!() };
    let integration = integration.unwrap();
    *m.params_mut().get_mut(integration.weight) = Tensor::identity(8);
    let g0 = Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap();
    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let g = tape.constant(g0.clone());
    let v = m.vector_integration(&mut tape, &mut binder, &[g]).unwrap();
    assert_eq!(tape.value(v), &g0);
    assert!(matches!(m.vector_integration(&mut tape, &mut binder, &[]), Err(Error::Contract(_))));
}

#[test]
fn two_submodules_integrate_to_the_local_width() {
    let m = model(Variant::Da6Dqn, &[CondKind::GPos, CondKind::OPos], 7);
    let Body::Attention { integration, .. } = m.body() else { unreachable!() };
    assert_eq!(m.params().get(integration.as_ref().unwrap().weight).shape(), [16, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut o = Tensor::zeros(vec![2, 9, 9]);
    o.data_mut()[17] = 1.0;
    o.data_mut()[81 + 40] = 1.0;
    let x = PolicyInput::new(random_local(&mut rng), vec![g_pos(0, 0), o], Pos::new(0, 0)).unwrap();
    let out = m.forward_policy(&x, true).unwrap();
    assert_eq!(out.saliency.unwrap().len(), 8);
    assert_eq!(out.cm.len(), 2);
}

#[test]
fn zero_branch_local_encoder_returns_the_lead_token() {
    let mut m = model(Variant::Da6Dqn, &[CondKind::GPos], 8);
    let Body::Attention {
        local_layers,
        local_positional,
        phi,
        ..
    } = m.body().clone()
    else {
        unreachable!()
    };
    for layer in &local_layers {
        zero(&mut m, layer.attention.w_o);
        zero(&mut m, layer.mlp_out.weight);
    }
    let v = Tensor::new(vec![1, 8], (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tokens = patchify(&random_local(&mut rng), 1).unwrap();

    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let vv = tape.constant(v.clone());
    let y = tape.constant(tokens);
    let (h0, weights) = m.run_local_encoder(&mut tape, &mut binder, vv, y).unwrap();
    assert_eq!(tape.shape(weights[0][0]), [50, 50]);

    let phi = phi.unwrap();
    let w = m.params().get(phi.weight);
    let b = m.params().get(phi.bias);
    let p = m.params().get(local_positional);
    for j in 0..8 {
        let mut expect = b.data()[j] + p.data()[j];
        for i in 0..8 {
            expect += v.data()[i] * w.at(i, j);
        }
        assert!((tape.value(h0).data()[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn local_token_permutation_with_positional_rows_leaves_h0_unchanged() {
    let m = model(Variant::Da6Dqn, &[CondKind::GPos], 10);
    let Body::Attention { local_positional, .. } = m.body().clone() else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tokens = patchify(&random_local(&mut rng), 1).unwrap();
    let mut perm: Vec<usize> = (0..49).collect();
    perm.reverse();
    perm.swap(3, 17);

    let run = |m: &Model<f64>, tokens: Tensor<f64>| {
        let mut tape = Tape::new();
        let mut binder = Binder::new(m.params(), false);
        let v = tape.constant(Tensor::full(vec![1, 8], 0.3));
        let y = tape.constant(tokens);
        let (h0, _) = m.run_local_encoder(&mut tape, &mut binder, v, y).unwrap();
        tape.value(h0).clone()
    };
    let base = run(&m, tokens.clone());

    let permute_rows = |t: &Tensor<f64>, offset: usize| {
        let (rows, cols) = t.rows_cols();
        let mut data = t.data().to_vec();
        for (dst, &src) in perm.iter().enumerate() {
            let (d, s) = (dst + offset, src + offset);
            data[d * cols..(d + 1) * cols].copy_from_slice(t.row(s));
        }
        Tensor::new(vec![rows, cols], data).unwrap()
    };
    let mut permuted = m.clone();
    let p = permuted.params().get(local_positional).clone();
    *permuted.params_mut().get_mut(local_positional) = permute_rows(&p, 1);
    let out = run(&permuted, permute_rows(&tokens, 0));
    assert!(out.max_abs_diff(&base) < 1e-12);
}

#[test]
fn iqn_head_shapes_and_tau_contract() {
    let m = model(Variant::Da6Iqn, &[CondKind::GPos], 12);
    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let f = tape.constant(Tensor::full(vec![1, 8], 0.1));
    let taus: Vec<f64> = (1..=8).map(|i| i as f64 / 9.0).collect();
    let z = m.iqn_head(&mut tape, &mut binder, f, &taus).unwrap();
    assert_eq!(tape.shape(z), [8, 4]);
    for bad in [0.0, 1.0, -0.2] {
        assert!(matches!(m.iqn_head(&mut tape, &mut binder, f, &[bad]), Err(Error::Contract(_))));
    }
    let cos = cosine_features(&[0.0f64], 8);
    assert!(cos.data().iter().all(|&c| c == 1.0));
}

#[test]
fn iqn_scores_are_the_mean_over_evaluation_quantiles() {
    let m = model(Variant::Da6Iqn, &[CondKind::GPos], 13);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = input(random_local(&mut rng), 6, 2);
    let taus = m.eval_taus();
    assert_eq!(taus.len(), 32);
    let mut mean = [0.0; 4];
    for &tau in &taus {
        let mut tape = Tape::new();
        let mut binder = Binder::new(m.params(), false);
        let g = m.graph(&mut tape, &mut binder, &x, Some(&[tau])).unwrap();
        for (a, s) in mean.iter_mut().enumerate() {
            *s += tape.value(g.values).data()[a] / 32.0;
        }
    }
    let scores = m.forward_policy(&x, false).unwrap().scores;
    for a in 0..4 {
        assert!((scores[a] - mean[a]).abs() < 1e-12);
    }
}

#[test]
fn da3_equals_da6_without_conditional_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for (da3_variant, da6_variant) in [(Variant::Da3Dqn, Variant::Da6Dqn), (Variant::Da3Iqn, Variant::Da6Iqn)] {
        let da3 = model(da3_variant, &[], 15);
        let da6_config = ModelConfig::build(da6_variant, &[], 9, 9, &tiny()).unwrap();
        let da6 = Model::from_params(da6_config, da3.params().clone()).unwrap();
        for _ in 0..10 {
            let local = random_local(&mut rng);
            let x = PolicyInput::new(local, vec![], Pos::new(0, 0)).unwrap();
            let a = da3.forward_policy(&x, true).unwrap();
            let b = da6.forward_policy(&x, true).unwrap();
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.local, b.local);
        }
    }
}

#[test]
fn saliency_vector_depends_on_the_conditional_map() {
    let m = model(Variant::Da6Dqn, &[CondKind::GPos], 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let local = random_local(&mut rng);
    let a = m.forward_policy(&input(local.clone(), 1, 1), true).unwrap();
    let b = m.forward_policy(&input(local, 7, 7), true).unwrap();
    assert_ne!(a.saliency, b.saliency);
    assert_ne!(a.local, b.local);
}

#[test]
fn da3_local_attention_ignores_global_position() {
    let m = model(Variant::Da3Dqn, &[CondKind::GPos], 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let local = random_local(&mut rng);
    let a = m.forward_policy(&input(local.clone(), 1, 1), true).unwrap();
    let b = m.forward_policy(&input(local, 7, 7), true).unwrap();
    assert_eq!(a.local, b.local);
    assert_ne!(a.scores, b.scores);
}

#[test]
fn baseline_rejects_wrong_input_length() {
    let m = model(Variant::Dqn, &[CondKind::GPos], 20);
    let mut tape = Tape::new();
    let mut binder = Binder::new(m.params(), false);
    let x = tape.constant(Tensor::zeros(vec![1, 10]));
    assert!(matches!(
        m.baseline_mlp_forward(&mut tape, &mut binder, x),
        Err(Error::Dimension { .. })
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let flat = m.baseline_input(&input(random_local(&mut rng), 3, 3)).unwrap();
    assert_eq!(flat.shape(), [1, 245 + 17 * 17]);
    assert_eq!(flat.data()[245 + 8 * 17 + 8], 1.0);
}

#[test]
fn from_params_rejects_foreign_layouts() {
    let a = model(Variant::Da6Dqn, &[CondKind::GPos], 0);
    let b = model(Variant::Dqn, &[CondKind::GPos], 0);
    assert!(matches!(
        Model::from_params(a.config().clone(), b.params().clone()),
        Err(Error::Checkpoint(_))
    ));
}
