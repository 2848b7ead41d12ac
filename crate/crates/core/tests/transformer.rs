use da6_core::autodiff::{grad_check_many, Tape};
use da6_core::oracles::{self, HeadWeights, Mat};
use da6_core::params::{Binder, ParamStore};
use da6_core::transformer::{
    encoder_layer, multi_head_attention, patchify, scaled_dot_product_attention, unpatchify, AttentionParams,
    EncoderLayerParams,
};
use da6_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(t: &Tensor<f64>) -> Mat {
    let (r, _) = t.rows_cols();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn two_token_attention_matches_hand_computation() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let k = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let v = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let (out, w) = scaled_dot_product_attention(&mut tape, q, k, v).unwrap();
    let e = (1.0f64 / 2f64.sqrt()).exp();
    let p = e / (e + 1.0);
    let w = tape.value(w).data().to_vec();
    assert!((w[0] - p).abs() < 1e-12 && (w[1] - (1.0 - p)).abs() < 1e-12);
    let o = tape.value(out).data().to_vec();
    assert!((o[0] - (p + 3.0 * (1.0 - p))).abs() < 1e-12);
}

#[test]
fn attention_matches_oracle_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, d) in [(1, 4), (5, 3), (9, 8), (50, 4)] {
        let (q, k, v) = (random(&mut rng, n, d), random(&mut rng, n, d), random(&mut rng, n, d));
        let mut tape = Tape::new();
        let vars = [q.clone(), k.clone(), v.clone()].map(|t| tape.constant(t));
        let (out, w) = scaled_dot_product_attention(&mut tape, vars[0], vars[1], vars[2]).unwrap();
        let (want_out, want_w) = oracles::attention(&mat(&q), &mat(&k), &mat(&v));
        assert!(max_diff(&mat(tape.value(out)), &want_out) < 1e-12);
        assert!(max_diff(&mat(tape.value(w)), &want_w) < 1e-12);
    }
}

#[test]
fn single_token_attention_returns_its_value() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap());
    let v = tape.constant(Tensor::matrix(1, 2, vec![0.5, 0.25]).unwrap());
    let (out, w) = scaled_dot_product_attention(&mut tape, q, q, v).unwrap();
    assert_eq!(tape.value(w).data(), &[1.0]);
    assert_eq!(tape.value(out).data(), &[0.5, 0.25]);
}

fn register(heads: usize, dim: usize, seed: u64) -> (ParamStore<f64>, AttentionParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AttentionParams::register(&mut store, &mut rng, "attn", dim, heads).unwrap();
    (store, p)
}

#[test]
fn multi_head_attention_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for heads in [1, 2, 4] {
        let (store, p) = register(heads, 8, heads as u64);
        let x = random(&mut rng, 6, 8);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store, false);
        let xv = tape.constant(x.clone());
        let (out, weights) = multi_head_attention(&mut tape, &mut binder, xv, &p).unwrap();
        let hw: Vec<HeadWeights> = p
            .heads
            .iter()
            .map(|h| HeadWeights {
                w_q: mat(store.get(h.w_q)),
                w_k: mat(store.get(h.w_k)),
                w_v: mat(store.get(h.w_v)),
            })
            .collect();
        let (want, want_w) = oracles::multi_head_attention(&mat(&x), &hw, &mat(store.get(p.w_o)));
        assert!(max_diff(&mat(tape.value(out)), &want) < 1e-12, "heads={heads}");
        assert_eq!(weights.len(), heads);
        for (w, ww) in weights.iter().zip(&want_w) {
            assert!(max_diff(&mat(tape.value(*w)), ww) < 1e-12);
        }
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let (store, p) = register(2, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, 5, 8);
    let perm = [3, 0, 4, 1, 2];
    let permuted = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |input: &Tensor<f64>| {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store, false);
        let v = tape.constant(input.clone());
        let (out, _) = multi_head_attention(&mut tape, &mut binder, v, &p).unwrap();
        mat(tape.value(out))
    };
    let base = run(&x);
    let moved = run(&permuted);
    let expect: Mat = perm.iter().map(|&i| base[i].clone()).collect();
    assert!(max_diff(&moved, &expect) < 1e-12);
}

#[test]
fn encoder_layer_with_zero_sublayers_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = EncoderLayerParams::register(&mut store, &mut rng, "layer", 8, 2, 16).unwrap();
    *store.get_mut(p.attention.w_o) = Tensor::zeros(vec![8, 8]);
    *store.get_mut(p.mlp_out.weight) = Tensor::zeros(vec![16, 8]);
    let x = random(&mut rng, 4, 8);
    let mut tape = Tape::new();
    let mut binder = Binder::new(&store, false);
    let xv = tape.constant(x.clone());
    let (out, _) = encoder_layer(&mut tape, &mut binder, xv, &p).unwrap();
    assert_eq!(tape.value(out), &x);
}

#[test]
fn encoder_layer_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = EncoderLayerParams::register(&mut store, &mut rng, "layer", 4, 2, 8).unwrap();
    let x = random(&mut rng, 3, 4);
    let c = random(&mut rng, 3, 4);
    let err = grad_check_many(
        |tape, xs| {
            let mut binder = Binder::new(&store, true);
            let (out, _) = encoder_layer(tape, &mut binder, xs[0], &p)?;
            let c = tape.constant(c.clone());
            let y = tape.mul(out, c)?;
            tape.sum(y)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn patchify_orders_tokens_row_major() {
    let map = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
    let tokens = patchify(&map, 2).unwrap();
    assert_eq!(tokens.shape(), &[4, 4]);
    assert_eq!(tokens.row(0), &[0.0, 1.0, 4.0, 5.0]);
    assert_eq!(tokens.row(1), &[2.0, 3.0, 6.0, 7.0]);
    assert_eq!(tokens.row(3), &[10.0, 11.0, 14.0, 15.0]);
    let single = patchify(&map, 1).unwrap();
    assert_eq!(single.shape(), &[16, 1]);
}

#[test]
fn patchify_keeps_channels_inside_a_token() {
    let map = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
    let tokens = patchify(&map, 2).unwrap();
    assert_eq!(tokens.shape(), &[1, 8]);
    assert_eq!(tokens.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    assert!(patchify(&map, 3).is_err());
}

#[test]
fn unpatchify_inverts_patchify() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (c, h, w, p) in [(1, 9, 9, 3), (2, 25, 25, 5), (5, 7, 7, 1), (3, 6, 4, 2)] {
        let map = Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let tokens = patchify(&map, p).unwrap();
        assert_eq!(unpatchify(&tokens, c, h, w, p).unwrap(), map);
    }
}
