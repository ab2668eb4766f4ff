use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_input, check_params};
use super::*;
use crate::error::Error;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let mut c = Tensor2::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

fn transpose(a: &Tensor2) -> Tensor2 {
    let mut t = Tensor2::zeros(a.cols(), a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            t.set(j, i, a.get(i, j));
        }
    }
    t
}

fn max_abs_diff(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn identity_layer_passes_input_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor2::identity(5)).unwrap();
    let b = store.add_zeros("b", 1, 5).unwrap();
    let x = random(3, 5, &mut rng);
    let mut g = Graph::new(&store);
    let xi = g.input(x.clone());
    let y = g.linear(xi, w, b).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn relu_zeroes_negative_input() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor2::from_vec(2, 2, vec![-1.0, -0.5, -3.0, -1e-9]).unwrap());
    let y = g.relu(x);
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn linear_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, k, n) in [(1, 1, 1), (7, 13, 5), (33, 64, 17)] {
        let mut store = ParamStore::new();
        let wt = random(k, n, &mut rng);
        let bt = random(1, n, &mut rng);
        let w = store.add("w", wt.clone()).unwrap();
        let b = store.add("b", bt.clone()).unwrap();
        let x = random(m, k, &mut rng);
        let mut g = Graph::new(&store);
        let xi = g.input(x.clone());
        let y = g.linear(xi, w, b).unwrap();
        let mut expect = naive(&x, &wt);
        for r in 0..m {
            for c in 0..n {
                expect.set(r, c, expect.get(r, c) + bt.get(0, c));
            }
        }
        assert!(max_abs_diff(g.value(y), &expect) < 1e-12);
    }
}

#[test]
fn transposed_gemm_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(6, 4, &mut rng);
    let b = random(6, 3, &mut rng);
    let mut c = Tensor2::zeros(4, 3);
    super::tensor::gemm(&a, true, &b, false, &mut c, 0.0).unwrap();
    assert!(max_abs_diff(&c, &naive(&transpose(&a), &b)) < 1e-12);
    let d = random(5, 3, &mut rng);
    let mut e = Tensor2::zeros(6, 5);
    super::tensor::gemm(&b, false, &d, true, &mut e, 0.0).unwrap();
    assert!(max_abs_diff(&e, &naive(&b, &transpose(&d))) < 1e-12);
}

#[test]
fn shape_mismatch_is_reported() {
    let mut store = ParamStore::new();
    let w = store.add_zeros("w", 3, 2).unwrap();
    let b = store.add_zeros("b", 1, 2).unwrap();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor2::zeros(1, 4));
    assert!(matches!(g.linear(x, w, b), Err(Error::Shape(_))));
}

fn attention_setup(width: usize, heads: usize, seed: u64) -> (ParamStore, MultiHeadAttention) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", width, heads, &mut rng).unwrap();
    (store, mha)
}

#[test]
fn zero_scores_average_value_rows() {
    let (mut store, mha) = attention_setup(4, 2, 3);
    for d in [mha.q, mha.k] {
        *store.value_mut(d.w) = Tensor2::zeros(4, 4);
    }
    *store.value_mut(mha.v.w) = Tensor2::identity(4);
    *store.value_mut(mha.o.w) = Tensor2::identity(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(6, 4, &mut rng);
    let mut g = Graph::new(&store);
    let xi = g.input(x.clone());
    let y = mha.forward(&mut g, xi, 3).unwrap();
    for b in 0..2 {
        for c in 0..4 {
            let avg = (0..3).map(|j| x.get(b * 3 + j, c)).sum::<f64>() / 3.0;
            for i in 0..3 {
                assert!((g.value(y).get(b * 3 + i, c) - avg).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_token_attention_is_identity_on_values() {
    let (mut store, mha) = attention_setup(4, 2, 5);
    *store.value_mut(mha.v.w) = Tensor2::identity(4);
    *store.value_mut(mha.o.w) = Tensor2::identity(4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(3, 4, &mut rng);
    let mut g = Graph::new(&store);
    let xi = g.input(x.clone());
    let y = mha.forward(&mut g, xi, 1).unwrap();
    assert!(max_abs_diff(g.value(y), &x) < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let (store, mha) = attention_setup(8, 2, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new(&store);
    let xi = g.input(random(12, 8, &mut rng));
    let q = mha.q.forward(&mut g, xi).unwrap();
    let k = mha.k.forward(&mut g, xi).unwrap();
    let v = mha.v.forward(&mut g, xi).unwrap();
    let a = g.attention(q, k, v, 2, 4).unwrap();
    let probs = g.attention_probs(a).unwrap();
    for row in probs.chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let (store, mha) = attention_setup(8, 2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(4, 8, &mut rng);
    let perm = [2, 0, 3, 1];
    let px = Tensor2::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |input: Tensor2| {
        let mut g = Graph::new(&store);
        let xi = g.input(input);
        let y = mha.forward(&mut g, xi, 4).unwrap();
        g.value(y).clone()
    };
    let (y, py) = (run(x), run(px));
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..8 {
            assert!((py.get(new, c) - y.get(old, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn indivisible_width_is_rejected() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(MultiHeadAttention::new(&mut store, "a", 6, 4, &mut rng), Err(Error::Shape(_))));
}

#[test]
fn linear_regression_gradient_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (20, 4);
    let x = random(n, d, &mut rng);
    let y = random(n, 1, &mut rng);
    let mut store = ParamStore::new();
    let w = store.add("w", random(d, 1, &mut rng)).unwrap();
    let b = store.add_zeros("b", 1, 1).unwrap();
    let mut g = Graph::new(&store);
    let xi = g.input(x.clone());
    let pred = g.linear(xi, w, b).unwrap();
    let loss = g.mse(pred, y.clone()).unwrap();
    let grads = g.backward(loss).unwrap();
    let resid = naive(&x, store.value(w));
    let mut expect = vec![0.0; d];
    for (j, e) in expect.iter_mut().enumerate() {
        for i in 0..n {
            *e += 2.0 * x.get(i, j) * (resid.get(i, 0) - y.get(i, 0)) / n as f64;
        }
    }
    for (j, e) in expect.iter().enumerate() {
        assert!((grads.params.get(w).unwrap().get(j, 0) - e).abs() < 1e-10);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "l", 3, 2, &mut rng).unwrap();
    let before = store.clone();
    let grads = {
        let mut g = Graph::new(&store);
        let xi = g.input(random(4, 3, &mut rng));
        let y = layer.forward(&mut g, xi).unwrap();
        let loss = g.mse(y, random(4, 2, &mut rng)).unwrap();
        g.backward(loss).unwrap().params
    };
    store.adam_step(&grads, &AdamConfig::with_lr(0.0)).unwrap();
    for id in 0..store.len() {
        assert_eq!(store.value(id), before.value(id));
    }
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor2::from_vec(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
    let mut grads = store.zero_grads();
    grads.params[p] = Some(Tensor2::from_vec(1, 2, vec![0.3, -2.0]).unwrap());
    store.adam_step(&grads, &AdamConfig::with_lr(0.01)).unwrap();
    assert!((store.value(p).get(0, 0) - 0.99).abs() < 1e-6);
    assert!((store.value(p).get(0, 1) + 0.99).abs() < 1e-6);
}

#[test]
fn nan_loss_is_a_training_error() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor2::from_vec(1, 1, vec![f64::NAN]).unwrap());
    let loss = g.mse(x, Tensor2::zeros(1, 1)).unwrap();
    assert!(matches!(g.backward(loss), Err(Error::Diverged(_))));
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "l", 5, 3, &mut rng).unwrap();
    let x = random(4, 5, &mut rng);
    let t = random(4, 3, &mut rng);
    let loss = |s: &ParamStore, x: &Tensor2| {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone());
        let y = layer.forward(&mut g, xi).unwrap();
        let l = g.mse(y, t.clone()).unwrap();
        let b = g.backward(l).unwrap();
        let v = g.value(l).get(0, 0);
        (v, b.input(xi).unwrap().clone(), b.params)
    };
    let p = check_params(&store, H, 100, |s| Ok((loss(s, &x).0, loss(s, &x).2))).unwrap();
    assert!(p.max_rel_error < TOL, "{p:?}");
    let i = check_input(&x, H, |x| Ok((loss(&store, x).0, loss(&store, x).1))).unwrap();
    assert!(i.max_rel_error < TOL, "{i:?}");
}

#[test]
fn relu_add_reshape_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let store = ParamStore::new();
    // Keep inputs away from the kink at zero.
    let x = Tensor2::from_vec(
        4,
        3,
        (0..12).map(|i| if i % 2 == 0 { 0.5 + rng.gen::<f64>() } else { -0.5 - rng.gen::<f64>() }).collect(),
    )
    .unwrap();
    let t = random(2, 6, &mut rng);
    let f = |x: &Tensor2| {
        let mut g = Graph::new(&store);
        let xi = g.input(x.clone());
        let r = g.relu(xi);
        let s = g.add(r, xi).unwrap();
        let y = g.reshape(s, 2, 6).unwrap();
        let l = g.weighted_sq_error(y, t.clone(), vec![1.0, 2.0, 0.5, 1.0, 3.0, 0.0], 7.0).unwrap();
        let b = g.backward(l).unwrap();
        Ok((g.value(l).get(0, 0), b.input(xi).unwrap().clone()))
    };
    let c = check_input(&x, H, f).unwrap();
    assert!(c.max_rel_error < TOL, "{c:?}");
}

#[test]
fn slot_bias_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let bias = store.add("bias", random(3, 4, &mut rng)).unwrap();
    let x = random(6, 4, &mut rng);
    let t = random(6, 4, &mut rng);
    let c = check_params(&store, H, 100, |s| {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone());
        let y = g.slot_bias(xi, bias)?;
        let l = g.mse(y, t.clone())?;
        Ok((g.value(l).get(0, 0), g.backward(l)?.params))
    })
    .unwrap();
    assert!(c.max_rel_error < TOL, "{c:?}");
}

#[test]
fn attention_gradients_match_finite_differences() {
    let (store, mha) = attention_setup(8, 2, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(8, 8, &mut rng);
    let t = random(8, 8, &mut rng);
    let f = |s: &ParamStore, x: &Tensor2| -> crate::Result<(f64, Tensor2, Grads)> {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone());
        let y = mha.forward(&mut g, xi, 4)?;
        let l = g.mse(y, t.clone())?;
        let b = g.backward(l)?;
        Ok((g.value(l).get(0, 0), b.input(xi).unwrap().clone(), b.params))
    };
    let p = check_params(&store, H, 64, |s| f(s, &x).map(|r| (r.0, r.2))).unwrap();
    assert!(p.max_rel_error < TOL, "{p:?}");
    let i = check_input(&x, H, |x| f(&store, x).map(|r| (r.0, r.1))).unwrap();
    assert!(i.max_rel_error < TOL, "{i:?}");
}

#[test]
fn gather_heads_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut store = ParamStore::new();
    let heads = Dense::new(&mut store, "heads", 5, 9, &mut rng).unwrap();
    *store.value_mut(heads.b) = random(1, 9, &mut rng);
    let x = random(3, 5, &mut rng);
    let idx = vec![vec![0, 4, 8], vec![2, 2, 5], vec![7, 3, 1]];
    let t = random(3, 1, &mut rng);
    let f = |s: &ParamStore, x: &Tensor2| -> crate::Result<(f64, Tensor2, Grads)> {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone());
        let y = g.gather_heads(xi, heads.w, heads.b, idx.clone())?;
        let l = g.mse(y, t.clone())?;
        let b = g.backward(l)?;
        Ok((g.value(l).get(0, 0), b.input(xi).unwrap().clone(), b.params))
    };
    let p = check_params(&store, H, 100, |s| f(s, &x).map(|r| (r.0, r.2))).unwrap();
    assert!(p.max_rel_error < TOL, "{p:?}");
    let i = check_input(&x, H, |x| f(&store, x).map(|r| (r.0, r.1))).unwrap();
    assert!(i.max_rel_error < TOL, "{i:?}");
}

#[test]
fn gather_heads_equals_summed_linear_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut store = ParamStore::new();
    let heads = Dense::new(&mut store, "heads", 6, 10, &mut rng).unwrap();
    *store.value_mut(heads.b) = random(1, 10, &mut rng);
    let x = random(4, 6, &mut rng);
    let idx: Vec<Vec<usize>> = (0..4).map(|r| vec![r, 9 - r]).collect();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let full = heads.forward(&mut g, xi).unwrap();
    let picked = g.gather_heads(xi, heads.w, heads.b, idx.clone()).unwrap();
    for (r, cols) in idx.iter().enumerate() {
        let expect: f64 = cols.iter().map(|&c| g.value(full).get(r, c)).sum();
        assert!((g.value(picked).get(r, 0) - expect).abs() < 1e-12);
    }
}

#[test]
fn composed_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut store = ParamStore::new();
    let embed = Dense::new(&mut store, "embed", 5, 8, &mut rng).unwrap();
    let slot = store.add("slot", random(3, 8, &mut rng)).unwrap();
    let mha = MultiHeadAttention::new(&mut store, "att", 8, 2, &mut rng).unwrap();
    let mlp = Mlp::new(&mut store, "fc", &[24, 16, 16], &mut rng).unwrap();
    let heads = Dense::new(&mut store, "heads", 16, 6, &mut rng).unwrap();
    let x = random(6, 5, &mut rng);
    let idx = vec![vec![0, 3], vec![5, 1]];
    let t = random(2, 1, &mut rng);
    let c = check_params(&store, H, 40, |s| {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone());
        let e = embed.forward(&mut g, xi)?;
        let e = g.slot_bias(e, slot)?;
        let a = mha.forward(&mut g, e, 3)?;
        let r = g.add(a, e)?;
        let flat = g.reshape(r, 2, 24)?;
        let h = mlp.forward_hidden(&mut g, flat)?;
        let q = g.gather_heads(h, heads.w, heads.b, idx.clone())?;
        let l = g.mse(q, t.clone())?;
        Ok((g.value(l).get(0, 0), g.backward(l)?.params))
    })
    .unwrap();
    assert!(c.max_rel_error < TOL, "{c:?}");
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "l", 3, 4, &mut rng).unwrap();
    let mut grads = store.zero_grads();
    grads.params[layer.w] = Some(random(3, 4, &mut rng));
    store.adam_step(&grads, &AdamConfig::with_lr(1e-3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.bin");
    store.save(&full, true).unwrap();
    assert_eq!(ParamStore::load(&full).unwrap(), store);
    let slim = dir.path().join("slim.bin");
    store.save(&slim, false).unwrap();
    let loaded = ParamStore::load(&slim).unwrap();
    assert_eq!(loaded.value(layer.w), store.value(layer.w));
    assert_eq!(loaded.step(), 1);
    std::fs::write(&slim, b"garbage").unwrap();
    assert!(ParamStore::load(&slim).is_err());
}

#[test]
fn duplicate_names_rejected() {
    let mut store = ParamStore::new();
    store.add_zeros("a", 1, 1).unwrap();
    assert!(store.add_zeros("a", 1, 1).is_err());
}
