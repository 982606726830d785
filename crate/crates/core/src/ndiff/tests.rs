use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, AttentionWeights};
use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (bs, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let lo = len - k + 1;
    let mut out = vec![];
    for bi in 0..bs {
        for o in 0..cout {
            for l in 0..lo {
                let mut acc = b.data()[o];
                for c in 0..cin {
                    for j in 0..k {
                        acc += w.data()[(o * cin + c) * k + j] * x.data()[(bi * cin + c) * len + l + j];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn conv_hand_example() {
    let x = Tensor::new(&[1, 1, 4], vec![1., 2., 3., 4.]).unwrap();
    let w = Tensor::new(&[1, 1, 2], vec![1., -1.]).unwrap();
    let b = Tensor::zeros(&[1]);
    let y = ops::conv1d_valid(&x, &w, &b).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3]);
    assert_eq!(y.data(), &[-1., -1., -1.]);
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::new(&[1, 1, 4], vec![1., 2., 3., 4.]).unwrap();
    let w = Tensor::new(&[1, 1, 1], vec![1.]).unwrap();
    let y = ops::conv1d_valid(&x, &w, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[2, 3, 8]);
    let w = rand_tensor(&mut rng, &[4, 3, 2]);
    let b = rand_tensor(&mut rng, &[4]);
    let y = ops::conv1d_valid(&x, &w, &b).unwrap();
    assert_eq!(y.shape(), &[2, 4, 7]);
    for (a, e) in y.data().iter().zip(naive_conv(&x, &w, &b)) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_shape_errors() {
    let x = Tensor::zeros(&[1, 2, 4]);
    let w = Tensor::zeros(&[1, 3, 2]);
    let err = ops::conv1d_valid(&x, &w, &Tensor::zeros(&[1])).unwrap_err();
    assert!(err.to_string().contains("[1, 2, 4]"));
    let short = Tensor::zeros(&[1, 3, 1]);
    assert!(ops::conv1d_valid(&short, &w, &Tensor::zeros(&[1])).is_err());
}

#[test]
fn maxpool_examples() {
    let x = Tensor::new(&[1, 1, 4], vec![3., 5., 2., 4.]).unwrap();
    assert_eq!(ops::maxpool1d(&x, 2, 2).unwrap().data(), &[5., 4.]);
    let c = Tensor::full(&[1, 2, 6], 7.0);
    assert!(ops::maxpool1d(&c, 2, 2).unwrap().data().iter().all(|&v| v == 7.0));
    let long = Tensor::zeros(&[1, 16, 66]);
    assert_eq!(ops::maxpool1d(&long, 2, 2).unwrap().shape(), &[1, 16, 33]);
}

#[test]
fn maxpool_ties_route_to_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 1, 4], vec![2., 2., 1., 1.]).unwrap());
    let y = tape.maxpool1d(x, 2, 2).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1., 0., 1., 0.]);
}

fn random_attention(rng: &mut ChaCha8Rng, dm: usize) -> AttentionWeights {
    AttentionWeights {
        wq: rand_tensor(rng, &[dm, dm]),
        bq: rand_tensor(rng, &[dm]),
        wk: rand_tensor(rng, &[dm, dm]),
        wv: rand_tensor(rng, &[dm, dm]),
        bv: rand_tensor(rng, &[dm]),
        wo: rand_tensor(rng, &[dm, dm]),
        bo: rand_tensor(rng, &[dm]),
    }
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    (0..o)
        .map(|r| b.data()[r] + (0..i).map(|c| w.data()[r * i + c] * x[c]).sum::<f64>())
        .collect()
}

fn dense_attention(x: &Tensor, aw: &AttentionWeights, heads: usize) -> Vec<f64> {
    let (bs, t, dm) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let dk = dm / heads;
    let mut out = vec![];
    for b in 0..bs {
        let tok = |i: usize| &x.data()[(b * t + i) * dm..(b * t + i + 1) * dm];
        let q: Vec<Vec<f64>> = (0..t).map(|i| affine(&aw.wq, &aw.bq, tok(i))).collect();
        let k: Vec<Vec<f64>> = (0..t).map(|i| affine(&aw.wk, &Tensor::zeros(&[aw.wk.shape()[0]]), tok(i))).collect();
        let v: Vec<Vec<f64>> = (0..t).map(|i| affine(&aw.wv, &aw.bv, tok(i))).collect();
        for i in 0..t {
            let mut concat = vec![0.0; dm];
            for h in 0..heads {
                let r = h * dk..(h + 1) * dk;
                let logits: Vec<f64> = (0..t)
                    .map(|j| {
                        q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (dk as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..t {
                    for d in r.clone() {
                        concat[d] += e[j] / z * v[j][d];
                    }
                }
            }
            out.extend(affine(&aw.wo, &aw.bo, &concat));
        }
    }
    out
}

#[test]
fn attention_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 3, 8]);
    let aw = random_attention(&mut rng, 8);
    let y = ops::multihead_attention(&x, &aw, 2).unwrap();
    for (a, e) in y.data().iter().zip(dense_attention(&x, &aw, 2)) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn attention_identical_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tok: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(&[1, 4, 8], tok.repeat(4)).unwrap();
    let aw = random_attention(&mut rng, 8);
    let y = ops::multihead_attention(&x, &aw, 4).unwrap();
    for t in 1..4 {
        for d in 0..8 {
            assert!((y.data()[t * 8 + d] - y.data()[d]).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_single_token_is_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[1, 1, 8]);
    let aw = random_attention(&mut rng, 8);
    let y = ops::multihead_attention(&x, &aw, 2).unwrap();
    let expect = affine(&aw.wo, &aw.bo, &affine(&aw.wv, &aw.bv, x.data()));
    for (a, e) in y.data().iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[1, 2, 8]);
    let aw = random_attention(&mut rng, 8);
    assert!(ops::multihead_attention(&x, &aw, 3).is_err());
}

#[test]
fn relu_dropout_layernorm_basics() {
    let x = Tensor::new(&[3], vec![-1., 0., 2.]).unwrap();
    assert_eq!(ops::relu(&x).data(), &[0., 0., 2.]);

    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let d = tape.dropout::<ChaCha8Rng>(v, 0.5, None).unwrap();
    assert_eq!(tape.value(d), &x);

    let mut store = ParamStore::new();
    store.insert("g", Tensor::full(&[4], 3.0), false).unwrap();
    store.insert("b", Tensor::full(&[4], 0.25), false).unwrap();
    let c = tape.constant(Tensor::full(&[1, 4], 5.0));
    let g = tape.param(&store, "g").unwrap();
    let b = tape.param(&store, "b").unwrap();
    let y = tape.layernorm(c, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
}

#[test]
fn train_dropout_rescales_kept_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::full(&[1000], 1.0));
    let d = tape.dropout(v, 0.1, Some(&mut rng)).unwrap();
    for &y in tape.value(d).data() {
        assert!(y == 0.0 || (y - 1.0 / 0.9).abs() < 1e-15);
    }
    let kept = tape.value(d).data().iter().filter(|&&y| y > 0.0).count();
    assert!((850..=950).contains(&kept));
}

#[test]
fn linear_backward_by_hand() {
    // loss = sum(W·x), so dloss/dW[i][j] = x[j]
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap(), true).unwrap();
    store.insert("unused", Tensor::full(&[3], 1.0), true).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![5., 7.]).unwrap());
    let w = tape.param(&store, "w").unwrap();
    let y = tape.linear(x, w, None).unwrap();
    let loss = tape.sum(y);
    tape.backward_into(loss, &mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad, vec![5., 7., 5., 7.]);
    assert_eq!(store.get("unused").unwrap().grad, vec![0.0; 3]);

    store.zero_grad();
    tape.backward_into(loss, &mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad, vec![5., 7., 5., 7.]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn finite_difference_examples() {
    let mut store = ParamStore::new();
    store.insert("t", Tensor::scalar(3.0), false).unwrap();
    let g = finite_difference(|s| s.value("t").unwrap().data()[0].powi(2), &mut store, 1e-5);
    assert!((g["t"][0] - 6.0).abs() < 1e-8);
    let g = finite_difference(|_| 4.2, &mut store, 1e-5);
    assert_eq!(g["t"], vec![0.0]);
}

/// A composite graph that exercises every primitive with a backward rule.
fn composite_loss(tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, crate::Error> {
    let cw = tape.param(store, "conv.w")?;
    let cb = tape.param(store, "conv.b")?;
    let h = tape.conv1d(x, cw, cb)?; // [2,4,7]
    let h = tape.relu(h);
    let h = tape.maxpool1d(h, 2, 1)?; // [2,4,6]
    let h = tape.permute(h, &[0, 2, 1])?; // [2,6,4]
    let pw = tape.param(store, "proj.w")?;
    let pb = tape.param(store, "proj.b")?;
    let h = tape.linear(h, pw, Some(pb))?; // [2,6,8]
    let pos = tape.param(store, "pos")?;
    let h = tape.add_bcast(h, pos)?;
    let a = tape.multihead_attention(h, store, "attn", 2)?;
    let h = tape.add(h, a)?;
    let g = tape.param(store, "ln.g")?;
    let b = tape.param(store, "ln.b")?;
    let h = tape.layernorm(h, g, b)?;
    let pooled = tape.global_average_pool(h)?; // [2,8]
    let t = tape.tanh(pooled);
    let e = tape.exp(t);
    let c = tape.mean_axis(e, 0)?;
    let c = tape.scale(c, 0.5);
    let d = tape.sub_bcast(e, c)?;
    let sq = tape.square(d);
    let sel = tape.select_rows(sq, &[1, 0, 1])?;
    let fl = tape.flip_last(sel);
    let m = tape.mul(fl, sel)?;
    let s = tape.sum_axis(m, 1)?;
    let s = tape.scale(s, 0.5);
    let s = tape.add_scalar(s, 1.0);
    let masked = tape.mul_const(s, vec![1.0, 0.5, 2.0])?;
    let r = tape.reshape(masked, &[3, 1])?;
    let total = tape.sum(r);
    let sub = tape.sub(total, total)?;
    let mean = tape.mean(r);
    tape.add(sub, mean)
}

fn composite_store(seed: u64) -> (ParamStore, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut put = |name: &str, shape: &[usize], rng: &mut ChaCha8Rng| {
        store.insert(name, rand_tensor(rng, shape), true).unwrap();
    };
    put("conv.w", &[4, 3, 2], &mut rng);
    put("conv.b", &[4], &mut rng);
    put("proj.w", &[8, 4], &mut rng);
    put("proj.b", &[8], &mut rng);
    put("pos", &[6, 8], &mut rng);
    for n in ["wq", "wk", "wv", "wo"] {
        put(&format!("attn.{n}"), &[8, 8], &mut rng);
    }
    for n in ["bq", "bv", "bo"] {
        put(&format!("attn.{n}"), &[8], &mut rng);
    }
    put("ln.g", &[8], &mut rng);
    put("ln.b", &[8], &mut rng);
    let x = rand_tensor(&mut rng, &[2, 3, 8]);
    (store, x)
}

#[test]
fn composite_backward_matches_finite_differences() {
    for seed in 0..3 {
        let (mut store, x) = composite_store(seed);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let loss = composite_loss(&mut tape, &store, xv).unwrap();
        let grads = tape.backward_into(loss, &mut store).unwrap();
        let x_grad = grads.get(xv).unwrap().to_vec();

        let numeric = finite_difference(
            |s| {
                let mut t = Tape::new();
                let xv = t.constant(x.clone());
                let l = composite_loss(&mut t, s, xv).unwrap();
                t.value(l).data()[0]
            },
            &mut store,
            1e-5,
        );
        for (name, p) in store.iter() {
            for (a, n) in p.grad.iter().zip(&numeric[name]) {
                assert!(relative_error(*a, *n) < 1e-4, "{name}: {a} vs {n}");
            }
        }
        let xn = finite_difference_vec(
            |xs| {
                let mut t = Tape::new();
                let xv = t.constant(Tensor::new(x.shape(), xs.to_vec()).unwrap());
                let l = composite_loss(&mut t, &store, xv).unwrap();
                t.value(l).data()[0]
            },
            x.data(),
            1e-5,
        );
        for (a, n) in x_grad.iter().zip(&xn) {
            assert!(relative_error(*a, *n) < 1e-4, "input: {a} vs {n}");
        }
    }
}

#[test]
fn dropout_is_deterministic_under_seed() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::full(&[64], 2.0));
        let d = tape.dropout(v, 0.3, Some(&mut rng)).unwrap();
        tape.value(d).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        row in proptest::collection::vec(-30.0f64..30.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let n = row.len();
        let x = Tensor::new(&[1, n], row.clone()).unwrap();
        let shifted = Tensor::new(&[1, n], row.iter().map(|v| v + c).collect()).unwrap();
        let (a, b) = (ops::softmax(&x), ops::softmax(&shifted));
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_naive_on_random_shapes(
        seed in 0u64..1000, b in 1usize..3, cin in 1usize..4, cout in 1usize..4, k in 1usize..4, extra in 0usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[b, cin, k + extra]);
        let w = rand_tensor(&mut rng, &[cout, cin, k]);
        let bias = rand_tensor(&mut rng, &[cout]);
        let y = ops::conv1d_valid(&x, &w, &bias).unwrap();
        for (a, e) in y.data().iter().zip(naive_conv(&x, &w, &bias)) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }
}
