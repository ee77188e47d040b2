use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::rng_for;

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_for(seed, "test");
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let id = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = Tensor::matrix(2, 2, vec![3.0, -1.5, 2.0, 7.0]).unwrap();
    assert_eq!(matmul(&id, &m).unwrap().data(), m.data());

    let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
    let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let a = Tensor::zeros(&[2, 3]).unwrap();
    let b = Tensor::zeros(&[2, 3]).unwrap();
    let err = matmul(&a, &b).unwrap_err().to_string();
    assert!(err.contains("[2×3]"), "{err}");
    let mut tape = Tape::new();
    let (x, y) = (tape.leaf(&a), tape.leaf(&b));
    assert!(matches!(tape.matmul(x, y), Err(crate::Error::Shape { .. })));
}

#[test]
fn matmul_grad_matches_finite_differences() {
    let (m, k, n) = (3, 4, 2);
    let a = random_tensor(&[m, k], 1).with_grad();
    let b = random_tensor(&[k, n], 2);
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(&a), tape.constant(&b));
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum(c);
    tape.backward(s, &mut ParamStore::new()).unwrap();
    let analytic = tape.grad(va).unwrap().to_vec();

    // oracle: finite differences over a naive product
    let h = 1e-6;
    for idx in 0..m * k {
        let mut up = a.data().to_vec();
        up[idx] += h;
        let mut dn = a.data().to_vec();
        dn[idx] -= h;
        let fu: f64 = naive_matmul(&up, b.data(), m, k, n).iter().sum();
        let fd: f64 = naive_matmul(&dn, b.data(), m, k, n).iter().sum();
        let numeric = (fu - fd) / (2.0 * h);
        assert!((numeric - analytic[idx]).abs() < 1e-8, "{idx}: {numeric} vs {}", analytic[idx]);
    }
    // and the closed form ones(m×n)·bᵀ
    for i in 0..m {
        for p in 0..k {
            let row_sum: f64 = (0..n).map(|j| b.at(p, j)).sum();
            assert!((analytic[i * k + p] - row_sum).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::new();
    let logits = tape.constant(&Tensor::zeros(&[3, 4]).unwrap());
    let l = tape.cross_entropy(logits, &[0, 1, 3], 99).unwrap();
    assert!((tape.scalar(l).unwrap() - 4f64.ln()).abs() < 1e-12);

    let mut data = vec![0.0; 8];
    data[2] = 20.0;
    data[4 + 1] = 20.0;
    let logits = tape.constant(&Tensor::matrix(2, 4, data).unwrap());
    let l = tape.cross_entropy(logits, &[2, 1], 99).unwrap();
    assert!(tape.scalar(l).unwrap() < 1e-6);

    let all_ignored = tape.cross_entropy(logits, &[7, 7], 7).unwrap();
    assert_eq!(tape.scalar(all_ignored).unwrap(), 0.0);

    assert!(matches!(
        tape.cross_entropy(logits, &[4, 0], 99),
        Err(crate::Error::Index { .. })
    ));
}

#[test]
fn cross_entropy_matches_per_position_logsumexp() {
    let (t, v) = (5, 7);
    let logits = random_tensor(&[t, v], 11);
    let targets = [3u32, 0, 6, 2, 5];
    let ignore = 0u32;
    let mut tape = Tape::new();
    let lv = tape.constant(&logits);
    let l = tape.cross_entropy(lv, &targets, ignore).unwrap();

    let mut total = 0.0;
    let mut count = 0;
    for (r, &y) in targets.iter().enumerate() {
        if y == ignore {
            continue;
        }
        let row = logits.row(r);
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
        count += 1;
    }
    assert!((tape.scalar(l).unwrap() - total / count as f64).abs() < 1e-12);
}

#[test]
fn backward_of_simple_losses() {
    let w = random_tensor(&[2, 3], 5).with_grad();
    let mut tape = Tape::new();
    let vw = tape.leaf(&w);
    let s = tape.sum(vw);
    tape.backward(s, &mut ParamStore::new()).unwrap();
    assert_eq!(tape.grad(vw).unwrap(), &[1.0; 6]);

    let mut tape = Tape::new();
    let vw = tape.leaf(&w);
    let sq = tape.mul(vw, vw).unwrap();
    let s = tape.sum(sq);
    tape.backward(s, &mut ParamStore::new()).unwrap();
    let expected: Vec<f64> = w.data().iter().map(|x| 2.0 * x).collect();
    assert_eq!(tape.grad(vw).unwrap(), expected.as_slice());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let v = tape.leaf(&random_tensor(&[2, 2], 1).with_grad());
    assert!(matches!(
        tape.backward(v, &mut ParamStore::new()),
        Err(crate::Error::Contract(_))
    ));
}

fn two_layer_store() -> (ParamStore, [ParamId; 4]) {
    let mut store = ParamStore::new();
    let w1 = store.insert("w1", random_tensor(&[3, 5], 21)).unwrap();
    let b1 = store.insert("b1", random_tensor(&[5], 22)).unwrap();
    let w2 = store.insert("w2", random_tensor(&[5, 4], 23)).unwrap();
    let b2 = store.insert("b2", random_tensor(&[4], 24)).unwrap();
    (store, [w1, b1, w2, b2])
}

#[test]
fn two_layer_net_passes_grad_check() {
    let (mut store, [w1, b1, w2, b2]) = two_layer_store();
    let x = random_tensor(&[6, 3], 25);
    let report = grad_check(
        &mut store,
        |tape, ps| {
            let xv = tape.constant(&x);
            let (w1, b1, w2, b2) = (tape.param(ps, w1), tape.param(ps, b1), tape.param(ps, w2), tape.param(ps, b2));
            let h = tape.matmul(xv, w1)?;
            let h = tape.add_row(h, b1)?;
            let h = tape.silu(h);
            let o = tape.matmul(h, w2)?;
            let o = tape.add_row(o, b2)?;
            tape.cross_entropy(o, &[0, 1, 2, 3, 1, 0], 99)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.max_rel_error() < 1e-4);
}

#[test]
fn grad_check_of_sum_is_exact() {
    let mut store = ParamStore::new();
    let w = store.insert("w", random_tensor(&[3, 3], 9)).unwrap();
    let report = grad_check(
        &mut store,
        |tape, ps| {
            let v = tape.param(ps, w);
            Ok(tape.sum(v))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    // (x+h − (x−h)) / 2h rounds to within a few ulps of 1
    assert!(report.max_rel_error() < 1e-9, "{report:?}");
}

#[test]
fn grad_check_flags_non_finite() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::new(vec![1], vec![f64::MAX]).unwrap()).unwrap();
    let err = grad_check(
        &mut store,
        |tape, ps| {
            let v = tape.param(ps, w);
            let sq = tape.mul(v, v)?;
            Ok(tape.sum(sq))
        },
        &GradCheckOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Numeric(ref m) if m.contains('w')));
}

#[test]
fn unreachable_params_get_no_gradient() {
    let (mut store, [w1, _, w2, _]) = two_layer_store();
    let x = random_tensor(&[2, 3], 1);
    let mut tape = Tape::new();
    let xv = tape.constant(&x);
    let w1v = tape.param(&store, w1);
    let _unused = tape.param(&store, w2);
    let h = tape.matmul(xv, w1v).unwrap();
    let s = tape.sum(h);
    store.zero_grads();
    tape.backward(s, &mut store).unwrap();
    assert!(store.get(w2).grad().unwrap().iter().all(|g| *g == 0.0));
    assert!(store.get(w1).grad().unwrap().iter().any(|g| *g != 0.0));
}

fn op_chain(tape: &mut Tape, ps: &ParamStore, ids: &[ParamId], mask: &AttnMask) -> crate::Result<Var> {
    let x = tape.param(ps, ids[0]);
    let g = tape.param(ps, ids[1]);
    let b = tape.param(ps, ids[2]);
    let kv = tape.param(ps, ids[3]);
    let table = tape.param(ps, ids[4]);
    let n = tape.layer_norm(x, g, b, 1e-5)?;
    let a = tape.attention(n, kv, kv, 2, mask)?;
    let e = tape.gather(table, &[1, 0, 1])?;
    let s = tape.add(a, e)?;
    let s = tape.silu(s);
    let s = tape.scale(s, 0.7);
    let m = tape.mul_const(s, vec![1.0, 0.0, 2.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])?;
    let r = tape.matmul_t(m, kv)?;
    tape.cross_entropy(r, &[0, 3, 2], 3)
}

#[test]
fn every_op_passes_grad_check() {
    for mask in [
        AttnMask::Full,
        AttnMask::Custom {
            rows: 3,
            cols: 4,
            allowed: vec![true, false, false, false, true, true, false, false, true, true, true, false],
        },
    ] {
        let mut store = ParamStore::new();
        let ids = vec![
            store.insert("x", random_tensor(&[3, 4], 31)).unwrap(),
            store.insert("gain", random_tensor(&[4], 32)).unwrap(),
            store.insert("bias", random_tensor(&[4], 33)).unwrap(),
            store.insert("kv", random_tensor(&[4, 4], 34)).unwrap(),
            store.insert("table", random_tensor(&[2, 4], 35)).unwrap(),
        ];
        let report = grad_check(&mut store, |t, ps| op_chain(t, ps, &ids, &mask), &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "{report:#?}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut tape = Tape::new();
    let q = tape.constant(&random_tensor(&[5, 8], 41));
    let k = tape.constant(&random_tensor(&[6, 8], 42));
    let out = tape.attention(q, k, k, 2, &AttnMask::Full).unwrap();
    let probs = tape.attention_probs(out).unwrap();
    for row in probs.chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(row.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let (mut store, [w1, b1, _, _]) = two_layer_store();
        let mut tape = Tape::new();
        let x = tape.constant(&random_tensor(&[4, 3], 3));
        let w = tape.param(&store, w1);
        let b = tape.param(&store, b1);
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add_row(h, b).unwrap();
        let h = tape.silu(h);
        let s = tape.sum(h);
        tape.backward(s, &mut store).unwrap();
        (tape.scalar(s).unwrap().to_bits(), store.get(w1).grad().unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn matmul_matches_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000) {
        let a = random_tensor(&[m, k], seed);
        let b = random_tensor(&[k, n], seed + 1);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(a.data(), b.data(), m, k, n);
        for (x, y) in fast.data().iter().zip(&slow) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_t_backward_matches_plain(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        // a·bᵀ through matmul_t and through an explicitly transposed constant agree
        let a = random_tensor(&[m, k], seed).with_grad();
        let b = random_tensor(&[n, k], seed + 7).with_grad();
        let bt = Tensor::from_fn(&[k, n], |i| b.at(i % n, i / n)).unwrap().with_grad();
        let mut t1 = Tape::new();
        let (va, vb) = (t1.leaf(&a), t1.leaf(&b));
        let c = t1.matmul_t(va, vb).unwrap();
        let s = t1.sum(c);
        t1.backward(s, &mut ParamStore::new()).unwrap();
        let mut t2 = Tape::new();
        let (wa, wb) = (t2.leaf(&a), t2.leaf(&bt));
        let c2 = t2.matmul(wa, wb).unwrap();
        let s2 = t2.sum(c2);
        t2.backward(s2, &mut ParamStore::new()).unwrap();
        for (x, y) in t1.grad(va).unwrap().iter().zip(t2.grad(wa).unwrap()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let gb = t1.grad(vb).unwrap();
        let gbt = t2.grad(wb).unwrap();
        for j in 0..n {
            for p in 0..k {
                prop_assert!((gb[j * k + p] - gbt[p * n + j]).abs() < 1e-12);
            }
        }
    }
}
