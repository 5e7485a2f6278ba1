//! Outputs stay strictly inside (0, 1) only while logit gaps are small enough
//! that `exp(-gap)` is representable next to 1.0; the property runs use gaps
//! up to 30.

use apan::tensor::gradcheck::compare;
use apan::tensor::{ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Tape, &[Var]) -> Var;
type OpCase = (&'static str, Vec<(usize, usize)>, (f64, f64), Build);

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_rows(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Runs `build` over parameters with the given shapes, contracts the output
/// with a fixed random probe and returns the worst relative gradient error.
fn max_op_error(seed: u64, shapes: &[(usize, usize)], range: (f64, f64), build: Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| store.add(format!("x{k}"), random(&mut rng, r, c, range.0, range.1)))
        .collect();
    let forward = |store: &ParamStore, probe: Option<&Tensor>| -> (Tape, Var, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = build(&mut tape, &vars);
        let (r, c) = tape.value(out).dims2();
        let probe = probe.cloned().unwrap_or_else(|| {
            let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            random(&mut prng, r, c, -1.0, 1.0)
        });
        let p = tape.leaf(probe.clone());
        let prod = tape.mul(out, p).unwrap();
        let loss = tape.sum(prod);
        (tape, loss, probe)
    };
    let (tape, loss, probe) = forward(&store, None);
    store.zero_grads();
    tape.backward(loss, &mut store).unwrap();
    let entries = compare(&mut store, &ids, 1e-5, |s| {
        let (tape, loss, _) = forward(s, Some(&probe));
        tape.value(loss).item().unwrap()
    });
    entries.iter().map(|e| e.relative_error(1e-3)).fold(0.0, f64::max)
}

fn ops() -> Vec<OpCase> {
    vec![
        ("matmul", vec![(3, 4), (4, 2)], (-1.0, 1.0), |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("transpose", vec![(3, 4)], (-1.0, 1.0), |t, v| t.transpose(v[0])),
        ("add", vec![(3, 4), (3, 4)], (-1.0, 1.0), |t, v| t.add(v[0], v[1]).unwrap()),
        ("add_broadcast_row", vec![(3, 4), (1, 4)], (-1.0, 1.0), |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![(3, 4), (3, 4)], (-1.0, 1.0), |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![(3, 4), (3, 4)], (-1.0, 1.0), |t, v| t.mul(v[0], v[1]).unwrap()),
        ("div", vec![(3, 4), (3, 4)], (0.5, 2.0), |t, v| t.div(v[0], v[1]).unwrap()),
        ("scale", vec![(3, 4)], (-1.0, 1.0), |t, v| t.scale(v[0], -1.7)),
        ("add_scalar", vec![(3, 4)], (-1.0, 1.0), |t, v| t.add_scalar(v[0], 0.3)),
        ("concat_cols", vec![(3, 2), (3, 3)], (-1.0, 1.0), |t, v| t.concat_cols(&[v[0], v[1]]).unwrap()),
        ("concat_rows", vec![(2, 3), (1, 3)], (-1.0, 1.0), |t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
        ("gather_rows", vec![(4, 3)], (-1.0, 1.0), |t, v| t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap()),
        ("softmax_rows", vec![(3, 5)], (-2.0, 2.0), |t, v| t.softmax_rows(v[0])),
        ("mean_last", vec![(3, 5)], (-1.0, 1.0), |t, v| t.mean_last(v[0])),
        ("var_last", vec![(3, 5)], (-1.0, 1.0), |t, v| t.var_last(v[0])),
        ("sum_last", vec![(3, 5)], (-1.0, 1.0), |t, v| t.sum_last(v[0])),
        ("sum", vec![(3, 5)], (-1.0, 1.0), |t, v| t.sum(v[0])),
        ("mean", vec![(3, 5)], (-1.0, 1.0), |t, v| t.mean(v[0])),
        ("sqrt", vec![(3, 4)], (0.5, 3.0), |t, v| t.sqrt(v[0])),
        ("sigmoid", vec![(3, 4)], (-3.0, 3.0), |t, v| t.sigmoid(v[0])),
        ("relu", vec![(3, 4)], (0.1, 1.0), |t, v| t.relu(v[0])),
        ("relu_negative", vec![(3, 4)], (-1.0, -0.1), |t, v| t.relu(v[0])),
        ("log_sigmoid", vec![(3, 4)], (-5.0, 5.0), |t, v| t.log_sigmoid(v[0])),
    ]
}

#[test]
fn every_op_matches_central_differences() {
    for (name, shapes, range, build) in ops() {
        for seed in 0..5 {
            let err = max_op_error(seed, &shapes, range, build);
            assert!(err < 1e-6, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn sum_of_product_gradient_on_4x4() {
    let err = max_op_error(42, &[(4, 4), (4, 4)], (-1.0, 1.0), |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.sum(p)
    });
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn composite_chain_matches_central_differences() {
    let err = max_op_error(9, &[(2, 4), (4, 4), (1, 4)], (-1.0, 1.0), |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add(h, v[2]).unwrap();
        let s = t.softmax_rows(h);
        let mu = t.mean_last(s);
        let c = t.sub(h, mu).unwrap();
        let var = t.var_last(h);
        let var = t.add_scalar(var, 1e-6);
        let sd = t.sqrt(var);
        let n = t.div(c, sd).unwrap();
        t.sigmoid(n)
    });
    assert!(err < 1e-6, "{err:e}");
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 2usize..12,
        seed in any::<u64>(),
        spread in 0.1f64..15.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut rng, rows, cols, -spread, spread));
        let s = tape.softmax_rows(x);
        let out = tape.value(s);
        for r in 0..rows {
            let row = out.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}

#[test]
fn dropout_preserves_the_expectation() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for p in [0.1, 0.5] {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(1, n, 1.0));
        let y = tape.dropout(x, p, true, &mut rng).unwrap();
        let out = tape.value(y).data();
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "p {p}: mean {mean}");
        let keep = 1.0 / (1.0 - p);
        assert!(out.iter().all(|&v| v == 0.0 || v == keep));
        let dropped = out.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((dropped - p).abs() < 0.01, "p {p}: dropped {dropped}");
    }
}

#[test]
fn dropout_off_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let t = random(&mut rng, 3, 3, -1.0, 1.0);
    let x = tape.leaf(t.clone());
    let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
    assert_eq!(tape.value(y), &t);
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
}
