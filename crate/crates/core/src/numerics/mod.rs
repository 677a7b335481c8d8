//! Dense `f64` matrices with a reverse-mode differentiation tape and an Adam
//! updater.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("buffer holds {actual} values, shape needs {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("mask has {actual} entries, expected {expected}")]
    MaskLength { expected: usize, actual: usize },
    #[error("{op}: index {index} beyond {limit}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("top-k with k = {k} over {valid} valid entries")]
    TopK { k: usize, valid: usize },
    #[error("{0}: no valid entries")]
    Empty(&'static str),
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{params} parameters, {grads} gradients, {state} optimizer slots")]
    ParamCount {
        params: usize,
        grads: usize,
        state: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `build` on the given inputs.
    ///
    /// The scalar under test is `Σ w ⊙ build(inputs)` with fixed random `w`,
    /// evaluated by fresh forward passes only.
    fn grad_check(
        inputs: &[Tensor],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |xs: &[Tensor], weights: &Tensor| -> (f64, Tape, Vec<Var>, Var) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
            let out = build(&mut tape, &vars);
            let wv = tape.leaf(weights.clone());
            let prod = tape.mul(out, wv).unwrap();
            let loss = tape.sum_all(prod);
            (tape.value(loss).item(), tape, vars, loss)
        };
        let shape = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).shape()
        };
        let weights = random(&mut rng, shape.0, shape.1);
        let (_, tape, vars, loss) = eval(inputs, &weights);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(&tape, *var);
            for i in 0..inputs[k].len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus, &weights).0 - eval(&minus, &weights).0) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        worst
    }

    fn check(name: &str, inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let err = grad_check(inputs, build);
        assert!(err < 1e-6, "{name}: max relative error {err:e}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 5);
        let b = random(&mut rng, 4, 5);
        let c = random(&mut rng, 5, 3);
        let row = random(&mut rng, 1, 5);
        let s = random(&mut rng, 1, 1);
        let valid = [true, false, true, true];
        let flat_valid: Vec<bool> = (0..20).map(|i| i % 3 != 1).collect();
        let mask = Mask::causal(&[true, true, true, false, true]);
        let sq = random(&mut rng, 5, 5);

        check("matmul", &[a.clone(), c.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
        check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
        check("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
        check("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
        check("add_row", &[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]).unwrap());
        check("scale", &[a.clone()], |t, v| t.scale(v[0], -2.5));
        check("add_const", &[a.clone()], |t, v| t.add_const(v[0], 0.7));
        check("mul_scalar", &[a.clone(), s.clone()], |t, v| t.mul_scalar(v[0], v[1]).unwrap());
        check("add_scalar", &[a.clone(), s.clone()], |t, v| t.add_scalar(v[0], v[1]).unwrap());
        check("transpose", &[a.clone()], |t, v| t.transpose(v[0]));
        check("concat", &[a.clone(), row.clone()], |t, v| t.concat_rows(&[v[0], v[1], v[0]]).unwrap());
        check("slice", &[a.clone()], |t, v| t.slice_rows(v[0], 1, 2).unwrap());
        check("sigmoid", &[a.clone()], |t, v| t.sigmoid(v[0]));
        check("tanh", &[a.clone()], |t, v| t.tanh(v[0]));
        check("exp", &[a.clone()], |t, v| t.exp(v[0]));
        check("abs", &[a.clone()], |t, v| t.abs(v[0]));
        check("neg", &[a.clone()], |t, v| t.neg(v[0]));
        check("softplus", &[a.map(|x| 8.0 * x)], |t, v| t.softplus(v[0]));
        check("row_softmax", &[a.clone()], |t, v| t.row_softmax(v[0], None).unwrap());
        check("row_softmax masked", &[sq.clone()], |t, v| {
            t.row_softmax(v[0], Some(&mask)).unwrap()
        });
        check("row_log_softmax", &[sq.clone()], |t, v| {
            t.row_log_softmax(v[0], Some(&mask)).unwrap()
        });
        check("layer_norm", &[a.clone(), row.clone(), row.clone()], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        });
        check("l2_normalize_rows", &[a.clone()], |t, v| t.l2_normalize_rows(v[0]).unwrap());
        check("mean_over_valid", &[a.clone()], |t, v| t.mean_over_valid(v[0], &valid).unwrap());
        check("topk_mean", &[a.clone()], |t, v| t.topk_mean(v[0], &flat_valid, 3).unwrap());
        check("max_over_valid", &[a.clone()], |t, v| t.max_over_valid(v[0], &flat_valid).unwrap());
        check("sum_all", &[a.clone()], |t, v| t.sum_all(v[0]));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 3));
        let y = tape.row_softmax(x, None).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 4, 6);
        let mut tape = Tape::new();
        let a = tape.leaf(x.clone());
        let b = tape.leaf(x.map(|v| v + 37.25));
        let ya = tape.row_softmax(a, None).unwrap();
        let yb = tape.row_softmax(b, None).unwrap();
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_entries_are_exact_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut rng, 4, 4));
        let mask = Mask::causal(&[true; 4]);
        let y = tape.row_softmax(x, Some(&mask)).unwrap();
        let w = tape.leaf(random(&mut rng, 4, 4));
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for r in 0..4 {
            let row_sum: f64 = tape.value(y).row(r).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            for c in (r + 1)..4 {
                assert_eq!(tape.value(y).get(r, c), 0.0);
                assert_eq!(g.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn topk_and_max_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(3, 1, vec![5.0, 1.0, 3.0]).unwrap());
        let all = [true; 3];
        let top2 = tape.topk_mean(x, &all, 2).unwrap();
        assert_eq!(tape.value(top2).item(), 4.0);
        let max = tape.max_over_valid(x, &[false, true, true]).unwrap();
        assert_eq!(tape.value(max).item(), 3.0);
        assert_eq!(
            tape.topk_mean(x, &all, 4),
            Err(NumericsError::TopK { k: 4, valid: 3 })
        );
        assert_eq!(
            tape.topk_mean(x, &all, 0),
            Err(NumericsError::TopK { k: 0, valid: 3 })
        );
        assert!(tape.max_over_valid(x, &[false; 3]).is_err());
    }

    #[test]
    fn topk_ties_pick_earliest() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 4, vec![2.0, 7.0, 2.0, 7.0]).unwrap());
        let top = tape.topk_mean(x, &[true; 4], 3).unwrap();
        let grads = tape.backward(top).unwrap();
        let share = 1.0 / 3.0;
        assert_eq!(grads.get(x).unwrap().data(), &[share, share, 0.0, share]);
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut rng, 6, 9).map(|v| 3.0 * v + 1.0));
        let g = tape.leaf(Tensor::filled(1, 9, 1.0));
        let b = tape.leaf(Tensor::zeros(1, 9));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        for r in 0..6 {
            let row = tape.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 9.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
        let empty = tape.leaf(Tensor::zeros(2, 0));
        let e1 = tape.leaf(Tensor::zeros(1, 0));
        assert_eq!(
            tape.layer_norm(empty, e1, e1, 1e-5),
            Err(NumericsError::Empty("layer_norm"))
        );
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert_eq!(
            tape.backward(x).err(),
            Some(NumericsError::NonScalarLoss((2, 2)))
        );
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.add_row(a, b).is_err());
        assert!(tape.mul_scalar(a, b).is_err());
        assert!(tape.slice_rows(a, 1, 2).is_err());
        assert!(tape.mean_over_valid(a, &[true]).is_err());
        assert!(tape.row_softmax(a, Some(&Mask::all(3, 3))).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut tape = Tape::new();
            let x = tape.leaf(random(&mut rng, 4, 5));
            let w = tape.leaf(random(&mut rng, 5, 5));
            let h = tape.matmul(x, w).unwrap();
            let p = tape.row_softmax(h, None).unwrap();
            let t = tape.tanh(p);
            let loss = tape.sum_all(t);
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss).clone(), grads.get(w).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
