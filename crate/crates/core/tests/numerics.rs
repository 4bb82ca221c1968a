use locgclstm::numerics::{
    backward, finite_difference_gradient, max_relative_error, seeded_rng, Bindings, ParameterSet, Tape, Tensor, Var,
};
use locgclstm::Result;
use proptest::prelude::*;

type Build = fn(&mut Tape, &Bindings) -> Result<Var>;

/// Contracts `out` with a fixed pseudo-random weight so every output entry
/// reaches the scalar with a distinct coefficient.
fn contract(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|k| 0.3 + ((k * 7919) % 13) as f64 / 10.0).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn objective(params: &ParameterSet, build: Build) -> Result<f64> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let out = build(&mut tape, &b)?;
    let s = contract(&mut tape, out)?;
    Ok(tape.value(s).item())
}

fn gradcheck(mut params: ParameterSet, build: Build) -> f64 {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let out = build(&mut tape, &b).unwrap();
    let s = contract(&mut tape, out).unwrap();
    backward(s, &tape, &mut params, &b).unwrap();
    let numeric = finite_difference_gradient(|p| objective(p, build), &params, 1e-6).unwrap();
    let (err, at) = max_relative_error(&params, &numeric, 1e-8);
    assert!(err < 1e-6, "{at}");
    err
}

fn params(entries: &[(&str, &[usize])], seed: u64) -> ParameterSet {
    let mut rng = seeded_rng(seed);
    let mut p = ParameterSet::new();
    for (name, shape) in entries {
        p.insert(*name, Tensor::uniform(shape, -1.5, 1.5, &mut rng));
    }
    p
}

#[test]
fn gradcheck_matmul() {
    gradcheck(params(&[("a", &[3, 4]), ("b", &[4, 2])], 1), |t, b| t.matmul(b.get("a"), b.get("b")));
}

#[test]
fn gradcheck_elementwise_binary() {
    let p = || params(&[("a", &[2, 3]), ("b", &[2, 3])], 2);
    gradcheck(p(), |t, b| t.add(b.get("a"), b.get("b")));
    gradcheck(p(), |t, b| t.sub(b.get("a"), b.get("b")));
    gradcheck(p(), |t, b| t.mul(b.get("a"), b.get("b")));
}

#[test]
fn gradcheck_add_bias_both_shapes() {
    gradcheck(params(&[("a", &[4, 3]), ("b", &[3])], 3), |t, b| t.add_bias(b.get("a"), b.get("b")));
    gradcheck(params(&[("a", &[4, 3]), ("b", &[1, 3])], 3), |t, b| t.add_bias(b.get("a"), b.get("b")));
}

#[test]
fn gradcheck_div_rows() {
    let mut p = params(&[("a", &[3, 4])], 4);
    p.insert("d", Tensor::matrix(3, 1, vec![1.3, 2.1, 0.7]).unwrap());
    gradcheck(p, |t, b| t.div_rows(b.get("a"), b.get("d")));
}

#[test]
fn gradcheck_unary() {
    let p = || params(&[("a", &[3, 3])], 5);
    gradcheck(p(), |t, b| Ok(t.scale(b.get("a"), -2.5)));
    gradcheck(p(), |t, b| Ok(t.sigmoid(b.get("a"))));
    gradcheck(p(), |t, b| Ok(t.tanh(b.get("a"))));
}

#[test]
fn gradcheck_abs_away_from_kink() {
    let mut p = ParameterSet::new();
    p.insert("a", Tensor::matrix(2, 3, vec![0.4, -1.2, 2.0, -0.3, 0.9, -2.2]).unwrap());
    gradcheck(p, |t, b| Ok(t.abs(b.get("a"))));
}

#[test]
fn gradcheck_reductions_and_shape_ops() {
    let p = || params(&[("a", &[3, 4]), ("b", &[3, 2])], 6);
    gradcheck(p(), |t, b| Ok(t.sum(b.get("a"))));
    gradcheck(p(), |t, b| Ok(t.mean(b.get("a"))));
    gradcheck(p(), |t, b| t.row_sum(b.get("a")));
    gradcheck(p(), |t, b| t.reshape(b.get("a"), &[6, 2]));
    gradcheck(p(), |t, b| t.concat(&[b.get("a"), b.get("b"), b.get("a")]));
}

#[test]
fn gradcheck_composed_reuse() {
    // `a` feeds the graph along three paths.
    gradcheck(params(&[("a", &[2, 2]), ("w", &[2, 2])], 7), |t, b| {
        let h = t.matmul(b.get("a"), b.get("w"))?;
        let s = t.sigmoid(h);
        let m = t.mul(s, b.get("a"))?;
        let a2 = t.tanh(b.get("a"));
        t.add(m, a2)
    });
}

#[test]
fn mse_through_matmul_matches_hand_gradient() {
    // L = mean((X·W − Y)²), dL/dW = 2/n · Xᵀ(XW − Y).
    let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let w = Tensor::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
    let mut p = ParameterSet::new();
    p.insert("w", w.clone());
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = tape.matmul(xv, b.get("w")).unwrap();
    let d = tape.sub(pred, yv).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let loss = tape.mean(sq);
    backward(loss, &tape, &mut p, &b).unwrap();

    let r: Vec<f64> = (0..4)
        .map(|k| {
            let (i, j) = (k / 2, k % 2);
            x.get(i, 0) * w.get(0, j) + x.get(i, 1) * w.get(1, j) - y.get(i, j)
        })
        .collect();
    for k in 0..4 {
        let (a, j) = (k / 2, k % 2);
        let hand = 2.0 / 4.0 * (x.get(0, a) * r[j] + x.get(1, a) * r[2 + j]);
        let got = p.grad("w").unwrap().data()[k];
        assert!((got - hand).abs() / hand.abs().max(1e-12) < 1e-6, "{k}: {got} vs {hand}");
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let v = tape.var(Tensor::zeros(&[2, 2]));
    assert!(tape.backward(v).is_err());
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[2, 2]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.matmul(a, a).is_err());
    assert!(tape.add_bias(a, b).is_err());
}

fn grads_of(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut p = ParameterSet::new();
    p.insert("x", Tensor::vector(values.to_vec()));
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let w = tape.constant(Tensor::vector(weights.to_vec()));
    let t = tape.tanh(b.get("x"));
    let m = tape.mul(t, w).unwrap();
    let s = tape.sum(m);
    backward(s, &tape, &mut p, &b).unwrap();
    p.grad("x").unwrap().data().to_vec()
}

proptest! {
    #[test]
    fn backward_is_deterministic(v in prop::collection::vec(-3.0f64..3.0, 1..12)) {
        let w: Vec<f64> = v.iter().map(|x| x * 0.5 + 1.0).collect();
        prop_assert_eq!(grads_of(&v, &w), grads_of(&v, &w));
    }

    #[test]
    fn gradient_is_linear_in_upstream_weight(
        v in prop::collection::vec(-3.0f64..3.0, 1..12),
        alpha in -4.0f64..4.0,
    ) {
        let w: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
        let scaled: Vec<f64> = w.iter().map(|x| alpha * x).collect();
        let g = grads_of(&v, &w);
        let gs = grads_of(&v, &scaled);
        for (a, b) in g.iter().zip(&gs) {
            prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let ta = Tensor::matrix(2, 3, a.clone()).unwrap();
        let tb = Tensor::matrix(3, 4, b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                prop_assert!((c.get(i, j) - naive).abs() < 1e-12);
            }
        }
    }
}
