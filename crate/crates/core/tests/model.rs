use chrono::NaiveDate;
use locgclstm::data::{Sample, SampleLayout, SampleSet};
use locgclstm::graph::{NormalizationMode, RoadGraph};
use locgclstm::model::{lstm_prefix, LocGcLstmModel, ModelConfig, ModelKind, Scaler, DENSE_BIAS, DENSE_WEIGHT, GCN_MASK, GCN_WEIGHT};
use locgclstm::numerics::{backward, finite_difference_gradient, max_relative_error, seeded_rng, sigmoid, ParameterSet, Tape, Tensor};
use locgclstm::temporal::{dense_forward, lstm_cell_step, lstm_sequence, DenseHead, LstmCellParams, LstmState};
use locgclstm::training::loss_on_tape;
use locgclstm::Result;
use proptest::prelude::*;
use rand::Rng;

fn config(kind: ModelKind, n: usize, f: usize, lags: usize, horizon: usize, gcn: usize, lstm: Vec<usize>) -> ModelConfig {
    ModelConfig {
        kind,
        node_count: n,
        feature_count: f,
        lags,
        horizon,
        gcn_units: gcn,
        gcn_steps: 1,
        lstm_units: lstm,
        normalization: NormalizationMode::Dynamic,
    }
}

fn random_samples(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = seeded_rng(seed);
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..count)
        .map(|_| Sample {
            start,
            input: (0..cfg.node_count * cfg.lags * cfg.feature_count).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target: (0..cfg.node_count * cfg.horizon).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn batch_loss(model: &LocGcLstmModel, params: &ParameterSet, samples: &[&Sample], lambda: f64, grads: bool) -> Result<(f64, ParameterSet)> {
    let batch = model.make_batch(samples)?;
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let pred = model.forward_on_tape(&mut tape, &b, &batch)?;
    let truth = tape.constant(batch.targets);
    let biases: Vec<_> = model.lstm_bias_names().iter().map(|n| b.get(n)).collect();
    let loss = loss_on_tape(&mut tape, pred, truth, &biases, lambda)?;
    let mut out = params.clone();
    if grads {
        backward(loss, &tape, &mut out, &b)?;
    }
    Ok((tape.value(loss).item(), out))
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for kind in [ModelKind::LocGclstm, ModelKind::Gclstm, ModelKind::Lstm] {
        let cfg = config(kind, 3, 2, 3, 2, 3, vec![3, 2]);
        let graph = RoadGraph::from_influences(3, &[(1, 0), (2, 0), (0, 2)]).unwrap();
        let model = LocGcLstmModel::new(cfg.clone(), graph, Scaler::identity(2), &mut seeded_rng(9)).unwrap();
        let samples = random_samples(&cfg, 2, 10);
        let refs: Vec<&Sample> = samples.iter().collect();
        let (_, analytic) = batch_loss(&model, &model.params, &refs, 0.01, true).unwrap();
        let numeric =
            finite_difference_gradient(|p| batch_loss(&model, p, &refs, 0.01, false).map(|r| r.0), &model.params, 1e-6)
                .unwrap();
        let (err, at) = max_relative_error(&analytic, &numeric, 1e-4);
        assert!(err < 1e-5, "{kind}: {at}");
        if kind == ModelKind::LocGclstm {
            assert!(analytic.grad(GCN_MASK).unwrap().data().iter().any(|g| *g != 0.0));
        }
    }
}

fn identity_scaled(cfg: ModelConfig, graph: RoadGraph, seed: u64) -> LocGcLstmModel {
    let f = cfg.feature_count;
    LocGcLstmModel::new(cfg, graph, Scaler::identity(f), &mut seeded_rng(seed)).unwrap()
}

#[test]
fn single_node_reduces_to_projected_lstm() {
    let cfg = config(ModelKind::LocGclstm, 1, 3, 5, 4, 2, vec![3, 2]);
    let model = identity_scaled(cfg.clone(), RoadGraph::from_matrix(&[vec![0]]).unwrap(), 4);
    let samples = random_samples(&cfg, 3, 5);
    let w = model.params.value(GCN_WEIGHT).unwrap();
    let cells: Vec<LstmCellParams> =
        (0..2).map(|l| LstmCellParams::from_params(&model.params, &lstm_prefix(l)).unwrap()).collect();
    let head = DenseHead {
        weight: model.params.value(DENSE_WEIGHT).unwrap().clone(),
        bias: model.params.value(DENSE_BIAS).unwrap().clone(),
    };
    let got = model.predict(&samples.iter().collect::<Vec<_>>()).unwrap();
    for (s, g) in samples.iter().zip(&got) {
        let xs = Tensor::matrix(5, 3, s.input.clone()).unwrap().matmul(w).unwrap();
        let h = lstm_sequence(&xs, &cells).unwrap();
        let expect = dense_forward(&h, &head).unwrap();
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}

#[test]
fn two_node_hand_oracle() {
    // Node 1 feeds node 0. One lag, one feature, scalar GCN, one scalar LSTM unit.
    let cfg = config(ModelKind::LocGclstm, 2, 1, 1, 1, 1, vec![1]);
    let graph = RoadGraph::from_influences(2, &[(1, 0)]).unwrap();
    let mut model = identity_scaled(cfg.clone(), graph, 0);
    for (name, p) in model.params.iter_mut() {
        let v = match name {
            GCN_WEIGHT => 0.8,
            DENSE_WEIGHT => 1.5,
            DENSE_BIAS => 0.1,
            n if n.contains(".b_") => 0.05,
            _ => 0.4,
        };
        p.value.data_mut().fill(v);
    }
    model.params.set_value(GCN_MASK, Tensor::matrix(2, 2, vec![1.0, -3.0, 7.0, 2.0]).unwrap()).unwrap();
    let sample = Sample {
        start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
        input: vec![2.0, -1.0],
        target: vec![0.0, 0.0],
    };
    let out = model.predict(&[&sample]).unwrap().remove(0);

    let oracle = |x: f64| {
        let gates = 0.4 * x + 0.05;
        // Zero initial state: the forget gate has nothing to act on.
        let (i, o) = (sigmoid(gates), sigmoid(gates));
        let c = i * gates.tanh();
        let h = o * c.tanh();
        1.5 * h + 0.1
    };
    // Row 0 mixes |1|·x0 and |−3|·x1 over 4; row 1 only sees itself.
    let g0 = 0.8 * (1.0 * 2.0 + 3.0 * -1.0) / 4.0;
    let g1 = 0.8 * -1.0;
    assert!((out[0] - oracle(g0)).abs() < 1e-14, "{} vs {}", out[0], oracle(g0));
    assert!((out[1] - oracle(g1)).abs() < 1e-14);
}

#[test]
fn ones_mask_matches_classical_variant() {
    let mut rng = seeded_rng(21);
    let cfg = config(ModelKind::LocGclstm, 4, 2, 3, 2, 3, vec![3]);
    let graph = RoadGraph::from_influences(4, &[(2, 0), (3, 0), (0, 1)]).unwrap();
    let mut loc = LocGcLstmModel::new(cfg.clone(), graph.clone(), Scaler::identity(2), &mut rng).unwrap();
    loc.params.set_value(GCN_MASK, Tensor::ones(&[4, 4])).unwrap();
    let mut classic = LocGcLstmModel::new(
        ModelConfig { kind: ModelKind::Gclstm, ..cfg.clone() },
        graph,
        Scaler::identity(2),
        &mut rng,
    )
    .unwrap();
    for (name, p) in classic.params.iter_mut() {
        p.value = loc.params.value(name).unwrap().clone();
    }
    let samples = random_samples(&cfg, 5, 22);
    let a = loc.predict(&samples.iter().collect::<Vec<_>>()).unwrap();
    let b = classic.predict(&samples.iter().collect::<Vec<_>>()).unwrap();
    for (x, y) in a.concat().iter().zip(b.concat()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn batch_predictions_equal_single_sample_predictions() {
    let cfg = config(ModelKind::LocGclstm, 3, 2, 4, 3, 2, vec![2, 2]);
    let graph = RoadGraph::from_influences(3, &[(1, 0), (2, 1)]).unwrap();
    let model = identity_scaled(cfg.clone(), graph, 3);
    let samples = random_samples(&cfg, 4, 8);
    let batched = model.predict(&samples.iter().collect::<Vec<_>>()).unwrap();
    for (s, b) in samples.iter().zip(&batched) {
        let single = model.predict(&[s]).unwrap().remove(0);
        for (x, y) in single.iter().zip(b) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}

#[test]
fn scaler_roundtrip_through_targets() {
    let cfg = config(ModelKind::Lstm, 2, 1, 2, 1, 1, vec![2]);
    let samples = random_samples(&cfg, 10, 30);
    let layout = SampleLayout { node_count: 2, lags: 2, horizon: 1, feature_names: vec!["flow".into()] };
    let set = SampleSet::new(layout, samples);
    let idx: Vec<usize> = (0..10).collect();
    let scaler = Scaler::fit(&set, &idx).unwrap();
    for s in set.samples() {
        for &t in &s.target {
            let z = scaler.target.apply_value(0, t);
            assert!((scaler.target.invert_value(0, z) - t).abs() < 1e-12);
        }
    }
}

fn cell_oracle(x: &[f64], h: &[f64], c: &[f64], p: &LstmCellParams) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let pre = |g: usize, j: usize| {
        let mut s = p.bias[g].data()[j];
        for (k, xk) in x.iter().enumerate() {
            s += xk * p.input[g].get(k, j);
        }
        for (k, hk) in h.iter().enumerate() {
            s += hk * p.recurrent[g].get(k, j);
        }
        s
    };
    let mut h2 = vec![0.0; hidden];
    let mut c2 = vec![0.0; hidden];
    for j in 0..hidden {
        let f = 1.0 / (1.0 + (-pre(0, j)).exp());
        let i = 1.0 / (1.0 + (-pre(1, j)).exp());
        let cand = pre(2, j).tanh();
        let o = 1.0 / (1.0 + (-pre(3, j)).exp());
        c2[j] = f * c[j] + i * cand;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

fn random_cell(input: usize, hidden: usize, seed: u64, spread: f64) -> LstmCellParams {
    let mut rng = seeded_rng(seed);
    LstmCellParams {
        input: std::array::from_fn(|_| Tensor::uniform(&[input, hidden], -spread, spread, &mut rng)),
        recurrent: std::array::from_fn(|_| Tensor::uniform(&[hidden, hidden], -spread, spread, &mut rng)),
        bias: std::array::from_fn(|_| Tensor::uniform(&[hidden], -spread, spread, &mut rng)),
    }
}

proptest! {
    #[test]
    fn lstm_cell_matches_scalar_oracle(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let p = random_cell(3, 4, seed, 1.0);
        let mut rng = seeded_rng(seed ^ 1);
        let state = LstmState {
            h: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        let next = lstm_cell_step(&x, &state, &p).unwrap();
        let (h, c) = cell_oracle(&x, &state.h, &state.c, &p);
        for k in 0..4 {
            prop_assert!((next.h[k] - h[k]).abs() < 1e-14);
            prop_assert!((next.c[k] - c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_hidden_state_is_bounded(seed in any::<u64>(), len in 1usize..20, spread in 0.1f64..20.0) {
        let cells = vec![random_cell(2, 3, seed, spread), random_cell(3, 3, seed ^ 7, spread)];
        let mut rng = seeded_rng(seed);
        let xs = Tensor::uniform(&[len, 2], -100.0, 100.0, &mut rng);
        let h = lstm_sequence(&xs, &cells).unwrap();
        for v in h {
            prop_assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn predictions_ignore_mask_signs(seed in any::<u64>(), flips in any::<u16>()) {
        let cfg = config(ModelKind::LocGclstm, 4, 2, 2, 2, 2, vec![2]);
        let graph = RoadGraph::from_influences(4, &[(2, 0), (3, 0), (0, 1)]).unwrap();
        let model = identity_scaled(cfg.clone(), graph, seed);
        let mut flipped = model.clone();
        let m = flipped.params.value_mut(GCN_MASK).unwrap();
        for (k, w) in m.data_mut().iter_mut().enumerate() {
            if (flips >> k) & 1 == 1 {
                *w = -*w;
            }
        }
        let samples = random_samples(&cfg, 3, seed ^ 3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let a = model.predict(&refs).unwrap();
        let b = flipped.predict(&refs).unwrap();
        for (x, y) in a.concat().iter().zip(b.concat()) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }
}
