use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turntake::features::{FrameFeatureMatrix, InputLayout, Segment, TokenStream};
use turntake::nn::gradcheck::{default_check, tiny_problem};
use turntake::nn::{
    backward_and_step, loss, loss_and_gradients, Adam, LossKind, ModelParams, TargetWindow,
    TrainingObjective,
};
use turntake::{Error, WINDOW};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Step-by-step LSTM written from the textbook equations, one scalar at a time.
fn scalar_oracle(p: &ModelParams, x: &FrameFeatureMatrix) -> Vec<[f64; WINDOW]> {
    let h_n = p.hidden();
    let wi = &p.lstm_input_weights;
    let wh = &p.lstm_recurrent_weights;
    let mut h = vec![0.0; h_n];
    let mut c = vec![0.0; h_n];
    let mut out = Vec::new();
    for t in 0..x.n_frames() {
        // input vector: walk the layout, expanding token ids to embedding rows
        let mut input = Vec::new();
        let (mut d, mut k) = (0, 0);
        for seg in &x.layout().segments {
            match seg {
                Segment::Dense { width } => {
                    for _ in 0..*width {
                        input.push(x.dense_row(t)[d]);
                        d += 1;
                    }
                }
                Segment::Token { stream } => {
                    let id = x.token_row(t)[k] as usize;
                    k += 1;
                    let table = p.embedding(*stream).unwrap();
                    for j in 0..table.cols() {
                        input.push(table.get(id, j));
                    }
                }
            }
        }
        let pre = |gate: usize, j: usize, h: &[f64]| {
            let row = gate * h_n + j;
            let mut z = p.lstm_biases[row];
            for (m, xv) in input.iter().enumerate() {
                z += wi.get(row, m) * xv;
            }
            for (m, hv) in h.iter().enumerate() {
                z += wh.get(row, m) * hv;
            }
            z
        };
        let mut new_h = vec![0.0; h_n];
        let mut new_c = vec![0.0; h_n];
        for j in 0..h_n {
            let i = logistic(pre(0, j, &h));
            let f = logistic(pre(1, j, &h));
            let g = pre(2, j, &h).tanh();
            let o = logistic(pre(3, j, &h));
            new_c[j] = f * c[j] + i * g;
            new_h[j] = o * new_c[j].tanh();
        }
        h = new_h;
        c = new_c;
        let mut probs = [0.0; WINDOW];
        for (k, pk) in probs.iter_mut().enumerate() {
            let mut z = p.output_biases[k];
            for j in 0..h_n {
                z += p.output_weights.get(k, j) * h[j];
            }
            *pk = logistic(z);
        }
        out.push(probs);
    }
    out
}

#[test]
fn forward_matches_scalar_oracle() {
    let (params, inputs, _) = tiny_problem(4, 5, 31).unwrap();
    let (windows, _) = params.forward(&inputs, None).unwrap();
    let oracle = scalar_oracle(&params, &inputs);
    assert_eq!(windows.len(), 5);
    for (w, o) in windows.iter().zip(&oracle) {
        for (a, b) in w.probs.iter().zip(o) {
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
        }
    }
}

#[test]
fn streaming_matches_single_call() {
    let layout = InputLayout::new(vec![
        Segment::Dense { width: 3 },
        Segment::Token { stream: TokenStream::Pos },
    ]);
    let params = ModelParams::random(layout.clone(), 6, 4, 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dense = (0..300).map(|_| rng.random_range(-2.0..2.0)).collect();
    let tokens = (0..100).map(|_| rng.random_range(0..60)).collect();
    let x = FrameFeatureMatrix::new(layout, 100, dense, tokens).unwrap();

    let (whole, end_whole) = params.forward(&x, None).unwrap();
    let (first, mid) = params.forward(&x.slice(0..50), None).unwrap();
    let (second, end) = params.forward(&x.slice(50..100), Some(&mid)).unwrap();
    for (a, b) in whole.iter().zip(first.iter().chain(&second)) {
        assert_eq!(a.emitted_at_frame, b.emitted_at_frame);
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() <= 1e-12);
        }
    }
    assert_eq!(end.next_frame, 100);
    for (a, b) in end.hidden.iter().zip(&end_whole.hidden) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for kind in [LossKind::Bce, LossKind::Mae] {
        let report = default_check(kind).unwrap();
        assert_eq!(report.blocks.len(), 7);
        assert!(report.passes(1e-4), "{kind:?}: {report:?}");
    }
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let (mut params, inputs, targets) = tiny_problem(3, 6, 5).unwrap();
    let before = params.clone();
    let objective = TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.001 };
    let mut adam = Adam::new(&params, 0.0);
    backward_and_step(&mut params, &inputs, &targets, &objective, &mut adam, None).unwrap();
    assert_eq!(params, before);
}

#[test]
fn memorization_loss_decreases() {
    let layout = InputLayout::new(vec![Segment::Dense { width: 2 }]);
    let mut params = ModelParams::init(layout.clone(), 8, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dense = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = FrameFeatureMatrix::new(layout, 10, dense, vec![]).unwrap();
    let targets: Vec<TargetWindow> = (0..10)
        .map(|_| TargetWindow {
            values: std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }),
            tail: false,
        })
        .collect();
    let objective = TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.0001 };
    let initial = loss(&params.forward(&x, None).unwrap().0, &targets, &objective, &params).unwrap();
    let mut adam = Adam::new(&params, 0.01);
    for _ in 0..200 {
        backward_and_step(&mut params, &x, &targets, &objective, &mut adam, None).unwrap();
    }
    let trained = loss(&params.forward(&x, None).unwrap().0, &targets, &objective, &params).unwrap();
    assert!(trained < initial, "{trained} !< {initial}");
}

#[test]
fn embedding_gradient_touches_only_used_rows() {
    let layout = InputLayout::new(vec![Segment::Token { stream: TokenStream::Words }]);
    let mut params = ModelParams::init(layout.clone(), 4, 21).unwrap();
    let before = params.embedding(TokenStream::Words).unwrap().clone();
    let x = FrameFeatureMatrix::new(layout, 8, vec![], vec![7; 8]).unwrap();
    let targets = vec![TargetWindow { values: [1.0; WINDOW], tail: false }; 8];
    let objective = TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.001 };
    let mut adam = Adam::new(&params, 0.05);
    backward_and_step(&mut params, &x, &targets, &objective, &mut adam, None).unwrap();
    let after = params.embedding(TokenStream::Words).unwrap();
    for r in 0..after.rows() {
        let changed = after.row(r) != before.row(r);
        assert_eq!(changed, r == 7, "row {r}");
    }
}

#[test]
fn non_finite_gradient_names_the_block() {
    let layout = InputLayout::new(vec![Segment::Dense { width: 2 }]);
    let params = ModelParams::init(layout.clone(), 3, 1).unwrap();
    let x = FrameFeatureMatrix::new(layout, 2, vec![0.5, f64::NAN, 0.1, 0.2], vec![]).unwrap();
    let targets = vec![TargetWindow { values: [0.0; WINDOW], tail: false }; 2];
    let objective = TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.0 };
    let mut grads = params.zeros_like();
    let err = loss_and_gradients(&params, &x, &targets, &objective, None, &mut grads).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)));
    assert!(err.to_string().contains("lstm_"), "{err}");
}
