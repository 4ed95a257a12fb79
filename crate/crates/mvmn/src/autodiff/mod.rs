//! Minimal dense reverse-mode differentiation: tensors, the recording tape,
//! and the Adam optimizer. Everything upstream expresses its math in these
//! kernels.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{GradStore, ParamId, Tape, ValueId, EXP_CLAMP, OMEGA_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod lstm_tests {
    use super::*;
    use crate::types::Real;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn zero_weights(tape: &mut Tape, d: usize, h: usize) -> (ValueId, ValueId, ValueId) {
        let w_x = tape.var(Tensor::zeros(&[4 * h, d]));
        let w_h = tape.var(Tensor::zeros(&[4 * h, h]));
        let bias = tape.var(Tensor::zeros(&[4 * h]));
        (w_x, w_h, bias)
    }

    #[test]
    fn zero_weights_and_states_give_zero_hidden() {
        let (d, h) = (3, 4);
        let mut tape = Tape::new();
        let (w_x, w_h, bias) = zero_weights(&mut tape, d, h);
        let x = tape.constant(Tensor::vector(vec![0.5, -0.25, 1.0]));
        let h0 = tape.constant(Tensor::zeros(&[h]));
        let c0 = tape.constant(Tensor::zeros(&[h]));
        let hc = tape.lstm_cell(x, h0, c0, w_x, w_h, bias).unwrap();
        let out = tape.value(hc).data();
        assert!(out[..h].iter().all(|&v| v == 0.0), "h must be zero");
    }

    #[test]
    fn saturated_forget_gate_copies_cell_state() {
        let (d, h) = (2, 3);
        let mut tape = Tape::new();
        let w_x = tape.constant(Tensor::zeros(&[4 * h, d]));
        let w_h = tape.constant(Tensor::zeros(&[4 * h, h]));
        // bias: input gate hard off, forget gate hard on.
        let mut b = vec![0.0; 4 * h];
        for k in 0..h {
            b[k] = -500.0; // input gate
            b[h + k] = 500.0; // forget gate
        }
        let bias = tape.constant(Tensor::vector(b));
        let x = tape.constant(Tensor::vector(vec![1.0, -1.0]));
        let h0 = tape.constant(Tensor::zeros(&[h]));
        let c_prev = Tensor::vector(vec![0.3, -0.7, 1.2]);
        let c0 = tape.constant(c_prev.clone());
        let hc = tape.lstm_cell(x, h0, c0, w_x, w_h, bias).unwrap();
        let c_new = &tape.value(hc).data()[h..];
        for (a, b) in c_new.iter().zip(c_prev.data()) {
            assert!((a - b).abs() < 1e-9, "c {a} vs c_prev {b}");
        }
    }

    /// Gradients of a scalar loss through a length-5 sequence match central
    /// finite differences for every weight.
    #[test]
    fn sequence_gradients_match_finite_differences() {
        let (d, h, steps) = (3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut mk = |n: usize| -> Tensor {
            Tensor::vector((0..n).map(|_| rng.gen_range(-0.8..0.8)).collect())
        };
        let xs: Vec<Tensor> = (0..steps).map(|_| mk(d)).collect();
        let w_x0 = Tensor::matrix(4 * h, d, mk(4 * h * d).data().to_vec());
        let w_h0 = Tensor::matrix(4 * h, h, mk(4 * h * h).data().to_vec());
        let b0 = mk(4 * h);

        let loss_of = |w_x0: &Tensor, w_h0: &Tensor, b0: &Tensor| -> (Real, Option<Vec<Tensor>>) {
            let mut tape = Tape::new();
            let w_x = tape.var(w_x0.clone());
            let w_h = tape.var(w_h0.clone());
            let bias = tape.var(b0.clone());
            let mut hprev = tape.constant(Tensor::zeros(&[h]));
            let mut cprev = tape.constant(Tensor::zeros(&[h]));
            for x0 in &xs {
                let x = tape.constant(x0.clone());
                let hc = tape.lstm_cell(x, hprev, cprev, w_x, w_h, bias).unwrap();
                hprev = tape.slice1d(hc, 0, h).unwrap();
                cprev = tape.slice1d(hc, h, h).unwrap();
            }
            let sq = tape.hadamard(hprev, hprev).unwrap();
            let loss = tape.sum(sq);
            let val = tape.value(loss).item();
            let mut gs = GradStore::from_shapes(&[]);
            let vg = tape.backward(loss, &mut gs).unwrap();
            let grads = vec![
                vg.get(w_x).unwrap().clone(),
                vg.get(w_h).unwrap().clone(),
                vg.get(bias).unwrap().clone(),
            ];
            (val, Some(grads))
        };

        let (_, grads) = loss_of(&w_x0, &w_h0, &b0);
        let grads = grads.unwrap();
        let tensors = [w_x0.clone(), w_h0.clone(), b0.clone()];
        let fd_h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (ti, t0) in tensors.iter().enumerate() {
            // sample coordinates to keep the test quick
            for _ in 0..20 {
                let c = rng.gen_range(0..t0.len());
                let eval = |delta: Real| -> Real {
                    let mut ts = tensors.clone();
                    ts[ti].data_mut()[c] += delta;
                    loss_of(&ts[0], &ts[1], &ts[2]).0
                };
                let fd = (eval(fd_h) - eval(-fd_h)) / (2.0 * fd_h);
                let an = grads[ti].data()[c];
                let denom = (an.abs() + fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-5,
                    "tensor {ti} coord {c}: analytic {an} vs fd {fd}"
                );
            }
        }
    }
}
