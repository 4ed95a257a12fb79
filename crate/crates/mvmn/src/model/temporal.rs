//! Time-series matching: a shared LSTM over time-bin embeddings, the
//! elementwise matching of the two final states, and the recurrent point
//! process likelihood over real inter-event gaps.

use crate::autodiff::{ParamId, Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::types::{Real, Trajectory};

/// One user's temporal input: the bin ids feeding the embedding table and
/// the real event times (hours) feeding the likelihood gaps.
#[derive(Debug, Clone)]
pub struct TimeSeriesInput {
    pub bins: Vec<usize>,
    pub hours: Vec<Real>,
}

impl TimeSeriesInput {
    pub fn new(bins: Vec<usize>, hours: Vec<Real>) -> Result<Self> {
        if bins.len() != hours.len() {
            return Err(Error::Invalid(format!(
                "time series lengths differ: {} bins vs {} times",
                bins.len(),
                hours.len()
            )));
        }
        if hours.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("event times must be non-decreasing".into()));
        }
        Ok(TimeSeriesInput { bins, hours })
    }

    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Self::new(traj.time_bins(), traj.hours())
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Handles to the shared LSTM weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

/// Handles to the point-process parameters.
#[derive(Debug, Clone, Copy)]
pub struct PpIds {
    pub v: ParamId,
    pub omega: ParamId,
    pub b: ParamId,
}

/// Runs the LSTM over the series from a zero state and returns the hidden
/// state after every step. Both users of a pair share the same weights.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    time_emb: ParamId,
    lstm: LstmIds,
    series: &TimeSeriesInput,
) -> Result<Vec<ValueId>> {
    if series.is_empty() {
        return Err(Error::Invalid("cannot encode an empty series".into()));
    }
    let hidden = store.value(lstm.w_h).cols();
    let w_x = store.leaf(tape, lstm.w_x);
    let w_h = store.leaf(tape, lstm.w_h);
    let bias = store.leaf(tape, lstm.bias);
    let embeds = store.lookup(tape, time_emb, &series.bins);

    let mut h_prev = tape.constant(Tensor::zeros(&[hidden]));
    let mut c_prev = tape.constant(Tensor::zeros(&[hidden]));
    let mut states = Vec::with_capacity(series.len());
    for step in 0..series.len() {
        let x = tape.row(embeds, step)?;
        let hc = tape.lstm_cell(x, h_prev, c_prev, w_x, w_h, bias)?;
        h_prev = tape.slice1d(hc, 0, hidden)?;
        c_prev = tape.slice1d(hc, hidden, hidden)?;
        states.push(h_prev);
    }
    Ok(states)
}

/// Elementwise matching of the two final hidden states: `tanh(h_m . h_n)`
/// entrywise; symmetric in its arguments and bounded to [-1, 1].
pub fn v_time(tape: &mut Tape, h_m: ValueId, h_n: ValueId) -> Result<ValueId> {
    let prod = tape.hadamard(h_m, h_n)?;
    Ok(tape.tanh(prod))
}

/// Negative joint log-likelihood of both users' gap sequences: the i-th term
/// scores the gap to event i+1 under the intensity conditioned on state i.
/// Length-1 sequences contribute nothing.
pub fn pp_loss(
    tape: &mut Tape,
    store: &ParamStore,
    pp: PpIds,
    states_m: &[ValueId],
    hours_m: &[Real],
    states_n: &[ValueId],
    hours_n: &[Real],
) -> Result<ValueId> {
    let v = store.leaf(tape, pp.v);
    let omega = store.leaf(tape, pp.omega);
    let b = store.leaf(tape, pp.b);

    let mut terms = Vec::new();
    for (states, hours) in [(states_m, hours_m), (states_n, hours_n)] {
        debug_assert_eq!(states.len(), hours.len());
        for i in 0..states.len().saturating_sub(1) {
            let dt = hours[i + 1] - hours[i];
            if dt < 0.0 {
                return Err(Error::Invalid(format!("negative inter-event gap {dt}")));
            }
            terms.push(tape.log_density(states[i], v, omega, b, dt)?);
        }
    }
    if terms.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, -1.0))
}

/// Numeric oracle for the conditional density: `lambda(dt) * exp(-I)` where
/// the compensator `I = integral of the intensity over [0, dt]` is computed
/// by adaptive Simpson quadrature, independent of the closed form.
pub fn density_by_quadrature(a: Real, omega: Real, dt: Real) -> Real {
    let lam = |s: Real| (a + omega * s).exp();
    let integral = adaptive_simpson(&lam, 0.0, dt, 1e-12, 40);
    lam(dt) * (-integral).exp()
}

/// Adaptive Simpson integration with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(Real) -> Real, a: Real, b: Real, tol: Real, depth: u32) -> Real {
    fn simpson(f: &dyn Fn(Real) -> Real, a: Real, b: Real) -> Real {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn rec(
        f: &dyn Fn(Real) -> Real,
        a: Real,
        b: Real,
        whole: Real,
        tol: Real,
        depth: u32,
    ) -> Real {
        let m = (a + b) / 2.0;
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, left, tol / 2.0, depth - 1) + rec(f, m, b, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, simpson(f, a, b), tol, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::log_density_forward;
    use crate::autodiff::GradStore;
    use crate::model::{init_params, tests::small_config};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_rejects_empty_series() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init_params(&cfg, 3, 3, &mut rng);
        let lstm = LstmIds {
            w_x: params.ids.lstm_w_x,
            w_h: params.ids.lstm_w_h,
            bias: params.ids.lstm_bias,
        };
        let mut tape = Tape::new();
        let series = TimeSeriesInput::new(vec![], vec![]).unwrap();
        assert!(encode(&mut tape, &params.store, params.ids.time_emb, lstm, &series).is_err());
    }

    #[test]
    fn length_one_series_is_a_single_cell_application() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_params(&cfg, 3, 3, &mut rng);
        let lstm = LstmIds {
            w_x: params.ids.lstm_w_x,
            w_h: params.ids.lstm_w_h,
            bias: params.ids.lstm_bias,
        };
        let series = TimeSeriesInput::new(vec![5], vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let states =
            encode(&mut tape, &params.store, params.ids.time_emb, lstm, &series).unwrap();
        assert_eq!(states.len(), 1);

        // one manual cell application from zero state
        let mut tape2 = Tape::new();
        let w_x = params.store.leaf(&mut tape2, lstm.w_x);
        let w_h = params.store.leaf(&mut tape2, lstm.w_h);
        let bias = params.store.leaf(&mut tape2, lstm.bias);
        let x = tape2.constant(Tensor::vector(
            params.store.value(params.ids.time_emb).row(5).to_vec(),
        ));
        let h0 = tape2.constant(Tensor::zeros(&[cfg.hidden_dim]));
        let c0 = tape2.constant(Tensor::zeros(&[cfg.hidden_dim]));
        let hc = tape2.lstm_cell(x, h0, c0, w_x, w_h, bias).unwrap();
        let h = tape2.slice1d(hc, 0, cfg.hidden_dim).unwrap();
        assert_eq!(tape.value(states[0]).data(), tape2.value(h).data());
    }

    /// The recurrence matches an independent scalar re-implementation of the
    /// LSTM on a random length-5 series.
    #[test]
    fn encode_matches_scalar_unroll() {
        let cfg = small_config();
        let (d, hd) = (cfg.embed_dim, cfg.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = init_params(&cfg, 3, 3, &mut rng);
        let lstm = LstmIds {
            w_x: params.ids.lstm_w_x,
            w_h: params.ids.lstm_w_h,
            bias: params.ids.lstm_bias,
        };
        let series = TimeSeriesInput::new(vec![0, 7, 3, 7, 21], vec![0.0, 0.5, 0.9, 4.0, 9.5])
            .unwrap();
        let mut tape = Tape::new();
        let states =
            encode(&mut tape, &params.store, params.ids.time_emb, lstm, &series).unwrap();

        let sig = |x: Real| 1.0 / (1.0 + (-x).exp());
        let w_x = params.store.value(lstm.w_x);
        let w_h = params.store.value(lstm.w_h);
        let bias = params.store.value(lstm.bias);
        let emb = params.store.value(params.ids.time_emb);
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for (step, &bin) in series.bins.iter().enumerate() {
            let x = emb.row(bin);
            let mut pre = vec![0.0; 4 * hd];
            for (r, p) in pre.iter_mut().enumerate() {
                let mut acc = bias.data()[r];
                for j in 0..d {
                    acc += w_x.data()[r * d + j] * x[j];
                }
                for j in 0..hd {
                    acc += w_h.data()[r * hd + j] * h[j];
                }
                *p = acc;
            }
            for k in 0..hd {
                let i = sig(pre[k]);
                let f = sig(pre[hd + k]);
                let g = pre[2 * hd + k].tanh();
                let o = sig(pre[3 * hd + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            for (a, b) in tape.value(states[step]).data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-12, "state {step}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn v_time_examples() {
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[4]));
        let ones = tape.constant(Tensor::vector(vec![1.0; 4]));
        let z = v_time(&mut tape, zero, ones).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
        let t = v_time(&mut tape, ones, ones).unwrap();
        for &v in tape.value(t).data() {
            assert!((v - 0.761_594_155_955_764_9).abs() < 1e-12);
        }
        // symmetry
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a0: Vec<Real> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b0: Vec<Real> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = tape.constant(Tensor::vector(a0));
        let b = tape.constant(Tensor::vector(b0));
        let ab = v_time(&mut tape, a, b).unwrap();
        let ba = v_time(&mut tape, b, a).unwrap();
        assert_eq!(tape.value(ab).data(), tape.value(ba).data());
    }

    #[test]
    fn intensity_examples() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let v = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let b0 = tape.constant(Tensor::scalar(0.0));
        let om = tape.constant(Tensor::scalar(0.7));
        let lam = tape.intensity(h, v, om, b0, 0.0).unwrap();
        assert_eq!(tape.value(lam).item(), 1.0);

        // v.h = 0.5, omega = 0.1, b = -0.2, dt = 2 -> exp(0.5)
        let h2 = tape.constant(Tensor::vector(vec![0.5, 0.0]));
        let v2 = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let om2 = tape.constant(Tensor::scalar(0.1));
        let b2 = tape.constant(Tensor::scalar(-0.2));
        let lam2 = tape.intensity(h2, v2, om2, b2, 2.0).unwrap();
        assert!((tape.value(lam2).item() - (0.5 as Real).exp()).abs() < 1e-12);
    }

    #[test]
    fn intensity_monotone_in_dt_for_positive_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Real = rng.gen_range(-2.0..2.0);
            let om: Real = rng.gen_range(0.01..2.0);
            let (d1, d2) = (rng.gen_range(0.0..5.0), rng.gen_range(5.0..10.0));
            let lam = |dt: Real| (a + om * dt).exp();
            assert!(lam(d2) > lam(d1));
        }
    }

    #[test]
    fn log_density_examples() {
        // v.h = 0, b = 0, omega = 1, dt = 1 -> 2 - e
        let got = log_density_forward(0.0, 1.0, 1.0);
        let want = 2.0 - std::f64::consts::E as Real;
        assert!((got - want).abs() < 1e-12);
        // dt = 0 -> density equals intensity at the left endpoint
        assert!((log_density_forward(0.37, 0.9, 0.0) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_quadrature_on_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..100 {
            let a: Real = rng.gen_range(-1.5..1.5);
            let omega: Real = if trial % 5 == 0 {
                rng.gen_range(-1e-7..1e-7)
            } else {
                rng.gen_range(-2.0..2.0)
            };
            let dt: Real = rng.gen_range(0.0..4.0);
            let analytic = log_density_forward(a, omega, dt);
            let numeric = density_by_quadrature(a, omega, dt).ln();
            assert!(
                (analytic - numeric).abs() < 1e-6,
                "a={a} omega={omega} dt={dt}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn density_integrates_to_one_for_positive_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: Real = rng.gen_range(-1.0..1.0);
            let omega: Real = rng.gen_range(0.05..2.0);
            // integrate f(s) until the compensator kills the tail
            let f = |s: Real| {
                let lam = (a + omega * s).exp();
                let compensator = (a.exp() / omega) * ((omega * s).exp() - 1.0);
                lam * (-compensator).exp()
            };
            let mut upper = 1.0;
            while (a.exp() / omega) * ((omega * upper).exp() - 1.0) < 40.0 {
                upper *= 2.0;
            }
            let mass = adaptive_simpson(&f, 0.0, upper, 1e-10, 40);
            assert!(
                (mass - 1.0).abs() < 1e-3,
                "a={a} omega={omega}: mass {mass}"
            );
        }
    }

    #[test]
    fn negative_omega_gives_defective_distribution() {
        // CDF is monotone and bounded strictly below 1.
        let (a, omega) = (0.2, -0.8);
        let f = |s: Real| {
            let lam = (a + omega * s).exp();
            let compensator = (a.exp() / omega) * ((omega * s).exp() - 1.0);
            lam * (-compensator).exp()
        };
        let mut prev = 0.0;
        for k in 1..=20 {
            let upper = k as Real * 2.0;
            let c = adaptive_simpson(&f, 0.0, upper, 1e-10, 40);
            assert!(c + 1e-9 >= prev, "CDF must be monotone");
            assert!(c < 1.0, "defective distribution stays below 1");
            prev = c;
        }
    }

    #[test]
    fn pp_loss_examples() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = init_params(&cfg, 3, 3, &mut rng);
        // force v = 0, b = 0, omega = 1 so a = 0 and one unit gap gives e - 2
        params.store.value_mut(params.ids.pp_v).fill(0.0);
        params.store.value_mut(params.ids.pp_omega).fill(1.0);
        params.store.value_mut(params.ids.pp_b).fill(0.0);
        let pp = PpIds {
            v: params.ids.pp_v,
            omega: params.ids.pp_omega,
            b: params.ids.pp_b,
        };

        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
        // both sequences length 1: empty sums
        let zero = pp_loss(&mut tape, &params.store, pp, &[h], &[0.0], &[h], &[5.0]).unwrap();
        assert_eq!(tape.value(zero).item(), 0.0);

        // one unit gap on the first user
        let one = pp_loss(
            &mut tape,
            &params.store,
            pp,
            &[h, h],
            &[0.0, 1.0],
            &[h],
            &[0.0],
        )
        .unwrap();
        let want = std::f64::consts::E as Real - 2.0;
        assert!((tape.value(one).item() - want).abs() < 1e-12);

        // doubling by an identical independent pair doubles the loss
        let two = pp_loss(
            &mut tape,
            &params.store,
            pp,
            &[h, h],
            &[0.0, 1.0],
            &[h, h],
            &[0.0, 1.0],
        )
        .unwrap();
        assert!((tape.value(two).item() - 2.0 * want).abs() < 1e-12);
    }

    #[test]
    fn pp_loss_rejects_negative_gaps() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = init_params(&cfg, 3, 3, &mut rng);
        let pp = PpIds {
            v: params.ids.pp_v,
            omega: params.ids.pp_omega,
            b: params.ids.pp_b,
        };
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
        assert!(
            pp_loss(&mut tape, &params.store, pp, &[h, h], &[3.0, 1.0], &[h], &[0.0]).is_err()
        );
    }

    /// Gradients of the point-process loss w.r.t. v, omega, b and the hidden
    /// state match central finite differences on both omega branches.
    #[test]
    fn log_density_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &omega0 in &[0.9, -0.7, 1e-9] {
            let hvec: Vec<Real> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let vvec: Vec<Real> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let b0: Real = rng.gen_range(-0.5..0.5);
            let dt: Real = rng.gen_range(0.1..3.0);

            let run = |hv: &[Real], vv: &[Real], om: Real, bb: Real| -> (Real, Vec<Real>) {
                let mut tape = Tape::new();
                let h = tape.var(Tensor::vector(hv.to_vec()));
                let v = tape.var(Tensor::vector(vv.to_vec()));
                let omn = tape.var(Tensor::scalar(om));
                let bn = tape.var(Tensor::scalar(bb));
                let ld = tape.log_density(h, v, omn, bn, dt).unwrap();
                let val = tape.value(ld).item();
                let mut gs = GradStore::from_shapes(&[]);
                let vg = tape.backward(ld, &mut gs).unwrap();
                let mut flat = vec![];
                flat.extend_from_slice(vg.get(h).unwrap().data());
                flat.extend_from_slice(vg.get(v).unwrap().data());
                flat.push(vg.get(omn).unwrap().item());
                flat.push(vg.get(bn).unwrap().item());
                (val, flat)
            };
            let (_, analytic) = run(&hvec, &vvec, omega0, b0);

            let fd_h = 1e-5;
            let check = |idx: usize, plus: Real, minus: Real, label: &str| {
                let fd = (plus - minus) / (2.0 * fd_h);
                let an = analytic[idx];
                let denom = (an.abs() + fd.abs()).max(1e-6);
                // the omega->0 branch approximates the derivative to O(omega)
                let tol = if omega0.abs() < 1e-6 { 1e-4 } else { 1e-6 };
                assert!(
                    (an - fd).abs() / denom < tol,
                    "{label}[{idx}]: {an} vs {fd} at omega={omega0}"
                );
            };
            for c in 0..hvec.len() {
                let mut hp = hvec.clone();
                hp[c] += fd_h;
                let mut hm = hvec.clone();
                hm[c] -= fd_h;
                check(
                    c,
                    run(&hp, &vvec, omega0, b0).0,
                    run(&hm, &vvec, omega0, b0).0,
                    "h",
                );
            }
            for c in 0..vvec.len() {
                let mut vp = vvec.clone();
                vp[c] += fd_h;
                let mut vm = vvec.clone();
                vm[c] -= fd_h;
                check(
                    hvec.len() + c,
                    run(&hvec, &vp, omega0, b0).0,
                    run(&hvec, &vm, omega0, b0).0,
                    "v",
                );
            }
            // skip omega FD across the branch boundary; within-branch only
            if omega0.abs() > 1e-6 {
                check(
                    hvec.len() + vvec.len(),
                    run(&hvec, &vvec, omega0 + fd_h, b0).0,
                    run(&hvec, &vvec, omega0 - fd_h, b0).0,
                    "omega",
                );
            }
            check(
                hvec.len() + vvec.len() + 1,
                run(&hvec, &vvec, omega0, b0 + fd_h).0,
                run(&hvec, &vvec, omega0, b0 - fd_h).0,
                "b",
            );
        }
    }
}
