//! Reverse accumulation over the jet recurrences: given the adjoint of the
//! loss with respect to every output jet component at one point, accumulate
//! the adjoint with respect to the parameters.

use super::forward::{JetTape, D2_PAIRS};
use super::{Activation, Jet2, NetworkSpec, OutputName, ParamVector};

#[inline]
fn dot7(a: &Jet2, b: &Jet2) -> f64 {
    let mut s = a.value * b.value;
    for k in 0..3 {
        s += a.d1[k] * b.d1[k];
    }
    for k in 0..3 {
        s += a.d2[k] * b.d2[k];
    }
    s
}

/// Adjoint of the activation recurrence at one neuron. `z` is the stored
/// pre-activation jet, `abar` the adjoint of the activated jet.
#[inline]
fn activation_adjoint(act: Activation, z: &Jet2, abar: &Jet2) -> Jet2 {
    let (_s, sp, spp, sppp) = act.eval3(z.value);
    let mut zbar = Jet2::ZERO;
    for m in 0..3 {
        zbar.d2[m] = sp * abar.d2[m];
    }
    for k in 0..3 {
        zbar.d1[k] = sp * abar.d1[k];
    }
    // d2_m = spp * z.d1[j] z.d1[k] + sp * z.d2[m] contributes to the d1 adjoints
    zbar.d1[0] += 2.0 * spp * z.d1[0] * abar.d2[0];
    zbar.d1[0] += spp * z.d1[1] * abar.d2[1];
    zbar.d1[1] += spp * z.d1[0] * abar.d2[1];
    zbar.d1[1] += 2.0 * spp * z.d1[1] * abar.d2[2];
    // everything depends on z.value through sp and spp
    let mut v = sp * abar.value;
    for k in 0..3 {
        v += spp * z.d1[k] * abar.d1[k];
    }
    for (m, &(j, k)) in D2_PAIRS.iter().enumerate() {
        v += (sppp * z.d1[j] * z.d1[k] + spp * z.d2[m]) * abar.d2[m];
    }
    zbar.value = v;
    zbar
}

/// Backpropagate output-jet adjoints through the tape, adding the parameter
/// gradient into `grad` (which must have `spec.n_params()` entries).
pub fn backward_jet(
    spec: &NetworkSpec,
    params: &ParamVector,
    tape: &JetTape,
    out_adjoints: &[Jet2],
    grad: &mut [f64],
) {
    debug_assert_eq!(out_adjoints.len(), spec.n_outputs());
    debug_assert_eq!(grad.len(), spec.n_params());
    let n_layers = spec.n_layers();

    // adjoint of the final pre-activation jets
    let mut zbar: Vec<Jet2> = if spec.clamp_phi {
        let idx = spec.output_index(OutputName::Phi).expect("validated spec");
        let z_last = &tape.pre[n_layers - 1];
        out_adjoints
            .iter()
            .enumerate()
            .map(|(i, abar)| {
                if i == idx {
                    activation_adjoint(Activation::Tanh, &z_last[i], abar)
                } else {
                    *abar
                }
            })
            .collect()
    } else {
        out_adjoints.to_vec()
    };

    for l in (0..n_layers).rev() {
        let (w, _b, rows, cols) = params.layer(spec, l);
        let (w_off, b_off, _, _) = spec.layer_offsets(l);
        let a_prev: &[Jet2] = if l == 0 {
            &tape.inputs
        } else {
            &tape.post[l - 1]
        };

        let mut abar_prev = vec![Jet2::ZERO; cols];
        for i in 0..rows {
            let zb = &zbar[i];
            grad[b_off + i] += zb.value;
            let row = &w[i * cols..(i + 1) * cols];
            for j in 0..cols {
                grad[w_off + i * cols + j] += dot7(zb, &a_prev[j]);
                let ab = &mut abar_prev[j];
                let wij = row[j];
                ab.value += wij * zb.value;
                for k in 0..3 {
                    ab.d1[k] += wij * zb.d1[k];
                }
                for k in 0..3 {
                    ab.d2[k] += wij * zb.d2[k];
                }
            }
        }

        if l == 0 {
            break;
        }
        // pull the previous layer's adjoint back through its activation
        let z_prev = &tape.pre[l - 1];
        zbar = z_prev
            .iter()
            .zip(&abar_prev)
            .map(|(z, abar)| activation_adjoint(spec.activation, z, abar))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fd, forward_jet_tape, init_params, NetworkSpec, OutputName};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar probe: loss = sum over outputs of <c_out, jet_out> with fixed
    /// random coefficient jets, so the FD check exercises every jet slot.
    fn probe_loss(
        spec: &NetworkSpec,
        values: &[f64],
        point: [f64; 3],
        coeffs: &[Jet2],
    ) -> f64 {
        let params = super::super::ParamVector::from_values(spec, values.to_vec()).unwrap();
        let jets = super::super::forward_jet(spec, &params, point).unwrap();
        jets.iter().zip(coeffs).map(|(j, c)| dot7(j, c)).sum()
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let spec = fd::random_spec(&mut rng);
            let params = init_params(&spec, 500 + trial);
            let point = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.1..2.0),
            ];
            let coeffs: Vec<Jet2> = (0..spec.n_outputs())
                .map(|_| {
                    let mut c = Jet2::ZERO;
                    c.value = rng.gen_range(-1.0..1.0);
                    for k in 0..3 {
                        c.d1[k] = rng.gen_range(-1.0..1.0);
                        c.d2[k] = rng.gen_range(-1.0..1.0);
                    }
                    c
                })
                .collect();

            let (_, tape) = forward_jet_tape(&spec, &params, point).unwrap();
            let mut grad = vec![0.0; spec.n_params()];
            backward_jet(&spec, &params, &tape, &coeffs, &mut grad);

            let fd_grad = fd::grad_central(
                |v| probe_loss(&spec, v, point, &coeffs),
                params.values(),
                1e-5,
            );
            for (i, (g, f)) in grad.iter().zip(&fd_grad).enumerate() {
                let scale = f.abs().max(1.0);
                assert!(
                    (g - f).abs() / scale < 1e-6,
                    "trial {trial} param {i}: analytic {g:.6e} vs fd {f:.6e}"
                );
            }
        }
    }

    #[test]
    fn clamped_phi_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = NetworkSpec::new(
            vec![3, 6, 3],
            vec![OutputName::U1, OutputName::Phi, OutputName::Mu],
            true,
        )
        .unwrap();
        let params = init_params(&spec, 77);
        let point = [0.3, 0.6, 1.2];
        let coeffs: Vec<Jet2> = (0..3)
            .map(|_| {
                let mut c = Jet2::ZERO;
                c.value = rng.gen_range(-1.0..1.0);
                for k in 0..3 {
                    c.d1[k] = rng.gen_range(-1.0..1.0);
                    c.d2[k] = rng.gen_range(-1.0..1.0);
                }
                c
            })
            .collect();
        let (_, tape) = forward_jet_tape(&spec, &params, point).unwrap();
        let mut grad = vec![0.0; spec.n_params()];
        backward_jet(&spec, &params, &tape, &coeffs, &mut grad);
        let fd_grad = fd::grad_central(
            |v| probe_loss(&spec, v, point, &coeffs),
            params.values(),
            1e-5,
        );
        for (g, f) in grad.iter().zip(&fd_grad) {
            assert!((g - f).abs() / f.abs().max(1.0) < 1e-6);
        }
    }
}
