//! Forward jet propagation through the layer recurrences.
//!
//! For an affine layer z = A a + b every jet component maps linearly.
//! For an activation a = act(z), elementwise:
//!   value   = act(z)
//!   d1_k    = act'(z) z.d1_k
//!   d2_jk   = act''(z) z.d1_j z.d1_k + act'(z) z.d2_jk
//! where (j,k) runs over the spatial pairs (x1,x1), (x1,x2), (x2,x2).

use super::{Jet2, NetworkSpec, OutputName, ParamVector};
use crate::error::Result;

/// Everything the backward pass needs: input jets and, per layer, the
/// pre-activation jets `z` and post-activation jets `a` (for the final
/// layer `a == z` except for an optional clamp on the phi output).
pub struct JetTape {
    pub(super) inputs: Vec<Jet2>,
    pub(super) pre: Vec<Vec<Jet2>>,
    pub(super) post: Vec<Vec<Jet2>>,
}

#[inline]
fn seed_jets(point: [f64; 3]) -> Vec<Jet2> {
    let mut seeds = Vec::with_capacity(3);
    for i in 0..3 {
        let mut j = Jet2 {
            value: point[i],
            ..Jet2::ZERO
        };
        j.d1[i] = 1.0;
        seeds.push(j);
    }
    seeds
}

#[inline]
fn affine(w: &[f64], b: &[f64], rows: usize, cols: usize, a: &[Jet2]) -> Vec<Jet2> {
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut z = Jet2 {
            value: b[i],
            ..Jet2::ZERO
        };
        for (j, &wij) in row.iter().enumerate() {
            let aj = &a[j];
            z.value += wij * aj.value;
            for k in 0..3 {
                z.d1[k] += wij * aj.d1[k];
            }
            for k in 0..3 {
                z.d2[k] += wij * aj.d2[k];
            }
        }
        out.push(z);
    }
    out
}

/// Spatial index pairs for the three stored second derivatives.
pub(super) const D2_PAIRS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

#[inline]
pub(super) fn activate_jet(spec: &NetworkSpec, z: &Jet2) -> Jet2 {
    let (s, sp, spp, _) = spec.activation.eval3(z.value);
    jet_through(s, sp, spp, z)
}

#[inline]
pub(super) fn jet_through(s: f64, sp: f64, spp: f64, z: &Jet2) -> Jet2 {
    let mut out = Jet2 {
        value: s,
        ..Jet2::ZERO
    };
    for k in 0..3 {
        out.d1[k] = sp * z.d1[k];
    }
    for (m, &(j, k)) in D2_PAIRS.iter().enumerate() {
        out.d2[m] = spp * z.d1[j] * z.d1[k] + sp * z.d2[m];
    }
    out
}

/// Evaluate the network at `point`, returning one jet per output. The jets
/// are the exact analytic derivatives of the network function.
pub fn forward_jet(spec: &NetworkSpec, params: &ParamVector, point: [f64; 3]) -> Result<Vec<Jet2>> {
    Ok(forward_jet_tape(spec, params, point)?.0)
}

/// Like [`forward_jet`] but also returns the tape of intermediate jets
/// consumed by [`super::backward_jet`].
pub fn forward_jet_tape(
    spec: &NetworkSpec,
    params: &ParamVector,
    point: [f64; 3],
) -> Result<(Vec<Jet2>, JetTape)> {
    params.check(spec)?;
    let n_layers = spec.n_layers();
    let inputs = seed_jets(point);
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::with_capacity(n_layers);

    let mut a = inputs.clone();
    for l in 0..n_layers {
        let (w, b, rows, cols) = params.layer(spec, l);
        let z = affine(w, b, rows, cols, &a);
        let is_last = l + 1 == n_layers;
        let act: Vec<Jet2> = if is_last {
            let mut out = z.clone();
            if spec.clamp_phi {
                if let Some(idx) = spec.output_index(OutputName::Phi) {
                    let (s, sp, spp, _) = super::Activation::Tanh.eval3(z[idx].value);
                    out[idx] = jet_through(s, sp, spp, &z[idx]);
                }
            }
            out
        } else {
            z.iter().map(|zj| activate_jet(spec, zj)).collect()
        };
        pre.push(z);
        post.push(act.clone());
        a = act;
    }

    Ok((a, JetTape { inputs, pre, post }))
}

#[cfg(test)]
mod tests {
    use super::super::{fd, init_params, Activation, NetworkSpec, OutputName, ParamVector};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_affine_layer_d1_is_weight_row_and_d2_zero() {
        let spec = NetworkSpec::new(
            vec![3, 2],
            vec![OutputName::U1, OutputName::U2],
            false,
        )
        .unwrap();
        let w = vec![1.5, -2.0, 0.25, 0.0, 3.0, -1.0];
        let b = vec![0.5, -0.5];
        let params =
            ParamVector::from_values(&spec, w.iter().chain(b.iter()).copied().collect()).unwrap();
        let jets = forward_jet(&spec, &params, [0.3, -0.7, 1.1]).unwrap();
        assert_eq!(jets[0].d1, [1.5, -2.0, 0.25]);
        assert_eq!(jets[1].d1, [0.0, 3.0, -1.0]);
        assert_eq!(jets[0].d2, [0.0; 3]);
        assert_eq!(jets[1].d2, [0.0; 3]);
        let expect = 1.5 * 0.3 + (-2.0) * (-0.7) + 0.25 * 1.1 + 0.5;
        assert!((jets[0].value - expect).abs() < 1e-15);
    }

    #[test]
    fn identity_activation_network_stays_affine() {
        // With identity activation the whole net is an affine map, so the
        // jets must reproduce its first derivatives exactly and carry zero
        // second derivatives (machine-exact, not approximately).
        let mut spec = NetworkSpec::new(vec![3, 4, 2], vec![OutputName::U1, OutputName::U2], false)
            .unwrap();
        spec.activation = Activation::Identity;
        let params = init_params(&spec, 11);
        let p0 = [0.2, 0.4, 0.6];
        let jets = forward_jet(&spec, &params, p0).unwrap();
        for j in &jets {
            assert_eq!(j.d2, [0.0; 3]);
        }
        // columns of the composed linear map via unit steps
        for k in 0..3 {
            let mut p1 = p0;
            p1[k] += 1.0;
            let j1 = forward_jet(&spec, &params, p1).unwrap();
            for (a, b) in jets.iter().zip(&j1) {
                assert!((b.value - a.value - a.d1[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_tanh_neuron_closed_form() {
        // widths [3,1,1] with unit second layer realizes f = tanh(w1 x1 + b)
        let spec = NetworkSpec::new(vec![3, 1, 1], vec![OutputName::Phi], false).unwrap();
        let (w1, b1) = (0.8, -0.3);
        let params =
            ParamVector::from_values(&spec, vec![w1, 0.0, 0.0, b1, 1.0, 0.0]).unwrap();
        let x1 = 0.4;
        let jets = forward_jet(&spec, &params, [x1, 0.9, -0.2]).unwrap();
        let f = (w1 * x1 + b1).tanh();
        assert!((jets[0].value - f).abs() < 1e-15);
        assert!((jets[0].d1[0] - w1 * (1.0 - f * f)).abs() < 1e-14);
        assert!((jets[0].d2[0] - (-2.0 * f * w1 * w1 * (1.0 - f * f))).abs() < 1e-14);
        assert_eq!(jets[0].d1[1], 0.0);
        assert_eq!(jets[0].d2[1], 0.0);
    }

    #[test]
    fn clamp_phi_bounds_output() {
        let spec = NetworkSpec::new(vec![3, 8, 1], vec![OutputName::Phi], true).unwrap();
        // inflate weights so the raw output would exceed 1
        let mut params = init_params(&spec, 5);
        for v in params.values_mut() {
            *v *= 40.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), 2.0 * rng.gen::<f64>()];
            let jets = forward_jet(&spec, &params, p).unwrap();
            assert!(jets[0].value.abs() <= 1.0);
        }
    }

    #[test]
    fn jets_match_central_differences_on_random_mlps() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..25 {
            let spec = fd::random_spec(&mut rng);
            let params = init_params(&spec, 1000 + trial);
            let point = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0),
            ];
            let jets = forward_jet(&spec, &params, point).unwrap();
            for (out, jet) in jets.iter().enumerate() {
                let f = |p: [f64; 3]| forward_jet(&spec, &params, p).unwrap()[out].value;
                let fd_jet = fd::jet_central(f, point, 1e-4);
                let err = fd::jet_rel_error(jet, &fd_jet);
                assert!(
                    err <= 1e-5,
                    "trial {trial} output {out}: rel err {err:.3e} vs FD"
                );
            }
        }
    }
}
