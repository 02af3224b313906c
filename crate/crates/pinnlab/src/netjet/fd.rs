//! Finite-difference oracles: central-difference gradients of scalar
//! functions and central-difference jets of scalar fields. These are the
//! independent checks the analytic derivative paths are tested against.

use super::{Jet2, NetworkSpec, OutputName};
use rand::Rng;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn grad_central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Second-order central-difference jet of a scalar field at `p`:
/// first derivatives in (x1, x2, t), second derivatives (xx, xy, yy).
pub fn jet_central(f: impl Fn([f64; 3]) -> f64, p: [f64; 3], h: f64) -> Jet2 {
    let shift = |i: usize, s: f64| {
        let mut q = p;
        q[i] += s;
        q
    };
    let shift2 = |i: usize, si: f64, j: usize, sj: f64| {
        let mut q = p;
        q[i] += si;
        q[j] += sj;
        q
    };
    let f0 = f(p);
    let mut jet = Jet2 {
        value: f0,
        ..Jet2::ZERO
    };
    for k in 0..3 {
        jet.d1[k] = (f(shift(k, h)) - f(shift(k, -h))) / (2.0 * h);
    }
    jet.d2[0] = (f(shift(0, h)) - 2.0 * f0 + f(shift(0, -h))) / (h * h);
    jet.d2[2] = (f(shift(1, h)) - 2.0 * f0 + f(shift(1, -h))) / (h * h);
    jet.d2[1] = (f(shift2(0, h, 1, h)) - f(shift2(0, h, 1, -h)) - f(shift2(0, -h, 1, h))
        + f(shift2(0, -h, 1, -h)))
        / (4.0 * h * h);
    jet
}

/// Fourth-order central-difference jet (5-point stencils); tighter oracle
/// for validating hand-derived forcing formulas.
pub fn jet_central4(f: impl Fn([f64; 3]) -> f64, p: [f64; 3], h: f64) -> Jet2 {
    let at = |dx: f64, dy: f64, dt: f64| f([p[0] + dx, p[1] + dy, p[2] + dt]);
    let d1 = |vm2: f64, vm1: f64, vp1: f64, vp2: f64| (vm2 - 8.0 * vm1 + 8.0 * vp1 - vp2) / (12.0 * h);
    let d2 = |vm2: f64, vm1: f64, v0: f64, vp1: f64, vp2: f64| {
        (-vm2 + 16.0 * vm1 - 30.0 * v0 + 16.0 * vp1 - vp2) / (12.0 * h * h)
    };
    let f0 = at(0.0, 0.0, 0.0);
    let mut jet = Jet2 {
        value: f0,
        ..Jet2::ZERO
    };
    jet.d1[0] = d1(at(-2.0 * h, 0.0, 0.0), at(-h, 0.0, 0.0), at(h, 0.0, 0.0), at(2.0 * h, 0.0, 0.0));
    jet.d1[1] = d1(at(0.0, -2.0 * h, 0.0), at(0.0, -h, 0.0), at(0.0, h, 0.0), at(0.0, 2.0 * h, 0.0));
    jet.d1[2] = d1(at(0.0, 0.0, -2.0 * h), at(0.0, 0.0, -h), at(0.0, 0.0, h), at(0.0, 0.0, 2.0 * h));
    jet.d2[0] = d2(
        at(-2.0 * h, 0.0, 0.0),
        at(-h, 0.0, 0.0),
        f0,
        at(h, 0.0, 0.0),
        at(2.0 * h, 0.0, 0.0),
    );
    jet.d2[2] = d2(
        at(0.0, -2.0 * h, 0.0),
        at(0.0, -h, 0.0),
        f0,
        at(0.0, h, 0.0),
        at(0.0, 2.0 * h, 0.0),
    );
    // mixed derivative: tensor product of two 4th-order first-derivative
    // stencils (coefficients +1, -8, +8, -1 over offsets -2h, -h, +h, +2h)
    let offsets = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let mut mixed = 0.0;
    for &(oi, ci) in &offsets {
        for &(oj, cj) in &offsets {
            mixed += ci * cj * at(oi * h, oj * h, 0.0);
        }
    }
    jet.d2[1] = mixed / (144.0 * h * h);
    jet
}

/// Relative error between an analytic jet and its FD counterpart, with the
/// denominator floored at 1 so near-zero entries compare absolutely.
pub fn jet_rel_error(analytic: &Jet2, fd: &Jet2) -> f64 {
    let mut worst: f64 = 0.0;
    let pairs = [
        (analytic.value, fd.value),
        (analytic.d1[0], fd.d1[0]),
        (analytic.d1[1], fd.d1[1]),
        (analytic.d1[2], fd.d1[2]),
        (analytic.d2[0], fd.d2[0]),
        (analytic.d2[1], fd.d2[1]),
        (analytic.d2[2], fd.d2[2]),
    ];
    for (a, b) in pairs {
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    worst
}

/// Random small tanh architecture for derivative-oracle sweeps.
pub fn random_spec(rng: &mut impl Rng) -> NetworkSpec {
    let depth = rng.gen_range(1..=3usize);
    let all = [
        OutputName::U1,
        OutputName::U2,
        OutputName::Phi,
        OutputName::Mu,
        OutputName::P,
    ];
    let n_out = rng.gen_range(1..=all.len());
    let mut widths = vec![3];
    for _ in 0..depth {
        widths.push(rng.gen_range(2..=10usize));
    }
    widths.push(n_out);
    NetworkSpec::new(widths, all[..n_out].to_vec(), false).unwrap()
}
