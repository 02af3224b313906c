//! Measurement harness: Monte Carlo errors against the exact solution,
//! log-log fit of the order of convergence and condition number, the
//! a-priori error bound, and the ill-conditioned linear-system
//! demonstration in exact integer arithmetic.

use crate::error::{Error, Result};
use crate::loss::JetSource;
use crate::problems::{ManufacturedSolution, ProblemConfig, ProblemMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Monte Carlo errors

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorTime {
    /// L2(Omega) error of the fields at t = T.
    FinalTime,
    /// L2(0,T;L2(Omega)) error over the whole space-time cylinder.
    SpaceTime,
}

/// Per-field error estimates with their Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FieldErrors {
    pub phi: f64,
    pub u: f64,
    pub phi_se: f64,
    pub u_se: f64,
}

impl FieldErrors {
    /// Combined error sqrt(phi^2 + u^2).
    pub fn combined(&self) -> f64 {
        (self.phi * self.phi + self.u * self.u).sqrt()
    }
}

/// Monte Carlo estimate of the L2 distance between the source fields and
/// the exact manufactured fields, per field phi and u = (u1, u2).
pub fn mc_l2_error(
    src: &JetSource,
    problem: &ProblemConfig,
    time: ErrorTime,
    n: usize,
    seed: u64,
) -> Result<FieldErrors> {
    if n == 0 {
        return Err(Error::EmptySamples("mc_l2_error"));
    }
    if problem.mode != ProblemMode::Manufactured {
        return Err(Error::Config(vec![
            "mc_l2_error: exact errors are only defined in manufactured mode".into(),
        ]));
    }
    let ms = ManufacturedSolution;
    let dom = &problem.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let measure = match time {
        ErrorTime::FinalTime => dom.area(),
        ErrorTime::SpaceTime => dom.area() * dom.t_final,
    };

    let (mut sum_phi, mut sum_sq_phi) = (0.0, 0.0);
    let (mut sum_u, mut sum_sq_u) = (0.0, 0.0);
    for _ in 0..n {
        let x = dom.x_min + rng.gen::<f64>() * (dom.x_max - dom.x_min);
        let y = dom.y_min + rng.gen::<f64>() * (dom.y_max - dom.y_min);
        let t = match time {
            ErrorTime::FinalTime => dom.t_final,
            ErrorTime::SpaceTime => rng.gen::<f64>() * dom.t_final,
        };
        let p = [x, y, t];
        let jets = src.field_jets(problem, p)?;
        // reference values through the same jet evaluator, so the
        // white-box adapter compares identical code paths bitwise
        let exact = ms.field_jets(p, &problem.potential);
        let d_phi = jets.phi.value - exact.phi.value;
        let d_u = (jets.u1.value - exact.u1.value).powi(2)
            + (jets.u2.value - exact.u2.value).powi(2);
        sum_phi += d_phi * d_phi;
        sum_sq_phi += d_phi.powi(4);
        sum_u += d_u;
        sum_sq_u += d_u * d_u;
    }

    let nf = n as f64;
    let finish = |sum: f64, sum_sq: f64| -> (f64, f64) {
        let mean = sum / nf;
        let var = (sum_sq / nf - mean * mean).max(0.0);
        let err_sq = measure * mean;
        let se_sq = measure * (var / nf).sqrt();
        let err = err_sq.sqrt();
        let se = if err > 0.0 { se_sq / (2.0 * err) } else { 0.0 };
        (err, se)
    };
    let (phi, phi_se) = finish(sum_phi, sum_sq_phi);
    let (u, u_se) = finish(sum_u, sum_sq_u);
    Ok(FieldErrors { phi, u, phi_se, u_se })
}

// ---------------------------------------------------------------------------
// convergence fit

/// Least-squares line through (log10 loss, log10 error): the slope is the
/// empirical order of convergence, the intercept the log10 of the
/// condition number.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitResult {
    pub n: f64,
    pub log10_c: f64,
    pub c: f64,
    pub r2: f64,
    pub count: usize,
}

pub fn fit_convergence(pairs: &[(f64, f64)]) -> Result<FitResult> {
    if pairs.len() < 2 {
        return Err(Error::FitTooFewPoints(pairs.len()));
    }
    for &(loss, err) in pairs {
        if !(loss > 0.0 && err > 0.0 && loss.is_finite() && err.is_finite()) {
            return Err(Error::FitDegenerate(format!(
                "requires positive finite pairs, got ({loss}, {err})"
            )));
        }
    }
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(l, e)| (l.log10(), e.log10()))
        .collect();
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 1e-24 {
        return Err(Error::FitDegenerate(
            "all loss values coincide (degenerate abscissa)".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-20 {
        1.0
    } else {
        0.0
    };
    Ok(FitResult {
        n: slope,
        log10_c: intercept,
        c: 10f64.powf(intercept),
        r2,
        count: pairs.len(),
    })
}

// ---------------------------------------------------------------------------
// a-priori error bound

/// Inputs to the Cahn-Hilliard error bound. `c8` and `c9` are unknown
/// domain-dependent constants and stay user inputs (default 1);
/// c_lambda = c8 + 1/(2 lambda^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundParams {
    pub eps: f64,
    pub t: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub lambda: f64,
    pub c8: f64,
    pub c9: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            eps: 0.1,
            t: 0.0,
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            lambda: 1.0,
            c8: 1.0,
            c9: 1.0,
        }
    }
}

impl BoundParams {
    pub fn c_lambda(&self) -> f64 {
        self.c8 + 1.0 / (2.0 * self.lambda * self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            errs.push("bound.eps: must be nonnegative and finite".to_string());
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            errs.push("bound.t: must be nonnegative and finite".to_string());
        }
        for (name, v) in [
            ("bound.alpha1", self.alpha1),
            ("bound.alpha2", self.alpha2),
            ("bound.alpha3", self.alpha3),
            ("bound.alpha4", self.alpha4),
            ("bound.lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be positive and finite"));
            }
        }
        for (name, v) in [("bound.c8", self.c8), ("bound.c9", self.c9)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be nonnegative and finite"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// The squared-error bound at time t for a loss below eps^2:
/// eps^2 e^(c_l t) (1/a2 + ((1 - e^(-2 c_l t))/2)(l^2/(2 a1) + c9/a3 + c9/a4)).
pub fn apriori_error_bound(p: &BoundParams) -> f64 {
    let cl = p.c_lambda();
    let decay = (1.0 - (-2.0 * cl * p.t).exp()) / 2.0;
    let inner = 1.0 / p.alpha2
        + decay
            * (p.lambda * p.lambda / (2.0 * p.alpha1) + p.c9 / p.alpha3 + p.c9 / p.alpha4);
    p.eps * p.eps * (cl * p.t).exp() * inner
}

// ---------------------------------------------------------------------------
// ill-conditioned linear system

/// Exact-arithmetic report for the 4x4 integer demonstration system: a
/// small residual does not imply a small error when the condition number
/// is large.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinCondReport {
    pub a: [[i64; 4]; 4],
    pub b: [i64; 4],
    pub x: [i64; 4],
    pub det: i64,
    pub a_inv: [[i64; 4]; 4],
    /// delta_b = (0.1, -0.1, 0.1, -0.1); the exact solve A dx = db.
    pub delta_b: [f64; 4],
    pub delta_x_exact: [f64; 4],
    /// The approximate solution and deviation printed in the source
    /// material, kept for comparison; they do not satisfy A dx = db.
    pub y_printed: [f64; 4],
    pub delta_x_printed: [f64; 4],
    /// A y_printed - b, exact to one decimal.
    pub printed_y_residual: [f64; 4],
    pub printed_values_consistent: bool,
    /// kappa_inf = ||A||_inf ||A^-1||_inf.
    pub kappa_inf: f64,
    pub residual_rel: f64,
    pub error_rel: f64,
    /// (||dx||_inf / ||x||_inf) / (||db||_inf / ||b||_inf).
    pub amplification: f64,
}

fn det3(m: [[i64; 3]; 3]) -> i64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn minor(a: &[[i64; 4]; 4], row: usize, col: usize) -> [[i64; 3]; 3] {
    let mut m = [[0i64; 3]; 3];
    let mut r = 0;
    for i in 0..4 {
        if i == row {
            continue;
        }
        let mut c = 0;
        for j in 0..4 {
            if j == col {
                continue;
            }
            m[r][c] = a[i][j];
            c += 1;
        }
        r += 1;
    }
    m
}

fn det4(a: &[[i64; 4]; 4]) -> i64 {
    (0..4)
        .map(|j| {
            let sign = if j % 2 == 0 { 1 } else { -1 };
            sign * a[0][j] * det3(minor(a, 0, j))
        })
        .sum()
}

fn mat_vec(a: &[[i64; 4]; 4], v: [i64; 4]) -> [i64; 4] {
    let mut out = [0i64; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i] += a[i][j] * v[j];
        }
    }
    out
}

fn inf_norm_rows(a: &[[i64; 4]; 4]) -> i64 {
    (0..4)
        .map(|i| (0..4).map(|j| a[i][j].abs()).sum::<i64>())
        .max()
        .unwrap()
}

fn inf_norm_vec(v: &[f64; 4]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Build and solve the demonstration system exactly. The matrix has
/// determinant 1 and an integer inverse, so every quantity below is exact
/// integer (or tenth-integer) arithmetic.
pub fn lincond_demo() -> LinCondReport {
    let a = [
        [10, 7, 8, 7],
        [7, 5, 6, 5],
        [8, 6, 10, 9],
        [7, 5, 9, 10],
    ];
    let x = [1i64, 1, 1, 1];
    let b = mat_vec(&a, x); // (32, 23, 33, 31)

    let det = det4(&a);
    assert_eq!(det, 1, "demonstration matrix must be unimodular");
    // adjugate: inv[i][j] = cofactor(j, i) / det
    let mut a_inv = [[0i64; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
            a_inv[i][j] = sign * det3(minor(&a, j, i)) / det;
        }
    }
    // verify the inverse exactly
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0i64;
            for k in 0..4 {
                s += a[i][k] * a_inv[k][j];
            }
            assert_eq!(s, i64::from(i == j), "A A^-1 != I");
        }
    }

    // delta_b = (1, -1, 1, -1)/10; exact solve via the integer inverse
    let db_num = [1i64, -1, 1, -1];
    let dx_num = mat_vec(&a_inv, db_num);
    let delta_b = [0.1, -0.1, 0.1, -0.1];
    let delta_x_exact = [
        dx_num[0] as f64 / 10.0,
        dx_num[1] as f64 / 10.0,
        dx_num[2] as f64 / 10.0,
        dx_num[3] as f64 / 10.0,
    ];

    // the printed approximate solution, in tenths: y = x + dx_printed
    let y_num = [102i64, -116, 55, 51];
    let y_printed = [10.2, -11.6, 5.5, 5.1];
    let delta_x_printed = [9.2, -12.6, 4.5, 4.1];
    // A y - b in tenths: (A y_num - 10 b) / 10
    let ay = mat_vec(&a, y_num);
    let mut printed_y_residual = [0.0f64; 4];
    let mut consistent = true;
    for i in 0..4 {
        let tenths = ay[i] - 10 * b[i];
        printed_y_residual[i] = tenths as f64 / 10.0;
        if tenths != db_num[i] {
            consistent = false;
        }
    }

    let kappa_inf = (inf_norm_rows(&a) * inf_norm_rows(&a_inv)) as f64;
    let b_f = [b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64];
    let x_f = [1.0, 1.0, 1.0, 1.0];
    let residual_rel = inf_norm_vec(&delta_b) / inf_norm_vec(&b_f);
    let error_rel = inf_norm_vec(&delta_x_exact) / inf_norm_vec(&x_f);

    LinCondReport {
        a,
        b,
        x,
        det,
        a_inv,
        delta_b,
        delta_x_exact,
        y_printed,
        delta_x_printed,
        printed_y_residual,
        printed_values_consistent: consistent,
        kappa_inf,
        residual_rel,
        error_rel,
        amplification: error_rel / residual_rel,
    }
}
