//! Pointwise PDE residual bundles for the CH and NSCH systems, empirical
//! Monte Carlo norms, and the assembled loss with per-term breakdown and
//! its analytic parameter gradient.
//!
//! All residual norms enter the total squared; the H1-type regularizers
//! enter unsquared. Reductions run over fixed-size chunks combined in
//! chunk order, so a loss value is bitwise reproducible for any worker
//! count.

use crate::error::{Error, Result};
use crate::netjet::{
    backward_jet, forward_jet, forward_jet_tape, FieldJets, Jet2, NetworkSpec, OutputName,
    ParamVector,
};
use crate::parallel;
use crate::problems::{ManufacturedSolution, ProblemConfig, ProblemMode, SystemKind};
use crate::sampling::SampleBatch;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    /// L2 in time of the spatial L2 norm (all squared in the total).
    L2L2,
    /// L4 in time of the spatial L2 norm, estimated over equal time slabs.
    L4L2,
}

/// Loss weighting: the relative learning rates alpha_1..alpha_4, the
/// regularizer strengths lambda_1, lambda_2, and the large initial-condition
/// coefficient `w_ic` used by the NSCH toy loss. `alpha1` weights the
/// interior residual terms (the split-mu relation rides with it), `alpha2`
/// the initial terms, `alpha3` the phi (and Dirichlet u) boundary terms,
/// `alpha4` the mu boundary term. `w_ic` is applied on top of `alpha2` for
/// the NSCH system only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w_ic: f64,
    pub norm_kind: NormKind,
    /// Number of equal time slabs for the L4L2 estimate.
    pub k_t: usize,
    /// Penalize the Dirichlet mismatch of u on the boundary (manufactured
    /// mode needs it; disable to reproduce the toy loss verbatim).
    pub bc_u_penalty: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            w_ic: 1000.0,
            norm_kind: NormKind::L2L2,
            k_t: 16,
            bc_u_penalty: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("weights.alpha1", self.alpha1),
            ("weights.alpha2", self.alpha2),
            ("weights.alpha3", self.alpha3),
            ("weights.alpha4", self.alpha4),
            ("weights.w_ic", self.w_ic),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("weights.lambda1", self.lambda1),
            ("weights.lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be nonnegative and finite, got {v}"));
            }
        }
        if self.norm_kind == NormKind::L4L2 && self.k_t == 0 {
            errs.push("weights.k_t: L4L2 needs at least one time slab".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Pointwise residuals. Interior samples fill the PDE residuals, boundary
/// samples the trace mismatches, initial samples the t = 0 mismatches;
/// the remaining entries stay zero. Every entry vanishes identically when
/// the jets come from the exact manufactured fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResidualBundle {
    /// Momentum residual f1 minus the manufactured forcing g_u.
    pub r_mom: [f64; 2],
    /// Split-mu relation: mu + lap(phi) - Psi'(phi).
    pub r_mu: f64,
    /// Transport residual f2 minus the manufactured forcing g_phi.
    pub r_ch: f64,
    /// div u.
    pub r_div: f64,
    pub bc_phi: f64,
    pub bc_mu: f64,
    pub bc_u: [f64; 2],
    pub ic_u: [f64; 2],
    pub ic_phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    Interior { point: [f64; 3] },
    Boundary { point: [f64; 3], normal: [f64; 2] },
    Initial { xy: [f64; 2] },
}

/// NSCH residual bundle at one sample. The viscous term expands as
/// div(nu(phi) Du)_i = nu'(phi) (grad phi . Du)_i + nu(phi) (div Du)_i
/// with (div Du)_i = (lap u_i + d_i(div u)) / 2.
pub fn residuals_nsch(jets: &FieldJets, problem: &ProblemConfig, sample: Sample) -> ResidualBundle {
    let mut r = ResidualBundle::default();
    match sample {
        Sample::Interior { point } => {
            let (g_u, g_phi) = problem.forcing(point);
            let (u1, u2, phi, mu, p) = (&jets.u1, &jets.u2, &jets.phi, &jets.mu, &jets.p);
            let nu = problem.viscosity.eval(phi.value);
            let nup = problem.viscosity.slope();
            let du11 = u1.d1[0];
            let du12 = 0.5 * (u1.d1[1] + u2.d1[0]);
            let du22 = u2.d1[1];
            let div_du1 = u1.d2[0] + 0.5 * (u1.d2[2] + u2.d2[1]);
            let div_du2 = u2.d2[2] + 0.5 * (u2.d2[0] + u1.d2[1]);
            r.r_mom[0] = u1.d1[2] + u1.value * u1.d1[0] + u2.value * u1.d1[1]
                - (nup * (phi.d1[0] * du11 + phi.d1[1] * du12) + nu * div_du1)
                + p.d1[0]
                - mu.value * phi.d1[0]
                - g_u[0];
            r.r_mom[1] = u2.d1[2] + u1.value * u2.d1[0] + u2.value * u2.d1[1]
                - (nup * (phi.d1[0] * du12 + phi.d1[1] * du22) + nu * div_du2)
                + p.d1[1]
                - mu.value * phi.d1[1]
                - g_u[1];
            r.r_mu = mu.value + phi.laplacian() - problem.potential.dpsi(phi.value);
            r.r_ch = phi.d1[2] + u1.value * phi.d1[0] + u2.value * phi.d1[1]
                - mu.laplacian()
                - g_phi;
            r.r_div = u1.d1[0] + u2.d1[1];
        }
        Sample::Boundary { point, normal } => {
            let bt = problem.boundary_targets(point, normal);
            r.bc_phi = jets.phi.d1[0] * normal[0] + jets.phi.d1[1] * normal[1] - bt.dphi_dn;
            r.bc_mu = jets.mu.d1[0] * normal[0] + jets.mu.d1[1] * normal[1] - bt.dmu_dn;
            r.bc_u = [jets.u1.value - bt.u[0], jets.u2.value - bt.u[1]];
        }
        Sample::Initial { xy } => {
            let u0 = problem.initial_u(xy);
            r.ic_u = [jets.u1.value - u0[0], jets.u2.value - u0[1]];
            r.ic_phi = jets.phi.value - problem.initial_phi(xy);
        }
    }
    r
}

/// CH residual bundle: no momentum or divergence terms; the transport
/// velocity is the configured carrier field.
pub fn residuals_ch(jets: &FieldJets, problem: &ProblemConfig, sample: Sample) -> ResidualBundle {
    let mut r = ResidualBundle::default();
    match sample {
        Sample::Interior { point } => {
            let (_g_u, g_phi) = problem.forcing(point);
            let u = problem.carrier.eval(point);
            let (phi, mu) = (&jets.phi, &jets.mu);
            r.r_mu = mu.value + phi.laplacian() - problem.potential.dpsi(phi.value);
            r.r_ch = phi.d1[2] + u[0] * phi.d1[0] + u[1] * phi.d1[1] - mu.laplacian() - g_phi;
        }
        Sample::Boundary { point, normal } => {
            let bt = problem.boundary_targets(point, normal);
            r.bc_phi = jets.phi.d1[0] * normal[0] + jets.phi.d1[1] * normal[1] - bt.dphi_dn;
            r.bc_mu = jets.mu.d1[0] * normal[0] + jets.mu.d1[1] * normal[1] - bt.dmu_dn;
        }
        Sample::Initial { xy } => {
            r.ic_phi = jets.phi.value - problem.initial_phi(xy);
        }
    }
    r
}

pub fn residuals(jets: &FieldJets, problem: &ProblemConfig, sample: Sample) -> ResidualBundle {
    match problem.system {
        SystemKind::NSCH => residuals_nsch(jets, problem, sample),
        SystemKind::CH => residuals_ch(jets, problem, sample),
    }
}

// ---------------------------------------------------------------------------
// empirical norms

/// Scalar field sample for [`empirical_norm`]: value, spatial gradient
/// (used by the H1 kind) and the time stamp (used by the L4L2 kind).
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub value: f64,
    pub grad: [f64; 2],
    pub t: f64,
}

impl FieldSample {
    pub fn value_only(value: f64, t: f64) -> Self {
        FieldSample {
            value,
            grad: [0.0, 0.0],
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormEval {
    /// sqrt(measure * mean(value^2)); `measure` is spatial x time, or just
    /// spatial when `time_extent` is zero (instantaneous L2).
    L2L2,
    /// Partition (0, time_extent) into equal slabs, estimate the spatial L2
    /// norm per slab, then (dt * sum slab^4)^(1/4).
    L4L2 { slabs: usize },
    /// sqrt(measure * mean(value^2 + |grad|^2)).
    L2H1,
}

/// Monte Carlo estimate of a norm of a sampled scalar field.
pub fn empirical_norm(
    samples: &[FieldSample],
    kind: NormEval,
    spatial_measure: f64,
    time_extent: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("empirical_norm"));
    }
    let n = samples.len() as f64;
    match kind {
        NormEval::L2L2 => {
            let measure = if time_extent > 0.0 {
                spatial_measure * time_extent
            } else {
                spatial_measure
            };
            let mean: f64 = samples.iter().map(|s| s.value * s.value).sum::<f64>() / n;
            Ok((measure * mean).sqrt())
        }
        NormEval::L2H1 => {
            let measure = if time_extent > 0.0 {
                spatial_measure * time_extent
            } else {
                spatial_measure
            };
            let mean: f64 = samples
                .iter()
                .map(|s| s.value * s.value + s.grad[0] * s.grad[0] + s.grad[1] * s.grad[1])
                .sum::<f64>()
                / n;
            Ok((measure * mean).sqrt())
        }
        NormEval::L4L2 { slabs } => {
            if slabs == 0 || time_extent <= 0.0 {
                return Err(Error::EmptySamples("L4L2 needs slabs and a time extent"));
            }
            let dt = time_extent / slabs as f64;
            let mut sums = vec![0.0; slabs];
            let mut counts = vec![0usize; slabs];
            for s in samples {
                let k = ((s.t / dt) as usize).min(slabs - 1);
                sums[k] += s.value * s.value;
                counts[k] += 1;
            }
            let mut quartic = 0.0;
            for k in 0..slabs {
                if counts[k] > 0 {
                    let slab_sq = spatial_measure * sums[k] / counts[k] as f64;
                    quartic += dt * slab_sq * slab_sq;
                }
            }
            Ok(quartic.powf(0.25))
        }
    }
}

// ---------------------------------------------------------------------------
// loss assembly

/// Where field jets come from: a network, or the exact manufactured fields
/// (the white-box adapter residuals and errors are checked against).
#[derive(Clone, Copy)]
pub enum JetSource<'a> {
    Network {
        spec: &'a NetworkSpec,
        params: &'a ParamVector,
    },
    Exact(&'a ManufacturedSolution),
}

impl<'a> JetSource<'a> {
    pub fn field_jets(&self, problem: &ProblemConfig, point: [f64; 3]) -> Result<FieldJets> {
        let mut jets = match self {
            JetSource::Network { spec, params } => {
                let out = forward_jet(spec, params, point)?;
                FieldJets::from_outputs(spec, &out)
            }
            JetSource::Exact(ms) => ms.field_jets(point, &problem.potential),
        };
        if problem.system == SystemKind::CH {
            // u is a parameter field: only its value enters the residuals
            let u = problem.carrier.eval(point);
            jets.u1 = Jet2 {
                value: u[0],
                ..Jet2::ZERO
            };
            jets.u2 = Jet2 {
                value: u[1],
                ..Jet2::ZERO
            };
            jets.p = Jet2::ZERO;
        }
        Ok(jets)
    }

    fn validate_outputs(&self, problem: &ProblemConfig) -> Result<()> {
        if let JetSource::Network { spec, .. } = self {
            spec.validate()?;
            let required: &[OutputName] = match problem.system {
                SystemKind::NSCH => &[
                    OutputName::U1,
                    OutputName::U2,
                    OutputName::Phi,
                    OutputName::Mu,
                    OutputName::P,
                ],
                SystemKind::CH => &[OutputName::Phi, OutputName::Mu],
            };
            for name in required {
                if spec.output_index(*name).is_none() {
                    return Err(Error::MissingOutput(name.as_str()));
                }
            }
        }
        Ok(())
    }
}

/// Per-term (raw, unweighted) loss values. Residual, boundary and initial
/// entries are squared norms; the regularizer entries are unsquared norms.
/// `total` is the weighted sum; `total_unweighted` sums the squared-norm
/// terms with unit weights (the loss "neglecting the 1000 coefficient").
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub momentum: f64,
    pub mu_relation: f64,
    pub transport: f64,
    pub divergence: f64,
    pub ic_u: f64,
    pub ic_phi: f64,
    pub bc_phi: f64,
    pub bc_mu: f64,
    pub bc_u: f64,
    pub reg_phi: f64,
    pub reg_mu: f64,
    pub reg_u: f64,
    pub total: f64,
    pub total_unweighted: f64,
}

impl LossBreakdown {
    /// The weighted sum defining `total`; kept as a method so tests can
    /// verify the decomposition identity independently.
    pub fn weighted_total(&self, w: &LossWeights, system: SystemKind) -> f64 {
        match system {
            SystemKind::NSCH => {
                w.alpha1 * (self.momentum + self.mu_relation + self.transport + self.divergence)
                    + w.alpha2 * w.w_ic * (self.ic_u + self.ic_phi)
                    + w.alpha3 * (self.bc_phi + self.bc_u)
                    + w.alpha4 * self.bc_mu
                    + w.lambda1 * self.reg_u
                    + w.lambda2 * self.reg_phi
            }
            SystemKind::CH => {
                w.alpha1 * (self.transport + self.mu_relation)
                    + w.alpha2 * self.ic_phi
                    + w.alpha3 * self.bc_phi
                    + w.alpha4 * self.bc_mu
                    + w.lambda1 * self.reg_phi
                    + w.lambda2 * self.reg_mu
            }
        }
    }

    fn sum_unweighted(&self) -> f64 {
        self.momentum
            + self.mu_relation
            + self.transport
            + self.divergence
            + self.ic_u
            + self.ic_phi
            + self.bc_phi
            + self.bc_mu
            + self.bc_u
    }
}

/// Mean-of-squares accumulator with optional per-slab partition for L4L2.
#[derive(Clone)]
struct SqSum {
    sum: f64,
    slab: Vec<f64>,
    slab_n: Vec<usize>,
}

impl SqSum {
    fn new(slabs: usize) -> Self {
        SqSum {
            sum: 0.0,
            slab: vec![0.0; slabs],
            slab_n: vec![0; slabs],
        }
    }

    #[inline]
    fn add(&mut self, sq: f64, slab: usize) {
        self.sum += sq;
        if !self.slab.is_empty() {
            self.slab[slab] += sq;
            self.slab_n[slab] += 1;
        }
    }

    fn merge(&mut self, other: &SqSum) {
        self.sum += other.sum;
        for k in 0..self.slab.len() {
            self.slab[k] += other.slab[k];
            self.slab_n[k] += other.slab_n[k];
        }
    }

    /// Squared-norm estimate under the configured kind.
    fn term(&self, kind: NormKind, spatial: f64, t_window: f64, n: usize) -> f64 {
        match kind {
            NormKind::L2L2 => spatial * t_window * self.sum / n as f64,
            NormKind::L4L2 => {
                let slabs = self.slab.len();
                let dt = t_window / slabs as f64;
                let mut quartic = 0.0;
                for k in 0..slabs {
                    if self.slab_n[k] > 0 {
                        let q = spatial * self.slab[k] / self.slab_n[k] as f64;
                        quartic += dt * q * q;
                    }
                }
                quartic.sqrt()
            }
        }
    }

    /// Seed coefficient for the gradient: d(term)/d(r_i) = coef(slab_i) * r_i.
    fn seed_coef(&self, kind: NormKind, spatial: f64, t_window: f64, n: usize) -> SeedCoef {
        match kind {
            NormKind::L2L2 => SeedCoef::Uniform(2.0 * spatial * t_window / n as f64),
            NormKind::L4L2 => {
                let slabs = self.slab.len();
                let dt = t_window / slabs as f64;
                let x = self.term(kind, spatial, t_window, n);
                let mut per_slab = vec![0.0; slabs];
                if x > 0.0 {
                    for k in 0..slabs {
                        if self.slab_n[k] > 0 {
                            let q = spatial * self.slab[k] / self.slab_n[k] as f64;
                            per_slab[k] = 2.0 * dt * q * spatial / (x * self.slab_n[k] as f64);
                        }
                    }
                }
                SeedCoef::PerSlab(per_slab)
            }
        }
    }
}

enum SeedCoef {
    Uniform(f64),
    PerSlab(Vec<f64>),
}

impl SeedCoef {
    #[inline]
    fn at(&self, slab: usize) -> f64 {
        match self {
            SeedCoef::Uniform(c) => *c,
            SeedCoef::PerSlab(v) => v[slab],
        }
    }
}

/// Everything fixed for one loss evaluation.
struct Ctx<'a> {
    problem: &'a ProblemConfig,
    weights: &'a LossWeights,
    system: SystemKind,
    slabs: usize,
    area: f64,
    perimeter: f64,
    t_window: f64,
    /// w_ic is an NSCH toy-loss device; CH uses alpha2 alone.
    ic_weight: f64,
    bc_u_active: bool,
    regs_active: bool,
}

impl<'a> Ctx<'a> {
    fn new(problem: &'a ProblemConfig, weights: &'a LossWeights) -> Result<Self> {
        weights.validate()?;
        problem.validate()?;
        let system = problem.system;
        Ok(Ctx {
            problem,
            weights,
            system,
            slabs: match weights.norm_kind {
                NormKind::L2L2 => 0,
                NormKind::L4L2 => weights.k_t,
            },
            area: problem.domain.area(),
            perimeter: problem.domain.perimeter(),
            t_window: problem.domain.t_final,
            ic_weight: match system {
                SystemKind::NSCH => weights.alpha2 * weights.w_ic,
                SystemKind::CH => weights.alpha2,
            },
            bc_u_active: system == SystemKind::NSCH
                && weights.bc_u_penalty
                && problem.mode == ProblemMode::Manufactured,
            regs_active: weights.lambda1 > 0.0 || weights.lambda2 > 0.0,
        })
    }

    #[inline]
    fn slab_of(&self, t: f64) -> usize {
        if self.slabs == 0 {
            0
        } else {
            ((t / (self.t_window / self.slabs as f64)) as usize).min(self.slabs - 1)
        }
    }
}

#[derive(Clone)]
struct InteriorSums {
    momentum: SqSum,
    mu_rel: SqSum,
    transport: SqSum,
    divergence: SqSum,
    /// Sum of weighted squared components of the two regularizer norms.
    reg_a: f64,
    reg_b: f64,
}

impl InteriorSums {
    fn new(slabs: usize) -> Self {
        InteriorSums {
            momentum: SqSum::new(slabs),
            mu_rel: SqSum::new(slabs),
            transport: SqSum::new(slabs),
            divergence: SqSum::new(slabs),
            reg_a: 0.0,
            reg_b: 0.0,
        }
    }

    fn merge(&mut self, o: &InteriorSums) {
        self.momentum.merge(&o.momentum);
        self.mu_rel.merge(&o.mu_rel);
        self.transport.merge(&o.transport);
        self.divergence.merge(&o.divergence);
        self.reg_a += o.reg_a;
        self.reg_b += o.reg_b;
    }

    fn add_bundle(&mut self, r: &ResidualBundle, slab: usize) -> Result<()> {
        let mom = r.r_mom[0] * r.r_mom[0] + r.r_mom[1] * r.r_mom[1];
        for (term, v) in [
            ("momentum", mom),
            ("mu_relation", r.r_mu * r.r_mu),
            ("transport", r.r_ch * r.r_ch),
            ("divergence", r.r_div * r.r_div),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term });
            }
        }
        self.momentum.add(mom, slab);
        self.mu_rel.add(r.r_mu * r.r_mu, slab);
        self.transport.add(r.r_ch * r.r_ch, slab);
        self.divergence.add(r.r_div * r.r_div, slab);
        Ok(())
    }

    /// Regularizer component sums. For NSCH: reg_a = |grad u|^2 (the
    /// divergence-free-space norm), reg_b = H2 components of phi (the mixed
    /// second derivative counts twice). For CH: reg_a = H1 of phi,
    /// reg_b = H1 of mu.
    fn add_reg(&mut self, system: SystemKind, jets: &FieldJets) {
        match system {
            SystemKind::NSCH => {
                self.reg_a += jets.u1.d1[0] * jets.u1.d1[0]
                    + jets.u1.d1[1] * jets.u1.d1[1]
                    + jets.u2.d1[0] * jets.u2.d1[0]
                    + jets.u2.d1[1] * jets.u2.d1[1];
                let p = &jets.phi;
                self.reg_b += p.value * p.value
                    + p.d1[0] * p.d1[0]
                    + p.d1[1] * p.d1[1]
                    + p.d2[0] * p.d2[0]
                    + 2.0 * p.d2[1] * p.d2[1]
                    + p.d2[2] * p.d2[2];
            }
            SystemKind::CH => {
                let p = &jets.phi;
                self.reg_a += p.value * p.value + p.d1[0] * p.d1[0] + p.d1[1] * p.d1[1];
                let m = &jets.mu;
                self.reg_b += m.value * m.value + m.d1[0] * m.d1[0] + m.d1[1] * m.d1[1];
            }
        }
    }
}

#[derive(Clone)]
struct BoundarySums {
    bc_phi: SqSum,
    bc_mu: SqSum,
    bc_u: SqSum,
}

impl BoundarySums {
    fn new(slabs: usize) -> Self {
        BoundarySums {
            bc_phi: SqSum::new(slabs),
            bc_mu: SqSum::new(slabs),
            bc_u: SqSum::new(slabs),
        }
    }

    fn merge(&mut self, o: &BoundarySums) {
        self.bc_phi.merge(&o.bc_phi);
        self.bc_mu.merge(&o.bc_mu);
        self.bc_u.merge(&o.bc_u);
    }

    fn add_bundle(&mut self, r: &ResidualBundle, slab: usize) -> Result<()> {
        let bu = r.bc_u[0] * r.bc_u[0] + r.bc_u[1] * r.bc_u[1];
        for (term, v) in [
            ("bc_phi", r.bc_phi * r.bc_phi),
            ("bc_mu", r.bc_mu * r.bc_mu),
            ("bc_u", bu),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term });
            }
        }
        self.bc_phi.add(r.bc_phi * r.bc_phi, slab);
        self.bc_mu.add(r.bc_mu * r.bc_mu, slab);
        self.bc_u.add(bu, slab);
        Ok(())
    }
}

#[derive(Clone, Default)]
struct InitialSums {
    ic_u: f64,
    ic_phi: f64,
}

impl InitialSums {
    fn add_bundle(&mut self, r: &ResidualBundle) -> Result<()> {
        let iu = r.ic_u[0] * r.ic_u[0] + r.ic_u[1] * r.ic_u[1];
        if !iu.is_finite() || !r.ic_phi.is_finite() {
            return Err(Error::NonFiniteLoss { term: "ic" });
        }
        self.ic_u += iu;
        self.ic_phi += r.ic_phi * r.ic_phi;
        Ok(())
    }
}

fn assemble_breakdown(
    ctx: &Ctx,
    int: &InteriorSums,
    bdy: &BoundarySums,
    ini: &InitialSums,
    n_int: usize,
    n_bdy: usize,
    n_ini: usize,
) -> LossBreakdown {
    let w = ctx.weights;
    let kind = w.norm_kind;
    let mut b = LossBreakdown {
        momentum: int.momentum.term(kind, ctx.area, ctx.t_window, n_int),
        mu_relation: int.mu_rel.term(kind, ctx.area, ctx.t_window, n_int),
        transport: int.transport.term(kind, ctx.area, ctx.t_window, n_int),
        divergence: int.divergence.term(kind, ctx.area, ctx.t_window, n_int),
        ic_u: ctx.area * ini.ic_u / n_ini as f64,
        ic_phi: ctx.area * ini.ic_phi / n_ini as f64,
        bc_phi: bdy.bc_phi.term(kind, ctx.perimeter, ctx.t_window, n_bdy),
        bc_mu: bdy.bc_mu.term(kind, ctx.perimeter, ctx.t_window, n_bdy),
        bc_u: if ctx.bc_u_active {
            bdy.bc_u.term(kind, ctx.perimeter, ctx.t_window, n_bdy)
        } else {
            0.0
        },
        ..LossBreakdown::default()
    };
    if ctx.system == SystemKind::CH {
        b.momentum = 0.0;
        b.divergence = 0.0;
        b.ic_u = 0.0;
    }
    if ctx.regs_active {
        let meas = ctx.area * ctx.t_window;
        let (reg_a, reg_b) = (
            (meas * int.reg_a / n_int as f64).sqrt(),
            (meas * int.reg_b / n_int as f64).sqrt(),
        );
        match ctx.system {
            SystemKind::NSCH => {
                b.reg_u = reg_a;
                b.reg_phi = reg_b;
            }
            SystemKind::CH => {
                b.reg_phi = reg_a;
                b.reg_mu = reg_b;
            }
        }
    }
    b.total = b.weighted_total(w, ctx.system);
    b.total_unweighted = b.sum_unweighted();
    b
}

/// Empirical loss of a jet source on a frozen batch: the weighted total and
/// its per-term breakdown. Deterministic given (source, batch, config).
pub fn empirical_loss(
    src: &JetSource,
    batch: &SampleBatch,
    weights: &LossWeights,
    problem: &ProblemConfig,
) -> Result<(f64, LossBreakdown)> {
    src.validate_outputs(problem)?;
    let ctx = Ctx::new(problem, weights)?;
    let threads = parallel::num_threads();

    let int_parts = parallel::map_chunks(&batch.interior, threads, |chunk| -> Result<InteriorSums> {
        let mut sums = InteriorSums::new(ctx.slabs);
        for &point in chunk {
            let jets = src.field_jets(problem, point)?;
            let r = residuals(&jets, problem, Sample::Interior { point });
            sums.add_bundle(&r, ctx.slab_of(point[2]))?;
            if ctx.regs_active {
                sums.add_reg(ctx.system, &jets);
            }
        }
        Ok(sums)
    });
    let mut int = InteriorSums::new(ctx.slabs);
    for part in int_parts {
        int.merge(&part?);
    }

    let bdy_parts = parallel::map_chunks(&batch.boundary, threads, |chunk| -> Result<BoundarySums> {
        let mut sums = BoundarySums::new(ctx.slabs);
        for bs in chunk {
            let jets = src.field_jets(problem, bs.point)?;
            let r = residuals(
                &jets,
                problem,
                Sample::Boundary {
                    point: bs.point,
                    normal: bs.normal,
                },
            );
            sums.add_bundle(&r, ctx.slab_of(bs.point[2]))?;
        }
        Ok(sums)
    });
    let mut bdy = BoundarySums::new(ctx.slabs);
    for part in bdy_parts {
        bdy.merge(&part?);
    }

    let ini_parts = parallel::map_chunks(&batch.initial, threads, |chunk| -> Result<InitialSums> {
        let mut sums = InitialSums::default();
        for &xy in chunk {
            let jets = src.field_jets(problem, [xy[0], xy[1], 0.0])?;
            let r = residuals(&jets, problem, Sample::Initial { xy });
            sums.add_bundle(&r)?;
        }
        Ok(sums)
    });
    let mut ini = InitialSums::default();
    for part in ini_parts {
        let p = part?;
        ini.ic_u += p.ic_u;
        ini.ic_phi += p.ic_phi;
    }

    let b = assemble_breakdown(
        &ctx,
        &int,
        &bdy,
        &ini,
        batch.interior.len(),
        batch.boundary.len(),
        batch.initial.len(),
    );
    Ok((b.total, b))
}

/// Seeds: d(total)/d(residual component) for one sample.
#[derive(Clone, Copy, Default)]
struct BundleSeeds {
    mom: [f64; 2],
    mu_rel: f64,
    ch: f64,
    div: f64,
    bc_phi: f64,
    bc_mu: f64,
    bc_u: [f64; 2],
    ic_u: [f64; 2],
    ic_phi: f64,
}

/// Chain the residual adjoints back onto the field jets at one sample.
fn bundle_adjoint(
    ctx: &Ctx,
    jets: &FieldJets,
    sample: Sample,
    s: &BundleSeeds,
) -> FieldJets {
    let mut a = FieldJets::default();
    match sample {
        Sample::Interior { .. } => {
            let (u1, u2, phi, mu) = (&jets.u1, &jets.u2, &jets.phi, &jets.mu);
            if ctx.system == SystemKind::NSCH {
                let nu = ctx.problem.viscosity.eval(phi.value);
                let nup = ctx.problem.viscosity.slope();
                let du11 = u1.d1[0];
                let du12 = 0.5 * (u1.d1[1] + u2.d1[0]);
                let du22 = u2.d1[1];
                let div_du1 = u1.d2[0] + 0.5 * (u1.d2[2] + u2.d2[1]);
                let div_du2 = u2.d2[2] + 0.5 * (u2.d2[0] + u1.d2[1]);
                let (s1, s2) = (s.mom[0], s.mom[1]);
                // d/dt + convection
                a.u1.d1[2] += s1;
                a.u1.value += u1.d1[0] * s1;
                a.u1.d1[0] += u1.value * s1;
                a.u2.value += u1.d1[1] * s1;
                a.u1.d1[1] += u2.value * s1;
                a.u2.d1[2] += s2;
                a.u1.value += u2.d1[0] * s2;
                a.u2.d1[0] += u1.value * s2;
                a.u2.value += u2.d1[1] * s2;
                a.u2.d1[1] += u2.value * s2;
                // viscous term enters with a minus sign
                a.phi.value -= nup * div_du1 * s1;
                a.phi.d1[0] -= nup * du11 * s1;
                a.phi.d1[1] -= nup * du12 * s1;
                a.u1.d1[0] -= nup * phi.d1[0] * s1;
                a.u1.d1[1] -= 0.5 * nup * phi.d1[1] * s1;
                a.u2.d1[0] -= 0.5 * nup * phi.d1[1] * s1;
                a.u1.d2[0] -= nu * s1;
                a.u1.d2[2] -= 0.5 * nu * s1;
                a.u2.d2[1] -= 0.5 * nu * s1;
                a.phi.value -= nup * div_du2 * s2;
                a.phi.d1[0] -= nup * du12 * s2;
                a.phi.d1[1] -= nup * du22 * s2;
                a.u1.d1[1] -= 0.5 * nup * phi.d1[0] * s2;
                a.u2.d1[0] -= 0.5 * nup * phi.d1[0] * s2;
                a.u2.d1[1] -= nup * phi.d1[1] * s2;
                a.u2.d2[2] -= nu * s2;
                a.u2.d2[0] -= 0.5 * nu * s2;
                a.u1.d2[1] -= 0.5 * nu * s2;
                // pressure gradient and capillary force
                a.p.d1[0] += s1;
                a.mu.value -= phi.d1[0] * s1;
                a.phi.d1[0] -= mu.value * s1;
                a.p.d1[1] += s2;
                a.mu.value -= phi.d1[1] * s2;
                a.phi.d1[1] -= mu.value * s2;
                // divergence
                a.u1.d1[0] += s.div;
                a.u2.d1[1] += s.div;
            }
            // mu relation
            a.mu.value += s.mu_rel;
            a.phi.d2[0] += s.mu_rel;
            a.phi.d2[2] += s.mu_rel;
            a.phi.value -= ctx.problem.potential.ddpsi(phi.value) * s.mu_rel;
            // transport
            a.phi.d1[2] += s.ch;
            a.phi.d1[0] += u1.value * s.ch;
            a.phi.d1[1] += u2.value * s.ch;
            a.mu.d2[0] -= s.ch;
            a.mu.d2[2] -= s.ch;
            if ctx.system == SystemKind::NSCH {
                a.u1.value += phi.d1[0] * s.ch;
                a.u2.value += phi.d1[1] * s.ch;
            }
        }
        Sample::Boundary { normal, .. } => {
            a.phi.d1[0] += normal[0] * s.bc_phi;
            a.phi.d1[1] += normal[1] * s.bc_phi;
            a.mu.d1[0] += normal[0] * s.bc_mu;
            a.mu.d1[1] += normal[1] * s.bc_mu;
            a.u1.value += s.bc_u[0];
            a.u2.value += s.bc_u[1];
        }
        Sample::Initial { .. } => {
            a.u1.value += s.ic_u[0];
            a.u2.value += s.ic_u[1];
            a.phi.value += s.ic_phi;
        }
    }
    a
}

/// Add the regularizer adjoints at one interior point. `coef_a`/`coef_b`
/// are lambda * measure / (n * reg_norm).
fn reg_adjoint(system: SystemKind, jets: &FieldJets, coef_a: f64, coef_b: f64, a: &mut FieldJets) {
    match system {
        SystemKind::NSCH => {
            if coef_a != 0.0 {
                a.u1.d1[0] += coef_a * jets.u1.d1[0];
                a.u1.d1[1] += coef_a * jets.u1.d1[1];
                a.u2.d1[0] += coef_a * jets.u2.d1[0];
                a.u2.d1[1] += coef_a * jets.u2.d1[1];
            }
            if coef_b != 0.0 {
                let p = &jets.phi;
                a.phi.value += coef_b * p.value;
                a.phi.d1[0] += coef_b * p.d1[0];
                a.phi.d1[1] += coef_b * p.d1[1];
                a.phi.d2[0] += coef_b * p.d2[0];
                a.phi.d2[1] += 2.0 * coef_b * p.d2[1];
                a.phi.d2[2] += coef_b * p.d2[2];
            }
        }
        SystemKind::CH => {
            if coef_a != 0.0 {
                let p = &jets.phi;
                a.phi.value += coef_a * p.value;
                a.phi.d1[0] += coef_a * p.d1[0];
                a.phi.d1[1] += coef_a * p.d1[1];
            }
            if coef_b != 0.0 {
                let m = &jets.mu;
                a.mu.value += coef_b * m.value;
                a.mu.d1[0] += coef_b * m.d1[0];
                a.mu.d1[1] += coef_b * m.d1[1];
            }
        }
    }
}

/// Empirical loss together with its gradient with respect to the network
/// parameters, by reverse accumulation over the jet recurrences. Matches
/// central finite differences on the same frozen batch.
pub fn loss_grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &SampleBatch,
    weights: &LossWeights,
    problem: &ProblemConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let src = JetSource::Network { spec, params };
    src.validate_outputs(problem)?;
    params.check(spec)?;
    let ctx = Ctx::new(problem, weights)?;
    let threads = parallel::num_threads();
    let n_params = spec.n_params();
    let w = weights;

    let fused = w.norm_kind == NormKind::L2L2 && !ctx.regs_active;
    let (n_int, n_bdy, n_ini) = (
        batch.interior.len(),
        batch.boundary.len(),
        batch.initial.len(),
    );

    // interior
    let mut int = InteriorSums::new(ctx.slabs);
    let mut grad = vec![0.0; n_params];

    if fused {
        let c_int = 2.0 * ctx.area * ctx.t_window / n_int as f64;
        let c_bdy = 2.0 * ctx.perimeter * ctx.t_window / n_bdy as f64;
        let parts = parallel::map_chunks(&batch.interior, threads, |chunk| {
            interior_chunk_fused(&ctx, spec, params, chunk, c_int)
        });
        for part in parts {
            let (sums, g) = part?;
            int.merge(&sums);
            add_assign(&mut grad, &g);
        }

        let bparts = parallel::map_chunks(&batch.boundary, threads, |chunk| {
            boundary_chunk_fused(&ctx, spec, params, chunk, c_bdy)
        });
        let mut bdy = BoundarySums::new(ctx.slabs);
        for part in bparts {
            let (sums, g) = part?;
            bdy.merge(&sums);
            add_assign(&mut grad, &g);
        }

        let c_ic = 2.0 * ctx.ic_weight * ctx.area / n_ini as f64;
        let iparts = parallel::map_chunks(&batch.initial, threads, |chunk| {
            initial_chunk_fused(&ctx, spec, params, chunk, c_ic)
        });
        let mut ini = InitialSums::default();
        for part in iparts {
            let (sums, g) = part?;
            ini.ic_u += sums.ic_u;
            ini.ic_phi += sums.ic_phi;
            add_assign(&mut grad, &g);
        }

        let b = assemble_breakdown(&ctx, &int, &bdy, &ini, n_int, n_bdy, n_ini);
        return Ok((b, grad));
    }

    // general two-pass path (L4L2 norms and/or regularizers)
    let parts = parallel::map_chunks(&batch.interior, threads, |chunk| -> Result<_> {
        let mut sums = InteriorSums::new(ctx.slabs);
        let mut bundles = Vec::with_capacity(chunk.len());
        for &point in chunk {
            let jets = src.field_jets(problem, point)?;
            let r = residuals(&jets, problem, Sample::Interior { point });
            sums.add_bundle(&r, ctx.slab_of(point[2]))?;
            if ctx.regs_active {
                sums.add_reg(ctx.system, &jets);
            }
            bundles.push(r);
        }
        Ok((sums, bundles))
    });
    let mut bundles = Vec::with_capacity(n_int);
    for part in parts {
        let (sums, bs) = part?;
        int.merge(&sums);
        bundles.extend(bs);
    }
    let int_bundles = bundles;

    let mut bdy = BoundarySums::new(ctx.slabs);
    let bparts = parallel::map_chunks(&batch.boundary, threads, |chunk| -> Result<_> {
        let mut sums = BoundarySums::new(ctx.slabs);
        let mut bundles = Vec::with_capacity(chunk.len());
        for bs in chunk {
            let jets = src.field_jets(problem, bs.point)?;
            let r = residuals(
                &jets,
                problem,
                Sample::Boundary {
                    point: bs.point,
                    normal: bs.normal,
                },
            );
            sums.add_bundle(&r, ctx.slab_of(bs.point[2]))?;
            bundles.push(r);
        }
        Ok((sums, bundles))
    });
    let mut bdy_bundles = Vec::with_capacity(n_bdy);
    for part in bparts {
        let (sums, bs) = part?;
        bdy.merge(&sums);
        bdy_bundles.extend(bs);
    }

    let mut ini = InitialSums::default();
    let iparts = parallel::map_chunks(&batch.initial, threads, |chunk| -> Result<_> {
        let mut sums = InitialSums::default();
        for &xy in chunk {
            let jets = src.field_jets(problem, [xy[0], xy[1], 0.0])?;
            let r = residuals(&jets, problem, Sample::Initial { xy });
            sums.add_bundle(&r)?;
        }
        Ok(sums)
    });
    for part in iparts {
        let p = part?;
        ini.ic_u += p.ic_u;
        ini.ic_phi += p.ic_phi;
    }

    let breakdown = assemble_breakdown(&ctx, &int, &bdy, &ini, n_int, n_bdy, n_ini);

    // seed coefficients per term
    let kind = w.norm_kind;
    let mom_c = int.momentum.seed_coef(kind, ctx.area, ctx.t_window, n_int);
    let mur_c = int.mu_rel.seed_coef(kind, ctx.area, ctx.t_window, n_int);
    let ch_c = int.transport.seed_coef(kind, ctx.area, ctx.t_window, n_int);
    let div_c = int.divergence.seed_coef(kind, ctx.area, ctx.t_window, n_int);
    let bphi_c = bdy.bc_phi.seed_coef(kind, ctx.perimeter, ctx.t_window, n_bdy);
    let bmu_c = bdy.bc_mu.seed_coef(kind, ctx.perimeter, ctx.t_window, n_bdy);
    let bu_c = bdy.bc_u.seed_coef(kind, ctx.perimeter, ctx.t_window, n_bdy);

    let meas = ctx.area * ctx.t_window;
    let (reg_a_norm, reg_b_norm) = match ctx.system {
        SystemKind::NSCH => (breakdown.reg_u, breakdown.reg_phi),
        SystemKind::CH => (breakdown.reg_phi, breakdown.reg_mu),
    };
    let coef_reg_a = if w.lambda1 > 0.0 && reg_a_norm > 0.0 {
        w.lambda1 * meas / (n_int as f64 * reg_a_norm)
    } else {
        0.0
    };
    let coef_reg_b = if w.lambda2 > 0.0 && reg_b_norm > 0.0 {
        w.lambda2 * meas / (n_int as f64 * reg_b_norm)
    } else {
        0.0
    };

    let indexed: Vec<usize> = (0..n_int).collect();
    let gparts = parallel::map_chunks(&indexed, threads, |chunk| -> Result<Vec<f64>> {
        let mut g = vec![0.0; n_params];
        for &i in chunk {
            let point = batch.interior[i];
            let (out, tape) = forward_jet_tape(spec, params, point)?;
            let jets = {
                let mut j = FieldJets::from_outputs(spec, &out);
                if ctx.system == SystemKind::CH {
                    let u = problem.carrier.eval(point);
                    j.u1 = Jet2 {
                        value: u[0],
                        ..Jet2::ZERO
                    };
                    j.u2 = Jet2 {
                        value: u[1],
                        ..Jet2::ZERO
                    };
                    j.p = Jet2::ZERO;
                }
                j
            };
            let r = &int_bundles[i];
            let slab = ctx.slab_of(point[2]);
            let seeds = BundleSeeds {
                mom: [
                    w.alpha1 * mom_c.at(slab) * r.r_mom[0],
                    w.alpha1 * mom_c.at(slab) * r.r_mom[1],
                ],
                mu_rel: w.alpha1 * mur_c.at(slab) * r.r_mu,
                ch: w.alpha1 * ch_c.at(slab) * r.r_ch,
                div: if ctx.system == SystemKind::NSCH {
                    w.alpha1 * div_c.at(slab) * r.r_div
                } else {
                    0.0
                },
                ..BundleSeeds::default()
            };
            let mut adj = bundle_adjoint(&ctx, &jets, Sample::Interior { point }, &seeds);
            reg_adjoint(ctx.system, &jets, coef_reg_a, coef_reg_b, &mut adj);
            backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
        }
        Ok(g)
    });
    for part in gparts {
        add_assign(&mut grad, &part?);
    }

    let bindexed: Vec<usize> = (0..n_bdy).collect();
    let gparts = parallel::map_chunks(&bindexed, threads, |chunk| -> Result<Vec<f64>> {
        let mut g = vec![0.0; n_params];
        for &i in chunk {
            let bs = &batch.boundary[i];
            let (out, tape) = forward_jet_tape(spec, params, bs.point)?;
            let jets = FieldJets::from_outputs(spec, &out);
            let r = &bdy_bundles[i];
            let slab = ctx.slab_of(bs.point[2]);
            let seeds = BundleSeeds {
                bc_phi: w.alpha3 * bphi_c.at(slab) * r.bc_phi,
                bc_mu: w.alpha4 * bmu_c.at(slab) * r.bc_mu,
                bc_u: if ctx.bc_u_active {
                    [
                        w.alpha3 * bu_c.at(slab) * r.bc_u[0],
                        w.alpha3 * bu_c.at(slab) * r.bc_u[1],
                    ]
                } else {
                    [0.0, 0.0]
                },
                ..BundleSeeds::default()
            };
            let sample = Sample::Boundary {
                point: bs.point,
                normal: bs.normal,
            };
            let adj = bundle_adjoint(&ctx, &jets, sample, &seeds);
            backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
        }
        Ok(g)
    });
    for part in gparts {
        add_assign(&mut grad, &part?);
    }

    let c_ic = 2.0 * ctx.ic_weight * ctx.area / n_ini as f64;
    let gparts = parallel::map_chunks(&batch.initial, threads, |chunk| -> Result<Vec<f64>> {
        let mut g = vec![0.0; n_params];
        for &xy in chunk {
            let point = [xy[0], xy[1], 0.0];
            let (out, tape) = forward_jet_tape(spec, params, point)?;
            let jets = FieldJets::from_outputs(spec, &out);
            let r = residuals(&jets, problem, Sample::Initial { xy });
            let seeds = BundleSeeds {
                ic_u: if ctx.system == SystemKind::NSCH {
                    [c_ic * r.ic_u[0], c_ic * r.ic_u[1]]
                } else {
                    [0.0, 0.0]
                },
                ic_phi: c_ic * r.ic_phi,
                ..BundleSeeds::default()
            };
            let adj = bundle_adjoint(&ctx, &jets, Sample::Initial { xy }, &seeds);
            backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
        }
        Ok(g)
    });
    for part in gparts {
        add_assign(&mut grad, &part?);
    }

    Ok((breakdown, grad))
}

fn add_assign(acc: &mut [f64], other: &[f64]) {
    for (a, o) in acc.iter_mut().zip(other) {
        *a += o;
    }
}

// fused single-pass chunk processors (L2L2, no regularizers): the seed of
// every residual is a fixed coefficient times the residual itself, so the
// backward pass can run immediately after the forward pass.

type ChunkGrad<T> = Result<(T, Vec<f64>)>;

fn interior_chunk_fused(
    ctx: &Ctx,
    spec: &NetworkSpec,
    params: &ParamVector,
    chunk: &[[f64; 3]],
    coef: f64,
) -> ChunkGrad<InteriorSums> {
    let mut sums = InteriorSums::new(0);
    let mut g = vec![0.0; spec.n_params()];
    let w = ctx.weights;
    for &point in chunk {
        let (out, tape) = forward_jet_tape(spec, params, point)?;
        let mut jets = FieldJets::from_outputs(spec, &out);
        if ctx.system == SystemKind::CH {
            let u = ctx.problem.carrier.eval(point);
            jets.u1 = Jet2 {
                value: u[0],
                ..Jet2::ZERO
            };
            jets.u2 = Jet2 {
                value: u[1],
                ..Jet2::ZERO
            };
            jets.p = Jet2::ZERO;
        }
        let r = residuals(&jets, ctx.problem, Sample::Interior { point });
        sums.add_bundle(&r, 0)?;
        let seeds = BundleSeeds {
            mom: [
                w.alpha1 * coef * r.r_mom[0],
                w.alpha1 * coef * r.r_mom[1],
            ],
            mu_rel: w.alpha1 * coef * r.r_mu,
            ch: w.alpha1 * coef * r.r_ch,
            div: if ctx.system == SystemKind::NSCH {
                w.alpha1 * coef * r.r_div
            } else {
                0.0
            },
            ..BundleSeeds::default()
        };
        let adj = bundle_adjoint(ctx, &jets, Sample::Interior { point }, &seeds);
        backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
    }
    Ok((sums, g))
}

fn boundary_chunk_fused(
    ctx: &Ctx,
    spec: &NetworkSpec,
    params: &ParamVector,
    chunk: &[crate::sampling::BoundarySample],
    coef: f64,
) -> ChunkGrad<BoundarySums> {
    let mut sums = BoundarySums::new(0);
    let mut g = vec![0.0; spec.n_params()];
    let w = ctx.weights;
    for bs in chunk {
        let (out, tape) = forward_jet_tape(spec, params, bs.point)?;
        let jets = FieldJets::from_outputs(spec, &out);
        let sample = Sample::Boundary {
            point: bs.point,
            normal: bs.normal,
        };
        let r = residuals(&jets, ctx.problem, sample);
        sums.add_bundle(&r, 0)?;
        let seeds = BundleSeeds {
            bc_phi: w.alpha3 * coef * r.bc_phi,
            bc_mu: w.alpha4 * coef * r.bc_mu,
            bc_u: if ctx.bc_u_active {
                [w.alpha3 * coef * r.bc_u[0], w.alpha3 * coef * r.bc_u[1]]
            } else {
                [0.0, 0.0]
            },
            ..BundleSeeds::default()
        };
        let adj = bundle_adjoint(ctx, &jets, sample, &seeds);
        backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
    }
    Ok((sums, g))
}

fn initial_chunk_fused(
    ctx: &Ctx,
    spec: &NetworkSpec,
    params: &ParamVector,
    chunk: &[[f64; 2]],
    coef: f64,
) -> ChunkGrad<InitialSums> {
    let mut sums = InitialSums::default();
    let mut g = vec![0.0; spec.n_params()];
    for &xy in chunk {
        let point = [xy[0], xy[1], 0.0];
        let (out, tape) = forward_jet_tape(spec, params, point)?;
        let jets = FieldJets::from_outputs(spec, &out);
        let r = residuals(&jets, ctx.problem, Sample::Initial { xy });
        sums.add_bundle(&r)?;
        let seeds = BundleSeeds {
            ic_u: if ctx.system == SystemKind::NSCH {
                [coef * r.ic_u[0], coef * r.ic_u[1]]
            } else {
                [0.0, 0.0]
            },
            ic_phi: coef * r.ic_phi,
            ..BundleSeeds::default()
        };
        let adj = bundle_adjoint(ctx, &jets, Sample::Initial { xy }, &seeds);
        backward_jet(spec, params, &tape, &adj.to_outputs(spec), &mut g);
    }
    Ok((sums, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netjet::{fd, init_params};
    use crate::problems::{CarrierVelocity, RectDomain};
    use crate::sampling::{sample_batch, BatchCounts};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_problem() -> ProblemConfig {
        ProblemConfig::manufactured_nsch_toy()
    }

    fn nsch_spec(widths: &[usize]) -> NetworkSpec {
        let mut w = widths.to_vec();
        w.push(5);
        NetworkSpec::new(
            w,
            vec![
                OutputName::U1,
                OutputName::U2,
                OutputName::Phi,
                OutputName::Mu,
                OutputName::P,
            ],
            false,
        )
        .unwrap()
    }

    fn ch_spec(widths: &[usize]) -> NetworkSpec {
        let mut w = widths.to_vec();
        w.push(2);
        NetworkSpec::new(w, vec![OutputName::Phi, OutputName::Mu], false).unwrap()
    }

    fn toy_batch(counts: (usize, usize, usize), seed: u64) -> SampleBatch {
        sample_batch(
            &RectDomain::unit_square(2.0),
            BatchCounts {
                interior: counts.0,
                boundary: counts.1,
                initial: counts.2,
            },
            seed,
        )
        .unwrap()
    }

    fn bundle_max_abs(r: &ResidualBundle) -> f64 {
        [
            r.r_mom[0], r.r_mom[1], r.r_mu, r.r_ch, r.r_div, r.bc_phi, r.bc_mu, r.bc_u[0],
            r.bc_u[1], r.ic_u[0], r.ic_u[1], r.ic_phi,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn residuals_vanish_on_exact_fields() {
        let problem = toy_problem();
        let ms = ManufacturedSolution;
        let src = JetSource::Exact(&ms);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), 2.0 * rng.gen::<f64>()];
            let jets = src.field_jets(&problem, p).unwrap();
            let r = residuals_nsch(&jets, &problem, Sample::Interior { point: p });
            assert!(bundle_max_abs(&r) <= 1e-10, "interior {p:?}: {r:?}");
        }
        // boundary and initial identities
        let batch = toy_batch((4, 300, 300), 3);
        for bs in &batch.boundary {
            let jets = src.field_jets(&problem, bs.point).unwrap();
            let r = residuals_nsch(
                &jets,
                &problem,
                Sample::Boundary {
                    point: bs.point,
                    normal: bs.normal,
                },
            );
            assert!(bundle_max_abs(&r) <= 1e-10);
        }
        for &xy in &batch.initial {
            let jets = src.field_jets(&problem, [xy[0], xy[1], 0.0]).unwrap();
            let r = residuals_nsch(&jets, &problem, Sample::Initial { xy });
            assert!(bundle_max_abs(&r) <= 1e-10);
        }
    }

    #[test]
    fn ch_residuals_vanish_on_exact_fields_with_rotation_carrier() {
        let mut problem = toy_problem();
        problem.system = SystemKind::CH;
        problem.carrier = CarrierVelocity::ManufacturedRotation;
        let ms = ManufacturedSolution;
        let src = JetSource::Exact(&ms);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), 2.0 * rng.gen::<f64>()];
            let jets = src.field_jets(&problem, p).unwrap();
            let r = residuals_ch(&jets, &problem, Sample::Interior { point: p });
            assert!(bundle_max_abs(&r) <= 1e-10, "{p:?}: {r:?}");
        }
    }

    #[test]
    fn zero_network_residuals_equal_negative_forcing() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 8]);
        let params = ParamVector::zeros(&spec);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let p = [0.3, 0.8, 1.4];
        let jets = src.field_jets(&problem, p).unwrap();
        let r = residuals_nsch(&jets, &problem, Sample::Interior { point: p });
        let (g_u, g_phi) = problem.forcing(p);
        assert_eq!(r.r_mom[0], -g_u[0]);
        assert_eq!(r.r_mom[1], -g_u[1]);
        assert_eq!(r.r_ch, -g_phi);
        assert_eq!(r.r_mu, 0.0); // Psi'(0) = 0
        assert_eq!(r.r_div, 0.0);
        // manufactured initial data vanish, so the zero net matches them
        let ri = residuals_nsch(&jets, &problem, Sample::Initial { xy: [0.3, 0.8] });
        assert_eq!(ri.ic_u, [0.0, 0.0]);
        assert_eq!(ri.ic_phi, 0.0);
    }

    #[test]
    fn ch_zero_network_and_constant_fields() {
        let mut problem = toy_problem();
        problem.system = SystemKind::CH;
        let spec = ch_spec(&[3, 6]);
        let params = ParamVector::zeros(&spec);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let p = [0.5, 0.25, 0.8];
        let jets = src.field_jets(&problem, p).unwrap();
        let r = residuals_ch(&jets, &problem, Sample::Interior { point: p });
        let (_, g_phi) = problem.forcing(p);
        assert_eq!(r.r_ch, -g_phi);
        assert_eq!(r.r_mu, 0.0);

        // physical mode, zero carrier, constant outputs: transport vanishes
        problem.mode = ProblemMode::Physical;
        problem.carrier = CarrierVelocity::Zero;
        let mut params = ParamVector::zeros(&spec);
        {
            // set output biases: phi = c, mu = arbitrary constant
            let n = params.len();
            params.values_mut()[n - 2] = 0.7;
            params.values_mut()[n - 1] = -0.3;
        }
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let jets = src.field_jets(&problem, p).unwrap();
        let r = residuals_ch(&jets, &problem, Sample::Interior { point: p });
        assert_eq!(r.r_ch, 0.0);
        // mu relation sees the constants: -0.3 - Psi'(0.7)
        let expect = -0.3 - problem.potential.dpsi(0.7);
        assert!((r.r_mu - expect).abs() < 1e-15);
    }

    #[test]
    fn empirical_norm_constant_field() {
        // f = 1 on [0,1]^2 x (0,2): L2L2 norm sqrt(2), exactly
        let samples: Vec<FieldSample> = (0..100)
            .map(|i| FieldSample::value_only(1.0, 0.02 * i as f64))
            .collect();
        let n = empirical_norm(&samples, NormEval::L2L2, 1.0, 2.0).unwrap();
        assert_eq!(n, 2.0f64.sqrt());
        // L4L2 with any slab count: per-slab norm 1, total 2^(1/4)
        let n4 = empirical_norm(&samples, NormEval::L4L2 { slabs: 4 }, 1.0, 2.0).unwrap();
        assert!((n4 - 2.0f64.powf(0.25)).abs() < 1e-12);
        // instantaneous L2 over the unit square
        let n0 = empirical_norm(&samples, NormEval::L2L2, 1.0, 0.0).unwrap();
        assert_eq!(n0, 1.0);
    }

    #[test]
    fn empirical_norm_linear_field_converges() {
        // f = x1 on the unit square over (0,2): ||f||^2 = 2/3
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let samples: Vec<FieldSample> = (0..n)
            .map(|_| FieldSample::value_only(rng.gen::<f64>(), 2.0 * rng.gen::<f64>()))
            .collect();
        let est = empirical_norm(&samples, NormEval::L2L2, 1.0, 2.0).unwrap();
        let exact = (2.0f64 / 3.0).sqrt();
        // std of x^2 under U(0,1) is sqrt(4/45); SE of the squared-norm
        // estimate ~ 2 sqrt(4/45)/sqrt(n); propagate through sqrt
        let se_sq = 2.0 * (4.0f64 / 45.0).sqrt() / (n as f64).sqrt();
        let se = se_sq / (2.0 * exact);
        assert!(
            (est - exact).abs() < 3.0 * se,
            "est {est}, exact {exact}, 3se {}",
            3.0 * se
        );
    }

    #[test]
    fn empirical_norm_rejects_empty() {
        assert!(empirical_norm(&[], NormEval::L2L2, 1.0, 1.0).is_err());
    }

    #[test]
    fn empirical_norm_h1_includes_gradient() {
        let samples = vec![FieldSample {
            value: 1.0,
            grad: [2.0, 2.0],
            t: 0.5,
        }];
        let n = empirical_norm(&samples, NormEval::L2H1, 1.0, 1.0).unwrap();
        assert!((n - 3.0).abs() < 1e-15); // sqrt(1 + 4 + 4)
    }

    #[test]
    fn whitebox_empirical_loss_is_tiny() {
        let problem = toy_problem();
        let ms = ManufacturedSolution;
        let src = JetSource::Exact(&ms);
        let batch = toy_batch((1000, 200, 200), 5);
        let weights = LossWeights::default();
        let (total, b) = empirical_loss(&src, &batch, &weights, &problem).unwrap();
        assert!(total <= 1e-8, "total = {total:e}, breakdown {b:?}");
    }

    #[test]
    fn ch_whitebox_loss_is_tiny_under_l4l2() {
        let mut problem = toy_problem();
        problem.system = SystemKind::CH;
        problem.carrier = CarrierVelocity::ManufacturedRotation;
        let ms = ManufacturedSolution;
        let src = JetSource::Exact(&ms);
        let batch = toy_batch((800, 200, 200), 6);
        let mut weights = LossWeights::default();
        weights.norm_kind = NormKind::L4L2;
        weights.k_t = 8;
        let (total, _) = empirical_loss(&src, &batch, &weights, &problem).unwrap();
        assert!(total <= 1e-8, "CH white-box total = {total:e}");
    }

    #[test]
    fn zero_network_loss_matches_forcing_quadrature() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 4]);
        let params = ParamVector::zeros(&spec);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let batch = toy_batch((100_000, 64, 64), 23);
        let weights = LossWeights::default();
        let (_, b) = empirical_loss(&src, &batch, &weights, &problem).unwrap();

        // Simpson quadrature of ||g_u||^2 and ||g_phi||^2 over the domain
        let nodes = 33usize;
        let weight_1d = |i: usize| -> f64 {
            if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let (mut q_mom, mut q_phi) = (0.0, 0.0);
        let ms = ManufacturedSolution;
        for i in 0..nodes {
            let x = i as f64 / (nodes - 1) as f64;
            for j in 0..nodes {
                let y = j as f64 / (nodes - 1) as f64;
                for k in 0..nodes {
                    let t = 2.0 * k as f64 / (nodes - 1) as f64;
                    let w = weight_1d(i) * weight_1d(j) * weight_1d(k);
                    let (g_u, g_phi) = ms.forcing([x, y, t], &problem.potential);
                    q_mom += w * (g_u[0] * g_u[0] + g_u[1] * g_u[1]);
                    q_phi += w * g_phi * g_phi;
                }
            }
        }
        let h3 = (1.0 / (nodes - 1) as f64).powi(2) * (2.0 / (nodes - 1) as f64) / 27.0;
        q_mom *= h3;
        q_phi *= h3;

        assert!(
            (b.momentum - q_mom).abs() / q_mom < 0.03,
            "momentum {} vs quadrature {}",
            b.momentum,
            q_mom
        );
        assert!(
            (b.transport - q_phi).abs() / q_phi < 0.03,
            "transport {} vs quadrature {}",
            b.transport,
            q_phi
        );
        assert_eq!(b.mu_relation, 0.0);
        assert_eq!(b.divergence, 0.0);
        assert_eq!(b.ic_u, 0.0);
        assert_eq!(b.ic_phi, 0.0);
    }

    #[test]
    fn doubling_w_ic_doubles_only_ic_contribution() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 6, 6]);
        let params = init_params(&spec, 3);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let batch = toy_batch((128, 64, 64), 7);
        let w1 = LossWeights::default();
        let mut w2 = w1;
        w2.w_ic = 2.0 * w1.w_ic;
        let (t1, b1) = empirical_loss(&src, &batch, &w1, &problem).unwrap();
        let (t2, b2) = empirical_loss(&src, &batch, &w2, &problem).unwrap();
        let ic1 = w1.w_ic * (b1.ic_u + b1.ic_phi);
        assert!((t2 - t1 - ic1).abs() < 1e-9 * t1.max(1.0));
        assert_eq!(b1.ic_u, b2.ic_u);
        assert_eq!(b1.momentum, b2.momentum);
    }

    #[test]
    fn breakdown_total_equals_weighted_sum() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 8, 8]);
        let params = init_params(&spec, 9);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let batch = toy_batch((200, 100, 100), 31);
        let mut weights = LossWeights::default();
        weights.alpha1 = 0.7;
        weights.alpha3 = 2.5;
        weights.lambda1 = 0.01;
        weights.lambda2 = 0.02;
        let (total, b) = empirical_loss(&src, &batch, &weights, &problem).unwrap();
        let recomputed = weights.alpha1
            * (b.momentum + b.mu_relation + b.transport + b.divergence)
            + weights.alpha2 * weights.w_ic * (b.ic_u + b.ic_phi)
            + weights.alpha3 * (b.bc_phi + b.bc_u)
            + weights.alpha4 * b.bc_mu
            + weights.lambda1 * b.reg_u
            + weights.lambda2 * b.reg_phi;
        assert!((total - recomputed).abs() <= 1e-12 * recomputed.abs());
        assert!(total >= 0.0);
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_breakdowns() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 10, 10]);
        let params = init_params(&spec, 4);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let weights = LossWeights::default();
        let b1 = {
            let batch = toy_batch((300, 100, 50), 77);
            empirical_loss(&src, &batch, &weights, &problem).unwrap().1
        };
        let b2 = {
            let batch = toy_batch((300, 100, 50), 77);
            empirical_loss(&src, &batch, &weights, &problem).unwrap().1
        };
        assert_eq!(b1, b2);
    }

    fn check_grad_against_fd(
        spec: &NetworkSpec,
        params: &ParamVector,
        batch: &SampleBatch,
        weights: &LossWeights,
        problem: &ProblemConfig,
    ) {
        let (_, grad) = loss_grad(spec, params, batch, weights, problem).unwrap();
        let f = |values: &[f64]| -> f64 {
            let p = ParamVector::from_values(spec, values.to_vec()).unwrap();
            let src = JetSource::Network {
                spec,
                params: &p,
            };
            empirical_loss(&src, batch, weights, problem).unwrap().0
        };
        let fd_grad = fd::grad_central(f, params.values(), 1e-5);
        let mut checked = 0;
        for (i, (g, fdv)) in grad.iter().zip(&fd_grad).enumerate() {
            if g.abs() > 1e-8 {
                let rel = (g - fdv).abs() / g.abs().max(fdv.abs());
                assert!(
                    rel <= 1e-4,
                    "param {i}: analytic {g:.8e} vs fd {fdv:.8e} (rel {rel:.2e})"
                );
                checked += 1;
            }
        }
        assert!(checked > spec.n_params() / 2, "too few informative components");
    }

    #[test]
    fn loss_grad_matches_fd_on_toy_nsch() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 8]); // 77 params
        let params = init_params(&spec, 15);
        let batch = toy_batch((48, 24, 16), 8);
        let weights = LossWeights::default();
        check_grad_against_fd(&spec, &params, &batch, &weights, &problem);
    }

    #[test]
    fn loss_grad_matches_fd_with_l4l2_and_regularizers() {
        let mut problem = toy_problem();
        problem.system = SystemKind::CH;
        problem.carrier = CarrierVelocity::ManufacturedRotation;
        let spec = ch_spec(&[3, 7]);
        let params = init_params(&spec, 25);
        let batch = toy_batch((64, 32, 16), 9);
        let mut weights = LossWeights::default();
        weights.norm_kind = NormKind::L4L2;
        weights.k_t = 4;
        weights.lambda1 = 0.05;
        weights.lambda2 = 0.03;
        weights.alpha1 = 1.5;
        weights.alpha3 = 0.5;
        check_grad_against_fd(&spec, &params, &batch, &weights, &problem);
    }

    #[test]
    fn loss_grad_matches_fd_nsch_varying_viscosity_clamped_phi() {
        let mut problem = toy_problem();
        problem.viscosity = crate::problems::ViscosityModel { nu1: 0.5, nu2: 2.0 };
        let mut spec = nsch_spec(&[3, 6]);
        spec.clamp_phi = true;
        let params = init_params(&spec, 33);
        let batch = toy_batch((40, 16, 8), 10);
        let weights = LossWeights::default();
        check_grad_against_fd(&spec, &params, &batch, &weights, &problem);
    }

    #[test]
    fn gradient_step_decreases_loss() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 12, 12]);
        let params = init_params(&spec, 2);
        let batch = toy_batch((128, 64, 32), 12);
        let weights = LossWeights::default();
        let (b, grad) = loss_grad(&spec, &params, &batch, &weights, &problem).unwrap();
        assert!(grad.iter().any(|g| g.abs() > 0.0));
        let stepped: Vec<f64> = params
            .values()
            .iter()
            .zip(&grad)
            .map(|(p, g)| p - 1e-6 * g)
            .collect();
        let p2 = ParamVector::from_values(&spec, stepped).unwrap();
        let src = JetSource::Network {
            spec: &spec,
            params: &p2,
        };
        let (t2, _) = empirical_loss(&src, &batch, &weights, &problem).unwrap();
        assert!(t2 < b.total, "loss {} -> {}", b.total, t2);
    }

    #[test]
    fn missing_output_is_reported() {
        let problem = toy_problem();
        let spec = ch_spec(&[3, 4]); // no velocity or pressure outputs
        let params = ParamVector::zeros(&spec);
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let batch = toy_batch((8, 8, 8), 1);
        let weights = LossWeights::default();
        let err = empirical_loss(&src, &batch, &weights, &problem).unwrap_err();
        assert!(matches!(err, Error::MissingOutput(_)));
    }

    #[test]
    fn nonfinite_params_report_offending_term() {
        let problem = toy_problem();
        let spec = nsch_spec(&[3, 4]);
        let mut params = ParamVector::zeros(&spec);
        params.values_mut()[0] = f64::NAN;
        let src = JetSource::Network {
            spec: &spec,
            params: &params,
        };
        let batch = toy_batch((8, 8, 8), 1);
        let weights = LossWeights::default();
        let err = empirical_loss(&src, &batch, &weights, &problem).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }
}
