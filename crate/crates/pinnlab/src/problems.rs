//! Problem definitions: the rectangular space-time domain, the Landau
//! potential, the two-phase viscosity model, the closed-form manufactured
//! solution with the forcing fields that make it exact, and the problem
//! configuration shared by sampling, loss assembly and training.

use crate::error::{Error, Result};
use crate::netjet::{FieldJets, Jet2};
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle `[x_min,x_max] x [y_min,y_max]` simulated over
/// `(0, t_final)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub t_final: f64,
}

impl RectDomain {
    pub fn unit_square(t_final: f64) -> Self {
        RectDomain {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            t_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max && self.t_final > 0.0) {
            return Err(Error::ZeroMeasureDomain);
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.x_max - self.x_min) + (self.y_max - self.y_min))
    }

    /// Copy with the time extent truncated to `t_hi` (expanding-window
    /// training evaluates everything on such truncations).
    pub fn with_time(&self, t_hi: f64) -> RectDomain {
        RectDomain {
            t_final: t_hi,
            ..*self
        }
    }
}

/// Free-energy density. Only the Landau double well is implemented; the
/// enum is the configuration hook for other admissible potentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Potential {
    Landau,
}

impl Potential {
    /// (Psi, Psi', Psi'') at `s`. For Landau: Psi(s) = (s^2-1)^2 / 4.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        match self {
            Potential::Landau => {
                let q = s * s - 1.0;
                (0.25 * q * q, s * s * s - s, 3.0 * s * s - 1.0)
            }
        }
    }

    pub fn dpsi(&self, s: f64) -> f64 {
        self.eval(s).1
    }

    pub fn ddpsi(&self, s: f64) -> f64 {
        self.eval(s).2
    }

    /// Third derivative, needed for second spatial derivatives of mu.
    pub fn d3psi(&self, s: f64) -> f64 {
        match self {
            Potential::Landau => 6.0 * s,
        }
    }
}

/// Two-phase kinematic viscosity, affine in the order parameter:
/// nu(z) = nu1 (1+z)/2 + nu2 (1-z)/2. Constant when nu1 == nu2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscosityModel {
    pub nu1: f64,
    pub nu2: f64,
}

impl ViscosityModel {
    pub fn constant(nu: f64) -> Self {
        ViscosityModel { nu1: nu, nu2: nu }
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.nu1 * (1.0 + z) / 2.0 + self.nu2 * (1.0 - z) / 2.0
    }

    /// d nu / dz, constant for the affine model.
    pub fn slope(&self) -> f64 {
        (self.nu1 - self.nu2) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu1 > 0.0 && self.nu2 > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(vec![
                "problem.viscosity: nu1 and nu2 must be positive".into(),
            ]))
        }
    }
}

/// The closed-form fields u = (-x2 t, x1 t), phi = sin(x1 t) + sin(x2 t),
/// P = 0, mu = -lap(phi) + Psi'(phi), together with the forcing terms that
/// make them an exact solution. This phi satisfies lap(phi) = -t^2 phi,
/// and this u has identically vanishing symmetric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManufacturedSolution;

impl ManufacturedSolution {
    pub fn velocity(&self, p: [f64; 3]) -> [f64; 2] {
        [-p[1] * p[2], p[0] * p[2]]
    }

    pub fn phi(&self, p: [f64; 3]) -> f64 {
        // via the jet so every caller sees one code path bitwise (the
        // compiler may lower an isolated sin differently than sin+cos)
        self.phi_jet(p).value
    }

    pub fn pressure(&self, _p: [f64; 3]) -> f64 {
        0.0
    }

    pub fn mu(&self, p: [f64; 3]) -> f64 {
        self.mu_jet(p, &Potential::Landau).value
    }

    pub fn phi_jet(&self, p: [f64; 3]) -> Jet2 {
        let [x1, x2, t] = p;
        // plain sin/cos so the jet value is bitwise equal to phi()
        let (s1, c1) = ((x1 * t).sin(), (x1 * t).cos());
        let (s2, c2) = ((x2 * t).sin(), (x2 * t).cos());
        Jet2 {
            value: s1 + s2,
            d1: [t * c1, t * c2, x1 * c1 + x2 * c2],
            d2: [-t * t * s1, 0.0, -t * t * s2],
        }
    }

    fn mu_jet(&self, p: [f64; 3], potential: &Potential) -> Jet2 {
        let t = p[2];
        let phi = self.phi_jet(p);
        let dd = potential.ddpsi(phi.value);
        let d3 = potential.d3psi(phi.value);
        // -lap(phi) = t^2 phi for this solution, so mu = t^2 phi + Psi'(phi)
        let chain = t * t + dd;
        Jet2 {
            value: t * t * phi.value + potential.dpsi(phi.value),
            d1: [
                chain * phi.d1[0],
                chain * phi.d1[1],
                2.0 * t * phi.value + chain * phi.d1[2],
            ],
            d2: [
                chain * phi.d2[0] + d3 * phi.d1[0] * phi.d1[0],
                chain * phi.d2[1] + d3 * phi.d1[0] * phi.d1[1],
                chain * phi.d2[2] + d3 * phi.d1[1] * phi.d1[1],
            ],
        }
    }

    /// All fields and every derivative the residuals consume, as jets.
    pub fn field_jets(&self, p: [f64; 3], potential: &Potential) -> FieldJets {
        let [x1, x2, t] = p;
        let u1 = Jet2 {
            value: -x2 * t,
            d1: [0.0, -t, -x2],
            d2: [0.0; 3],
        };
        let u2 = Jet2 {
            value: x1 * t,
            d1: [t, 0.0, x1],
            d2: [0.0; 3],
        };
        FieldJets {
            u1,
            u2,
            phi: self.phi_jet(p),
            mu: self.mu_jet(p, potential),
            p: Jet2::ZERO,
        }
    }

    /// Forcing fields (g_u, g_phi) defined so the exact fields solve the
    /// forced system: g_u = du/dt + (u.grad)u - div(nu Du) + grad P
    /// - mu grad phi and g_phi = dphi/dt + u.grad phi - lap(mu), evaluated
    /// on the exact solution. The viscous and pressure terms vanish
    /// identically here (Du = 0, P = 0).
    pub fn forcing(&self, p: [f64; 3], potential: &Potential) -> ([f64; 2], f64) {
        let [x1, x2, t] = p;
        let phi = self.phi_jet(p);
        let mu = self.mu_jet(p, potential);
        let g_u = [
            -x2 - x1 * t * t - mu.value * phi.d1[0],
            x1 - x2 * t * t - mu.value * phi.d1[1],
        ];
        let u = self.velocity(p);
        let g_phi = phi.d1[2] + u[0] * phi.d1[0] + u[1] * phi.d1[1] - mu.laplacian();
        (g_u, g_phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    CH,
    NSCH,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemMode {
    Manufactured,
    Physical,
}

/// Prescribed transport velocity for the CH system, where u is a parameter
/// of the equation rather than an unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CarrierVelocity {
    Zero,
    /// The manufactured rotational field (-x2 t, x1 t).
    ManufacturedRotation,
    Constant { ux: f64, uy: f64 },
}

impl CarrierVelocity {
    pub fn eval(&self, p: [f64; 3]) -> [f64; 2] {
        match self {
            CarrierVelocity::Zero => [0.0, 0.0],
            CarrierVelocity::ManufacturedRotation => [-p[1] * p[2], p[0] * p[2]],
            CarrierVelocity::Constant { ux, uy } => [*ux, *uy],
        }
    }
}

/// Initial order parameter for physical mode. The cosine profile has zero
/// normal derivative on every face of a rectangle, so it is compatible
/// with the homogeneous Neumann conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InitialPhi {
    Zero,
    Cosine { amplitude: f64 },
}

impl InitialPhi {
    pub fn eval(&self, domain: &RectDomain, xy: [f64; 2]) -> f64 {
        match self {
            InitialPhi::Zero => 0.0,
            InitialPhi::Cosine { amplitude } => {
                let px = std::f64::consts::PI * (xy[0] - domain.x_min) / (domain.x_max - domain.x_min);
                let py = std::f64::consts::PI * (xy[1] - domain.y_min) / (domain.y_max - domain.y_min);
                amplitude * px.cos() * py.cos()
            }
        }
    }
}

/// Trace data the boundary penalties compare against. Manufactured mode
/// uses the exact traces (the manufactured solution violates the
/// homogeneous conditions); physical mode uses the homogeneous ones.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryTargets {
    pub u: [f64; 2],
    pub dphi_dn: f64,
    pub dmu_dn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub system: SystemKind,
    pub mode: ProblemMode,
    pub domain: RectDomain,
    pub potential: Potential,
    pub viscosity: ViscosityModel,
    pub carrier: CarrierVelocity,
    pub phi0: InitialPhi,
}

impl ProblemConfig {
    /// The toy problem: NSCH on the unit square up to T = 2, unit constant
    /// viscosity, Landau potential, manufactured fields and forcings.
    pub fn manufactured_nsch_toy() -> Self {
        ProblemConfig {
            system: SystemKind::NSCH,
            mode: ProblemMode::Manufactured,
            domain: RectDomain::unit_square(2.0),
            potential: Potential::Landau,
            viscosity: ViscosityModel::constant(1.0),
            carrier: CarrierVelocity::ManufacturedRotation,
            phi0: InitialPhi::Zero,
        }
    }

    pub fn exact(&self) -> Option<ManufacturedSolution> {
        match self.mode {
            ProblemMode::Manufactured => Some(ManufacturedSolution),
            ProblemMode::Physical => None,
        }
    }

    /// (g_u, g_phi); identically zero in physical mode.
    pub fn forcing(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        match self.mode {
            ProblemMode::Manufactured => ManufacturedSolution.forcing(p, &self.potential),
            ProblemMode::Physical => ([0.0, 0.0], 0.0),
        }
    }

    pub fn initial_u(&self, xy: [f64; 2]) -> [f64; 2] {
        match self.mode {
            ProblemMode::Manufactured => ManufacturedSolution.velocity([xy[0], xy[1], 0.0]),
            ProblemMode::Physical => [0.0, 0.0],
        }
    }

    pub fn initial_phi(&self, xy: [f64; 2]) -> f64 {
        match self.mode {
            ProblemMode::Manufactured => ManufacturedSolution.phi([xy[0], xy[1], 0.0]),
            ProblemMode::Physical => self.phi0.eval(&self.domain, xy),
        }
    }

    pub fn boundary_targets(&self, p: [f64; 3], normal: [f64; 2]) -> BoundaryTargets {
        match self.mode {
            ProblemMode::Manufactured => {
                let ms = ManufacturedSolution;
                let phi = ms.phi_jet(p);
                let mu = ms.mu_jet(p, &self.potential);
                BoundaryTargets {
                    u: ms.velocity(p),
                    dphi_dn: phi.d1[0] * normal[0] + phi.d1[1] * normal[1],
                    dmu_dn: mu.d1[0] * normal[0] + mu.d1[1] * normal[1],
                }
            }
            ProblemMode::Physical => BoundaryTargets {
                u: [0.0, 0.0],
                dphi_dn: 0.0,
                dmu_dn: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.viscosity.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netjet::fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn landau_potential_values() {
        let p = Potential::Landau;
        assert_eq!(p.eval(0.0), (0.25, 0.0, -1.0));
        assert_eq!(p.eval(1.0), (0.0, 0.0, 2.0));
        assert_eq!(p.eval(-1.0).0, 0.0);
        assert_eq!(p.eval(2.0), (2.25, 6.0, 11.0));
    }

    #[test]
    fn landau_dpsi_is_odd() {
        let p = Potential::Landau;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = rng.gen_range(-3.0..3.0);
            assert_eq!(p.dpsi(s), -p.dpsi(-s));
        }
    }

    #[test]
    fn viscosity_endpoints_and_midpoint() {
        let m = ViscosityModel { nu1: 2.0, nu2: 4.0 };
        assert_eq!(m.eval(1.0), 2.0);
        assert_eq!(m.eval(-1.0), 4.0);
        assert_eq!(m.eval(0.0), 3.0);
        for z in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let v = m.eval(z);
            assert!((2.0..=4.0).contains(&v));
        }
    }

    #[test]
    fn exact_fields_at_t_zero_vanish() {
        let ms = ManufacturedSolution;
        for &(x1, x2) in &[(0.0, 0.0), (0.7, 0.3), (1.0, 1.0)] {
            assert_eq!(ms.velocity([x1, x2, 0.0]), [0.0, 0.0]);
            assert_eq!(ms.phi([x1, x2, 0.0]), 0.0);
        }
    }

    #[test]
    fn exact_values_at_reference_point() {
        let ms = ManufacturedSolution;
        let p = [1.0, 0.0, 1.0];
        assert_eq!(ms.velocity(p), [0.0, 1.0]);
        let phi = ms.phi(p);
        assert!((phi - 0.841471).abs() < 1e-6);
        // at t=1 the -lap(phi) and -phi parts of mu cancel, leaving phi^3
        assert!((ms.mu(p) - 0.595823).abs() < 1e-6);
    }

    #[test]
    fn velocity_is_divergence_free_with_zero_symmetric_gradient() {
        let potential = Potential::Landau;
        let ms = ManufacturedSolution;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), 2.0 * rng.gen::<f64>()];
            let jets = ms.field_jets(p, &potential);
            assert_eq!(jets.u1.d1[0] + jets.u2.d1[1], 0.0);
            // Du = 0: diagonal entries are zero and the off-diagonal pair cancels
            assert_eq!(jets.u1.d1[0], 0.0);
            assert_eq!(jets.u2.d1[1], 0.0);
            assert_eq!(jets.u1.d1[1] + jets.u2.d1[0], 0.0);
        }
    }

    #[test]
    fn exact_jets_match_finite_differences() {
        let potential = Potential::Landau;
        let ms = ManufacturedSolution;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..40 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), 0.1 + 1.9 * rng.gen::<f64>()];
            let jets = ms.field_jets(p, &potential);
            let checks: [(&str, Jet2, Box<dyn Fn([f64; 3]) -> f64>); 3] = [
                ("phi", jets.phi, Box::new(|q| ms.phi(q))),
                ("mu", jets.mu, Box::new(move |q| ms.mu(q))),
                ("u1", jets.u1, Box::new(|q| ms.velocity(q)[0])),
            ];
            for (name, jet, f) in checks {
                let fd_jet = fd::jet_central4(f, p, 1e-3);
                let err = fd::jet_rel_error(&jet, &fd_jet);
                assert!(err < 1e-7, "{name}: rel err {err:.3e}");
            }
        }
    }

    #[test]
    fn forcing_vanishes_at_origin() {
        let (g_u, g_phi) = ManufacturedSolution.forcing([0.0, 0.0, 1.3], &Potential::Landau);
        assert_eq!(g_u, [0.0, 0.0]);
        assert_eq!(g_phi, 0.0);
    }

    #[test]
    fn forcing_at_reference_point() {
        let (g_u, g_phi) = ManufacturedSolution.forcing([1.0, 0.0, 1.0], &Potential::Landau);
        // exact: g_u1 = -1 - sin(1)^3 cos(1) = -1.3219247,
        // g_u2 = 1 - sin(1)^3 = 0.4041768, g_phi = -3.1949404
        assert!((g_u[0] - (-1.3219247)).abs() < 1e-6, "g_u1 = {}", g_u[0]);
        assert!((g_u[1] - 0.4041768).abs() < 1e-6, "g_u2 = {}", g_u[1]);
        assert!((g_phi - (-3.1949404)).abs() < 1e-6, "g_phi = {g_phi}");
    }

    /// Finite-difference forcing from the exact field evaluators at step h:
    /// every derivative in the definition of (g_u, g_phi) replaced by a
    /// fourth-order central stencil.
    fn fd_forcing(ms: &ManufacturedSolution, p: [f64; 3], h: f64) -> ([f64; 2], f64) {
        let u1 = fd::jet_central4(|q| ms.velocity(q)[0], p, h);
        let u2 = fd::jet_central4(|q| ms.velocity(q)[1], p, h);
        let phi = fd::jet_central4(|q| ms.phi(q), p, h);
        let mu = fd::jet_central4(|q| ms.mu(q), p, h);
        let uv = ms.velocity(p);
        // constant unit viscosity: div(nu Du)_i = (lap u_i + d_i(div u)) / 2
        let div_u_dx = u1.d2[0] + u2.d2[1];
        let div_u_dy = u1.d2[1] + u2.d2[2];
        let visc = [
            0.5 * (u1.laplacian() + div_u_dx),
            0.5 * (u2.laplacian() + div_u_dy),
        ];
        let g_u = [
            u1.d1[2] + uv[0] * u1.d1[0] + uv[1] * u1.d1[1] - visc[0] - mu.value * phi.d1[0],
            u2.d1[2] + uv[0] * u2.d1[0] + uv[1] * u2.d1[1] - visc[1] - mu.value * phi.d1[1],
        ];
        let g_phi = phi.d1[2] + uv[0] * phi.d1[0] + uv[1] * phi.d1[1] - mu.laplacian();
        (g_u, g_phi)
    }

    /// Forcing formulas against the finite-difference oracle applied to the
    /// exact field evaluators, Richardson-extrapolated over steps (h, h/2)
    /// to keep truncation below the 1e-8 budget at quasi-random points.
    #[test]
    fn forcing_matches_fd_oracle() {
        let potential = Potential::Landau;
        let ms = ManufacturedSolution;
        let h = 4e-3;
        // golden-ratio lattice over [0,1]^2 x [0,2]
        let a = [0.7548776662466927, 0.5698402909980532, 0.3414456360386717];
        for i in 0..1000usize {
            let f = i as f64 + 0.5;
            let p = [
                (f * a[0]).fract(),
                (f * a[1]).fract(),
                2.0 * (f * a[2]).fract(),
            ];
            let (gu_h, gphi_h) = fd_forcing(&ms, p, h);
            let (gu_h2, gphi_h2) = fd_forcing(&ms, p, 0.5 * h);
            let g_u_fd = [
                (16.0 * gu_h2[0] - gu_h[0]) / 15.0,
                (16.0 * gu_h2[1] - gu_h[1]) / 15.0,
            ];
            let g_phi_fd = (16.0 * gphi_h2 - gphi_h) / 15.0;

            let (g_u, g_phi) = ms.forcing(p, &potential);
            assert!((g_u[0] - g_u_fd[0]).abs() < 1e-8, "point {p:?}");
            assert!((g_u[1] - g_u_fd[1]).abs() < 1e-8, "point {p:?}");
            assert!((g_phi - g_phi_fd).abs() < 1e-8, "point {p:?}");
        }
    }

    #[test]
    fn physical_mode_has_zero_forcing_and_homogeneous_targets() {
        let mut cfg = ProblemConfig::manufactured_nsch_toy();
        cfg.mode = ProblemMode::Physical;
        let p = [0.3, 0.4, 1.0];
        assert_eq!(cfg.forcing(p), ([0.0, 0.0], 0.0));
        let bt = cfg.boundary_targets(p, [1.0, 0.0]);
        assert_eq!(bt.u, [0.0, 0.0]);
        assert_eq!(bt.dphi_dn, 0.0);
        assert_eq!(bt.dmu_dn, 0.0);
    }

    #[test]
    fn cosine_initial_phi_has_flat_normal_trace() {
        let dom = RectDomain::unit_square(2.0);
        let phi0 = InitialPhi::Cosine { amplitude: 0.5 };
        assert_eq!(phi0.eval(&dom, [0.0, 0.0]), 0.5);
        // normal derivative on x = 0: d/dx of cos(pi x) is -pi sin(pi x) = 0 there
        let h = 1e-6;
        let d = (phi0.eval(&dom, [h, 0.3]) - phi0.eval(&dom, [0.0, 0.3])) / h;
        assert!(d.abs() < 1e-4);
    }
}
