//! Fully-connected network over (x1, x2, t) and its second-order jet
//! evaluation: every forward pass returns, per output, the value together
//! with first derivatives in all three inputs and the full spatial Hessian.
//! Gradients of scalar losses with respect to the parameters are computed
//! by reverse accumulation over the same layer recurrences.

mod backward;
mod checkpoint;
pub mod fd;
mod forward;

pub use backward::backward_jet;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use forward::{forward_jet, forward_jet_tape, JetTape};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of network inputs: x1, x2, t.
pub const INPUT_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Hyperbolic tangent, the smooth activation used throughout.
    Tanh,
    /// Identity (no activation); used to exercise the affine/polynomial
    /// exactness of the jet recurrences.
    Identity,
}

impl Activation {
    /// Value together with the first three derivatives at `z`.
    #[inline]
    pub fn eval3(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = z.tanh();
                let sp = 1.0 - s * s;
                let spp = -2.0 * s * sp;
                let sppp = -2.0 * sp * (1.0 - 3.0 * s * s);
                (s, sp, spp, sppp)
            }
            Activation::Identity => (z, 1.0, 0.0, 0.0),
        }
    }
}

/// Which physical field an output neuron carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputName {
    U1,
    U2,
    Phi,
    Mu,
    P,
}

impl OutputName {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputName::U1 => "u1",
            OutputName::U2 => "u2",
            OutputName::Phi => "phi",
            OutputName::Mu => "mu",
            OutputName::P => "P",
        }
    }
}

/// Architecture of the feedforward network. `layer_widths` includes the
/// input width as its first entry, so `[3, 32, 32, 5]` is a net with two
/// hidden tanh layers and five outputs; the final layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_names: Vec<OutputName>,
    /// Apply tanh to the phi output so evaluated phi lies in [-1, 1].
    pub clamp_phi: bool,
}

impl NetworkSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        output_names: Vec<OutputName>,
        clamp_phi: bool,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            layer_widths,
            activation: Activation::Tanh,
            output_names,
            clamp_phi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(
                "layer_widths needs the input width and at least one layer".into(),
            ));
        }
        if self.layer_widths[0] != INPUT_DIM {
            return Err(Error::InvalidSpec(format!(
                "first layer width must equal the input dimension {INPUT_DIM}"
            )));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("zero-width layer".into()));
        }
        let out = *self.layer_widths.last().unwrap();
        if out != self.output_names.len() {
            return Err(Error::InvalidSpec(format!(
                "final width {out} != number of output names {}",
                self.output_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.output_names {
            if !seen.insert(*name) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate output name '{}'",
                    name.as_str()
                )));
            }
        }
        if self.clamp_phi && self.output_index(OutputName::Phi).is_none() {
            return Err(Error::InvalidSpec(
                "clamp_phi set but there is no phi output".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Total parameter count: sum over layers of rows*cols + rows.
    pub fn n_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    pub fn output_index(&self, name: OutputName) -> Option<usize> {
        self.output_names.iter().position(|&n| n == name)
    }

    /// (weight offset, bias offset, rows, cols) for layer `l`.
    pub(crate) fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            let (rows, cols) = (self.layer_widths[k + 1], self.layer_widths[k]);
            off += rows * cols + rows;
        }
        let (rows, cols) = (self.layer_widths[l + 1], self.layer_widths[l]);
        (off, off + rows * cols, rows, cols)
    }
}

/// Flat storage of all weight matrices and bias vectors, layer by layer:
/// row-major A_1, then b_1, then A_2, b_2, ...
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.n_params()],
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_params() {
            return Err(Error::DimensionMismatch {
                got: values.len(),
                want: spec.n_params(),
            });
        }
        Ok(ParamVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.values.len() != spec.n_params() {
            return Err(Error::DimensionMismatch {
                got: self.values.len(),
                want: spec.n_params(),
            });
        }
        Ok(())
    }

    /// Weight matrix and bias slice of layer `l`.
    pub(crate) fn layer(&self, spec: &NetworkSpec, l: usize) -> (&[f64], &[f64], usize, usize) {
        let (w_off, b_off, rows, cols) = spec.layer_offsets(l);
        (
            &self.values[w_off..w_off + rows * cols],
            &self.values[b_off..b_off + rows],
            rows,
            cols,
        )
    }
}

/// Glorot-uniform initialization: weights from
/// U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) per layer,
/// biases exactly zero. Deterministic for a given seed.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.n_params()];
    for l in 0..spec.n_layers() {
        let (w_off, _b_off, rows, cols) = spec.layer_offsets(l);
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for w in &mut values[w_off..w_off + rows * cols] {
            *w = rng.gen_range(-bound..bound);
        }
        // biases stay zero
    }
    ParamVector { values }
}

/// Value, gradient and spatial Hessian of one scalar output at one point.
/// `d1` is (d/dx1, d/dx2, d/dt); `d2` is (d2/dx1dx1, d2/dx1dx2, d2/dx2dx2).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: [f64; 3],
    pub d2: [f64; 3],
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 {
        value: 0.0,
        d1: [0.0; 3],
        d2: [0.0; 3],
    };

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d1.iter().all(|v| v.is_finite())
            && self.d2.iter().all(|v| v.is_finite())
    }

    /// Spatial Laplacian d2/dx1dx1 + d2/dx2dx2.
    #[inline]
    pub fn laplacian(&self) -> f64 {
        self.d2[0] + self.d2[2]
    }
}

/// The jets of all five physical fields at one space-time point. Fields a
/// network does not model (e.g. velocity for a CH-only net) are filled in
/// by the caller from the problem configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct FieldJets {
    pub u1: Jet2,
    pub u2: Jet2,
    pub phi: Jet2,
    pub mu: Jet2,
    pub p: Jet2,
}

impl FieldJets {
    /// Scatter per-output jets into named fields.
    pub fn from_outputs(spec: &NetworkSpec, jets: &[Jet2]) -> FieldJets {
        let mut f = FieldJets::default();
        for (i, name) in spec.output_names.iter().enumerate() {
            match name {
                OutputName::U1 => f.u1 = jets[i],
                OutputName::U2 => f.u2 = jets[i],
                OutputName::Phi => f.phi = jets[i],
                OutputName::Mu => f.mu = jets[i],
                OutputName::P => f.p = jets[i],
            }
        }
        f
    }

    /// Gather named adjoints back into per-output order, dropping fields
    /// that are not network outputs.
    pub fn to_outputs(&self, spec: &NetworkSpec) -> Vec<Jet2> {
        spec.output_names
            .iter()
            .map(|name| match name {
                OutputName::U1 => self.u1,
                OutputName::U2 => self.u2,
                OutputName::Phi => self.phi,
                OutputName::Mu => self.mu,
                OutputName::P => self.p,
            })
            .collect()
    }
}
