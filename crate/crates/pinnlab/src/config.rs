//! Run configuration: JSON file merged over documented defaults, unknown
//! keys rejected, every violation reported at once, and dotted-path
//! overrides for sweeps and CLI flags.

use crate::error::{Error, Result};
use crate::loss::{LossWeights, NormKind};
use crate::netjet::{NetworkSpec, OutputName};
use crate::problems::{
    CarrierVelocity, InitialPhi, Potential, ProblemConfig, ProblemMode, RectDomain, SystemKind,
    ViscosityModel,
};
use crate::sampling::BatchCounts;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    pub system: SystemKind,
    pub mode: ProblemMode,
    pub domain: RectDomain,
    pub potential: Potential,
    pub viscosity: ViscosityModel,
    pub carrier: CarrierVelocity,
    pub phi0: InitialPhi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    /// Layer widths including the input width 3; the last entry must match
    /// the number of outputs. Filled from the system default when absent.
    pub widths: Option<Vec<usize>>,
    pub clamp_phi: bool,
    pub outputs: Option<Vec<OutputName>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSection {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    /// Time slabs for the L4L2 norm estimate.
    pub k_t: usize,
    /// Draw a fresh batch every this many steps (1 = every step).
    pub resample_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsSection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w_ic: f64,
    pub norm_kind: NormKind,
    pub bc_u_penalty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrPolicy {
    /// Decay every steps_per_segment/2 steps.
    Interval,
    /// Decay when the smoothed loss stops improving for `patience` steps.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSection {
    /// Number of expanding time segments.
    pub segments: usize,
    pub steps_per_segment: usize,
    pub lr0: f64,
    /// Multiplicative decay factor (per interval tick or per plateau).
    pub decay: f64,
    /// Restart the decay schedule at each segment boundary.
    pub lr_restart: bool,
    pub lr_policy: LrPolicy,
    /// Plateau policy: steps without improvement before decaying;
    /// 0 selects steps_per_segment/20 (at least 50).
    pub patience: usize,
    /// Lower bound on the learning rate.
    pub lr_min: f64,
    /// Optional per-segment step counts (length = segments); overrides the
    /// uniform steps_per_segment split. Time windows stay equal; the cited
    /// time-adaptive practice trains early windows only until they settle
    /// and spends the bulk of the budget on the full window.
    pub segment_steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedsSection {
    pub master: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Sample count for Monte Carlo error estimates.
    pub n_error: usize,
    /// Record errors every this many steps (0 disables periodic errors).
    pub error_every: usize,
    /// Interior sample count of the final full-domain loss evaluation.
    pub n_final: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub sampling: SamplingSection,
    pub weights: WeightsSection,
    pub schedule: ScheduleSection,
    pub seeds: SeedsSection,
    /// Descending loss targets; a checkpoint is saved the first time the
    /// training loss crosses each one (during the full-window segment).
    pub loss_ladder: Vec<f64>,
    pub eval: EvalSection,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemSection {
                system: SystemKind::NSCH,
                mode: ProblemMode::Manufactured,
                domain: RectDomain::unit_square(2.0),
                potential: Potential::Landau,
                viscosity: ViscosityModel::constant(1.0),
                carrier: CarrierVelocity::ManufacturedRotation,
                phi0: InitialPhi::Zero,
            },
            network: NetworkSection {
                widths: None,
                clamp_phi: false,
                outputs: None,
            },
            sampling: SamplingSection {
                n_interior: 512,
                n_boundary: 128,
                n_initial: 128,
                k_t: 16,
                resample_every: 1,
            },
            weights: WeightsSection {
                alpha1: 1.0,
                alpha2: 1.0,
                alpha3: 1.0,
                alpha4: 1.0,
                lambda1: 0.0,
                lambda2: 0.0,
                w_ic: 1000.0,
                norm_kind: NormKind::L2L2,
                bc_u_penalty: true,
            },
            schedule: ScheduleSection {
                segments: 4,
                steps_per_segment: 2500,
                lr0: 1e-3,
                decay: 0.5,
                lr_restart: true,
                lr_policy: LrPolicy::Interval,
                patience: 0,
                lr_min: 1e-6,
                segment_steps: None,
            },
            seeds: SeedsSection {
                master: 1,
                eval: 9001,
            },
            loss_ladder: vec![1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001],
            eval: EvalSection {
                n_error: 20_000,
                error_every: 500,
                n_final: 8192,
            },
            out_dir: "runs/latest".into(),
        }
    }
}

impl RunConfig {
    pub fn default_outputs(system: SystemKind) -> Vec<OutputName> {
        match system {
            SystemKind::NSCH => vec![
                OutputName::U1,
                OutputName::U2,
                OutputName::Phi,
                OutputName::Mu,
                OutputName::P,
            ],
            SystemKind::CH => vec![OutputName::Phi, OutputName::Mu],
        }
    }

    /// Fill the system-dependent network defaults in place.
    pub fn resolve(&mut self) {
        if self.network.outputs.is_none() {
            self.network.outputs = Some(Self::default_outputs(self.problem.system));
        }
        if self.network.widths.is_none() {
            let n_out = self.network.outputs.as_ref().unwrap().len();
            self.network.widths = Some(vec![3, 48, 48, 48, n_out]);
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let widths = self
            .network
            .widths
            .clone()
            .unwrap_or_else(|| vec![3, 48, 48, 48, Self::default_outputs(self.problem.system).len()]);
        let outputs = self
            .network
            .outputs
            .clone()
            .unwrap_or_else(|| Self::default_outputs(self.problem.system));
        NetworkSpec::new(widths, outputs, self.network.clamp_phi)
    }

    pub fn problem_config(&self) -> ProblemConfig {
        ProblemConfig {
            system: self.problem.system,
            mode: self.problem.mode,
            domain: self.problem.domain,
            potential: self.problem.potential,
            viscosity: self.problem.viscosity,
            carrier: self.problem.carrier,
            phi0: self.problem.phi0,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.weights.alpha1,
            alpha2: self.weights.alpha2,
            alpha3: self.weights.alpha3,
            alpha4: self.weights.alpha4,
            lambda1: self.weights.lambda1,
            lambda2: self.weights.lambda2,
            w_ic: self.weights.w_ic,
            norm_kind: self.weights.norm_kind,
            k_t: self.sampling.k_t,
            bc_u_penalty: self.weights.bc_u_penalty,
        }
    }

    pub fn batch_counts(&self) -> BatchCounts {
        BatchCounts {
            interior: self.sampling.n_interior,
            boundary: self.sampling.n_boundary,
            initial: self.sampling.n_initial,
        }
    }

    /// Collect every semantic violation, naming the offending keys.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let d = &self.problem.domain;
        if !(d.x_min < d.x_max) {
            errs.push("problem.domain: x_min must be < x_max".into());
        }
        if !(d.y_min < d.y_max) {
            errs.push("problem.domain: y_min must be < y_max".into());
        }
        if !(d.t_final > 0.0) {
            errs.push("problem.domain.t_final: must be positive".into());
        }
        if !(self.problem.viscosity.nu1 > 0.0 && self.problem.viscosity.nu2 > 0.0) {
            errs.push("problem.viscosity: nu1 and nu2 must be positive".into());
        }
        for (name, v) in [
            ("weights.alpha1", self.weights.alpha1),
            ("weights.alpha2", self.weights.alpha2),
            ("weights.alpha3", self.weights.alpha3),
            ("weights.alpha4", self.weights.alpha4),
            ("weights.w_ic", self.weights.w_ic),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("weights.lambda1", self.weights.lambda1),
            ("weights.lambda2", self.weights.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("sampling.n_interior", self.sampling.n_interior),
            ("sampling.n_boundary", self.sampling.n_boundary),
            ("sampling.n_initial", self.sampling.n_initial),
            ("sampling.k_t", self.sampling.k_t),
            ("sampling.resample_every", self.sampling.resample_every),
        ] {
            if v == 0 {
                errs.push(format!("{name}: must be at least 1"));
            }
        }
        if self.schedule.segments == 0 {
            errs.push("schedule.segments: must be at least 1".into());
        }
        if self.schedule.steps_per_segment == 0 {
            errs.push("schedule.steps_per_segment: must be at least 1".into());
        }
        if !(self.schedule.lr0 > 0.0 && self.schedule.lr0.is_finite()) {
            errs.push("schedule.lr0: must be positive".into());
        }
        if !(self.schedule.decay > 0.0 && self.schedule.decay <= 1.0) {
            errs.push("schedule.decay: must be in (0, 1]".into());
        }
        if !(self.schedule.lr_min > 0.0 && self.schedule.lr_min <= self.schedule.lr0) {
            errs.push("schedule.lr_min: must be positive and at most lr0".into());
        }
        if let Some(steps) = &self.schedule.segment_steps {
            if steps.len() != self.schedule.segments {
                errs.push(format!(
                    "schedule.segment_steps: needs {} entries, got {}",
                    self.schedule.segments,
                    steps.len()
                ));
            }
            if steps.iter().any(|&s| s == 0) {
                errs.push("schedule.segment_steps: entries must be at least 1".into());
            }
        }
        if self.eval.n_error == 0 {
            errs.push("eval.n_error: must be at least 1".into());
        }
        if self.eval.n_final == 0 {
            errs.push("eval.n_final: must be at least 1".into());
        }
        for (i, w) in self.loss_ladder.iter().enumerate() {
            if !(w > &0.0 && w.is_finite()) {
                errs.push(format!("loss_ladder[{i}]: must be positive"));
            }
        }
        if let Err(Error::InvalidSpec(msg)) = self.network_spec() {
            errs.push(format!("network: {msg}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

// ---------------------------------------------------------------------------
// schema walk: reject unknown keys anywhere, all at once

enum Schema {
    Obj(&'static [(&'static str, Schema)]),
    Leaf,
}

static ROOT_SCHEMA: Schema = Schema::Obj(&[
    (
        "problem",
        Schema::Obj(&[
            ("system", Schema::Leaf),
            ("mode", Schema::Leaf),
            ("domain", DOMAIN_SCHEMA_REF),
            ("potential", Schema::Obj(&[("kind", Schema::Leaf)])),
            (
                "viscosity",
                Schema::Obj(&[("nu1", Schema::Leaf), ("nu2", Schema::Leaf)]),
            ),
            (
                "carrier",
                Schema::Obj(&[
                    ("kind", Schema::Leaf),
                    ("ux", Schema::Leaf),
                    ("uy", Schema::Leaf),
                ]),
            ),
            (
                "phi0",
                Schema::Obj(&[("kind", Schema::Leaf), ("amplitude", Schema::Leaf)]),
            ),
        ]),
    ),
    (
        "network",
        Schema::Obj(&[
            ("widths", Schema::Leaf),
            ("clamp_phi", Schema::Leaf),
            ("outputs", Schema::Leaf),
        ]),
    ),
    (
        "sampling",
        Schema::Obj(&[
            ("n_interior", Schema::Leaf),
            ("n_boundary", Schema::Leaf),
            ("n_initial", Schema::Leaf),
            ("k_t", Schema::Leaf),
            ("resample_every", Schema::Leaf),
        ]),
    ),
    (
        "weights",
        Schema::Obj(&[
            ("alpha1", Schema::Leaf),
            ("alpha2", Schema::Leaf),
            ("alpha3", Schema::Leaf),
            ("alpha4", Schema::Leaf),
            ("lambda1", Schema::Leaf),
            ("lambda2", Schema::Leaf),
            ("w_ic", Schema::Leaf),
            ("norm_kind", Schema::Leaf),
            ("bc_u_penalty", Schema::Leaf),
        ]),
    ),
    (
        "schedule",
        Schema::Obj(&[
            ("segments", Schema::Leaf),
            ("steps_per_segment", Schema::Leaf),
            ("lr0", Schema::Leaf),
            ("decay", Schema::Leaf),
            ("lr_restart", Schema::Leaf),
            ("lr_policy", Schema::Leaf),
            ("patience", Schema::Leaf),
            ("lr_min", Schema::Leaf),
            ("segment_steps", Schema::Leaf),
        ]),
    ),
    (
        "seeds",
        Schema::Obj(&[("master", Schema::Leaf), ("eval", Schema::Leaf)]),
    ),
    ("loss_ladder", Schema::Leaf),
    (
        "eval",
        Schema::Obj(&[
            ("n_error", Schema::Leaf),
            ("error_every", Schema::Leaf),
            ("n_final", Schema::Leaf),
        ]),
    ),
    ("out_dir", Schema::Leaf),
]);

const DOMAIN_SCHEMA_REF: Schema = Schema::Obj(&[
    ("x_min", Schema::Leaf),
    ("x_max", Schema::Leaf),
    ("y_min", Schema::Leaf),
    ("y_max", Schema::Leaf),
    ("t_final", Schema::Leaf),
]);

fn walk_unknown_keys(value: &Value, schema: &Schema, path: &str, errs: &mut Vec<String>) {
    if let (Value::Object(map), Schema::Obj(fields)) = (value, schema) {
        for (key, sub) in map {
            match fields.iter().find(|(name, _)| name == key) {
                Some((_, child)) => {
                    let sub_path = if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    };
                    walk_unknown_keys(sub, child, &sub_path, errs);
                }
                None => {
                    let full = if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    };
                    errs.push(format!("unknown key: {full}"));
                }
            }
        }
    }
}

/// Deep-merge `overlay` onto `base` (objects merge recursively, everything
/// else replaces).
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply a `path.to.key=value` override onto a JSON tree. The value is
/// parsed as JSON when possible, else taken as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(vec![format!("override '{assignment}' must look like key.path=value")])
    })?;
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(vec![format!("override path '{path}' crosses a non-object")])
        })?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(serde_json::Map::new()));
    }
    unreachable!("split always yields at least one part")
}

/// Parse a config JSON tree: merge over defaults, reject unknown keys,
/// resolve system-dependent defaults, and validate, reporting every
/// violation at once.
pub fn config_from_value(user: Value) -> Result<RunConfig> {
    let mut errs = Vec::new();
    walk_unknown_keys(&user, &ROOT_SCHEMA, "", &mut errs);
    if !user.is_object() {
        errs.push("config root must be a JSON object".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut tree = serde_json::to_value(RunConfig::default())?;
    merge(&mut tree, user);
    let mut config: RunConfig = serde_json::from_value(tree)
        .map_err(|e| Error::Config(vec![format!("schema: {e}")]))?;
    config.resolve();
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    config_from_value(value)
}

/// Flatten the default config into (dotted key, default value) pairs for
/// the CLI help text.
pub fn default_key_table() -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut cfg = RunConfig::default();
    cfg.resolve();
    let tree = serde_json::to_value(&cfg).expect("default config serializes");
    fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, sub) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    flatten(&key, sub, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    flatten("", &tree, &mut out);
    out
}
