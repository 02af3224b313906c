//! ADAM minimization of the empirical loss under the expanding-time-window
//! segment schedule, with per-step fresh batches, loss-ladder checkpoints,
//! a records CSV and a run manifest.

use crate::analysis::{mc_l2_error, ErrorTime, FieldErrors};
use crate::config::{LrPolicy, RunConfig};
use crate::error::{Error, Result};
use crate::loss::{empirical_loss, loss_grad, JetSource, LossBreakdown, LossWeights};
use crate::netjet::{init_params, save_checkpoint, CheckpointHeader, NetworkSpec, ParamVector};
use crate::problems::{ProblemConfig, ProblemMode};
use crate::sampling::{derive_seed, sample_batch, BatchCounts, SampleBatch};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const STREAM_BATCH: u64 = 0;
const STREAM_EVAL_BATCH: u64 = 1;
const STREAM_ERRORS: u64 = 2;

/// ADAM optimizer state with the standard bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            lr,
        }
    }
}

/// One ADAM update: m and v are updated with the new gradient, then theta
/// moves along the bias-corrected direction.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64]) -> Result<()> {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { term: "gradient" });
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..theta.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps_hat);
    }
    Ok(())
}

/// Expanding-window segment schedule: segment k (1-based) of K trains on
/// the time window (0, T k/K], parameters carrying over between segments.
/// Under the interval policy the learning rate decays by `decay` every
/// steps_per_segment/2 steps (restarting at each segment when `lr_restart`
/// is set); under the plateau policy it decays whenever the smoothed loss
/// has not improved for `patience` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub segments: usize,
    pub steps_per_segment: usize,
    pub lr0: f64,
    pub decay: f64,
    pub lr_restart: bool,
    pub lr_policy: LrPolicy,
    pub patience: usize,
    pub lr_min: f64,
    /// Step count of each segment; uniform unless overridden.
    pub segment_steps: Vec<usize>,
}

impl SchedulePlan {
    pub fn from_config(cfg: &RunConfig) -> Self {
        SchedulePlan {
            segments: cfg.schedule.segments,
            steps_per_segment: cfg.schedule.steps_per_segment,
            lr0: cfg.schedule.lr0,
            decay: cfg.schedule.decay,
            lr_restart: cfg.schedule.lr_restart,
            lr_policy: cfg.schedule.lr_policy,
            patience: if cfg.schedule.patience == 0 {
                (cfg.schedule.steps_per_segment / 20).max(50)
            } else {
                cfg.schedule.patience
            },
            lr_min: cfg.schedule.lr_min,
            segment_steps: cfg
                .schedule
                .segment_steps
                .clone()
                .unwrap_or_else(|| vec![cfg.schedule.steps_per_segment; cfg.schedule.segments]),
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.segment_steps.iter().map(|&s| s as u64).sum()
    }

    /// 1-based segment of a 0-based global step.
    pub fn segment_of(&self, global: u64) -> usize {
        let mut acc = 0u64;
        for (i, &s) in self.segment_steps.iter().enumerate() {
            acc += s as u64;
            if global < acc {
                return i + 1;
            }
        }
        self.segments
    }

    /// 0-based position of a global step within its segment.
    fn step_in_segment(&self, global: u64) -> (usize, usize) {
        let mut acc = 0u64;
        for (i, &s) in self.segment_steps.iter().enumerate() {
            if global < acc + s as u64 {
                return (i, (global - acc) as usize);
            }
            acc += s as u64;
        }
        (self.segments - 1, self.segment_steps[self.segments - 1])
    }

    pub fn window_fraction(&self, segment: usize) -> f64 {
        segment as f64 / self.segments as f64
    }

    /// Interval-policy learning rate at a 0-based global step: one decay
    /// tick per half segment.
    pub fn lr_at(&self, global: u64) -> f64 {
        let (seg, in_seg) = self.step_in_segment(global);
        let half = (self.segment_steps[seg] / 2).max(1);
        let mut ticks = in_seg / half;
        if !self.lr_restart {
            ticks += self.segment_steps[..seg]
                .iter()
                .map(|&s| s / (s / 2).max(1))
                .sum::<usize>();
        }
        (self.lr0 * self.decay.powi(ticks as i32)).max(self.lr_min)
    }
}

/// Plateau-policy state: exponentially smoothed loss with bias correction,
/// decaying the rate after `patience` steps without relative improvement.
#[derive(Debug, Clone)]
struct LrState {
    lr: f64,
    ema: f64,
    ema_weight: f64,
    best: f64,
    since_best: usize,
    segment: usize,
    /// Observations to skip after a segment switch, while the loss
    /// catches up on the newly exposed time region.
    grace: usize,
}

const PLATEAU_BETA: f64 = 0.995;
const PLATEAU_IMPROVEMENT: f64 = 0.003;

impl LrState {
    fn new(lr0: f64, grace: usize) -> Self {
        LrState {
            lr: lr0,
            ema: 0.0,
            ema_weight: 0.0,
            best: f64::INFINITY,
            since_best: 0,
            segment: 1,
            grace,
        }
    }

    fn observe(&mut self, plan: &SchedulePlan, segment: usize, loss: f64) {
        if plan.lr_restart && segment != self.segment {
            *self = LrState::new(plan.lr0, plan.patience);
            self.segment = segment;
        }
        self.ema = PLATEAU_BETA * self.ema + (1.0 - PLATEAU_BETA) * loss;
        self.ema_weight = PLATEAU_BETA * self.ema_weight + (1.0 - PLATEAU_BETA);
        let smoothed = self.ema / self.ema_weight;
        if self.grace > 0 {
            self.grace -= 1;
            self.best = self.best.min(smoothed);
            return;
        }
        if smoothed < self.best * (1.0 - PLATEAU_IMPROVEMENT) {
            self.best = smoothed;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= plan.patience {
                self.lr = (self.lr * plan.decay).max(plan.lr_min);
                self.since_best = 0;
                self.best = smoothed;
            }
        }
    }
}

/// One row of records.csv. Per-term loss values are raw (unweighted), so
/// their sum reconstructs the loss without the large IC coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub step: u64,
    pub segment: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_mom: f64,
    pub loss_mu: f64,
    pub loss_ch: f64,
    pub loss_div: f64,
    pub loss_ic: f64,
    pub loss_bc: f64,
    pub err_phi: Option<f64>,
    pub err_u: Option<f64>,
    pub wall_ms: u128,
}

impl TrainRecord {
    pub fn unweighted_total(&self) -> f64 {
        self.loss_mom + self.loss_mu + self.loss_ch + self.loss_div + self.loss_ic + self.loss_bc
    }
}

pub const RECORDS_HEADER: &str =
    "step,segment,lr,loss_total,loss_mom,loss_mu,loss_ch,loss_div,loss_ic,loss_bc,err_phi,err_u,wall_ms";

pub fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 96);
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    let opt = |v: &Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in records {
        out.push_str(&format!(
            "{},{},{:.6e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{}\n",
            r.step,
            r.segment,
            r.lr,
            r.loss_total,
            r.loss_mom,
            r.loss_mu,
            r.loss_ch,
            r.loss_div,
            r.loss_ic,
            r.loss_bc,
            opt(&r.err_phi),
            opt(&r.err_u),
            r.wall_ms
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loss, gradient and bookkeeping of one step, evaluated at the current
/// parameters before any update is applied.
pub struct StepEval {
    /// 1-based step index of the record this evaluation produces.
    pub step: u64,
    pub segment: usize,
    pub lr: f64,
    pub batch_seed: u64,
    pub breakdown: LossBreakdown,
    grad: Vec<f64>,
}

/// Owns the parameters and optimizer state; one trainer mutates one
/// parameter vector. Evaluation and update are split so callers can
/// checkpoint the exact parameters a recorded loss belongs to.
pub struct Trainer {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    problem: ProblemConfig,
    weights: LossWeights,
    counts: BatchCounts,
    plan: SchedulePlan,
    master_seed: u64,
    resample_every: u64,
    adam: AdamState,
    global: u64,
    lr_state: LrState,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.network_spec()?;
        let params = init_params(&spec, cfg.seeds.master);
        let plan = SchedulePlan::from_config(cfg);
        Ok(Trainer {
            adam: AdamState::new(spec.n_params(), plan.lr0),
            lr_state: LrState::new(plan.lr0, plan.patience),
            spec,
            params,
            problem: cfg.problem_config(),
            weights: cfg.loss_weights(),
            counts: cfg.batch_counts(),
            plan,
            master_seed: cfg.seeds.master,
            resample_every: cfg.sampling.resample_every.max(1) as u64,
            global: 0,
        })
    }

    pub fn global_step(&self) -> u64 {
        self.global
    }

    pub fn segment(&self) -> usize {
        self.plan.segment_of(self.global)
    }

    pub fn plan(&self) -> &SchedulePlan {
        &self.plan
    }

    /// Problem restricted to the current segment's time window.
    pub fn window_problem(&self) -> ProblemConfig {
        let frac = self.plan.window_fraction(self.segment());
        let mut p = self.problem;
        p.domain = p.domain.with_time(p.domain.t_final * frac);
        p
    }

    /// Draw this step's fresh batch and evaluate loss and gradient at the
    /// current parameters.
    pub fn eval_step(&self) -> Result<StepEval> {
        let window = self.window_problem();
        let batch_seed = derive_seed(
            self.master_seed,
            STREAM_BATCH,
            self.global / self.resample_every,
        );
        let batch = sample_batch(&window.domain, self.counts, batch_seed)?;
        let (breakdown, grad) =
            loss_grad(&self.spec, &self.params, &batch, &self.weights, &window)?;
        if !breakdown.total.is_finite() || breakdown.total > 1e6 {
            return Err(Error::Diverged {
                step: self.global + 1,
                loss: breakdown.total,
            });
        }
        Ok(StepEval {
            step: self.global + 1,
            segment: self.segment(),
            lr: match self.plan.lr_policy {
                LrPolicy::Interval => self.plan.lr_at(self.global),
                LrPolicy::Plateau => self.lr_state.lr,
            },
            batch_seed,
            breakdown,
            grad,
        })
    }

    /// Apply the ADAM update for an evaluation produced by `eval_step` and
    /// advance the step counter.
    pub fn apply(&mut self, eval: &StepEval) -> Result<()> {
        self.adam.lr = eval.lr;
        adam_step(&mut self.adam, self.params.values_mut(), &eval.grad)?;
        self.global += 1;
        if self.plan.lr_policy == LrPolicy::Plateau && self.global < self.plan.total_steps() {
            self.lr_state
                .observe(&self.plan, self.segment(), eval.breakdown.total);
        }
        Ok(())
    }

    /// Rebuild the exact batch an evaluation used (for reload checks).
    pub fn batch_for_seed(&self, seed: u64) -> Result<SampleBatch> {
        sample_batch(&self.window_problem().domain, self.counts, seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderHit {
    pub target: f64,
    pub step: u64,
    pub loss: f64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub total_unweighted: f64,
    pub breakdown: LossBreakdown,
}

impl From<LossBreakdown> for LossSummary {
    fn from(b: LossBreakdown) -> Self {
        LossSummary {
            total: b.total,
            total_unweighted: b.total_unweighted,
            breakdown: b,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub spacetime: FieldErrors,
    pub final_time: FieldErrors,
}

/// manifest.json: everything needed to reproduce and interpret a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_digest: String,
    pub spec: NetworkSpec,
    pub n_params: usize,
    pub steps: u64,
    pub initial_loss: LossSummary,
    pub final_train_loss: LossSummary,
    pub final_eval_loss: LossSummary,
    pub final_errors: Option<ErrorSummary>,
    pub ladder: Vec<LadderHit>,
    pub records_file: String,
    pub final_checkpoint: String,
    pub wall_ms: u128,
    /// Norm conventions baked into the loss.
    pub conventions: String,
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub records: Vec<TrainRecord>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Execute the configured training run into `out_dir` (which overrides
/// `config.out_dir` when given): K segments of ADAM steps on expanding
/// time windows, fresh batch per step, loss-ladder checkpoints during the
/// full-window segment, records.csv and manifest.json. Deterministic given
/// the master seed (wall-clock milliseconds aside).
pub fn train_run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    if let Some(dir) = out_dir {
        cfg.out_dir = dir.to_string_lossy().into_owned();
    }
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;

    let mut trainer = Trainer::new(&cfg)?;
    let plan = trainer.plan().clone();
    let manufactured = cfg.problem.mode == ProblemMode::Manufactured;
    let problem_full = cfg.problem_config();
    let weights = cfg.loss_weights();
    let err_seed = derive_seed(cfg.seeds.eval, STREAM_ERRORS, 0);

    // descending ladder of not-yet-crossed loss targets
    let mut ladder_targets: Vec<f64> = cfg.loss_ladder.clone();
    ladder_targets.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut ladder_next = 0usize;
    let mut ladder_hits: Vec<LadderHit> = Vec::new();

    let t0 = Instant::now();
    let total_steps = plan.total_steps();
    let mut records: Vec<TrainRecord> = Vec::with_capacity(total_steps as usize);
    let mut initial: Option<LossBreakdown> = None;

    while trainer.global_step() < total_steps {
        let eval = trainer.eval_step()?;
        if initial.is_none() {
            initial = Some(eval.breakdown);
        }

        // loss-ladder checkpoints only once the window covers (0, T]
        if eval.segment == plan.segments {
            while ladder_next < ladder_targets.len()
                && eval.breakdown.total < ladder_targets[ladder_next]
            {
                let target = ladder_targets[ladder_next];
                let file = format!("ckpt_ladder_{ladder_next:02}.json");
                save_checkpoint(
                    &dir.join(&file),
                    &CheckpointHeader {
                        spec: trainer.spec.clone(),
                        seed: eval.batch_seed,
                        step: eval.step,
                        loss: eval.breakdown.total,
                    },
                    &trainer.params,
                )?;
                ladder_hits.push(LadderHit {
                    target,
                    step: eval.step,
                    loss: eval.breakdown.total,
                    file,
                });
                ladder_next += 1;
            }
        }

        let compute_errors = manufactured
            && cfg.eval.error_every > 0
            && (eval.step % cfg.eval.error_every as u64 == 0 || eval.step == total_steps);
        let (err_phi, err_u) = if compute_errors {
            let src = JetSource::Network {
                spec: &trainer.spec,
                params: &trainer.params,
            };
            let e = mc_l2_error(&src, &problem_full, ErrorTime::SpaceTime, cfg.eval.n_error, err_seed)?;
            (Some(e.phi), Some(e.u))
        } else {
            (None, None)
        };

        let b = &eval.breakdown;
        records.push(TrainRecord {
            step: eval.step,
            segment: eval.segment,
            lr: eval.lr,
            loss_total: b.total,
            loss_mom: b.momentum,
            loss_mu: b.mu_relation,
            loss_ch: b.transport,
            loss_div: b.divergence,
            loss_ic: b.ic_u + b.ic_phi,
            loss_bc: b.bc_phi + b.bc_mu + b.bc_u,
            err_phi,
            err_u,
            wall_ms: t0.elapsed().as_millis(),
        });

        trainer.apply(&eval)?;
    }

    // final full-domain evaluation at the trained parameters
    let eval_counts = BatchCounts {
        interior: cfg.eval.n_final,
        boundary: cfg.sampling.n_boundary.max(256),
        initial: cfg.sampling.n_initial.max(256),
    };
    let eval_batch = sample_batch(
        &problem_full.domain,
        eval_counts,
        derive_seed(cfg.seeds.eval, STREAM_EVAL_BATCH, 0),
    )?;
    let src = JetSource::Network {
        spec: &trainer.spec,
        params: &trainer.params,
    };
    let (_, final_eval) = empirical_loss(&src, &eval_batch, &weights, &problem_full)?;
    let final_errors = if manufactured {
        Some(ErrorSummary {
            spacetime: mc_l2_error(&src, &problem_full, ErrorTime::SpaceTime, cfg.eval.n_error, err_seed)?,
            final_time: mc_l2_error(&src, &problem_full, ErrorTime::FinalTime, cfg.eval.n_error, err_seed)?,
        })
    } else {
        None
    };

    let records_file = "records.csv";
    write_records(&dir.join(records_file), &records)?;

    let final_checkpoint = "ckpt_final.json";
    let last = records.last().expect("at least one step");
    save_checkpoint(
        &dir.join(final_checkpoint),
        &CheckpointHeader {
            spec: trainer.spec.clone(),
            seed: derive_seed(cfg.seeds.eval, STREAM_EVAL_BATCH, 0),
            step: last.step,
            loss: final_eval.total,
        },
        &trainer.params,
    )?;

    let manifest = RunManifest {
        config_digest: format!("{:016x}", fnv1a(serde_json::to_string(&cfg)?.as_bytes())),
        config: cfg.clone(),
        spec: trainer.spec.clone(),
        n_params: trainer.spec.n_params(),
        steps: total_steps,
        initial_loss: initial.expect("at least one step").into(),
        final_train_loss: {
            let mut b = LossBreakdown::default();
            b.total = last.loss_total;
            b.total_unweighted = last.unweighted_total();
            b.into()
        },
        final_eval_loss: final_eval.into(),
        final_errors,
        ladder: ladder_hits,
        records_file: records_file.into(),
        final_checkpoint: final_checkpoint.into(),
        wall_ms: t0.elapsed().as_millis(),
        conventions: "residual norms enter the total squared; H1-type regularizers unsquared; \
                      per-term record columns are raw (unweighted) values"
            .into(),
    };
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunSummary {
        out_dir: dir,
        manifest,
        records,
    })
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub run: usize,
    pub seed: u64,
    pub steps: u64,
    pub status: String,
    /// Weighted final evaluation loss (the quantity the fit consumes).
    pub loss: f64,
    pub loss_unweighted: f64,
    /// Combined space-time L2 error sqrt(err_u^2 + err_phi^2).
    pub error: f64,
    pub err_phi_final: f64,
    pub err_u_final: f64,
    pub err_phi_spacetime: f64,
    pub err_u_spacetime: f64,
}

pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

pub const SWEEP_HEADER: &str = "run,seed,steps,status,loss,loss_unweighted,error,err_phi_final,err_u_final,err_phi_spacetime,err_u_spacetime";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    let num = |v: f64| {
        if v.is_finite() {
            format!("{v:.9e}")
        } else {
            String::new()
        }
    };
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run,
            r.seed,
            r.steps,
            r.status,
            num(r.loss),
            num(r.loss_unweighted),
            num(r.error),
            num(r.err_phi_final),
            num(r.err_u_final),
            num(r.err_phi_spacetime),
            num(r.err_u_spacetime),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Train one network per (seed, step-budget) pair, recording the final
/// empirical loss and Monte Carlo errors of each run into a single CSV
/// for the convergence fit. Per-run failures are recorded in their row
/// without aborting the remaining runs.
pub fn sweep(
    base: &RunConfig,
    seeds: &[u64],
    budgets: &[u64],
    out_root: &Path,
) -> Result<SweepTable> {
    std::fs::create_dir_all(out_root)?;
    let mut rows = Vec::new();
    let mut run_id = 0usize;
    for &seed in seeds {
        for &budget in budgets {
            let mut cfg = base.clone();
            cfg.seeds.master = seed;
            cfg.schedule.steps_per_segment =
                ((budget as usize) / cfg.schedule.segments).max(1);
            // scale an explicit per-segment allocation to the budget
            if let Some(alloc) = &base.schedule.segment_steps {
                let total: usize = alloc.iter().sum();
                cfg.schedule.segment_steps = Some(
                    alloc
                        .iter()
                        .map(|&s| ((s * budget as usize) / total).max(1))
                        .collect(),
                );
            }
            let steps = match &cfg.schedule.segment_steps {
                Some(alloc) => alloc.iter().sum::<usize>() as u64,
                None => (cfg.schedule.steps_per_segment * cfg.schedule.segments) as u64,
            };
            let dir = out_root.join(format!("runs/run_{run_id:03}"));
            let row = match train_run(&cfg, Some(&dir)) {
                Ok(summary) => {
                    let m = &summary.manifest;
                    let (st, ft) = match &m.final_errors {
                        Some(e) => (e.spacetime, e.final_time),
                        None => (FieldErrors::default(), FieldErrors::default()),
                    };
                    SweepRow {
                        run: run_id,
                        seed,
                        steps,
                        status: "ok".into(),
                        loss: m.final_eval_loss.total,
                        loss_unweighted: m.final_eval_loss.total_unweighted,
                        error: st.combined(),
                        err_phi_final: ft.phi,
                        err_u_final: ft.u,
                        err_phi_spacetime: st.phi,
                        err_u_spacetime: st.u,
                    }
                }
                Err(e) => {
                    let mut msg = e.to_string().replace(['\n', ','], "; ");
                    msg.truncate(120);
                    SweepRow {
                        run: run_id,
                        seed,
                        steps,
                        status: format!("failed: {msg}"),
                        loss: f64::NAN,
                        loss_unweighted: f64::NAN,
                        error: f64::NAN,
                        err_phi_final: f64::NAN,
                        err_u_final: f64::NAN,
                        err_phi_spacetime: f64::NAN,
                        err_u_spacetime: f64::NAN,
                    }
                }
            };
            rows.push(row);
            run_id += 1;
            // progress to stderr so long sweeps are observable
            if let Some(last) = rows.last() {
                let _ = writeln!(
                    std::io::stderr(),
                    "sweep: run {} (seed {}, {} steps): {} loss={:.3e} error={:.3e}",
                    last.run,
                    last.seed,
                    last.steps,
                    last.status,
                    last.loss,
                    last.error
                );
            }
        }
    }
    let csv_path = out_root.join("sweep.csv");
    write_sweep_csv(&csv_path, &rows)?;
    Ok(SweepTable { rows, csv_path })
}
