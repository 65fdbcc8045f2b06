//! The trial engine: plans trials per method, runs them on a worker pool,
//! and commits outcomes into the study state and the on-disk log.
//!
//! A single coordinator (the caller's thread) owns all mutable state.
//! Workers receive immutable trial inputs — a configuration, frozen
//! teacher/init parameters, and derived seeds — and report outcomes over a
//! channel. Suggestions are computed from a snapshot of the observation set
//! at dispatch time; results landing later are not awaited (stale reads are
//! allowed at P > 1). At P = 1 the whole study is deterministic per master
//! seed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::registry::{select_teacher_student, Checkpoint, Phase};
use super::seeding::{stream_rng, stream_seed, RngStream};
use super::{
    BossConfig, CandidateTrace, MethodKind, StudyError, StudyEvent, StudyState, TrialFinished,
    TrialStarted, TrialStatus,
};
use crate::nn::{
    make_blobs, train, Dataset, DistillConfig, LabelNoiseConfig, MlpParams, SplitTag, Teacher,
    TrainConfig, TrainRun,
};
use crate::scalar::Scalar;
use crate::space::{ParamKind, ParamVector, SearchSpace};
use crate::store::{MetaUpdate, StudyWriter};
use crate::tpe::{suggest, Observation, ObservationSet};

/// The training and validation splits a study runs against.
#[derive(Clone, Debug)]
pub struct StudyData<S> {
    pub train: Dataset<S>,
    pub val: Dataset<S>,
}

/// Builds the study's datasets from its spec; deterministic per master seed,
/// so resumed studies see identical data.
pub fn materialize_data<S: Scalar>(config: &BossConfig<S>) -> Result<StudyData<S>, StudyError> {
    let spec = &config.dataset;
    spec.validate()?;
    let (train_clean, val) = match spec.kind {
        super::DatasetKind::Blobs => {
            let seed = stream_seed(config.master_seed, 0, RngStream::Dataset);
            let total = make_blobs::<S>(
                spec.n_train + spec.n_val,
                spec.d,
                spec.n_classes,
                spec.separation,
                seed,
            )?;
            total.split_at(spec.n_train)?
        }
        super::DatasetKind::File => {
            let train_path = spec.train_path.as_deref().expect("validated");
            let val_path = spec.val_path.as_deref().expect("validated");
            let mut train = Dataset::<S>::from_delimited(Path::new(train_path), SplitTag::Train)?;
            let mut val = Dataset::<S>::from_delimited(Path::new(val_path), SplitTag::Val)?;
            let classes = train.n_classes().max(val.n_classes());
            train = train.widen_classes(classes)?;
            val = val.widen_classes(classes)?;
            (train, val)
        }
    };
    let train = match spec.noise {
        Some(kind) => train_clean.inject_label_noise(&LabelNoiseConfig {
            kind,
            ratio: spec.noise_ratio,
            seed: stream_seed(config.master_seed, 0, RngStream::Noise),
        })?,
        None => train_clean,
    };
    Ok(StudyData { train, val })
}

/// The human-tuned default configuration, clamped into the space: learning
/// rate 0.1, momentum 0.9 (m = 0.1), weight decay 5e-4, batch size 128.
pub fn baseline_lambda<S: Scalar>(space: &SearchSpace<S>) -> Result<ParamVector<S>, StudyError> {
    space.validate().map_err(StudyError::from)?;
    const DEFAULTS: [(&str, f64); 4] = [("l", 0.1), ("m", 0.1), ("w", 5e-4), ("b", 128.0)];
    let mut pairs = Vec::new();
    for p in space.params() {
        let default = DEFAULTS
            .iter()
            .find(|(n, _)| *n == p.name)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                StudyError::InvalidConfig(format!("no baseline default for parameter `{}`", p.name))
            })?;
        let mut v = S::of(default).max(p.low).min(p.high);
        if p.kind == ParamKind::IntUniform {
            v = v.round();
        }
        pairs.push((p.name.clone(), v));
    }
    space.vector_from_pairs(pairs).map_err(|e| StudyError::Tpe(e.into()))
}

/// Axis-aligned grid over the space: `floor(budget^(1/d))` levels per
/// dimension (log-spaced on log-uniform axes), enumerated with the last
/// dimension fastest and truncated to the budget.
pub fn grid_points<S: Scalar>(
    space: &SearchSpace<S>,
    budget: usize,
) -> Result<Vec<ParamVector<S>>, StudyError> {
    space.validate().map_err(StudyError::from)?;
    if budget < 1 {
        return Err(StudyError::InvalidConfig("grid budget must be >= 1".into()));
    }
    let d = space.dimension() as u32;
    // Largest integer level count whose full grid fits the budget.
    let mut levels = 1usize;
    while (levels + 1)
        .checked_pow(d)
        .map_or(false, |total| total <= budget)
    {
        levels += 1;
    }
    let unit_levels: Vec<S> = if levels == 1 {
        vec![S::of(0.5)]
    } else {
        (0..levels)
            .map(|i| S::of_usize(i) / S::of_usize(levels - 1))
            .collect()
    };
    let total = levels.pow(d);
    let mut out = Vec::with_capacity(total.min(budget));
    for mut idx in 0..total.min(budget) {
        let mut unit = vec![S::zero(); space.dimension()];
        for dim in (0..space.dimension()).rev() {
            unit[dim] = unit_levels[idx % levels];
            idx /= levels;
        }
        out.push(space.from_unit(&unit).map_err(|e| StudyError::Tpe(e.into()))?);
    }
    Ok(out)
}

/// Derives trial `trial_id`'s configuration exactly as the engine does:
/// fixed λ for baseline/sd, the enumerated grid point, a prior draw for
/// random, or a TPE suggestion over the method's observation set. Pure in
/// (config, snapshots, trial id), which is what makes the trial log
/// replayable.
pub fn lambda_for_trial<S: Scalar>(
    method: MethodKind,
    config: &BossConfig<S>,
    trial_id: u64,
    warmup_obs: &ObservationSet<S>,
    boss_obs: &ObservationSet<S>,
    grid: &[ParamVector<S>],
) -> Result<(ParamVector<S>, Option<String>, Option<CandidateTrace>), StudyError> {
    let fixed = |v: ParamVector<S>| (v, None, None);
    let guided = |obs: &ObservationSet<S>| -> Result<_, StudyError> {
        let mut rng = stream_rng(config.master_seed, trial_id, RngStream::Suggest);
        let s = suggest(obs, &config.space, &config.tpe, &mut rng)?;
        let source = s.trace.as_ref().map(|_| obs.label().to_string());
        let trace = s.trace.as_ref().map(CandidateTrace::from_suggest);
        Ok((s.params, source, trace))
    };
    match method {
        MethodKind::Baseline | MethodKind::Sd => Ok(fixed(baseline_lambda(&config.space)?)),
        MethodKind::Grid => {
            let idx = (trial_id - 1) as usize;
            let point = grid.get(idx).ok_or_else(|| {
                StudyError::Scheduling(format!("grid has no point for trial {trial_id}"))
            })?;
            Ok(fixed(point.clone()))
        }
        MethodKind::Random => {
            let mut rng = stream_rng(config.master_seed, trial_id, RngStream::Suggest);
            Ok(fixed(config.space.sample_prior(&mut rng).map_err(StudyError::from)?))
        }
        MethodKind::Bo => guided(warmup_obs),
        MethodKind::SdBo => {
            if trial_id == 1 {
                Ok(fixed(baseline_lambda(&config.space)?))
            } else {
                guided(boss_obs)
            }
        }
        MethodKind::Boss => {
            if trial_id <= config.n_warmup as u64 {
                guided(warmup_obs)
            } else {
                guided(boss_obs)
            }
        }
    }
}

/// Maps a configuration onto trainer settings. Parameters absent from the
/// space fall back to the baseline defaults; the batch size is clamped to
/// the training-set size.
pub fn train_config_for<S: Scalar>(
    lambda: &ParamVector<S>,
    trainer: &super::TrainerSettings,
    n_train: usize,
    seed: u64,
) -> TrainConfig<S> {
    let lr = lambda.get("l").unwrap_or_else(|| S::of(0.1));
    let m = lambda.get("m").unwrap_or_else(|| S::of(0.1));
    let wd = lambda.get("w").unwrap_or_else(|| S::of(5e-4));
    let batch = lambda
        .get("b")
        .map(|v| v.as_f64().round() as usize)
        .unwrap_or(128)
        .clamp(1, n_train);
    TrainConfig {
        learning_rate: lr,
        momentum_coefficient: S::one() - m,
        weight_decay: wd,
        batch_size: batch,
        epochs: trainer.epochs,
        seed,
    }
}

struct TeacherPlan<S> {
    trial_id: u64,
    params: MlpParams<S>,
    distill: DistillConfig<S>,
}

struct TrialPlan<S> {
    trial_id: u64,
    phase: Phase,
    lambda: ParamVector<S>,
    source: Option<String>,
    candidates: Option<CandidateTrace>,
    teacher: Option<TeacherPlan<S>>,
    student_init: MlpParams<S>,
    student_init_id: Option<u64>,
    degenerate_init: bool,
    train_cfg: TrainConfig<S>,
}

struct TrialOutcome<S> {
    trial_id: u64,
    result: Result<TrainRun<S>, String>,
}

enum PlanOutcome<S> {
    Dispatch(Box<TrialPlan<S>>),
    Wait,
    Done,
}

struct PendingTrial<S> {
    phase: Phase,
    lambda: ParamVector<S>,
}

/// Owns a study's state and drives it to completion.
pub struct StudyDriver<S: Scalar> {
    state: StudyState<S>,
    data: Arc<StudyData<S>>,
    writer: Option<StudyWriter>,
    grid: Vec<ParamVector<S>>,
    completed: usize,
    completed_warmup: usize,
    pending: BTreeMap<u64, PendingTrial<S>>,
}

impl<S: Scalar> StudyDriver<S> {
    pub fn new(
        config: BossConfig<S>,
        method: MethodKind,
        writer: Option<StudyWriter>,
    ) -> Result<Self, StudyError> {
        config.validate()?;
        let data = Arc::new(materialize_data(&config)?);
        let grid = match method {
            MethodKind::Grid => grid_points(&config.space, config.n_total)?,
            _ => Vec::new(),
        };
        Ok(Self {
            state: StudyState::new(config, method),
            data,
            writer,
            grid,
            completed: 0,
            completed_warmup: 0,
            pending: BTreeMap::new(),
        })
    }

    /// Rebuilds a driver around loaded state; datasets and the grid are
    /// re-derived from the config, counters from the event log.
    pub fn from_state(
        state: StudyState<S>,
        writer: Option<StudyWriter>,
    ) -> Result<Self, StudyError> {
        state.config.validate()?;
        let data = Arc::new(materialize_data(&state.config)?);
        let grid = match state.method {
            MethodKind::Grid => grid_points(&state.config.space, state.config.n_total)?,
            _ => Vec::new(),
        };
        let records = state.trial_records();
        let completed = records.len();
        let completed_warmup = records
            .iter()
            .filter(|r| r.started.phase == Phase::Warmup)
            .count();
        Ok(Self {
            state,
            data,
            writer,
            grid,
            completed,
            completed_warmup,
            pending: BTreeMap::new(),
        })
    }

    pub fn state(&self) -> &StudyState<S> {
        &self.state
    }

    pub fn into_state(self) -> StudyState<S> {
        self.state
    }

    fn dispatched(&self) -> usize {
        (self.state.next_trial_id - 1) as usize
    }

    fn budget(&self) -> usize {
        match self.state.method {
            MethodKind::Baseline => 1,
            MethodKind::Grid => self.grid.len(),
            _ => self.state.config.n_total,
        }
    }

    fn is_done(&self) -> bool {
        match self.state.method {
            MethodKind::Sd => self.completed >= self.budget() || self.sd_should_stop(),
            _ => self.completed >= self.budget(),
        }
    }

    /// The saturation rule for plain self-distillation: stop once the best
    /// Φ has not improved for three consecutive rounds.
    fn sd_should_stop(&self) -> bool {
        let objs: Vec<f64> = self
            .state
            .trial_records()
            .iter()
            .map(|r| r.finished.objective.unwrap_or(f64::NEG_INFINITY))
            .collect();
        if objs.len() < 4 {
            return false;
        }
        let mut best = objs[0];
        let mut streak = 0usize;
        for &o in &objs[1..] {
            if o > best {
                best = o;
                streak = 0;
            } else {
                streak += 1;
                if streak >= 3 {
                    return true;
                }
            }
        }
        false
    }

    fn fresh_init(&self, trial_id: u64) -> MlpParams<S> {
        let cfg = &self.state.config;
        MlpParams::init(
            self.data.train.dim(),
            cfg.trainer.hidden_size,
            self.data.train.n_classes(),
            stream_seed(cfg.master_seed, trial_id, RngStream::Init),
        )
    }

    fn distill_config(&self) -> DistillConfig<S> {
        let cfg = &self.state.config;
        DistillConfig::new(cfg.alpha, cfg.distill_kind, cfg.temperature)
    }

    fn plan_next(&mut self) -> Result<PlanOutcome<S>, StudyError> {
        let trial_id = self.state.next_trial_id;
        let dispatched = self.dispatched();
        let n = self.state.config.n_total;
        let w = self.state.config.n_warmup;
        let method = self.state.method;

        // Budget gates.
        match method {
            MethodKind::Sd => {
                // Rounds are a chain; plan only when everything settled.
                if dispatched > self.completed {
                    return Ok(PlanOutcome::Wait);
                }
                if self.completed >= n || self.sd_should_stop() {
                    return Ok(PlanOutcome::Done);
                }
            }
            _ => {
                if dispatched >= self.budget() {
                    return Ok(PlanOutcome::Done);
                }
            }
        }

        // Phase gates and teacher/student wiring.
        let mut phase = Phase::Warmup;
        let mut teacher: Option<TeacherPlan<S>> = None;
        let mut student_init_id = None;
        let mut degenerate_init = false;
        let mut student_init = None;
        match method {
            MethodKind::Baseline | MethodKind::Random | MethodKind::Grid | MethodKind::Bo => {}
            MethodKind::Sd => {
                if dispatched > 0 {
                    // Distill from the most recent successful round; if every
                    // round so far diverged, retrain from scratch.
                    if let Some(prev) = self.state.registry.iter().max_by_key(|c| c.trial_id) {
                        phase = Phase::Boss;
                        teacher = Some(TeacherPlan {
                            trial_id: prev.trial_id,
                            params: prev.params.clone(),
                            distill: self.distill_config(),
                        });
                    }
                }
            }
            MethodKind::SdBo => {
                if trial_id > 1 {
                    if self.completed == 0 {
                        return Ok(PlanOutcome::Wait);
                    }
                    let t = self
                        .state
                        .registry
                        .get(1)
                        .ok_or(StudyError::AllWarmupFailed)?;
                    phase = Phase::Boss;
                    teacher = Some(TeacherPlan {
                        trial_id: 1,
                        params: t.params.clone(),
                        distill: self.distill_config(),
                    });
                }
            }
            MethodKind::Boss => {
                if trial_id > w as u64 {
                    if self.completed_warmup < w {
                        return Ok(PlanOutcome::Wait);
                    }
                    if self.state.registry.is_empty() {
                        return Err(StudyError::AllWarmupFailed);
                    }
                    phase = Phase::Boss;
                    let top = self.state.registry.top_k(self.state.config.k_candidates)?;
                    let mut rng =
                        stream_rng(self.state.config.master_seed, trial_id, RngStream::Select);
                    let sel = select_teacher_student(&top, &mut rng)?;
                    let t = self
                        .state
                        .registry
                        .get(sel.teacher_id)
                        .expect("selected from registry");
                    let s = self
                        .state
                        .registry
                        .get(sel.student_init_id)
                        .expect("selected from registry");
                    teacher = Some(TeacherPlan {
                        trial_id: sel.teacher_id,
                        params: t.params.clone(),
                        distill: self.distill_config(),
                    });
                    student_init = Some(s.params.clone());
                    student_init_id = Some(sel.student_init_id);
                    degenerate_init = sel.degenerate;
                }
            }
        }

        let (lambda, source, candidates) = lambda_for_trial(
            method,
            &self.state.config,
            trial_id,
            &self.state.warmup_observations,
            &self.state.boss_observations,
            &self.grid,
        )?;
        let train_cfg = train_config_for(
            &lambda,
            &self.state.config.trainer,
            self.data.train.len(),
            stream_seed(self.state.config.master_seed, trial_id, RngStream::Train),
        );
        let student_init = student_init.unwrap_or_else(|| self.fresh_init(trial_id));

        Ok(PlanOutcome::Dispatch(Box::new(TrialPlan {
            trial_id,
            phase,
            lambda,
            source,
            candidates,
            teacher,
            student_init,
            student_init_id,
            degenerate_init,
            train_cfg,
        })))
    }

    fn log_started(&mut self, plan: &TrialPlan<S>) -> Result<(), StudyError> {
        let event = StudyEvent::TrialStarted(TrialStarted {
            seq: self.state.next_seq,
            trial_id: plan.trial_id,
            phase: plan.phase,
            lambda: plan.lambda.to_f64_map(),
            source: plan.source.clone(),
            candidates: plan.candidates.clone(),
            teacher_id: plan.teacher.as_ref().map(|t| t.trial_id),
            student_init_id: plan.student_init_id,
            degenerate_init: plan.degenerate_init,
        });
        self.state.next_seq += 1;
        if let Some(w) = &mut self.writer {
            w.append_event(&event)?;
        }
        self.state.events.push(event);
        self.pending.insert(
            plan.trial_id,
            PendingTrial {
                phase: plan.phase,
                lambda: plan.lambda.clone(),
            },
        );
        self.state.next_trial_id += 1;
        Ok(())
    }

    fn commit(&mut self, outcome: TrialOutcome<S>) -> Result<(), StudyError> {
        let pending = self.pending.remove(&outcome.trial_id).ok_or_else(|| {
            StudyError::Scheduling(format!("no pending trial {}", outcome.trial_id))
        })?;
        let seq = self.state.next_seq;
        self.state.next_seq += 1;

        let obs_set = match pending.phase {
            Phase::Warmup => &mut self.state.warmup_observations,
            Phase::Boss => &mut self.state.boss_observations,
        };

        let event = match outcome.result {
            Ok(run) => {
                obs_set.push(Observation {
                    params: pending.lambda,
                    objective: run.val_accuracy,
                    trial_id: outcome.trial_id,
                })?;
                if let Some(w) = &self.writer {
                    w.write_checkpoint(outcome.trial_id, &run.params)?;
                }
                self.state.registry.insert(Checkpoint {
                    trial_id: outcome.trial_id,
                    params: run.params,
                    objective: run.val_accuracy,
                    phase: pending.phase,
                })?;
                StudyEvent::TrialFinished(TrialFinished {
                    seq,
                    trial_id: outcome.trial_id,
                    status: TrialStatus::Ok,
                    objective: Some(run.val_accuracy.as_f64()),
                    error: None,
                    checkpointed: true,
                })
            }
            Err(message) => {
                obs_set.push(Observation {
                    params: pending.lambda,
                    objective: S::neg_infinity(),
                    trial_id: outcome.trial_id,
                })?;
                StudyEvent::TrialFinished(TrialFinished {
                    seq,
                    trial_id: outcome.trial_id,
                    status: TrialStatus::Failed,
                    objective: None,
                    error: Some(message),
                    checkpointed: false,
                })
            }
        };
        if let Some(w) = &mut self.writer {
            w.append_event(&event)?;
        }
        self.state.events.push(event);
        self.completed += 1;
        if pending.phase == Phase::Warmup {
            self.completed_warmup += 1;
        }
        self.sync_meta()?;
        Ok(())
    }

    fn sync_meta(&mut self) -> Result<(), StudyError> {
        if let Some(w) = &mut self.writer {
            w.update_meta(MetaUpdate {
                completed_trials: self.completed as u64,
                next_trial_id: self.state.next_trial_id,
                next_seq: self.state.next_seq,
                complete: self.state.complete,
            })?;
        }
        Ok(())
    }

    /// Runs until the method's budget is exhausted, or until
    /// `session_limit` completions if given (used to exercise interruption
    /// and resume).
    pub fn run(&mut self, session_limit: Option<usize>) -> Result<(), StudyError> {
        if self.state.complete {
            return Ok(());
        }
        let p = self.state.config.parallelism.max(1);
        let session_cap = session_limit.unwrap_or(usize::MAX);

        let (task_tx, task_rx) = unbounded::<Box<TrialPlan<S>>>();
        let (res_tx, res_rx) = unbounded::<TrialOutcome<S>>();
        let mut handles = Vec::with_capacity(p);
        for _ in 0..p {
            let rx: Receiver<Box<TrialPlan<S>>> = task_rx.clone();
            let tx: Sender<TrialOutcome<S>> = res_tx.clone();
            let data = Arc::clone(&self.data);
            handles.push(std::thread::spawn(move || {
                while let Ok(plan) = rx.recv() {
                    let outcome = execute_trial(&plan, &data);
                    if tx.send(outcome).is_err() {
                        break;
                    }
                }
            }));
        }
        drop(task_rx);
        drop(res_tx);

        let result = self.drive(&task_tx, &res_rx, p, session_cap);
        drop(task_tx);
        for h in handles {
            let _ = h.join();
        }
        result?;

        if session_limit.is_none() || self.is_done() {
            self.state.complete = self.is_done();
        }
        self.sync_meta()?;
        Ok(())
    }

    fn drive(
        &mut self,
        task_tx: &Sender<Box<TrialPlan<S>>>,
        res_rx: &Receiver<TrialOutcome<S>>,
        p: usize,
        session_cap: usize,
    ) -> Result<(), StudyError> {
        let mut in_flight = 0usize;
        let mut session_completed = 0usize;
        loop {
            while in_flight < p && session_completed + in_flight < session_cap {
                match self.plan_next()? {
                    PlanOutcome::Dispatch(plan) => {
                        self.log_started(&plan)?;
                        task_tx
                            .send(plan)
                            .map_err(|_| StudyError::Scheduling("worker pool gone".into()))?;
                        in_flight += 1;
                    }
                    PlanOutcome::Wait => {
                        if in_flight == 0 {
                            return Err(StudyError::Scheduling(
                                "planner is waiting with no trials in flight".into(),
                            ));
                        }
                        break;
                    }
                    PlanOutcome::Done => break,
                }
            }
            if in_flight == 0 {
                return Ok(());
            }
            let outcome = res_rx
                .recv()
                .map_err(|_| StudyError::Scheduling("worker pool hung up".into()))?;
            self.commit(outcome)?;
            in_flight -= 1;
            session_completed += 1;
        }
    }
}

/// Worker body: train with the planned inputs; panics and divergence are
/// reported as failures, never crashes.
fn execute_trial<S: Scalar>(plan: &TrialPlan<S>, data: &StudyData<S>) -> TrialOutcome<S> {
    let run = catch_unwind(AssertUnwindSafe(|| {
        let teacher = plan.teacher.as_ref().map(|t| Teacher {
            params: &t.params,
            config: &t.distill,
        });
        train(
            &data.train,
            &data.val,
            &plan.train_cfg,
            &plan.student_init,
            teacher,
        )
    }));
    let result = match run {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("trial worker panicked".to_string()),
    };
    TrialOutcome {
        trial_id: plan.trial_id,
        result,
    }
}

/// Runs a full study in memory.
pub fn run_study<S: Scalar>(
    config: &BossConfig<S>,
    method: MethodKind,
) -> Result<StudyState<S>, StudyError> {
    let mut driver = StudyDriver::new(config.clone(), method, None)?;
    driver.run(None)?;
    Ok(driver.into_state())
}

/// Runs a study with incremental persistence under `dir`. With a session
/// limit the study stops after that many completed trials and can be
/// resumed later.
pub fn run_study_to_dir<S: Scalar>(
    config: &BossConfig<S>,
    method: MethodKind,
    dir: &Path,
    session_limit: Option<usize>,
) -> Result<StudyState<S>, StudyError> {
    let writer = StudyWriter::create(dir, method, &config.to_record())?;
    let mut driver = StudyDriver::new(config.clone(), method, Some(writer))?;
    driver.run(session_limit)?;
    Ok(driver.into_state())
}

/// Continues an interrupted study from its directory.
pub fn resume_study_dir<S: Scalar>(
    dir: &Path,
    session_limit: Option<usize>,
) -> Result<StudyState<S>, StudyError> {
    let state = crate::store::load::<S>(dir)?;
    if state.complete {
        return Ok(state);
    }
    let writer = StudyWriter::open_append(dir)?;
    let mut driver = StudyDriver::from_state(state, Some(writer))?;
    driver.run(session_limit)?;
    Ok(driver.into_state())
}
