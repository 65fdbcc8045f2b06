//! Offline audits over the trial log.
//!
//! A study's log carries enough to re-derive every decision the engine
//! made: each suggestion is a pure function of (config, trial id, the
//! observation-set snapshot at dispatch), and teacher/student selection is a
//! pure function of (registry snapshot, trial id). Replaying the log
//! re-executes those functions against shadow snapshots and verifies the
//! recorded λ, candidate traces, sources, and selections byte for byte.

use std::path::Path;

use crate::nn::MlpParams;
use crate::scalar::Scalar;
use crate::store;
use crate::study::{
    grid_points, lambda_for_trial, select_teacher_student, BossConfig, Checkpoint, CandidateTrace,
    CheckpointRegistry, MethodKind, Phase, RngStream, StudyError, StudyEvent, TrialStarted,
    BOSS_SET_LABEL, WARMUP_SET_LABEL,
};
use crate::tpe::{build_density, Observation, ObservationSet, ParzenDensity};

#[derive(Clone, Copy, Debug, Default)]
pub struct AuditOptions {
    /// Also rebuild the good/bad densities behind every guided suggestion.
    pub collect_densities: bool,
}

/// The `l`/`g` pair a guided suggestion maximized over.
#[derive(Clone, Debug)]
pub struct DensityPair<S> {
    pub trial_id: u64,
    pub good: ParzenDensity<S>,
    pub bad: ParzenDensity<S>,
}

#[derive(Debug)]
pub struct AuditReport<S> {
    /// Completed trials found in the log.
    pub trials: usize,
    /// Started events whose λ was re-derived and matched.
    pub lambdas_replayed: usize,
    /// Guided suggestions whose candidate trace matched.
    pub suggestions_replayed: usize,
    /// Teacher/student selections re-derived and matched.
    pub selections_replayed: usize,
    /// Highest number of simultaneously running trials seen in the log.
    pub max_concurrent_running: usize,
    pub densities: Vec<DensityPair<S>>,
}

/// Largest number of trials simultaneously in the `running` state.
pub fn max_concurrent_running(events: &[StudyEvent]) -> usize {
    let mut running = 0usize;
    let mut peak = 0usize;
    for event in events {
        match event {
            StudyEvent::TrialStarted(_) => {
                running += 1;
                peak = peak.max(running);
            }
            StudyEvent::TrialFinished(_) => running = running.saturating_sub(1),
        }
    }
    peak
}

fn mismatch(trial_id: u64, what: &str, detail: String) -> StudyError {
    StudyError::ReplayMismatch(format!("trial {trial_id}: {what}: {detail}"))
}

/// Replays a persisted study against its own log. Errors on the first
/// discrepancy. Exact at P = 1; with parallel dispatch the snapshots are
/// completion-ordered exactly as the engine saw them.
pub fn audit_study<S: Scalar>(
    dir: &Path,
    options: &AuditOptions,
) -> Result<AuditReport<S>, StudyError> {
    let state = store::load::<S>(dir)?;
    let config: &BossConfig<S> = &state.config;
    let method = state.method;
    let grid = match method {
        MethodKind::Grid => grid_points(&config.space, config.n_total)?,
        _ => Vec::new(),
    };

    let mut warmup: ObservationSet<S> = ObservationSet::new(WARMUP_SET_LABEL);
    let mut boss: ObservationSet<S> = ObservationSet::new(BOSS_SET_LABEL);
    // Shadow registry for selection replay: real objectives, placeholder
    // parameters (selection never reads them).
    let mut registry: CheckpointRegistry<S> = CheckpointRegistry::new();
    let mut report = AuditReport {
        trials: 0,
        lambdas_replayed: 0,
        suggestions_replayed: 0,
        selections_replayed: 0,
        max_concurrent_running: max_concurrent_running(&state.events),
        densities: Vec::new(),
    };

    for (i, event) in state.events.iter().enumerate() {
        match event {
            StudyEvent::TrialStarted(s) => {
                replay_started(
                    s, method, config, &warmup, &boss, &grid, &registry, options, &mut report,
                )?;
            }
            StudyEvent::TrialFinished(f) => {
                let started = state.events[..i]
                    .iter()
                    .rev()
                    .find_map(|e| match e {
                        StudyEvent::TrialStarted(s) if s.trial_id == f.trial_id => Some(s),
                        _ => None,
                    })
                    .expect("load() verified pairing");
                let objective = f
                    .objective
                    .map(S::of)
                    .unwrap_or_else(S::neg_infinity);
                let set = match started.phase {
                    Phase::Warmup => &mut warmup,
                    Phase::Boss => &mut boss,
                };
                set.push(Observation {
                    params: crate::space::ParamVector::from_f64_map(&started.lambda),
                    objective,
                    trial_id: f.trial_id,
                })?;
                if f.checkpointed {
                    registry
                        .insert(Checkpoint {
                            trial_id: f.trial_id,
                            params: MlpParams::<S>::zeros(1, 1, 1),
                            objective,
                            phase: started.phase,
                        })
                        .map_err(|e| mismatch(f.trial_id, "registry", e.to_string()))?;
                }
                report.trials += 1;
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn replay_started<S: Scalar>(
    s: &TrialStarted,
    method: MethodKind,
    config: &BossConfig<S>,
    warmup: &ObservationSet<S>,
    boss: &ObservationSet<S>,
    grid: &[crate::space::ParamVector<S>],
    registry: &CheckpointRegistry<S>,
    options: &AuditOptions,
    report: &mut AuditReport<S>,
) -> Result<(), StudyError> {
    let (lambda, source, trace) =
        lambda_for_trial(method, config, s.trial_id, warmup, boss, grid)?;
    if lambda.to_f64_map() != s.lambda {
        return Err(mismatch(
            s.trial_id,
            "lambda",
            format!("recomputed {:?}, logged {:?}", lambda.to_f64_map(), s.lambda),
        ));
    }
    if source != s.source {
        return Err(mismatch(
            s.trial_id,
            "suggestion source",
            format!("recomputed {source:?}, logged {:?}", s.source),
        ));
    }
    report.lambdas_replayed += 1;

    match (&trace, &s.candidates) {
        (None, None) => {}
        (Some(got), Some(logged)) => {
            if got != logged {
                return Err(mismatch(
                    s.trial_id,
                    "candidate trace",
                    "recomputed candidates differ from the log".into(),
                ));
            }
            verify_argmax(s.trial_id, logged)?;
            report.suggestions_replayed += 1;
            if options.collect_densities {
                report
                    .densities
                    .push(rebuild_densities(s, method, config, warmup, boss)?);
            }
        }
        _ => {
            return Err(mismatch(
                s.trial_id,
                "candidate trace",
                "presence differs between replay and log".into(),
            ))
        }
    }

    // Teacher/student wiring.
    match method {
        MethodKind::Boss if s.phase == Phase::Boss => {
            let top = registry.top_k(config.k_candidates)?;
            let mut rng = crate::study::stream_rng(config.master_seed, s.trial_id, RngStream::Select);
            let sel = select_teacher_student(&top, &mut rng)?;
            if Some(sel.teacher_id) != s.teacher_id
                || Some(sel.student_init_id) != s.student_init_id
                || sel.degenerate != s.degenerate_init
            {
                return Err(mismatch(
                    s.trial_id,
                    "selection",
                    format!(
                        "recomputed ({}, {}, {}), logged ({:?}, {:?}, {})",
                        sel.teacher_id,
                        sel.student_init_id,
                        sel.degenerate,
                        s.teacher_id,
                        s.student_init_id,
                        s.degenerate_init
                    ),
                ));
            }
            if !top.iter().any(|c| Some(c.trial_id) == s.teacher_id)
                || !top.iter().any(|c| Some(c.trial_id) == s.student_init_id)
            {
                return Err(mismatch(
                    s.trial_id,
                    "selection",
                    "logged ids are not in the top-K snapshot".into(),
                ));
            }
            report.selections_replayed += 1;
        }
        MethodKind::Sd if s.phase == Phase::Boss => {
            let latest = registry.iter().map(|c| c.trial_id).max();
            if s.teacher_id != latest {
                return Err(mismatch(
                    s.trial_id,
                    "sd teacher",
                    format!("expected {latest:?}, logged {:?}", s.teacher_id),
                ));
            }
            report.selections_replayed += 1;
        }
        MethodKind::SdBo if s.phase == Phase::Boss => {
            if s.teacher_id != Some(1) {
                return Err(mismatch(
                    s.trial_id,
                    "sd_bo teacher",
                    format!("expected trial 1, logged {:?}", s.teacher_id),
                ));
            }
            report.selections_replayed += 1;
        }
        _ => {}
    }
    Ok(())
}

/// The chosen candidate must attain the maximum score in its own trace.
fn verify_argmax(trial_id: u64, trace: &CandidateTrace) -> Result<(), StudyError> {
    let max = trace
        .candidates
        .iter()
        .map(|c| c.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = trace
        .candidates
        .get(trace.chosen)
        .ok_or_else(|| mismatch(trial_id, "argmax", "chosen index out of range".into()))?;
    if chosen.score != max {
        return Err(mismatch(
            trial_id,
            "argmax",
            format!("chosen score {} < max {max}", chosen.score),
        ));
    }
    Ok(())
}

fn rebuild_densities<S: Scalar>(
    s: &TrialStarted,
    method: MethodKind,
    config: &BossConfig<S>,
    warmup: &ObservationSet<S>,
    boss: &ObservationSet<S>,
) -> Result<DensityPair<S>, StudyError> {
    let obs = match (method, s.phase) {
        (MethodKind::Bo, _) => warmup,
        (MethodKind::Boss, Phase::Warmup) => warmup,
        (MethodKind::Boss, Phase::Boss) => boss,
        (MethodKind::SdBo, Phase::Boss) => boss,
        _ => {
            return Err(mismatch(
                s.trial_id,
                "density rebuild",
                format!("{method} does not make guided suggestions in phase {:?}", s.phase),
            ))
        }
    };
    let split = obs.split_observations(&config.space, config.tpe.gamma)?;
    let dim = config.space.dimension();
    Ok(DensityPair {
        trial_id: s.trial_id,
        good: build_density(dim, &split.good, &config.tpe)?,
        bad: build_density(dim, &split.bad, &config.tpe)?,
    })
}
