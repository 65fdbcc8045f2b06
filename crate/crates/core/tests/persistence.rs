//! Save/load/resume behavior of the study store.

mod common;

use common::micro_config;

use boss_core::store::{self, load, load_summary, save};
use boss_core::study::{resume_study_dir, run_study_to_dir, MethodKind, StudyDriver};

#[test]
fn save_load_round_trip_preserves_log_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("a");
    let state = run_study_to_dir(&micro_config(1), MethodKind::Boss, &run_dir, None).unwrap();

    let loaded = load::<f64>(&run_dir).unwrap();
    assert_eq!(loaded.events, state.events);
    assert_eq!(loaded.complete, true);
    assert_eq!(loaded.next_trial_id, state.next_trial_id);
    assert_eq!(loaded.next_seq, state.next_seq);
    assert_eq!(loaded.registry.len(), state.registry.len());
    for c in state.registry.iter() {
        let l = loaded.registry.get(c.trial_id).unwrap();
        assert_eq!(l.params, c.params, "trial {} params", c.trial_id);
        assert_eq!(l.objective, c.objective);
        assert_eq!(l.phase, c.phase);
    }

    // Re-saving the same state into a fresh dir writes byte-identical logs.
    let copy_dir = dir.path().join("b");
    save(&state, &copy_dir).unwrap();
    let a = std::fs::read(run_dir.join("trials.log")).unwrap();
    let b = std::fs::read(copy_dir.join("trials.log")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_after_interrupt_matches_uninterrupted_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    let part_dir = dir.path().join("part");

    let config = micro_config(2);
    let full = run_study_to_dir(&config, MethodKind::Boss, &full_dir, None).unwrap();
    assert!(full.complete);

    // Interrupt after trial 7, then resume to completion.
    let partial = run_study_to_dir(&config, MethodKind::Boss, &part_dir, Some(7)).unwrap();
    assert!(!partial.complete);
    assert_eq!(partial.completed_trials(), 7);
    let resumed = resume_study_dir::<f64>(&part_dir, None).unwrap();
    assert!(resumed.complete);
    assert_eq!(resumed.completed_trials(), 12);

    let full_log = std::fs::read(full_dir.join("trials.log")).unwrap();
    let part_log = std::fs::read(part_dir.join("trials.log")).unwrap();
    assert_eq!(full_log, part_log, "resumed log differs from uninterrupted");

    // Checkpoint blobs agree as well.
    for c in full.registry.iter() {
        let a = std::fs::read(full_dir.join("ckpt").join(format!("{}.bin", c.trial_id))).unwrap();
        let b = std::fs::read(part_dir.join("ckpt").join(format!("{}.bin", c.trial_id))).unwrap();
        assert_eq!(a, b, "trial {} blob differs", c.trial_id);
    }
}

#[test]
fn resuming_a_complete_study_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("done");
    run_study_to_dir(&micro_config(3), MethodKind::Bo, &run_dir, None).unwrap();
    let before = std::fs::read(run_dir.join("trials.log")).unwrap();
    let state = resume_study_dir::<f64>(&run_dir, None).unwrap();
    assert!(state.complete);
    let after = std::fs::read(run_dir.join("trials.log")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn corrupted_digest_refuses_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("study");
    run_study_to_dir(&micro_config(4), MethodKind::Baseline, &run_dir, None).unwrap();

    let meta_path = run_dir.join("study.meta");
    let text = std::fs::read_to_string(&meta_path).unwrap();
    // Flip the stored alpha so the digest no longer matches.
    let tampered = text.replace("\"alpha\": 0.5", "\"alpha\": 0.9");
    assert_ne!(text, tampered);
    std::fs::write(&meta_path, tampered).unwrap();

    let err = load::<f64>(&run_dir).unwrap_err();
    assert!(
        matches!(err, store::StoreError::DigestMismatch { .. }),
        "{err}"
    );
}

#[test]
fn truncated_log_reports_the_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("study");
    run_study_to_dir(&micro_config(5), MethodKind::Baseline, &run_dir, None).unwrap();

    let log_path = run_dir.join("trials.log");
    let bytes = std::fs::read(&log_path).unwrap();
    // Cut the final record mid-line.
    let cut = bytes.len() - 10;
    let offset_of_last_line = bytes[..cut]
        .iter()
        .rposition(|&b| b == b'\n')
        .map(|p| p + 1)
        .unwrap_or(0) as u64;
    std::fs::write(&log_path, &bytes[..cut]).unwrap();

    let err = load::<f64>(&run_dir).unwrap_err();
    match err {
        store::StoreError::TruncatedRecord { offset } => {
            assert_eq!(offset, offset_of_last_line);
        }
        other => panic!("expected TruncatedRecord, got {other}"),
    }
}

#[test]
fn append_only_resave_never_rewrites_earlier_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let save_dir = dir.path().join("incremental");

    let config = micro_config(6);
    let partial = {
        let writer = None;
        let mut driver = StudyDriver::new(config.clone(), MethodKind::Bo, writer).unwrap();
        driver.run(Some(5)).unwrap();
        driver.into_state()
    };
    save(&partial, &save_dir).unwrap();
    let first = std::fs::read(save_dir.join("trials.log")).unwrap();

    let full = {
        let mut driver = StudyDriver::from_state(partial, None).unwrap();
        driver.run(None).unwrap();
        driver.into_state()
    };
    save(&full, &save_dir).unwrap();
    let second = std::fs::read(save_dir.join("trials.log")).unwrap();
    assert!(second.len() > first.len());
    assert_eq!(&second[..first.len()], &first[..], "prefix was rewritten");
}

#[test]
fn referential_integrity_is_checked_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("study");
    run_study_to_dir(&micro_config(7), MethodKind::Boss, &run_dir, None).unwrap();

    // Point a boss trial's teacher at a never-checkpointed id.
    let log_path = run_dir.join("trials.log");
    let text = std::fs::read_to_string(&log_path).unwrap();
    let tampered = text.replace("\"teacher_id\":1,", "\"teacher_id\":99,");
    if tampered != text {
        std::fs::write(&log_path, tampered).unwrap();
        let err = load::<f64>(&run_dir).unwrap_err();
        assert!(
            matches!(err, store::StoreError::ReferentialIntegrity(_)),
            "{err}"
        );
    } else {
        // Teacher 1 never drawn under this seed; tamper with trial 2 instead.
        let tampered = text.replace("\"teacher_id\":2,", "\"teacher_id\":99,");
        assert_ne!(tampered, text, "no teacher reference found to tamper with");
        std::fs::write(&log_path, tampered).unwrap();
        assert!(load::<f64>(&run_dir).is_err());
    }
}

#[test]
fn summaries_match_full_loads() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("study");
    let state = run_study_to_dir(&micro_config(8), MethodKind::Boss, &run_dir, None).unwrap();
    let summary = load_summary(&run_dir).unwrap();
    assert_eq!(summary.method, MethodKind::Boss);
    assert_eq!(summary.completed_trials, 12);
    assert!(summary.complete);
    assert_eq!(
        summary.best_objective.unwrap(),
        state.best_checkpoint().unwrap().objective
    );
}

#[test]
fn concurrent_writers_are_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("study");
    let config = micro_config(9);
    run_study_to_dir(&config, MethodKind::Baseline, &run_dir, Some(0)).ok();
    // Simulate a stale/competing lock.
    std::fs::write(run_dir.join("lock"), b"").unwrap();
    match store::StudyWriter::open_append(&run_dir) {
        Err(store::StoreError::Locked(_)) => {}
        Err(other) => panic!("expected Locked, got {other}"),
        Ok(_) => panic!("expected Locked, writer opened"),
    }
}
