mod common;

use common::audit_sequence;

#[test]
fn thousand_random_sessions_pass_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let (mut actions, mut executed) = (0, 0);
    for seed in 0..1000 {
        let out = audit_sequence(seed, dir.path());
        assert_eq!(out.unapproved_low_level_executions, 0, "seed {seed}");
        assert!(out.replay_matches, "seed {seed}");
        actions += out.actions;
        executed += out.executed;
    }
    // the sequences must actually exercise the gate
    assert!(actions > 1000, "{actions} actions");
    assert!(executed > 200, "{executed} executions");
}
