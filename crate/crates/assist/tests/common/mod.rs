#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chatbci_assist::bridge::actions::{ActionState, Executor, PendingAction, ResultRef};
use chatbci_assist::bridge::provider::{MockProvider, RetryPolicy};
use chatbci_assist::bridge::session::ChatSession;
use chatbci_assist::bridge::transcript::{LogicalClock, Transcript, TranscriptRecord};
use chatbci_assist::{AutonomyPolicy, ContextBundle, ResearchPhase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Lower-case the whole string, then split on anything that is not a letter
/// or digit.
pub fn oracle_words(s: &str) -> HashSet<String> {
    let lower = s.to_lowercase();
    let mut out = HashSet::new();
    let mut cur = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (oracle_words(a), oracle_words(b));
    let union: HashSet<&String> = x.iter().chain(y.iter()).collect();
    if union.is_empty() {
        return 0.0;
    }
    x.iter().filter(|w| y.contains(*w)).count() as f64 / union.len() as f64
}

pub fn oracle_tokens(s: &str) -> usize {
    let n = s.chars().count();
    n / 4 + usize::from(n % 4 != 0)
}

/// Hands out run ids in order.
pub struct CountingExecutor(pub usize);

impl Executor for CountingExecutor {
    fn execute(&mut self, _: &PendingAction) -> Result<ResultRef, String> {
        self.0 += 1;
        Ok(ResultRef { kind: "run".into(), id: format!("run-{:04}", self.0) })
    }
}

fn action_block(kind: &str, phase: ResearchPhase) -> String {
    format!("```action\n{{\"kind\": \"{kind}\", \"payload\": {{}}, \"phase\": \"{phase}\"}}\n```\n")
}

#[derive(Debug, Default)]
pub struct AuditOutcome {
    pub actions: usize,
    pub executed: usize,
    pub unapproved_low_level_executions: usize,
    pub replay_matches: bool,
}

/// One randomized session: messages proposing actions in random phases,
/// approvals and rejections of random ids, and policy changes. The
/// transcript is then audited independently of the session's own
/// bookkeeping.
pub fn audit_sequence(seed: u64, dir: &Path) -> AuditOutcome {
    const KINDS: [&str; 5] = ["analysis", "code", "test_generation", "training_run", "figure"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_policy = |rng: &mut ChaCha8Rng| {
        let map: BTreeMap<ResearchPhase, u8> = ResearchPhase::ALL.iter().map(|p| (*p, rng.random_range(0..=3))).collect();
        AutonomyPolicy::from_map(map).unwrap()
    };
    let n_messages = rng.random_range(1..=6);
    let mut provider = MockProvider::new();
    for m in 0..n_messages {
        let mut reply = format!("reply {m}\n");
        for _ in 0..rng.random_range(0..=3) {
            let phase = ResearchPhase::ALL[rng.random_range(0..6)];
            reply.push_str(&action_block(KINDS[rng.random_range(0..5)], phase));
        }
        provider.insert(&format!("msg {m}"), reply);
    }
    let path = dir.join(format!("audit-{seed}.jsonl"));
    let policy = random_policy(&mut rng);
    let mut session = ChatSession::open(
        format!("s{seed}"),
        Arc::new(provider),
        policy,
        Transcript::create(&path).unwrap(),
        Box::new(LogicalClock::default()),
    )
    .unwrap()
    .with_retry(RetryPolicy::none());
    let mut ex = CountingExecutor(0);
    let mut sent = 0;
    for _ in 0..rng.random_range(5..30) {
        let n_actions = session.actions().count();
        match rng.random_range(0..10) {
            0..=2 if sent < n_messages => {
                let phase = ResearchPhase::ALL[rng.random_range(0..6)];
                session.respond(&format!("msg {sent}"), phase, &ContextBundle::default(), &mut ex).unwrap();
                sent += 1;
            }
            3..=5 if n_actions > 0 => {
                let id = format!("act-{:04}", rng.random_range(1..=n_actions));
                let was_pending = session.action(&id).unwrap().state == ActionState::Pending;
                let res = session.approve(&id, &mut ex);
                assert_eq!(res.is_ok(), was_pending);
                if let Err(e) = res {
                    assert_eq!(e.kind(), "StateError");
                }
            }
            6..=7 if n_actions > 0 => {
                let id = format!("act-{:04}", rng.random_range(1..=n_actions));
                let was_pending = session.action(&id).unwrap().state == ActionState::Pending;
                assert_eq!(session.reject(&id, None).is_ok(), was_pending);
            }
            8 => session.set_policy(random_policy(&mut rng)).unwrap(),
            _ => {}
        }
    }

    let records = Transcript::read(&path).unwrap();
    let (actions, executed, violations) = audit_records(&records);
    let replay = ChatSession::replay(session.id(), &path).unwrap();
    AuditOutcome {
        actions,
        executed,
        unapproved_low_level_executions: violations,
        replay_matches: replay == session.state(),
    }
}

/// Walks the raw records: for every execution, the level in force when the
/// action was proposed must be ≥ 2, or an approval must precede it.
pub fn audit_records(records: &[TranscriptRecord]) -> (usize, usize, usize) {
    let mut policy: Option<AutonomyPolicy> = None;
    let mut level_at_proposal: HashMap<String, u8> = HashMap::new();
    let mut approved: HashSet<String> = HashSet::new();
    let (mut executed, mut violations) = (0, 0);
    for r in records {
        if let Some(p) = &r.policy {
            policy = Some(p.clone());
        }
        let Some(ev) = &r.action_event else { continue };
        match ev.state {
            ActionState::Pending => {
                let level = policy.as_ref().expect("policy recorded before any action").level(r.phase);
                level_at_proposal.insert(ev.action_id.clone(), level);
            }
            ActionState::Approved => {
                approved.insert(ev.action_id.clone());
            }
            ActionState::Executed => {
                executed += 1;
                if level_at_proposal[&ev.action_id] <= 1 && !approved.contains(&ev.action_id) {
                    violations += 1;
                }
            }
            _ => {}
        }
    }
    (level_at_proposal.len(), executed, violations)
}
