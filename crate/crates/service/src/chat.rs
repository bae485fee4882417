//! Line-oriented chat for the terminal. Plain lines go to the assistant;
//! lines starting with `/` are commands.

use std::io::{BufRead, Write};
use std::sync::Arc;

use chatbci_assist::{ActionState, PendingAction, ResearchPhase};

use crate::api::App;
use crate::error::{Result, ServiceError};
use crate::executor::ExecMode;

pub const HELP: &str = "\
/approve <action_id>        run a pending action
/reject <action_id> [why]   drop a pending action
/phase <phase>              phase attached to following messages
/policy [<phase> <level>]   show or change the autonomy policy
/actions                    list actions in this session
/quit                       leave";

fn describe(a: &PendingAction) -> String {
    let mut line = format!("[{} {} {} {}]", a.action_id, a.kind.as_str(), a.phase, a.state.as_str());
    if let Some(r) = &a.result {
        line.push_str(&format!(" -> {} {}", r.kind, r.id));
    }
    if let Some(e) = &a.error {
        line.push_str(&format!(" error: {e}"));
    }
    if let Some(n) = &a.note {
        line.push_str(&format!(" ({n})"));
    }
    line
}

/// Runs until `/quit` or end of input and returns the session id. Actions
/// execute inline, so a training run finishes before the next prompt.
pub fn run_chat(app: &Arc<App>, phase: ResearchPhase, input: impl BufRead, mut out: impl Write) -> Result<String> {
    let id = app.open_session(None)?;
    let session = app.session(&id)?;
    let mut ex = app.executor_for(&id, ExecMode::Inline);
    let mut phase = phase;
    writeln!(out, "session {id}, phase {phase}; /help for commands")?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut s = session.lock().unwrap_or_else(|e| e.into_inner());
        let outcome: Result<()> = match line.split_once(' ').unwrap_or((line, "")) {
            ("/quit", _) | ("/exit", _) => break,
            ("/help", _) => writeln!(out, "{HELP}").map_err(Into::into),
            ("/phase", name) => name
                .trim()
                .parse::<ResearchPhase>()
                .map_err(ServiceError::from)
                .and_then(|p| {
                    phase = p;
                    writeln!(out, "phase {phase}").map_err(Into::into)
                }),
            ("/policy", rest) if rest.trim().is_empty() => {
                let levels: Vec<String> = s.policy().iter().map(|(p, l)| format!("{p}={l}")).collect();
                writeln!(out, "policy {}", levels.join(" ")).map_err(Into::into)
            }
            ("/policy", rest) => (|| {
                let (p, l) = rest.trim().split_once(' ').ok_or_else(|| ServiceError::field("policy", "usage: /policy <phase> <level>"))?;
                let p: ResearchPhase = p.parse()?;
                let l: u8 = l.trim().parse().map_err(|_| ServiceError::field("level", "must be 0..=3"))?;
                let mut policy = s.policy().clone();
                policy.set(p, l)?;
                s.set_policy(policy)?;
                writeln!(out, "{p} set to {l}")?;
                Ok(())
            })(),
            ("/actions", _) => {
                for a in s.actions() {
                    writeln!(out, "{}", describe(a))?;
                }
                Ok(())
            }
            ("/approve", aid) => s.approve(aid.trim(), &mut ex).map_err(Into::into).and_then(|a| {
                writeln!(out, "{}", describe(&a)).map_err(Into::into)
            }),
            ("/reject", rest) => {
                let (aid, why) = rest.trim().split_once(' ').unwrap_or((rest.trim(), ""));
                let why = (!why.trim().is_empty()).then(|| why.trim().to_string());
                s.reject(aid, why).map_err(Into::into).and_then(|a| writeln!(out, "{}", describe(&a)).map_err(Into::into))
            }
            (cmd, _) if cmd.starts_with('/') => Err(ServiceError::field("command", format!("unknown command {cmd}"))),
            _ => {
                let context = app.knowledge.context_for(line, app.config.retrieval_k, app.config.budget_tokens);
                s.respond(line, phase, &context, &mut ex).map_err(Into::into).and_then(|turn| {
                    writeln!(out, "assistant: {}", turn.reply.content.trim_end())?;
                    for a in &turn.actions {
                        writeln!(out, "{}", describe(a))?;
                    }
                    for e in &turn.parse_errors {
                        writeln!(out, "unparsed action block: {e}")?;
                    }
                    Ok(())
                })
            }
        };
        if let Err(e) = outcome {
            writeln!(out, "error: {}", e.to_line())?;
        }
        let pending = s.actions().filter(|a| a.state == ActionState::Pending).count();
        drop(s);
        if pending > 0 && !line.starts_with('/') {
            writeln!(out, "{pending} action(s) awaiting /approve or /reject")?;
        }
    }
    Ok(id)
}
