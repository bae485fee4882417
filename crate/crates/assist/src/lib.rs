//! Knowledge base, language-model bridge with a per-phase autonomy gate,
//! and research-idea tooling.

pub mod bridge;
pub mod error;
pub mod ideation;
pub mod knowledge;
pub mod text;

pub use bridge::actions::{ActionKind, ActionState, Executor, PendingAction, ResultRef};
pub use bridge::provider::{MockProvider, OpenAiCompatible, Provider};
pub use bridge::session::{ChatSession, SessionState};
pub use bridge::{AutonomyPolicy, ChatMessage, ResearchPhase, Role};
pub use error::{AssistError, Result};
pub use knowledge::{assemble_context, summarize_directory, ContextBundle, KnowledgeDoc, KnowledgeStore};
