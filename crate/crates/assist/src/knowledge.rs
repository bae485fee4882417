//! Knowledge documents at three granularities, lexical retrieval, budgeted
//! context assembly, and directory summaries.
//!
//! A document lives in `<doc_id>.kb.json`:
//!
//! ```json
//! {"tags": ["eog", "artifacts"], "level0": "...", "level1": "...", "level2": "..."}
//! ```
//!
//! `level0` is required; the finer levels are optional but must not be
//! shorter (in estimated tokens) than the coarser ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AssistError, Result};
use crate::text::{jaccard, token_estimate, word_set};

pub const DOC_SUFFIX: &str = ".kb.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    #[serde(skip)]
    pub doc_id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub level0: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level2: Option<String>,
}

impl KnowledgeDoc {
    pub fn new(doc_id: impl Into<String>, tags: &[&str], level0: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            level0: level0.into(),
            level1: None,
            level2: None,
        }
    }

    pub fn with_levels(mut self, level1: impl Into<String>, level2: impl Into<String>) -> Self {
        self.level1 = Some(level1.into());
        self.level2 = Some(level2.into());
        self
    }

    pub fn level(&self, granularity: u8) -> Option<&str> {
        match granularity {
            0 => Some(&self.level0),
            1 => self.level1.as_deref(),
            2 => self.level2.as_deref(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AssistError::Document(format!("{}: {m}", self.doc_id)));
        if self.doc_id.is_empty() || self.doc_id.contains(['/', '\\']) {
            return bad("doc_id must be a plain, non-empty name".into());
        }
        if self.level0.trim().is_empty() {
            return bad("level0 is empty".into());
        }
        let mut prev = token_estimate(&self.level0);
        for g in 1..=2 {
            if let Some(text) = self.level(g) {
                let t = token_estimate(text);
                if t < prev {
                    return bad(format!("level{g} is shorter than the level below it"));
                }
                prev = t;
            }
        }
        Ok(())
    }

    /// Tags plus the paragraph-level text (level 0 when absent).
    pub fn retrieval_text(&self) -> String {
        format!("{} {}", self.tags.join(" "), self.level1.as_deref().unwrap_or(&self.level0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// In-memory snapshot of a knowledge directory.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeStore {
    root: Option<PathBuf>,
    docs: BTreeMap<String, KnowledgeDoc>,
}

impl KnowledgeStore {
    pub fn in_memory(docs: impl IntoIterator<Item = KnowledgeDoc>) -> Result<Self> {
        let mut store = Self::default();
        for d in docs {
            d.validate()?;
            store.docs.insert(d.doc_id.clone(), d);
        }
        Ok(store)
    }

    /// Load every `*.kb.json` in `root` (created if missing).
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut docs = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(id) = name.strip_suffix(DOC_SUFFIX) else { continue };
            let mut doc: KnowledgeDoc = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| AssistError::Document(format!("{name}: {e}")))?;
            doc.doc_id = id.to_string();
            doc.validate()?;
            docs.insert(doc.doc_id.clone(), doc);
        }
        Ok(Self { root: Some(root), docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&KnowledgeDoc> {
        self.docs.get(doc_id)
    }

    pub fn docs(&self) -> impl Iterator<Item = &KnowledgeDoc> {
        self.docs.values()
    }

    /// Insert or replace a document; on disk the file is swapped in whole.
    pub fn put(&mut self, doc: KnowledgeDoc) -> Result<()> {
        doc.validate()?;
        if let Some(root) = &self.root {
            let path = root.join(format!("{}{DOC_SUFFIX}", doc.doc_id));
            let tmp = root.join(format!(".{}{DOC_SUFFIX}.tmp", doc.doc_id));
            fs::write(&tmp, serde_json::to_vec_pretty(&doc)?)?;
            fs::rename(&tmp, &path)?;
        }
        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    /// Documents with positive word-Jaccard score against `query`, best first,
    /// ties broken by doc_id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<ScoredDoc> {
        let q = word_set(query);
        let mut scored: Vec<ScoredDoc> = self
            .docs
            .values()
            .map(|d| ScoredDoc { doc_id: d.doc_id.clone(), score: jaccard(&q, &word_set(&d.retrieval_text())) })
            .filter(|s| s.score > 0.0)
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        scored.truncate(k);
        scored
    }

    pub fn resolve(&self, ranked: &[ScoredDoc]) -> Vec<&KnowledgeDoc> {
        ranked.iter().filter_map(|s| self.docs.get(&s.doc_id)).collect()
    }

    /// Retrieve then assemble in one step.
    pub fn context_for(&self, query: &str, k: usize, budget_tokens: usize) -> ContextBundle {
        assemble_context(&self.resolve(&self.retrieve(query, k)), budget_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub doc_id: String,
    pub granularity: u8,
    pub text: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub excerpts: Vec<Excerpt>,
    pub total_tokens: usize,
    pub budget_tokens: usize,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.excerpts.is_empty()
    }

    /// Text of the system message that carries the bundle.
    pub fn render(&self) -> String {
        let mut out = String::from("Relevant knowledge base entries:\n");
        for e in &self.excerpts {
            let _ = write!(out, "\n[{}]\n{}\n", e.doc_id, e.text);
        }
        out
    }
}

/// Walk `docs` in order; take each at the finest granularity that still
/// fits the remaining budget, coarsening as needed, skipping it otherwise.
pub fn assemble_context(docs: &[&KnowledgeDoc], budget_tokens: usize) -> ContextBundle {
    let mut bundle = ContextBundle { budget_tokens, ..ContextBundle::default() };
    for doc in docs {
        let remaining = budget_tokens - bundle.total_tokens;
        let choice = (0..=2u8)
            .rev()
            .filter_map(|g| doc.level(g).map(|t| (g, t, token_estimate(t))))
            .find(|(_, _, n)| *n <= remaining);
        if let Some((g, text, n)) = choice {
            bundle.excerpts.push(Excerpt { doc_id: doc.doc_id.clone(), granularity: g, text: text.to_string(), tokens: n });
            bundle.total_tokens += n;
        }
    }
    bundle
}

// ---------------------------------------------------------------------------
// directory summaries

const LINE_LIMIT: usize = 120;
const READ_LIMIT: u64 = 1 << 20;

fn clip(s: &str) -> String {
    let s = s.trim();
    if s.chars().count() <= LINE_LIMIT {
        s.to_string()
    } else {
        let head: String = s.chars().take(LINE_LIMIT - 3).collect();
        format!("{head}...")
    }
}

fn human_size(bytes: u64) -> String {
    const UNITS: [&str; 4] = ["KiB", "MiB", "GiB", "TiB"];
    if bytes < 1024 {
        return format!("{bytes} B");
    }
    let mut v = bytes as f64 / 1024.0;
    let mut u = 0;
    while v >= 1024.0 && u < UNITS.len() - 1 {
        v /= 1024.0;
        u += 1;
    }
    format!("{v:.1} {}", UNITS[u])
}

fn read_text(path: &Path) -> Option<String> {
    use std::io::Read;
    let mut buf = Vec::new();
    fs::File::open(path).ok()?.take(READ_LIMIT).read_to_end(&mut buf).ok()?;
    if buf.contains(&0) {
        return None;
    }
    match String::from_utf8(buf) {
        Ok(s) => Some(s),
        // a multi-byte character cut by the read limit
        Err(e) if e.utf8_error().error_len().is_none() => {
            let valid = e.utf8_error().valid_up_to();
            Some(String::from_utf8_lossy(&e.into_bytes()[..valid]).into_owned())
        }
        Err(_) => None,
    }
}

fn headings(name: &str, text: &str) -> Vec<String> {
    let ext = name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default();
    let item = |line: &str| -> bool {
        let mut l = line.trim_start();
        for prefix in ["pub(crate) ", "pub ", "async ", "unsafe "] {
            l = l.strip_prefix(prefix).unwrap_or(l);
        }
        ["fn ", "struct ", "enum ", "trait ", "impl ", "impl<", "mod "].iter().any(|k| l.starts_with(k))
    };
    text.lines()
        .filter(|line| match ext.as_str() {
            "md" | "markdown" | "rst" | "txt" => line.starts_with('#'),
            "toml" | "ini" | "cfg" => line.trim_start().starts_with('[') && line.trim_end().ends_with(']'),
            "rs" => item(line),
            "py" => {
                let l = line.trim_start();
                l.starts_with("def ") || l.starts_with("class ") || l.starts_with("async def ")
            }
            _ => false,
        })
        .map(|l| clip(l.trim_end().trim_end_matches('{').trim_end_matches(':')))
        .collect()
}

/// Indented tree of `path`. Level 0 lists entries with sizes, level 1 adds
/// the first non-empty line of each text file, level 2 adds the headings
/// (markdown `#`, `[section]`, Rust and Python items). Entries are sorted by
/// name; entries that cannot be read are listed with the reason.
pub fn summarize_directory(path: &Path, granularity: u8) -> Result<String> {
    if granularity > 2 {
        return Err(AssistError::Precondition(format!("granularity must be 0, 1 or 2, got {granularity}")));
    }
    let meta = fs::metadata(path)?;
    if !meta.is_dir() {
        return Err(AssistError::Precondition(format!("{} is not a directory", path.display())));
    }
    let root_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut out = format!("{root_name}/\n");
    walk(path, 1, granularity, &mut out);
    Ok(out)
}

fn walk(dir: &Path, depth: usize, granularity: u8, out: &mut String) {
    let indent = "  ".repeat(depth);
    let entries = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) => {
            let _ = writeln!(out, "{indent}[unreadable: {}]", e.kind());
            return;
        }
    };
    let mut items: Vec<(String, Result<fs::DirEntry, std::io::Error>)> = Vec::new();
    for entry in entries {
        match entry {
            Ok(e) => items.push((e.file_name().to_string_lossy().into_owned(), Ok(e))),
            Err(e) => items.push((String::new(), Err(e))),
        }
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, entry) in items {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let _ = writeln!(out, "{indent}[unreadable entry: {}]", e.kind());
                continue;
            }
        };
        let path = entry.path();
        let ft = match entry.file_type() {
            Ok(t) => t,
            Err(e) => {
                let _ = writeln!(out, "{indent}{name} [unreadable: {}]", e.kind());
                continue;
            }
        };
        if ft.is_symlink() {
            let target = fs::read_link(&path).map(|t| t.display().to_string()).unwrap_or_else(|_| "?".into());
            let _ = writeln!(out, "{indent}{name} -> {target}");
        } else if ft.is_dir() {
            let _ = writeln!(out, "{indent}{name}/");
            walk(&path, depth + 1, granularity, out);
        } else {
            let size = match entry.metadata() {
                Ok(m) => m.len(),
                Err(e) => {
                    let _ = writeln!(out, "{indent}{name} [unreadable: {}]", e.kind());
                    continue;
                }
            };
            let _ = writeln!(out, "{indent}{name} ({})", human_size(size));
            if granularity == 0 {
                continue;
            }
            let detail = format!("{indent}    ");
            match read_text(&path) {
                Some(text) => {
                    if let Some(first) = text.lines().find(|l| !l.trim().is_empty()) {
                        let _ = writeln!(out, "{detail}| {}", clip(first));
                    }
                    if granularity == 2 {
                        for h in headings(&name, &text) {
                            let _ = writeln!(out, "{detail}- {h}");
                        }
                    }
                }
                None if fs::File::open(&path).is_err() => {
                    let _ = writeln!(out, "{detail}[unreadable]");
                }
                None => {
                    let _ = writeln!(out, "{detail}[binary]");
                }
            }
        }
    }
}
