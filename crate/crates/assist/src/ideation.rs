//! Research-idea cards parsed from labeled model output, and a novelty score
//! against a literature search.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bridge::provider::{GenerationParams, Provider, RetryPolicy, WireMessage};
use crate::bridge::Role;
use crate::error::{AssistError, Result};
use crate::text::{jaccard, word_set};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaCard {
    pub id: String,
    pub research_question: String,
    pub gap: String,
    pub motivation: String,
    pub approach: String,
    #[serde(default)]
    pub novelty_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Question,
    Gap,
    Motivation,
    Approach,
}

const FIELD_NAMES: [&str; 4] = ["Question", "Gap", "Motivation", "Approach"];

fn field_for(label: &str) -> Option<Field> {
    match label.trim().to_ascii_lowercase().as_str() {
        "question" | "research question" => Some(Field::Question),
        "gap" | "research gap" => Some(Field::Gap),
        "motivation" => Some(Field::Motivation),
        "approach" | "proposed approach" => Some(Field::Approach),
        _ => None,
    }
}

/// Byte offset of the value if `line` starts with a known label, after any
/// list marker and bold markup.
fn labeled(line: &str) -> Option<(Field, usize)> {
    let mut rest = line.trim_start();
    if let Some(r) = rest.strip_prefix(['-', '*', '+']).filter(|r| r.starts_with(' ')) {
        rest = r.trim_start();
    } else {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            if let Some(r) = rest[digits..].strip_prefix(['.', ')']) {
                rest = r.trim_start();
            }
        }
    }
    let bold = rest.starts_with("**");
    if bold {
        rest = &rest[2..];
    }
    let colon = rest.find(':')?;
    let field = field_for(rest[..colon].trim_end_matches('*'))?;
    let mut after = &rest[colon + 1..];
    if bold {
        after = after.strip_prefix("**").unwrap_or(after);
    }
    let value = after.trim_start();
    Some((field, line.len() - value.len()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub parsed: usize,
    pub dropped: usize,
    pub problems: Vec<String>,
}

#[derive(Default)]
struct Draft<'a> {
    start_line: usize,
    fields: [Option<&'a str>; 4],
}

/// Line-anchored parser. An idea starts at each `Question:` line; the value
/// of a field runs to the end of its line plus any following unlabeled,
/// non-blank lines. Every value is a slice of `reply`.
pub fn parse_ideas(reply: &str) -> (Vec<IdeaCard>, ParseReport) {
    let lines: Vec<(usize, &str)> = {
        let mut offset = 0;
        reply
            .split_inclusive('\n')
            .map(|l| {
                let start = offset;
                offset += l.len();
                (start, l.trim_end_matches(['\n', '\r']))
            })
            .collect()
    };
    let mut drafts: Vec<Draft> = Vec::new();
    let mut report = ParseReport::default();
    let mut i = 0;
    while i < lines.len() {
        let (off, line) = lines[i];
        let Some((field, vstart)) = labeled(line) else {
            i += 1;
            continue;
        };
        let mut end = off + line.len();
        let mut j = i + 1;
        while j < lines.len() && !lines[j].1.trim().is_empty() && labeled(lines[j].1).is_none() {
            end = lines[j].0 + lines[j].1.len();
            j += 1;
        }
        let value = reply[off + vstart..end].trim();
        if field == Field::Question || drafts.is_empty() {
            drafts.push(Draft { start_line: i + 1, ..Draft::default() });
        }
        let draft = drafts.last_mut().unwrap();
        let slot = &mut draft.fields[field as usize];
        if slot.is_some() {
            report.problems.push(format!("line {}: repeated {} label ignored", i + 1, FIELD_NAMES[field as usize]));
        } else if !value.is_empty() {
            *slot = Some(value);
        }
        i = j;
    }
    let mut cards = Vec::new();
    for d in drafts {
        let missing: Vec<&str> = (0..4).filter(|&k| d.fields[k].is_none()).map(|k| FIELD_NAMES[k]).collect();
        if !missing.is_empty() {
            report.dropped += 1;
            report.problems.push(format!("idea at line {}: missing {}", d.start_line, missing.join(", ")));
            continue;
        }
        let [q, g, m, a] = d.fields.map(|f| f.unwrap().to_string());
        cards.push(IdeaCard {
            id: format!("idea-{:03}", cards.len() + 1),
            research_question: q,
            gap: g,
            motivation: m,
            approach: a,
            novelty_score: None,
        });
    }
    report.parsed = cards.len();
    (cards, report)
}

pub fn idea_prompt(n: usize, topic: &str) -> String {
    format!(
        "{topic}\n\nPropose {n} distinct research ideas. For each idea write exactly four lines, \
         each starting with its label:\nQuestion: <research question>\nGap: <what is missing in \
         current work>\nMotivation: <why it matters>\nApproach: <how to investigate it>\n\
         Separate ideas with a blank line and add no other text."
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdeaBatch {
    pub cards: Vec<IdeaCard>,
    pub report: ParseReport,
    pub raw: String,
}

pub fn generate_ideas(
    n: usize,
    topic: &str,
    provider: &dyn Provider,
    params: &GenerationParams,
    retry: &RetryPolicy,
) -> Result<IdeaBatch> {
    if n == 0 {
        return Err(AssistError::Precondition("n must be at least 1".into()));
    }
    let messages = [WireMessage { role: Role::Human, content: idea_prompt(n, topic) }];
    let raw = retry.run(provider, &messages, params).map_err(|f| AssistError::Provider(f.join("; ")))?;
    let (mut cards, report) = parse_ideas(&raw);
    if cards.is_empty() {
        let message = match report.problems.first() {
            Some(p) => format!("{} dropped; first problem: {p}", report.dropped),
            None => "reply contains no labeled ideas".into(),
        };
        return Err(AssistError::Generation { message, raw });
    }
    cards.truncate(n);
    Ok(IdeaBatch { cards, report, raw })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paper {
    pub title: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
}

impl Paper {
    pub fn text(&self) -> String {
        match &self.abstract_text {
            Some(a) => format!("{} {a}", self.title),
            None => self.title.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureMatch {
    pub title: String,
    pub year: Option<i32>,
    pub similarity: f64,
}

pub trait LiteratureClient: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> std::result::Result<Vec<Paper>, String>;
}

/// Returns its whole corpus for every query.
#[derive(Debug, Clone, Default)]
pub struct MockLiterature {
    pub corpus: Vec<Paper>,
}

impl MockLiterature {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self { corpus: serde_json::from_slice(&fs::read(path)?)? })
    }
}

impl LiteratureClient for MockLiterature {
    fn search(&self, _: &str, limit: usize) -> std::result::Result<Vec<Paper>, String> {
        Ok(self.corpus.iter().take(limit).cloned().collect())
    }
}

/// `GET {endpoint}?query=..&fields=title,year,abstract&limit=..`, expecting
/// `{"data": [paper, ...]}`. At most one request per second.
pub struct HttpLiterature {
    endpoint: String,
    agent: ureq::Agent,
    last: Mutex<Option<Instant>>,
}

impl HttpLiterature {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), agent, last: Mutex::new(None) }
    }
}

impl LiteratureClient for HttpLiterature {
    fn search(&self, query: &str, limit: usize) -> std::result::Result<Vec<Paper>, String> {
        {
            let mut last = self.last.lock().map_err(|e| e.to_string())?;
            if let Some(t) = *last {
                let wait = Duration::from_secs(1).saturating_sub(t.elapsed());
                std::thread::sleep(wait);
            }
            *last = Some(Instant::now());
        }
        let mut resp = self
            .agent
            .get(&self.endpoint)
            .query("query", query)
            .query("fields", "title,year,abstract")
            .query("limit", limit.to_string())
            .call()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(format!("HTTP {status}"));
        }
        #[derive(Deserialize)]
        struct Page {
            #[serde(default)]
            data: Vec<Paper>,
        }
        let page: Page = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(page.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub score: Option<f64>,
    pub matches: Vec<LiteratureMatch>,
    #[serde(default)]
    pub warning: Option<String>,
}

pub const SEARCH_LIMIT: usize = 20;

/// `1 − max` case-folded word Jaccard between the question and each
/// `title + abstract`; an empty result set scores 1.
pub fn novelty_check(card: &IdeaCard, client: &dyn LiteratureClient) -> NoveltyReport {
    let papers = match client.search(&card.research_question, SEARCH_LIMIT) {
        Ok(p) => p,
        Err(e) => return NoveltyReport { score: None, matches: Vec::new(), warning: Some(e) },
    };
    let q = word_set(&card.research_question);
    let mut matches: Vec<LiteratureMatch> = papers
        .iter()
        .map(|p| LiteratureMatch { title: p.title.clone(), year: p.year, similarity: jaccard(&q, &word_set(&p.text())) })
        .collect();
    matches.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    let best = matches.first().map_or(0.0, |m| m.similarity);
    NoveltyReport { score: Some(1.0 - best), matches, warning: None }
}

pub fn save_ideas(path: &Path, cards: &[IdeaCard]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    for c in cards {
        serde_json::to_writer(&mut f, c)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_ideas(path: &Path) -> Result<Vec<IdeaCard>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
