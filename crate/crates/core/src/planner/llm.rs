//! Planner backed by a remote text-completion endpoint.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HistoryEntry, PlannerDecision, SerializedGraph};
use crate::scene::SkillKind;
use crate::world::SkillCommand;

pub const MAX_EXAMPLES: usize = 7;
const RETRIES: usize = 2;
const TIMEOUT: Duration = Duration::from_secs(30);

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const GRAMMAR: &str = include_str!("../../prompts/grammar.txt");
const EXAMPLES: [&str; MAX_EXAMPLES] = [
    include_str!("../../prompts/examples/1.txt"),
    include_str!("../../prompts/examples/2.txt"),
    include_str!("../../prompts/examples/3.txt"),
    include_str!("../../prompts/examples/4.txt"),
    include_str!("../../prompts/examples/5.txt"),
    include_str!("../../prompts/examples/6.txt"),
    include_str!("../../prompts/examples/7.txt"),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("example count must be between 1 and {MAX_EXAMPLES}, got {0}")]
    ExampleCount(usize),
    #[error("reading prompt asset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system: String,
    pub examples: Vec<String>,
    pub grammar: String,
}

impl PromptConfig {
    /// The shipped prompt truncated to the first `count` examples.
    pub fn bundled(count: usize) -> Result<Self, PromptError> {
        if !(1..=MAX_EXAMPLES).contains(&count) {
            return Err(PromptError::ExampleCount(count));
        }
        Ok(Self {
            system: SYSTEM.to_string(),
            examples: EXAMPLES[..count].iter().map(|s| s.to_string()).collect(),
            grammar: GRAMMAR.to_string(),
        })
    }

    /// Loads `system.txt`, `grammar.txt` and `examples/1.txt`… from a
    /// directory.
    pub fn from_dir(dir: &Path, count: usize) -> Result<Self, PromptError> {
        if !(1..=MAX_EXAMPLES).contains(&count) {
            return Err(PromptError::ExampleCount(count));
        }
        let read = |p: std::path::PathBuf| {
            std::fs::read_to_string(&p).map_err(|source| PromptError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let mut examples = Vec::with_capacity(count);
        for i in 1..=count {
            examples.push(read(dir.join("examples").join(format!("{i}.txt")))?);
        }
        Ok(Self {
            system: read(dir.join("system.txt"))?,
            examples,
            grammar: read(dir.join("grammar.txt"))?,
        })
    }

    pub fn render(&self, ser: &SerializedGraph, history: &[HistoryEntry]) -> String {
        let mut out = String::new();
        out.push_str(self.system.trim_end());
        out.push_str("\n\n");
        out.push_str(self.grammar.trim_end());
        out.push_str("\n\nExamples:\n");
        for e in &self.examples {
            out.push('\n');
            out.push_str(e.trim_end());
            out.push('\n');
        }
        out.push_str("\nGraph:\n");
        out.push_str(&ser.text());
        out.push_str("History:\n");
        if history.is_empty() {
            out.push_str("(none)\n");
        }
        for h in history {
            match h {
                HistoryEntry::Skill { command, success } => out.push_str(&format!(
                    "{} {} {}\n",
                    command.skill,
                    command.target,
                    if *success { "succeeded" } else { "failed" }
                )),
                HistoryEntry::Scan { waypoint } => out.push_str(&format!("scan {waypoint}\n")),
            }
        }
        out.push_str("Reply:\n");
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("LLM endpoint not configured: {0}")]
    Config(String),
    #[error("LLM request failed: {0}")]
    Request(String),
}

pub trait Transport {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError>;
}

/// Blocking HTTP client posting `{"prompt": ...}` as JSON.
#[derive(Debug)]
pub struct HttpTransport {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: String, key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(TIMEOUT))
            .build();
        Self {
            url,
            key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads `CURIOUS_LLM_URL` and `CURIOUS_LLM_KEY`.
    pub fn from_env() -> Result<Self, TransportError> {
        let url = std::env::var("CURIOUS_LLM_URL")
            .map_err(|_| TransportError::Config("CURIOUS_LLM_URL is not set".into()))?;
        Ok(Self::new(url, std::env::var("CURIOUS_LLM_KEY").ok()))
    }
}

/// Completion text from common response shapes, else the raw body.
fn extract_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<serde_json::Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/text"),
        v.pointer("/completion"),
        v.pointer("/choices/0/text"),
        v.pointer("/choices/0/message/content"),
        v.pointer("/content/0/text"),
    ];
    let text = candidates
        .into_iter()
        .flatten()
        .find_map(|x| x.as_str().map(String::from));
    text.unwrap_or_else(|| body.to_string())
}

impl Transport for HttpTransport {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({
                "prompt": prompt,
                "max_tokens": 32,
                "temperature": 0,
            }))
            .map_err(|e| TransportError::Request(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        Ok(extract_text(&body))
    }
}

/// Replies from a fixed script, then `DONE`. Records every prompt.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransport {
    replies: VecDeque<Result<String, TransportError>>,
    pub prompts: Vec<String>,
}

impl ScriptedTransport {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(|r| Ok(r.into())).collect(),
            prompts: Vec::new(),
        }
    }

    pub fn push_error(&mut self, e: TransportError) {
        self.replies.push_back(Err(e));
    }
}

impl Transport for ScriptedTransport {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
        self.prompts.push(prompt.to_string());
        self.replies.pop_front().unwrap_or_else(|| Ok("DONE".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmDecision {
    pub decision: PlannerDecision,
    pub reply: Option<String>,
    /// Set when the reply broke the grammar or the transport gave up; the
    /// decision is then a scan.
    pub failure: Option<String>,
}

/// Parses a reply against the grammar. `SCAN` maps to `next_scan`.
pub fn parse_reply(reply: &str, next_scan: usize) -> Result<PlannerDecision, String> {
    let tokens: Vec<&str> = reply.split_whitespace().collect();
    match tokens.as_slice() {
        ["DONE"] => Ok(PlannerDecision::Done),
        ["SCAN"] => Ok(PlannerDecision::Scan(next_scan)),
        ["SKILL", name, "TARGET", id] => {
            let skill =
                SkillKind::from_name(name).ok_or_else(|| format!("unknown skill `{name}`"))?;
            let target = id
                .parse()
                .map_err(|_| format!("target `{id}` is not a node id"))?;
            Ok(PlannerDecision::Skill(SkillCommand { skill, target }))
        }
        _ => Err(format!("reply does not match the grammar: {:?}", reply.trim())),
    }
}

/// Asks the model for the next action. Transport errors are retried twice;
/// grammar violations and unknown targets fall back to a scan.
pub fn plan_next_llm(
    ser: &SerializedGraph,
    history: &[HistoryEntry],
    prompt: &PromptConfig,
    transport: &mut dyn Transport,
) -> LlmDecision {
    let next_scan = history
        .iter()
        .filter(|h| matches!(h, HistoryEntry::Scan { .. }))
        .count();
    let text = prompt.render(ser, history);
    let mut last_err = None;
    for _ in 0..=RETRIES {
        match transport.complete(&text) {
            Ok(reply) => {
                let parsed = parse_reply(&reply, next_scan).and_then(|d| match d {
                    PlannerDecision::Skill(c) if ser.line(c.target).is_none() || c.target == 0 => {
                        Err(format!("target {} is not in the graph", c.target))
                    }
                    d => Ok(d),
                });
                return match parsed {
                    Ok(decision) => LlmDecision {
                        decision,
                        reply: Some(reply),
                        failure: None,
                    },
                    Err(e) => LlmDecision {
                        decision: PlannerDecision::Scan(next_scan),
                        reply: Some(reply),
                        failure: Some(e),
                    },
                };
            }
            Err(e) => last_err = Some(e),
        }
    }
    LlmDecision {
        decision: PlannerDecision::Scan(next_scan),
        reply: None,
        failure: last_err.map(|e| e.to_string()),
    }
}
