//! Prior-guided initialization of the graph search.
//!
//! A prompt assembled from four sections (role/introduction, domain
//! knowledge, task, hints) asks a chat-completion model for temporal causal
//! relations as `(cause, effect, lag)` tuples. The answer is parsed into
//! relations, turned into a binary prior matrix, and mapped to initial edge
//! logits. The completion client is pluggable: an HTTP client speaking the
//! standard chat-completion schema, or a stub that replays a canned response
//! from disk (used for tests and reproducible reruns).

use ndarray::Array2;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Default introduction: defines the tuple encoding of directed temporal
/// causal relations that the parser expects back.
pub const DEFAULT_INTRODUCTION: &str = "A directed temporal causal relationship between variables xu and xv can be represented as a tuple (xu, xv, t), signifying that the variable xu, lagging t time units, causally influences the current state of variable xv. The tuple (xu, xv, 0) denotes contemporaneous causality if t=0; if t>0, the tuple (xu, xv, t) indicates time-lagged causality. Note that when t=0, i.e. in (xu, xv, 0), xu and xv must be different variables, as intra-slice self-causality is not considered. Also, (xu, xv, 0) and (xu, xv, t) for t>0 have the possibility to coexist, suggesting that contemporaneous and time-lagged causality between two variables might simultaneously occur sometimes.\n\nOur task is to unearth all the possible temporal causal relationships among variables, grounded on the subsequent information.";

/// Zero-shot chain-of-thought hint line.
pub const COT_ZERO_SHOT: &str = "Proceed methodically, step by step.";

/// Chain-of-thought setting for the hint section.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cot {
    #[default]
    None,
    ZeroShot,
    /// User-supplied worked example appended to the hint section.
    OneShot(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hints {
    pub implication_text: Option<String>,
    pub cot: Cot,
}

/// Everything needed to render one prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSpec {
    pub role_text: String,
    /// Overrides [`DEFAULT_INTRODUCTION`] when set.
    #[serde(default)]
    pub introduction_text: Option<String>,
    #[serde(default)]
    pub knowledge_blocks: Vec<String>,
    #[serde(default)]
    pub data_excerpt: Option<String>,
    /// Variable count; must match `var_names`.
    pub n: usize,
    pub var_names: Vec<String>,
    /// Max lag offered to the model.
    pub p: usize,
    #[serde(default)]
    pub hints: Hints,
}

/// Render the prompt: definition, information, task, hint — in that order.
pub fn build_prompt(spec: &PromptSpec) -> Result<String> {
    if spec.var_names.is_empty() {
        return Err(Error::Config("prompt needs at least one variable name".into()));
    }
    if spec.n != spec.var_names.len() {
        return Err(Error::Config(format!(
            "n={} does not match {} variable names",
            spec.n,
            spec.var_names.len()
        )));
    }
    let mut sections: Vec<String> = Vec::new();
    sections.push(format!("Role: {}", spec.role_text));
    let intro = spec.introduction_text.as_deref().unwrap_or(DEFAULT_INTRODUCTION);
    sections.push(format!("Introduction: {intro}"));
    if !spec.knowledge_blocks.is_empty() {
        let blocks = spec.knowledge_blocks.join("\n\n");
        sections.push(format!("Domain knowledge: {blocks}"));
    }
    if let Some(excerpt) = &spec.data_excerpt {
        sections.push(format!("Data: {excerpt}"));
    }
    sections.push(format!(
        "Task: Please identify all temporal causal relations among the {} variables ({}), \
         considering only contemporaneous and {} time-lagged causality. Conclude your response \
         with the full answer as a Python list of tuples (xu, xv, t) after 'Answer:'. Don't \
         simplify and just give me some examples. You should cover all possible relationships \
         in your answer.",
        spec.n,
        spec.var_names.join(", "),
        spec.p
    ));
    if let Some(implication) = &spec.hints.implication_text {
        sections.push(format!("Implication: {implication}"));
    }
    match &spec.hints.cot {
        Cot::None => {}
        Cot::ZeroShot => sections.push(COT_ZERO_SHOT.to_string()),
        Cot::OneShot(example) => sections.push(format!("Example: {example}")),
    }
    Ok(sections.join("\n\n"))
}

/// Parsed relation tuples `(cause u, effect v, lag t)` by variable index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRelations {
    pub tuples: BTreeSet<(usize, usize, usize)>,
    /// Raw tuples that were rejected or flagged, with reasons.
    pub warnings: Vec<String>,
}

/// Whether invalid tuples abort parsing or are dropped with a warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    Strict,
    Lenient,
}

/// Extract relation tuples from a model answer.
///
/// The scan starts after the last `Answer:` marker (chain-of-thought text may
/// mention the marker earlier). Names match case-sensitively, optionally via
/// the alias map. Tuples violating the relation invariants are dropped with a
/// warning (lenient) or abort (strict); positive-lag self-relations are kept
/// but flagged, since the lagged layout supports them.
pub fn parse_answer(
    text: &str,
    var_names: &[String],
    d: usize,
    p: usize,
    strictness: Strictness,
    aliases: Option<&BTreeMap<String, String>>,
) -> Result<ParsedRelations> {
    if var_names.len() != d {
        return Err(Error::Config(format!("{} variable names for d={d}", var_names.len())));
    }
    let marker = "Answer:";
    let at = text
        .rfind(marker)
        .ok_or_else(|| Error::Data(format!("no 'Answer:' marker in response: {}", excerpt(text))))?;
    let tail = &text[at + marker.len()..];

    let index: BTreeMap<&str, usize> =
        var_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let resolve = |raw: &str| -> Option<usize> {
        let name = aliases.and_then(|a| a.get(raw)).map(String::as_str).unwrap_or(raw);
        index.get(name).copied()
    };

    let tuple_re =
        Regex::new(r#"\(\s*['"]?([A-Za-z0-9_]+)['"]?\s*,\s*['"]?([A-Za-z0-9_]+)['"]?\s*,\s*(\d+)\s*\)"#)
            .expect("static regex");
    let mut tuples = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut rejected = 0usize;
    for cap in tuple_re.captures_iter(tail) {
        let raw = cap.get(0).unwrap().as_str();
        let (u_raw, v_raw, t_raw) = (&cap[1], &cap[2], &cap[3]);
        let reject = |reason: &str, warnings: &mut Vec<String>| {
            if strictness == Strictness::Strict {
                Err(Error::Data(format!("invalid tuple {raw}: {reason}")))
            } else {
                warnings.push(format!("dropped {raw}: {reason}"));
                Ok(())
            }
        };
        let t: usize = match t_raw.parse() {
            Ok(t) => t,
            Err(_) => {
                reject("lag is not a small integer", &mut warnings)?;
                rejected += 1;
                continue;
            }
        };
        let u = match resolve(u_raw) {
            Some(u) => u,
            None => {
                reject(&format!("unknown variable {u_raw}"), &mut warnings)?;
                rejected += 1;
                continue;
            }
        };
        let v = match resolve(v_raw) {
            Some(v) => v,
            None => {
                reject(&format!("unknown variable {v_raw}"), &mut warnings)?;
                rejected += 1;
                continue;
            }
        };
        if t > p {
            reject(&format!("lag {t} exceeds p={p}"), &mut warnings)?;
            rejected += 1;
            continue;
        }
        if t == 0 && u == v {
            reject("intra-slice self edge", &mut warnings)?;
            rejected += 1;
            continue;
        }
        if t > 0 && u == v {
            warnings.push(format!("kept {raw}: self relation at positive lag"));
        }
        tuples.insert((u, v, t));
    }
    if tuples.is_empty() && rejected == 0 && !tail.contains('[') {
        return Err(Error::Data(format!("no parseable tuples after 'Answer:': {}", excerpt(tail))));
    }
    Ok(ParsedRelations { tuples, warnings })
}

fn excerpt(text: &str) -> String {
    let trimmed = text.trim();
    let cut: String = trimmed.chars().take(120).collect();
    if cut.len() < trimmed.len() {
        format!("{cut}…")
    } else {
        cut
    }
}

/// Render relations in the same answer format the task requests; parsing the
/// result reproduces the relations exactly.
pub fn render_answer(rel: &BTreeSet<(usize, usize, usize)>, var_names: &[String]) -> String {
    let body: Vec<String> = rel
        .iter()
        .map(|&(u, v, t)| format!("({}, {}, {t})", var_names[u], var_names[v]))
        .collect();
    format!("Answer: [{}]", body.join(", "))
}

/// Prior adjacency: relation `(u, v, t)` sets entry `[t*d + u, v]`.
pub fn to_init_matrix(rel: &ParsedRelations, d: usize, p: usize) -> Result<Array2<u8>> {
    let n = (p + 1) * d;
    let mut m = Array2::zeros((n, n));
    for &(u, v, t) in &rel.tuples {
        if u >= d || v >= d || t > p {
            return Err(Error::Config(format!("relation ({u},{v},{t}) out of range")));
        }
        if t == 0 && u == v {
            return Err(Error::Config(format!("intra-slice self relation ({u},{v},0)")));
        }
        m[[t * d + u, v]] = 1;
    }
    Ok(m)
}

/// Map a prior matrix to initial edge logits: prior edges get `hi`, other
/// active positions `lo`; without a prior every active logit is 0 (an
/// uninformative σ = 0.5). Structurally masked positions stay inactive.
pub fn to_logits(
    m0: Option<&Array2<u8>>,
    d: usize,
    p: usize,
    hi: f64,
    lo: f64,
) -> Result<Array2<f64>> {
    if hi <= lo {
        return Err(Error::Config(format!("hi={hi} must exceed lo={lo}")));
    }
    let n = (p + 1) * d;
    let mut logits = Array2::zeros((n, n));
    match m0 {
        None => {}
        Some(m) => {
            if m.dim() != (n, n) {
                return Err(Error::Config(format!(
                    "prior matrix must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for ((i, j), &v) in m.indexed_iter() {
                let active = j < d && i != j;
                if v == 1 && !active {
                    return Err(Error::Config(format!(
                        "prior matrix has an entry at structurally masked position ({i},{j})"
                    )));
                }
                if active {
                    logits[[i, j]] = if v == 1 { hi } else { lo };
                }
            }
        }
    }
    Ok(logits)
}

/// Default prior→logit magnitudes: strong enough to lead the search, weak
/// enough for the data to override.
pub const INIT_LOGIT_HI: f64 = 2.0;
pub const INIT_LOGIT_LO: f64 = -2.0;

/// Completion client configuration (`client.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
        api_key_env: String,
        #[serde(default = "default_retries")]
        retries: u32,
    },
    Stub {
        stub_path: PathBuf,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Obtain a completion for the prompt.
///
/// The stub client returns its file contents verbatim. The HTTP client posts
/// the chat-completion schema and returns the first choice's message text,
/// retrying transport failures with exponential backoff (each retry is
/// reported on stderr, never swallowed).
pub fn complete(cfg: &ClientConfig, prompt: &str) -> Result<String> {
    match cfg {
        ClientConfig::Stub { stub_path } => std::fs::read_to_string(stub_path).map_err(|e| {
            Error::Config(format!("cannot read stub response {}: {e}", stub_path.display()))
        }),
        ClientConfig::Http { endpoint, model, timeout_s, api_key_env, retries } => {
            let key = std::env::var(api_key_env).map_err(|_| {
                Error::Config(format!("API key environment variable {api_key_env} is not set"))
            })?;
            let client = reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(*timeout_s))
                .build()
                .map_err(|e| Error::Transport(e.to_string()))?;
            let body = ChatRequest {
                model,
                messages: vec![ChatMessage { role: "user", content: prompt }],
            };
            let mut last_err = None;
            for attempt in 0..=*retries {
                if attempt > 0 {
                    let backoff = std::time::Duration::from_millis(200 << (attempt - 1));
                    eprintln!(
                        "completion attempt {attempt} failed ({}); retrying after {backoff:?}",
                        last_err.as_ref().map(String::as_str).unwrap_or("unknown")
                    );
                    std::thread::sleep(backoff);
                }
                let sent = client.post(endpoint).bearer_auth(&key).json(&body).send();
                match sent {
                    Err(e) => last_err = Some(e.to_string()),
                    Ok(resp) => {
                        let status = resp.status();
                        if status.is_success() {
                            let parsed: ChatResponse = resp
                                .json()
                                .map_err(|e| Error::Transport(format!("bad response body: {e}")))?;
                            let first = parsed.choices.into_iter().next().ok_or_else(|| {
                                Error::Transport("response contains no choices".into())
                            })?;
                            return Ok(first.message.content);
                        }
                        last_err = Some(format!("status {status}"));
                        if status.is_client_error() && status.as_u16() != 429 {
                            break; // non-retryable
                        }
                    }
                }
            }
            Err(Error::Transport(format!(
                "completion request to {endpoint} failed after {} attempt(s): {}",
                retries + 1,
                last_err.unwrap_or_else(|| "unknown".into())
            )))
        }
    }
}
