use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::taxonomy::{parse_label, EventLabel};

/// Summarization prompt; the commentary replaces [`PROMPT_SLOT`].
pub const PROMPT_TEMPLATE: &str = include_str!("prompt.txt");
pub const PROMPT_SLOT: &str = "[COMMENTARY TEXT HERE]";

pub const ENDPOINT_VAR: &str = "MV_LLM_ENDPOINT";
pub const TOKEN_VAR: &str = "MV_LLM_TOKEN";
pub const DEFAULT_RETRIES: usize = 3;

pub fn build_prompt(commentary: &str) -> String {
    PROMPT_TEMPLATE.replacen(PROMPT_SLOT, commentary, 1)
}

/// Text-completion backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Posts `{"prompt", "max_tokens"}` as JSON and reads the completion from
/// the reply: a JSON string, or an object with `text`, `completion`,
/// `response`, `output`, or `choices[0].text` / `choices[0].message.content`.
/// A non-JSON reply body is taken as the completion itself.
#[derive(Clone, Debug)]
pub struct HttpLlmClient {
    pub endpoint: String,
    pub token: Option<String>,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token,
            max_tokens: 16,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads `MV_LLM_ENDPOINT` (required) and `MV_LLM_TOKEN` (optional).
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Transport(format!("{ENDPOINT_VAR} is not set")))?;
        let token = std::env::var(TOKEN_VAR).ok().filter(|s| !s.is_empty());
        Ok(Self::new(endpoint, token))
    }
}

fn completion_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let pick = |v: &Value| -> Option<String> {
        if let Some(s) = v.as_str() {
            return Some(s.to_string());
        }
        for key in ["text", "completion", "response", "output"] {
            if let Some(s) = v.get(key).and_then(Value::as_str) {
                return Some(s.to_string());
            }
        }
        let choice = v.get("choices")?.get(0)?;
        choice
            .get("text")
            .or_else(|| choice.get("message")?.get("content"))
            .and_then(Value::as_str)
            .map(str::to_string)
    };
    pick(&v).unwrap_or_else(|| body.to_string())
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let body = json!({ "prompt": prompt, "max_tokens": self.max_tokens }).to_string();
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| Error::Transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(completion_text(&text))
    }
}

/// Trims whitespace, surrounding quotes and a trailing period.
fn clean_reply(reply: &str) -> &str {
    reply
        .trim()
        .trim_matches(|c| c == '\'' || c == '"' || c == '`')
        .trim_end_matches('.')
        .trim()
}

/// Asks `client` to label `text`, retrying up to `retries` times in total
/// while the reply is not a label name.
pub fn summarize_event_llm_with(text: &str, client: &dyn LlmClient, retries: usize) -> Result<EventLabel> {
    let prompt = build_prompt(text);
    let mut last = String::new();
    let attempts = retries.max(1);
    for _ in 0..attempts {
        last = client.complete(&prompt)?;
        if let Ok(label) = parse_label(clean_reply(&last)) {
            return Ok(label);
        }
    }
    Err(Error::UnparseableResponse { attempts, last })
}

pub fn summarize_event_llm(text: &str, client: &dyn LlmClient) -> Result<EventLabel> {
    summarize_event_llm_with(text, client, DEFAULT_RETRIES)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use super::*;

    struct Scripted {
        replies: Vec<&'static str>,
        calls: AtomicUsize,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<&'static str>) -> Self {
            Self {
                replies,
                calls: AtomicUsize::new(0),
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl LlmClient for Scripted {
        fn complete(&self, prompt: &str) -> Result<String> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].to_string())
        }
    }

    #[test]
    fn parses_and_normalizes() {
        let c = Scripted::new(vec!["corner"]);
        assert_eq!(summarize_event_llm("x", &c).unwrap(), EventLabel::CORNER);
        let c = Scripted::new(vec!["CORNER\n"]);
        assert_eq!(summarize_event_llm("x", &c).unwrap(), EventLabel::CORNER);
        let c = Scripted::new(vec!["'start of game(half)'"]);
        assert_eq!(summarize_event_llm("x", &c).unwrap(), EventLabel::START_OF_GAME);
    }

    #[test]
    fn retries_then_gives_up() {
        let c = Scripted::new(vec!["not-a-label"]);
        let err = summarize_event_llm("x", &c).unwrap_err();
        assert!(matches!(err, Error::UnparseableResponse { attempts: 3, ref last } if last == "not-a-label"));
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
        let c = Scripted::new(vec!["hmm", "goal"]);
        assert_eq!(summarize_event_llm("x", &c).unwrap(), EventLabel::GOAL);
    }

    #[test]
    fn prompt_embeds_commentary_verbatim() {
        let c = Scripted::new(vec!["goal"]);
        summarize_event_llm("Saka (Arsenal) scores!", &c).unwrap();
        let p = &c.prompts.lock().unwrap()[0];
        assert!(p.contains("\n\nSaka (Arsenal) scores!\n\n"));
        assert!(!p.contains(PROMPT_SLOT));
        assert!(p.starts_with("<|begin_of_text|>"));
    }

    #[test]
    fn reply_shapes() {
        assert_eq!(completion_text("goal"), "goal");
        assert_eq!(completion_text(r#""goal""#), "goal");
        assert_eq!(completion_text(r#"{"text": "var"}"#), "var");
        assert_eq!(completion_text(r#"{"choices": [{"message": {"content": "var"}}]}"#), "var");
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let mut c = HttpLlmClient::new("http://127.0.0.1:9/", None);
        c.timeout = Duration::from_secs(2);
        assert!(matches!(c.complete("x"), Err(Error::Transport(_))));
    }
}
