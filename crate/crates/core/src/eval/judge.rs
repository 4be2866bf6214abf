use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::pipeline::{render, PromptTemplateSet};

/// Grades open-ended answers from a rendered judge prompt.
pub trait Judge: Send + Sync {
    /// Raw judge reply for `prompt`.
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Ask the judge whether `pred` matches `answer`; a reply starting with
/// "yes" (any case) counts as correct.
pub fn judge_answer(
    judge: &dyn Judge,
    templates: &PromptTemplateSet,
    question: &str,
    answer: &str,
    pred: &str,
) -> Result<bool> {
    let prompt = render(
        &templates.judge,
        &[("{question}", question), ("{answer}", answer), ("{pred}", pred)],
    );
    let reply = judge.complete(&prompt)?;
    let word: String = reply
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    Ok(word == "yes")
}

type JudgeFn = dyn Fn(&str) -> Result<String> + Send + Sync;

/// Judge for tests: a fixed reply or a function of the prompt.
#[derive(Clone)]
pub struct ScriptedJudge(Arc<JudgeFn>);

impl ScriptedJudge {
    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self(Arc::new(move |_| Ok(reply.clone())))
    }

    pub fn with(f: impl Fn(&str) -> Result<String> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl Judge for ScriptedJudge {
    fn complete(&self, prompt: &str) -> Result<String> {
        (self.0)(prompt)
    }
}

/// Client for an OpenAI-style `chat/completions` endpoint.
pub struct ChatCompletionJudge {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub const DEFAULT_JUDGE_MODEL: &str = "gpt-3.5-turbo";

impl ChatCompletionJudge {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }
}

impl Judge for ChatCompletionJudge {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(serde_json::to_vec(&body).expect("json body").as_slice())
            .map_err(|e| Error::Judge(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Judge(format!("reading judge reply: {e}")))?;
        if !status.is_success() {
            return Err(Error::Judge(format!("judge returned HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Judge(format!("judge reply is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Judge("judge reply has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_yes_no() {
        let t = PromptTemplateSet::default();
        assert!(judge_answer(&ScriptedJudge::fixed("Yes"), &t, "q", "a", "p").unwrap());
        assert!(!judge_answer(&ScriptedJudge::fixed("No."), &t, "q", "a", "p").unwrap());
        assert!(!judge_answer(&ScriptedJudge::fixed("Yesterday"), &t, "q", "a", "p").unwrap());
        let echo = ScriptedJudge::with(|p| {
            assert!(p.contains("Question: what colour?"));
            assert!(p.contains("Correct Answer: red"));
            assert!(p.contains("Predicted Answer: crimson"));
            Ok("yes".into())
        });
        assert!(judge_answer(&echo, &t, "what colour?", "red", "crimson").unwrap());
    }
}
