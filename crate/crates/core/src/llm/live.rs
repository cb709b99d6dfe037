//! OpenAI-compatible HTTP provider.

use std::time::Duration;

use log::warn;
use serde_json::json;

use super::{
    ChatModel, ChatRequest, ChatResponse, Embedder, EmbeddingVector, FinishReason, LlmError, LocalHashEmbedder, Usage,
};

pub const ENV_API_KEY: &str = "TPGPT_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "TPGPT_LLM_BASE_URL";
pub const ENV_MODEL: &str = "TPGPT_LLM_MODEL";
pub const ENV_EMBED_MODEL: &str = "TPGPT_LLM_EMBED_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub api_key: String,
    pub base_url: String,
    pub model: String,
    /// Remote embeddings are used only when set.
    pub embed_model: Option<String>,
    pub context_limit: u32,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub request_timeout: Duration,
}

impl LiveConfig {
    pub fn new(api_key: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        LiveConfig {
            api_key: api_key.into(),
            base_url: base_url.into(),
            model: model.into(),
            embed_model: None,
            context_limit: 128_000,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            request_timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| LlmError::ProviderUnavailable(format!("{ENV_API_KEY} is not set")))?;
        let base_url = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4".into());
        let mut config = LiveConfig::new(api_key, base_url, model);
        config.embed_model = std::env::var(ENV_EMBED_MODEL).ok().filter(|m| !m.is_empty());
        Ok(config)
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    fallback: LocalHashEmbedder,
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        Ok(LiveProvider { config, client, fallback: LocalHashEmbedder::default() })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, LlmError> {
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            match self.try_post(path, body) {
                Ok(value) => return Ok(value),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    warn!("attempt {} to {path} failed: {reason}", attempt + 1);
                    last = reason;
                }
            }
        }
        Err(LlmError::ProviderUnavailable(last))
    }

    fn try_post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let response = self
            .client
            .post(self.url(path))
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(LlmError::ProviderUnavailable(format!("malformed response: {e}"))));
        }
        if text.contains("context_length_exceeded") {
            return Err(Attempt::Fatal(LlmError::ContextOverflow { tokens: 0, limit: self.config.context_limit }));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            Err(Attempt::Retry(format!("HTTP {status}")))
        } else {
            Err(Attempt::Fatal(LlmError::ProviderUnavailable(format!("HTTP {status}: {text}"))))
        }
    }
}

impl ChatModel for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.check()?;
        let tokens = request.token_estimate();
        if tokens > self.config.context_limit {
            return Err(LlmError::ContextOverflow { tokens, limit: self.config.context_limit });
        }
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        let choice = &value["choices"][0];
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Error,
        };
        let content = choice["message"]["content"].as_str().map(str::to_string);
        let content = match (content, finish_reason) {
            (Some(c), _) => c,
            (None, FinishReason::Stop) => {
                return Err(LlmError::ProviderUnavailable("response carried no message content".into()))
            }
            (None, _) => String::new(),
        };
        let usage = Usage {
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0) as u32,
            output_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0) as u32,
        };
        Ok(ChatResponse { content, finish_reason, usage })
    }
}

impl Embedder for LiveProvider {
    fn dimension(&self) -> usize {
        // Remote dimension is only known after the first call.
        self.fallback.dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        let Some(model) = &self.config.embed_model else {
            return self.fallback.embed(text);
        };
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let value = self.post("embeddings", &json!({ "model": model, "input": text }))?;
        let values: Vec<f64> = value["data"][0]["embedding"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
            .unwrap_or_default();
        EmbeddingVector::normalized(values)
            .ok_or_else(|| LlmError::ProviderUnavailable("empty embedding in response".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves canned (status, body) replies in order and reports each request body.
    fn mock(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut request = vec![0; length];
                reader.read_exact(&mut request).unwrap();
                tx.send(String::from_utf8(request).unwrap()).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn provider(base: String) -> LiveProvider {
        let mut config = LiveConfig::new("k", base, "test-model");
        config.backoff = Duration::from_millis(1);
        LiveProvider::new(config).unwrap()
    }

    fn request() -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::system("s"), ChatMessage::user("hi")]).unwrap()
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;

    #[test]
    fn completes_against_compatible_server() {
        let (base, rx) = mock(vec![(200, OK.into())]);
        let response = provider(base).complete(&request()).unwrap();
        assert_eq!(response.content, "hello");
        assert_eq!(response.usage, Usage { prompt_tokens: 7, output_tokens: 2 });
        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn retries_server_errors() {
        let (base, _rx) = mock(vec![(500, "{}".into()), (503, "{}".into()), (200, OK.into())]);
        assert_eq!(provider(base).complete(&request()).unwrap().content, "hello");
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (base, _rx) = mock(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        assert!(matches!(provider(base).complete(&request()), Err(LlmError::ProviderUnavailable(_))));
    }

    #[test]
    fn context_overflow() {
        let (base, _rx) = mock(vec![(400, r#"{"error":{"code":"context_length_exceeded"}}"#.into())]);
        assert!(matches!(provider(base).complete(&request()), Err(LlmError::ContextOverflow { .. })));
        let mut config = LiveConfig::new("k", "http://127.0.0.1:9", "m");
        config.context_limit = 1;
        let long = ChatRequest::new(vec![ChatMessage::user("a long enough prompt")]).unwrap();
        assert!(matches!(LiveProvider::new(config).unwrap().complete(&long), Err(LlmError::ContextOverflow { .. })));
    }

    #[test]
    fn embeddings_normalized() {
        let (base, _rx) = mock(vec![(200, r#"{"data":[{"embedding":[3.0,4.0]}]}"#.into())]);
        let mut config = LiveConfig::new("k", base, "m");
        config.embed_model = Some("e".into());
        let v = LiveProvider::new(config).unwrap().embed("x").unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
    }
}
