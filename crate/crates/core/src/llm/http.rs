use std::fmt;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatClient, CompletionRequest, CompletionResponse, GatewayConfig, LlmError, RetryPolicy, TokenUsage};

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

/// Client for the OpenAI-compatible `POST {endpoint}/chat/completions` shape.
#[derive(Debug)]
pub struct HttpClient {
    url: String,
    key: Option<ApiKey>,
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpClient {
    /// Reads the API key from the configured environment variable. A
    /// missing variable sends no `Authorization` header.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::new(&config.endpoint, key, config.timeout_secs, config.retry.clone())
    }

    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout_secs: f64,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        if timeout_secs.is_nan() || timeout_secs <= 0.0 {
            return Err(LlmError::Config("timeout_secs must be > 0".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpClient {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            key: api_key.map(ApiKey),
            http,
            retry,
        })
    }

    fn redact(&self, text: String) -> String {
        match &self.key {
            Some(ApiKey(k)) if !k.is_empty() => text.replace(k.as_str(), "<redacted>"),
            _ => text,
        }
    }

    fn attempt(&self, body: &Value) -> Result<CompletionResponse, LlmError> {
        let start = Instant::now();
        let mut builder = self.http.post(&self.url).json(body);
        if let Some(ApiKey(k)) = &self.key {
            builder = builder.bearer_auth(k);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout { elapsed_secs: start.elapsed().as_secs_f64() }
            } else {
                LlmError::Transport(self.redact(e.to_string()))
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout { elapsed_secs: start.elapsed().as_secs_f64() }
            } else {
                LlmError::Transport(self.redact(e.to_string()))
            }
        })?;
        if !status.is_success() {
            return Err(LlmError::Status { status: status.as_u16(), body: self.redact(text) });
        }
        parse_completion(&text)
    }
}

fn parse_completion(body: &str) -> Result<CompletionResponse, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = v.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    Ok(CompletionResponse { text: text.to_string(), usage, retries: 0 })
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(m) = request.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Ok(mut r) => {
                    r.retries = attempt - 1;
                    return Ok(r);
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(Duration::from_millis(self.retry.backoff_ms(attempt)));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, Gateway, RequestTag, RoleModels};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves one scripted (status, body, delay) per connection, recording
    /// each request's headers and body.
    fn stub_server(replies: Vec<(u16, String, u64)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body, delay) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(head + &String::from_utf8(buf).unwrap());
                std::thread::sleep(Duration::from_millis(delay));
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
            seen
        });
        (url, handle)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}],
               "usage": {"prompt_tokens": 7, "completion_tokens": 2}})
        .to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy { max_attempts: 5, initial_backoff_ms: 5, multiplier: 2.0, max_backoff_ms: 50 }
    }

    #[test]
    fn throttled_then_ok_counts_one_retry() {
        let (url, server) = stub_server(vec![
            (429, "{\"error\":\"slow down\"}".into(), 0),
            (200, ok_body("hello"), 0),
        ]);
        let client = HttpClient::new(&url, Some("sk-secret-123".into()), 5.0, fast_retry()).unwrap();
        let gw = Gateway::new(Arc::new(client), RoleModels::default(), 1);
        let req = gw.request(RequestTag::User, vec![ChatMessage::user("hi")]);
        let r = gw.complete(&req).unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.retries, 1);
        assert_eq!(r.usage, Some(TokenUsage { prompt_tokens: 7, completion_tokens: 2 }));
        let log = gw.call_log();
        assert_eq!((log.len(), log[0].retries), (1, 1));
        let seen = server.join().unwrap();
        assert!(seen[1].starts_with("POST /chat/completions"));
        assert!(seen[1].to_ascii_lowercase().contains("authorization: bearer sk-secret-123"));
        assert!(seen[1].contains("\"messages\""));
        assert!(!format!("{gw:?}{:?}", log).contains("sk-secret"));
    }

    #[test]
    fn client_error_is_not_retried_and_body_is_surfaced() {
        let (url, server) = stub_server(vec![(400, "bad model sk-secret-123".into(), 0)]);
        let client = HttpClient::new(&url, Some("sk-secret-123".into()), 5.0, fast_retry()).unwrap();
        let req = CompletionRequest::new(RequestTag::Agent, vec![ChatMessage::user("x")]);
        match client.complete(&req) {
            Err(LlmError::Status { status: 400, body }) => {
                assert!(body.contains("bad model"));
                assert!(!body.contains("sk-secret"));
            }
            other => panic!("{other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn timeout_reports_elapsed_time() {
        let (url, _server) = stub_server(vec![(200, ok_body("late"), 1500)]);
        let client = HttpClient::new(&url, None, 0.3, fast_retry()).unwrap();
        let req = CompletionRequest::new(RequestTag::Agent, vec![ChatMessage::user("x")]);
        match client.complete(&req) {
            Err(LlmError::Timeout { elapsed_secs }) => assert!(elapsed_secs >= 0.25, "{elapsed_secs}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_body_is_reported() {
        assert!(matches!(parse_completion("{}"), Err(LlmError::BadResponse(_))));
        assert!(matches!(parse_completion("nope"), Err(LlmError::BadResponse(_))));
        assert_eq!(parse_completion(&ok_body("a")).unwrap().text, "a");
    }
}
