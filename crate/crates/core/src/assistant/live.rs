use super::{AssistantError, LlmClient, Turn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use std::time::Duration;

/// A chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_key_env() -> String {
    "AESCOPE_LLM_KEY".to_string()
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            timeout_s: default_timeout(),
            api_key_env: default_key_env(),
        }
    }
}

pub struct LiveClient {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Self {
        let timeout = Duration::from_secs_f64(config.timeout_s.max(0.001));
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { config, agent }
    }

    pub fn request_body(&self, conversation: &[Turn]) -> Json {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": conversation,
        })
    }
}

impl LlmClient for LiveClient {
    fn complete(&self, conversation: &[Turn]) -> Result<String, AssistantError> {
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let reply: Json = match req.send_json(self.request_body(conversation)) {
            Ok(r) => r.into_json().map_err(|e| AssistantError::BadResponse(e.to_string()))?,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(AssistantError::BadResponse(format!("HTTP {code}: {body}")));
            }
            Err(ureq::Error::Transport(t)) => return Err(AssistantError::ClientUnreachable(t.to_string())),
        };
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| AssistantError::BadResponse("no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Role;
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one request and hands back what the client sent.
    fn one_shot(status: &str, body: &'static str) -> (String, thread::JoinHandle<(String, Json)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let status = status.to_string();
        let h = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut r = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                r.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            r.read_exact(&mut buf).unwrap();
            let mut w = stream;
            write!(w, "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}", body.len())
                .unwrap();
            (head, serde_json::from_slice(&buf).unwrap())
        });
        (url, h)
    }

    #[test]
    fn speaks_chat_completions() {
        let (url, h) = one_shot("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#);
        let mut cfg = LiveConfig::new(url, "test-model");
        cfg.api_key_env = "AESCOPE_TEST_KEY_UNSET".into();
        let c = LiveClient::new(cfg);
        let out = c.complete(&[Turn::new(Role::System, "s"), Turn::new(Role::User, "u")]).unwrap();
        assert_eq!(out, "hello");
        let (head, body) = h.join().unwrap();
        assert!(head.starts_with("POST /v1/chat/completions"));
        assert!(!head.to_ascii_lowercase().contains("authorization"));
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][1], json!({"role": "user", "content": "u"}));
    }

    #[test]
    fn http_error_and_bad_shape() {
        let (url, h) = one_shot("500 Internal Server Error", r#"{"error":"x"}"#);
        let e = LiveClient::new(LiveConfig::new(url, "m")).complete(&[]).unwrap_err();
        assert_eq!(e.code(), "bad-response");
        h.join().unwrap();
        let (url, h) = one_shot("200 OK", r#"{"choices":[]}"#);
        assert_eq!(LiveClient::new(LiveConfig::new(url, "m")).complete(&[]).unwrap_err().code(), "bad-response");
        h.join().unwrap();
    }

    #[test]
    fn unreachable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let c = LiveClient::new(LiveConfig::new(format!("http://127.0.0.1:{port}/"), "m"));
        assert_eq!(c.complete(&[]).unwrap_err().code(), "client-unreachable");
    }
}
