//! OpenAI-style chat-completion backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{AnswerBackend, BackendError};
use super::prompt::CausalQuery;

pub const ENV_ENDPOINT: &str = "CGSYNTH_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CGSYNTH_LLM_API_KEY";
pub const ENV_MODEL: &str = "CGSYNTH_LLM_MODEL";
pub const ENV_TEMPERATURE: &str = "CGSYNTH_LLM_TEMPERATURE";

#[derive(Clone, Debug, PartialEq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the `CGSYNTH_LLM_*` variables; the endpoint is required.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| BackendError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let temperature = match std::env::var(ENV_TEMPERATURE) {
            Ok(t) => t
                .parse()
                .map_err(|_| BackendError::Config(format!("{ENV_TEMPERATURE}: `{t}` is not a number")))?,
            Err(_) => 0.7,
        };
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4-turbo".to_string()),
            temperature,
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { cfg, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }
}

impl AnswerBackend for HttpBackend {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": query.system_preamble},
                {"role": "user", "content": query.question},
            ],
        });
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("invalid response JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::agents::Expansion;
    use crate::ingest::SystemTopology;
    use crate::oracle::prompt::build_prompt;

    /// Serves `responses` one per connection and returns the request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn query() -> CausalQuery {
        let pairs = Expansion::new(&SystemTopology::model_serving_sample()).unwrap().pairs();
        build_prompt(&pairs[0], 0)
    }

    #[test]
    fn posts_chat_messages_and_reads_content() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"thinking\nB"}}]}"#;
        let (url, server) = serve(vec![(200, reply.to_string())]);
        let backend = HttpBackend::new(HttpConfig {
            endpoint: url,
            api_key: Some("k".into()),
            model: "m".into(),
            temperature: 0.0,
            timeout: Duration::from_secs(5),
        });
        let q = query();
        assert_eq!(backend.answer(&q).unwrap(), "thinking\nB");
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["messages"][0]["content"], q.system_preamble.as_str());
        assert_eq!(sent["messages"][1]["role"], "user");
    }

    #[test]
    fn http_error_is_transport_error() {
        let (url, server) = serve(vec![(500, "{}".to_string())]);
        let backend = HttpBackend::new(HttpConfig {
            endpoint: url,
            api_key: None,
            model: "m".into(),
            temperature: 0.0,
            timeout: Duration::from_secs(5),
        });
        assert!(matches!(backend.answer(&query()), Err(BackendError::Transport(_))));
        server.join().unwrap();
    }
}
