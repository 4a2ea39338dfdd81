use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{sha256_hex, CompletionRequest, CompletionResult, LlmBackend, LlmError};
use crate::reasoning::ReasoningSteps;
use crate::sell::{self, SellExpr};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "text")]
pub enum MockReply {
    Fixed(String),
    /// The last `Answer:` line of the prompt, or failing that the last line
    /// that parses as SELL.
    EchoLastSell,
    /// Like `EchoLastSell` but the first such line.
    EchoFirstSell,
    /// A plain-English demand paraphrasing the last `Answer:` expression.
    DescribeLastSell,
    /// Four-step reasoning built from the last `Demand:` and `Answer:` lines.
    ReasoningForLastAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Applies when the prompt contains this text; `None` matches anything.
    #[serde(default)]
    pub contains: Option<String>,
    pub reply: MockReply,
}

/// Deterministic offline backend; the first matching rule answers.
#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockBackend { rules }
    }

    pub fn always(reply: MockReply) -> Self {
        MockBackend::new(vec![MockRule {
            contains: None,
            reply,
        }])
    }
}

fn sell_lines(prompt: &str) -> Vec<String> {
    let answers: Vec<String> = prompt
        .lines()
        .filter_map(|l| l.trim().strip_prefix("Answer:"))
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(str::to_string)
        .collect();
    if !answers.is_empty() {
        return answers;
    }
    prompt
        .lines()
        .map(str::trim)
        .filter(|l| l.starts_with('(') && sell::parse(l).is_ok())
        .map(str::to_string)
        .collect()
}

fn last_labeled<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .filter_map(|l| l.trim().strip_prefix(label))
        .map(str::trim)
        .rfind(|v| !v.is_empty())
}

fn describe(expr: &SellExpr, top: bool) -> String {
    match expr {
        SellExpr::Condition(c) => format!(
            "{} {} {}",
            c.key,
            c.operator.as_str().to_lowercase(),
            c.value
        ),
        SellExpr::And(children) | SellExpr::Or(children) => {
            let and = matches!(expr, SellExpr::And(_));
            let parts: Vec<String> = children.iter().map(|c| describe(c, false)).collect();
            let joined = parts.join(if and { " and " } else { " or " });
            match (top, and) {
                (true, _) => joined,
                (false, true) => format!("both {joined}"),
                (false, false) => format!("either {joined}"),
            }
        }
    }
}

fn mock_demand(prompt: &str) -> String {
    last_labeled(prompt, "Answer:")
        .and_then(|a| sell::parse(a).ok())
        .map(|e| format!("Users whose {}", describe(&e, true)))
        .unwrap_or_default()
}

fn mock_reasoning(prompt: &str) -> String {
    let (Some(demand), Some(expr)) = (
        last_labeled(prompt, "Demand:"),
        last_labeled(prompt, "Answer:").and_then(|a| sell::parse(a).ok()),
    ) else {
        return String::new();
    };
    let mut keys: Vec<&str> = Vec::new();
    for c in expr.conditions() {
        if !keys.contains(&c.key.as_str()) {
            keys.push(&c.key);
        }
    }
    ReasoningSteps {
        keywords: demand.trim_end_matches('.').to_string(),
        tags: keys.join(", "),
        conditions: expr
            .conditions()
            .into_iter()
            .map(|c| SellExpr::Condition(c.clone()).to_string())
            .collect::<Vec<_>>()
            .join("\n"),
        combined: sell::print(&expr),
    }
    .render()
}

impl LlmBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let rule = self
            .rules
            .iter()
            .find(|r| {
                r.contains
                    .as_ref()
                    .is_none_or(|c| req.prompt.contains(c.as_str()))
            })
            .ok_or_else(|| LlmError::BackendUnavailable("no mock rule matched".into()))?;
        let text = match &rule.reply {
            MockReply::Fixed(t) => t.clone(),
            MockReply::EchoLastSell => sell_lines(&req.prompt).pop().unwrap_or_default(),
            MockReply::EchoFirstSell => sell_lines(&req.prompt)
                .into_iter()
                .next()
                .unwrap_or_default(),
            MockReply::DescribeLastSell => mock_demand(&req.prompt),
            MockReply::ReasoningForLastAnswer => mock_reasoning(&req.prompt),
        };
        Ok(CompletionResult {
            payload_hash: sha256_hex(text.as_bytes()),
            text,
            backend: self.id(),
            latency_ms: 0,
            cache_hit: false,
        })
    }
}

/// OpenAI-compatible chat-completion client. The rendered prompt is sent
/// as a single user message.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub api_key: Option<String>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        RemoteBackend {
            endpoint: endpoint.into(),
            api_key,
        }
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<(String, String), LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(req.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut call = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &req.model,
            messages: [ChatMessage {
                role: "user",
                content: &req.prompt,
            }],
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            other => LlmError::BackendUnavailable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let raw = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            other => LlmError::BackendUnavailable(other.to_string()),
        })?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::AuthFailure),
            429 => return Err(LlmError::RateLimited),
            408 => return Err(LlmError::Timeout),
            500..=599 => return Err(LlmError::BackendUnavailable(format!("HTTP {status}"))),
            _ => return Err(LlmError::InvalidRequest(format!("HTTP {status}: {raw}"))),
        }
        let parsed: ChatResponse = serde_json::from_str(&raw)
            .map_err(|e| LlmError::BackendUnavailable(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BackendUnavailable("response has no choices".into()))?;
        Ok((text, raw))
    }
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote({})", self.endpoint)
    }

    /// Retries transient failures with exponential backoff.
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        req.check()?;
        let start = Instant::now();
        let mut attempt = 1;
        loop {
            match self.attempt(req) {
                Ok((text, raw)) => {
                    return Ok(CompletionResult {
                        text,
                        backend: self.id(),
                        latency_ms: start.elapsed().as_millis() as u64,
                        payload_hash: sha256_hex(raw.as_bytes()),
                        cache_hit: false,
                    })
                }
                Err(e) if e.is_transient() && attempt < req.retry.attempts => {
                    thread::sleep(req.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::llm::RetryPolicy;

    #[test]
    fn mock_echo_rules() {
        let prompt = "Instruction\nAnswer: (A#Belongs To#1)\nAnswer: (B#Belongs To#2)\nDemand: x";
        let last = MockBackend::always(MockReply::EchoLastSell)
            .complete(&CompletionRequest::new(prompt, "m"))
            .unwrap();
        assert_eq!(last.text, "(B#Belongs To#2)");
        let first = MockBackend::always(MockReply::EchoFirstSell)
            .complete(&CompletionRequest::new(prompt, "m"))
            .unwrap();
        assert_eq!(first.text, "(A#Belongs To#1)");
        let bare = MockBackend::always(MockReply::EchoLastSell)
            .complete(&CompletionRequest::new("text\n(C#Belongs To#3)\nmore", "m"))
            .unwrap();
        assert_eq!(bare.text, "(C#Belongs To#3)");
    }

    #[test]
    fn mock_demand_and_reasoning() {
        let prompt = "Demand: Pet owners\nAnswer: (Pet Owning#Belongs To#True) AND ((Gender#Belongs To#Male) OR (Gender#Belongs To#Female))";
        let demand = MockBackend::always(MockReply::DescribeLastSell)
            .complete(&CompletionRequest::new(prompt, "m"))
            .unwrap();
        assert_eq!(
            demand.text,
            "Users whose Pet Owning belongs to True and either Gender belongs to Male or Gender belongs to Female"
        );
        let r = MockBackend::always(MockReply::ReasoningForLastAnswer)
            .complete(&CompletionRequest::new(prompt, "m"))
            .unwrap();
        let steps = ReasoningSteps::parse(&r.text).unwrap();
        assert_eq!(steps.tags, "Pet Owning, Gender");
        assert_eq!(
            sell::parse(&steps.combined).unwrap(),
            sell::parse(
                prompt
                    .lines()
                    .nth(1)
                    .unwrap()
                    .trim_start_matches("Answer: ")
            )
            .unwrap()
        );
    }

    #[test]
    fn mock_rule_order() {
        let mock = MockBackend::new(vec![
            MockRule {
                contains: Some("score".into()),
                reply: MockReply::Fixed("7".into()),
            },
            MockRule {
                contains: None,
                reply: MockReply::Fixed("other".into()),
            },
        ]);
        assert_eq!(
            mock.complete(&CompletionRequest::new("please score", "m"))
                .unwrap()
                .text,
            "7"
        );
        assert_eq!(
            mock.complete(&CompletionRequest::new("hi", "m"))
                .unwrap()
                .text,
            "other"
        );
        let none = MockBackend::new(vec![]);
        assert!(none.complete(&CompletionRequest::new("hi", "m")).is_err());
    }

    /// Serves canned HTTP responses in order on a local port and records
    /// request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = bodies.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, bodies)
    }

    fn fast(req: &mut CompletionRequest) {
        req.retry = RetryPolicy {
            attempts: 3,
            backoff_ms: 1,
        };
        req.timeout_ms = 5_000;
    }

    #[test]
    fn remote_retries_transient_failures() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"(A#Belongs To#B)"}}]}"#;
        let (url, bodies) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok.into()),
        ]);
        let backend = RemoteBackend::new(url, Some("k".into()));
        let mut req = CompletionRequest::new("hello", "gpt-test");
        fast(&mut req);
        let out = backend.complete(&req).unwrap();
        assert_eq!(out.text, "(A#Belongs To#B)");
        let bodies = bodies.lock().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn remote_auth_failure_is_not_retried() {
        let (url, bodies) = serve(vec![(401, "{}".into())]);
        let mut req = CompletionRequest::new("hello", "m");
        fast(&mut req);
        assert_eq!(
            RemoteBackend::new(url, None).complete(&req),
            Err(LlmError::AuthFailure)
        );
        assert_eq!(bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn remote_gives_up_after_attempts() {
        let (url, _) = serve(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
        ]);
        let mut req = CompletionRequest::new("hello", "m");
        fast(&mut req);
        assert!(matches!(
            RemoteBackend::new(url, None).complete(&req),
            Err(LlmError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn remote_unreachable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let mut req = CompletionRequest::new("hello", "m");
        fast(&mut req);
        req.retry.attempts = 1;
        assert!(matches!(
            RemoteBackend::new(url, None).complete(&req),
            Err(LlmError::BackendUnavailable(_))
        ));
    }
}
