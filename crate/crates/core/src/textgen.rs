//! Description prompts for module timing diagrams and the text-generation
//! service that answers them.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verilog::{Direction, ModuleInfo};

/// Environment variable holding the text service credential.
pub const API_KEY_ENV: &str = "TD_TEXTGEN_API_KEY";

const PREAMBLE: &str = "You are tasked with providing brief descriptions of various digital components based on limited data. For each one, provide a description of the component. To do this perform the following steps: 1. Assume it is a Verilog module. 2. Split the module's name by the '_' character. 3. List and analyse each individual part of the module name. 4. List and count the input and output ports. 5. Analyse the names of the input and output ports. 6. Determine the possible functionality of each of the ports. 7. Determine the functionality of the module based on the individual parts of the name, and the I/O ports.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("text service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("text service returned an empty response for the {0} request")]
    EmptyResponse(String),
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionBundle {
    pub description: String,
    pub caption: String,
    pub summary: String,
    pub use_cases: String,
}

impl DescriptionBundle {
    pub fn is_complete(&self) -> bool {
        [&self.description, &self.caption, &self.summary, &self.use_cases]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FollowUps {
    pub description: String,
    pub caption: String,
    pub summary: String,
    pub use_cases: String,
}

impl Default for FollowUps {
    fn default() -> Self {
        serde_json::from_str(include_str!("../assets/prompts.json")).expect("bundled prompts.json")
    }
}

/// The chain-of-thought preamble followed by the module facts.
pub fn build_description_prompt(m: &ModuleInfo) -> String {
    let mut s = String::with_capacity(PREAMBLE.len() + 64 * (m.ports.len() + 4));
    s.push_str(PREAMBLE);
    s.push_str("\n\nModule name: ");
    s.push_str(&m.name);
    s.push_str("\nName parts: ");
    s.push_str(&m.name_parts.join(", "));
    for (label, dir) in [("Input", Direction::Input), ("Output", Direction::Output), ("Inout", Direction::Inout)] {
        let ports: Vec<String> = m
            .ports
            .iter()
            .filter(|p| p.direction == dir)
            .map(|p| format!("{} ({} bit{})", p.name, p.width, if p.width == 1 { "" } else { "s" }))
            .collect();
        if dir == Direction::Inout && ports.is_empty() {
            continue;
        }
        s.push_str(&format!("\n{label} ports ({}): ", ports.len()));
        s.push_str(if ports.is_empty() { "none" } else { "" });
        s.push_str(&ports.join(", "));
    }
    s.push('\n');
    s
}

/// A blocking prompt → text service.
pub trait TextClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ServiceError>;
}

impl<F> TextClient for F
where
    F: Fn(&str) -> Result<String, ServiceError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, ServiceError> {
        self(prompt)
    }
}

/// Sends the prompt plus one follow-up per bundle field.
pub fn describe_module(m: &ModuleInfo, client: &dyn TextClient, follow_ups: &FollowUps) -> Result<DescriptionBundle, ServiceError> {
    let base = build_description_prompt(m);
    let ask = |kind: &str, follow: &str| -> Result<String, ServiceError> {
        let text = client.complete(&format!("{base}\n{follow}"))?;
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyResponse(kind.to_string()));
        }
        Ok(text.trim().to_string())
    };
    Ok(DescriptionBundle {
        description: ask("description", &follow_ups.description)?,
        caption: ask("caption", &follow_ups.caption)?,
        summary: ask("summary", &follow_ups.summary)?,
        use_cases: ask("use_cases", &follow_ups.use_cases)?,
    })
}

/// JSON-over-HTTP client: POSTs `{"prompt": ...}` and reads `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct HttpTextClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Header carrying the key; `Authorization` values get a `Bearer ` prefix.
    pub key_header: String,
    pub timeout: Duration,
}

impl HttpTextClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTextClient {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            key_header: "Authorization".to_string(),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct PromptRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl TextClient for HttpTextClient {
    fn complete(&self, prompt: &str) -> Result<String, ServiceError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            let value = if self.key_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            req = req.header(self.key_header.as_str(), value.as_str());
        }
        let mut resp = req
            .send_json(PromptRequest { prompt })
            .map_err(|e| ServiceError::ServiceUnavailable(e.to_string()))?;
        let body: TextResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ServiceError::ServiceUnavailable(format!("bad response body: {e}")))?;
        Ok(body.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

/// Wraps a client and records every exchange.
pub struct RecordingClient<'a> {
    inner: &'a dyn TextClient,
    log: Mutex<Vec<Exchange>>,
}

impl<'a> RecordingClient<'a> {
    pub fn new(inner: &'a dyn TextClient) -> Self {
        RecordingClient {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.log.lock().expect("transcript lock").clone()
    }
}

impl TextClient for RecordingClient<'_> {
    fn complete(&self, prompt: &str) -> Result<String, ServiceError> {
        let response = self.inner.complete(prompt)?;
        self.log.lock().expect("transcript lock").push(Exchange {
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Answers from a recorded transcript, in order, checking each prompt.
pub struct ReplayClient {
    exchanges: Vec<Exchange>,
    next: Mutex<usize>,
}

impl ReplayClient {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayClient {
            exchanges,
            next: Mutex::new(0),
        }
    }
}

impl TextClient for ReplayClient {
    fn complete(&self, prompt: &str) -> Result<String, ServiceError> {
        let mut next = self.next.lock().expect("replay lock");
        let ex = self
            .exchanges
            .get(*next)
            .ok_or_else(|| ServiceError::ReplayMismatch("transcript exhausted".into()))?;
        if ex.prompt != prompt {
            return Err(ServiceError::ReplayMismatch(format!("prompt #{} differs", *next)));
        }
        *next += 1;
        Ok(ex.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verilog::{parse_module_header, Port};

    fn mux() -> ModuleInfo {
        parse_module_header("module maxv_nmux21(input A, input B, input S, output Y); endmodule").unwrap()
    }

    #[test]
    fn prompt_has_seven_steps_in_order() {
        let p = build_description_prompt(&mux());
        let mut at = 0;
        for n in 1..=7 {
            let i = p[at..].find(&format!("{n}. ")).expect("step present");
            at += i + 1;
        }
        assert!(p.contains("Module name: maxv_nmux21"));
        assert!(p.contains("Name parts: maxv, nmux21"));
        assert!(p.contains("Input ports (3): A (1 bit), B (1 bit), S (1 bit)"));
        assert!(p.contains("Output ports (1): Y (1 bit)"));
    }

    #[test]
    fn prompt_without_ports() {
        let p = build_description_prompt(&ModuleInfo::new("empty_top", vec![]));
        assert!(p.contains("Input ports (0): none"));
        assert!(p.contains("Output ports (0): none"));
    }

    #[test]
    fn prompt_length_linear_in_ports() {
        let make = |n: usize| {
            let ports = (0..n)
                .map(|i| Port { name: format!("p{i:03}"), direction: Direction::Input, width: 1 })
                .collect();
            build_description_prompt(&ModuleInfo::new("m", ports)).len()
        };
        let (l10, l20, l40) = (make(10), make(20), make(40));
        assert_eq!(l20 - l10, (l40 - l20) / 2);
    }

    fn canned(prompt: &str) -> Result<String, ServiceError> {
        let reply = if prompt.ends_with(&FollowUps::default().caption) {
            "TD of a 2-to-1 negative multiplexer"
        } else if prompt.ends_with(&FollowUps::default().summary) {
            "Y is the inverse of the input selected by S."
        } else if prompt.ends_with(&FollowUps::default().use_cases) {
            "Inverting data selection; clock gating logic."
        } else {
            "The module is a 2-to-1 negative multiplexer."
        };
        Ok(reply.to_string())
    }

    #[test]
    fn describe_with_mock() {
        let b = describe_module(&mux(), &canned, &FollowUps::default()).unwrap();
        assert_eq!(b.caption, "TD of a 2-to-1 negative multiplexer");
        assert!(b.description.contains("2-to-1 negative multiplexer"));
        assert!(b.is_complete());
    }

    #[test]
    fn empty_response_is_an_error() {
        let empty = |_: &str| Ok(String::new());
        assert_eq!(
            describe_module(&mux(), &empty, &FollowUps::default()),
            Err(ServiceError::EmptyResponse("description".into()))
        );
    }

    #[test]
    fn record_and_replay() {
        let rec = RecordingClient::new(&canned);
        let live = describe_module(&mux(), &rec, &FollowUps::default()).unwrap();
        let transcript = rec.transcript();
        assert_eq!(transcript.len(), 4);
        let json = serde_json::to_string(&transcript).unwrap();
        let replay = ReplayClient::new(serde_json::from_str(&json).unwrap());
        assert_eq!(describe_module(&mux(), &replay, &FollowUps::default()).unwrap(), live);
        let other = ModuleInfo::new("other", vec![]);
        let replay = ReplayClient::new(transcript);
        assert!(matches!(describe_module(&other, &replay, &FollowUps::default()), Err(ServiceError::ReplayMismatch(_))));
    }

    #[test]
    fn unreachable_endpoint() {
        let client = HttpTextClient { timeout: Duration::from_secs(2), ..HttpTextClient::new("http://127.0.0.1:9/") };
        assert!(matches!(client.complete("hi"), Err(ServiceError::ServiceUnavailable(_))));
    }
}
