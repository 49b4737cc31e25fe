use std::time::Duration;

use thiserror::Error;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);
pub const READ_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("transport: {0}")]
    Other(String),
}

/// Issues one JSON POST. Implementations must not retry.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_connect(Some(CONNECT_TIMEOUT))
            .timeout_recv_response(Some(READ_TIMEOUT))
            .timeout_recv_body(Some(READ_TIMEOUT))
            .http_status_as_error(false)
            .build();
        HttpTransport { agent: config.into() }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError> {
        let result = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .header("Content-Type", "application/json")
            .send(body);
        match result {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp.body_mut().read_to_string().map_err(|e| classify(&e))?;
                Ok(HttpReply { status, body })
            }
            Err(e) => Err(classify(&e)),
        }
    }
}

fn classify(e: &ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout(e.to_string()),
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportError::Connect(e.to_string())
        }
        _ => TransportError::Other(e.to_string()),
    }
}

/// Transport that fails the test if anything tries to use it.
pub struct ForbiddenTransport;

impl Transport for ForbiddenTransport {
    fn post_json(&self, url: &str, _: &str, _: &str) -> Result<HttpReply, TransportError> {
        panic!("network access attempted: POST {url}");
    }
}
