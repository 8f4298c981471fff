//! Optional HTTP judge client. Sends a fixed plain-text prompt to a
//! configured endpoint and reads a leading YES/NO token from the response
//! body. Nothing in training or acceptance depends on this; it exists so a
//! hosted model can replace the rule judge.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use thiserror::Error;

use crate::eval::{EvalError, Judge, JudgeVerdict};
use crate::grammar::Instruction;

#[derive(Debug, Error)]
pub enum JudgeHttpError {
    #[error("bad judge endpoint url {url:?}: {reason}")]
    BadUrl { url: String, reason: &'static str },
    #[error("transport error talking to {url}: {source}")]
    Transport {
        url: String,
        source: std::io::Error,
    },
    #[error("judge endpoint returned status {status}")]
    BadStatus { status: u16 },
    #[error("malformed judge response, expected a leading YES or NO: {snippet:?}")]
    MalformedVerdict { snippet: String },
}

#[derive(Debug, Clone)]
pub struct JudgeEndpoint {
    pub url: String,
    pub timeout: Duration,
}

impl JudgeEndpoint {
    pub fn new(url: impl Into<String>, timeout_ms: u64) -> JudgeEndpoint {
        JudgeEndpoint {
            url: url.into(),
            timeout: Duration::from_millis(timeout_ms),
        }
    }
}

/// The documented three-field prompt.
pub fn judge_prompt(instruction: &Instruction, output: &str) -> String {
    format!(
        "instruction: {}\nmodel_output: {}\nquestion: Does the output fulfill the instruction? Answer YES or NO with a reason.\n",
        instruction.text, output
    )
}

fn split_url(url: &str) -> Result<(String, u16, String), JudgeHttpError> {
    let bad = |reason| JudgeHttpError::BadUrl {
        url: url.to_string(),
        reason,
    };
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| bad("only http:// endpoints are supported"))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], rest[i..].to_string()),
        None => (rest, "/".to_string()),
    };
    if authority.is_empty() {
        return Err(bad("missing host"));
    }
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (
            h.to_string(),
            p.parse::<u16>().map_err(|_| bad("invalid port"))?,
        ),
        None => (authority.to_string(), 80),
    };
    Ok((host, port, path))
}

/// POST the prompt, parse the verdict. Timeouts and malformed responses are
/// explicit errors, never a silent verdict.
pub fn llm_judge_request(
    instruction: &Instruction,
    output: &str,
    endpoint: &JudgeEndpoint,
) -> Result<JudgeVerdict, JudgeHttpError> {
    let (host, port, path) = split_url(&endpoint.url)?;
    let transport = |source| JudgeHttpError::Transport {
        url: endpoint.url.clone(),
        source,
    };
    let addrs = format!("{host}:{port}");
    let addr = std::net::ToSocketAddrs::to_socket_addrs(&addrs)
        .map_err(transport)?
        .next()
        .ok_or_else(|| JudgeHttpError::BadUrl {
            url: endpoint.url.clone(),
            reason: "host resolves to no address",
        })?;
    let mut stream = TcpStream::connect_timeout(&addr, endpoint.timeout).map_err(transport)?;
    stream
        .set_read_timeout(Some(endpoint.timeout))
        .map_err(transport)?;
    stream
        .set_write_timeout(Some(endpoint.timeout))
        .map_err(transport)?;

    let body = judge_prompt(instruction, output);
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).map_err(transport)?;
    let mut response = Vec::new();
    stream.read_to_end(&mut response).map_err(transport)?;
    let text = String::from_utf8_lossy(&response);

    let status: u16 = text
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| JudgeHttpError::MalformedVerdict {
            snippet: text.chars().take(80).collect(),
        })?;
    if status != 200 {
        return Err(JudgeHttpError::BadStatus { status });
    }
    let body = text
        .split_once("\r\n\r\n")
        .map(|(_, b)| b)
        .unwrap_or("")
        .trim();
    let upper = body.to_ascii_uppercase();
    if upper.starts_with("YES") {
        Ok(JudgeVerdict::correct())
    } else if upper.starts_with("NO") {
        let reason = body[2..].trim_start_matches([':', ' ']).trim();
        Ok(JudgeVerdict::incorrect(if reason.is_empty() {
            "judge answered no".to_string()
        } else {
            reason.to_string()
        }))
    } else {
        Err(JudgeHttpError::MalformedVerdict {
            snippet: body.chars().take(80).collect(),
        })
    }
}

/// [`Judge`] adapter around the HTTP client.
pub struct HttpJudge {
    pub endpoint: JudgeEndpoint,
}

impl Judge for HttpJudge {
    fn judge(&self, instruction: &Instruction, output: &str) -> Result<JudgeVerdict, EvalError> {
        llm_judge_request(instruction, output, &self.endpoint)
            .map_err(|e| EvalError::Judge(e.to_string()))
    }
}
