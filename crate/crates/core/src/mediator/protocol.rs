//! Newline-delimited wire format.
//!
//! Requests: `{"seq":7,"op":"report_share","network":"net1","share":7.2}`.
//! `op` is one of `register`, `report_share`, `get_beta`, `get_selectivity`,
//! `select`; `share` accompanies `report_share` and `channel` accompanies
//! `select`.
//!
//! Responses: `{"seq":7,"ok":true}` plus at most one of `"beta"`,
//! `"selectivity"` (an array with `null` for unoccupied channels) or
//! `"error"`. Numbers are written with 17 significant digits, which is
//! enough for every `f64` to read back bit-exact.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use super::{MediatorError, Selectivity};
use crate::NetworkId;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("op `{op}` requires field `{field}`")]
    MissingField { op: &'static str, field: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestBody {
    Register,
    ReportShare { share: f64 },
    GetBeta,
    GetSelectivity,
    Select { channel: usize },
}

impl RequestBody {
    pub fn op(&self) -> &'static str {
        match self {
            RequestBody::Register => "register",
            RequestBody::ReportShare { .. } => "report_share",
            RequestBody::GetBeta => "get_beta",
            RequestBody::GetSelectivity => "get_selectivity",
            RequestBody::Select { .. } => "select",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    /// Caller-chosen sequence number, echoed in the response.
    pub seq: u64,
    pub network: NetworkId,
    pub body: RequestBody,
}

/// Everything the mediator can say back. There is deliberately no variant
/// that names another network or carries its individual share or channels.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ack,
    Beta(f64),
    Selectivity(Vec<Selectivity>),
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub seq: u64,
    pub reply: Reply,
}

fn push_number(out: &mut String, value: f64) {
    let _ = write!(out, "{value:.16e}");
}

fn push_string(out: &mut String, value: &str) {
    out.push_str(&serde_json::to_string(value).expect("strings always serialize"));
}

impl Request {
    pub fn to_line(&self) -> String {
        let mut out = format!("{{\"seq\":{},\"op\":\"{}\",\"network\":", self.seq, self.body.op());
        push_string(&mut out, self.network.as_str());
        match self.body {
            RequestBody::ReportShare { share } => {
                out.push_str(",\"share\":");
                push_number(&mut out, share);
            }
            RequestBody::Select { channel } => {
                let _ = write!(out, ",\"channel\":{channel}");
            }
            _ => {}
        }
        out.push('}');
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRequest {
    seq: u64,
    op: String,
    network: String,
    #[serde(default)]
    share: Option<f64>,
    #[serde(default)]
    channel: Option<u64>,
}

/// Parses one request line.
pub fn parse_request(line: &str) -> Result<Request, ProtocolError> {
    let wire: WireRequest = serde_json::from_str(line.trim_end())?;
    let body = match wire.op.as_str() {
        "register" => RequestBody::Register,
        "get_beta" => RequestBody::GetBeta,
        "get_selectivity" => RequestBody::GetSelectivity,
        "report_share" => RequestBody::ReportShare {
            share: wire.share.ok_or(ProtocolError::MissingField {
                op: "report_share",
                field: "share",
            })?,
        },
        "select" => RequestBody::Select {
            channel: wire.channel.ok_or(ProtocolError::MissingField {
                op: "select",
                field: "channel",
            })? as usize,
        },
        other => return Err(ProtocolError::UnknownOp(other.to_string())),
    };
    Ok(Request {
        seq: wire.seq,
        network: NetworkId::from(wire.network),
        body,
    })
}

impl Response {
    pub(crate) fn from_result(seq: u64, result: Result<Reply, MediatorError>) -> Self {
        Response {
            seq,
            reply: result.unwrap_or_else(|e| Reply::Error(e.to_string())),
        }
    }

    /// Error response for a line that never reached the mediator.
    pub fn malformed(seq: u64, error: &ProtocolError) -> Self {
        Response {
            seq,
            reply: Reply::Error(error.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        !matches!(self.reply, Reply::Error(_))
    }

    pub fn to_line(&self) -> String {
        let mut out = format!("{{\"seq\":{},\"ok\":{}", self.seq, self.is_ok());
        match &self.reply {
            Reply::Ack => {}
            Reply::Beta(beta) => {
                out.push_str(",\"beta\":");
                push_number(&mut out, *beta);
            }
            Reply::Selectivity(values) => {
                out.push_str(",\"selectivity\":[");
                for (h, value) in values.iter().enumerate() {
                    if h > 0 {
                        out.push(',');
                    }
                    match value {
                        Selectivity::Finite(v) => push_number(&mut out, *v),
                        Selectivity::Unoccupied => out.push_str("null"),
                    }
                }
                out.push(']');
            }
            Reply::Error(message) => {
                out.push_str(",\"error\":");
                push_string(&mut out, message);
            }
        }
        out.push('}');
        out
    }

    pub fn parse(line: &str) -> Result<Response, ProtocolError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct WireResponse {
            seq: u64,
            ok: bool,
            #[serde(default)]
            beta: Option<f64>,
            #[serde(default)]
            selectivity: Option<Vec<Option<f64>>>,
            #[serde(default)]
            error: Option<String>,
        }
        let wire: WireResponse = serde_json::from_str(line.trim_end())?;
        let reply = if !wire.ok {
            Reply::Error(wire.error.unwrap_or_default())
        } else if let Some(beta) = wire.beta {
            Reply::Beta(beta)
        } else if let Some(values) = wire.selectivity {
            Reply::Selectivity(
                values
                    .into_iter()
                    .map(|v| v.map_or(Selectivity::Unoccupied, Selectivity::Finite))
                    .collect(),
            )
        } else {
            Reply::Ack
        };
        Ok(Response { seq: wire.seq, reply })
    }
}

/// Best-effort `seq` extraction from a line that failed to parse.
pub(crate) fn salvage_seq(line: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("seq").and_then(serde_json::Value::as_u64))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_lines() {
        let r = Request {
            seq: 3,
            network: NetworkId::from("net\"1"),
            body: RequestBody::ReportShare { share: 7.2 },
        };
        let line = r.to_line();
        assert_eq!(
            line,
            r#"{"seq":3,"op":"report_share","network":"net\"1","share":7.2000000000000002e0}"#
        );
        assert_eq!(parse_request(&line).unwrap(), r);
    }

    #[test]
    fn response_lines() {
        let beta = Response {
            seq: 1,
            reply: Reply::Beta(10.8),
        };
        assert_eq!(beta.to_line(), r#"{"seq":1,"ok":true,"beta":1.0800000000000001e1}"#);
        let sel = Response {
            seq: 2,
            reply: Reply::Selectivity(vec![
                Selectivity::Finite(1.0),
                Selectivity::Unoccupied,
                Selectivity::Finite(0.5),
            ]),
        };
        assert_eq!(
            sel.to_line(),
            r#"{"seq":2,"ok":true,"selectivity":[1.0000000000000000e0,null,5.0000000000000000e-1]}"#
        );
        let err = Response {
            seq: 9,
            reply: Reply::Error("unknown network: x".into()),
        };
        assert_eq!(err.to_line(), r#"{"seq":9,"ok":false,"error":"unknown network: x"}"#);
        for r in [beta, sel, err, Response { seq: 4, reply: Reply::Ack }] {
            assert_eq!(Response::parse(&r.to_line()).unwrap(), r);
        }
    }

    #[test]
    fn numbers_keep_nine_significant_digits() {
        let line = Response {
            seq: 0,
            reply: Reply::Beta(1.0 / 3.0),
        }
        .to_line();
        let digits: String = line
            .split("\"beta\":")
            .nth(1)
            .unwrap()
            .chars()
            .take_while(|c| *c != 'e')
            .filter(char::is_ascii_digit)
            .collect();
        assert!(digits.len() >= 9, "{line}");
    }

    #[test]
    fn malformed_requests() {
        assert!(matches!(
            parse_request(r#"{"seq":1,"op":"fly","network":"a"}"#),
            Err(ProtocolError::UnknownOp(_))
        ));
        assert!(matches!(
            parse_request(r#"{"seq":1,"op":"select","network":"a"}"#),
            Err(ProtocolError::MissingField { .. })
        ));
        assert!(matches!(
            parse_request(r#"{"seq":1,"op":"select","network":"a","channel":-1}"#),
            Err(ProtocolError::Json(_))
        ));
        assert!(parse_request("not json").is_err());
        assert_eq!(salvage_seq(r#"{"seq":12,"op":"fly"}"#), 12);
        assert_eq!(salvage_seq("garbage"), 0);
    }
}
