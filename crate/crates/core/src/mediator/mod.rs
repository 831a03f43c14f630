//! The coordination mediator.
//!
//! Networks never talk to each other. They report their own spectrum share
//! and channel picks to the mediator, which answers with aggregates only:
//! the sanitized sum `beta_i` of every other network's share, and the
//! per-channel selectivity `1 / y_h`. Neither requirements nor per-network
//! channel sets are stored, and no reply type has a field that could carry
//! another network's individual values.
//!
//! Requests are executed strictly one at a time. Every request and its reply
//! go into an append-only log, which [`replay`] can re-run against a fresh
//! mediator to confirm that responses are reproducible byte for byte.

mod protocol;
mod server;

pub use protocol::{parse_request, ProtocolError, Reply, Request, RequestBody, Response};
pub use server::{MediatorClient, MediatorServer};

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::NetworkId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediatorError {
    #[error("already registered: {0}")]
    AlreadyRegistered(NetworkId),
    #[error("unknown network: {0}")]
    UnknownNetwork(NetworkId),
    #[error("negative share")]
    NegativeShare,
    #[error("channel out of range: {channel} >= {channels}")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("unexpected reply to {0}")]
    UnexpectedReply(&'static str),
}

/// Attractiveness of a channel, `1 / y_h`.
///
/// An empty channel has no finite selectivity. It is represented by
/// `Unoccupied`, which orders above every finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Selectivity {
    Finite(f64),
    Unoccupied,
}

impl Selectivity {
    pub fn from_occupancy(agents: u32) -> Self {
        if agents == 0 {
            Selectivity::Unoccupied
        } else {
            Selectivity::Finite(1.0 / agents as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Selectivity::Finite(v) => Some(v),
            Selectivity::Unoccupied => None,
        }
    }
}

impl Eq for Selectivity {}

impl PartialOrd for Selectivity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Selectivity {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Selectivity::Unoccupied, Selectivity::Unoccupied) => Ordering::Equal,
            (Selectivity::Unoccupied, _) => Ordering::Greater,
            (_, Selectivity::Unoccupied) => Ordering::Less,
            (Selectivity::Finite(a), Selectivity::Finite(b)) => a.total_cmp(b),
        }
    }
}

/// One processed request.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Position in the mediator's total order: 0, 1, 2, ...
    pub seq: u64,
    pub request: Request,
    pub response: Response,
}

/// Mediator state: registry, latest reported shares, channel occupancy.
#[derive(Debug, Clone)]
pub struct Mediator {
    channels: usize,
    registered: Vec<NetworkId>,
    index: HashMap<NetworkId, usize>,
    latest_share: Vec<f64>,
    occupancy: Vec<u32>,
    selections: u64,
    next_seq: u64,
    log: Option<Vec<LogEntry>>,
}

impl Mediator {
    /// A mediator over `channels` channels that keeps a full request log.
    pub fn new(channels: usize) -> Self {
        Mediator {
            channels,
            registered: Vec::new(),
            index: HashMap::new(),
            latest_share: Vec::new(),
            occupancy: vec![0; channels],
            selections: 0,
            next_seq: 0,
            log: Some(Vec::new()),
        }
    }

    /// Same as [`Mediator::new`] but without retaining the request log.
    /// Sequence numbers still advance. Used by bulk Monte Carlo runs.
    pub fn unlogged(channels: usize) -> Self {
        Mediator {
            log: None,
            ..Mediator::new(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Registered networks, in registration order.
    pub fn registered(&self) -> &[NetworkId] {
        &self.registered
    }

    pub fn is_registered(&self, id: &NetworkId) -> bool {
        self.index.contains_key(id)
    }

    /// `y_h` for every channel.
    pub fn occupancy(&self) -> &[u32] {
        &self.occupancy
    }

    /// Number of acknowledged channel selections.
    pub fn selections(&self) -> u64 {
        self.selections
    }

    /// The request log, or an empty slice for an unlogged mediator.
    pub fn request_log(&self) -> &[LogEntry] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Processes one wire-level request and returns its response.
    pub fn handle(&mut self, request: Request) -> Response {
        let result = self.execute(&request.network, &request.body);
        let response = Response::from_result(request.seq, result);
        self.append(request, response.clone());
        response
    }

    pub fn register(&mut self, id: &NetworkId) -> Result<(), MediatorError> {
        self.call(id, RequestBody::Register).map(drop)
    }

    pub fn report_share(&mut self, id: &NetworkId, share: f64) -> Result<(), MediatorError> {
        self.call(id, RequestBody::ReportShare { share }).map(drop)
    }

    /// `beta_i`: the sum of the latest shares of every other network.
    pub fn sanitized_sum(&mut self, id: &NetworkId) -> Result<f64, MediatorError> {
        match self.call(id, RequestBody::GetBeta)? {
            Reply::Beta(beta) => Ok(beta),
            _ => Err(MediatorError::UnexpectedReply("get_beta")),
        }
    }

    pub fn selectivity_vector(&mut self, id: &NetworkId) -> Result<Vec<Selectivity>, MediatorError> {
        match self.call(id, RequestBody::GetSelectivity)? {
            Reply::Selectivity(values) => Ok(values),
            _ => Err(MediatorError::UnexpectedReply("get_selectivity")),
        }
    }

    pub fn record_selection(&mut self, id: &NetworkId, channel: usize) -> Result<(), MediatorError> {
        self.call(id, RequestBody::Select { channel }).map(drop)
    }

    fn call(&mut self, id: &NetworkId, body: RequestBody) -> Result<Reply, MediatorError> {
        let result = self.execute(id, &body);
        if self.log.is_some() {
            let request = Request {
                seq: self.next_seq,
                network: id.clone(),
                body,
            };
            let response = Response::from_result(request.seq, result.clone());
            self.append(request, response);
        } else {
            self.next_seq += 1;
        }
        result
    }

    fn append(&mut self, request: Request, response: Response) {
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry {
                seq,
                request,
                response,
            });
        }
    }

    fn slot(&self, id: &NetworkId) -> Result<usize, MediatorError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| MediatorError::UnknownNetwork(id.clone()))
    }

    fn execute(&mut self, id: &NetworkId, body: &RequestBody) -> Result<Reply, MediatorError> {
        match *body {
            RequestBody::Register => {
                if self.index.contains_key(id) {
                    return Err(MediatorError::AlreadyRegistered(id.clone()));
                }
                self.index.insert(id.clone(), self.registered.len());
                self.registered.push(id.clone());
                self.latest_share.push(0.0);
                Ok(Reply::Ack)
            }
            RequestBody::ReportShare { share } => {
                let slot = self.slot(id)?;
                if !(share >= 0.0 && share.is_finite()) {
                    return Err(MediatorError::NegativeShare);
                }
                self.latest_share[slot] = share;
                Ok(Reply::Ack)
            }
            RequestBody::GetBeta => {
                let slot = self.slot(id)?;
                let beta = self
                    .latest_share
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != slot)
                    // Folding from +0.0: an empty f64 sum is -0.0.
                    .fold(0.0, |acc, (_, s)| acc + s);
                Ok(Reply::Beta(beta))
            }
            RequestBody::GetSelectivity => {
                self.slot(id)?;
                Ok(Reply::Selectivity(
                    self.occupancy
                        .iter()
                        .map(|&y| Selectivity::from_occupancy(y))
                        .collect(),
                ))
            }
            RequestBody::Select { channel } => {
                self.slot(id)?;
                if channel >= self.channels {
                    return Err(MediatorError::ChannelOutOfRange {
                        channel,
                        channels: self.channels,
                    });
                }
                self.occupancy[channel] += 1;
                self.selections += 1;
                Ok(Reply::Ack)
            }
        }
    }
}

/// A replayed response that differs from the logged one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("log entry {seq}: logged `{logged}` but replay produced `{replayed}`")]
pub struct ReplayMismatch {
    pub seq: u64,
    pub logged: String,
    pub replayed: String,
}

/// Re-executes `log` against a fresh mediator over `channels` channels and
/// compares every encoded response with the logged one.
pub fn replay(channels: usize, log: &[LogEntry]) -> Result<(), ReplayMismatch> {
    let mut fresh = Mediator::new(channels);
    for entry in log {
        let replayed = fresh.handle(entry.request.clone()).to_line();
        let logged = entry.response.to_line();
        if replayed != logged {
            return Err(ReplayMismatch {
                seq: entry.seq,
                logged,
                replayed,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NetworkId {
        NetworkId::from(s)
    }

    #[test]
    fn registration() {
        let mut m = Mediator::new(3);
        m.register(&id("a")).unwrap();
        assert_eq!(
            m.register(&id("a")),
            Err(MediatorError::AlreadyRegistered(id("a")))
        );
        assert_eq!(
            m.sanitized_sum(&id("b")),
            Err(MediatorError::UnknownNetwork(id("b")))
        );
        assert_eq!(m.registered(), &[id("a")]);
    }

    #[test]
    fn reports_overwrite() {
        let mut m = Mediator::new(20);
        for n in ["net1", "net2"] {
            m.register(&id(n)).unwrap();
        }
        m.report_share(&id("net1"), 7.2).unwrap();
        m.report_share(&id("net2"), 10.8).unwrap();
        assert_eq!(m.sanitized_sum(&id("net1")).unwrap(), 10.8);
        assert_eq!(m.sanitized_sum(&id("net2")).unwrap(), 7.2);
        m.report_share(&id("net2"), 1.0).unwrap();
        assert_eq!(m.sanitized_sum(&id("net1")).unwrap(), 1.0);
        m.report_share(&id("net2"), 0.0).unwrap();
        assert_eq!(m.sanitized_sum(&id("net1")).unwrap(), 0.0);
        assert_eq!(
            m.report_share(&id("net1"), -0.5),
            Err(MediatorError::NegativeShare)
        );
    }

    #[test]
    fn sanitized_sums() {
        let mut m = Mediator::new(4);
        m.register(&id("solo")).unwrap();
        m.report_share(&id("solo"), 3.0).unwrap();
        let beta = m.sanitized_sum(&id("solo")).unwrap();
        assert!(beta == 0.0 && beta.is_sign_positive());

        let mut m = Mediator::new(4);
        for (n, s) in [("a", 1.0), ("b", 2.0), ("c", 3.0)] {
            m.register(&id(n)).unwrap();
            m.report_share(&id(n), s).unwrap();
        }
        assert_eq!(m.sanitized_sum(&id("b")).unwrap(), 4.0);
    }

    #[test]
    fn selectivity_follows_occupancy() {
        use Selectivity::*;
        let mut m = Mediator::new(3);
        m.register(&id("a")).unwrap();
        m.register(&id("b")).unwrap();
        assert_eq!(m.selectivity_vector(&id("a")).unwrap(), vec![Unoccupied; 3]);
        m.record_selection(&id("a"), 0).unwrap();
        m.record_selection(&id("a"), 2).unwrap();
        m.record_selection(&id("b"), 2).unwrap();
        assert_eq!(
            m.selectivity_vector(&id("b")).unwrap(),
            vec![Finite(1.0), Unoccupied, Finite(0.5)]
        );
        assert_eq!(
            m.record_selection(&id("a"), 3),
            Err(MediatorError::ChannelOutOfRange {
                channel: 3,
                channels: 3
            })
        );
        assert_eq!(m.occupancy().iter().sum::<u32>() as u64, m.selections());
    }

    #[test]
    fn single_pick_on_empty_system() {
        let mut m = Mediator::new(5);
        m.register(&id("a")).unwrap();
        m.record_selection(&id("a"), 2).unwrap();
        let e = m.selectivity_vector(&id("a")).unwrap();
        assert_eq!(e[2], Selectivity::Finite(1.0));
        assert!(e
            .iter()
            .enumerate()
            .all(|(h, v)| h == 2 || *v == Selectivity::Unoccupied));
    }

    #[test]
    fn unoccupied_outranks_finite() {
        assert!(Selectivity::Unoccupied > Selectivity::Finite(f64::MAX));
        assert!(Selectivity::Finite(1.0) > Selectivity::Finite(0.5));
    }

    #[test]
    fn log_is_gapless_and_replays() {
        let mut m = Mediator::new(4);
        m.register(&id("a")).unwrap();
        m.register(&id("b")).unwrap();
        let _ = m.register(&id("a"));
        m.report_share(&id("a"), 1.25).unwrap();
        m.sanitized_sum(&id("b")).unwrap();
        m.record_selection(&id("b"), 1).unwrap();
        let _ = m.record_selection(&id("b"), 9);
        m.selectivity_vector(&id("a")).unwrap();
        let log = m.request_log();
        assert_eq!(log.len(), 8);
        for (i, e) in log.iter().enumerate() {
            assert_eq!(e.seq, i as u64);
        }
        replay(4, log).unwrap();
    }

    #[test]
    fn replay_detects_tampering() {
        let mut m = Mediator::new(2);
        m.register(&id("a")).unwrap();
        m.report_share(&id("a"), 1.0).unwrap();
        m.sanitized_sum(&id("a")).unwrap();
        let mut log = m.request_log().to_vec();
        log[2].response.reply = Reply::Beta(5.0);
        assert_eq!(replay(2, &log).unwrap_err().seq, 2);
    }

    #[test]
    fn unlogged_keeps_counting() {
        let mut m = Mediator::unlogged(2);
        m.register(&id("a")).unwrap();
        assert!(m.request_log().is_empty());
        let r = m.handle(Request {
            seq: 41,
            network: id("a"),
            body: RequestBody::GetBeta,
        });
        assert_eq!(r.seq, 41);
    }
}
