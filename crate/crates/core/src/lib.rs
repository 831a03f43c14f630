//! Mediator-coordinated coexistence of heterogeneous networks on `N`
//! homogeneous channels.
//!
//! Sharing happens in two stages, and both go through a [`mediator::Mediator`]
//! that only ever hands out aggregates:
//!
//! 1. **Share allocation** ([`allocation`]). Each network competes as `R_i`
//!    sub-species in a weighted Lotka-Volterra iteration ([`model`]) until the
//!    shares settle in proportion to the requirements.
//! 2. **Channel selection** ([`foraging`]). Each network turns its share into
//!    `M_i = floor(S_i) + 1` agents. Each agent greedily takes the channel with
//!    the highest selectivity `1 / y_h`.
//!
//! [`metrics`] reduces runs to fairness, system fitness and collision
//! figures. [`scenario`] loads experiment descriptions and runs the whole
//! pipeline. [`experiments`] holds the experiment drivers that emit CSV.
//!
//! ```
//! use coexist::model::{closed_form_equilibrium, fairness_index};
//!
//! let shares = closed_form_equilibrium(&[2, 3], 20).unwrap();
//! assert_eq!(shares, vec![7.2, 10.8]);
//! assert!((fairness_index(&shares, &[2, 3]).unwrap() - 1.0).abs() < 1e-12);
//! ```

pub mod allocation;
pub mod experiments;
pub mod foraging;
pub mod mediator;
pub mod metrics;
pub mod model;
pub mod scenario;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque network identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkId(String);

impl NetworkId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NetworkId {
    fn from(s: &str) -> Self {
        NetworkId(s.to_string())
    }
}

impl From<String> for NetworkId {
    fn from(s: String) -> Self {
        NetworkId(s)
    }
}

impl From<&NetworkId> for NetworkId {
    fn from(id: &NetworkId) -> Self {
        id.clone()
    }
}

// The guide's code listings are compiled and run as doc tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/competition.md")]
    mod competition {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/fairness.md")]
    mod fairness {}
    #[doc = include_str!("../../../book/src/mediator.md")]
    mod mediator {}
    #[doc = include_str!("../../../book/src/channel-selection.md")]
    mod channel_selection {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
