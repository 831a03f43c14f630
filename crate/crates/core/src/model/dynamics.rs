use super::{CompetitionParams, ModelError, NetworkAllocState};

/// Rate of change of one sub-species' share.
///
/// `delta = r * s * (1 - (s + alpha * siblings + alpha * foreign) / C)`.
/// Zero is an absorbing state: a sub-species at `s = 0` never regrows.
pub fn growth_delta(
    share: f64,
    own_siblings_sum: f64,
    foreign_sum: f64,
    params: &CompetitionParams,
) -> Result<f64, ModelError> {
    if params.capacity <= 0.0 {
        return Err(ModelError::ZeroCapacity);
    }
    let load = share + params.alpha * own_siblings_sum + params.alpha * foreign_sum;
    Ok(params.r * share * (1.0 - load / params.capacity))
}

/// One synchronous iteration of a network's sub-species against `beta`.
///
/// Sibling sums are taken from the state at the start of the call, so the
/// order of sub-species does not matter. Shares are clamped at zero. Returns
/// the updated state together with the largest `|delta|` seen.
pub fn step_network(
    state: &NetworkAllocState,
    beta: f64,
    params: &CompetitionParams,
) -> Result<(NetworkAllocState, f64), ModelError> {
    step_network_masked(state, beta, params, &[])
}

/// Like [`step_network`], but sub-species whose entry in `frozen` is `true`
/// keep their share and contribute nothing to the returned `|delta|`.
/// A shorter `frozen` slice leaves the remaining sub-species active.
pub fn step_network_masked(
    state: &NetworkAllocState,
    beta: f64,
    params: &CompetitionParams,
    frozen: &[bool],
) -> Result<(NetworkAllocState, f64), ModelError> {
    if !(beta >= 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "beta",
            reason: format!("{beta} must be >= 0"),
        });
    }
    let total = state.total();
    let mut next = state.clone();
    let mut max_abs_delta = 0.0f64;
    for (k, (share, out)) in state
        .sub_shares()
        .iter()
        .zip(next.sub_shares_mut().iter_mut())
        .enumerate()
    {
        if frozen.get(k).copied().unwrap_or(false) {
            continue;
        }
        let delta = growth_delta(*share, total - share, beta, params)?;
        max_abs_delta = max_abs_delta.max(delta.abs());
        *out = (share + params.step * delta).max(0.0);
    }
    Ok((next, max_abs_delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::interior_fixed_point;

    fn fig2() -> CompetitionParams {
        CompetitionParams::new(0.9, 1.95, 18.0).unwrap()
    }

    #[test]
    fn zero_share_is_absorbing() {
        let p = fig2();
        assert_eq!(growth_delta(0.0, 5.0, 11.0, &p).unwrap(), 0.0);
        assert_eq!(growth_delta(0.0, 0.0, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn lone_sub_species_delta() {
        // 1.95 * (1 - 1/18)
        let d = growth_delta(1.0, 0.0, 0.0, &fig2()).unwrap();
        assert!((d - 1.841_666_666_666_666_6).abs() < 1e-12);
    }

    #[test]
    fn rest_point_has_no_growth() {
        let s = 3.913_043_5;
        let d = growth_delta(s, s, 11.739_130_4, &fig2()).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn zero_capacity_rejected() {
        let mut p = fig2();
        p.capacity = 0.0;
        assert_eq!(growth_delta(1.0, 0.0, 0.0, &p), Err(ModelError::ZeroCapacity));
    }

    #[test]
    fn single_step_from_seed() {
        let state = NetworkAllocState::new("solo", 1, 0.1).unwrap();
        let (next, d) = step_network(&state, 0.0, &fig2()).unwrap();
        // 0.1 + 1.95 * 0.1 * (1 - 0.1/18)
        assert!((next.sub_shares()[0] - 0.293_916_666_666_666_7).abs() < 1e-12);
        assert!((d - 0.193_916_666_666_666_7).abs() < 1e-12);
    }

    #[test]
    fn extinct_network_stays_extinct() {
        let state = NetworkAllocState::from_shares("x", vec![0.0; 4]).unwrap();
        let (next, d) = step_network(&state, 7.0, &fig2()).unwrap();
        assert_eq!(next, state);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let totals = interior_fixed_point(&[2, 3], 20, 0.9).unwrap();
        let per = totals[0] / 2.0;
        let state = NetworkAllocState::from_shares("n1", vec![per; 2]).unwrap();
        let (next, d) = step_network(&state, totals[1], &fig2()).unwrap();
        assert!(d < 1e-9);
        for (a, b) in next.sub_shares().iter().zip(state.sub_shares()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_sub_species_hold() {
        let state = NetworkAllocState::from_shares("n", vec![0.0, 1.0]).unwrap();
        let (next, d) = step_network_masked(&state, 0.0, &fig2(), &[false, true]).unwrap();
        assert_eq!(next.sub_shares(), &[0.0, 1.0]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn overshoot_clamps_at_zero() {
        let p = CompetitionParams::new(0.9, 1.95, 1.0).unwrap();
        let state = NetworkAllocState::from_shares("n", vec![5.0]).unwrap();
        let (next, _) = step_network(&state, 10.0, &p).unwrap();
        assert_eq!(next.sub_shares(), &[0.0]);
    }
}
