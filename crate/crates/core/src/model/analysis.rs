use super::{contested_capacity, invalid, CompetitionParams, ModelError};

fn check_requirements(requirements: &[u32]) -> Result<u32, ModelError> {
    if requirements.is_empty() {
        return Err(invalid("requirements", "at least one network is needed"));
    }
    if requirements.contains(&0) {
        return Err(invalid("requirements", "every requirement must be >= 1"));
    }
    Ok(requirements.iter().sum())
}

/// The proportional split `S_i = R_i (N - n) / sum_j R_j`.
///
/// This is the weighted-fair target. It is also where the dynamics land once
/// their totals are rescaled to the capacity.
pub fn closed_form_equilibrium(requirements: &[u32], channels: usize) -> Result<Vec<f64>, ModelError> {
    let l = check_requirements(requirements)? as f64;
    let capacity = contested_capacity(channels, requirements.len())? as f64;
    Ok(requirements
        .iter()
        .map(|&r| r as f64 * capacity / l)
        .collect())
}

/// Exact interior rest point of the weighted dynamics.
///
/// Every sub-species settles at `s* = C / (1 + alpha (l - 1))` with
/// `l = sum_j R_j`, so network `i` holds `R_i s*`. At `alpha = 1` this
/// coincides with [`closed_form_equilibrium`].
pub fn interior_fixed_point(
    requirements: &[u32],
    channels: usize,
    alpha: f64,
) -> Result<Vec<f64>, ModelError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    let l = check_requirements(requirements)? as f64;
    let capacity = contested_capacity(channels, requirements.len())? as f64;
    let per_sub_species = capacity / (1.0 + alpha * (l - 1.0));
    Ok(requirements
        .iter()
        .map(|&r| r as f64 * per_sub_species)
        .collect())
}

/// The two distinct eigenvalues of the linearized `l`-species system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianEigenvalues {
    /// `-r/l - (l-1) r alpha / l`, along the all-equal direction.
    pub major: f64,
    /// `r (alpha - 1) / l`, with multiplicity `l - 1`.
    pub minor: f64,
}

impl JacobianEigenvalues {
    pub fn is_stable(&self) -> bool {
        self.major < 0.0 && self.minor < 0.0
    }
}

/// Closed-form eigenvalues of the symmetric Jacobian with diagonal `-r/l`
/// and off-diagonal `-r alpha / l`.
///
/// `alpha` is read directly, so the boundary case `alpha = 1` may be
/// evaluated even though [`CompetitionParams::validate`] refuses it.
pub fn stability_eigenvalues(l: usize, params: &CompetitionParams) -> JacobianEigenvalues {
    let l = l.max(1) as f64;
    let (r, alpha) = (params.r, params.alpha);
    JacobianEigenvalues {
        major: -r / l - (l - 1.0) * r * alpha / l,
        minor: r * (alpha - 1.0) / l,
    }
}

/// Logistic time for one sub-species to grow from `s0` to `s_target` while
/// the other `l - 1` sub-species are held at `s0`.
///
/// With `A = (l - 1) s0` and asymptote `K = C - alpha A`:
/// `T = C / (r K) * ln(s_target (K - s0) / (s0 (K - s_target)))`.
pub fn predicted_convergence_time(
    s0: f64,
    s_target: f64,
    params: &CompetitionParams,
    l: usize,
) -> Result<f64, ModelError> {
    if l == 0 {
        return Err(invalid("l", "at least one sub-species is needed"));
    }
    if params.capacity <= 0.0 {
        return Err(ModelError::ZeroCapacity);
    }
    if !(s0 > 0.0) {
        return Err(invalid("s0", format!("{s0} must be positive")));
    }
    if s_target < s0 {
        return Err(invalid("s_target", format!("{s_target} is below s0 = {s0}")));
    }
    let c = params.capacity;
    let others = (l - 1) as f64 * s0;
    let asymptote = c - params.alpha * others;
    if s_target >= asymptote {
        return Err(ModelError::TargetBeyondAsymptote {
            target: s_target,
            asymptote,
        });
    }
    let ratio = s_target * (asymptote - s0) / (s0 * (asymptote - s_target));
    Ok(c / (params.r * asymptote) * ratio.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn proportional_split() {
        assert!(close(&closed_form_equilibrium(&[2, 3], 20).unwrap(), &[7.2, 10.8], 1e-12));
        assert_eq!(closed_form_equilibrium(&[1, 1], 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(closed_form_equilibrium(&[1, 1, 1, 1], 8).unwrap(), vec![1.0; 4]);
        assert!(matches!(
            closed_form_equilibrium(&[1, 1], 1),
            Err(ModelError::InsufficientChannels { .. })
        ));
    }

    #[test]
    fn rest_point_values() {
        // s* = 18 / 4.6
        let s = interior_fixed_point(&[2, 3], 20, 0.9).unwrap();
        assert!(close(&s, &[7.826_086_956_521_74, 11.739_130_434_782_61], 1e-9));
        // l = 3 after removing one sub-species: s* = 18 / 2.8
        let s = interior_fixed_point(&[2, 1], 20, 0.9).unwrap();
        assert!(close(&s, &[12.857_142_857_142_858, 6.428_571_428_571_429], 1e-9));
        let s = interior_fixed_point(&[2, 3], 20, 1.0).unwrap();
        assert!(close(&s, &[7.2, 10.8], 1e-12));
        assert!(interior_fixed_point(&[2, 3], 20, 0.0).is_err());
    }

    #[test]
    fn eigenvalues_of_fig2_system() {
        let p = CompetitionParams::new(0.9, 1.95, 18.0).unwrap();
        let ev = stability_eigenvalues(5, &p);
        assert!((ev.major + 1.794).abs() < 1e-12);
        assert!((ev.minor + 0.039).abs() < 1e-12);
        assert!(ev.is_stable());
        assert!((stability_eigenvalues(1, &p).major + 1.95).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_boundary_at_alpha_one() {
        let mut p = CompetitionParams::new(0.5, 1.2, 10.0).unwrap();
        p.alpha = 1.0;
        for l in [1, 2, 7, 30] {
            assert_eq!(stability_eigenvalues(l, &p).minor, 0.0);
        }
    }

    #[test]
    fn convergence_time_values() {
        let p = CompetitionParams::new(0.9, 1.95, 18.0).unwrap();
        assert_eq!(predicted_convergence_time(0.1, 0.1, &p, 5).unwrap(), 0.0);
        // K = 18 - 0.9 * 0.4 = 17.64, target 0.99 K
        let t = predicted_convergence_time(0.1, 0.99 * 17.64, &p, 5).unwrap();
        assert!((t - 5.108_419_115_684_283).abs() < 1e-9, "{t}");
        assert!(matches!(
            predicted_convergence_time(0.1, 17.64, &p, 5),
            Err(ModelError::TargetBeyondAsymptote { .. })
        ));
        let a = predicted_convergence_time(0.1, 10.0, &p, 5).unwrap();
        let b = predicted_convergence_time(0.1, 12.0, &p, 5).unwrap();
        assert!(b > a);
    }
}
