use super::{invalid, ModelError};

/// Weighted fairness index
/// `F = (sum S_i)^2 / (sum R_i * sum R_i (S_i / R_i)^2)`.
///
/// `F <= 1` by Cauchy-Schwarz, with equality exactly when `S_i / R_i` is the
/// same for every network. Scaling all shares by a constant leaves `F`
/// unchanged.
pub fn fairness_index(shares: &[f64], requirements: &[u32]) -> Result<f64, ModelError> {
    if shares.is_empty() || shares.len() != requirements.len() {
        return Err(invalid(
            "shares",
            format!(
                "{} shares for {} requirements",
                shares.len(),
                requirements.len()
            ),
        ));
    }
    if requirements.contains(&0) {
        return Err(invalid("requirements", "every requirement must be >= 1"));
    }
    if shares.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("shares", "shares must be non-negative"));
    }
    let total: f64 = shares.iter().sum();
    if total == 0.0 {
        return Err(ModelError::FairnessUndefined);
    }
    let weight: f64 = requirements.iter().map(|&r| r as f64).sum();
    let spread: f64 = shares
        .iter()
        .zip(requirements)
        .map(|(&s, &r)| {
            let per = s / r as f64;
            r as f64 * per * per
        })
        .sum();
    Ok(total * total / (weight * spread))
}
