//! Maps the VAE's negative β-ELBO to exploration episodes, buffer capacity
//! and gradient updates per epoch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutotuneError {
    #[error("negative β-ELBO is not finite ({0}); the VAE evaluation is broken")]
    NonFiniteElbo(f64),
    #[error("xi must be positive and finite, got {0}")]
    Xi(f64),
    #[error("max path length must be >= 1")]
    PathLength,
    #[error("fixed settings must all be >= 1, got ({0}, {1}, {2})")]
    Fixed(usize, usize, usize),
    #[error("cap must be >= 1")]
    Cap,
}

/// Upper limits; `n_buffer` caps `N_e` through `N_b = l·N_e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    pub n_explore: usize,
    pub n_buffer: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            n_explore: 300,
            n_buffer: 15_000,
        }
    }
}

impl Caps {
    fn explore_limit(&self, l: usize) -> usize {
        self.n_explore.min(self.n_buffer / l).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutotuneSettings {
    /// `None` for fixed settings.
    pub xi: Option<f64>,
    pub max_path_length: usize,
    pub n_explore: usize,
    pub n_buffer: usize,
    pub n_grad: usize,
    /// `ξ·(−β-ELBO)` before rounding and clamping.
    pub estimated_goal_count: Option<f64>,
    pub caps: Option<Caps>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuningMode {
    Auto {
        xi: f64,
    },
    Fixed {
        n_explore: usize,
        n_buffer: usize,
        n_grad: usize,
    },
}

impl TuningMode {
    pub fn validate(&self) -> Result<(), AutotuneError> {
        match *self {
            TuningMode::Auto { xi } => check_xi(xi),
            TuningMode::Fixed {
                n_explore,
                n_buffer,
                n_grad,
            } => {
                if n_explore == 0 || n_buffer == 0 || n_grad == 0 {
                    Err(AutotuneError::Fixed(n_explore, n_buffer, n_grad))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, TuningMode::Auto { .. })
    }
}

fn check_xi(xi: f64) -> Result<(), AutotuneError> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(AutotuneError::Xi(xi))
    }
}

/// `N_e = N_θ = clamp(⌈ξ·neg_beta_elbo⌉, 1, cap)` and `N_b = l·N_e`.
pub fn compute_settings(
    neg_beta_elbo: f64,
    xi: f64,
    max_path_length: usize,
    caps: Option<Caps>,
) -> Result<AutotuneSettings, AutotuneError> {
    if !neg_beta_elbo.is_finite() {
        return Err(AutotuneError::NonFiniteElbo(neg_beta_elbo));
    }
    check_xi(xi)?;
    if max_path_length == 0 {
        return Err(AutotuneError::PathLength);
    }
    if let Some(c) = caps {
        if c.n_explore == 0 || c.n_buffer == 0 {
            return Err(AutotuneError::Cap);
        }
    }
    let raw = xi * neg_beta_elbo;
    let limit = caps.map_or(usize::MAX / max_path_length, |c| c.explore_limit(max_path_length));
    let n = if raw <= 1.0 {
        1
    } else if raw.ceil() >= limit as f64 {
        limit
    } else {
        raw.ceil() as usize
    };
    Ok(AutotuneSettings {
        xi: Some(xi),
        max_path_length,
        n_explore: n,
        n_buffer: max_path_length * n,
        n_grad: n,
        estimated_goal_count: Some(raw),
        caps,
    })
}

/// Auto mode recomputes from `neg_beta_elbo`; fixed mode passes its triple through.
pub fn resolve(
    mode: &TuningMode,
    neg_beta_elbo: f64,
    max_path_length: usize,
    caps: Option<Caps>,
) -> Result<AutotuneSettings, AutotuneError> {
    mode.validate()?;
    match *mode {
        TuningMode::Auto { xi } => compute_settings(neg_beta_elbo, xi, max_path_length, caps),
        TuningMode::Fixed {
            n_explore,
            n_buffer,
            n_grad,
        } => Ok(AutotuneSettings {
            xi: None,
            max_path_length,
            n_explore,
            n_buffer,
            n_grad,
            estimated_goal_count: None,
            caps: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(s: &AutotuneSettings) -> (usize, usize, usize) {
        (s.n_explore, s.n_buffer, s.n_grad)
    }

    #[test]
    fn direct_arithmetic() {
        let s = compute_settings(100.0, 1.0, 50, None).unwrap();
        assert_eq!(triple(&s), (100, 5000, 100));
        assert_eq!(s.estimated_goal_count, Some(100.0));
    }

    #[test]
    fn nonpositive_elbo_floors_at_one() {
        for e in [-3.0, 0.0, 0.5] {
            assert_eq!(triple(&compute_settings(e, 1.0, 50, None).unwrap()), (1, 50, 1));
        }
    }

    #[test]
    fn rounds_up() {
        // 1.142 · 2497.4 = 2852.03…
        let s = compute_settings(2497.4, 1.142, 50, None).unwrap();
        assert_eq!(triple(&s), (2853, 142_650, 2853));
        let s = compute_settings(2497.37, 1.142, 50, None).unwrap();
        assert_eq!(triple(&s), (2852, 142_600, 2852));
    }

    #[test]
    fn caps_bound_every_value() {
        let caps = Caps {
            n_explore: 300,
            n_buffer: 15_000,
        };
        let s = compute_settings(1e9, 2.0, 50, Some(caps)).unwrap();
        assert_eq!(triple(&s), (300, 15_000, 300));
        let tight = Caps {
            n_explore: 300,
            n_buffer: 1_000,
        };
        assert_eq!(triple(&compute_settings(1e9, 2.0, 50, Some(tight)).unwrap()), (20, 1_000, 20));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_settings(f64::NAN, 1.0, 50, None),
            Err(AutotuneError::NonFiniteElbo(_))
        ));
        assert!(compute_settings(f64::INFINITY, 1.0, 50, None).is_err());
        assert_eq!(compute_settings(1.0, 0.0, 50, None), Err(AutotuneError::Xi(0.0)));
        assert_eq!(compute_settings(1.0, 1.0, 0, None), Err(AutotuneError::PathLength));
    }

    #[test]
    fn resolve_modes() {
        let fixed = TuningMode::Fixed {
            n_explore: 100,
            n_buffer: 300_000,
            n_grad: 6000,
        };
        assert_eq!(triple(&resolve(&fixed, 12.0, 50, None).unwrap()), (100, 300_000, 6000));
        let limited_buffer = TuningMode::Fixed {
            n_explore: 6000,
            n_buffer: 3000,
            n_grad: 6000,
        };
        assert_eq!(triple(&resolve(&limited_buffer, 1e6, 50, None).unwrap()), (6000, 3000, 6000));
        assert_eq!(
            triple(&resolve(&TuningMode::Auto { xi: 1.0 }, 0.0, 50, None).unwrap()),
            (1, 50, 1)
        );
        let bad = TuningMode::Fixed {
            n_explore: 0,
            n_buffer: 1,
            n_grad: 1,
        };
        assert!(resolve(&bad, 1.0, 50, None).is_err());
    }
}
