/// Weak Wolfe line search constants and limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub c1: f64,
    pub c2: f64,
    pub max_bisections: usize,
    pub max_expansions: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { c1: 1e-4, c2: 0.5, max_bisections: 50, max_expansions: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchOutcome {
    /// Armijo and weak Wolfe both hold at `t`.
    Wolfe { t: f64 },
    /// Bracketing ran out; `t` satisfies Armijo only.
    ArmijoOnly { t: f64 },
    Failed,
}

impl LineSearchOutcome {
    pub fn step(&self) -> Option<f64> {
        match *self {
            Self::Wolfe { t } | Self::ArmijoOnly { t } => Some(t),
            Self::Failed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub outcome: LineSearchOutcome,
    pub evaluations: usize,
}

/// Expansion-then-bisection weak Wolfe search on `phi(t)`.
///
/// `eval(t)` returns `(phi(t), phi'(t))`, or `None` where `phi` is undefined
/// (treated as `+inf`). `phi0` and `dphi0 < 0` are the values at `t = 0`.
pub fn weak_wolfe<F>(phi0: f64, dphi0: f64, params: &LineSearchParams, mut eval: F) -> LineSearchResult
where
    F: FnMut(f64) -> Option<(f64, f64)>,
{
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut t = 1.0;
    let (mut bisections, mut expansions, mut evaluations) = (0, 0, 0);
    if !(dphi0 < 0.0) {
        return LineSearchResult { outcome: LineSearchOutcome::Failed, evaluations };
    }
    loop {
        evaluations += 1;
        let armijo_ok = match eval(t) {
            Some((phi, dphi)) if phi.is_finite() && phi <= phi0 + params.c1 * t * dphi0 => {
                if dphi >= params.c2 * dphi0 {
                    return LineSearchResult { outcome: LineSearchOutcome::Wolfe { t }, evaluations };
                }
                true
            }
            _ => false,
        };
        if armijo_ok {
            lo = t;
        } else {
            hi = t;
        }
        if hi.is_finite() {
            if bisections >= params.max_bisections {
                break;
            }
            bisections += 1;
            t = 0.5 * (lo + hi);
        } else {
            if expansions >= params.max_expansions {
                break;
            }
            expansions += 1;
            t = 2.0 * lo;
        }
    }
    let outcome = if lo > 0.0 { LineSearchOutcome::ArmijoOnly { t: lo } } else { LineSearchOutcome::Failed };
    LineSearchResult { outcome, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_accepts_unit_step() {
        // phi(t) = (t - 1)^2, minimizer at 1
        let r = weak_wolfe(1.0, -2.0, &LineSearchParams::default(), |t| Some(((t - 1.0) * (t - 1.0), 2.0 * (t - 1.0))));
        assert_eq!(r.outcome, LineSearchOutcome::Wolfe { t: 1.0 });
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn kink_accepted() {
        // phi(t) = |1 - t| with a kink at the minimizer; start beyond it with a long step
        let r = weak_wolfe(1.0, -4.0, &LineSearchParams::default(), |t| {
            let t = 4.0 * t;
            Some(((1.0 - t).abs(), if t < 1.0 { -4.0 } else { 4.0 }))
        });
        let t = 4.0 * r.outcome.step().unwrap();
        assert!((t - 1.0).abs() <= 0.5, "accepted {t}");
    }

    #[test]
    fn undefined_region_rejected() {
        let r = weak_wolfe(0.0, -1.0, &LineSearchParams::default(), |t| if t > 0.3 { None } else { Some((-t, -1.0)) });
        let t = r.outcome.step().unwrap();
        assert!(t <= 0.3);
    }

    #[test]
    fn non_descent_fails() {
        let r = weak_wolfe(0.0, 1.0, &LineSearchParams::default(), |t| Some((t, 1.0)));
        assert_eq!(r.outcome, LineSearchOutcome::Failed);
        let r = weak_wolfe(0.0, -1.0, &LineSearchParams::default(), |_| None);
        assert_eq!(r.outcome, LineSearchOutcome::Failed);
    }
}
