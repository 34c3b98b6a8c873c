//! The scalar quartic least-squares problem
//! `E(theta) = 1/2 ((y1 - theta^2)^2 + (y2 - theta)^2)`.
//!
//! Small enough to analyze in closed form: its stationary points are the
//! roots of a cubic, and the RE constant of a minimum follows from the sign
//! of the expanded second derivative
//! `H(alpha) = (4 theta^2 + 1) - 2 (1 + alpha) (y1 - theta^2)`.

use crate::engine::{ExpandedTarget, LsProblem};
use crate::error::{Error, Result};

const IMAG_CUTOFF: f64 = 1e-12;
const DEGENERATE_CURVATURE: f64 = 1e-10;
const STATIONARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticInstance {
    pub y1: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub theta: f64,
    pub energy: f64,
    /// `f64::INFINITY` when expansion never destroys the minimum.
    pub re_constant: f64,
    pub kind: CriticalKind,
}

impl QuarticInstance {
    pub fn new(y1: f64, y2: f64) -> Self {
        Self { y1, y2 }
    }

    pub fn energy(&self, theta: f64) -> f64 {
        let a = self.y1 - theta * theta;
        let b = self.y2 - theta;
        0.5 * (a * a + b * b)
    }

    pub fn gradient(&self, theta: f64) -> f64 {
        2.0 * theta.powi(3) + (1.0 - 2.0 * self.y1) * theta - self.y2
    }

    pub fn curvature(&self, theta: f64) -> f64 {
        6.0 * theta * theta + 1.0 - 2.0 * self.y1
    }

    /// Instance whose targets are expanded along the residual at `theta_star`.
    pub fn expanded(&self, theta_star: f64, alpha: f64) -> QuarticInstance {
        QuarticInstance {
            y1: self.y1 + alpha * (self.y1 - theta_star * theta_star),
            y2: self.y2 + alpha * (self.y2 - theta_star),
        }
    }

    /// `H(alpha)`: second derivative at `theta_star` of the objective expanded
    /// around `theta_star`.
    pub fn expanded_curvature(&self, theta_star: f64, alpha: f64) -> f64 {
        let t2 = theta_star * theta_star;
        (4.0 * t2 + 1.0) - 2.0 * (1.0 + alpha) * (self.y1 - t2)
    }

    /// Real stationary points, ascending, deduplicated.
    pub fn stationary_points(&self) -> Vec<f64> {
        // theta^3 + p theta + q = 0
        let p = 0.5 * (1.0 - 2.0 * self.y1);
        let q = -0.5 * self.y2;
        let disc = 4.0 * p.powi(3) + 27.0 * q * q;
        let mut roots = if p.abs() < IMAG_CUTOFF && q.abs() < IMAG_CUTOFF {
            vec![0.0]
        } else if disc < 0.0 {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = ((3.0 * q) / (p * m)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
                .collect()
        } else {
            let s = (disc / 108.0).max(0.0).sqrt();
            let u = (-0.5 * q + s).cbrt();
            let v = (-0.5 * q - s).cbrt();
            let mut r = vec![u + v];
            if disc.abs() <= IMAG_CUTOFF * (1.0 + p.abs().powi(3)) {
                // double root
                r.push(-0.5 * (u + v));
            }
            r
        };
        for r in roots.iter_mut() {
            for _ in 0..3 {
                let c = self.curvature(*r);
                if c.abs() > DEGENERATE_CURVATURE {
                    *r -= self.gradient(*r) / c;
                }
            }
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        roots
    }

    pub fn critical_points(&self) -> Vec<CriticalPoint> {
        self.stationary_points()
            .into_iter()
            .map(|theta| {
                let c = self.curvature(theta);
                let kind = if c > DEGENERATE_CURVATURE {
                    CriticalKind::Minimum
                } else if c < -DEGENERATE_CURVATURE {
                    CriticalKind::Maximum
                } else {
                    CriticalKind::Degenerate
                };
                CriticalPoint {
                    theta,
                    energy: self.energy(theta),
                    re_constant: re_constant_unchecked(self, theta),
                    kind,
                }
            })
            .collect()
    }
}

/// Local minima sorted ascending in `theta`; one or two entries.
pub fn find_local_minima(inst: &QuarticInstance) -> Vec<CriticalPoint> {
    inst.critical_points()
        .into_iter()
        .filter(|c| c.kind == CriticalKind::Minimum)
        .collect()
}

/// Largest `alpha >= 0` keeping `theta_star` a minimum of the expanded
/// objective, or infinity.
pub fn re_constant(inst: &QuarticInstance, theta_star: f64) -> Result<f64> {
    let g = inst.gradient(theta_star);
    if g.abs() > STATIONARY_TOL {
        return Err(Error::InvalidParameter(format!(
            "theta = {theta_star} is not stationary (dE/dtheta = {g:e})"
        )));
    }
    Ok(re_constant_unchecked(inst, theta_star))
}

fn re_constant_unchecked(inst: &QuarticInstance, theta: f64) -> f64 {
    let t2 = theta * theta;
    let residual = inst.y1 - t2;
    if residual <= 0.0 {
        f64::INFINITY
    } else {
        ((4.0 * t2 + 1.0) / (2.0 * residual) - 1.0).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The minimum with the larger RE constant has the lower energy.
    Holds,
    /// Equal constants and equal energies.
    HoldsByTie,
    Fails,
    /// Equal constants but different energies; the ordering says nothing here.
    CoincidentConstants,
    /// Not exactly two local minima.
    NotApplicable,
}

impl Verdict {
    pub fn holds(self) -> bool {
        matches!(self, Verdict::Holds | Verdict::HoldsByTie)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::HoldsByTie => "holds-tie",
            Verdict::Fails => "fails",
            Verdict::CoincidentConstants => "coincident-constants",
            Verdict::NotApplicable => "not-applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheck {
    pub minima: Vec<CriticalPoint>,
    pub verdict: Verdict,
}

/// Checks that the larger RE constant picks the global minimum.
pub fn check_theorem1(inst: &QuarticInstance) -> TheoremCheck {
    let minima = find_local_minima(inst);
    let verdict = match minima.as_slice() {
        [a, b] => {
            let same_alpha = close(a.re_constant, b.re_constant, 1e-9);
            let same_energy = close(a.energy, b.energy, 1e-12);
            match (same_alpha, same_energy) {
                (true, true) => Verdict::HoldsByTie,
                (true, false) => Verdict::CoincidentConstants,
                (false, _) => {
                    let (deep, shallow) = if a.re_constant > b.re_constant {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    if deep.energy < shallow.energy {
                        Verdict::Holds
                    } else {
                        Verdict::Fails
                    }
                }
            }
        }
        _ => Verdict::NotApplicable,
    };
    TheoremCheck { minima, verdict }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// The quartic as an [`LsProblem`] with `y = (y1, y2)`, `f(theta) = (theta^2, theta)`.
///
/// A sweep is one Gauss-Newton step on the expanded target, halved until it
/// does not increase the expanded objective.
#[derive(Debug, Clone, Copy)]
pub struct QuarticProblem {
    pub instance: QuarticInstance,
}

impl LsProblem for QuarticProblem {
    type Params = f64;

    fn target(&self, _theta: &f64) -> Vec<f64> {
        vec![self.instance.y1, self.instance.y2]
    }

    fn predict(&self, theta: &f64) -> Vec<f64> {
        vec![theta * theta, *theta]
    }

    fn inner_update(&self, theta: &f64, target: &ExpandedTarget<'_>) -> Result<f64> {
        let local = QuarticInstance::new(target.y_hat[0], target.y_hat[1]);
        let theta = *theta;
        let start = local.energy(theta);
        // J^T J = 4 theta^2 + 1 never vanishes
        let mut step = -local.gradient(theta) / (4.0 * theta * theta + 1.0);
        for _ in 0..60 {
            if local.energy(theta + step) <= start {
                return Ok(theta + step);
            }
            step *= 0.5;
        }
        Ok(theta)
    }

    fn has_converged(&self, prev: &f64, next: &f64) -> bool {
        (prev - next).abs() < 1e-14
    }
}
