//! Average gate fidelity of single-qubit unitaries and the infidelity of
//! two coherent error models: over/under-rotation and axis misalignment.
//!
//! Rotations use `exp(-i (theta/2) n.sigma)`. A quarter-period drive
//! written as `exp(-i (pi/4) X)` is therefore `x_rotation(pi/2)`.

use std::f64::consts::FRAC_PI_2;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::StabilityStats;

const UNITARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidelityError {
    #[error("matrix is not unitary (max |U^dag U - I| = {0:.3e})")]
    NotUnitary(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Row-major 2x2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub const IDENTITY: Mat2 = Mat2([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]);
pub const PAULI_X: Mat2 = Mat2([[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]);
pub const PAULI_Y: Mat2 = Mat2([[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]]);
pub const PAULI_Z: Mat2 = Mat2([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]);

impl Mat2 {
    pub fn dagger(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn scale(&self, k: Complex64) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]])
    }

    pub fn add(&self, other: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &other.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        worst
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, rhs: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleQubitUnitary(Mat2);

impl SingleQubitUnitary {
    pub fn new(matrix: Mat2) -> Result<Self, FidelityError> {
        if matrix.0.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FidelityError::NonFinite);
        }
        let dev = (matrix.dagger() * matrix).max_abs_diff(&IDENTITY);
        let det_dev = (matrix.det().norm() - 1.0).abs();
        if dev > UNITARY_TOL || det_dev > UNITARY_TOL {
            return Err(FidelityError::NotUnitary(dev.max(det_dev)));
        }
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    /// Multiplies by a global phase `e^{i alpha}`.
    pub fn with_global_phase(&self, alpha: f64) -> Self {
        Self(self.0.scale(Complex64::from_polar(1.0, alpha)))
    }
}

/// `(|Tr(U^dag V)|^2 + d) / (d (d + 1))` with d = 2.
pub fn avg_fidelity(u: &SingleQubitUnitary, v: &SingleQubitUnitary) -> f64 {
    let tr = (u.0.dagger() * v.0).trace();
    (tr.norm_sqr() + 2.0) / 6.0
}

/// Rotation by `theta` about the unit axis `(nx, ny, nz)`.
fn axis_rotation(theta: f64, n: [f64; 3]) -> SingleQubitUnitary {
    let (s, co) = (theta / 2.0).sin_cos();
    let ns = PAULI_X
        .scale(c(n[0], 0.0))
        .add(&PAULI_Y.scale(c(n[1], 0.0)))
        .add(&PAULI_Z.scale(c(n[2], 0.0)));
    SingleQubitUnitary(IDENTITY.scale(c(co, 0.0)).add(&ns.scale(c(0.0, -s))))
}

pub fn x_rotation(theta: f64) -> SingleQubitUnitary {
    axis_rotation(theta, [1.0, 0.0, 0.0])
}

/// Rotation by `theta` about `cos(phi) X + sin(phi) Y`.
pub fn xy_axis_rotation(theta: f64, phi: f64) -> SingleQubitUnitary {
    let (s, co) = phi.sin_cos();
    axis_rotation(theta, [co, s, 0.0])
}

/// Coherent error of a pi/2 pulse: fractional amplitude error and
/// drive-axis misalignment in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateErrorModel {
    pub epsilon: f64,
    pub phi: f64,
}

impl GateErrorModel {
    pub fn new(epsilon: f64, phi: f64) -> Self {
        Self { epsilon, phi }
    }

    /// Rotation-angle error of the pi/2 pulse.
    pub fn delta_theta(&self) -> f64 {
        FRAC_PI_2 * self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfidelityResult {
    pub exact: f64,
    pub small_angle: f64,
}

/// Leading constant in `|exact - small_angle| <= K angle^4` for the
/// amplitude model; the series is `dtheta^2/6 - dtheta^4/72 + ...`.
pub const AMP_REMAINDER_CONST: f64 = 1.0 / 30.0;
/// Same for the phase model, whose series is `phi^2/3 - 5 phi^4/72 + ...`,
/// so a 1/30 constant is too tight here.
pub const PHASE_REMAINDER_CONST: f64 = 5.0 / 72.0;

pub fn amp_error_infidelity(epsilon: f64) -> InfidelityResult {
    let dt = GateErrorModel::new(epsilon, 0.0).delta_theta();
    let s = (dt / 2.0).sin();
    InfidelityResult {
        exact: 2.0 / 3.0 * s * s,
        small_angle: dt * dt / 6.0,
    }
}

pub fn phase_error_infidelity(phi: f64) -> InfidelityResult {
    let c2 = (phi / 2.0).cos().powi(2);
    InfidelityResult {
        exact: 2.0 / 3.0 * (1.0 - c2 * c2),
        small_angle: phi * phi / 3.0,
    }
}

/// Takes the measured standard deviations as coherent error magnitudes.
pub fn infidelity_from_stats(stats: &StabilityStats) -> (InfidelityResult, InfidelityResult) {
    (
        amp_error_infidelity(stats.amp_std_pct / 100.0),
        phase_error_infidelity(stats.phase_std_deg.to_radians()),
    )
}
