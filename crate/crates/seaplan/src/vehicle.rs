//! Vehicle models.
//!
//! Holds the six degree-of-freedom rigid-body dynamics used as a fidelity
//! oracle, the linear discrete kinematics the planner optimizes over, and
//! the heading helpers shared by the planner and the sampling baseline.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold on `|cos θ|` below which the angular-rate transform is singular.
pub const SINGULAR_COS_THETA: f64 = 1e-9;

/// Margin used when strict inequalities are stored as closed ones.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("singular orientation: |cos theta| = {cos_theta:e}")]
    SingularOrientation { cos_theta: f64 },
    #[error("invalid vehicle parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("heading is undefined at zero horizontal speed")]
    UndefinedHeading,
}

/// Physical and operational constants of one underwater vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Rigid-body mass (kg).
    pub mass: f64,
    /// Rotational inertias `J_x, J_y, J_z` (kg m^2).
    pub inertia: [f64; 3],
    /// Added-mass coefficients for surge, sway and heave.
    pub added_mass: [f64; 3],
    /// Linear drag coefficients for surge, sway and heave.
    pub linear_drag: [f64; 3],
    /// Angular drag coefficients for roll, pitch and yaw.
    pub angular_drag: [f64; 3],
    /// Maximum speed (m/s).
    pub v_max: f64,
    /// Maximum horizontal speed (m/s).
    pub v_hmax: f64,
    /// Maximum heading rate (rad/s).
    pub heading_rate_max: f64,
    /// Heading-band hyperparameter; the band half-width is `alpha / v_hmax`.
    pub alpha: f64,
    /// Constant restoring term (buoyancy and gravity) in body axes.
    pub restoring: [f64; 6],
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 30.0,
            inertia: [3.5, 3.5, 3.5],
            added_mass: [-1.0, -1.0, -1.0],
            linear_drag: [-5.0, -5.0, -5.0],
            angular_drag: [-1.0, -1.0, -1.0],
            v_max: 2.5,
            v_hmax: 2.0,
            heading_rate_max: 0.1,
            alpha: 0.2,
            restoring: [0.0; 6],
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let bad = |field, reason: &str| {
            Err(VehicleError::InvalidParameter {
                field,
                reason: reason.to_string(),
            })
        };
        let all = [self.mass, self.v_max, self.v_hmax, self.alpha, self.heading_rate_max]
            .into_iter()
            .chain(self.inertia)
            .chain(self.added_mass)
            .chain(self.linear_drag)
            .chain(self.angular_drag)
            .chain(self.restoring);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("vehicle", "all parameters must be finite");
        }
        if self.mass <= 0.0 {
            return bad("mass", "must be positive");
        }
        if self.inertia.iter().any(|&j| j <= 0.0) {
            return bad("inertia", "all entries must be positive");
        }
        if self.added_mass.iter().any(|&g| self.mass - g <= 0.0) {
            return bad("added_mass", "mass minus added mass must be positive");
        }
        if self.v_hmax <= 0.0 || self.v_hmax > self.v_max {
            return bad("v_hmax", "must satisfy 0 < v_hmax <= v_max");
        }
        if self.alpha <= 0.0 {
            return bad("alpha", "must be positive");
        }
        if self.heading_rate_max <= 0.0 {
            return bad("heading_rate_max", "must be positive");
        }
        Ok(())
    }

    /// Half-width of the relative heading band, `alpha / v_hmax`.
    pub fn band_ratio(&self) -> f64 {
        self.alpha / self.v_hmax
    }
}

/// Pose `eta = (x, y, z, phi, theta, psi)` and body velocity
/// `nu = (v_x, v_y, v_z, w_x, w_y, w_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState {
    pub eta: Vector6<f64>,
    pub nu: Vector6<f64>,
}

impl FullState {
    pub fn new(eta: Vector6<f64>, nu: Vector6<f64>) -> Self {
        Self { eta, nu }
    }

    pub fn to_vector(&self) -> SVector<f64, 12> {
        SVector::<f64, 12>::from_iterator(self.eta.iter().chain(self.nu.iter()).copied())
    }

    pub fn from_vector(v: &SVector<f64, 12>) -> Self {
        Self {
            eta: v.fixed_rows::<6>(0).into_owned(),
            nu: v.fixed_rows::<6>(6).into_owned(),
        }
    }
}

/// Position and global velocity of one vehicle in the planning model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl LinearState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self { position, velocity }
    }

    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros())
    }
}

/// Planar position of the surface vehicle and its commanded velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsvState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotations {
    pub rx: Matrix3<f64>,
    pub ry: Matrix3<f64>,
    pub rz: Matrix3<f64>,
    /// Body-to-earth rotation `R_z R_y R_x`.
    pub j1: Matrix3<f64>,
    /// Body angular rate to Euler-angle rate transform.
    pub j2: Matrix3<f64>,
}

pub fn rotation_and_transform_matrices(
    phi: f64,
    theta: f64,
    psi: f64,
) -> Result<Rotations, VehicleError> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    if ct.abs() < SINGULAR_COS_THETA {
        return Err(VehicleError::SingularOrientation { cos_theta: ct });
    }
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cf, -sf, 0.0, sf, cf);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let tt = st / ct;
    let j2 = Matrix3::new(1.0, sf * tt, cf * tt, 0.0, cf, -sf, 0.0, sf / ct, cf / ct);
    Ok(Rotations {
        rx,
        ry,
        rz,
        j1: rz * ry * rx,
        j2,
    })
}

pub fn mass_matrix(p: &VehicleParams) -> Matrix6<f64> {
    let m = p.mass;
    let [gx, gy, gz] = p.added_mass;
    let [jx, jy, jz] = p.inertia;
    Matrix6::from_diagonal(&Vector6::new(m - gx, m - gy, m - gz, jx, jy, jz))
}

pub fn damping_matrix(p: &VehicleParams) -> Matrix6<f64> {
    let [a, b, c] = p.linear_drag;
    let [d, e, f] = p.angular_drag;
    -Matrix6::from_diagonal(&Vector6::new(a, b, c, d, e, f))
}

fn skew_like(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    // [[0, c, -b], [-c, 0, a], [b, -a, 0]]
    Matrix3::new(0.0, c, -b, -c, 0.0, a, b, -a, 0.0)
}

/// Rigid-body plus added-mass Coriolis matrix `C(nu)`.
pub fn coriolis_matrix(nu: &Vector6<f64>, p: &VehicleParams) -> Matrix6<f64> {
    let m = p.mass;
    let [jx, jy, jz] = p.inertia;
    let [ax, ay, az] = p.added_mass;
    let [gx, gy, gz] = p.angular_drag;
    let (vx, vy, vz) = (nu[0], nu[1], nu[2]);
    let (wx, wy, wz) = (nu[3], nu[4], nu[5]);

    let cr1 = skew_like(vx, vy, vz) * m;
    let cr2 = skew_like(jx * wx, jy * wy, jz * wz) * m;
    let ca1 = skew_like(ax * vx, ay * vy, az * vz);
    let ca2 = skew_like(gx * wx, gy * wy, gz * wz);

    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cr1 + ca1));
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cr1 + ca1));
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(cr2 + ca2));
    c
}

/// Time derivative `(eta_dot, nu_dot)` of the six degree-of-freedom model.
pub fn full_dynamics_derivative(
    s: &FullState,
    u: &Vector6<f64>,
    d: &Vector6<f64>,
    p: &VehicleParams,
) -> Result<SVector<f64, 12>, VehicleError> {
    let rot = rotation_and_transform_matrices(s.eta[3], s.eta[4], s.eta[5])?;
    let lin = rot.j1 * s.nu.fixed_rows::<3>(0);
    let ang = rot.j2 * s.nu.fixed_rows::<3>(3);

    let m = mass_matrix(p);
    let m_inv = Matrix6::from_diagonal(&m.diagonal().map(|x| 1.0 / x));
    let e = m_inv * (coriolis_matrix(&s.nu, p) + damping_matrix(p));
    let g = Vector6::from_column_slice(&p.restoring);
    let nu_dot = -(e * s.nu) - g + u + d;

    let mut out = SVector::<f64, 12>::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&lin);
    out.fixed_rows_mut::<3>(3).copy_from(&ang);
    out.fixed_rows_mut::<6>(6).copy_from(&nu_dot);
    Ok(out)
}

/// One classical fourth-order Runge-Kutta step of length `h`.
pub fn full_dynamics_step(
    s: &FullState,
    u: &Vector6<f64>,
    d: &Vector6<f64>,
    p: &VehicleParams,
    h: f64,
) -> Result<FullState, VehicleError> {
    let x = s.to_vector();
    let f = |y: &SVector<f64, 12>| full_dynamics_derivative(&FullState::from_vector(y), u, d, p);
    let k1 = f(&x)?;
    let k2 = f(&(x + k1 * (h / 2.0)))?;
    let k3 = f(&(x + k2 * (h / 2.0)))?;
    let k4 = f(&(x + k3 * h))?;
    Ok(FullState::from_vector(
        &(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)),
    ))
}

/// Reduced drag matrix `diag(g_vx/(m - a_x), g_vz/(m - a_z), g_wz/J_z)`.
pub fn drag_matrix_e(p: &VehicleParams) -> Result<Matrix3<f64>, VehicleError> {
    let den_x = p.mass - p.added_mass[0];
    let den_z = p.mass - p.added_mass[2];
    let jz = p.inertia[2];
    for (field, den) in [("added_mass", den_x), ("added_mass", den_z), ("inertia", jz)] {
        if den <= 0.0 {
            return Err(VehicleError::InvalidParameter {
                field,
                reason: format!("drag denominator {den} is not positive"),
            });
        }
    }
    Ok(Matrix3::from_diagonal(&Vector3::new(
        p.linear_drag[0] / den_x,
        p.linear_drag[2] / den_z,
        p.angular_drag[2] / jz,
    )))
}

/// Drag rates applied to the global velocity `(V_x, V_y, V_z)`:
/// surge drag on both horizontal axes, heave drag vertically.
pub fn planner_drag_block(p: &VehicleParams) -> Result<Matrix3<f64>, VehicleError> {
    let e = drag_matrix_e(p)?;
    Ok(Matrix3::from_diagonal(&Vector3::new(e[(0, 0)], e[(0, 0)], e[(1, 1)])))
}

/// Per-step velocity transition `exp(delta * E'')`.
///
/// The drag rates are negative for a damped vehicle, so the entries lie in
/// `(0, 1]` for any step length.
pub fn velocity_transition(p: &VehicleParams, delta: f64) -> Result<Matrix3<f64>, VehicleError> {
    let e = planner_drag_block(p)?;
    Ok(Matrix3::from_diagonal(&e.diagonal().map(|r| (r * delta).exp())))
}

/// Per-vehicle discrete model matrices `(A_n, B)` with `X = (P, V)`.
pub fn discrete_matrices(
    p: &VehicleParams,
    delta: f64,
) -> Result<(nalgebra::Matrix6<f64>, nalgebra::Matrix6x3<f64>), VehicleError> {
    let phi = velocity_transition(p, delta)?;
    let mut a = Matrix6::identity();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * delta));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi);
    let mut b = nalgebra::Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    Ok((a, b))
}

/// `P+ = P + delta V + noise`, `V+ = Phi V + U`.
pub fn discrete_step(
    x: &LinearState,
    u: &Vector3<f64>,
    p: &VehicleParams,
    delta: f64,
    noise: &Vector3<f64>,
) -> Result<LinearState, VehicleError> {
    let phi = velocity_transition(p, delta)?;
    Ok(LinearState {
        position: x.position + x.velocity * delta + noise,
        velocity: phi * x.velocity + u,
    })
}

/// Surge speed and heading recovered from a global velocity.
pub fn recover_heading_surge(v: &Vector3<f64>) -> Result<(f64, f64), VehicleError> {
    let surge = v.x.hypot(v.y);
    if surge == 0.0 {
        return Err(VehicleError::UndefinedHeading);
    }
    Ok((surge, v.y.atan2(v.x)))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Heading rate between consecutive velocities, wrapped to `(-pi/delta, pi/delta]`.
pub fn heading_change(
    v_prev: &Vector3<f64>,
    v_cur: &Vector3<f64>,
    delta: f64,
) -> Result<f64, VehicleError> {
    let (_, a) = recover_heading_surge(v_prev)?;
    let (_, b) = recover_heading_surge(v_cur)?;
    Ok(wrap_angle(b - a) / delta)
}

/// One linear row `coef_prev * V[k-1]_axis + coef_cur * V[k]_axis <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRow {
    /// 0 for the x axis, 1 for the y axis.
    pub axis: usize,
    pub coef_prev: f64,
    pub coef_cur: f64,
    pub rhs: f64,
}

/// Heading-band rows on `(V_x[k], V_y[k])` relative to `V[k-1]`.
///
/// Each horizontal component must stay between `(1 - a) V[k-1]` and
/// `(1 + a) V[k-1]` with `a = alpha / v_hmax`. The rows are oriented by the
/// sign of the reference component so the band is nonempty; a zero
/// reference component is treated as positive.
pub fn heading_rate_linear_constraints(v_ref_prev: &Vector2<f64>, p: &VehicleParams) -> [BandRow; 4] {
    let a = p.alpha / p.v_hmax;
    let mut rows = [BandRow {
        axis: 0,
        coef_prev: 0.0,
        coef_cur: 0.0,
        rhs: 0.0,
    }; 4];
    for axis in 0..2 {
        let s = if v_ref_prev[axis] < 0.0 { -1.0 } else { 1.0 };
        // s (V[k] - (1 + a) V[k-1]) <= -margin
        rows[2 * axis] = BandRow {
            axis,
            coef_prev: -s * (1.0 + a),
            coef_cur: s,
            rhs: -STRICT_MARGIN,
        };
        // s (V[k] - (1 - a) V[k-1]) >= margin
        rows[2 * axis + 1] = BandRow {
            axis,
            coef_prev: s * (1.0 - a),
            coef_cur: -s,
            rhs: -STRICT_MARGIN,
        };
    }
    rows
}

/// Largest per-step heading change (rad) between two horizontal velocities
/// that satisfy the band rows, `2 atan(sqrt(q)) - pi/2` with
/// `q = (1 + a) / (1 - a)`. Infinite when `a >= 1`.
pub fn heading_band_bound(p: &VehicleParams) -> f64 {
    let a = p.band_ratio();
    if a >= 1.0 {
        return f64::INFINITY;
    }
    let q = (1.0 + a) / (1.0 - a);
    2.0 * q.sqrt().atan() - PI / 2.0
}

/// `P+ = P + delta U`; returns the new state and the heading of `U`.
pub fn usv_step(s: &UsvState, delta: f64) -> (UsvState, f64) {
    let next = UsvState {
        position: s.position + s.velocity * delta,
        velocity: s.velocity,
    };
    (next, s.velocity.y.atan2(s.velocity.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    #[test]
    fn identity_orientation() {
        let r = rotation_and_transform_matrices(0.0, 0.0, 0.0).unwrap();
        for m in [r.rx, r.ry, r.rz, r.j1, r.j2] {
            assert!(max_abs(&(m - Matrix3::identity())) < EPS);
        }
    }

    #[test]
    fn j1_matches_elementwise_expansion() {
        let (f, t, p) = (0.3_f64, -0.2_f64, 1.1_f64);
        let (sf, cf, st, ct, sp, cp) = (f.sin(), f.cos(), t.sin(), t.cos(), p.sin(), p.cos());
        let expected = Matrix3::new(
            ct * cp,
            sf * st * cp - cf * sp,
            sf * sp + cf * st * cp,
            ct * sp,
            sf * st * sp + cf * cp,
            cf * st * sp - sf * cp,
            -st,
            sf * ct,
            cf * ct,
        );
        let r = rotation_and_transform_matrices(f, t, p).unwrap();
        assert!(max_abs(&(r.j1 - expected)) < EPS);
    }

    #[test]
    fn singular_pitch_is_rejected() {
        let err = rotation_and_transform_matrices(0.1, std::f64::consts::FRAC_PI_2, 0.0);
        assert!(matches!(err, Err(VehicleError::SingularOrientation { .. })));
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let s = FullState::new(Vector6::new(1.0, 2.0, -3.0, 0.1, 0.2, 0.3), Vector6::zeros());
        let d = full_dynamics_derivative(&s, &Vector6::zeros(), &Vector6::zeros(), &VehicleParams::default())
            .unwrap();
        assert!(d.norm() < EPS);
    }

    #[test]
    fn pure_surge_decays_with_negative_drag() {
        let p = VehicleParams::default();
        let s = FullState::new(Vector6::zeros(), Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let d = full_dynamics_derivative(&s, &Vector6::zeros(), &Vector6::zeros(), &p).unwrap();
        let expected = p.linear_drag[0] * 1.0 / (p.mass - p.added_mass[0]);
        assert!((d[6] - expected).abs() < EPS);
        assert!(d[6] < 0.0);
        assert!((d[0] - 1.0).abs() < EPS);
    }

    #[test]
    fn rk4_preserves_rest() {
        let s = FullState::new(Vector6::new(5.0, 0.0, -10.0, 0.0, 0.0, 0.4), Vector6::zeros());
        let n = full_dynamics_step(&s, &Vector6::zeros(), &Vector6::zeros(), &VehicleParams::default(), 1.0)
            .unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn rk4_surge_without_drag_translates() {
        let p = VehicleParams {
            linear_drag: [0.0; 3],
            angular_drag: [0.0; 3],
            ..VehicleParams::default()
        };
        let s = FullState::new(Vector6::zeros(), Vector6::new(1.5, 0.0, 0.0, 0.0, 0.0, 0.0));
        let n = full_dynamics_step(&s, &Vector6::zeros(), &Vector6::zeros(), &p, 2.0).unwrap();
        assert!((n.eta[0] - 3.0).abs() < EPS);
        assert!(n.eta[5].abs() < EPS);
    }

    #[test]
    fn rk4_error_scales_with_fourth_order() {
        let p = VehicleParams::default();
        let s = FullState::new(
            Vector6::new(0.0, 0.0, -20.0, 0.05, -0.1, 0.3),
            Vector6::new(1.2, 0.1, -0.2, 0.02, -0.01, 0.05),
        );
        let u = Vector6::new(0.1, 0.0, 0.05, 0.0, 0.0, 0.01);
        let zero = Vector6::zeros();
        let integrate = |h: f64, steps: usize| {
            let mut x = s;
            for _ in 0..steps {
                x = full_dynamics_step(&x, &u, &zero, &p, h).unwrap();
            }
            x.to_vector()
        };
        let h = 0.4;
        let reference = integrate(h / 8.0, 8);
        let e1 = (integrate(h, 1) - reference).norm();
        let e2 = (integrate(h / 2.0, 2) - reference).norm();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn drag_matrix_direct_substitution() {
        let zero = VehicleParams {
            linear_drag: [0.0; 3],
            angular_drag: [0.0; 3],
            ..VehicleParams::default()
        };
        assert!(max_abs(&drag_matrix_e(&zero).unwrap()) == 0.0);

        let p = VehicleParams {
            mass: 100.0,
            added_mass: [10.0, 10.0, 10.0],
            linear_drag: [9.0, 0.0, 0.0],
            ..VehicleParams::default()
        };
        assert!((drag_matrix_e(&p).unwrap()[(0, 0)] - 0.1).abs() < EPS);
    }

    #[test]
    fn drag_matrix_rejects_nonpositive_denominator() {
        let p = VehicleParams {
            mass: 1.0,
            added_mass: [2.0, 0.0, 0.0],
            ..VehicleParams::default()
        };
        assert!(drag_matrix_e(&p).is_err());
    }

    #[test]
    fn ballistic_step_without_drag() {
        let p = VehicleParams {
            linear_drag: [0.0; 3],
            ..VehicleParams::default()
        };
        let x = LinearState::new(Vector3::new(1.0, 2.0, -3.0), Vector3::new(0.5, -0.25, 0.1));
        let n = discrete_step(&x, &Vector3::zeros(), &p, 100.0, &Vector3::zeros()).unwrap();
        assert!((n.position - Vector3::new(51.0, -23.0, 7.0)).norm() < EPS);
        assert!((n.velocity - x.velocity).norm() < EPS);
    }

    #[test]
    fn discrete_step_matches_matrices() {
        let p = VehicleParams::default();
        let delta = 100.0;
        let (a, b) = discrete_matrices(&p, delta).unwrap();
        let x = LinearState::new(Vector3::new(1.0, 2.0, -3.0), Vector3::new(0.5, -0.25, 0.1));
        let u = Vector3::new(0.3, 0.2, -0.1);
        let n = discrete_step(&x, &u, &p, delta, &Vector3::zeros()).unwrap();
        let xv = Vector6::new(1.0, 2.0, -3.0, 0.5, -0.25, 0.1);
        let m = a * xv + b * u;
        assert!((m.fixed_rows::<3>(0) - n.position).norm() < EPS);
        assert!((m.fixed_rows::<3>(3) - n.velocity).norm() < EPS);
        assert_eq!(a[(0, 3)], delta);
    }

    #[test]
    fn heading_surge_quadrants() {
        let (s, h) = recover_heading_surge(&Vector3::new(1.0, 0.0, 7.0)).unwrap();
        assert!((s - 1.0).abs() < EPS && h.abs() < EPS);
        let (s, h) = recover_heading_surge(&Vector3::new(0.0, 2.0, 0.0)).unwrap();
        assert!((s - 2.0).abs() < EPS && (h - PI / 2.0).abs() < EPS);
        let (s, h) = recover_heading_surge(&Vector3::new(-1.0, -1.0, 0.0)).unwrap();
        assert!((s - 2f64.sqrt()).abs() < EPS && (h + 3.0 * PI / 4.0).abs() < EPS);
        assert!(recover_heading_surge(&Vector3::new(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn heading_change_examples() {
        let v = Vector3::new(0.3, 0.4, 0.0);
        assert_eq!(heading_change(&v, &v, 10.0).unwrap(), 0.0);
        let r = heading_change(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 1.0, 0.0), 1.0).unwrap();
        assert!((r - PI / 2.0).abs() < EPS);
        let a = Vector3::new(3.1_f64.cos(), 3.1_f64.sin(), 0.0);
        let b = Vector3::new((-3.1_f64).cos(), (-3.1_f64).sin(), 0.0);
        let r = heading_change(&a, &b, 1.0).unwrap();
        assert!((r - (2.0 * PI - 6.2)).abs() < 1e-9, "{r}");
    }

    fn band_holds(rows: &[BandRow; 4], prev: &Vector2<f64>, cur: &Vector2<f64>) -> bool {
        rows.iter()
            .all(|r| r.coef_prev * prev[r.axis] + r.coef_cur * cur[r.axis] <= r.rhs)
    }

    #[test]
    fn band_rows_direct_substitution() {
        let p = VehicleParams {
            alpha: 0.2,
            v_hmax: 2.0,
            ..VehicleParams::default()
        };
        let prev = Vector2::new(1.0, 0.5);
        let rows = heading_rate_linear_constraints(&prev, &p);
        assert!(band_holds(&rows, &prev, &Vector2::new(1.05, 0.5)));
        assert!(band_holds(&rows, &prev, &Vector2::new(0.91, 0.5)));
        assert!(!band_holds(&rows, &prev, &Vector2::new(1.11, 0.5)));
        assert!(!band_holds(&rows, &prev, &Vector2::new(0.89, 0.5)));
        assert!(!band_holds(&rows, &prev, &Vector2::new(1.0, 0.56)));

        // A zero reference component admits no value under the strict rows.
        let flat = Vector2::new(1.0, 0.0);
        let rows = heading_rate_linear_constraints(&flat, &p);
        assert!(!band_holds(&rows, &flat, &Vector2::new(1.0, 0.0)));

        let neg = Vector2::new(-1.0, 0.5);
        let rows = heading_rate_linear_constraints(&neg, &p);
        assert!(band_holds(&rows, &neg, &Vector2::new(-1.05, 0.52)));
        assert!(!band_holds(&rows, &neg, &Vector2::new(-0.85, 0.5)));
    }

    #[test]
    fn band_heading_change_is_bounded() {
        use rand::{Rng, SeedableRng};
        let p = VehicleParams::default();
        let bound = heading_band_bound(&p);
        let a = p.band_ratio();
        // Grid oracle: max over t of atan(q t) - atan(t).
        let q = (1.0 + a) / (1.0 - a);
        let grid = (1..200_000)
            .map(|i| i as f64 * 1e-4)
            .map(|t| (q * t).atan() - t.atan())
            .fold(0.0_f64, f64::max);
        assert!((bound - grid).abs() < 1e-8, "{bound} vs {grid}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0_f64;
        let mut accepted = 0;
        while accepted < 10_000 {
            let prev = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let cur = Vector2::new(
                prev.x * rng.random_range(1.0 - a..1.0 + a),
                prev.y * rng.random_range(1.0 - a..1.0 + a),
            );
            let rows = heading_rate_linear_constraints(&prev, &p);
            if !band_holds(&rows, &prev, &cur) {
                continue;
            }
            accepted += 1;
            let d = heading_change(&Vector3::new(prev.x, prev.y, 0.0), &Vector3::new(cur.x, cur.y, 0.0), 1.0)
                .unwrap()
                .abs();
            worst = worst.max(d);
        }
        assert!(worst <= bound, "empirical {worst} above {bound}");
        assert!(worst > 0.9 * bound, "empirical {worst} far below {bound}");
    }

    #[test]
    fn zero_alpha_band_is_degenerate() {
        let p = VehicleParams {
            alpha: 0.0,
            ..VehicleParams::default()
        };
        let prev = Vector2::new(1.0, -2.0);
        let rows = heading_rate_linear_constraints(&prev, &p);
        // Only V[k] = V[k-1] up to the strict margin could satisfy both rows.
        assert!(!band_holds(&rows, &prev, &prev));
        assert!(!band_holds(&rows, &prev, &Vector2::new(1.001, -2.0)));
    }

    #[test]
    fn usv_step_examples() {
        let s = UsvState {
            position: Vector2::new(0.0, 0.0),
            velocity: Vector2::new(1.0, 2.0),
        };
        let (n, h) = usv_step(&s, 100.0);
        assert_eq!(n.position, Vector2::new(100.0, 200.0));
        assert!((h - 2f64.atan2(1.0)).abs() < EPS);
        let still = UsvState {
            position: Vector2::new(3.0, 4.0),
            velocity: Vector2::zeros(),
        };
        assert_eq!(usv_step(&still, 100.0).0.position, still.position);
    }

    #[test]
    fn default_params_are_valid() {
        VehicleParams::default().validate().unwrap();
        let bad = VehicleParams {
            v_hmax: 3.0,
            ..VehicleParams::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn j1_is_a_rotation(phi in -3.1f64..3.1, theta in -1.4f64..1.4, psi in -3.1f64..3.1) {
            let r = rotation_and_transform_matrices(phi, theta, psi).unwrap();
            prop_assert!(max_abs(&(r.j1.transpose() * r.j1 - Matrix3::identity())) < EPS);
            prop_assert!((r.j1.determinant() - 1.0).abs() < EPS);
        }

        #[test]
        fn discrete_step_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            x1 in prop::array::uniform6(-10.0f64..10.0),
            x2 in prop::array::uniform6(-10.0f64..10.0),
            u1 in prop::array::uniform3(-2.0f64..2.0),
            u2 in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let p = VehicleParams::default();
            let mk = |x: [f64; 6]| LinearState::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]));
            let (s1, s2) = (mk(x1), mk(x2));
            let (v1, v2) = (Vector3::from(u1), Vector3::from(u2));
            let z = Vector3::zeros();
            let comb = LinearState::new(s1.position * a + s2.position * b, s1.velocity * a + s2.velocity * b);
            let lhs = discrete_step(&comb, &(v1 * a + v2 * b), &p, 100.0, &z).unwrap();
            let r1 = discrete_step(&s1, &v1, &p, 100.0, &z).unwrap();
            let r2 = discrete_step(&s2, &v2, &p, 100.0, &z).unwrap();
            prop_assert!((lhs.position - (r1.position * a + r2.position * b)).norm() < 1e-9);
            prop_assert!((lhs.velocity - (r1.velocity * a + r2.velocity * b)).norm() < 1e-9);
        }

        #[test]
        fn heading_change_range(
            a in prop::array::uniform2(-5.0f64..5.0),
            b in prop::array::uniform2(-5.0f64..5.0),
            delta in 0.1f64..200.0,
        ) {
            let (va, vb) = (Vector3::new(a[0], a[1], 0.0), Vector3::new(b[0], b[1], 0.0));
            prop_assume!(a[0].hypot(a[1]) > 1e-9 && b[0].hypot(b[1]) > 1e-9);
            let r = heading_change(&va, &vb, delta).unwrap();
            prop_assert!(r > -PI / delta && r <= PI / delta);
        }

        #[test]
        fn heading_surge_round_trip(vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -1.0f64..1.0) {
            prop_assume!(vx.hypot(vy) > 1e-9);
            let (s, h) = recover_heading_surge(&Vector3::new(vx, vy, vz)).unwrap();
            prop_assert!((s * h.cos() - vx).abs() < 1e-12);
            prop_assert!((s * h.sin() - vy).abs() < 1e-12);
        }

        #[test]
        fn damped_free_motion_loses_speed(v in prop::array::uniform6(-1.0f64..1.0)) {
            // Drag-only flow built from the same M and D, with C = 0.
            let p = VehicleParams::default();
            let m = mass_matrix(&p);
            let d = damping_matrix(&p);
            let nu = Vector6::from(v);
            let m_inv = Matrix6::from_diagonal(&m.diagonal().map(|x| 1.0 / x));
            let mut x = nu;
            let mut last = x.norm();
            for _ in 0..50 {
                x -= m_inv * d * x * 0.1;
                prop_assert!(x.norm() <= last + 1e-15);
                last = x.norm();
            }
        }
    }
}
