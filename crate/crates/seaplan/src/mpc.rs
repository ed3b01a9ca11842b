//! Stacked receding-horizon model and the convex programs solved in the
//! first and third planning stages.
//!
//! The joint state is `X = (P_usv, X_1, ..., X_N)` with `X_n = (P_n, V_n)`,
//! and the joint input is `u = (U_usv, U_1, ..., U_N)`. The decision vector
//! of every program is the stacked input sequence, so positions and
//! velocities enter the constraints as affine maps of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{GraphPlan, detect_clustering};
use crate::qp::{Ball, ConvexProgram, QpError, SolveOptions, SolveReport, SolveStatus, WarmStart, solve_with};
use crate::terrain::{SeafloorMap, TerrainError};
use crate::vehicle::{
    VehicleError, VehicleParams, discrete_matrices, heading_change, heading_rate_linear_constraints,
    recover_heading_surge,
};

/// Reference edges shorter than this give no usable ring direction.
pub const DEGENERATE_EDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid planning parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("a reference trajectory is required")]
    MissingReference,
    #[error("{stage}: solver stopped with status {status:?}")]
    Solver { stage: &'static str, status: SolveStatus },
    #[error("trajectory file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), MpcError> {
    if expected == got {
        Ok(())
    } else {
        Err(MpcError::DimensionMismatch { what, expected, got })
    }
}

/// Block model of the surface vehicle and `N` AUVs over `K` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub n_auv: usize,
    pub k_steps: usize,
    pub delta: f64,
    pub params: Vec<VehicleParams>,
    /// One-step state matrix, `(2 + 6N)` square.
    pub a: DMatrix<f64>,
    /// One-step input matrix, `(2 + 6N) x (2 + 3N)`.
    pub b: DMatrix<f64>,
    /// Powers `A^1 .. A^K` stacked vertically.
    pub a_pow: DMatrix<f64>,
    /// Lower block-triangular convolution with blocks `A^(i-j) B`.
    pub b_conv: DMatrix<f64>,
}

pub fn build_stacked(
    n_auv: usize,
    params: &[VehicleParams],
    delta: f64,
    k_steps: usize,
) -> Result<StackedSystem, MpcError> {
    if n_auv < 1 {
        return Err(MpcError::InvalidParameter {
            field: "n_auv",
            reason: "need at least one AUV".into(),
        });
    }
    if k_steps < 2 {
        return Err(MpcError::InvalidParameter {
            field: "k_steps",
            reason: "need at least two steps".into(),
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(MpcError::InvalidParameter {
            field: "delta",
            reason: format!("must be positive, got {delta}"),
        });
    }
    check_dim("vehicle parameter list", n_auv, params.len())?;
    let nx = 2 + 6 * n_auv;
    let nu = 2 + 3 * n_auv;
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    a.view_mut((0, 0), (2, 2)).fill_with_identity();
    b.view_mut((0, 0), (2, 2)).copy_from(&(DMatrix::identity(2, 2) * delta));
    for (n, p) in params.iter().enumerate() {
        p.validate()?;
        let (an, bn) = discrete_matrices(p, delta)?;
        a.view_mut((2 + 6 * n, 2 + 6 * n), (6, 6)).copy_from(&an);
        b.view_mut((2 + 6 * n, 2 + 3 * n), (6, 3)).copy_from(&bn);
    }
    let mut a_pow = DMatrix::zeros(k_steps * nx, nx);
    let mut ab = Vec::with_capacity(k_steps);
    let mut power = DMatrix::identity(nx, nx);
    for k in 0..k_steps {
        ab.push(&power * &b);
        power = &a * &power;
        a_pow.view_mut((k * nx, 0), (nx, nx)).copy_from(&power);
    }
    let mut b_conv = DMatrix::zeros(k_steps * nx, k_steps * nu);
    for i in 0..k_steps {
        for j in 0..=i {
            b_conv.view_mut((i * nx, j * nu), (nx, nu)).copy_from(&ab[i - j]);
        }
    }
    Ok(StackedSystem {
        n_auv,
        k_steps,
        delta,
        params: params.to_vec(),
        a,
        b,
        a_pow,
        b_conv,
    })
}

impl StackedSystem {
    pub fn nx(&self) -> usize {
        2 + 6 * self.n_auv
    }

    pub fn nu(&self) -> usize {
        2 + 3 * self.n_auv
    }

    /// Length of the stacked input sequence.
    pub fn n_vars(&self) -> usize {
        self.k_steps * self.nu()
    }

    pub fn pos_index(n: usize) -> usize {
        2 + 6 * n
    }

    pub fn vel_index(n: usize) -> usize {
        5 + 6 * n
    }

    pub fn input_index(n: usize) -> usize {
        2 + 3 * n
    }

    /// `A^k` for `k = 1..=K`.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        self.a_pow.rows((k - 1) * self.nx(), self.nx()).into_owned()
    }

    /// Convolution rows mapping the stacked inputs onto `X[k]`, `k = 1..=K`.
    pub fn conv(&self, k: usize) -> DMatrix<f64> {
        self.b_conv.rows((k - 1) * self.nx(), self.nx()).into_owned()
    }

    fn selector(&self, rows: &[(usize, usize)], nrows: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(nrows, self.nx());
        for &(r, c) in rows {
            s[(r, c)] = 1.0;
        }
        s
    }

    /// Depth row of AUV `n`.
    pub fn sel_depth(&self, n: usize) -> DMatrix<f64> {
        self.selector(&[(0, Self::pos_index(n) + 2)], 1)
    }

    /// Sum of all AUV depths.
    pub fn sel_depth_sum(&self) -> DMatrix<f64> {
        let rows: Vec<(usize, usize)> = (0..self.n_auv).map(|n| (0, Self::pos_index(n) + 2)).collect();
        self.selector(&rows, 1)
    }

    pub fn sel_position(&self, n: usize) -> DMatrix<f64> {
        let p = Self::pos_index(n);
        self.selector(&[(0, p), (1, p + 1), (2, p + 2)], 3)
    }

    /// Surface-vehicle position padded with a zero depth row.
    pub fn sel_usv(&self) -> DMatrix<f64> {
        self.selector(&[(0, 0), (1, 1)], 3)
    }

    pub fn sel_positions(&self) -> DMatrix<f64> {
        let rows: Vec<(usize, usize)> = (0..self.n_auv)
            .flat_map(|n| (0..3).map(move |d| (3 * n + d, Self::pos_index(n) + d)))
            .collect();
        self.selector(&rows, 3 * self.n_auv)
    }

    pub fn sel_velocity(&self, n: usize) -> DMatrix<f64> {
        let v = Self::vel_index(n);
        self.selector(&[(0, v), (1, v + 1), (2, v + 2)], 3)
    }

    pub fn sel_velocities(&self) -> DMatrix<f64> {
        let rows: Vec<(usize, usize)> = (0..self.n_auv)
            .flat_map(|n| (0..3).map(move |d| (3 * n + d, Self::vel_index(n) + d)))
            .collect();
        self.selector(&rows, 3 * self.n_auv)
    }

    /// Joint state from the surface position and AUV `(position, velocity)` pairs.
    pub fn pack_state(&self, usv: &Vector2<f64>, auvs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<DVector<f64>, MpcError> {
        check_dim("initial AUV states", self.n_auv, auvs.len())?;
        let mut x = DVector::zeros(self.nx());
        x[0] = usv.x;
        x[1] = usv.y;
        for (n, (p, v)) in auvs.iter().enumerate() {
            x.fixed_rows_mut::<3>(Self::pos_index(n)).copy_from(p);
            x.fixed_rows_mut::<3>(Self::vel_index(n)).copy_from(v);
        }
        Ok(x)
    }
}

/// States `X[0..=K]` and inputs `u[0..K]` of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_auv: usize,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn k_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn usv(&self, k: usize) -> Vector2<f64> {
        Vector2::new(self.states[k][0], self.states[k][1])
    }

    pub fn usv_input(&self, k: usize) -> Vector2<f64> {
        Vector2::new(self.inputs[k][0], self.inputs[k][1])
    }

    pub fn position(&self, k: usize, n: usize) -> Vector3<f64> {
        self.states[k].fixed_rows::<3>(StackedSystem::pos_index(n)).into_owned()
    }

    pub fn velocity(&self, k: usize, n: usize) -> Vector3<f64> {
        self.states[k].fixed_rows::<3>(StackedSystem::vel_index(n)).into_owned()
    }

    pub fn input(&self, k: usize, n: usize) -> Vector3<f64> {
        self.inputs[k].fixed_rows::<3>(StackedSystem::input_index(n)).into_owned()
    }

    pub fn positions(&self, k: usize) -> Vec<Vector3<f64>> {
        (0..self.n_auv).map(|n| self.position(k, n)).collect()
    }

    /// 3D offset from the surface vehicle (at `z = 0`) to AUV `n`.
    pub fn usv_offset(&self, k: usize, n: usize) -> Vector3<f64> {
        let u = self.usv(k);
        self.position(k, n) - Vector3::new(u.x, u.y, 0.0)
    }

    pub fn stacked_inputs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.iter().map(|u| u.len()).sum(),
            self.inputs.iter().flat_map(|u| u.iter().copied()),
        )
    }

    /// Steps `1..=K` of the Step-2 inputs: AUV positions and surface positions.
    pub fn graph_inputs(&self) -> (Vec<Vec<Vector3<f64>>>, Vec<Vector2<f64>>) {
        let k = self.k_steps();
        ((1..=k).map(|s| self.positions(s)).collect(), (1..=k).map(|s| self.usv(s)).collect())
    }
}

/// Closed-form evaluation `X = A_pow X[0] + B_conv U` of an input sequence.
pub fn rollout(sys: &StackedSystem, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Trajectory, MpcError> {
    check_dim("initial state", sys.nx(), x0.len())?;
    check_dim("input sequence", sys.k_steps, inputs.len())?;
    for u in inputs {
        check_dim("input vector", sys.nu(), u.len())?;
    }
    let u = DVector::from_iterator(sys.n_vars(), inputs.iter().flat_map(|u| u.iter().copied()));
    rollout_stacked(sys, x0, &u)
}

/// Rollout of a stacked input vector (the decision vector of the programs).
pub fn rollout_stacked(sys: &StackedSystem, x0: &DVector<f64>, u: &DVector<f64>) -> Result<Trajectory, MpcError> {
    check_dim("initial state", sys.nx(), x0.len())?;
    check_dim("stacked inputs", sys.n_vars(), u.len())?;
    let all = &sys.a_pow * x0 + &sys.b_conv * u;
    let nx = sys.nx();
    let nu = sys.nu();
    let mut states = vec![x0.clone()];
    states.extend((0..sys.k_steps).map(|k| all.rows(k * nx, nx).into_owned()));
    let inputs = (0..sys.k_steps).map(|k| u.rows(k * nu, nu).into_owned()).collect();
    Ok(Trajectory {
        n_auv: sys.n_auv,
        states,
        inputs,
    })
}

/// Objective weights and range limits shared by all stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
    pub w8_2: f64,
    /// Sonar range (m).
    pub d_s: f64,
    /// Largest allowed surface-to-AUV distance (m).
    pub d_max: f64,
    /// Sonar range tolerance (m).
    pub d_t: f64,
    /// Minimum depth below the surface (m).
    pub eps_surface: f64,
    /// Destination of the surface vehicle.
    pub target: Option<[f64; 2]>,
}

impl Default for PlanWeights {
    fn default() -> Self {
        Self {
            w1: 1e-2,
            w2: 1e-3,
            w3: 0.0,
            w4: 0.0,
            w5: 1e-4,
            w6: 0.0,
            w7: 0.0,
            w8: 0.0,
            w8_2: 1e-3,
            d_s: 150.0,
            d_max: 1000.0,
            d_t: 30.0,
            eps_surface: 1.0,
            target: None,
        }
    }
}

impl PlanWeights {
    pub fn validate(&self) -> Result<(), MpcError> {
        let named = [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("w5", self.w5),
            ("w6", self.w6),
            ("w7", self.w7),
            ("w8", self.w8),
            ("w8_2", self.w8_2),
        ];
        for (field, w) in named {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(MpcError::InvalidParameter {
                    field,
                    reason: format!("weights must be finite and nonnegative, got {w}"),
                });
            }
        }
        let bad = |field, reason: String| Err(MpcError::InvalidParameter { field, reason });
        if !(self.d_t > 0.0 && self.d_t < self.d_s) {
            return bad("d_t", format!("must satisfy 0 < d_t < d_s, got d_t = {}, d_s = {}", self.d_t, self.d_s));
        }
        if !(self.d_s < self.d_max && self.d_max.is_finite()) {
            return bad("d_s", format!("must satisfy d_s < d_max, got d_s = {}, d_max = {}", self.d_s, self.d_max));
        }
        if !(self.eps_surface > 0.0 && self.eps_surface.is_finite()) {
            return bad("eps_surface", format!("must be positive, got {}", self.eps_surface));
        }
        if let Some(t) = self.target {
            if !t.iter().all(|v| v.is_finite()) {
                return bad("target", "coordinates must be finite".into());
            }
        }
        Ok(())
    }

    pub fn target_point(&self) -> Option<Vector2<f64>> {
        self.target.map(|[x, y]| Vector2::new(x, y))
    }
}

/// Affine map `m u + c` of the stacked inputs.
struct Affine {
    m: DMatrix<f64>,
    c: DVector<f64>,
}

impl Affine {
    fn sub(&self, other: &Affine) -> Affine {
        Affine {
            m: &self.m - &other.m,
            c: &self.c - &other.c,
        }
    }

    fn row(&self, r: usize) -> (DVector<f64>, f64) {
        (self.m.row(r).transpose(), self.c[r])
    }
}

/// Affine views of the state at every step for one initial state.
struct Lifted<'a> {
    sys: &'a StackedSystem,
    consts: Vec<DVector<f64>>,
}

impl<'a> Lifted<'a> {
    fn new(sys: &'a StackedSystem, x0: &DVector<f64>) -> Result<Self, MpcError> {
        check_dim("initial state", sys.nx(), x0.len())?;
        let mut consts = vec![x0.clone()];
        for k in 1..=sys.k_steps {
            consts.push(sys.power(k) * x0);
        }
        Ok(Self { sys, consts })
    }

    fn rows(&self, k: usize, start: usize, len: usize) -> Affine {
        let n = self.sys.n_vars();
        let m = if k == 0 {
            DMatrix::zeros(len, n)
        } else {
            self.sys.b_conv.rows((k - 1) * self.sys.nx() + start, len).into_owned()
        };
        Affine {
            m,
            c: self.consts[k].rows(start, len).into_owned(),
        }
    }

    fn position(&self, k: usize, n: usize) -> Affine {
        self.rows(k, StackedSystem::pos_index(n), 3)
    }

    fn velocity(&self, k: usize, n: usize) -> Affine {
        self.rows(k, StackedSystem::vel_index(n), 3)
    }

    fn usv3(&self, k: usize) -> Affine {
        let xy = self.rows(k, 0, 2);
        let mut m = DMatrix::zeros(3, self.sys.n_vars());
        m.rows_mut(0, 2).copy_from(&xy.m);
        let mut c = DVector::zeros(3);
        c.rows_mut(0, 2).copy_from(&xy.c);
        Affine { m, c }
    }

    fn usv_offset(&self, k: usize, n: usize) -> Affine {
        self.position(k, n).sub(&self.usv3(k))
    }

    fn pair_offset(&self, k: usize, i: usize, j: usize) -> Affine {
        self.position(k, i).sub(&self.position(k, j))
    }
}

/// Inequality rows `a^T u <= b` collected before stacking.
struct RowSet {
    n: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
}

impl RowSet {
    fn new(n: usize) -> Self {
        Self {
            n,
            data: Vec::new(),
            rhs: Vec::new(),
        }
    }

    fn push(&mut self, a: &DVector<f64>, b: f64) {
        self.data.extend(a.iter());
        self.rhs.push(b);
    }

    fn finish(self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.rhs.len();
        (DMatrix::from_row_slice(m, self.n, &self.data), DVector::from_vec(self.rhs))
    }
}

/// Minimum allowed depth `floor[n][k - 1]` of AUV `n` at step `k`.
pub type FloorProfile = Vec<Vec<f64>>;

/// Per-AUV reference horizontal velocities `v_ref[n][k]` for `k = 0..K`;
/// the band rows of step `k` are oriented by `v_ref[n][k - 1]`.
pub type HeadingReference = Vec<Vec<Vector2<f64>>>;

/// Constant heading reference: the sign of each initial velocity component,
/// or of the surface-to-target direction where that component is zero.
pub fn heading_reference(sys: &StackedSystem, x0: &DVector<f64>, target: Option<Vector2<f64>>) -> HeadingReference {
    let usv = Vector2::new(x0[0], x0[1]);
    let dir = target.map(|t| t - usv).unwrap_or_else(Vector2::zeros);
    (0..sys.n_auv)
        .map(|n| {
            let v = x0.fixed_rows::<3>(StackedSystem::vel_index(n));
            let sign = |axis: usize| {
                let s = if v[axis] != 0.0 { v[axis] } else { dir[axis] };
                if s < 0.0 { -1.0 } else { 1.0 }
            };
            vec![Vector2::new(sign(0), sign(1)); sys.k_steps]
        })
        .collect()
}

fn check_profile(sys: &StackedSystem, floor: &FloorProfile, v_ref: &HeadingReference) -> Result<(), MpcError> {
    check_dim("floor profile AUV count", sys.n_auv, floor.len())?;
    for f in floor {
        check_dim("floor profile steps", sys.k_steps, f.len())?;
    }
    check_dim("heading reference AUV count", sys.n_auv, v_ref.len())?;
    for v in v_ref {
        check_dim("heading reference steps", sys.k_steps, v.len())?;
    }
    Ok(())
}

/// Objective and constraints shared by both programs.
fn base_program(
    sys: &StackedSystem,
    w: &PlanWeights,
    lifted: &Lifted,
    floor: &FloorProfile,
    v_ref: &HeadingReference,
) -> (DMatrix<f64>, DVector<f64>, RowSet, Vec<Ball>) {
    let nv = sys.n_vars();
    let kk = sys.k_steps;
    let mut h = DMatrix::identity(nv, nv) * (2.0 * w.w1);
    let mut g = DVector::zeros(nv);
    let mut rows = RowSet::new(nv);
    let mut balls = Vec::new();

    for k in 1..=kk {
        for n in 0..sys.n_auv {
            let p = &sys.params[n];
            let pos = lifted.position(k, n);
            let (zrow, zc) = pos.row(2);
            g += &zrow * w.w2;
            // Depth rows fixed by the initial state are left to validation.
            if zrow.amax() > 0.0 {
                // Underwater: z <= -eps_surface.
                rows.push(&zrow, -w.eps_surface - zc);
                // Above the floor profile: z >= floor.
                rows.push(&(-&zrow), zc - floor[n][k - 1]);
            }

            let rel = lifted.usv_offset(k, n);
            balls.push(Ball::new(rel.m.clone(), -&rel.c, w.d_max));
            if k == kk {
                balls.push(Ball::new(rel.m, -rel.c, w.d_s));
            }
            let vel = lifted.velocity(k, n);
            balls.push(Ball::new(vel.m.clone(), -&vel.c, p.v_max));

            if k >= 2 {
                let prev = lifted.velocity(k - 1, n);
                for band in heading_rate_linear_constraints(&v_ref[n][k - 1], p) {
                    let (cur_r, cur_c) = vel.row(band.axis);
                    let (prev_r, prev_c) = prev.row(band.axis);
                    let a = cur_r * band.coef_cur + prev_r * band.coef_prev;
                    rows.push(&a, band.rhs - band.coef_cur * cur_c - band.coef_prev * prev_c);
                }
            }
        }
    }

    if let Some(t) = w.target_point() {
        let end = lifted.rows(kk, 0, 2);
        let mt = end.m.transpose();
        h += &mt * &end.m * (2.0 * w.w8_2);
        g += &mt * (&end.c - t) * (2.0 * w.w8_2);
    }
    (h, g, rows, balls)
}

/// First-stage program: energy, depth and destination terms under the
/// dynamics, range, speed, floor and heading-band constraints.
pub fn assemble_p2(
    sys: &StackedSystem,
    w: &PlanWeights,
    x0: &DVector<f64>,
    floor: &FloorProfile,
    v_ref: &HeadingReference,
) -> Result<ConvexProgram, MpcError> {
    check_profile(sys, floor, v_ref)?;
    let lifted = Lifted::new(sys, x0)?;
    let (h, g, rows, balls) = base_program(sys, w, &lifted, floor, v_ref);
    let (a, b) = rows.finish();
    let mut p = ConvexProgram::new(h, g).with_inequalities(a, b);
    for ball in balls {
        p = p.with_ball(ball);
    }
    Ok(p)
}

/// Effective sonar range per AUV-to-AUV edge and step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeRanges {
    pub nominal: f64,
    /// `(k, i, j)` with `i < j` to the shrunk range.
    pub overrides: BTreeMap<(usize, usize, usize), f64>,
    /// When set, linearized ring lower bounds become penalized slack rows
    /// with this cost per metre of shortfall.
    pub lower_penalty: Option<f64>,
}

impl EdgeRanges {
    pub fn new(nominal: f64) -> Self {
        Self {
            nominal,
            overrides: BTreeMap::new(),
            lower_penalty: None,
        }
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        *self.overrides.get(&(k, i.min(j), i.max(j))).unwrap_or(&self.nominal)
    }

    /// Reduces the range of one edge by `step`, never below zero; returns the new value.
    pub fn shrink(&mut self, k: usize, i: usize, j: usize, step: f64) -> f64 {
        let v = (self.get(k, i, j) - step).max(0.0);
        self.overrides.insert((k, i.min(j), i.max(j)), v);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Reference edge too short to give a direction; the lower bound is left out.
    Degenerate,
    /// The link length does not depend on the inputs; both bounds are left out.
    Fixed,
}

/// A ring bound left out of the third-stage program.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedBound {
    pub k: usize,
    /// `None` for the surface link, otherwise the AUV pair.
    pub edge: Option<(usize, usize)>,
    pub anchor: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P5Assembly {
    pub program: ConvexProgram,
    pub dropped: Vec<DroppedBound>,
    /// Leading decision entries that are stacked inputs; the rest are slacks.
    pub n_inputs: usize,
}

impl P5Assembly {
    pub fn inputs(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.n_inputs).into_owned()
    }

    /// Largest ring shortfall carried by a slack variable.
    pub fn max_slack(&self, x: &DVector<f64>) -> f64 {
        x.rows(self.n_inputs, x.len() - self.n_inputs).iter().fold(0.0, |a, &v| a.max(v))
    }
}

/// Third-stage program: the first-stage program plus ring constraints on the
/// selected links and a linearized spreading term on the unselected pairs.
#[allow(clippy::too_many_arguments)]
pub fn assemble_p5(
    sys: &StackedSystem,
    w: &PlanWeights,
    x0: &DVector<f64>,
    graphs: &GraphPlan,
    ranges: &EdgeRanges,
    reference: Option<&Trajectory>,
    floor: &FloorProfile,
    v_ref: &HeadingReference,
) -> Result<P5Assembly, MpcError> {
    let reference = reference.ok_or(MpcError::MissingReference)?;
    check_profile(sys, floor, v_ref)?;
    check_dim("graph steps", sys.k_steps, graphs.a2u.len())?;
    check_dim("graph steps", sys.k_steps, graphs.a2a.len())?;
    check_dim("reference steps", sys.k_steps, reference.k_steps())?;
    check_dim("reference AUV count", sys.n_auv, reference.n_auv)?;
    let lifted = Lifted::new(sys, x0)?;
    let (h, mut g, mut rows, mut balls) = base_program(sys, w, &lifted, floor, v_ref);
    let mut dropped = Vec::new();
    let mut lower_rows: Vec<(DVector<f64>, f64)> = Vec::new();

    let mut ring = |rel: Affine, ref_offset: Vector3<f64>, radius: f64, k, edge, anchor| {
        if rel.m.amax() == 0.0 {
            dropped.push(DroppedBound {
                k,
                edge,
                anchor,
                reason: DropReason::Fixed,
            });
            return;
        }
        let lower = radius - w.d_t;
        if lower > 0.0 {
            let norm = ref_offset.norm();
            if norm < DEGENERATE_EDGE {
                dropped.push(DroppedBound {
                    k,
                    edge,
                    anchor,
                    reason: DropReason::Degenerate,
                });
            } else {
                let dir = DVector::from_column_slice((ref_offset / norm).as_slice());
                // dir^T (m u + c) >= lower
                let a = -(rel.m.transpose() * &dir);
                lower_rows.push((a, dir.dot(&rel.c) - lower));
            }
        }
        balls.push(Ball::new(rel.m, -rel.c, radius));
    };

    for k in 1..=sys.k_steps {
        let anchor = graphs.a2u[k - 1].selected;
        ring(
            lifted.usv_offset(k, anchor),
            reference.usv_offset(k, anchor),
            w.d_s,
            k,
            None,
            anchor,
        );
        let tree = &graphs.a2a[k - 1];
        for &(i, j) in &tree.edges {
            let rel = lifted.pair_offset(k, i, j);
            let r = reference.position(k, i) - reference.position(k, j);
            ring(rel, r, ranges.get(k, i, j), k, Some((i, j)), i);
        }
        if w.w5 > 0.0 {
            for i in 0..sys.n_auv {
                for j in i + 1..sys.n_auv {
                    if tree.contains(i, j) {
                        continue;
                    }
                    let rel = lifted.pair_offset(k, i, j);
                    let r = reference.position(k, i) - reference.position(k, j);
                    let dir = DVector::from_column_slice(r.as_slice());
                    g -= rel.m.transpose() * dir * (2.0 * w.w5);
                }
            }
        }
    }

    let n = sys.n_vars();
    let Some(penalty) = ranges.lower_penalty else {
        for (a, b) in &lower_rows {
            rows.push(a, *b);
        }
        let (a, b) = rows.finish();
        let mut program = ConvexProgram::new(h, g).with_inequalities(a, b);
        for ball in balls {
            program = program.with_ball(ball);
        }
        return Ok(P5Assembly {
            program,
            dropped,
            n_inputs: n,
        });
    };

    let ns = lower_rows.len();
    let (a, b) = rows.finish();
    let m = a.nrows();
    let mut hp = DMatrix::zeros(n + ns, n + ns);
    hp.view_mut((0, 0), (n, n)).copy_from(&h);
    let mut gp = DVector::from_element(n + ns, penalty);
    gp.rows_mut(0, n).copy_from(&g);
    let mut ap = DMatrix::zeros(m + 2 * ns, n + ns);
    let mut bp = DVector::zeros(m + 2 * ns);
    ap.view_mut((0, 0), (m, n)).copy_from(&a);
    bp.rows_mut(0, m).copy_from(&b);
    for (s, (row, rhs)) in lower_rows.iter().enumerate() {
        ap.view_mut((m + s, 0), (1, n)).copy_from(&row.transpose());
        ap[(m + s, n + s)] = -1.0;
        bp[m + s] = *rhs;
        ap[(m + ns + s, n + s)] = -1.0;
    }
    let mut program = ConvexProgram::new(hp, gp).with_inequalities(ap, bp);
    for ball in balls {
        let mut map = DMatrix::zeros(ball.map.nrows(), n + ns);
        map.view_mut((0, 0), (ball.map.nrows(), n)).copy_from(&ball.map);
        program = program.with_ball(Ball::new(map, ball.center, ball.radius));
    }
    Ok(P5Assembly {
        program,
        dropped,
        n_inputs: n,
    })
}

/// Minimum allowed depths `Z(x, y) + clearance + margin` at the waypoints of `traj`.
pub fn floor_requirement(map: &SeafloorMap, traj: &Trajectory, margin: f64) -> Result<FloorProfile, MpcError> {
    (0..traj.n_auv)
        .map(|n| {
            (1..=traj.k_steps())
                .map(|k| {
                    let p = traj.position(k, n);
                    Ok(map.depth_at(p.x, p.y)? + map.clearance + margin)
                })
                .collect()
        })
        .collect()
}

/// Floor profile seeded from the initial AUV positions.
pub fn initial_floor(sys: &StackedSystem, map: &SeafloorMap, x0: &DVector<f64>, margin: f64) -> Result<FloorProfile, MpcError> {
    (0..sys.n_auv)
        .map(|n| {
            let p = x0.fixed_rows::<3>(StackedSystem::pos_index(n));
            let z = map.depth_at(p[0], p[1])? + map.clearance + margin;
            Ok(vec![z; sys.k_steps])
        })
        .collect()
}

/// Raises `profile` to at least `req` entrywise.
pub fn merge_floor(profile: &mut FloorProfile, req: &FloorProfile) {
    for (row, r) in profile.iter_mut().zip(req) {
        for (v, &x) in row.iter_mut().zip(r) {
            *v = v.max(x);
        }
    }
}

/// True when every AUV waypoint at steps `1..=K` clears the true floor.
pub fn waypoints_clear(map: &SeafloorMap, traj: &Trajectory) -> Result<bool, MpcError> {
    for k in 1..=traj.k_steps() {
        for n in 0..traj.n_auv {
            if !map.collision_free(&traj.position(k, n))? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn max_xy_displacement(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut d = 0.0_f64;
    for k in 1..=a.k_steps() {
        for n in 0..a.n_auv {
            let (p, q) = (a.position(k, n), b.position(k, n));
            d = d.max((p.x - q.x).hypot(p.y - q.y));
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    /// Largest waypoint xy-displacement (m) accepted as converged.
    pub threshold: f64,
    pub max_iter: usize,
    /// Extra height (m) kept above floor plus clearance.
    pub margin: f64,
    pub solver: SolveOptions,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            max_iter: 10,
            margin: 1.0,
            solver: SolveOptions {
                tol: 1e-7,
                max_iter: 50_000,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOutcome {
    pub trajectory: Trajectory,
    /// Profile used by the last solve.
    pub floor: FloorProfile,
    pub iterations: usize,
    pub converged: bool,
    pub report: SolveReport,
}

/// Alternates the first-stage solve with floor-profile refreshes.
pub fn floor_profile_iterate(
    sys: &StackedSystem,
    w: &PlanWeights,
    x0: &DVector<f64>,
    map: &SeafloorMap,
    v_ref: &HeadingReference,
    opts: &ProfileOptions,
) -> Result<ProfileOutcome, MpcError> {
    let mut floor = initial_floor(sys, map, x0, opts.margin)?;
    let mut warm: Option<WarmStart> = None;
    let mut previous: Option<Trajectory> = None;
    let mut iter = 0;
    loop {
        iter += 1;
        let program = assemble_p2(sys, w, x0, &floor, v_ref)?;
        let report = solve_with(&program, &opts.solver, warm.as_ref())?;
        if report.status == SolveStatus::InfeasibleDetected {
            return Err(MpcError::Solver {
                stage: "step 1",
                status: report.status,
            });
        }
        let traj = rollout_stacked(sys, x0, &report.x)?;
        let clear = waypoints_clear(map, &traj)?;
        let settled = match &previous {
            None => true,
            Some(prev) => max_xy_displacement(prev, &traj) < opts.threshold,
        };
        if (clear && settled) || iter >= opts.max_iter {
            return Ok(ProfileOutcome {
                trajectory: traj,
                floor,
                iterations: iter,
                converged: clear && settled,
                report,
            });
        }
        let req = floor_requirement(map, &traj, opts.margin)?;
        merge_floor(&mut floor, &req);
        warm = Some(WarmStart {
            x: report.x.clone(),
            y: report.y.clone(),
        });
        previous = Some(traj);
    }
}

/// Literal objective terms of one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveRecord {
    /// Input energy.
    pub of1_1: f64,
    /// Sum of AUV depths.
    pub of1_2: f64,
    /// Surface-link deviation from the sonar range.
    pub of1_3: f64,
    /// AUV-link deviation from the sonar range.
    pub of1_4: f64,
    /// Squared spread of unlinked AUV pairs (subtracted in the total).
    pub of1_5: f64,
    pub of1_6: f64,
    pub of1_7: f64,
    /// Squared surface-vehicle displacement (subtracted in the total).
    pub of1_8: f64,
    /// Squared distance of the final surface position to the target.
    pub of1_8_2: f64,
    /// `w1 OF1_1 + w2 OF1_2 + w8_2 OF1_8_2`.
    pub composite: f64,
    /// Weighted total of the eight literal terms.
    pub total: f64,
}

pub fn evaluate_objectives(traj: &Trajectory, graphs: &GraphPlan, w: &PlanWeights) -> ObjectiveRecord {
    let kk = traj.k_steps();
    let mut r = ObjectiveRecord {
        of1_1: traj.inputs.iter().map(|u| u.norm_squared()).sum(),
        ..ObjectiveRecord::default()
    };
    for k in 1..=kk {
        for n in 0..traj.n_auv {
            r.of1_2 += traj.position(k, n).z;
        }
        if let Some(u) = graphs.a2u.get(k - 1) {
            r.of1_3 += (traj.usv_offset(k, u.selected).norm() - w.d_s).abs();
            r.of1_7 += 1.0;
        }
        if let Some(t) = graphs.a2a.get(k - 1) {
            for i in 0..traj.n_auv {
                for j in i + 1..traj.n_auv {
                    let d = (traj.position(k, i) - traj.position(k, j)).norm();
                    if t.contains(i, j) {
                        r.of1_4 += (d - w.d_s).abs();
                        r.of1_6 += 1.0;
                    } else {
                        r.of1_5 += d * d;
                    }
                }
            }
        }
    }
    r.of1_8 = (traj.usv(kk) - traj.usv(0)).norm_squared();
    r.of1_8_2 = w.target_point().map_or(0.0, |t| (traj.usv(kk) - t).norm_squared());
    r.composite = w.w1 * r.of1_1 + w.w2 * r.of1_2 + w.w8_2 * r.of1_8_2;
    r.total = w.w1 * r.of1_1 + w.w2 * r.of1_2 + w.w3 * r.of1_3 + w.w4 * r.of1_4 - w.w5 * r.of1_5
        + w.w6 * r.of1_6
        + w.w7 * r.of1_7
        - w.w8 * r.of1_8;
    r
}

/// Tolerances used when re-checking a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    /// Distance and speed balls (m, m/s).
    pub ball_tol: f64,
    /// Linear rows.
    pub linear_tol: f64,
    /// Dynamics residual relative to the state magnitude.
    pub dynamics_tol: f64,
    pub los_resolution: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            ball_tol: 1e-3,
            linear_tol: 1e-4,
            dynamics_tol: 1e-9,
            los_resolution: crate::terrain::DEFAULT_LOS_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    /// Advisory rows are reported but never fail a plan.
    pub advisory: bool,
    /// Largest violation found; nonpositive values are slack.
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.passed || r.advisory)
    }

    pub fn row(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.rows.iter().filter(|r| !r.passed && !r.advisory).map(|r| r.name).collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let verdict = match (r.passed, r.advisory) {
                (true, _) => "pass",
                (false, true) => "note",
                (false, false) => "FAIL",
            };
            writeln!(s, "{:<28} {:<5} worst={:<12.4e} {}", r.name, verdict, r.worst, r.detail).unwrap();
        }
        s
    }
}

struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            at: String::new(),
        }
    }

    fn see(&mut self, v: f64, at: impl FnOnce() -> String) {
        if v > self.value {
            self.value = v;
            self.at = at();
        }
    }

    fn row(self, name: &'static str, tol: f64, advisory: bool) -> CheckRow {
        let value = if self.value == f64::NEG_INFINITY { 0.0 } else { self.value };
        CheckRow {
            name,
            passed: value <= tol,
            advisory,
            worst: value,
            detail: self.at,
        }
    }
}

/// Re-checks every constraint of a plan against the true terrain.
pub fn validate_constraints(
    sys: &StackedSystem,
    traj: &Trajectory,
    graphs: &GraphPlan,
    w: &PlanWeights,
    map: &SeafloorMap,
    opts: &ValidationOptions,
) -> ValidationReport {
    let kk = traj.k_steps();
    let nn = traj.n_auv;
    let mut rows = Vec::new();
    let shape_ok = kk == sys.k_steps && nn == sys.n_auv && traj.states.len() == kk + 1;
    if !shape_ok {
        rows.push(CheckRow {
            name: "shape",
            passed: false,
            advisory: false,
            worst: f64::INFINITY,
            detail: format!("trajectory has {nn} AUVs over {kk} steps, system expects {} over {}", sys.n_auv, sys.k_steps),
        });
        return ValidationReport { rows };
    }

    let mut dyn_w = Worst::new();
    for k in 0..kk {
        let pred = &sys.a * &traj.states[k] + &sys.b * &traj.inputs[k];
        let res = (&traj.states[k + 1] - pred).amax();
        let scale = 1.0 + traj.states[k + 1].amax();
        dyn_w.see(res / scale, || format!("k={} residual={res:.3e}", k + 1));
    }
    rows.push(dyn_w.row("C1_1 dynamics", opts.dynamics_tol, false));

    let mut under = Worst::new();
    let mut dmax = Worst::new();
    let mut speed = Worst::new();
    for k in 1..=kk {
        for n in 0..nn {
            let z = traj.position(k, n).z;
            under.see(z + w.eps_surface, || format!("k={k} auv={} z={z:.3}", n + 1));
            let d = traj.usv_offset(k, n).norm();
            dmax.see(d - w.d_max, || format!("k={k} auv={} dist={d:.3}", n + 1));
            let v = traj.velocity(k, n).norm();
            speed.see(v - sys.params[n].v_max, || format!("k={k} auv={} speed={v:.4}", n + 1));
        }
    }
    rows.push(under.row("C1_4 underwater", opts.linear_tol, false));
    rows.push(dmax.row("C1_5 max distance", opts.ball_tol, false));

    let mut ends = Worst::new();
    for k in [0, kk] {
        for n in 0..nn {
            let d = traj.usv_offset(k, n).norm();
            ends.see(d - w.d_s, || format!("k={k} auv={} dist={d:.3}", n + 1));
        }
    }
    rows.push(ends.row("C1_6 sonar at start/end", opts.ball_tol, false));
    rows.push(speed.row("C1_7 speed", opts.ball_tol, false));

    let graphs_ok = graphs.a2u.len() == kk
        && graphs.a2a.len() == kk
        && graphs.a2u.iter().all(|u| u.selected < nn)
        && graphs.a2a.iter().all(|t| t.edges.iter().all(|&(i, j)| i < j && j < nn));
    rows.push(CheckRow {
        name: "C1_8/9 binary links",
        passed: graphs_ok,
        advisory: false,
        worst: if graphs_ok { 0.0 } else { 1.0 },
        detail: format!("{} steps of graphs for {kk} steps", graphs.a2u.len()),
    });
    if !graphs_ok {
        return ValidationReport { rows };
    }

    let mut a2u_count = Worst::new();
    let mut a2a_count = Worst::new();
    let mut structure = Worst::new();
    for k in 1..=kk {
        a2u_count.see(1.0 - graphs.a2u[k - 1].sigma().iter().map(|&s| s as f64).sum::<f64>(), || format!("k={k}"));
        let t = &graphs.a2a[k - 1];
        a2a_count.see((nn - 1) as f64 - t.edges.len() as f64, || format!("k={k} edges={}", t.edges.len()));
        let comps = detect_clustering(&t.edges, nn).components.len();
        structure.see(if t.is_hamiltonian_path() { 0.0 } else { 1.0 }, || {
            format!("k={k} edges={} components={comps}", t.edges.len())
        });
    }
    rows.push(a2u_count.row("C1_10 surface link count", 0.0, false));
    rows.push(a2a_count.row("C1_11 AUV link count", 0.0, false));
    rows.push(structure.row("AUV links form a path", 0.0, false));

    let mut floor = Worst::new();
    let mut graze = Worst::new();
    let mut terrain_err: Option<String> = None;
    for k in 0..=kk {
        for n in 0..nn {
            let p = traj.position(k, n);
            match map.clearance_margin(&p) {
                Ok(m) => floor.see(-m, || format!("k={k} auv={} margin={m:.3}", n + 1)),
                Err(e) => terrain_err = Some(format!("k={k} auv={}: {e}", n + 1)),
            }
            if k < kk {
                let mid = (p + traj.position(k + 1, n)) * 0.5;
                if let Ok(m) = map.clearance_margin(&mid) {
                    graze.see(-m, || format!("segment k={k}..{} auv={} margin={m:.3}", k + 1, n + 1));
                }
            }
        }
    }
    let mut floor_row = floor.row("C1_12 collision-free", 0.0, false);
    if let Some(e) = terrain_err {
        floor_row.passed = false;
        floor_row.detail = e;
    }
    rows.push(floor_row);
    rows.push(graze.row("segment midpoints (note)", 0.0, true));

    let mut los_fail = 0usize;
    let mut los_at = String::new();
    for k in 1..=kk {
        for &(i, j) in &graphs.a2a[k - 1].edges {
            let clear = map
                .los_clear(&traj.position(k, i), &traj.position(k, j), opts.los_resolution)
                .unwrap_or(false);
            if !clear {
                los_fail += 1;
                if los_at.is_empty() {
                    los_at = format!("k={k} edge=({},{})", i + 1, j + 1);
                }
            }
        }
    }
    rows.push(CheckRow {
        name: "C1_13 line of sight",
        passed: los_fail == 0,
        advisory: false,
        worst: los_fail as f64,
        detail: if los_fail == 0 { String::new() } else { format!("{los_fail} blocked, first {los_at}") },
    });

    let mut rate = Worst::new();
    let mut band = Worst::new();
    for n in 0..nn {
        let p = &sys.params[n];
        let a = p.band_ratio();
        for k in 1..=kk {
            let (vp, vc) = (traj.velocity(k - 1, n), traj.velocity(k, n));
            if let Ok(r) = heading_change(&vp, &vc, sys.delta) {
                rate.see(r.abs() - p.heading_rate_max, || format!("k={k} auv={} rate={r:.4}", n + 1));
            }
            if k >= 2 {
                for axis in 0..2 {
                    let s = if vp[axis] < 0.0 { -1.0 } else { 1.0 };
                    let (prev, cur) = (s * vp[axis], s * vc[axis]);
                    let over = cur - (1.0 + a) * prev;
                    let under = (1.0 - a) * prev - cur;
                    band.see(over.max(under), || format!("k={k} auv={} axis={axis}", n + 1));
                }
            }
        }
    }
    rows.push(rate.row("C1_14 heading rate", 1e-12, false));
    rows.push(band.row("C2_3/C2_4 heading band", opts.linear_tol, false));

    let mut a2u_ring = Worst::new();
    let mut upper = Worst::new();
    let mut lower = Worst::new();
    for k in 1..=kk {
        let sel = graphs.a2u[k - 1].selected;
        let d = traj.usv_offset(k, sel).norm();
        let lo = w.d_s - w.d_t;
        // Half-open ring: (d_s - d_t, d_s].
        let v = (d - w.d_s).max(lo - d);
        a2u_ring.see(v, || format!("k={k} auv={} dist={d:.3}", sel + 1));
        // AUV positions at the first step are fixed by the initial state.
        if k == 1 {
            continue;
        }
        for &(i, j) in &graphs.a2a[k - 1].edges {
            let d = (traj.position(k, i) - traj.position(k, j)).norm();
            upper.see(d - w.d_s, || format!("k={k} edge=({},{}) dist={d:.3}", i + 1, j + 1));
            lower.see(lo - d, || format!("k={k} edge=({},{}) dist={d:.3}", i + 1, j + 1));
        }
    }
    let mut ring_row = a2u_ring.row("C5_2 surface link ring", opts.ball_tol, false);
    ring_row.passed = ring_row.worst < opts.ball_tol;
    rows.push(ring_row);
    rows.push(upper.row("C5_3 AUV link range", opts.ball_tol, false));
    rows.push(lower.row("C5_3 AUV link lower (note)", opts.ball_tol, true));

    ValidationReport { rows }
}

/// Surge speed and heading columns of a velocity, blank at zero speed.
fn heading_cells(vx: f64, vy: f64) -> (String, String) {
    match recover_heading_surge(&Vector3::new(vx, vy, 0.0)) {
        Ok((s, h)) => (format!("{h:?}"), format!("{s:?}")),
        Err(_) => (String::new(), format!("{:?}", 0.0)),
    }
}

pub const TRAJECTORY_HEADER: &str = "horizon,k,body_id,x,y,z,Vx,Vy,Vz,Ux,Uy,Uz,psi,vsurge";

/// CSV rows for the given horizons (1-based horizon numbers); body 0 is the
/// surface vehicle, whose velocity columns hold its commanded velocity.
pub fn trajectory_csv(horizons: &[(usize, &Trajectory)]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    let f = |v: f64| format!("{v:?}");
    for &(h, t) in horizons {
        let kk = t.k_steps();
        for k in 0..=kk {
            let p = t.usv(k);
            let (vx, vy, ux, uy) = if k < kk {
                let u = t.usv_input(k);
                (f(u.x), f(u.y), f(u.x), f(u.y))
            } else {
                Default::default()
            };
            let (psi, surge) = if k < kk {
                let u = t.usv_input(k);
                heading_cells(u.x, u.y)
            } else {
                Default::default()
            };
            writeln!(s, "{h},{k},0,{},{},,{vx},{vy},,{ux},{uy},,{psi},{surge}", f(p.x), f(p.y)).unwrap();
            for n in 0..t.n_auv {
                let p = t.position(k, n);
                let v = t.velocity(k, n);
                let u = if k < kk {
                    let u = t.input(k, n);
                    format!("{},{},{}", f(u.x), f(u.y), f(u.z))
                } else {
                    ",,".to_string()
                };
                let (psi, surge) = heading_cells(v.x, v.y);
                writeln!(
                    s,
                    "{h},{k},{},{},{},{},{},{},{},{u},{psi},{surge}",
                    n + 1,
                    f(p.x),
                    f(p.y),
                    f(p.z),
                    f(v.x),
                    f(v.y),
                    f(v.z)
                )
                .unwrap();
            }
        }
    }
    s
}

/// Parses [`trajectory_csv`] output back into `(horizon, trajectory)` pairs.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<(usize, Trajectory)>, MpcError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(MpcError::Parse {
                line: 1,
                reason: format!("expected header `{TRAJECTORY_HEADER}`"),
            });
        }
    }
    type Row = (usize, usize, usize, Vec<Option<f64>>);
    let mut rows: Vec<Row> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| MpcError::Parse { line: i + 1, reason };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 14 {
            return Err(err(format!("expected 14 columns, found {}", cells.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| err(format!("bad integer `{s}`: {e}")));
        let (h, k, b) = (int(cells[0])?, int(cells[1])?, int(cells[2])?);
        let vals = cells[3..12]
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|e| err(format!("bad number `{c}`: {e}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((h, k, b, vals));
    }
    let mut horizons: BTreeMap<usize, Vec<Row>> = BTreeMap::new();
    for r in rows {
        horizons.entry(r.0).or_default().push(r);
    }
    let mut out = Vec::new();
    for (h, rows) in horizons {
        let kk = rows.iter().map(|r| r.1).max().unwrap_or(0);
        let nn = rows.iter().map(|r| r.2).max().unwrap_or(0);
        if kk == 0 || nn == 0 {
            return Err(MpcError::Parse {
                line: 0,
                reason: format!("horizon {h} has no steps or no AUVs"),
            });
        }
        let nx = 2 + 6 * nn;
        let nu = 2 + 3 * nn;
        let mut states = vec![DVector::from_element(nx, f64::NAN); kk + 1];
        let mut inputs = vec![DVector::from_element(nu, f64::NAN); kk];
        for (_, k, b, v) in &rows {
            let need = |i: usize| {
                v[i].ok_or_else(|| MpcError::Parse {
                    line: 0,
                    reason: format!("horizon {h} step {k} body {b}: missing column {i}"),
                })
            };
            if *b == 0 {
                states[*k][0] = need(0)?;
                states[*k][1] = need(1)?;
                if *k < kk {
                    inputs[*k][0] = need(6)?;
                    inputs[*k][1] = need(7)?;
                }
            } else {
                let n = b - 1;
                for d in 0..3 {
                    states[*k][StackedSystem::pos_index(n) + d] = need(d)?;
                    states[*k][StackedSystem::vel_index(n) + d] = need(3 + d)?;
                    if *k < kk {
                        inputs[*k][StackedSystem::input_index(n) + d] = need(6 + d)?;
                    }
                }
            }
        }
        if states.iter().chain(&inputs).any(|v| v.iter().any(|x| x.is_nan())) {
            return Err(MpcError::Parse {
                line: 0,
                reason: format!("horizon {h} is missing rows"),
            });
        }
        out.push((h, Trajectory { n_auv: nn, states, inputs }));
    }
    Ok(out)
}
