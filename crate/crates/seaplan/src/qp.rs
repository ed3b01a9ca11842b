//! Convex quadratic programs with affine and Euclidean-ball constraints,
//! solved by operator splitting.
//!
//! The program is
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  A_eq x = b_eq
//!             A_in x ≤ b_in
//!             ‖F_i x − c_i‖₂ ≤ r_i   for every ball i
//! ```
//!
//! All constraints are stacked as `A x = z` with `z` restricted to a product
//! of simple sets, and the iteration alternates a regularized linear solve
//! in `x` with closed-form projections in `z`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CsrMatrix, convert::serial::convert_dense_csr};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("regularized system is not positive definite")]
    Factorization,
}

/// `‖map · x − center‖₂ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub map: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(map: DMatrix<f64>, center: DVector<f64>, radius: f64) -> Self {
        Self { map, center, radius }
    }

    /// Ball on the sub-vector `x[indices]` of an `n`-vector.
    pub fn on_indices(n: usize, indices: &[usize], center: DVector<f64>, radius: f64) -> Self {
        let mut map = DMatrix::zeros(indices.len(), n);
        for (r, &i) in indices.iter().enumerate() {
            map[(r, i)] = 1.0;
        }
        Self { map, center, radius }
    }

    pub fn dim(&self) -> usize {
        self.map.nrows()
    }

    /// `‖map · x − center‖ − radius`; nonpositive when satisfied.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.map * x - &self.center).norm() - self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub balls: Vec<Ball>,
}

impl ConvexProgram {
    /// Unconstrained program in `n` variables.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            balls: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_ball(mut self, ball: Ball) -> Self {
        self.balls.push(ball);
        self
    }

    /// Box `lo ≤ x ≤ hi` appended as inequality rows.
    pub fn with_box(mut self, lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let n = self.n();
        let old = self.a_in.nrows();
        let mut a = DMatrix::zeros(old + 2 * n, n);
        let mut b = DVector::zeros(old + 2 * n);
        a.rows_mut(0, old).copy_from(&self.a_in);
        b.rows_mut(0, old).copy_from(&self.b_in);
        for i in 0..n {
            a[(old + 2 * i, i)] = 1.0;
            b[old + 2 * i] = hi[i];
            a[(old + 2 * i + 1, i)] = -1.0;
            b[old + 2 * i + 1] = -lo[i];
        }
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest constraint violation at `x` (zero when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        let ineq = (&self.a_in * x - &self.b_in).iter().fold(0.0_f64, |a, &v| a.max(v));
        let ball = self.balls.iter().fold(0.0_f64, |a, b| a.max(b.violation(x)));
        eq.max(ineq).max(ball)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let dim = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(QpError::DimensionMismatch { what, expected, got })
            }
        };
        dim("hessian rows", n, self.h.nrows())?;
        dim("hessian columns", n, self.h.ncols())?;
        dim("equality columns", n, self.a_eq.ncols())?;
        dim("equality rhs", self.a_eq.nrows(), self.b_eq.len())?;
        dim("inequality columns", n, self.a_in.ncols())?;
        dim("inequality rhs", self.a_in.nrows(), self.b_in.len())?;
        for b in &self.balls {
            dim("ball columns", n, b.map.ncols())?;
            dim("ball center", b.map.nrows(), b.center.len())?;
            if !(b.radius > 0.0 && b.radius.is_finite()) {
                return Err(QpError::InvalidProgram(format!("ball radius {} is not positive", b.radius)));
            }
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * self.h.amax().max(1.0) {
            return Err(QpError::InvalidProgram(format!("hessian asymmetry {asym:e}")));
        }
        let finite = self.h.iter().chain(self.g.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter());
        let finite = finite.chain(self.a_in.iter()).chain(self.b_in.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProgram("non-finite program data".into()));
        }
        Ok(())
    }

    /// Plain-text dump of every matrix, for cross-checking with external tools.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        let mat = |s: &mut String, name: &str, m: &DMatrix<f64>| {
            writeln!(s, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        };
        let vec = |s: &mut String, name: &str, v: &DVector<f64>| {
            writeln!(s, "{name} {}", v.len()).unwrap();
            let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        };
        mat(&mut s, "H", &self.h);
        vec(&mut s, "g", &self.g);
        mat(&mut s, "A_eq", &self.a_eq);
        vec(&mut s, "b_eq", &self.b_eq);
        mat(&mut s, "A_in", &self.a_in);
        vec(&mut s, "b_in", &self.b_in);
        for (i, b) in self.balls.iter().enumerate() {
            writeln!(s, "ball {i} radius {:?}", b.radius).unwrap();
            mat(&mut s, "F", &b.map);
            vec(&mut s, "c", &b.center);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleDetected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    /// Multipliers for the stacked rows `[A_eq; A_in; F_1; F_2; ...]`.
    pub y: DVector<f64>,
    pub status: SolveStatus,
    /// Primal residual relative to the problem scale; `≤ tol` when optimal.
    pub primal_residual: f64,
    /// Dual residual relative to the problem scale; `≤ tol` when optimal.
    pub dual_residual: f64,
    pub primal_residual_abs: f64,
    pub dual_residual_abs: f64,
    pub iterations: usize,
    pub objective: f64,
    /// Fixed-point residual per iteration, when requested.
    pub merit: Vec<f64>,
    /// Iterations at which the step parameter changed.
    pub rho_updates: Vec<usize>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Primal, dual and slack iterates for a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Residuals are checked every this many iterations.
    pub check_every: usize,
    pub scaling_iters: usize,
    pub record_merit: bool,
    pub infeasibility_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            check_every: 10,
            scaling_iters: 15,
            record_merit: false,
            infeasibility_tol: 1e-7,
        }
    }
}

/// Euclidean projection onto `{v : ‖v − center‖ ≤ radius}`.
pub fn project_ball(v: &DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = v - center;
    let n = d.norm();
    if n <= radius {
        v.clone()
    } else {
        center + d * (radius / n)
    }
}

pub fn solve(p: &ConvexProgram, tol: f64, max_iter: usize) -> Result<SolveReport, QpError> {
    solve_with(
        p,
        &SolveOptions {
            tol,
            max_iter,
            ..SolveOptions::default()
        },
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowSet {
    Eq,
    Le,
    /// Ball block starting at this row: index into `balls`.
    Ball(usize),
}

struct Stacked {
    a: CsrMatrix<f64>,
    at: CsrMatrix<f64>,
    h: CsrMatrix<f64>,
    g: DVector<f64>,
    /// Right-hand sides for `Eq`/`Le` rows (scaled).
    b: DVector<f64>,
    kinds: Vec<RowSet>,
    /// `(first row, len, center, radius)` per ball, scaled.
    balls: Vec<(usize, usize, DVector<f64>, f64)>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn csr_mul(m: &CsrMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &a) in row.col_indices().iter().zip(row.values()) {
            s += a * v[j];
        }
        out[i] = s;
    }
    out
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

fn stack(p: &ConvexProgram, iters: usize) -> Stacked {
    let n = p.n();
    let m_ball: usize = p.balls.iter().map(Ball::dim).sum();
    let m = p.a_eq.nrows() + p.a_in.nrows() + m_ball;

    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut kinds = Vec::with_capacity(m);
    let mut row = 0;
    a.rows_mut(row, p.a_eq.nrows()).copy_from(&p.a_eq);
    b.rows_mut(row, p.a_eq.nrows()).copy_from(&p.b_eq);
    kinds.extend(std::iter::repeat_n(RowSet::Eq, p.a_eq.nrows()));
    row += p.a_eq.nrows();
    a.rows_mut(row, p.a_in.nrows()).copy_from(&p.a_in);
    b.rows_mut(row, p.a_in.nrows()).copy_from(&p.b_in);
    kinds.extend(std::iter::repeat_n(RowSet::Le, p.a_in.nrows()));
    row += p.a_in.nrows();
    let mut balls = Vec::with_capacity(p.balls.len());
    for (k, ball) in p.balls.iter().enumerate() {
        a.rows_mut(row, ball.dim()).copy_from(&ball.map);
        kinds.extend(std::iter::repeat_n(RowSet::Ball(k), ball.dim()));
        balls.push((row, ball.dim(), ball.center.clone(), ball.radius));
        row += ball.dim();
    }

    // Modified Ruiz equilibration; ball blocks share one factor so the
    // scaled set stays a ball.
    let mut h = p.h.clone();
    let mut g = p.g.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    let clip = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let hn = h.column(j).amax();
            let an = if m > 0 { a.column(j).amax() } else { 0.0 };
            dd[j] = 1.0 / clip(hn.max(an)).sqrt();
        }
        let mut de = DVector::zeros(m);
        for i in 0..m {
            de[i] = a.row(i).amax();
        }
        for &(start, len, _, _) in &balls {
            let mx = de.rows(start, len).amax();
            de.rows_mut(start, len).fill(mx);
        }
        de.apply(|v| *v = 1.0 / clip(*v).sqrt());
        for j in 0..n {
            h.column_mut(j).scale_mut(dd[j]);
            h.row_mut(j).scale_mut(dd[j]);
            a.column_mut(j).scale_mut(dd[j]);
        }
        for i in 0..m {
            a.row_mut(i).scale_mut(de[i]);
        }
        g.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);

        let mean_h = if n > 0 {
            (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64
        } else {
            1.0
        };
        let gamma = 1.0 / clip(mean_h.max(g.amax()));
        h *= gamma;
        g *= gamma;
        c *= gamma;
    }
    b.component_mul_assign(&e);
    for (start, _, center, radius) in balls.iter_mut() {
        let f = e[*start];
        *center *= f;
        *radius *= f;
    }

    let a_csr = convert_dense_csr(&a);
    let at = a_csr.transpose();
    Stacked {
        a: a_csr,
        at,
        h: convert_dense_csr(&h),
        g,
        b,
        kinds,
        balls,
        d,
        e,
        c,
    }
}

fn project(s: &Stacked, v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for (i, k) in s.kinds.iter().enumerate() {
        match k {
            RowSet::Eq => out[i] = s.b[i],
            RowSet::Le => out[i] = v[i].min(s.b[i]),
            RowSet::Ball(_) => {}
        }
    }
    for (start, len, center, radius) in &s.balls {
        let seg = v.rows(*start, *len).into_owned();
        out.rows_mut(*start, *len).copy_from(&project_ball(&seg, center, *radius));
    }
    out
}

/// Support function of the constraint set at `w`; `None` when unbounded.
fn support(s: &Stacked, w: &DVector<f64>, eps: f64) -> Option<f64> {
    let mut total = 0.0;
    for (i, k) in s.kinds.iter().enumerate() {
        match k {
            RowSet::Eq => total += s.b[i] * w[i],
            RowSet::Le => {
                if w[i] < -eps {
                    return None;
                }
                total += s.b[i] * w[i].max(0.0);
            }
            RowSet::Ball(_) => {}
        }
    }
    for (start, len, center, radius) in &s.balls {
        let seg = w.rows(*start, *len);
        total += center.dot(&seg) + radius * seg.norm();
    }
    Some(total)
}

fn row_rho(s: &Stacked, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        s.kinds.len(),
        s.kinds.iter().map(|k| if *k == RowSet::Eq { 1e3 * rho } else { rho }),
    )
}

fn factor(
    s: &Stacked,
    rho_vec: &DVector<f64>,
    sigma: f64,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, QpError> {
    let n = s.g.len();
    let mut kkt = DMatrix::zeros(n, n);
    for (i, row) in s.h.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            kkt[(i, j)] += v;
        }
    }
    for i in 0..n {
        kkt[(i, i)] += sigma;
    }
    for (r, row) in s.a.row_iter().enumerate() {
        let (idx, vals) = (row.col_indices(), row.values());
        let rr = rho_vec[r];
        for (p, &j) in idx.iter().enumerate() {
            let vj = rr * vals[p];
            for (q, &k) in idx.iter().enumerate() {
                kkt[(j, k)] += vj * vals[q];
            }
        }
    }
    nalgebra::Cholesky::new(kkt).ok_or(QpError::Factorization)
}

/// Operator-splitting solve with residual-balanced step adaptation.
pub fn solve_with(
    p: &ConvexProgram,
    opts: &SolveOptions,
    warm: Option<&WarmStart>,
) -> Result<SolveReport, QpError> {
    p.validate()?;
    let n = p.n();
    let s = stack(p, opts.scaling_iters);
    let m = s.kinds.len();

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(m);
    if let Some(w) = warm {
        if w.x.len() == n {
            x = w.x.component_div(&s.d);
        }
        if w.y.len() == m {
            y = w.y.component_div(&s.e) * s.c;
        }
    }
    let mut z = project(&s, &csr_mul(&s.a, &x));

    let mut rho = opts.rho;
    let mut rho_vec = row_rho(&s, rho);
    let mut chol = factor(&s, &rho_vec, opts.sigma)?;
    let mut merit = Vec::new();
    let mut rho_updates = Vec::new();

    let d_inv = s.d.map(|v| 1.0 / v);
    let e_inv = s.e.map(|v| 1.0 / v);

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut res = (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for it in 1..=opts.max_iter {
        iterations = it;
        let x_prev = x.clone();
        let z_prev = z.clone();
        let y_prev = y.clone();

        let rhs = &x * opts.sigma - &s.g + csr_mul(&s.at, &(rho_vec.component_mul(&z) - &y));
        let x_t = chol.solve(&rhs);
        let z_t = csr_mul(&s.a, &x_t);
        x = &x_t * opts.alpha + &x_prev * (1.0 - opts.alpha);
        let z_hat = &z_t * opts.alpha + &z_prev * (1.0 - opts.alpha);
        z = project(&s, &(&z_hat + y.component_div(&rho_vec)));
        y += rho_vec.component_mul(&(&z_hat - &z));

        if opts.record_merit {
            let dx = (&x - &x_prev).norm_squared() * opts.sigma;
            let v_new = &z + y.component_div(&rho_vec);
            let v_old = &z_prev + y_prev.component_div(&rho_vec);
            let dv = (v_new - v_old).component_mul(&rho_vec.map(f64::sqrt)).norm_squared();
            merit.push((dx + dv).sqrt());
        }

        if it % opts.check_every != 0 && it != opts.max_iter {
            continue;
        }

        let ax = csr_mul(&s.a, &x);
        let hx = csr_mul(&s.h, &x);
        let aty = csr_mul(&s.at, &y);
        let r_prim = inf_norm(&(&ax - &z).component_mul(&e_inv));
        let r_dual = inf_norm(&(&hx + &s.g + &aty).component_mul(&d_inv)) / s.c;
        let p_scale = inf_norm(&ax.component_mul(&e_inv)).max(inf_norm(&z.component_mul(&e_inv)));
        let d_scale = inf_norm(&hx.component_mul(&d_inv))
            .max(inf_norm(&aty.component_mul(&d_inv)))
            .max(inf_norm(&s.g.component_mul(&d_inv)))
            / s.c;
        let rel_p = r_prim / (1.0 + p_scale);
        let rel_d = r_dual / (1.0 + d_scale);
        res = (rel_p, rel_d, r_prim, r_dual);
        if rel_p <= opts.tol && rel_d <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }

        // Certificate of primal infeasibility from the dual increment.
        let dy = &y - &y_prev;
        let dy_norm = inf_norm(&dy.component_mul(&s.e));
        if dy_norm > 1e-12 {
            let eps = opts.infeasibility_tol * dy_norm;
            let at_dy = inf_norm(&csr_mul(&s.at, &dy).component_mul(&d_inv));
            if at_dy <= eps {
                if let Some(sv) = support(&s, &dy, eps) {
                    if sv < -eps {
                        status = SolveStatus::InfeasibleDetected;
                        break;
                    }
                }
            }
        }

        if opts.adaptive_rho && it % (5 * opts.check_every) == 0 {
            let sp = inf_norm(&ax).max(inf_norm(&z)).max(1e-12);
            let sd = inf_norm(&hx).max(inf_norm(&aty)).max(inf_norm(&s.g)).max(1e-12);
            let num = inf_norm(&(&ax - &z)) / sp;
            let den = inf_norm(&(&hx + &s.g + &aty)) / sd;
            if num > 0.0 && den > 0.0 {
                let new_rho = (rho * (num / den).sqrt()).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rho_vec = row_rho(&s, rho);
                    chol = factor(&s, &rho_vec, opts.sigma)?;
                    rho_updates.push(it);
                }
            }
        }
    }

    let x_out = x.component_mul(&s.d);
    let y_out = y.component_mul(&s.e) / s.c;
    Ok(SolveReport {
        objective: p.objective(&x_out),
        x: x_out,
        y: y_out,
        status,
        primal_residual: res.0,
        dual_residual: res.1,
        primal_residual_abs: res.2,
        dual_residual_abs: res.3,
        iterations,
        merit,
        rho_updates,
    })
}
