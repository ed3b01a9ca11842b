//! Sampling comparator: a beam-pruned random tree of waypoints for a single
//! AUV, with the surface vehicle following the AUV's horizontal track.

use std::time::Instant;

use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graphs::{A2aTree, A2uChoice, GraphPlan};
use crate::mpc::{MpcError, ObjectiveRecord, StackedSystem, Trajectory, evaluate_objectives, rollout};
use crate::planner::{PlanError, Scenario, sample_initial_positions};
use crate::vehicle::velocity_transition;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid sampling configuration `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("no valid sample at step {k}")]
    NoValidSample { k: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// How candidate waypoints are drawn around a frontier node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    /// Uniform in the ball reachable in one step at full speed.
    Uniform,
    /// Always the node advanced by one step at this velocity.
    Fixed(Vector3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    /// Valid samples wanted per frontier node and step.
    pub samples_per_step: usize,
    pub seed: u64,
    /// Frontier nodes kept per step.
    pub beam_width: usize,
    /// Draws allowed per wanted sample before a node gives up.
    pub attempts_per_sample: usize,
    pub draw: Draw,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples_per_step: 100,
            seed: 0,
            beam_width: 500,
            attempts_per_sample: 100,
            draw: Draw::Uniform,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |field, reason: &str| {
            Err(BaselineError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if self.samples_per_step < 1 {
            return bad("samples_per_step", "must be at least 1");
        }
        if self.beam_width < 1 {
            return bad("beam_width", "must be at least 1");
        }
        if self.attempts_per_sample < 1 {
            return bad("attempts_per_sample", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub trajectory: Trajectory,
    /// Graphs of the single-AUV plan: the AUV is always the surface link.
    pub graphs: GraphPlan,
    /// `w1 OF1_1 + w2 OF1_2 + w8_2 OF1_8_2`.
    pub score: f64,
    pub objectives: ObjectiveRecord,
    /// Wall-clock seconds.
    pub elapsed: f64,
    pub samples_drawn: usize,
    pub nodes_kept: usize,
}

#[derive(Debug, Clone)]
struct Node {
    p: Vector3<f64>,
    /// Velocity that carried the AUV here.
    v: Vector3<f64>,
    usv: Vector2<f64>,
    cost: f64,
    parent: usize,
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-r..=r), rng.random_range(-r..=r), rng.random_range(-r..=r));
        if v.norm() <= r {
            return v;
        }
    }
}

fn band_ok(prev: &Vector3<f64>, cur: &Vector3<f64>, a: f64) -> bool {
    (0..2).all(|axis| {
        let s = if prev[axis] < 0.0 { -1.0 } else { 1.0 };
        let (p, c) = (s * prev[axis], s * cur[axis]);
        c >= (1.0 - a) * p && c <= (1.0 + a) * p
    })
}

/// Least-energy last velocity: free decay with the horizontal components
/// pulled back into the heading band.
fn final_velocity(phi: &nalgebra::Matrix3<f64>, prev: &Vector3<f64>, a: f64) -> Vector3<f64> {
    let mut v = phi * prev;
    for axis in 0..2 {
        let (lo, hi) = if prev[axis] < 0.0 {
            ((1.0 + a) * prev[axis], (1.0 - a) * prev[axis])
        } else {
            ((1.0 - a) * prev[axis], (1.0 + a) * prev[axis])
        };
        v[axis] = v[axis].clamp(lo, hi);
    }
    v
}

/// Beam search over random waypoint trees for a one-AUV scenario.
pub fn rrt_like_plan(sc: &Scenario, cfg: &SamplingConfig) -> Result<BaselineResult, BaselineError> {
    cfg.validate()?;
    if sc.n_auv != 1 {
        return Err(BaselineError::InvalidConfig {
            field: "n_auv",
            reason: format!("the sampling baseline plans a single AUV, got {}", sc.n_auv),
        });
    }
    sc.validate()?;
    let started = Instant::now();
    let (p0, v0) = match &sc.auv_start {
        Some(s) => s[0],
        None => {
            let p = sample_initial_positions(&sc.usv_start, sc.weights.d_s, 1, sc.seed, &sc.map, sc.keep_out())?;
            (p[0], Vector3::zeros())
        }
    };
    let params = &sc.params[0];
    let w = &sc.weights;
    let delta = sc.delta;
    let kk = sc.k_steps;
    let phi = velocity_transition(params, delta).map_err(MpcError::from)?;
    let reach = delta * params.v_max;
    let a = params.band_ratio();
    let margin = sc.profile.margin;
    let target = w.target_point();
    let heuristic = |usv: &Vector2<f64>| target.map_or(0.0, |t| w.w8_2 * (usv - t).norm_squared());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // The first step only carries the initial velocity.
    let p1 = p0 + v0 * delta;
    let usv1 = Vector2::new(p1.x, p1.y);
    let usv_in = (usv1 - sc.usv_start) / delta;
    let root = Node {
        p: p1,
        v: v0,
        usv: usv1,
        cost: w.w1 * usv_in.norm_squared() + w.w2 * p1.z,
        parent: 0,
    };
    let mut levels: Vec<Vec<Node>> = vec![vec![root]];
    let mut drawn = 0usize;
    for k in 2..=kk {
        let frontier = levels.last().expect("root level exists");
        let mut children = Vec::new();
        for (idx, node) in frontier.iter().enumerate() {
            let mut accepted = 0;
            let budget = cfg.samples_per_step * cfg.attempts_per_sample;
            for _ in 0..budget {
                if accepted == cfg.samples_per_step {
                    break;
                }
                drawn += 1;
                let step = match cfg.draw {
                    Draw::Uniform => uniform_in_ball(&mut rng, reach),
                    Draw::Fixed(v) => v * delta,
                };
                let p = node.p + step;
                let v = step / delta;
                if v.norm() > params.v_max || p.z > -w.eps_surface {
                    continue;
                }
                if !sc.map.contains(p.x, p.y) || sc.map.clearance_margin(&p).map_err(MpcError::from)? < margin {
                    continue;
                }
                // The band links consecutive velocities after the first free one.
                if k >= 3 && !band_ok(&node.v, &v, a) {
                    continue;
                }
                if p.z.abs() > w.d_max || (k == kk && p.z.abs() > w.d_s) {
                    continue;
                }
                let u = v - phi * node.v;
                let usv = Vector2::new(p.x, p.y);
                let usv_u = (usv - node.usv) / delta;
                let mut cost = node.cost + w.w1 * (u.norm_squared() + usv_u.norm_squared()) + w.w2 * p.z;
                if k == kk {
                    cost += w.w1 * (final_velocity(&phi, &v, a) - phi * v).norm_squared();
                }
                children.push(Node {
                    p,
                    v,
                    usv,
                    cost,
                    parent: idx,
                });
                accepted += 1;
            }
        }
        if children.is_empty() {
            return Err(BaselineError::NoValidSample { k });
        }
        children.sort_by(|x, y| (x.cost + heuristic(&x.usv)).total_cmp(&(y.cost + heuristic(&y.usv))));
        children.truncate(cfg.beam_width);
        levels.push(children);
    }

    let mut path = Vec::with_capacity(kk);
    let mut idx = 0;
    for level in levels.iter().rev() {
        let n = &level[idx];
        path.push(n.clone());
        idx = n.parent;
    }
    path.reverse();

    let sys = sc.system()?;
    let x0 = sys.pack_state(&sc.usv_start, &[(p0, v0)])?;
    // path[m] sits at step m + 1.
    let mut vel: Vec<Vector3<f64>> = std::iter::once(v0).chain(path[1..].iter().map(|n| n.v)).collect();
    vel.push(final_velocity(&phi, &vel[kk - 1], a));
    let usv: Vec<Vector2<f64>> = std::iter::once(sc.usv_start).chain(path.iter().map(|n| n.usv)).collect();
    let inputs: Vec<DVector<f64>> = (0..kk)
        .map(|k| {
            let mut u = DVector::zeros(sys.nu());
            let du = (usv[k + 1] - usv[k]) / delta;
            u[0] = du.x;
            u[1] = du.y;
            u.fixed_rows_mut::<3>(StackedSystem::input_index(0))
                .copy_from(&(vel[k + 1] - phi * vel[k]));
            u
        })
        .collect();
    let trajectory = rollout(&sys, &x0, &inputs)?;
    let graphs = GraphPlan {
        a2u: vec![A2uChoice { selected: 0, n: 1 }; kk],
        a2a: vec![A2aTree { n: 1, edges: Vec::new() }; kk],
    };
    let objectives = evaluate_objectives(&trajectory, &graphs, w);
    Ok(BaselineResult {
        score: objectives.composite,
        objectives,
        trajectory,
        graphs,
        elapsed: started.elapsed().as_secs_f64(),
        samples_drawn: drawn,
        nodes_kept: levels.iter().map(Vec::len).sum(),
    })
}

/// Predicted work of an unpruned sampling tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    /// Total samples `sum_{k=1..K} r^k`.
    pub samples: f64,
    /// Sorting term `(M N S) log(M N S)`.
    pub sort_term: f64,
    /// Tree term `(2N)^(K-1)`.
    pub tree_term: f64,
    pub total: f64,
    /// True when some term exceeded the representable range and was clamped.
    pub saturated: bool,
}

pub fn sampling_cost_model(
    n: usize,
    k: usize,
    samples_per_step: usize,
    objectives: usize,
) -> Result<CostEstimate, BaselineError> {
    for (field, v) in [
        ("n", n),
        ("k", k),
        ("samples_per_step", samples_per_step),
        ("objectives", objectives),
    ] {
        if v < 1 {
            return Err(BaselineError::InvalidConfig {
                field,
                reason: "must be at least 1".into(),
            });
        }
    }
    let mut saturated = false;
    let mut clamp = |v: f64| {
        if v.is_finite() {
            v
        } else {
            saturated = true;
            f64::MAX
        }
    };
    let r = samples_per_step as f64;
    let samples = clamp((1..=k).map(|i| r.powi(i as i32)).sum());
    let mns = clamp((objectives * n) as f64 * samples);
    let sort_term = clamp(mns * mns.ln());
    let tree_term = clamp((2.0 * n as f64).powi(k as i32 - 1));
    let total = clamp(sort_term + tree_term);
    Ok(CostEstimate {
        samples,
        sort_term,
        tree_term,
        total,
        saturated,
    })
}
