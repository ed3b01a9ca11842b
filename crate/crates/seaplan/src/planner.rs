//! Three-stage horizon planner and mission chaining.
//!
//! Each horizon solves the relaxed program with floor-profile refreshes,
//! picks the surface link and the longest AUV path on the resulting
//! waypoints, then re-solves with ring constraints on the selected links.
//! Selected links that lose line of sight get their range shrunk and the
//! third stage is repeated.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graphs::{DEFAULT_EXACT_THRESHOLD, GraphPlan, distance_matrix, solve_a2a, solve_a2u};
use crate::mpc::{
    DroppedBound, EdgeRanges, FloorProfile, MpcError, ObjectiveRecord, PlanWeights, ProfileOptions, StackedSystem,
    Trajectory, ValidationOptions, ValidationReport, assemble_p5, build_stacked, evaluate_objectives,
    floor_profile_iterate, floor_requirement, heading_reference, merge_floor, rollout_stacked, validate_constraints,
    waypoints_clear,
};
use crate::qp::{SolveStatus, WarmStart, solve_with};
use crate::terrain::{DEFAULT_LOS_RESOLUTION, SeafloorMap, TerrainError};
use crate::vehicle::VehicleParams;

/// Draw budget of [`sample_initial_positions`] per requested AUV.
pub const SAMPLE_ATTEMPTS_PER_AUV: usize = 100_000;

/// Cost per metre of ring shortfall once lower bounds are softened.
pub const RING_PENALTY: f64 = 1.0;

/// Shortfall (m) below which a softened ring counts as met.
pub const RING_SLACK_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("initial sampling gave up after {attempts} draws: {reason}")]
    Sampling { attempts: usize, reason: String },
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Qp(#[from] crate::qp::QpError),
}

/// Everything needed to plan one horizon.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n_auv: usize,
    pub k_steps: usize,
    /// Sampling time (s).
    pub delta: f64,
    pub map: Arc<SeafloorMap>,
    pub params: Vec<VehicleParams>,
    pub weights: PlanWeights,
    pub usv_start: Vector2<f64>,
    /// Initial AUV `(position, velocity)` pairs; sampled from `seed` when absent.
    pub auv_start: Option<Vec<(Vector3<f64>, Vector3<f64>)>>,
    pub seed: u64,
    /// Line-of-sight sample spacing (m).
    pub los_resolution: f64,
    /// Range reduction per repair round (m).
    pub repair_step: f64,
    pub max_repair_rounds: usize,
    /// Re-linearizations allowed once ring lower bounds are softened.
    pub relinearize_rounds: usize,
    pub profile: ProfileOptions,
    pub exact_threshold: usize,
}

impl Scenario {
    pub fn new(map: Arc<SeafloorMap>, n_auv: usize, k_steps: usize) -> Self {
        let weights = PlanWeights::default();
        let repair_step = 10.0;
        Self {
            n_auv,
            k_steps,
            delta: 100.0,
            map,
            params: vec![VehicleParams::default(); n_auv],
            max_repair_rounds: (weights.d_s / repair_step).ceil() as usize,
            weights,
            usv_start: Vector2::zeros(),
            auv_start: None,
            seed: 0,
            los_resolution: DEFAULT_LOS_RESOLUTION,
            repair_step,
            relinearize_rounds: 4,
            profile: ProfileOptions::default(),
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
        }
    }

    pub fn system(&self) -> Result<StackedSystem, PlanError> {
        Ok(build_stacked(self.n_auv, &self.params, self.delta, self.k_steps)?)
    }

    /// Depth kept from the surface and from the floor when sampling starts.
    pub fn keep_out(&self) -> f64 {
        self.weights.eps_surface.max(self.profile.margin)
    }

    pub fn validation_options(&self) -> ValidationOptions {
        ValidationOptions {
            los_resolution: self.los_resolution,
            ..ValidationOptions::default()
        }
    }

    /// Checks the parameters and, when present, the initial states.
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Scenario(m));
        self.weights.validate()?;
        if self.params.len() != self.n_auv {
            return bad(format!("{} vehicle parameter sets for {} AUVs", self.params.len(), self.n_auv));
        }
        if !(self.los_resolution > 0.0) {
            return bad(format!("los_resolution must be positive, got {}", self.los_resolution));
        }
        if !(self.repair_step > 0.0) {
            return bad(format!("repair_step must be positive, got {}", self.repair_step));
        }
        if !self.map.contains(self.usv_start.x, self.usv_start.y) {
            return bad(format!("surface vehicle start {:?} lies outside the map", self.usv_start.as_slice()));
        }
        if let Some(start) = &self.auv_start {
            if start.len() != self.n_auv {
                return bad(format!("{} initial AUV states for {} AUVs", start.len(), self.n_auv));
            }
            let usv = Vector3::new(self.usv_start.x, self.usv_start.y, 0.0);
            // Chained horizons start from solver output, so allow its tolerance.
            let tol = self.validation_options();
            for (n, (p, _)) in start.iter().enumerate() {
                let id = n + 1;
                let d = (p - usv).norm();
                if d > self.weights.d_s + tol.ball_tol {
                    return bad(format!("AUV {id} starts {d:.3} m from the surface vehicle, beyond d_s"));
                }
                if p.z > -self.weights.eps_surface + tol.linear_tol {
                    return bad(format!("AUV {id} starts at z = {:.3}, above -eps_surface", p.z));
                }
                if !self.map.contains(p.x, p.y) {
                    return bad(format!("AUV {id} starts outside the map"));
                }
                let m = self.map.clearance_margin(p)?;
                if m < -tol.linear_tol {
                    return bad(format!("AUV {id} starts {:.3} m inside the floor clearance", -m));
                }
            }
        }
        Ok(())
    }
}

/// Uniform draws from the solid lower half-ball of radius `d_s` under the
/// surface vehicle, rejecting points within `keep_out` of the surface or of
/// the floor clearance.
pub fn sample_initial_positions(
    usv: &Vector2<f64>,
    d_s: f64,
    n: usize,
    seed: u64,
    map: &SeafloorMap,
    keep_out: f64,
) -> Result<Vec<Vector3<f64>>, PlanError> {
    if !(d_s > 0.0) {
        return Err(PlanError::Scenario(format!("d_s must be positive, got {d_s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = SAMPLE_ATTEMPTS_PER_AUV * n.max(1);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= budget {
            return Err(PlanError::Sampling {
                attempts,
                reason: format!("only {} of {n} positions clear the floor", out.len()),
            });
        }
        attempts += 1;
        let off = Vector3::new(
            rng.random_range(-d_s..=d_s),
            rng.random_range(-d_s..=d_s),
            rng.random_range(-d_s..=0.0),
        );
        if off.norm() > d_s || off.z >= -keep_out.max(0.0) || off.z >= 0.0 {
            continue;
        }
        let p = Vector3::new(usv.x + off.x, usv.y + off.y, off.z);
        if !map.contains(p.x, p.y) || map.clearance_margin(&p)? < keep_out {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub step1: f64,
    pub a2u: f64,
    pub a2a: f64,
    pub step3: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.step1 + self.a2u + self.a2a + self.step3
    }
}

/// One range reduction made by the line-of-sight repair.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairEvent {
    pub round: usize,
    pub k: usize,
    pub edge: (usize, usize),
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub initial_state: DVector<f64>,
    pub trajectory: Trajectory,
    pub step1: Trajectory,
    pub graphs: GraphPlan,
    pub ranges: EdgeRanges,
    pub objectives: ObjectiveRecord,
    pub step1_objectives: ObjectiveRecord,
    pub validation: ValidationReport,
    pub timings: StageTimings,
    pub profile_iterations: usize,
    /// Floor-profile refreshes made inside the third stage.
    pub step3_refreshes: usize,
    pub repair_rounds: usize,
    pub repairs: Vec<RepairEvent>,
    pub dropped: Vec<DroppedBound>,
    /// Non-fatal remarks, such as softened ring bounds.
    pub notes: Vec<String>,
    pub flags: Vec<String>,
}

impl PlanResult {
    pub fn flagged(&self) -> bool {
        !self.flags.is_empty() || !self.validation.all_pass()
    }

    /// AUV `(position, velocity)` pairs at the last step.
    pub fn final_auvs(&self) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let k = self.trajectory.k_steps();
        (0..self.trajectory.n_auv)
            .map(|n| (self.trajectory.position(k, n), self.trajectory.velocity(k, n)))
            .collect()
    }
}

/// Selected AUV links whose segment is not clear, as `(k, i, j)`.
pub fn blocked_edges(
    map: &SeafloorMap,
    traj: &Trajectory,
    graphs: &GraphPlan,
    resolution: f64,
) -> Result<Vec<(usize, usize, usize)>, PlanError> {
    let mut out = Vec::new();
    for k in 1..=traj.k_steps() {
        for &(i, j) in &graphs.a2a[k - 1].edges {
            if !map.los_clear(&traj.position(k, i), &traj.position(k, j), resolution)? {
                out.push((k, i, j));
            }
        }
    }
    Ok(out)
}

/// Per-step graph selection on the waypoints of `traj`, timed separately
/// for the surface link and the AUV path.
fn select_graphs(traj: &Trajectory, exact_threshold: usize) -> (GraphPlan, f64, f64) {
    let kk = traj.k_steps();
    let start = Instant::now();
    let a2u = (1..=kk).map(|k| solve_a2u(&traj.positions(k), &traj.usv(k))).collect();
    let t_a2u = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let a2a = (1..=kk)
        .map(|k| solve_a2a(&distance_matrix(&traj.positions(k)), exact_threshold))
        .collect();
    let t_a2a = start.elapsed().as_secs_f64();
    (GraphPlan { a2u, a2a }, t_a2u, t_a2a)
}

struct Step3 {
    trajectory: Option<Trajectory>,
    ranges: EdgeRanges,
    refreshes: usize,
    rounds: usize,
    repairs: Vec<RepairEvent>,
    dropped: Vec<DroppedBound>,
    notes: Vec<String>,
    /// Re-linearizations used and largest ring shortfall of the kept soft solve.
    soft_shortfall: Option<(usize, f64)>,
    flags: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn run_step3(
    sc: &Scenario,
    sys: &StackedSystem,
    x0: &DVector<f64>,
    graphs: &GraphPlan,
    reference: &Trajectory,
    mut floor: FloorProfile,
    v_ref: &crate::mpc::HeadingReference,
    warm_x: &DVector<f64>,
) -> Result<Step3, PlanError> {
    let w = &sc.weights;
    let mut out = Step3 {
        trajectory: None,
        ranges: EdgeRanges::new(w.d_s),
        refreshes: 0,
        rounds: 0,
        repairs: Vec::new(),
        dropped: Vec::new(),
        notes: Vec::new(),
        soft_shortfall: None,
        flags: Vec::new(),
    };
    let mut reference = reference.clone();
    let mut relinearized = 0;
    let mut warm = WarmStart {
        x: warm_x.clone(),
        y: DVector::zeros(0),
    };
    loop {
        let asm = assemble_p5(sys, w, x0, graphs, &out.ranges, Some(&reference), &floor, v_ref)?;
        let report = solve_with(&asm.program, &sc.profile.solver, Some(&warm))?;
        if report.status != SolveStatus::Optimal && out.ranges.lower_penalty.is_none() {
            out.ranges.lower_penalty = Some(RING_PENALTY);
            out.notes.push(format!(
                "ring lower bounds infeasible ({:?}); softened with penalty {RING_PENALTY} per metre",
                report.status
            ));
            continue;
        }
        if report.status != SolveStatus::Optimal {
            out.flags.push(format!(
                "step 3 solver stopped with {:?} after {} repair rounds; kept the step 1 trajectory",
                report.status, out.rounds
            ));
            return Ok(out);
        }
        let traj = rollout_stacked(sys, x0, &asm.inputs(&report.x))?;
        warm = WarmStart {
            x: report.x.clone(),
            y: report.y.clone(),
        };
        out.dropped = asm.dropped.clone();
        if out.ranges.lower_penalty.is_some() {
            let slack = asm.max_slack(&report.x);
            if slack > RING_SLACK_TOL && relinearized < sc.relinearize_rounds {
                relinearized += 1;
                reference = traj;
                continue;
            }
            out.soft_shortfall = Some((relinearized, slack));
        }
        if !waypoints_clear(&sc.map, &traj)? {
            if out.refreshes < sc.profile.max_iter {
                out.refreshes += 1;
                merge_floor(&mut floor, &floor_requirement(&sc.map, &traj, sc.profile.margin)?);
                continue;
            }
            out.flags.push("step 3 waypoints still touch the floor after the refresh limit".into());
            out.trajectory = Some(traj);
            return Ok(out);
        }
        let blocked = blocked_edges(&sc.map, &traj, graphs, sc.los_resolution)?;
        if blocked.is_empty() {
            out.trajectory = Some(traj);
            return Ok(out);
        }
        // First-step AUV positions are fixed, so their links cannot be repaired.
        let (fixed, movable): (Vec<_>, Vec<_>) = blocked.into_iter().partition(|&(k, _, _)| k == 1);
        let exhausted = movable.iter().all(|&(k, i, j)| out.ranges.get(k, i, j) <= 0.0);
        if movable.is_empty() || exhausted || out.rounds >= sc.max_repair_rounds {
            let list: Vec<String> = fixed
                .iter()
                .chain(&movable)
                .map(|&(k, i, j)| format!("k={k} ({},{})", i + 1, j + 1))
                .collect();
            out.flags.push(format!(
                "line of sight still blocked after {} repair rounds: {}",
                out.rounds,
                list.join(", ")
            ));
            out.trajectory = Some(traj);
            return Ok(out);
        }
        out.rounds += 1;
        for (k, i, j) in movable {
            let range = out.ranges.shrink(k, i, j, sc.repair_step);
            out.repairs.push(RepairEvent {
                round: out.rounds,
                k,
                edge: (i, j),
                range,
            });
        }
    }
}

/// Plans one horizon from the scenario's initial state.
pub fn plan_horizon(sc: &Scenario) -> Result<PlanResult, PlanError> {
    sc.validate()?;
    let start = match &sc.auv_start {
        Some(s) => s.clone(),
        None => {
            let p = sample_initial_positions(&sc.usv_start, sc.weights.d_s, sc.n_auv, sc.seed, &sc.map, sc.keep_out())?;
            p.into_iter().map(|p| (p, Vector3::zeros())).collect()
        }
    };
    let sc = Scenario {
        auv_start: Some(start),
        ..sc.clone()
    };
    sc.validate()?;
    let start = sc.auv_start.as_ref().expect("initial states set above");
    let sys = sc.system()?;
    let x0 = sys.pack_state(&sc.usv_start, start)?;
    let w = &sc.weights;
    let v_ref = heading_reference(&sys, &x0, w.target_point());

    let t = Instant::now();
    let step1 = floor_profile_iterate(&sys, w, &x0, &sc.map, &v_ref, &sc.profile)?;
    let t_step1 = t.elapsed().as_secs_f64();
    let mut flags = Vec::new();
    if !step1.converged {
        flags.push(format!("floor profile did not settle in {} iterations", step1.iterations));
    }
    if step1.report.status != SolveStatus::Optimal {
        flags.push(format!("step 1 solver stopped with {:?}", step1.report.status));
    }

    let (graphs, t_a2u, t_a2a) = select_graphs(&step1.trajectory, sc.exact_threshold);

    let t = Instant::now();
    let step3 = run_step3(
        &sc,
        &sys,
        &x0,
        &graphs,
        &step1.trajectory,
        step1.floor.clone(),
        &v_ref,
        &step1.report.x,
    )?;
    let t_step3 = t.elapsed().as_secs_f64();
    flags.extend(step3.flags);
    let mut notes = step3.notes;
    if let Some((rounds, slack)) = step3.soft_shortfall {
        notes.push(format!("softened rings after {rounds} re-linearizations: largest shortfall {slack:.3} m"));
    }
    let trajectory = step3.trajectory.unwrap_or_else(|| step1.trajectory.clone());

    let validation = validate_constraints(&sys, &trajectory, &graphs, w, &sc.map, &sc.validation_options());
    Ok(PlanResult {
        initial_state: x0,
        objectives: evaluate_objectives(&trajectory, &graphs, w),
        step1_objectives: evaluate_objectives(&step1.trajectory, &graphs, w),
        trajectory,
        step1: step1.trajectory,
        graphs,
        ranges: step3.ranges,
        validation,
        timings: StageTimings {
            step1: t_step1,
            a2u: t_a2u,
            a2a: t_a2a,
            step3: t_step3,
        },
        profile_iterations: step1.iterations,
        step3_refreshes: step3.refreshes,
        repair_rounds: step3.rounds,
        repairs: step3.repairs,
        dropped: step3.dropped,
        notes,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub horizons: Vec<PlanResult>,
    /// True when planning stopped early on a flagged horizon.
    pub halted: bool,
}

impl Mission {
    pub fn flagged(&self) -> bool {
        self.halted || self.horizons.iter().any(PlanResult::flagged)
    }
}

/// Chains `horizons` receding horizons, each starting where the last ended.
pub fn plan_mission(sc: &Scenario, horizons: usize, continue_on_flag: bool) -> Result<Mission, PlanError> {
    if horizons < 1 {
        return Err(PlanError::Scenario("at least one horizon is required".into()));
    }
    let mut current = sc.clone();
    let mut out = Vec::with_capacity(horizons);
    for h in 0..horizons {
        let r = plan_horizon(&current)?;
        let flagged = r.flagged();
        let kk = r.trajectory.k_steps();
        current.usv_start = r.trajectory.usv(kk);
        current.auv_start = Some(r.final_auvs());
        out.push(r);
        if flagged && !continue_on_flag && h + 1 < horizons {
            return Ok(Mission {
                horizons: out,
                halted: true,
            });
        }
    }
    Ok(Mission {
        horizons: out,
        halted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{Bump, terrain_from_bumps};

    fn flat(depth: f64) -> Arc<SeafloorMap> {
        Arc::new(SeafloorMap::flat((-6000.0, -6000.0), (12_000.0, 12_000.0), 200.0, depth, 5.0).unwrap())
    }

    fn scenario(n: usize, k: usize, depth: f64) -> Scenario {
        let mut s = Scenario::new(flat(depth), n, k);
        s.weights.target = Some([2000.0, 800.0]);
        s.seed = 11;
        s
    }

    #[test]
    fn samples_lie_in_the_lower_half_ball() {
        let map = flat(-3000.0);
        let usv = Vector2::new(100.0, -50.0);
        let pts = sample_initial_positions(&usv, 150.0, 2000, 3, &map, 0.0).unwrap();
        for p in &pts {
            assert!((p - Vector3::new(usv.x, usv.y, 0.0)).norm() <= 150.0);
            assert!(p.z < 0.0);
        }
        assert_eq!(pts, sample_initial_positions(&usv, 150.0, 2000, 3, &map, 0.0).unwrap());
    }

    #[test]
    fn sample_mean_depth_matches_half_ball_centroid() {
        let map = flat(-3000.0);
        let pts = sample_initial_positions(&Vector2::zeros(), 150.0, 10_000, 21, &map, 0.0).unwrap();
        let n = pts.len() as f64;
        let mean = pts.iter().map(|p| p.z).sum::<f64>() / n;
        let var = pts.iter().map(|p| (p.z - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let centroid = -3.0 * 150.0 / 8.0;
        assert!((mean - centroid).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn sampling_exhausts_under_a_shallow_floor() {
        let map = flat(-3.0);
        assert!(matches!(
            sample_initial_positions(&Vector2::zeros(), 150.0, 1, 0, &map, 1.0),
            Err(PlanError::Sampling { .. })
        ));
    }

    #[test]
    fn flat_floor_plans_without_repairs_and_passes_validation() {
        let sc = scenario(3, 6, -400.0);
        let r = plan_horizon(&sc).unwrap();
        assert_eq!(r.repair_rounds, 0);
        assert!(r.validation.all_pass(), "{}", r.validation.to_table());
        assert!(!r.flagged(), "{:?}", r.flags);
        let o1 = r.step1_objectives.composite;
        assert!(r.objectives.composite >= o1 - 1e-6 * (1.0 + o1.abs()));
    }

    #[test]
    fn initial_state_inside_the_floor_is_rejected() {
        let mut sc = scenario(1, 4, -100.0);
        sc.auv_start = Some(vec![(Vector3::new(0.0, 0.0, -99.0), Vector3::zeros())]);
        assert!(matches!(plan_horizon(&sc), Err(PlanError::Scenario(_))));
    }

    #[test]
    fn mission_chains_final_states_and_is_deterministic() {
        let sc = scenario(2, 4, -400.0);
        let m = plan_mission(&sc, 2, false).unwrap();
        assert_eq!(m.horizons.len(), 2);
        assert_eq!(m.horizons[1].initial_state, m.horizons[0].trajectory.states[4]);
        let again = plan_mission(&sc, 2, false).unwrap();
        for (a, b) in m.horizons.iter().zip(&again.horizons) {
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.graphs, b.graphs);
        }
        let single = plan_horizon(&sc).unwrap();
        assert_eq!(single.trajectory, m.horizons[0].trajectory);
    }

    #[test]
    fn repair_shrinks_ranges_monotonically() {
        let mut ranges = EdgeRanges::new(150.0);
        let mut last = 150.0;
        for _ in 0..20 {
            let r = ranges.shrink(3, 1, 0, 10.0);
            assert!(r < last || r == 0.0);
            last = r;
        }
        assert_eq!(last, 0.0);
        assert_eq!(ranges.get(3, 0, 1), 0.0);
        assert_eq!(ranges.get(2, 0, 1), 150.0);
    }

    #[test]
    fn seamount_terrain_plans_cleanly() {
        let map = terrain_from_bumps(
            (-6000.0, -6000.0),
            (12_000.0, 12_000.0),
            100.0,
            -450.0,
            &[Bump {
                center: (700.0, 300.0),
                sigma: 300.0,
                height: 250.0,
            }],
            5.0,
        )
        .unwrap();
        let mut sc = Scenario::new(Arc::new(map), 3, 8);
        sc.weights.target = Some([2500.0, 900.0]);
        sc.seed = 5;
        let r = plan_horizon(&sc).unwrap();
        assert!(r.validation.all_pass(), "{}\n{:?}", r.validation.to_table(), r.flags);
    }
}
