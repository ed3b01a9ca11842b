//! Scenario builders shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::Vector3;
use seaplan::planner::{Scenario, plan_horizon};
use seaplan::terrain::{Bump, SeafloorMap, SynthSpec, synth_terrain, terrain_from_bumps};

/// 12 km square seamount field around the origin.
pub fn seamount_field() -> Arc<SeafloorMap> {
    let spec = SynthSpec {
        origin: (-6000.0, -6000.0),
        extent: (12_000.0, 12_000.0),
        cell: 50.0,
        seed: 7,
        base_depth: -400.0,
        amplitude: 200.0,
        n_seamounts: 8,
        ..SynthSpec::default()
    };
    Arc::new(synth_terrain(&spec).expect("synthetic terrain"))
}

/// Five (or `n`) AUVs, twenty 100 s steps, 150 m sonar range.
pub fn replica(n: usize) -> Scenario {
    let mut sc = Scenario::new(seamount_field(), n, 20);
    sc.delta = 100.0;
    sc.weights.d_s = 150.0;
    sc.weights.target = Some([3000.0, 2000.0]);
    sc.seed = 42;
    sc
}

/// Flat base at 400 m with one 250 m seamount near the route.
pub fn single_seamount() -> Arc<SeafloorMap> {
    let bump = Bump {
        center: (700.0, 400.0),
        sigma: 300.0,
        height: 250.0,
    };
    Arc::new(terrain_from_bumps((-6000.0, -6000.0), (12_000.0, 12_000.0), 50.0, -400.0, &[bump], 5.0).unwrap())
}

pub fn single_auv(seed: u64) -> Scenario {
    let mut sc = Scenario::new(single_seamount(), 1, 10);
    sc.weights.target = Some([1500.0, 800.0]);
    sc.seed = seed;
    sc
}

pub const OCCLUSION_ORIGIN: (f64, f64) = (-1500.0, -1500.0);
pub const OCCLUSION_EXTENT: (f64, f64) = (3000.0, 3000.0);

pub fn small_flat() -> Arc<SeafloorMap> {
    Arc::new(SeafloorMap::flat(OCCLUSION_ORIGIN, OCCLUSION_EXTENT, 5.0, -300.0, 5.0).unwrap())
}

pub fn two_auv(map: Arc<SeafloorMap>) -> Scenario {
    let mut sc = Scenario::new(map, 2, 6);
    sc.weights.target = Some([600.0, 200.0]);
    sc.seed = 3;
    sc
}

/// A narrow peak rising 10 m above the middle of the first AUV link at
/// step 4 of the flat-floor plan, so that link loses line of sight.
pub fn occlusion() -> (Scenario, (usize, usize)) {
    let flat = plan_horizon(&two_auv(small_flat())).expect("flat plan");
    let (i, j) = flat.graphs.a2a[3].edges[0];
    let (a, b) = (flat.trajectory.position(4, i), flat.trajectory.position(4, j));
    let c: Vector3<f64> = (a + b) * 0.5;
    let bump = Bump {
        center: (c.x, c.y),
        sigma: 6.0,
        height: c.z + 10.0 + 300.0,
    };
    let map = terrain_from_bumps(OCCLUSION_ORIGIN, OCCLUSION_EXTENT, 5.0, -300.0, &[bump], 5.0).unwrap();
    (two_auv(Arc::new(map)), (i, j))
}

/// Independent union-find component count.
pub fn components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        parent[ra] = rb;
    }
    (0..n).filter(|&x| root(&mut parent, x) == x).count()
}
