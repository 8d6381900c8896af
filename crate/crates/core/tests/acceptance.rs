//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (bypassing the test harness capture) before asserting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};

use gtl_cirl::causal::{evaluate_sne, CausalSpec, SneConfig, SneScores};
use gtl_cirl::counterexample::{
    generate_counterfactual, CounterexampleBuffer, CounterexampleError, Provenance, StoredTrace,
};
use gtl_cirl::env::{
    Action, EnvError, Environment, GeneAction, GeneEnv, GeneParams, GridAction, GridEnv, GridParams,
};
use gtl_cirl::gp::{BayesOpt, Bounds, GpConfig, GpModel};
use gtl_cirl::gtl::{
    parse_formula, trajectory_robustness, CmpOp, EdgeProp, Formula, Frame, Graph, GraphTrajectory,
    Monitor, Schema,
};
use gtl_cirl::harness::{self, emit_results, EnvKind, Method, RunConfig, RunRecord};
use gtl_cirl::par::ExecMode;
use gtl_cirl::rl::{
    q_update, robustness_reward, select_action, QTable, RewardMode, RlConfig, StateKey,
};
use gtl_cirl::rng::{stream, Rng};

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id} {name}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- formulas

const NODE_FEATURES: [&str; 2] = ["x", "y"];

fn schema() -> Arc<Schema> {
    Arc::new(Schema::new(NODE_FEATURES, ["w"]))
}

fn random_graph(rng: &mut Rng) -> Arc<Graph> {
    let n = rng.gen_range(1..=5);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((a, b));
            }
        }
    }
    Arc::new(Graph::new(n, &edges).unwrap())
}

fn random_trajectory(rng: &mut Rng, graph: Arc<Graph>, frames: usize) -> GraphTrajectory {
    let n = graph.node_count();
    let m = graph.edge_count();
    let frames: Vec<Frame> = (0..frames)
        .map(|_| Frame {
            nodes: (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            edges: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    GraphTrajectory::from_frames(graph, schema(), frames).unwrap()
}

fn random_props(rng: &mut Rng) -> Vec<EdgeProp> {
    let ops = [CmpOp::Gt, CmpOp::Ge, CmpOp::Lt, CmpOp::Le];
    (0..rng.gen_range(1..=2))
        .map(|_| {
            if rng.gen_bool(0.3) {
                EdgeProp::True
            } else {
                EdgeProp::Compare {
                    feature: "w".into(),
                    op: ops[rng.gen_range(0..4)],
                    value: rng.gen_range(-0.5..0.5),
                }
            }
        })
        .collect()
}

fn random_formula(rng: &mut Rng, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.2) {
        let feature = NODE_FEATURES[rng.gen_range(0..2)];
        return Formula::atomic(feature, rng.gen_range(-0.8..0.8));
    }
    let d = depth - 1;
    match rng.gen_range(0..6) {
        0 => Formula::not(random_formula(rng, d)),
        1 => Formula::and(random_formula(rng, d), random_formula(rng, d)),
        2 => Formula::or(random_formula(rng, d), random_formula(rng, d)),
        3 | 4 => {
            let a = rng.gen_range(0..=2);
            let b = a + rng.gen_range(0..=2);
            let inner = random_formula(rng, d);
            if rng.gen_bool(0.5) {
                Formula::eventually(a, b, inner)
            } else {
                Formula::always(a, b, inner)
            }
        }
        _ => Formula::exists(
            rng.gen_range(1..=3),
            random_props(rng),
            random_formula(rng, d),
        ),
    }
}

fn formula_with_horizon(rng: &mut Rng, depth: usize, max_horizon: usize) -> Formula {
    loop {
        let f = random_formula(rng, depth);
        if f.horizon() <= max_horizon {
            return f;
        }
    }
}

fn prop_holds(p: &EdgeProp, w: f64) -> bool {
    match p {
        EdgeProp::True => true,
        EdgeProp::Compare { op, value, .. } => match op {
            CmpOp::Gt => w > *value,
            CmpOp::Ge => w >= *value,
            CmpOp::Lt => w < *value,
            CmpOp::Le => w <= *value,
        },
    }
}

/// Endpoints of simple paths from `start` whose i-th edge satisfies `props[i]`,
/// found by scanning the raw edge list.
fn brute_endpoints(
    traj: &GraphTrajectory,
    start: usize,
    props: &[EdgeProp],
    t: usize,
) -> BTreeSet<usize> {
    fn walk(
        traj: &GraphTrajectory,
        props: &[EdgeProp],
        t: usize,
        path: &mut Vec<usize>,
        out: &mut BTreeSet<usize>,
    ) {
        let hops = path.len() - 1;
        let here = *path.last().unwrap();
        if hops == props.len() {
            out.insert(here);
            return;
        }
        for (i, &(a, b)) in traj.graph().edges().iter().enumerate() {
            let next = if a == here {
                b
            } else if b == here {
                a
            } else {
                continue;
            };
            let w = traj.edge_value_by_name(i, "w", t).unwrap();
            if path.contains(&next) || !prop_holds(&props[hops], w) {
                continue;
            }
            path.push(next);
            walk(traj, props, t, path, out);
            path.pop();
        }
    }
    let mut out = BTreeSet::new();
    walk(traj, props, t, &mut vec![start], &mut out);
    out
}

/// Boolean semantics, evaluated directly on the raw labels.
fn brute_sat(f: &Formula, traj: &GraphTrajectory, v: usize, t: usize) -> bool {
    match f {
        Formula::Atomic { feature, threshold } => {
            traj.node_value_by_name(v, feature, t).unwrap() >= *threshold
        }
        Formula::Not(i) => !brute_sat(i, traj, v, t),
        Formula::And(l, r) => brute_sat(l, traj, v, t) && brute_sat(r, traj, v, t),
        Formula::Or(l, r) => brute_sat(l, traj, v, t) || brute_sat(r, traj, v, t),
        Formula::Eventually { a, b, inner } => {
            (t + a..=t + b).any(|s| brute_sat(inner, traj, v, s))
        }
        Formula::Always { a, b, inner } => (t + a..=t + b).all(|s| brute_sat(inner, traj, v, s)),
        Formula::ExistsN {
            n,
            edge_props,
            inner,
        } => {
            brute_endpoints(traj, v, edge_props, t)
                .into_iter()
                .filter(|&u| brute_sat(inner, traj, u, t))
                .count()
                >= *n
        }
    }
}

fn rho(f: &Formula, traj: &GraphTrajectory, v: usize) -> f64 {
    Monitor::new(f, traj.schema())
        .unwrap()
        .robustness(traj, v, 0)
        .unwrap()
}

#[test]
fn c1_robustness_sign_matches_boolean_semantics() {
    let mut rng = stream(1, "acceptance-1");
    let start = std::time::Instant::now();
    let (mut checked, mut boundary, mut mismatches) = (0usize, 0usize, 0usize);
    for _ in 0..10_000 {
        let f = formula_with_horizon(&mut rng, 3, 7);
        assert!(f.depth() <= 3);
        let frames = rng.gen_range(f.horizon() + 1..=8);
        let graph = random_graph(&mut rng);
        let traj = random_trajectory(&mut rng, graph, frames);
        for v in 0..traj.graph().node_count() {
            let r = rho(&f, &traj, v);
            if r == 0.0 {
                boundary += 1;
                continue;
            }
            checked += 1;
            if (r > 0.0) != brute_sat(&f, &traj, v, 0) {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && checked > 0 && secs < 30.0;
    report(
        1,
        "robustness oracle equivalence",
        pass,
        &format!("{checked} node checks, {boundary} boundary skipped, {mismatches} mismatches, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn c2_semantic_identities_hold_exactly() {
    let mut rng = stream(2, "acceptance-2");
    let mut failures = BTreeMap::new();
    let mut fail = |name: &'static str| *failures.entry(name).or_insert(0usize) += 1;
    for _ in 0..1000 {
        let graph = random_graph(&mut rng);
        let traj = random_trajectory(&mut rng, graph, 9);
        let n = traj.graph().node_count();

        // negation duality
        let f = formula_with_horizon(&mut rng, 2, 3);
        let (a, b) = (rng.gen_range(0..=2), rng.gen_range(2..=4));
        for v in 0..n {
            if rho(&Formula::not(f.clone()), &traj, v) != -rho(&f, &traj, v) {
                fail("negation");
            }
            let ev = rho(&Formula::eventually(a, b, f.clone()), &traj, v);
            let dual = rho(
                &Formula::not(Formula::always(a, b, Formula::not(f.clone()))),
                &traj,
                v,
            );
            if ev != dual {
                fail("eventually/always duality");
            }
        }

        // De Morgan
        let g = formula_with_horizon(&mut rng, 2, 3);
        for v in 0..n {
            let l = rho(&Formula::not(Formula::and(f.clone(), g.clone())), &traj, v);
            let r = rho(
                &Formula::or(Formula::not(f.clone()), Formula::not(g.clone())),
                &traj,
                v,
            );
            let l2 = rho(&Formula::not(Formula::or(f.clone(), g.clone())), &traj, v);
            let r2 = rho(
                &Formula::and(Formula::not(f.clone()), Formula::not(g.clone())),
                &traj,
                v,
            );
            if l != r || l2 != r2 {
                fail("de morgan");
            }
        }

        // window monotonicity: [a,b] inside [a2,b2]
        let a2 = rng.gen_range(0..=2);
        let a = a2 + rng.gen_range(0..=1);
        let b = a + rng.gen_range(0..=1);
        let b2 = b + rng.gen_range(0..=1);
        for v in 0..n {
            let inner_f = rho(&Formula::eventually(a, b, f.clone()), &traj, v);
            let outer_f = rho(&Formula::eventually(a2, b2, f.clone()), &traj, v);
            let inner_g = rho(&Formula::always(a, b, f.clone()), &traj, v);
            let outer_g = rho(&Formula::always(a2, b2, f.clone()), &traj, v);
            if inner_f > outer_f || inner_g < outer_g {
                fail("window monotonicity");
            }
        }

        // neighbor count monotonicity
        let props = random_props(&mut rng);
        let k = rng.gen_range(1..=3);
        for v in 0..n {
            let fewer = rho(&Formula::exists(k, props.clone(), f.clone()), &traj, v);
            let more = rho(&Formula::exists(k + 1, props.clone(), f.clone()), &traj, v);
            if more > fewer {
                fail("neighbor monotonicity");
            }
        }
    }
    let pass = failures.is_empty();
    report(
        2,
        "semantic identities",
        pass,
        &format!("1000 instances per identity, failures {failures:?}"),
    );
    assert!(pass);
}

// ------------------------------------------------------------ Q-learning

fn single_node_window(values: &[f64]) -> GraphTrajectory {
    let g = Arc::new(Graph::new(1, &[]).unwrap());
    let s = Arc::new(Schema::new(["x"], Vec::<&str>::new()));
    GraphTrajectory::from_frames(
        g,
        s,
        values.iter().map(|&x| Frame {
            nodes: vec![x],
            edges: vec![],
        }),
    )
    .unwrap()
}

/// Five-state deterministic MDP: states 0..=2 move to leaf 3 or 4 (by
/// action), leaves terminate. Rewards per (state, action).
const MDP_REWARD: [[f64; 2]; 5] = [[0.2, 0.0], [0.0, 0.3], [0.5, 0.1], [0.2, 0.05], [0.0, 0.15]];

fn mdp_step(s: usize, a: Action, scale: f64) -> (Option<usize>, f64) {
    let next = if s < 3 { Some(3 + a) } else { None };
    (next, scale * MDP_REWARD[s][a])
}

fn mdp_value_iteration(gamma: f64, scale: f64) -> [[f64; 2]; 5] {
    let mut q = [[0.0f64; 2]; 5];
    for _ in 0..100 {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (to, r) = mdp_step(s, a, scale);
                *cell = r + to.map_or(0.0, |n| gamma * q[n][0].max(q[n][1]));
            }
        }
        q = next;
    }
    q
}

/// Q-learning with the decaying step size under a uniform behaviour policy,
/// episodes starting at a random non-leaf state. Returns the table, the
/// final max-norm error and the episode from which the error stayed below `tol`.
fn mdp_q_learning(
    scale: f64,
    seed: u64,
    episodes: usize,
    tol: f64,
) -> (QTable, f64, Option<usize>) {
    let cfg = RlConfig {
        gamma: 0.9,
        robbins_monro: true,
        ..RlConfig::default()
    };
    let target = mdp_value_iteration(cfg.gamma, scale);
    let mut rng = stream(seed, "mdp");
    let mut table = QTable::new(2);
    let mut reached = None;
    let error = |table: &QTable| {
        (0..5)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| (table.value(StateKey(s as u64), a) - target[s][a]).abs())
            .fold(0.0, f64::max)
    };
    for ep in 1..=episodes {
        let mut s = rng.gen_range(0..3);
        loop {
            let a = select_action(&table, StateKey(s as u64), 1.0, &mut rng);
            let (to, r) = mdp_step(s, a, scale);
            q_update(
                &mut table,
                StateKey(s as u64),
                a,
                r,
                to.map(|n| StateKey(n as u64)),
                &cfg,
            );
            match to {
                Some(n) => s = n,
                None => break,
            }
        }
        let e = error(&table);
        if e >= tol {
            reached = None;
        } else if reached.is_none() {
            reached = Some(ep);
        }
    }
    (table.clone(), error(&table), reached)
}

#[test]
fn c3_reward_update_and_convergence() {
    let mut notes: Vec<String> = Vec::new();
    let mut subs: Vec<(&str, f64, f64)> = Vec::new();
    let mut check = |label: &'static str, got: f64, want: f64| subs.push((label, got, want));

    let phi = parse_formula("(x >= 0)").unwrap();
    let zero = single_node_window(&[0.0]);
    let half = single_node_window(&[0.5]);
    check(
        "eventually rho=0",
        robustness_reward(&zero, &phi, RewardMode::Eventually, 1.0).unwrap(),
        1.0,
    );
    check(
        "always rho=0",
        robustness_reward(&zero, &phi, RewardMode::Always, 1.0).unwrap(),
        -1.0,
    );
    check(
        "eventually rho=0.5 beta=2",
        robustness_reward(&half, &phi, RewardMode::Eventually, 2.0).unwrap(),
        std::f64::consts::E,
    );
    let boxed = parse_formula("G[0,1](x >= 0)").unwrap();
    let always_detected = RewardMode::for_formula(&boxed) == RewardMode::Always;

    let mut table = QTable::new(2);
    let half_step = RlConfig {
        alpha: 0.5,
        gamma: 0.9,
        ..RlConfig::default()
    };
    check(
        "alpha 0.5 update",
        q_update(
            &mut table,
            StateKey(1),
            0,
            1.0,
            Some(StateKey(2)),
            &half_step,
        ),
        0.5,
    );
    table.set(StateKey(3), 1, 7.0);
    let replace = RlConfig {
        alpha: 1.0,
        gamma: 0.0,
        ..RlConfig::default()
    };
    check(
        "full replacement",
        q_update(&mut table, StateKey(3), 1, 2.0, Some(StateKey(1)), &replace),
        2.0,
    );

    for (label, got, want) in subs {
        if (got - want).abs() > 1e-12 {
            notes.push(format!("{label}: {got} != {want}"));
        }
    }
    if !always_detected {
        notes.push("always-rooted effect not detected".into());
    }

    // two-state chain: A -> B (r 0), B -> A (r 1); the second action stays put with r 0
    let mut two = QTable::new(2);
    for _ in 0..500 {
        for (s, a, r, n) in [
            (0u64, 0, 0.0, 1u64),
            (1, 0, 1.0, 0),
            (0, 1, 0.0, 0),
            (1, 1, 0.0, 1),
        ] {
            q_update(&mut two, StateKey(s), a, r, Some(StateKey(n)), &half_step);
        }
    }
    let g = 0.9f64;
    let vb = 1.0 / (1.0 - g * g);
    let va = g * vb;
    let two_err = [
        two.value(StateKey(0), 0) - g * vb,
        two.value(StateKey(1), 0) - (1.0 + g * va),
        two.value(StateKey(0), 1) - g * va,
        two.value(StateKey(1), 1) - g * vb,
    ]
    .iter()
    .fold(0.0f64, |m, e| m.max(e.abs()));
    let two_ok = two_err < 1e-6;

    let (learned, err, reached) = mdp_q_learning(1.0, 3, 10_000, 1e-3);
    let (scaled, _, _) = mdp_q_learning(3.0, 3, 10_000, 1e-3);
    let target = mdp_value_iteration(0.9, 1.0);
    let greedy_same = (0..5u64).all(|s| {
        let best = if target[s as usize][0] >= target[s as usize][1] {
            0
        } else {
            1
        };
        learned.greedy(StateKey(s)) == best && scaled.greedy(StateKey(s)) == best
    });
    let pass = notes.is_empty() && two_ok && err < 1e-3 && greedy_same;
    report(
        3,
        "reward/update substitutions and convergence",
        pass,
        &format!(
            "substitutions {}, two-state error {two_err:.2e}, 5-state error {err:.2e} (below 1e-3 from episode {reached:?}), greedy invariant {greedy_same}",
            if notes.is_empty() { "ok".to_string() } else { notes.join("; ") }
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ GP

fn dense_posterior(xs: &[Vec<f64>], ys: &[f64], noise: f64, l: f64, q: &[f64]) -> (f64, f64) {
    let k = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (-d / (2.0 * l * l)).exp()
    };
    let n = xs.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        k(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 }
    });
    let inv = gram.try_inverse().unwrap();
    let kq = DVector::from_fn(n, |i, _| k(&xs[i], q));
    let y = DVector::from_column_slice(ys);
    let mean = (kq.transpose() * &inv * y)[(0, 0)];
    let var = 1.0 - (kq.transpose() * &inv * &kq)[(0, 0)];
    (mean, var)
}

#[test]
fn c4_gp_correctness_and_regret() {
    let mut rng = stream(4, "acceptance-4");
    let mut notes = Vec::new();

    // noise-free interpolation on well-separated points
    let mut interp_err = 0.0f64;
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let mut model = GpModel::new(0.1, 0.0).unwrap();
        let mut pts: Vec<Vec<f64>> = Vec::new();
        while pts.len() < 6 {
            let p: Vec<f64> = (0..dim)
                .map(|_| f64::from(rng.gen_range(0..9u8)) * 0.125)
                .collect();
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        let ys: Vec<f64> = pts.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        for (p, &y) in pts.iter().zip(&ys) {
            model.add(p.clone(), y).unwrap();
        }
        for (p, &y) in pts.iter().zip(&ys) {
            let (m, v) = model.posterior(p).unwrap();
            interp_err = interp_err.max((m - y).abs()).max(v);
        }
    }
    if interp_err > 1e-9 {
        notes.push(format!("interpolation error {interp_err:.2e}"));
    }

    // Gram symmetry and positive semi-definiteness
    let mut min_eig = f64::INFINITY;
    let mut var_excess = f64::NEG_INFINITY;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=20);
        let mut model = GpModel::new(rng.gen_range(0.05..1.0), 1e-4).unwrap();
        for _ in 0..n {
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            model.add(p, rng.gen_range(-1.0..1.0)).unwrap();
        }
        let g = model.gram();
        let m = DMatrix::from_fn(n, n, |i, j| g[i][j]);
        if m != m.transpose() {
            notes.push("asymmetric gram".into());
        }
        min_eig = min_eig.min(m.symmetric_eigen().eigenvalues.min());
        for _ in 0..10 {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..1.5)).collect();
            var_excess = var_excess.max(model.posterior(&q).unwrap().1 - 1.0);
        }
    }
    if min_eig < -1e-8 {
        notes.push(format!("min eigenvalue {min_eig:.2e}"));
    }
    if var_excess > 1e-9 {
        notes.push(format!("variance above prior by {var_excess:.2e}"));
    }

    // two observations at one point: mean (y1 + y2) / (2 + s2), variance 1 - 2 / (2 + s2)
    let mut two_err = 0.0f64;
    for _ in 0..50 {
        let s2 = rng.gen_range(0.01..1.0);
        let (y1, y2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let x = vec![rng.gen_range(0.0..1.0)];
        let mut model = GpModel::new(0.2, s2).unwrap();
        model.add(x.clone(), y1).unwrap();
        model.add(x.clone(), y2).unwrap();
        let (m, v) = model.posterior(&x).unwrap();
        two_err = two_err
            .max((m - (y1 + y2) / (2.0 + s2)).abs())
            .max((v - (1.0 - 2.0 / (2.0 + s2))).abs());
        // with the target mean as prior mean the estimate lands between the two
        let mut centered = GpModel::new(0.2, s2).unwrap().with_centering(true);
        centered.add(x.clone(), y1).unwrap();
        centered.add(x.clone(), y2).unwrap();
        let (mc, _) = centered.posterior(&x).unwrap();
        two_err = two_err.max((mc - (y1 + y2) / 2.0).abs());
        if mc < y1.min(y2) || mc > y1.max(y2) {
            notes.push("two-point mean outside the observations".into());
        }
    }
    if two_err > 1e-8 {
        notes.push(format!("two-point error {two_err:.2e}"));
    }

    // dense explicit-inverse recomputation on a 1-D quadratic
    let mut dense_err = 0.0f64;
    for _ in 0..20 {
        let xs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -(x[0] - 0.4).powi(2)).collect();
        let mut model = GpModel::new(0.2, 1e-4).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            model.add(x.clone(), y).unwrap();
        }
        for _ in 0..20 {
            let q = vec![rng.gen_range(0.0..1.0)];
            let (m, v) = model.posterior(&q).unwrap();
            let (dm, dv) = dense_posterior(&xs, &ys, 1e-4 + model.jitter(), 0.2, &q);
            dense_err = dense_err.max((m - dm).abs()).max((v - dv.max(0.0)).abs());
        }
    }
    if dense_err > 1e-8 {
        notes.push(format!("dense recomputation error {dense_err:.2e}"));
    }

    // regret on a 1-D quadratic with a seeded optimum
    let k_max = 50;
    let mut mean_regret = vec![0.0; k_max];
    for seed in 0..20u64 {
        let mut r = stream(seed, "regret");
        let optimum = r.gen_range(0.1..0.9);
        let objective = |t: f64| -(t - optimum).powi(2);
        let bounds = Bounds::new(vec![(0.0, 1.0)]).unwrap();
        let mut opt =
            BayesOpt::new(bounds, &GpConfig::default(), ExecMode::Sequential, &mut r).unwrap();
        let mut best = f64::NEG_INFINITY;
        for k in 1..=k_max {
            let (theta, _) = opt.propose(k);
            let j = objective(theta[0]);
            best = best.max(j);
            opt.observe(&theta, j).unwrap();
            mean_regret[k - 1] += -best / 20.0;
        }
    }
    let final_regret = mean_regret[k_max - 1];
    let monotone = mean_regret.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    if final_regret >= 0.05 || !monotone {
        notes.push(format!(
            "regret {final_regret:.2e}, non-increasing {monotone}"
        ));
    }

    let pass = notes.is_empty();
    report(
        4,
        "gp correctness and regret",
        pass,
        &format!(
            "interp {interp_err:.1e}, min eig {min_eig:.1e}, two-point {two_err:.1e}, dense {dense_err:.1e}, regret@50 {final_regret:.2e}{}",
            if pass { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------- causal loop

fn spec_for(kind: EnvKind, env: &dyn Environment, theta: &[f64]) -> CausalSpec {
    let cfg = RunConfig::builtin(kind);
    CausalSpec::new(
        cfg.template().unwrap(),
        theta,
        cfg.effect().unwrap(),
        env.schema().clone(),
        env.episode_length(),
    )
    .unwrap()
}

fn random_rollout(
    env: &mut dyn Environment,
    seed: u64,
    act_prob: f64,
    rng: &mut Rng,
) -> (GraphTrajectory, Vec<Action>) {
    env.reset(seed);
    let mut actions = Vec::new();
    while !env.is_done() {
        let a = if rng.gen_bool(act_prob) {
            rng.gen_range(0..env.action_count())
        } else {
            0
        };
        env.step(a).unwrap();
        actions.push(a);
    }
    (env.trajectory(), actions)
}

fn mean_in_order(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

/// Sampling and scoring written out step by step.
fn straight_line_sne(
    buffer: &CounterexampleBuffer,
    spec: &CausalSpec,
    env: &dyn Environment,
    iterations: usize,
    eps_d1: f64,
    eps_d2: f64,
    rng: &mut Rng,
) -> (SneScores, usize, usize) {
    let mut sufficiency = Vec::new();
    let mut necessity = Vec::new();
    let mut existence = Vec::new();
    let mut skipped = 0;
    for _ in 0..iterations {
        let idx = rng.gen_range(0..buffer.len());
        let seed = rng.gen::<u64>();
        let trace = buffer.get(idx).unwrap();
        let mut own = Rng::seed_from_u64(seed);
        let cf = match generate_counterfactual(
            env,
            &trace.trajectory,
            &trace.actions,
            spec,
            false,
            &mut own,
        ) {
            Ok(cf) => cf,
            Err(CounterexampleError::ForcingFailed(cf)) => *cf,
            Err(CounterexampleError::Env(EnvError::Unforceable(_))) => {
                skipped += 1;
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        let rho_c = spec.cause_robustness(&cf.trajectory).unwrap();
        let rho_e = spec.effect_robustness(&cf.trajectory).unwrap();
        if rho_c > eps_d1 {
            sufficiency.push(rho_e);
        }
        if rho_c < -eps_d2 {
            necessity.push(rho_e);
        }
        existence.push(rho_c);
    }
    let scores = SneScores {
        sufficiency: if sufficiency.is_empty() {
            0.0
        } else {
            mean_in_order(&sufficiency)
        },
        necessity: if necessity.is_empty() {
            0.0
        } else {
            (-mean_in_order(&necessity)).exp()
        },
        existence: if existence.is_empty() {
            1.0
        } else {
            (-mean_in_order(&existence)).exp()
        },
        sufficiency_empty: sufficiency.is_empty(),
        necessity_empty: necessity.is_empty(),
        existence_empty: existence.is_empty(),
    };
    (scores, existence.len(), skipped)
}

#[test]
fn c5_sne_matches_straight_line_oracle() {
    let mut rng = stream(5, "acceptance-5");
    let mut mismatches = Vec::new();
    let mut partitions = [0usize; 3];
    for b in 0..100u64 {
        let kind = if b % 2 == 0 {
            EnvKind::Gene
        } else {
            EnvKind::Grid
        };
        let mut env: Box<dyn Environment> = match kind {
            EnvKind::Gene => Box::new(GeneEnv::new(GeneParams::default(), b)),
            EnvKind::Grid => Box::new(GridEnv::new(GridParams::default(), b)),
        };
        let template = RunConfig::builtin(kind).template().unwrap();
        let theta: Vec<f64> = template
            .bounds()
            .ranges()
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect();
        let spec = spec_for(kind, env.as_ref(), &theta);
        let mut buffer = CounterexampleBuffer::new(8).unwrap();
        while buffer.len() < rng.gen_range(1..=8) {
            let seed = rng.gen();
            let (traj, actions) = random_rollout(env.as_mut(), seed, 0.3, &mut rng);
            let effect = spec.effect_robustness(&traj).unwrap();
            if effect <= 0.0 {
                buffer
                    .insert(StoredTrace {
                        trajectory: traj,
                        actions,
                        provenance: Provenance::EpisodeViolation,
                        effect_robustness: effect,
                    })
                    .unwrap();
            }
        }
        let iterations = rng.gen_range(1..=20);
        let eps = (rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.2));
        let cfg = SneConfig {
            iterations,
            eps_sufficiency: eps.0,
            eps_necessity: eps.1,
        };
        let seed = rng.gen();
        let mut lib_rng = Rng::seed_from_u64(seed);
        let mut oracle_rng = Rng::seed_from_u64(seed);
        let got = evaluate_sne(
            &buffer,
            &spec,
            env.as_ref(),
            &cfg,
            ExecMode::Parallel,
            &mut lib_rng,
        )
        .unwrap();
        let (want, used, skipped) = straight_line_sne(
            &buffer,
            &spec,
            env.as_ref(),
            iterations,
            eps.0,
            eps.1,
            &mut oracle_rng,
        );
        if got.scores != want || got.counterfactuals.len() != used || got.skipped != skipped {
            mismatches.push(b);
        }
        partitions[0] += usize::from(!want.sufficiency_empty);
        partitions[1] += usize::from(!want.necessity_empty);
        partitions[2] += usize::from(want.sufficiency_empty && want.necessity_empty);
    }
    let pass = mismatches.is_empty();
    report(
        5,
        "sne oracle equivalence",
        pass,
        &format!(
            "100 buffers, {} mismatches; non-empty S in {}, non-empty N in {}, both empty in {}",
            mismatches.len(),
            partitions[0],
            partitions[1],
            partitions[2]
        ),
    );
    assert!(pass, "mismatching buffers {mismatches:?}");
}

// ----------------------------------------------------------- environments

const GENE_CAUSE: &str = "G[0,10]((G1 = 1) & (G2 = 1) & (G4 = 1) & (G3 = 0)) \
    & E1{conn}((G1 = 1) | (G2 = 1) | (G4 = 1)) \
    & F[0,3](ModifyG1 = 1) & F[3,6](ModifyG2 = 1) & F[6,9](ModifyG4 = 1)";

/// A script that may or may not complete the treatment on some unit.
fn gene_script(env: &GeneEnv, rng: &mut Rng, style: u64) -> Vec<Action> {
    let n = env.params().bu_count;
    let len = env.params().episode_length;
    let mut script = vec![0; len];
    let noise = match style {
        0 => 0.3,
        3 => 0.0,
        _ => 0.1,
    };
    for a in script.iter_mut() {
        if rng.gen_bool(noise) {
            *a = rng.gen_range(0..1 + 3 * n);
        }
    }
    if style == 1 || style == 2 {
        let treatable = env.treatable_units();
        let unit = if style == 1 && !treatable.is_empty() {
            treatable[rng.gen_range(0..treatable.len())]
        } else {
            rng.gen_range(0..n)
        };
        for slot in 0..3 {
            let lo = (3 * slot) as i64 - 2;
            let step = rng.gen_range(lo..=lo + 5).clamp(0, len as i64 - 1) as usize;
            script[step] = GeneAction::Modify { unit, slot }.encode();
        }
    }
    script
}

/// The simplified grid dynamics written out from the model description.
struct GridOracle {
    v: Vec<f64>,
    load: Vec<f64>,
    pgen: Vec<f64>,
    up: Vec<bool>,
    live: Vec<bool>,
    flow: Vec<f64>,
}

fn hop_distance(adj: &[Vec<usize>], from: usize, to: usize) -> usize {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::from([from]);
    dist[from] = 0;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist[to]
}

#[test]
fn c6_environment_faithfulness() {
    // gene: hidden rule versus the monitor
    let cause = parse_formula(GENE_CAUSE).unwrap();
    let mut rng = stream(6, "acceptance-6");
    let (mut agree, mut fired) = (0usize, 0usize);
    for seed in 0..1000u64 {
        let mut env = GeneEnv::new(GeneParams::default(), seed);
        let script = gene_script(&env, &mut rng, seed % 4);
        for &a in &script {
            env.step(a).unwrap();
        }
        let rule = env.rule_fired().expect("decided by the end of the episode");
        let rho = trajectory_robustness(&env.trajectory(), &cause, 0)
            .unwrap()
            .value();
        if rule == (rho > 0.0) && rho != 0.0 {
            agree += 1;
        }
        fired += usize::from(rule);
    }
    let gene_ok = agree == 1000 && fired > 0 && fired < 1000;

    // grid: one scripted episode against the hand-stepped update
    let p = GridParams::default();
    let mut env = GridEnv::new(p.clone(), 11);
    let lines = env.lines().to_vec();
    let gens = env.generators().to_vec();
    let nb = env.graph().node_count();
    let mut adj = vec![Vec::new(); nb];
    for l in &lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let f0 = env.trajectory().frame(0);
    let mut o = GridOracle {
        v: (0..nb).map(|b| f0.nodes[4 * b]).collect(),
        load: (0..nb).map(|b| f0.nodes[4 * b + 1]).collect(),
        pgen: (0..nb).map(|b| f0.nodes[4 * b + 2]).collect(),
        up: vec![false; nb],
        live: (0..lines.len())
            .map(|e| f0.edges[2 * e + 1] == 1.0)
            .collect(),
        flow: (0..lines.len()).map(|e| f0.edges[2 * e]).collect(),
    };
    let mut script_rng = stream(11, "grid-script");
    let script: Vec<Action> = (0..p.episode_length)
        .map(|t| match t % 4 {
            0 => 0,
            1 => GridAction::IncreaseGen(script_rng.gen_range(0..gens.len())).encode(gens.len()),
            2 => GridAction::ShedLoad(script_rng.gen_range(0..nb)).encode(gens.len()),
            _ => script_rng.gen_range(0..env.action_count()),
        })
        .collect();
    let mut worst = 0.0f64;
    let mut trips = 0;
    for &a in &script {
        env.step(a).unwrap();
        o.up = vec![false; nb];
        match GridAction::decode(a, gens.len()) {
            GridAction::NoOp => {}
            GridAction::IncreaseGen(g) => {
                let bus = gens[g];
                o.pgen[bus] = (o.pgen[bus] + 0.1).min(1.0);
                o.v[bus] = (o.v[bus] + 0.05).clamp(0.80, 1.10);
                o.up[bus] = true;
            }
            GridAction::ShedLoad(b) => o.load[b] *= 0.8,
        }
        let next: Vec<f64> = (0..nb)
            .map(|b| {
                let support: f64 = gens
                    .iter()
                    .filter(|&&g| o.up[g])
                    .map(|&g| match hop_distance(&adj, g, b) {
                        0 | 1 => 1.0,
                        2 => 0.5,
                        _ => 0.0,
                    })
                    .sum();
                let overload = if o.load[b] > 1.1 { 1.0 } else { 0.0 };
                let deficits: Vec<f64> = lines
                    .iter()
                    .enumerate()
                    .filter(|(e, l)| o.live[*e] && (l.from == b || l.to == b))
                    .map(|(_, l)| {
                        let u = if l.from == b { l.to } else { l.from };
                        (o.v[u] - 0.90).min(0.0)
                    })
                    .collect();
                let cascade = if deficits.is_empty() {
                    0.0
                } else {
                    deficits.iter().sum::<f64>() / deficits.len() as f64
                };
                (o.v[b] + 0.04 * support - 0.01 * overload + 0.5 * cascade).clamp(0.80, 1.10)
            })
            .collect();
        o.v = next;
        for (e, l) in lines.iter().enumerate() {
            if !o.live[e] {
                o.flow[e] = 0.0;
                continue;
            }
            let flow = l.base_flow * (o.load[l.from] + o.load[l.to]) / (o.v[l.from] + o.v[l.to]);
            if flow > l.limit {
                o.live[e] = false;
                o.flow[e] = 0.0;
                trips += 1;
            } else {
                o.flow[e] = flow;
            }
        }
        let frame = env.observation();
        for b in 0..nb {
            let want = [
                o.v[b],
                o.load[b],
                o.pgen[b],
                if o.up[b] { 1.0 } else { 0.0 },
            ];
            for (k, w) in want.iter().enumerate() {
                worst = worst.max((frame.nodes[4 * b + k] - w).abs());
            }
        }
        for e in 0..lines.len() {
            worst = worst.max((frame.edges[2 * e] - o.flow[e]).abs());
            worst = worst.max((frame.edges[2 * e + 1] - if o.live[e] { 1.0 } else { 0.0 }).abs());
        }
    }
    let grid_ok = worst < 1e-12;
    let pass = gene_ok && grid_ok;
    report(
        6,
        "environment faithfulness",
        pass,
        &format!(
            "gene rule/monitor agreement {agree}/1000 ({fired} fired); grid 20-step max deviation {worst:.1e}, {trips} line trips"
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------ experiments

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

/// Full-length runs for every (environment, method, seed), shared by the
/// recovery and ordering checks.
fn experiment_runs() -> &'static BTreeMap<&'static str, Vec<RunRecord>> {
    static RUNS: OnceLock<BTreeMap<&'static str, Vec<RunRecord>>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut out = BTreeMap::new();
        for kind in [EnvKind::Gene, EnvKind::Grid] {
            let cfg = RunConfig::builtin(kind);
            out.insert(
                kind.as_str(),
                harness::sweep(&cfg, &Method::ALL, &SEEDS).unwrap(),
            );
        }
        out
    })
}

#[test]
fn c7_gene_windows_are_recovered() {
    let truth = [0.0, 3.0, 6.0];
    let runs = &experiment_runs()["gene"];
    let mut recovered = 0;
    let mut mined = Vec::new();
    for r in runs.iter().filter(|r| r.method == Method::GtlCirl) {
        let theta = r.mined_theta.clone().unwrap();
        if theta.iter().zip(truth).all(|(t, w)| (t - w).abs() <= 1.0) {
            recovered += 1;
        }
        mined.push(format!("{}:{:?}", r.seed, theta));
    }
    let pass = recovered >= 6;
    report(
        7,
        "gene formula recovery",
        pass,
        &format!("{recovered}/10 seeds within one step; {}", mined.join(" ")),
    );
    assert!(pass);
}

#[test]
fn c8_closed_loop_is_not_worse_than_baselines() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (env, runs) in experiment_runs() {
        let rate = |m: Method| {
            let rs: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.success_rate())
                .collect();
            rs.iter().sum::<f64>() / rs.len() as f64
        };
        let (ours, std_rl, cf_rl) = (
            rate(Method::GtlCirl),
            rate(Method::StandardRl),
            rate(Method::CounterfactualRl),
        );
        pass &= ours >= std_rl && ours >= cf_rl;
        lines.push(format!(
            "{env}: gtl_cirl {ours:.3}, standard_rl {std_rl:.3}, counterfactual_rl {cf_rl:.3}"
        ));
    }
    report(8, "success-rate ordering", pass, &lines.join("; "));
    assert!(pass);
}

// ------------------------------------------------------------ determinism

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn c9_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cases = Vec::new();
    for (kind, method, episodes) in [
        (EnvKind::Gene, Method::GtlCirl, 25),
        (EnvKind::Grid, Method::GtlCirl, 25),
        (EnvKind::Grid, Method::CounterfactualRl, 10),
    ] {
        let mut cfg = RunConfig::builtin(kind);
        cfg.experiment.method = method;
        cfg.experiment.episodes = episodes;
        cfg.experiment.seed = 42;
        let mut sequential = cfg.clone();
        sequential.experiment.parallel = false;
        let mut trees = Vec::new();
        for (i, c) in [&cfg, &cfg, &sequential].into_iter().enumerate() {
            let dir = tmp
                .path()
                .join(format!("{}-{}-{i}", kind.as_str(), method.as_str()));
            emit_results(&harness::run(c).unwrap(), &dir, true).unwrap();
            trees.push(read_tree(&dir));
        }
        let same = trees[0] == trees[1] && trees[0] == trees[2];
        cases.push((
            format!(
                "{}/{}: {} files",
                kind.as_str(),
                method.as_str(),
                trees[0].len()
            ),
            same,
        ));
    }
    let pass = cases.iter().all(|c| c.1);
    let detail: Vec<String> = cases
        .iter()
        .map(|(d, s)| format!("{d} {}", if *s { "identical" } else { "differ" }))
        .collect();
    report(9, "determinism", pass, &detail.join("; "));
    assert!(pass);
}
