//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! criterion 7 is reported but does not fail the run.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use visnav::discretize::{discretize, DiscretizeParams};
use visnav::eval::{oor, spl, success_rate, BenchmarkReport, EpisodeResult};
use visnav::gridworld::{
    generate_floorplan, is_collision_free, sample_free_pose, Cell, FloorplanParams, Footprint,
    GridMap,
};
use visnav::models::snap_to_free_cell;
use visnav::pipeline::{GoalMode, TerminationReason};
use visnav::plan::{
    build_costmap, shortest_path, shortest_path_cells, uniform_costmap, CellCost, Costmap,
    CostmapParams, PlanError,
};
use visnav::sim::execute_poses;
use visnav::tensornet::{
    binary_cross_entropy, cross_entropy, mse, LayerSpec, Mode, Sequential, Tensor,
};
use visnav::util::{rng_from_seed, Rng};
use visnav::workflow::{self, StageSummary, WorkflowConfig, WorkflowError, Workspace};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Writes straight to stdout so the lines survive the test harness capture.
fn report(id: usize, title: &str, gated: bool, start: Instant, o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let tag = if gated { "" } else { " [not gated]" };
    let line = format!(
        "criterion {id} {title}: {status}{tag} ({:.1} s) {}\n",
        start.elapsed().as_secs_f64(),
        o.detail
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

// ------------------------------------------------------------ criterion 1

fn random_grid(seed: u64, density: f64) -> GridMap {
    let mut rng = rng_from_seed(seed);
    let mut map = GridMap::empty(20, 20, 0.05, seed).unwrap();
    for cy in 0..20 {
        for cx in 0..20 {
            if rng.random::<f64>() < density {
                map.set(cx, cy, Cell::Occupied);
            }
        }
    }
    map
}

/// Quadratic-time Dijkstra over the costmap's cell costs.
fn reference_dijkstra(cm: &Costmap, start: (i64, i64), goal: (i64, i64)) -> Option<f64> {
    let (w, h) = (cm.width() as i64, cm.height() as i64);
    let cost = |x: i64, y: i64| match cm.cost(x, y) {
        CellCost::Finite(c) => Some(c),
        CellCost::Lethal => None,
    };
    let n = (w * h) as usize;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[(start.1 * w + start.0) as usize] = 0.0;
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && best.is_none_or(|b| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let Some(u) = best else { break };
        done[u] = true;
        let (ux, uy) = (u as i64 % w, u as i64 / w);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (vx, vy) = (ux + dx, uy + dy);
                if vx < 0 || vy < 0 || vx >= w || vy >= h {
                    continue;
                }
                let Some(c) = cost(vx, vy) else { continue };
                if dx != 0 && dy != 0 && cost(ux + dx, uy).is_none() && cost(ux, uy + dy).is_none()
                {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    cm.resolution() * 2f64.sqrt()
                } else {
                    cm.resolution()
                };
                let v = (vy * w + vx) as usize;
                let alt = dist[u] + step * c;
                if alt < dist[v] {
                    dist[v] = alt;
                }
            }
        }
    }
    let d = dist[(goal.1 * w + goal.0) as usize];
    d.is_finite().then_some(d)
}

fn free_cells(cm: &Costmap) -> Vec<(i64, i64)> {
    let mut cells = Vec::new();
    for cy in 0..cm.height() as i64 {
        for cx in 0..cm.width() as i64 {
            if !cm.is_lethal(cx, cy) {
                cells.push((cx, cy));
            }
        }
    }
    cells
}

fn criterion_planner_oracle() -> Outcome {
    let fp = Footprint::new(0.02).unwrap();
    let mut compared = 0;
    let mut unreachable = 0;
    for m in 0..100u64 {
        let map = random_grid(1000 + m, 0.25);
        let cm = uniform_costmap(&map, &fp);
        let free = free_cells(&cm);
        if free.len() < 2 {
            continue;
        }
        let mut rng = rng_from_seed(5000 + m);
        for _ in 0..5 {
            let s = free[rng.random_range(0..free.len())];
            let g = free[rng.random_range(0..free.len())];
            let expected = reference_dijkstra(&cm, s, g);
            match (shortest_path_cells(&cm, s, g), expected) {
                (Ok(path), Some(cost)) => {
                    if path.cost != cost {
                        return outcome(
                            false,
                            format!(
                                "map {m} {s:?}->{g:?}: planner {} vs reference {cost}",
                                path.cost
                            ),
                        );
                    }
                    if path.cells.first() != Some(&s) || path.cells.last() != Some(&g) {
                        return outcome(
                            false,
                            format!("map {m}: path endpoints differ from the query"),
                        );
                    }
                }
                (Err(PlanError::NoPath), None) => unreachable += 1,
                (got, want) => {
                    return outcome(
                        false,
                        format!(
                            "map {m} {s:?}->{g:?}: planner {:?} vs reference {want:?}",
                            got.map(|p| p.cost)
                        ),
                    );
                }
            }
            compared += 1;
        }
    }
    outcome(
        true,
        format!("{compared} queries on 100 maps agree exactly ({unreachable} unreachable)"),
    )
}

// ------------------------------------------------------------ criterion 2

fn random_tensor(shape: Vec<usize>, rng: &mut Rng, margin: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random::<f64>() * 2.0 - 1.0;
            v.signum() * (margin + v.abs())
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Worst relative error between analytic and central-difference gradients
/// of `sum(w * net(x))` with respect to every parameter and input.
fn layer_grad_error(input: &[usize], batch: usize, specs: &[LayerSpec], seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut net = Sequential::<f64>::build(input.to_vec(), specs, &mut rng).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    let x = random_tensor(shape, &mut rng, 0.1);
    let y = net.forward(&x, Mode::Train).unwrap();
    let w = random_tensor(y.shape().to_vec(), &mut rng, 0.0);
    let dx = net.backward(&w).unwrap();
    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let objective = |net: &mut Sequential<f64>, x: &Tensor<f64>| -> f64 {
        let y = net.forward(x, Mode::Train).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, g) in grads.iter().enumerate() {
            let orig = net.params()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + h;
            let plus = objective(&mut net, &x);
            net.params_mut()[pi].value.data_mut()[j] = orig - h;
            let minus = objective(&mut net, &x);
            net.params_mut()[pi].value.data_mut()[j] = orig;
            worst = worst.max(rel_err(*g, (plus - minus) / (2.0 * h)));
        }
    }
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[j] += h;
        xm.data_mut()[j] -= h;
        let numeric = (objective(&mut net, &xp) - objective(&mut net, &xm)) / (2.0 * h);
        worst = worst.max(rel_err(dx.data()[j], numeric));
    }
    worst
}

fn loss_grad_error(x: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>)) -> f64 {
    let (_, grad) = loss(x);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[j] += h;
        xm.data_mut()[j] -= h;
        let numeric = (loss(&xp).0 - loss(&xm).0) / (2.0 * h);
        worst = worst.max(rel_err(grad.data()[j], numeric));
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let layers: Vec<(&str, Vec<usize>, usize, Vec<LayerSpec>)> = vec![
        (
            "Dense",
            vec![5],
            3,
            vec![LayerSpec::Dense {
                input: 5,
                output: 4,
            }],
        ),
        (
            "Conv1d",
            vec![3, 9],
            2,
            vec![LayerSpec::Conv1d {
                in_ch: 3,
                out_ch: 4,
                kernel: 3,
                stride: 2,
            }],
        ),
        (
            "Conv2d",
            vec![2, 7, 7],
            2,
            vec![LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 2,
            }],
        ),
        (
            "TransposedConv2d",
            vec![2, 3, 4],
            2,
            vec![LayerSpec::TransposedConv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 2,
            }],
        ),
        (
            "BatchNorm(dense)",
            vec![6],
            8,
            vec![LayerSpec::BatchNorm { features: 6 }],
        ),
        (
            "BatchNorm(spatial)",
            vec![3, 3, 2],
            4,
            vec![LayerSpec::BatchNorm { features: 3 }],
        ),
    ];
    let mut worst_overall: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, input, batch, specs)) in layers.iter().enumerate() {
        let err = layer_grad_error(input, *batch, specs, 40 + i as u64);
        worst_overall = worst_overall.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }

    let mut rng = rng_from_seed(99);
    let pred = random_tensor(vec![4, 5], &mut rng, 0.0);
    let target = random_tensor(vec![4, 5], &mut rng, 0.0);
    let e_mse = loss_grad_error(&pred, |p| mse(p, &target).unwrap());
    let logits = random_tensor(vec![4, 3], &mut rng, 0.0);
    let classes = [0usize, 2, 1, 2];
    let e_ce = loss_grad_error(&logits, |l| cross_entropy(l, &classes).unwrap());
    let probs = Tensor::new(vec![4, 1], vec![0.2, 0.7, 0.45, 0.9]).unwrap();
    let labels = [1.0, 0.0, 1.0, 1.0];
    let e_bce = loss_grad_error(&probs, |p| binary_cross_entropy(p, &labels).unwrap());
    for (name, err) in [("mse", e_mse), ("cross_entropy", e_ce), ("bce", e_bce)] {
        worst_overall = worst_overall.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    outcome(
        worst_overall < 1e-4,
        format!(
            "max relative error {worst_overall:.2e} [{}]",
            parts.join(", ")
        ),
    )
}

// ------------------------------------------------------------ criterion 3

fn criterion_replay() -> Outcome {
    let fp = Footprint::default();
    let params = DiscretizeParams {
        lookahead_waypoints: 4,
        ..DiscretizeParams::default()
    };
    let mut worst_end: f64 = 0.0;
    let mut paths = 0;
    for m in 0..10u64 {
        let map = generate_floorplan(200 + m, &FloorplanParams::default()).unwrap();
        let cm = build_costmap(&map, &fp, &CostmapParams::for_footprint(&fp)).unwrap();
        let mut rng = rng_from_seed(300 + m);
        let mut made = 0;
        while made < 20 {
            let s = sample_free_pose(&map, &fp, &mut rng, 10_000).unwrap();
            let g = sample_free_pose(&map, &fp, &mut rng, 10_000).unwrap();
            let (Some(s), Some(g)) = (
                snap_to_free_cell(&map, &fp, &cm, &s),
                snap_to_free_cell(&map, &fp, &cm, &g),
            ) else {
                continue;
            };
            if s.distance_to(&g) < 0.5 {
                continue;
            }
            let Ok(path) = shortest_path(&cm, &s, &g) else {
                continue;
            };
            made += 1;
            paths += 1;
            let actions = match discretize(&path, s.heading, &params) {
                Ok(a) => a,
                Err(e) => return outcome(false, format!("map {m} path {made}: {e}")),
            };
            let traj = match execute_poses(&map, &fp, &s, &actions) {
                Ok(t) => t,
                Err(e) => return outcome(false, format!("map {m} path {made}: {e}")),
            };
            if let Some(p) = traj.poses.iter().find(|p| !is_collision_free(&map, p, &fp)) {
                return outcome(false, format!("map {m}: pose {p:?} collides"));
            }
            let end = traj.poses.last().unwrap();
            let (ex, ey) = path.end();
            worst_end = worst_end.max(((end.x - ex).powi(2) + (end.y - ey).powi(2)).sqrt());
        }
    }
    outcome(
        worst_end <= 0.3,
        format!("{paths} paths on 10 maps, zero collisions, worst end error {worst_end:.3} m"),
    )
}

// ------------------------------------------------------------ criterion 5

fn synthetic(success: bool, observed: f64, optimal: f64) -> EpisodeResult {
    EpisodeResult {
        index: 0,
        success,
        observed_length: observed,
        optimal_length: optimal,
        steps: 1,
        reason: if success {
            TerminationReason::Done
        } else {
            TerminationReason::Collision
        },
        start_x: 0.0,
        start_y: 0.0,
        start_heading: 0.0,
        goal_x: 0.0,
        goal_y: 0.0,
        final_x: 0.0,
        final_y: 0.0,
        final_distance: 0.0,
        confirmations: 0,
    }
}

fn criterion_metrics() -> Outcome {
    let mut fails = Vec::new();
    let equal = spl(&[synthetic(true, 3.0, 3.0)]).unwrap();
    if (equal - 1.0).abs() > 1e-12 {
        fails.push(format!("p = l gave {equal}"));
    }
    let double = spl(&[synthetic(true, 6.0, 3.0)]).unwrap();
    if (double - 0.5).abs() > 1e-12 {
        fails.push(format!("p = 2l gave {double}"));
    }
    let none = [synthetic(false, 2.0, 3.0), synthetic(false, 1.0, 1.0)];
    if oor(&none).unwrap().is_some() {
        fails.push("OOR present with zero successes".into());
    }
    if spl(&[]).is_ok() || success_rate(&[]).is_ok() {
        fails.push("empty result sets accepted".into());
    }
    let mut rng = rng_from_seed(2024);
    for set in 0..1000 {
        let n = rng.random_range(1..40);
        let results: Vec<EpisodeResult> = (0..n)
            .map(|_| {
                let optimal = 0.5 + rng.random::<f64>() * 10.0;
                let observed = rng.random::<f64>() * 30.0;
                synthetic(rng.random::<bool>(), observed, optimal)
            })
            .collect();
        let (s, sr) = (spl(&results).unwrap(), success_rate(&results).unwrap());
        if s > sr + 1e-12 {
            fails.push(format!("set {set}: SPL {s} > SR {sr}"));
            break;
        }
    }
    if fails.is_empty() {
        outcome(true, "unit cases hold, SPL <= SR on 1000 random sets")
    } else {
        outcome(false, fails.join("; "))
    }
}

// ------------------------------------------------- workflow-backed criteria

fn demo_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo-small.toml")
}

type Stage =
    fn(&Workspace, &WorkflowConfig, workflow::Progress) -> Result<StageSummary, WorkflowError>;

const TRAINING_STAGES: [(&str, Stage); 7] = [
    ("gen-map", workflow::stage_gen_map),
    ("gen-ae-data", workflow::stage_gen_ae_data),
    ("train-ae", workflow::stage_train_ae),
    ("gen-policy-data", workflow::stage_gen_policy_data),
    ("train-policy", workflow::stage_train_policy),
    ("gen-goal-data", workflow::stage_gen_goal_data),
    ("train-goal", workflow::stage_train_goal),
];

fn quiet(_: &str) {}

fn metric(s: &StageSummary, key: &str) -> f64 {
    s.metrics[key].as_f64().unwrap_or(f64::NAN)
}

/// Runs every training stage; returns summaries keyed by stage order.
fn run_training(ws: &Workspace, cfg: &WorkflowConfig) -> Result<Vec<StageSummary>, String> {
    TRAINING_STAGES
        .iter()
        .map(|(name, stage)| stage(ws, cfg, &mut quiet).map_err(|e| format!("{name}: {e}")))
        .collect()
}

fn criterion_learned_targets(summaries: &[StageSummary], seconds: f64) -> Outcome {
    let ae = &summaries[2];
    let policy = &summaries[4];
    let goal = &summaries[6];
    let (ae_best, ae_first) = (metric(ae, "best_test_loss"), metric(ae, "first_test_loss"));
    let policy_acc = metric(policy, "best_test_accuracy");
    let goal_acc = metric(goal, "best_test_accuracy");
    let checks = [
        ae_best < 0.5 * ae_first,
        policy_acc >= 0.60,
        goal_acc >= 0.85,
        seconds < 15.0 * 60.0,
    ];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "autoencoder MSE {ae_best:.4} vs first {ae_first:.4}, policy accuracy {policy_acc:.3}, \
             goal checker accuracy {goal_acc:.3}, workflow {seconds:.0} s"
        ),
    )
}

fn eval_with(
    ws: &Workspace,
    base: &WorkflowConfig,
    source: &str,
    mode: GoalMode,
) -> Result<BenchmarkReport, String> {
    let mut cfg = base.clone();
    cfg.benchmark.action_source = source.into();
    cfg.pipeline.goal_mode = mode;
    cfg.benchmark.write_traces = false;
    workflow::stage_eval(ws, &cfg, &mut quiet)
        .map(|(_, r)| r)
        .map_err(|e| e.to_string())
}

fn gps(cfg: &WorkflowConfig) -> GoalMode {
    GoalMode::Gps {
        tolerance: cfg.benchmark.tolerance,
    }
}

fn criterion_expert_loop(ws: &Workspace, cfg: &WorkflowConfig) -> Outcome {
    match eval_with(ws, cfg, "expert", gps(cfg)) {
        Ok(r) => {
            let o = r.oor.unwrap_or(f64::INFINITY);
            outcome(
                r.trials == 50 && r.success_rate == 1.0 && o < 1.5,
                format!(
                    "{} trials, success rate {:.3}, OOR {o:.3}, SPL {:.3}",
                    r.trials, r.success_rate, r.spl
                ),
            )
        }
        Err(e) => outcome(false, e),
    }
}

fn criterion_learned_pipeline(ws: &Workspace, cfg: &WorkflowConfig) -> Outcome {
    let with_gps = eval_with(ws, cfg, "learned", gps(cfg));
    let without = eval_with(ws, cfg, "learned", GoalMode::Learned);
    match (with_gps, without) {
        (Ok(a), Ok(b)) => outcome(
            a.success_rate >= 0.5 && (a.success_rate - b.success_rate).abs() <= 0.15,
            format!(
                "GPS success rate {:.3} (SPL {:.3}), learned goal success rate {:.3} (SPL {:.3})",
                a.success_rate, a.spl, b.success_rate, b.spl
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn artifact_paths(ws: &Workspace, summaries: &[StageSummary]) -> Vec<(String, PathBuf)> {
    summaries
        .iter()
        .flat_map(|s| {
            s.artifacts
                .iter()
                .map(|a| (a.path.clone(), ws.path(&a.path)))
        })
        .collect()
}

fn criterion_determinism() -> Outcome {
    let overrides: Vec<String> = [
        "data.ae_images=200",
        "data.policy_trajectories=20",
        "data.goal_pairs=400",
        "training.autoencoder.epochs=2",
        "training.policy.epochs=2",
        "training.goal_checker.epochs=2",
        "benchmark.trials=6",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = match WorkflowConfig::load(Some(&demo_config_path()), &overrides) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut runs = Vec::new();
    for dir in &dirs {
        let ws = Workspace::open(dir.path()).unwrap();
        let mut summaries = match run_training(&ws, &cfg) {
            Ok(s) => s,
            Err(e) => return outcome(false, e),
        };
        for (source, mode) in [("learned", GoalMode::Learned), ("expert", gps(&cfg))] {
            let mut c = cfg.clone();
            c.benchmark.action_source = source.into();
            c.pipeline.goal_mode = mode;
            match workflow::stage_eval(&ws, &c, &mut quiet) {
                Ok((s, _)) => summaries.push(s),
                Err(e) => return outcome(false, e.to_string()),
            }
        }
        runs.push(artifact_paths(&ws, &summaries));
    }
    if runs[0]
        .iter()
        .map(|(p, _)| p)
        .ne(runs[1].iter().map(|(p, _)| p))
    {
        return outcome(false, "the two runs produced different artifact sets");
    }
    for ((rel, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        if std::fs::read(a).ok() != std::fs::read(b).ok() {
            return outcome(false, format!("{rel} differs between runs"));
        }
    }
    outcome(
        true,
        format!(
            "{} artifacts byte-identical across two full runs",
            runs[0].len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut gated_failures = Vec::new();
    let mut record = |id: usize, title: &str, gated: bool, start: Instant, o: Outcome| {
        report(id, title, gated, start, &o);
        if gated && !o.pass {
            gated_failures.push(id);
        }
    };

    let t = Instant::now();
    record(
        1,
        "planner oracle equivalence",
        true,
        t,
        criterion_planner_oracle(),
    );
    let t = Instant::now();
    record(2, "gradient correctness", true, t, criterion_gradients());
    let t = Instant::now();
    record(3, "discretize and sim replay", true, t, criterion_replay());

    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    let cfg = WorkflowConfig::load(Some(&demo_config_path()), &[]).expect("demo config loads");

    let t_train = Instant::now();
    let training = run_training(&ws, &cfg);
    let train_seconds = t_train.elapsed().as_secs_f64();

    let t = Instant::now();
    record(
        4,
        "expert loop closure",
        true,
        t,
        criterion_expert_loop(&ws, &cfg),
    );
    let t = Instant::now();
    record(5, "metric fidelity", true, t, criterion_metrics());

    match &training {
        Ok(summaries) => {
            record(
                6,
                "learned component targets",
                true,
                t_train,
                criterion_learned_targets(summaries, train_seconds),
            );
            let t = Instant::now();
            record(
                7,
                "end-to-end learned pipeline",
                false,
                t,
                criterion_learned_pipeline(&ws, &cfg),
            );
        }
        Err(e) => {
            record(
                6,
                "learned component targets",
                true,
                t_train,
                outcome(false, e.clone()),
            );
            record(
                7,
                "end-to-end learned pipeline",
                false,
                Instant::now(),
                outcome(false, format!("training failed: {e}")),
            );
        }
    }
    let t = Instant::now();
    record(8, "determinism", true, t, criterion_determinism());

    assert!(
        gated_failures.is_empty(),
        "failed criteria: {gated_failures:?}"
    );
}
