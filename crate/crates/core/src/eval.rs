//! Benchmark harness: start/goal trial sampling, Success Rate, SPL and the
//! observed-over-optimal ratio (OOR), and report output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::DiscretizeParams;
use crate::gridworld::{sample_free_pose, Footprint, GridMap, Pose, DEFAULT_SAMPLE_ATTEMPTS};
use crate::models::{snap_to_free_cell, Autoencoder, GoalChecker, Policy};
use crate::pipeline::{
    navigate, Components, Episode, EpisodeEnv, GoalSpec, PipelineConfig, PipelineError,
    StrategyRegistry, TerminationReason,
};
use crate::plan::{optimal_length_on, uniform_costmap, Costmap};
use crate::render::CameraParams;
use crate::util::{child_seed, rng_from_seed};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Trial endpoints closer than this to a training endpoint are rejected.
pub const TRAINING_EXCLUSION_RADIUS: f64 = 0.1;
const MAX_PAIR_ATTEMPTS: usize = 1000;
const STREAM_TRIALS: u64 = 0x7121A1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("trial {0} has a non-positive optimal length")]
    NonPositiveOptimal(usize),
    #[error("could not sample trial pair {index} after {attempts} attempts")]
    SamplingExhausted { index: usize, attempts: usize },
    #[error("encoder mismatch between {left} ({left_hash}) and {right} ({right_hash})")]
    EncoderMismatch {
        left: &'static str,
        left_hash: String,
        right: &'static str,
        right_hash: String,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("report i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPair {
    pub start: Pose,
    pub goal: Pose,
    /// Shortest collision-free path length (the optimal length in SPL).
    pub optimal_length: f64,
}

/// Samples `n` connected start/goal pairs at cell centres, at least
/// `min_separation` apart and away from every point in `excluded`.
pub fn sample_trial_pairs(
    map: &GridMap,
    fp: &Footprint,
    n: usize,
    min_separation: f64,
    excluded: &[(f64, f64)],
    seed: u64,
) -> Result<Vec<TrialPair>, EvalError> {
    let uniform = uniform_costmap(map, fp);
    let near_training = |p: &Pose| {
        excluded
            .iter()
            .any(|&(x, y)| (p.x - x).hypot(p.y - y) <= TRAINING_EXCLUSION_RADIUS)
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(child_seed(seed, STREAM_TRIALS, i as u64));
            for _ in 0..MAX_PAIR_ATTEMPTS {
                let draw = |rng: &mut _| {
                    sample_free_pose(map, fp, rng, DEFAULT_SAMPLE_ATTEMPTS)
                        .ok()
                        .and_then(|p| snap_to_free_cell(map, fp, &uniform, &p))
                };
                let (Some(s), Some(g)) = (draw(&mut rng), draw(&mut rng)) else {
                    continue;
                };
                if s.distance_to(&g) < min_separation || near_training(&s) || near_training(&g) {
                    continue;
                }
                if let Ok(l) = optimal_length_on(&uniform, &s, &g) {
                    if l > 0.0 {
                        return Ok(TrialPair {
                            start: s,
                            goal: g,
                            optimal_length: l,
                        });
                    }
                }
            }
            Err(EvalError::SamplingExhausted {
                index: i,
                attempts: MAX_PAIR_ATTEMPTS,
            })
        })
        .collect()
}

/// One benchmark trial, flattened for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub success: bool,
    pub observed_length: f64,
    pub optimal_length: f64,
    pub steps: usize,
    pub reason: TerminationReason,
    pub start_x: f64,
    pub start_y: f64,
    pub start_heading: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub final_x: f64,
    pub final_y: f64,
    pub final_distance: f64,
    pub confirmations: usize,
}

impl EpisodeResult {
    /// A trial succeeds only on Done within `tolerance` of the goal.
    pub fn from_episode(index: usize, ep: &Episode, optimal_length: f64, tolerance: f64) -> Self {
        let final_distance = ep.final_pose.distance_to(&ep.goal);
        Self {
            index,
            success: ep.reason == TerminationReason::Done && final_distance <= tolerance,
            observed_length: ep.path_length,
            optimal_length,
            steps: ep.steps,
            reason: ep.reason,
            start_x: ep.start.x,
            start_y: ep.start.y,
            start_heading: ep.start.heading,
            goal_x: ep.goal.x,
            goal_y: ep.goal.y,
            final_x: ep.final_pose.x,
            final_y: ep.final_pose.y,
            final_distance,
            confirmations: ep.confirmations,
        }
    }
}

pub fn success_rate(results: &[EpisodeResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Success weighted by path length: mean of `S * l / max(p, l)`.
pub fn spl(results: &[EpisodeResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let mut sum = 0.0;
    for r in results {
        if !(r.optimal_length > 0.0) {
            return Err(EvalError::NonPositiveOptimal(r.index));
        }
        if r.success {
            sum += r.optimal_length / r.observed_length.max(r.optimal_length);
        }
    }
    Ok(sum / results.len() as f64)
}

/// Mean observed/optimal length over successful trials; `None` without successes.
pub fn oor(results: &[EpisodeResult]) -> Result<Option<f64>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let ratios: Vec<f64> = results
        .iter()
        .filter(|r| r.success)
        .map(|r| r.observed_length / r.optimal_length)
        .collect();
    Ok((!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub trials: usize,
    pub action_source: String,
    pub goal_detector: String,
    pub tolerance: f64,
    pub seed: u64,
    pub success_rate: f64,
    pub spl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oor: Option<f64>,
    pub config_hash: String,
    /// Snapshot of the configuration that produced the report.
    pub config: serde_json::Value,
    pub results: Vec<EpisodeResult>,
}

impl BenchmarkReport {
    pub fn from_results(
        results: Vec<EpisodeResult>,
        action_source: &str,
        goal_detector: &str,
        tolerance: f64,
        seed: u64,
        config_hash: &str,
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            trials: results.len(),
            action_source: action_source.into(),
            goal_detector: goal_detector.into(),
            tolerance,
            seed,
            success_rate: success_rate(&results)?,
            spl: spl(&results)?,
            oor: oor(&results)?,
            config_hash: config_hash.into(),
            config,
            results,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Io(e.to_string()))
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.results {
            w.serialize(r).map_err(|e| EvalError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| EvalError::Io(e.to_string()))
    }
}

/// Everything a benchmark run shares across trials.
pub struct BenchmarkSetup<'a> {
    pub map: &'a GridMap,
    pub footprint: Footprint,
    pub camera: &'a CameraParams,
    pub costmap: &'a Costmap,
    pub discretize: DiscretizeParams,
    pub encoder: Option<(&'a Autoencoder, &'a str)>,
    pub policy: Option<&'a Policy>,
    pub goal_checker: Option<&'a GoalChecker>,
}

impl BenchmarkSetup<'_> {
    /// All learned components must agree on the encoder they were trained with.
    pub fn check_encoder_hashes(&self) -> Result<(), EvalError> {
        let mut hashes: Vec<(&'static str, &str)> = Vec::new();
        if let Some((_, h)) = self.encoder {
            hashes.push(("encoder", h));
        }
        if let Some(p) = self.policy {
            hashes.push(("policy", &p.encoder_hash));
        }
        if let Some(g) = self.goal_checker {
            hashes.push(("goal checker", &g.encoder_hash));
        }
        for pair in hashes.windows(2) {
            if pair[0].1 != pair[1].1 {
                return Err(EvalError::EncoderMismatch {
                    left: pair[0].0,
                    left_hash: pair[0].1.into(),
                    right: pair[1].0,
                    right_hash: pair[1].1.into(),
                });
            }
        }
        Ok(())
    }
}

/// Runs one episode per pair in parallel; results keep the pair order.
pub fn run_trials(
    setup: &BenchmarkSetup,
    registry: &StrategyRegistry,
    action_source: &str,
    pipeline: &PipelineConfig,
    pairs: &[TrialPair],
    tolerance: f64,
) -> Result<Vec<(EpisodeResult, Episode)>, EvalError> {
    setup.check_encoder_hashes()?;
    pipeline.validate()?;
    let detector = pipeline.goal_mode.detector_name();
    let comps = Components {
        map: setup.map,
        footprint: setup.footprint,
        costmap: setup.costmap,
        discretize: setup.discretize,
        pipeline,
        policy: setup.policy,
        goal_checker: setup.goal_checker,
    };
    // Fail fast on unknown names or missing components.
    registry.action_source(action_source, &comps)?;
    registry.goal_detector(detector, &comps)?;
    let env = EpisodeEnv {
        map: setup.map,
        footprint: setup.footprint,
        camera: setup.camera,
        encoder: setup.encoder.map(|(e, _)| e),
    };
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut source = registry.action_source(action_source, &comps)?;
            let mut goal_detector = registry.goal_detector(detector, &comps)?;
            let goal = GoalSpec::capture(setup.map, setup.camera, env.encoder, &pair.goal)?;
            let ep = navigate(
                &env,
                source.as_mut(),
                goal_detector.as_mut(),
                &pair.start,
                &goal,
                pipeline,
            )?;
            Ok((
                EpisodeResult::from_episode(i, &ep, pair.optimal_length, tolerance),
                ep,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_floorplan, Cell, FloorplanParams};
    use crate::pipeline::GoalMode;
    use crate::plan::{build_costmap, CostmapParams};
    use proptest::prelude::*;

    fn result(success: bool, p: f64, l: f64) -> EpisodeResult {
        EpisodeResult {
            index: 0,
            success,
            observed_length: p,
            optimal_length: l,
            steps: 0,
            reason: if success {
                TerminationReason::Done
            } else {
                TerminationReason::StepLimit
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

    #[test]
    fn metric_unit_cases() {
        assert_eq!(spl(&[result(true, 2.0, 2.0)]).unwrap(), 1.0);
        assert_eq!(spl(&[result(true, 4.0, 2.0)]).unwrap(), 0.5);
        assert_eq!(oor(&[result(true, 2.0, 2.0)]).unwrap(), Some(1.0));
        assert_eq!(
            oor(&[result(true, 1.0, 1.0), result(true, 3.0, 1.0)]).unwrap(),
            Some(2.0)
        );
        assert_eq!(oor(&[result(false, 1.0, 1.0)]).unwrap(), None);
        let rs = [
            result(true, 1.0, 1.0),
            result(true, 1.0, 1.0),
            result(true, 1.0, 1.0),
            result(false, 1.0, 1.0),
        ];
        assert_eq!(success_rate(&rs).unwrap(), 0.75);
        assert!(matches!(success_rate(&[]), Err(EvalError::EmptyResults)));
        assert!(matches!(
            spl(&[result(true, 1.0, 0.0)]),
            Err(EvalError::NonPositiveOptimal(0))
        ));
    }

    #[test]
    fn done_beyond_tolerance_fails() {
        let ep = Episode {
            reason: TerminationReason::Done,
            steps: 10,
            forwards: 10,
            path_length: 1.0,
            start: Pose::new(0.0, 0.0, 0.0),
            goal: Pose::new(2.0, 0.0, 0.0),
            final_pose: Pose::new(1.0, 0.0, 0.0),
            confirmations: 1,
            trace: vec![],
        };
        assert!(!EpisodeResult::from_episode(0, &ep, 2.0, 0.5).success);
        let near = Episode {
            final_pose: Pose::new(1.6, 0.0, 0.0),
            ..ep
        };
        assert!(EpisodeResult::from_episode(0, &near, 2.0, 0.5).success);
    }

    fn arb_result() -> impl Strategy<Value = EpisodeResult> {
        (any::<bool>(), 0.0f64..20.0, 0.1f64..10.0).prop_map(|(s, p, l)| result(s, p, l))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn spl_never_exceeds_success_rate(rs in prop::collection::vec(arb_result(), 1..40)) {
            let sr = success_rate(&rs).unwrap();
            let s = spl(&rs).unwrap();
            prop_assert!(s <= sr + 1e-12);
            prop_assert!((0.0..=1.0).contains(&s));
            let manual = rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64;
            prop_assert_eq!(sr, manual);
        }
    }

    #[test]
    fn report_round_trips_through_json_and_csv() {
        let rs = vec![result(true, 2.0, 1.5), result(false, 0.3, 4.0)];
        let report = BenchmarkReport::from_results(
            rs,
            "expert",
            "gps",
            0.5,
            3,
            "abc",
            serde_json::json!({"k": 1}),
        )
        .unwrap();
        assert_eq!(
            BenchmarkReport::from_json(&report.to_json()).unwrap(),
            report
        );
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("index,success,observed_length"));
    }

    #[test]
    fn sampled_pairs_stay_in_one_component() {
        let mut map = GridMap::walled(80, 40, 0.05, 0).unwrap();
        map.fill_rect(38, 0, 42, 40, Cell::Occupied);
        let fp = Footprint::default();
        let pairs = sample_trial_pairs(&map, &fp, 20, 0.5, &[], 4).unwrap();
        for p in &pairs {
            assert_eq!(p.start.x < 2.0, p.goal.x < 2.0);
            assert!(p.start.distance_to(&p.goal) >= 0.5);
        }
        assert_eq!(
            pairs,
            sample_trial_pairs(&map, &fp, 20, 0.5, &[], 4).unwrap()
        );
    }

    #[test]
    fn excluded_endpoints_are_avoided() {
        let map = generate_floorplan(2, &FloorplanParams::default()).unwrap();
        let fp = Footprint::default();
        let free = sample_trial_pairs(&map, &fp, 30, 1.0, &[], 8).unwrap();
        let excluded: Vec<(f64, f64)> = free
            .iter()
            .flat_map(|p| [(p.start.x, p.start.y), (p.goal.x, p.goal.y)])
            .collect();
        let pairs = sample_trial_pairs(&map, &fp, 30, 1.0, &excluded, 9).unwrap();
        for p in &pairs {
            for &(x, y) in &excluded {
                assert!((p.start.x - x).hypot(p.start.y - y) > TRAINING_EXCLUSION_RADIUS);
                assert!((p.goal.x - x).hypot(p.goal.y - y) > TRAINING_EXCLUSION_RADIUS);
            }
        }
    }

    #[test]
    fn expert_benchmark_succeeds_and_path_lengths_match_forwards() {
        let map = generate_floorplan(5, &FloorplanParams::default()).unwrap();
        let fp = Footprint::default();
        let cm = build_costmap(&map, &fp, &CostmapParams::for_footprint(&fp)).unwrap();
        let cam = CameraParams::default();
        let setup = BenchmarkSetup {
            map: &map,
            footprint: fp,
            camera: &cam,
            costmap: &cm,
            discretize: DiscretizeParams {
                lookahead_waypoints: 4,
                ..Default::default()
            },
            encoder: None,
            policy: None,
            goal_checker: None,
        };
        let pairs = sample_trial_pairs(&map, &fp, 12, 1.0, &[], 1).unwrap();
        let cfg = PipelineConfig {
            goal_mode: GoalMode::Gps { tolerance: 0.5 },
            ..Default::default()
        };
        let out = run_trials(
            &setup,
            &StrategyRegistry::default(),
            "expert",
            &cfg,
            &pairs,
            0.5,
        )
        .unwrap();
        for (r, ep) in &out {
            assert!(r.success, "{r:?}");
            let summed: f64 = ep
                .trace
                .windows(2)
                .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
                .sum();
            assert!((summed - r.observed_length).abs() < 1e-9);
            let straight = (r.goal_x - r.start_x).hypot(r.goal_y - r.start_y);
            assert!(r.observed_length >= straight - r.final_distance - 1e-9);
        }
        let again = run_trials(
            &setup,
            &StrategyRegistry::default(),
            "expert",
            &cfg,
            &pairs,
            0.5,
        )
        .unwrap();
        assert_eq!(
            out.iter().map(|o| &o.0).collect::<Vec<_>>(),
            again.iter().map(|o| &o.0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mismatched_encoder_hashes_are_rejected() {
        use crate::models::ModelConfig;
        let cfg = ModelConfig {
            embedding_dim: 8,
            policy_hidden: vec![8],
            goal_hidden: 4,
            ..Default::default()
        };
        let policy = Policy::build(&cfg, "aaa", &mut rng_from_seed(0)).unwrap();
        let checker = GoalChecker::build(&cfg, "bbb", &mut rng_from_seed(0)).unwrap();
        let map = GridMap::walled(40, 40, 0.05, 0).unwrap();
        let fp = Footprint::default();
        let cm = build_costmap(&map, &fp, &CostmapParams::for_footprint(&fp)).unwrap();
        let cam = CameraParams::default();
        let setup = BenchmarkSetup {
            map: &map,
            footprint: fp,
            camera: &cam,
            costmap: &cm,
            discretize: DiscretizeParams::default(),
            encoder: None,
            policy: Some(&policy),
            goal_checker: Some(&checker),
        };
        let err = setup.check_encoder_hashes().unwrap_err();
        assert!(err.to_string().contains("aaa") && err.to_string().contains("bbb"));
    }
}
