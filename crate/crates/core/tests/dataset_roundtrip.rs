use std::fs;
use std::path::Path;

use trileg_core::config::Config;
use trileg_core::episode::{
    load_episode, prune_episode_dir, replay, summarize_dataset, validate_episode_dir, EpisodeMeta, EpisodeWriter, TaskCategory,
    DEFAULT_KEEP_N,
};
use trileg_core::eval::{trial_instruction, trial_simulator, EvalSettings};
use trileg_core::expert::ExpertPolicy;
use trileg_core::primitive::PrimitiveKind;
use trileg_core::render::{Renderer, SceneSpec};
use trileg_core::robot::{RobotCalibration, RobotState};
use trileg_core::rollout::{rollout, Recording};

fn record_expert(dir: &Path, kind: PrimitiveKind, trial: usize, category: TaskCategory) -> RobotState {
    let config = Config::default();
    let env = config.coil.envelope();
    let settings = EvalSettings { base_seed: 5, ..Default::default() };
    let mut sim = trial_simulator(kind, trial, &settings, &config).unwrap();
    let state0 = sim.state().clone();
    let instr = trial_instruction(kind, trial, &state0);
    let spec = instr.primitive_spec(&state0, &config.primitives, &config.robot);
    let meta = EpisodeMeta::new(category, instr.to_string(), SceneSpec::default(), sim.config().seed, config.hash());
    let mut writer = EpisodeWriter::create(dir, meta).unwrap();
    let renderer = Renderer::new(&config.robot);
    let scene = SceneSpec::default();
    let mut expert = ExpertPolicy::new(instr, config.expert.clone(), env, config.robot.clone(), &config.primitives);
    let rec = Recording { writer: &mut writer, renderer: &renderer, scene: &scene };
    rollout(&mut expert, &mut sim, &env, &spec, 120, Some(rec)).unwrap();
    writer.finalize().unwrap();
    sim.state().clone()
}

#[test]
fn finalize_load_roundtrip_and_replay() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("ep0");
    let final_state = record_expert(&dir, PrimitiveKind::Forward, 0, TaskCategory::GridMarker);
    let ep = validate_episode_dir(&dir).unwrap();
    assert_eq!(ep.samples.last().unwrap().state, final_state);
    assert_eq!(load_episode(&dir).unwrap(), ep);

    let config = Config::default();
    let mut cfg = config.sim;
    cfg.seed = ep.meta.seed;
    let replayed = replay(&ep, &config.model(), &cfg).unwrap();
    assert_eq!(replayed, final_state);
    assert_eq!(replayed.p.map(f64::to_bits), final_state.p.map(f64::to_bits));
}

#[test]
fn pruned_copy_replays_and_drops_frames() {
    let root = tempfile::tempdir().unwrap();
    let src = root.path().join("src");
    let final_state = record_expert(&src, PrimitiveKind::Squat, 0, TaskCategory::WhiteLesion);
    let dst = root.path().join("pruned");
    let pruned = prune_episode_dir(&src, &dst, DEFAULT_KEEP_N).unwrap();
    let original = load_episode(&src).unwrap();
    assert!(pruned.samples.len() < original.samples.len());
    let frames = fs::read_dir(dst.join("frames")).unwrap().count();
    assert_eq!(frames, pruned.samples.len());
    assert_eq!(validate_episode_dir(&dst).unwrap(), pruned);
    for s in &pruned.samples {
        assert_eq!(fs::read(dst.join(&s.frame_ref)).unwrap(), fs::read(src.join(&s.frame_ref)).unwrap());
    }
    let config = Config::default();
    assert_eq!(replay(&pruned, &config.model(), &config.sim).unwrap(), final_state);
}

fn synthetic_episode(dir: &Path, n: usize, category: TaskCategory) {
    let cal = RobotCalibration::default();
    let mut writer = EpisodeWriter::create(dir, EpisodeMeta::new(category, "SQUAT", SceneSpec::default(), 0, "h".into())).unwrap();
    let mut s = RobotState::rest(&cal);
    for t in 0..n {
        s.t = t as u64;
        writer.append(&s, Default::default(), b"not really a png").unwrap();
    }
    writer.finalize().unwrap();
}

#[test]
fn summarize_counts_and_flags_corruption() {
    let root = tempfile::tempdir().unwrap();
    let empty = summarize_dataset(root.path()).unwrap();
    assert_eq!((empty.episodes, empty.total_pairs, empty.per_category.len()), (0, 0, 0));

    synthetic_episode(&root.path().join("a"), 10, TaskCategory::GridMarker);
    synthetic_episode(&root.path().join("b"), 20, TaskCategory::GridMarker);
    synthetic_episode(&root.path().join("c"), 30, TaskCategory::YellowLesion);
    let s = summarize_dataset(root.path()).unwrap();
    assert_eq!((s.episodes, s.total_pairs), (3, 60));
    assert_eq!(s.per_category[&TaskCategory::GridMarker].episodes, 2);
    assert_eq!(s.per_category[&TaskCategory::YellowLesion].pairs, 30);
    assert!(s.corrupt.is_empty());

    fs::remove_file(root.path().join("b/frames/000004.png")).unwrap();
    let s = summarize_dataset(root.path()).unwrap();
    assert_eq!((s.episodes, s.total_pairs), (2, 40));
    assert_eq!(s.corrupt.len(), 1);
    assert!(s.corrupt[0].path.ends_with("b"));
}

#[test]
fn summarize_accepts_a_single_episode() {
    let root = tempfile::tempdir().unwrap();
    synthetic_episode(root.path(), 7, TaskCategory::WhiteLesion);
    let s = summarize_dataset(root.path()).unwrap();
    assert_eq!((s.episodes, s.total_pairs), (1, 7));
    assert!(s.corrupt.is_empty());
}
