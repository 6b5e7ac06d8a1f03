use osgrag::evaluation::{evaluate, MatchConfig, Matcher};
use osgrag::model_clients::{MockFixture, MockModels};
use osgrag::pipeline::{build_graph, PipelineConfig};
use osgrag::synthetic::{
    default_intrinsics, generate_scene, render_observations, scan_trajectory, scene_fixture, RenderConfig, SceneSpec,
};

#[test]
fn noise_free_scenes_are_recovered() {
    for seed in 0..4u64 {
        let spec = SceneSpec {
            seed,
            object_count: 12,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let traj = scan_trajectory(spec.room_extent, 32);
        let frames = render_observations(&scene, &traj, &default_intrinsics(), &RenderConfig::default());
        let mut fixture = MockFixture::builtin();
        fixture.merge(scene_fixture(&scene, &frames));
        let models = MockModels::new(fixture, seed);
        let out = build_graph(&frames, &PipelineConfig::default(), &models, &models).unwrap();
        assert!(out.dropped_tracks.is_empty(), "seed {seed}: {:?}", out.dropped_tracks);
        let matcher = Matcher::new(&models, MatchConfig::default());
        let r = evaluate(&out.graph, &scene.graph, &matcher).unwrap();
        assert_eq!(r.object_r1, 1.0, "seed {seed}");
        assert!(r.relationship_r1 >= 0.9, "seed {seed}: {}", r.relationship_r1);
    }
}

#[test]
fn pipeline_rejects_empty_input() {
    let models = MockModels::new(MockFixture::builtin(), 0);
    assert!(build_graph(&[], &PipelineConfig::default(), &models, &models).is_err());
}
