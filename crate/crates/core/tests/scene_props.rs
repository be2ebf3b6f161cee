//! Cross-module properties over generated scenes.

use hoopmesh_core::camera::project;
use hoopmesh_core::codec::{decode_heatmaps, decode_location_maps, encode_heatmaps, encode_location_maps, DEFAULT_SIGMA};
use hoopmesh_core::eval::{mpjpe, mpvpe};
use hoopmesh_core::geom::{exp_so3, Vec3};
use hoopmesh_core::placement::place_player;
use hoopmesh_core::skeleton::{forward_kinematics_world, Frame, Pose3D};
use hoopmesh_core::skinning::lbs;
use hoopmesh_core::synth::{synth_scene, SceneBundle, SceneConfig};
use proptest::prelude::*;

fn scene(seed: u64) -> SceneBundle {
    let cfg = SceneConfig { voxel_res: 24, ..SceneConfig::default() };
    synth_scene(seed, &cfg).unwrap()
}

fn max_dist(a: &Pose3D, b: &Pose3D) -> f64 {
    a.positions.iter().zip(&b.positions).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn scenes_are_consistent(seed in 0u64..10_000) {
        let s = scene(seed);
        s.self_check().unwrap();
        let fk = forward_kinematics_world(&s.skeleton, &s.transforms).unwrap();
        prop_assert!(max_dist(&fk, &s.pose3d) < 1e-12);
        let posed = lbs(&s.rest_body, &s.weights, &s.transforms, &s.skeleton).unwrap();
        let (a, b): (Vec<Vec3>, Vec<Vec3>) = (posed.vertices(), s.posed_body.vertices());
        prop_assert!(mpvpe(&a, &b, false).unwrap() < 1e-9);
    }

    #[test]
    fn true_camera_places_the_true_pose(seed in 0u64..10_000, shift in prop::array::uniform3(-2.0f64..2.0)) {
        let s = scene(seed);
        // placement only sees the pose up to translation
        let rel = s.root_relative_pose().translated(&Vec3::from(shift), Frame::RootRelative);
        let placed = place_player(&s.camera, &s.pose2d, &rel, &s.jump).unwrap();
        prop_assert!(max_dist(&placed.pose, &s.pose3d) < 1e-6);
        for (p, q) in placed.pose.positions.iter().zip(&s.pose2d.pixels) {
            prop_assert!((project(&s.camera, p).unwrap() - q).norm() < 1e-6);
        }
    }

    #[test]
    fn codec_round_trip_on_scene_poses(seed in 0u64..10_000) {
        let s = scene(seed);
        let crop2d = s.crop.pose_to_crop(&s.pose2d);
        let rel = s.root_relative_pose();
        let heat = encode_heatmaps(&crop2d, DEFAULT_SIGMA).unwrap();
        prop_assert!(heat.clamped.is_empty());
        let loc = encode_location_maps(&rel, &crop2d, DEFAULT_SIGMA).unwrap();
        let back3d = decode_location_maps(&loc, &heat.stack).unwrap();
        prop_assert!(max_dist(&back3d, &rel) < 1e-9);
        let back2d = decode_heatmaps(&heat.stack);
        for (p, q) in back2d.pixels.iter().zip(&crop2d.pixels) {
            prop_assert!((p - q).amax() <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn aligned_joint_error_ignores_similarity(seed in 0u64..10_000, w in prop::array::uniform3(-2.0f64..2.0), scale in 0.5f64..2.0) {
        let s = scene(seed);
        let r = exp_so3(&Vec3::from(w));
        let t = Vec3::new(1.0, -3.0, 0.5);
        let moved = Pose3D::new(s.pose3d.positions.iter().map(|p| r * p * scale + t).collect(), Frame::World);
        let all: Vec<usize> = (0..s.pose3d.len()).collect();
        prop_assert!(mpjpe(&moved, &s.pose3d, &all, true).unwrap() < 1e-6);
        prop_assert!(mpjpe(&moved, &s.pose3d, &all, false).unwrap() > 0.0);
    }
}
