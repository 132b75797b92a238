//! Property tests over the geometric, data and network building blocks.

use ndarray::Array2;
use posekit::autoencoder::{AutoencoderConfig, PoseAutoencoder};
use posekit::bvh::parse_bvh;
use posekit::dataset::{compute_stats, DatasetOptions, PoseDataset, Split};
use posekit::fabrik::{
    bone_length_postprocess, fabrik_solve_chain, fabrik_solve_fullbody, FabrikConfig,
    KinematicChain,
};
use posekit::geom::Vec3;
use posekit::nn::{Activation, LayerSpec, MlpModel};
use posekit::skeleton::{
    bone_lengths, canonical_topology, to_root_relative, CanonicalClip, Pose, UpAxis, JOINT_COUNT,
    POSE_DIM,
};
use posekit::solver::solver_loss;
use posekit::synth::{generate_clip, Action, ClipOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter_map("non-zero", |v| {
        (v.length() > 1e-3).then(|| v.try_normalize()).flatten()
    })
}

fn world_pose() -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(2.0), JOINT_COUNT)
}

/// Reference bone lengths with arbitrary bone directions.
fn body_pose() -> impl Strategy<Value = Pose> {
    prop::collection::vec(direction(), JOINT_COUNT - 1).prop_map(|dirs| {
        let topo = canonical_topology();
        let lengths = bone_lengths(&topo.reference_pose, topo);
        let mut p = [Vec3::ZERO; JOINT_COUNT];
        for (k, (child, parent)) in topo.edges().enumerate() {
            p[child] = p[parent] + dirs[k] * lengths[k];
        }
        Pose::from_positions(&p)
    })
}

fn chain() -> impl Strategy<Value = KinematicChain> {
    (
        vec3(1.0),
        prop::collection::vec((direction(), 0.05f64..1.0), 1..7),
    )
        .prop_map(|(base, bones)| {
            let mut joints = vec![base];
            for (d, l) in bones {
                let last = *joints.last().unwrap();
                joints.push(last + d * l);
            }
            KinematicChain::new(joints).unwrap()
        })
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn root_relative_is_idempotent(world in world_pose()) {
        let once = to_root_relative(&world, UpAxis::Y).unwrap();
        let twice = to_root_relative(&once.positions(), UpAxis::Y).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn root_relative_ignores_horizontal_translation(world in world_pose(), dx in -100.0f64..100.0, dz in -100.0f64..100.0) {
        let shifted: Vec<Vec3> = world.iter().map(|&p| p + Vec3::new(dx, 0.0, dz)).collect();
        let a = to_root_relative(&world, UpAxis::Y).unwrap();
        let b = to_root_relative(&shifted, UpAxis::Y).unwrap();
        prop_assert!(max_abs_diff(&a.0, &b.0) < 1e-6);
    }

    #[test]
    fn chain_solutions_keep_segment_lengths(c in chain(), target in vec3(4.0)) {
        let s = fabrik_solve_chain(&c, target, &FabrikConfig::default()).unwrap();
        prop_assert!(s.chain.length_drift() < 1e-6);
        prop_assert_eq!(s.chain.base(), c.base());
    }

    #[test]
    fn chain_solutions_are_translation_equivariant(c in chain(), target in vec3(3.0), shift in vec3(50.0)) {
        let config = FabrikConfig::default();
        let moved = KinematicChain::with_lengths(
            c.joints.iter().map(|&p| p + shift).collect(),
            c.lengths.clone(),
        ).unwrap();
        let a = fabrik_solve_chain(&c, target, &config).unwrap();
        let b = fabrik_solve_chain(&moved, target + shift, &config).unwrap();
        for (p, q) in a.chain.joints.iter().zip(&b.chain.joints) {
            prop_assert!((*p + shift).distance(*q) < 1e-6, "{p:?} {q:?}");
        }
    }

    #[test]
    fn fullbody_keeps_bone_lengths(pose in body_pose(), goal in body_pose(), count in 1usize..=5) {
        let reference = bone_lengths(&pose, canonical_topology());
        let targets: Vec<(usize, Vec3)> = [4, 8, 12, 15, 19][..count].iter().map(|&j| (j, goal.joint(j))).collect();
        let solved = fabrik_solve_fullbody(&pose, &targets, &FabrikConfig::default()).unwrap();
        let after = bone_lengths(&solved.pose, canonical_topology());
        for (a, b) in after.iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn postprocess_is_idempotent(generated in prop::collection::vec(-1.5f32..1.5, POSE_DIM), reference in body_pose()) {
        let topo = canonical_topology();
        let lengths = bone_lengths(&reference, topo);
        let once = bone_length_postprocess(&Pose::from_slice(&generated).unwrap(), &lengths, topo);
        let twice = bone_length_postprocess(&once, &lengths, topo);
        prop_assert!(max_abs_diff(&once.0, &twice.0) < 1e-6);
        for (a, b) in bone_lengths(&once, topo).iter().zip(&lengths) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_round_trips(poses in prop::collection::vec(body_pose(), 2..6), probe in body_pose()) {
        let clip = CanonicalClip { poses, source_id: "p".into(), frame_time: 1.0 / 30.0 };
        let stats = compute_stats([&clip]).unwrap();
        let back = stats.denormalize(&stats.normalize(&probe));
        prop_assert!(max_abs_diff(&back.0, &probe.0) < 1e-5);
    }

    #[test]
    fn solver_loss_is_non_negative_and_pure_target_mse_without_k(
        a in prop::collection::vec(-3.0f32..3.0, POSE_DIM),
        b in prop::collection::vec(-3.0f32..3.0, POSE_DIM),
        k in 0.0f32..1.0,
    ) {
        let (loss, _) = solver_loss(&a, &b, &[8, 12], k).unwrap();
        prop_assert!(loss >= 0.0);
        let (pure, _) = solver_loss(&a, &b, &[8, 12], 0.0).unwrap();
        let coords = [24, 25, 26, 36, 37, 38];
        let expected = coords.iter().map(|&c| (a[c] as f64 - b[c] as f64).powi(2)).sum::<f64>() / 6.0;
        prop_assert!((pure - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn reconstruction_loss_is_non_negative(rows in prop::collection::vec(-3.0f32..3.0, POSE_DIM * 3), seed in 0u64..50) {
        let ae = PoseAutoencoder::new(&AutoencoderConfig { hidden_width: 16, latent_dim: 4, seed, ..Default::default() });
        let x = Array2::from_shape_vec((3, POSE_DIM), rows).unwrap();
        prop_assert!(ae.reconstruction_loss(x.view()).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_kinematics_is_rigid_and_deterministic(seed in any::<u64>(), action in 0usize..Action::ALL.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = generate_clip(Action::ALL[action], ClipOptions { frames: 4, ..Default::default() }, &mut rng);
        let clip = parse_bvh(&text).unwrap();
        for frame in 0..clip.frame_count() {
            let world = clip.forward_kinematics(frame).unwrap();
            prop_assert_eq!(&world, &clip.forward_kinematics(frame).unwrap());
            for (j, joint) in clip.joints.iter().enumerate() {
                if let Some(p) = joint.parent {
                    let err = (world[j].distance(world[p]) - joint.offset.length()).abs();
                    prop_assert!(err < 1e-5, "joint {}: {err}", joint.name);
                }
            }
        }
    }

    #[test]
    fn forward_pass_commutes_with_row_permutation(
        values in prop::collection::vec(-2.0f32..2.0, 5 * 7),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MlpModel::new(
            &[LayerSpec::new(7, 9, Activation::Relu), LayerSpec::new(9, 3, Activation::Linear)],
            &mut rng,
        ).unwrap();
        let x = Array2::from_shape_vec((5, 7), values).unwrap();
        let permuted = Array2::from_shape_fn((5, 7), |(r, c)| x[[perm[r], c]]);
        let y = model.predict(x.view()).unwrap();
        let yp = model.predict(permuted.view()).unwrap();
        for r in 0..5 {
            prop_assert_eq!(yp.row(r), y.row(perm[r]));
        }
    }

    #[test]
    fn pairs_never_cross_clips(lengths in prop::collection::vec(2usize..6, 2..6), seed in any::<u64>()) {
        let clips: Vec<CanonicalClip> = lengths
            .iter()
            .enumerate()
            .map(|(c, &n)| CanonicalClip {
                // Joint 0's x coordinate encodes the clip index.
                poses: (0..n).map(|f| {
                    let mut p = canonical_topology().reference_pose;
                    p.0[0] = c as f32;
                    p.0[1] = f as f32 * 1e-3;
                    p
                }).collect(),
                source_id: c.to_string(),
                frame_time: 1.0 / 30.0,
            })
            .collect();
        let options = DatasetOptions { validation_fraction: 0.0, ..Default::default() };
        let (dataset, _) = PoseDataset::build(clips, options).unwrap();
        let sampler = dataset.pair_sampler(Split::Train);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            let pair = sampler.sample(&mut rng).unwrap();
            let source = dataset.clips[pair.clip].source_id.parse::<f32>().unwrap();
            prop_assert_eq!(pair.x.0[0], source);
            prop_assert_eq!(pair.x_prime.0[0], source);
            prop_assert!(pair.x.0[1] != pair.x_prime.0[1]);
        }
    }
}
