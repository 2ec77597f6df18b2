//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hoa_core::fitting::{
    attraction_grad, fit_sequence, loss_2d_grad, loss_3d_grad, loss_angle_grad, loss_temporal_grad, nearest_vertices,
    penetration_grad, valid_flags, ContactTrack, FittingWeights, HandObservation, HandTrackInput, SequenceFit,
};
use hoa_core::fusion::{fuse_hand, FusedJoint, FusedKeypoints3D, FusionConfig, Keypoint2D, Keypoints2D, NUM_JOINTS};
use hoa_core::geometry::{IndexedMesh, Mat3, RigidTransform, TriMesh, Vec2, Vec3};
use hoa_core::hand::{HandModel, HandSide, NUM_ARTICULATION, NUM_BETAS, NUM_POSE_PARAMS, NUM_THETA};
use hoa_core::metrics::{
    collision_ratio, frechet_distance, interaction_field, mpjpe, pa_mpjpe, penetration_volume, rotation_error,
    translation_error, CollisionSample, FeatureSet,
};
use hoa_core::registration::{closest_terms, contact_loss, frame_object_pose, penetration_loss, register_rig, MarkerRig, RegistrationConfig};
use hoa_core::synth::{
    camera_rig, generate, CameraRigSpec, GroundTruthBundle, NoiseSpec, ObjectShape, ObjectSpec, PipelineOutputs, ScoreOptions, SceneSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pose(rng: &mut impl Rng, max_angle: f64, shift: f64) -> RigidTransform {
    let angle = rng.random_range(0.0..max_angle);
    let axis = unit(rng);
    RigidTransform::from_axis_angle(&(axis * angle), unit(rng) * rng.random_range(0.0..shift))
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = numeric.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------- criterion 1

/// True when `active` is the same at `x` and at every point of the central
/// difference stencil around it.
fn stencil_is_smooth(x: &[f64], h: f64, active: impl Fn(&[f64]) -> Vec<bool>) -> bool {
    let here = active(x);
    (0..x.len()).all(|i| {
        [h, -h].iter().all(|d| {
            let mut y = x.to_vec();
            y[i] += d;
            active(&y) == here
        })
    })
}

struct HandState {
    joints: Vec<Vec3>,
    vertices: Vec<Vec3>,
}

fn posed(model: &HandModel, beta: &[f64], x: &[f64]) -> HandState {
    let shaped = model.shape(beta);
    let p = model.pose(&shaped, &x[..NUM_THETA], Vec3::new(x[NUM_THETA], x[NUM_THETA + 1], x[NUM_THETA + 2]));
    HandState { joints: p.joints, vertices: p.vertices }
}

fn chain(model: &HandModel, beta: &[f64], x: &[f64], gj: Option<&[Vec3]>, gv: Option<&[Vec3]>) -> Vec<f64> {
    let shaped = model.shape(beta);
    let p = model.pose(&shaped, &x[..NUM_THETA], Vec3::new(x[NUM_THETA], x[NUM_THETA + 1], x[NUM_THETA + 2]));
    model.vjp(&shaped, &p, gj, gv).to_vec()
}

fn criterion_1() -> Outcome {
    const STATES: usize = 100;
    const H: f64 = 1e-6;
    let start = Instant::now();
    let model = HandModel::synthetic(778).unwrap();
    let cameras = camera_rig(&CameraRigSpec { target: [0.0, 0.0, 0.0], ..CameraRigSpec::default() }).unwrap();
    let (lower, upper) = model.bounds();
    let (lower, upper) = (lower.to_vec(), upper.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = [0.0f64; 8];
    let mut redrawn = 0;
    let names = ["L_2D", "L_3D", "L_angle", "L_tc", "L_a", "L_p", "object L_c", "object L_p"];

    for _ in 0..STATES {
        let beta: Vec<f64> = (0..NUM_BETAS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut x: Vec<f64> = (0..NUM_POSE_PARAMS).map(|_| rng.random_range(-0.6..0.6)).collect();
            for c in 0..3 {
                x[NUM_THETA + c] = rng.random_range(-0.05..0.05);
            }
            x
        };
        let x = draw(&mut rng);
        let target = posed(&model, &beta, &draw(&mut rng));

        // keypoint terms against another pose's joints
        let mut obs = Keypoints2D::empty(cameras.len());
        for (c, cam) in cameras.iter().enumerate() {
            for (i, j) in target.joints.iter().enumerate() {
                obs.views[c][i] = Some(Keypoint2D::new(cam.project(j).unwrap(), 1.0));
            }
        }
        let fused = FusedKeypoints3D {
            joints: target
                .joints
                .iter()
                .map(|p| {
                    let valid = (0..cameras.len()).map(|_| rng.random_bool(0.8)).collect();
                    Ok(FusedJoint { position: (*p).into(), valid, inlier_count: 0 })
                })
                .collect(),
        };
        let valid = valid_flags(&fused, cameras.len());
        let l2d = |x: &[f64]| loss_2d_grad(&posed(&model, &beta, x).joints, &cameras, &obs, &valid).0;
        let g = loss_2d_grad(&posed(&model, &beta, &x).joints, &cameras, &obs, &valid).1;
        worst[0] = worst[0].max(rel_err(&chain(&model, &beta, &x, Some(&g), None), &central_difference(l2d, &x, H)));
        let l3d = |x: &[f64]| loss_3d_grad(&posed(&model, &beta, x).joints, &fused).0;
        let g = loss_3d_grad(&posed(&model, &beta, &x).joints, &fused).1;
        worst[1] = worst[1].max(rel_err(&chain(&model, &beta, &x, Some(&g), None), &central_difference(l3d, &x, H)));

        // joint limits: push some articulation past the bounds
        let mut theta = x[..NUM_THETA].to_vec();
        for i in 0..NUM_ARTICULATION {
            theta[3 + i] = rng.random_range(lower[i] - 0.5..upper[i] + 0.5);
        }
        let la = |t: &[f64]| loss_angle_grad(t, &lower, &upper).0;
        worst[2] = worst[2].max(rel_err(&loss_angle_grad(&theta, &lower, &upper).1, &central_difference(la, &theta, H)));

        let window: Vec<Vec<f64>> = (0..5).map(|_| draw(&mut rng)).collect();
        let flat: Vec<f64> = window.concat();
        let unflat = |f: &[f64]| -> Vec<Vec<f64>> { f.chunks(NUM_POSE_PARAMS).map(<[f64]>::to_vec).collect() };
        let tc = |f: &[f64]| loss_temporal_grad(&unflat(f)).unwrap().0;
        let g = loss_temporal_grad(&window).unwrap().1.concat();
        worst[3] = worst[3].max(rel_err(&g, &central_difference(tc, &flat, H)));

        // contact terms against a sphere sunk into the palm; the gate and the
        // hinge switch per vertex, so the sphere is redrawn until no vertex
        // changes side within the difference stencil
        let here = posed(&model, &beta, &x);
        let mean = here.vertices.iter().sum::<Vec3>() / here.vertices.len() as f64;
        let mut centre = mean;
        let mut smooth = false;
        for _ in 0..50 {
            centre = mean + unit(&mut rng) * 0.01;
            let sphere = IndexedMesh::new(TriMesh::icosphere(centre, 0.03, 3));
            let nearest = nearest_vertices(&here.vertices, &sphere).unwrap();
            let active = |v: &[Vec3]| -> Vec<bool> {
                let a = attraction_grad(v, &sphere, &nearest, 0.01).1;
                let p = penetration_grad(v, &sphere, &nearest).1;
                a.iter().chain(&p).map(|g| *g != Vec3::zeros()).collect()
            };
            if stencil_is_smooth(&x, H, |y| active(&posed(&model, &beta, y).vertices)) {
                smooth = true;
                break;
            }
            redrawn += 1;
        }
        let sphere = IndexedMesh::new(TriMesh::icosphere(centre, 0.03, 3));
        let nearest = nearest_vertices(&here.vertices, &sphere).unwrap();
        if smooth {
            let la = |x: &[f64]| attraction_grad(&posed(&model, &beta, x).vertices, &sphere, &nearest, 0.01).0;
            let g = attraction_grad(&here.vertices, &sphere, &nearest, 0.01).1;
            worst[4] = worst[4].max(rel_err(&chain(&model, &beta, &x, None, Some(&g)), &central_difference(la, &x, H)));
            let lp = |x: &[f64]| penetration_grad(&posed(&model, &beta, x).vertices, &sphere, &nearest).0;
            let g = penetration_grad(&here.vertices, &sphere, &nearest).1;
            worst[5] = worst[5].max(rel_err(&chain(&model, &beta, &x, None, Some(&g)), &central_difference(lp, &x, H)));
        } else {
            worst[4] = f64::INFINITY;
            worst[5] = f64::INFINITY;
        }

        // object terms at a marker near the surface
        let q = centre + unit(&mut rng) * rng.random_range(0.025..0.035);
        let t = closest_terms(&q, &sphere).unwrap();
        let at = |v: &[f64]| Vec3::new(v[0], v[1], v[2]);
        let qs = [q.x, q.y, q.z];
        let fd = central_difference(|v| contact_loss(&at(v), &sphere).unwrap(), &qs, 1e-8);
        worst[6] = worst[6].max(rel_err(t.d_contact.as_slice(), &fd));
        let fd = central_difference(|v| penetration_loss(&at(v), &sphere).unwrap(), &qs, 1e-8);
        worst[7] = worst[7].max(rel_err(t.d_penetration.as_slice(), &fd));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|w| *w < 1e-4) && elapsed < 60.0;
    let detail = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("worst relative error over {STATES} states: {detail}; {redrawn} contact spheres redrawn off switching points; {elapsed:.1} s"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    const TRIALS: usize = 1000;
    let cameras = camera_rig(&CameraRigSpec {
        radius: 1.0,
        heights: vec![-0.1, 0.15],
        target: [0.0, 0.0, 0.0],
        ..CameraRigSpec::default()
    })
    .unwrap();
    let results: Vec<(bool, bool)> = (0..TRIALS as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
            let noise = Normal::new(0.0, 2.0).unwrap();
            let truth: Vec<Vec3> = (0..NUM_JOINTS).map(|_| unit(&mut rng) * rng.random_range(0.0..0.08)).collect();
            let mut obs = Keypoints2D::empty(cameras.len());
            let mut planted = vec![];
            for (i, p) in truth.iter().enumerate() {
                for (c, cam) in cameras.iter().enumerate() {
                    let px = cam.project(p).unwrap() + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    obs.views[c][i] = Some(Keypoint2D::new(px, 1.0));
                }
                let bad = rand::seq::index::sample(&mut rng, cameras.len(), 2);
                for c in bad.iter() {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let px = obs.views[c][i].unwrap().px() + Vec2::new(a.cos(), a.sin()) * 200.0;
                    obs.views[c][i] = Some(Keypoint2D::new(px, 1.0));
                    planted.push((c, i));
                }
            }
            let fused = fuse_hand(&cameras, &obs, &FusionConfig { seed: trial, ..FusionConfig::default() });
            let accurate = truth
                .iter()
                .enumerate()
                .all(|(i, p)| fused.joint(i).is_some_and(|j| (j.point() - p).norm() < 0.005));
            let rejected = planted.iter().all(|&(c, i)| fused.joint(i).is_some() && !fused.is_valid(c, i));
            (accurate, rejected)
        })
        .collect();
    let accurate = results.iter().filter(|r| r.0).count() as f64 / TRIALS as f64;
    let rejected = results.iter().filter(|r| r.1).count() as f64 / TRIALS as f64;
    outcome(
        accurate >= 0.99 && rejected >= 0.99,
        format!(
            "all 21 joints within 5 mm in {:.1}% of {TRIALS} trials, every planted outlier invalid in {:.1}%",
            100.0 * accurate,
            100.0 * rejected
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Greedy farthest-point subset of `ids`.
fn spread(points: &[Vec3], ids: &[usize], k: usize) -> Vec<usize> {
    let mut chosen = vec![ids[0]];
    let mut dist: Vec<f64> = ids.iter().map(|&i| (points[i] - points[ids[0]]).norm()).collect();
    while chosen.len() < k {
        let (best, _) = dist.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let pick = ids[best];
        chosen.push(pick);
        for (d, &i) in dist.iter_mut().zip(ids) {
            *d = d.min((points[i] - points[pick]).norm());
        }
    }
    chosen
}

fn criterion_3() -> Outcome {
    const SEEDS: u64 = 100;
    let mesh = IndexedMesh::new(TriMesh::ellipsoid(Vec3::zeros(), Vec3::new(0.06, 0.04, 0.025), 8));
    let config = RegistrationConfig { alpha: 0.01, lr: 1e-4, ..RegistrationConfig::default() };
    let trials: Vec<(f64, f64, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
            let vertices = mesh.mesh.vertices();
            let candidates: Vec<usize> = (0..400).map(|_| rng.random_range(0..vertices.len())).collect();
            let picked = spread(vertices, &candidates, 14);
            let truth = random_pose(&mut rng, 3.0, 0.05);
            let rig = MarkerRig::new(picked.iter().map(|&i| truth.apply(&vertices[i])).collect(), vec![0, 1, 2, 3]).unwrap();
            // 5 degrees about the object centre and 5 mm, in the rig frame
            let centre = truth.apply(&Vec3::zeros());
            let turn = RigidTransform::from_axis_angle(&(unit(&mut rng) * 5f64.to_radians()), Vec3::zeros());
            let about = RigidTransform::from_translation(centre)
                .compose(&turn)
                .compose(&RigidTransform::from_translation(-centre));
            let init = RigidTransform::from_translation(unit(&mut rng) * 0.005).compose(&about).compose(&truth);
            let r = register_rig(&rig, &mesh, &init, &config).unwrap();
            let contact = 1e3 * r.contact.iter().sum::<f64>() / r.contact.len() as f64;
            let te = translation_error(&[r.t_star], &[truth]).unwrap();
            let re = rotation_error(&[r.t_star], &[truth]).unwrap();
            (contact, te, re)
        })
        .collect();
    let ok = trials.iter().filter(|(c, t, r)| *c < 1.0 && *t < 2.0 && *r < 1.0).count();
    let worst = trials.iter().fold((0.0f64, 0.0f64, 0.0f64), |w, t| (w.0.max(t.0), w.1.max(t.1), w.2.max(t.2)));
    outcome(
        ok as f64 >= 0.95 * SEEDS as f64,
        format!(
            "{ok}/{SEEDS} seeds recovered; worst contact {:.3} mm, {:.3} mm, {:.3} deg",
            worst.0, worst.1, worst.2
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn track_errors(bundle: &GroundTruthBundle) -> (f64, f64) {
    let offset = bundle.spec.mocap.frame_offset;
    let mut pred = vec![];
    let mut gt = vec![];
    for (o, truth) in bundle.observed.objects.iter().zip(&bundle.truth.objects) {
        for m in &o.markers {
            let Some(f) = m.frame.checked_sub(offset).filter(|f| *f < bundle.spec.frames) else { continue };
            let p = frame_object_pose(&o.rig, &truth.t_star, &m.tracked_positions(&o.rig)).unwrap();
            pred.push(p.pose);
            gt.push(truth.poses[f]);
        }
    }
    (translation_error(&pred, &gt).unwrap(), rotation_error(&pred, &gt).unwrap())
}

/// Expected mean rotation error, degrees, of any unbiased rigid fit to the
/// tracked markers of `rig` under isotropic noise `sigma`: the rotation
/// error is Gaussian with covariance σ² (Σ |r|² I − r rᵀ)⁻¹ over the
/// centred markers.
fn rotation_floor_deg(rig: &MarkerRig, sigma: f64, rng: &mut impl Rng) -> f64 {
    let tracked: Vec<Vec3> = rig.tracked.iter().map(|&i| Vec3::from(rig.marker_local[i])).collect();
    let c = tracked.iter().sum::<Vec3>() / tracked.len() as f64;
    let inertia: Mat3 = tracked.iter().map(|p| Mat3::identity() * (p - c).norm_squared() - (p - c) * (p - c).transpose()).sum();
    let l = inertia.try_inverse().unwrap().cholesky().unwrap().l();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 20_000;
    let sum: f64 = (0..n).map(|_| (l * Vec3::from_fn(|_, _| normal.sample(rng))).norm()).sum();
    (sigma * sum / n as f64).to_degrees()
}

fn criterion_4() -> Outcome {
    // object-sized rigs: 14 markers on the surface, four of them tracked
    let mut objects = vec![
        ObjectSpec::new("pan", ObjectShape::Ellipsoid { semi_axes: [0.11, 0.09, 0.035], subdivisions: 4 }, HandSide::Right),
        ObjectSpec::new("bowl", ObjectShape::Cuboid { half_extents: [0.08, 0.08, 0.04], cells: 12 }, HandSide::Left),
    ];
    for o in &mut objects {
        o.markers = 14;
        o.tracked = Some(vec![0, 1, 2, 3]);
    }
    let base = SceneSpec { seed: 4, frames: 500, objects, noise: NoiseSpec::none(), ..SceneSpec::default() };
    let clean = track_errors(&generate(&base).unwrap());
    let jitter = SceneSpec { noise: NoiseSpec { marker_jitter_mm: 1.0, ..NoiseSpec::none() }, ..base };
    let bundle = generate(&jitter).unwrap();
    let noisy = track_errors(&bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let floors: Vec<f64> = bundle.observed.objects.iter().map(|o| rotation_floor_deg(&o.rig, 1e-3, &mut rng)).collect();
    let floor = floors.iter().sum::<f64>() / floors.len() as f64;
    outcome(
        clean.0 < 1e-6 && clean.1 < 1e-6 && noisy.0 < 2.0 && noisy.1 < 0.5,
        format!(
            "jitter-free T_e {:.2e} mm, R_e {:.2e} deg; 1 mm jitter T_e {:.3} mm, R_e {:.3} deg over 500 frames \
             (estimation floor of these 4-marker rigs {floor:.3} deg)",
            clean.0, clean.1, noisy.0, noisy.1
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn fit(bundle: &GroundTruthBundle, weights: &FittingWeights, clean: bool) -> SequenceFit {
    let inputs = if clean { &bundle.clean } else { &bundle.observed };
    let cams = &bundle.truth.cameras;
    let meshes: Vec<IndexedMesh> = bundle.meshes.iter().cloned().map(IndexedMesh::new).collect();
    let poses: Vec<Vec<Option<RigidTransform>>> =
        bundle.truth.objects.iter().map(|o| o.poses.iter().map(|p| Some(*p)).collect()).collect();
    let models = [bundle.model_for(HandSide::Left), bundle.model_for(HandSide::Right)];
    let observations = |side: HandSide| -> Vec<Option<HandObservation>> {
        bundle
            .truth
            .frame_ids
            .iter()
            .map(|&f| {
                let rec = inputs.keypoints.iter().find(|r| r.frame == f && r.hand == side)?;
                let fused = fuse_hand(cams, &rec.keypoints, &FusionConfig::default());
                Some(HandObservation { keypoints: rec.keypoints.clone(), fused })
            })
            .collect()
    };
    let obs = [observations(HandSide::Left), observations(HandSide::Right)];
    let input = |i: usize, side: HandSide| {
        let object = bundle.truth.objects.iter().position(|o| o.holder == side).unwrap();
        HandTrackInput {
            model: &models[i],
            beta: inputs.betas.get(side).unwrap().clone(),
            observations: &obs[i],
            contact: Some(ContactTrack { mesh: &meshes[object], poses: &poses[object] }),
            init: None,
        }
    };
    let left = input(0, HandSide::Left);
    let right = input(1, HandSide::Right);
    fit_sequence(cams, &bundle.truth.frame_ids, Some(&left), Some(&right), weights).unwrap()
}

fn worst_mpjpe(bundle: &GroundTruthBundle, fit: SequenceFit, physical: bool) -> f64 {
    let outputs = PipelineOutputs { fit: Some(fit), objects: vec![] };
    let report = bundle.score(&outputs, &ScoreOptions { physical, ..ScoreOptions::default() }).unwrap();
    report.hands.iter().map(|h| h.mpjpe_mm).fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let mut parts = vec![];
    let mut pass = true;

    let start = Instant::now();
    let bundle = generate(&SceneSpec { noise: NoiseSpec::none(), ..SceneSpec::default() }).unwrap();
    let weights = FittingWeights { lambda_a: 0.0, lambda_p: 0.0, ..FittingWeights::default() };
    let e = worst_mpjpe(&bundle, fit(&bundle, &weights, true), false);
    let t = start.elapsed().as_secs_f64();
    pass &= e < 1.0 && t < 300.0;
    parts.push(format!("noiseless {e:.3} mm ({t:.0} s)"));

    let start = Instant::now();
    let bundle = generate(&SceneSpec { seed: 3, ..SceneSpec::default() }).unwrap();
    let e = worst_mpjpe(&bundle, fit(&bundle, &FittingWeights::default(), false), true);
    let t = start.elapsed().as_secs_f64();
    pass &= e < 10.0 && t < 300.0;
    parts.push(format!("2 px noise {e:.3} mm ({t:.0} s)"));

    let start = Instant::now();
    let mut spec = SceneSpec { seed: 5, noise: NoiseSpec::none(), ..SceneSpec::default() };
    for o in &mut spec.objects {
        o.gap = -0.002;
    }
    let bundle = generate(&spec).unwrap();
    let fit = fit(&bundle, &FittingWeights::default(), true);
    let t = start.elapsed().as_secs_f64();
    for (side, windows) in [("left", &fit.diagnostics.left), ("right", &fit.diagnostics.right)] {
        let before: f64 = windows.iter().map(|w| w.stage2.initial_penetration).sum();
        let after: f64 = windows.iter().map(|w| w.stage2.final_penetration).sum();
        pass &= before > 0.0 && after < before;
        parts.push(format!("{side} penetration {before:.4} -> {after:.4} m"));
    }
    pass &= t < 300.0;
    parts.push(format!("({t:.0} s)"));
    outcome(pass, format!("50 frames: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 6

fn oracle_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for f in 0..pred.len() {
        for j in 0..pred[f].len() {
            let d = pred[f][j] - gt[f][j];
            sum += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            n += 1.0;
        }
    }
    1000.0 * sum / n
}

/// Umeyama similarity from `p` onto `g`, applied to `p`.
fn oracle_similarity(p: &[Vec3], g: &[Vec3]) -> Vec<Vec3> {
    let n = p.len() as f64;
    let mp = p.iter().sum::<Vec3>() / n;
    let mg = g.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var = 0.0;
    for (a, b) in p.iter().zip(g) {
        cov += (b - mg) * (a - mp).transpose();
        var += (a - mp).norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (svd.singular_values.component_mul(&s.diagonal())).sum() / var;
    let t = mg - scale * r * mp;
    p.iter().map(|x| scale * r * x + t).collect()
}

fn oracle_rotation_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let r = a.rotation.transpose() * b.rotation;
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-300)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut mismatches = 0;
    let mut worst_pa_self: f64 = 0.0;
    for _ in 0..200 {
        let frames = rng.random_range(1..6);
        let skel = |rng: &mut ChaCha8Rng| -> Vec<Vec3> { (0..21).map(|_| unit(rng) * rng.random_range(0.0..0.1)).collect() };
        let gt: Vec<Vec<Vec3>> = (0..frames).map(|_| skel(&mut rng)).collect();
        let pred: Vec<Vec<Vec3>> = gt.iter().map(|g| g.iter().map(|x| x + unit(&mut rng) * 0.01).collect()).collect();
        mismatches += !close(mpjpe(&pred, &gt).unwrap(), oracle_mpjpe(&pred, &gt)) as usize;
        let aligned: Vec<Vec<Vec3>> = pred.iter().zip(&gt).map(|(p, g)| oracle_similarity(p, g)).collect();
        mismatches += !close(pa_mpjpe(&pred, &gt).unwrap(), oracle_mpjpe(&aligned, &gt)) as usize;

        // similarity copies align exactly
        let sim = random_pose(&mut rng, 3.0, 0.5);
        let scale = rng.random_range(0.5..2.0);
        let copy: Vec<Vec<Vec3>> = gt.iter().map(|g| g.iter().map(|x| sim.apply(&(x * scale))).collect()).collect();
        worst_pa_self = worst_pa_self.max(pa_mpjpe(&copy, &gt).unwrap());

        let a: Vec<RigidTransform> = (0..frames).map(|_| random_pose(&mut rng, 3.0, 0.2)).collect();
        let b: Vec<RigidTransform> = (0..frames).map(|_| random_pose(&mut rng, 3.0, 0.2)).collect();
        let te = a.iter().zip(&b).map(|(x, y)| 1000.0 * (x.translation - y.translation).norm()).sum::<f64>() / frames as f64;
        let re = a.iter().zip(&b).map(|(x, y)| oracle_rotation_deg(x, y)).sum::<f64>() / frames as f64;
        mismatches += !close(translation_error(&a, &b).unwrap(), te) as usize;
        mismatches += !close(rotation_error(&a, &b).unwrap(), re) as usize;

        let mesh = TriMesh::ellipsoid(unit(&mut rng) * 0.05, Vec3::new(0.03, 0.02, 0.04), 2);
        let points: Vec<Vec3> = (0..50).map(|_| unit(&mut rng) * rng.random_range(0.0..0.1)).collect();
        let field = interaction_field(&points, &IndexedMesh::new(mesh.clone())).unwrap();
        for (p, d) in points.iter().zip(&field) {
            let brute = mesh.vertices().iter().map(|v| (p - v).norm()).fold(f64::INFINITY, f64::min);
            mismatches += !close(*d, brute) as usize;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let gap = unit(&mut rng);
    let draw = |rng: &mut ChaCha8Rng, shift: Vec3| FeatureSet {
        rows: (0..50_000)
            .map(|_| (0..3).map(|k| normal.sample(rng) + shift[k]).collect())
            .collect(),
    };
    let a = draw(&mut rng, Vec3::zeros());
    let b = draw(&mut rng, gap);
    let fd = frechet_distance(&a, &b).unwrap();
    outcome(
        mismatches == 0 && worst_pa_self < 1e-9 && (fd - 1.0).abs() <= 0.1,
        format!(
            "{mismatches} oracle mismatches over 200 instances; similarity-copy PA-MPJPE {worst_pa_self:.1e} mm; Frechet distance {fd:.4}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

/// Voxel centres `(k + ½) · voxel` strictly inside `(lo, hi)`.
fn centres_between(lo: f64, hi: f64, voxel: f64) -> f64 {
    ((hi / voxel - 0.5).floor() - (lo / voxel - 0.5).ceil() + 1.0).max(0.0)
}

/// Random overlapping cube pair with edges in `edge` and the second cube
/// shifted by up to `shift` of the first edge per axis. Returns the measured
/// volume, the analytic one and the ideal voxel-centre count, all in cm³.
fn cube_pair(rng: &mut impl Rng, edge: std::ops::Range<f64>, shift: f64) -> (f64, f64, f64) {
    const VOXEL: f64 = 0.001;
    let (sa, sb) = (rng.random_range(edge.clone()), rng.random_range(edge));
    let min_a = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
    let min_b = min_a + Vec3::new(rng.random_range(0.0..shift * sa), rng.random_range(0.0..shift * sa), rng.random_range(0.0..shift * sa));
    let (mut analytic, mut ideal) = (1e6, 1e-3);
    for k in 0..3 {
        let (lo, hi) = (min_a[k].max(min_b[k]), (min_a[k] + sa).min(min_b[k] + sb));
        analytic *= (hi - lo).max(0.0);
        ideal *= centres_between(lo, hi, VOXEL);
    }
    let measured = penetration_volume(&TriMesh::cube(min_a, sa), &TriMesh::cube(min_b, sb), VOXEL).unwrap();
    (measured, analytic, ideal)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let rel = |(m, a, _): (f64, f64, f64)| (m - a).abs() / a;
    // object-scale cubes: every overlap is at least 60 voxels per axis
    let large: Vec<_> = (0..10).map(|_| cube_pair(&mut rng, 0.08..0.12, 0.25)).collect();
    let worst = large.iter().copied().map(rel).fold(0.0, f64::max);
    // centimetre cubes: quantisation dominates, so compare with the ideal
    // voxel-centre count instead
    let small: Vec<_> = (0..10).map(|_| cube_pair(&mut rng, 0.015..0.03, 0.6)).collect();
    let exact = large.iter().chain(&small).all(|(m, _, i)| (m - i).abs() <= 1e-9 * i);
    let small_worst = small.iter().copied().map(rel).fold(0.0, f64::max);

    let a = TriMesh::cube(Vec3::zeros(), 0.02);
    let b = TriMesh::cube(Vec3::new(0.05, 0.0, 0.0), 0.02);
    let disjoint = penetration_volume(&a, &b, 0.001).unwrap();
    let ratio = collision_ratio(&[CollisionSample { hand: &a, environment: vec![&b] }], 0.001).unwrap();
    outcome(
        worst < 0.05 && exact && disjoint == 0.0 && ratio == 0.0,
        format!(
            "worst relative volume error {:.2}% at 1 mm voxels on 8-12 cm cubes; voxel counts equal the ideal centre count: {exact} \
             (1.5-3 cm cubes deviate up to {:.1}% from analytic by quantisation); disjoint volume {disjoint}, collision ratio {ratio}",
            100.0 * worst,
            100.0 * small_worst
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn hoa(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_hoa")).args(args).output().is_ok_and(|o| o.status.success())
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"frames": 12, "seed": 8, "noise": {"outlier_rate": 0.05, "marker_jitter_mm": 0.5}}"#).unwrap();
    let scene = dir.path().join("scene");
    let config = scene.join("config.json");
    let (spec, scene, config) = (spec.to_str().unwrap(), scene.to_str().unwrap(), config.to_str().unwrap());
    if !hoa(&["synth", "--spec", spec, "--out", scene]) {
        return outcome(false, "synth failed".into());
    }
    let outs: Vec<_> = [("1", "a"), ("4", "b"), ("0", "c")]
        .iter()
        .map(|(jobs, name)| {
            let out = dir.path().join(name);
            let ok = hoa(&["all", "-c", config, "--jobs", jobs, "--seed", "17", "--output", out.to_str().unwrap()]);
            (ok, out)
        })
        .collect();
    if outs.iter().any(|(ok, _)| !ok) {
        return outcome(false, "a pipeline run failed".into());
    }
    let reference = files(&outs[0].1);
    let same = outs[1..].iter().all(|(_, o)| files(o) == reference);
    outcome(
        same && !reference.is_empty(),
        format!("{} artifacts compared across --jobs 1, 4 and all cores; identical: {same}", reference.len()),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", criterion_1),
        ("RANSAC fusion", criterion_2),
        ("object registration", criterion_3),
        ("per-frame object tracking", criterion_4),
        ("hand fitting end-to-end", criterion_5),
        ("metric oracle equivalence", criterion_6),
        ("voxel volume", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = vec![];
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("criterion {} {name}: {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
