use nalgebra::Vector3;
use nslf_core::encoding::{sh_basis, HashGrid, HashGridConfig};
use nslf_core::ingest::{unproject_frame, CameraIntrinsics, ColoredPointBatch, DepthMap, Pose};
use nslf_core::mana::{distribute, RegionGridConfig, RegionIndex};
use nslf_core::models::{ColorModel, HgConfig, HgModel, NslfConfig, NslfModel};
use nslf_core::numerics::{
    finite_diff_check, Activation, AdamConfig, AdamState, CoordSelection, GradBundle, Mlp,
    Parameters,
};
use nslf_core::render::{psnr, ssim, Image};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_grid() -> HashGridConfig {
    HashGridConfig {
        levels: 3,
        features: 2,
        log2_table_size: 8,
        base_resolution: 2,
        max_resolution: 8,
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn direction() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-degenerate", |v| {
            v.iter().map(|c| c * c).sum::<f64>() > 1e-4
        })
        .prop_map(unit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mlp_gradients_match_finite_differences(seed in any::<u64>(), hidden in 1usize..8, depth in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![5];
        dims.extend(std::iter::repeat_n(hidden, depth));
        dims.push(3);
        let mut mlp = Mlp::<f64>::glorot(&dims, Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        for layer in mlp.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = mlp.forward(&x).unwrap();
        let (grads, _) = mlp.backward(&cache, &w).unwrap();
        let loss = |m: &Mlp<f64>| m.forward(&x).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let report = finite_diff_check(&mut mlp, &grads, loss, 1e-5, &CoordSelection::All);
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op(params in prop::collection::vec(-10.0f64..10.0, 1..20), steps in 1usize..300) {
        let mut p = Mlp::<f64>::glorot(&[params.len(), 1], Activation::None, Activation::None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.layers_mut()[0].weights.copy_from_slice(&params);
        let before = p.clone();
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        let zero = GradBundle::zeros_like(&p);
        for _ in 0..steps {
            adam.step(&mut p, &zero).unwrap();
        }
        prop_assert_eq!(p, before);
        prop_assert_eq!(adam.t, steps as u64);
    }

    #[test]
    fn activations_stay_in_range(z in -1e6f64..1e6) {
        let s = Activation::Sigmoid.apply(z);
        prop_assert!((0.0..=1.0).contains(&s));
        if z.abs() < 30.0 {
            prop_assert!(s > 0.0 && s < 1.0);
        }
        prop_assert!(Activation::Relu.apply(z) >= 0.0);
    }

    #[test]
    fn model_colors_lie_in_unit_cube(seed in any::<u64>(), p in prop::array::uniform3(0.0f64..=1.0), d in direction()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nslf = NslfModel::<f64>::new(NslfConfig { grid: small_grid(), ..NslfConfig::default() }, &mut rng).unwrap();
        let hg = HgModel::<f64>::new(HgConfig { grid: small_grid(), ..HgConfig::default() }, &mut rng).unwrap();
        for c in [nslf.predict(p, d).unwrap(), hg.predict(p, d).unwrap()] {
            prop_assert!(c.iter().all(|v| *v > 0.0 && *v < 1.0), "{c:?}");
        }
        // Prediction is a pure function of its inputs.
        prop_assert_eq!(nslf.predict(p, d).unwrap(), nslf.predict(p, d).unwrap());
    }

    #[test]
    fn grid_encoding_is_lipschitz_per_level(
        seed in any::<u64>(),
        p in prop::array::uniform3(0.0f64..=1.0),
        delta in prop::array::uniform3(-1e-3f64..1e-3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = HashGridConfig::default();
        let mut grid = HashGrid::<f64>::new(cfg, &mut rng).unwrap();
        for t in grid.params_mut() {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let q = std::array::from_fn(|a| (p[a] + delta[a]).clamp(0.0, 1.0));
        let (a, _) = grid.encode(p).unwrap();
        let (b, _) = grid.encode(q).unwrap();
        let step: f64 = (0..3).map(|i| (p[i] - q[i]).abs()).sum();
        for level in 0..cfg.levels {
            let spread = {
                let t = &grid.tables()[level];
                t.iter().cloned().fold(f64::MIN, f64::max) - t.iter().cloned().fold(f64::MAX, f64::min)
            };
            let bound = cfg.resolution(level) as f64 * spread * step + 1e-12;
            for f in 0..cfg.features {
                let i = level * cfg.features + f;
                prop_assert!((a[i] - b[i]).abs() <= bound, "level {level}: {} > {bound}", (a[i] - b[i]).abs());
            }
        }
    }

    #[test]
    fn metrics_are_symmetric_and_ssim_is_one_on_identity(seed in any::<u64>(), w in 11u32..30, h in 11u32..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Image::new(w, h);
        let mut b = Image::new(w, h);
        a.pixels.iter_mut().for_each(|p| *p = std::array::from_fn(|_| rng.gen()));
        b.pixels.iter_mut().for_each(|p| *p = std::array::from_fn(|_| rng.gen()));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distribute_conserves_points(seed in any::<u64>(), n in 0usize..2000, edge in 0.5f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = RegionGridConfig::new([-4.0, -3.0, 0.0], [6.0, 5.0, 7.0], edge).unwrap();
        let mut batch = ColoredPointBatch::default();
        for _ in 0..n {
            let p = Vector3::new(rng.gen_range(-5.0..7.0), rng.gen_range(-4.0..6.0), rng.gen_range(-1.0..8.0));
            batch.push(p, Vector3::new(0.0, 0.0, 1.0), [rng.gen(), rng.gen(), rng.gen()]);
        }
        let dist = distribute(&grid, &batch);
        let mut seen: Vec<usize> = dist.indices.values().flatten().copied().chain(dist.rejected.iter().copied()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for (r, idx) in &dist.indices {
            prop_assert_eq!(dist.batches[r].len(), idx.len());
            for &i in idx {
                prop_assert_eq!(grid.region_of(&batch.points[i]).unwrap(), *r);
            }
        }
        for &i in &dist.rejected {
            prop_assert!(grid.region_of(&batch.points[i]).is_err());
        }
    }

    #[test]
    fn unprojection_round_trips_through_the_camera(
        seed in any::<u64>(),
        t in prop::array::uniform3(-5.0f64..5.0),
        q in prop::array::uniform4(-1.0f64..1.0),
    ) {
        prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = CameraIntrinsics { fx: 80.0, fy: 75.0, cx: 19.5, cy: 14.5, width: 40, height: 30, depth_scale: 1.0 / 5000.0 };
        let pose = Pose::from_tum(t, q).unwrap();
        let mut depth = DepthMap::new(k.width, k.height);
        depth.data.iter_mut().for_each(|z| *z = rng.gen_range(0.1f32..20.0));
        let batch = unproject_frame(&depth, &Image::new(k.width, k.height), &k, &pose, 1).unwrap();
        prop_assert_eq!(batch.len(), depth.data.len());
        for (i, (p, d)) in batch.points.iter().zip(&batch.directions).enumerate() {
            let (u, v) = ((i as u32 % k.width) as f64, (i as u32 / k.width) as f64);
            let cam = pose.rotation.transpose() * (p - pose.translation);
            let (pu, pv) = k.project(&cam);
            prop_assert!((pu - u).abs() < 1e-4 && (pv - v).abs() < 1e-4, "pixel ({u}, {v}) came back as ({pu}, {pv})");
            prop_assert!((cam.z - depth.data[i] as f64).abs() < 1e-6);
            prop_assert!((d.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn addition_theorem_holds_pointwise(d in direction()) {
        let y: Vec<f64> = sh_basis(d, 3).unwrap();
        for l in 0..=3usize {
            let s: f64 = y[l * l..(l + 1) * (l + 1)].iter().map(|v| v * v).sum();
            prop_assert!((s - (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).abs() < 1e-6);
        }
    }
}

/// Composite two-point Gauss-Legendre in `cos θ` times a uniform rule in
/// `φ`: exact for spherical polynomials of degree ≤ 3.
fn sphere_quadrature(panels: usize, azimuths: usize) -> Vec<([f64; 3], f64)> {
    let g = 1.0 / 3f64.sqrt();
    let mut out = Vec::with_capacity(2 * panels * azimuths);
    let h = 2.0 / panels as f64;
    for p in 0..panels {
        let mid = -1.0 + h * (p as f64 + 0.5);
        for z in [mid - g * h / 2.0, mid + g * h / 2.0] {
            let r = (1.0 - z * z).sqrt();
            for a in 0..azimuths {
                let phi = 2.0 * std::f64::consts::PI * (a as f64 + 0.5) / azimuths as f64;
                out.push((
                    [r * phi.cos(), r * phi.sin(), z],
                    1.0 / (2 * panels * azimuths) as f64,
                ));
            }
        }
    }
    out
}

#[test]
fn direction_average_of_the_latent_is_carried_by_the_dc_term() {
    let rule = sphere_quadrature(50, 100);
    assert!(rule.len() >= 10_000);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = NslfModel::<f64>::new(
            NslfConfig {
                grid: small_grid(),
                ..NslfConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let mut dc_only = model.clone();
        let n = dc_only.config().sh_coefficients() / dc_only.config().latent_channels;
        let last = dc_only.head_sh.layers_mut().last_mut().unwrap();
        let width = last.in_dim();
        for o in 0..last.out_dim() {
            if o % n != 0 {
                last.bias[o] = 0.0;
                last.weights[o * width..(o + 1) * width]
                    .iter_mut()
                    .for_each(|w| *w = 0.0);
            }
        }
        let p = [rng.gen(), rng.gen(), rng.gen()];
        let average = |m: &NslfModel<f64>| {
            let mut acc = vec![0.0; m.config().latent_channels];
            for (d, w) in &rule {
                for (a, s) in acc.iter_mut().zip(m.latent(p, *d).unwrap()) {
                    *a += w * s;
                }
            }
            acc
        };
        let (full, dc) = (average(&model), average(&dc_only));
        for (a, b) in full.iter().zip(&dc) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
        // The non-DC part is not trivially zero.
        let d = unit([0.3, -0.5, 0.8]);
        assert!(model.latent(p, d).unwrap() != dc_only.latent(p, d).unwrap());
    }
}

#[test]
fn region_of_agrees_with_distribute_on_faces() {
    let grid = RegionGridConfig::new([0.0; 3], [8.0; 3], 4.0).unwrap();
    let mut batch = ColoredPointBatch::default();
    for p in [[4.0, 4.0, 4.0], [8.0, 0.0, 3.9999], [0.0, 8.0, 8.0]] {
        batch.push(Vector3::from(p), Vector3::new(1.0, 0.0, 0.0), [0.0; 3]);
    }
    let dist = distribute(&grid, &batch);
    assert_eq!(dist.indices[&RegionIndex::new(1, 1, 1)], vec![0]);
    assert_eq!(dist.indices[&RegionIndex::new(1, 0, 0)], vec![1]);
    assert_eq!(dist.indices[&RegionIndex::new(0, 1, 1)], vec![2]);
}
