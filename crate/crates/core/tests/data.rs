use pfgn::data::*;
use pfgn::{Error, SeededStream};
use proptest::prelude::*;
use std::f64::consts::PI;

fn flow() -> FlowConfig {
    FlowConfig::default()
}

fn small_config() -> DatasetConfig {
    DatasetConfig { n_geometries: 20, n_points: 96, n_surface: 24, ..Default::default() }
}

fn ellipse(theta: f64) -> GeometrySpec {
    GeometrySpec { shape: Shape::Ellipse, a: 1.3, b: 0.6, theta, center: [8.0, 16.0] }
}

#[test]
fn circle_matches_closed_form_potential_flow() {
    let g = GeometrySpec::circle(1.0);
    for &(r, phi) in &[(1.5, 0.3), (2.0, 2.0), (4.0, -1.1), (1.0, PI / 2.0)] {
        let p = [8.0 + r * f64::cos(phi), 16.0 + r * f64::sin(phi)];
        let [u, v, pr] = oracle_point(&g, &flow(), p).unwrap();
        let u_ref = 1.0 - (2.0 * phi).cos() / (r * r);
        let v_ref = -(2.0 * phi).sin() / (r * r);
        assert!((u - u_ref).abs() < 1e-12 && (v - v_ref).abs() < 1e-12);
        assert!((pr - 0.5 * (1.0 - u_ref * u_ref - v_ref * v_ref)).abs() < 1e-12);
    }
}

#[test]
fn circle_surface_velocity_is_tangential() {
    let g = GeometrySpec::circle(0.8);
    for i in 0..64 {
        let s = i as f64 / 64.0;
        let [u, v, _] = oracle_point(&g, &flow(), g.boundary_point(s)).unwrap();
        let n = g.outward_normal(s);
        assert!((u * n[0] + v * n[1]).abs() < 1e-6);
    }
}

#[test]
fn stagnation_points_sit_on_the_body_axis() {
    let g = ellipse(0.0);
    let front = g.from_body([-g.a, 0.0]);
    let [u, v, p] = oracle_point(&g, &flow(), front).unwrap();
    assert!(u.hypot(v) < 1e-12);
    assert!((p - 0.5).abs() < 1e-12);
}

#[test]
fn bernoulli_holds_everywhere() {
    let cfg = FlowConfig { rho: 1.2, u_inf: 2.0, p0: 3.0, ..flow() };
    let g = ellipse(0.7);
    let mut rng = SeededStream::new(3);
    let cloud = sample_cloud(&g, 200, 20, &Window::default(), &mut rng).unwrap();
    for (c, f) in cloud.coords.iter().zip(oracle_fields(&g, &cfg, &cloud.coords).unwrap()) {
        let head = f[2] + 0.5 * cfg.rho * (f[0] * f[0] + f[1] * f[1]);
        assert!((head - (3.0 + 0.5 * 1.2 * 4.0)).abs() < 1e-9, "at {c:?}");
    }
}

#[test]
fn far_field_approaches_the_free_stream() {
    let g = ellipse(0.0);
    let [u, v, p] = oracle_point(&g, &flow(), [8.0 + 500.0, 16.0 + 300.0]).unwrap();
    assert!((u - 1.0).abs() < 1e-5 && v.abs() < 1e-5 && p.abs() < 1e-5);
}

#[test]
fn rotating_the_body_rotates_the_fields() {
    let base = ellipse(0.0);
    let mut rng = SeededStream::new(5);
    for _ in 0..10 {
        let theta = rng.uniform() * 2.0 * PI;
        let turned = ellipse(theta);
        let q = [rng.uniform() * 6.0 - 3.0, rng.uniform() * 6.0 - 3.0];
        let p0 = base.from_body(q);
        if base.contains(p0) {
            continue;
        }
        let a = oracle_point(&base, &flow(), p0).unwrap();
        let b = oracle_point(&turned, &flow(), turned.from_body(q)).unwrap();
        let (s, c) = theta.sin_cos();
        assert!((b[0] - (c * a[0] - s * a[1])).abs() < 1e-12);
        assert!((b[1] - (s * a[0] + c * a[1])).abs() < 1e-12);
        assert!((b[2] - a[2]).abs() < 1e-12);
    }
}

#[test]
fn points_inside_the_body_are_rejected() {
    let g = GeometrySpec::circle(1.0);
    assert!(matches!(oracle_point(&g, &flow(), [8.0, 16.0]), Err(Error::Domain(_))));
}

#[test]
fn sampled_clouds_respect_window_body_and_surface_order() {
    let mut rng = SeededStream::new(7);
    let cfg = DatasetConfig::default();
    for _ in 0..20 {
        let g = cfg.draw_geometry(&mut rng);
        let cloud = sample_cloud(&g, 300, 40, &cfg.window, &mut rng).unwrap();
        assert_eq!(cloud.len(), 300);
        assert_eq!(cloud.surface_indices(), (0..40).collect::<Vec<_>>());
        for (i, p) in cloud.coords.iter().enumerate() {
            assert!(cfg.window.contains(*p));
            if cloud.on_surface[i] {
                assert!(g.level(*p).abs() <= 1e-9 * g.char_length(), "{:?}", g.shape);
            } else {
                assert!(g.level(*p) > 0.0);
            }
        }
        let area2: f64 = (0..40)
            .map(|i| {
                let (p, q) = (cloud.coords[i], cloud.coords[(i + 1) % 40]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        assert!(area2 > 0.0, "surface points must run counterclockwise");
    }
}

#[test]
fn dropping_points_keeps_order_and_alignment() {
    let g = ellipse(0.2);
    let mut rng = SeededStream::new(9);
    let cloud = sample_cloud(&g, 1024, 128, &Window::default(), &mut rng).unwrap();
    let ids: Vec<usize> = (0..1024).collect();
    for (f, want) in [(0.05, 973), (0.10, 922), (0.15, 871)] {
        let (kept, vals) = drop_points(&cloud, &ids, f, &mut rng).unwrap();
        assert_eq!(kept.len(), want);
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
        for (k, &i) in vals.iter().enumerate() {
            assert_eq!(kept.coords[k], cloud.coords[i]);
            assert_eq!(kept.on_surface[k], cloud.on_surface[i]);
        }
    }
    assert!(drop_points(&cloud, &ids, 1.0, &mut rng).is_err());
}

#[test]
fn split_sizes_follow_the_fractions() {
    assert_eq!(split_sizes(200, [0.79, 0.11, 0.10]).unwrap(), [158, 22, 20]);
    let s = split_sizes(7, [0.5, 0.25, 0.25]).unwrap();
    assert_eq!(s.iter().sum::<usize>(), 7);
    assert!(split_sizes(10, [0.5, 0.5, 0.5]).is_err());
}

#[test]
fn dataset_is_reproducible_and_seed_sensitive() {
    let a = build_dataset(&small_config(), 4).unwrap();
    let b = build_dataset(&small_config(), 4).unwrap();
    let c = build_dataset(&small_config(), 5).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(a.splits, b.splits);
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn splits_partition_the_ids() {
    let ds = build_dataset(&small_config(), 2).unwrap();
    let mut all: Vec<usize> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .flat_map(|&s| ds.ids(s).to_vec())
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
}

#[test]
fn normalization_uses_training_geometries_only() {
    let ds = build_dataset(&small_config(), 6).unwrap();
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for &id in ds.ids(Split::Train) {
        let s = ds.sample(id);
        for (c, f) in s.cloud.coords.iter().zip(&s.fields) {
            let row = [c[0], c[1], f[0], f[1], f[2]];
            for k in 0..5 {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
    }
    let got = ds.stats.to_array();
    for k in 0..5 {
        assert_eq!(got[2 * k], lo[k]);
        assert_eq!(got[2 * k + 1], hi[k]);
    }
    for &id in ds.ids(Split::Train) {
        let f = ds.normalized_fields(id);
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = ds.normalized_coords(id);
        assert!(c.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}

#[test]
fn persisted_dataset_round_trips_and_detects_corruption() {
    let ds = build_dataset(&small_config(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.checksum(), ds.checksum());
    assert_eq!(back.stats, ds.stats);
    assert_eq!(back.splits, ds.splits);
    for id in 0..ds.len() {
        assert_eq!(back.sample(id).cloud.coords, ds.sample(id).cloud.coords);
        assert_eq!(back.sample(id).fields, ds.sample(id).fields);
    }
    let record = dir.path().join("geometries").join("g00003.bin");
    let mut bytes = std::fs::read(&record).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    std::fs::write(&record, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Corrupt(_))));
}

#[test]
fn orientations_stay_in_the_configured_range() {
    let cfg = DatasetConfig { orientation_range: [-0.3, 0.1], ..Default::default() };
    let mut rng = SeededStream::new(12);
    for _ in 0..200 {
        let g = cfg.draw_geometry(&mut rng);
        match g.shape {
            Shape::Circle => assert_eq!(g.theta, 0.0),
            _ => assert!((-0.3..=0.1).contains(&g.theta), "{}", g.theta),
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = DatasetConfig { n_surface: 200, n_points: 100, ..Default::default() };
    assert!(build_dataset(&bad, 1).is_err());
    let bad = DatasetConfig { n_geometries: 0, ..Default::default() };
    assert!(build_dataset(&bad, 1).is_err());
    let bad = DatasetConfig { orientation_range: [0.5, -0.5], ..Default::default() };
    assert!(build_dataset(&bad, 1).is_err());
}

proptest! {
    #[test]
    fn normalization_round_trips(x in 2.0f64..22.0, y in 8.0f64..24.0, u in -2.0f64..3.0) {
        let r = |a: f64, b: f64| Range { min: a, max: b };
        let stats = NormStats {
            coords: [r(2.0, 22.0), r(8.0, 24.0)],
            fields: [r(-2.0, 3.0), r(-1.0, 1.0), r(-4.0, 0.5)],
        };
        let xn = stats.normalize_coord(0, x);
        prop_assert!((-1.0..=1.0).contains(&xn));
        prop_assert!((stats.denormalize_coord(0, xn) - x).abs() < 1e-12);
        prop_assert!((stats.denormalize_coord(1, stats.normalize_coord(1, y)) - y).abs() < 1e-12);
        let un = stats.normalize_field(0, u);
        prop_assert!((0.0..=1.0).contains(&un));
        prop_assert!((stats.denormalize_field(0, un) - u).abs() < 1e-12);
    }

    #[test]
    fn kept_count_never_exceeds_n(n in 1usize..5000, f in 0.0f64..0.99) {
        let k = kept_count(n, f);
        prop_assert!(k <= n);
        prop_assert!(k as f64 >= (1.0 - f) * n as f64 - 1e-6);
    }

    #[test]
    fn shape_codes_round_trip(m in 1.1f64..6.0, k in 3u32..=6) {
        for s in [Shape::Circle, Shape::Ellipse, Shape::Superellipse { m }, Shape::Polygon { k }] {
            let (code, p) = s.encode();
            prop_assert_eq!(Shape::decode(code, p).unwrap(), s);
        }
    }
}
