//! Random Fourier features against the closed-form Gaussian kernel.

use ewrls::rff::{gaussian_kernel, FeatureMap};
use ewrls::verify::RowSource;

#[test]
fn largest_sweep_map_has_expected_shapes() {
    let map = FeatureMap::sample(7, 1 << 14, 1.0, 3).unwrap();
    assert_eq!(map.input_dim(), 7);
    assert_eq!(map.feature_dim(), 16384);
    assert_eq!(map.phases().len(), 16384);
    assert_eq!(map.frequency(16383).len(), 7);
    assert_eq!(map.embed(&[0.1; 7]).unwrap().len(), 16384);
}

#[test]
fn frequency_means_obey_clt_bound() {
    let d = 100_000;
    for &bandwidth in &[1.0, 0.5, 4.0] {
        let map = FeatureMap::sample(3, d, bandwidth, 21).unwrap();
        let bound = 4.0 / bandwidth / (d as f64).sqrt();
        for k in 0..3 {
            let mean = (0..d).map(|j| map.frequency(j)[k]).sum::<f64>() / d as f64;
            assert!(mean.abs() <= bound, "sigma={bandwidth} entry {k}: mean {mean} bound {bound}");
        }
        let var = (0..d).map(|j| map.frequency(j)[0].powi(2)).sum::<f64>() / d as f64;
        assert!((var * bandwidth * bandwidth - 1.0).abs() < 0.02, "frequency variance {var}");
    }
}

#[test]
fn inner_products_approximate_gaussian_kernel() {
    let map = FeatureMap::sample(7, 100_000, 1.0, 22).unwrap();
    let mut src = RowSource::new(23);
    for _ in 0..10 {
        let x: Vec<f64> = src.row(7).iter().map(|v| v * 0.5).collect();
        let x2: Vec<f64> = src.row(7).iter().map(|v| v * 0.5).collect();
        let est = map.kernel_estimate(&x, &x2).unwrap();
        let exact = gaussian_kernel(&x, &x2, 1.0);
        assert!((est - exact).abs() <= 0.02, "estimate {est} exact {exact}");
    }
}

#[test]
fn self_inner_product_is_bounded_and_near_one() {
    let x = [0.3, -1.2, 0.7, 2.0, 0.0, -0.4, 1.1];
    let small = FeatureMap::sample(7, 16, 1.0, 24).unwrap();
    let v = small.kernel_estimate(&x, &x).unwrap();
    assert!((0.0..=2.0).contains(&v));
    let large = FeatureMap::sample(7, 100_000, 1.0, 24).unwrap();
    let v = large.kernel_estimate(&x, &x).unwrap();
    assert!((v - 1.0).abs() <= 0.02, "self kernel {v}");
}

#[test]
fn features_have_fixed_scale() {
    let d = 1024;
    let map = FeatureMap::sample(7, d, 1.0, 25).unwrap();
    let z = map.embed(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    let cap = (2.0 / d as f64).sqrt();
    assert!(z.iter().all(|v| v.abs() <= cap + 1e-15));
}

#[test]
fn same_seed_gives_same_map() {
    let a = FeatureMap::sample(7, 64, 1.0, 26).unwrap();
    let b = FeatureMap::sample(7, 64, 1.0, 26).unwrap();
    let c = FeatureMap::sample(7, 64, 1.0, 27).unwrap();
    let x = [0.5; 7];
    assert_eq!(a.embed(&x).unwrap(), b.embed(&x).unwrap());
    assert_ne!(a.embed(&x).unwrap(), c.embed(&x).unwrap());
}
