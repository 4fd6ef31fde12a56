use holobeam::beamform::RangeProjector;
use holobeam::equivariance::{check_3dpe, check_kkt_pe, check_pepi_ggnn, DenseControl, PermTriple};
use holobeam::ggnn::{edge_layer, encode_inputs, full_forward_with, ggnn_forward, vertex_layer, GgnnParams};
use holobeam::holo::{build_phase_pattern, sample_channel, PhasePattern, SurfaceConfig, DEFAULT_PATH_VARIANCES};
use holobeam::linalg::CMatrix;
use holobeam::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Setup {
    h: CMatrix<f64>,
    m_p: PhasePattern<f64>,
    params: GgnnParams<f64>,
}

fn setup(nx: usize, ny: usize, k: usize, l: usize, seed: u64) -> Setup {
    let cfg = SurfaceConfig::new(nx, ny, l).unwrap();
    let m_p = build_phase_pattern(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = sample_channel(&cfg, k, &DEFAULT_PATH_VARIANCES, 10.0, &mut rng)
        .unwrap()
        .h;
    let params = GgnnParams::random(&[4, 6, 5], &mut rng).unwrap();
    Setup { h, m_p, params }
}

fn pipeline(
    params: &GgnnParams<f64>,
) -> impl Fn(&CMatrix<f64>, &PhasePattern<f64>) -> Result<(Vec<f64>, CMatrix<f64>)> + '_ {
    move |h, m_p| {
        let out = full_forward_with(h, &RangeProjector::new(m_p)?, params, 1.0)?;
        Ok((out.a, out.v))
    }
}

#[test]
fn identity_permutation_gives_zero_discrepancy() {
    let s = setup(3, 2, 2, 2, 1);
    let id = PermTriple::identity(2, 6, 2);
    let r = check_3dpe(pipeline(&s.params), &s.h, &s.m_p, &id, 0.0).unwrap();
    assert_eq!(r.max_discrepancy, 0.0);
    let net = |h: &CMatrix<f64>, m: &PhasePattern<f64>| ggnn_forward(h, m.matrix(), &s.params);
    assert_eq!(
        check_pepi_ggnn(net, &s.h, &s.m_p, &id, 0.0).unwrap().max_discrepancy,
        0.0
    );
}

#[test]
fn rf_permutation_leaves_network_output_unchanged() {
    let s = setup(3, 3, 2, 3, 2);
    let t = PermTriple::new(vec![0, 1], (0..9).collect(), vec![2, 0, 1]).unwrap();
    let net = |h: &CMatrix<f64>, m: &PhasePattern<f64>| ggnn_forward(h, m.matrix(), &s.params);
    let r = check_pepi_ggnn(net, &s.h, &s.m_p, &t, 1e-9).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn antenna_permutation_permutes_network_rows() {
    let s = setup(2, 3, 2, 2, 3);
    let t = PermTriple::new(vec![0, 1], vec![5, 3, 1, 0, 2, 4], vec![0, 1]).unwrap();
    let base = ggnn_forward(&s.h, s.m_p.matrix(), &s.params).unwrap();
    let hp = s.h.gather_rows(&t.antennas);
    let mpp = s.m_p.matrix().gather_rows(&t.antennas);
    let perm = ggnn_forward(&hp, &mpp, &s.params).unwrap();
    assert!(perm.ve.max_abs_diff(&base.ve.gather_rows(&t.antennas)) < 1e-12);
    for (n, &src) in t.antennas.iter().enumerate() {
        assert!((perm.a[n] - base.a[src]).abs() < 1e-12);
    }
}

#[test]
fn each_layer_is_permutation_equivariant() {
    let s = setup(2, 2, 3, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let t = PermTriple::random(3, 4, 2, &mut rng);
    let st = encode_inputs(&s.h, s.m_p.matrix(), &s.params).unwrap();
    let (hp, mpp) = (t.permute_equivalent(&s.h), t.permute_pattern(s.m_p.matrix()));
    let stp = encode_inputs(&hp, &mpp, &s.params).unwrap();
    let c = st.width;
    for (n, &src_n) in t.antennas.iter().enumerate() {
        assert_eq!(stp.vertex_at(n).len(), c);
        for (a, b) in stp.vertex_at(n).iter().zip(st.vertex_at(src_n)) {
            assert!((a - b).norm() < 1e-12);
        }
        for (k, &src_k) in t.users.iter().enumerate() {
            for (a, b) in stp.edge_at(n, k).iter().zip(st.edge_at(src_n, src_k)) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }
    let layer = &s.params.layers[0];
    let (e, v) = (
        edge_layer(&st, &s.h, layer).unwrap(),
        vertex_layer(&st, &s.h, layer).unwrap(),
    );
    let (ep, vp) = (
        edge_layer(&stp, &hp, layer).unwrap(),
        vertex_layer(&stp, &hp, layer).unwrap(),
    );
    let w = layer.s.rows();
    for (n, &src_n) in t.antennas.iter().enumerate() {
        for o in 0..w {
            assert!((vp[n * w + o] - v[src_n * w + o]).norm() < 1e-10);
        }
        for (k, &src_k) in t.users.iter().enumerate() {
            for o in 0..w {
                assert!((ep[(n * 3 + k) * w + o] - e[(src_n * 3 + src_k) * w + o]).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn dense_control_fails_the_check() {
    let s = setup(2, 2, 2, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let control = DenseControl::random(4, 2, 2, &[16, 16], &mut rng);
    let f = |h: &CMatrix<f64>, m: &PhasePattern<f64>| control.forward(h, m, 1.0);
    let t = PermTriple::new(vec![1, 0], vec![2, 3, 0, 1], vec![1, 0]).unwrap();
    let r = check_3dpe(f, &s.h, &s.m_p, &t, 1e-6).unwrap();
    assert!(!r.passed && r.max_discrepancy > 1e-3, "{r:?}");
}

#[test]
fn kkt_residuals_are_permutation_invariant() {
    let s = setup(3, 2, 2, 2, 6);
    let out = full_forward_with(&s.h, &RangeProjector::new(&s.m_p).unwrap(), &s.params, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..5 {
        let t = PermTriple::random(2, 6, 2, &mut rng);
        let r = check_kkt_pe(&s.h, &s.m_p, &out.a, &out.v, 1.0, 0.1, &t, 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_is_3d_equivariant(seed in 0u64..10_000, k in 1usize..4, l in 1usize..4) {
        let s = setup(3, 2, k, l, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let t = PermTriple::random(k, 6, l, &mut rng);
        let r = check_3dpe(pipeline(&s.params), &s.h, &s.m_p, &t, 1e-9).unwrap();
        prop_assert!(r.passed, "{:?}", r);
        let back = t.inverse();
        let (hp, mpp) = holobeam::equivariance::permute_inputs(&s.h, &s.m_p, &t).unwrap();
        let (hb, mpb) = holobeam::equivariance::permute_inputs(&hp, &mpp, &back).unwrap();
        prop_assert_eq!(hb, s.h);
        prop_assert_eq!(mpb.matrix(), s.m_p.matrix());
    }
}
