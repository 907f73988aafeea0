use dirac_core::dirac_field::DiracField;
use dirac_core::linear_dirac::is_dirac;
use dirac_core::systems::{self, BundleData, RawDirac};
use dirac_core::tulczyjew::{
    d_element, diagram_check, dm_by_inclusion, dm_by_projection, dm_element, NaturalMap, Setting, TulczyjewError,
    DIAGRAMS,
};
use dirac_core::VarSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|t| t.to_string()).collect()
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn canonical(n: usize) -> DiracField {
    let names: Vec<String> = (1..=n).map(|i| format!("q{}", i)).chain((1..=n).map(|i| format!("p{}", i))).collect();
    DiracField::canonical(&VarSpace::new(&names).unwrap()).unwrap()
}

/// Rank-3 bundle over a 2-dimensional base with `q`-dependent anchor and
/// structure functions.
fn bundle_field() -> DiracField {
    let k = |f: &str| {
        let mut c = vec![vec![vec!["0".to_string(); 3]; 3]; 3];
        for &(a, b, d) in &[(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            c[d][a][b] = f.to_string();
            c[d][b][a] = format!("-({})", f);
        }
        c
    };
    let bundle = BundleData {
        rho: vec![s(&["1 + x^2", "y", "0"]), s(&["0", "sin(x)", "2 - y"])],
        c: k("1 + x*y"),
    };
    let sys = systems::raw(
        &["x", "y", "p1", "p2", "p3"],
        &[] as &[&str],
        "p1^2",
        &RawDirac::AlmostPoisson { n_q: 2, bundle },
    )
    .unwrap();
    sys.dirac().clone()
}

fn samples(field: &DiracField, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = field.dim();
    (0..count)
        .map(|_| {
            let x = random(&mut rng, n);
            let alpha = random(&mut rng, n);
            d_element(field, &x, &alpha).unwrap()
        })
        .collect()
}

#[test]
fn psi3_factors_through_alpha_q() {
    for n in 1..=3 {
        let f = canonical(n);
        let dev = diagram_check("psi3_alpha_psi1", &f, &samples(&f, n as u64, 100)).unwrap();
        assert!(dev <= TOL, "n = {}: {}", n, dev);
    }
}

#[test]
fn psi3_factors_through_r() {
    let f = bundle_field();
    let dev = diagram_check("psi3_r_psi2", &f, &samples(&f, 10, 100)).unwrap();
    assert!(dev <= TOL, "{}", dev);
}

#[test]
fn epsilon_recovers_the_tangent_part() {
    let f = bundle_field();
    let dev = diagram_check("epsilon", &f, &samples(&f, 11, 100)).unwrap();
    assert!(dev <= TOL, "{}", dev);
}

#[test]
fn epsilon_detects_foreign_elements() {
    // Elements of a different structure on the same chart are rejected.
    let f = bundle_field();
    let other = systems::raw(
        &["x", "y", "p1", "p2", "p3"],
        &[] as &[&str],
        "p1^2",
        &RawDirac::AlmostPoisson {
            n_q: 2,
            bundle: BundleData {
                rho: vec![s(&["1", "0", "0"]), s(&["0", "1", "0"])],
                c: vec![vec![s(&["0", "0", "0"]); 3]; 3],
            },
        },
    )
    .unwrap();
    let dev = diagram_check("epsilon", &f, &samples(other.dirac(), 12, 20)).unwrap();
    assert!(dev > 1e-3);
}

#[test]
fn two_constructions_of_dm_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in 1..=3 {
        let f = canonical(n);
        let pts: Vec<Vec<f64>> = (0..100).map(|_| random(&mut rng, 3 * n)).collect();
        let dev = diagram_check("dm_backward", &f, &pts).unwrap();
        assert!(dev <= TOL, "n = {}: {}", n, dev);
        let (a, b) = (dm_by_projection(n).unwrap(), dm_by_inclusion(n).unwrap());
        assert!(is_dirac(a.image()) && is_dirac(b.image()));
        assert_eq!(a.dim(), 3 * n);
    }
}

#[test]
fn dm_elements_belong_to_dm_and_map_into_the_canonical_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 2;
    let dm = dm_by_projection(n).unwrap();
    let mut elems = Vec::new();
    for _ in 0..100 {
        let e = dm_element(&random(&mut rng, 3 * n), &random(&mut rng, n), &random(&mut rng, n), &random(&mut rng, n));
        assert!(dm.residual(&e[3 * n..6 * n], &e[6 * n..]).unwrap() <= TOL);
        elems.push(e);
    }
    assert!(diagram_check("phi_into_d", &canonical(n), &elems).unwrap() <= TOL);
}

#[test]
fn flat_and_sharp_are_inverse() {
    let f = canonical(2);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let pts: Vec<Vec<f64>> = (0..100).map(|_| random(&mut rng, 8)).collect();
    assert_eq!(diagram_check("sharp_flat", &f, &pts).unwrap(), 0.0);
    let dev = diagram_check("flat_graph", &f, &samples(&f, 16, 100)).unwrap();
    assert!(dev <= TOL, "{}", dev);
}

#[test]
fn r_is_an_involution_in_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let r = NaturalMap::RIso { m: 2, n_a: 3 };
    for _ in 0..100 {
        let x = random(&mut rng, 10);
        assert_eq!(r.apply(&r.apply(&x).unwrap()).unwrap(), x);
    }
}

#[test]
fn alpha_q_is_a_permutation() {
    let n = 2;
    let a = NaturalMap::AlphaQ { n };
    let mut hits = vec![0usize; 4 * n];
    for i in 0..4 * n {
        let mut e = vec![0.0; 4 * n];
        e[i] = 1.0;
        let img = a.apply(&e).unwrap();
        let nz: Vec<usize> = (0..4 * n).filter(|&j| img[j] != 0.0).collect();
        assert_eq!(nz.len(), 1);
        hits[nz[0]] += 1;
    }
    assert!(hits.iter().all(|&h| h == 1));
}

#[test]
fn psi_maps_on_a_canonical_element() {
    // (q, p) = (1, 2), α = (3, 4): ♯α = (β, −α) = (4, −3).
    let f = canonical(1);
    let d = d_element(&f, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(d, vec![1.0, 2.0, 4.0, -3.0, 3.0, 4.0]);
    let s = Setting::Canonical { n: 1 };
    assert_eq!(NaturalMap::Psi1(s.clone()).apply(&d).unwrap(), vec![1.0, 2.0, 4.0, -3.0]);
    assert_eq!(NaturalMap::Psi2(s.clone()).apply(&d).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(NaturalMap::Psi3(s).apply(&d).unwrap(), vec![1.0, 4.0, -3.0, 2.0]);
}

#[test]
fn settings_are_enforced() {
    let canon = canonical(1);
    let bundle = bundle_field();
    assert!(matches!(diagram_check("epsilon", &canon, &[]), Err(TulczyjewError::WrongSetting(_))));
    assert!(matches!(diagram_check("psi3_alpha_psi1", &bundle, &[]), Err(TulczyjewError::WrongSetting(_))));
    assert!(matches!(
        NaturalMap::Epsilon(Box::new(canon.clone())).apply(&[0.0; 4]),
        Err(TulczyjewError::NotABundle)
    ));
    for name in DIAGRAMS {
        let ok = diagram_check(name, &canon, &[]).is_ok() || diagram_check(name, &bundle, &[]).is_ok();
        assert!(ok, "{} accepts neither setting", name);
    }
}
