use dirac_core::dirac_field::{DiracField, FieldError, StructureFunctions};
use dirac_core::linear_dirac::{is_dirac, isotropy_defect};
use dirac_core::{FieldMatrix, ScalarField, VarSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space(names: &[&str]) -> VarSpace {
    VarSpace::new(names).unwrap()
}

fn matrix(rows: &[&[&str]], sp: &VarSpace) -> FieldMatrix {
    let fields = rows
        .iter()
        .map(|r| r.iter().map(|t| ScalarField::parse(t, sp).unwrap()).collect())
        .collect();
    FieldMatrix::from_rows(fields, sp)
}

fn points(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
}

fn so3(sp: &VarSpace) -> StructureFunctions {
    let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
    for &(a, b, d) in &[(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        c[d][a][b] = 1.0;
        c[d][b][a] = -1.0;
    }
    StructureFunctions::constant(&c, sp).unwrap()
}

fn fields() -> Vec<DiracField> {
    let s2 = space(&["a", "b"]);
    let s4 = space(&["q1", "q2", "p1", "p2"]);
    let s6 = space(&["x", "y", "z", "m1", "m2", "m3"]);
    let m3 = space(&["m1", "m2", "m3"]);
    vec![
        DiracField::canonical(&s4).unwrap(),
        DiracField::two_form(matrix(&[&["0", "1 + a^2"], &["-1 - a^2", "0"]], &s2)).unwrap(),
        // Degenerate where b = 0: still Dirac, not a graph there.
        DiracField::two_form(matrix(&[&["0", "b"], &["-b", "0"]], &s2)).unwrap(),
        DiracField::bivector(matrix(&[&["0", "a*b"], &["-a*b", "0"]], &s2)).unwrap(),
        DiracField::almost_poisson(
            &s6,
            3,
            matrix(&[&["0", "-z", "y"], &["z", "0", "-x"], &["-y", "x", "0"]], &s6),
            so3(&s6),
        )
        .unwrap(),
        DiracField::almost_poisson(&m3, 0, FieldMatrix::zeros(0, 3, &m3), so3(&m3)).unwrap(),
        // Pullback of the canonical structure along a submersion R^3 → R^2.
        DiracField::backward(
            &space(&["u", "v", "w"]),
            vec![
                ScalarField::parse("u + w^2", &space(&["u", "v", "w"])).unwrap(),
                ScalarField::parse("sin(v)", &space(&["u", "v", "w"])).unwrap(),
            ],
            DiracField::canonical(&space(&["q", "p"])).unwrap(),
        )
        .unwrap(),
    ]
}

#[test]
fn pointwise_structures_are_dirac() {
    for (k, f) in fields().iter().enumerate() {
        for x in points(k as u64, 100, f.dim()) {
            let d = f.at(&x).unwrap();
            assert!(is_dirac(d.image()), "field {} at {:?}", k, x);
            assert!(isotropy_defect(d.image()) <= 1e-10);
            assert_eq!(d.image().ncols(), f.dim());
        }
    }
}

#[test]
fn sharp_lands_in_the_structure() {
    for (k, f) in fields().iter().enumerate() {
        if matches!(f.kind(), dirac_core::dirac_field::DiracKind::Backward { .. }) {
            continue;
        }
        let pts = points(50 + k as u64, 100, 2 * f.dim());
        for p in pts {
            let (x, alpha) = p.split_at(f.dim());
            match f.sharp(x, alpha) {
                Ok(v) => {
                    let r = f.at(x).unwrap().residual(v.as_slice(), alpha).unwrap();
                    assert!(r <= 1e-10, "field {}: residual {}", k, r);
                }
                Err(FieldError::NotAGraph) => assert_eq!(k, 2),
                Err(e) => panic!("field {}: {}", k, e),
            }
        }
    }
}

#[test]
fn trivial_almost_poisson_is_canonical() {
    let sp = space(&["q1", "q2", "p1", "p2"]);
    let id = matrix(&[&["1", "0"], &["0", "1"]], &sp);
    let ap = DiracField::almost_poisson(&sp, 2, id, StructureFunctions::zero(2, &sp)).unwrap();
    let can = DiracField::canonical(&sp).unwrap();
    for x in points(7, 50, 4) {
        assert!(ap.at(&x).unwrap().distance(&can.at(&x).unwrap()) <= 1e-12);
    }
    assert_eq!(ap.bivector_fields().unwrap().eval(&[0.0; 4]).unwrap(), can.bivector_fields().unwrap().eval(&[0.0; 4]).unwrap());
}

#[test]
fn backward_is_functorial() {
    // f: R^2 → R^3, g: R^3 → R^4, inner canonical on R^4.
    let s2 = space(&["s", "t"]);
    let s3 = space(&["u", "v", "w"]);
    let s4 = space(&["q1", "q2", "p1", "p2"]);
    let parse = |t: &str, sp: &VarSpace| ScalarField::parse(t, sp).unwrap();
    let f_text = ["s", "t", "s*t"];
    let g_text = ["u", "v + w", "u^2", "w"];
    let inner = DiracField::canonical(&s4).unwrap();
    let g_map: Vec<ScalarField> = g_text.iter().map(|t| parse(t, &s3)).collect();
    let f_map: Vec<ScalarField> = f_text.iter().map(|t| parse(t, &s2)).collect();
    let stepwise = DiracField::backward(&s2, f_map, DiracField::backward(&s3, g_map, inner.clone()).unwrap()).unwrap();
    // g ∘ f written out by hand.
    let composed_text = ["s", "t + s*t", "s^2", "s*t"];
    let composed_map: Vec<ScalarField> = composed_text.iter().map(|t| parse(t, &s2)).collect();
    let direct = DiracField::backward(&s2, composed_map, inner).unwrap();
    for x in points(8, 100, 2) {
        let d = stepwise.at(&x).unwrap().distance(&direct.at(&x).unwrap());
        assert!(d <= 1e-10, "at {:?}: {}", x, d);
    }
}

#[test]
fn rank_deficient_maps_are_rejected() {
    let s2 = space(&["s", "t"]);
    let map = vec![
        ScalarField::parse("s + t", &s2).unwrap(),
        ScalarField::parse("2*s + 2*t", &s2).unwrap(),
        ScalarField::parse("0", &s2).unwrap(),
    ];
    let inner = DiracField::bivector(FieldMatrix::zeros(3, 3, &space(&["u", "v", "w"]))).unwrap();
    let f = DiracField::backward(&s2, map, inner).unwrap();
    assert!(matches!(f.at(&[0.1, 0.2]), Err(FieldError::RankDeficientMap { rank: 1, .. })));
}

#[test]
fn non_antisymmetric_structure_functions_are_rejected() {
    let sp = space(&["m1", "m2"]);
    let mut c = vec![vec![vec![0.0; 2]; 2]; 2];
    c[0][0][1] = 1.0;
    c[0][1][0] = 1.0;
    let sf = StructureFunctions::constant(&c, &sp);
    let result = sf.and_then(|sf| DiracField::almost_poisson(&sp, 0, FieldMatrix::zeros(0, 2, &sp), sf)?.at(&[1.0, 1.0]));
    assert!(matches!(result, Err(FieldError::NonAntisymmetric { .. })));
}

#[test]
fn shapes_are_checked() {
    let s3 = space(&["a", "b", "c"]);
    assert!(matches!(DiracField::canonical(&s3), Err(FieldError::Shape(_))));
    let f = DiracField::canonical(&space(&["q", "p"])).unwrap();
    assert!(matches!(f.at(&[0.0]), Err(FieldError::Shape(_))));
}
