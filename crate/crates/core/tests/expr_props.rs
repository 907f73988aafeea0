use dirac_core::{ExprError, ScalarField, VarSpace};
use proptest::prelude::*;

fn space() -> VarSpace {
    VarSpace::new(&["a", "b", "c"]).unwrap()
}

/// Random expressions over a, b, c that are defined everywhere.
fn expr_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("a".to_string()),
        Just("b".to_string()),
        Just("c".to_string()),
        (-3i32..=3).prop_map(|k| format!("{}", k)),
        (1u32..50).prop_map(|k| format!("{}", k as f64 / 8.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("({} + {})", x, y)),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("({} - {})", x, y)),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("({} * {})", x, y)),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("({} / (2 + {}^2))", x, y)),
            (inner.clone(), 0u32..4).prop_map(|(x, k)| format!("({})^{}", x, k)),
            inner.clone().prop_map(|x| format!("-({})", x)),
            inner.clone().prop_map(|x| format!("sin({})", x)),
            inner.clone().prop_map(|x| format!("cos({})", x)),
            inner.clone().prop_map(|x| format!("exp(sin({}))", x)),
            inner.clone().prop_map(|x| format!("log(1 + ({})^2)", x)),
            inner.clone().prop_map(|x| format!("sqrt(1 + ({})^2)", x)),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.5f64..1.5, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derivative_matches_central_difference(text in expr_text(), x in point(), var in 0usize..3) {
        let f = ScalarField::parse(&text, &space()).unwrap();
        let d = f.diff_at(var).eval(&x).unwrap();
        let h = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[var] += h;
        xm[var] -= h;
        let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
        // Roundoff in the difference quotient scales with |f|/h.
        let scale = 1.0 + d.abs() + f.eval(&x).unwrap().abs();
        prop_assert!((fd - d).abs() <= 1e-6 * scale, "{}: fd {} vs {}", text, fd, d);
    }

    #[test]
    fn mixed_partials_commute(text in expr_text(), x in point(), i in 0usize..3, j in 0usize..3) {
        let f = ScalarField::parse(&text, &space()).unwrap();
        let ij = f.diff_at(i).diff_at(j).eval(&x).unwrap();
        let ji = f.diff_at(j).diff_at(i).eval(&x).unwrap();
        prop_assert!((ij - ji).abs() <= 1e-12 * (1.0 + ij.abs()), "{}: {} vs {}", text, ij, ji);
    }

    #[test]
    fn print_parse_round_trip(text in expr_text(), x in point()) {
        let f = ScalarField::parse(&text, &space()).unwrap();
        let printed = f.to_string();
        let g = ScalarField::parse(&printed, &space()).unwrap();
        prop_assert_eq!(f.eval(&x).unwrap().to_bits(), g.eval(&x).unwrap().to_bits(), "{} printed as {}", text, printed);
    }

    #[test]
    fn derivatives_print_parseably(text in expr_text(), x in point()) {
        let d = ScalarField::parse(&text, &space()).unwrap().diff_at(0);
        let g = ScalarField::parse(&d.to_string(), &space()).unwrap();
        prop_assert_eq!(d.eval(&x).unwrap().to_bits(), g.eval(&x).unwrap().to_bits());
    }

    #[test]
    fn normalization_preserves_values(text in expr_text(), x in point()) {
        let f = ScalarField::parse(&text, &space()).unwrap();
        let a = f.eval(&x).unwrap();
        let b = f.normalized().eval(&x).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{}: {} vs {}", text, a, b);
    }
}

#[test]
fn parse_examples() {
    let s = VarSpace::new(&["q", "v", "p"]).unwrap();
    let f = ScalarField::parse("p*v - v^2/2", &s).unwrap();
    assert_eq!(f.eval(&[0.0, 3.0, 1.0]).unwrap(), -1.5);
    let s1 = VarSpace::new(&["q"]).unwrap();
    assert_eq!(ScalarField::parse("sin(q)", &s1).unwrap().eval(&[0.0]).unwrap(), 0.0);
    let s2 = VarSpace::new(&["q", "v"]).unwrap();
    match ScalarField::parse("q +* v", &s2) {
        Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 3),
        other => panic!("expected a syntax error, got {:?}", other),
    }
    assert!(matches!(ScalarField::parse("q + w", &s2), Err(ExprError::UnknownSymbol { .. })));
}

#[test]
fn precedence() {
    let s = VarSpace::new(&["x"]).unwrap();
    let eval = |t: &str| ScalarField::parse(t, &s).unwrap().eval(&[2.0]).unwrap();
    assert_eq!(eval("-x^2"), -4.0);
    assert_eq!(eval("2*x^3"), 16.0);
    assert_eq!(eval("8/x/2"), 2.0);
    assert_eq!(eval("x - 1 - 1"), 0.0);
    assert_eq!(eval("(-x)^2"), 4.0);
}

#[test]
fn eval_examples() {
    let q = VarSpace::new(&["q"]).unwrap();
    assert_eq!(ScalarField::parse("exp(q)", &q).unwrap().eval(&[0.0]).unwrap(), 1.0);
    assert!(matches!(
        ScalarField::parse("log(q)", &q).unwrap().eval(&[-1.0]),
        Err(ExprError::Domain { .. })
    ));
    assert!(matches!(
        ScalarField::parse("1/q", &q).unwrap().eval(&[0.0]),
        Err(ExprError::Domain { .. })
    ));
    assert!(matches!(
        ScalarField::parse("sqrt(q)", &q).unwrap().eval(&[-1.0]),
        Err(ExprError::Domain { .. })
    ));
    let qp = VarSpace::new(&["q", "p"]).unwrap();
    assert_eq!(ScalarField::parse("q^2+p^2", &qp).unwrap().eval(&[3.0, 4.0]).unwrap(), 25.0);
}

#[test]
fn differentiate_examples() {
    let s = VarSpace::new(&["q", "p", "v"]).unwrap();
    let e = ScalarField::parse("p*v - v^2/2", &s).unwrap();
    let d = e.diff("v").unwrap();
    assert_eq!(d.eval(&[0.0, 1.0, 1.0]).unwrap(), 0.0);
    assert!(d.symbolically_equal(&ScalarField::parse("p - v", &s).unwrap()));
    assert_eq!(e.differentiate("v", 2).unwrap().as_constant(), Some(-1.0));
    assert!(ScalarField::parse("sin(q)", &s).unwrap().diff("p").unwrap().is_zero());
}
