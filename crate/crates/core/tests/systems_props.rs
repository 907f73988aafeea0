use dirac_core::conventions::LiePoissonSign;
use dirac_core::integrate::{integrate, IntegratorConfig, Trajectory};
use dirac_core::linear_dirac::is_dirac;
use dirac_core::reduction::{assemble, reduce, run_ladder, GeneralizedDiracSystem, LadderOptions, ReducedSystem};
use dirac_core::systems::{self, BundleData, ControlData, NonholonomicData, RawDirac, VakonomicData};
use dirac_core::ScalarField;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|t| t.to_string()).collect()
}

fn reduced(sys: &GeneralizedDiracSystem, seed: &[f64]) -> ReducedSystem {
    let dae = assemble(sys).unwrap();
    let ladder = run_ladder(&dae, seed, &LadderOptions::default()).unwrap();
    reduce(ladder, dae, &[]).unwrap()
}

fn run(sys: &GeneralizedDiracSystem, seed: &[f64], dt: f64, t: f64) -> Trajectory {
    let rs = reduced(sys, seed);
    let n = rs.n_base();
    integrate(&rs, &seed[..n], &IntegratorConfig::new(dt, t), &[]).unwrap()
}

/// `(f, g)` of both systems agree at `points`.
fn same_dae(a: &GeneralizedDiracSystem, b: &GeneralizedDiracSystem, points: &[Vec<f64>]) {
    let (da, db) = (assemble(a).unwrap(), assemble(b).unwrap());
    for z in points {
        let (fa, fb) = (da.eval_f(z).unwrap(), db.eval_f(z).unwrap());
        let (ga, gb) = (da.eval_g(z).unwrap(), db.eval_g(z).unwrap());
        for (x, y) in fa.iter().zip(&fb).chain(ga.iter().zip(&gb)) {
            assert!((x - y).abs() <= 1e-12, "{} vs {} at {:?}", x, y, z);
        }
    }
}

fn random_points(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn trivial_bundle_reduces_to_lagrangian_mechanics() {
    let l = "(v1^2 + 2*v2^2)/2 + q1*v2 - cos(q2)";
    let lag = systems::lagrangian(&["q1", "q2"], &["v1", "v2"], &["p1", "p2"], l).unwrap();
    let ap = systems::almost_poisson(&["q1", "q2"], &["v1", "v2"], &["p1", "p2"], &systems::trivial_bundle(2), l)
        .unwrap();
    same_dae(&lag, &ap, &random_points(1, 20, 6));
    let (da, db) = (assemble(&lag).unwrap(), assemble(&ap).unwrap());
    for (x, y) in da.f().iter().zip(db.f()) {
        assert!(x.symbolically_equal(y), "{} vs {}", x, y);
    }
}

#[test]
fn abelian_lie_poisson_is_static() {
    let zero = vec![vec![vec![0.0; 2]; 2]; 2];
    let sys = systems::lie_poisson(&["m1", "m2"], &["xi1", "xi2"], &zero, LiePoissonSign::Plus, "(xi1^2 + xi2^2)/2")
        .unwrap();
    let traj = run(&sys, &[0.3, -0.4, 0.0, 0.0], 1e-2, 1.0);
    for x in &traj.states {
        assert_eq!(x, &traj.states[0]);
    }
}

#[test]
fn trivial_action_reduces_advected_to_lie_poisson() {
    let c = systems::so3_structure_constants();
    let l = "(xi1^2 + 2*xi2^2 + 3*xi3^2)/2";
    let zero = vec![DMatrix::zeros(2, 2); 3];
    let adv = systems::advected(&["a1", "a2"], &["m1", "m2", "m3"], &["xi1", "xi2", "xi3"], &c, &zero, l).unwrap();
    // The advected μμ block carries the rigid-body sign.
    let lp = systems::lie_poisson(&["m1", "m2", "m3"], &["xi1", "xi2", "xi3"], &c, LiePoissonSign::Minus, l).unwrap();
    let (da, db) = (assemble(&adv).unwrap(), assemble(&lp).unwrap());
    for z in random_points(2, 20, 8) {
        let fa = da.eval_f(&z).unwrap();
        let fb = db.eval_f(&z[2..]).unwrap();
        assert!(fa[0].abs() <= 1e-14 && fa[1].abs() <= 1e-14);
        for (x, y) in fa[2..].iter().zip(&fb) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn lie_poisson_signs_are_opposite() {
    let c = systems::so3_structure_constants();
    let l = "(xi1^2 + 2*xi2^2 + 3*xi3^2)/2";
    let plus = assemble(&systems::lie_poisson(&["m1", "m2", "m3"], &["xi1", "xi2", "xi3"], &c, LiePoissonSign::Plus, l).unwrap()).unwrap();
    let minus = assemble(&systems::lie_poisson(&["m1", "m2", "m3"], &["xi1", "xi2", "xi3"], &c, LiePoissonSign::Minus, l).unwrap()).unwrap();
    for z in random_points(3, 10, 6) {
        let (a, b) = (plus.eval_f(&z).unwrap(), minus.eval_f(&z).unwrap());
        // Minus is M × Ω with Ω = ξ.
        let (m, w) = (&z[..3], &z[3..]);
        let cross = [m[1] * w[2] - m[2] * w[1], m[2] * w[0] - m[0] * w[2], m[0] * w[1] - m[1] * w[0]];
        for i in 0..3 {
            assert!((a[i] + b[i]).abs() <= 1e-12);
            assert!((b[i] - cross[i]).abs() <= 1e-12);
        }
    }
}

fn so3_bundle() -> BundleData {
    let c = systems::so3_structure_constants();
    BundleData {
        rho: vec![s(&["0", "-z", "y"]), s(&["z", "0", "-x"]), s(&["-y", "x", "0"])],
        c: c.iter()
            .map(|m| m.iter().map(|r| r.iter().map(|v| format!("{}", v)).collect()).collect())
            .collect(),
    }
}

#[test]
fn almost_poisson_hamiltonian_vector_field() {
    let h = "(p1^2 + p2^2 + p3^2)/2 + x*y + z^2/2";
    let sys = systems::almost_poisson_hamiltonian(&["x", "y", "z"], &["p1", "p2", "p3"], &so3_bundle(), h).unwrap();
    let dae = assemble(&sys).unwrap();
    let c = systems::so3_structure_constants();
    for z in random_points(4, 20, 6) {
        let (q, p) = (&z[..3], &z[3..]);
        let rho = [[0.0, -q[2], q[1]], [q[2], 0.0, -q[0]], [-q[1], q[0], 0.0]];
        let dh_dq = [q[1], q[0], q[2]];
        let dh_dp = [p[0], p[1], p[2]];
        let f = dae.eval_f(&z).unwrap();
        for i in 0..3 {
            // q̇ = ρ ∂H/∂p.
            let qdot: f64 = (0..3).map(|a| rho[i][a] * dh_dp[a]).sum();
            assert!((f[i] - qdot).abs() <= 1e-12);
        }
        for a in 0..3 {
            // ṗ_A = −ρⁱ_A ∂H/∂qⁱ − C^D_{AB} p_D ∂H/∂p_B.
            let mut pdot: f64 = -(0..3).map(|i| rho[i][a] * dh_dq[i]).sum::<f64>();
            for b in 0..3 {
                for d in 0..3 {
                    pdot -= c[d][a][b] * p[d] * dh_dp[b];
                }
            }
            assert!((f[3 + a] - pdot).abs() <= 1e-12);
        }
    }
}

fn particle_data(scale: &str) -> NonholonomicData {
    NonholonomicData {
        q: s(&["x", "y", "z"]),
        w: s(&["w1", "w2"]),
        p: s(&["p1", "p2"]),
        metric: vec![s(&["1", "0", "0"]), s(&["0", "1", "0"]), s(&["0", "0", "1"])],
        frame: vec![
            vec![scale.to_string(), "0".into(), format!("{}*y", scale)],
            s(&["0", "1", "0"]),
        ],
        potential: "0".into(),
        check_points: vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]],
    }
}

#[test]
fn particle_structure_functions() {
    let geo = systems::frame_geometry(&particle_data("1")).unwrap();
    let c = &geo.structure;
    for y in [-1.0, 0.0, 0.5, 2.0] {
        let q = [0.3, y, -0.7];
        let expected = -y / (1.0 + y * y);
        assert!((c[0][0][1].eval(&q).unwrap() - expected).abs() <= 1e-14);
        assert!((c[0][1][0].eval(&q).unwrap() + expected).abs() <= 1e-14);
        assert!(c[1][0][1].eval(&q).unwrap().abs() <= 1e-14);
    }
}

#[test]
fn coordinate_frame_has_no_structure_functions() {
    let data = NonholonomicData {
        q: s(&["x", "y"]),
        w: s(&["w1", "w2"]),
        p: s(&["p1", "p2"]),
        metric: vec![s(&["1 + y^2", "0"]), s(&["0", "2"])],
        frame: vec![s(&["1", "0"]), s(&["0", "1"])],
        potential: "y^2".into(),
        check_points: vec![vec![0.0, 0.0]],
    };
    let geo = systems::frame_geometry(&data).unwrap();
    for m in &geo.structure {
        for row in m {
            for f in row {
                assert!(f.normalized().is_zero(), "{}", f);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn frame_structure_functions_are_antisymmetric(
        k in proptest::collection::vec(-1.0f64..1.0, 4),
        q in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let data = NonholonomicData {
            q: s(&["x", "y", "z"]),
            w: s(&["w1", "w2"]),
            p: s(&["p1", "p2"]),
            metric: vec![s(&["1", "0", "0"]), s(&["0", "2", "0"]), s(&["0", "0", "1 + x^2"])],
            frame: vec![
                vec!["1".into(), format!("{}*z", k[0]), format!("{}*y + {}*sin(x)", k[1], k[2])],
                vec!["0".into(), "1".into(), format!("{}*x*y", k[3])],
            ],
            potential: "0".into(),
            check_points: vec![vec![0.0, 0.0, 0.0]],
        };
        let geo = systems::frame_geometry(&data).unwrap();
        for c in &geo.structure {
            for a in 0..2 {
                for b in 0..2 {
                    let sum = c[a][b].eval(&q).unwrap() + c[b][a].eval(&q).unwrap();
                    prop_assert!(sum.abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn frame_rescaling_leaves_the_motion_unchanged() {
    let base = systems::nonholonomic(&particle_data("1")).unwrap();
    let scaled = systems::nonholonomic(&particle_data("2")).unwrap();
    // Same initial velocity: w1 halves and p1 = G11 w1 doubles.
    let a = run(&base, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0], 1e-3, 1.0);
    let b = run(&scaled, &[0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0], 1e-3, 1.0);
    for (x, y) in a.states.iter().zip(&b.states) {
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() <= 1e-9, "{} vs {}", x[i], y[i]);
        }
    }
}

fn planar_vakonomic() -> systems::VakonomicSystem {
    systems::vakonomic(&VakonomicData {
        q: s(&["x", "y"]),
        p: s(&["p_x", "p_y"]),
        free: vec![true, false],
        v: s(&["v_x"]),
        phi: s(&["x"]),
        lagrangian: "v_x^2/2".into(),
        bundle: None,
    })
    .unwrap()
}

#[test]
fn vakonomic_matches_extended_lagrangian() {
    // L + λ(ẏ − x): λ̇ = 0, ẍ = −λ, ẏ = x, and λ = p_y.
    let vak = planar_vakonomic();
    let traj = run(&vak.system, &[0.0, 0.0, 1.0, 0.5, 0.0], 1e-3, 2.0);
    let lambda = 0.5;
    for (i, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let xe = t - lambda * t * t / 2.0;
        let ye = t * t / 2.0 - lambda * t * t * t / 6.0;
        assert!((x[0] - xe).abs() <= 1e-6);
        assert!((x[1] - ye).abs() <= 1e-6);
        let m = vak.multipliers(&traj.point(i)).unwrap();
        assert!((m.velocity_formula[0] - lambda).abs() <= 1e-12);
        // ∂L/∂y = 0, so the configuration formula is −p_y.
        assert!((m.configuration_formula.as_ref().unwrap()[0] + lambda).abs() <= 1e-12);
    }
}

#[test]
fn lqr_state_is_hyperbolic_cosine() {
    let sys = systems::optimal_control_system(&ControlData {
        q: s(&["q"]),
        u: s(&["u"]),
        p: s(&["p"]),
        dynamics: s(&["u"]),
        cost: "(q^2 + u^2)/2".into(),
        bundle: None,
    })
    .unwrap();
    let traj = run(&sys, &[1.0, 0.0, 0.0], 1e-3, 1.0);
    let end = traj.states.last().unwrap();
    assert!((end[0] - 1f64.cosh()).abs() <= 1e-6);
    assert!((end[1] - 1f64.sinh()).abs() <= 1e-6);
    // The optimal control is u = p.
    assert!((traj.fibers.last().unwrap()[0] - end[1]).abs() <= 1e-10);
}

/// Every builder yields a structure that is Dirac at random base points.
#[test]
fn builders_produce_dirac_structures() {
    let c = systems::so3_structure_constants();
    let systems: Vec<GeneralizedDiracSystem> = vec![
        systems::lagrangian(&["q"], &["v"], &["p"], "v^2/2").unwrap(),
        systems::hamiltonian(&["q"], &["p"], "p^2/2").unwrap(),
        systems::almost_poisson(&["x", "y", "z"], &["w1", "w2", "w3"], &["p1", "p2", "p3"], &so3_bundle(), "w1^2/2").unwrap(),
        systems::almost_poisson_hamiltonian(&["x", "y", "z"], &["p1", "p2", "p3"], &so3_bundle(), "p1^2").unwrap(),
        systems::lie_poisson(&["m1", "m2", "m3"], &["xi1", "xi2", "xi3"], &c, LiePoissonSign::Minus, "xi1^2").unwrap(),
        systems::advected(
            &["a1", "a2", "a3"],
            &["m1", "m2", "m3"],
            &["xi1", "xi2", "xi3"],
            &c,
            &systems::so3_hat_actions(),
            "xi1^2 - a3",
        )
        .unwrap(),
        systems::nonholonomic(&particle_data("1")).unwrap(),
        planar_vakonomic().system,
        systems::raw(&["a", "b"], &["y"], "a*y", &RawDirac::TwoForm(vec![s(&["0", "1 + a^2"]), s(&["-1 - a^2", "0"])])).unwrap(),
        systems::raw(&["a", "b"], &["y"], "a*y", &RawDirac::Bivector(vec![s(&["0", "b"]), s(&["-b", "0"])])).unwrap(),
    ];
    for (k, sys) in systems.iter().enumerate() {
        let dirac = sys.dirac();
        for x in random_points(100 + k as u64, 50, dirac.dim()) {
            let d = dirac.at(&x).unwrap();
            assert!(is_dirac(d.image()), "builder {} at {:?}", k, x);
            assert_eq!(d.dim(), dirac.dim());
        }
    }
}

#[test]
fn monitors_parse_over_the_total_space() {
    let sys = planar_vakonomic().system;
    let f = ScalarField::parse("p_y + v_x", sys.family().fibration().space()).unwrap();
    assert_eq!(f.eval(&[0.0, 0.0, 1.0, 0.5, 2.0]).unwrap(), 2.5);
}
