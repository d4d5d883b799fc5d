use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lina::interp::{evaluate, Value};
use lina::ir::program_size;
use lina::oracle::{self, generate_program, root_of, GenConfig, GenMode};
use lina::parser::parse_program;
use lina::structured;
use lina::transpose::transpose;
use lina::typecheck::{is_linear_b, typecheck_program};

fn mode() -> impl Strategy<Value = GenMode> {
    prop_oneof![
        Just(GenMode::LinearA),
        Just(GenMode::LinearB),
        Just(GenMode::NonLinear)
    ]
}

fn config() -> impl Strategy<Value = GenConfig> {
    (any::<u64>(), mode(), 1u32..8, 1usize..4, 0.0f64..1.0).prop_map(
        |(seed, mode, depth, arity, lf)| GenConfig {
            max_depth: depth,
            max_arity: arity,
            linear_fraction: lf,
            ..GenConfig::new(seed, mode)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_programs_typecheck(cfg in config()) {
        let p = generate_program(&cfg);
        prop_assert!(typecheck_program(&p).is_ok(), "{}", p);
        if cfg.mode == GenMode::LinearB {
            prop_assert!(is_linear_b(&p).iter().all(|r| r.ok()));
        }
    }

    #[test]
    fn text_and_structured_round_trip(cfg in config()) {
        let p = generate_program(&cfg);
        prop_assert_eq!(&parse_program(&p.to_string()).unwrap(), &p);
        prop_assert_eq!(&structured::from_str(&structured::to_string(&p)).unwrap(), &p);
    }

    #[test]
    fn adding_a_def_grows_size(cfg in config()) {
        let p = generate_program(&cfg);
        let mut q = p.clone();
        let mut extra = q.defs[0].clone();
        extra.name = "extra".into();
        q.defs.push(extra);
        prop_assert!(program_size(&q) > program_size(&p));
    }

    #[test]
    fn work_ignores_argument_values(seed in any::<u64>(), vseed in any::<u64>()) {
        let p = generate_program(&GenConfig::new(seed, GenMode::LinearA));
        let mut r = ChaCha8Rng::seed_from_u64(vseed);
        let f = root_of(&p);
        let d = p.get(f).unwrap();
        let w: Vec<u64> = (0..3)
            .map(|_| {
                let x = oracle::random_values(&d.nl_params, &mut r);
                let dx = oracle::random_values(&d.lin_params, &mut r);
                evaluate(&p, f, &x, &dx).unwrap().work
            })
            .collect();
        prop_assert!(w.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn transpose_is_adjoint(seed in any::<u64>(), vseed in any::<u64>()) {
        let p = generate_program(&GenConfig::new(seed, GenMode::LinearB));
        let f = root_of(&p).to_owned();
        let q = transpose(&p, &[&f]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(vseed);
        prop_assert!(oracle::check_duality(&q, &f, &mut r).is_ok());
        prop_assert!(oracle::check_work_ledger(&q, &f, &mut r).is_ok());
    }

    #[test]
    fn unzip_reconstructs(seed in any::<u64>(), vseed in any::<u64>(), checkpoint in any::<bool>()) {
        let p = generate_program(&GenConfig::new(seed, GenMode::LinearA));
        let f = root_of(&p).to_owned();
        let mut r = ChaCha8Rng::seed_from_u64(vseed);
        let res = oracle::check_unzip_reconstruction(&p, &f, checkpoint, &mut r);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn scaling_linear_inputs_scales_outputs(seed in any::<u64>(), c in -3.0f64..3.0) {
        let p = generate_program(&GenConfig::new(seed, GenMode::LinearB));
        let f = root_of(&p);
        let d = p.get(f).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = oracle::random_values(&d.nl_params, &mut r);
        let dx = oracle::random_values(&d.lin_params, &mut r);
        let scaled: Vec<Value> = dx.iter().map(|v| v.scale(c)).collect();
        let a = oracle::flatten(&evaluate(&p, f, &x, &dx).unwrap().lin);
        let b = oracle::flatten(&evaluate(&p, f, &x, &scaled).unwrap().lin);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!(oracle::close(u * c, *v, 1e-9), "{} vs {}", u * c, v);
        }
    }
}
