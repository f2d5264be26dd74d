use num_rational::BigRational;
use proptest::prelude::*;
use quiver_hk::chambers::{chamber_arrangement, BoundingBox};
use quiver_hk::instances::{example_one, random_p1_instance};
use quiver_hk::problem::{format_rational, parse_rational, Problem};
use quiver_hk::stability::{classify, rat, Classification, StabilityParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(s: (i64, i64), t: (i64, i64), den: i64) -> StabilityParams {
    StabilityParams::new(
        vec![rat(1, 2), rat(1, 2)],
        vec![rat(s.0, 1), rat(s.1, 1)],
        vec![rat(t.0, den), rat(t.1, den)],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn rationals_round_trip(n in -10_000i64..10_000, d in 1i64..500) {
        let r = rat(n, d);
        prop_assert_eq!(parse_rational(&format_rational(&r)).unwrap(), r);
    }

    #[test]
    fn example_one_matches_closed_form(
        mi in -3i64..3, d in 0i64..4, si in 1i64..5, sj in 1i64..5,
        ti in -20i64..20, tj in -20i64..20, den in 1i64..4,
    ) {
        let p = params((si, sj), (ti, tj), den);
        let lhs = BigRational::from_integer((si * sj * d).into());
        let rhs = rat(si * tj - sj * ti, den);
        let got = classify(&example_one(mi, mi + d), &p).unwrap();
        prop_assert_eq!(got.is_stable(), lhs < rhs);
        prop_assert_eq!(matches!(got, Classification::Unstable(_)), lhs > rhs);
    }

    #[test]
    fn classification_is_constant_on_cells(si in 1i64..4, sj in 1i64..4, d in 0i64..3) {
        let model = example_one(0, d);
        let alpha = vec![rat(1, 2), rat(1, 2)];
        let sigma = vec![rat(si, 1), rat(sj, 1)];
        let arr = chamber_arrangement(&model, &alpha, &sigma, &BoundingBox::square(3)).unwrap();
        for c in &arr.cells {
            let [a, b] = &c.representative;
            let p = StabilityParams::new(alpha.clone(), sigma.clone(), vec![a.clone(), b.clone()]).unwrap();
            let direct = classify(&model, &p).unwrap();
            prop_assert_eq!(c.classification.as_ref().map(|k| k.label()), Some(direct.label()));
        }
    }

    #[test]
    fn random_problems_survive_serialization(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, p) = random_p1_instance(&mut rng);
        let first = Problem::from_parts(Some("random"), m, p).to_json();
        let second = Problem::parse(&first).unwrap().to_json();
        prop_assert_eq!(first, second);
    }
}
