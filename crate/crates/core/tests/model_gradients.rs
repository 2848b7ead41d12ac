use da6_core::env::CondKind;
use da6_core::model::Variant;
use da6_core::testkit::model_grad_error;

const ALL: [Variant; 6] = [
    Variant::Dqn,
    Variant::Iqn,
    Variant::Da3Dqn,
    Variant::Da3Iqn,
    Variant::Da6Dqn,
    Variant::Da6Iqn,
];

#[test]
fn every_variant_matches_finite_differences() {
    for variant in ALL {
        let err = model_grad_error(variant, &[CondKind::GPos, CondKind::OPos], 1).unwrap();
        assert!(err < 1e-4, "{variant:?}: {err}");
    }
}

#[test]
fn da6_with_a_single_conditional_state_matches_finite_differences() {
    for cond in [CondKind::GPos, CondKind::OPos] {
        let err = model_grad_error(Variant::Da6Iqn, &[cond], 2).unwrap();
        assert!(err < 1e-4, "{cond:?}: {err}");
    }
}
