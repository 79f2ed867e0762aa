//! Generator expansions against Monte Carlo conditional expectations.

use sojd::generator::{self, McOptions, TestFunction};
use sojd::par::Execution;
use sojd::presets::{Preset, PresetParams};

#[test]
fn second_order_expansion_of_x_matches_mc() {
    let model = PresetParams::new(Preset::OuJump).build().unwrap();
    let g = TestFunction::new("x", |x, _| x);
    let (x, delta) = (0.8, 0.1);
    let e = generator::expand_conditional(&model, &g, x, 0.0, delta, 2).unwrap();
    assert!((e.value - x * (1.0 - delta + delta * delta / 2.0)).abs() < 1e-6);
    let opts = McOptions {
        reps: 100_000,
        seed: 11,
        substeps: 100,
        ..McOptions::default()
    };
    let (mc, se) = generator::conditional_expectation_mc(&model, &g, x, 0.0, delta, &opts).unwrap();
    assert!((mc - e.value).abs() <= 3.0 * se + delta.powi(3), "mc {mc} ± {se} vs {}", e.value);
}

#[test]
fn relation_checks_do_not_depend_on_the_schedule() {
    let model = PresetParams::new(Preset::OuJump).build().unwrap();
    let opts = McOptions {
        reps: 2_000,
        seed: 3,
        substeps: 20,
        execution: Execution::Parallel,
    };
    let par = generator::verify_relation_34(&model, 0.2, 0.02, &opts).unwrap();
    let seq = generator::verify_relation_34(
        &model,
        0.2,
        0.02,
        &McOptions {
            execution: Execution::Sequential,
            ..opts
        },
    )
    .unwrap();
    assert_eq!(par, seq);
}

#[test]
fn default_preset_satisfies_both_relations() {
    let model = PresetParams::new(Preset::OuJump).build().unwrap();
    let opts = McOptions {
        reps: 100_000,
        ..McOptions::default()
    };
    let r34 = generator::verify_relation_34(&model, 0.0, 0.01, &opts).unwrap();
    assert!((r34.rhs - 2.0 / 3.0 * 0.34).abs() < 1e-10);
    assert!(r34.passes(0.05), "{r34:?}");
    let r33 = generator::verify_relation_33(&model, 1.0, 0.01, &opts).unwrap();
    assert_eq!(r33.rhs, -1.0);
    assert!(r33.passes(0.05), "{r33:?}");
}
