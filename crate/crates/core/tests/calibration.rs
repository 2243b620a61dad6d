use chrono::NaiveDate;
use sirtv::calibration::{dyadic_fit, Bounds, FitConfig, FitDocument, ObjectiveContext, StopRule};
use sirtv::data::{generate_synthetic, NoiseModel, SyntheticSpec};
use sirtv::model::{BetaSchedule, SirParams};

fn synthetic(values: Vec<f64>, population: f64) -> ObjectiveContext {
    let params = SirParams::new(population, 0.1).unwrap();
    let spec = SyntheticSpec {
        true_schedule: BetaSchedule::new(values).unwrap(),
        params,
        init: params.seeded_state(1.0).unwrap(),
        noise: NoiseModel::None,
        seed: 0,
        start_date: NaiveDate::from_ymd_opt(2020, 3, 10).unwrap(),
        substeps_per_day: 1,
    };
    let data = generate_synthetic(&spec).unwrap();
    ObjectiveContext::new(data.series, params, spec.init, 1).unwrap()
}

#[test]
fn constant_rate_is_found_at_the_first_stage() {
    let ctx = synthetic(vec![0.25; 120], 1e6);
    let fit = dyadic_fit(&ctx, Bounds::default(), &FitConfig::default()).unwrap();
    let counts: Vec<usize> = fit.stages.iter().map(|s| s.segment_count).collect();
    assert_eq!(counts, [1, 2, 4, 8, 16, 32, 64, 128, 120]);

    // Only integer rounding of the data separates the truth from an exact fit.
    let first = &fit.stages[0];
    assert!(first.final_cost <= 0.25 * 120.0, "{first:?}");
    assert!(fit.stages.windows(2).all(|w| w[1].final_cost <= w[0].final_cost));
    let stage1 = ctx.truncated(120).unwrap();
    let cost_at_truth = sirtv::calibration::sse_cost(&stage1, &BetaSchedule::constant(0.25, 120).unwrap()).unwrap();
    assert!(first.final_cost <= cost_at_truth * (1.0 + 1e-6));
}

#[test]
fn power_of_two_horizon_has_no_polish() {
    let ctx = synthetic(vec![0.3; 64], 1e5);
    let config = FitConfig {
        stage_stop: StopRule { tolerance: 1e-8, max_iterations: 20 },
        ..FitConfig::default()
    };
    let fit = dyadic_fit(&ctx, Bounds::default(), &config).unwrap();
    assert_eq!(fit.stages.len(), 7);
    assert!(fit.stages.iter().all(|s| !s.polish));
    assert_eq!(fit.iterations_per_stage().len(), 7);
    assert_eq!(fit.stage_costs().last().unwrap().0, 64);
}

#[test]
fn fit_document_round_trip() {
    let ctx = synthetic([vec![0.3; 20], vec![0.1; 20]].concat(), 1e5);
    let bounds = Bounds::new(0.0, 2.0).unwrap();
    let fit = dyadic_fit(&ctx, bounds, &FitConfig::default()).unwrap();
    let doc = FitDocument::new(&ctx, bounds, &fit);
    let mut buf = Vec::new();
    doc.write_json(&mut buf).unwrap();
    let back = FitDocument::read_json(buf.as_slice()).unwrap();
    assert_eq!(back.schedule, fit.schedule);
    assert_eq!(back.fit_result().stages, fit.stages);
    assert_eq!(back.bounds, bounds);
    assert!(fit.schedule.values().iter().all(|v| bounds.contains(*v)));
}
