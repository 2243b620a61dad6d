use std::ffi::CStr;
use std::ptr;

use sirtv_ffi::*;

fn last_error() -> String {
    let p = sirtv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulate_round_trip() {
    unsafe {
        let values = [0.3, 0.3, 0.2];
        let mut sched = ptr::null_mut();
        assert_eq!(sirtv_schedule_new(values.as_ptr(), 3, &mut sched), SirtvStatus::Ok);
        assert_eq!(sirtv_schedule_len(sched), 3);

        let mut traj = ptr::null_mut();
        assert_eq!(sirtv_simulate(1000.0, 0.1, 1.0, 1, sched, &mut traj), SirtvStatus::Ok);
        let n = sirtv_trajectory_len(traj);
        assert_eq!(n, 4);
        let (mut s, mut i, mut r, mut y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        assert_eq!(sirtv_trajectory_states(traj, s.as_mut_ptr(), i.as_mut_ptr(), r.as_mut_ptr(), n), SirtvStatus::Ok);
        assert_eq!(sirtv_trajectory_cumulative(traj, y.as_mut_ptr(), n), SirtvStatus::Ok);
        assert_eq!((s[0], i[0], r[0]), (999.0, 1.0, 0.0));
        for k in 0..n {
            assert!((s[k] + i[k] + r[k] - 1000.0).abs() < 1e-9);
            assert_eq!(y[k], 1000.0 - s[k]);
        }
        // short buffer
        assert_eq!(sirtv_trajectory_cumulative(traj, y.as_mut_ptr(), 2), SirtvStatus::InvalidInput);
        sirtv_trajectory_free(traj);
        sirtv_schedule_free(sched);
    }
}

#[test]
fn status_codes_and_messages() {
    unsafe {
        let mut sched = ptr::null_mut();
        let bad = [0.2, f64::NAN];
        assert_eq!(sirtv_schedule_new(bad.as_ptr(), 2, &mut sched), SirtvStatus::Numerical);
        let negative = [0.2, -0.1];
        assert_eq!(sirtv_schedule_new(negative.as_ptr(), 2, &mut sched), SirtvStatus::InvalidInput);
        assert!(sched.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(sirtv_schedule_new(ptr::null(), 2, &mut sched), SirtvStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(sirtv_schedule_new([0.1].as_ptr(), 1, ptr::null_mut()), SirtvStatus::NullPointer);

        let wild = [1000.0];
        assert_eq!(sirtv_schedule_new(wild.as_ptr(), 1, &mut sched), SirtvStatus::Ok);
        let mut traj = ptr::null_mut();
        assert_eq!(sirtv_simulate(100.0, 0.1, 1.0, 1, sched, &mut traj), SirtvStatus::Numerical);
        assert!(traj.is_null());
        assert_eq!(sirtv_simulate(100.0, -0.1, 1.0, 1, sched, &mut traj), SirtvStatus::InvalidInput);
        sirtv_schedule_free(sched);

        let mut r0 = 0.0;
        assert_eq!(sirtv_reproduction_number(0.3, 0.1, &mut r0), SirtvStatus::Ok);
        assert!(sirtv_last_error().is_null());
        assert!((r0 - 3.0).abs() < 1e-12);
        let mut i = 0.0;
        assert_eq!(sirtv_early_phase_infected(1.0, 0.3, 0.1, 10.0, &mut i), SirtvStatus::Ok);
        assert!((i - 2f64.exp()).abs() < 1e-12);

        // null handles are harmless
        assert_eq!(sirtv_schedule_len(ptr::null()), 0);
        assert!(sirtv_fit_final_cost(ptr::null()).is_nan());
        sirtv_fit_free(ptr::null_mut());
        assert!(!CStr::from_ptr(sirtv_version()).to_bytes().is_empty());
    }
}

#[test]
fn fit_and_evaluate() {
    unsafe {
        // noise-free data generated from a constant rate
        let mut sched = ptr::null_mut();
        assert_eq!(sirtv_schedule_new([0.3; 130].as_ptr(), 130, &mut sched), SirtvStatus::Ok);
        let mut traj = ptr::null_mut();
        assert_eq!(sirtv_simulate(1e6, 0.1, 1.0, 1, sched, &mut traj), SirtvStatus::Ok);
        let mut y = vec![0.0; 131];
        assert_eq!(sirtv_trajectory_cumulative(traj, y.as_mut_ptr(), 131), SirtvStatus::Ok);
        let cumulative: Vec<u64> = y[1..].iter().map(|v| v.round() as u64).collect();
        let daily: Vec<u64> =
            cumulative.iter().scan(0, |prev, &c| Some(c - std::mem::replace(prev, c))).collect();

        let mut series = ptr::null_mut();
        assert_eq!(sirtv_series_from_daily(2020, 3, 10, daily.as_ptr(), daily.len(), &mut series), SirtvStatus::Ok);
        assert_eq!(sirtv_series_len(series), 130);
        let mut back = vec![0u64; 130];
        assert_eq!(sirtv_series_cumulative(series, back.as_mut_ptr(), 130), SirtvStatus::Ok);
        assert_eq!(back, cumulative);
        assert_eq!(sirtv_series_from_daily(2020, 2, 30, daily.as_ptr(), 1, &mut series), SirtvStatus::InvalidInput);
        assert_eq!(sirtv_series_from_daily(2020, 3, 10, daily.as_ptr(), daily.len(), &mut series), SirtvStatus::Ok);

        let mut options = sirtv_fit_options_default();
        options.population = 1e6;
        let mut fit = ptr::null_mut();
        assert_eq!(sirtv_fit(series, &options, &mut fit), SirtvStatus::Ok, "{}", last_error());
        assert_eq!(sirtv_fit_stage_count(fit), 10);
        let mut stage = SirtvStage::default();
        assert_eq!(sirtv_fit_stage(fit, 9, &mut stage), SirtvStatus::Ok);
        assert!(stage.polish && stage.segment_count == 130);
        assert_eq!(sirtv_fit_stage(fit, 10, &mut stage), SirtvStatus::InvalidInput);
        assert!(sirtv_fit_final_cost(fit) <= 130.0 * 0.25);

        let mut fitted = ptr::null_mut();
        assert_eq!(sirtv_fit_schedule(fit, &mut fitted), SirtvStatus::Ok);
        assert_eq!(sirtv_schedule_len(fitted), 130);

        let mut e = f64::NAN;
        assert_eq!(sirtv_prediction_error(fit, 100, 7, 0, &mut e), SirtvStatus::Ok);
        assert!(e.abs() < 1e-3, "{e}");
        assert_eq!(sirtv_prediction_error(fit, 125, 7, 0, &mut e), SirtvStatus::InvalidInput);

        let horizons = [7usize, 14];
        let mut table = ptr::null_mut();
        assert_eq!(sirtv_rolling_evaluation(fit, horizons.as_ptr(), 2, 100, 0, &mut table), SirtvStatus::Ok);
        assert_eq!(sirtv_error_table_len(table), 24 + 17);
        let mut row = SirtvErrorRow::default();
        assert_eq!(sirtv_error_table_row(table, 0, &mut row), SirtvStatus::Ok);
        assert_eq!((row.start_day, row.horizon), (100, 7));
        let mut summary = SirtvSummary::default();
        assert_eq!(sirtv_error_summary(table, 14, &mut summary), SirtvStatus::Ok);
        assert_eq!(summary.count, 17);
        assert!(summary.mean_abs < 1e-3);

        sirtv_error_table_free(table);
        sirtv_schedule_free(fitted);
        sirtv_fit_free(fit);
        sirtv_series_free(series);
        sirtv_trajectory_free(traj);
        sirtv_schedule_free(sched);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/sirtv.h")).unwrap();
    for name in ["sirtv_simulate", "sirtv_fit", "sirtv_rolling_evaluation", "sirtv_last_error", "SIRTV_STATUS_NUMERICAL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(dir.join("include/sirtv.h"))
            .output()
        else {
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
