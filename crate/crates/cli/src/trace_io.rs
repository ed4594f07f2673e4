//! Trace and summary serialization. All floats are printed with nine
//! significant digits so reruns of the same scenario are byte-identical.

use std::fmt::Write as _;

use anglerig_core::simulation::{
    ScenarioConfig, SimTrace, FLAG_CLAMP, FLAG_MULTIPLICITY, FLAG_NOT_IAR,
};

/// Nine significant digits, scientific; `NaN` for undefined entries.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.8e}")
    }
}

/// CSV header for a fleet of `n` robots. The column set depends on the robot
/// count only; estimator-off runs emit NaN in the error columns.
pub fn trace_header(n: usize) -> String {
    let mut header = String::from("t,lambda8,lambda8_weighted");
    for i in 1..=n {
        write!(header, ",aim_deg_{i}").unwrap();
    }
    for i in 1..=n {
        write!(header, ",loc_err_{i}").unwrap();
    }
    header.push_str(",n_edges,flags");
    header
}

pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = trace_header(trace.n_robots);
    out.push('\n');
    for rec in &trace.records {
        write!(
            out,
            "{},{},{}",
            fmt_float(rec.t),
            fmt_float(rec.lambda),
            fmt_float(rec.lambda_weighted)
        )
        .unwrap();
        for i in 0..trace.n_robots {
            let aim = rec.aim_deg.get(i).copied().unwrap_or(f64::NAN);
            write!(out, ",{}", fmt_float(aim)).unwrap();
        }
        for i in 0..trace.n_robots {
            let err = rec.loc_err.get(i).copied().unwrap_or(f64::NAN);
            write!(out, ",{}", fmt_float(err)).unwrap();
        }
        write!(out, ",{},{}", rec.edges.len(), rec.flags).unwrap();
        out.push('\n');
    }
    out
}

/// End-of-run summary: final and worst-case metrics, flag counts, aiming
/// over the final third, and the abort record when the run stopped early.
pub fn run_summary(trace: &SimTrace, config: &ScenarioConfig) -> serde_json::Value {
    let records = &trace.records;
    let min_over = |f: &dyn Fn(&anglerig_core::simulation::StepRecord) -> f64| {
        records.iter().map(|r| f(r)).fold(f64::INFINITY, f64::min)
    };
    let lambda_min = min_over(&|r| r.lambda);
    let lambda_weighted_min = min_over(&|r| r.lambda_weighted);
    let min_distance = min_over(&|r| r.min_distance);
    let iar_all = records.iter().all(|r| r.is_iar);
    let count = |flag: u32| records.iter().filter(|r| r.flags & flag != 0).count();

    // worst aim error per robot over the final third of the run
    let final_third_start = records.len().saturating_sub(records.len() / 3);
    let aim_final_third: Vec<serde_json::Value> = (0..trace.n_robots)
        .map(|i| {
            let worst = records[final_third_start..]
                .iter()
                .map(|r| r.aim_deg.get(i).copied().unwrap_or(f64::NAN))
                .fold(f64::NEG_INFINITY, f64::max);
            serde_json::json!(worst)
        })
        .collect();

    let final_rec = records.last();
    let final_loc_err: Option<Vec<f64>> = final_rec.and_then(|r| {
        if r.loc_err.is_empty() {
            None
        } else {
            Some(r.loc_err.clone())
        }
    });
    let final_loc_err_max = final_loc_err
        .as_ref()
        .map(|v| v.iter().cloned().fold(0.0f64, f64::max));

    serde_json::json!({
        "seed": config.seed,
        "dimension": config.dimension,
        "robots": config.robots,
        "dt": config.integrator.dt,
        "t_end": config.integrator.t_end,
        "records": records.len(),
        "completed": trace.completed(),
        "abort": trace.abort,
        "lambda8_min": lambda_min,
        "lambda8_final": final_rec.map(|r| r.lambda),
        "lambda8_weighted_min": lambda_weighted_min,
        "iar_all_steps": iar_all,
        "min_pairwise_distance": min_distance,
        "clamp_steps": count(FLAG_CLAMP),
        "multiplicity_warn_steps": count(FLAG_MULTIPLICITY),
        "not_iar_steps": count(FLAG_NOT_IAR),
        "aim_deg_final_third_max": aim_final_third,
        "final_loc_err": final_loc_err,
        "final_loc_err_max": final_loc_err_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_depends_on_robot_count_only() {
        assert_eq!(
            trace_header(2),
            "t,lambda8,lambda8_weighted,aim_deg_1,aim_deg_2,loc_err_1,loc_err_2,n_edges,flags"
        );
    }

    #[test]
    fn floats_have_nine_significant_digits() {
        assert_eq!(fmt_float(123.456789123), "1.23456789e2");
        assert_eq!(fmt_float(f64::NAN), "NaN");
        assert_eq!(fmt_float(0.0), "0.00000000e0");
    }
}
