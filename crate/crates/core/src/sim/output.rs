use std::io::Write;
use std::path::Path;

use super::{RunMetrics, SimTrace};

pub const METRICS_COLUMNS: [&str; 17] = [
    "scenario",
    "policy",
    "u_m",
    "status",
    "violation_time",
    "t1",
    "t_s_min",
    "t_s_q1",
    "t_s_median",
    "t_s_q3",
    "t_s_max",
    "max_abs_u",
    "min_h",
    "max_constraint_residual",
    "extremal_infeasible_steps",
    "steps",
    "failure",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

/// Header: `t, x_1..x_n, z_1..z_n, y, u, k, intervened, h, T_s, qp_status`.
pub fn trace_header(n: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=n).map(|i| format!("z_{i}")));
    cols.extend(["y", "u", "k", "intervened", "h", "T_s", "qp_status"].map(String::from));
    cols
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(trace.states()))?;
    for r in &trace.records {
        let mut row = vec![format!("{:.6}", r.t)];
        row.extend(r.x.iter().map(|v| format!("{v:.12e}")));
        row.extend(r.z.iter().map(|v| format!("{v:.12e}")));
        row.push(format!("{:.12e}", r.y));
        row.push(format!("{:.12e}", r.u));
        row.push(format!("{:.12e}", r.k));
        row.push(u8::from(r.intervened).to_string());
        row.push(opt(r.h));
        row.push(opt(r.t_s));
        row.push(r.qp_status.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(rows: &[RunMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for m in rows {
        let status = match (&m.failure, m.violated()) {
            (Some(_), _) => "failed",
            (None, true) => "violated",
            (None, false) => "safe",
        };
        let q = m.t_s;
        w.write_record([
            m.scenario.clone(),
            m.policy.to_string(),
            format!("{}", m.u_m),
            status.to_string(),
            opt(m.violation_time),
            opt(m.t1),
            opt(q.map(|q| q.min)),
            opt(q.map(|q| q.q1)),
            opt(q.map(|q| q.median)),
            opt(q.map(|q| q.q3)),
            opt(q.map(|q| q.max)),
            format!("{:.9e}", m.max_abs_u),
            opt(m.min_h),
            opt(m.max_constraint_residual),
            m.extremal_infeasible_steps.to_string(),
            m.steps.to_string(),
            m.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A gnuplot script plotting output and input of `csv_name` next to it.
pub fn write_gnuplot(dir: &Path, csv_name: &str, trace: &SimTrace) -> std::io::Result<()> {
    let n = trace.states();
    let y_col = 2 + 2 * n;
    let u_col = y_col + 1;
    let k_col = y_col + 2;
    let script = format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 1200,500\n\
         set output '{stem}.png'\n\
         set multiplot layout 1,2\n\
         set xlabel 't [s]'\n\
         plot '{csv}' using 1:{y} with lines, {ym} with lines dt 2 title 'y_m', -{ym} with lines dt 2 notitle\n\
         plot '{csv}' using 1:{u} with lines, '' using 1:{k} with lines\n\
         unset multiplot\n",
        stem = csv_name.trim_end_matches(".csv"),
        csv = csv_name,
        y = y_col,
        u = u_col,
        k = k_col,
        ym = trace.y_m,
    );
    std::fs::write(dir.join(format!("{}.gp", csv_name.trim_end_matches(".csv"))), script)
}
