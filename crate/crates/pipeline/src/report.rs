//! Column-text and JSON outputs. Every table has one header line and
//! tab-separated columns so it loads directly into a plotting tool.

use std::fmt::Write as _;
use std::path::Path;

use mbdno_core::TrajectoryRecord;
use mbdno_operator::losses::numerical_derivative;
use ndarray::Array2;
use serde::Serialize;

use crate::error::{io_err, Result};
use crate::metrics::EvalReport;
use crate::train::EpochRecord;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, &text)
}

/// Loss curve and validation errors per epoch.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch\tlr\tloss\tdata\tode\tderivative\tval_x_pct\tval_v_pct\tval_a_pct\tseconds\n");
    for r in history {
        let l = &r.loss;
        let [x, v, a] = r.val.means();
        writeln!(
            s,
            "{}\t{:.6e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            r.epoch, r.lr, l.total, l.data, l.ode, l.derivative, x, v, a, r.seconds
        )
        .unwrap();
    }
    write(path, &s)
}

/// One row per output channel plus the aggregate.
pub fn write_channel_errors(path: &Path, report: &EvalReport) -> Result<()> {
    let e = &report.errors;
    let mut s = String::from("channel\tx_pct\tv_pct\ta_pct\n");
    for (c, name) in report.channels.iter().enumerate() {
        writeln!(s, "{name}\t{:.6}\t{:.6}\t{:.6}", e.x.per_channel[c], e.v.per_channel[c], e.a.per_channel[c]).unwrap();
    }
    writeln!(s, "mean\t{:.6}\t{:.6}\t{:.6}", e.x.mean, e.v.mean, e.a.mean).unwrap();
    write(path, &s)
}

/// Truth and prediction side by side for every channel of one record:
/// `t`, then `{X,V,A}_{true,pred}_<channel>`.
pub fn write_trajectory(path: &Path, record: &TrajectoryRecord, pred: &Array2<f64>, channels: &[String]) -> Result<()> {
    let pv = numerical_derivative(pred.view(), record.dt_out, 1)?;
    let pa = numerical_derivative(pred.view(), record.dt_out, 2)?;
    let series = [("X", &record.x, pred), ("V", &record.v, &pv), ("A", &record.a, &pa)];
    let mut s = String::from("t");
    for (q, _, _) in &series {
        for name in channels {
            write!(s, "\t{q}_true_{name}\t{q}_pred_{name}").unwrap();
        }
    }
    s.push('\n');
    for i in 0..record.len() {
        write!(s, "{:.6}", i as f64 * record.dt_out).unwrap();
        for (_, truth, p) in &series {
            for c in 0..channels.len() {
                write!(s, "\t{:.9e}\t{:.9e}", truth[(c, i)], p[(c, i)]).unwrap();
            }
        }
        s.push('\n');
    }
    write(path, &s)
}

/// A simulated record: time, irregularity under each wheel, then X, V, A.
pub fn write_record(path: &Path, record: &TrajectoryRecord, channels: &[String]) -> Result<()> {
    let mut s = String::from("t");
    for j in 0..record.irregularity.nrows() {
        write!(s, "\tIrre{}", j + 1).unwrap();
    }
    for q in ["X", "V", "A"] {
        for name in channels {
            write!(s, "\t{q}_{name}").unwrap();
        }
    }
    s.push('\n');
    for i in 0..record.len() {
        write!(s, "{:.6}", i as f64 * record.dt_out).unwrap();
        for v in record.irregularity.column(i) {
            write!(s, "\t{v:.9e}").unwrap();
        }
        for m in [&record.x, &record.v, &record.a] {
            for v in m.column(i) {
                write!(s, "\t{v:.9e}").unwrap();
            }
        }
        s.push('\n');
    }
    write(path, &s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}
