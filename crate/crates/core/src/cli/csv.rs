//! CSV writers. Floats are written with 17 significant digits.

use std::io::Write;

use crate::error::Result;
use crate::metrics::ExperimentReport;

pub const CONVERGENCE_HEADER: &str = "k,mse,stopped";
pub const ORDER_HEADER: &str = "scheme,h,mse,slope";

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `k,mse,stopped`; `stopped` is 1 on the iteration that met the tolerance.
pub fn write_convergence<W: Write>(mut w: W, report: &ExperimentReport<f64>) -> Result<()> {
    writeln!(w, "{CONVERGENCE_HEADER}")?;
    let last = report.per_iteration_mse.len() - 1;
    for (k, &mse) in report.per_iteration_mse.iter().enumerate() {
        let stopped = u8::from(report.converged && k == last);
        writeln!(w, "{k},{},{stopped}", float(mse))?;
    }
    Ok(())
}

pub fn invariants_header(l: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=l).map(|i| format!("err_I{i}_max")));
    cols.extend((1..=l).map(|i| format!("err_I{i}_mean")));
    cols.join(",")
}

/// `t,err_I1_max..err_Il_max,err_I1_mean..err_Il_mean`, one row per coarse node.
pub fn write_invariants<W: Write>(mut w: W, report: &ExperimentReport<f64>) -> Result<()> {
    let l = report.invariant_error_series.first().map_or(0, Vec::len);
    writeln!(w, "{}", invariants_header(l))?;
    for ((t, max), mean) in report
        .series_times
        .iter()
        .zip(&report.invariant_error_series)
        .zip(&report.invariant_error_mean)
    {
        let mut row = vec![float(*t)];
        row.extend(max.iter().map(|&v| float(v)));
        row.extend(mean.iter().map(|&v| float(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(float(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn header_for_two_invariants() {
        assert_eq!(
            invariants_header(2),
            "t,err_I1_max,err_I2_max,err_I1_mean,err_I2_mean"
        );
    }
}
