//! File formats.
//!
//! Trajectory CSV: header `k,u_1,..,u_m,x_1,..,x_n`, rows `k = 0..T`, the
//! input fields of the last row left empty. Input-signal CSV: header
//! `k,u_1,..,u_m` (the `k` column is optional). Non-finite values are
//! rejected everywhere.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::certify::CertReport;
use crate::datamat::Trajectory;
use crate::error::{Error, Result};
use crate::experiment::ExperimentSpec;
use crate::scalar::Scalar;
use crate::sdp::DesignResult;
use crate::verify::SweepRow;

fn parse_field(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: cannot parse {s:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("row {row}, column {col}: non-finite value {s:?}")));
    }
    Ok(v)
}

/// Indices of the columns named `{prefix}1, {prefix}2, ..` in order.
fn numbered_columns(header: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    while let Some(i) = header.iter().position(|h| h.trim() == format!("{prefix}{}", cols.len() + 1)) {
        cols.push(i);
    }
    let extra = header
        .iter()
        .filter(|h| h.trim().starts_with(prefix))
        .count();
    if extra != cols.len() {
        return Err(Error::Parse(format!("columns {prefix}* must be numbered 1..N without gaps")));
    }
    Ok(cols)
}

fn check_dim(what: &str, found: usize, expected: Option<usize>) -> Result<()> {
    if found == 0 {
        return Err(Error::Parse(format!("no {what} columns in header")));
    }
    match expected {
        Some(e) if e != found => Err(Error::DimensionMismatch { context: format!("{what} columns"), expected: e, found }),
        _ => Ok(()),
    }
}

/// Reads a trajectory; `n` and `m` are checked against the header when given.
pub fn read_trajectory_csv<S: Scalar, R: Read>(reader: R, n: Option<usize>, m: Option<usize>) -> Result<Trajectory<S>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let ucols = numbered_columns(&header, "u_")?;
    let xcols = numbered_columns(&header, "x_")?;
    check_dim("input", ucols.len(), m)?;
    check_dim("state", xcols.len(), n)?;
    let kcol = header.iter().position(|h| h == "k");

    let mut states = Vec::new();
    let mut inputs: Vec<Option<DVector<S>>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let Some(kc) = kcol {
            let k = rec.get(kc).unwrap_or("");
            if k.parse::<usize>().ok() != Some(row) {
                return Err(Error::Parse(format!("row {row}: expected k = {row}, found {k:?}")));
            }
        }
        let field = |i: usize| rec.get(i).unwrap_or("");
        let x = xcols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_field(field(c), row, &format!("x_{}", j + 1)).map(S::lit))
            .collect::<Result<Vec<S>>>()?;
        states.push(DVector::from_vec(x));
        let blank = ucols.iter().all(|&c| field(c).is_empty());
        inputs.push(if blank {
            None
        } else {
            let u = ucols
                .iter()
                .enumerate()
                .map(|(j, &c)| parse_field(field(c), row, &format!("u_{}", j + 1)).map(S::lit))
                .collect::<Result<Vec<S>>>()?;
            Some(DVector::from_vec(u))
        });
    }
    if states.len() < 2 {
        return Err(Error::Parse(format!("trajectory needs at least two rows, found {}", states.len())));
    }
    let last = inputs.pop().flatten();
    if last.is_some() {
        return Err(Error::Parse("input fields of the final row must be empty".into()));
    }
    let inputs = inputs
        .into_iter()
        .enumerate()
        .map(|(k, u)| u.ok_or_else(|| Error::Parse(format!("row {k}: missing input values"))))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(states, inputs)
}

pub fn write_trajectory_csv<S: Scalar, W: Write>(traj: &Trajectory<S>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let (n, m) = (traj.state_dim(), traj.input_dim());
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend((1..=n).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (k, x) in traj.states().iter().enumerate() {
        let mut rec = vec![k.to_string()];
        match traj.inputs().get(k) {
            Some(u) => rec.extend(u.iter().map(|v| v.as_f64().to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), m)),
        }
        rec.extend(x.iter().map(|v| v.as_f64().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an input signal, one sample per row.
pub fn read_input_csv<S: Scalar, R: Read>(reader: R) -> Result<Vec<DVector<S>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let ucols = numbered_columns(&header, "u_")?;
    check_dim("input", ucols.len(), None)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let u = ucols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_field(rec.get(c).unwrap_or(""), row, &format!("u_{}", j + 1)).map(S::lit))
            .collect::<Result<Vec<S>>>()?;
        out.push(DVector::from_vec(u));
    }
    if out.is_empty() {
        return Err(Error::Parse("input signal has no rows".into()));
    }
    Ok(out)
}

pub fn write_input_csv<S: Scalar, W: Write>(inputs: &[DVector<S>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = inputs.first().map_or(0, |u| u.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    for (k, u) in inputs.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(u.iter().map(|v| v.as_f64().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    x0: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    #[serde(default = "one")]
    epsilon: f64,
    #[serde(default)]
    seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

pub fn read_experiment_spec<S: Scalar>(json: &str) -> Result<ExperimentSpec<S>> {
    let f: SpecFile = serde_json::from_str(json)?;
    if f.x0.iter().chain(f.inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Parse("experiment spec has non-finite values".into()));
    }
    let spec = ExperimentSpec {
        x0: DVector::from_iterator(f.x0.len(), f.x0.into_iter().map(S::lit)),
        inputs: f.inputs.iter().map(|u| DVector::from_iterator(u.len(), u.iter().map(|&v| S::lit(v)))).collect(),
        epsilon: S::lit(f.epsilon),
        seed: f.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn experiment_spec_json<S: Scalar>(spec: &ExperimentSpec<S>) -> Result<String> {
    let f = SpecFile {
        x0: spec.x0.iter().map(|v| v.as_f64()).collect(),
        inputs: spec.inputs.iter().map(|u| u.iter().map(|v| v.as_f64()).collect()).collect(),
        epsilon: spec.epsilon.as_f64(),
        seed: spec.seed,
    };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn matrix_rows<S: Scalar>(m: &DMatrix<S>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.as_f64()).collect()).collect()
}

/// Non-finite numbers serialize as `null`.
fn num<S: Scalar>(v: S) -> Value {
    serde_json::Number::from_f64(v.as_f64()).map_or(Value::Null, Value::Number)
}

pub fn design_result_json<S: Scalar>(res: &DesignResult<S>) -> Value {
    json!({
        "K": res.k.as_ref().map(matrix_rows),
        "alpha": num(res.alpha),
        "status": res.status,
        "xq_min_eig": num(res.xq_min_eig),
        "solve_time_s": res.solve_time_s,
        "solver_iterations": res.solver_iterations,
        "achieved_tolerance": num(res.achieved_tolerance),
    })
}

pub fn cert_report_json<S: Scalar>(report: &CertReport<S>) -> Result<Value> {
    Ok(serde_json::to_value(report)?)
}

pub const SWEEP_HEADER: [&str; 8] = [
    "epsilon",
    "K_dist",
    "alpha_dist",
    "stability_achieved",
    "gamma_condition_fulfilled",
    "alpha",
    "gamma_min",
    "spectral_radius",
];

fn opt<S: Scalar>(v: Option<S>) -> String {
    v.map(|x| format!("{:e}", x.as_f64())).unwrap_or_default()
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "YES"
    } else {
        "NO"
    }
}

/// Sweep table. Absent values are empty fields.
pub fn write_sweep_csv<S: Scalar, W: Write>(rows: &[SweepRow<S>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{}", r.epsilon.as_f64()),
            opt(r.k_dist),
            opt(r.alpha_dist),
            yes_no(r.stability_achieved()).to_string(),
            r.gamma_condition.map(|b| yes_no(b).to_string()).unwrap_or_default(),
            opt(r.alpha),
            opt(r.gamma_min),
            opt(r.spectral_radius),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAJ: &str = "k,u_1,x_1\n0,0.1,0.1\n1,0.11,0.11\n2,0.1221,0.1221\n3,,0.13700841\n";

    #[test]
    fn trajectory_roundtrip() {
        let t: Trajectory<f64> = read_trajectory_csv(TRAJ.as_bytes(), Some(1), Some(1)).unwrap();
        assert_eq!(t.horizon(), 3);
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), TRAJ);
    }

    #[test]
    fn trajectory_rejections() {
        let bad = [
            "k,u_1,x_1\n0,nan,0.1\n1,,0.2\n",
            "k,u_1,x_1\n0,inf,0.1\n1,,0.2\n",
            "k,u_1,x_1\n0,0.1,abc\n1,,0.2\n",
            "k,u_1,x_1\n0,0.1,0.1\n1,0.2,0.2\n",
            "k,u_1,x_1\n0,0.1,0.1\n",
            "k,u_1,x_1\n",
            "k,u_1,x_1\n0,0.1,0.1\n2,,0.2\n",
            "k,u_1,x_2\n0,0.1,0.1\n1,,0.2\n",
        ];
        for s in bad {
            assert!(read_trajectory_csv::<f64, _>(s.as_bytes(), None, None).is_err(), "{s}");
        }
        assert!(matches!(
            read_trajectory_csv::<f64, _>(TRAJ.as_bytes(), Some(2), None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn input_csv() {
        let u: Vec<DVector<f64>> = read_input_csv("u_1,u_2\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[1].as_slice(), &[3.0, 4.0]);
        let mut buf = Vec::new();
        write_input_csv(&u, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,u_1,u_2\n0,1,2\n1,3,4\n");
        assert!(read_input_csv::<f64, _>("u_1\n1\nNaN\n".as_bytes()).is_err());
        assert!(read_input_csv::<f64, _>("u_1\n".as_bytes()).is_err());
        assert!(read_input_csv::<f64, _>("v\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn spec_json() {
        let s: ExperimentSpec<f64> =
            read_experiment_spec(r#"{"x0":[0.1], "inputs":[[0.1],[0.11]], "epsilon":1.0, "seed":42}"#).unwrap();
        assert_eq!(s.seed, Some(42));
        let back: ExperimentSpec<f64> = read_experiment_spec(&experiment_spec_json(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(read_experiment_spec::<f64>(r#"{"x0":[0.1], "inputs":[]}"#).is_err());
        assert!(read_experiment_spec::<f64>(r#"{"x0":[0.1], "inputs":[[1.0]], "epsilon":0}"#).is_err());
    }
}
