//! Line-delimited task records.
//!
//! One task per line, tab-separated:
//!
//! ```text
//! id  kind  p1,p2  x_dim  y_dim  support  query
//! ```
//!
//! `kind` is `sinusoid`, `pendulum` or `fixed` (with `p1,p2` being
//! amplitude,phase / mass,length / `-`). A sample set is a `;`-separated
//! list of rows `x1,x2,...|y1,...`. Floats carry 17 significant digits.

use std::io::{self, BufRead, Write};

use super::{Samples, TaskError, TaskInstance, TaskParams};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(",")
}

fn samples_field(s: &Samples) -> String {
    (0..s.len())
        .map(|i| format!("{}|{}", join(s.input(i)), join(s.target(i))))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_task_line(task: &TaskInstance) -> String {
    let (kind, params) = match task.params {
        TaskParams::Sinusoid { amplitude, phase } => ("sinusoid", join(&[amplitude, phase])),
        TaskParams::Pendulum { mass, length } => ("pendulum", join(&[mass, length])),
        TaskParams::Fixed => ("fixed", "-".to_string()),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        task.id,
        kind,
        params,
        task.support.x_dim,
        task.support.y_dim,
        samples_field(&task.support),
        samples_field(&task.query)
    )
}

pub fn write_tasks<W: Write>(mut w: W, tasks: &[TaskInstance]) -> io::Result<()> {
    for t in tasks {
        writeln!(w, "{}", write_task_line(t))?;
    }
    Ok(())
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>, TaskError> {
    s.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|e| TaskError::Parse {
                line,
                detail: format!("bad number {v:?}: {e}"),
            })
        })
        .collect()
}

fn parse_samples(s: &str, x_dim: usize, y_dim: usize, line: usize) -> Result<Samples, TaskError> {
    let mut out = Samples::new(x_dim, y_dim);
    for row in s.split(';').filter(|r| !r.is_empty()) {
        let (xs, ys) = row.split_once('|').ok_or_else(|| TaskError::Parse {
            line,
            detail: format!("row {row:?} lacks '|'"),
        })?;
        let (x, y) = (parse_floats(xs, line)?, parse_floats(ys, line)?);
        if x.len() != x_dim || y.len() != y_dim {
            return Err(TaskError::Parse {
                line,
                detail: format!("row has {}|{} values, expected {x_dim}|{y_dim}", x.len(), y.len()),
            });
        }
        out.push(&x, &y);
    }
    Ok(out)
}

pub fn read_task_line(text: &str, line: usize) -> Result<TaskInstance, TaskError> {
    let err = |detail: String| TaskError::Parse { line, detail };
    let fields: Vec<&str> = text.trim_end_matches(['\n', '\r']).split('\t').collect();
    if fields.len() != 7 {
        return Err(err(format!("expected 7 fields, found {}", fields.len())));
    }
    let id = fields[0].parse().map_err(|e| err(format!("id: {e}")))?;
    let params = match fields[1] {
        "fixed" => TaskParams::Fixed,
        kind @ ("sinusoid" | "pendulum") => {
            let p = parse_floats(fields[2], line)?;
            if p.len() != 2 {
                return Err(err("expected two generating parameters".into()));
            }
            if kind == "sinusoid" {
                TaskParams::Sinusoid { amplitude: p[0], phase: p[1] }
            } else {
                TaskParams::Pendulum { mass: p[0], length: p[1] }
            }
        }
        other => return Err(err(format!("unknown task kind {other:?}"))),
    };
    let x_dim = fields[3].parse().map_err(|e| err(format!("x_dim: {e}")))?;
    let y_dim = fields[4].parse().map_err(|e| err(format!("y_dim: {e}")))?;
    let task = TaskInstance {
        id,
        params,
        support: parse_samples(fields[5], x_dim, y_dim, line)?,
        query: parse_samples(fields[6], x_dim, y_dim, line)?,
    };
    task.validate().map_err(|e| err(e.to_string()))?;
    Ok(task)
}

pub fn parse_tasks<R: BufRead>(r: R) -> Result<Vec<TaskInstance>, TaskError> {
    let mut out = Vec::new();
    for (i, l) in r.lines().enumerate() {
        let l = l.map_err(|e| TaskError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(read_task_line(&l, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{quadratic_toy_tasks, sample_pendulum, sample_sinusoid, PendulumConfig, SinusoidConfig, SinusoidMode};
    use proptest::prelude::*;

    #[test]
    fn all_kinds_round_trip() {
        let mut tasks = sample_sinusoid(&SinusoidConfig::default(), 1, 3, SinusoidMode::TrainMixture);
        tasks.extend(sample_pendulum(&PendulumConfig::default(), 1, 2));
        tasks.extend(quadratic_toy_tasks());
        let mut buf = Vec::new();
        write_tasks(&mut buf, &tasks).unwrap();
        assert_eq!(parse_tasks(&buf[..]).unwrap(), tasks);
    }

    #[test]
    fn malformed_lines_report_position() {
        let e = read_task_line("1\tsinusoid\t1,2\t1\t1\t0|", 4).unwrap_err();
        assert!(matches!(e, TaskError::Parse { line: 4, .. }));
        let e = read_task_line("1\tcircle\t1,2\t1\t1\t0|0\t0|0", 2).unwrap_err();
        assert!(e.to_string().contains("circle"));
    }

    proptest! {
        #[test]
        fn sinusoid_records_round_trip(seed in any::<u64>(), id in 0u64..10_000) {
            let t = crate::tasks::sinusoid_task(&SinusoidConfig::default(), seed, id, SinusoidMode::TestUniform);
            let back = read_task_line(&write_task_line(&t), 1).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
