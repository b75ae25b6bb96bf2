use std::collections::BTreeMap;
use std::io::{Read, Write};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const COLUMNS: [&str; 9] = [
    "algorithm",
    "graph",
    "L",
    "workers",
    "transport",
    "trial",
    "wall_time_s",
    "verified",
    "extra",
];

/// One timed run. `verified` is empty unless verification was requested;
/// `extra` holds `key=value` pairs separated by `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub graph: String,
    #[serde(rename = "L")]
    pub localities: usize,
    pub workers: usize,
    pub transport: String,
    pub trial: usize,
    pub wall_time_s: f64,
    pub verified: Option<bool>,
    pub extra: String,
}

pub fn write_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses bench output, naming the offending column on any schema problem.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().context("reading CSV header")?.clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            bail!("missing column {col:?}");
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RunRecord>().enumerate() {
        let line = i + 2;
        out.push(row.map_err(|e| {
            let col = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.field().map(|f| headers.get(f as usize).unwrap_or("?")),
                _ => None,
            };
            match col {
                Some(col) => anyhow!("line {line}: column {col:?}: {e}"),
                None => anyhow!("line {line}: {e}"),
            }
        })?);
    }
    Ok(out)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median wall time per locality count for one (algorithm, graph) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub algorithm: String,
    pub graph: String,
    /// `(L, median wall time)`, ascending in `L`.
    pub medians: Vec<(usize, f64)>,
}

impl Series {
    /// `time(L=1) / time(L)` per point. Falls back to the smallest `L` as
    /// the baseline when the sweep has no single-locality run.
    pub fn speedups(&self) -> Vec<(usize, f64)> {
        let Some(&(_, base)) = self.medians.first() else {
            return Vec::new();
        };
        self.medians.iter().map(|&(l, t)| (l, base / t)).collect()
    }

    pub fn baseline(&self) -> Option<usize> {
        self.medians.first().map(|&(l, _)| l)
    }
}

pub fn series(records: &[RunRecord]) -> Vec<Series> {
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm.clone(), r.graph.clone()))
            .or_default()
            .entry(r.localities)
            .or_default()
            .push(r.wall_time_s);
    }
    groups
        .into_iter()
        .map(|((algorithm, graph), by_l)| Series {
            algorithm,
            graph,
            medians: by_l.into_iter().map(|(l, ts)| (l, median(ts))).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(alg: &str, l: usize, trial: usize, t: f64, verified: Option<bool>) -> RunRecord {
        RunRecord {
            algorithm: alg.into(),
            graph: "urand:10,16,1".into(),
            localities: l,
            workers: 2,
            transport: "inproc".into(),
            trial,
            wall_time_s: t,
            verified,
            extra: "root=3;levels=5".into(),
        }
    }

    #[test]
    fn header_is_the_documented_column_list() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[rec("bfs", 1, 0, 0.5, None)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        let mut empty = Vec::new();
        write_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), COLUMNS.join(","));
    }

    #[test]
    fn csv_round_trips() {
        let rs = vec![
            rec("bfs", 1, 0, 0.25, Some(true)),
            rec("bfs", 2, 1, 0.125, None),
            rec("pagerank", 4, 2, 1e-3, Some(false)),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rs).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), rs);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "algorithm,graph,L,workers,transport,trial,verified,extra\nbfs,g,1,1,inproc,0,,\n";
        let e = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("wall_time_s"), "{e}");
    }

    #[test]
    fn bad_value_names_its_column() {
        let text = format!("{}\nbfs,g,one,1,inproc,0,0.5,,\n", COLUMNS.join(","));
        let e = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("\"L\""), "{e}");
    }

    #[test]
    fn speedup_is_baseline_over_time() {
        let rs = vec![
            rec("bfs", 1, 0, 4.0, None),
            rec("bfs", 1, 1, 6.0, None),
            rec("bfs", 1, 2, 5.0, None),
            rec("bfs", 4, 0, 2.5, None),
            rec("pagerank", 2, 0, 1.0, None),
        ];
        let s = series(&rs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].speedups(), [(1, 1.0), (4, 2.0)]);
        assert_eq!(s[1].speedups(), [(2, 1.0)]);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
