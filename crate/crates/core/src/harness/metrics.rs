use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.jsonl`, written after every PPO update.
///
/// Fields are stable; optional values are `null` when undefined (no finished episodes,
/// empty return window). Nothing time-dependent lives here so reruns are byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update_index: u64,
    /// Environment steps consumed so far, including this update's rollout.
    pub env_steps: u64,
    /// Episodes finished during this update's rollout.
    pub episodes: u64,
    pub episodes_terminated: u64,
    pub mean_return: Option<f64>,
    pub max_return: Option<f64>,
    /// Mean entropy of the acting policy over the rollout.
    pub mean_entropy: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy_term: f64,
    pub bc_loss: f64,
    pub total_loss: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub bc_applied: bool,
    pub buffer_transitions: u64,
    pub buffer_episodes: u64,
    pub admitted: u64,
    /// Admission threshold at the last episode recorded (`null` while the window is empty).
    pub threshold: Option<f64>,
    pub shaping_matches: u64,
    pub mean_abs_shaping: f64,
}

/// Appends JSON lines, flushing after each so partial runs stay readable.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates (truncating) the file.
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    /// Opens for appending, e.g. when resuming.
    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, v)| {
            serde_json::from_value(serde_json::Value::Object(v)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, serde_json::Map<String, serde_json::Value>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(serde_json::Value::Object(m)) => out.push((i + 1, m)),
            Ok(_) => return Err(parse_err("expected a JSON object".into())),
            Err(e) => return Err(parse_err(e.to_string())),
        }
    }
    Ok(out)
}

/// Writes one CSV per metric (`<metric>.csv`, columns `env_steps,<metric>`) into `out_dir`.
/// Every record becomes one row; `null` becomes an empty cell. Returns the files written.
pub fn export_plot_data(metrics_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_lines(metrics_path)?;
    let template = serde_json::to_value(MetricsRecord::default()).expect("record serializes");
    let mut columns: Vec<String> = template
        .as_object()
        .expect("record is an object")
        .keys()
        .filter(|k| *k != "env_steps")
        .cloned()
        .collect();
    for (n, r) in &rows {
        if !r.get("env_steps").is_some_and(|v| v.is_number()) {
            return Err(Error::Parse {
                path: metrics_path.to_path_buf(),
                line: *n,
                detail: "missing numeric `env_steps`".into(),
            });
        }
        for k in r.keys() {
            if k != "env_steps" && !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for col in &columns {
        let path = out_dir.join(format!("{col}.csv"));
        let mut s = format!("env_steps,{col}\n");
        for (_, r) in &rows {
            let cell = match r.get(col) {
                None | Some(serde_json::Value::Null) => String::new(),
                Some(serde_json::Value::String(t)) => t.clone(),
                Some(v) => v.to_string(),
            };
            s.push_str(&format!("{},{cell}\n", r["env_steps"]));
        }
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> MetricsRecord {
        MetricsRecord {
            update_index: i,
            env_steps: 100 * (i + 1),
            episodes: 2,
            episodes_terminated: 1,
            mean_return: if i == 1 { None } else { Some(0.1 + i as f64) },
            max_return: Some(1.0 / 3.0),
            mean_entropy: 0.6931471805599453,
            surrogate_loss: -1e-17,
            value_loss: 0.5,
            entropy_term: -0.006,
            bc_loss: 0.0,
            total_loss: 0.1,
            clip_fraction: 0.25,
            grad_norm: 0.4,
            learning_rate: 2.5e-4,
            bc_applied: false,
            buffer_transitions: 0,
            buffer_episodes: 0,
            admitted: 0,
            threshold: None,
            shaping_matches: 0,
            mean_abs_shaping: 0.0,
        }
    }

    #[test]
    fn write_read_round_trip_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        let recs: Vec<_> = (0..3).map(record).collect();
        for r in &recs {
            w.write(r).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), recs);

        let files = export_plot_data(&path, &dir.path().join("plots")).unwrap();
        assert_eq!(files.len(), 21);
        for f in &files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 4, "{}", f.display());
        }
        let ret = std::fs::read_to_string(dir.path().join("plots/mean_return.csv")).unwrap();
        assert_eq!(ret, "env_steps,mean_return\n100,0.1\n200,\n300,2.1\n");
        let ent = std::fs::read_to_string(dir.path().join("plots/mean_entropy.csv")).unwrap();
        let v: f64 = ent.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, recs[0].mean_entropy);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&record(0)).unwrap();
        std::fs::write(&path, format!("{good}\n{good}\n{{\"env_steps\": 3,\n")).unwrap();
        match export_plot_data(&path, dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        assert!(matches!(read_metrics(&path).unwrap_err(), Error::Parse { line: 3, .. }));
    }

    #[test]
    fn empty_metrics_give_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        let files = export_plot_data(&path, &dir.path().join("plots")).unwrap();
        assert_eq!(files.len(), 21);
        let t = std::fs::read_to_string(dir.path().join("plots/clip_fraction.csv")).unwrap();
        assert_eq!(t, "env_steps,clip_fraction\n");
    }
}
