//! The `<output-dir>/<run-name>/` layout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ksrs::experiments::{ExperimentResult, VERSION};
use ksrs::Trajectory;
use serde::Serialize;
use serde_json::Value;

use crate::args::Common;

pub struct RunDir {
    path: PathBuf,
    comments: std::cell::RefCell<Vec<String>>,
}

impl RunDir {
    pub fn new(common: &Common, subcommand: &str) -> Self {
        let run = common.run_name.clone().unwrap_or_else(|| subcommand.to_string());
        Self {
            path: common.output_dir.join(run),
            comments: Default::default(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn create(&self) -> ksrs::Result<()> {
        fs::create_dir_all(&self.path)?;
        Ok(())
    }

    /// Creates the directory and records the effective configuration.
    pub fn prepare(&self, subcommand: &str, cfg: &impl Serialize) -> ksrs::Result<()> {
        self.create()?;
        self.write_config(subcommand, cfg)
    }

    pub fn write_config(&self, subcommand: &str, cfg: &impl Serialize) -> ksrs::Result<()> {
        let mut v = serde_json::to_value(cfg)?;
        if let Value::Object(map) = &mut v {
            map.insert("subcommand".into(), Value::String(subcommand.into()));
        }
        *self.comments.borrow_mut() = vec![
            format!("ksrs {VERSION}"),
            format!("config: {}", serde_json::to_string(&v)?),
        ];
        self.write_json("config.json", &v)
    }

    pub fn write_json(&self, file: &str, v: &impl Serialize) -> ksrs::Result<()> {
        let mut w = BufWriter::new(File::create(self.path.join(file))?);
        serde_json::to_writer_pretty(&mut w, v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn comment_lines(&self, w: &mut impl Write) -> std::io::Result<()> {
        for c in self.comments.borrow().iter() {
            writeln!(w, "# {c}")?;
        }
        Ok(())
    }

    pub fn write_trajectory(&self, file: &str, traj: &Trajectory) -> ksrs::Result<()> {
        let mut w = BufWriter::new(File::create(self.path.join(file))?);
        self.comment_lines(&mut w)?;
        traj.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// `result.json`, every table, and `timing.json`.
    pub fn write_result(&self, res: &ExperimentResult) -> ksrs::Result<()> {
        for (file, table) in &res.tables {
            let w = BufWriter::new(File::create(self.path.join(file))?);
            table.write_csv(w, &self.comments.borrow())?;
        }
        let mut w = BufWriter::new(File::create(self.path.join("result.json"))?);
        w.write_all(res.to_json().as_bytes())?;
        writeln!(w)?;
        w.flush()?;
        self.write_json("timing.json", &serde_json::json!({ "runtime_secs": res.runtime_secs }))
    }
}

/// Estimates shown on the summary line, by exact key or `key[...]` family.
fn headline(name: &str) -> &'static [&'static str] {
    match name {
        "psi" => &["max_rel_err"],
        "simulate" => &["events", "t_end", "final_norm", "max_norm"],
        "mm1" => &["mean", "mean_exact"],
        "ld" => &["fitted_rate", "cramer_rate"],
        "drain" => &["p_hat", "mean_T4"],
        "holds" => &["max_z", "slope"],
        "cascade" => &["p_E4", "p_E4E1", "p_full", "p_state_full"],
        "tail" => &["cycles", "moment", "max_half_run_z"],
        "drift" => &["growth_exponent", "max_rearrangement_z"],
        "fluid" => &["median_sup_dev"],
        _ => &[],
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e6).contains(&v.abs()) {
        let s = format!("{v:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.4e}")
    }
}

pub fn summary_line(res: &ExperimentResult, dir: &Path) -> String {
    let mut parts = vec![format!("{}:", res.name)];
    for h in headline(&res.name) {
        for (k, v) in &res.estimates {
            let family = k.strip_prefix(h).is_some_and(|rest| rest.starts_with('['));
            if k == h || family {
                match res.se(k).filter(|se| se.is_finite()) {
                    Some(se) => parts.push(format!("{k}={}±{}", fmt_num(*v), fmt_num(se))),
                    None => parts.push(format!("{k}={}", fmt_num(*v))),
                }
            }
        }
    }
    if !res.warnings.is_empty() {
        parts.push(format!("({} warnings)", res.warnings.len()));
    }
    parts.push(format!("-> {}", dir.display()));
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(12.0), "12");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(5e-7), "5.0000e-7");
    }
}
