//! Plot-ready run artifacts: four wide CSV tables and a JSON summary.
//!
//! Numbers are written with 17 significant digits in `{:e}` notation, which
//! is locale-independent and round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::controller::Trajectory;
use crate::network::ImpedanceState;
use crate::scenario::{ScenarioRun, ScenarioSummary};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const BRANCH_MISMATCH_CSV: &str = "branch_mismatch.csv";
pub const IMPEDANCE_CSV: &str = "impedance.csv";
pub const PERFORMANCE_INDEX_CSV: &str = "performance_index.csv";
pub const SUMMARY_JSON: &str = "summary.json";

pub const BUNDLE_FILES: [&str; 5] = [
    TRAJECTORY_CSV,
    BRANCH_MISMATCH_CSV,
    IMPEDANCE_CSV,
    PERFORMANCE_INDEX_CSV,
    SUMMARY_JSON,
];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(first: &[&str], prefix: &[&str], n: usize) -> String {
    let mut cols: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    for p in prefix {
        cols.extend((1..=n).map(|i| format!("{p}_{i}")));
    }
    cols.join(",") + "\n"
}

/// Steps kept when recording every `d`-th step; the final step is always kept.
fn sampled_steps(traj: &Trajectory, downsample: usize) -> impl Iterator<Item = usize> + '_ {
    let d = downsample.max(1);
    let last = traj.steps.len() - 1;
    (0..=last).filter(move |&s| s % d == 0 || s == last)
}

/// `step,H,re_1..re_n,im_1..im_n` — the objective and the impedance vector.
pub fn trajectory_csv(traj: &Trajectory, downsample: usize) -> String {
    let n = traj.steps[0].impedance.len() / 2;
    let mut out = header(&["step", "H"], &["re", "im"], n);
    for s in sampled_steps(traj, downsample) {
        let r = &traj.steps[s];
        write!(out, "{},{}", r.step, fmt_f64(r.h)).unwrap();
        for v in &r.impedance {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `step,m_1..m_n` — magnitude of `P_e − σ` per branch.
pub fn branch_mismatch_csv(traj: &Trajectory, downsample: usize) -> String {
    let n = traj.steps[0].mismatch.len();
    let mut out = header(&["step"], &["m"], n);
    for s in sampled_steps(traj, downsample) {
        let r = &traj.steps[s];
        write!(out, "{}", r.step).unwrap();
        for m in &r.mismatch {
            write!(out, ",{}", fmt_f64(m.norm())).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One row per branch: impedance before and after control, bounds, frozen flag.
pub fn impedance_csv(initial: &ImpedanceState, traj: &Trajectory) -> String {
    let n = initial.branch_count();
    let last = &traj.steps.last().expect("trajectory has step 0").impedance;
    let mut out = String::from(
        "branch,r_initial,x_initial,r_final,x_final,r_lower,r_upper,x_lower,x_upper,frozen\n",
    );
    for i in 0..n {
        let cols = [
            initial.values()[i],
            initial.values()[n + i],
            last[i],
            last[n + i],
            initial.lower()[i],
            initial.upper()[i],
            initial.lower()[n + i],
            initial.upper()[n + i],
        ];
        write!(out, "{}", i + 1).unwrap();
        for v in cols {
            write!(out, ",{}", fmt_f64(v)).unwrap();
        }
        writeln!(out, ",{}", u8::from(initial.frozen().contains(&i))).unwrap();
    }
    out
}

/// `k,s_raw,s_clamped,jacobian_refreshed` for k = 1..K.
pub fn performance_index_csv(traj: &Trajectory) -> String {
    let mut out = String::from("k,s_raw,s_clamped,jacobian_refreshed\n");
    for w in &traj.windows {
        writeln!(
            out,
            "{},{},{},{}",
            w.k,
            fmt_f64(w.s_raw),
            fmt_f64(w.s_clamped),
            u8::from(w.jacobian_refreshed)
        )
        .unwrap();
    }
    out
}

pub fn summary_json(summary: &ScenarioSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes") + "\n"
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct BundleError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Write the bundle into `dir`, creating it if needed. Returns the paths written.
pub fn write_bundle(dir: &Path, run: &ScenarioRun, downsample: usize) -> Result<Vec<PathBuf>, BundleError> {
    fs::create_dir_all(dir).map_err(|source| BundleError {
        path: dir.to_path_buf(),
        source,
    })?;
    let traj = &run.trajectory;
    let files = [
        (TRAJECTORY_CSV, trajectory_csv(traj, downsample)),
        (BRANCH_MISMATCH_CSV, branch_mismatch_csv(traj, downsample)),
        (IMPEDANCE_CSV, impedance_csv(&run.initial_state, traj)),
        (PERFORMANCE_INDEX_CSV, performance_index_csv(traj)),
        (SUMMARY_JSON, summary_json(&run.summary)),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| BundleError {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{StepRecord, WindowRecord};
    use num_complex::Complex64;

    fn toy() -> Trajectory {
        Trajectory {
            window_t: 2,
            steps: (0..5)
                .map(|s| StepRecord {
                    step: s,
                    h: 1.0 / (s as f64 + 1.0),
                    mismatch: vec![Complex64::new(0.3, 0.4)],
                    impedance: vec![0.01, 0.1 + s as f64],
                })
                .collect(),
            windows: vec![
                WindowRecord { k: 1, s_raw: 0.5, s_clamped: 0.5, jacobian_refreshed: false },
                WindowRecord { k: 2, s_raw: 0.25, s_clamped: 0.25, jacobian_refreshed: true },
            ],
            s0: 1.0,
            refresh_count: 2,
            refresh_steps: vec![0, 4],
        }
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.22), "2.2000000000000000e-1");
    }

    #[test]
    fn trajectory_rows_and_header() {
        let csv = trajectory_csv(&toy(), 1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,H,re_1,im_1");
        assert_eq!(lines.len(), 6);
        assert!(lines[3].starts_with("2,3.3333333333333331e-1,"));
    }

    #[test]
    fn downsampling_keeps_last_step() {
        let csv = trajectory_csv(&toy(), 3);
        let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(steps, ["0", "3", "4"]);
    }

    #[test]
    fn mismatch_is_magnitude() {
        let csv = branch_mismatch_csv(&toy(), 1);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,5.0000000000000000e-1");
    }

    #[test]
    fn performance_rows_start_at_one() {
        let csv = performance_index_csv(&toy());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,") && lines[2].ends_with(",1"));
    }
}
