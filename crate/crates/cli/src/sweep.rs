//! Aggregation of sweep runs into a per-scheme comparison table.

use std::fmt::Write;

use minicar_core::config::{Policy, Preset};
use minicar_core::metrics::mean_std;
use minicar_core::record::Summary;
use serde::Serialize;

/// One finished run of one scheme.
pub struct SweepRun {
    pub scheme: usize,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRow {
    pub name: String,
    pub policy: Policy,
    pub preset: Preset,
    pub seeds: usize,
    /// Mean of the per-seed throughput means (cars/s).
    pub throughput: f64,
    /// Spread of the per-seed means.
    pub std_seeds: f64,
    /// Spread of all sliding windows pooled over seeds.
    pub std_windows: f64,
    pub max_queue: usize,
    pub waiting_vehicle_seconds: f64,
    pub lane_changes: f64,
    pub collisions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Improvement {
    pub preset: Preset,
    pub egocentric: f64,
    pub cooperative: f64,
    pub percent: f64,
}

/// Standard deviation of the union of samples given as per-group
/// `(mean, std, count)` with n - 1 denominators.
pub fn pooled_std(groups: &[(f64, f64, usize)]) -> f64 {
    let n: usize = groups.iter().map(|g| g.2).sum();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = groups.iter().map(|&(m, _, k)| m * k as f64).sum();
    let mean = total / n as f64;
    let ss: f64 = groups
        .iter()
        .map(|&(m, s, k)| if k == 0 { 0.0 } else { (k as f64 - 1.0) * s * s + k as f64 * (m - mean).powi(2) })
        .sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Rows in scheme order; schemes without finished runs are skipped.
pub fn aggregate(runs: &[SweepRun], schemes: usize) -> Vec<SchemeRow> {
    (0..schemes)
        .filter_map(|k| {
            let mine: Vec<&Summary> = runs.iter().filter(|r| r.scheme == k).map(|r| &r.summary).collect();
            let first = mine.first()?;
            let means: Vec<f64> = mine.iter().map(|s| s.throughput.mean).collect();
            let (throughput, std_seeds) = mean_std(&means);
            let windows: Vec<(f64, f64, usize)> =
                mine.iter().map(|s| (s.throughput.mean, s.throughput.std, s.throughput.windows)).collect();
            let n = mine.len() as f64;
            Some(SchemeRow {
                name: first.name.clone(),
                policy: first.config.vehicles.policy,
                preset: first.config.vehicles.preset,
                seeds: mine.len(),
                throughput,
                std_seeds,
                std_windows: pooled_std(&windows),
                max_queue: mine.iter().map(|s| s.queue.max_queue).max().unwrap_or(0),
                waiting_vehicle_seconds: mine.iter().map(|s| s.queue.waiting_vehicle_seconds).sum::<f64>() / n,
                lane_changes: mine.iter().map(|s| s.lane_changes.completed as f64).sum::<f64>() / n,
                collisions: mine.iter().map(|s| s.collisions.len()).sum(),
            })
        })
        .collect()
}

/// Cooperative over egocentric gain for every preset that has both.
pub fn improvements(rows: &[SchemeRow]) -> Vec<Improvement> {
    [Preset::Normal, Preset::Aggressive]
        .into_iter()
        .filter_map(|preset| {
            let find = |policy| rows.iter().find(|r| r.policy == policy && r.preset == preset).map(|r| r.throughput);
            let (egocentric, cooperative) = (find(Policy::Egocentric)?, find(Policy::Cooperative)?);
            Some(Improvement { preset, egocentric, cooperative, percent: (cooperative / egocentric - 1.0) * 100.0 })
        })
        .collect()
}

fn policy_name(p: Policy) -> &'static str {
    match p {
        Policy::Egocentric => "egocentric",
        Policy::Cooperative => "cooperative",
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Normal => "normal",
        Preset::Aggressive => "aggressive",
    }
}

pub fn table(rows: &[SchemeRow], gains: &[Improvement]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<12} {:<11} {:>5}  {:<15} {:>9} {:>9} {:>6} {:>9} {:>6}",
        "scenario", "policy", "preset", "seeds", "throughput", "sd seeds", "sd window", "queue", "waiting", "coll"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:<12} {:<11} {:>5}  {:<15} {:>9.4} {:>9.4} {:>6} {:>9.1} {:>6}",
            r.name,
            policy_name(r.policy),
            preset_name(r.preset),
            r.seeds,
            format!("{:.3} ± {:.3}", r.throughput, r.std_windows),
            r.std_seeds,
            r.std_windows,
            r.max_queue,
            r.waiting_vehicle_seconds,
            r.collisions
        );
    }
    for g in gains {
        let _ = writeln!(
            out,
            "cooperative vs egocentric, {}: {:.3} -> {:.3} ({:+.1}%)",
            preset_name(g.preset),
            g.egocentric,
            g.cooperative,
            g.percent
        );
    }
    out
}

pub fn csv(rows: &[SchemeRow]) -> String {
    let mut out = String::from("name,policy,preset,seeds,throughput,std_seeds,std_windows,max_queue,waiting_vehicle_seconds,lane_changes,collisions\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            policy_name(r.policy),
            preset_name(r.preset),
            r.seeds,
            r.throughput,
            r.std_seeds,
            r.std_windows,
            r.max_queue,
            r.waiting_vehicle_seconds,
            r.lane_changes,
            r.collisions
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_std_matches_direct() {
        let a = [0.1, 0.3, 0.2, 0.25];
        let b = [0.5, 0.45, 0.6];
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (ma, sa) = mean_std(&a);
        let (mb, sb) = mean_std(&b);
        let direct = mean_std(&all).1;
        assert!((pooled_std(&[(ma, sa, a.len()), (mb, sb, b.len())]) - direct).abs() < 1e-12);
    }

    #[test]
    fn pooled_std_of_one_sample_is_zero() {
        assert_eq!(pooled_std(&[(0.3, 0.0, 1)]), 0.0);
        assert_eq!(pooled_std(&[]), 0.0);
    }

    fn row(policy: Policy, preset: Preset, throughput: f64) -> SchemeRow {
        SchemeRow {
            name: "x".into(),
            policy,
            preset,
            seeds: 1,
            throughput,
            std_seeds: 0.0,
            std_windows: 0.0,
            max_queue: 0,
            waiting_vehicle_seconds: 0.0,
            lane_changes: 0.0,
            collisions: 0,
        }
    }

    #[test]
    fn improvement_per_preset() {
        let rows = [
            row(Policy::Egocentric, Preset::Normal, 0.2),
            row(Policy::Cooperative, Preset::Normal, 0.27),
            row(Policy::Egocentric, Preset::Aggressive, 0.25),
        ];
        let g = improvements(&rows);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].preset, Preset::Normal);
        assert!((g[0].percent - 35.0).abs() < 1e-9);
    }
}
