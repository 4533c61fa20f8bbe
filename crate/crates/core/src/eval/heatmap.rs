use std::fmt::Write as _;

use crate::learner::Trajectory;

/// Number of health bins: 0% (dead) and then one per tenth of max health.
pub const HEALTH_BINS: usize = 11;

/// Bin of a health fraction: `ceil(10 * frac)`, so 0 only for dead units
/// and 10 for anything above 90%.
pub fn health_bin(frac: f64) -> usize {
    ((frac * 10.0).ceil().max(0.0) as usize).min(HEALTH_BINS - 1)
}

/// Per-time-step counts of health bins and chosen actions for one unit
/// type. Column `t` counts every tracked unit of every episode still running
/// at step `t`; dead units land in health bin 0 and action row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapAccumulator {
    pub unit_name: String,
    pub n_actions: usize,
    /// `[HEALTH_BINS][steps]`
    pub health_counts: Vec<Vec<u64>>,
    /// `[n_actions][steps]`
    pub action_counts: Vec<Vec<u64>>,
    /// Units of this type per episode.
    pub units_per_episode: usize,
    pub episodes: usize,
}

impl HeatmapAccumulator {
    pub fn new(unit_name: &str, n_actions: usize) -> Self {
        Self {
            unit_name: unit_name.to_string(),
            n_actions,
            health_counts: vec![Vec::new(); HEALTH_BINS],
            action_counts: vec![Vec::new(); n_actions],
            units_per_episode: 0,
            episodes: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.health_counts[0].len()
    }

    fn grow(&mut self, steps: usize) {
        if steps > self.steps() {
            for row in self.health_counts.iter_mut().chain(self.action_counts.iter_mut()) {
                row.resize(steps, 0);
            }
        }
    }

    pub fn add(&mut self, trajectory: &Trajectory) {
        let units: Vec<usize> =
            trajectory.unit_names.iter().enumerate().filter(|(_, n)| **n == self.unit_name).map(|(i, _)| i).collect();
        self.units_per_episode = self.units_per_episode.max(units.len());
        self.episodes += 1;
        self.grow(trajectory.len());
        for t in 0..trajectory.len() {
            for &u in &units {
                self.health_counts[health_bin(trajectory.health[t][u])][t] += 1;
                let a = trajectory.actions[t][u];
                if a < self.n_actions {
                    self.action_counts[a][t] += 1;
                }
            }
        }
    }

    pub fn column_health_total(&self, t: usize) -> u64 {
        self.health_counts.iter().map(|r| r[t]).sum()
    }

    pub fn column_action_total(&self, t: usize) -> u64 {
        self.action_counts.iter().map(|r| r[t]).sum()
    }

    /// Mean health bin of the units counted at each step.
    pub fn mean_health_bin(&self) -> Vec<f64> {
        (0..self.steps())
            .map(|t| {
                let total = self.column_health_total(t);
                let weighted: u64 = self.health_counts.iter().enumerate().map(|(b, r)| b as u64 * r[t]).sum();
                if total == 0 {
                    0.0
                } else {
                    weighted as f64 / total as f64
                }
            })
            .collect()
    }

    pub fn health_csv(&self) -> String {
        let labels: Vec<String> = (0..HEALTH_BINS).map(|b| format!("health_{}pct", b * 10)).collect();
        to_csv(&labels, &self.health_counts, self.steps())
    }

    pub fn action_csv(&self) -> String {
        let labels: Vec<String> = (0..self.n_actions).map(|a| format!("action_{a}")).collect();
        to_csv(&labels, &self.action_counts, self.steps())
    }
}

fn to_csv(labels: &[String], rows: &[Vec<u64>], steps: usize) -> String {
    let mut out = String::from("row");
    for t in 0..steps {
        let _ = write!(out, ",t{t}");
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(rows) {
        out.push_str(label);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Accumulates every trajectory for units named `unit_name`.
pub fn accumulate_heatmaps(trajectories: &[Trajectory], unit_name: &str, n_actions: usize) -> HeatmapAccumulator {
    let mut acc = HeatmapAccumulator::new(unit_name, n_actions);
    for t in trajectories {
        acc.add(t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(health: Vec<f64>, actions: Vec<usize>) -> Trajectory {
        Trajectory {
            unit_names: vec!["marine".into()],
            health: health.into_iter().map(|h| vec![h]).collect(),
            actions: actions.into_iter().map(|a| vec![a]).collect(),
            won: false,
        }
    }

    #[test]
    fn bins() {
        assert_eq!(health_bin(0.0), 0);
        assert_eq!(health_bin(0.01), 1);
        assert_eq!(health_bin(0.1), 1);
        assert_eq!(health_bin(0.55), 6);
        assert_eq!(health_bin(1.0), 10);
    }

    #[test]
    fn full_health_stopping_unit() {
        let acc = accumulate_heatmaps(&[single(vec![1.0; 6], vec![1; 5])], "marine", 7);
        assert_eq!(acc.steps(), 5);
        assert!(acc.health_counts[10].iter().all(|&c| c == 1));
        assert!(acc.action_counts[1].iter().all(|&c| c == 1));
        assert_eq!(acc.health_counts.iter().flatten().sum::<u64>(), 5);
    }

    #[test]
    fn death_turns_on_action_zero() {
        // hit at step 1, dies during step 2
        let t = single(vec![1.0, 1.0, 0.4, 0.0, 0.0, 0.0], vec![6, 6, 6, 0, 0]);
        let acc = accumulate_heatmaps(&[t], "marine", 7);
        assert_eq!(acc.action_counts[0], vec![0, 0, 0, 1, 1]);
        assert_eq!(acc.health_counts[0], vec![0, 0, 0, 1, 1]);
        assert_eq!(acc.health_counts[4], vec![0, 0, 1, 0, 0]);
    }

    #[test]
    fn columns_conserve_units() {
        let ts: Vec<Trajectory> = (0..50).map(|i| single(vec![1.0; 4 + i % 3], vec![2; 3 + i % 3])).collect();
        let acc = accumulate_heatmaps(&ts, "marine", 7);
        for t in 0..acc.steps() {
            assert_eq!(acc.column_health_total(t), acc.column_action_total(t));
            assert!(acc.column_health_total(t) <= (50 * acc.units_per_episode) as u64);
        }
        assert_eq!(acc.column_health_total(0), 50);
    }

    #[test]
    fn other_unit_types_are_ignored() {
        let acc = accumulate_heatmaps(&[single(vec![1.0; 3], vec![1; 2])], "medivac", 7);
        assert_eq!(acc.units_per_episode, 0);
        assert!(acc.health_counts.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn csv_layout() {
        let acc = accumulate_heatmaps(&[single(vec![1.0; 3], vec![1; 2])], "marine", 3);
        let csv = acc.action_csv();
        assert_eq!(csv, "row,t0,t1\naction_0,0,0\naction_1,1,1\naction_2,0,0\n");
        assert_eq!(acc.health_csv().lines().count(), 12);
    }
}
