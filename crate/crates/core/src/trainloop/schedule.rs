use std::fmt;
use std::str::FromStr;

use super::TrainError;

/// A block of epochs at one constant learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStage {
    pub epochs: usize,
    pub lr: f64,
}

/// Stages applied in order. Written as `epochs@lr` items joined by commas,
/// e.g. `41@1e-4,14@1e-5`; the empty string is the zero-epoch schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub stages: Vec<TrainStage>,
}

impl Schedule {
    pub fn new(stages: Vec<TrainStage>) -> Result<Self, TrainError> {
        for s in &stages {
            if s.epochs == 0 || !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(TrainError::Schedule(format!(
                    "stage {}@{} needs epochs > 0 and a finite lr > 0",
                    s.epochs, s.lr
                )));
            }
        }
        Ok(Schedule { stages })
    }

    pub fn constant(epochs: usize, lr: f64) -> Result<Self, TrainError> {
        if epochs == 0 {
            return Ok(Schedule::default());
        }
        Schedule::new(vec![TrainStage { epochs, lr }])
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// `(stage index, lr)` for a zero-based epoch.
    pub fn stage_at(&self, epoch: usize) -> Option<(usize, f64)> {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.epochs;
            if epoch < end {
                return Some((i, s.lr));
            }
        }
        None
    }

    /// Epoch counts after which each stage ends.
    pub fn boundaries(&self) -> Vec<usize> {
        self.stages
            .iter()
            .scan(0, |acc, s| {
                *acc += s.epochs;
                Some(*acc)
            })
            .collect()
    }
}

impl FromStr for Schedule {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Schedule::default());
        }
        let stages = s
            .split(',')
            .map(|item| {
                let (e, lr) = item
                    .trim()
                    .split_once('@')
                    .ok_or_else(|| TrainError::Schedule(format!("{item:?} is not epochs@lr")))?;
                Ok(TrainStage {
                    epochs: e
                        .trim()
                        .parse()
                        .map_err(|err| TrainError::Schedule(format!("{item:?}: {err}")))?,
                    lr: lr
                        .trim()
                        .parse()
                        .map_err(|err| TrainError::Schedule(format!("{item:?}: {err}")))?,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Schedule::new(stages)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.stages.iter().map(|s| format!("{}@{:e}", s.epochs, s.lr)).collect();
        f.write_str(&items.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretraining_schedules_round_trip() {
        for (text, stages) in [
            ("151@1e-4,11@1e-5", [(151, 1e-4), (11, 1e-5)]),
            ("41@1e-4,14@1e-5", [(41, 1e-4), (14, 1e-5)]),
            ("85@0.0001,11@0.00001", [(85, 1e-4), (11, 1e-5)]),
        ] {
            let s: Schedule = text.parse().unwrap();
            let want: Vec<TrainStage> = stages.iter().map(|&(epochs, lr)| TrainStage { epochs, lr }).collect();
            assert_eq!(s.stages, want);
            assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
        }
    }

    #[test]
    fn stage_lookup() {
        let s: Schedule = "2@1e-3,1@1e-4".parse().unwrap();
        assert_eq!(s.total_epochs(), 3);
        assert_eq!(s.stage_at(1), Some((0, 1e-3)));
        assert_eq!(s.stage_at(2), Some((1, 1e-4)));
        assert_eq!(s.stage_at(3), None);
        assert_eq!(s.boundaries(), vec![2, 3]);
    }

    #[test]
    fn rejects_bad_stages() {
        for bad in ["0@1e-4", "3@0", "3@-1", "3", "x@1", "3@nan"] {
            assert!(bad.parse::<Schedule>().is_err(), "{bad}");
        }
        assert_eq!("".parse::<Schedule>().unwrap().total_epochs(), 0);
    }
}
