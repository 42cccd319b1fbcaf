use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    /// Number of completed epochs when the evaluation ran.
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

/// Loss curve, evaluations and checkpoints of one run.
///
/// Text form, one tab-separated record per line:
/// `seed <u64>`, `config <hex>`, `epoch <i> <lr> <loss>`,
/// `eval <epoch> <metric> <value>`, `checkpoint <relative path>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: u64,
    pub epochs: Vec<EpochLog>,
    pub evals: Vec<EvalPoint>,
    pub checkpoints: Vec<String>,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed\t{}\nconfig\t{:016x}\n", self.seed, self.config_hash);
        for e in &self.epochs {
            writeln!(out, "epoch\t{}\t{:e}\t{:e}", e.epoch, e.lr, e.loss).unwrap();
        }
        for e in &self.evals {
            writeln!(out, "eval\t{}\t{}\t{:e}", e.epoch, e.metric, e.value).unwrap();
        }
        for c in &self.checkpoints {
            writeln!(out, "checkpoint\t{c}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut r = RunRecord::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: &str| TrainError::RecordParse {
                line: i + 1,
                detail: detail.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(&e.to_string()));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(&e.to_string()));
            match (f[0], f.len()) {
                ("seed", 2) => r.seed = f[1].parse().map_err(|e: std::num::ParseIntError| err(&e.to_string()))?,
                ("config", 2) => r.config_hash = u64::from_str_radix(f[1], 16).map_err(|e| err(&e.to_string()))?,
                ("epoch", 4) => r.epochs.push(EpochLog {
                    epoch: int(f[1])?,
                    lr: num(f[2])?,
                    loss: num(f[3])?,
                }),
                ("eval", 4) => r.evals.push(EvalPoint {
                    epoch: int(f[1])?,
                    metric: f[2].to_string(),
                    value: num(f[3])?,
                }),
                ("checkpoint", 2) => r.checkpoints.push(f[1].to_string()),
                _ => return Err(err("unknown record")),
            }
        }
        if r.epochs.windows(2).any(|w| w[1].epoch != w[0].epoch + 1) {
            return Err(TrainError::RecordParse {
                line: 0,
                detail: "epoch indices are not consecutive".into(),
            });
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_text()).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        RunRecord::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let r = RunRecord {
            seed: u64::MAX,
            config_hash: 0xdead_beef_0123_4567,
            epochs: vec![
                EpochLog { epoch: 0, lr: 1e-4, loss: 0.1 + 0.2 },
                EpochLog { epoch: 1, lr: 1e-5, loss: 1.0 / 3.0 },
            ],
            evals: vec![EvalPoint { epoch: 2, metric: "top1".into(), value: 0.625 }],
            checkpoints: vec!["final.ckpt".into()],
        };
        assert_eq!(RunRecord::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn rejects_gaps_and_junk() {
        assert!(RunRecord::parse("epoch\t0\t1e-4\t1\nepoch\t2\t1e-4\t1\n").is_err());
        assert!(RunRecord::parse("bogus\t1\n").is_err());
    }
}
