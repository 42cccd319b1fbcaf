use super::EvalError;

/// The bundled table of published transfer results (top-5 accuracy, percent).
pub const BUNDLED_REGISTRY: &str = include_str!("../../data/supp_table1.tsv");

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryEntry {
    pub benchmark: String,
    pub condition: String,
    pub model: String,
    pub percent: f64,
}

/// Read-only `(benchmark, condition, model) → percent` table.
#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

impl Registry {
    /// Tab-separated `benchmark condition model percent`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut entries: Vec<RegistryEntry> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| EvalError::RegistryParse { line: i + 1, detail };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", f.len())));
            }
            let percent = f[3].parse().map_err(|e| err(format!("{e}")))?;
            if entries.iter().any(|e| (e.benchmark.as_str(), e.condition.as_str(), e.model.as_str()) == (f[0], f[1], f[2])) {
                return Err(err("duplicate key".into()));
            }
            entries.push(RegistryEntry {
                benchmark: f[0].into(),
                condition: f[1].into(),
                model: f[2].into(),
                percent,
            });
        }
        Ok(Registry { entries })
    }

    pub fn bundled() -> Self {
        Registry::parse(BUNDLED_REGISTRY).expect("bundled registry parses")
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn lookup(&self, benchmark: &str, condition: &str, model: &str) -> Result<f64, EvalError> {
        self.entries
            .iter()
            .find(|e| e.benchmark == benchmark && e.condition == condition && e.model == model)
            .map(|e| e.percent)
            .ok_or_else(|| EvalError::UnknownKey(benchmark.into(), condition.into(), model.into()))
    }
}

/// Lookup in the bundled table.
pub fn registry_lookup(benchmark: &str, condition: &str, model: &str) -> Result<f64, EvalError> {
    Registry::bundled().lookup(benchmark, condition, model)
}
