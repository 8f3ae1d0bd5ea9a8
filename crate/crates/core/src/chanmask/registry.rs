//! Per-dataset store of learned domain parameters, and the strategies for
//! choosing parameters for a dataset that was never trained on.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DomainParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Forecast,
    Classification,
    Imputation,
    AnomalyDetection,
}

impl FromStr for TaskTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" | "forecasting" => Ok(TaskTag::Forecast),
            "classification" => Ok(TaskTag::Classification),
            "imputation" => Ok(TaskTag::Imputation),
            "anomaly_detection" | "anomaly" => Ok(TaskTag::AnomalyDetection),
            other => Err(Error::contract(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub dataset: String,
    pub task: TaskTag,
    /// CD ratio of the dataset's centered similarity matrix.
    pub r_rbar: f64,
    pub params: DomainParams,
}

/// File layout: a JSON list of entries sorted by dataset name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamsRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl ParamsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, dataset: &str) -> Option<&RegistryEntry> {
        self.entries.get(dataset)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    /// Stores a snapshot, replacing (and returning) any previous entry for
    /// the same dataset.
    pub fn register(
        &mut self,
        dataset: &str,
        params: DomainParams,
        r_rbar: f64,
        task: TaskTag,
    ) -> Result<Option<RegistryEntry>> {
        if dataset.is_empty() {
            return Err(Error::contract("registry dataset name must be non-empty"));
        }
        let entry = RegistryEntry {
            dataset: dataset.to_string(),
            task,
            r_rbar,
            params,
        };
        let previous = self.entries.insert(dataset.to_string(), entry);
        if previous.is_some() {
            log::info!("registry: replaced domain parameters for `{dataset}`");
        }
        Ok(previous)
    }

    pub fn load(path: &Path) -> Result<ParamsRegistry> {
        let text = fs::read_to_string(path)?;
        let list: Vec<RegistryEntry> = serde_json::from_str(&text)?;
        let mut reg = ParamsRegistry::new();
        for e in list {
            if reg.entries.contains_key(&e.dataset) {
                return Err(Error::format(
                    "registry",
                    format!("duplicate dataset `{}`", e.dataset),
                ));
            }
            reg.entries.insert(e.dataset.clone(), e);
        }
        Ok(reg)
    }

    pub fn load_or_default(path: &Path) -> Result<ParamsRegistry> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let list: Vec<&RegistryEntry> = self.entries.values().collect();
        let mut text = serde_json::to_string_pretty(&list)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Mean of `(α, β)` over every entry.
    AvgAll,
    /// Mean over forecasting entries.
    AvgForecast,
    /// The entry whose `r(R̄)` is nearest the target.
    ClosestRbar,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::AvgAll => "avg_all",
            Strategy::AvgForecast => "avg_forecast",
            Strategy::ClosestRbar => "closest_rbar",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg_all" | "avg-all" => Ok(Strategy::AvgAll),
            "avg_forecast" | "avg-forecast" => Ok(Strategy::AvgForecast),
            "closest_rbar" | "closest-rbar" | "closest" => Ok(Strategy::ClosestRbar),
            other => Err(Error::contract(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Scalar domain parameters for a dataset without trained parameters.
///
/// Only scalar entries are eligible. Ties under `closest_rbar` go to the
/// lexicographically smallest dataset name.
pub fn select_unseen_params(
    registry: &ParamsRegistry,
    strategy: Strategy,
    target_rbar: f64,
) -> Result<DomainParams> {
    let eligible: Vec<(&RegistryEntry, f64, f64)> = registry
        .entries()
        .filter(|e| strategy != Strategy::AvgForecast || e.task == TaskTag::Forecast)
        .filter_map(|e| e.params.as_scalar().map(|(a, b)| (e, a, b)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::contract(format!(
            "strategy `{strategy}` has no eligible scalar registry entries"
        )));
    }
    match strategy {
        Strategy::AvgAll | Strategy::AvgForecast => {
            let n = eligible.len() as f64;
            let alpha = eligible.iter().map(|(_, a, _)| a).sum::<f64>() / n;
            let beta = eligible.iter().map(|(_, _, b)| b).sum::<f64>() / n;
            Ok(DomainParams::scalar(alpha, beta))
        }
        Strategy::ClosestRbar => {
            if !target_rbar.is_finite() {
                return Err(Error::contract("closest_rbar needs a finite target r(R̄)"));
            }
            // Entries iterate in name order, so strict `<` keeps the smallest
            // name on ties.
            let mut best = &eligible[0];
            let mut best_gap = (best.0.r_rbar - target_rbar).abs();
            for cand in &eligible[1..] {
                let gap = (cand.0.r_rbar - target_rbar).abs();
                if gap < best_gap {
                    best = cand;
                    best_gap = gap;
                }
            }
            Ok(DomainParams::scalar(best.1, best.2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn two_entry_registry() -> ParamsRegistry {
        let mut reg = ParamsRegistry::new();
        reg.register("alpha_ds", DomainParams::scalar(1.0, 0.0), 0.3, TaskTag::Forecast)
            .unwrap();
        reg.register("beta_ds", DomainParams::scalar(3.0, 2.0), 0.6, TaskTag::Classification)
            .unwrap();
        reg
    }

    #[test]
    fn register_and_read_back() {
        let reg = two_entry_registry();
        let e = reg.get("beta_ds").unwrap();
        assert_eq!(e.params, DomainParams::scalar(3.0, 2.0));
        assert_eq!(e.r_rbar, 0.6);
    }

    #[test]
    fn overwrite_returns_previous() {
        let mut reg = two_entry_registry();
        let prev = reg
            .register("alpha_ds", DomainParams::scalar(5.0, 5.0), 0.1, TaskTag::Forecast)
            .unwrap();
        assert_eq!(prev.unwrap().params, DomainParams::scalar(1.0, 0.0));
        assert_eq!(reg.get("alpha_ds").unwrap().params, DomainParams::scalar(5.0, 5.0));
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn empty_name_rejected() {
        let mut reg = ParamsRegistry::new();
        assert!(reg.register("", DomainParams::scalar(1.0, 0.0), 0.0, TaskTag::Forecast).is_err());
    }

    #[test]
    fn persisted_values_are_bit_identical() {
        let mut reg = two_entry_registry();
        reg.register(
            "odd",
            DomainParams::scalar(0.1 + 0.2, -1.0 / 3.0),
            std::f64::consts::PI / 7.0,
            TaskTag::Forecast,
        )
        .unwrap();
        reg.register(
            "mat",
            DomainParams::Matrix {
                a: Matrix::from_rows(&[[1e-300, 2.5], [f64::MIN_POSITIVE, -7.0 / 9.0]]),
            },
            0.25,
            TaskTag::Imputation,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        reg.save(&path).unwrap();
        let back = ParamsRegistry::load(&path).unwrap();
        assert_eq!(back, reg);
        let (a, b) = back.get("odd").unwrap().params.as_scalar().unwrap();
        assert_eq!(a.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(b.to_bits(), (-1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn singleton_registry_returns_its_pair() {
        let mut reg = ParamsRegistry::new();
        reg.register("only", DomainParams::scalar(0.37, -1.25), 0.4, TaskTag::Forecast)
            .unwrap();
        for s in [Strategy::AvgAll, Strategy::AvgForecast, Strategy::ClosestRbar] {
            assert_eq!(select_unseen_params(&reg, s, 0.9).unwrap(), DomainParams::scalar(0.37, -1.25));
        }
    }

    #[test]
    fn averaging_strategies() {
        let reg = two_entry_registry();
        assert_eq!(
            select_unseen_params(&reg, Strategy::AvgAll, 0.0).unwrap(),
            DomainParams::scalar(2.0, 1.0)
        );
        assert_eq!(
            select_unseen_params(&reg, Strategy::AvgForecast, 0.0).unwrap(),
            DomainParams::scalar(1.0, 0.0)
        );
    }

    #[test]
    fn closest_rbar_picks_nearest_and_breaks_ties_by_name() {
        let reg = two_entry_registry();
        assert_eq!(
            select_unseen_params(&reg, Strategy::ClosestRbar, 0.55).unwrap(),
            DomainParams::scalar(3.0, 2.0)
        );
        let mut tie = ParamsRegistry::new();
        tie.register("zeta", DomainParams::scalar(9.0, 9.0), 0.75, TaskTag::Forecast).unwrap();
        tie.register("eta", DomainParams::scalar(4.0, 4.0), 0.25, TaskTag::Forecast).unwrap();
        assert_eq!(
            select_unseen_params(&tie, Strategy::ClosestRbar, 0.5).unwrap(),
            DomainParams::scalar(4.0, 4.0)
        );
    }

    #[test]
    fn empty_eligible_set_names_strategy() {
        let err = select_unseen_params(&ParamsRegistry::new(), Strategy::AvgAll, 0.0).unwrap_err();
        assert!(err.to_string().contains("avg_all"));
        let mut reg = ParamsRegistry::new();
        reg.register("cls", DomainParams::scalar(1.0, 1.0), 0.2, TaskTag::Classification)
            .unwrap();
        let err = select_unseen_params(&reg, Strategy::AvgForecast, 0.0).unwrap_err();
        assert!(err.to_string().contains("avg_forecast"));
    }
}
