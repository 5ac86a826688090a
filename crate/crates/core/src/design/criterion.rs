use std::collections::BTreeMap;

use nalgebra::Matrix3;

use super::CriterionKind;
use crate::error::{Error, Result};
use crate::fisher_info::{invert_info, InfoMatrix};

/// A per-draw design criterion averaged over posterior draws.
pub trait DesignCriterion: Send + Sync {
    fn name(&self) -> &'static str;

    fn kind(&self) -> CriterionKind;

    /// Larger is better when true.
    fn maximize(&self) -> bool;

    /// Value for one draw given the augmented information and the
    /// use-profile weight matrix; `None` marks the draw as skipped.
    fn per_draw(&self, info: &InfoMatrix, weight: &Matrix3<f64>) -> Option<f64>;
}

/// Weighted asymptotic variance `trace(I^-1 W)`, minimised.
#[derive(Debug, Clone, Copy, Default)]
pub struct BayesC;

impl DesignCriterion for BayesC {
    fn name(&self) -> &'static str {
        CriterionKind::BayesC.name()
    }

    fn kind(&self) -> CriterionKind {
        CriterionKind::BayesC
    }

    fn maximize(&self) -> bool {
        false
    }

    fn per_draw(&self, info: &InfoMatrix, weight: &Matrix3<f64>) -> Option<f64> {
        let cov = invert_info(info).ok()?;
        Some((cov.matrix * weight).trace())
    }
}

/// `log |I|`, maximised.
#[derive(Debug, Clone, Copy, Default)]
pub struct BayesD;

impl DesignCriterion for BayesD {
    fn name(&self) -> &'static str {
        CriterionKind::BayesD.name()
    }

    fn kind(&self) -> CriterionKind {
        CriterionKind::BayesD
    }

    fn maximize(&self) -> bool {
        true
    }

    fn per_draw(&self, info: &InfoMatrix, _weight: &Matrix3<f64>) -> Option<f64> {
        info.log_det()
    }
}

/// Criteria looked up by name at run time.
pub struct CriterionRegistry {
    entries: BTreeMap<String, Box<dyn DesignCriterion>>,
}

impl CriterionRegistry {
    pub fn empty() -> Self {
        CriterionRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(BayesC));
        r.register(Box::new(BayesD));
        r
    }

    /// Insert or replace the criterion registered under its name.
    pub fn register(&mut self, criterion: Box<dyn DesignCriterion>) {
        self.entries.insert(criterion.name().to_string(), criterion);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DesignCriterion> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Criterion(format!(
                "no criterion named '{name}' (registered: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn resolve(&self, kind: CriterionKind) -> Result<&dyn DesignCriterion> {
        let c = self.get(kind.name())?;
        if c.kind() != kind {
            return Err(Error::Criterion(format!(
                "criterion registered as '{}' reports kind {}",
                kind.name(),
                c.kind()
            )));
        }
        Ok(c)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for CriterionRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
