//! The hot-swappable scorer slot.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use culprit::artifact;
use culprit::scorer::{AnyScorer, PairScorer};

use crate::ServiceResult;

#[derive(Debug)]
pub struct LoadedModel {
    pub scorer: AnyScorer,
    /// Human-readable identifier reported by `/health` and stored with
    /// each identification.
    pub identifier: String,
    pub path: Option<PathBuf>,
}

impl LoadedModel {
    pub fn from_scorer(scorer: AnyScorer) -> Self {
        Self {
            identifier: scorer.identifier(),
            scorer,
            path: None,
        }
    }

    pub fn load(path: &Path) -> ServiceResult<Self> {
        let scorer = artifact::load(path)?;
        Ok(Self {
            identifier: format!("{}@{}", scorer.identifier(), path.display()),
            scorer,
            path: Some(path.to_path_buf()),
        })
    }
}

/// Holds the current model. Readers clone the `Arc`, so a swap never
/// interrupts an identification already holding the old model.
#[derive(Debug, Default)]
pub struct ModelSlot {
    current: RwLock<Option<Arc<LoadedModel>>>,
}

impl ModelSlot {
    pub fn new(model: Option<LoadedModel>) -> Self {
        Self {
            current: RwLock::new(model.map(Arc::new)),
        }
    }

    pub fn current(&self) -> Option<Arc<LoadedModel>> {
        self.current.read().expect("model lock").clone()
    }

    /// Installs `model`, returning the previous one.
    pub fn swap(&self, model: LoadedModel) -> Option<Arc<LoadedModel>> {
        self.current.write().expect("model lock").replace(Arc::new(model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use culprit::scorer::{ConstantScorer, LexicalOverlapScorer};

    #[test]
    fn swap_keeps_old_model_alive_for_holders() {
        let slot = ModelSlot::new(Some(LoadedModel::from_scorer(LexicalOverlapScorer.into())));
        let held = slot.current().unwrap();
        let old = slot.swap(LoadedModel::from_scorer(ConstantScorer::default().into())).unwrap();
        assert!(Arc::ptr_eq(&held, &old));
        assert_eq!(held.scorer.score("a b", "b"), 0.5);
        assert_eq!(slot.current().unwrap().scorer.score("a b", "b"), 0.0);
    }

    #[test]
    fn empty_slot_reports_none() {
        assert!(ModelSlot::default().current().is_none());
    }
}
