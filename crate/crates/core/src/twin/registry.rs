use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::learners::Regressor;

/// Cloud-side model store. The SOH model is fixed at version 0 for the
/// whole run; SOC models get dense versions starting at 1.
#[derive(Debug)]
pub struct ModelRegistry {
    soh_model: Arc<Regressor>,
    soh_fingerprint: String,
    soc_artifacts: BTreeMap<u64, Value>,
}

impl ModelRegistry {
    pub fn new(soh_model: Regressor) -> Self {
        let soh_model = soh_model.with_version(0);
        let soh_fingerprint = soh_model.fingerprint();
        Self {
            soh_model: Arc::new(soh_model),
            soh_fingerprint,
            soc_artifacts: BTreeMap::new(),
        }
    }

    pub fn soh_model(&self) -> &Regressor {
        &self.soh_model
    }

    /// Fingerprint taken when the registry was created.
    pub fn soh_fingerprint_at_bootstrap(&self) -> &str {
        &self.soh_fingerprint
    }

    /// Fingerprint of the SOH model as it is now.
    pub fn soh_fingerprint(&self) -> String {
        self.soh_model.fingerprint()
    }

    /// Stores a SOC model under the next version and returns its artifact.
    pub fn register_soc(&mut self, model: Regressor) -> (u64, Value) {
        let version = self.latest_soc_version() + 1;
        let doc = model.with_version(version).to_document();
        self.soc_artifacts.insert(version, doc.clone());
        (version, doc)
    }

    /// 0 before any SOC model exists.
    pub fn latest_soc_version(&self) -> u64 {
        self.soc_artifacts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn soc_artifact(&self, version: u64) -> Option<&Value> {
        self.soc_artifacts.get(&version)
    }

    pub fn soc_versions(&self) -> impl Iterator<Item = u64> + '_ {
        self.soc_artifacts.keys().copied()
    }
}
