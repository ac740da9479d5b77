// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::{Explorer, State, TraceStep};
use crate::loader::EnclavePackage;

/// Summary body. Arguments arrive in `r0..r3`, the result goes to `r0`.
/// Returns the successor states; a summary that ends the path records that
/// itself (see [`Explorer::end_path`]) and returns none. The caller resumes
/// every successor after the call site.
pub type HookFn = Arc<dyn Fn(&mut Explorer<'_>, State, &mut TraceStep) -> Vec<State> + Send + Sync>;

#[derive(Clone)]
pub struct HookSummary {
    pub id: String,
    pub run: HookFn,
}

impl fmt::Debug for HookSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HookSummary({})", self.id)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HookError {
    #[error("symbol '{0}' already has a hook")]
    Duplicate(String),
}

/// Symbol name to summary.
#[derive(Debug, Clone, Default)]
pub struct HookRegistry {
    map: BTreeMap<String, HookSummary>,
}

impl HookRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builtin summaries for every binding in the package manifest.
    pub fn for_package(pkg: &EnclavePackage) -> Result<Self, HookError> {
        let mut r = HookRegistry::new();
        for (sym, binding) in &pkg.hooks {
            r.register_hook(sym, crate::sgx::builtin_summary(*binding))?;
        }
        Ok(r)
    }

    pub fn register_hook(&mut self, symbol: &str, summary: HookSummary) -> Result<(), HookError> {
        if self.map.contains_key(symbol) {
            return Err(HookError::Duplicate(symbol.to_string()));
        }
        self.map.insert(symbol.to_string(), summary);
        Ok(())
    }

    pub fn get(&self, symbol: &str) -> Option<&HookSummary> {
        self.map.get(symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}
