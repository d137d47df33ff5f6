use std::fmt;
use std::str::FromStr;

use glob::Pattern;

use crate::error::{Error, Result};
use crate::nn::{ParamAudit, ParamStore};
use crate::tensor::ParamId;
use crate::zoo::ModelGraph;

/// Which parameters to freeze, by name pattern (`*` wildcards).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FreezeSelector {
    /// Everything under `enc.` (the encoder or backbone).
    AllEncoder,
    /// Everything except `head.`.
    AllButHead,
    Explicit(Vec<String>),
}

impl FreezeSelector {
    fn matches(&self, name: &str) -> Result<bool> {
        Ok(match self {
            FreezeSelector::AllEncoder => name.starts_with("enc."),
            FreezeSelector::AllButHead => !name.starts_with("head."),
            FreezeSelector::Explicit(patterns) => {
                let mut hit = false;
                for p in patterns {
                    let pat = Pattern::new(p).map_err(|e| Error::Freeze(format!("pattern `{p}`: {e}")))?;
                    hit |= pat.matches(name);
                }
                hit
            }
        })
    }

    /// Trainable parameters the selector matches.
    pub fn resolve(&self, store: &ParamStore) -> Result<Vec<ParamId>> {
        let mut ids = Vec::new();
        for (id, p) in store.iter() {
            if p.trainable() && self.matches(&p.name)? {
                ids.push(id);
            }
        }
        Ok(ids)
    }
}

impl fmt::Display for FreezeSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreezeSelector::AllEncoder => f.write_str("all-encoder"),
            FreezeSelector::AllButHead => f.write_str("all-but-head"),
            FreezeSelector::Explicit(p) => f.write_str(&p.join(",")),
        }
    }
}

impl FromStr for FreezeSelector {
    type Err = Error;

    /// `all-encoder`, `all-but-head`, or a comma-separated pattern list.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-encoder" => Ok(FreezeSelector::AllEncoder),
            "all-but-head" => Ok(FreezeSelector::AllButHead),
            "" => Err(Error::Freeze("empty selector".into())),
            list => Ok(FreezeSelector::Explicit(list.split(',').map(|p| p.trim().to_string()).collect())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeReport {
    pub frozen: Vec<String>,
    pub before: ParamAudit,
    pub after: ParamAudit,
}

/// Marks the selected parameters non-trainable. Frozen batch norms switch
/// to their running statistics and stop updating them.
pub fn freeze(model: &mut ModelGraph, selector: &FreezeSelector) -> Result<FreezeReport> {
    let before = model.param_count();
    let store = model.store_mut();
    let ids = selector.resolve(store)?;
    if ids.is_empty() {
        return Err(Error::Freeze(format!("`{selector}` matches no trainable parameter")));
    }
    let trainable = store.iter().filter(|(_, p)| p.trainable()).count();
    if ids.len() == trainable {
        return Err(Error::Freeze(format!("`{selector}` would freeze every trainable parameter")));
    }
    let mut frozen = Vec::with_capacity(ids.len());
    for id in ids {
        store.set_trainable(id, false);
        frozen.push(store.get(id).name.clone());
    }
    Ok(FreezeReport {
        frozen,
        before,
        after: model.param_count(),
    })
}

/// Makes every weight and affine parameter trainable again.
pub fn unfreeze_all(model: &mut ModelGraph) {
    let store = model.store_mut();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if !store.get(id).kind.is_buffer() {
            store.set_trainable(id, true);
        }
    }
}
