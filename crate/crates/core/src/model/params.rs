//! Named parameters and the freeze-schedule groups they belong to.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::{Linear, Tensor};

/// `chi`: vision stub, `omega`: adaptor, `phi`: language backbone,
/// `phi_e`: experts and routers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Chi,
    Omega,
    Phi,
    PhiE,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [Self::Chi, Self::Omega, Self::Phi, Self::PhiE];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Chi => "chi",
            Self::Omega => "omega",
            Self::Phi => "phi",
            Self::PhiE => "phi_e",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter group {s:?}")))
    }
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a Tensor<T>,
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a mut Tensor<T>,
}

/// Enumeration of a module's parameters in a fixed order.
///
/// Both methods must visit tensors in the same order; the optimizer and the
/// checkpoint format rely on it.
pub trait Params<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>);
    fn collect_mut<'a>(
        &'a mut self,
        prefix: &str,
        group: ParamGroup,
        out: &mut Vec<ParamMut<'a, T>>,
    );
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push<'a, T>(
    out: &mut Vec<ParamRef<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    tensor: &'a Tensor<T>,
) {
    out.push(ParamRef {
        name: join(prefix, name),
        group,
        tensor,
    });
}

pub(crate) fn push_mut<'a, T>(
    out: &mut Vec<ParamMut<'a, T>>,
    prefix: &str,
    name: &str,
    group: ParamGroup,
    tensor: &'a mut Tensor<T>,
) {
    out.push(ParamMut {
        name: join(prefix, name),
        group,
        tensor,
    });
}

impl<T> Params<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "weight", group, &self.weight);
        if let Some(b) = &self.bias {
            push(out, prefix, "bias", group, b);
        }
    }

    fn collect_mut<'a>(
        &'a mut self,
        prefix: &str,
        group: ParamGroup,
        out: &mut Vec<ParamMut<'a, T>>,
    ) {
        push_mut(out, prefix, "weight", group, &mut self.weight);
        if let Some(b) = &mut self.bias {
            push_mut(out, prefix, "bias", group, b);
        }
    }
}

/// Parameter names per group, plus element counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamGroups {
    pub names: BTreeMap<ParamGroup, Vec<String>>,
    pub counts: BTreeMap<ParamGroup, usize>,
}

impl ParamGroups {
    pub fn from_refs<T>(refs: &[ParamRef<'_, T>]) -> Self
    where
        T: crate::real::Real,
    {
        let mut groups = Self::default();
        for g in ParamGroup::ALL {
            groups.names.insert(g, Vec::new());
            groups.counts.insert(g, 0);
        }
        for p in refs {
            groups.names.get_mut(&p.group).unwrap().push(p.name.clone());
            *groups.counts.get_mut(&p.group).unwrap() += p.tensor.numel();
        }
        groups
    }

    pub fn names(&self, group: ParamGroup) -> &[String] {
        self.names.get(&group).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count(&self, group: ParamGroup) -> usize {
        self.counts.get(&group).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self, group: ParamGroup) -> bool {
        self.names(group).is_empty()
    }
}
