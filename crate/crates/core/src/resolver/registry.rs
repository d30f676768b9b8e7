use std::collections::HashMap;

use seqex_autodiff::{ParamStore, Rng};
use seqex_config::ConfigNode;

use crate::error::{ResolveError, Result};
use crate::resolver::value::{Args, Instance};

/// Context for computing a default from the surrounding tree.
pub struct DefaultCtx<'a> {
    /// Config path of the component being filled.
    pub path: &'a str,
    pub node: &'a ConfigNode,
    pub exp_global: &'a ConfigNode,
}

impl DefaultCtx<'_> {
    /// Path of the component `levels` steps up (1 = parent).
    pub fn ancestor(&self, levels: usize) -> String {
        let mut segs: Vec<&str> = if self.path.is_empty() { Vec::new() } else { self.path.split('.').collect() };
        segs.truncate(segs.len().saturating_sub(levels));
        segs.join(".")
    }

    /// Last segment of the component's own path.
    pub fn key(&self) -> &str {
        self.path.rsplit('.').next().unwrap_or("")
    }
}

pub fn join_path(base: &str, key: &str) -> String {
    if base.is_empty() {
        key.to_string()
    } else {
        format!("{base}.{key}")
    }
}

/// `!Ref {path: <path>}`
pub fn ref_node(path: impl Into<String>) -> ConfigNode {
    ConfigNode::mapping([("path".to_string(), ConfigNode::string(path))]).with_tag(REF_TAG)
}

pub const REF_TAG: &str = "Ref";
pub const EXP_GLOBAL_TAG: &str = "ExpGlobal";

pub enum ArgDefault {
    Required,
    Value(ConfigNode),
    /// Copy the named `ExpGlobal` setting.
    Global(&'static str),
    Contextual(fn(&DefaultCtx<'_>) -> ConfigNode),
}

pub struct ArgSpec {
    pub name: &'static str,
    pub default: ArgDefault,
}

impl ArgSpec {
    pub fn required(name: &'static str) -> Self {
        Self {
            name,
            default: ArgDefault::Required,
        }
    }

    pub fn value(name: &'static str, v: ConfigNode) -> Self {
        Self {
            name,
            default: ArgDefault::Value(v),
        }
    }

    pub fn null(name: &'static str) -> Self {
        Self::value(name, ConfigNode::null())
    }

    pub fn global(name: &'static str, key: &'static str) -> Self {
        Self {
            name,
            default: ArgDefault::Global(key),
        }
    }

    pub fn contextual(name: &'static str, f: fn(&DefaultCtx<'_>) -> ConfigNode) -> Self {
        Self {
            name,
            default: ArgDefault::Contextual(f),
        }
    }
}

/// State available while constructing one component.
pub struct BuildCtx<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
    /// Config path of the component; parameters are named under it.
    pub path: String,
}

pub type BuildFn = fn(&mut BuildCtx<'_>, &Args) -> Result<Instance>;

pub struct ComponentSchema {
    pub tag: &'static str,
    pub args: Vec<ArgSpec>,
    pub build: BuildFn,
}

impl ComponentSchema {
    pub fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.name == name)
    }
}

/// Tag → schema. Read-only once experiments start resolving.
#[derive(Default)]
pub struct Registry {
    schemas: HashMap<&'static str, ComponentSchema>,
    order: Vec<&'static str>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, schema: ComponentSchema) -> Result<(), ResolveError> {
        let err = |msg: String| Err(ResolveError::new("", None, msg));
        if schema.tag == REF_TAG || self.schemas.contains_key(schema.tag) {
            return err(format!("tag {} is already registered", schema.tag));
        }
        for (i, a) in schema.args.iter().enumerate() {
            if schema.args[..i].iter().any(|b| b.name == a.name) {
                return err(format!("{} declares argument '{}' twice", schema.tag, a.name));
            }
            if let ArgDefault::Global(key) = a.default {
                let known = if schema.tag == EXP_GLOBAL_TAG {
                    schema.arg(key).is_some()
                } else {
                    self.get(EXP_GLOBAL_TAG).is_some_and(|g| g.arg(key).is_some())
                };
                if !known {
                    return err(format!("{}.{}: no ExpGlobal setting named '{key}'", schema.tag, a.name));
                }
            }
        }
        self.order.push(schema.tag);
        self.schemas.insert(schema.tag, schema);
        Ok(())
    }

    pub fn get(&self, tag: &str) -> Option<&ComponentSchema> {
        self.schemas.get(tag)
    }

    /// Registered tags in registration order, plus `Ref`.
    pub fn tags(&self) -> Vec<&'static str> {
        let mut t = self.order.clone();
        t.push(REF_TAG);
        t
    }

    pub fn contains(&self, tag: &str) -> bool {
        tag == REF_TAG || self.schemas.contains_key(tag)
    }
}
