use std::any::Any;
use std::path::PathBuf;
use std::rc::Rc;

use indexmap::IndexMap;
use seqex_config::{Loc, Scalar};

use crate::error::{Error, ResolveError, Result};

/// A constructed component. One object may be exposed under several roles
/// (e.g. a concrete type and the traits it implements); all roles share
/// the same underlying allocation.
#[derive(Clone)]
pub struct Instance {
    tag: String,
    roles: Rc<Vec<Box<dyn Any>>>,
}

pub struct InstanceBuilder {
    tag: String,
    roles: Vec<Box<dyn Any>>,
}

impl InstanceBuilder {
    pub fn role<R: ?Sized + 'static>(mut self, value: Rc<R>) -> Self {
        self.roles.push(Box::new(value));
        self
    }

    pub fn finish(self) -> Instance {
        Instance {
            tag: self.tag,
            roles: Rc::new(self.roles),
        }
    }
}

impl Instance {
    pub fn build(tag: impl Into<String>) -> InstanceBuilder {
        InstanceBuilder {
            tag: tag.into(),
            roles: Vec::new(),
        }
    }

    pub fn of<R: ?Sized + 'static>(tag: impl Into<String>, value: Rc<R>) -> Self {
        Self::build(tag).role(value).finish()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn get<R: ?Sized + 'static>(&self) -> Option<Rc<R>> {
        self.roles.iter().find_map(|r| r.downcast_ref::<Rc<R>>().cloned())
    }

    /// True if both handles refer to the same constructed object.
    pub fn same(&self, other: &Instance) -> bool {
        Rc::ptr_eq(&self.roles, &other.roles)
    }
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "!{}", self.tag)
    }
}

/// A resolved argument value.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Map(Vec<(String, Value)>),
    Component(Instance),
}

impl Value {
    pub fn from_scalar(s: &Scalar) -> Self {
        match s {
            Scalar::Null => Value::Null,
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Int(i) => Value::Int(*i),
            Scalar::Float(x) => Value::Float(*x),
            Scalar::Str(s) => Value::Str(s.clone()),
        }
    }

    pub fn kind(&self) -> String {
        match self {
            Value::Null => "null".into(),
            Value::Bool(_) => "bool".into(),
            Value::Int(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Str(_) => "string".into(),
            Value::List(_) => "list".into(),
            Value::Map(_) => "mapping".into(),
            Value::Component(i) => format!("!{}", i.tag()),
        }
    }
}

fn short_type_name<R: ?Sized>() -> String {
    let full = std::any::type_name::<R>();
    let base = full.trim_start_matches("dyn ");
    let short = base.rsplit("::").next().unwrap_or(base);
    short.to_string()
}

/// The arguments of one component, after defaults and references.
pub struct Args {
    path: String,
    loc: Loc,
    values: IndexMap<String, (Value, Loc)>,
}

impl Args {
    pub fn new(path: impl Into<String>, loc: Loc, values: IndexMap<String, (Value, Loc)>) -> Self {
        Self {
            path: path.into(),
            loc,
            values,
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// An error located at argument `name`.
    pub fn error(&self, name: &str, message: impl Into<String>) -> Error {
        let path = if name.is_empty() {
            self.path.clone()
        } else if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.path)
        };
        let loc = self.values.get(name).map_or(self.loc, |(_, l)| *l);
        ResolveError::new(path, Some(loc), message).into()
    }

    pub fn value(&self, name: &str) -> Result<&Value> {
        self.values
            .get(name)
            .map(|(v, _)| v)
            .ok_or_else(|| self.error(name, "argument not supplied"))
    }

    fn wrong(&self, name: &str, expected: &str, got: &Value) -> Error {
        self.error(name, format!("expected {expected}, found {}", got.kind()))
    }

    pub fn is_null(&self, name: &str) -> bool {
        matches!(self.values.get(name), None | Some((Value::Null, _)))
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        match self.value(name)? {
            Value::Int(i) => Ok(*i),
            v => Err(self.wrong(name, "an integer", v)),
        }
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        let i = self.int(name)?;
        usize::try_from(i).map_err(|_| self.error(name, format!("expected a nonnegative integer, found {i}")))
    }

    /// A strictly positive integer.
    pub fn positive(&self, name: &str) -> Result<usize> {
        match self.usize(name)? {
            0 => Err(self.error(name, "must be positive")),
            n => Ok(n),
        }
    }

    pub fn opt_usize(&self, name: &str) -> Result<Option<usize>> {
        if self.is_null(name) {
            Ok(None)
        } else {
            self.usize(name).map(Some)
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        match self.value(name)? {
            Value::Float(x) => Ok(*x),
            Value::Int(i) => Ok(*i as f64),
            v => Err(self.wrong(name, "a number", v)),
        }
    }

    /// A number in `[lo, hi]`.
    pub fn f64_in(&self, name: &str, lo: f64, hi: f64) -> Result<f64> {
        let x = self.f64(name)?;
        if !(lo..=hi).contains(&x) {
            return Err(self.error(name, format!("must be in [{lo}, {hi}], found {x}")));
        }
        Ok(x)
    }

    pub fn bool(&self, name: &str) -> Result<bool> {
        match self.value(name)? {
            Value::Bool(b) => Ok(*b),
            v => Err(self.wrong(name, "a boolean", v)),
        }
    }

    pub fn str(&self, name: &str) -> Result<&str> {
        match self.value(name)? {
            Value::Str(s) => Ok(s),
            v => Err(self.wrong(name, "a string", v)),
        }
    }

    pub fn path_buf(&self, name: &str) -> Result<PathBuf> {
        self.str(name).map(PathBuf::from)
    }

    pub fn instance(&self, name: &str) -> Result<&Instance> {
        match self.value(name)? {
            Value::Component(i) => Ok(i),
            v => Err(self.wrong(name, "a component", v)),
        }
    }

    fn role_of<R: ?Sized + 'static>(&self, name: &str, v: &Value) -> Result<Rc<R>> {
        match v {
            Value::Component(i) => i.get::<R>().ok_or_else(|| {
                self.error(
                    name,
                    format!("!{} cannot be used as {}", i.tag(), short_type_name::<R>()),
                )
            }),
            v => Err(self.wrong(name, &format!("a {} component", short_type_name::<R>()), v)),
        }
    }

    pub fn component<R: ?Sized + 'static>(&self, name: &str) -> Result<Rc<R>> {
        self.role_of(name, self.value(name)?)
    }

    pub fn opt_component<R: ?Sized + 'static>(&self, name: &str) -> Result<Option<Rc<R>>> {
        if self.is_null(name) {
            Ok(None)
        } else {
            self.component(name).map(Some)
        }
    }

    /// A list of components; a single component counts as a one-element
    /// list and null as an empty one.
    pub fn components<R: ?Sized + 'static>(&self, name: &str) -> Result<Vec<Rc<R>>> {
        match self.value(name)? {
            Value::Null => Ok(Vec::new()),
            Value::List(items) => items.iter().map(|v| self.role_of(name, v)).collect(),
            v => Ok(vec![self.role_of(name, v)?]),
        }
    }
}
