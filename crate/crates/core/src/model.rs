//! Declarative processor models.
//!
//! A model file is a JSON document describing the dispatch/retire widths,
//! buffer sizes, execution resources (port groups) and the instruction
//! classes the simulator understands. Models are immutable once loaded and
//! may be shared freely between analyses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("seq {seq}: class `{class}` has no latency entry for {key}={value}")]
pub struct ContextLatencyError {
    pub seq: u64,
    pub class: String,
    pub key: String,
    pub value: String,
}

/// An execution resource such as a port or a group of identical ports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDesc {
    pub name: String,
    pub units: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceUse {
    pub resource: String,
    pub cycles: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrClass {
    pub name: String,
    pub latency: u32,
    #[serde(rename = "uops")]
    pub num_uops: u32,
    #[serde(rename = "uses", default)]
    pub resource_usage: Vec<ResourceUse>,
    #[serde(default)]
    pub may_load: bool,
    #[serde(default)]
    pub may_store: bool,
    #[serde(default)]
    pub is_branch: bool,
    #[serde(rename = "context_key", default, skip_serializing_if = "Option::is_none")]
    pub context_latency_key: Option<String>,
}

/// Index of a resource inside [`MachineModel::resources`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceId(pub usize);

/// Index of a class inside [`MachineModel::classes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    dispatch_width: u32,
    #[serde(default)]
    retire_width: Option<u32>,
    rob_size: u32,
    lq_size: u32,
    sq_size: u32,
    resources: Vec<ResourceDesc>,
    classes: Vec<InstrClass>,
    #[serde(default)]
    context_tables: BTreeMap<String, BTreeMap<String, u32>>,
}

/// A validated machine model.
///
/// Resources and classes keep their file order; lookups by name go through
/// side indices so the simulator can work with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineModel {
    pub name: String,
    pub dispatch_width: u32,
    pub retire_width: u32,
    pub reorder_buffer_size: u32,
    pub load_queue_size: u32,
    pub store_queue_size: u32,
    pub resources: Vec<ResourceDesc>,
    pub classes: Vec<InstrClass>,
    pub context_latency_tables: BTreeMap<String, BTreeMap<String, u32>>,
    class_index: HashMap<String, ClassId>,
    resource_index: HashMap<String, ResourceId>,
    claims: Vec<Vec<(ResourceId, u32)>>,
}

/// Parses and validates a model file.
pub fn load_model(model_text: &str) -> Result<MachineModel, ModelError> {
    let file: ModelFile = serde_json::from_str(model_text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    MachineModel::from_file(file)
}

impl MachineModel {
    /// Builds a model from parts, applying the same validation as [`load_model`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dispatch_width: u32,
        retire_width: u32,
        reorder_buffer_size: u32,
        load_queue_size: u32,
        store_queue_size: u32,
        resources: Vec<ResourceDesc>,
        classes: Vec<InstrClass>,
        context_latency_tables: BTreeMap<String, BTreeMap<String, u32>>,
    ) -> Result<Self, ModelError> {
        Self::from_file(ModelFile {
            name: name.into(),
            dispatch_width,
            retire_width: Some(retire_width),
            rob_size: reorder_buffer_size,
            lq_size: load_queue_size,
            sq_size: store_queue_size,
            resources,
            classes,
            context_tables: context_latency_tables,
        })
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        let invalid = |msg: String| Err(ModelError::Invalid(msg));

        if file.dispatch_width == 0 {
            return invalid("dispatch_width must be at least 1".into());
        }
        let retire_width = file.retire_width.unwrap_or(file.dispatch_width);
        if retire_width == 0 {
            return invalid("retire_width must be at least 1".into());
        }
        if file.rob_size < file.dispatch_width {
            return invalid(format!(
                "rob_size {} is smaller than dispatch_width {}",
                file.rob_size, file.dispatch_width
            ));
        }
        if file.lq_size == 0 {
            return invalid("lq_size must be at least 1".into());
        }
        if file.sq_size == 0 {
            return invalid("sq_size must be at least 1".into());
        }

        let mut resource_index = HashMap::new();
        for (i, r) in file.resources.iter().enumerate() {
            if r.units == 0 {
                return invalid(format!("resource `{}` has zero units", r.name));
            }
            if resource_index.insert(r.name.clone(), ResourceId(i)).is_some() {
                return invalid(format!("duplicate resource `{}`", r.name));
            }
        }

        for (key, table) in &file.context_tables {
            for (value, lat) in table {
                if *lat == 0 {
                    return invalid(format!("context table `{key}` maps `{value}` to zero latency"));
                }
            }
        }

        let mut class_index = HashMap::new();
        let mut claims = Vec::with_capacity(file.classes.len());
        for (i, c) in file.classes.iter().enumerate() {
            if c.latency == 0 {
                return invalid(format!("class `{}` has zero latency", c.name));
            }
            if c.num_uops == 0 {
                return invalid(format!("class `{}` has zero uops", c.name));
            }
            let mut class_claims = Vec::with_capacity(c.resource_usage.len());
            let mut per_resource: HashMap<ResourceId, u32> = HashMap::new();
            for u in &c.resource_usage {
                let Some(&rid) = resource_index.get(&u.resource) else {
                    return invalid(format!(
                        "class `{}` uses unknown resource `{}`",
                        c.name, u.resource
                    ));
                };
                if u.cycles == 0 {
                    return invalid(format!(
                        "class `{}` claims resource `{}` for zero cycles",
                        c.name, u.resource
                    ));
                }
                *per_resource.entry(rid).or_default() += 1;
                class_claims.push((rid, u.cycles));
            }
            // An instruction needing more units than exist could never issue.
            for (rid, n) in per_resource {
                let r = &file.resources[rid.0];
                if n > r.units {
                    return invalid(format!(
                        "class `{}` claims {} units of resource `{}` which has {}",
                        c.name, n, r.name, r.units
                    ));
                }
            }
            if let Some(key) = &c.context_latency_key {
                if !file.context_tables.contains_key(key) {
                    return invalid(format!(
                        "class `{}` references missing context table `{key}`",
                        c.name
                    ));
                }
            }
            if class_index.insert(c.name.clone(), ClassId(i)).is_some() {
                return invalid(format!("duplicate class `{}`", c.name));
            }
            claims.push(class_claims);
        }

        Ok(MachineModel {
            name: file.name,
            dispatch_width: file.dispatch_width,
            retire_width,
            reorder_buffer_size: file.rob_size,
            load_queue_size: file.lq_size,
            store_queue_size: file.sq_size,
            resources: file.resources,
            classes: file.classes,
            context_latency_tables: file.context_tables,
            class_index,
            resource_index,
            claims,
        })
    }

    /// Serializes the model back into the model file format.
    pub fn render(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            dispatch_width: self.dispatch_width,
            retire_width: Some(self.retire_width),
            rob_size: self.reorder_buffer_size,
            lq_size: self.load_queue_size,
            sq_size: self.store_queue_size,
            resources: self.resources.clone(),
            classes: self.classes.clone(),
            context_tables: self.context_latency_tables.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_index.get(name).copied()
    }

    pub fn class(&self, id: ClassId) -> &InstrClass {
        &self.classes[id.0]
    }

    pub fn resource_id(&self, name: &str) -> Option<ResourceId> {
        self.resource_index.get(name).copied()
    }

    /// Resolved resource claims of a class, in declaration order.
    pub fn claims(&self, id: ClassId) -> &[(ResourceId, u32)] {
        &self.claims[id.0]
    }

    /// Latency of `class` given the execution context attached to the
    /// instruction with sequence number `seq`.
    ///
    /// Context only matters when its key matches the class' context key;
    /// otherwise the static latency applies.
    pub fn effective_latency(
        &self,
        class: &InstrClass,
        context: Option<(&str, &str)>,
        seq: u64,
    ) -> Result<u32, ContextLatencyError> {
        match (&class.context_latency_key, context) {
            (Some(key), Some((ctx_key, value))) if key == ctx_key => self
                .context_latency_tables
                .get(key)
                .and_then(|t| t.get(value))
                .copied()
                .ok_or_else(|| ContextLatencyError {
                    seq,
                    class: class.name.clone(),
                    key: key.clone(),
                    value: value.to_string(),
                }),
            _ => Ok(class.latency),
        }
    }
}

impl fmt::Display for MachineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Model:             {}", self.name)?;
        writeln!(f, "Dispatch Width:    {}", self.dispatch_width)?;
        writeln!(f, "Retire Width:      {}", self.retire_width)?;
        writeln!(f, "ROB Size:          {}", self.reorder_buffer_size)?;
        writeln!(f, "LQ/SQ Size:        {}/{}", self.load_queue_size, self.store_queue_size)?;
        writeln!(f, "Resources:         {}", self.resources.len())?;
        write!(f, "Classes:           {}", self.classes.len())
    }
}
