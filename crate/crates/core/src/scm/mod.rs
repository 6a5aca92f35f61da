//! Exact discrete causal-inference engine.
//!
//! An [`Scm`] is a finite-domain DAG with one conditional probability table
//! per node. Observational and interventional distributions are computed by
//! plain enumeration over the free variables, restricted to the ancestral set
//! of the query. Interventions follow the truncated factorization: a `do`
//! node loses its incoming edges and its CPT becomes a point mass.
//!
//! The engine is meant to be an oracle, so there is no approximate fallback;
//! queries whose state space exceeds [`MAX_STATES`] fail with
//! [`ScmError::TooLarge`].

mod docalc;
mod graph;
mod random;
mod recsys;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub use docalc::{check_docalc_rule, AssignmentGrid, Rule, RuleCheck};
pub use graph::{d_separated, Dag, Mutilation};
pub use random::{random_cpt, random_scm, RandomScmSpec};
pub use recsys::{
    build_recsys_scm, d_node, default_exposure, s_node, theorem1_rhs, verify_theorem1, P_NODE,
};

/// Upper bound on enumerated joint states for a single query or model.
pub const MAX_STATES: u128 = 10_000_000;

const CPT_ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScmError {
    #[error("cycle detected through edge {from} -> {to}")]
    CycleDetected { from: String, to: String },
    #[error("CPT of node {node}: row {row} sums to {sum}")]
    BadCpt { node: String, row: usize, sum: f64 },
    #[error("CPT of node {node}: row {row} has invalid entry {value}")]
    BadProbability { node: String, row: usize, value: f64 },
    #[error("CPT of node {node} has {got} rows of width {width}, expected {rows} rows of width {domain}")]
    CptShape { node: String, got: usize, width: usize, rows: usize, domain: usize },
    #[error("node {0} has an empty domain")]
    EmptyDomain(String),
    #[error("duplicate node name {0}")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("value {value} out of range for node {node} with domain size {domain}")]
    ValueOutOfRange { node: String, value: usize, domain: usize },
    #[error("assignment is missing node {0}")]
    IncompleteAssignment(String),
    #[error("node {0} appears in more than one of target, given and do sets")]
    DisjointnessViolation(String),
    #[error("conditioning event has zero probability")]
    ZeroProbabilityEvidence,
    #[error("enumeration needs {states} states (limit {limit})")]
    TooLarge { states: u128, limit: u128 },
    #[error("repeat weight must be zero for a Markov recommendation graph, got {0}")]
    NonMarkovConfig(f64),
    #[error("invalid recommendation graph: {0}")]
    InvalidRecsys(String),
}

pub type Result<T, E = ScmError> = std::result::Result<T, E>;

/// Declarative description of one node.
///
/// `cpt` has one row per joint parent assignment. Rows are ordered
/// row-major over `parents` in the listed order, last parent varying
/// fastest; a root node has exactly one row.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub domain_size: usize,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<f64>>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, domain_size: usize, parents: &[&str], cpt: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            domain_size,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            cpt,
        }
    }
}

/// Map from node name to domain index. Also used for `do` sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment(BTreeMap<String, usize>);

/// The `do(·)` set: node name to forced value.
pub type Intervention = Assignment;

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: impl Into<String>, value: usize) -> Self {
        self.0.insert(node.into(), value);
        self
    }

    pub fn insert(&mut self, node: impl Into<String>, value: usize) {
        self.0.insert(node.into(), value);
    }

    pub fn get(&self, node: &str) -> Option<usize> {
        self.0.get(node).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Union of two assignments; `other` wins on shared keys.
    pub fn merged(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.insert(k, v);
        }
        out
    }
}

impl<S: Into<String>> FromIterator<(S, usize)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (S, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Normalized probability table over the joint domain of `targets`,
/// row-major with the last target varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    pub targets: Vec<String>,
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn get(&self, values: &[usize]) -> f64 {
        assert_eq!(values.len(), self.dims.len(), "table arity mismatch");
        let idx = values.iter().zip(&self.dims).fold(0, |acc, (&v, &d)| {
            assert!(v < d, "table index out of range");
            acc * d + v
        });
        self.probs[idx]
    }

    pub fn max_abs_diff(&self, other: &DistributionTable) -> f64 {
        assert_eq!(self.dims, other.dims, "comparing tables of different shape");
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    name: String,
    domain: usize,
    parents: Vec<usize>,
    strides: Vec<usize>,
    cpt: Vec<f64>,
}

impl Node {
    #[inline]
    fn prob(&self, values: &[usize]) -> f64 {
        let row: usize = self.parents.iter().zip(&self.strides).map(|(&p, &s)| values[p] * s).sum();
        self.cpt[row * self.domain + values[self.id]]
    }
}

/// A validated structural causal model over finite domains.
///
/// Immutable after construction; queries take `&self` and may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct Scm {
    nodes: Vec<Node>,
    order: Vec<usize>,
    index: HashMap<String, usize>,
}

/// Checks acyclicity and CPT normalization; returns the topological order
/// (node names) on success.
pub fn validate_scm(specs: &[NodeSpec]) -> Result<Vec<String>> {
    let scm = Scm::new(specs.to_vec())?;
    Ok(scm.topological_order())
}

impl Scm {
    pub fn new(specs: Vec<NodeSpec>) -> Result<Self> {
        let mut index = HashMap::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if spec.domain_size == 0 {
                return Err(ScmError::EmptyDomain(spec.name.clone()));
            }
            if index.insert(spec.name.clone(), i).is_some() {
                return Err(ScmError::DuplicateNode(spec.name.clone()));
            }
        }
        let parents = specs
            .iter()
            .map(|spec| {
                spec.parents
                    .iter()
                    .map(|p| index.get(p).copied().ok_or_else(|| ScmError::UnknownNode(p.clone())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let order = Dag::from_parents(parents.clone()).topological_order().map_err(|(from, to)| {
            ScmError::CycleDetected { from: specs[from].name.clone(), to: specs[to].name.clone() }
        })?;
        let domains: Vec<usize> = specs.iter().map(|s| s.domain_size).collect();
        let nodes = specs
            .into_iter()
            .zip(parents)
            .enumerate()
            .map(|(id, (spec, ps))| build_node(id, spec, ps, &domains))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, order, index })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn topological_order(&self) -> Vec<String> {
        self.order.iter().map(|&i| self.nodes[i].name.clone()).collect()
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn domain_size(&self, node: &str) -> Result<usize> {
        Ok(self.nodes[self.id(node)?].domain)
    }

    pub fn parents(&self, node: &str) -> Result<Vec<String>> {
        let id = self.id(node)?;
        Ok(self.nodes[id].parents.iter().map(|&p| self.nodes[p].name.clone()).collect())
    }

    /// CPT rows of a node in declaration order.
    pub fn cpt_rows(&self, node: &str) -> Result<Vec<Vec<f64>>> {
        let n = &self.nodes[self.id(node)?];
        Ok(n.cpt.chunks(n.domain).map(<[f64]>::to_vec).collect())
    }

    /// Recovers the declarative form (useful for serialization and for
    /// rebuilding a model with perturbed tables).
    pub fn to_specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                name: n.name.clone(),
                domain_size: n.domain,
                parents: n.parents.iter().map(|&p| self.nodes[p].name.clone()).collect(),
                cpt: n.cpt.chunks(n.domain).map(<[f64]>::to_vec).collect(),
            })
            .collect()
    }

    /// Structure only.
    pub fn dag(&self) -> Dag {
        Dag::from_parents(self.nodes.iter().map(|n| n.parents.clone()).collect())
    }

    pub(crate) fn id(&self, node: &str) -> Result<usize> {
        self.index.get(node).copied().ok_or_else(|| ScmError::UnknownNode(node.to_string()))
    }

    pub(crate) fn ids(&self, nodes: &[&str]) -> Result<Vec<usize>> {
        nodes.iter().map(|n| self.id(n)).collect()
    }

    fn resolve(&self, a: &Assignment) -> Result<Vec<(usize, usize)>> {
        a.iter()
            .map(|(name, value)| {
                let id = self.id(name)?;
                let domain = self.nodes[id].domain;
                if value >= domain {
                    return Err(ScmError::ValueOutOfRange { node: name.to_string(), value, domain });
                }
                Ok((id, value))
            })
            .collect()
    }

    /// Product of CPT entries for a full assignment.
    pub fn joint_probability(&self, a: &Assignment) -> Result<f64> {
        let mut values = vec![usize::MAX; self.nodes.len()];
        for (id, v) in self.resolve(a)? {
            values[id] = v;
        }
        if let Some(missing) = values.iter().position(|&v| v == usize::MAX) {
            return Err(ScmError::IncompleteAssignment(self.nodes[missing].name.clone()));
        }
        Ok(self.order.iter().map(|&i| self.nodes[i].prob(&values)).product())
    }

    /// `P(targets | given, do(dos))` by exact enumeration on the mutilated
    /// model.
    pub fn query(&self, targets: &[&str], given: &Assignment, dos: &Intervention) -> Result<DistributionTable> {
        let n = self.nodes.len();
        let target_ids = self.ids(targets)?;
        let given_ids = self.resolve(given)?;
        let do_ids = self.resolve(dos)?;

        let mut role = vec![0u8; n];
        let mut mark = |id: usize, bit: u8| -> Result<()> {
            if role[id] != 0 {
                return Err(ScmError::DisjointnessViolation(self.nodes[id].name.clone()));
            }
            role[id] = bit;
            Ok(())
        };
        for &t in &target_ids {
            mark(t, 1)?;
        }
        for &(g, _) in &given_ids {
            mark(g, 2)?;
        }
        for &(d, _) in &do_ids {
            mark(d, 3)?;
        }
        let is_do = |id: usize| role[id] == 3;

        // Ancestral set of targets and evidence in the mutilated graph;
        // everything else sums out to one.
        let mut relevant = vec![false; n];
        let mut stack: Vec<usize> = target_ids.iter().copied().chain(given_ids.iter().map(|g| g.0)).collect();
        while let Some(v) = stack.pop() {
            if relevant[v] {
                continue;
            }
            relevant[v] = true;
            if !is_do(v) {
                stack.extend(self.nodes[v].parents.iter().copied());
            }
        }

        let mut values = vec![0usize; n];
        for &(id, v) in given_ids.iter().chain(&do_ids) {
            values[id] = v;
        }
        let free: Vec<usize> = self.order.iter().copied().filter(|&v| relevant[v] && role[v] <= 1).collect();
        let factors: Vec<usize> = self.order.iter().copied().filter(|&v| relevant[v] && !is_do(v)).collect();

        let states = free.iter().try_fold(1u128, |acc, &v| {
            let next = acc * self.nodes[v].domain as u128;
            (next <= MAX_STATES).then_some(next)
        });
        let states = match states {
            Some(s) => s,
            None => {
                let total = free.iter().fold(1u128, |acc, &v| acc.saturating_mul(self.nodes[v].domain as u128));
                return Err(ScmError::TooLarge { states: total, limit: MAX_STATES });
            }
        };

        let dims: Vec<usize> = target_ids.iter().map(|&t| self.nodes[t].domain).collect();
        let mut probs = vec![0.0; dims.iter().product()];
        let mut total = 0.0;
        for _ in 0..states {
            let p: f64 = factors.iter().map(|&v| self.nodes[v].prob(&values)).product();
            if p > 0.0 {
                let cell = target_ids.iter().zip(&dims).fold(0, |acc, (&t, &d)| acc * d + values[t]);
                probs[cell] += p;
                total += p;
            }
            // odometer over free variables, last in topological order fastest
            for &v in free.iter().rev() {
                values[v] += 1;
                if values[v] < self.nodes[v].domain {
                    break;
                }
                values[v] = 0;
            }
        }
        if total <= 0.0 {
            return Err(ScmError::ZeroProbabilityEvidence);
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(DistributionTable { targets: targets.iter().map(|t| t.to_string()).collect(), dims, probs })
    }

    /// d-separation of `y` and `z` given `w` in a mutilated copy of the graph.
    pub fn d_separated<S: AsRef<str>>(
        &self,
        y: &[&str],
        z: &[&str],
        w: &[&str],
        mutilation: &Mutilation<S>,
    ) -> Result<bool> {
        let (y, z, w) = (self.ids(y)?, self.ids(z)?, self.ids(w)?);
        let mutilation = mutilation.try_map(|n| self.id(n.as_ref()))?;
        Ok(d_separated(&self.dag().mutilate(&mutilation), &y, &z, &w))
    }
}

fn build_node(id: usize, spec: NodeSpec, parents: Vec<usize>, domains: &[usize]) -> Result<Node> {
    let mut strides = vec![0; parents.len()];
    let mut rows = 1usize;
    for (k, &p) in parents.iter().enumerate().rev() {
        strides[k] = rows;
        rows *= domains[p];
    }
    let bad_shape = spec.cpt.len() != rows || spec.cpt.iter().any(|r| r.len() != spec.domain_size);
    if bad_shape {
        return Err(ScmError::CptShape {
            node: spec.name,
            got: spec.cpt.len(),
            width: spec.cpt.first().map_or(0, Vec::len),
            rows,
            domain: spec.domain_size,
        });
    }
    for (r, row) in spec.cpt.iter().enumerate() {
        if let Some(&value) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ScmError::BadProbability { node: spec.name, row: r, value });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > CPT_ROW_TOL {
            return Err(ScmError::BadCpt { node: spec.name, row: r, sum });
        }
    }
    Ok(Node {
        id,
        name: spec.name,
        domain: spec.domain_size,
        parents,
        strides,
        cpt: spec.cpt.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests;
