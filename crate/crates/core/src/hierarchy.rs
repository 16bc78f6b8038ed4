//! Class-label hierarchy: parsing, validation and tree distances.
//!
//! Evaluation classes are the leaves of a rooted tree. All leaves must sit at
//! the same depth `n` (root at depth 0), which makes the penalty weight
//! `td(c, s) / n` fall in `(0, 1]` for distinct leaves.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of an evaluation leaf, `0..num_classes()`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u16);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Tree distance kept as an integer edge count; the metric value is `edges / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeDistance(u32);

impl TreeDistance {
    pub fn from_edges(edges: u32) -> Self {
        TreeDistance(edges)
    }

    pub fn edges(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl fmt::Display for TreeDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}.5", self.0 / 2)
        }
    }
}

/// Serialized form of a hierarchy (`configs/iddaw.json` follows this schema).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub name: String,
    pub levels: u32,
    pub tree: TreeNode,
    pub leaves: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pixel_ids: BTreeMap<String, u16>,
    #[serde(default = "default_ignore_id")]
    pub ignore_id: u16,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub important_sets: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub palette: BTreeMap<String, [u8; 3]>,
}

fn default_ignore_id() -> u16 {
    255
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNode {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        TreeNode {
            name: name.into(),
            children: Vec::new(),
        }
    }

    pub fn branch(name: impl Into<String>, children: Vec<TreeNode>) -> Self {
        TreeNode {
            name: name.into(),
            children,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    name: String,
    parent: Option<usize>,
    depth: u32,
    children: Vec<usize>,
}

/// Raw pixel values that do not map to any leaf.
const UNMAPPED: u16 = u16::MAX - 1;

/// A validated label hierarchy with its leaf distance matrix precomputed.
///
/// Immutable after construction; share it across workers by reference.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelHierarchy {
    name: String,
    nodes: Vec<Node>,
    root: usize,
    leaves: Vec<usize>,
    depth: u32,
    edges: Vec<u32>,
    by_name: HashMap<String, ClassId>,
    aliases: BTreeMap<String, String>,
    pixel_ids: Vec<u16>,
    ignore_id: u16,
    lut: Vec<u16>,
    important_sets: BTreeMap<String, Vec<ClassId>>,
    palette: Vec<Option<[u8; 3]>>,
}

const BUNDLED_IDDAW: &str = include_str!("../configs/iddaw.json");

impl LabelHierarchy {
    /// The bundled IDD-AW hierarchy: 30 leaves at depth 4.
    pub fn iddaw() -> Self {
        Self::from_json(BUNDLED_IDDAW).expect("bundled IDD-AW config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: HierarchyConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_config(&config)
    }

    pub fn from_config(config: &HierarchyConfig) -> Result<Self> {
        let mut links = Vec::new();
        flatten(&config.tree, None, &mut links);
        let mut h = Self::from_parent_links(&config.name, &links, &config.leaves)?;
        if config.levels != h.depth {
            return Err(Error::Structure(format!(
                "config declares {} levels but leaves sit at depth {}",
                config.levels, h.depth
            )));
        }
        h.apply_metadata(config)?;
        Ok(h)
    }

    /// Builds a hierarchy from `(node, parent)` pairs. Exactly one node must
    /// have no parent; `leaves` fixes the `ClassId` order and must list every
    /// childless node.
    pub fn from_parent_links(
        name: &str,
        links: &[(String, Option<String>)],
        leaves: &[String],
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(links.len());
        for (i, (node, _)) in links.iter().enumerate() {
            if index.insert(node.as_str(), i).is_some() {
                return Err(Error::Structure(format!("duplicate node name `{node}`")));
            }
        }

        let mut nodes: Vec<Node> = links
            .iter()
            .map(|(node, _)| Node {
                name: node.clone(),
                parent: None,
                depth: 0,
                children: Vec::new(),
            })
            .collect();
        let mut roots = Vec::new();
        for (i, (node, parent)) in links.iter().enumerate() {
            match parent {
                None => roots.push(i),
                Some(p) => {
                    let &pi = index.get(p.as_str()).ok_or_else(|| {
                        Error::Structure(format!("node `{node}` has unknown parent `{p}`"))
                    })?;
                    if pi == i {
                        return Err(Error::Structure(format!("node `{node}` is its own parent")));
                    }
                    nodes[i].parent = Some(pi);
                    nodes[pi].children.push(i);
                }
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => {
                return Err(Error::Structure(
                    "no root node (every node has a parent)".into(),
                ))
            }
            many => {
                let names: Vec<&str> = many.iter().map(|&i| nodes[i].name.as_str()).collect();
                return Err(Error::Structure(format!(
                    "multiple roots: {}",
                    names.join(", ")
                )));
            }
        };

        // Breadth-first from the root assigns depths; anything left unvisited
        // hangs off a cycle.
        let mut visited = vec![false; nodes.len()];
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(i) = queue.pop_front() {
            let depth = nodes[i].depth;
            for k in 0..nodes[i].children.len() {
                let child = nodes[i].children[k];
                visited[child] = true;
                nodes[child].depth = depth + 1;
                queue.push_back(child);
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(Error::Structure(format!(
                "node `{}` is not reachable from the root (cycle)",
                nodes[i].name
            )));
        }

        let mut leaf_nodes = Vec::with_capacity(leaves.len());
        let mut by_name = HashMap::with_capacity(leaves.len());
        for leaf in leaves {
            let &i = index
                .get(leaf.as_str())
                .ok_or_else(|| Error::Structure(format!("leaf `{leaf}` is not in the tree")))?;
            if !nodes[i].children.is_empty() {
                return Err(Error::Structure(format!(
                    "`{leaf}` has children, not a leaf"
                )));
            }
            if by_name
                .insert(leaf.clone(), ClassId(leaf_nodes.len() as u16))
                .is_some()
            {
                return Err(Error::Structure(format!("duplicate leaf `{leaf}`")));
            }
            leaf_nodes.push(i);
        }
        if leaf_nodes.len() >= UNMAPPED as usize {
            return Err(Error::Structure(format!(
                "too many leaves ({})",
                leaf_nodes.len()
            )));
        }
        if let Some(missing) = nodes
            .iter()
            .find(|n| n.children.is_empty() && !by_name.contains_key(&n.name))
        {
            return Err(Error::Structure(format!(
                "tree leaf `{}` missing from the leaves list",
                missing.name
            )));
        }
        let depth = match leaf_nodes.first() {
            Some(&first) => nodes[first].depth,
            None => return Err(Error::Structure("no leaves".into())),
        };
        if depth == 0 {
            return Err(Error::Structure(
                "the root cannot be an evaluation leaf".into(),
            ));
        }
        if let Some(&odd) = leaf_nodes.iter().find(|&&i| nodes[i].depth != depth) {
            return Err(Error::Structure(format!(
                "non-uniform leaf depth: `{}` at depth {}, `{}` at depth {}",
                nodes[leaf_nodes[0]].name, depth, nodes[odd].name, nodes[odd].depth
            )));
        }

        let k = leaf_nodes.len();
        let mut edges = vec![0u32; k * k];
        for a in 0..k {
            for b in (a + 1)..k {
                let e = path_edges(&nodes, leaf_nodes[a], leaf_nodes[b]);
                edges[a * k + b] = e;
                edges[b * k + a] = e;
            }
        }

        let pixel_ids: Vec<u16> = (0..k as u16).collect();
        let mut h = LabelHierarchy {
            name: name.to_string(),
            nodes,
            root,
            leaves: leaf_nodes,
            depth,
            edges,
            by_name,
            aliases: BTreeMap::new(),
            pixel_ids,
            ignore_id: default_ignore_id(),
            lut: Vec::new(),
            important_sets: BTreeMap::new(),
            palette: vec![None; k],
        };
        h.rebuild_lut()?;
        Ok(h)
    }

    fn apply_metadata(&mut self, config: &HierarchyConfig) -> Result<()> {
        for (alias, target) in &config.aliases {
            if self.by_name.contains_key(alias) {
                return Err(Error::Structure(format!("alias `{alias}` shadows a leaf")));
            }
            let &id = self
                .by_name
                .get(target)
                .ok_or_else(|| Error::UnknownClass(target.clone()))?;
            self.by_name.insert(alias.clone(), id);
        }
        self.aliases = config.aliases.clone();

        self.ignore_id = config.ignore_id;
        if !config.pixel_ids.is_empty() {
            let mut ids = vec![None; self.num_classes()];
            for (leaf, &value) in &config.pixel_ids {
                let c = self.class_id(leaf)?;
                ids[c.index()] = Some(value);
            }
            self.pixel_ids = ids
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| {
                        Error::Structure(format!(
                            "leaf `{}` has no pixel id",
                            self.leaf_name(ClassId(i as u16))
                        ))
                    })
                })
                .collect::<Result<_>>()?;
        }
        self.rebuild_lut()?;

        for (set, members) in &config.important_sets {
            if members.is_empty() {
                return Err(Error::EmptySet(set.clone()));
            }
            let mut ids: Vec<ClassId> = members
                .iter()
                .map(|m| self.class_id(m))
                .collect::<Result<_>>()?;
            ids.sort();
            ids.dedup();
            self.important_sets.insert(set.clone(), ids);
        }

        for (leaf, &rgb) in &config.palette {
            let c = self.class_id(leaf)?;
            self.palette[c.index()] = Some(rgb);
        }
        Ok(())
    }

    fn rebuild_lut(&mut self) -> Result<()> {
        let mut lut = vec![UNMAPPED; 1 << 16];
        lut[self.ignore_id as usize] = crate::labelmap::IGNORE;
        for (i, &value) in self.pixel_ids.iter().enumerate() {
            if value == self.ignore_id {
                return Err(Error::Structure(format!(
                    "leaf `{}` uses the ignore id {value} as its pixel id",
                    self.leaf_name(ClassId(i as u16))
                )));
            }
            if lut[value as usize] != UNMAPPED {
                return Err(Error::Structure(format!("pixel id {value} assigned twice")));
            }
            lut[value as usize] = i as u16;
        }
        self.lut = lut;
        Ok(())
    }

    /// Serializes back to the config schema; `from_config(to_config())` is an identity.
    pub fn to_config(&self) -> HierarchyConfig {
        fn build(h: &LabelHierarchy, i: usize) -> TreeNode {
            TreeNode {
                name: h.nodes[i].name.clone(),
                children: h.nodes[i].children.iter().map(|&c| build(h, c)).collect(),
            }
        }
        let leaves: Vec<String> = self
            .leaves
            .iter()
            .map(|&i| self.nodes[i].name.clone())
            .collect();
        HierarchyConfig {
            name: self.name.clone(),
            levels: self.depth,
            tree: build(self, self.root),
            pixel_ids: leaves
                .iter()
                .cloned()
                .zip(self.pixel_ids.iter().copied())
                .collect(),
            aliases: self.aliases.clone(),
            ignore_id: self.ignore_id,
            important_sets: self
                .important_sets
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        v.iter().map(|&c| self.leaf_name(c).to_string()).collect(),
                    )
                })
                .collect(),
            palette: leaves
                .iter()
                .zip(&self.palette)
                .filter_map(|(n, p)| p.map(|rgb| (n.clone(), rgb)))
                .collect(),
            leaves,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_config()).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf depth `n`, with the root at depth 0.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn class_ids(&self) -> impl ExactSizeIterator<Item = ClassId> {
        (0..self.leaves.len() as u16).map(ClassId)
    }

    pub fn leaf_name(&self, c: ClassId) -> &str {
        &self.nodes[self.leaves[c.index()]].name
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|&i| self.nodes[i].name.as_str())
    }

    /// Looks up a leaf by name or alias.
    pub fn class_id(&self, name: &str) -> Result<ClassId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn check_class(&self, c: ClassId) -> Result<()> {
        if c.index() < self.num_classes() {
            Ok(())
        } else {
            Err(Error::InvalidClassId {
                id: u32::from(c.0),
                classes: self.num_classes(),
            })
        }
    }

    pub fn tree_distance(&self, c: ClassId, s: ClassId) -> Result<TreeDistance> {
        self.check_class(c)?;
        self.check_class(s)?;
        Ok(TreeDistance(
            self.edges[c.index() * self.num_classes() + s.index()],
        ))
    }

    /// Path length in edges between two leaves (twice the tree distance).
    /// Panics on out-of-range ids; use [`Self::tree_distance`] for checked access.
    #[inline]
    pub fn path_edges(&self, c: ClassId, s: ClassId) -> u32 {
        self.edges[c.index() * self.num_classes() + s.index()]
    }

    /// Row-major `|C| x |C|` matrix of tree distances.
    pub fn distance_matrix(&self) -> Vec<Vec<TreeDistance>> {
        let k = self.num_classes();
        self.edges
            .chunks(k)
            .map(|row| row.iter().map(|&e| TreeDistance(e)).collect())
            .collect()
    }

    pub fn pixel_id(&self, c: ClassId) -> u16 {
        self.pixel_ids[c.index()]
    }

    pub fn ignore_id(&self) -> u16 {
        self.ignore_id
    }

    /// Maps a raw raster value to a class id, [`crate::labelmap::IGNORE`], or `None`.
    #[inline]
    pub fn map_pixel(&self, raw: u16) -> Option<u16> {
        match self.lut[raw as usize] {
            UNMAPPED => None,
            v => Some(v),
        }
    }

    pub fn color(&self, c: ClassId) -> Option<[u8; 3]> {
        self.palette.get(c.index()).copied().flatten()
    }

    pub fn important_set_names(&self) -> impl Iterator<Item = &str> {
        self.important_sets.keys().map(String::as_str)
    }

    pub fn resolve_important(&self, spec: &ImportantSpec) -> Result<ImportantSet> {
        match spec {
            ImportantSpec::Named(name) => {
                let members = self
                    .important_sets
                    .get(name)
                    .ok_or_else(|| Error::UnknownSet(name.clone()))?;
                ImportantSet::new(name.clone(), members.iter().copied(), self)
            }
            ImportantSpec::Classes(names) => {
                let ids = names
                    .iter()
                    .map(|n| self.class_id(n))
                    .collect::<Result<Vec<_>>>()?;
                ImportantSet::new(names.join("+"), ids, self)
            }
        }
    }

    /// Resolves a set name from the config, falling back to a
    /// comma-separated list of class names.
    pub fn resolve_important_str(&self, spec: &str) -> Result<ImportantSet> {
        if self.important_sets.contains_key(spec) {
            return self.resolve_important(&ImportantSpec::Named(spec.to_string()));
        }
        if spec.contains(',') || self.by_name.contains_key(spec) {
            let names = spec.split(',').map(|s| s.trim().to_string()).collect();
            return self.resolve_important(&ImportantSpec::Classes(names));
        }
        Err(Error::UnknownSet(spec.to_string()))
    }

    pub fn root_node(&self) -> NodeId {
        NodeId(self.root)
    }

    pub fn leaf_node(&self, c: ClassId) -> NodeId {
        NodeId(self.leaves[c.index()])
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node.0].parent.map(NodeId)
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[node.0].children.iter().map(|&i| NodeId(i))
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.nodes[node.0].name
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Index of any tree node (inner or leaf).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

fn flatten(node: &TreeNode, parent: Option<&str>, out: &mut Vec<(String, Option<String>)>) {
    out.push((node.name.clone(), parent.map(str::to_string)));
    for child in &node.children {
        flatten(child, Some(&node.name), out);
    }
}

fn path_edges(nodes: &[Node], mut a: usize, mut b: usize) -> u32 {
    let mut edges = 0;
    while nodes[a].depth > nodes[b].depth {
        a = nodes[a].parent.expect("non-root has parent");
        edges += 1;
    }
    while nodes[b].depth > nodes[a].depth {
        b = nodes[b].parent.expect("non-root has parent");
        edges += 1;
    }
    while a != b {
        a = nodes[a].parent.expect("non-root has parent");
        b = nodes[b].parent.expect("non-root has parent");
        edges += 2;
    }
    edges
}

/// How the caller names an important-class set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImportantSpec {
    /// A set declared in the hierarchy config (`default`, `tp`, ...).
    Named(String),
    /// Explicit leaf names.
    Classes(Vec<String>),
}

/// Non-empty subset of leaves treated as safety critical.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportantSet {
    name: String,
    members: BTreeSet<ClassId>,
}

impl ImportantSet {
    pub fn new(
        name: impl Into<String>,
        members: impl IntoIterator<Item = ClassId>,
        h: &LabelHierarchy,
    ) -> Result<Self> {
        let name = name.into();
        let members: BTreeSet<ClassId> = members.into_iter().collect();
        if members.is_empty() {
            return Err(Error::EmptySet(name));
        }
        for &c in &members {
            h.check_class(c)?;
        }
        Ok(ImportantSet { name, members })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.members.contains(&c)
    }

    pub fn members(&self) -> impl ExactSizeIterator<Item = ClassId> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Membership as a dense mask indexed by `ClassId`.
    pub fn mask(&self, num_classes: usize) -> Vec<bool> {
        let mut mask = vec![false; num_classes];
        for c in &self.members {
            if let Some(m) = mask.get_mut(c.index()) {
                *m = true;
            }
        }
        mask
    }
}
