//! Tree topology and the two-pass message schedule.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HAND_KEYPOINTS: usize = 21;

const HAND_NAMES: [&str; HAND_KEYPOINTS] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "little_mcp",
    "little_pip",
    "little_dip",
    "little_tip",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("graph has no nodes")]
    Empty,
    #[error("root {root} out of range for {num_nodes} nodes")]
    RootOutOfRange { root: usize, num_nodes: usize },
    #[error("edge ({0}, {1}) references a node out of range")]
    NodeOutOfRange(usize, usize),
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) closes a cycle")]
    Cycle(usize, usize),
    #[error("node {0} is not connected to node 0")]
    Disconnected(usize),
    #[error("expected {expected} edges, found {found}")]
    WrongEdgeCount { expected: usize, found: usize },
    #[error("{found} names given for {num_nodes} nodes")]
    NameCount { found: usize, num_nodes: usize },
}

/// Undirected tree over `num_nodes` keypoints. Edges are stored as `(i, j)`
/// with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeGraph {
    pub num_nodes: usize,
    pub root: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl TreeGraph {
    /// Build and validate. Edge endpoints are reordered so that `i < j`.
    pub fn new(num_nodes: usize, root: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self {
            num_nodes,
            root,
            edges: edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect(),
            names: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        self.names = Some(names);
        self.validate()?;
        Ok(self)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Checks edge count, connectivity and acyclicity.
    pub fn validate(&self) -> Result<(), TreeError> {
        let n = self.num_nodes;
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if self.root >= n {
            return Err(TreeError::RootOutOfRange {
                root: self.root,
                num_nodes: n,
            });
        }
        if let Some(names) = &self.names {
            if names.len() != n {
                return Err(TreeError::NameCount {
                    found: names.len(),
                    num_nodes: n,
                });
            }
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(TreeError::NodeOutOfRange(a, b));
            }
            if a == b {
                return Err(TreeError::SelfLoop(a));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(TreeError::Cycle(a, b));
            }
            parent[ra] = rb;
        }
        let r0 = find(&mut parent, 0);
        for v in 1..n {
            if find(&mut parent, v) != r0 {
                return Err(TreeError::Disconnected(v));
            }
        }
        // acyclic + connected already implies n - 1 edges
        if self.edges.len() != n - 1 {
            return Err(TreeError::WrongEdgeCount {
                expected: n - 1,
                found: self.edges.len(),
            });
        }
        Ok(())
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == node || b == node).count()
    }

    /// `parent[v]` for every node, `None` for the root.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut parent = vec![None; self.num_nodes];
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    stack.push(w);
                }
            }
        }
        parent
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let g: TreeGraph = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<graph json>".into(),
            source: e,
        })?;
        let g = Self {
            edges: g.edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect(),
            ..g
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.into(),
                source,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

/// The 21-keypoint hand: wrist (node 0) with five four-joint chains,
/// thumb, index, middle, ring and little finger in that order.
pub fn default_hand_tree() -> TreeGraph {
    let mut edges = Vec::with_capacity(20);
    for f in 0..5 {
        let base = 1 + 4 * f;
        edges.push((0, base));
        for j in base..base + 3 {
            edges.push((j, j + 1));
        }
    }
    TreeGraph::new(HAND_KEYPOINTS, 0, edges)
        .and_then(|g| g.with_names(HAND_NAMES.iter().map(|s| s.to_string()).collect()))
        .expect("hand tree is valid")
}

pub type DirectedEdge = (usize, usize);

/// Execution order of the directed messages plus the kernel channel each
/// directed edge reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    order: Vec<DirectedEdge>,
    channels: HashMap<DirectedEdge, usize>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[DirectedEdge] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = DirectedEdge> + '_ {
        self.order.iter().copied()
    }

    pub fn channel_of(&self, from: usize, to: usize) -> Option<usize> {
        self.channels.get(&(from, to)).copied()
    }

    /// Directed edges listed by channel index.
    pub fn edges_by_channel(&self) -> Vec<DirectedEdge> {
        let mut out = vec![(0, 0); self.channels.len()];
        for (&e, &c) in &self.channels {
            out[c] = e;
        }
        out
    }

    /// Same channel assignment, different execution order. The new order
    /// must be a dependency-valid permutation of this one.
    pub fn reordered(&self, graph: &TreeGraph, order: Vec<DirectedEdge>) -> Result<Self> {
        let s = Schedule {
            order,
            channels: self.channels.clone(),
        };
        s.check(graph)?;
        Ok(s)
    }

    /// Replays the order and checks that every directed edge appears once
    /// and only after all of its prerequisites.
    pub fn check(&self, graph: &TreeGraph) -> Result<()> {
        let expected = 2 * graph.num_edges();
        if self.order.len() != expected {
            return Err(Error::ScheduleViolation(format!(
                "schedule has {} messages, tree needs {expected}",
                self.order.len()
            )));
        }
        let adj = graph.adjacency();
        let mut done: HashMap<DirectedEdge, usize> = HashMap::new();
        for (pos, &(i, j)) in self.order.iter().enumerate() {
            if i >= graph.num_nodes || !adj[i].contains(&j) {
                return Err(Error::ScheduleViolation(format!(
                    "position {pos}: ({i}->{j}) is not an edge"
                )));
            }
            if self.channel_of(i, j).is_none() {
                return Err(Error::ScheduleViolation(format!(
                    "position {pos}: ({i}->{j}) has no kernel channel"
                )));
            }
            if let Some(&first) = done.get(&(i, j)) {
                return Err(Error::ScheduleViolation(format!(
                    "({i}->{j}) appears at positions {first} and {pos}"
                )));
            }
            for &k in adj[i].iter().filter(|&&k| k != j) {
                if !done.contains_key(&(k, i)) {
                    return Err(Error::ScheduleViolation(format!(
                        "position {pos}: ({i}->{j}) sent before ({k}->{i})"
                    )));
                }
            }
            done.insert((i, j), pos);
        }
        Ok(())
    }
}

/// Leaves-to-root pass followed by root-to-leaves pass. Children are visited
/// in ascending node order. Channels are numbered in schedule order.
pub fn build_schedule(graph: &TreeGraph) -> Result<Schedule> {
    graph.validate()?;
    let adj = graph.adjacency();
    let parent = graph.parents();
    let parent = &parent;
    let children = |v: usize| -> Vec<usize> { adj[v].iter().copied().filter(|&w| parent[v] != Some(w)).collect() };

    let mut inward = Vec::with_capacity(graph.num_edges());
    // iterative post-order
    let mut stack = vec![(graph.root, false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            if let Some(p) = parent[v] {
                inward.push((v, p));
            }
            continue;
        }
        stack.push((v, true));
        let kids = children(v);
        for &c in kids.iter().rev() {
            stack.push((c, false));
        }
    }

    // pre-order: each parent->child edge is emitted when the child is entered
    let mut outward = Vec::with_capacity(graph.num_edges());
    let mut stack = children(graph.root);
    stack.reverse();
    while let Some(c) = stack.pop() {
        outward.push((parent[c].expect("non-root"), c));
        let kids = children(c);
        stack.extend(kids.into_iter().rev());
    }

    let order: Vec<DirectedEdge> = inward.into_iter().chain(outward).collect();
    let channels = order.iter().enumerate().map(|(c, &e)| (e, c)).collect();
    let s = Schedule { order, channels };
    s.check(graph)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tree_shape() {
        let g = default_hand_tree();
        assert_eq!(g.num_nodes, 21);
        assert_eq!(g.num_edges(), 20);
        assert_eq!(g.degree(0), 5);
        for f in 0..5 {
            assert_eq!(g.degree(4 + 4 * f), 1);
            assert!(g.edges.contains(&(0, 1 + 4 * f)));
        }
        g.validate().unwrap();
    }

    #[test]
    fn validate_examples() {
        assert!(TreeGraph::new(3, 0, vec![(0, 1), (1, 2)]).is_ok());
        let g = TreeGraph {
            num_nodes: 3,
            root: 0,
            edges: vec![(0, 1), (1, 2), (0, 2)],
            names: None,
        };
        assert_eq!(g.validate(), Err(TreeError::Cycle(0, 2)));
        let g = TreeGraph {
            num_nodes: 4,
            root: 0,
            edges: vec![(0, 1), (2, 3)],
            names: None,
        };
        assert!(matches!(g.validate(), Err(TreeError::Disconnected(_))));
        let g = TreeGraph {
            num_nodes: 2,
            root: 2,
            edges: vec![(0, 1)],
            names: None,
        };
        assert!(matches!(g.validate(), Err(TreeError::RootOutOfRange { .. })));
    }

    #[test]
    fn two_node_schedule() {
        let g = TreeGraph::new(2, 0, vec![(0, 1)]).unwrap();
        let s = build_schedule(&g).unwrap();
        assert_eq!(s.order(), &[(1, 0), (0, 1)]);
        assert_eq!(s.channel_of(1, 0), Some(0));
        assert_eq!(s.channel_of(0, 1), Some(1));
    }

    #[test]
    fn hand_schedule() {
        let g = default_hand_tree();
        let s = build_schedule(&g).unwrap();
        assert_eq!(s.len(), 40);
        s.check(&g).unwrap();
        // thumb chain collapses first, tip inward
        assert_eq!(&s.order()[..4], &[(4, 3), (3, 2), (2, 1), (1, 0)]);
        assert_eq!(s.order()[20], (0, 1));
        assert_eq!(s.edges_by_channel(), s.order());
    }

    #[test]
    fn reordering_rejects_invalid() {
        let g = TreeGraph::new(3, 0, vec![(0, 1), (1, 2)]).unwrap();
        let s = build_schedule(&g).unwrap();
        assert!(s.reordered(&g, vec![(1, 0), (2, 1), (0, 1), (1, 2)]).is_err());
        assert!(s.reordered(&g, vec![(2, 1), (1, 0), (0, 1)]).is_err());
        let alt = s.reordered(&g, vec![(2, 1), (0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(alt.channel_of(2, 1), s.channel_of(2, 1));
    }

    #[test]
    fn json_round_trip() {
        let g = default_hand_tree();
        let back = TreeGraph::from_json_str(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let text = r#"{"num_nodes": 3, "root": 0, "edges": [[1, 0], [2, 1]]}"#;
        let g = TreeGraph::from_json_str(text).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert!(TreeGraph::from_json_str(r#"{"num_nodes": 3, "root": 0, "edges": [[0, 1]]}"#).is_err());
    }
}
