//! Interest hierarchy: merging equivalent interests, major-interest
//! assignment, inclusion-based tree construction, and path queries.
//!
//! Communities are interests; an interest whose member set contains
//! another's entirely becomes an ancestor of it. Community 0 is a synthetic
//! root adopting every interest with no containing interest, so the result
//! is always a single rooted multi-tree.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::BufRead;
use std::io::Write;

use thiserror::Error;

use crate::trace::{InterestMembership, NodeId};

/// Community (interest) identifier. 0 is reserved for the synthetic root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommunityId(pub u32);

pub const ROOT: CommunityId = CommunityId(0);

impl std::fmt::Display for CommunityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("interests {0} and {1} have identical member sets; merge first")]
    DuplicateMemberSets(CommunityId, CommunityId),
    #[error("interest id 0 is reserved for the root")]
    ReservedRootId,
    #[error("node {0} belongs to no interest")]
    NodeWithoutInterest(NodeId),
    #[error("unknown community {0}")]
    UnknownCommunity(CommunityId),
    #[error("community {0} does not reach the root")]
    Unrooted(CommunityId),
    #[error("community {child} is not included in its parent {parent}")]
    InclusionViolated { child: CommunityId, parent: CommunityId },
    #[error("node {node} is not a member of its major interest {community}")]
    MajorNotMember { node: NodeId, community: CommunityId },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a node's single routing community is chosen from its interest list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MajorInterestRule {
    /// Highest interest id in the node's list (the default).
    HighestId,
    /// Smallest member set, ties broken by higher id.
    SmallestCommunity,
}

/// Rooted multi-tree of communities with per-community member sets and the
/// per-node major-interest assignment. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestTree {
    parent: BTreeMap<CommunityId, CommunityId>,
    members: BTreeMap<CommunityId, BTreeSet<NodeId>>,
    depth: BTreeMap<CommunityId, u32>,
    major: BTreeMap<NodeId, CommunityId>,
}

/// Per-layer share of the tree, root layer first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerStat {
    /// 1-based layer number counted from the root down.
    pub layer: u32,
    /// Communities sitting in this layer.
    pub interests: usize,
    /// Nodes whose major interest sits in this layer.
    pub nodes: usize,
}

/// Collapses interests with identical member sets into one, renumbering
/// densely from 1 in ascending order of each class's smallest original id.
pub fn merge_equivalent_interests(raw: &[InterestMembership]) -> Vec<InterestMembership> {
    let mut class_min: BTreeMap<&BTreeSet<NodeId>, u32> = BTreeMap::new();
    for m in raw {
        class_min
            .entry(&m.members)
            .and_modify(|min| *min = (*min).min(m.interest_id))
            .or_insert(m.interest_id);
    }
    let mut classes: Vec<(u32, &BTreeSet<NodeId>)> =
        class_min.into_iter().map(|(set, min)| (min, set)).collect();
    classes.sort_by_key(|(min, _)| *min);
    classes
        .into_iter()
        .enumerate()
        .map(|(i, (_, set))| InterestMembership {
            interest_id: i as u32 + 1,
            members: set.clone(),
        })
        .collect()
}

/// Picks each node's major interest under the given rule. When
/// `expected_nodes` is set, every node in `0..expected_nodes` must appear
/// in at least one interest.
pub fn assign_major_interests(
    merged: &[InterestMembership],
    rule: MajorInterestRule,
    expected_nodes: Option<usize>,
) -> Result<BTreeMap<NodeId, CommunityId>, TreeError> {
    let mut per_node: BTreeMap<NodeId, Vec<&InterestMembership>> = BTreeMap::new();
    for m in merged {
        for node in &m.members {
            per_node.entry(*node).or_default().push(m);
        }
    }
    if let Some(n) = expected_nodes {
        for id in 0..n {
            if !per_node.contains_key(&NodeId(id as u32)) {
                return Err(TreeError::NodeWithoutInterest(NodeId(id as u32)));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (node, interests) in per_node {
        let chosen = match rule {
            MajorInterestRule::HighestId => interests
                .iter()
                .max_by_key(|m| m.interest_id)
                .expect("nonempty"),
            MajorInterestRule::SmallestCommunity => interests
                .iter()
                .min_by_key(|m| (m.members.len(), std::cmp::Reverse(m.interest_id)))
                .expect("nonempty"),
        };
        out.insert(node, CommunityId(chosen.interest_id));
    }
    Ok(out)
}

/// Builds the inclusion tree: scanning interests in descending id order,
/// an interest's parent is the largest smaller id whose member set contains
/// its own; interests with no container become children of the root.
pub fn build_tree(merged: &[InterestMembership]) -> Result<InterestTree, TreeError> {
    let mut by_id: BTreeMap<CommunityId, &BTreeSet<NodeId>> = BTreeMap::new();
    for m in merged {
        if m.interest_id == 0 {
            return Err(TreeError::ReservedRootId);
        }
        by_id.insert(CommunityId(m.interest_id), &m.members);
    }
    let ids: Vec<CommunityId> = by_id.keys().copied().collect();
    for (i, x) in ids.iter().enumerate() {
        for y in &ids[i + 1..] {
            if by_id[x] == by_id[y] {
                return Err(TreeError::DuplicateMemberSets(*x, *y));
            }
        }
    }

    let mut parent: BTreeMap<CommunityId, CommunityId> = BTreeMap::new();
    parent.insert(ROOT, ROOT);
    for n in ids.iter().rev() {
        let mine = by_id[n];
        let found = ids
            .iter()
            .rev()
            .filter(|m| **m < *n)
            .find(|m| by_id[*m].is_superset(mine));
        parent.insert(*n, found.copied().unwrap_or(ROOT));
    }

    let mut members: BTreeMap<CommunityId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut root_members = BTreeSet::new();
    for (id, set) in &by_id {
        members.insert(*id, (*set).clone());
        if parent[id] == ROOT {
            root_members.extend(set.iter().copied());
        }
    }
    members.insert(ROOT, root_members);

    InterestTree::from_parts(parent, members)
}

impl InterestTree {
    /// Assembles a tree from an explicit parent map (root self-edge may be
    /// omitted) and member sets, validating rootedness, acyclicity, and the
    /// inclusion invariant. Communities absent from `members` get empty sets.
    pub fn from_parts(
        mut parent: BTreeMap<CommunityId, CommunityId>,
        mut members: BTreeMap<CommunityId, BTreeSet<NodeId>>,
    ) -> Result<Self, TreeError> {
        parent.insert(ROOT, ROOT);
        for c in parent.keys() {
            members.entry(*c).or_default();
        }
        for p in parent.values() {
            if !parent.contains_key(p) {
                return Err(TreeError::UnknownCommunity(*p));
            }
        }

        let mut depth: BTreeMap<CommunityId, u32> = BTreeMap::new();
        depth.insert(ROOT, 0);
        for start in parent.keys() {
            let mut chain = Vec::new();
            let mut cur = *start;
            while !depth.contains_key(&cur) {
                chain.push(cur);
                cur = parent[&cur];
                if chain.len() > parent.len() {
                    return Err(TreeError::Unrooted(*start));
                }
            }
            let mut d = depth[&cur];
            for c in chain.into_iter().rev() {
                d += 1;
                depth.insert(c, d);
            }
        }

        for (c, p) in &parent {
            if *c == ROOT {
                continue;
            }
            if !members[p].is_superset(&members[c]) {
                return Err(TreeError::InclusionViolated {
                    child: *c,
                    parent: *p,
                });
            }
        }

        Ok(InterestTree {
            parent,
            members,
            depth,
            major: BTreeMap::new(),
        })
    }

    /// Stores the major-interest assignment, checking each node belongs to
    /// its chosen community.
    pub fn set_major_interests(
        &mut self,
        major: BTreeMap<NodeId, CommunityId>,
    ) -> Result<(), TreeError> {
        for (node, community) in &major {
            let set = self
                .members
                .get(community)
                .ok_or(TreeError::UnknownCommunity(*community))?;
            if !set.contains(node) {
                return Err(TreeError::MajorNotMember {
                    node: *node,
                    community: *community,
                });
            }
        }
        self.major = major;
        Ok(())
    }

    pub fn contains(&self, c: CommunityId) -> bool {
        self.parent.contains_key(&c)
    }

    pub fn communities(&self) -> impl Iterator<Item = CommunityId> + '_ {
        self.parent.keys().copied()
    }

    pub fn community_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent_of(&self, c: CommunityId) -> Result<CommunityId, TreeError> {
        self.parent
            .get(&c)
            .copied()
            .ok_or(TreeError::UnknownCommunity(c))
    }

    pub fn members_of(&self, c: CommunityId) -> Result<&BTreeSet<NodeId>, TreeError> {
        self.members.get(&c).ok_or(TreeError::UnknownCommunity(c))
    }

    pub fn major_of(&self, node: NodeId) -> Option<CommunityId> {
        self.major.get(&node).copied()
    }

    pub fn major_interests(&self) -> &BTreeMap<NodeId, CommunityId> {
        &self.major
    }

    pub fn depth_of(&self, c: CommunityId) -> Result<u32, TreeError> {
        self.depth
            .get(&c)
            .copied()
            .ok_or(TreeError::UnknownCommunity(c))
    }

    /// 1-based layer counted from the root down (root = layer 1).
    pub fn layer_of(&self, c: CommunityId) -> Result<u32, TreeError> {
        Ok(self.depth_of(c)? + 1)
    }

    /// Number of layers (= max depth + 1).
    pub fn height(&self) -> u32 {
        self.depth.values().copied().max().unwrap_or(0) + 1
    }

    /// Lowest common ancestor of two communities.
    pub fn common_parent(
        &self,
        a: CommunityId,
        b: CommunityId,
    ) -> Result<CommunityId, TreeError> {
        let mut x = a;
        let mut y = b;
        let mut dx = self.depth_of(x)?;
        let mut dy = self.depth_of(y)?;
        while dx > dy {
            x = self.parent[&x];
            dx -= 1;
        }
        while dy > dx {
            y = self.parent[&y];
            dy -= 1;
        }
        while x != y {
            x = self.parent[&x];
            y = self.parent[&y];
        }
        Ok(x)
    }

    /// Community sequence from `from` up to the common parent and down to
    /// `to`, endpoints inclusive, common parent exactly once.
    pub fn com_seq(&self, from: CommunityId, to: CommunityId) -> Result<Vec<CommunityId>, TreeError> {
        let lca = self.common_parent(from, to)?;
        let mut seq = Vec::new();
        let mut cur = from;
        while cur != lca {
            seq.push(cur);
            cur = self.parent[&cur];
        }
        seq.push(lca);
        let mut down = Vec::new();
        let mut cur = to;
        while cur != lca {
            down.push(cur);
            cur = self.parent[&cur];
        }
        seq.extend(down.into_iter().rev());
        Ok(seq)
    }

    /// Ascending chain from a community to the root, both inclusive.
    pub fn path_to_root(&self, c: CommunityId) -> Result<Vec<CommunityId>, TreeError> {
        self.com_seq(c, ROOT)
    }

    /// Interest and major-interest-node counts per layer, root layer first.
    /// Interest sums over layers equal the community count; node sums equal
    /// the number of nodes with a major interest.
    pub fn layer_stats(&self) -> Vec<LayerStat> {
        let height = self.height();
        let mut stats: Vec<LayerStat> = (1..=height)
            .map(|layer| LayerStat {
                layer,
                interests: 0,
                nodes: 0,
            })
            .collect();
        for d in self.depth.values() {
            stats[*d as usize].interests += 1;
        }
        for c in self.major.values() {
            stats[self.depth[c] as usize].nodes += 1;
        }
        stats
    }

    /// Writes `community_id,parent_id,member_list` rows, members
    /// space-separated.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "community_id,parent_id,members")?;
        for (c, p) in &self.parent {
            let members: Vec<String> = self.members[c].iter().map(|n| n.to_string()).collect();
            writeln!(w, "{},{},{}", c, p, members.join(" "))?;
        }
        Ok(())
    }

    pub fn read_csv(reader: impl BufRead) -> Result<Self, TreeError> {
        let mut parent = BTreeMap::new();
        let mut members = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("community_id") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(TreeError::Malformed {
                    line: lineno,
                    msg: "expected community_id, parent_id, members".to_string(),
                });
            }
            let c: u32 = fields[0].trim().parse().map_err(|_| TreeError::Malformed {
                line: lineno,
                msg: format!("bad community id `{}`", fields[0]),
            })?;
            let p: u32 = fields[1].trim().parse().map_err(|_| TreeError::Malformed {
                line: lineno,
                msg: format!("bad parent id `{}`", fields[1]),
            })?;
            let mut set = BTreeSet::new();
            for tok in fields[2].split_whitespace() {
                let n: u32 = tok.parse().map_err(|_| TreeError::Malformed {
                    line: lineno,
                    msg: format!("bad member id `{tok}`"),
                })?;
                set.insert(NodeId(n));
            }
            parent.insert(CommunityId(c), CommunityId(p));
            members.insert(CommunityId(c), set);
        }
        InterestTree::from_parts(parent, members)
    }

    /// Writes `node_id,community_id` rows for the major-interest map.
    pub fn write_majors_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "node_id,community_id")?;
        for (node, c) in &self.major {
            writeln!(w, "{},{}", node, c)?;
        }
        Ok(())
    }

    pub fn read_majors_csv(
        reader: impl BufRead,
    ) -> Result<BTreeMap<NodeId, CommunityId>, TreeError> {
        let mut out = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("node_id") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(TreeError::Malformed {
                    line: lineno,
                    msg: "expected node_id, community_id".to_string(),
                });
            }
            let n: u32 = fields[0].trim().parse().map_err(|_| TreeError::Malformed {
                line: lineno,
                msg: format!("bad node id `{}`", fields[0]),
            })?;
            let c: u32 = fields[1].trim().parse().map_err(|_| TreeError::Malformed {
                line: lineno,
                msg: format!("bad community id `{}`", fields[1]),
            })?;
            out.insert(NodeId(n), CommunityId(c));
        }
        Ok(out)
    }
}
