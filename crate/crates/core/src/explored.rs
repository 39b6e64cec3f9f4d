//! Arena of the explored part of a tree.
//!
//! A node is materialized exactly when the edge to its parent is in the
//! reinforced set (initially reinforced or crossed). Children are kept in the
//! order they were first materialized, which is the visitation order needed
//! by the coupling.

use crate::tree::{LazyTree, PathKey, VertexId};

pub(crate) const ROOT_PARENT: u32 = 0;
pub(crate) const ROOT: u32 = 1;
pub(crate) const NONE: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub parent: u32,
    pub index: u32,
    pub level: i64,
    pub key: PathKey,
    pub arity: u32,
    /// `(child index, node)` in materialization order.
    pub children: Vec<(u32, u32)>,
}

impl Node {
    #[inline]
    pub fn child_node(&self, index: u32) -> Option<u32> {
        self.children.iter().find(|(i, _)| *i == index).map(|(_, n)| *n)
    }

    #[inline]
    pub fn is_reinforced(&self, index: u32) -> bool {
        self.children.iter().any(|(i, _)| *i == index)
    }

    /// The `j`-th (1-based) fresh child index in ascending order.
    pub fn nth_fresh(&self, j: u32) -> u32 {
        let mut seen = 0;
        for c in 1..=self.arity {
            if !self.is_reinforced(c) {
                seen += 1;
                if seen == j {
                    return c;
                }
            }
        }
        panic!("fresh child {j} out of range");
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Arena {
    pub nodes: Vec<Node>,
}

impl Arena {
    /// `r-1` and the root, with the edge between them reinforced.
    pub fn new(tree: &LazyTree) -> Self {
        let rp = Node {
            parent: NONE,
            index: 0,
            level: -1,
            key: PathKey::ROOT_PARENT,
            arity: 1,
            children: vec![(1, ROOT)],
        };
        let root_key = PathKey::root();
        let root = Node {
            parent: ROOT_PARENT,
            index: 1,
            level: 0,
            key: root_key,
            arity: tree.arity_at(root_key, 0),
            children: Vec::new(),
        };
        Self { nodes: vec![rp, root] }
    }

    #[inline]
    pub fn get(&self, n: u32) -> &Node {
        &self.nodes[n as usize]
    }

    /// Materialize child `index` of `n` if needed and return its node.
    pub fn child(&mut self, tree: &LazyTree, n: u32, index: u32) -> u32 {
        if let Some(c) = self.get(n).child_node(index) {
            return c;
        }
        let parent = self.get(n);
        let key = parent.key.child(index);
        let level = parent.level + 1;
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            parent: n,
            index,
            level,
            key,
            arity: tree.arity_at(key, level),
            children: Vec::new(),
        });
        self.nodes[n as usize].children.push((index, id));
        id
    }

    /// Materialize the whole path to `v` and return its node.
    pub fn locate(&mut self, tree: &LazyTree, v: &VertexId) -> u32 {
        match v {
            VertexId::RootParent => ROOT_PARENT,
            VertexId::Node(p) => p.iter().fold(ROOT, |n, &i| self.child(tree, n, i)),
        }
    }

    pub fn vertex(&self, mut n: u32) -> VertexId {
        if n == ROOT_PARENT {
            return VertexId::RootParent;
        }
        let mut path = Vec::with_capacity(self.get(n).level as usize);
        while n != ROOT {
            let node = self.get(n);
            path.push(node.index);
            n = node.parent;
        }
        path.reverse();
        VertexId::Node(path)
    }

    /// All materialized vertices except `r-1`, i.e. the reinforced edges.
    pub fn reinforced(&self) -> impl Iterator<Item = u32> + '_ {
        1..self.nodes.len() as u32
    }
}
