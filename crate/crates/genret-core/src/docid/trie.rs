use alloc::string::String;
use alloc::vec::Vec;

use super::DocIdScheme;
use crate::error::{Error, Result};

/// A trie transition: an identifier token or the end-of-identifier marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Next {
    Token(u32),
    End,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    /// Sorted by token.
    children: Vec<(u32, usize)>,
    terminal: Option<String>,
}

/// Prefix tree over identifier sequences. Every identifier ends with an
/// implicit end marker, so one identifier may extend another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trie {
    nodes: Vec<TrieNode>,
}

pub fn build_trie(scheme: &DocIdScheme) -> Result<Trie> {
    Trie::build(scheme, true)
}

impl Trie {
    /// With `allow_prefixes == false`, an identifier that is a strict prefix
    /// of another is rejected.
    pub fn build(scheme: &DocIdScheme, allow_prefixes: bool) -> Result<Trie> {
        let mut trie = Trie { nodes: alloc::vec![TrieNode::default()] };
        for (doc, seq) in scheme.iter() {
            let mut at = 0;
            for &t in seq {
                at = match trie.nodes[at].children.binary_search_by_key(&t, |c| c.0) {
                    Ok(i) => trie.nodes[at].children[i].1,
                    Err(i) => {
                        let id = trie.nodes.len();
                        trie.nodes.push(TrieNode::default());
                        trie.nodes[at].children.insert(i, (t, id));
                        id
                    }
                };
            }
            if let Some(prev) = &trie.nodes[at].terminal {
                return Err(Error::NonInjective(prev.clone(), String::from(doc)));
            }
            trie.nodes[at].terminal = Some(String::from(doc));
        }
        if !allow_prefixes {
            for node in &trie.nodes {
                if let (Some(doc), Some(&(_, child))) = (&node.terminal, node.children.first()) {
                    let longer = trie.first_terminal_below(child);
                    return Err(Error::PrefixCollision(doc.clone(), longer));
                }
            }
        }
        Ok(trie)
    }

    fn first_terminal_below(&self, mut at: usize) -> String {
        loop {
            if let Some(d) = &self.nodes[at].terminal {
                return d.clone();
            }
            at = self.nodes[at].children[0].1;
        }
    }

    /// Node count including the root, excluding end markers.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub const ROOT: usize = 0;

    pub fn child(&self, node: usize, token: u32) -> Option<usize> {
        let ch = &self.nodes[node].children;
        ch.binary_search_by_key(&token, |c| c.0).ok().map(|i| ch[i].1)
    }

    pub fn node_at(&self, prefix: &[u32]) -> Option<usize> {
        prefix.iter().try_fold(Self::ROOT, |at, &t| self.child(at, t))
    }

    pub fn terminal(&self, node: usize) -> Option<&str> {
        self.nodes[node].terminal.as_deref()
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.nodes[node].children.iter().copied()
    }

    /// Transitions available after `node`: tokens in order, then `End` if an
    /// identifier finishes here.
    pub fn next_at(&self, node: usize) -> Vec<Next> {
        let n = &self.nodes[node];
        let mut out: Vec<Next> = n.children.iter().map(|&(t, _)| Next::Token(t)).collect();
        if n.terminal.is_some() {
            out.push(Next::End);
        }
        out
    }

    /// Empty iff `prefix` is not a prefix of any identifier.
    pub fn valid_next(&self, prefix: &[u32]) -> Vec<Next> {
        match self.node_at(prefix) {
            Some(n) => self.next_at(n),
            None => Vec::new(),
        }
    }

    pub fn lookup(&self, seq: &[u32]) -> Option<&str> {
        self.node_at(seq).and_then(|n| self.terminal(n))
    }

    /// All (identifier, doc id) paths, depth first in token order.
    pub fn paths(&self) -> Vec<(Vec<u32>, String)> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![(Self::ROOT, Vec::new())];
        while let Some((at, prefix)) = stack.pop() {
            if let Some(d) = &self.nodes[at].terminal {
                out.push((prefix.clone(), d.clone()));
            }
            for &(t, ch) in self.nodes[at].children.iter().rev() {
                let mut p = prefix.clone();
                p.push(t);
                stack.push((ch, p));
            }
        }
        out
    }
}
