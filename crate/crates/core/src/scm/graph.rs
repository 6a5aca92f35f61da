//! DAG structure, graph surgery and d-separation.

use std::collections::VecDeque;

/// Which edges to delete before a d-separation test.
///
/// `RemoveInZw` implements the third do-calculus rule's surgery: incoming
/// edges of `x` are removed, then incoming edges of every `z` node that is
/// not an ancestor of any `w` node in that already-mutilated graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutilation<N> {
    Plain,
    RemoveIncoming { x: Vec<N> },
    RemoveInOut { x: Vec<N>, z: Vec<N> },
    RemoveInZw { x: Vec<N>, z: Vec<N>, w: Vec<N> },
}

impl<N> Mutilation<N> {
    pub fn try_map<M, E>(&self, mut f: impl FnMut(&N) -> Result<M, E>) -> Result<Mutilation<M>, E> {
        let mut all = |v: &[N]| v.iter().map(&mut f).collect::<Result<Vec<M>, E>>();
        Ok(match self {
            Mutilation::Plain => Mutilation::Plain,
            Mutilation::RemoveIncoming { x } => Mutilation::RemoveIncoming { x: all(x)? },
            Mutilation::RemoveInOut { x, z } => Mutilation::RemoveInOut { x: all(x)?, z: all(z)? },
            Mutilation::RemoveInZw { x, z, w } => Mutilation::RemoveInZw { x: all(x)?, z: all(z)?, w: all(w)? },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    pub fn from_parents(parents: Vec<Vec<usize>>) -> Self {
        let mut children = vec![Vec::new(); parents.len()];
        for (v, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(v);
            }
        }
        Self { parents, children }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut parents = vec![Vec::new(); n];
        for &(from, to) in edges {
            parents[to].push(from);
        }
        Self::from_parents(parents)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents.iter().enumerate().flat_map(|(v, ps)| ps.iter().map(move |&p| (p, v))).collect()
    }

    /// Kahn's algorithm. On failure returns one edge lying on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>, (usize, usize)> {
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every leftover node keeps a leftover parent; walking parents must
        // revisit a node, and the step that closes the loop is a cycle edge.
        let leftover: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
        let mut seen = vec![false; n];
        let mut v = (0..n).find(|&v| leftover[v]).expect("leftover node exists");
        loop {
            seen[v] = true;
            let p = *self.parents[v].iter().find(|&&p| leftover[p]).expect("leftover parent exists");
            if seen[p] {
                return Err((p, v));
            }
            v = p;
        }
    }

    /// `mask[v]` is true iff `v` is in `set` or an ancestor of a node in it.
    pub fn ancestors(&self, set: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack = set.to_vec();
        while let Some(v) = stack.pop() {
            if !mask[v] {
                mask[v] = true;
                stack.extend(self.parents[v].iter().copied());
            }
        }
        mask
    }

    pub fn without_incoming(&self, set: &[usize]) -> Dag {
        let mut parents = self.parents.clone();
        for &v in set {
            parents[v].clear();
        }
        Dag::from_parents(parents)
    }

    pub fn without_outgoing(&self, set: &[usize]) -> Dag {
        let mut drop = vec![false; self.len()];
        for &v in set {
            drop[v] = true;
        }
        let parents = self.parents.iter().map(|ps| ps.iter().copied().filter(|&p| !drop[p]).collect()).collect();
        Dag::from_parents(parents)
    }

    pub fn mutilate(&self, m: &Mutilation<usize>) -> Dag {
        match m {
            Mutilation::Plain => self.clone(),
            Mutilation::RemoveIncoming { x } => self.without_incoming(x),
            Mutilation::RemoveInOut { x, z } => self.without_incoming(x).without_outgoing(z),
            Mutilation::RemoveInZw { x, z, w } => {
                let g = self.without_incoming(x);
                let anc_w = g.ancestors(w);
                let zw: Vec<usize> = z.iter().copied().filter(|&v| !anc_w[v]).collect();
                g.without_incoming(&zw)
            }
        }
    }
}

/// Reachability d-separation test: true iff every trail between `y` and `z`
/// is blocked by `w`.
pub fn d_separated(dag: &Dag, y: &[usize], z: &[usize], w: &[usize]) -> bool {
    let n = dag.len();
    let mut observed = vec![false; n];
    for &v in w {
        observed[v] = true;
    }
    let anc_w = dag.ancestors(w);
    let mut is_z = vec![false; n];
    for &v in z {
        is_z[v] = true;
    }

    // (node, arrived from a child): "up" travel; otherwise "down".
    let mut visited = vec![[false; 2]; n];
    let mut queue: VecDeque<(usize, bool)> = y.iter().map(|&v| (v, true)).collect();
    while let Some((v, up)) = queue.pop_front() {
        let slot = usize::from(up);
        if visited[v][slot] {
            continue;
        }
        visited[v][slot] = true;
        if !observed[v] && is_z[v] {
            return false;
        }
        if up {
            if !observed[v] {
                queue.extend(dag.parents(v).iter().map(|&p| (p, true)));
                queue.extend(dag.children(v).iter().map(|&c| (c, false)));
            }
        } else {
            if !observed[v] {
                queue.extend(dag.children(v).iter().map(|&c| (c, false)));
            }
            if anc_w[v] {
                queue.extend(dag.parents(v).iter().map(|&p| (p, true)));
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Active-trail check by enumerating every simple undirected path.
    fn brute_force_separated(dag: &Dag, y: &[usize], z: &[usize], w: &[usize]) -> bool {
        let n = dag.len();
        let observed: Vec<bool> = (0..n).map(|v| w.contains(&v)).collect();
        // descendant-or-self observed
        let opens_collider: Vec<bool> = (0..n)
            .map(|v| {
                let mut stack = vec![v];
                let mut seen = vec![false; n];
                while let Some(u) = stack.pop() {
                    if observed[u] {
                        return true;
                    }
                    if !seen[u] {
                        seen[u] = true;
                        stack.extend(dag.children(u).iter().copied());
                    }
                }
                false
            })
            .collect();
        let adjacent = |a: usize, b: usize| dag.parents(b).contains(&a) || dag.parents(a).contains(&b);

        fn walk(
            path: &mut Vec<usize>,
            targets: &[usize],
            n: usize,
            adjacent: &dyn Fn(usize, usize) -> bool,
            active: &dyn Fn(&[usize]) -> bool,
        ) -> bool {
            let last = *path.last().unwrap();
            if path.len() > 1 && targets.contains(&last) && active(path) {
                return true;
            }
            for next in 0..n {
                if !path.contains(&next) && adjacent(last, next) {
                    path.push(next);
                    if walk(path, targets, n, adjacent, active) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }

        let active = |path: &[usize]| {
            path.windows(3).all(|t| {
                let (a, b, c) = (t[0], t[1], t[2]);
                let collider = dag.parents(b).contains(&a) && dag.parents(b).contains(&c);
                if collider {
                    opens_collider[b]
                } else {
                    !observed[b]
                }
            })
        };
        for &s in y {
            if z.contains(&s) {
                return false;
            }
            let mut path = vec![s];
            if walk(&mut path, z, n, &adjacent, &active) {
                return false;
            }
        }
        true
    }

    fn dag_from_mask(n: usize, mask: u64) -> Dag {
        // edges only from lower to higher index: always acyclic
        let mut edges = Vec::new();
        let mut bit = 0;
        for i in 0..n {
            for j in i + 1..n {
                if mask >> bit & 1 == 1 {
                    edges.push((i, j));
                }
                bit += 1;
            }
        }
        Dag::from_edges(n, &edges)
    }

    #[test]
    fn textbook_cases() {
        let collider = Dag::from_edges(3, &[(0, 2), (1, 2)]);
        assert!(d_separated(&collider, &[0], &[1], &[]));
        assert!(!d_separated(&collider, &[0], &[1], &[2]));
        let chain = Dag::from_edges(3, &[(0, 1), (1, 2)]);
        assert!(d_separated(&chain, &[0], &[2], &[1]));
        assert!(!d_separated(&chain, &[0], &[2], &[]));
        let fork = Dag::from_edges(3, &[(1, 0), (1, 2)]);
        assert!(d_separated(&fork, &[0], &[2], &[1]));
        // observing a descendant of a collider opens it
        let desc = Dag::from_edges(4, &[(0, 2), (1, 2), (2, 3)]);
        assert!(!d_separated(&desc, &[0], &[1], &[3]));
    }

    #[test]
    fn cycle_edge_reported() {
        let g = Dag::from_edges(3, &[(0, 1), (1, 0), (1, 2)]);
        let (a, b) = g.topological_order().unwrap_err();
        assert!((a, b) == (0, 1) || (a, b) == (1, 0));
    }

    #[test]
    fn agrees_with_path_enumeration_on_small_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(11);
        let mut checked = 0;
        for n in 2..=6usize {
            let pairs = n * (n - 1) / 2;
            for _ in 0..300 {
                let mask: u64 = rng.random::<u64>() & ((1u64 << pairs) - 1);
                let dag = dag_from_mask(n, mask);
                // random disjoint roles: 0 none, 1 y, 2 z, 3 w
                let roles: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
                let pick = |r: u8| (0..n).filter(|&v| roles[v] == r).collect::<Vec<_>>();
                let (y, z, w) = (pick(1), pick(2), pick(3));
                if y.is_empty() || z.is_empty() {
                    continue;
                }
                let fast = d_separated(&dag, &y, &z, &w);
                assert_eq!(fast, brute_force_separated(&dag, &y, &z, &w), "n={n} mask={mask:b} roles={roles:?}");
                assert_eq!(fast, d_separated(&dag, &z, &y, &w), "symmetry");
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn zw_surgery_keeps_ancestors_of_w() {
        // z0 -> w, z1 isolated target of an edge from y
        let g = Dag::from_edges(4, &[(0, 1), (3, 2)]);
        let m = g.mutilate(&Mutilation::RemoveInZw { x: vec![], z: vec![0, 2], w: vec![1] });
        assert_eq!(m.parents(2), &[] as &[usize]);
        assert_eq!(m.parents(1), &[0]);
    }
}
