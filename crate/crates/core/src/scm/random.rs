//! Seeded random models for property sweeps.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{NodeSpec, Result, Scm};

#[derive(Debug, Clone, Copy)]
pub struct RandomScmSpec {
    pub nodes: usize,
    /// Domains are drawn uniformly from `2..=max_domain`.
    pub max_domain: usize,
    /// Probability of each forward edge `i → j` (i < j).
    pub edge_prob: f64,
}

/// `rows` CPT rows of width `domain`, each a Dirichlet(1) draw.
pub fn random_cpt<R: Rng>(rng: &mut R, rows: usize, domain: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let draws: Vec<f64> = (0..domain).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
            let total: f64 = draws.iter().sum();
            let mut row: Vec<f64> = draws.iter().map(|x| x / total).collect();
            // put the rounding residue on the largest entry so rows sum to 1 tightly
            let residue = 1.0 - row.iter().sum::<f64>();
            let argmax = (0..domain).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
            row[argmax] += residue;
            row
        })
        .collect()
}

/// Random DAG over nodes `V0..V{n−1}` (edges only from lower to higher index)
/// with Dirichlet CPT rows.
pub fn random_scm<R: Rng>(rng: &mut R, spec: RandomScmSpec) -> Result<Scm> {
    let domains: Vec<usize> = (0..spec.nodes).map(|_| rng.random_range(2..=spec.max_domain.max(2))).collect();
    let mut specs = Vec::with_capacity(spec.nodes);
    for j in 0..spec.nodes {
        let parents: Vec<usize> = (0..j).filter(|_| rng.random::<f64>() < spec.edge_prob).collect();
        let rows: usize = parents.iter().map(|&p| domains[p]).product();
        let names: Vec<String> = parents.iter().map(|p| format!("V{p}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        specs.push(NodeSpec::new(format!("V{j}"), domains[j], &refs, random_cpt(rng, rows, domains[j])));
    }
    Scm::new(specs)
}
