//! Numerical checks of the three do-calculus rules.

use super::{Assignment, Mutilation, Result, Scm, ScmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `P(y|do(x),z,w) = P(y|do(x),w)` if `(Y ⊥ Z | X,W)` with X's incoming edges cut.
    InsertDeleteObservation = 1,
    /// `P(y|do(x),do(z),w) = P(y|do(x),z,w)` if `(Y ⊥ Z | X,W)` with X's incoming and Z's outgoing edges cut.
    ActionObservationExchange = 2,
    /// `P(y|do(x),do(z),w) = P(y|do(x),w)` if `(Y ⊥ Z | X,W)` with X's and Z(W)'s incoming edges cut.
    InsertDeleteAction = 3,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::InsertDeleteObservation, Rule::ActionObservationExchange, Rule::InsertDeleteAction];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Rule> {
        Self::ALL.into_iter().find(|r| r.number() == n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleCheck {
    /// The rule's d-separation precondition.
    pub applicable: bool,
    /// Max over the grid of `|LHS − RHS|` across all target cells.
    pub max_abs_diff: f64,
    /// Grid points where both sides were defined.
    pub points: usize,
}

/// Values of X ∪ Z ∪ W at which both sides of a rule are compared.
#[derive(Debug, Clone, Default)]
pub struct AssignmentGrid(pub Vec<Assignment>);

impl AssignmentGrid {
    /// Cartesian product of the full domains of `nodes`.
    pub fn full(scm: &Scm, nodes: &[&str]) -> Result<Self> {
        let domains = nodes.iter().map(|n| scm.domain_size(n)).collect::<Result<Vec<_>>>()?;
        let mut points = vec![Assignment::new()];
        for (name, &d) in nodes.iter().zip(&domains) {
            points = points
                .into_iter()
                .flat_map(|a| (0..d).map(move |v| a.clone().with(*name, v)))
                .collect();
        }
        Ok(Self(points))
    }
}

fn restrict(a: &Assignment, nodes: &[&str]) -> Assignment {
    nodes.iter().filter_map(|n| a.get(n).map(|v| (*n, v))).collect()
}

fn check_disjoint(scm: &Scm, sets: [&[&str]; 4]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for set in sets {
        for n in set {
            scm.id(n)?;
            if !seen.insert(*n) {
                return Err(ScmError::DisjointnessViolation(n.to_string()));
            }
        }
    }
    Ok(())
}

/// Evaluates one do-calculus rule: its graphical precondition, and the
/// largest numerical discrepancy between the two sides over `grid`.
///
/// The discrepancy is always computed, so a failed precondition can be
/// paired with a demonstrated gap. Grid points where either side conditions
/// on a zero-probability event are skipped.
pub fn check_docalc_rule(
    scm: &Scm,
    rule: Rule,
    x: &[&str],
    y: &[&str],
    z: &[&str],
    w: &[&str],
    grid: &AssignmentGrid,
) -> Result<RuleCheck> {
    check_disjoint(scm, [x, y, z, w])?;
    let owned = |s: &[&str]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>();
    let mutilation = match rule {
        Rule::InsertDeleteObservation => Mutilation::RemoveIncoming { x: owned(x) },
        Rule::ActionObservationExchange => Mutilation::RemoveInOut { x: owned(x), z: owned(z) },
        Rule::InsertDeleteAction => Mutilation::RemoveInZw { x: owned(x), z: owned(z), w: owned(w) },
    };
    let mutilation = mutilation.try_map(|n| scm.id(n))?;
    let dag = scm.dag().mutilate(&mutilation);
    let xw: Vec<usize> = scm.ids(x)?.into_iter().chain(scm.ids(w)?).collect();
    let applicable = super::d_separated(&dag, &scm.ids(y)?, &scm.ids(z)?, &xw);

    let mut max_abs_diff: f64 = 0.0;
    let mut points = 0;
    for point in &grid.0 {
        let (xa, za, wa) = (restrict(point, x), restrict(point, z), restrict(point, w));
        let (lhs, rhs) = match rule {
            Rule::InsertDeleteObservation => (scm.query(y, &za.merged(&wa), &xa), scm.query(y, &wa, &xa)),
            Rule::ActionObservationExchange => (scm.query(y, &wa, &xa.merged(&za)), scm.query(y, &za.merged(&wa), &xa)),
            Rule::InsertDeleteAction => (scm.query(y, &wa, &xa.merged(&za)), scm.query(y, &wa, &xa)),
        };
        match (lhs, rhs) {
            (Ok(l), Ok(r)) => {
                max_abs_diff = max_abs_diff.max(l.max_abs_diff(&r));
                points += 1;
            }
            (Err(ScmError::ZeroProbabilityEvidence), _) | (_, Err(ScmError::ZeroProbabilityEvidence)) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok(RuleCheck { applicable, max_abs_diff, points })
}
