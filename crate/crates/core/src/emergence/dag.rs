use num_bigint::BigUint;

use super::{EmergenceError, IntermediateMode};
use crate::instrument::ActiveCounts;

/// Directed graph whose edges only join consecutive layers, with an alive flag per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredDag {
    alive: Vec<Vec<bool>>,
    /// `edges[l][u]` lists the successors of node `u` of layer `l` in layer `l + 1`.
    edges: Vec<Vec<Vec<usize>>>,
    fully_connected: bool,
}

impl LayeredDag {
    pub fn new(alive: Vec<Vec<bool>>, edges: Vec<Vec<Vec<usize>>>) -> Result<Self, EmergenceError> {
        if edges.len() != alive.len().saturating_sub(1) {
            return Err(EmergenceError::InvalidGraph(format!(
                "{} layers need {} edge sets, got {}",
                alive.len(),
                alive.len().saturating_sub(1),
                edges.len()
            )));
        }
        for (l, layer) in edges.iter().enumerate() {
            if layer.len() != alive[l].len() {
                return Err(EmergenceError::InvalidGraph(format!("layer {l}: adjacency size mismatch")));
            }
            if layer.iter().flatten().any(|&v| v >= alive[l + 1].len()) {
                return Err(EmergenceError::InvalidGraph(format!("layer {l}: edge to missing node")));
            }
        }
        let fully_connected = edges
            .iter()
            .enumerate()
            .all(|(l, layer)| layer.iter().all(|succ| succ.len() == alive[l + 1].len()));
        Ok(Self { alive, edges, fully_connected })
    }

    /// Every node of layer `l` linked to every node of layer `l + 1`.
    pub fn fully_connected(alive: Vec<Vec<bool>>) -> Self {
        let edges = (0..alive.len().saturating_sub(1))
            .map(|l| vec![(0..alive[l + 1].len()).collect(); alive[l].len()])
            .collect();
        Self { alive, edges, fully_connected: true }
    }

    /// Fully connected graph where the first `a_i` nodes of each layer are alive.
    pub fn from_counts(counts: &ActiveCounts) -> Self {
        let alive = counts
            .layers()
            .iter()
            .map(|c| (0..c.total).map(|u| u < c.active).collect())
            .collect();
        Self::fully_connected(alive)
    }

    pub fn remove_edge(&mut self, layer: usize, from: usize, to: usize) {
        if let Some(succ) = self.edges.get_mut(layer).and_then(|l| l.get_mut(from)) {
            let before = succ.len();
            succ.retain(|&v| v != to);
            if succ.len() != before {
                self.fully_connected = false;
            }
        }
    }

    pub fn is_fully_connected(&self) -> bool {
        self.fully_connected
    }

    pub fn alive(&self) -> &[Vec<bool>] {
        &self.alive
    }

    /// Alive/total counts per layer.
    pub fn counts(&self) -> ActiveCounts {
        let totals: Vec<u64> = self.alive.iter().map(|l| l.len() as u64).collect();
        let actives: Vec<u64> = self.alive.iter().map(|l| l.iter().filter(|a| **a).count() as u64).collect();
        ActiveCounts::from_slices(&totals, &actives).expect("alive count never exceeds layer size")
    }
}

/// Enumerates every directed path of length >= 1 from a dead node to an alive node, with
/// unrestricted intermediate nodes.
pub fn brute_force_emergence(dag: &LayeredDag) -> BigUint {
    brute_force_emergence_with(dag, IntermediateMode::All)
}

pub fn brute_force_emergence_with(dag: &LayeredDag, mode: IntermediateMode) -> BigUint {
    let mut total: u128 = 0;
    for (layer, nodes) in dag.alive.iter().enumerate() {
        for (u, &alive) in nodes.iter().enumerate() {
            if !alive {
                walk(dag, layer, u, mode, &mut total);
            }
        }
    }
    BigUint::from(total)
}

fn walk(dag: &LayeredDag, layer: usize, node: usize, mode: IntermediateMode, total: &mut u128) {
    let Some(succ) = dag.edges.get(layer).map(|l| &l[node]) else {
        return;
    };
    for &v in succ {
        let alive = dag.alive[layer + 1][v];
        if alive {
            *total += 1;
        }
        if alive || mode == IntermediateMode::All {
            walk(dag, layer + 1, v, mode, total);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emergence::{emergence_mlp, emergence_with_intermediate};

    #[test]
    fn fully_connected_two_per_layer() {
        let dag = LayeredDag::fully_connected(vec![vec![true, false]; 3]);
        assert_eq!(brute_force_emergence(&dag), BigUint::from(4u32));
        assert_eq!(emergence_mlp(&dag.counts()), BigUint::from(4u32));
    }

    #[test]
    fn single_layer_has_no_paths() {
        let dag = LayeredDag::fully_connected(vec![vec![false, true, false]]);
        assert_eq!(brute_force_emergence(&dag), BigUint::from(0u32));
    }

    #[test]
    fn missing_edge_breaks_the_closed_form() {
        // A -> B -> C with A -> B removed; dead, dead, alive
        let mut dag = LayeredDag::fully_connected(vec![vec![false], vec![false], vec![true]]);
        dag.remove_edge(0, 0, 0);
        assert!(!dag.is_fully_connected());
        assert_eq!(brute_force_emergence(&dag), BigUint::from(1u32));
        assert_eq!(emergence_mlp(&dag.counts()), BigUint::from(2u32));
    }

    #[test]
    fn alive_only_mode_matches_its_closed_form() {
        let dag = LayeredDag::fully_connected(vec![
            vec![false, true, false],
            vec![true, false, true, false],
            vec![false, true],
        ]);
        assert_eq!(
            brute_force_emergence_with(&dag, IntermediateMode::AliveOnly),
            emergence_with_intermediate(&dag.counts(), IntermediateMode::AliveOnly)
        );
        assert!(
            brute_force_emergence_with(&dag, IntermediateMode::AliveOnly) < brute_force_emergence(&dag)
        );
    }

    #[test]
    fn construction_validates_edges() {
        assert!(LayeredDag::new(vec![vec![true], vec![false]], vec![vec![vec![1]]]).is_err());
        assert!(LayeredDag::new(vec![vec![true], vec![false]], vec![]).is_err());
        let ok = LayeredDag::new(vec![vec![false], vec![true]], vec![vec![vec![0]]]).unwrap();
        assert!(ok.is_fully_connected());
        assert_eq!(brute_force_emergence(&ok), BigUint::from(1u32));
    }
}
