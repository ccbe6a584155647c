//! TOML codec for gossip parameters.
//!
//! ```toml
//! [clock]
//! probs = [0.5, 0.5]
//!
//! [reception]          # optional, missing edges default to 1.0
//! "1->2" = 0.9
//!
//! [mixing]             # required for every edge; weight on the broadcaster
//! "1->2" = 0.5
//! "2->1" = 0.5
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use super::{GossipError, GossipParams};
use crate::graph::Digraph;

#[derive(Debug, Error)]
pub enum ParamsFileError {
    #[error("invalid parameters file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad edge key `{0}`; expected `i->j` with 1-based nodes")]
    BadKey(String),
    #[error("edge {0} is not in the graph")]
    UnknownEdge(String),
    #[error("edge {0} has no mixing weight")]
    MissingMixing(String),
    #[error(transparent)]
    Params(#[from] GossipError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    clock: ClockSection,
    #[serde(default)]
    reception: BTreeMap<String, f64>,
    mixing: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockSection {
    probs: Vec<f64>,
}

fn parse_edge_key(key: &str, graph: &Digraph) -> Result<usize, ParamsFileError> {
    let bad = || ParamsFileError::BadKey(key.to_string());
    let (a, b) = key.split_once("->").ok_or_else(bad)?;
    let i: usize = a.trim().parse().map_err(|_| bad())?;
    let j: usize = b.trim().parse().map_err(|_| bad())?;
    if i == 0 || j == 0 || i > graph.n_nodes() || j > graph.n_nodes() {
        return Err(ParamsFileError::UnknownEdge(key.to_string()));
    }
    graph.edge_index(i - 1, j - 1).ok_or_else(|| ParamsFileError::UnknownEdge(key.to_string()))
}

fn edge_key(i: usize, j: usize) -> String {
    format!("{}->{}", i + 1, j + 1)
}

impl GossipParams {
    /// Reads parameters for `graph` from the TOML format shown in the module docs.
    pub fn from_toml_str(graph: Digraph, text: &str) -> Result<Self, ParamsFileError> {
        let doc: ParamsDoc = toml::from_str(text)?;
        let m = graph.n_edges();
        let mut reception = vec![1.0; m];
        for (key, value) in &doc.reception {
            reception[parse_edge_key(key, &graph)?] = *value;
        }
        let mut mixing = vec![None; m];
        for (key, value) in &doc.mixing {
            mixing[parse_edge_key(key, &graph)?] = Some(*value);
        }
        let mixing = mixing
            .into_iter()
            .enumerate()
            .map(|(e, g)| {
                let (i, j) = graph.edges()[e];
                g.ok_or_else(|| ParamsFileError::MissingMixing(edge_key(i, j)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(graph, doc.clock.probs, reception, mixing)?)
    }

    /// Writes the parameters in the format read by [`from_toml_str`](Self::from_toml_str).
    /// Self-weights `beta = 1 - gamma` are included as comments.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::from("[clock]\nprobs = [");
        let probs: Vec<String> = self.clock_probs.iter().map(|p| format!("{p:?}")).collect();
        out.push_str(&probs.join(", "));
        out.push_str("]\n\n[reception]\n");
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let _ = writeln!(out, "\"{}\" = {:?}", edge_key(i, j), self.reception_probs[e]);
        }
        out.push_str("\n[mixing]\n");
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let g = self.mixing_weights[e];
            let _ = writeln!(out, "\"{}\" = {:?} # beta = {:?}", edge_key(i, j), g, 1.0 - g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring3() -> Digraph {
        Digraph::ring(3, false).unwrap()
    }

    #[test]
    fn reads_defaults_and_round_trips() {
        let text = r#"
            [clock]
            probs = [0.5, 0.25, 0.25]
            [reception]
            "2->3" = 0.8
            [mixing]
            "1->2" = 0.5
            "2->3" = 0.4
            "3->1" = 0.3
        "#;
        let params = GossipParams::from_toml_str(ring3(), text).unwrap();
        assert_eq!(params.reception(0, 1), Some(1.0));
        assert_eq!(params.reception(1, 2), Some(0.8));
        assert_eq!(params.gamma(2, 0), Some(0.3));

        let again = GossipParams::from_toml_str(ring3(), &params.to_toml_string()).unwrap();
        assert_eq!(again.clock_probs(), params.clock_probs());
        assert_eq!(again.reception_probs(), params.reception_probs());
        assert_eq!(again.mixing_weights(), params.mixing_weights());
    }

    #[test]
    fn mixing_has_no_default() {
        let text = "[clock]\nprobs = [0.4, 0.3, 0.3]\n[mixing]\n\"1->2\" = 0.5\n\"2->3\" = 0.5\n";
        let err = GossipParams::from_toml_str(ring3(), text).unwrap_err();
        assert!(matches!(err, ParamsFileError::MissingMixing(ref k) if k == "3->1"));
    }

    #[test]
    fn rejects_unknown_edges_and_keys() {
        let base = "[clock]\nprobs = [0.4, 0.3, 0.3]\n[mixing]\n\"1->2\" = 0.5\n\"2->3\" = 0.5\n\"3->1\" = 0.5\n";
        let extra_edge = format!("{base}\"1->3\" = 0.5\n");
        assert!(matches!(GossipParams::from_toml_str(ring3(), &extra_edge), Err(ParamsFileError::UnknownEdge(_))));
        let bad_key = base.replace("\"1->2\"", "\"1-2\"");
        assert!(matches!(GossipParams::from_toml_str(ring3(), &bad_key), Err(ParamsFileError::BadKey(_))));
        let typo = format!("{base}[clocks]\nprobs = [1.0]\n");
        assert!(matches!(GossipParams::from_toml_str(ring3(), &typo), Err(ParamsFileError::Toml(_))));
        let bad_sum = base.replace("0.4,", "0.5,");
        assert!(matches!(GossipParams::from_toml_str(ring3(), &bad_sum), Err(ParamsFileError::Params(_))));
    }
}
