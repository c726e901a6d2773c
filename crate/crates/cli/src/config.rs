//! Run configuration: strict TOML parsing, validation and canonical echo.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use colrel::topology::StandardTopology;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub n: usize,
    #[serde(default)]
    pub topology: TopologySpec,
    /// A single probability is broadcast to every client.
    #[serde(default = "default_p")]
    pub p: Probabilities,
}

fn default_p() -> Probabilities {
    Probabilities::Broadcast(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probabilities {
    Broadcast(f64),
    PerClient(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    #[default]
    FullyConnected,
    Ring {
        #[serde(default = "one")]
        k: usize,
    },
    Edgeless,
    /// Explicit undirected edge list.
    Edges { edges: Vec<[usize; 2]> },
}

fn one() -> usize {
    1
}

impl TopologySpec {
    pub fn edges(&self, n: usize) -> Result<Vec<(usize, usize)>, CliError> {
        let kind = match self {
            Self::FullyConnected => StandardTopology::FullyConnected,
            Self::Ring { k } => StandardTopology::Ring(*k),
            Self::Edgeless => StandardTopology::Edgeless,
            Self::Edges { edges } => return Ok(edges.iter().map(|e| (e[0], e[1])).collect()),
        };
        colrel::topology::standard_topology(kind, n).map_err(|e| CliError::config("graph.topology", e.to_string()))
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FullyConnected => write!(f, "fully_connected"),
            Self::Ring { k } => write!(f, "ring{k}"),
            Self::Edgeless => write!(f, "edgeless"),
            Self::Edges { edges } => write!(f, "edges{}", edges.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub d: usize,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l_smooth: f64,
    pub sigma: f64,
    pub heterogeneity: f64,
    pub seed: u64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { d: 20, mu: 0.5, l_smooth: 5.0, sigma: 1.0, heterogeneity: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Colrel,
    FedavgNoDropout,
    FedavgBlindDropout,
    FedavgNonblindDropout,
}

impl VariantName {
    pub const ALL: [VariantName; 4] =
        [Self::Colrel, Self::FedavgNoDropout, Self::FedavgBlindDropout, Self::FedavgNonblindDropout];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub variants: Vec<VariantName>,
    pub local_steps: usize,
    pub rounds: usize,
    pub eta: EtaSpec,
    /// Server momentum coefficient, off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            variants: VariantName::ALL.to_vec(),
            local_steps: 8,
            rounds: 100,
            eta: EtaSpec::Constant { value: 0.01 },
            momentum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaSpec {
    Constant { value: f64 },
    /// `4 / (μ (rT + 1))`, held at its round-`hold` value before that round.
    Theorem {
        #[serde(default)]
        hold: Hold,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hold {
    /// The run's own `r0`, from the optimized relay weights.
    #[default]
    #[serde(with = "r0_literal")]
    R0,
    Round(f64),
}

mod r0_literal {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("r0")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        match String::deserialize(d)?.as_str() {
            "r0" => Ok(()),
            other => Err(de::Error::custom(format!("expected \"r0\" or a number, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_sweeps: usize,
    pub bisect_tol: f64,
    pub stall_tol: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { max_sweeps: 100, bisect_tol: 1e-10, stall_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// A count `k` means seeds `0..k`.
    pub seeds: Seeds,
    pub output: String,
    pub record_models: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { seeds: Seeds::Count(5), output: "out".into(), record_models: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn list(&self) -> Vec<u64> {
        match self {
            Self::Count(k) => (0..*k).collect(),
            Self::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    /// Rounds to evaluate; multiples of `r0` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<Vec<usize>>,
    /// `‖x⁰ - x*‖²`; taken from the zero starting model when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSection {
    /// Homogeneous uplink probability.
    P { values: Vec<f64> },
    Topology { values: Vec<TopologySpec> },
    Heterogeneity { values: Vec<f64> },
}

impl SweepSection {
    pub fn len(&self) -> usize {
        match self {
            Self::P { values } | Self::Heterogeneity { values } => values.len(),
            Self::Topology { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self) -> &'static str {
        match self {
            Self::P { .. } => "p",
            Self::Topology { .. } => "topology",
            Self::Heterogeneity { .. } => "heterogeneity",
        }
    }

    /// Config for sweep point `k` and a label for it.
    pub fn point(&self, base: &RunConfig, k: usize) -> Result<(RunConfig, String), CliError> {
        let mut cfg = base.clone();
        cfg.sweep = None;
        let label = match self {
            Self::P { values } => {
                cfg.graph.p = Probabilities::PerClient(vec![values[k]; cfg.graph.n]);
                values[k].to_string()
            }
            Self::Topology { values } => {
                cfg.graph.topology = values[k].clone();
                values[k].to_string()
            }
            Self::Heterogeneity { values } => {
                cfg.objective.heterogeneity = values[k];
                values[k].to_string()
            }
        };
        cfg.validate()?;
        Ok((cfg, label))
    }
}

impl RunConfig {
    pub fn probabilities(&self) -> Vec<f64> {
        match &self.graph.p {
            Probabilities::Broadcast(p) => vec![*p; self.graph.n],
            Probabilities::PerClient(v) => v.clone(),
        }
    }

    /// Replaces shorthand forms with their expansions.
    fn resolve(&mut self) {
        self.graph.p = Probabilities::PerClient(self.probabilities());
        self.experiment.seeds = Seeds::List(self.experiment.seeds.list());
    }

    pub fn set_seed_count(&mut self, k: u64) {
        self.experiment.seeds = Seeds::List((0..k).collect());
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.graph;
        ensure(g.n >= 1, "graph.n", "must be at least 1")?;
        let p = self.probabilities();
        ensure(p.len() == g.n, "graph.p", &format!("has {} entries, expected n = {}", p.len(), g.n))?;
        ensure(p.iter().all(|v| (0.0..=1.0).contains(v)), "graph.p", "entries must lie in [0, 1]")?;
        colrel::topology::ConnectivityGraph::new(g.n, &g.topology.edges(g.n)?, p)
            .map_err(|e| CliError::config("graph", e.to_string()))?;

        let o = &self.objective;
        ensure(o.d >= 1, "objective.d", "must be at least 1")?;
        ensure(o.mu > 0.0, "objective.mu", "must be positive")?;
        ensure(o.l_smooth >= o.mu && o.l_smooth.is_finite(), "objective.L", "must be finite and at least mu")?;
        ensure(o.sigma >= 0.0 && o.sigma.is_finite(), "objective.sigma", "must be finite and nonnegative")?;
        ensure(o.heterogeneity >= 0.0 && o.heterogeneity.is_finite(), "objective.heterogeneity", "must be finite and nonnegative")?;

        let pr = &self.protocol;
        ensure(!pr.variants.is_empty(), "protocol.variants", "must name at least one variant")?;
        let distinct: BTreeSet<_> = pr.variants.iter().collect();
        ensure(distinct.len() == pr.variants.len(), "protocol.variants", "must not repeat a variant")?;
        ensure(pr.local_steps >= 1, "protocol.local_steps", "must be at least 1")?;
        ensure(pr.rounds >= 1, "protocol.rounds", "must be at least 1")?;
        match pr.eta {
            EtaSpec::Constant { value } => ensure(value > 0.0 && value.is_finite(), "protocol.eta.value", "must be positive")?,
            EtaSpec::Theorem { hold: Hold::Round(h) } => ensure(h >= 0.0 && h.is_finite(), "protocol.eta.hold", "must be nonnegative")?,
            EtaSpec::Theorem { hold: Hold::R0 } => {}
        }
        if let Some(m) = pr.momentum {
            ensure((0.0..1.0).contains(&m), "protocol.momentum", "must lie in [0, 1)")?;
        }

        let op = &self.optimizer;
        ensure(op.max_sweeps >= 1, "optimizer.max_sweeps", "must be at least 1")?;
        ensure(op.bisect_tol > 0.0, "optimizer.bisect_tol", "must be positive")?;
        ensure(op.stall_tol >= 0.0, "optimizer.stall_tol", "must be nonnegative")?;

        let seeds = self.experiment.seeds.list();
        ensure(!seeds.is_empty(), "experiment.seeds", "must contain at least one seed")?;
        ensure(seeds.iter().collect::<BTreeSet<_>>().len() == seeds.len(), "experiment.seeds", "must not repeat")?;

        if let Some(gap) = self.bound.init_gap {
            ensure(gap >= 0.0 && gap.is_finite(), "bound.init_gap", "must be nonnegative")?;
        }
        if let Some(rounds) = &self.bound.rounds {
            ensure(!rounds.is_empty(), "bound.rounds", "must not be empty")?;
        }

        if let Some(sweep) = &self.sweep {
            ensure(!sweep.is_empty(), "sweep.values", "must not be empty")?;
            if let SweepSection::P { values } = sweep {
                ensure(values.iter().all(|v| (0.0..=1.0).contains(v)), "sweep.values", "probabilities must lie in [0, 1]")?;
            }
            if let SweepSection::Heterogeneity { values } = sweep {
                ensure(values.iter().all(|v| *v >= 0.0), "sweep.values", "must be nonnegative")?;
            }
        }
        Ok(())
    }

    /// Canonical TOML: every default spelled out, shorthand expanded.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

fn ensure(ok: bool, field: &str, constraint: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, constraint))
    }
}

/// Parses, validates, and resolves a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().trim().to_string();
        match line {
            Some(l) => CliError::Parse(format!("line {l}: {msg}")),
            None => CliError::Parse(msg),
        }
    })?;
    cfg.validate()?;
    cfg.resolve();
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = parse_config("[graph]\nn = 2\n").unwrap();
        assert_eq!(cfg.graph.topology, TopologySpec::FullyConnected);
        assert_eq!(cfg.probabilities(), vec![0.5, 0.5]);
        let text = cfg.canonical();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), text);
    }

    #[test]
    fn scalar_probability_broadcasts() {
        let cfg = parse_config("[graph]\nn = 10\np = 0.2\n").unwrap();
        assert_eq!(cfg.graph.p, Probabilities::PerClient(vec![0.2; 10]));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[graph]\nn = 2\ntopologyy = { kind = \"edgeless\" }\n").unwrap_err();
        assert_eq!(err.class(), "parse");
        assert!(err.to_string().contains("topologyy"), "{err}");
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn theorem_hold_forms() {
        let cfg = parse_config("[graph]\nn = 3\n[protocol]\neta = { schedule = \"theorem\" }\n").unwrap();
        assert_eq!(cfg.protocol.eta, EtaSpec::Theorem { hold: Hold::R0 });
        assert!(cfg.canonical().contains("hold = \"r0\""));
        let cfg = parse_config("[graph]\nn = 3\n[protocol]\neta = { schedule = \"theorem\", hold = 12.0 }\n").unwrap();
        assert_eq!(cfg.protocol.eta, EtaSpec::Theorem { hold: Hold::Round(12.0) });
        assert!(parse_config("[graph]\nn = 3\n[protocol]\neta = { schedule = \"theorem\", hold = \"soon\" }\n").is_err());
    }

    #[test]
    fn validation_names_field() {
        let err = parse_config("[graph]\nn = 3\np = [0.1, 0.2]\n").unwrap_err();
        assert!(err.to_string().contains("graph.p"), "{err}");
        let err = parse_config("[graph]\nn = 3\n[objective]\nmu = 2.0\nL = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("objective.L"), "{err}");
        let err = parse_config("[graph]\nn = 4\ntopology = { kind = \"ring\", k = 2 }\n").unwrap_err();
        assert!(err.to_string().contains("graph.topology"), "{err}");
    }

    #[test]
    fn sweep_sections_parse() {
        let text = "[graph]\nn = 4\n[sweep]\naxis = \"topology\"\nvalues = [{ kind = \"ring\" }, { kind = \"edgeless\" }]\n";
        let cfg = parse_config(text).unwrap();
        let sweep = cfg.sweep.clone().unwrap();
        assert_eq!(sweep.len(), 2);
        let (point, label) = sweep.point(&cfg, 0).unwrap();
        assert_eq!(point.graph.topology, TopologySpec::Ring { k: 1 });
        assert_eq!(label, "ring1");
        assert_eq!(parse_config(&cfg.canonical()).unwrap(), cfg);
    }
}
