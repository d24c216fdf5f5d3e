//! Layered multi-hop network and the timed link-outcome events it induces.
//!
//! A measurement broadcast by a sensor at slot k can reach the estimator
//! directly or through relays, each hop adding one slot of delay. For every
//! sensor and every candidate delay this module compiles the Boolean
//! acceptance event over timed per-link outcomes, and evaluates exact
//! probabilities of conjunctions of such events under independent Bernoulli
//! link outcomes.

use std::collections::HashMap;
use std::fmt::Write as _;

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;

use crate::{Error, Result};

/// Default cap on distinct timed literals in one probability enumeration.
pub const DEFAULT_LITERAL_CAP: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Sensor,
    Relay,
    Estimator,
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub role: NodeRole,
}

/// Layered acyclic multi-hop network.
///
/// Layers are longest-hop distances to the estimator; transmissions only
/// flow from a higher layer to a strictly lower one. Sensor index `s` (the
/// measurement ordering used everywhere else) is the order in which sensor
/// nodes appear in `nodes`.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    /// Directed links (from, to) as indices into `nodes`.
    pub edges: Vec<(usize, usize)>,
    /// Longest-hop distance to the estimator; `None` for unreachable sensors.
    pub layer: Vec<Option<usize>>,
    /// Maximum end-to-end delay: (max layer) − 1.
    pub max_delay: usize,
    /// Node indices of the sensors, in measurement order.
    pub sensors: Vec<usize>,
    pub estimator: usize,
}

impl Topology {
    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Outgoing edge indices of a node.
    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, &(a, _))| a == node)
            .map(|(i, _)| i)
    }

    pub fn edge_label(&self, edge: usize) -> String {
        let (a, l) = self.edges[edge];
        format!("{}->{}", self.nodes[a].id, self.nodes[l].id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

/// Builds the layer map of a node/edge list and validates the network shape.
pub fn compute_layers(nodes: Vec<NodeSpec>, edges: Vec<(usize, usize)>) -> Result<Topology> {
    let estimators: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role == NodeRole::Estimator)
        .map(|(i, _)| i)
        .collect();
    if estimators.len() != 1 {
        return Err(Error::Topology(format!(
            "expected exactly one estimator node, found {}",
            estimators.len()
        )));
    }
    let estimator = estimators[0];
    let sensors: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role == NodeRole::Sensor)
        .map(|(i, _)| i)
        .collect();
    if sensors.is_empty() {
        return Err(Error::Topology("network has no sensor nodes".into()));
    }

    let mut seen = HashMap::new();
    for (i, &(a, l)) in edges.iter().enumerate() {
        if a >= nodes.len() || l >= nodes.len() {
            return Err(Error::Topology(format!("edge {} references an unknown node", i)));
        }
        if a == l {
            return Err(Error::Topology(format!("self-loop on node {}", nodes[a].id)));
        }
        if seen.insert((a, l), i).is_some() {
            return Err(Error::Topology(format!(
                "duplicate edge {}",
                format!("{}->{}", nodes[a].id, nodes[l].id)
            )));
        }
        if nodes[l].role == NodeRole::Sensor {
            return Err(Error::Topology(format!(
                "sensor {} has an incoming edge; sensors only transmit",
                nodes[l].id
            )));
        }
        if nodes[a].role == NodeRole::Estimator {
            return Err(Error::Topology(
                "the estimator node cannot have outgoing edges".into(),
            ));
        }
    }

    let mut graph = DiGraph::<usize, ()>::new();
    let gnodes: Vec<_> = (0..nodes.len()).map(|i| graph.add_node(i)).collect();
    for &(a, l) in &edges {
        graph.add_edge(gnodes[a], gnodes[l], ());
    }
    let order = toposort(&graph, None)
        .map_err(|c| Error::Topology(format!("network graph has a cycle through {}", nodes[graph[c.node_id()]].id)))?;

    // Longest-hop distance to the estimator, filled in reverse topological
    // order so every successor is resolved first.
    let mut layer: Vec<Option<usize>> = vec![None; nodes.len()];
    layer[estimator] = Some(0);
    for &gn in order.iter().rev() {
        let i = graph[gn];
        if i == estimator {
            continue;
        }
        let mut best: Option<usize> = None;
        for &(a, l) in &edges {
            if a == i {
                if let Some(dl) = layer[l] {
                    best = Some(best.map_or(dl + 1, |b: usize| b.max(dl + 1)));
                }
            }
        }
        layer[i] = best;
    }

    for (i, n) in nodes.iter().enumerate() {
        if layer[i].is_none() && n.role == NodeRole::Relay {
            return Err(Error::Topology(format!(
                "relay {} has no path to the estimator",
                n.id
            )));
        }
    }
    if sensors.iter().all(|&s| layer[s].is_none()) {
        return Err(Error::Topology("no sensor can reach the estimator".into()));
    }

    let max_layer = layer.iter().flatten().copied().max().unwrap_or(0);
    let max_delay = max_layer.saturating_sub(1);
    Ok(Topology {
        nodes,
        edges,
        layer,
        max_delay,
        sensors,
        estimator,
    })
}

/// One per-link outcome variable at a fixed time offset.
///
/// The offset is measured in slots relative to the sending instant of the
/// measurement whose event is being built (0 = the broadcast slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimedLinkLiteral {
    pub edge: usize,
    pub offset: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Const(bool),
    Lit(u32),
    Not(u32),
    And(Box<[u32]>),
    Or(Box<[u32]>),
}

/// Handle to a formula in an [`EventArena`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventRef(u32);

/// Hash-consed DAG of Boolean formulas over timed link literals.
///
/// Shared subterms are stored once, so the recursive event construction on
/// dense topologies stays small; probability evaluation enumerates joint
/// assignments of the distinct literals, which is exact.
#[derive(Debug, Default, Clone)]
pub struct EventArena {
    nodes: Vec<Node>,
    memo: HashMap<Node, u32>,
    lits: Vec<TimedLinkLiteral>,
    lit_ids: HashMap<TimedLinkLiteral, u32>,
    shift_memo: HashMap<(u32, i32), u32>,
}

impl EventArena {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, node: Node) -> EventRef {
        if let Some(&id) = self.memo.get(&node) {
            return EventRef(id);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(node.clone());
        self.memo.insert(node, id);
        EventRef(id)
    }

    pub fn constant(&mut self, value: bool) -> EventRef {
        self.intern(Node::Const(value))
    }

    pub fn literal(&mut self, lit: TimedLinkLiteral) -> EventRef {
        let lid = if let Some(&id) = self.lit_ids.get(&lit) {
            id
        } else {
            let id = self.lits.len() as u32;
            self.lits.push(lit);
            self.lit_ids.insert(lit, id);
            id
        };
        self.intern(Node::Lit(lid))
    }

    pub fn not(&mut self, e: EventRef) -> EventRef {
        match self.nodes[e.0 as usize] {
            Node::Const(v) => self.constant(!v),
            Node::Not(inner) => EventRef(inner),
            _ => self.intern(Node::Not(e.0)),
        }
    }

    pub fn and(&mut self, children: &[EventRef]) -> EventRef {
        self.nary(children, true)
    }

    pub fn or(&mut self, children: &[EventRef]) -> EventRef {
        self.nary(children, false)
    }

    fn nary(&mut self, children: &[EventRef], is_and: bool) -> EventRef {
        let mut ids: Vec<u32> = Vec::with_capacity(children.len());
        for &c in children {
            match self.nodes[c.0 as usize] {
                Node::Const(v) => {
                    if v != is_and {
                        // Absorbing element: false in a conjunction, true in
                        // a disjunction.
                        return self.constant(v);
                    }
                }
                _ => ids.push(c.0),
            }
        }
        ids.sort_unstable();
        ids.dedup();
        // x together with ¬x collapses the whole term.
        for &id in &ids {
            if let Node::Not(inner) = self.nodes[id as usize] {
                if ids.binary_search(&inner).is_ok() {
                    return self.constant(!is_and);
                }
            }
        }
        match ids.len() {
            0 => self.constant(is_and),
            1 => EventRef(ids[0]),
            _ => self.intern(if is_and {
                Node::And(ids.into_boxed_slice())
            } else {
                Node::Or(ids.into_boxed_slice())
            }),
        }
    }

    /// Rewrites every literal offset by `dt` slots.
    pub fn shift(&mut self, e: EventRef, dt: i32) -> EventRef {
        if dt == 0 {
            return e;
        }
        if let Some(&id) = self.shift_memo.get(&(e.0, dt)) {
            return EventRef(id);
        }
        let out = match self.nodes[e.0 as usize].clone() {
            Node::Const(v) => self.constant(v),
            Node::Lit(lid) => {
                let lit = self.lits[lid as usize];
                self.literal(TimedLinkLiteral {
                    edge: lit.edge,
                    offset: lit.offset + dt,
                })
            }
            Node::Not(inner) => {
                let s = self.shift(EventRef(inner), dt);
                self.not(s)
            }
            Node::And(ids) => {
                let shifted: Vec<EventRef> =
                    ids.iter().map(|&i| self.shift(EventRef(i), dt)).collect();
                self.and(&shifted)
            }
            Node::Or(ids) => {
                let shifted: Vec<EventRef> =
                    ids.iter().map(|&i| self.shift(EventRef(i), dt)).collect();
                self.or(&shifted)
            }
        };
        self.shift_memo.insert((e.0, dt), out.0);
        out
    }

    /// Distinct literal ids referenced by a formula, ascending.
    fn reachable(&self, root: EventRef) -> (Vec<u32>, Vec<u32>) {
        let mut stack = vec![root.0];
        let mut seen: Vec<u32> = Vec::new();
        let mut lits: Vec<u32> = Vec::new();
        let mut visited = HashMap::new();
        while let Some(id) = stack.pop() {
            if visited.insert(id, ()).is_some() {
                continue;
            }
            seen.push(id);
            match &self.nodes[id as usize] {
                Node::Const(_) => {}
                Node::Lit(l) => lits.push(*l),
                Node::Not(inner) => stack.push(*inner),
                Node::And(ids) | Node::Or(ids) => stack.extend(ids.iter().copied()),
            }
        }
        seen.sort_unstable();
        lits.sort_unstable();
        lits.dedup();
        (seen, lits)
    }

    pub fn literals_of(&self, root: EventRef) -> Vec<TimedLinkLiteral> {
        let (_, lits) = self.reachable(root);
        lits.iter().map(|&l| self.lits[l as usize]).collect()
    }

    /// Exact probability of the formula under independent Bernoulli literals.
    ///
    /// Enumerates all joint assignments of the distinct literals appearing in
    /// the formula; `cap` bounds their number.
    pub fn probability(
        &self,
        root: EventRef,
        link_prob: &dyn Fn(TimedLinkLiteral) -> f64,
        cap: usize,
    ) -> Result<f64> {
        let (node_ids, lit_ids) = self.reachable(root);
        let m = lit_ids.len();
        if m > cap {
            return Err(Error::EnumerationCap(m, cap));
        }
        let probs: Vec<f64> = lit_ids
            .iter()
            .map(|&l| link_prob(self.lits[l as usize]))
            .collect();
        for (&l, &p) in lit_ids.iter().zip(&probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid {
                    what: "link probability",
                    message: format!("{:?} has probability {}", self.lits[l as usize], p),
                });
            }
        }

        // Compile the reachable sub-DAG into a flat program; ids ascend from
        // children to parents by construction, so positional order is
        // evaluation order.
        let pos: HashMap<u32, usize> =
            node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let lit_pos: HashMap<u32, usize> =
            lit_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        enum Instr {
            Const(bool),
            Lit(usize),
            Not(usize),
            And(Vec<usize>),
            Or(Vec<usize>),
        }
        let program: Vec<Instr> = node_ids
            .iter()
            .map(|&id| match &self.nodes[id as usize] {
                Node::Const(v) => Instr::Const(*v),
                Node::Lit(l) => Instr::Lit(lit_pos[l]),
                Node::Not(i) => Instr::Not(pos[i]),
                Node::And(ids) => Instr::And(ids.iter().map(|i| pos[i]).collect()),
                Node::Or(ids) => Instr::Or(ids.iter().map(|i| pos[i]).collect()),
            })
            .collect();
        let root_pos = pos[&root.0];

        let mut total = 0.0;
        let mut scratch = vec![false; program.len()];
        for mask in 0u64..(1u64 << m) {
            let mut weight = 1.0;
            for (i, &p) in probs.iter().enumerate() {
                weight *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
                if weight == 0.0 {
                    break;
                }
            }
            if weight == 0.0 {
                continue;
            }
            for (slot, instr) in program.iter().enumerate() {
                scratch[slot] = match instr {
                    Instr::Const(v) => *v,
                    Instr::Lit(i) => mask >> *i & 1 == 1,
                    Instr::Not(i) => !scratch[*i],
                    Instr::And(ids) => ids.iter().all(|&i| scratch[i]),
                    Instr::Or(ids) => ids.iter().any(|&i| scratch[i]),
                };
            }
            if scratch[root_pos] {
                total += weight;
            }
        }
        Ok(total.clamp(0.0, 1.0))
    }

    /// Human-readable rendering for the event dump, with edge names supplied
    /// by the topology.
    pub fn render(&self, root: EventRef, top: &Topology) -> String {
        fn go(arena: &EventArena, id: u32, top: &Topology, out: &mut String) {
            match &arena.nodes[id as usize] {
                Node::Const(v) => {
                    let _ = write!(out, "{}", v);
                }
                Node::Lit(l) => {
                    let lit = arena.lits[*l as usize];
                    let t = match lit.offset {
                        0 => "k".to_string(),
                        o if o > 0 => format!("k+{o}"),
                        o => format!("k{o}"),
                    };
                    let _ = write!(out, "g({})[{}]", top.edge_label(lit.edge), t);
                }
                Node::Not(inner) => {
                    out.push('!');
                    go(arena, *inner, top, out);
                }
                Node::And(ids) => {
                    out.push('(');
                    for (i, &c) in ids.iter().enumerate() {
                        if i > 0 {
                            out.push_str(" & ");
                        }
                        go(arena, c, top, out);
                    }
                    out.push(')');
                }
                Node::Or(ids) => {
                    out.push('(');
                    for (i, &c) in ids.iter().enumerate() {
                        if i > 0 {
                            out.push_str(" | ");
                        }
                        go(arena, c, top, out);
                    }
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        go(self, root.0, top, &mut s);
        s
    }
}

/// Kind of a compiled delivery event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Measurement accepted with exactly this delay.
    Accept { sensor: usize, delay: usize },
    /// Measurement not accepted with any delay up to this one.
    NotYetBy { sensor: usize, delay: usize },
}

/// A compiled acceptance or not-yet event.
#[derive(Debug, Clone, Copy)]
pub struct PathEvent {
    pub root: EventRef,
    pub kind: EventKind,
}

/// All delivery events of a topology, compiled over one shared arena.
#[derive(Debug, Clone)]
pub struct TopologyEvents {
    pub arena: EventArena,
    accept: Vec<Vec<EventRef>>,
    not_yet: Vec<Vec<EventRef>>,
    max_delay: usize,
}

impl TopologyEvents {
    /// Compiles acceptance events for every sensor and delay.
    ///
    /// The recursion mirrors the forwarding protocol: a sensor broadcasts at
    /// offset 0; a relay that newly acquires a packet at offset t rebroadcasts
    /// it at t+1; the estimator accepts the first copy to arrive.
    pub fn compile(top: &Topology) -> Self {
        let mut arena = EventArena::new();
        let dbar = top.max_delay;
        let mut accept = Vec::with_capacity(top.sensors.len());
        let mut not_yet = Vec::with_capacity(top.sensors.len());
        for &sensor_node in &top.sensors {
            // recv[(node, t)] = node newly holds the measurement sent by
            // `sensor_node` at offset t.
            let mut recv_memo: HashMap<(usize, i32), EventRef> = HashMap::new();
            let mut recv = |arena: &mut EventArena, node: usize, t: i32| -> EventRef {
                fn go(
                    arena: &mut EventArena,
                    memo: &mut HashMap<(usize, i32), EventRef>,
                    top: &Topology,
                    sensor_node: usize,
                    node: usize,
                    t: i32,
                ) -> EventRef {
                    if t < 0 {
                        return arena.constant(false);
                    }
                    if let Some(&e) = memo.get(&(node, t)) {
                        return e;
                    }
                    let mut alts: Vec<EventRef> = Vec::new();
                    for (edge_idx, &(a, l)) in top.edges.iter().enumerate() {
                        if l != node {
                            continue;
                        }
                        let source_holds = if a == sensor_node {
                            arena.constant(t == 0)
                        } else if top.nodes[a].role == NodeRole::Relay {
                            go(arena, memo, top, sensor_node, a, t - 1)
                        } else {
                            arena.constant(false)
                        };
                        let lit = arena.literal(TimedLinkLiteral {
                            edge: edge_idx,
                            offset: t,
                        });
                        let term = arena.and(&[source_holds, lit]);
                        alts.push(term);
                    }
                    let e = arena.or(&alts);
                    memo.insert((node, t), e);
                    e
                }
                go(arena, &mut recv_memo, top, sensor_node, node, t)
            };

            let mut acc_s = Vec::with_capacity(dbar + 1);
            for delta in 0..=dbar as i32 {
                let arrived = recv(&mut arena, top.estimator, delta);
                let mut terms = vec![arrived];
                for earlier in 0..delta {
                    let e = recv(&mut arena, top.estimator, earlier);
                    let ne = arena.not(e);
                    terms.push(ne);
                }
                acc_s.push(arena.and(&terms));
            }
            let mut ny_s = Vec::with_capacity(dbar + 1);
            for d in 0..=dbar {
                let any = arena.or(&acc_s[..=d]);
                ny_s.push(arena.not(any));
            }
            accept.push(acc_s);
            not_yet.push(ny_s);
        }
        Self {
            arena,
            accept,
            not_yet,
            max_delay: dbar,
        }
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    /// Acceptance event for sensor `s` with exact delay `delta`.
    pub fn accept(&self, s: usize, delta: usize) -> Result<PathEvent> {
        if delta > self.max_delay {
            return Err(Error::Invalid {
                what: "delay",
                message: format!("delta {} exceeds the maximum delay {}", delta, self.max_delay),
            });
        }
        Ok(PathEvent {
            root: self.accept[s][delta],
            kind: EventKind::Accept { sensor: s, delay: delta },
        })
    }

    /// Event that sensor `s`'s measurement has not arrived within `d` slots.
    pub fn not_yet_by(&self, s: usize, d: usize) -> Result<PathEvent> {
        let d = d.min(self.max_delay);
        Ok(PathEvent {
            root: self.not_yet[s][d],
            kind: EventKind::NotYetBy { sensor: s, delay: d },
        })
    }

    /// Formula dump for debugging, one line per compiled event.
    pub fn dump(&self, top: &Topology) -> String {
        let mut out = String::new();
        for (s, node) in top.sensors.iter().enumerate() {
            for (delta, &e) in self.accept[s].iter().enumerate() {
                let _ = writeln!(
                    out,
                    "accept[{} delay {}] = {}",
                    top.nodes[*node].id,
                    delta,
                    self.arena.render(e, top)
                );
            }
            for (d, &e) in self.not_yet[s].iter().enumerate() {
                let _ = writeln!(
                    out,
                    "not_yet[{} by {}] = {}",
                    top.nodes[*node].id,
                    d,
                    self.arena.render(e, top)
                );
            }
        }
        out
    }
}

/// Exact probability of a conjunction of compiled events.
///
/// Link outcomes at distinct (edge, offset) pairs are independent Bernoulli
/// draws with the supplied marginals.
pub fn event_probability(
    events: &mut TopologyEvents,
    parts: &[PathEvent],
    link_prob: &dyn Fn(TimedLinkLiteral) -> f64,
    cap: usize,
) -> Result<f64> {
    let roots: Vec<EventRef> = parts.iter().map(|p| p.root).collect();
    let conj = events.arena.and(&roots);
    events.arena.probability(conj, link_prob, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn fig1_topology() -> Topology {
        compute_layers(
            vec![
                NodeSpec { id: "N1".into(), role: NodeRole::Sensor },
                NodeSpec { id: "N2".into(), role: NodeRole::Sensor },
                NodeSpec { id: "N3".into(), role: NodeRole::Relay },
                NodeSpec { id: "N4".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 3), (0, 2), (1, 2), (1, 3), (2, 3)],
        )
        .unwrap()
    }

    #[test]
    fn fig1_layers_and_delay() {
        let top = fig1_topology();
        assert_eq!(top.layer, vec![Some(2), Some(2), Some(1), Some(0)]);
        assert_eq!(top.max_delay, 1);
    }

    #[test]
    fn single_link_network() {
        let top = compute_layers(
            vec![
                NodeSpec { id: "S".into(), role: NodeRole::Sensor },
                NodeSpec { id: "E".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 1)],
        )
        .unwrap();
        assert_eq!(top.layer, vec![Some(1), Some(0)]);
        assert_eq!(top.max_delay, 0);
    }

    #[test]
    fn diamond_layers_match_longest_path_enumeration() {
        // sensor -> {R1, R2} -> estimator; both relays sit one hop out.
        let top = compute_layers(
            vec![
                NodeSpec { id: "S".into(), role: NodeRole::Sensor },
                NodeSpec { id: "R1".into(), role: NodeRole::Relay },
                NodeSpec { id: "R2".into(), role: NodeRole::Relay },
                NodeSpec { id: "E".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        assert_eq!(top.layer, vec![Some(2), Some(1), Some(1), Some(0)]);
        assert_eq!(top.max_delay, 1);

        // Longest-path oracle: enumerate every simple path to the estimator.
        fn longest(top: &Topology, from: usize) -> usize {
            if from == top.estimator {
                return 0;
            }
            top.edges
                .iter()
                .filter(|&&(a, _)| a == from)
                .map(|&(_, l)| 1 + longest(top, l))
                .max()
                .unwrap_or(0)
        }
        for i in 0..4 {
            assert_eq!(top.layer[i], Some(longest(&top, i)));
        }
    }

    #[test]
    fn cycle_rejected() {
        let err = compute_layers(
            vec![
                NodeSpec { id: "S".into(), role: NodeRole::Sensor },
                NodeSpec { id: "R1".into(), role: NodeRole::Relay },
                NodeSpec { id: "R2".into(), role: NodeRole::Relay },
                NodeSpec { id: "E".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 1), (1, 2), (2, 1), (1, 3)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("cycle"), "got: {err}");
    }

    #[test]
    fn dead_end_relay_rejected() {
        let err = compute_layers(
            vec![
                NodeSpec { id: "S".into(), role: NodeRole::Sensor },
                NodeSpec { id: "R".into(), role: NodeRole::Relay },
                NodeSpec { id: "E".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 1), (0, 2)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("no path"), "got: {err}");
    }

    fn fig1_betas() -> impl Fn(TimedLinkLiteral) -> f64 {
        // edge order: (N1,N4) (N1,N3) (N2,N3) (N2,N4) (N3,N4)
        let b = [0.3, 0.8, 0.7, 0.4, 0.75];
        move |lit: TimedLinkLiteral| b[lit.edge]
    }

    #[test]
    fn fig1_direct_acceptance_probability() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let g10 = ev.accept(0, 0).unwrap();
        let p = event_probability(&mut ev, &[g10], &fig1_betas(), DEFAULT_LITERAL_CAP).unwrap();
        assert_relative_eq!(p, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn fig1_relayed_acceptance_probability() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let g11 = ev.accept(0, 1).unwrap();
        let p = event_probability(&mut ev, &[g11], &fig1_betas(), DEFAULT_LITERAL_CAP).unwrap();
        assert_relative_eq!(p, (1.0 - 0.3) * 0.8 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn relayed_acceptance_matches_monte_carlo() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let g11 = ev.accept(0, 1).unwrap();
        let p = event_probability(&mut ev, &[g11], &fig1_betas(), DEFAULT_LITERAL_CAP).unwrap();

        // Independent draw of every timed link outcome, replaying the
        // forwarding protocol by hand.
        let betas = [0.3, 0.8, 0.7, 0.4, 0.75];
        let mut rng = StdRng::seed_from_u64(99);
        let n = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            let direct_k: bool = rng.random_bool(betas[0]);
            let to_relay: bool = rng.random_bool(betas[1]);
            let relay_fwd: bool = rng.random_bool(betas[4]);
            if !direct_k && to_relay && relay_fwd {
                hits += 1;
            }
        }
        let est = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((est - p).abs() <= 3.0 * se, "est {est} vs exact {p}");
    }

    #[test]
    fn contradiction_has_zero_probability() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let e = ev.accept(0, 1).unwrap();
        let not_e = PathEvent {
            root: ev.arena.not(e.root),
            kind: e.kind,
        };
        let p = event_probability(&mut ev, &[e, not_e], &fig1_betas(), DEFAULT_LITERAL_CAP).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn acceptance_delays_partition_the_outcome_space() {
        let top = fig1_topology();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let betas: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let f = {
                let betas = betas.clone();
                move |lit: TimedLinkLiteral| betas[lit.edge]
            };
            let mut ev = TopologyEvents::compile(&top);
            for s in 0..2 {
                let mut total = 0.0;
                for delta in 0..=top.max_delay {
                    let e = ev.accept(s, delta).unwrap();
                    total += event_probability(&mut ev, &[e], &f, DEFAULT_LITERAL_CAP).unwrap();
                }
                let ny = ev.not_yet_by(s, top.max_delay).unwrap();
                total += event_probability(&mut ev, &[ny], &f, DEFAULT_LITERAL_CAP).unwrap();
                assert!((total - 1.0).abs() < 1e-12, "sensor {s}: total {total}");

                let e0 = ev.accept(s, 0).unwrap();
                let e1 = ev.accept(s, 1).unwrap();
                let both =
                    event_probability(&mut ev, &[e0, e1], &f, DEFAULT_LITERAL_CAP).unwrap();
                assert_eq!(both, 0.0);
            }
        }
    }

    #[test]
    fn unreachable_sensor_yields_constant_false() {
        let top = compute_layers(
            vec![
                NodeSpec { id: "S1".into(), role: NodeRole::Sensor },
                NodeSpec { id: "S2".into(), role: NodeRole::Sensor },
                NodeSpec { id: "E".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 2)],
        )
        .unwrap();
        assert_eq!(top.layer[1], None);
        let mut ev = TopologyEvents::compile(&top);
        let e = ev.accept(1, 0).unwrap();
        let p = event_probability(&mut ev, &[e], &|_| 0.5, DEFAULT_LITERAL_CAP).unwrap();
        assert_eq!(p, 0.0);
        let ny = ev.not_yet_by(1, 0).unwrap();
        let p = event_probability(&mut ev, &[ny], &|_| 0.5, DEFAULT_LITERAL_CAP).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn shift_preserves_probability_under_time_invariant_links() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let e = ev.accept(0, 1).unwrap();
        let p0 = ev.arena.probability(e.root, &fig1_betas(), 24).unwrap();
        let shifted = ev.arena.shift(e.root, -3);
        let p1 = ev.arena.probability(shifted, &fig1_betas(), 24).unwrap();
        assert_relative_eq!(p0, p1, epsilon = 1e-15);
    }

    #[test]
    fn literal_cap_enforced() {
        let top = fig1_topology();
        let mut ev = TopologyEvents::compile(&top);
        let e = ev.accept(0, 1).unwrap();
        let err = event_probability(&mut ev, &[e], &fig1_betas(), 1).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap(_, 1)));
    }

    // Independent plain-tree formula representation used as an oracle for the
    // arena's probability evaluation.
    #[derive(Debug, Clone)]
    enum PlainFormula {
        Lit(usize),
        Not(Box<PlainFormula>),
        And(Vec<PlainFormula>),
        Or(Vec<PlainFormula>),
    }

    impl PlainFormula {
        fn eval(&self, bits: u64) -> bool {
            match self {
                PlainFormula::Lit(i) => bits >> i & 1 == 1,
                PlainFormula::Not(f) => !f.eval(bits),
                PlainFormula::And(fs) => fs.iter().all(|f| f.eval(bits)),
                PlainFormula::Or(fs) => fs.iter().any(|f| f.eval(bits)),
            }
        }

        fn build(&self, arena: &mut EventArena) -> EventRef {
            match self {
                PlainFormula::Lit(i) => arena.literal(TimedLinkLiteral {
                    edge: *i,
                    offset: 0,
                }),
                PlainFormula::Not(f) => {
                    let inner = f.build(arena);
                    arena.not(inner)
                }
                PlainFormula::And(fs) => {
                    let refs: Vec<EventRef> = fs.iter().map(|f| f.build(arena)).collect();
                    arena.and(&refs)
                }
                PlainFormula::Or(fs) => {
                    let refs: Vec<EventRef> = fs.iter().map(|f| f.build(arena)).collect();
                    arena.or(&refs)
                }
            }
        }
    }

    fn plain_formula(num_lits: usize) -> impl Strategy<Value = PlainFormula> {
        let leaf = (0..num_lits).prop_map(PlainFormula::Lit);
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(|f| PlainFormula::Not(Box::new(f))),
                prop::collection::vec(inner.clone(), 1..4).prop_map(PlainFormula::And),
                prop::collection::vec(inner, 1..4).prop_map(PlainFormula::Or),
            ]
        })
    }

    proptest! {
        #[test]
        fn probability_matches_truth_table_oracle(
            f in plain_formula(6),
            probs in prop::collection::vec(0.0f64..=1.0, 6),
        ) {
            let mut arena = EventArena::new();
            let root = f.build(&mut arena);
            let got = arena
                .probability(root, &|lit| probs[lit.edge], 24)
                .unwrap();

            // Brute-force truth table over the full literal universe.
            let mut want = 0.0;
            for bits in 0u64..(1 << 6) {
                if f.eval(bits) {
                    let mut w = 1.0;
                    for (i, p) in probs.iter().enumerate() {
                        w *= if bits >> i & 1 == 1 { *p } else { 1.0 - *p };
                    }
                    want += w;
                }
            }
            prop_assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }
}
