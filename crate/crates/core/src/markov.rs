//! Finite Markov chain of measurement-delivery outcomes.
//!
//! The chain state records, for every sensor and every send instant in a
//! sliding lookback window, whether the measurement has been accepted by the
//! estimator and with which delay. Transition probabilities follow exactly
//! from the per-link success probabilities by conjoining the compiled
//! delivery events of both states and evaluating the joint probability.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::topology::{EventRef, TopologyEvents};
use crate::{Error, Result};

/// Default cap on the enumerated state count.
pub const DEFAULT_STATE_CAP: usize = 100_000;

/// Residual required of the stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Delivery record over the lookback window.
///
/// For sensor `s` and window depth `d` (the measurement sent `d` slots ago)
/// the sub-vector holds one flag per candidate delay `0..=d`; at most one
/// flag is set (later copies of an accepted measurement are discarded), and
/// flags at delays beyond the network's maximum are always clear.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeliveryState {
    bits: Vec<u8>,
    ny: usize,
    max_delay: usize,
    lookback: usize,
}

impl DeliveryState {
    fn sub_len(lookback: usize) -> usize {
        (lookback + 1) * (lookback + 2) / 2
    }

    pub fn from_bits(bits: Vec<u8>, ny: usize, max_delay: usize, lookback: usize) -> Result<Self> {
        if bits.len() != Self::sub_len(lookback) * ny {
            return Err(Error::Invalid {
                what: "delivery state",
                message: format!(
                    "expected {} bits, got {}",
                    Self::sub_len(lookback) * ny,
                    bits.len()
                ),
            });
        }
        let state = Self { bits, ny, max_delay, lookback };
        for s in 0..ny {
            for d in 0..=lookback {
                let sub = state.sub_vector(s, d);
                if sub.iter().map(|&b| b as usize).sum::<usize>() > 1 {
                    return Err(Error::Invalid {
                        what: "delivery state",
                        message: format!("sub-vector (sensor {s}, depth {d}) has multiple flags"),
                    });
                }
                for (delta, &b) in sub.iter().enumerate() {
                    if delta > max_delay && b != 0 {
                        return Err(Error::Invalid {
                            what: "delivery state",
                            message: format!(
                                "flag at delay {delta} exceeds the maximum delay {}",
                                max_delay
                            ),
                        });
                    }
                }
            }
        }
        Ok(state)
    }

    fn bit_base(&self, s: usize, d: usize) -> usize {
        s * Self::sub_len(self.lookback) + d * (d + 1) / 2
    }

    /// Flags of the sub-vector for sensor `s` at window depth `d`.
    pub fn sub_vector(&self, s: usize, d: usize) -> &[u8] {
        let base = self.bit_base(s, d);
        &self.bits[base..base + d + 1]
    }

    /// Delay with which the depth-`d` measurement of sensor `s` was
    /// accepted, if it has been.
    pub fn accepted_delay(&self, s: usize, d: usize) -> Option<usize> {
        self.sub_vector(s, d).iter().position(|&b| b == 1)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn num_sensors(&self) -> usize {
        self.ny
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    /// True when the window slide from `prev` to `self` is consistent: every
    /// record both states share must agree.
    pub fn consistent_with_previous(&self, prev: &DeliveryState) -> bool {
        for s in 0..self.ny {
            for d in 1..=self.lookback {
                let cur = self.sub_vector(s, d);
                let old = prev.sub_vector(s, d - 1);
                if cur[..d] != old[..d] {
                    return false;
                }
            }
        }
        true
    }
}

/// Diagonal 0/1 matrix selecting the measurement rows available now.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AvailabilityMatrix {
    diag: Vec<bool>,
}

impl AvailabilityMatrix {
    pub fn diag(&self) -> &[bool] {
        &self.diag
    }

    pub fn is_zero(&self) -> bool {
        self.diag.iter().all(|&b| !b)
    }

    pub fn active_rows(&self) -> Vec<usize> {
        self.diag
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.diag.len(),
            self.diag.iter().map(|&b| if b { 1.0 } else { 0.0 }),
        ))
    }
}

/// Availability map: entry (s, d) is set when the depth-`d` measurement of
/// sensor `s` arrived exactly now (delay d), for depths up to the maximum
/// network delay.
pub fn availability(state: &DeliveryState) -> AvailabilityMatrix {
    let blocks = state.max_delay() + 1;
    let mut diag = vec![false; state.num_sensors() * blocks];
    for s in 0..state.num_sensors() {
        for d in 0..blocks.min(state.lookback() + 1) {
            diag[s * blocks + d] = state.sub_vector(s, d)[d] == 1;
        }
    }
    AvailabilityMatrix { diag }
}

/// Ordered enumeration of all delivery states.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub states: Vec<DeliveryState>,
    index: HashMap<Vec<u8>, usize>,
    pub ny: usize,
    pub max_delay: usize,
    pub lookback: usize,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn find(&self, bits: &[u8]) -> Option<usize> {
        self.index.get(bits).copied()
    }
}

/// Closed-form state count.
///
/// With D = min(max_delay, lookback) the count is
/// ((D+2)!·(D+2)^(lookback−D))^ny; for lookback ≥ max_delay this is the
/// (d̄+2)!-based formula, and taking D through the minimum keeps it equal to
/// the brute-force enumeration when the window is shorter than the maximum
/// delay.
pub fn closed_form_state_count(ny: usize, max_delay: usize, lookback: usize) -> u128 {
    let d = max_delay.min(lookback) as u128;
    let mut per_sensor: u128 = 1;
    for k in 2..=(d + 2) {
        per_sensor *= k;
    }
    for _ in 0..(lookback as u128).saturating_sub(d) {
        per_sensor = per_sensor.saturating_mul(d + 2);
    }
    let mut total: u128 = 1;
    for _ in 0..ny {
        total = total.saturating_mul(per_sensor);
    }
    total
}

/// Enumerates every valid delivery state in lexicographic bit order.
pub fn enumerate_states(
    ny: usize,
    max_delay: usize,
    lookback: usize,
    cap: usize,
) -> Result<StateSpace> {
    let predicted = closed_form_state_count(ny, max_delay, lookback);
    if predicted > cap as u128 {
        return Err(Error::StateCap(predicted, cap));
    }

    // Per-(sensor, depth) sub-vector options: all clear, or a single flag at
    // one of the admissible delays.
    let mut per_slot: Vec<Vec<Vec<u8>>> = Vec::new();
    for _s in 0..ny {
        for d in 0..=lookback {
            let mut options = vec![vec![0u8; d + 1]];
            for delta in 0..=d.min(max_delay) {
                let mut v = vec![0u8; d + 1];
                v[delta] = 1;
                options.push(v);
            }
            per_slot.push(options);
        }
    }

    let mut all: Vec<Vec<u8>> = vec![Vec::new()];
    for options in &per_slot {
        let mut next = Vec::with_capacity(all.len() * options.len());
        for prefix in &all {
            for opt in options {
                let mut v = prefix.clone();
                v.extend_from_slice(opt);
                next.push(v);
            }
        }
        all = next;
    }
    all.sort();

    let states: Vec<DeliveryState> = all
        .into_iter()
        .map(|bits| DeliveryState::from_bits(bits, ny, max_delay, lookback))
        .collect::<Result<_>>()?;
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.bits().to_vec(), i))
        .collect();
    Ok(StateSpace {
        states,
        index,
        ny,
        max_delay,
        lookback,
    })
}

/// Ergodicity verdict for a reduced chain.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ErgodicityReport {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// States removed because they can never occur.
    pub removed: Vec<usize>,
    pub ergodic: bool,
}

/// The delivery event underlying one state: the conjunction, over all
/// sensors and window depths, of the acceptance (or not-yet) event of the
/// measurement at that depth, shifted to its send instant.
fn state_event(
    events: &mut TopologyEvents,
    state: &DeliveryState,
) -> Result<EventRef> {
    let mut parts: Vec<EventRef> = Vec::new();
    for s in 0..state.num_sensors() {
        for d in 0..=state.lookback() {
            let part = match state.accepted_delay(s, d) {
                Some(delta) => events.accept(s, delta)?.root,
                None => events.not_yet_by(s, d)?.root,
            };
            parts.push(events.arena.shift(part, -(d as i32)));
        }
    }
    Ok(events.arena.and(&parts))
}

/// Exact transition matrix and per-state feasibility.
///
/// Entry (i, j) is Pr{state j now ∧ state i one slot ago} / Pr{state i},
/// evaluated by exhaustive enumeration of the joint timed-literal
/// assignments. States whose own event has zero probability are marked
/// infeasible; their rows and columns are zero.
pub fn transition_matrix(
    space: &StateSpace,
    events: &mut TopologyEvents,
    link_probs: &[f64],
    cap: usize,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    for (e, &p) in link_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Invalid {
                what: "link probability",
                message: format!("edge {e} has probability {p}"),
            });
        }
    }
    let prob = |lit: crate::topology::TimedLinkLiteral| link_probs[lit.edge];

    let r = space.len();
    let mut phi: Vec<EventRef> = Vec::with_capacity(r);
    for state in &space.states {
        phi.push(state_event(events, state)?);
    }
    let mut own_prob = vec![0.0; r];
    for i in 0..r {
        own_prob[i] = events.arena.probability(phi[i], &prob, cap)?;
    }
    let feasible: Vec<bool> = own_prob.iter().map(|&p| p > 0.0).collect();

    let mut lambda = DMatrix::zeros(r, r);
    for i in 0..r {
        if !feasible[i] {
            continue;
        }
        let prev = events.arena.shift(phi[i], -1);
        for j in 0..r {
            if !feasible[j] || !space.states[j].consistent_with_previous(&space.states[i]) {
                continue;
            }
            let joint = events.arena.and(&[phi[j], prev]);
            let num = events.arena.probability(joint, &prob, cap)?;
            lambda[(i, j)] = num / own_prob[i];
        }
        let row_sum: f64 = lambda.row(i).sum();
        if (row_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid {
                what: "transition matrix",
                message: format!("row {i} sums to {row_sum}"),
            });
        }
    }
    Ok((lambda, feasible))
}

/// Reduction and ergodicity analysis of the feasible sub-chain.
pub fn reduce_and_check(lambda: &DMatrix<f64>, feasible: &[bool]) -> ErgodicityReport {
    let kept: Vec<usize> = (0..feasible.len()).filter(|&i| feasible[i]).collect();
    let removed: Vec<usize> = (0..feasible.len()).filter(|&i| !feasible[i]).collect();
    if kept.is_empty() {
        return ErgodicityReport {
            irreducible: false,
            aperiodic: false,
            removed,
            ergodic: false,
        };
    }
    let pos = |i: usize, j: usize| lambda[(kept[i], kept[j])] > 0.0;
    let m = kept.len();

    // Strong connectivity on the positive-entry graph (two BFS sweeps).
    let reaches_all = |forward: bool| -> bool {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..m {
                let edge = if forward { pos(u, v) } else { pos(v, u) };
                if edge && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    let irreducible = reaches_all(true) && reaches_all(false);

    // A positive self-transition makes an irreducible chain aperiodic;
    // otherwise fall back to the cycle-length gcd.
    let aperiodic = if (0..m).any(|i| pos(i, i)) {
        true
    } else if irreducible {
        let mut depth = vec![usize::MAX; m];
        let mut queue = std::collections::VecDeque::from([0usize]);
        depth[0] = 0;
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                if pos(u, v) && depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut g: u64 = 0;
        for u in 0..m {
            for v in 0..m {
                if pos(u, v) {
                    let diff = (depth[u] as i64 + 1 - depth[v] as i64).unsigned_abs();
                    if diff != 0 {
                        g = gcd(g, diff);
                    }
                }
            }
        }
        g == 1
    } else {
        false
    };

    ErgodicityReport {
        irreducible,
        aperiodic,
        removed,
        ergodic: irreducible && aperiodic,
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

/// Stationary distribution of the feasible sub-chain.
///
/// Solves the null-space system with a normalization row appended, then
/// refines with 50 power-iteration steps; states outside the kept set get
/// zero mass.
pub fn stationary_distribution(lambda: &DMatrix<f64>, feasible: &[bool]) -> Result<DVector<f64>> {
    let kept: Vec<usize> = (0..feasible.len()).filter(|&i| feasible[i]).collect();
    let m = kept.len();
    if m == 0 {
        return Err(Error::NotErgodic("no feasible states".into()));
    }
    let sub = DMatrix::from_fn(m, m, |i, j| lambda[(kept[i], kept[j])]);

    let mut system = DMatrix::zeros(m + 1, m);
    system
        .view_mut((0, 0), (m, m))
        .copy_from(&(sub.transpose() - DMatrix::identity(m, m)));
    for j in 0..m {
        system[(m, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let mut pi = system
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::NotErgodic(format!("stationary solve failed: {e}")))?;

    for x in pi.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = pi.sum();
    if sum <= 0.0 {
        return Err(Error::NotErgodic("stationary solve returned zero vector".into()));
    }
    pi /= sum;
    let sub_t = sub.transpose();
    for _ in 0..50 {
        pi = &sub_t * pi;
        pi /= pi.sum();
    }

    let residual = (pi.transpose() * &sub - pi.transpose()).amax();
    if residual > STATIONARY_TOL {
        return Err(Error::NotErgodic(format!(
            "stationary residual {residual:e} exceeds {STATIONARY_TOL:e}"
        )));
    }

    let mut full = DVector::zeros(feasible.len());
    for (slot, &i) in kept.iter().enumerate() {
        full[i] = pi[slot];
    }
    Ok(full)
}

/// The assembled delivery chain: states, transitions, stationary law and the
/// reduction/ergodicity report.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub space: StateSpace,
    pub lambda: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub reachable: Vec<bool>,
    pub report: ErgodicityReport,
}

impl MarkovChain {
    /// Builds the chain for a topology's compiled events and per-edge
    /// success probabilities. Fails if the reduced chain is not ergodic.
    pub fn build(
        space: StateSpace,
        events: &mut TopologyEvents,
        link_probs: &[f64],
        literal_cap: usize,
    ) -> Result<Self> {
        let (lambda, feasible) = transition_matrix(&space, events, link_probs, literal_cap)?;
        let report = reduce_and_check(&lambda, &feasible);
        if !report.ergodic {
            return Err(Error::NotErgodic(format!(
                "irreducible={}, aperiodic={}, removed {} of {} states",
                report.irreducible,
                report.aperiodic,
                report.removed.len(),
                space.len()
            )));
        }
        let pi = stationary_distribution(&lambda, &feasible)?;
        Ok(Self {
            space,
            lambda,
            pi,
            reachable: feasible,
            report,
        })
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.space.len()).filter(|&i| self.reachable[i]).collect()
    }

    /// Number of states whose availability map is zero, among kept states.
    pub fn zero_availability_count(&self) -> usize {
        self.kept()
            .into_iter()
            .filter(|&i| availability(&self.space.states[i]).is_zero())
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{compute_layers, NodeRole, NodeSpec, Topology};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fig1_topology() -> Topology {
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

    fn single_sensor_relay_topology() -> Topology {
        compute_layers(
            vec![
                NodeSpec { id: "N1".into(), role: NodeRole::Sensor },
                NodeSpec { id: "N3".into(), role: NodeRole::Relay },
                NodeSpec { id: "N4".into(), role: NodeRole::Estimator },
            ],
            vec![(0, 2), (0, 1), (1, 2)],
        )
        .unwrap()
    }

    /// Brute-force oracle: filter all bit vectors by the two state
    /// constraints directly.
    fn brute_force_count(ny: usize, max_delay: usize, lookback: usize) -> usize {
        let n_bits = DeliveryState::sub_len(lookback) * ny;
        assert!(n_bits <= 20, "oracle only meant for small instances");
        (0u32..(1 << n_bits))
            .filter(|&mask| {
                let bits: Vec<u8> = (0..n_bits).map(|i| (mask >> i & 1) as u8).collect();
                DeliveryState::from_bits(bits, ny, max_delay, lookback).is_ok()
            })
            .count()
    }

    #[test]
    fn state_counts_match_paper_scale() {
        assert_eq!(enumerate_states(2, 1, 1, 1000).unwrap().len(), 36);
        assert_eq!(enumerate_states(1, 0, 0, 1000).unwrap().len(), 2);
        assert_eq!(enumerate_states(1, 1, 1, 1000).unwrap().len(), 6);
    }

    #[test]
    fn state_counts_match_closed_form_and_brute_force() {
        for ny in 1..=2 {
            for max_delay in 0..=2 {
                for lookback in 0..=2 {
                    let enumerated = enumerate_states(ny, max_delay, lookback, 100_000)
                        .unwrap()
                        .len();
                    let closed = closed_form_state_count(ny, max_delay, lookback);
                    let brute = brute_force_count(ny, max_delay, lookback);
                    assert_eq!(enumerated as u128, closed, "closed form at ny={ny} d={max_delay} t={lookback}");
                    assert_eq!(enumerated, brute, "brute force at ny={ny} d={max_delay} t={lookback}");
                }
            }
        }
    }

    #[test]
    fn state_cap_enforced() {
        let err = enumerate_states(2, 1, 1, 10).unwrap_err();
        assert!(matches!(err, Error::StateCap(36, 10)));
    }

    #[test]
    fn availability_of_paper_example_state() {
        // State [0 | 1 0 | 1 | 0 1]: sensor 1 delivered one slot ago only;
        // sensor 2 delivered both the current and the delayed measurement now.
        let s = DeliveryState::from_bits(vec![0, 1, 0, 1, 0, 1], 2, 1, 1).unwrap();
        assert_eq!(availability(&s).diag(), &[false, false, true, true]);

        let zero = DeliveryState::from_bits(vec![0; 6], 2, 1, 1).unwrap();
        assert!(availability(&zero).is_zero());

        let one = DeliveryState::from_bits(vec![1, 0, 0, 0, 0, 0], 2, 1, 1).unwrap();
        assert_eq!(availability(&one).diag(), &[true, false, false, false]);
    }

    #[test]
    fn paper_example_transition_probability() {
        // p(prev -> next) = (1-b14) b24 b23 b34 for the two states of the
        // worked example, on 20 random link-probability grids.
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let prev = space.find(&[1, 0, 0, 0, 0, 1]).unwrap();
        let next = space.find(&[0, 1, 0, 1, 0, 1]).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            // Edge order: (N1,N4) (N1,N3) (N2,N3) (N2,N4) (N3,N4).
            let betas: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.95)).collect();
            let mut events = crate::topology::TopologyEvents::compile(&top);
            let (lambda, feasible) =
                transition_matrix(&space, &mut events, &betas, 24).unwrap();
            assert!(feasible[prev] && feasible[next]);
            let expect = (1.0 - betas[0]) * betas[3] * betas[2] * betas[4];
            assert_relative_eq!(lambda[(prev, next)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_and_inconsistent_pairs_are_zero() {
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.3, 0.8, 0.7, 0.4, 0.75];
        let (lambda, feasible) = transition_matrix(&space, &mut events, &betas, 24).unwrap();
        for i in 0..space.len() {
            if feasible[i] {
                assert!((lambda.row(i).sum() - 1.0).abs() < 1e-12, "row {i}");
            }
            for j in 0..space.len() {
                if !space.states[j].consistent_with_previous(&space.states[i]) {
                    assert_eq!(lambda[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn perfect_links_collapse_to_all_current_state() {
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [1.0; 5];
        let (lambda, feasible) = transition_matrix(&space, &mut events, &betas, 24).unwrap();
        // Both measurements always arrive immediately: [1 | 1 0 | 1 | 1 0].
        let idx = space.find(&[1, 1, 0, 1, 1, 0]).unwrap();
        assert!(feasible[idx]);
        assert_relative_eq!(lambda[(idx, idx)], 1.0, epsilon = 1e-12);
        assert_eq!(feasible.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn relay_outage_removes_delay_one_states() {
        // Kill the only relay-to-estimator link: no delayed acceptance can
        // ever happen, so every state recording one has to go.
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.3, 0.8, 0.7, 0.4, 0.0];
        let (lambda, feasible) = transition_matrix(&space, &mut events, &betas, 24).unwrap();
        for (i, state) in space.states.iter().enumerate() {
            let records_delayed = (0..2).any(|s| {
                (0..=1).any(|d| state.accepted_delay(s, d) == Some(1))
            });
            if records_delayed {
                assert!(!feasible[i], "state {i} should be infeasible");
            }
        }
        let report = reduce_and_check(&lambda, &feasible);
        assert!(report.ergodic);
        assert!(!report.removed.is_empty());
    }

    #[test]
    fn stationary_of_identical_rows_chain() {
        let beta = 0.35;
        let lambda = DMatrix::from_row_slice(2, 2, &[1.0 - beta, beta, 1.0 - beta, beta]);
        let pi = stationary_distribution(&lambda, &[true, true]).unwrap();
        assert_relative_eq!(pi[0], 1.0 - beta, epsilon = 1e-12);
        assert_relative_eq!(pi[1], beta, epsilon = 1e-12);
    }

    #[test]
    fn stationary_satisfies_fixed_point_on_fig1() {
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.3, 0.8, 0.7, 0.4, 0.75];
        let chain = MarkovChain::build(space, &mut events, &betas, 24).unwrap();
        let residual = (chain.pi.transpose() * &chain.lambda - chain.pi.transpose()).amax();
        assert!(residual <= 1e-10, "residual {residual:e}");
        assert_relative_eq!(chain.pi.sum(), 1.0, epsilon = 1e-12);
        assert!(chain.pi.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn period_two_chain_flagged() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let report = reduce_and_check(&lambda, &[true, true]);
        assert!(report.irreducible);
        assert!(!report.aperiodic);
        assert!(!report.ergodic);
    }

    #[test]
    fn strictly_positive_chain_is_ergodic_with_nothing_removed() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
        let report = reduce_and_check(&lambda, &[true, true]);
        assert!(report.ergodic);
        assert!(report.removed.is_empty());
    }

    #[test]
    fn zero_availability_state_count_matches_closed_form() {
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.3, 0.8, 0.7, 0.4, 0.75];
        let chain = MarkovChain::build(space, &mut events, &betas, 24).unwrap();
        // r0 + 1 = (r+1)/(max_delay+2)^ny zero-gain states.
        let r_plus_1 = chain.space.len();
        let r0_plus_1 = r_plus_1 / 3usize.pow(2);
        assert_eq!(chain.zero_availability_count(), r0_plus_1);
        assert_eq!(r_plus_1 - (r0_plus_1 - 1), 33);
    }

    #[test]
    fn reduction_then_stationary_is_idempotent() {
        let top = fig1_topology();
        let space = enumerate_states(2, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.3, 0.8, 0.7, 0.4, 0.0];
        let (lambda, feasible) = transition_matrix(&space, &mut events, &betas, 24).unwrap();
        let pi = stationary_distribution(&lambda, &feasible).unwrap();
        // Re-restricting to surviving states changes nothing.
        let again = stationary_distribution(&lambda, &feasible).unwrap();
        for i in 0..space.len() {
            assert_relative_eq!(pi[i], again[i], epsilon = 1e-14);
            if !feasible[i] {
                assert_eq!(pi[i], 0.0);
            }
        }
    }

    /// Independent delivery simulator for the single-sensor relay network:
    /// replays the broadcast/forward protocol literally and reports the
    /// delivery state sequence.
    fn simulate_delivery_states(
        betas: [f64; 3],
        steps: usize,
        seed: u64,
    ) -> Vec<[u8; 3]> {
        // Edge order for single_sensor_relay_topology:
        // 0: N1->N4 (direct), 1: N1->N3 (to relay), 2: N3->N4 (relay out).
        let mut rng = StdRng::seed_from_u64(seed);
        // delay_of[b] = Some(delay) once the measurement born at b is accepted.
        let mut delay_of: Vec<Option<usize>> = Vec::new();
        // Relay holding the measurement born at slot k-1, to forward at k.
        let mut relay_has_prev: Option<usize> = None;
        let mut out = Vec::new();
        for k in 0..steps {
            delay_of.push(None);
            // Direct path for the fresh measurement.
            let direct = rng.random_bool(betas[0]);
            let to_relay = rng.random_bool(betas[1]);
            let relay_fwd = rng.random_bool(betas[2]);
            if direct {
                delay_of[k] = Some(0);
            }
            // Relay forwards last slot's acquisition; the estimator discards
            // the copy if the direct path already delivered it.
            if let Some(born) = relay_has_prev {
                if relay_fwd && delay_of[born].is_none() {
                    delay_of[born] = Some(k - born);
                }
            }
            relay_has_prev = if to_relay { Some(k) } else { None };

            if k >= 1 {
                // theta bits: [alpha(0,0)[k] | alpha(0,0)[k-1], alpha(0,1)[k]]
                let b0 = (delay_of[k] == Some(0)) as u8;
                let b1 = (delay_of[k - 1] == Some(0)) as u8;
                let b2 = (delay_of[k - 1] == Some(1)) as u8;
                out.push([b0, b1, b2]);
            }
        }
        out
    }

    #[test]
    fn transition_matrix_matches_independent_delivery_simulation() {
        let top = single_sensor_relay_topology();
        let space = enumerate_states(1, 1, 1, 1000).unwrap();
        let mut events = crate::topology::TopologyEvents::compile(&top);
        let betas = [0.35, 0.7, 0.6];
        let chain = MarkovChain::build(space, &mut events, &betas.to_vec(), 24).unwrap();

        let seq = simulate_delivery_states(betas, 100_000, 5);
        let idx: Vec<usize> = seq
            .iter()
            .map(|bits| chain.space.find(bits).expect("state must exist"))
            .collect();

        let r = chain.space.len();
        let mut counts = vec![vec![0usize; r]; r];
        let mut visits = vec![0usize; r];
        for w in idx.windows(2) {
            counts[w[0]][w[1]] += 1;
            visits[w[0]] += 1;
        }
        let mut occupancy = vec![0usize; r];
        for &i in &idx {
            occupancy[i] += 1;
        }

        for i in 0..r {
            if visits[i] < 100 {
                continue;
            }
            for j in 0..r {
                let p = chain.lambda[(i, j)];
                let freq = counts[i][j] as f64 / visits[i] as f64;
                let se = (p * (1.0 - p) / visits[i] as f64).sqrt().max(1e-9);
                assert!(
                    (freq - p).abs() <= 3.0 * se + 1e-9,
                    "transition {i}->{j}: freq {freq:.4} vs p {p:.4}"
                );
            }
            let occ = occupancy[i] as f64 / idx.len() as f64;
            let pi = chain.pi[i];
            let se = (pi * (1.0 - pi) / idx.len() as f64).sqrt().max(1e-9);
            // Occupancy samples are correlated across steps; allow a wider
            // band than the i.i.d. standard error.
            assert!(
                (occ - pi).abs() <= 6.0 * se + 1e-6,
                "occupancy {i}: {occ:.4} vs pi {pi:.4}"
            );
        }
    }
}
