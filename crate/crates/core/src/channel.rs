//! Fading channels, packet-success functions and power-control policies.
//!
//! Per-link channel gains are affine nonnegative combinations of independent
//! base variables, which lets spatially correlated links share a component.
//! Average link success probabilities and expected transmit powers are
//! deterministic integrals over the base variables.

use crate::quad::{self, ExpDim, GL_NODES};
use crate::topology::Topology;
use crate::{Error, Result};

/// Quadrature self-check threshold: the 48- and 64-node answers must agree
/// to this (scaled by the magnitude) or the configuration is rejected.
const CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDist {
    /// Rayleigh-fading power gain.
    Exponential { mean: f64 },
    /// Degenerate gain, mostly for tests and wired links.
    PointMass { value: f64 },
}

#[derive(Debug, Clone)]
pub struct BaseVar {
    pub name: String,
    pub dist: BaseDist,
}

/// Affine nonnegative combination of base variables.
#[derive(Debug, Clone)]
pub struct GainExpr {
    /// (base variable index, coefficient ≥ 0) pairs.
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl GainExpr {
    pub fn eval(&self, base_values: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(v, c)| c * base_values[v])
                .sum::<f64>()
    }

    pub fn var_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.terms.iter().map(|&(i, _)| i).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// If the expression depends on exactly one base variable, returns
    /// (variable, coefficient, constant).
    fn single_var(&self) -> Option<(usize, f64, f64)> {
        let vars = self.var_indices();
        if vars.len() == 1 {
            let coeff: f64 = self
                .terms
                .iter()
                .filter(|&&(v, _)| v == vars[0])
                .map(|&(_, c)| c)
                .sum();
            Some((vars[0], coeff, self.constant))
        } else {
            None
        }
    }
}

/// Per-link gain distributions of the whole network.
#[derive(Debug, Clone)]
pub struct FadingModel {
    pub base_vars: Vec<BaseVar>,
    /// One gain expression per topology edge, same indexing.
    pub gains: Vec<GainExpr>,
}

impl FadingModel {
    pub fn validate(&self, num_edges: usize) -> Result<()> {
        if self.gains.len() != num_edges {
            return Err(Error::Invalid {
                what: "fading model",
                message: format!(
                    "{} gain expressions for {} edges",
                    self.gains.len(),
                    num_edges
                ),
            });
        }
        for var in &self.base_vars {
            match var.dist {
                BaseDist::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => {
                    return Err(Error::Invalid {
                        what: "fading model",
                        message: format!("base variable {} must have positive finite mean", var.name),
                    });
                }
                BaseDist::PointMass { value } if !(value >= 0.0 && value.is_finite()) => {
                    return Err(Error::Invalid {
                        what: "fading model",
                        message: format!("base variable {} must be nonnegative", var.name),
                    });
                }
                _ => {}
            }
        }
        for (e, g) in self.gains.iter().enumerate() {
            if g.constant < 0.0 || g.terms.iter().any(|&(_, c)| c < 0.0) {
                return Err(Error::Invalid {
                    what: "fading model",
                    message: format!("edge {e} gain has a negative coefficient"),
                });
            }
            if g.terms.iter().any(|&(v, _)| v >= self.base_vars.len()) {
                return Err(Error::Invalid {
                    what: "fading model",
                    message: format!("edge {e} gain references an unknown base variable"),
                });
            }
        }
        Ok(())
    }

    /// Mean gain of an edge.
    pub fn mean_gain(&self, edge: usize) -> f64 {
        let means: Vec<f64> = self
            .base_vars
            .iter()
            .map(|v| match v.dist {
                BaseDist::Exponential { mean } => mean,
                BaseDist::PointMass { value } => value,
            })
            .collect();
        self.gains[edge].eval(&means)
    }

    /// Draws one realization of all base variables.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.base_vars
            .iter()
            .map(|v| match v.dist {
                BaseDist::Exponential { mean } => {
                    let u: f64 = rng.random();
                    -mean * (1.0 - u).ln()
                }
                BaseDist::PointMass { value } => value,
            })
            .collect()
    }

    pub fn gain(&self, edge: usize, base_values: &[f64]) -> f64 {
        self.gains[edge].eval(base_values)
    }
}

/// Packet-success probability as a function of received signal x = h·u.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessFunction {
    /// BPSK packet of `bits` independent bits: (1 − Q(√(2x)))^bits with Q
    /// the standard normal tail. At zero signal every bit is a coin flip.
    BpskPacket { bits: u32 },
    Logistic { midpoint: f64, scale: f64 },
    /// Monotone piecewise-linear table.
    Table { xs: Vec<f64>, ps: Vec<f64> },
}

impl SuccessFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            SuccessFunction::BpskPacket { bits } if *bits == 0 => Err(Error::Invalid {
                what: "success function",
                message: "bpsk packet needs at least one bit".into(),
            }),
            SuccessFunction::Logistic { scale, .. } if *scale <= 0.0 => Err(Error::Invalid {
                what: "success function",
                message: "logistic scale must be positive".into(),
            }),
            SuccessFunction::Table { xs, ps } => {
                let sorted = xs.windows(2).all(|w| w[0] < w[1]);
                let monotone = ps.windows(2).all(|w| w[0] <= w[1]);
                let in_range = ps.iter().all(|p| (0.0..=1.0).contains(p));
                if xs.len() != ps.len() || xs.len() < 2 || !sorted || !monotone || !in_range {
                    Err(Error::Invalid {
                        what: "success function",
                        message: "table must be sorted in x, monotone in p, p in [0,1]".into(),
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SuccessFunction::BpskPacket { bits } => {
                // Q(sqrt(2x)) = erfc(sqrt(x)) / 2.
                let bit_ok = 1.0 - 0.5 * libm::erfc(x.max(0.0).sqrt());
                bit_ok.powi(*bits as i32)
            }
            SuccessFunction::Logistic { midpoint, scale } => {
                1.0 / (1.0 + (-(x - midpoint) / scale).exp())
            }
            SuccessFunction::Table { xs, ps } => {
                if x <= xs[0] {
                    return ps[0];
                }
                if x >= *xs.last().unwrap() {
                    return *ps.last().unwrap();
                }
                let i = xs.partition_point(|&xi| xi <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ps[i] + t * (ps[i + 1] - ps[i])
            }
        }
    }
}

/// Local power-control policy of one transmitter node.
#[derive(Debug, Clone)]
pub enum PolicyKind {
    Constant { level: f64 },
    /// u = min(cap, scale / h_ref), h_ref being the gain of `ref_edge`.
    SaturatedInverse { scale: f64, ref_edge: usize },
    /// Discrete power levels switched on the reference gain.
    PiecewiseConstant {
        thresholds: Vec<f64>,
        levels: Vec<f64>,
        ref_edge: usize,
    },
}

#[derive(Debug, Clone)]
pub struct PowerPolicy {
    pub kind: PolicyKind,
    /// Hardware transmit-power cap ū.
    pub cap: f64,
}

impl PowerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap > 0.0) {
            return Err(Error::Invalid {
                what: "power policy",
                message: "cap must be positive".into(),
            });
        }
        match &self.kind {
            PolicyKind::Constant { level } => {
                if !(0.0..=self.cap).contains(level) {
                    return Err(Error::Invalid {
                        what: "power policy",
                        message: format!("constant level {level} outside [0, {}]", self.cap),
                    });
                }
            }
            PolicyKind::SaturatedInverse { scale, .. } => {
                if *scale < 0.0 {
                    return Err(Error::Invalid {
                        what: "power policy",
                        message: "inverse scale must be nonnegative".into(),
                    });
                }
            }
            PolicyKind::PiecewiseConstant { thresholds, levels, .. } => {
                if levels.len() != thresholds.len() + 1
                    || !thresholds.windows(2).all(|w| w[0] < w[1])
                    || levels.iter().any(|l| !(0.0..=self.cap).contains(l))
                {
                    return Err(Error::Invalid {
                        what: "power policy",
                        message: "piecewise policy needs ascending thresholds and levels in [0, cap]".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Transmit power κ(H) for a realization of the base variables.
    pub fn power(&self, model: &FadingModel, base_values: &[f64]) -> f64 {
        match &self.kind {
            PolicyKind::Constant { level } => level.min(self.cap),
            PolicyKind::SaturatedInverse { scale, ref_edge } => {
                let h = model.gain(*ref_edge, base_values);
                if h <= 0.0 {
                    self.cap
                } else {
                    (scale / h).min(self.cap)
                }
            }
            PolicyKind::PiecewiseConstant { thresholds, levels, ref_edge } => {
                let h = model.gain(*ref_edge, base_values);
                let bin = thresholds.partition_point(|&t| t <= h);
                levels[bin].min(self.cap)
            }
        }
    }

    /// Base variables the policy depends on.
    fn var_indices(&self, model: &FadingModel) -> Vec<usize> {
        match &self.kind {
            PolicyKind::Constant { .. } => Vec::new(),
            PolicyKind::SaturatedInverse { ref_edge, .. }
            | PolicyKind::PiecewiseConstant { ref_edge, .. } => {
                model.gains[*ref_edge].var_indices()
            }
        }
    }

    /// Kink positions of κ in reference-gain space.
    fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            PolicyKind::Constant { .. } => Vec::new(),
            PolicyKind::SaturatedInverse { scale, .. } => {
                if *scale > 0.0 {
                    vec![scale / self.cap]
                } else {
                    Vec::new()
                }
            }
            PolicyKind::PiecewiseConstant { thresholds, .. } => thresholds.clone(),
        }
    }

    /// Kink positions translated to cuts on a single base variable, when the
    /// reference gain depends on exactly one.
    fn base_var_cuts(&self, model: &FadingModel) -> Vec<(usize, f64)> {
        let ref_edge = match &self.kind {
            PolicyKind::Constant { .. } => return Vec::new(),
            PolicyKind::SaturatedInverse { ref_edge, .. }
            | PolicyKind::PiecewiseConstant { ref_edge, .. } => *ref_edge,
        };
        let Some((var, coeff, constant)) = model.gains[ref_edge].single_var() else {
            return Vec::new();
        };
        if coeff <= 0.0 {
            return Vec::new();
        }
        self.kinks()
            .into_iter()
            .map(|h| (var, (h - constant) / coeff))
            .filter(|&(_, x)| x > 0.0)
            .collect()
    }
}

/// Packet success probability at a given gain and power.
pub fn success_prob(f: &SuccessFunction, h: f64, u: f64) -> Result<f64> {
    if h < 0.0 || u < 0.0 {
        return Err(Error::Invalid {
            what: "success probability",
            message: format!("gain {h} and power {u} must be nonnegative"),
        });
    }
    Ok(f.eval(h * u))
}

/// Expectation of `g` over the base variables the index set touches.
///
/// Point-mass variables contribute fixed values; exponential variables are
/// integrated, with the supplied per-variable cut points. Dimensions above 3
/// fall back to fixed-seed Monte Carlo.
fn expect_over(
    model: &FadingModel,
    vars: &[usize],
    cuts: &[(usize, f64)],
    g: &dyn Fn(&[f64]) -> f64,
    what: &str,
) -> Result<f64> {
    // Fixed values for every base variable; integration dims overwrite.
    let fixed: Vec<f64> = model
        .base_vars
        .iter()
        .map(|v| match v.dist {
            BaseDist::Exponential { mean } => mean,
            BaseDist::PointMass { value } => value,
        })
        .collect();

    let active: Vec<usize> = vars
        .iter()
        .copied()
        .filter(|&v| matches!(model.base_vars[v].dist, BaseDist::Exponential { .. }))
        .collect();
    if active.is_empty() {
        return Ok(g(&fixed));
    }
    let dims: Vec<ExpDim> = active
        .iter()
        .map(|&v| {
            let BaseDist::Exponential { mean } = model.base_vars[v].dist else {
                unreachable!()
            };
            ExpDim {
                mean,
                cuts: cuts
                    .iter()
                    .filter(|&&(cv, _)| cv == v)
                    .map(|&(_, x)| x)
                    .collect(),
            }
        })
        .collect();

    let buf = std::cell::RefCell::new(fixed.clone());
    let eval = |x: &[f64]| {
        let mut values = buf.borrow_mut();
        for (slot, &v) in active.iter().enumerate() {
            values[v] = x[slot];
        }
        g(&values)
    };

    if dims.len() > 3 {
        return Ok(quad::mc_expectation(&dims, &eval));
    }

    let coarse = quad::expectation(&dims, &eval, GL_NODES * 3 / 4);
    let fine = quad::expectation(&dims, &eval, GL_NODES);
    if (fine - coarse).abs() > CONVERGENCE_TOL * fine.abs().max(1.0) {
        return Err(Error::Quadrature(format!(
            "{what}: {coarse} vs {fine} between refinement levels"
        )));
    }
    Ok(fine)
}

/// Average success probability of an edge under a sending-node policy.
pub fn average_link_prob(
    model: &FadingModel,
    policy: &PowerPolicy,
    f: &SuccessFunction,
    edge: usize,
) -> Result<f64> {
    let mut vars = model.gains[edge].var_indices();
    vars.extend(policy.var_indices(model));
    vars.sort_unstable();
    vars.dedup();
    let cuts = policy.base_var_cuts(model);
    let beta = expect_over(
        model,
        &vars,
        &cuts,
        &|values| f.eval(model.gain(edge, values) * policy.power(model, values)),
        "average link success",
    )?;
    Ok(beta.clamp(0.0, 1.0))
}

/// Average transmit power of a node's policy.
pub fn expected_power(model: &FadingModel, policy: &PowerPolicy) -> Result<f64> {
    let vars = policy.var_indices(model);
    let cuts = policy.base_var_cuts(model);
    let e = expect_over(
        model,
        &vars,
        &cuts,
        &|values| policy.power(model, values),
        "expected power",
    )?;
    Ok(e.clamp(0.0, policy.cap))
}

/// Weighted power budget Σ μ_a·E{u_a}.
pub fn power_budget(model: &FadingModel, policies: &[PowerPolicy], mu: &[f64]) -> Result<f64> {
    if policies.len() != mu.len() {
        return Err(Error::Invalid {
            what: "power budget",
            message: format!("{} policies for {} weights", policies.len(), mu.len()),
        });
    }
    let mut total = 0.0;
    for (policy, &m) in policies.iter().zip(mu) {
        total += m * expected_power(model, policy)?;
    }
    Ok(total)
}

/// Per-edge average success probabilities for a set of node policies.
///
/// `policies[t]` is the policy of transmitter `t` in `transmitters` order.
pub fn link_probabilities(
    top: &Topology,
    model: &FadingModel,
    transmitters: &[usize],
    policies: &[PowerPolicy],
    f: &SuccessFunction,
) -> Result<Vec<f64>> {
    let mut betas = vec![0.0; top.edges.len()];
    for (e, &(a, _)) in top.edges.iter().enumerate() {
        let t = transmitters
            .iter()
            .position(|&n| n == a)
            .ok_or_else(|| Error::Invalid {
                what: "policies",
                message: format!("no policy for transmitter {}", top.nodes[a].id),
            })?;
        betas[e] = average_link_prob(model, &policies[t], f, e)?;
    }
    Ok(betas)
}
