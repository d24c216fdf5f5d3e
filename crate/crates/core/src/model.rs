//! Plant description and its delay-augmented form.
//!
//! The estimator never sees the raw plant: measurements may arrive up to
//! `max_delay` slots late, so the filter runs on a stacked state holding the
//! current plant state together with its last `max_delay` predecessors.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{min_symmetric_eigenvalue, spectral_radius, unobservable_basis};
use crate::{Error, Result};

/// Relative singular-value threshold used by the observability rank test.
pub const DETECTABILITY_TOL: f64 = 1e-10;

/// Discrete-time linear plant with per-sensor scalar outputs.
#[derive(Debug, Clone)]
pub struct SystemModel {
    /// State transition matrix, n×n.
    pub a: DMatrix<f64>,
    /// Disturbance input matrix, n×n_w.
    pub b: DMatrix<f64>,
    /// Output matrix; row s is sensor s's read-out vector.
    pub c: DMatrix<f64>,
    /// Disturbance covariance, n_w×n_w, symmetric PSD.
    pub w: DMatrix<f64>,
    /// Per-sensor measurement-noise variances.
    pub sigma2: Vec<f64>,
}

impl SystemModel {
    /// Validates dimensions, the noise covariance and detectability.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        w: DMatrix<f64>,
        sigma2: Vec<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                name: "A",
                expected: "square".into(),
                got: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != n {
            return Err(Error::Dimension {
                name: "B",
                expected: format!("{} rows", n),
                got: format!("{} rows", b.nrows()),
            });
        }
        if c.ncols() != n {
            return Err(Error::Dimension {
                name: "C",
                expected: format!("{} columns", n),
                got: format!("{} columns", c.ncols()),
            });
        }
        if w.nrows() != b.ncols() || w.ncols() != b.ncols() {
            return Err(Error::Dimension {
                name: "W",
                expected: format!("{0}x{0}", b.ncols()),
                got: format!("{}x{}", w.nrows(), w.ncols()),
            });
        }
        if sigma2.len() != c.nrows() {
            return Err(Error::Dimension {
                name: "sigma2",
                expected: format!("{} entries", c.nrows()),
                got: format!("{} entries", sigma2.len()),
            });
        }
        let asym = (&w - w.transpose()).amax();
        if asym > 1e-9 * w.amax().max(1.0) {
            return Err(Error::Invalid {
                what: "W",
                message: "must be symmetric".into(),
            });
        }
        if min_symmetric_eigenvalue(&w) < -1e-9 * w.amax().max(1.0) {
            return Err(Error::Invalid {
                what: "W",
                message: "must be positive semidefinite".into(),
            });
        }
        if sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Invalid {
                what: "sigma2",
                message: "all sensor noise variances must be positive".into(),
            });
        }
        let report = check_detectability(&a, &c)?;
        if !report.detectable {
            return Err(Error::Invalid {
                what: "(A, C)",
                message: format!(
                    "pair is not detectable (unobservable spectral radius {:.6})",
                    report.unobservable_radius
                ),
            });
        }
        Ok(Self { a, b, c, w, sigma2 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_sensors(&self) -> usize {
        self.c.nrows()
    }
}

/// Delay-stacked model driving the jump estimator.
///
/// The stacked state is `[x[k]; x[k-1]; …; x[k-max_delay]]`. Measurement rows
/// are ordered sensor-major, delay-minor: sensor 0 at delays 0..=max_delay,
/// then sensor 1, and so on. Every module shares this ordering.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    /// Stacked transition matrix with the plant in the top-left block and
    /// identities on the first block sub-diagonal.
    pub abar: DMatrix<f64>,
    /// Stacked disturbance input `[B; 0; …; 0]`.
    pub bbar: DMatrix<f64>,
    /// Stacked output matrix; row (s, d) reads sensor s from delay block d.
    pub cbar: DMatrix<f64>,
    /// Stacked measurement-noise covariance (diagonal).
    pub v: DMatrix<f64>,
    /// Selector of the current-state block, `[I 0 … 0]`.
    pub cx: DMatrix<f64>,
    /// Disturbance covariance, copied from the plant.
    pub w: DMatrix<f64>,
    /// Maximum end-to-end delay the stack accommodates.
    pub max_delay: usize,
    /// Plant state dimension.
    pub n: usize,
    /// Number of sensors.
    pub ny: usize,
}

impl AugmentedModel {
    /// Dimension of the stacked state.
    pub fn aug_dim(&self) -> usize {
        (self.max_delay + 1) * self.n
    }

    /// Number of stacked measurement rows.
    pub fn meas_dim(&self) -> usize {
        self.ny * (self.max_delay + 1)
    }

    /// Row index of sensor `s` at delay `d` in the stacked measurement.
    pub fn row_index(&self, s: usize, d: usize) -> usize {
        s * (self.max_delay + 1) + d
    }
}

/// Builds the delay-stacked model for a maximum end-to-end delay.
pub fn augment(sys: &SystemModel, max_delay: usize) -> Result<AugmentedModel> {
    let n = sys.state_dim();
    let ny = sys.num_sensors();
    let blocks = max_delay + 1;
    let na = blocks * n;

    let mut abar = DMatrix::zeros(na, na);
    abar.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    for d in 1..blocks {
        abar.view_mut((d * n, (d - 1) * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
    }

    let mut bbar = DMatrix::zeros(na, sys.noise_dim());
    bbar.view_mut((0, 0), (n, sys.noise_dim())).copy_from(&sys.b);

    let mut cbar = DMatrix::zeros(ny * blocks, na);
    let mut v_diag = DVector::zeros(ny * blocks);
    for s in 0..ny {
        for d in 0..blocks {
            let row = s * blocks + d;
            cbar.view_mut((row, d * n), (1, n)).copy_from(&sys.c.row(s));
            v_diag[row] = sys.sigma2[s];
        }
    }

    let mut cx = DMatrix::zeros(n, na);
    cx.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));

    Ok(AugmentedModel {
        abar,
        bbar,
        cbar,
        v: DMatrix::from_diagonal(&v_diag),
        cx,
        w: sys.w.clone(),
        max_delay,
        n,
        ny,
    })
}

/// Outcome of the observability rank test on a matrix pair.
#[derive(Debug, Clone, Copy)]
pub struct DetectabilityReport {
    pub detectable: bool,
    /// Spectral radius of the restriction of the dynamics to the
    /// unobservable subspace; 0 for a fully observable pair.
    pub unobservable_radius: f64,
}

/// Detectability of the pair (M, C) via the kernel of the observability stack.
pub fn check_detectability(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DetectabilityReport> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            name: "M",
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if c.ncols() != m.nrows() {
        return Err(Error::Dimension {
            name: "C",
            expected: format!("{} columns", m.nrows()),
            got: format!("{} columns", c.ncols()),
        });
    }
    let basis = unobservable_basis(m, c, DETECTABILITY_TOL);
    if basis.ncols() == 0 {
        return Ok(DetectabilityReport {
            detectable: true,
            unobservable_radius: 0.0,
        });
    }
    // The unobservable subspace is invariant under M, so the restriction
    // QᵀMQ carries exactly the hidden modes.
    let restricted = basis.transpose() * m * &basis;
    let radius = spectral_radius(&restricted);
    Ok(DetectabilityReport {
        detectable: radius < 1.0,
        unobservable_radius: radius,
    })
}
