//! Stage cost, quadratic Q-functions and the policies derived from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::improver;
use crate::matspace::{self, SymQuadForm};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 3;

/// Quadratic stage-cost penalties and the discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    state: DMatrix<f64>,
    action: DMatrix<f64>,
    alpha: f64,
}

impl CostWeights {
    pub fn new(state: DMatrix<f64>, action: DMatrix<f64>, alpha: f64) -> Result<Self> {
        for (name, m) in [("state", &state), ("action", &action)] {
            if !m.is_square() || m.nrows() == 0 {
                return Err(Error::dim(format!("{name} penalty must be square and non-empty")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} penalty has non-finite entries")));
            }
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidInput(format!("{name} penalty is not symmetric")));
            }
            if matspace::min_eigenvalue(m) < -1e-10 {
                return Err(Error::InvalidInput(format!("{name} penalty is not PSD")));
            }
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("discount must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { state, action, alpha })
    }

    pub fn state_penalty(&self) -> &DMatrix<f64> {
        &self.state
    }

    pub fn action_penalty(&self) -> &DMatrix<f64> {
        &self.action
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn state_dim(&self) -> usize {
        self.state.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.action.nrows()
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            state: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
            action: DMatrix::from_diagonal_element(3, 3, 0.01),
            alpha: 0.9,
        }
    }
}

fn quad(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// `xᵀ R_s x + uᵀ R_a u`.
pub fn stage_cost(x: &[f64], u: &[f64], w: &CostWeights) -> Result<f64> {
    if x.len() != w.state_dim() || u.len() != w.action_dim() {
        return Err(Error::dim(format!(
            "stage cost expects state {} / action {}, got {} / {}",
            w.state_dim(),
            w.action_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(quad(&w.state, x) + quad(&w.action, u))
}

/// Upper-triangular quadratic monomials of `z = [x; u]`.
pub fn basis_phi(x: &[f64], u: &[f64]) -> DVector<f64> {
    let z: Vec<f64> = x.iter().chain(u).copied().collect();
    let n = z.len();
    let mut out = DVector::zeros(matspace::coeff_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = z[i] * z[j];
            k += 1;
        }
    }
    out
}

/// Same as [`basis_phi`] with the application's fixed dimensions enforced.
pub fn basis_phi_checked(x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
    if x.len() != STATE_DIM || u.len() != ACTION_DIM {
        return Err(Error::dim(format!(
            "basis expects state {STATE_DIM} / action {ACTION_DIM}, got {} / {}",
            x.len(),
            u.len()
        )));
    }
    Ok(basis_phi(x, u))
}

/// Quadratic action-value function `Q(x, u) = [x; u]ᵀ H [x; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    form: SymQuadForm,
    state_dim: usize,
}

impl QFunction {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            form: SymQuadForm::zeros(state_dim + action_dim),
            state_dim,
        }
    }

    pub fn from_form(form: SymQuadForm, state_dim: usize) -> Result<Self> {
        if state_dim == 0 || state_dim >= form.dim() {
            return Err(Error::dim(format!(
                "state dim {state_dim} incompatible with form of dim {}",
                form.dim()
            )));
        }
        Ok(Self { form, state_dim })
    }

    pub fn from_coeffs(coeffs: DVector<f64>, state_dim: usize) -> Result<Self> {
        Self::from_form(SymQuadForm::from_coeffs(coeffs)?, state_dim)
    }

    pub fn from_matrix(h: &DMatrix<f64>, state_dim: usize) -> Result<Self> {
        Self::from_form(SymQuadForm::from_matrix(h)?, state_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.form.dim() - self.state_dim
    }

    pub fn form(&self) -> &SymQuadForm {
        &self.form
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        self.form.coeffs()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.form.matrix()
    }

    pub fn h_xx(&self) -> DMatrix<f64> {
        let n = self.state_dim;
        self.matrix().view((0, 0), (n, n)).into_owned()
    }

    pub fn h_xu(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.action_dim());
        self.matrix().view((0, n), (n, m)).into_owned()
    }

    pub fn h_ux(&self) -> DMatrix<f64> {
        self.h_xu().transpose()
    }

    pub fn h_uu(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.action_dim());
        self.matrix().view((n, n), (m, m)).into_owned()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        matspace::min_eigenvalue(&self.matrix())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix().norm()
    }

    pub fn value(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        if x.len() != self.state_dim || u.len() != self.action_dim() {
            return Err(Error::dim(format!(
                "Q expects state {} / action {}, got {} / {}",
                self.state_dim,
                self.action_dim(),
                x.len(),
                u.len()
            )));
        }
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        Ok(self.form.eval(&z))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let form = SymQuadForm::from_coeffs(self.coeffs() * factor).expect("same length");
        Self {
            form,
            state_dim: self.state_dim,
        }
    }
}

/// Per-coordinate action bounds, identical for every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub lower: f64,
    pub upper: f64,
}

impl ActionBox {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_finite() && upper.is_finite() && lower < upper {
            Ok(Self { lower, upper })
        } else {
            Err(Error::InvalidInput(format!("invalid action box [{lower}, {upper}]")))
        }
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

impl Default for ActionBox {
    fn default() -> Self {
        Self {
            lower: -1.0,
            upper: 1.0,
        }
    }
}

/// Blocks of a Q-function that define its greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyBlocks {
    pub h_uu: DMatrix<f64>,
    pub h_ux: DMatrix<f64>,
    /// The full Q-function the blocks came from, kept for persistence.
    pub q: QFunction,
}

#[derive(Debug, Clone, PartialEq)]
enum PolicyKind {
    Clipped,
    Greedy(Box<GreedyBlocks>),
}

/// Box-clipped state feedback `u = clip(L x)`, or the greedy minimizer of a
/// Q-function evaluated state by state. Both expose the linear gain `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    gain: DMatrix<f64>,
    bounds: ActionBox,
    kind: PolicyKind,
}

impl LinearPolicy {
    pub fn from_gain(gain: DMatrix<f64>, bounds: ActionBox) -> Result<Self> {
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("gain has non-finite entries".into()));
        }
        Ok(Self {
            gain,
            bounds,
            kind: PolicyKind::Clipped,
        })
    }

    pub fn zero(state_dim: usize, action_dim: usize) -> Self {
        Self {
            gain: DMatrix::zeros(action_dim, state_dim),
            bounds: ActionBox::default(),
            kind: PolicyKind::Clipped,
        }
    }

    pub(crate) fn greedy(q: QFunction, gain: DMatrix<f64>, bounds: ActionBox) -> Self {
        let blocks = GreedyBlocks {
            h_uu: q.h_uu(),
            h_ux: q.h_ux(),
            q,
        };
        Self {
            gain,
            bounds,
            kind: PolicyKind::Greedy(Box::new(blocks)),
        }
    }

    /// Unconstrained linear gain (`-H_uu⁺ H_ux` for greedy policies).
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn bounds(&self) -> ActionBox {
        self.bounds
    }

    pub fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn greedy_blocks(&self) -> Option<&GreedyBlocks> {
        match &self.kind {
            PolicyKind::Greedy(b) => Some(b),
            PolicyKind::Clipped => None,
        }
    }

    pub fn is_greedy(&self) -> bool {
        matches!(self.kind, PolicyKind::Greedy(_))
    }

    /// Action for state `x`; always inside the box.
    pub fn act(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.state_dim());
        let xv = DVector::from_column_slice(x);
        match &self.kind {
            PolicyKind::Clipped => (&self.gain * xv).iter().map(|&v| self.bounds.clip(v)).collect(),
            PolicyKind::Greedy(b) => {
                let c = (&b.h_ux * xv) * 2.0;
                improver::minimize_box_qp(&b.h_uu, &c, self.bounds)
                    .iter()
                    .copied()
                    .collect()
            }
        }
    }

    pub fn try_act(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::dim(format!(
                "policy expects state dim {}, got {}",
                self.state_dim(),
                x.len()
            )));
        }
        Ok(self.act(x))
    }
}
