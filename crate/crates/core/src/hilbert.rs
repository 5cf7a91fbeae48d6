// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Transmon eigenbasis, resonator–filter normal modes, Fock operators and
//! the tensor-product layout (transmon ⊗ driven mode ⊗ undriven mode).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{c, eigh_real, kron, CMat, CsrMatrix, C64, I, ONE, ZERO};

/// Phase convention applied to transmon eigenvectors.
pub const TRANSMON_PHASE_CONVENTION: &str = "<k+1|n|k> = +i|<k+1|n|k>|";

#[derive(Clone, Debug)]
pub struct TransmonEigenbasis {
    /// Level energies in rad/ns, ascending, `energies[0] = 0`.
    pub energies: Vec<f64>,
    /// Charge operator in the eigenbasis.
    pub charge_op: CMat,
    /// `b = Σ √(k+1) |k⟩⟨k+1|`
    pub lowering_op: CMat,
    pub n_levels: usize,
    /// Charge expectation of each kept eigenstate.
    pub charge_expectations: Vec<f64>,
    pub phase_convention: &'static str,
}

impl TransmonEigenbasis {
    pub fn omega01(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }

    /// `ω12 − ω01`
    pub fn anharmonicity(&self) -> f64 {
        self.energies[2] - 2.0 * self.energies[1] + self.energies[0]
    }

    /// `|⟨k+1|n|k⟩|` for `k = 0..n_levels−1`.
    pub fn charge_ladder(&self) -> Vec<f64> {
        (0..self.n_levels - 1).map(|k| self.charge_op[(k + 1, k)].norm()).collect()
    }

    /// Real raising part of the charge operator, `Σ_k |n_{k+1,k}| |k+1⟩⟨k|`.
    pub fn charge_raising(&self) -> CMat {
        let mut m = CMat::zeros(self.n_levels, self.n_levels);
        for (k, v) in self.charge_ladder().into_iter().enumerate() {
            m[(k + 1, k)] = c(v, 0.0);
        }
        m
    }
}

/// Diagonalizes `4E_C n² − E_J cos φ` on the charge grid `−m..m`,
/// `n_charge = 2m+1`, and keeps the lowest `n_levels` eigenstates.
pub fn diagonalize_transmon(
    e_c: f64,
    e_j: f64,
    n_charge: usize,
    n_levels: usize,
) -> Result<TransmonEigenbasis> {
    if n_levels == 0 {
        return Err(Error::invalid("n_levels must be positive"));
    }
    if n_levels > n_charge {
        return Err(Error::invalid(format!(
            "n_levels = {n_levels} exceeds n_charge = {n_charge}"
        )));
    }
    if n_charge % 2 == 0 {
        return Err(Error::invalid(format!("n_charge = {n_charge} must be odd")));
    }
    if n_charge < 4 * n_levels {
        return Err(Error::invalid(format!(
            "n_charge = {n_charge} must be at least 4·n_levels = {}",
            4 * n_levels
        )));
    }
    if !(e_c > 0.0 && e_c.is_finite()) {
        return Err(Error::invalid("E_C must be positive"));
    }
    if !(e_j >= 0.0 && e_j.is_finite()) {
        return Err(Error::invalid("E_J must be non-negative"));
    }

    let m = (n_charge / 2) as i64;
    let charges: Vec<f64> = (-m..=m).map(|n| n as f64).collect();
    let mut h = DMatrix::<f64>::zeros(n_charge, n_charge);
    for (i, &n) in charges.iter().enumerate() {
        h[(i, i)] = 4.0 * e_c * n * n;
        if i + 1 < n_charge {
            h[(i, i + 1)] = -0.5 * e_j;
            h[(i + 1, i)] = -0.5 * e_j;
        }
    }
    let (vals, vecs) = eigh_real(&h)?;

    let n_expect: Vec<f64> = (0..n_charge)
        .map(|k| (0..n_charge).map(|i| vecs[(i, k)].powi(2) * charges[i]).sum())
        .collect();
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(e_c);
    let tie = 1e-9 * scale;
    // Insertion sort keeps the energy order and breaks near-ties by ⟨n⟩.
    let mut order: Vec<usize> = (0..n_charge).collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            let swap = (vals[b] - vals[a]).abs() <= tie && n_expect[b] < n_expect[a];
            if !swap {
                break;
            }
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let kept = &order[..n_levels];

    let v = DMatrix::from_fn(n_charge, n_levels, |i, k| vecs[(i, kept[k])]);
    let n_diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(charges));
    let n_eig = v.transpose() * n_diag * &v;

    // p_{k+1} = −i·sgn(n_{k+1,k})·p_k makes ⟨k+1|n|k⟩ positive imaginary.
    let mut phases = vec![ONE; n_levels];
    for k in 0..n_levels.saturating_sub(1) {
        let s = if n_eig[(k + 1, k)] < 0.0 { -1.0 } else { 1.0 };
        phases[k + 1] = -I * s * phases[k];
    }
    let charge_op = CMat::from_fn(n_levels, n_levels, |k, l| {
        phases[k].conj() * phases[l] * n_eig[(k, l)]
    });

    let e0 = vals[kept[0]];
    let energies = kept.iter().map(|&k| vals[k] - e0).collect();
    Ok(TransmonEigenbasis {
        energies,
        charge_op,
        lowering_op: CMat::from_fn(n_levels, n_levels, |r, col| {
            if col == r + 1 {
                c((col as f64).sqrt(), 0.0)
            } else {
                ZERO
            }
        }),
        n_levels,
        charge_expectations: kept.iter().map(|&k| n_expect[k]).collect(),
        phase_convention: TRANSMON_PHASE_CONVENTION,
    })
}

/// Two normal modes of the resonator–filter pair under the beam-splitter
/// coupling `J(a†f + af†)`. Mode `j` has `a = Σ_j U_aj m_j`, `f = Σ_j U_fj m_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalModeBasis {
    /// Ascending, rad/ns.
    pub mode_freqs: [f64; 2],
    /// Filter admixture of the lower mode, in `[0, π/2]`.
    pub hybridization_angle: f64,
    /// `g_j = g·U_aj`
    pub transmon_couplings: [f64; 2],
    /// `κ_j = κ·U_fj²`
    pub decay_rates: [f64; 2],
    /// `U_fj`, the filter drive and measurement weight of each mode.
    pub drive_weights: [C64; 2],
    /// `U_aj`
    pub resonator_weights: [f64; 2],
}

pub fn diagonalize_filter_chain(
    omega_r: f64,
    omega_f: f64,
    j: f64,
    kappa: f64,
    g: f64,
) -> Result<NormalModeBasis> {
    if !(j >= 0.0) {
        return Err(Error::invalid("J must be non-negative"));
    }
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa must be positive"));
    }
    let mean = 0.5 * (omega_r + omega_f);
    let d = 0.5 * (omega_r - omega_f);
    let r = d.hypot(j);
    if r <= 1e-15 * mean.abs().max(1.0) {
        return Err(Error::Degenerate(
            "resonator and filter are degenerate and uncoupled; mixing angle undefined".into(),
        ));
    }
    // Lower eigenvector of [[ω_r, J], [J, ω_f]].
    let (mut ua, mut uf) = if d >= 0.0 { (j, -(d + r)) } else { (r - d, -j) };
    let norm = ua.hypot(uf);
    ua /= norm;
    uf /= norm;
    if ua < 0.0 || (ua == 0.0 && uf < 0.0) {
        ua = -ua;
        uf = -uf;
    }
    // Orthogonal partner with non-negative filter component.
    let (mut va, mut vf) = (-uf, ua);
    if vf < 0.0 || (vf == 0.0 && va < 0.0) {
        va = -va;
        vf = -vf;
    }
    Ok(NormalModeBasis {
        mode_freqs: [mean - r, mean + r],
        hybridization_angle: uf.abs().atan2(ua.abs()),
        transmon_couplings: [g * ua, g * va],
        decay_rates: [kappa * uf * uf, kappa * vf * vf],
        drive_weights: [c(uf, 0.0), c(vf, 0.0)],
        resonator_weights: [ua, va],
    })
}

#[derive(Clone, Debug)]
pub struct BosonOps {
    pub lowering: CMat,
    pub raising: CMat,
    pub number: CMat,
}

impl BosonOps {
    pub fn dim(&self) -> usize {
        self.lowering.nrows()
    }

    pub fn projector(&self, k: usize) -> CMat {
        crate::linalg::projector(self.dim(), k)
    }
}

pub fn bosonic_ops(n: usize) -> Result<BosonOps> {
    if n < 2 {
        return Err(Error::invalid(format!("Fock truncation must be at least 2, got {n}")));
    }
    let mut a = CMat::zeros(n, n);
    for k in 0..n - 1 {
        a[(k, k + 1)] = c(((k + 1) as f64).sqrt(), 0.0);
    }
    let number = CMat::from_diagonal(&nalgebra::DVector::from_fn(n, |k, _| c(k as f64, 0.0)));
    Ok(BosonOps { raising: a.adjoint(), lowering: a, number })
}

/// Tensor-product layout `transmon ⊗ driven ⊗ undriven`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompositeSpace {
    pub dims: [usize; 3],
}

impl CompositeSpace {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("subsystem dimensions must be positive, got {dims:?}")));
        }
        Ok(CompositeSpace { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, levels: [usize; 3]) -> usize {
        (levels[0] * self.dims[1] + levels[1]) * self.dims[2] + levels[2]
    }

    pub fn levels(&self, index: usize) -> [usize; 3] {
        let u = index % self.dims[2];
        let d = (index / self.dims[2]) % self.dims[1];
        [index / (self.dims[1] * self.dims[2]), d, u]
    }

    /// `|t, d, u⟩⟨t, d, u|`
    pub fn basis_projector(&self, levels: [usize; 3]) -> CMat {
        crate::linalg::projector(self.dim(), self.index(levels))
    }

    fn check(&self, subsystem: usize, rows: usize, cols: usize) -> Result<()> {
        if subsystem > 2 {
            return Err(Error::invalid(format!("subsystem index {subsystem} out of range")));
        }
        let want = self.dims[subsystem];
        if rows != want || cols != want {
            return Err(Error::DimensionMismatch {
                context: "embed",
                expected: want,
                got: if rows != want { rows } else { cols },
            });
        }
        Ok(())
    }

    pub fn embed(&self, subsystem: usize, op: &CMat) -> Result<CMat> {
        self.check(subsystem, op.nrows(), op.ncols())?;
        let id = |k: usize| CMat::identity(self.dims[k], self.dims[k]);
        let parts: [CMat; 3] = std::array::from_fn(|k| if k == subsystem { op.clone() } else { id(k) });
        Ok(kron(&kron(&parts[0], &parts[1]), &parts[2]))
    }

    pub fn embed_sparse(&self, subsystem: usize, op: &CsrMatrix) -> Result<CsrMatrix> {
        self.check(subsystem, op.nrows(), op.ncols())?;
        let parts: [CsrMatrix; 3] = std::array::from_fn(|k| {
            if k == subsystem {
                op.clone()
            } else {
                CsrMatrix::identity(self.dims[k])
            }
        });
        Ok(parts[0].kron(&parts[1]).kron(&parts[2]))
    }

    /// Dense-to-sparse convenience around [`Self::embed_sparse`].
    pub fn embed_dense_as_sparse(&self, subsystem: usize, op: &CMat) -> Result<CsrMatrix> {
        self.embed_sparse(subsystem, &CsrMatrix::from_dense(op, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::units::mhz;

    #[test]
    fn rejects_bad_arguments() {
        assert!(diagonalize_transmon(1.0, 1.0, 21, 30).is_err());
        assert!(diagonalize_transmon(1.0, 1.0, 20, 5).is_err());
        assert!(diagonalize_transmon(1.0, 1.0, 11, 5).is_err());
        assert!(diagonalize_transmon(0.0, 1.0, 21, 5).is_err());
        assert!(diagonalize_transmon(1.0, -1.0, 21, 5).is_err());
        assert!(bosonic_ops(1).is_err());
    }

    #[test]
    fn gauge_and_hermiticity() {
        let t = diagonalize_transmon(mhz(315.0), 51.0 * mhz(315.0), 61, 6).unwrap();
        assert_eq!(t.energies[0], 0.0);
        assert!(crate::linalg::hermiticity_error(&t.charge_op) < 1e-12);
        for k in 0..5 {
            let v = t.charge_op[(k + 1, k)];
            assert!(v.im > 0.0 && v.re.abs() < 1e-12, "{v}");
        }
        let b = &t.lowering_op;
        for r in 0..6 {
            for col in 0..6 {
                if col != r + 1 {
                    assert_eq!(b[(r, col)], ZERO);
                }
            }
        }
    }

    #[test]
    fn embed_orders_factors() {
        let s = CompositeSpace::new([2, 3, 4]).unwrap();
        assert_eq!(s.levels(s.index([1, 2, 3])), [1, 2, 3]);
        let op = bosonic_ops(3).unwrap().number;
        let dense = s.embed(1, &op).unwrap();
        let sparse = s.embed_dense_as_sparse(1, &op).unwrap();
        assert_eq!(max_abs_diff(&dense, &sparse.to_dense()), 0.0);
        assert_eq!(dense[(s.index([1, 2, 0]), s.index([1, 2, 0]))], c(2.0, 0.0));
    }
}
