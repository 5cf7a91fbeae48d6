// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Liouvillian application and master-equation integration.
//!
//! The generator is written as `𝓛ρ = Gρ + ρG† + Σ_k L_k ρ L_k†` with
//! `G = −iH − ½ Σ_k L_k†L_k`. Optionally the static diagonal of `H` is moved
//! into an interaction picture, in which case every operator entry `(r, c)`
//! carries the phase `e^{i(D_r − D_c)t}`.

use std::io::Write;

use crate::controls::{DriveSlots, DriveTerm, ParamLayout};
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, axpy_re, c, cis, copy_into, fill_zero, scale_re, trace, CMat, CsrMatrix, MatrixCounter,
    TrackedMatrix, C64, I, ONE, ZERO,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameMode {
    /// Operators as given.
    Lab,
    /// Interaction picture with respect to the diagonal of the static Hamiltonian.
    Diagonal,
}

/// A named operator whose expectation value is recorded.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: CsrMatrix,
    /// Records `Tr[Aρ] e^{iωt}`, the expectation demodulated at `ω` (rad/ns).
    pub demodulation: f64,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: CsrMatrix) -> Self {
        Observable { name: name.into(), op, demodulation: 0.0 }
    }

    pub fn demodulated(mut self, omega: f64) -> Self {
        self.demodulation = omega;
        self
    }
}

/// Operator together with the frame frequency of each stored entry.
#[derive(Clone, Debug)]
pub struct FramedOperator {
    pub op: CsrMatrix,
    nu: Vec<f64>,
    rotating: bool,
}

impl FramedOperator {
    fn new(op: CsrMatrix, frame: &[f64]) -> Self {
        Self::with_offset(op, frame, 0.0)
    }

    fn with_offset(op: CsrMatrix, frame: &[f64], offset: f64) -> Self {
        let nu: Vec<f64> = op.iter().map(|(r, col, _)| frame[r] - frame[col] + offset).collect();
        let rotating = nu.iter().any(|&v| v != 0.0);
        FramedOperator { op, nu, rotating }
    }

    /// Writes the operator at time `t` into `out` (same pattern).
    pub fn at(&self, t: f64, out: &mut CsrMatrix) {
        let dst = out.values_mut();
        let src = self.op.values();
        if self.rotating {
            for ((d, &v), &nu) in dst.iter_mut().zip(src).zip(&self.nu) {
                *d = v * cis(nu * t);
            }
        } else {
            dst.copy_from_slice(src);
        }
    }

    pub fn at_owned(&self, t: f64) -> CsrMatrix {
        let mut out = self.op.clone();
        self.at(t, &mut out);
        out
    }

    /// `Tr[A(t)ρ]`
    pub fn expectation(&self, t: f64, rho: &CMat) -> C64 {
        self.op
            .iter()
            .zip(&self.nu)
            .map(|((r, col, v), &nu)| {
                let v = if self.rotating { v * cis(nu * t) } else { v };
                v * rho[(col, r)]
            })
            .sum()
    }

    /// Adds the Hermitian matrix `½(c̄·A(t) + c·A(t)†)` to `out`. This is
    /// `∂C/∂ρ` for a cost depending on `f = Tr[Aρ]` with
    /// `coef = ∂C/∂Re f + i ∂C/∂Im f`.
    pub fn add_kick(&self, t: f64, coef: C64, out: &mut CMat) {
        for ((r, col, v), &nu) in self.op.iter().zip(&self.nu) {
            let v = if self.rotating { v * cis(nu * t) } else { v };
            let w = 0.5 * coef.conj() * v;
            out[(r, col)] += w;
            out[(col, r)] += w.conj();
        }
    }
}

/// Time- and parameter-dependent Lindblad generator.
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    dim: usize,
    frame_mode: FrameMode,
    frame: Vec<f64>,
    h_static: CsrMatrix,
    jumps: Vec<FramedOperator>,
    drives: Vec<DriveTerm>,
    drive_a: Vec<FramedOperator>,
    drive_ad: Vec<FramedOperator>,
    layout: ParamLayout,
    // Assembled G on a fixed pattern.
    pattern: CsrMatrix,
    g0: Vec<C64>,
    h_rest: Vec<C64>,
    drive_vals: Vec<(Vec<C64>, Vec<C64>)>,
    nu_index: Vec<u32>,
    nu_unique: Vec<f64>,
}

/// Operators of a generator evaluated at one instant.
#[derive(Clone, Debug)]
pub struct InstantOps {
    pub t: f64,
    pub g: CsrMatrix,
    pub jumps: Vec<CsrMatrix>,
    pub drive_a: Vec<CsrMatrix>,
    pub drive_ad: Vec<CsrMatrix>,
    phases: Vec<C64>,
    coefs: Vec<C64>,
    zeta: Vec<f64>,
}

impl LindbladGenerator {
    pub fn new(h_static: CsrMatrix, jumps: Vec<CsrMatrix>, drives: Vec<DriveTerm>) -> Result<Self> {
        Self::with_frame(h_static, jumps, drives, FrameMode::Lab)
    }

    pub fn with_frame(
        h_static: CsrMatrix,
        jumps: Vec<CsrMatrix>,
        drives: Vec<DriveTerm>,
        frame_mode: FrameMode,
    ) -> Result<Self> {
        let n = h_static.nrows();
        if h_static.ncols() != n {
            return Err(Error::DimensionMismatch { context: "static Hamiltonian", expected: n, got: h_static.ncols() });
        }
        let scale = h_static.max_abs().max(1e-300);
        if h_static.hermiticity_error() > 1e-12 * scale {
            return Err(Error::invalid("static Hamiltonian is not Hermitian"));
        }
        for (k, l) in jumps.iter().enumerate() {
            if l.nrows() != n || l.ncols() != n {
                return Err(Error::invalid(format!("jump operator {k} has shape {}x{}, expected {n}x{n}", l.nrows(), l.ncols())));
            }
        }
        for d in &drives {
            if d.operator.nrows() != n || d.operator.ncols() != n {
                return Err(Error::invalid(format!("drive '{}' operator has wrong shape", d.name)));
            }
            if !(d.bin > 0.0 && d.omega0 > 0.0) {
                return Err(Error::invalid(format!("drive '{}' has non-positive bin or filter", d.name)));
            }
        }

        let frame: Vec<f64> = match frame_mode {
            FrameMode::Lab => vec![0.0; n],
            FrameMode::Diagonal => (0..n).map(|i| h_static.get(i, i).re).collect(),
        };
        let h_rest = h_static.add(&CsrMatrix::diagonal(
            &frame.iter().map(|&d| c(-d, 0.0)).collect::<Vec<_>>(),
        ));
        let mut ldl = CsrMatrix::zeros(n, n);
        for l in &jumps {
            ldl = ldl.add(&l.adjoint().matmul(l));
        }
        let drive_ops: Vec<(CsrMatrix, CsrMatrix)> =
            drives.iter().map(|d| (d.operator.clone(), d.operator.adjoint())).collect();

        let mut triplets: Vec<(usize, usize, C64)> = h_rest.iter().chain(ldl.iter()).collect();
        for (a, ad) in &drive_ops {
            triplets.extend(a.iter().chain(ad.iter()).map(|(r, col, _)| (r, col, ZERO)));
        }
        let pattern = CsrMatrix::from_triplets(n, n, triplets.into_iter().map(|(r, col, _)| (r, col, ZERO)));
        let hr = h_rest.values_on_pattern(&pattern);
        let ld = ldl.values_on_pattern(&pattern);
        let g0: Vec<C64> = hr.iter().zip(&ld).map(|(&h, &l)| -I * h - 0.5 * l).collect();
        let drive_vals = drive_ops
            .iter()
            .map(|(a, ad)| (a.values_on_pattern(&pattern), ad.values_on_pattern(&pattern)))
            .collect();

        let mut nu_unique: Vec<f64> = Vec::new();
        let mut nu_index = Vec::with_capacity(pattern.nnz());
        for (r, col, _) in pattern.iter() {
            let nu = frame[r] - frame[col];
            let k = match nu_unique.iter().position(|&v| v.to_bits() == nu.to_bits()) {
                Some(k) => k,
                None => {
                    nu_unique.push(nu);
                    nu_unique.len() - 1
                }
            };
            nu_index.push(k as u32);
        }

        let layout = ParamLayout::new(&drives);
        Ok(LindbladGenerator {
            dim: n,
            frame_mode,
            jumps: jumps.into_iter().map(|l| FramedOperator::new(l, &frame)).collect(),
            drive_a: drive_ops.iter().map(|(a, _)| FramedOperator::new(a.clone(), &frame)).collect(),
            drive_ad: drive_ops.iter().map(|(_, ad)| FramedOperator::new(ad.clone(), &frame)).collect(),
            frame,
            h_static,
            drives,
            layout,
            pattern,
            g0,
            h_rest: hr,
            drive_vals,
            nu_index,
            nu_unique,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_mode(&self) -> FrameMode {
        self.frame_mode
    }

    /// Diagonal frame energies (zero in the lab frame).
    pub fn frame(&self) -> &[f64] {
        &self.frame
    }

    pub fn h_static(&self) -> &CsrMatrix {
        &self.h_static
    }

    pub fn drives(&self) -> &[DriveTerm] {
        &self.drives
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn frame_operator(&self, op: &CsrMatrix) -> FramedOperator {
        FramedOperator::new(op.clone(), &self.frame)
    }

    /// Framed operator of an observable, including its demodulation.
    pub fn frame_observable(&self, obs: &Observable) -> FramedOperator {
        FramedOperator::with_offset(obs.op.clone(), &self.frame, obs.demodulation)
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch { context: "parameter vector", expected: self.n_params(), got: theta.len() });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(())
    }

    pub fn check_state(&self, m: &CMat) -> Result<()> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::DimensionMismatch { context: "state matrix", expected: self.dim, got: if m.nrows() != self.dim { m.nrows() } else { m.ncols() } });
        }
        Ok(())
    }

    pub fn instant_ops(&self) -> InstantOps {
        InstantOps {
            t: f64::NAN,
            g: self.pattern.clone(),
            jumps: self.jumps.iter().map(|l| l.op.clone()).collect(),
            drive_a: self.drive_a.iter().map(|a| a.op.clone()).collect(),
            drive_ad: self.drive_ad.iter().map(|a| a.op.clone()).collect(),
            phases: vec![ONE; self.nu_unique.len()],
            coefs: vec![ZERO; self.drives.len()],
            zeta: Vec::new(),
        }
    }

    /// Drive coefficient `c_d(t)`.
    pub fn drive_coefficient(&self, k: usize, t: f64, theta: &[f64]) -> C64 {
        let mut z = Vec::new();
        self.layout.drives[k].coefficient(&self.drives[k], theta, t, &mut z)
    }

    pub fn update(&self, t: f64, theta: &[f64], ops: &mut InstantOps) {
        ops.t = t;
        for (k, (d, s)) in self.drives.iter().zip(&self.layout.drives).enumerate() {
            ops.coefs[k] = s.coefficient(d, theta, t, &mut ops.zeta);
        }
        let rotating = self.frame_mode == FrameMode::Diagonal;
        if rotating {
            for (p, &nu) in ops.phases.iter_mut().zip(&self.nu_unique) {
                *p = cis(nu * t);
            }
        }
        let g = ops.g.values_mut();
        g.copy_from_slice(&self.g0);
        for (k, (a, ad)) in self.drive_vals.iter().enumerate() {
            let cf = -I * ops.coefs[k];
            let cb = -I * ops.coefs[k].conj();
            if cf == ZERO {
                continue;
            }
            for ((gv, &av), &bv) in g.iter_mut().zip(a).zip(ad) {
                *gv += cf * av + cb * bv;
            }
        }
        if rotating {
            for (gv, &k) in g.iter_mut().zip(&self.nu_index) {
                *gv *= ops.phases[k as usize];
            }
        }
        for (dst, src) in ops.jumps.iter_mut().zip(&self.jumps) {
            src.at(t, dst);
        }
        for (dst, src) in ops.drive_a.iter_mut().zip(&self.drive_a) {
            src.at(t, dst);
        }
        for (dst, src) in ops.drive_ad.iter_mut().zip(&self.drive_ad) {
            src.at(t, dst);
        }
    }

    /// Hamiltonian at `(t, θ)` in the generator's frame.
    pub fn hamiltonian(&self, t: f64, theta: &[f64]) -> Result<CMat> {
        self.check_theta(theta)?;
        let mut vals = self.h_rest.clone();
        for (k, (a, ad)) in self.drive_vals.iter().enumerate() {
            let cf = self.drive_coefficient(k, t, theta);
            for ((v, &av), &bv) in vals.iter_mut().zip(a).zip(ad) {
                *v += cf * av + cf.conj() * bv;
            }
        }
        for (v, (r, col, _)) in vals.iter_mut().zip(self.pattern.iter()) {
            *v *= cis((self.frame[r] - self.frame[col]) * t);
        }
        Ok(self.pattern.with_values(vals).to_dense())
    }

    /// `𝓛(t, θ)ρ`
    pub fn apply_liouvillian(&self, t: f64, theta: &[f64], rho: &CMat) -> Result<CMat> {
        self.check_theta(theta)?;
        self.check_state(rho)?;
        let mut ops = self.instant_ops();
        self.update(t, theta, &mut ops);
        let mut out = CMat::zeros(self.dim, self.dim);
        let mut tmp = CMat::zeros(self.dim, self.dim);
        liouvillian_into(&ops, rho, &mut out, &mut tmp);
        Ok(out)
    }

    /// `−𝓛†(t, θ)φ`, the right-hand side of `dφ/dt`.
    pub fn apply_adjoint_liouvillian(&self, t: f64, theta: &[f64], phi: &CMat) -> Result<CMat> {
        self.check_theta(theta)?;
        self.check_state(phi)?;
        let mut ops = self.instant_ops();
        self.update(t, theta, &mut ops);
        let mut out = CMat::zeros(self.dim, self.dim);
        let mut tmp = CMat::zeros(self.dim, self.dim);
        adjoint_liouvillian_into(&ops, phi, &mut out, &mut tmp);
        Ok(out)
    }

    /// Adds `w·Re Tr[φ†(∂𝓛/∂θ)ρ]` for every parameter to `grad`, using
    /// operators already evaluated at `ops.t`.
    pub(crate) fn accumulate_param_gradient(
        &self,
        ops: &mut InstantOps,
        theta: &[f64],
        phi: &CMat,
        rho: &CMat,
        weight: f64,
        grad: &mut [f64],
    ) {
        for (k, (d, s)) in self.drives.iter().zip(&self.layout.drives).enumerate() {
            crate::controls::liouvillian_param_derivative(
                d,
                s,
                ops.t,
                theta,
                &ops.drive_a[k],
                &ops.drive_ad[k],
                phi,
                rho,
                weight,
                &mut ops.zeta,
                grad,
            );
        }
    }

    pub fn drive_slots(&self) -> &[DriveSlots] {
        &self.layout.drives
    }
}

/// `out = 𝓛x`
pub fn liouvillian_into(ops: &InstantOps, x: &CMat, out: &mut CMat, tmp: &mut CMat) {
    fill_zero(out);
    ops.g.mul_acc(x, out, ONE);
    ops.g.right_adj_mul_acc(x, out, ONE);
    for l in &ops.jumps {
        fill_zero(tmp);
        l.mul_acc(x, tmp, ONE);
        l.right_adj_mul_acc(tmp, out, ONE);
    }
}

/// `out = −𝓛†x`
pub fn adjoint_liouvillian_into(ops: &InstantOps, x: &CMat, out: &mut CMat, tmp: &mut CMat) {
    let m = c(-1.0, 0.0);
    fill_zero(out);
    ops.g.adj_mul_acc(x, out, m);
    ops.g.right_mul_acc(x, out, m);
    for l in &ops.jumps {
        fill_zero(tmp);
        l.adj_mul_acc(x, tmp, ONE);
        l.right_mul_acc(tmp, out, m);
    }
}

/// `out += α Σ_k L x L†`
fn jump_acc(ops: &InstantOps, x: &CMat, out: &mut CMat, alpha: f64, tmp: &mut CMat) {
    for l in &ops.jumps {
        fill_zero(tmp);
        l.mul_acc(x, tmp, ONE);
        l.right_adj_mul_acc(tmp, out, c(alpha, 0.0));
    }
}

/// `out += α Σ_k L† x L`
fn jump_dual_acc(ops: &InstantOps, x: &CMat, out: &mut CMat, alpha: f64, tmp: &mut CMat) {
    for l in &ops.jumps {
        fill_zero(tmp);
        l.adj_mul_acc(x, tmp, ONE);
        l.right_mul_acc(tmp, out, c(alpha, 0.0));
    }
}

/// Three scratch matrices for the Kraus steps.
pub(crate) struct KrausScratch {
    pub s: [TrackedMatrix; 3],
}

impl KrausScratch {
    pub fn new(counter: &MatrixCounter, n: usize) -> Self {
        KrausScratch { s: [counter.zeros(n), counter.zeros(n), counter.zeros(n)] }
    }
}

/// Second-order Kraus map with operators at the step midpoint:
///
/// `Φ_h(x) = M₀xM₀† + (h/2)·J(M₀xM₀†) + (h/2)·K(Jx)K† + (h²/2)·J(Jx)`
///
/// with `M₀ = I + hG + (h²/2)G²`, `K = I + hG` and `J(x) = Σ_k L_k x L_k†`.
/// For `h > 0` every term is completely positive. A negative `h` gives the
/// reverse-time map.
pub(crate) fn kraus_apply(ops: &InstantOps, h: f64, x: &CMat, out: &mut CMat, scratch: &mut KrausScratch) {
    let [s1, s2, s3] = &mut scratch.s;
    let g = &ops.g;
    let (hc, h2) = (c(h, 0.0), c(0.5 * h * h, 0.0));
    fill_zero(out);
    if !ops.jumps.is_empty() {
        fill_zero(s1);
        jump_acc(ops, x, s1, 1.0, s2);
        jump_acc(ops, s1, out, 0.5 * h * h, s2);
        copy_into(s2, s1);
        g.mul_acc(s1, s2, hc);
        axpy_re(out, 0.5 * h, s2);
        g.right_adj_mul_acc(s2, out, h2);
    }
    fill_zero(s1);
    g.mul_acc(x, s1, ONE);
    copy_into(s2, x);
    axpy(s2, hc, s1);
    g.mul_acc(s1, s2, h2);
    fill_zero(s1);
    g.right_adj_mul_acc(s2, s1, ONE);
    copy_into(s3, s2);
    axpy(s3, hc, s1);
    g.right_adj_mul_acc(s1, s3, h2);
    axpy_re(out, 1.0, s3);
    if !ops.jumps.is_empty() {
        jump_acc(ops, s3, out, 0.5 * h, s1);
    }
}

/// Exact dual of [`kraus_apply`]: `Tr[y†Φ_h(x)] = Tr[Φ_h*(y)†x]`.
pub(crate) fn kraus_dual(ops: &InstantOps, h: f64, y: &CMat, out: &mut CMat, scratch: &mut KrausScratch) {
    let [s1, s2, s3] = &mut scratch.s;
    let g = &ops.g;
    let (hc, h2) = (c(h, 0.0), c(0.5 * h * h, 0.0));
    fill_zero(out);
    fill_zero(s1);
    if !ops.jumps.is_empty() {
        jump_dual_acc(ops, y, s1, 1.0, s2);
        jump_dual_acc(ops, s1, out, 0.5 * h * h, s2);
        copy_into(s2, y);
        g.adj_mul_acc(y, s2, hc);
        copy_into(s3, s2);
        g.right_mul_acc(s2, s3, hc);
        jump_dual_acc(ops, s3, out, 0.5 * h, s2);
    }
    scale_re(s1, 0.5 * h);
    axpy_re(s1, 1.0, y);
    fill_zero(s2);
    g.adj_mul_acc(s1, s2, ONE);
    copy_into(s3, s1);
    axpy(s3, hc, s2);
    g.adj_mul_acc(s2, s3, h2);
    fill_zero(s2);
    g.right_mul_acc(s3, s2, ONE);
    axpy_re(out, 1.0, s3);
    axpy(out, hc, s2);
    g.right_mul_acc(s2, out, h2);
}

pub(crate) fn renormalize(m: &mut CMat) -> Result<()> {
    let tr = trace(m).re;
    if !(tr.is_finite() && tr.abs() > 1e-300) {
        return Err(Error::NonFinite(format!("density-matrix trace {tr}")));
    }
    scale_re(m, 1.0 / tr);
    Ok(())
}

/// One trace-renormalized second-order Kraus step from `t` to `t + dt`.
pub fn rouchon2_step(gen: &LindbladGenerator, t: f64, theta: &[f64], rho: &CMat, dt: f64) -> Result<CMat> {
    gen.check_theta(theta)?;
    gen.check_state(rho)?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let counter = MatrixCounter::new();
    let mut scratch = KrausScratch::new(&counter, gen.dim());
    let mut ops = gen.instant_ops();
    gen.update(t + 0.5 * dt, theta, &mut ops);
    let mut out = CMat::zeros(gen.dim(), gen.dim());
    kraus_apply(&ops, dt, rho, &mut out, &mut scratch);
    renormalize(&mut out)?;
    Ok(out)
}

/// Adaptive Dormand–Prince 4(5) settings. Times in ns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dp45Config {
    /// Mixed tolerance, `atol = rtol = tol`.
    pub tol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
}

impl Default for Dp45Config {
    fn default() -> Self {
        Dp45Config { tol: 1e-8, dt_init: 1e-3, dt_max: 0.1, dt_min: 1e-7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverConfig {
    Rouchon2 { dt: f64 },
    Dp45(Dp45Config),
}

pub const DEFAULT_DT_NS: f64 = 0.003;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Rouchon2 { dt: DEFAULT_DT_NS }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SolverConfig::Rouchon2 { dt } if !(dt > 0.0 && dt.is_finite()) => {
                Err(Error::invalid("Rouchon step dt must be positive"))
            }
            SolverConfig::Dp45(c)
                if !(c.tol > 0.0 && c.dt_init > 0.0 && c.dt_max >= c.dt_init && c.dt_min > 0.0) =>
            {
                Err(Error::invalid("DP45 requires tol > 0 and 0 < dt_min, 0 < dt_init ≤ dt_max"))
            }
            _ => Ok(()),
        }
    }
}

/// Number of equal Kraus steps covering an interval of length `span`.
pub(crate) fn kraus_steps(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

mod dp {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    /// Fifth-order minus embedded fourth-order weights.
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    pub const SAFETY: f64 = 0.9;
    pub const BETA: f64 = 0.04;
    pub const ALPHA: f64 = 0.2 - 0.75 * BETA;
    pub const MIN_FACTOR: f64 = 0.2;
    pub const MAX_FACTOR: f64 = 10.0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Rhs {
    Forward,
    Adjoint,
}

/// DP45 integrator over one or two coupled matrix components.
///
/// With `quadrature` enabled (components `[ρ, φ]`), the parameter-gradient
/// integrand is evaluated at every stage and integrated with the fifth-order
/// weights, as if it were an extra component of the system.
pub(crate) struct Dp45 {
    cfg: Dp45Config,
    kinds: Vec<Rhs>,
    k: Vec<Vec<TrackedMatrix>>,
    stage: Vec<TrackedMatrix>,
    tmp: TrackedMatrix,
    pub new: Vec<TrackedMatrix>,
    /// Per-stage integrand values when integrating the gradient.
    quad: Option<Vec<Vec<f64>>>,
    fsal: bool,
    h: f64,
    err_prev: f64,
    pub steps: usize,
}

impl Dp45 {
    pub fn new(cfg: Dp45Config, kinds: Vec<Rhs>, counter: &MatrixCounter, n: usize) -> Self {
        let k = kinds.iter().map(|_| (0..7).map(|_| counter.zeros(n)).collect()).collect();
        let new = kinds.iter().map(|_| counter.zeros(n)).collect();
        let stage = kinds.iter().map(|_| counter.zeros(n)).collect();
        Dp45 {
            cfg,
            kinds,
            k,
            stage,
            tmp: counter.zeros(n),
            new,
            quad: None,
            fsal: false,
            h: cfg.dt_init,
            err_prev: 1e-4,
            steps: 0,
        }
    }

    /// Enables stage-wise integration of the gradient over `n_params`.
    pub fn with_quadrature(mut self, n_params: usize) -> Self {
        self.quad = Some(vec![vec![0.0; n_params]; 7]);
        self
    }

    /// Forgets the cached last stage (call after an external state change).
    pub fn invalidate(&mut self) {
        self.fsal = false;
    }

    fn eval(&mut self, ops: &InstantOps, comp: usize, x: &CMat, slot: usize) {
        let out = &mut self.k[comp][slot];
        match self.kinds[comp] {
            Rhs::Forward => liouvillian_into(ops, x, out, &mut self.tmp),
            Rhs::Adjoint => adjoint_liouvillian_into(ops, x, out, &mut self.tmp),
        }
    }

    fn integrand(&mut self, gen: &LindbladGenerator, theta: &[f64], ops: &mut InstantOps, slot: usize, x: [&CMat; 2]) {
        if let Some(q) = self.quad.as_mut() {
            let g = &mut q[slot];
            g.iter_mut().for_each(|v| *v = 0.0);
            gen.accumulate_param_gradient(ops, theta, x[1], x[0], 1.0, g);
        }
    }

    /// Attempts one step of signed size `h` from `t`; on success the new
    /// states are in `self.new`. Returns the scaled error norm.
    fn attempt(
        &mut self,
        gen: &LindbladGenerator,
        theta: &[f64],
        ops: &mut InstantOps,
        t: f64,
        h: f64,
        y: &[&CMat],
    ) -> f64 {
        let nc = y.len();
        if !self.fsal {
            gen.update(t, theta, ops);
            for comp in 0..nc {
                self.eval(ops, comp, y[comp], 0);
            }
            if self.quad.is_some() {
                self.integrand(gen, theta, ops, 0, [y[0], y[1]]);
            }
        }
        for s in 1..7 {
            gen.update(t + dp::C[s] * h, theta, ops);
            for comp in 0..nc {
                let dst = if s < 6 { &mut self.stage[comp] } else { &mut self.new[comp] };
                copy_into(dst, y[comp]);
                for j in 0..s {
                    let a = dp::A[s][j];
                    if a != 0.0 {
                        axpy_re(dst, h * a, &self.k[comp][j]);
                    }
                }
            }
            // Every component's stage input is complete before the
            // integrand, which couples them, is evaluated.
            for comp in 0..nc {
                let x: &CMat = if s < 6 { &self.stage[comp] } else { &self.new[comp] };
                let out = &mut self.k[comp][s];
                match self.kinds[comp] {
                    Rhs::Forward => liouvillian_into(ops, x, out, &mut self.tmp),
                    Rhs::Adjoint => adjoint_liouvillian_into(ops, x, out, &mut self.tmp),
                }
            }
            if let Some(q) = self.quad.as_mut() {
                let src = if s < 6 { &self.stage } else { &self.new };
                let g = &mut q[s];
                g.iter_mut().for_each(|v| *v = 0.0);
                gen.accumulate_param_gradient(ops, theta, &src[1], &src[0], 1.0, g);
            }
        }
        let tol = self.cfg.tol;
        let mut err: f64 = 0.0;
        for comp in 0..nc {
            let ks: Vec<&[C64]> = self.k[comp].iter().map(|m| m.as_slice()).collect();
            let y0 = y[comp].as_slice();
            let y1 = self.new[comp].as_slice();
            for i in 0..y0.len() {
                let mut e = ZERO;
                for s in 0..7 {
                    if dp::E[s] != 0.0 {
                        e += ks[s][i] * dp::E[s];
                    }
                }
                let scale = tol + tol * y0[i].norm().max(y1[i].norm());
                err = err.max((e * h).norm() / scale);
            }
        }
        if err.is_nan() {
            f64::INFINITY
        } else {
            err
        }
    }

    /// Integrates from `t0` to `t1` (either direction), landing exactly on
    /// `t1`. `y` is updated in place. With quadrature enabled, adds
    /// `|h| Σ b_s g_s` of every accepted step to `grad`.
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &mut self,
        gen: &LindbladGenerator,
        theta: &[f64],
        ops: &mut InstantOps,
        t0: f64,
        t1: f64,
        y: &mut [&mut TrackedMatrix],
        grad: &mut [f64],
    ) -> Result<()> {
        let dir = if t1 >= t0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let eps = 1e-12 * t0.abs().max(t1.abs()).max(1.0);
        while dir * (t1 - t) > eps {
            let remaining = (t1 - t).abs();
            let mut h_abs = self.h.min(self.cfg.dt_max);
            let clamped = h_abs >= remaining;
            if clamped {
                h_abs = remaining;
            }
            let h = dir * h_abs;
            let ys: Vec<&CMat> = y.iter().map(|m| &***m).collect();
            let err = self.attempt(gen, theta, ops, t, h, &ys);
            if err <= 1.0 {
                if let Some(q) = self.quad.as_mut() {
                    for s in 0..6 {
                        let b = dp::A[6][s] * h_abs;
                        if b != 0.0 {
                            for (acc, v) in grad.iter_mut().zip(&q[s]) {
                                *acc += b * v;
                            }
                        }
                    }
                    q.swap(0, 6);
                }
                for (dst, src) in y.iter_mut().zip(self.new.iter_mut()) {
                    std::mem::swap(&mut **dst, src);
                }
                for comp in 0..self.k.len() {
                    self.k[comp].swap(0, 6);
                }
                self.fsal = true;
                self.steps += 1;
                t = if clamped { t1 } else { t + h };
                let fac = if err == 0.0 {
                    dp::MAX_FACTOR
                } else {
                    (dp::SAFETY * err.powf(-dp::ALPHA) * self.err_prev.powf(dp::BETA))
                        .clamp(dp::MIN_FACTOR, dp::MAX_FACTOR)
                };
                self.err_prev = err.max(1e-4);
                if !clamped {
                    self.h = (h_abs * fac).min(self.cfg.dt_max);
                } else {
                    self.h = self.h.max(h_abs * fac).min(self.cfg.dt_max);
                }
                for m in y.iter() {
                    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                        return Err(Error::NonFinite(format!("state at t = {t} ns")));
                    }
                }
            } else {
                self.fsal = false;
                let fac = (dp::SAFETY * err.powf(-dp::ALPHA)).clamp(dp::MIN_FACTOR, 1.0);
                self.h = h_abs * fac;
                if self.h < self.cfg.dt_min {
                    return Err(Error::StepUnderflow { t, dt: self.h });
                }
            }
        }
        Ok(())
    }
}

/// Result of a single adaptive step.
#[derive(Clone, Debug)]
pub struct Dp45Step {
    pub state: CMat,
    pub accepted_dt: f64,
    pub next_dt: f64,
}

/// One accepted adaptive step of at most `dt` from `t`. Rejected attempts
/// shrink the step until it is accepted.
pub fn dp45_step(
    gen: &LindbladGenerator,
    t: f64,
    theta: &[f64],
    rho: &CMat,
    dt: f64,
    cfg: &Dp45Config,
) -> Result<Dp45Step> {
    gen.check_theta(theta)?;
    gen.check_state(rho)?;
    SolverConfig::Dp45(*cfg).validate()?;
    let counter = MatrixCounter::new();
    let mut dp = Dp45::new(Dp45Config { dt_init: dt, ..*cfg }, vec![Rhs::Forward], &counter, gen.dim());
    let mut ops = gen.instant_ops();
    let start = counter.track(rho.clone());
    let ys: [&CMat; 1] = [&start];
    let mut h = dt.min(cfg.dt_max);
    loop {
        let err = dp.attempt(gen, theta, &mut ops, t, h, &ys);
        if err <= 1.0 {
            let fac = if err == 0.0 {
                dp::MAX_FACTOR
            } else {
                (dp::SAFETY * err.powf(-dp::ALPHA) * 1e-4f64.powf(dp::BETA)).clamp(dp::MIN_FACTOR, dp::MAX_FACTOR)
            };
            return Ok(Dp45Step {
                state: (*dp.new[0]).clone(),
                accepted_dt: h,
                next_dt: (h * fac).min(cfg.dt_max),
            });
        }
        dp.invalidate();
        h *= (dp::SAFETY * err.powf(-dp::ALPHA)).clamp(dp::MIN_FACTOR, 1.0);
        if h < cfg.dt_min {
            return Err(Error::StepUnderflow { t, dt: h });
        }
    }
}

/// Forward integrator that can stop at arbitrary event times.
pub(crate) struct Forward<'g> {
    gen: &'g LindbladGenerator,
    theta: &'g [f64],
    solver: SolverConfig,
    ops: InstantOps,
    kraus: Option<KrausScratch>,
    dp: Option<Dp45>,
    pub steps: usize,
}

impl<'g> Forward<'g> {
    pub fn new(gen: &'g LindbladGenerator, theta: &'g [f64], solver: SolverConfig, counter: &MatrixCounter) -> Self {
        let n = gen.dim();
        let (kraus, dp) = match solver {
            SolverConfig::Rouchon2 { .. } => (Some(KrausScratch::new(counter, n)), None),
            SolverConfig::Dp45(cfg) => (None, Some(Dp45::new(cfg, vec![Rhs::Forward], counter, n))),
        };
        Forward { gen, theta, solver, ops: gen.instant_ops(), kraus, dp, steps: 0 }
    }

    /// Advances `rho` from `t0` to `t1`; `buf` is scratch of the same size.
    pub fn advance(&mut self, rho: &mut TrackedMatrix, buf: &mut TrackedMatrix, t0: f64, t1: f64) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        match self.solver {
            SolverConfig::Rouchon2 { dt } => {
                let n = kraus_steps(t1 - t0, dt);
                let h = (t1 - t0) / n as f64;
                let scratch = self.kraus.as_mut().unwrap();
                for i in 0..n {
                    let tm = t0 + (i as f64 + 0.5) * h;
                    self.gen.update(tm, self.theta, &mut self.ops);
                    kraus_apply(&self.ops, h, rho, buf, scratch);
                    renormalize(buf)?;
                    std::mem::swap(rho, buf);
                }
                self.steps += n;
            }
            SolverConfig::Dp45(_) => {
                let dp = self.dp.as_mut().unwrap();
                let before = dp.steps;
                dp.advance(self.gen, self.theta, &mut self.ops, t0, t1, &mut [rho], &mut [])?;
                self.steps += dp.steps - before;
            }
        }
        if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("state at t = {t1} ns")));
        }
        Ok(())
    }
}

/// Expectation-value time series and optional states at the save times.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub save_times: Vec<f64>,
    pub states: Option<Vec<CMat>>,
    pub records: Vec<(String, Vec<C64>)>,
    pub final_state: Option<CMat>,
}

impl Trajectory {
    pub fn record(&self, name: &str) -> Result<&[C64]> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingRecord(name.to_string()))
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "time_ns")?;
        for (name, _) in &self.records {
            write!(w, ",{name}_re,{name}_im")?;
        }
        writeln!(w)?;
        for (i, t) in self.save_times.iter().enumerate() {
            write!(w, "{t}")?;
            for (_, v) in &self.records {
                write!(w, ",{},{}", v[i].re, v[i].im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// What to record during a forward integration.
#[derive(Clone, Debug, Default)]
pub struct Recording {
    pub observables: Vec<Observable>,
    pub store_states: bool,
}

pub(crate) fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub(crate) fn check_save_times(save_times: &[f64], t0: f64, tn: f64) -> Result<()> {
    if save_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("save times must be strictly increasing"));
    }
    for &s in save_times {
        if !s.is_finite() || (s < t0 && !same_time(s, t0)) || (s > tn && !same_time(s, tn)) {
            return Err(Error::invalid(format!("save time {s} outside [{t0}, {tn}]")));
        }
    }
    Ok(())
}

/// Sorted union of time lists with near-equal times merged.
pub(crate) fn merge_times(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().map_or(true, |&p| !same_time(p, t)) {
            out.push(t);
        }
    }
    out
}

/// Forward integration that records at save times and retains states at
/// `keep_times`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_forward(
    gen: &LindbladGenerator,
    theta: &[f64],
    rho0: &CMat,
    t0: f64,
    tn: f64,
    save_times: &[f64],
    keep_times: &[f64],
    solver: SolverConfig,
    recording: &Recording,
    counter: &MatrixCounter,
) -> Result<(Trajectory, Vec<(f64, TrackedMatrix)>, usize)> {
    gen.check_theta(theta)?;
    gen.check_state(rho0)?;
    solver.validate()?;
    if !(tn >= t0) {
        return Err(Error::invalid(format!("final time {tn} precedes initial time {t0}")));
    }
    check_save_times(save_times, t0, tn)?;
    let framed: Vec<FramedOperator> = recording.observables.iter().map(|o| gen.frame_observable(o)).collect();
    let mut traj = Trajectory {
        save_times: save_times.to_vec(),
        states: recording.store_states.then(Vec::new),
        records: recording.observables.iter().map(|o| (o.name.clone(), Vec::with_capacity(save_times.len()))).collect(),
        final_state: None,
    };
    let events = merge_times(&[&[t0, tn], save_times, keep_times]);
    let mut fwd = Forward::new(gen, theta, solver, counter);
    let mut rho = counter.track(rho0.clone());
    let mut buf = counter.zeros(gen.dim());
    let mut kept = Vec::new();
    let (mut si, mut ki) = (0, 0);
    let mut t = t0;
    for &te in &events {
        fwd.advance(&mut rho, &mut buf, t, te)?;
        t = te;
        while si < save_times.len() && same_time(save_times[si], te) {
            for ((_, rec), op) in traj.records.iter_mut().zip(&framed) {
                rec.push(op.expectation(te, &rho));
            }
            if let Some(states) = traj.states.as_mut() {
                states.push((*rho).clone());
            }
            si += 1;
        }
        while ki < keep_times.len() && same_time(keep_times[ki], te) {
            kept.push((keep_times[ki], rho.clone()));
            ki += 1;
        }
    }
    traj.final_state = Some(rho.into_inner());
    Ok((traj, kept, fwd.steps))
}

/// Integrates `dρ/dt = 𝓛ρ` from `t0` to `tn`, recording at `save_times`.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    gen: &LindbladGenerator,
    theta: &[f64],
    rho0: &CMat,
    t0: f64,
    tn: f64,
    save_times: &[f64],
    solver: SolverConfig,
    recording: &Recording,
) -> Result<Trajectory> {
    if !(tn > t0) {
        return Err(Error::invalid(format!("integration interval [{t0}, {tn}] is empty")));
    }
    let counter = MatrixCounter::new();
    run_forward(gen, theta, rho0, t0, tn, save_times, &[], solver, recording, &counter).map(|r| r.0)
}
