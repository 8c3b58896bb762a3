//! Exponential-integrator solvers for the probability-flow ODE.
//!
//! Every solver advances `x_s → x_t` through one of two affine maps,
//!
//! ```text
//! noise mode:  x_t = (α_t/α_s) x_s − σ_t (e^h − 1) D
//! data mode:   x_t = (σ_t/σ_s) x_s − α_t (e^{−h} − 1) D
//! ```
//!
//! and the families differ only in how `D` is assembled from the current
//! prediction and a short history of earlier ones. Each step costs exactly one
//! oracle evaluation, including the UniPC corrector, which reuses the
//! evaluation made at the start of the following step.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dualfast::{self, AnchorSource, DualFastConfig, Tau};
use crate::error::{Error, Result};
use crate::oracle::{NoiseOracle, PredictionPair};
use crate::schedule::{NoiseSchedule, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Ddim,
    DpmSolver2M,
    DpmSolverPp2M,
    UniPc,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Ddim, Family::DpmSolver2M, Family::DpmSolverPp2M, Family::UniPc];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Ddim => "ddim",
            Family::DpmSolver2M => "dpm-solver-2m",
            Family::DpmSolverPp2M => "dpm-solver++-2m",
            Family::UniPc => "unipc",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn is_two_step(&self) -> bool {
        matches!(self, Family::DpmSolver2M | Family::DpmSolverPp2M)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionMode {
    Noise,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub family: Family,
    pub order: usize,
    pub prediction_mode: PredictionMode,
    /// UniPC only.
    pub use_corrector: bool,
    /// Clamp data predictions to `[-bound, bound]` (data mode only).
    pub threshold: Option<f64>,
    pub dualfast: Option<DualFastConfig>,
}

impl SolverConfig {
    pub fn ddim() -> Self {
        Self {
            family: Family::Ddim,
            order: 1,
            prediction_mode: PredictionMode::Noise,
            use_corrector: false,
            threshold: None,
            dualfast: None,
        }
    }

    pub fn dpm_solver_2m() -> Self {
        Self { family: Family::DpmSolver2M, order: 2, ..Self::ddim() }
    }

    pub fn dpm_solverpp_2m() -> Self {
        Self { family: Family::DpmSolverPp2M, order: 2, prediction_mode: PredictionMode::Data, ..Self::ddim() }
    }

    pub fn unipc(order: usize, use_corrector: bool) -> Self {
        Self { family: Family::UniPc, order, use_corrector, ..Self::ddim() }
    }

    /// Default configuration for a family (UniPC: order 3 with corrector).
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Ddim => Self::ddim(),
            Family::DpmSolver2M => Self::dpm_solver_2m(),
            Family::DpmSolverPp2M => Self::dpm_solverpp_2m(),
            Family::UniPc => Self::unipc(3, true),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (orders, mode) = match self.family {
            Family::Ddim => (1..=1, PredictionMode::Noise),
            Family::DpmSolver2M => (2..=2, PredictionMode::Noise),
            Family::DpmSolverPp2M => (2..=2, PredictionMode::Data),
            Family::UniPc => (1..=3, PredictionMode::Noise),
        };
        if !orders.contains(&self.order) {
            return Err(Error::Config("order not supported by this solver family"));
        }
        if self.prediction_mode != mode {
            return Err(Error::Config("prediction mode not supported by this solver family"));
        }
        if self.use_corrector && self.family != Family::UniPc {
            return Err(Error::Config("only UniPC has a corrector"));
        }
        if let Some(b) = self.threshold {
            if self.prediction_mode != PredictionMode::Data {
                return Err(Error::Config("thresholding needs data prediction"));
            }
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Config("threshold bound must be positive"));
            }
        }
        if let Some(d) = &self.dualfast {
            d.validate()?;
        }
        Ok(())
    }

    /// Short label such as `ddim+dualfast` or `unipc3c`.
    pub fn label(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut s = alloc::string::String::new();
        s.push_str(self.family.name());
        if self.family == Family::UniPc {
            let _ = write!(s, "{}{}", self.order, if self.use_corrector { "c" } else { "" });
        }
        if self.dualfast.is_some() {
            s.push_str("+dualfast");
        }
        s
    }
}

/// `x_t = (α_t/α_s) x_s − σ_t (e^h − 1) D`.
pub fn unified_update_noise(schedule: &NoiseSchedule, x_s: &[f64], d: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    check_inputs(x_s, d)?;
    let h = schedule.step_size(s, t)?;
    let (a_s, _) = schedule.alpha_sigma(s)?;
    let (a_t, s_t) = schedule.alpha_sigma(t)?;
    let (lin, coef) = (a_t / a_s, s_t * libm::expm1(h));
    Ok(x_s.iter().zip(d).map(|(x, d)| lin * x - coef * d).collect())
}

/// `x_t = (σ_t/σ_s) x_s − α_t (e^{−h} − 1) D`.
pub fn unified_update_data(schedule: &NoiseSchedule, x_s: &[f64], d: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    check_inputs(x_s, d)?;
    let h = schedule.step_size(s, t)?;
    let (_, s_s) = schedule.alpha_sigma(s)?;
    let (a_t, s_t) = schedule.alpha_sigma(t)?;
    let (lin, coef) = (s_t / s_s, a_t * libm::expm1(-h));
    Ok(x_s.iter().zip(d).map(|(x, d)| lin * x - coef * d).collect())
}

fn check_inputs(x: &[f64], d: &[f64]) -> Result<()> {
    if x.len() != d.len() {
        return Err(Error::Argument("state and D dimensions differ"));
    }
    if x.iter().chain(d).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "update input", step: None });
    }
    Ok(())
}

/// Second-order multistep coefficient `h_cur / (2 h_prev)`.
pub fn two_step_coefficient(h_cur: f64, h_prev: f64) -> Result<f64> {
    if !(h_prev > 0.0) {
        return Err(Error::Grid("previous step has zero log-SNR width"));
    }
    Ok(h_cur / (2.0 * h_prev))
}

/// Exact weight `k! Σ_{i>k} h^{i−k}/i! / (e^h − 1)`: the value of `D` produced by
/// integrating `ε(λ_s + u) = u^k / h^k` against the noise-mode kernel.
fn taylor_target(k: usize, h: f64) -> f64 {
    // term_i = k! h^{i−k} / i!, starting at i = k + 1
    let mut term = h / (k + 1) as f64;
    let mut sum = 0.0;
    let mut i = k + 1;
    while i < k + 200 {
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        i += 1;
        term *= h / i as f64;
    }
    sum / libm::expm1(h)
}

/// UniPC coefficients `ρ` for nodes at relative log-SNR offsets `r_j = (λ_j − λ_s)/h`.
///
/// With `D = ε_s + Σ_j ρ_j (ε_j − ε_s) / r_j`, the `ρ` solve the Vandermonde
/// system `Σ_j ρ_j r_j^{k−1} = k! φ-moment_k(h)` for `k = 1..K`, so `D` is exact
/// for polynomial predictions of degree `K`. A single node uses `ρ = ½`.
pub fn unipc_rhos(rks: &[f64], h: f64) -> Result<Vec<f64>> {
    let k = rks.len();
    match k {
        0 => return Ok(Vec::new()),
        1 => return Ok(alloc::vec![0.5]),
        _ => {}
    }
    if !(h > 0.0) {
        return Err(Error::Grid("step has zero log-SNR width"));
    }
    for (i, &r) in rks.iter().enumerate() {
        if !(r.abs() > 1e-12) || rks[..i].iter().any(|&q| (q - r).abs() <= 1e-12) {
            return Err(Error::Grid("coincident log-SNR nodes"));
        }
    }
    let m = DMatrix::from_fn(k, k, |row, col| libm::pow(rks[col], row as f64));
    let b = DVector::from_fn(k, |row, _| taylor_target(row + 1, h));
    let sol = m.lu().solve(&b).ok_or(Error::Grid("singular UniPC coefficient system"))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Grid("singular UniPC coefficient system"));
    }
    Ok(sol.iter().copied().collect())
}

/// `ε_s + Σ_j w_j (ε_j − ε_s) [+ w_new (ε_new − ε_s)]`.
pub fn unipc_combine(eps_s: &[f64], history: &[(&[f64], f64)], new: Option<(&[f64], f64)>) -> Result<Vec<f64>> {
    let mut d = eps_s.to_vec();
    for (eps, w) in history.iter().copied().chain(new) {
        if eps.len() != eps_s.len() {
            return Err(Error::Argument("history prediction dimension differs"));
        }
        for ((acc, e), e0) in d.iter_mut().zip(eps).zip(eps_s) {
            *acc += w * (e - e0);
        }
    }
    Ok(d)
}

/// A prediction kept for later multistep use, with its log-SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub pair: PredictionPair,
    pub lambda: f64,
}

/// Mutable per-trajectory solver state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub x: Vec<f64>,
    /// Index into the grid of the time `x` sits at.
    pub index: usize,
    /// Most recent prediction first; times strictly increase towards the back.
    pub history: VecDeque<HistoryEntry>,
    anchor: Option<Vec<f64>>,
    /// State at the start of the previous step, for the UniPC corrector.
    prev_x: Option<Vec<f64>>,
}

impl StepState {
    pub fn anchor(&self) -> Option<&[f64]> {
        self.anchor.as_deref()
    }
}

/// Complete sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: TimeGrid,
    pub states: Vec<(f64, Vec<f64>)>,
    pub nfe: u64,
    pub config: SolverConfig,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> &[f64] {
        &self.states[self.states.len() - 1].1
    }
}

/// Drives one solver configuration over a fixed grid.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    schedule: &'a NoiseSchedule,
    config: SolverConfig,
    grid: &'a TimeGrid,
    lambdas: Vec<f64>,
    /// Grid index whose prediction becomes the anchor (oracle-sourced anchors).
    anchor_index: Option<usize>,
}

impl<'a> Sampler<'a> {
    pub fn new(schedule: &'a NoiseSchedule, config: SolverConfig, grid: &'a TimeGrid) -> Result<Self> {
        config.validate()?;
        let lambdas = grid.times().iter().map(|&t| schedule.lambda_of(t)).collect::<Result<Vec<_>>>()?;
        let anchor_index = match config.dualfast {
            Some(DualFastConfig { anchor_source: AnchorSource::Oracle, tau: Tau::Time(tau), .. }) => {
                let last = grid.num_steps() - 1;
                Some(grid.times()[..=last].iter().rposition(|&t| t >= tau).unwrap_or(0))
            }
            _ => None,
        };
        Ok(Self { schedule, config, grid, lambdas, anchor_index })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn initial_state(&self, x_t: Vec<f64>) -> StepState {
        let anchor = match self.config.dualfast {
            Some(DualFastConfig { anchor_source: AnchorSource::InitialNoise, .. }) => Some(x_t.clone()),
            _ => None,
        };
        StepState { x: x_t, index: 0, history: VecDeque::new(), anchor, prev_x: None }
    }

    /// Mixing coefficient applied at grid index `i` for a step of size `h`,
    /// or `None` when the correction is off there.
    fn coefficient_at(&self, i: usize, h: f64) -> Result<Option<f64>> {
        let Some(dual) = &self.config.dualfast else { return Ok(None) };
        if matches!(dual.tau, Tau::Current) {
            return Ok(None);
        }
        if let Some(k) = self.anchor_index {
            if i <= k {
                return Ok(None);
            }
        }
        let c = dualfast::mixing_coefficient(dual, self.grid.times()[i], h)?;
        Ok(if c == 0.0 { None } else { Some(c) })
    }

    fn h(&self, i: usize) -> f64 {
        self.lambdas[i + 1] - self.lambdas[i]
    }

    /// Evaluate the oracle at the current state and record the anchor if due.
    fn evaluate<O: NoiseOracle + ?Sized>(&self, oracle: &O, state: &mut StepState) -> Result<PredictionPair> {
        let i = state.index;
        if i >= self.grid.num_steps() {
            return Err(Error::Argument("trajectory already reached the end of the grid"));
        }
        let t = self.grid.times()[i];
        let mut eps = alloc::vec![0.0; state.x.len()];
        oracle.predict_noise(&state.x, t, &mut eps)?;
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "oracle output", step: Some(i) });
        }
        if self.anchor_index == Some(i) {
            state.anchor = Some(eps.clone());
        }
        let mut pair = PredictionPair::from_noise(self.schedule, &state.x, t, eps)?;
        if let Some(b) = self.config.threshold {
            pair.data_pred.iter_mut().for_each(|v| *v = v.clamp(-b, b));
        }
        Ok(pair)
    }

    fn push_history(&self, state: &mut StepState, pair: PredictionPair, capacity: usize) {
        let lambda = self.lambdas[state.index];
        state.history.push_front(HistoryEntry { pair, lambda });
        state.history.truncate(capacity.max(1));
    }

    fn finish(&self, mut state: StepState, x_next: Vec<f64>) -> Result<StepState> {
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "state", step: Some(state.index) });
        }
        state.prev_x = Some(core::mem::replace(&mut state.x, x_next));
        state.index += 1;
        Ok(state)
    }

    fn anchor<'s>(&self, state: &'s StepState) -> Result<&'s [f64]> {
        state.anchor.as_deref().ok_or(Error::Config("correction active without an anchor prediction"))
    }

    /// First-order noise-mode `D`, corrected when active.
    fn first_order_noise(&self, state: &StepState, eps: &[f64], c: Option<f64>) -> Result<Vec<f64>> {
        match c {
            Some(c) => dualfast::corrected_noise(eps, self.anchor(state)?, c),
            None => Ok(eps.to_vec()),
        }
    }

    /// First-order step in noise prediction (DDIM).
    pub fn ddim_step<O: NoiseOracle + ?Sized>(&self, oracle: &O, mut state: StepState) -> Result<StepState> {
        let pair = self.evaluate(oracle, &mut state)?;
        let i = state.index;
        let h = self.h(i);
        let c = self.coefficient_at(i, h)?;
        let d = self.first_order_noise(&state, &pair.noise_pred, c)?;
        let (s, t) = (self.grid.times()[i], self.grid.times()[i + 1]);
        let x_next = unified_update_noise(self.schedule, &state.x, &d, s, t)?;
        self.push_history(&mut state, pair, 1);
        self.finish(state, x_next)
    }

    /// Second-order multistep step in noise prediction.
    pub fn dpm_solver_2m_step<O: NoiseOracle + ?Sized>(&self, oracle: &O, mut state: StepState) -> Result<StepState> {
        let pair = self.evaluate(oracle, &mut state)?;
        let i = state.index;
        let h = self.h(i);
        let c = self.coefficient_at(i, h)?;
        let mut d = self.first_order_noise(&state, &pair.noise_pred, c)?;
        if let Some(prev) = state.history.front() {
            let a1 = two_step_coefficient(h, self.lambdas[i] - prev.lambda)?;
            let prev_eps = if self.corrects_difference() {
                let c_prev = self.coefficient_at(i - 1, self.h(i - 1))?;
                self.first_order_noise(&state, &prev.pair.noise_pred, c_prev)?
            } else {
                prev.pair.noise_pred.clone()
            };
            let cur = if self.corrects_difference() { &d } else { &pair.noise_pred };
            let diff: Vec<f64> = cur.iter().zip(&prev_eps).map(|(a, b)| a - b).collect();
            d.iter_mut().zip(diff).for_each(|(d, df)| *d += a1 * df);
        }
        let (s, t) = (self.grid.times()[i], self.grid.times()[i + 1]);
        let x_next = unified_update_noise(self.schedule, &state.x, &d, s, t)?;
        self.push_history(&mut state, pair, 1);
        self.finish(state, x_next)
    }

    fn corrects_difference(&self) -> bool {
        self.config.dualfast.is_some_and(|d| d.correct_difference)
    }

    fn first_order_data(&self, state: &StepState, x: &[f64], t: f64, x_pred: &[f64], c: Option<f64>) -> Result<Vec<f64>> {
        match c {
            Some(c) => dualfast::corrected_data(self.schedule, x, t, x_pred, self.anchor(state)?, c),
            None => Ok(x_pred.to_vec()),
        }
    }

    /// Second-order multistep step in data prediction.
    pub fn dpm_solverpp_2m_step<O: NoiseOracle + ?Sized>(&self, oracle: &O, mut state: StepState) -> Result<StepState> {
        let pair = self.evaluate(oracle, &mut state)?;
        let i = state.index;
        let h = self.h(i);
        let c = self.coefficient_at(i, h)?;
        let (s, t) = (self.grid.times()[i], self.grid.times()[i + 1]);
        let mut d = self.first_order_data(&state, &state.x, s, &pair.data_pred, c)?;
        if let Some(prev) = state.history.front() {
            let a2 = two_step_coefficient(h, self.lambdas[i] - prev.lambda)?;
            let diff: Vec<f64> = if self.corrects_difference() {
                let c_prev = self.coefficient_at(i - 1, self.h(i - 1))?;
                let prev_x = state.prev_x.as_deref().ok_or(Error::Argument("missing previous state"))?;
                let prev_d = self.first_order_data(&state, prev_x, prev.pair.t, &prev.pair.data_pred, c_prev)?;
                d.iter().zip(&prev_d).map(|(a, b)| a - b).collect()
            } else {
                pair.data_pred.iter().zip(&prev.pair.data_pred).map(|(a, b)| a - b).collect()
            };
            d.iter_mut().zip(diff).for_each(|(d, df)| *d += a2 * df);
        }
        let x_next = unified_update_data(self.schedule, &state.x, &d, s, t)?;
        self.push_history(&mut state, pair, 1);
        self.finish(state, x_next)
    }

    /// Relative offsets and predictions of the `count` newest history entries.
    fn prior_nodes<'s>(&self, state: &'s StepState, skip: usize, count: usize, lambda_s: f64, h: f64) -> (Vec<f64>, Vec<&'s [f64]>) {
        state
            .history
            .iter()
            .skip(skip)
            .take(count)
            .map(|e| ((e.lambda - lambda_s) / h, e.pair.noise_pred.as_slice()))
            .unzip()
    }

    /// UniPC step of order `p`: optional corrector for the previous step, then predictor.
    pub fn unipc_step<O: NoiseOracle + ?Sized>(
        &self,
        oracle: &O,
        mut state: StepState,
        p: usize,
        use_corrector: bool,
    ) -> Result<StepState> {
        if !(1..=3).contains(&p) {
            return Err(Error::Config("UniPC order must be 1, 2 or 3"));
        }
        let pair = self.evaluate(oracle, &mut state)?;
        let i = state.index;
        if use_corrector && i > 0 {
            state.x = self.unipc_correct(&state, &pair.noise_pred)?;
        }
        let h = self.h(i);
        let order = p.min(i + 1);
        let (rks, eps_prior) = self.prior_nodes(&state, 0, order - 1, self.lambdas[i], h);
        let rhos = unipc_rhos(&rks, h)?;
        let c = if use_corrector { None } else { self.coefficient_at(i, h)? };
        let eps_s = self.first_order_noise(&state, &pair.noise_pred, c)?;
        let weighted: Vec<(&[f64], f64)> =
            eps_prior.iter().zip(rhos.iter().zip(&rks)).map(|(e, (rho, r))| (*e, rho / r)).collect();
        let d = unipc_combine_shifted(&eps_s, &pair.noise_pred, &weighted)?;
        let (s, t) = (self.grid.times()[i], self.grid.times()[i + 1]);
        let x_next = unified_update_noise(self.schedule, &state.x, &d, s, t)?;
        self.push_history(&mut state, pair, p);
        self.finish(state, x_next)
    }

    /// Redo the step `t_{i−1} → t_i` using the new evaluation at `t_i`.
    fn unipc_correct(&self, state: &StepState, eps_new: &[f64]) -> Result<Vec<f64>> {
        let i = state.index;
        let prev_x = state.prev_x.as_deref().ok_or(Error::Argument("missing previous state"))?;
        let last = state.history.front().ok_or(Error::Argument("missing history"))?;
        let h = self.h(i - 1);
        let prev_order = self.config_order().min(i);
        let (mut rks, eps) = self.prior_nodes(state, 1, prev_order - 1, last.lambda, h);
        rks.push(1.0);
        let rhos = unipc_rhos(&rks, h)?;
        let new_coeff = rhos[rhos.len() - 1];
        let weighted: Vec<(&[f64], f64)> =
            eps.iter().zip(rhos.iter().zip(&rks)).map(|(e, (rho, r))| (*e, rho / r)).collect();
        let d = match self.coefficient_at(i, h)? {
            Some(c) => dualfast::dualfast_unipc_corrector_d(
                &last.pair.noise_pred,
                &weighted,
                eps_new,
                new_coeff,
                self.anchor(state)?,
                c,
            )?,
            None => unipc_combine(&last.pair.noise_pred, &weighted, Some((eps_new, new_coeff)))?,
        };
        unified_update_noise(self.schedule, prev_x, &d, last.pair.t, self.grid.times()[i])
    }

    fn config_order(&self) -> usize {
        self.config.order
    }

    /// One step of the configured family.
    pub fn step<O: NoiseOracle + ?Sized>(&self, oracle: &O, state: StepState) -> Result<StepState> {
        match self.config.family {
            Family::Ddim => self.ddim_step(oracle, state),
            Family::DpmSolver2M => self.dpm_solver_2m_step(oracle, state),
            Family::DpmSolverPp2M => self.dpm_solverpp_2m_step(oracle, state),
            Family::UniPc => self.unipc_step(oracle, state, self.config.order, self.config.use_corrector),
        }
    }

    /// Run the full grid, calling `visit(index, t, x)` on every state.
    pub fn run<O, F>(&self, oracle: &O, x_t: Vec<f64>, mut visit: F) -> Result<(Vec<f64>, u64)>
    where
        O: NoiseOracle + ?Sized,
        F: FnMut(usize, f64, &[f64]),
    {
        if x_t.len() != oracle.dim() {
            return Err(Error::Argument("initial state dimension differs from oracle"));
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "initial state", step: Some(0) });
        }
        let mut state = self.initial_state(x_t);
        let mut nfe = 0u64;
        visit(0, self.grid.times()[0], &state.x);
        while state.index < self.grid.num_steps() {
            state = self.step(oracle, state)?;
            nfe += 1;
            visit(state.index, self.grid.times()[state.index], &state.x);
        }
        Ok((state.x, nfe))
    }
}

/// Like [`unipc_combine`] but with the base term `eps_s` (possibly corrected)
/// and differences taken against the raw current prediction `eps_raw`.
fn unipc_combine_shifted(eps_s: &[f64], eps_raw: &[f64], history: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    let mut d = eps_s.to_vec();
    for (eps, w) in history {
        if eps.len() != eps_raw.len() {
            return Err(Error::Argument("history prediction dimension differs"));
        }
        for ((acc, e), e0) in d.iter_mut().zip(*eps).zip(eps_raw) {
            *acc += w * (e - e0);
        }
    }
    Ok(d)
}

/// Sample one trajectory and keep every state.
pub fn sample<O: NoiseOracle + ?Sized>(
    schedule: &NoiseSchedule,
    oracle: &O,
    config: &SolverConfig,
    grid: &TimeGrid,
    x_t: Vec<f64>,
) -> Result<TrajectoryRecord> {
    let sampler = Sampler::new(schedule, *config, grid)?;
    let mut states = Vec::with_capacity(grid.times().len());
    let (_, nfe) = sampler.run(oracle, x_t, |_, t, x| states.push((t, x.to_vec())))?;
    Ok(TrajectoryRecord { grid: grid.clone(), states, nfe, config: *config })
}

/// Sample one trajectory and return only its endpoint and NFE.
pub fn sample_endpoint<O: NoiseOracle + ?Sized>(
    schedule: &NoiseSchedule,
    oracle: &O,
    config: &SolverConfig,
    grid: &TimeGrid,
    x_t: Vec<f64>,
) -> Result<(Vec<f64>, u64)> {
    Sampler::new(schedule, *config, grid)?.run(oracle, x_t, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualfast::MixSchedule;
    use crate::mixture::GaussianMixture;
    use crate::oracle::{Counting, ExactOracle, PerturbedOracle};
    use crate::rng;
    use crate::schedule::GridScheme;
    use alloc::vec;

    struct Constant(Vec<f64>);

    impl NoiseOracle for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn predict_noise(&self, _: &[f64], _: f64, out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(&self.0);
            Ok(())
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    fn reference_oracle() -> ExactOracle {
        ExactOracle::new(GaussianMixture::reference(), NoiseSchedule::default())
    }

    #[test]
    fn zero_d_keeps_linear_part() {
        let s = NoiseSchedule::default();
        let x = [1.5, -2.0];
        let (a_s, sg_s) = s.alpha_sigma(0.7).unwrap();
        let (a_t, sg_t) = s.alpha_sigma(0.4).unwrap();
        let y = unified_update_noise(&s, &x, &[0.0, 0.0], 0.7, 0.4).unwrap();
        assert!(close(&y, &[a_t / a_s * 1.5, a_t / a_s * -2.0], 1e-15));
        let y = unified_update_data(&s, &x, &[0.0, 0.0], 0.7, 0.4).unwrap();
        assert!(close(&y, &[sg_t / sg_s * 1.5, sg_t / sg_s * -2.0], 1e-15));
        // h = 0 is the identity regardless of D
        let y = unified_update_noise(&s, &x, &[3.0, 4.0], 0.5, 0.5).unwrap();
        assert_eq!(y, x.to_vec());
        assert!(unified_update_noise(&s, &x, &[0.0], 0.5, 0.4).is_err());
        assert!(unified_update_noise(&s, &x, &[0.0, 0.0], 0.4, 0.5).is_err());
    }

    #[test]
    fn ddim_form_matches_both_modes() {
        let s = NoiseSchedule::default();
        let o = reference_oracle();
        let (sv, tv) = (0.8, 0.55);
        let x = vec![0.4, 1.3];
        let pair = PredictionPair::from_noise(&s, &x, sv, o.predict(&x, sv).unwrap()).unwrap();
        let (a_t, sg_t) = s.alpha_sigma(tv).unwrap();
        let direct: Vec<f64> = pair.data_pred.iter().zip(&pair.noise_pred).map(|(d, e)| a_t * d + sg_t * e).collect();
        let via_noise = unified_update_noise(&s, &x, &pair.noise_pred, sv, tv).unwrap();
        let via_data = unified_update_data(&s, &x, &pair.data_pred, sv, tv).unwrap();
        assert!(close(&via_noise, &direct, 1e-12));
        assert!(close(&via_data, &direct, 1e-12));
    }

    #[test]
    fn ddim_is_linear_on_unit_gaussian() {
        let s = NoiseSchedule::default();
        let o = ExactOracle::new(GaussianMixture::standard(2), s);
        let grid = s.make_grid(6, GridScheme::UniformTime).unwrap();
        let sampler = Sampler::new(&s, SolverConfig::ddim(), &grid).unwrap();
        let mut state = sampler.initial_state(vec![0.9, -1.7]);
        for w in grid.times().windows(2) {
            let before = state.x.clone();
            state = sampler.step(&o, state).unwrap();
            let (a_s, sg_s) = s.alpha_sigma(w[0]).unwrap();
            let (a_t, sg_t) = s.alpha_sigma(w[1]).unwrap();
            let k = a_t * a_s + sg_t * sg_s;
            let want: Vec<f64> = before.iter().map(|v| k * v).collect();
            assert!(close(&state.x, &want, 1e-12));
        }
    }

    #[test]
    fn constant_prediction_reduces_multistep_to_ddim() {
        let s = NoiseSchedule::default();
        let o = Constant(vec![0.3, -0.8]);
        let grid = s.make_grid(9, GridScheme::UniformLogSnr).unwrap();
        let x = vec![1.0, 2.0];
        let (base, _) = sample_endpoint(&s, &o, &SolverConfig::ddim(), &grid, x.clone()).unwrap();
        for cfg in [SolverConfig::dpm_solver_2m(), SolverConfig::unipc(2, false), SolverConfig::unipc(3, true)] {
            let (y, _) = sample_endpoint(&s, &o, &cfg, &grid, x.clone()).unwrap();
            assert!(close(&y, &base, 1e-12), "{}", cfg.label());
        }
    }

    #[test]
    fn low_order_unipc_matches_classic_solvers() {
        let s = NoiseSchedule::default();
        let o = PerturbedOracle::with_defaults(reference_oracle(), 3);
        for n in [5, 8, 20] {
            let grid = s.make_grid(n, GridScheme::UniformLogSnr).unwrap();
            for k in 0..8 {
                let x = rng::initial_noise(11, k, 2);
                let pairs = [
                    (SolverConfig::unipc(1, false), SolverConfig::ddim()),
                    (SolverConfig::unipc(2, false), SolverConfig::dpm_solver_2m()),
                ];
                for (a, b) in pairs {
                    let (ya, _) = sample_endpoint(&s, &o, &a, &grid, x.clone()).unwrap();
                    let (yb, _) = sample_endpoint(&s, &o, &b, &grid, x.clone()).unwrap();
                    assert!(close(&ya, &yb, 1e-12), "{} vs {}", a.label(), b.label());
                }
            }
        }
    }

    #[test]
    fn one_evaluation_per_step() {
        let s = NoiseSchedule::default();
        let linear = DualFastConfig { mix: MixSchedule::Linear { start: 0.5, end: 0.0 }, ..Default::default() };
        let mid = DualFastConfig { tau: Tau::Time(0.5), anchor_source: AnchorSource::Oracle, ..Default::default() };
        for n in [1, 2, 5, 13] {
            let grid = s.make_grid(n, GridScheme::UniformLogSnr).unwrap();
            for family in Family::ALL {
                for dual in [None, Some(linear), Some(mid)] {
                    let mut cfg = SolverConfig::for_family(family);
                    cfg.dualfast = dual;
                    let o = Counting::new(reference_oracle());
                    let (_, nfe) = sample_endpoint(&s, &o, &cfg, &grid, vec![0.2, -0.1]).unwrap();
                    assert_eq!(nfe, n as u64);
                    assert_eq!(o.count(), n as u64, "{}", cfg.label());
                }
            }
        }
    }

    #[test]
    fn record_keeps_every_state() {
        let s = NoiseSchedule::default();
        let grid = s.make_grid(7, GridScheme::UniformTime).unwrap();
        let rec = sample(&s, &reference_oracle(), &SolverConfig::unipc(3, true), &grid, vec![1.0, 0.0]).unwrap();
        assert_eq!(rec.states.len(), 8);
        assert_eq!(rec.nfe, 7);
        assert_eq!(rec.states[0].1, vec![1.0, 0.0]);
        assert_eq!(rec.endpoint(), rec.states[7].1.as_slice());
        let times: Vec<f64> = rec.states.iter().map(|p| p.0).collect();
        assert_eq!(times, grid.times().to_vec());
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = NoiseSchedule::default();
        let o = PerturbedOracle::with_defaults(reference_oracle(), 0);
        let grid = s.make_grid(10, GridScheme::UniformLogSnr).unwrap();
        for family in Family::ALL {
            let cfg = dualfast::attach(SolverConfig::for_family(family), DualFastConfig::default()).unwrap();
            let x = rng::initial_noise(5, 2, 2);
            let a = sample_endpoint(&s, &o, &cfg, &grid, x.clone()).unwrap().0;
            let b = sample_endpoint(&s, &o, &cfg, &grid, x).unwrap().0;
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rhos_integrate_polynomials_exactly() {
        // D should equal ∫₀ʰ e^{h−u} p(u/h) du / (e^h − 1) for p of degree ≤ K
        let h = 0.37;
        let simpson = |p: &dyn Fn(f64) -> f64| {
            let m = 2000;
            let dx = h / m as f64;
            let mut acc = 0.0;
            for i in 0..=m {
                let u = i as f64 * dx;
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * libm::exp(h - u) * p(u / h);
            }
            acc * dx / 3.0 / libm::expm1(h)
        };
        for rks in [vec![-1.0, 1.0], vec![-0.8, -1.9, 1.0], vec![-1.2, -2.5]] {
            let rho = unipc_rhos(&rks, h).unwrap();
            let deg = rks.len() as i32;
            let p = |r: f64| (0..=deg).map(|j| (0.3 + j as f64) * libm::pow(r, j as f64)).sum::<f64>();
            let d = p(0.0) + rks.iter().zip(&rho).map(|(r, w)| w * (p(*r) - p(0.0)) / r).sum::<f64>();
            assert!((d - simpson(&p)).abs() < 1e-10, "{rks:?}");
        }
    }

    #[test]
    fn rhos_edge_cases() {
        assert!(unipc_rhos(&[], 0.3).unwrap().is_empty());
        assert_eq!(unipc_rhos(&[-1.0], 0.3).unwrap(), vec![0.5]);
        for bad in [vec![-1.0, -1.0], vec![0.0, 1.0]] {
            assert!(matches!(unipc_rhos(&bad, 0.3), Err(Error::Grid(_))));
        }
        assert!(matches!(unipc_rhos(&[-1.0, 1.0], 0.0), Err(Error::Grid(_))));
        assert!(matches!(two_step_coefficient(0.1, 0.0), Err(Error::Grid(_))));
        assert_eq!(two_step_coefficient(0.2, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn config_validation_and_labels() {
        assert!(SolverConfig { use_corrector: true, ..SolverConfig::ddim() }.validate().is_err());
        assert!(SolverConfig::unipc(4, true).validate().is_err());
        assert!(SolverConfig { prediction_mode: PredictionMode::Data, ..SolverConfig::unipc(3, true) }.validate().is_err());
        assert!(SolverConfig { threshold: Some(1.0), ..SolverConfig::ddim() }.validate().is_err());
        assert!(SolverConfig { threshold: Some(1.0), ..SolverConfig::dpm_solverpp_2m() }.validate().is_ok());
        assert_eq!(SolverConfig::unipc(3, true).label(), "unipc3c");
        let d = dualfast::attach(SolverConfig::ddim(), DualFastConfig::default()).unwrap();
        assert_eq!(d.label(), "ddim+dualfast");
        for f in Family::ALL {
            assert_eq!(Family::parse(f.name()), Some(f));
        }
        assert_eq!(Family::parse("euler"), None);
    }

    #[test]
    fn rejects_non_finite_start() {
        let s = NoiseSchedule::default();
        let grid = s.make_grid(4, GridScheme::UniformLogSnr).unwrap();
        let r = sample_endpoint(&s, &reference_oracle(), &SolverConfig::ddim(), &grid, vec![f64::NAN, 0.0]);
        assert!(matches!(r, Err(Error::NonFinite { step: Some(0), .. })));
        assert!(sample_endpoint(&s, &reference_oracle(), &SolverConfig::ddim(), &grid, vec![0.0]).is_err());
    }
}
