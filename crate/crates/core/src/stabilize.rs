//! Flow-guided temporal regularization of material-map sequences.
//!
//! Minimizes, over all frames jointly,
//!
//! ```text
//! E = sum_t  <H_delta(obs_t - x_t), w_t>  +  lambda1 * TV_eps(x_t)
//!   + sum_{t<T-1} lambda2 * || (warp(x_{t+1}) - x_t) .* V_t ||^2
//! ```
//!
//! where `w = 1 - sigma` is the per-pixel confidence weight, `warp`
//! backward-warps frame t+1 onto frame t's grid through the step's flow,
//! and `V_t` masks pixels with forward/backward-consistent flow landing on
//! foreground. The solver is block-coordinate Adam: one Adam step per frame
//! per sweep, safeguarded by a step-halving line search on the frame's
//! local objective so the recorded objective trace never increases.

use crate::error::{Error, Result};
use crate::raster::{
    backward_warp, bilinear_footprint, gradient_x_adjoint, gradient_y_adjoint, spatial_gradients,
    BinaryMask, FlowField, ImagePlane,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizeConfig {
    /// TV weight (lambda1).
    pub lambda1: f64,
    /// Temporal weight (lambda2).
    pub lambda2: f64,
    /// Huber threshold for the data term.
    pub delta: f64,
    /// TV smoothing epsilon.
    pub epsilon: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Frames per optimization window for long sequences.
    pub window: usize,
    /// Frames shared between consecutive windows, cross-faded linearly.
    pub window_overlap: usize,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        StabilizeConfig {
            lambda1: 0.1,
            lambda2: 1.0,
            delta: 0.05,
            epsilon: 1e-8,
            iterations: 200,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            window: 30,
            window_overlap: 5,
        }
    }
}

impl StabilizeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            problems.push("lambda1 and lambda2 must be >= 0".to_string());
        }
        if !(self.delta > 0.0) {
            problems.push("delta must be > 0".to_string());
        }
        if !(self.epsilon > 0.0) {
            problems.push("epsilon must be > 0".to_string());
        }
        if self.iterations < 1 {
            problems.push("iterations must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("beta1 and beta2 must be in [0,1)".to_string());
        }
        if !(self.adam_epsilon > 0.0) {
            problems.push("adam_epsilon must be > 0".to_string());
        }
        if self.window < 2 {
            problems.push("window must be >= 2".to_string());
        }
        if self.window < 2 * self.window_overlap {
            problems.push("window must be at least twice window_overlap".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Optimization state for one sequence of maps.
#[derive(Debug, Clone)]
pub struct SequenceState {
    /// Optimization variables x_t.
    pub current: Vec<ImagePlane>,
    /// Observed maps (ensemble means).
    pub observations: Vec<ImagePlane>,
    /// Data-term confidence weights (1 - sigma), same shape as frames.
    pub weights: Vec<ImagePlane>,
    /// Validity mask for temporal step t -> t+1; T-1 entries.
    pub validity: Vec<BinaryMask>,
    /// Flow sampled on frame t's grid pointing into frame t+1; warping
    /// frame t+1 through it brings that frame onto t. T-1 entries.
    pub warp_flows: Vec<FlowField>,
}

impl SequenceState {
    /// Builds a state initialized at the observations.
    pub fn from_observations(
        observations: Vec<ImagePlane>,
        weights: Vec<ImagePlane>,
        validity: Vec<BinaryMask>,
        warp_flows: Vec<FlowField>,
    ) -> Result<Self> {
        let state = SequenceState {
            current: observations.clone(),
            observations,
            weights,
            validity,
            warp_flows,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn frame_count(&self) -> usize {
        self.observations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.observations.len();
        if t == 0 {
            return Err(Error::Validation(vec!["no frames".to_string()]));
        }
        let first = &self.observations[0];
        let mut problems = Vec::new();
        let shape = |p: &ImagePlane| format!("{}x{}x{}", p.width(), p.height(), p.channels());
        if self.current.len() != t || self.weights.len() != t {
            problems.push("current/weights length must equal frame count".to_string());
        }
        for (i, p) in self.observations.iter().chain(&self.current).enumerate() {
            if !p.same_shape(first) {
                problems.push(format!(
                    "plane {i} has shape {} but frame 0 has {}",
                    shape(p),
                    shape(first)
                ));
            }
        }
        for (i, p) in self.weights.iter().enumerate() {
            if !p.same_shape(first) {
                problems.push(format!("weight {i} has shape {}", shape(p)));
            }
        }
        if self.validity.len() + 1 != t || self.warp_flows.len() + 1 != t {
            problems.push(format!(
                "expected {} validity masks and flows, found {} and {}",
                t - 1,
                self.validity.len(),
                self.warp_flows.len()
            ));
        }
        for (i, m) in self.validity.iter().enumerate() {
            if m.width() != first.width() || m.height() != first.height() {
                problems.push(format!("validity mask {i} size mismatch"));
            }
        }
        for (i, f) in self.warp_flows.iter().enumerate() {
            if f.width() != first.width() || f.height() != first.height() {
                problems.push(format!("flow {i} size mismatch"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Element-wise Huber loss: a^2/2 below the threshold, linear above.
#[inline]
pub fn huber(a: f64, delta: f64) -> f64 {
    if a.abs() < delta {
        0.5 * a * a
    } else {
        delta * (a.abs() - 0.5 * delta)
    }
}

#[inline]
pub fn huber_deriv(a: f64, delta: f64) -> f64 {
    if a.abs() < delta {
        a
    } else {
        delta * a.signum()
    }
}

pub fn huber_plane(img: &ImagePlane, delta: f64) -> ImagePlane {
    img.map(|v| huber(v, delta))
}

/// Smoothed isotropic total variation with channels summed inside the
/// per-pixel norm:
///
/// ```text
/// TV_eps(x) = sum_i sqrt( sum_c gx_ic^2 + gy_ic^2 + eps )
/// ```
///
/// Returns the value and its exact gradient (forward-difference adjoint).
pub fn tv_eps(x: &ImagePlane, epsilon: f64) -> (f64, ImagePlane) {
    let (gx, gy) = spatial_gradients(x);
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let mut value = 0.0;
    let mut ux = ImagePlane::new(w, h, c);
    let mut uy = ImagePlane::new(w, h, c);
    for y in 0..h {
        for xx in 0..w {
            let mut sq = epsilon;
            for ch in 0..c {
                let a = gx.get(xx, y, ch);
                let b = gy.get(xx, y, ch);
                sq += a * a + b * b;
            }
            let s = sq.sqrt();
            value += s;
            for ch in 0..c {
                ux.set(xx, y, ch, gx.get(xx, y, ch) / s);
                uy.set(xx, y, ch, gy.get(xx, y, ch) / s);
            }
        }
    }
    let mut grad = gradient_x_adjoint(&ux);
    let gy_adj = gradient_y_adjoint(&uy);
    for (g, a) in grad.data_mut().iter_mut().zip(gy_adj.data()) {
        *g += a;
    }
    (value, grad)
}

/// Data term of one frame: <H_delta(obs - x), w>.
fn data_term(x: &ImagePlane, obs: &ImagePlane, w: &ImagePlane, delta: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.data().len() {
        acc += huber(obs.data()[i] - x.data()[i], delta) * w.data()[i];
    }
    acc
}

fn data_term_grad_into(
    x: &ImagePlane,
    obs: &ImagePlane,
    w: &ImagePlane,
    delta: f64,
    grad: &mut ImagePlane,
) {
    for i in 0..x.data().len() {
        grad.data_mut()[i] -= huber_deriv(obs.data()[i] - x.data()[i], delta) * w.data()[i];
    }
}

/// Masked squared temporal residual || (warp(next) - x_t) .* V ||^2, with
/// the single-channel mask broadcast across channels.
fn temporal_residual(warped_next: &ImagePlane, x: &ImagePlane, mask: &BinaryMask) -> f64 {
    let c = x.channels();
    let mut acc = 0.0;
    for y in 0..x.height() {
        for xx in 0..x.width() {
            if mask.get(xx, y) {
                let a = warped_next.texel(xx, y);
                let b = x.texel(xx, y);
                for ch in 0..c {
                    let d = a[ch] - b[ch];
                    acc += d * d;
                }
            }
        }
    }
    acc
}

/// Total objective over the sequence.
pub fn objective(state: &SequenceState, cfg: &StabilizeConfig) -> Result<f64> {
    state.validate()?;
    cfg.validate()?;
    let t_count = state.frame_count();
    let mut total = 0.0;
    for t in 0..t_count {
        total += data_term(
            &state.current[t],
            &state.observations[t],
            &state.weights[t],
            cfg.delta,
        );
        if cfg.lambda1 > 0.0 {
            total += cfg.lambda1 * tv_eps(&state.current[t], cfg.epsilon).0;
        }
    }
    if cfg.lambda2 > 0.0 {
        for t in 0..t_count.saturating_sub(1) {
            let warped = backward_warp(&state.current[t + 1], &state.warp_flows[t])?;
            total += cfg.lambda2
                * temporal_residual(&warped, &state.current[t], &state.validity[t]);
        }
    }
    Ok(total)
}

/// Adjoint of `backward_warp`: scatters `u` (masked residual on frame t's
/// grid) back through the bilinear footprint into frame t+1's gradient.
fn warp_adjoint_scatter(
    u: &ImagePlane,
    flow: &FlowField,
    scale: f64,
    grad_next: &mut ImagePlane,
) {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    for y in 0..h {
        for x in 0..w {
            let (fu, fv) = flow.at(x, y);
            let (x0, y0, x1, y1, fx, fy) =
                bilinear_footprint(w, h, x as f64 + fu, y as f64 + fv);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w10 = fx * (1.0 - fy);
            let w01 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            for ch in 0..c {
                let v = scale * u.get(x, y, ch);
                if v == 0.0 {
                    continue;
                }
                let g = grad_next.data_mut();
                g[(y0 * w + x0) * c + ch] += w00 * v;
                g[(y0 * w + x1) * c + ch] += w10 * v;
                g[(y1 * w + x0) * c + ch] += w01 * v;
                g[(y1 * w + x1) * c + ch] += w11 * v;
            }
        }
    }
}

/// Masked temporal residual as a plane: V .* (warp(next) - x).
fn masked_residual(warped_next: &ImagePlane, x: &ImagePlane, mask: &BinaryMask) -> ImagePlane {
    let c = x.channels();
    let mut out = ImagePlane::new(x.width(), x.height(), c);
    for y in 0..x.height() {
        for xx in 0..x.width() {
            if mask.get(xx, y) {
                for ch in 0..c {
                    out.set(xx, y, ch, warped_next.get(xx, y, ch) - x.get(xx, y, ch));
                }
            }
        }
    }
    out
}

/// Exact gradient of [`objective`] with respect to every frame.
pub fn objective_grad(state: &SequenceState, cfg: &StabilizeConfig) -> Result<Vec<ImagePlane>> {
    state.validate()?;
    cfg.validate()?;
    let t_count = state.frame_count();
    let shape = &state.observations[0];
    let mut grads: Vec<ImagePlane> =
        vec![ImagePlane::new(shape.width(), shape.height(), shape.channels()); t_count];

    for t in 0..t_count {
        data_term_grad_into(
            &state.current[t],
            &state.observations[t],
            &state.weights[t],
            cfg.delta,
            &mut grads[t],
        );
        if cfg.lambda1 > 0.0 {
            let (_, tv_grad) = tv_eps(&state.current[t], cfg.epsilon);
            for (g, tg) in grads[t].data_mut().iter_mut().zip(tv_grad.data()) {
                *g += cfg.lambda1 * tg;
            }
        }
    }
    if cfg.lambda2 > 0.0 {
        for t in 0..t_count.saturating_sub(1) {
            let warped = backward_warp(&state.current[t + 1], &state.warp_flows[t])?;
            let residual = masked_residual(&warped, &state.current[t], &state.validity[t]);
            // d/dx_t: -2 lambda2 * residual
            for (g, r) in grads[t].data_mut().iter_mut().zip(residual.data()) {
                *g -= 2.0 * cfg.lambda2 * r;
            }
            // d/dx_{t+1}: 2 lambda2 * W^T residual
            warp_adjoint_scatter(
                &residual,
                &state.warp_flows[t],
                2.0 * cfg.lambda2,
                &mut grads[t + 1],
            );
        }
    }
    Ok(grads)
}

/// Per-frame slice of the objective: every term that involves x_t.
/// Decreasing it with all other frames frozen decreases the total.
fn local_objective(state: &SequenceState, cfg: &StabilizeConfig, t: usize, x: &ImagePlane) -> f64 {
    let mut phi = data_term(x, &state.observations[t], &state.weights[t], cfg.delta);
    if cfg.lambda1 > 0.0 {
        phi += cfg.lambda1 * tv_eps(x, cfg.epsilon).0;
    }
    if cfg.lambda2 > 0.0 {
        if t > 0 {
            // term t-1 depends on x_t through the warp
            let warped = backward_warp(x, &state.warp_flows[t - 1]).expect("validated sizes");
            phi += cfg.lambda2
                * temporal_residual(&warped, &state.current[t - 1], &state.validity[t - 1]);
        }
        if t + 1 < state.frame_count() {
            let warped =
                backward_warp(&state.current[t + 1], &state.warp_flows[t]).expect("validated sizes");
            phi += cfg.lambda2 * temporal_residual(&warped, x, &state.validity[t]);
        }
    }
    phi
}

/// Gradient of [`local_objective`] at the current iterate of frame t.
fn local_grad(state: &SequenceState, cfg: &StabilizeConfig, t: usize) -> ImagePlane {
    let x = &state.current[t];
    let mut grad = ImagePlane::new(x.width(), x.height(), x.channels());
    data_term_grad_into(x, &state.observations[t], &state.weights[t], cfg.delta, &mut grad);
    if cfg.lambda1 > 0.0 {
        let (_, tv_grad) = tv_eps(x, cfg.epsilon);
        for (g, tg) in grad.data_mut().iter_mut().zip(tv_grad.data()) {
            *g += cfg.lambda1 * tg;
        }
    }
    if cfg.lambda2 > 0.0 {
        if t > 0 {
            let warped = backward_warp(x, &state.warp_flows[t - 1]).expect("validated sizes");
            let residual =
                masked_residual(&warped, &state.current[t - 1], &state.validity[t - 1]);
            warp_adjoint_scatter(&residual, &state.warp_flows[t - 1], 2.0 * cfg.lambda2, &mut grad);
        }
        if t + 1 < state.frame_count() {
            let warped =
                backward_warp(&state.current[t + 1], &state.warp_flows[t]).expect("validated sizes");
            let residual = masked_residual(&warped, x, &state.validity[t]);
            for (g, r) in grad.data_mut().iter_mut().zip(residual.data()) {
                *g -= 2.0 * cfg.lambda2 * r;
            }
        }
    }
    grad
}

/// One point of the recorded optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub window: usize,
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub frames: Vec<ImagePlane>,
    pub trace: Vec<TracePoint>,
}

struct AdamBlock {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: usize,
}

/// Solves one window in place; appends to `trace`.
fn solve_window(
    state: &mut SequenceState,
    cfg: &StabilizeConfig,
    window_index: usize,
    trace: &mut Vec<TracePoint>,
) -> Result<()> {
    let t_count = state.frame_count();
    let plane_len = state.observations[0].data().len();
    let mut adam: Vec<AdamBlock> = (0..t_count)
        .map(|_| AdamBlock { m: vec![0.0; plane_len], v: vec![0.0; plane_len], steps: 0 })
        .collect();

    let initial = objective(state, cfg)?;
    if !initial.is_finite() {
        return Err(Error::Numerical(
            "objective non-finite at initialization".to_string(),
        ));
    }
    trace.push(TracePoint { window: window_index, iteration: 0, objective: initial });

    for iter in 1..=cfg.iterations {
        for t in 0..t_count {
            let grad = local_grad(state, cfg, t);
            let block = &mut adam[t];
            block.steps += 1;
            let k = block.steps as i32;
            let bias1 = 1.0 - cfg.beta1.powi(k);
            let bias2 = 1.0 - cfg.beta2.powi(k);
            let mut step = vec![0.0f64; plane_len];
            for i in 0..plane_len {
                let g = grad.data()[i];
                block.m[i] = cfg.beta1 * block.m[i] + (1.0 - cfg.beta1) * g;
                block.v[i] = cfg.beta2 * block.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = block.m[i] / bias1;
                let v_hat = block.v[i] / bias2;
                step[i] = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }

            // Step-halving safeguard on the frame's local objective keeps
            // every sweep non-increasing in the total objective.
            let phi0 = local_objective(state, cfg, t, &state.current[t]);
            let mut alpha = 1.0;
            let mut candidate = state.current[t].clone();
            loop {
                for i in 0..plane_len {
                    candidate.data_mut()[i] = state.current[t].data()[i] - alpha * step[i];
                }
                let phi = local_objective(state, cfg, t, &candidate);
                if phi.is_finite() && phi <= phi0 {
                    state.current[t]
                        .data_mut()
                        .copy_from_slice(candidate.data());
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-9 {
                    break; // keep the current iterate
                }
            }
        }

        let value = objective(state, cfg)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite at iteration {iter}"
            )));
        }
        trace.push(TracePoint { window: window_index, iteration: iter, objective: value });
    }
    Ok(())
}

fn window_starts(t_count: usize, window: usize, overlap: usize) -> Vec<usize> {
    if t_count <= window {
        return vec![0];
    }
    let stride = window - overlap;
    let mut starts = Vec::new();
    let mut s = 0usize;
    loop {
        starts.push(s);
        if s + window >= t_count {
            break;
        }
        s = (s + stride).min(t_count - window);
    }
    starts
}

/// Minimizes the sequence objective starting from x = observations.
///
/// Sequences longer than `cfg.window` are solved in overlapping windows
/// that are cross-faded linearly over the shared frames. Deterministic
/// given identical inputs and config; `_seed` is reserved.
pub fn solve(state: &SequenceState, cfg: &StabilizeConfig, _seed: u64) -> Result<SolveResult> {
    state.validate()?;
    cfg.validate()?;
    let t_count = state.frame_count();
    let mut trace = Vec::new();

    let starts = window_starts(t_count, cfg.window, cfg.window_overlap);
    if starts.len() == 1 {
        let mut work = state.clone();
        work.current = work.observations.clone();
        solve_window(&mut work, cfg, 0, &mut trace)?;
        return Ok(SolveResult { frames: work.current, trace });
    }

    // windowed solve with linear cross-fade over the overlap regions
    let mut merged: Vec<Option<ImagePlane>> = vec![None; t_count];
    let mut prev_end = 0usize;
    for (wi, &start) in starts.iter().enumerate() {
        let end = (start + cfg.window).min(t_count);
        let mut sub = SequenceState {
            current: state.observations[start..end].to_vec(),
            observations: state.observations[start..end].to_vec(),
            weights: state.weights[start..end].to_vec(),
            validity: state.validity[start..end - 1].to_vec(),
            warp_flows: state.warp_flows[start..end - 1].to_vec(),
        };
        solve_window(&mut sub, cfg, wi, &mut trace)?;
        for (local, frame) in sub.current.into_iter().enumerate() {
            let t = start + local;
            merged[t] = Some(match merged[t].take() {
                None => frame,
                Some(prev) => {
                    // t lies in the overlap [start, prev_end)
                    let overlap_len = prev_end - start;
                    let i = t - start;
                    let w_new = (i + 1) as f64 / (overlap_len + 1) as f64;
                    let mut blended = prev;
                    for (b, n) in blended.data_mut().iter_mut().zip(frame.data()) {
                        *b = (1.0 - w_new) * *b + w_new * *n;
                    }
                    blended
                }
            });
        }
        prev_end = end;
    }
    let frames = merged.into_iter().map(|f| f.unwrap()).collect();
    Ok(SolveResult { frames, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, c: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.gen::<f64>()).collect();
        ImagePlane::from_vec(w, h, c, data).unwrap()
    }

    fn random_state(t_count: usize, w: usize, h: usize, c: usize, seed: u64) -> SequenceState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observations: Vec<ImagePlane> =
            (0..t_count).map(|i| random_plane(w, h, c, seed + 1000 + i as u64)).collect();
        let weights: Vec<ImagePlane> = (0..t_count)
            .map(|i| random_plane(w, h, c, seed + 2000 + i as u64).map(|v| 0.2 + 0.8 * v))
            .collect();
        let mut validity = Vec::new();
        let mut warp_flows = Vec::new();
        for _ in 0..t_count.saturating_sub(1) {
            let mut mask = BinaryMask::filled(w, h, true);
            let mut flow = FlowField::zero(w, h);
            for y in 0..h {
                for x in 0..w {
                    if rng.gen::<f64>() < 0.15 {
                        mask.set(x, y, false);
                    }
                    flow.set(x, y, rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                }
            }
            validity.push(mask);
            warp_flows.push(flow);
        }
        let mut state =
            SequenceState::from_observations(observations, weights, validity, warp_flows).unwrap();
        // move x away from the observations so the data term is active
        for t in 0..t_count {
            let bump = random_plane(w, h, c, seed + 3000 + t as u64);
            for (x, b) in state.current[t].data_mut().iter_mut().zip(bump.data()) {
                *x += 0.3 * (b - 0.5);
            }
        }
        state
    }

    fn default_cfg() -> StabilizeConfig {
        StabilizeConfig::default()
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
        assert_eq!(huber_deriv(0.5, 1.0), 0.5);
        assert_eq!(huber_deriv(-2.0, 1.0), -1.0);
    }

    #[test]
    fn tv_constant_image() {
        let img = ImagePlane::constant(8, 8, 1, 0.42);
        let (value, grad) = tv_eps(&img, 1e-8);
        assert!((value - 64.0 * 1e-4).abs() < 1e-12);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tv_ramp_interior_contribution() {
        let (w, h) = (10, 6);
        let mut img = ImagePlane::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, 0, x as f64);
            }
        }
        let eps = 1e-6;
        let (value, _) = tv_eps(&img, eps);
        // pixels with x < w-1 contribute sqrt(1 + eps), the last column
        // contributes sqrt(eps)
        let expected =
            ((w - 1) * h) as f64 * (1.0 + eps).sqrt() + h as f64 * eps.sqrt();
        assert!((value - expected).abs() < 1e-9, "{value} vs {expected}");
    }

    /// Central finite differences of a scalar function of one plane.
    fn fd_grad(f: &dyn Fn(&ImagePlane) -> f64, x: &ImagePlane, h: f64) -> ImagePlane {
        let mut grad = ImagePlane::new(x.width(), x.height(), x.channels());
        for i in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grad
    }

    pub(crate) fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (a, b) in analytic.iter().zip(numeric) {
            diff += (a - b) * (a - b);
            na += a * a;
            nb += b * b;
        }
        diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let x = random_plane(12, 12, 3, 21);
        let eps = 1e-8;
        let (_, grad) = tv_eps(&x, eps);
        let fd = fd_grad(&|p| tv_eps(p, eps).0, &x, 1e-5);
        assert!(rel_error(grad.data(), fd.data()) < 1e-4);
    }

    #[test]
    fn objective_zero_at_data_minimum() {
        let mut state = random_state(2, 6, 6, 1, 5);
        state.current = state.observations.clone();
        let cfg = StabilizeConfig { lambda1: 0.0, lambda2: 0.0, ..default_cfg() };
        assert_eq!(objective(&state, &cfg).unwrap(), 0.0);
        let grads = objective_grad(&state, &cfg).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_frame_has_no_temporal_term() {
        let state = random_state(1, 6, 6, 1, 6);
        let with = objective(&state, &default_cfg()).unwrap();
        let without = objective(&state, &StabilizeConfig { lambda2: 0.0, ..default_cfg() }).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn objective_matches_loop_oracle() {
        let state = random_state(2, 8, 8, 1, 7);
        let cfg = StabilizeConfig { lambda1: 0.3, lambda2: 0.7, delta: 0.1, ..default_cfg() };
        let got = objective(&state, &cfg).unwrap();

        // independent scalar re-implementation with explicit loops
        let mut expected = 0.0;
        for t in 0..2 {
            let x = &state.current[t];
            let obs = &state.observations[t];
            let wmap = &state.weights[t];
            for i in 0..x.data().len() {
                let a = obs.data()[i] - x.data()[i];
                let h = if a.abs() < cfg.delta {
                    0.5 * a * a
                } else {
                    cfg.delta * (a.abs() - 0.5 * cfg.delta)
                };
                expected += h * wmap.data()[i];
            }
            let (w, hgt) = (x.width(), x.height());
            for y in 0..hgt {
                for xx in 0..w {
                    let gx = if xx + 1 < w { x.get(xx + 1, y, 0) - x.get(xx, y, 0) } else { 0.0 };
                    let gy = if y + 1 < hgt { x.get(xx, y + 1, 0) - x.get(xx, y, 0) } else { 0.0 };
                    expected += cfg.lambda1 * (gx * gx + gy * gy + cfg.epsilon).sqrt();
                }
            }
        }
        let warped = backward_warp(&state.current[1], &state.warp_flows[0]).unwrap();
        for y in 0..8 {
            for xx in 0..8 {
                if state.validity[0].get(xx, y) {
                    let d = warped.get(xx, y, 0) - state.current[0].get(xx, y, 0);
                    expected += cfg.lambda2 * d * d;
                }
            }
        }
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn objective_nonnegative() {
        for seed in 0..5 {
            let state = random_state(3, 7, 7, 1, 50 + seed);
            assert!(objective(&state, &default_cfg()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn grad_zero_flow_reduces_to_frame_difference() {
        // lambda2-only, identity warp: grad at frame 0 is 2*l2*V.*(x0 - x1),
        // mirrored at frame 1.
        let mut state = random_state(2, 6, 6, 1, 8);
        for t in 0..2 {
            state.warp_flows = vec![FlowField::zero(6, 6)];
            let _ = t;
        }
        let cfg = StabilizeConfig { lambda1: 0.0, lambda2: 0.8, ..default_cfg() };
        // make the data term inert
        let mut state = state;
        state.weights = vec![ImagePlane::constant(6, 6, 1, 0.0); 2];
        let grads = objective_grad(&state, &cfg).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let v = state.validity[0].get(x, y) as i32 as f64;
                let expected =
                    2.0 * cfg.lambda2 * v * (state.current[0].get(x, y, 0) - state.current[1].get(x, y, 0));
                assert!((grads[0].get(x, y, 0) - expected).abs() < 1e-12);
                assert!((grads[1].get(x, y, 0) + expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        // includes the warp adjoint for the x_{t+1} dependency
        let cfg = StabilizeConfig {
            lambda1: 0.2,
            lambda2: 0.9,
            delta: 0.08,
            epsilon: 1e-8,
            ..default_cfg()
        };
        for seed in [1u64, 2, 3] {
            let state = random_state(3, 10, 10, 1, 100 + seed);
            let grads = objective_grad(&state, &cfg).unwrap();
            for t in 0..3 {
                let f = |p: &ImagePlane| {
                    let mut s = state.clone();
                    s.current[t] = p.clone();
                    objective(&s, &cfg).unwrap()
                };
                let fd = fd_grad(&f, &state.current[t], 1e-5);
                let err = rel_error(grads[t].data(), fd.data());
                assert!(err < 1e-4, "seed {seed} frame {t}: rel err {err}");
            }
        }
    }

    #[test]
    fn solve_data_term_only_recovers_observations() {
        let mut state = random_state(2, 8, 8, 1, 9);
        state.weights = vec![ImagePlane::constant(8, 8, 1, 1.0); 2]; // sigma = 0
        let cfg = StabilizeConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            iterations: 200,
            learning_rate: 1e-2,
            ..default_cfg()
        };
        let result = solve(&state, &cfg, 0).unwrap();
        for t in 0..2 {
            for i in 0..result.frames[t].data().len() {
                let d = (result.frames[t].data()[i] - state.observations[t].data()[i]).abs();
                assert!(d < 1e-3, "frame {t} deviates by {d}");
            }
        }
    }

    #[test]
    fn strong_temporal_term_pulls_frames_together() {
        let (w, h) = (8, 8);
        let a = random_plane(w, h, 1, 31);
        let b = random_plane(w, h, 1, 32);
        let state = SequenceState::from_observations(
            vec![a.clone(), b.clone()],
            vec![ImagePlane::constant(w, h, 1, 1.0); 2],
            vec![BinaryMask::filled(w, h, true)],
            vec![FlowField::zero(w, h)],
        )
        .unwrap();
        let cfg = StabilizeConfig { lambda1: 0.0, lambda2: 50.0, ..default_cfg() };
        let result = solve(&state, &cfg, 0).unwrap();
        let gap_before: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let gap_after: f64 = result.frames[0]
            .data()
            .iter()
            .zip(result.frames[1].data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(
            gap_after < gap_before,
            "max gap {gap_after} not below {gap_before}"
        );
    }

    #[test]
    fn trace_is_monotone_on_noisy_sequence() {
        // ground truth + per-frame iid noise
        let (w, h) = (10, 10);
        let truth = random_plane(w, h, 1, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let observations: Vec<ImagePlane> = (0..4)
            .map(|_| truth.map(|v| (v + 0.1 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)))
            .collect();
        let state = SequenceState::from_observations(
            observations,
            vec![ImagePlane::constant(w, h, 1, 0.8); 4],
            vec![BinaryMask::filled(w, h, true); 3],
            vec![FlowField::zero(w, h); 3],
        )
        .unwrap();
        let cfg = StabilizeConfig { iterations: 80, ..default_cfg() };
        let result = solve(&state, &cfg, 0).unwrap();
        let objectives: Vec<f64> = result.trace.iter().map(|p| p.objective).collect();
        for pair in objectives.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "objective rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
        assert!(objectives.last().unwrap() <= objectives.first().unwrap());
    }

    #[test]
    fn lambda2_zero_decouples_frames_exactly() {
        let state = random_state(3, 8, 8, 1, 60);
        let cfg = StabilizeConfig { lambda2: 0.0, iterations: 40, ..default_cfg() };
        let joint = solve(&state, &cfg, 0).unwrap();
        for t in 0..3 {
            let single = SequenceState::from_observations(
                vec![state.observations[t].clone()],
                vec![state.weights[t].clone()],
                vec![],
                vec![],
            )
            .unwrap();
            let alone = solve(&single, &cfg, 0).unwrap();
            for i in 0..alone.frames[0].data().len() {
                let d = (joint.frames[t].data()[i] - alone.frames[0].data()[i]).abs();
                assert!(d < 1e-6, "frame {t} differs by {d}");
            }
        }
    }

    #[test]
    fn full_uncertainty_pixels_ignore_observations() {
        // sigma = 1 everywhere (weight 0), single frame, TV only: the solver
        // flattens the map instead of tracking the observation.
        let (w, h) = (8, 8);
        let obs = random_plane(w, h, 1, 70);
        let state = SequenceState::from_observations(
            vec![obs.clone()],
            vec![ImagePlane::constant(w, h, 1, 0.0); 1],
            vec![],
            vec![],
        )
        .unwrap();
        let cfg = StabilizeConfig {
            lambda1: 0.5,
            lambda2: 0.0,
            iterations: 300,
            ..default_cfg()
        };
        let result = solve(&state, &cfg, 0).unwrap();
        let tv_before = tv_eps(&obs, cfg.epsilon).0;
        let tv_after = tv_eps(&result.frames[0], cfg.epsilon).0;
        assert!(
            tv_after < 0.5 * tv_before,
            "TV {tv_after} not well below {tv_before}"
        );
    }

    #[test]
    fn solve_is_deterministic() {
        let state = random_state(3, 8, 8, 1, 80);
        let cfg = StabilizeConfig { iterations: 30, ..default_cfg() };
        let a = solve(&state, &cfg, 0).unwrap();
        let b = solve(&state, &cfg, 0).unwrap();
        for t in 0..3 {
            assert_eq!(a.frames[t], b.frames[t]);
        }
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn windowed_solve_covers_all_frames() {
        let state = random_state(8, 6, 6, 1, 90);
        let cfg = StabilizeConfig {
            window: 5,
            window_overlap: 2,
            iterations: 15,
            ..default_cfg()
        };
        let result = solve(&state, &cfg, 0).unwrap();
        assert_eq!(result.frames.len(), 8);
        assert!(result.frames.iter().all(|f| f.is_finite()));
        // two windows expected: [0..5) and [3..8)
        let windows: std::collections::BTreeSet<usize> =
            result.trace.iter().map(|p| p.window).collect();
        assert_eq!(windows.len(), 2);
    }

    #[test]
    fn invalid_state_is_rejected() {
        let mut state = random_state(3, 6, 6, 1, 91);
        state.validity.pop();
        assert!(matches!(
            objective(&state, &default_cfg()),
            Err(Error::Validation(_))
        ));
    }
}
