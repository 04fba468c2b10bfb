//! Bidirectional state-space temporal branch.
//!
//! Each direction is a diagonal linear recurrence with sigmoid-bounded
//! decay:
//!
//! ```text
//! u_t = W_in x_t
//! h_t = λ ⊙ h_{t-1} + (1 - λ) ⊙ u_t,   h_{-1} = 0,   λ = sigmoid(a)
//! y_t = W_out h_t + d ⊙ x_t
//! ```
//!
//! A unit averages a forward scan with a time-reversed backward scan.

use crate::error::{Error, Result};
use crate::numcore::ops::sigmoid;
use crate::numcore::{Graph, ParamId, ParamStore, RngState, SequenceTensor, Var};

/// Initial decay logit, `sigmoid(ln 9) = 0.9`.
pub const DECAY_INIT_LOGIT: f64 = 2.197_224_577_336_219_6;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams {
    /// Per-channel decay logit (`C × 1`).
    pub a: SequenceTensor,
    pub w_in: SequenceTensor,
    pub w_out: SequenceTensor,
    /// Skip gain (`C × 1`).
    pub d: SequenceTensor,
}

impl ScanParams {
    /// `λ ≈ 0`, identity mixes, no skip: `y ≈ x`.
    pub fn passthrough(channels: usize) -> Self {
        Self {
            a: SequenceTensor::filled(channels, 1, -60.0),
            w_in: SequenceTensor::identity(channels),
            w_out: SequenceTensor::identity(channels),
            d: SequenceTensor::zeros(channels, 1),
        }
    }

    pub fn random(channels: usize, rng: &mut RngState) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        let mut mat = || {
            let data = (0..channels * channels).map(|_| rng.normal() * std).collect();
            SequenceTensor::from_vec(channels, channels, data).expect("square")
        };
        let (w_in, w_out) = (mat(), mat());
        Self {
            a: SequenceTensor::from_vec(channels, 1, (0..channels).map(|_| rng.normal()).collect())
                .expect("vector"),
            w_in,
            w_out,
            d: SequenceTensor::from_vec(channels, 1, (0..channels).map(|_| rng.normal()).collect())
                .expect("vector"),
        }
    }

    pub fn decay(&self) -> Vec<f64> {
        self.a.data().iter().map(|&a| sigmoid(a)).collect()
    }
}

/// `h_t = λ h_{t-1} + (1 - λ) u_t` with `λ = sigmoid(a)` per channel.
pub fn recurrence_var(g: &mut Graph, u: Var, a: Var) -> Result<Var> {
    let (c, t) = g.shape(u);
    if g.value(a).len() != c {
        return Err(Error::shape("ssm_scan", g.value(u).shape_str(), g.value(a).shape_str()));
    }
    let lambda: Vec<f64> = g.value(a).data().iter().map(|&v| sigmoid(v)).collect();
    let mut h = SequenceTensor::zeros(c, t);
    {
        let uv = g.value(u);
        for ch in 0..c {
            let l = lambda[ch];
            let mut state = 0.0;
            let ur = uv.row(ch);
            for (tt, hv) in h.row_mut(ch).iter_mut().enumerate() {
                state = l * state + (1.0 - l) * ur[tt];
                *hv = state;
            }
        }
    }
    Ok(g.custom(h, move |gout, hval, nodes| {
        let uv = nodes[u.index()].value();
        let mut gu = SequenceTensor::zeros(c, t);
        let mut ga = SequenceTensor::zeros(c, 1);
        for ch in 0..c {
            let l = lambda[ch];
            let (ur, hr, gr) = (uv.row(ch), hval.row(ch), gout.row(ch));
            let mut carry = 0.0;
            let mut dl = 0.0;
            let gur = gu.row_mut(ch);
            for tt in (0..t).rev() {
                carry = gr[tt] + l * carry;
                gur[tt] = (1.0 - l) * carry;
                let prev = if tt > 0 { hr[tt - 1] } else { 0.0 };
                dl += carry * (prev - ur[tt]);
            }
            ga.data_mut()[ch] = dl * l * (1.0 - l);
        }
        vec![(u, gu), (a, ga)]
    }))
}

/// Handles for one scan direction inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct ScanVars {
    pub a: Var,
    pub w_in: Var,
    pub w_out: Var,
    pub d: Var,
}

impl ScanVars {
    pub fn constants(g: &mut Graph, p: &ScanParams) -> Self {
        Self {
            a: g.constant(p.a.clone()),
            w_in: g.constant(p.w_in.clone()),
            w_out: g.constant(p.w_out.clone()),
            d: g.constant(p.d.clone()),
        }
    }
}

pub fn ssm_scan_var(g: &mut Graph, x: Var, p: ScanVars) -> Result<Var> {
    let u = g.linear(x, p.w_in, None)?;
    let h = recurrence_var(g, u, p.a)?;
    let y = g.linear(h, p.w_out, None)?;
    let skip = g.scale_channels(x, p.d)?;
    g.add(y, skip)
}

pub fn bimamba_unit_var(g: &mut Graph, x: Var, fwd: ScanVars, bwd: ScanVars) -> Result<Var> {
    let yf = ssm_scan_var(g, x, fwd)?;
    let xr = g.flip(x);
    let yr = ssm_scan_var(g, xr, bwd)?;
    let yb = g.flip(yr);
    let sum = g.add(yf, yb)?;
    Ok(g.scale(sum, 0.5))
}

pub fn flip(x: &SequenceTensor) -> SequenceTensor {
    crate::numcore::graph::flip_time(x)
}

pub fn ssm_scan(x: &SequenceTensor, p: &ScanParams) -> Result<SequenceTensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let pv = ScanVars::constants(&mut g, p);
    let y = ssm_scan_var(&mut g, xv, pv)?;
    Ok(g.value(y).clone())
}

pub fn bimamba_unit(x: &SequenceTensor, fwd: &ScanParams, bwd: &ScanParams) -> Result<SequenceTensor> {
    bimamba_stack(x, &[(fwd.clone(), bwd.clone())])
}

pub fn bimamba_stack(x: &SequenceTensor, units: &[(ScanParams, ScanParams)]) -> Result<SequenceTensor> {
    if units.is_empty() {
        return Err(Error::InvalidArgument("Bi-Mamba stack needs at least one unit".into()));
    }
    let mut g = Graph::new();
    let mut cur = g.constant(x.clone());
    for (f, b) in units {
        let fv = ScanVars::constants(&mut g, f);
        let bv = ScanVars::constants(&mut g, b);
        cur = bimamba_unit_var(&mut g, cur, fv, bv)?;
    }
    Ok(g.value(cur).clone())
}

#[derive(Clone, Copy, Debug)]
pub struct ScanLayer {
    pub a: ParamId,
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub d: ParamId,
}

impl ScanLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut RngState) -> Self {
        Self {
            a: store.add_const(&format!("{prefix}.a"), "bimamba", channels, DECAY_INIT_LOGIT),
            w_in: store.add_weight(&format!("{prefix}.w_in"), "bimamba", channels, channels, rng),
            w_out: store.add_weight(&format!("{prefix}.w_out"), "bimamba", channels, channels, rng),
            d: store.add_const(&format!("{prefix}.d"), "bimamba", channels, 1.0),
        }
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> ScanVars {
        ScanVars {
            a: g.param(store, self.a),
            w_in: g.param(store, self.w_in),
            w_out: g.param(store, self.w_out),
            d: g.param(store, self.d),
        }
    }
}

/// `N` stacked bidirectional units.
#[derive(Clone, Debug)]
pub struct BiMambaLayer {
    pub units: Vec<(ScanLayer, ScanLayer)>,
}

impl BiMambaLayer {
    /// With `tied`, the backward scan of each unit reuses the forward
    /// parameters.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        depth: usize,
        tied: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        if depth < 1 {
            return Err(Error::InvalidArgument("bimamba_depth must be >= 1".into()));
        }
        let units = (0..depth)
            .map(|n| {
                let fwd = ScanLayer::new(store, &format!("{prefix}.unit{n}.fwd"), channels, rng);
                let bwd = if tied {
                    fwd
                } else {
                    ScanLayer::new(store, &format!("{prefix}.unit{n}.bwd"), channels, rng)
                };
                (fwd, bwd)
            })
            .collect();
        Ok(Self { units })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut cur = x;
        for (f, b) in &self.units {
            let fv = f.vars(g, store);
            let bv = b.vars(g, store);
            cur = bimamba_unit_var(g, cur, fv, bv)?;
        }
        Ok(cur)
    }
}
