//! The time-dependent conditional score network.
//!
//! A fully connected trunk with residual blocks of
//! `[GroupNorm -> SiLU -> Dropout -> Linear] x 2`, a Gaussian Fourier time
//! embedding added after the input projection, and an output layer whose
//! raw result is divided by the kernel std `sigma(t)`: the trunk learns to
//! predict `-z`, and the public forward always returns the score.
//!
//! Forward and reverse-mode passes are written out by hand; the reverse
//! sweep consumes exactly the intermediates cached by the forward.

mod params;
mod primitives;

pub use params::{BlockParams, NetParams};
pub use primitives::{
    dropout_backward, dropout_forward, group_norm_backward, group_norm_forward, linear_backward,
    linear_forward, silu_backward, silu_forward, GROUP_NORM_EPS,
};

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::score::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreNetConfig {
    /// Model vector length (network input and output width).
    pub input_dim: usize,
    /// Condition vector length, concatenated to the input.
    pub cond_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub groups: usize,
    pub dropout_rate: f64,
    pub time_embed_dim: usize,
    /// Bandwidth of the fixed random Fourier frequencies.
    pub time_embed_scale: f64,
}

impl ScoreNetConfig {
    pub fn with_dims(input_dim: usize, cond_dim: usize) -> Self {
        ScoreNetConfig {
            input_dim,
            cond_dim,
            hidden_dim: 1024,
            num_blocks: 2,
            groups: 32,
            dropout_rate: 0.25,
            time_embed_dim: 1024,
            time_embed_scale: 16.0,
        }
    }

    /// Same layer structure at reduced width, for fast tests.
    pub fn small(input_dim: usize, cond_dim: usize, hidden: usize) -> Self {
        ScoreNetConfig {
            hidden_dim: hidden,
            time_embed_dim: hidden,
            ..Self::with_dims(input_dim, cond_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_blocks == 0 {
            return Err(Error::validation("network dimensions must be positive"));
        }
        if self.hidden_dim % self.groups != 0 {
            return Err(Error::validation(format!(
                "hidden_dim {} not divisible by {} groups",
                self.hidden_dim, self.groups
            )));
        }
        if self.time_embed_dim != self.hidden_dim {
            return Err(Error::validation(format!(
                "time_embed_dim {} must equal hidden_dim {} (the embedding is added to the hidden activation)",
                self.time_embed_dim, self.hidden_dim
            )));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::validation("time_embed_dim must be even"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.time_embed_scale > 0.0) {
            return Err(Error::validation("time_embed_scale must be positive"));
        }
        Ok(())
    }
}

/// Per-block activation cache recorded by a forward pass.
struct BlockCache<T: Element> {
    xhat1: Array2<T>,
    istd1: Array2<T>,
    u1: Array2<T>,
    sig1: Array2<T>,
    mask1: Option<Array2<T>>,
    d1: Array2<T>,
    xhat2: Array2<T>,
    istd2: Array2<T>,
    u2: Array2<T>,
    sig2: Array2<T>,
    mask2: Option<Array2<T>>,
    d2: Array2<T>,
}

/// Everything `backward` needs from a recorded forward pass.
pub struct ForwardCache<T: Element> {
    inp: Array2<T>,
    feat: Array2<T>,
    sigma: Array1<T>,
    blocks: Vec<BlockCache<T>>,
    h_final: Array2<T>,
}

impl<T: Element> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inp.nrows()
    }

    /// Kernel std per row, as used for the output division.
    pub fn sigma(&self) -> &Array1<T> {
        &self.sigma
    }
}

/// The score network `s(x, t, c)`.
#[derive(Debug, Clone)]
pub struct ScoreNet<T: Element> {
    pub config: ScoreNetConfig,
    pub sched: NoiseSchedule,
    /// Fixed random Fourier frequencies, frozen at init (not trained).
    pub freqs: Array1<f64>,
    pub params: NetParams<T>,
}

impl<T: Element> ScoreNet<T> {
    /// Initializes with fan-in scaled uniform weights, unit group-norm
    /// scales and zero biases. Deterministic under `seed`.
    pub fn init(config: ScoreNetConfig, sched: NoiseSchedule, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let freqs = Array1::from_shape_simple_fn(config.time_embed_dim / 2, || {
            config.time_embed_scale * rng.sample::<f64, _>(StandardNormal)
        });
        let mut params = NetParams::zeros(
            config.input_dim,
            config.cond_dim,
            config.hidden_dim,
            config.time_embed_dim,
            config.num_blocks,
        );
        params.for_each_mut(|name, slice| {
            if name.ends_with(".w") {
                // Fan-in is the row count of the (in, out) matrix.
                let fan_in = match name {
                    "in.w" => config.input_dim + config.cond_dim,
                    "temb.w" => config.time_embed_dim,
                    _ => config.hidden_dim,
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = T::uniform_sym(&mut rng, bound);
                }
            } else if name.ends_with("scale") {
                for v in slice.iter_mut() {
                    *v = T::one();
                }
            }
            // biases and shifts stay zero
        });
        Ok(ScoreNet {
            config,
            sched,
            freqs,
            params,
        })
    }

    /// Fourier features `[sin(2 pi f t), cos(2 pi f t)]` for a batch of times.
    fn fourier_features(&self, t: ArrayView1<T>) -> Array2<T> {
        let half = self.freqs.len();
        let mut feat = Array2::zeros((t.len(), 2 * half));
        for (i, &ti) in t.iter().enumerate() {
            let tv = ti.to_f64();
            for (k, &f) in self.freqs.iter().enumerate() {
                let arg = std::f64::consts::TAU * f * tv;
                feat[[i, k]] = T::from_f64(arg.sin());
                feat[[i, half + k]] = T::from_f64(arg.cos());
            }
        }
        feat
    }

    /// The projected time embedding for a single time value.
    pub fn time_embed(&self, t: f64) -> Result<Array1<T>> {
        if !t.is_finite() || t < 0.0 || t > self.sched.t_max {
            return Err(Error::TimeOutOfRange {
                t,
                t_max: self.sched.t_max,
            });
        }
        let tv = Array1::from_elem(1, T::from_f64(t));
        let feat = self.fourier_features(tv.view());
        let proj = linear_forward(&feat, &self.params.temb_w, &self.params.temb_b)?;
        Ok(proj.row(0).to_owned())
    }

    fn sigma_of(&self, t: ArrayView1<T>) -> Result<Array1<T>> {
        let mut out = Array1::zeros(t.len());
        for (o, &ti) in out.iter_mut().zip(t.iter()) {
            let c = self.sched.perturb_coeffs(ti.to_f64())?;
            if c.sigma <= 0.0 {
                return Err(Error::validation(format!(
                    "sigma(t) = 0 at t = {}; the score is undefined at time zero",
                    ti.to_f64()
                )));
            }
            *o = T::from_f64(c.sigma);
        }
        Ok(out)
    }

    fn check_finite(name: &str, a: &Array2<T>) -> Result<()> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network activation after {name}")));
        }
        Ok(())
    }

    fn run<R: Rng>(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if x.ncols() != cfg.input_dim {
            return Err(Error::shape("network input", cfg.input_dim, x.ncols()));
        }
        if c.ncols() != cfg.cond_dim {
            return Err(Error::shape("network condition", cfg.cond_dim, c.ncols()));
        }
        if x.nrows() != c.nrows() || x.nrows() != t.len() {
            return Err(Error::shape(
                "network batch",
                x.nrows(),
                format!("c {} / t {}", c.nrows(), t.len()),
            ));
        }
        let sigma = self.sigma_of(t)?;

        let inp = concatenate![Axis(1), x, c];
        let mut h = linear_forward(&inp, &self.params.in_w, &self.params.in_b)?;
        let feat = self.fourier_features(t);
        // h += feat * W_t + b_t
        general_mat_mul(T::one(), &feat, &self.params.temb_w, T::one(), &mut h);
        h += &self.params.temb_b;
        Self::check_finite("input projection", &h)?;

        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for (bi, bp) in self.params.blocks.iter().enumerate() {
            let (y1, xhat1, istd1) =
                group_norm_forward(&h, cfg.groups, &bp.gn1_scale, &bp.gn1_shift, GROUP_NORM_EPS)?;
            let (a1, sig1) = silu_forward(&y1);
            let (d1, mask1) = match dropout_rng.as_deref_mut() {
                Some(rng) if cfg.dropout_rate > 0.0 => {
                    let (d, m) = dropout_forward(&a1, cfg.dropout_rate, rng)?;
                    (d, Some(m))
                }
                _ => (a1, None),
            };
            let l1 = linear_forward(&d1, &bp.fc1_w, &bp.fc1_b)?;

            let (y2, xhat2, istd2) =
                group_norm_forward(&l1, cfg.groups, &bp.gn2_scale, &bp.gn2_shift, GROUP_NORM_EPS)?;
            let (a2, sig2) = silu_forward(&y2);
            let (d2, mask2) = match dropout_rng.as_deref_mut() {
                Some(rng) if cfg.dropout_rate > 0.0 => {
                    let (d, m) = dropout_forward(&a2, cfg.dropout_rate, rng)?;
                    (d, Some(m))
                }
                _ => (a2, None),
            };
            // h += d2 * W2 + b2 (residual skip)
            general_mat_mul(T::one(), &d2, &bp.fc2_w, T::one(), &mut h);
            h += &bp.fc2_b;
            Self::check_finite(&format!("residual block {bi}"), &h)?;

            blocks.push(BlockCache {
                xhat1,
                istd1,
                u1: y1,
                sig1,
                mask1,
                d1,
                xhat2,
                istd2,
                u2: y2,
                sig2,
                mask2,
                d2,
            });
        }

        let raw = linear_forward(&h, &self.params.out_w, &self.params.out_b)?;
        Self::check_finite("output projection", &raw)?;
        let mut score = raw;
        for (mut row, &s) in score.rows_mut().into_iter().zip(sigma.iter()) {
            let inv = T::one() / s;
            row.mapv_inplace(|v| v * inv);
        }

        Ok((
            score,
            ForwardCache {
                inp,
                feat,
                sigma,
                blocks,
                h_final: h,
            },
        ))
    }

    /// Evaluation-mode forward: deterministic, dropout disabled.
    pub fn forward(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        Ok(self.run::<ChaCha8Rng>(x, t, c, None)?.0)
    }

    /// Training-mode forward: dropout active, activations recorded for
    /// [`ScoreNet::backward`].
    pub fn forward_train<R: Rng>(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
        rng: &mut R,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.run(x, t, c, Some(rng))
    }

    /// Forward with a recorded cache but dropout disabled (gradient checks).
    pub fn forward_recorded(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.run::<ChaCha8Rng>(x, t, c, None)
    }

    /// Exact reverse-mode gradients of `sum(upstream .* score)` with respect
    /// to every parameter, from a recorded forward pass.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: &Array2<T>,
    ) -> Result<NetParams<T>> {
        let cfg = &self.config;
        if upstream.dim() != (cache.batch_size(), cfg.input_dim) {
            return Err(Error::shape(
                "backward upstream gradient",
                format!("({}, {})", cache.batch_size(), cfg.input_dim),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut grads = NetParams::zeros(
            cfg.input_dim,
            cfg.cond_dim,
            cfg.hidden_dim,
            cfg.time_embed_dim,
            cfg.num_blocks,
        );

        // score = raw / sigma  =>  d_raw = upstream / sigma
        let mut d_raw = upstream.clone();
        for (mut row, &s) in d_raw.rows_mut().into_iter().zip(cache.sigma.iter()) {
            let inv = T::one() / s;
            row.mapv_inplace(|v| v * inv);
        }

        let (dh, dw, db) = linear_backward(&cache.h_final, &self.params.out_w, &d_raw, true);
        grads.out_w = dw;
        grads.out_b = db;
        let mut dh = dh.unwrap();

        for (bc, (bp, gb)) in cache
            .blocks
            .iter()
            .zip(self.params.blocks.iter().zip(grads.blocks.iter_mut()))
            .rev()
        {
            let d_out = dh;
            let (dd2, dw2, db2) = linear_backward(&bc.d2, &bp.fc2_w, &d_out, true);
            gb.fc2_w = dw2;
            gb.fc2_b = db2;
            let dd2 = dd2.unwrap();
            let da2 = match &bc.mask2 {
                Some(m) => dropout_backward(&dd2, m),
                None => dd2,
            };
            let du2 = silu_backward(&da2, &bc.u2, &bc.sig2);
            let (dl1, dscale2, dshift2) =
                group_norm_backward(&du2, &bc.xhat2, &bc.istd2, &bp.gn2_scale);
            gb.gn2_scale = dscale2;
            gb.gn2_shift = dshift2;

            let (dd1, dw1, db1) = linear_backward(&bc.d1, &bp.fc1_w, &dl1, true);
            gb.fc1_w = dw1;
            gb.fc1_b = db1;
            let dd1 = dd1.unwrap();
            let da1 = match &bc.mask1 {
                Some(m) => dropout_backward(&dd1, m),
                None => dd1,
            };
            let du1 = silu_backward(&da1, &bc.u1, &bc.sig1);
            let (d_branch, dscale1, dshift1) =
                group_norm_backward(&du1, &bc.xhat1, &bc.istd1, &bp.gn1_scale);
            gb.gn1_scale = dscale1;
            gb.gn1_shift = dshift1;

            dh = d_out + d_branch;
        }

        // Fourier features are frozen; only the projection receives gradient.
        let (_, dwt, dbt) = linear_backward(&cache.feat, &self.params.temb_w, &dh, false);
        grads.temb_w = dwt;
        grads.temb_b = dbt;
        let (_, dwi, dbi) = linear_backward(&cache.inp, &self.params.in_w, &dh, false);
        grads.in_w = dwi;
        grads.in_b = dbi;

        Ok(grads)
    }
}

impl<T: Element> ScoreModel<T> for ScoreNet<T> {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn score_batch(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        self.forward(x, t, c)
    }
}
