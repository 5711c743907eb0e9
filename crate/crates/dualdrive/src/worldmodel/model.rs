//! RSSM world model: strided grid encoder, gated recurrence, posterior and
//! prior over grouped one-hot stochastic state, and prediction heads.
//!
//! The privileged stream carries decoder, reward and continue heads; the raw
//! stream carries only a decoder unless the head ablations switch the scalar
//! heads on.

use crate::microdrive::{PrivilegedObs, RawObs, NUM_ACTIONS};
use crate::numcore::{Array, BoundParams, NumError, ParameterSet, Rng, Tape, Var};

use super::config::ModelConfig;

const SPEED_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Privileged,
    Raw,
}

impl Stream {
    pub fn tag(&self) -> &'static str {
        match self {
            Stream::Privileged => "privileged",
            Stream::Raw => "raw",
        }
    }

    pub fn channels(&self, cfg: &ModelConfig) -> usize {
        match self {
            Stream::Privileged => cfg.priv_channels,
            Stream::Raw => 1,
        }
    }
}

/// Named parameter sets for one stream's world model.
#[derive(Clone, Debug)]
pub struct WmParams {
    pub encoder: ParameterSet,
    pub gru: ParameterSet,
    pub posterior: ParameterSet,
    pub prior: ParameterSet,
    pub decoder: ParameterSet,
    pub reward: Option<ParameterSet>,
    pub cont: Option<ParameterSet>,
}

impl WmParams {
    pub fn components(&self) -> Vec<(&'static str, &ParameterSet)> {
        let mut out = vec![
            ("enc", &self.encoder),
            ("gru", &self.gru),
            ("post", &self.posterior),
            ("prior", &self.prior),
            ("dec", &self.decoder),
        ];
        if let Some(r) = &self.reward {
            out.push(("rew", r));
        }
        if let Some(c) = &self.cont {
            out.push(("cont", c));
        }
        out
    }

    pub fn components_mut(&mut self) -> Vec<(&'static str, &mut ParameterSet)> {
        let mut out = vec![
            ("enc", &mut self.encoder),
            ("gru", &mut self.gru),
            ("post", &mut self.posterior),
            ("prior", &mut self.prior),
            ("dec", &mut self.decoder),
        ];
        if let Some(r) = &mut self.reward {
            out.push(("rew", r));
        }
        if let Some(c) = &mut self.cont {
            out.push(("cont", c));
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.components().iter().map(|(_, p)| p.num_values()).sum()
    }
}

/// One stream's world model: configuration, stream tag, parameters.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub cfg: ModelConfig,
    pub stream: Stream,
    pub params: WmParams,
}

/// Tape bindings for every component of a world model.
pub struct BoundWm {
    pub encoder: BoundParams,
    pub gru: BoundParams,
    pub posterior: BoundParams,
    pub prior: BoundParams,
    pub decoder: BoundParams,
    pub reward: Option<BoundParams>,
    pub cont: Option<BoundParams>,
}

fn init_mlp(ps: &mut ParameterSet, prefix: &str, dims: &[usize], rng: &mut Rng) {
    for (i, w) in dims.windows(2).enumerate() {
        ps.insert_linear(&format!("{prefix}.l{i}"), w[0], w[1], rng);
    }
}

impl BoundWm {
    pub fn component(&self, name: &str) -> Option<&BoundParams> {
        match name {
            "enc" => Some(&self.encoder),
            "gru" => Some(&self.gru),
            "post" => Some(&self.posterior),
            "prior" => Some(&self.prior),
            "dec" => Some(&self.decoder),
            "rew" => self.reward.as_ref(),
            "cont" => self.cont.as_ref(),
            _ => None,
        }
    }
}

impl WorldModel {
    pub fn new(cfg: ModelConfig, stream: Stream, with_scalar_heads: bool, rng: &mut Rng) -> Self {
        Self::with_heads(cfg, stream, with_scalar_heads, with_scalar_heads, rng)
    }

    /// Head-granular constructor for the raw-stream head ablations. The
    /// privileged stream always carries both scalar heads.
    pub fn with_heads(
        cfg: ModelConfig,
        stream: Stream,
        reward_head: bool,
        cont_head: bool,
        rng: &mut Rng,
    ) -> Self {
        let channels = stream.channels(&cfg);
        let patch = cfg.patch_len(channels);
        let mut encoder = ParameterSet::new();
        encoder.insert_linear("patch", patch, cfg.feat, rng);
        encoder.insert_linear("out", cfg.feat + 5, cfg.feat, rng);

        let gru_in = cfg.stoch_dim() + NUM_ACTIONS;
        let mut gru = ParameterSet::new();
        for gate in ["z", "r", "n"] {
            gru.insert_linear(gate, gru_in + cfg.det_dim, cfg.det_dim, rng);
        }

        let mut posterior = ParameterSet::new();
        init_mlp(
            &mut posterior,
            "mlp",
            &[cfg.det_dim + cfg.encoder_dim(), cfg.hidden, cfg.stoch_dim()],
            rng,
        );

        let mut prior = ParameterSet::new();
        init_mlp(
            &mut prior,
            "mlp",
            &[cfg.det_dim, cfg.hidden, cfg.stoch_dim()],
            rng,
        );

        let mut decoder = ParameterSet::new();
        decoder.insert_linear("grid", cfg.latent_dim(), cfg.grid_cells() * cfg.dec_feat, rng);
        decoder.insert_linear(
            "cell",
            cfg.dec_feat,
            cfg.patch_len(cfg.priv_channels),
            rng,
        );

        let privileged = matches!(stream, Stream::Privileged);
        let reward = (privileged || reward_head).then(|| {
            let mut ps = ParameterSet::new();
            init_mlp(&mut ps, "mlp", &[cfg.latent_dim(), cfg.hidden, 1], rng);
            ps
        });
        let cont = (privileged || cont_head).then(|| {
            let mut ps = ParameterSet::new();
            init_mlp(&mut ps, "mlp", &[cfg.latent_dim(), cfg.hidden, 1], rng);
            ps
        });

        Self {
            cfg,
            stream,
            params: WmParams {
                encoder,
                gru,
                posterior,
                prior,
                decoder,
                reward,
                cont,
            },
        }
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundWm {
        BoundWm {
            encoder: self.params.encoder.bind(tape, trainable),
            gru: self.params.gru.bind(tape, trainable),
            posterior: self.params.posterior.bind(tape, trainable),
            prior: self.params.prior.bind(tape, trainable),
            decoder: self.params.decoder.bind(tape, trainable),
            reward: self.params.reward.as_ref().map(|p| p.bind(tape, trainable)),
            cont: self.params.cont.as_ref().map(|p| p.bind(tape, trainable)),
        }
    }

    /// Rearrange a batch of observations into per-cell patch rows
    /// `[B*G, patch_len]` plus per-observation ego rows `[B, 5]`.
    pub fn patch_rows_priv(&self, obs: &[&PrivilegedObs]) -> (Array, Array) {
        let c = self.cfg.priv_channels;
        self.patch_rows(obs.iter().map(|o| (o.mask.as_slice(), o.ego_vector)), c, obs.len())
    }

    pub fn patch_rows_raw(&self, obs: &[&RawObs]) -> (Array, Array) {
        self.patch_rows(
            obs.iter().map(|o| (o.pixels.as_slice(), o.ego_vector)),
            1,
            obs.len(),
        )
    }

    fn patch_rows<'a>(
        &self,
        obs: impl Iterator<Item = (&'a [f64], [f64; 5])>,
        channels: usize,
        count: usize,
    ) -> (Array, Array) {
        let n = self.cfg.obs_size;
        let gs = self.cfg.grid_side;
        let ps = self.cfg.patch_size();
        let plen = self.cfg.patch_len(channels);
        let mut patches = Vec::with_capacity(count * gs * gs * plen);
        let mut egos = Vec::with_capacity(count * 5);
        for (pixels, ego) in obs {
            for gr in 0..gs {
                for gc in 0..gs {
                    for r in 0..ps {
                        let row = gr * ps + r;
                        let start = (row * n + gc * ps) * channels;
                        patches.extend_from_slice(&pixels[start..start + ps * channels]);
                    }
                }
            }
            egos.push(ego[0] * SPEED_SCALE);
            egos.extend_from_slice(&ego[1..]);
        }
        (
            Array::from_vec(vec![count * gs * gs, plen], patches).unwrap(),
            Array::from_vec(vec![count, 5], egos).unwrap(),
        )
    }

    /// Grid feature extraction: patch projection, ego broadcast, final
    /// projection. Input rows from `patch_rows_*`; output `[B, G*F]`.
    pub fn encode(&self, tape: &Tape, bound: &BoundWm, patches: Var, egos: Var) -> Var {
        let cells = self.cfg.grid_cells();
        let b = tape.rows(egos);
        let h1 = tape.linear(patches, bound.encoder.var("patch.w"), bound.encoder.var("patch.b"));
        let h1 = tape.silu(h1);
        let ego_rep = tape.repeat_rows_each(egos, cells);
        let joined = tape.concat_cols(&[h1, ego_rep]);
        let out = tape.linear(joined, bound.encoder.var("out.w"), bound.encoder.var("out.b"));
        let out = tape.silu(out);
        tape.reshape(out, vec![b, cells * self.cfg.feat])
    }

    /// Gated recurrent update `h' = f(h, a, s)`; `action` is one-hot rows.
    pub fn sequence_step(
        &self,
        tape: &Tape,
        bound: &BoundWm,
        h: Var,
        action: Var,
        stoch: Var,
    ) -> Var {
        assert_eq!(tape.cols(action), NUM_ACTIONS, "action one-hot arity");
        let x = tape.concat_cols(&[stoch, action]);
        let xh = tape.concat_cols(&[x, h]);
        let z = tape.sigmoid(tape.linear(xh, bound.gru.var("z.w"), bound.gru.var("z.b")));
        let r = tape.sigmoid(tape.linear(xh, bound.gru.var("r.w"), bound.gru.var("r.b")));
        let rh = tape.mul(r, h);
        let xrh = tape.concat_cols(&[x, rh]);
        let n = tape.tanh(tape.linear(xrh, bound.gru.var("n.w"), bound.gru.var("n.b")));
        // h' = (1-z)*h + z*n
        let one_minus_z = tape.add_scalar(tape.neg(z), 1.0);
        let keep = tape.mul(one_minus_z, h);
        let update = tape.mul(z, n);
        tape.add(keep, update)
    }

    pub fn posterior_logits(&self, tape: &Tape, bound: &BoundWm, h: Var, e: Var) -> Var {
        let x = tape.concat_cols(&[h, e]);
        let h1 = tape.silu(tape.linear(
            x,
            bound.posterior.var("mlp.l0.w"),
            bound.posterior.var("mlp.l0.b"),
        ));
        tape.linear(
            h1,
            bound.posterior.var("mlp.l1.w"),
            bound.posterior.var("mlp.l1.b"),
        )
    }

    pub fn prior_logits(&self, tape: &Tape, bound: &BoundWm, h: Var) -> Var {
        let h1 = tape.silu(tape.linear(
            h,
            bound.prior.var("mlp.l0.w"),
            bound.prior.var("mlp.l0.b"),
        ));
        tape.linear(h1, bound.prior.var("mlp.l1.w"), bound.prior.var("mlp.l1.b"))
    }

    /// Decoder logits in patch layout `[B*G, patch_len(priv_channels)]`.
    /// Both streams reconstruct the privileged BEV mask.
    pub fn decode_patches(&self, tape: &Tape, bound: &BoundWm, h: Var, s: Var) -> Var {
        let b = tape.rows(h);
        let cells = self.cfg.grid_cells();
        let x = tape.concat_cols(&[h, s]);
        let grid = tape.silu(tape.linear(
            x,
            bound.decoder.var("grid.w"),
            bound.decoder.var("grid.b"),
        ));
        let per_cell = tape.reshape(grid, vec![b * cells, self.cfg.dec_feat]);
        tape.linear(
            per_cell,
            bound.decoder.var("cell.w"),
            bound.decoder.var("cell.b"),
        )
    }

    pub fn reward_mean(
        &self,
        tape: &Tape,
        bound: &BoundWm,
        h: Var,
        s: Var,
    ) -> Result<Var, NumError> {
        let head = bound.reward.as_ref().ok_or_else(|| {
            NumError::InvalidArgument(format!(
                "{} stream has no reward head",
                self.stream.tag()
            ))
        })?;
        let x = tape.concat_cols(&[h, s]);
        let h1 = tape.silu(tape.linear(x, head.var("mlp.l0.w"), head.var("mlp.l0.b")));
        Ok(tape.linear(h1, head.var("mlp.l1.w"), head.var("mlp.l1.b")))
    }

    pub fn continue_logit(
        &self,
        tape: &Tape,
        bound: &BoundWm,
        h: Var,
        s: Var,
    ) -> Result<Var, NumError> {
        let head = bound.cont.as_ref().ok_or_else(|| {
            NumError::InvalidArgument(format!(
                "{} stream has no continue head",
                self.stream.tag()
            ))
        })?;
        let x = tape.concat_cols(&[h, s]);
        let h1 = tape.silu(tape.linear(x, head.var("mlp.l0.w"), head.var("mlp.l0.b")));
        Ok(tape.linear(h1, head.var("mlp.l1.w"), head.var("mlp.l1.b")))
    }

    pub fn continue_prob(
        &self,
        tape: &Tape,
        bound: &BoundWm,
        h: Var,
        s: Var,
    ) -> Result<Var, NumError> {
        Ok(tape.sigmoid(self.continue_logit(tape, bound, h, s)?))
    }

    /// Privileged-mask target rearranged to match `decode_patches` layout.
    pub fn mask_to_patches(&self, masks: &[&PrivilegedObs]) -> Array {
        let c = self.cfg.priv_channels;
        let n = self.cfg.obs_size;
        let gs = self.cfg.grid_side;
        let ps = self.cfg.patch_size();
        let plen = self.cfg.patch_len(c);
        let mut out = Vec::with_capacity(masks.len() * gs * gs * plen);
        for obs in masks {
            for gr in 0..gs {
                for gc in 0..gs {
                    for r in 0..ps {
                        let row = gr * ps + r;
                        let start = (row * n + gc * ps) * c;
                        out.extend_from_slice(&obs.mask[start..start + ps * c]);
                    }
                }
            }
        }
        Array::from_vec(vec![masks.len() * gs * gs, plen], out).unwrap()
    }

    /// Inverse of the patch layout: per-sample patch rows back to a
    /// `[H][W][C]` mask of probabilities.
    pub fn patches_to_mask(&self, patch_rows: &Array, sample: usize) -> Vec<f64> {
        let c = self.cfg.priv_channels;
        let n = self.cfg.obs_size;
        let gs = self.cfg.grid_side;
        let ps = self.cfg.patch_size();
        let plen = self.cfg.patch_len(c);
        let cells = self.cfg.grid_cells();
        let mut mask = vec![0.0; n * n * c];
        for cell in 0..cells {
            let (gr, gc) = (cell / gs, cell % gs);
            let row_data = &patch_rows.data()[(sample * cells + cell) * plen..][..plen];
            for r in 0..ps {
                let row = gr * ps + r;
                let start = (row * n + gc * ps) * c;
                mask[start..start + ps * c]
                    .copy_from_slice(&row_data[r * ps * c..(r + 1) * ps * c]);
            }
        }
        mask
    }
}

/// One-hot action rows for a batch of action indices.
pub fn action_rows(actions: &[Option<usize>]) -> Array {
    let mut data = vec![0.0; actions.len() * NUM_ACTIONS];
    for (i, a) in actions.iter().enumerate() {
        if let Some(idx) = a {
            data[i * NUM_ACTIONS + idx] = 1.0;
        }
    }
    Array::from_vec(vec![actions.len(), NUM_ACTIONS], data).unwrap()
}
