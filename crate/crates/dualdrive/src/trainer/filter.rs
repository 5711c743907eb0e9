//! Posterior latent filtering for acting in the real environment: track
//! (h, s) from observations and feed the policy the filtered latent.

use crate::microdrive::{PrivilegedObs, RawObs};
use crate::numcore::dist::categorical_sample_st;
use crate::numcore::{Array, NumError, Rng, Tape};
use crate::worldmodel::{action_rows, Stream, WorldModel};

pub struct LatentFilter<'a> {
    wm: &'a WorldModel,
    h: Array,
    s: Array,
    prev_action: Option<usize>,
}

impl<'a> LatentFilter<'a> {
    pub fn new(wm: &'a WorldModel) -> Self {
        Self {
            wm,
            h: Array::zeros(vec![1, wm.cfg.det_dim]),
            s: Array::zeros(vec![1, wm.cfg.stoch_dim()]),
            prev_action: None,
        }
    }

    pub fn note_action(&mut self, action: usize) {
        self.prev_action = Some(action);
    }

    pub fn observe_priv(&mut self, obs: &PrivilegedObs, rng: &mut Rng) -> Result<Array, NumError> {
        assert_eq!(self.wm.stream, Stream::Privileged);
        let (patches, egos) = self.wm.patch_rows_priv(&[obs]);
        self.advance(patches, egos, rng)
    }

    pub fn observe_raw(&mut self, obs: &RawObs, rng: &mut Rng) -> Result<Array, NumError> {
        assert_eq!(self.wm.stream, Stream::Raw);
        let (patches, egos) = self.wm.patch_rows_raw(&[obs]);
        self.advance(patches, egos, rng)
    }

    /// Current latent as a single row `[1, det+stoch]`.
    pub fn latent(&self) -> Array {
        let mut data = self.h.data().to_vec();
        data.extend_from_slice(self.s.data());
        Array::from_vec(vec![1, data.len()], data).unwrap()
    }

    pub fn state(&self) -> (Array, Array) {
        (self.h.clone(), self.s.clone())
    }

    fn advance(&mut self, patches: Array, egos: Array, rng: &mut Rng) -> Result<Array, NumError> {
        let tape = Tape::new();
        let bound = self.wm.bind(&tape, false);
        let h = tape.constant(self.h.clone());
        let s = tape.constant(self.s.clone());
        let a = tape.constant(action_rows(&[self.prev_action]));
        let h_next = self.wm.sequence_step(&tape, &bound, h, a, s);
        let e = self
            .wm
            .encode(&tape, &bound, tape.constant(patches), tape.constant(egos));
        let q = self.wm.posterior_logits(&tape, &bound, h_next, e);
        let s_next =
            categorical_sample_st(&tape, q, self.wm.cfg.classes, self.wm.cfg.unimix, rng)?;
        self.h = tape.value(h_next);
        self.s = tape.value(s_next);
        Ok(self.latent())
    }
}
