//! Model dimensions shared by both streams.

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub obs_size: usize,
    pub priv_channels: usize,
    pub grid_side: usize,
    pub feat: usize,
    pub det_dim: usize,
    pub groups: usize,
    pub classes: usize,
    pub hidden: usize,
    pub dec_feat: usize,
    pub unimix: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_size: 32,
            priv_channels: 8,
            grid_side: 8,
            feat: 16,
            det_dim: 256,
            groups: 8,
            classes: 8,
            hidden: 256,
            dec_feat: 16,
            unimix: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn patch_size(&self) -> usize {
        assert_eq!(self.obs_size % self.grid_side, 0, "grid must tile the obs");
        self.obs_size / self.grid_side
    }

    pub fn grid_cells(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn stoch_dim(&self) -> usize {
        self.groups * self.classes
    }

    pub fn latent_dim(&self) -> usize {
        self.det_dim + self.stoch_dim()
    }

    pub fn encoder_dim(&self) -> usize {
        self.grid_cells() * self.feat
    }

    /// Patch length for one stream's input (channels differ per stream).
    pub fn patch_len(&self, channels: usize) -> usize {
        self.patch_size() * self.patch_size() * channels
    }

    pub fn mask_len(&self) -> usize {
        self.obs_size * self.obs_size * self.priv_channels
    }
}
