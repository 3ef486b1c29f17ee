//! Stack files, configuration and result tables.

mod config;
mod table;
mod tiff;

pub use config::{load_config, parse_spacing, PipelineConfig, CONFIG_KEYS};
pub use table::{read_cell_table, write_cell_table, write_json, CELL_TABLE_HEADER};
pub use tiff::{
    label_page, read_channel_stack, read_label_volume, write_channel_stack, write_label_volume, StackReader,
    StackWriter,
};

use crate::volume::{Dims, VoxelGrid, VoxelSpacing};
use crate::{Error, Result};

/// The three co-registered channels of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub nuclei: VoxelGrid,
    pub marker: VoxelGrid,
    pub vessel: VoxelGrid,
}

impl ChannelSet {
    pub fn new(nuclei: VoxelGrid, marker: VoxelGrid, vessel: VoxelGrid) -> Result<Self> {
        for (name, g) in [("marker", &marker), ("vessel", &vessel)] {
            if g.dims() != nuclei.dims() {
                return Err(Error::DimMismatch(format!(
                    "{name} channel is {}, nuclei channel is {}",
                    g.dims(),
                    nuclei.dims()
                )));
            }
        }
        Ok(ChannelSet { nuclei, marker, vessel })
    }

    /// Reads three stacks and applies `spacing` to each.
    pub fn read(
        nuclei: impl AsRef<std::path::Path>,
        marker: impl AsRef<std::path::Path>,
        vessel: impl AsRef<std::path::Path>,
        spacing: VoxelSpacing,
    ) -> Result<Self> {
        let load = |p: &std::path::Path| read_channel_stack(p).map(|g| g.with_spacing(spacing));
        Self::new(load(nuclei.as_ref())?, load(marker.as_ref())?, load(vessel.as_ref())?)
    }

    pub fn dims(&self) -> Dims {
        self.nuclei.dims()
    }
}
