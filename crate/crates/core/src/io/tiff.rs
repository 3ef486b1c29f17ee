//! Multi-page grayscale TIFF stacks, read and written one page at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::volume::{BitDepth, Dims, LabelVolume, VoxelGrid, VoxelSpacing};
use crate::{Error, Result};

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn open_decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(f)).map_err(|e| tiff_err(path, e))
}

fn page_depth(path: &Path, page: usize, c: ColorType) -> Result<BitDepth> {
    match c {
        ColorType::Gray(8) => Ok(BitDepth::Eight),
        ColorType::Gray(16) => Ok(BitDepth::Sixteen),
        ColorType::Gray(b) => Err(Error::format(path, format!("page {page}: {b}-bit grayscale is not supported"))),
        ColorType::RGB(_) | ColorType::RGBA(_) => Err(Error::format(
            path,
            format!("page {page} is RGB; split the channels into one grayscale stack per channel"),
        )),
        other => Err(Error::format(path, format!("page {page}: unsupported color type {other:?}"))),
    }
}

/// Page-at-a-time reader. Page sizes and bit depths are validated for the
/// whole file when it is opened.
pub struct StackReader {
    path: PathBuf,
    decoder: Decoder<BufReader<File>>,
    dims: Dims,
    depth: BitDepth,
    next: usize,
}

impl StackReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut d = open_decoder(path)?;
        let (w, h) = d.dimensions().map_err(|e| tiff_err(path, e))?;
        let depth = page_depth(path, 0, d.colortype().map_err(|e| tiff_err(path, e))?)?;
        let mut pages = 1;
        while d.more_images() {
            d.next_image().map_err(|e| tiff_err(path, e))?;
            let dim = d.dimensions().map_err(|e| tiff_err(path, e))?;
            if dim != (w, h) {
                return Err(Error::format(
                    path,
                    format!("page {pages} is {}x{}, page 0 is {w}x{h}", dim.0, dim.1),
                ));
            }
            let pd = page_depth(path, pages, d.colortype().map_err(|e| tiff_err(path, e))?)?;
            if pd != depth {
                return Err(Error::format(
                    path,
                    format!("page {pages} is {}-bit, page 0 is {}-bit", pd.bits(), depth.bits()),
                ));
            }
            pages += 1;
        }
        if w == 0 || h == 0 {
            return Err(Error::format(path, "empty pages"));
        }
        Ok(StackReader {
            path: path.to_path_buf(),
            decoder: open_decoder(path)?,
            dims: Dims::new(w as usize, h as usize, pages),
            depth,
            next: 0,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Next page, or `None` after the last one.
    pub fn next_plane(&mut self) -> Result<Option<Vec<u16>>> {
        if self.next == self.dims.nz {
            return Ok(None);
        }
        if self.next > 0 {
            self.decoder.next_image().map_err(|e| tiff_err(&self.path, e))?;
        }
        let page = self.next;
        self.next += 1;
        let values = match self.decoder.read_image().map_err(|e| tiff_err(&self.path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
            DecodingResult::U16(v) => v,
            _ => return Err(Error::format(&self.path, format!("page {page}: unexpected sample type"))),
        };
        if values.len() != self.dims.plane_len() {
            return Err(Error::format(&self.path, format!("page {page}: truncated pixel data")));
        }
        Ok(Some(values))
    }
}

/// Reads a whole stack. Spacing is not stored in files; the default is set
/// and callers override it with [`VoxelGrid::with_spacing`].
pub fn read_channel_stack(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let mut r = StackReader::open(path)?;
    let dims = r.dims();
    let mut values = Vec::with_capacity(dims.len());
    while let Some(p) = r.next_plane()? {
        values.extend_from_slice(&p);
    }
    VoxelGrid::new(dims, VoxelSpacing::default(), r.depth(), values)
}

/// Page-at-a-time writer.
pub struct StackWriter {
    path: PathBuf,
    encoder: TiffEncoder<BufWriter<File>>,
    nx: usize,
    ny: usize,
    depth: BitDepth,
    pages: usize,
}

impl StackWriter {
    pub fn create(path: impl AsRef<Path>, nx: usize, ny: usize, depth: BitDepth) -> Result<Self> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(StackWriter {
            path: path.to_path_buf(),
            encoder: TiffEncoder::new(BufWriter::new(f)).map_err(|e| tiff_err(path, e))?,
            nx,
            ny,
            depth,
            pages: 0,
        })
    }

    pub fn write_plane(&mut self, values: &[u16]) -> Result<()> {
        if values.len() != self.nx * self.ny {
            return Err(Error::DimMismatch(format!(
                "plane of {} values for {}x{} pages",
                values.len(),
                self.nx,
                self.ny
            )));
        }
        let (w, h) = (self.nx as u32, self.ny as u32);
        let r = match self.depth {
            BitDepth::Eight => {
                let bytes: Vec<u8> = values.iter().map(|&v| v.min(255) as u8).collect();
                self.encoder.write_image::<colortype::Gray8>(w, h, &bytes)
            }
            BitDepth::Sixteen => self.encoder.write_image::<colortype::Gray16>(w, h, values),
        };
        r.map_err(|e| tiff_err(&self.path, e))?;
        self.pages += 1;
        Ok(())
    }

    /// Flushes the file. A stack needs at least one page.
    pub fn finish(self) -> Result<()> {
        if self.pages == 0 {
            return Err(Error::Invalid(format!("{}: no pages written", self.path.display())));
        }
        Ok(())
    }
}

pub fn write_channel_stack(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    let d = grid.dims();
    let mut w = StackWriter::create(path, d.nx, d.ny, grid.depth())?;
    for z in 0..d.nz {
        w.write_plane(grid.plane(z))?;
    }
    w.finish()
}

/// Converts one label plane to 16-bit page values.
pub fn label_page(labels: &[u32]) -> Result<Vec<u16>> {
    labels
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::TooManyLabels(l as usize)))
        .collect()
}

/// 16-bit stack, one page per z, value = label.
pub fn write_label_volume(path: impl AsRef<Path>, labels: &LabelVolume) -> Result<()> {
    let max = labels.max_label();
    if max > u16::MAX as u32 {
        return Err(Error::TooManyLabels(max as usize));
    }
    let d = labels.dims();
    let mut w = StackWriter::create(path, d.nx, d.ny, BitDepth::Sixteen)?;
    for z in 0..d.nz {
        w.write_plane(&label_page(labels.plane(z))?)?;
    }
    w.finish()
}

pub fn read_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let g = read_channel_stack(path)?;
    let dims = g.dims();
    LabelVolume::from_vec(dims, g.into_values().into_iter().map(u32::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stack_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.tif");
        let g = VoxelGrid::filled(Dims::new(16, 16, 4), VoxelSpacing::default(), BitDepth::Eight, 0);
        write_channel_stack(&p, &g).unwrap();
        let r = read_channel_stack(&p).unwrap();
        assert_eq!(r.dims(), Dims::new(16, 16, 4));
        assert_eq!(r.depth(), BitDepth::Eight);
        assert!(r.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn sixteen_bit_ramp_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.tif");
        let dims = Dims::new(256, 128, 2);
        let values: Vec<u16> = (0..dims.len()).map(|i| (i % 65536) as u16).collect();
        let g = VoxelGrid::new(dims, VoxelSpacing::default(), BitDepth::Sixteen, values.clone()).unwrap();
        write_channel_stack(&p, &g).unwrap();
        let back = read_channel_stack(&p).unwrap();
        assert_eq!(back.values(), &values[..]);
        assert_eq!(back.values()[65535], 65535);
    }

    #[test]
    fn labels_round_trip_with_exact_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.tif");
        let dims = Dims::new(5, 4, 3);
        let data: Vec<u32> = (0..dims.len() as u32).map(|i| [0, 1, 2, 3][(i % 4) as usize]).collect();
        let l = LabelVolume::from_vec(dims, data).unwrap();
        write_label_volume(&p, &l).unwrap();
        let back = read_label_volume(&p).unwrap();
        assert_eq!(back, l);
        let mut seen: Vec<u32> = back.data().iter().copied().filter(|&v| v != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![1, 2, 3]);

        let empty = LabelVolume::new(dims);
        write_label_volume(&p, &empty).unwrap();
        assert!(read_label_volume(&p).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn too_many_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let l = LabelVolume::from_vec(Dims::new(2, 1, 1), vec![1, 70000]).unwrap();
        assert!(matches!(
            write_label_volume(dir.path().join("x.tif"), &l),
            Err(Error::TooManyLabels(70000))
        ));
    }

    #[test]
    fn bad_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_channel_stack(dir.path().join("missing.tif")), Err(Error::Io { .. })));

        // Mixed page sizes.
        let p = dir.path().join("mixed.tif");
        {
            let f = File::create(&p).unwrap();
            let mut e = TiffEncoder::new(BufWriter::new(f)).unwrap();
            e.write_image::<colortype::Gray8>(4, 4, &[0u8; 16]).unwrap();
            e.write_image::<colortype::Gray8>(2, 2, &[0u8; 4]).unwrap();
        }
        let err = read_channel_stack(&p).unwrap_err().to_string();
        assert!(err.contains("page 1"), "{err}");

        // Mixed bit depth.
        let p = dir.path().join("depth.tif");
        {
            let f = File::create(&p).unwrap();
            let mut e = TiffEncoder::new(BufWriter::new(f)).unwrap();
            e.write_image::<colortype::Gray8>(2, 2, &[0u8; 4]).unwrap();
            e.write_image::<colortype::Gray16>(2, 2, &[0u16; 4]).unwrap();
        }
        assert!(read_channel_stack(&p).unwrap_err().to_string().contains("16-bit"));

        // RGB.
        let p = dir.path().join("rgb.tif");
        {
            let f = File::create(&p).unwrap();
            let mut e = TiffEncoder::new(BufWriter::new(f)).unwrap();
            e.write_image::<colortype::RGB8>(2, 2, &[0u8; 12]).unwrap();
        }
        assert!(read_channel_stack(&p).unwrap_err().to_string().contains("split the channels"));
    }
}
