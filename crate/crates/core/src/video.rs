use std::path::Path;

use image::{Rgb, RgbImage};
use pas_autograd::Tensor;

use crate::error::{Error, Result};

/// RGB video with values in `[0, 1]`, stored frame-major as `[T, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    data: Tensor,
}

impl Video {
    pub fn new(data: Tensor) -> Result<Self> {
        match *data.shape() {
            [_, 3, h, w] if h > 0 && w > 0 => Ok(Self { data }),
            ref s => Err(Error::Invalid(format!("video must be [T, 3, H, W], got {s:?}"))),
        }
    }

    pub fn zeros(frames: usize, h: usize, w: usize) -> Self {
        Self { data: Tensor::zeros(&[frames, 3, h, w]) }
    }

    pub fn from_frames(frames: &[Tensor]) -> Result<Self> {
        Self::new(Tensor::stack(frames))
    }

    pub fn len(&self) -> usize {
        self.data.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.data.dim(2)
    }

    pub fn width(&self) -> usize {
        self.data.dim(3)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Frame `t` as `[3, H, W]`.
    pub fn frame(&self, t: usize) -> Tensor {
        self.data.index0(t)
    }

    pub fn frames(&self) -> Vec<Tensor> {
        (0..self.len()).map(|t| self.frame(t)).collect()
    }

    /// `[3, T, H, W]` channel-major layout used by the networks.
    pub fn to_channel_major(&self) -> Tensor {
        let (t, h, w) = (self.len(), self.height(), self.width());
        let hw = h * w;
        let mut out = Tensor::zeros(&[3, t, h, w]);
        for f in 0..t {
            for c in 0..3 {
                out.data_mut()[(c * t + f) * hw..(c * t + f + 1) * hw]
                    .copy_from_slice(&self.data.data()[(f * 3 + c) * hw..(f * 3 + c + 1) * hw]);
            }
        }
        out
    }

    pub fn from_channel_major(x: &Tensor) -> Result<Self> {
        let [c, t, h, w]: [usize; 4] = x
            .shape()
            .try_into()
            .map_err(|_| Error::Invalid(format!("expected [3, T, H, W], got {:?}", x.shape())))?;
        if c != 3 {
            return Err(Error::Invalid(format!("expected 3 channels, got {c}")));
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[t, 3, h, w]);
        for f in 0..t {
            for ch in 0..3 {
                out.data_mut()[(f * 3 + ch) * hw..(f * 3 + ch + 1) * hw]
                    .copy_from_slice(&x.data()[(ch * t + f) * hw..(ch * t + f + 1) * hw]);
            }
        }
        Ok(Self { data: out })
    }

    /// The same frame repeated `t` times.
    pub fn repeat_frame(frame: &Tensor, t: usize) -> Result<Self> {
        Self::from_frames(&vec![frame.clone(); t])
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_to_image(frame: &Tensor) -> RgbImage {
    let (h, w) = (frame.dim(1), frame.dim(2));
    let d = frame.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([quantize(d[i]), quantize(d[h * w + i]), quantize(d[2 * h * w + i])])
    })
}

pub fn image_to_frame(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            out.data_mut()[c * h * w + i] = px[c] as f64 / 255.0;
        }
    }
    out
}

pub fn save_frame(frame: &Tensor, path: &Path) -> Result<()> {
    frame_to_image(frame).save(path)?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(image_to_frame(&img))
}

/// Writes `dir/0000.png`, `dir/0001.png`, ...
pub fn save_video(video: &Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..video.len() {
        save_frame(&video.frame(t), &dir.join(format!("{t:04}.png")))?;
    }
    Ok(())
}

pub fn load_video(dir: &Path, frames: usize) -> Result<Video> {
    let frames: Vec<Tensor> = (0..frames).map(|t| load_frame(&dir.join(format!("{t:04}.png")))).collect::<Result<_>>()?;
    Video::from_frames(&frames)
}
