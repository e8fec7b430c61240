//! The 16 time/rotation/flip augmentations of a clip.

use crate::image::Image;
use crate::volume::VideoClip;

/// `id = time_reverse·8 + rotation·2 + hflip`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Augmentation {
    pub time_reverse: bool,
    /// Clockwise quarter turns, `0..4`.
    pub rotation: u8,
    pub hflip: bool,
}

impl Augmentation {
    pub const COUNT: usize = 16;
    pub const IDENTITY: Augmentation = Augmentation {
        time_reverse: false,
        rotation: 0,
        hflip: false,
    };

    pub fn from_id(id: usize) -> Self {
        assert!(id < Self::COUNT, "augmentation id {id} out of range");
        Self {
            time_reverse: id & 8 != 0,
            rotation: ((id >> 1) & 3) as u8,
            hflip: id & 1 != 0,
        }
    }

    pub fn id(&self) -> usize {
        (self.time_reverse as usize) * 8 + (self.rotation as usize) * 2 + self.hflip as usize
    }

    pub fn all() -> impl Iterator<Item = Augmentation> {
        (0..Self::COUNT).map(Self::from_id)
    }

    /// Rotate, then flip.
    pub fn spatial(&self, img: &Image) -> Image {
        let r = img.rotate90(self.rotation);
        if self.hflip {
            r.flip_horizontal()
        } else {
            r
        }
    }

    /// Undo [`Self::spatial`]: flip, then rotate back.
    pub fn inverse_spatial(&self, img: &Image) -> Image {
        let f = if self.hflip { img.flip_horizontal() } else { img.clone() };
        f.rotate90((4 - self.rotation) % 4)
    }

    pub fn apply(&self, clip: &VideoClip) -> VideoClip {
        self.map_clip(clip, |f| self.spatial(f))
    }

    pub fn invert(&self, clip: &VideoClip) -> VideoClip {
        self.map_clip(clip, |f| self.inverse_spatial(f))
    }

    fn map_clip(&self, clip: &VideoClip, f: impl Fn(&Image) -> Image) -> VideoClip {
        let mut frames: Vec<Image> = clip.frames.iter().map(f).collect();
        if self.time_reverse {
            frames.reverse();
        }
        let rows = if self.rotation % 2 == 1 {
            frames[0].height()
        } else {
            clip.rows
        };
        // Augmentations ignore the scan order, so the shutter tag is kept.
        VideoClip {
            frames,
            rows,
            ..clip.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shutter;

    fn clip(w: usize, h: usize, k: usize) -> VideoClip {
        let frames = (0..k)
            .map(|t| Image::from_fn(w, h, 3, |x, y, c| (x + 7 * y + 31 * c + 101 * t) as f32 / 1e3))
            .collect();
        VideoClip::new(frames, Shutter::Rolling).unwrap()
    }

    #[test]
    fn ids_enumerate_the_group_once() {
        let mut seen = std::collections::HashSet::new();
        for (i, a) in Augmentation::all().enumerate() {
            assert_eq!(a.id(), i);
            assert!(seen.insert((a.time_reverse, a.rotation, a.hflip)));
        }
        assert_eq!(seen.len(), 16);
        assert_eq!(Augmentation::from_id(0), Augmentation::IDENTITY);
    }

    #[test]
    fn inverse_restores_non_square_clips() {
        let c = clip(7, 4, 3);
        for a in Augmentation::all() {
            let aug = a.apply(&c);
            if a.rotation % 2 == 1 {
                assert_eq!((aug.width(), aug.height()), (4, 7));
            }
            assert_eq!(a.invert(&aug), c, "augmentation {}", a.id());
        }
    }

    #[test]
    fn identity_and_time_reversal() {
        let c = clip(5, 5, 3);
        assert_eq!(Augmentation::IDENTITY.apply(&c), c);
        let rev = Augmentation::from_id(8).apply(&c);
        assert_eq!(
            rev.frames,
            vec![c.frames[2].clone(), c.frames[1].clone(), c.frames[0].clone()]
        );
        assert_eq!(rev.shutter, Shutter::Rolling);
    }
}
