use serde::{Deserialize, Serialize};

use super::{IngestError, InstanceId};

/// A per-camera binary instance mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask {
    pub id: InstanceId,
    pub label: String,
    pub time: f64,
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl InstanceMask {
    pub fn new(
        id: InstanceId,
        label: impl Into<String>,
        time: f64,
        width: u32,
        height: u32,
        bits: Vec<bool>,
    ) -> Result<Self, IngestError> {
        if id.is_background() {
            return Err(IngestError::BackgroundId);
        }
        if bits.len() != width as usize * height as usize {
            return Err(IngestError::MaskSize {
                expected: width as usize * height as usize,
                got: bits.len(),
            });
        }
        Ok(Self {
            id,
            label: label.into(),
            time,
            width,
            height,
            bits,
        })
    }

    pub fn empty(id: InstanceId, label: impl Into<String>, time: f64, width: u32, height: u32) -> Self {
        Self::new(
            id,
            label,
            time,
            width,
            height,
            vec![false; width as usize * height as usize],
        )
        .expect("size matches by construction")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Morphological erosion by a discrete disk `dx² + dy² <= radius²`.
    /// Pixels outside the image count as unset, so any mask vanishes once the
    /// radius reaches its diameter.
    pub fn eroded(&self, radius: u32) -> InstanceMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = self.clone();
        let w = self.width as usize;
        for (i, &b) in self.bits.iter().enumerate() {
            if !b {
                continue;
            }
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let keep = offsets.iter().all(|&(dx, dy)| self.get(x + dx, y + dy));
            out.bits[i] = keep;
        }
        out
    }

    pub fn to_rle(&self) -> RleMask {
        RleMask::encode(self.width, self.height, &self.bits)
    }

    pub fn from_rle(id: InstanceId, label: impl Into<String>, time: f64, rle: &RleMask) -> Result<Self, IngestError> {
        let bits = rle.decode()?;
        Self::new(id, label, time, rle.width, rle.height, bits)
    }
}

/// Run-length encoded bitmap. Runs alternate unset/set, starting with an
/// unset run (possibly of length zero), in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
}

impl RleMask {
    pub fn encode(width: u32, height: u32, bits: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Self { width, height, runs }
    }

    pub fn decode(&self) -> Result<Vec<bool>, IngestError> {
        let expected = self.width as usize * self.height as usize;
        let total: usize = self.runs.iter().map(|&r| r as usize).sum();
        if total != expected {
            return Err(IngestError::MaskSize { expected, got: total });
        }
        let mut bits = Vec::with_capacity(expected);
        for (i, &run) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        Ok(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(size: u32, at: (u32, u32), side: u32) -> InstanceMask {
        let mut m = InstanceMask::empty(InstanceId(1), "car", 0.0, size, size);
        for y in at.1..at.1 + side {
            for x in at.0..at.0 + side {
                m.set(x, y, true);
            }
        }
        m
    }

    /// Independent erosion: a pixel survives iff every pixel of the image
    /// within Euclidean distance `r` of it is set.
    fn brute_erode(m: &InstanceMask, r: u32) -> Vec<bool> {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let r = r as f64;
        let mut out = vec![false; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut ok = m.get(x, y);
                let reach = r.ceil() as i64;
                for yy in y - reach..=y + reach {
                    for xx in x - reach..=x + reach {
                        let d = (((xx - x).pow(2) + (yy - y).pow(2)) as f64).sqrt();
                        if d <= r && !m.get(xx, yy) {
                            ok = false;
                        }
                    }
                }
                out[(y * w + x) as usize] = ok;
            }
        }
        out
    }

    #[test]
    fn zero_radius_is_identity() {
        let m = square(12, (2, 3), 5);
        assert_eq!(m.eroded(0), m);
    }

    #[test]
    fn seven_square_erodes_to_center() {
        let m = square(15, (4, 4), 7);
        let e = m.eroded(3);
        assert_eq!(e.count(), 1);
        assert!(e.get(7, 7));
        assert_eq!(e.bits(), brute_erode(&m, 3).as_slice());
    }

    #[test]
    fn large_radius_annihilates() {
        let full = square(10, (0, 0), 10);
        assert!(full.eroded(15).is_empty());
        assert!(square(20, (3, 3), 6).eroded(9).is_empty());
    }

    #[test]
    fn background_id_is_rejected() {
        assert!(matches!(
            InstanceMask::new(InstanceId(0), "car", 0.0, 1, 1, vec![true]),
            Err(IngestError::BackgroundId)
        ));
    }

    proptest! {
        #[test]
        fn erosion_matches_brute_force_and_shrinks(
            bits in proptest::collection::vec(prop::bool::weighted(0.8), 144),
            r in 0u32..4,
        ) {
            let m = InstanceMask::new(InstanceId(3), "car", 0.0, 12, 12, bits).unwrap();
            let e = m.eroded(r);
            let expected = brute_erode(&m, r);
            prop_assert_eq!(e.bits(), expected.as_slice());
            for (a, b) in e.bits().iter().zip(m.bits()) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn rle_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let n = bits.len() as u32;
            let rle = RleMask::encode(n, 1, &bits);
            prop_assert_eq!(rle.decode().unwrap(), bits);
        }
    }
}
