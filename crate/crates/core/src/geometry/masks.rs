//! Facial attributes and their UV-space masks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_mask_png, save_mask_png};
use crate::tensor::Tensor;

use super::uv::Resolution;

/// The five editable attributes, in code order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    #[serde(rename = "SG")]
    Sunglasses,
    #[serde(rename = "LS")]
    Lipstick,
    #[serde(rename = "SH")]
    Shadow,
    #[serde(rename = "SM")]
    Smiling,
    #[serde(rename = "BA")]
    Bangs,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Sunglasses,
        Attribute::Lipstick,
        Attribute::Shadow,
        Attribute::Smiling,
        Attribute::Bangs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        ["SG", "LS", "SH", "SM", "BA"][self.index()]
    }

    pub fn codes() -> Vec<String> {
        Self::ALL.iter().map(|a| a.code().to_string()).collect()
    }

    /// Whether UV point `(u, v)` lies in the face region this attribute edits.
    pub fn region_contains(self, [u, v]: [f64; 2]) -> bool {
        let band = |u0: f64, u1: f64, v0: f64, v1: f64| (u0..=u1).contains(&u) && (v0..=v1).contains(&v);
        match self {
            Attribute::Sunglasses => band(0.28, 0.72, 0.56, 0.66),
            Attribute::Lipstick | Attribute::Smiling => {
                let (du, dv) = ((u - 0.5) / 0.13, (v - 0.30) / 0.06);
                du * du + dv * dv <= 1.0
            }
            Attribute::Shadow => band(0.25, 0.75, 0.15, 0.40),
            Attribute::Bangs => band(0.28, 0.72, 0.72, 0.86),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownAttribute(s.to_string()))
    }
}

/// Which mask to fetch: an attribute's non-attribute area, or the
/// all-ones mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskId {
    Attr(Attribute),
    Full,
}

impl MaskId {
    fn file_stem(self) -> &'static str {
        match self {
            MaskId::Attr(a) => a.code(),
            MaskId::Full => "FULL",
        }
    }
}

/// Per-attribute masks `Ω` at one resolution. `Ω` is set on texels
/// *outside* the attribute's region.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMaskSet {
    resolution: Resolution,
    omegas: Vec<Vec<bool>>,
}

impl AttributeMaskSet {
    /// Masks rasterized from the built-in UV regions.
    pub fn procedural(resolution: Resolution) -> Self {
        let r = resolution.get();
        let omegas = Attribute::ALL
            .iter()
            .map(|&a| {
                (0..r * r)
                    .map(|i| !a.region_contains(resolution.uv_of(i / r, i % r)))
                    .collect()
            })
            .collect();
        AttributeMaskSet { resolution, omegas }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn omega(&self, attr: Attribute) -> &[bool] {
        &self.omegas[attr.index()]
    }

    /// Complement of `Ω`: the texels the attribute may change.
    pub fn region(&self, attr: Attribute) -> Vec<bool> {
        self.omega(attr).iter().map(|&m| !m).collect()
    }

    pub fn get(&self, id: MaskId) -> Vec<bool> {
        match id {
            MaskId::Attr(a) => self.omega(a).to_vec(),
            MaskId::Full => vec![true; self.resolution.area()],
        }
    }

    /// `Ω` as a `1×1×R×R` tensor of zeros and ones.
    pub fn omega_tensor(&self, attr: Attribute) -> Tensor {
        mask_tensor(self.resolution, self.omega(attr))
    }

    /// Nearest-neighbor resampling to another resolution.
    pub fn resample(&self, to: Resolution) -> Self {
        AttributeMaskSet {
            resolution: to,
            omegas: self.omegas.iter().map(|m| resample_mask(m, self.resolution, to)).collect(),
        }
    }

    /// Writes `SG.png` … `BA.png` and `FULL.png` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let r = self.resolution.get();
        let ids = Attribute::ALL.iter().map(|&a| MaskId::Attr(a)).chain([MaskId::Full]);
        for id in ids {
            save_mask_png(dir.join(format!("{}.png", id.file_stem())), r, r, &self.get(id))?;
        }
        Ok(())
    }

    /// Reads masks written by [`save_dir`](Self::save_dir), resampling them
    /// to `resolution` when stored at another size.
    pub fn load_dir(dir: impl AsRef<Path>, resolution: Resolution) -> Result<Self> {
        let dir = dir.as_ref();
        let mut omegas = Vec::new();
        for a in Attribute::ALL {
            let path = dir.join(format!("{}.png", a.code()));
            let (w, h, m) = load_mask_png(&path)?;
            if w != h {
                return Err(Error::format(&path, format!("mask must be square, got {w}x{h}")));
            }
            let stored = Resolution::new(w).map_err(|e| Error::format(&path, e.to_string()))?;
            omegas.push(resample_mask(&m, stored, resolution));
        }
        Ok(AttributeMaskSet { resolution, omegas })
    }
}

pub fn mask_tensor(resolution: Resolution, mask: &[bool]) -> Tensor {
    let r = resolution.get();
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![1, 1, r, r], data).expect("consistent dims")
}

/// Nearest-neighbor resampling by texel UV coordinate.
pub fn resample_mask(mask: &[bool], from: Resolution, to: Resolution) -> Vec<bool> {
    let (rf, rt) = (from.get(), to.get());
    (0..rt * rt)
        .map(|i| {
            let (row, col) = from.texel_of(to.uv_of(i / rt, i % rt));
            mask[row * rf + col]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_codes() {
        assert_eq!("sg".parse::<Attribute>().unwrap(), Attribute::Sunglasses);
        assert_eq!("BA".parse::<Attribute>().unwrap(), Attribute::Bangs);
        let err = "XX".parse::<Attribute>().unwrap_err();
        assert!(err.to_string().contains("unknown attribute"), "{err}");
        for (i, a) in Attribute::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Attribute::from_index(i), Some(*a));
        }
    }

    #[test]
    fn omega_complements_region() {
        let set = AttributeMaskSet::procedural(Resolution::new(64).unwrap());
        for a in Attribute::ALL {
            let region = set.region(a);
            assert!(region.iter().any(|&x| x), "{a} region empty");
            assert!(set.omega(a).iter().zip(&region).all(|(&o, &r)| o ^ r));
        }
        assert!(set.get(MaskId::Full).iter().all(|&x| x));
        assert_eq!(set.omega(Attribute::Lipstick), set.omega(Attribute::Smiling));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = AttributeMaskSet::procedural(Resolution::new(32).unwrap());
        set.save_dir(dir.path()).unwrap();
        assert!(dir.path().join("FULL.png").exists());
        let back = AttributeMaskSet::load_dir(dir.path(), Resolution::new(32).unwrap()).unwrap();
        assert_eq!(back, set);
    }
}
