use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// A layer selection as written on the command line: `3-8`, `3,5,7`,
/// `all` (every decoder layer) or `conv` (the pretrained layers whose
/// encoders did not diverge).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Explicit(Vec<usize>),
    All,
    Converged,
}

impl LayerSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "all" => return Ok(LayerSpec::All),
            "conv" => return Ok(LayerSpec::Converged),
            "" => return Err(Error::LayerSpec(s.to_string())),
            _ => {}
        }
        let bad = || Error::LayerSpec(s.to_string());
        let mut out = BTreeSet::new();
        for part in s.split(',') {
            let part = part.trim();
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad())?;
                    let b: usize = b.trim().parse().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    out.extend(a..=b);
                }
                None => {
                    out.insert(part.parse::<usize>().map_err(|_| bad())?);
                }
            }
        }
        Ok(LayerSpec::Explicit(out.into_iter().collect()))
    }

    /// Resolves against a decoder depth. `conv` needs the layers of a
    /// pretraining run and the ones flagged divergent there.
    pub fn resolve(&self, n_layers: usize, pretrained: Option<(&[usize], &[usize])>) -> Result<Vec<usize>> {
        let layers = match self {
            LayerSpec::Explicit(v) => v.clone(),
            LayerSpec::All => (0..n_layers).collect(),
            LayerSpec::Converged => {
                let (trained, diverged) = pretrained
                    .ok_or_else(|| Error::LayerSpec("conv needs a pretraining log".into()))?;
                trained.iter().copied().filter(|l| !diverged.contains(l)).collect()
            }
        };
        if let Some(bad) = layers.iter().find(|l| **l >= n_layers) {
            return Err(Error::LayerSpec(alloc::format!("layer {bad} outside 0..{n_layers}")));
        }
        if layers.is_empty() {
            return Err(Error::LayerSpec(String::from("empty selection")));
        }
        Ok(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn memit_range() {
        assert_eq!(LayerSpec::parse("3-8").unwrap().resolve(9, None).unwrap(), vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(LayerSpec::parse("5, 3,4-4").unwrap().resolve(9, None).unwrap(), vec![3, 4, 5]);
        assert_eq!(LayerSpec::parse("all").unwrap().resolve(4, None).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn conv_drops_diverged() {
        let spec = LayerSpec::parse("conv").unwrap();
        assert!(spec.resolve(9, None).is_err());
        assert_eq!(spec.resolve(9, Some((&[3, 4, 5], &[4]))).unwrap(), vec![3, 5]);
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "8-3", "x", "3-", "1,,2"] {
            assert!(LayerSpec::parse(s).is_err(), "{s}");
        }
        assert!(LayerSpec::parse("3-9").unwrap().resolve(9, None).is_err());
    }
}
