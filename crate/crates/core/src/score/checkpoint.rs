//! JSON checkpoints of a trained network.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "landau-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Write `m` to `path`; reading it back gives a bit-identical network.
pub fn save_checkpoint(m: &Mlp, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        sizes: m.sizes().to_vec(),
        activation: m.activation(),
        params: m.params().to_vec(),
    };
    let text = serde_json::to_string(&ck).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
    }
    Mlp::from_params(ck.sizes, ck.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SimRng;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = SimRng::new(9);
        let mut m = Mlp::new(3, &[7, 5], &mut rng).unwrap();
        for p in m.params_mut() {
            *p += 1e-3 * rng.standard_normal();
        }
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(
            &path,
            r#"{"format":"landau-mlp","version":2,"sizes":[1,1],"activation":"softsign","params":[0.0,0.0]}"#,
        )
        .unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
