use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use amtgraph::graph::{generate_urand, load_edge_list, EdgeList, EdgeListFormat};
use anyhow::{bail, Context, Result};

/// `--graph` argument: an edge-list file or `urand:scale,degree,seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSource {
    File(PathBuf),
    Urand { scale: u32, degree: usize, seed: u64 },
}

impl FromStr for GraphSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let Some(rest) = s.strip_prefix("urand:") else {
            if s.is_empty() {
                return Err("empty graph path".into());
            }
            return Ok(GraphSource::File(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        let [scale, degree, seed] = parts[..] else {
            return Err(format!("expected urand:scale,degree,seed, got {s:?}"));
        };
        Ok(GraphSource::Urand {
            scale: scale.parse().map_err(|e| format!("urand scale {scale:?}: {e}"))?,
            degree: degree.parse().map_err(|e| format!("urand degree {degree:?}: {e}"))?,
            seed: seed.parse().map_err(|e| format!("urand seed {seed:?}: {e}"))?,
        })
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::File(p) => write!(f, "{}", p.display()),
            GraphSource::Urand { scale, degree, seed } => write!(f, "urand:{scale},{degree},{seed}"),
        }
    }
}

impl GraphSource {
    pub fn load(&self) -> Result<EdgeList> {
        match self {
            GraphSource::File(path) => {
                let format = EdgeListFormat::detect(path).with_context(|| format!("reading {}", path.display()))?;
                load_edge_list(path, format).with_context(|| format!("loading {}", path.display()))
            }
            &GraphSource::Urand { scale, degree, seed } => {
                if degree == 0 {
                    bail!("urand degree must be positive");
                }
                Ok(generate_urand(scale, degree, seed)?)
            }
        }
    }
}
