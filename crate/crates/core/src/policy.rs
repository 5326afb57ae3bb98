//! Affine feedback policy and its plain-text persistence.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Per-node open-loop controls `v_k`, feedback gains `G_k` and the reference means
/// `m_{x,k⁻}` the gains act on.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub v: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub ref_means: Vec<DVector<f64>>,
}

impl ControlPolicy {
    pub fn zeros(nodes: usize, control_dim: usize, state_dim: usize) -> Self {
        Self {
            v: vec![DVector::zeros(control_dim); nodes],
            gains: vec![DMatrix::zeros(control_dim, state_dim); nodes],
            ref_means: vec![DVector::zeros(state_dim); nodes],
        }
    }

    /// Policy with zeroed reference means (to be filled by a forward pass).
    pub fn new(v: Vec<DVector<f64>>, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if v.len() != gains.len() || v.is_empty() {
            return Err(Error::Dimension(format!("{} controls but {} gains", v.len(), gains.len())));
        }
        let m = v[0].len();
        let n = gains[0].ncols();
        if v.iter().any(|x| x.len() != m) || gains.iter().any(|g| g.nrows() != m || g.ncols() != n) {
            return Err(Error::Dimension("inconsistent control or gain shapes".into()));
        }
        let ref_means = vec![DVector::zeros(n); v.len()];
        Ok(Self { v, gains, ref_means })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn control_dim(&self) -> usize {
        self.v.first().map_or(0, |v| v.len())
    }

    pub fn state_dim(&self) -> usize {
        self.gains.first().map_or(0, |g| g.ncols())
    }

    pub fn check_shape(&self, nodes: usize, control_dim: usize, state_dim: usize) -> Result<()> {
        let ok = self.v.len() == nodes
            && self.gains.len() == nodes
            && self.ref_means.len() == nodes
            && self.v.iter().all(|v| v.len() == control_dim)
            && self.gains.iter().all(|g| g.nrows() == control_dim && g.ncols() == state_dim)
            && self.ref_means.iter().all(|m| m.len() == state_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "policy does not match {nodes} nodes, control dimension {control_dim}, state dimension {state_dim}"
            )))
        }
    }

    /// Text form: a size header, then `v k`, `G k`, `ref k` blocks with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# gmsteer control policy; v in VU, G in VU per state unit, ref in DU/VU");
        let _ = writeln!(out, "nodes {} control_dim {} state_dim {}", self.len(), self.control_dim(), self.state_dim());
        let row = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
            let line: Vec<String> = vals.map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        };
        for k in 0..self.len() {
            let _ = writeln!(out, "v {k}");
            row(&mut out, &mut self.v[k].iter().copied());
            let _ = writeln!(out, "G {k}");
            for r in 0..self.gains[k].nrows() {
                row(&mut out, &mut self.gains[k].row(r).iter().copied());
            }
            let _ = writeln!(out, "ref {k}");
            row(&mut out, &mut self.ref_means[k].iter().copied());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty policy file".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 6 || toks[0] != "nodes" || toks[2] != "control_dim" || toks[4] != "state_dim" {
            return Err(Error::Parse(format!("bad policy header `{header}`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad size `{s}`")));
        let (nodes, m, n) = (num(toks[1])?, num(toks[3])?, num(toks[5])?);
        let mut cursor = LineCursor { lines: &mut lines };
        let mut policy = Self::zeros(nodes, m, n);
        for k in 0..nodes {
            cursor.tag("v", k)?;
            policy.v[k] = DVector::from_vec(cursor.row(m, "v")?);
            cursor.tag("G", k)?;
            for r in 0..m {
                for (c, v) in cursor.row(n, "G")?.into_iter().enumerate() {
                    policy.gains[k][(r, c)] = v;
                }
            }
            cursor.tag("ref", k)?;
            policy.ref_means[k] = DVector::from_vec(cursor.row(n, "ref")?);
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

struct LineCursor<'a, I: Iterator<Item = &'a str>> {
    lines: &'a mut I,
}

impl<'a, I: Iterator<Item = &'a str>> LineCursor<'a, I> {
    fn next(&mut self) -> Result<&'a str> {
        self.lines.next().ok_or_else(|| Error::Parse("truncated policy file".into()))
    }

    fn tag(&mut self, tag: &str, k: usize) -> Result<()> {
        let line = self.next()?;
        if line.trim() != format!("{tag} {k}") {
            return Err(Error::Parse(format!("expected `{tag} {k}`, found `{line}`")));
        }
        Ok(())
    }

    fn row(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let vals = self
            .next()?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}` in {what}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(Error::Parse(format!("{what}: expected {len} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}
