use std::fmt::Write as _;

use super::GroupError;
use crate::diffcore::{
    mlp_forward, sigma_from_logvar, sigmoid, Activation, Layer, Matrix, MlpParams, RngStream, DEFAULT_HIDDEN,
};

pub const DEFAULT_LATENT_DIM: usize = 8;
const FORMAT_HEADER: &str = "fairconf-group-model v1";

/// Encoder (`mu`, `logvar`), membership decoder and reconstruction decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    pub mu_net: MlpParams,
    pub logvar_net: MlpParams,
    /// Latent -> 1 with a sigmoid head.
    pub member_net: MlpParams,
    /// Latent -> input width with an identity head.
    pub recon_net: MlpParams,
    latent_dim: usize,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl GroupModel {
    pub fn new(input_dim: usize, latent_dim: usize, rng: &mut RngStream) -> Result<Self, GroupError> {
        Self::with_hidden(input_dim, latent_dim, &DEFAULT_HIDDEN, rng)
    }

    /// Every network uses the hidden widths `hidden`.
    pub fn with_hidden(
        input_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self, GroupError> {
        let widths = |i, o| widths(i, hidden, o);
        let r = |label: &str, w: Vec<usize>, head| MlpParams::new(&w, head, &mut rng.derive(label));
        let model = Self {
            mu_net: r("mu", widths(input_dim, latent_dim), Activation::Identity)?,
            logvar_net: r("logvar", widths(input_dim, latent_dim), Activation::Identity)?,
            member_net: r("member", widths(latent_dim, 1), Activation::Sigmoid)?,
            recon_net: r("recon", widths(latent_dim, input_dim), Activation::Identity)?,
            latent_dim,
        };
        // Advance the parent so successive models differ.
        rng.uniform();
        Ok(model)
    }

    pub fn zeros(input_dim: usize, latent_dim: usize) -> Result<Self, GroupError> {
        let widths = |i, o| widths(i, &DEFAULT_HIDDEN, o);
        Ok(Self {
            mu_net: MlpParams::zeros(&widths(input_dim, latent_dim), Activation::Identity)?,
            logvar_net: MlpParams::zeros(&widths(input_dim, latent_dim), Activation::Identity)?,
            member_net: MlpParams::zeros(&widths(latent_dim, 1), Activation::Sigmoid)?,
            recon_net: MlpParams::zeros(&widths(latent_dim, input_dim), Activation::Identity)?,
            latent_dim,
        })
    }

    pub fn from_parts(
        mu_net: MlpParams,
        logvar_net: MlpParams,
        member_net: MlpParams,
        recon_net: MlpParams,
    ) -> Result<Self, GroupError> {
        let latent_dim = mu_net.output_width();
        let d = mu_net.input_width();
        let ok = logvar_net.input_width() == d
            && logvar_net.output_width() == latent_dim
            && member_net.input_width() == latent_dim
            && member_net.output_width() == 1
            && member_net.head() == Activation::Sigmoid
            && recon_net.input_width() == latent_dim
            && recon_net.output_width() == d;
        if !ok {
            return Err(GroupError::Shape("networks disagree on input or latent width".into()));
        }
        Ok(Self {
            mu_net,
            logvar_net,
            member_net,
            recon_net,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.mu_net.input_width()
    }

    /// Mean and clamped standard deviation of `p(z | x)` for every row.
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix), GroupError> {
        let mu = mlp_forward(&self.mu_net, x)?;
        let lv = mlp_forward(&self.logvar_net, x)?;
        Ok((mu, lv.map(|v| sigma_from_logvar(v).0)))
    }

    pub fn encode_one(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GroupError> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let (mu, sigma) = self.encode(&m)?;
        Ok((mu.into_vec(), sigma.into_vec()))
    }

    /// Membership probability for each latent row.
    pub fn membership_probs(&self, z: &Matrix) -> Result<Vec<f64>, GroupError> {
        Ok(self.membership_logits(z)?.into_iter().map(sigmoid).collect())
    }

    pub fn membership_prob(&self, z: &[f64]) -> Result<f64, GroupError> {
        let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(self.membership_probs(&m)?[0])
    }

    /// Pre-sigmoid membership scores.
    pub fn membership_logits(&self, z: &Matrix) -> Result<Vec<f64>, GroupError> {
        let mut logit_net = self.member_net.clone();
        logit_net.layers.last_mut().expect("membership net has layers").activation = Activation::Identity;
        Ok(mlp_forward(&logit_net, z)?.into_vec())
    }

    /// Memberships using the encoder mean as the latent code.
    pub fn mean_memberships(&self, x: &Matrix) -> Result<Vec<f64>, GroupError> {
        let (mu, _) = self.encode(x)?;
        self.membership_probs(&mu)
    }

    pub fn reconstruct(&self, z: &Matrix) -> Result<Matrix, GroupError> {
        Ok(mlp_forward(&self.recon_net, z)?)
    }

    pub fn membership_bias(&self) -> f64 {
        self.member_net.layers.last().expect("membership net has layers").bias[0]
    }

    pub fn shift_membership_bias(&mut self, shift: f64) {
        self.member_net.layers.last_mut().expect("membership net has layers").bias[0] += shift;
    }

    /// Versioned text form. Every real is written as the hexadecimal bit
    /// pattern of its `f64`, so the round trip is exact.
    ///
    /// ```text
    /// fairconf-group-model v1
    /// latent_dim <k>
    /// network <name> <layer count>
    /// layer <in> <out> <activation>
    /// w <in*out hex words, row-major>
    /// b <out hex words>
    /// ```
    /// Networks appear in the order `mu`, `logvar`, `member`, `recon`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "latent_dim {}", self.latent_dim);
        for (name, net) in self.networks() {
            let _ = writeln!(out, "network {name} {}", net.layers.len());
            for layer in &net.layers {
                let _ = writeln!(
                    out,
                    "layer {} {} {}",
                    layer.input_width(),
                    layer.output_width(),
                    layer.activation.name()
                );
                out.push('w');
                for v in layer.weight.as_slice() {
                    let _ = write!(out, " {:016x}", v.to_bits());
                }
                out.push_str("\nb");
                for v in &layer.bias {
                    let _ = write!(out, " {:016x}", v.to_bits());
                }
                out.push('\n');
            }
        }
        out
    }

    fn networks(&self) -> [(&'static str, &MlpParams); 4] {
        [
            ("mu", &self.mu_net),
            ("logvar", &self.logvar_net),
            ("member", &self.member_net),
            ("recon", &self.recon_net),
        ]
    }

    pub fn from_text(text: &str) -> Result<Self, GroupError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| GroupError::Format(format!("unexpected end of input, expected {what}")))
        };
        let (line, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(GroupError::Format(format!("line {line}: unsupported header {header:?}")));
        }
        let (line, latent) = next("latent_dim")?;
        let latent_dim: usize = latent
            .strip_prefix("latent_dim ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GroupError::Format(format!("line {line}: bad latent_dim")))?;
        let mut nets = Vec::new();
        for expected in ["mu", "logvar", "member", "recon"] {
            let (line, head) = next("network")?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() != 3 || parts[0] != "network" || parts[1] != expected {
                return Err(GroupError::Format(format!("line {line}: expected network {expected}")));
            }
            let count: usize = parts[2]
                .parse()
                .map_err(|_| GroupError::Format(format!("line {line}: bad layer count")))?;
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let (line, spec) = next("layer")?;
                let p: Vec<&str> = spec.split(' ').collect();
                let bad = || GroupError::Format(format!("line {line}: bad layer line"));
                if p.len() != 4 || p[0] != "layer" {
                    return Err(bad());
                }
                let rows: usize = p[1].parse().map_err(|_| bad())?;
                let cols: usize = p[2].parse().map_err(|_| bad())?;
                let activation = Activation::from_name(p[3]).ok_or_else(bad)?;
                let (wl, w) = next("weights")?;
                let weight = parse_hex_row(w, 'w', rows * cols, wl)?;
                let (bl, b) = next("bias")?;
                let bias = parse_hex_row(b, 'b', cols, bl)?;
                layers.push(Layer {
                    weight: Matrix::from_vec(rows, cols, weight)?,
                    bias,
                    activation,
                });
            }
            let params = MlpParams { layers };
            params.validate()?;
            nets.push(params);
        }
        let recon = nets.pop().expect("four networks");
        let member = nets.pop().expect("four networks");
        let logvar = nets.pop().expect("four networks");
        let mu = nets.pop().expect("four networks");
        let model = Self::from_parts(mu, logvar, member, recon)?;
        if model.latent_dim != latent_dim {
            return Err(GroupError::Format("latent_dim header disagrees with networks".into()));
        }
        Ok(model)
    }
}

fn parse_hex_row(line: &str, tag: char, expected: usize, lineno: usize) -> Result<Vec<f64>, GroupError> {
    let mut it = line.split(' ');
    if it.next() != Some(&tag.to_string()[..]) {
        return Err(GroupError::Format(format!("line {lineno}: expected '{tag}' row")));
    }
    let vals = it
        .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| GroupError::Format(format!("line {lineno}: {e}")))?;
    if vals.len() != expected {
        return Err(GroupError::Format(format!(
            "line {lineno}: expected {expected} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_encodes_standard_normal() {
        let m = GroupModel::zeros(5, 3).unwrap();
        let (mu, sigma) = m.encode_one(&[0.3, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(mu, vec![0.0; 3]);
        assert_eq!(sigma, vec![1.0; 3]);
        assert_eq!(m.membership_prob(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn bias_saturates_and_is_monotone() {
        let mut m = GroupModel::zeros(2, 2).unwrap();
        m.shift_membership_bias(10.0);
        let p = m.membership_prob(&[0.4, -0.2]).unwrap();
        assert!((p - 0.9999546).abs() < 1e-6);
        let mut rng = RngStream::new(2);
        let mut m = GroupModel::new(2, 2, &mut rng).unwrap();
        let z = [0.7, -0.3];
        let mut prev = 0.0;
        for _ in 0..40 {
            let p = m.membership_prob(&z).unwrap();
            assert!(p > prev && p < 1.0);
            prev = p;
            m.shift_membership_bias(0.25);
        }
    }

    #[test]
    fn batch_encode_matches_rows() {
        let mut rng = RngStream::new(3);
        let m = GroupModel::new(4, 3, &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.0, -1.0, 2.0], vec![0.1, 0.2, 0.3, 0.4]])
            .unwrap();
        let (mu, sigma) = m.encode(&x).unwrap();
        for i in 0..3 {
            let (a, b) = m.encode_one(x.row(i)).unwrap();
            assert_eq!(mu.row(i), &a[..]);
            assert_eq!(sigma.row(i), &b[..]);
        }
        assert_eq!(mu.row(0), mu.row(2));
        assert!(m.encode_one(&[1.0]).is_err());
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let mut rng = RngStream::new(4);
        let mut m = GroupModel::new(6, 8, &mut rng).unwrap();
        m.mu_net.layers[0].weight[(0, 0)] = -0.0;
        m.recon_net.layers[1].bias[3] = f64::MIN_POSITIVE / 3.0;
        let back = GroupModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.to_text(), m.to_text());
        for (a, b) in m.mu_net.flatten().iter().zip(back.mu_net.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(GroupModel::from_text("nonsense").is_err());
        let truncated: String = m.to_text().lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(GroupModel::from_text(&truncated).is_err());
    }
}
