use std::borrow::Cow;
use std::fmt;

use smallvec::SmallVec;

use crate::bits::Bits;
use crate::engine::Round;
use crate::graph::NodeId;

pub type Tag = Cow<'static, str>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PacketKind {
    Data(Bits),
    Coded { generation: u32, coefficients: Bits, body: Bits },
    /// Carries no information; still occupies the channel.
    Noise,
    Control { tag: Tag, fields: SmallVec<[(Tag, u64); 3]> },
}

/// A transmission payload. `origin` names the node and round that created the
/// payload; relaying keeps it and only rewrites `src`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: NodeId,
    pub origin: (NodeId, Round),
    pub kind: PacketKind,
}

impl Packet {
    pub fn new(src: NodeId, round: Round, kind: PacketKind) -> Self {
        Packet { src, origin: (src, round), kind }
    }

    pub fn noise(src: NodeId, round: Round) -> Self {
        Packet::new(src, round, PacketKind::Noise)
    }

    pub fn control(src: NodeId, round: Round, tag: &'static str, fields: &[(&'static str, u64)]) -> Self {
        Packet::new(
            src,
            round,
            PacketKind::Control {
                tag: Cow::Borrowed(tag),
                fields: fields.iter().map(|&(k, v)| (Cow::Borrowed(k), v)).collect(),
            },
        )
    }

    pub fn relayed_by(&self, node: NodeId) -> Self {
        Packet { src: node, ..self.clone() }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self.kind, PacketKind::Noise)
    }

    pub fn tag(&self) -> Option<&str> {
        match &self.kind {
            PacketKind::Control { tag, .. } => Some(tag),
            _ => None,
        }
    }

    pub fn field(&self, key: &str) -> Option<u64> {
        match &self.kind {
            PacketKind::Control { fields, .. } => {
                fields.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
            }
            _ => None,
        }
    }

    /// Nominal size in bits: ids cost ⌈log₂ n⌉ bits, coefficient vectors one bit per
    /// coded message.
    pub fn nominal_bits(&self, log_n: usize) -> usize {
        match &self.kind {
            PacketKind::Data(b) => b.len(),
            PacketKind::Coded { coefficients, body, .. } => coefficients.len() + body.len(),
            PacketKind::Noise => 0,
            PacketKind::Control { fields, .. } => (1 + fields.len()) * log_n,
        }
    }

    /// Reversible one-token summary used in trace exports.
    pub fn summary(&self) -> String {
        let body = match &self.kind {
            PacketKind::Data(b) => format!("data:{}", b.to_bit_string()),
            PacketKind::Coded { generation, coefficients, body } => format!(
                "coded:{generation}:{}:{}",
                coefficients.to_bit_string(),
                body.to_bit_string()
            ),
            PacketKind::Noise => "noise".to_string(),
            PacketKind::Control { tag, fields } => {
                let mut s = format!("ctrl:{tag}");
                for (k, v) in fields {
                    s.push_str(&format!(":{k}={v}"));
                }
                s
            }
        };
        format!("{body}@{}.{}", self.origin.0, self.origin.1)
    }

    pub fn parse_summary(src: NodeId, text: &str) -> Option<Packet> {
        let (body, origin) = text.rsplit_once('@')?;
        let (on, or) = origin.split_once('.')?;
        let origin = (on.parse().ok()?, or.parse().ok()?);
        let mut parts = body.split(':');
        let kind = match parts.next()? {
            "data" => PacketKind::Data(Bits::parse_bit_string(parts.next().unwrap_or(""))?),
            "coded" => PacketKind::Coded {
                generation: parts.next()?.parse().ok()?,
                coefficients: Bits::parse_bit_string(parts.next()?)?,
                body: Bits::parse_bit_string(parts.next().unwrap_or(""))?,
            },
            "noise" => PacketKind::Noise,
            "ctrl" => {
                let tag = Cow::Owned(parts.next()?.to_string());
                let mut fields = SmallVec::new();
                for p in parts.by_ref() {
                    let (k, v) = p.split_once('=')?;
                    fields.push((Cow::Owned(k.to_string()), v.parse().ok()?));
                }
                PacketKind::Control { tag, fields }
            }
            _ => return None,
        };
        if parts.next().is_some() {
            return None;
        }
        Some(Packet { src, origin, kind })
    }
}

impl fmt::Display for Packet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_parse_back() {
        let packets = vec![
            Packet::new(3, 9, PacketKind::Data(Bits::from_bytes(&[7]))),
            Packet::new(
                1,
                2,
                PacketKind::Coded {
                    generation: 4,
                    coefficients: Bits::from_bools(&[true, false, true]),
                    body: Bits::from_bytes(&[0xaa]),
                },
            ),
            Packet::noise(0, 1),
            Packet::control(5, 6, "id", &[("id", 5), ("rank", 2)]),
            Packet::control(5, 6, "sigma", &[]),
        ];
        for p in packets {
            let relayed = p.relayed_by(8);
            let parsed = Packet::parse_summary(8, &relayed.summary()).unwrap();
            assert_eq!(parsed, relayed);
        }
        assert!(Packet::parse_summary(0, "bogus@1.2").is_none());
    }

    #[test]
    fn control_field_lookup() {
        let p = Packet::control(2, 1, "announce", &[("id", 2), ("rank", 3)]);
        assert_eq!(p.tag(), Some("announce"));
        assert_eq!(p.field("rank"), Some(3));
        assert_eq!(p.field("missing"), None);
        assert_eq!(p.nominal_bits(7), 21);
    }
}
