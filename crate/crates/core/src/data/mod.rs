//! Label schema, feature records, file formats and dataset utilities.

mod format;
mod manifest;
mod sampling;
mod stats;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    decode_features, encode_features, read_feature_file, write_feature_file, FeatureFile, FORMAT_VERSION, MAGIC,
};
pub use manifest::{read_manifest, table1_manifest, write_manifest, ManifestRow};
pub use sampling::{oversample_indices, sampling_weights, OversampleMode};
pub use stats::{compute_stats, table1, Split, SplitStats};
pub use synthetic::{generate_synthetic, Anchors, ClassWeights, LabelSampling, SyntheticConfig};

/// The five prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sentiment,
    Humour,
    Sarcasm,
    Offensive,
    Motivation,
}

impl Head {
    pub const ALL: [Head; 5] = [
        Head::Sentiment,
        Head::Humour,
        Head::Sarcasm,
        Head::Offensive,
        Head::Motivation,
    ];

    /// The emotions scored in the binary and intensity tasks.
    pub const EMOTIONS: [Head; 4] = [Head::Humour, Head::Sarcasm, Head::Offensive, Head::Motivation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Sentiment => "sentiment",
            Head::Humour => "humour",
            Head::Sarcasm => "sarcasm",
            Head::Offensive => "offensive",
            Head::Motivation => "motivation",
        }
    }

    /// Number of classes in the label schema. Sentiment is ordered
    /// negative(0) < neutral(1) < positive(2).
    pub fn num_classes(self) -> usize {
        match self {
            Head::Sentiment => 3,
            Head::Humour | Head::Sarcasm | Head::Offensive => 4,
            Head::Motivation => 2,
        }
    }

    /// Humour, sarcasm and offensiveness carry a 0-3 intensity that is
    /// binarized for presence scoring.
    pub fn has_intensity(self) -> bool {
        matches!(self, Head::Humour | Head::Sarcasm | Head::Offensive)
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sentiment" => Ok(Head::Sentiment),
            "humour" | "humor" => Ok(Head::Humour),
            "sarcasm" | "sarcastic" => Ok(Head::Sarcasm),
            "offensive" | "offensiveness" => Ok(Head::Offensive),
            "motivation" | "motivational" => Ok(Head::Motivation),
            other => Err(Error::config(format!("unknown head `{other}`"))),
        }
    }
}

/// Frozen feature sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Clip,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Clip, Modality::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Clip => "clip",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "efficientnet" => Ok(Modality::Image),
            "clip" => Ok(Modality::Clip),
            "text" | "sentence" => Ok(Modality::Text),
            other => Err(Error::config(format!("unknown modality `{other}`"))),
        }
    }
}

macro_rules! small_set {
    ($name:ident, $item:ty, $what:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        #[serde(try_from = "Vec<String>", into = "Vec<String>")]
        pub struct $name(u8);

        impl $name {
            pub fn all() -> Self {
                Self::of(&<$item>::ALL)
            }

            pub fn empty() -> Self {
                Self(0)
            }

            pub fn of(items: &[$item]) -> Self {
                Self(items.iter().fold(0, |acc, i| acc | (1 << i.index())))
            }

            pub fn contains(self, item: $item) -> bool {
                self.0 & (1 << item.index()) != 0
            }

            pub fn insert(&mut self, item: $item) {
                self.0 |= 1 << item.index();
            }

            pub fn is_empty(self) -> bool {
                self.0 == 0
            }

            pub fn len(self) -> usize {
                self.0.count_ones() as usize
            }

            /// Members in canonical order.
            pub fn iter(self) -> impl Iterator<Item = $item> {
                <$item>::ALL.into_iter().filter(move |i| self.contains(*i))
            }

            pub fn bits(self) -> u8 {
                self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let names: Vec<&str> = self.iter().map(|i| i.name()).collect();
                f.write_str(&names.join("+"))
            }
        }

        /// Accepts `all` or names separated by `,` or `+`.
        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                if s.trim().eq_ignore_ascii_case("all") {
                    return Ok(Self::all());
                }
                let mut set = Self::empty();
                for part in s.split([',', '+']).filter(|p| !p.trim().is_empty()) {
                    set.insert(part.parse()?);
                }
                if set.is_empty() {
                    return Err(Error::config(format!("empty {} set", $what)));
                }
                Ok(set)
            }
        }

        impl TryFrom<Vec<String>> for $name {
            type Error = Error;

            fn try_from(names: Vec<String>) -> Result<Self> {
                let mut set = Self::empty();
                for n in names {
                    set.insert(n.parse()?);
                }
                Ok(set)
            }
        }

        impl From<$name> for Vec<String> {
            fn from(set: $name) -> Self {
                set.iter().map(|i| i.name().to_string()).collect()
            }
        }
    };
}

small_set!(HeadSet, Head, "head");
small_set!(ModalitySet, Modality, "modality");

/// Ground-truth (or predicted) labels for one meme. `None` marks an absent
/// label, as in unlabeled test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet {
    pub sentiment: Option<u8>,
    pub humour: Option<u8>,
    pub sarcasm: Option<u8>,
    pub offensive: Option<u8>,
    pub motivation: Option<u8>,
}

impl LabelSet {
    pub fn new(sentiment: u8, humour: u8, sarcasm: u8, offensive: u8, motivation: u8) -> Self {
        Self {
            sentiment: Some(sentiment),
            humour: Some(humour),
            sarcasm: Some(sarcasm),
            offensive: Some(offensive),
            motivation: Some(motivation),
        }
    }

    pub fn get(&self, head: Head) -> Option<u8> {
        match head {
            Head::Sentiment => self.sentiment,
            Head::Humour => self.humour,
            Head::Sarcasm => self.sarcasm,
            Head::Offensive => self.offensive,
            Head::Motivation => self.motivation,
        }
    }

    pub fn set(&mut self, head: Head, value: Option<u8>) {
        let slot = match head {
            Head::Sentiment => &mut self.sentiment,
            Head::Humour => &mut self.humour,
            Head::Sarcasm => &mut self.sarcasm,
            Head::Offensive => &mut self.offensive,
            Head::Motivation => &mut self.motivation,
        };
        *slot = value;
    }

    /// Checks every present label against the schema range.
    pub fn validate(&self, record: &str) -> Result<()> {
        for head in Head::ALL {
            if let Some(v) = self.get(head) {
                if usize::from(v) >= head.num_classes() {
                    return Err(Error::label(
                        record,
                        format!("{head} = {v} outside [0, {}]", head.num_classes() - 1),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Widths of the three modality vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub image: usize,
    pub clip: usize,
    pub text: usize,
}

impl FeatureDims {
    pub fn new(image: usize, clip: usize, text: usize) -> Self {
        Self { image, clip, text }
    }

    pub fn get(&self, modality: Modality) -> usize {
        match modality {
            Modality::Image => self.image,
            Modality::Clip => self.clip,
            Modality::Text => self.text,
        }
    }
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self::new(1792, 512, 768)
    }
}

/// Parses `image,clip,text`, e.g. `1792,512,768`.
impl FromStr for FeatureDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let parsed: Vec<usize> = parts.iter().filter_map(|p| p.parse().ok()).filter(|&d| d > 0).collect();
        match parsed[..] {
            [image, clip, text] if parts.len() == 3 => Ok(Self::new(image, clip, text)),
            _ => Err(Error::config(format!(
                "dims `{s}` must be three positive integers `image,clip,text`"
            ))),
        }
    }
}

impl fmt::Display for FeatureDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image={} clip={} text={}", self.image, self.clip, self.text)
    }
}

/// One meme: up to three frozen feature vectors plus its labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureRecord {
    pub id: String,
    pub image: Option<Vec<f32>>,
    pub clip: Option<Vec<f32>>,
    pub text: Option<Vec<f32>>,
    pub labels: LabelSet,
}

impl FeatureRecord {
    pub fn vector(&self, modality: Modality) -> Option<&[f32]> {
        match modality {
            Modality::Image => self.image.as_deref(),
            Modality::Clip => self.clip.as_deref(),
            Modality::Text => self.text.as_deref(),
        }
    }

    pub fn vector_mut(&mut self, modality: Modality) -> &mut Option<Vec<f32>> {
        match modality {
            Modality::Image => &mut self.image,
            Modality::Clip => &mut self.clip,
            Modality::Text => &mut self.text,
        }
    }

    pub fn present(&self) -> ModalitySet {
        let mut set = ModalitySet::empty();
        for m in Modality::ALL {
            if self.vector(m).is_some() {
                set.insert(m);
            }
        }
        set
    }

    /// Checks vector widths against `dims` and labels against the schema.
    pub fn validate(&self, dims: &FeatureDims) -> Result<()> {
        for m in Modality::ALL {
            if let Some(v) = self.vector(m) {
                if v.len() != dims.get(m) {
                    return Err(Error::data(format!(
                        "record `{}`: {m} vector has {} values, header says {}",
                        self.id,
                        v.len(),
                        dims.get(m)
                    )));
                }
            }
        }
        self.labels.validate(&self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_parsing_and_display() {
        let s: ModalitySet = "text,image".parse().unwrap();
        assert_eq!(s.to_string(), "image+text");
        assert_eq!("all".parse::<ModalitySet>().unwrap(), ModalitySet::all());
        assert!("".parse::<HeadSet>().is_err());
        assert!("banana".parse::<HeadSet>().is_err());
        let h: HeadSet = "sentiment".parse().unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.contains(Head::Sentiment));
    }

    #[test]
    fn label_validation() {
        assert!(LabelSet::new(2, 3, 3, 3, 1).validate("x").is_ok());
        let err = LabelSet::new(3, 0, 0, 0, 0).validate("bad").unwrap_err();
        assert!(matches!(err, Error::Label { .. }));
        assert!(LabelSet::default().validate("unlabeled").is_ok());
    }

    #[test]
    fn set_serde_as_name_list() {
        let s = ModalitySet::of(&[Modality::Clip, Modality::Text]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"["clip","text"]"#);
        assert_eq!(serde_json::from_str::<ModalitySet>(&json).unwrap(), s);
    }

    #[test]
    fn dims_parsing() {
        assert_eq!("1792, 512,768".parse::<FeatureDims>().unwrap(), FeatureDims::default());
        for bad in ["1,2", "1,2,3,4", "0,2,3", "a,b,c"] {
            assert!(bad.parse::<FeatureDims>().is_err(), "{bad}");
        }
    }
}
